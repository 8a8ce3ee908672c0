use ergo::certificate::{exp_functional_exact, f_of, fit_sandwich, spectral_rate, DissipativityConstants};
use ergo::chain::{sample_chain_poisson, sample_coupled_chain, BasicCoupling, Generator, SkorokhodTable};
use ergo::dynamics::{
    coupled_curve, initial_point, moment_curve, monte_carlo, simulate_coupled, simulate_path, simulate_path_with,
    InitialData, LinearFamily, ModelSpec, SimConfig,
};
use ergo::kernel::{Atom, DelayKernel};
use ergo::metrics::{coupling_upper_bound, exact_wasserstein_p, fit_exponential_decay, EmpiricalMeasure};
use ergo::rng::{stream, Purpose};
use ergo::segment::MarkedPoint;
use ergo::stats::{CurvePoint, Moments};
use rand_distr::{Distribution, StandardNormal};

fn two_state() -> Generator {
    Generator::from_rows(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap()
}

/// Scalar linear model with a neutral term and a two-atom delay kernel.
fn neutral_model() -> ModelSpec {
    let kg = 0.1;
    let a = [-2.0, -1.5];
    let fam = LinearFamily::scalar(&[kg, kg], &a, &[-a[0] * kg, -a[1] * kg], &[0.5, -0.5], &[0.3, 0.5], &[0.2, 0.2]).unwrap();
    let kernel = DelayKernel::new(vec![Atom { theta: -0.05, weight: 0.5 }, Atom { theta: -0.1, weight: 0.5 }], vec![]).unwrap();
    ModelSpec::linear(fam, two_state(), kernel, 0.5, 2.0, 0.5).unwrap()
}

/// Regime-switching Ornstein-Uhlenbeck process without delay.
fn ou_model(alpha: [f64; 2], s: [f64; 2]) -> ModelSpec {
    let fam = LinearFamily::scalar(&[0.0, 0.0], &alpha, &[], &[], &s, &[]).unwrap();
    ModelSpec::linear(fam, two_state(), DelayKernel::dirac(0.0).unwrap(), 1.0, 2.0, 0.1).unwrap()
}

fn within(a: &Moments, b: &Moments, k: f64) -> bool {
    (a.mean - b.mean).abs() <= k * (a.stderr().powi(2) + b.stderr().powi(2)).sqrt()
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let model = neutral_model();
    let mut cfg = SimConfig::new(0.01, 2.0);
    cfg.n_paths = 700;
    cfg.record_every = 20;
    cfg.seed = 11;
    let grid = model.grid(&cfg).unwrap();
    let xi = initial_point(&grid, &InitialData::Constant(vec![1.5]), 0).unwrap();
    let eta = initial_point(&grid, &InitialData::Constant(vec![-0.5]), 1).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let m = moment_curve(&model, &xi, &cfg, 2.0).unwrap();
            let c = coupled_curve(&model, (&xi, &eta), &cfg, 2.0).unwrap();
            (m, c)
        })
    };
    let (m1, c1) = run(1);
    let (m3, c3) = run(3);
    let bits = |v: &[CurvePoint]| v.iter().map(|p| (p.t.to_bits(), p.mean.to_bits(), p.stderr.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&m1), bits(&m3));
    assert_eq!(bits(&c1.curve), bits(&c3.curve));
    assert_eq!(c1.tau, c3.tau);
}

#[test]
fn coupled_first_component_has_the_law_of_a_single_run() {
    let model = neutral_model();
    let mut cfg = SimConfig::new(0.01, 1.0);
    cfg.n_paths = 4000;
    cfg.record_every = 50;
    cfg.seed = 21;
    let grid = model.grid(&cfg).unwrap();
    let xi = initial_point(&grid, &InitialData::Constant(vec![2.0]), 0).unwrap();
    let eta = initial_point(&grid, &InitialData::Constant(vec![-1.0]), 1).unwrap();
    let mut single = [Moments::default(); 3];
    let mut coupled = [Moments::default(); 3];
    let mut solo_cfg = cfg.clone();
    solo_cfg.seed = 22;
    for i in 0..cfg.n_paths as u64 {
        let a = simulate_path(&model, &xi, &solo_cfg, i).unwrap();
        let b = simulate_coupled(&model, (&xi, &eta), &cfg, i).unwrap();
        let (xa, xb) = (*a.x.last().unwrap().first().unwrap(), *b.first.x.last().unwrap().first().unwrap());
        single[0].push(xa);
        single[1].push(xa * xa);
        single[2].push((*a.regimes.last().unwrap() == 0) as u8 as f64);
        coupled[0].push(xb);
        coupled[1].push(xb * xb);
        coupled[2].push((*b.first.regimes.last().unwrap() == 0) as u8 as f64);
    }
    for (k, (a, b)) in single.iter().zip(&coupled).enumerate() {
        assert!(within(a, b, 3.0), "statistic {k}: {} vs {} (se {} / {})", a.mean, b.mean, a.stderr(), b.stderr());
    }
}

#[test]
fn shared_noise_makes_the_difference_deterministic() {
    let alpha = [-1.0, 0.5];
    let model = ou_model(alpha, [0.5, 1.0]);
    let mut cfg = SimConfig::new(0.01, 3.0);
    cfg.seed = 31;
    let grid = model.grid(&cfg).unwrap();
    let xi = initial_point(&grid, &InitialData::Constant(vec![2.0]), 1).unwrap();
    let eta = initial_point(&grid, &InitialData::Constant(vec![-1.0]), 1).unwrap();
    for i in 0..50 {
        let out = simulate_coupled(&model, (&xi, &eta), &cfg, i).unwrap();
        assert_eq!(out.tau, Some(0.0));
        // Euler steps of D' = α(Λ)D with the drift frozen at the start of each step
        let mut d = 3.0;
        let pieces: Vec<(f64, f64, usize)> = out.first.switching.pieces().collect();
        for n in 0..cfg.n_steps() {
            let (a, b) = (n as f64 * cfg.h, (n + 1) as f64 * cfg.h);
            let integral: f64 = pieces.iter().map(|&(s, e, k)| alpha[k] * (e.min(b) - s.max(a)).max(0.0)).sum();
            d *= 1.0 + integral;
        }
        let got = out.first.x.last().unwrap()[0] - out.second.x.last().unwrap()[0];
        assert!((got - d).abs() <= 1e-12 + 1e-10 * d.abs(), "path {i}: {got} vs {d}");
    }
}

#[test]
fn halving_the_step_keeps_the_second_moment() {
    let model = ou_model([-1.0, 0.5], [0.5, 1.0]);
    let second_moment = |h: f64, seed: u64| {
        let mut cfg = SimConfig::new(h, 1.0);
        cfg.n_paths = 100_000;
        cfg.record_every = cfg.n_steps();
        cfg.seed = seed;
        let grid = model.grid(&cfg).unwrap();
        let rho = grid.integrator(model.kernel()).unwrap();
        let init = initial_point(&grid, &InitialData::Constant(vec![1.0]), 0).unwrap();
        monte_carlo(cfg.n_paths, 1, |i, acc| {
            simulate_path_with(&model, &rho, &init, &cfg, i, |s| {
                if s.step > 0 {
                    acc[0].push(s.segment.head_value()[0].powi(2));
                }
            })?;
            Ok(())
        })
        .unwrap()[0]
    };
    let coarse = second_moment(1e-3, 41);
    let fine = second_moment(5e-4, 42);
    assert!(within(&coarse, &fine, 1.96), "E X(1)^2: {} vs {}", coarse.mean, fine.mean);
}

#[test]
fn coupling_dominates_empirical_transport() {
    let model = neutral_model();
    let mut cfg = SimConfig::new(0.01, 10.0);
    cfg.n_paths = 256;
    cfg.record_every = 500;
    cfg.snapshots = true;
    cfg.seed = 51;
    let grid = model.grid(&cfg).unwrap();
    let xi = initial_point(&grid, &InitialData::Constant(vec![2.0]), 0).unwrap();
    let eta = initial_point(&grid, &InitialData::WeightedConstant(vec![-1.0]), 1).unwrap();
    let runs: Vec<_> = (0..cfg.n_paths as u64).map(|i| simulate_coupled(&model, (&xi, &eta), &cfg, i).unwrap()).collect();
    let p = 2.0;
    let bound = coupling_upper_bound(&runs, p).unwrap();
    for (j, t) in [(1, 5.0), (2, 10.0)] {
        assert!((bound[j].t - t).abs() < 1e-9);
        let marginal = |second: bool| {
            let atoms = runs
                .iter()
                .map(|r| {
                    let o = if second { &r.second } else { &r.first };
                    MarkedPoint::new(o.snapshots[j].clone(), o.regimes[j])
                })
                .collect();
            EmpiricalMeasure::uniform(atoms).unwrap()
        };
        let (w, _) = exact_wasserstein_p(&marginal(false), &marginal(true), p).unwrap();
        assert!(bound[j].mean >= w.powf(p) - 2.0 * bound[j].stderr, "t = {t}: {} < {}", bound[j].mean, w.powf(p));
    }
}

#[test]
fn frozen_segments_reduce_distance_to_regime_disagreement() {
    let q = Generator::from_rows(&[vec![-2.0, 1.5, 0.5], vec![0.5, -1.0, 0.5], vec![1.0, 2.0, -3.0]]).unwrap();
    let fam = LinearFamily::scalar(&[0.0; 3], &[0.0; 3], &[], &[], &[], &[]).unwrap();
    let model = ModelSpec::linear(fam, q, DelayKernel::dirac(0.0).unwrap(), 1.0, 2.0, 0.1).unwrap();
    let mut cfg = SimConfig::new(0.05, 4.0);
    cfg.record_every = 4;
    cfg.seed = 61;
    let grid = model.grid(&cfg).unwrap();
    let a = initial_point(&grid, &InitialData::Constant(vec![1.0]), 0).unwrap();
    let b = initial_point(&grid, &InitialData::Constant(vec![1.0]), 2).unwrap();
    let times = cfg.record_times();
    let mut disagree = vec![0u32; times.len()];
    let mut not_coupled = vec![0u32; times.len()];
    for i in 0..400 {
        let out = simulate_coupled(&model, (&a, &b), &cfg, i).unwrap();
        for (j, &t) in times.iter().enumerate() {
            let differ = out.first.regimes[j] != out.second.regimes[j];
            assert_eq!(out.distance[j].powi(2), if differ { 1.0 } else { 0.0 });
            disagree[j] += differ as u32;
            not_coupled[j] += out.tau.is_none_or(|tau| tau > t) as u32;
        }
    }
    // the chain is absorbed on the diagonal, so disagreement at t is exactly {τ > t}
    assert_eq!(disagree, not_coupled);
    assert!(disagree[1] > 0 && *disagree.last().unwrap() < 400);
}

#[test]
fn synthetic_decay_recovers_the_rate() {
    let mut rng = stream(7, 0, Purpose::Experiment(0));
    let curve: Vec<CurvePoint> = (0..=60)
        .map(|i| {
            let t = i as f64 * 0.1;
            let z: f64 = StandardNormal.sample(&mut rng);
            let mean = 3.0 * (-t).exp() * (1.0 + 0.01 * z);
            CurvePoint { t, mean, stderr: 0.01 * 3.0 * (-t).exp() }
        })
        .collect();
    let fit = fit_exponential_decay(&curve, (0.5, 5.0)).unwrap();
    assert!((0.95..=1.05).contains(&fit.rate), "rate {}", fit.rate);
    assert!(fit.r_squared >= 0.99);
    assert!(fit.significant());
}

#[test]
fn skorokhod_layout_for_three_states() {
    let q = Generator::from_rows(&[vec![-3.0, 1.0, 2.0], vec![1.0, -1.0, 0.0], vec![0.5, 0.5, -1.0]]).unwrap();
    let table = SkorokhodTable::build(&q);
    let row: Vec<_> = table.intervals(0).iter().map(|iv| (iv.target, iv.lo, iv.hi)).collect();
    assert_eq!(row, vec![(1, 0.0, 1.0), (2, 1.0, 3.0)]);
    // zero rate leaves no interval
    assert_eq!(table.intervals(1).len(), 1);
    assert_eq!(table.active_length(0), 3.0);
}

#[test]
fn symmetric_rates_give_symmetric_transition_counts() {
    let q = Generator::from_rows(&[vec![-2.0, 1.0, 1.0], vec![1.0, -1.5, 0.5], vec![1.0, 0.5, -1.5]]).unwrap();
    let table = SkorokhodTable::build(&q);
    let mut rng = stream(3, 0, Purpose::Chain);
    let path = sample_chain_poisson(&table, 0, 8000.0, &mut rng);
    assert!(path.n_jumps() >= 10_000);
    let counts = path.transition_counts(3);
    for k in 0..3 {
        for l in k + 1..3 {
            let (a, b) = (counts[k][l] as f64, counts[l][k] as f64);
            assert!((a - b).abs() <= 3.0 * (a + b).sqrt(), "{k}->{l}: {a} vs {l}->{k}: {b}");
        }
    }
}

#[test]
fn coupled_chain_stays_on_the_diagonal() {
    let q = Generator::from_rows(&[vec![-2.0, 1.5, 0.5], vec![0.5, -1.0, 0.5], vec![1.0, 2.0, -3.0]]).unwrap();
    let coupling = BasicCoupling::new(&q);
    for i in 0..300 {
        let mut rng = stream(9, i, Purpose::Chain);
        let cp = sample_coupled_chain(&coupling, (0, 2), 10.0, &mut rng);
        if let Some(tau) = cp.coupling_time {
            for s in 0..=200 {
                let t = tau + (10.0 - tau) * s as f64 / 200.0;
                assert_eq!(cp.first.state_at(t), cp.second.state_at(t));
            }
        }
        let diag = sample_coupled_chain(&coupling, (1, 1), 10.0, &mut rng);
        assert_eq!(diag.coupling_time, Some(0.0));
    }
}

#[test]
fn exponential_functional_is_sandwiched() {
    let c = DissipativityConstants {
        p: 2.0,
        p0: 0.1,
        r: 0.5,
        kappa: 0.1,
        alpha: vec![-8.0, -7.0],
        beta: vec![0.0; 2],
        gamma: 0.0,
        kernel: DelayKernel::dirac(-(6f64.ln()) / 17.0).unwrap(),
    };
    let q = two_state();
    let f = f_of(&c).unwrap();
    let zeta = spectral_rate(&q, &f).unwrap();
    let s = fit_sandwich(&q, &f, zeta, 20.0, 81).unwrap();
    assert!(s.c1 > 0.0 && s.c2 < f64::INFINITY && s.c1 <= s.c2);
    for t in [0.5, 2.75, 9.0, 17.5] {
        for i in 0..2 {
            let v = exp_functional_exact(&q, &f, t, i).unwrap();
            let scale = (-zeta * t).exp();
            assert!(v >= s.c1 * scale * (1.0 - 1e-9) && v <= s.c2 * scale * (1.0 + 1e-9), "t = {t}, i = {i}");
        }
    }
}
