use ergo::certificate::{
    m_matrix_certificate, spectral_rate, DissipativityConstants, GroupOrdering, PartitionCertificate,
};
use ergo::chain::{BasicCoupling, Generator};
use ergo::kernel::{Atom, DelayKernel, ExpComponent};
use ergo::metrics::{exact_wasserstein_p, EmpiricalMeasure};
use ergo::segment::{metric_d, MarkedPoint, Segment};
use proptest::prelude::*;

/// Adaptive Simpson quadrature, used as an independent oracle for kernel moments.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

fn kernel_strategy() -> impl Strategy<Value = DelayKernel> {
    (
        prop::collection::vec((-3.0f64..=0.0, 0.1f64..1.0), 0..3),
        prop::collection::vec((0.5f64..20.0, 0.1f64..1.0), 0..3),
    )
        .prop_filter("kernel needs a component", |(a, e)| !a.is_empty() || !e.is_empty())
        .prop_map(|(atoms, exp)| {
            let total: f64 = atoms.iter().chain(&exp).map(|x| x.1).sum();
            DelayKernel::new(
                atoms.iter().map(|&(theta, w)| Atom { theta, weight: w / total }).collect(),
                exp.iter().map(|&(rate, w)| ExpComponent { rate, weight: w / total }).collect(),
            )
            .unwrap()
        })
}

/// Integral of `e^{-cθ}` against the kernel by direct quadrature of each density.
fn moment_oracle(k: &DelayKernel, c: f64) -> f64 {
    let atoms: f64 = k.atoms().iter().map(|a| a.weight * (-c * a.theta).exp()).sum();
    let dens: f64 = k
        .exp_components()
        .iter()
        .map(|e| {
            let gap = e.rate - c;
            let lo = -40.0 / gap;
            simpson(&|th: f64| e.weight * e.rate * (gap * th).exp(), lo, 0.0, 1e-13)
        })
        .sum();
    atoms + dens
}

fn segment_strategy(len: usize, dim: usize) -> impl Strategy<Value = Segment> {
    (prop::collection::vec(-5.0f64..5.0, len * dim), prop::collection::vec(-2.0f64..2.0, dim)).prop_map(move |(v, tail)| {
        let nodes: Vec<Vec<f64>> = v.chunks(dim).map(<[f64]>::to_vec).collect();
        Segment::from_nodes(0.7, 0.1, &nodes, tail).unwrap()
    })
}

fn generator_strategy(n: usize) -> impl Strategy<Value = Generator> {
    prop::collection::vec(0.05f64..3.0, n * n).prop_map(move |v| {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let mut row: Vec<f64> = (0..n).map(|l| if l == k { 0.0 } else { v[k * n + l] }).collect();
                row[k] = -row.iter().sum::<f64>();
                row
            })
            .collect();
        Generator::from_rows(&rows).unwrap()
    })
}

fn measure_strategy(n: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec((segment_strategy(4, 1), 0usize..3, 0.1f64..1.0), n).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.2).sum();
        let weights = atoms.iter().map(|a| a.2 / total).collect();
        EmpiricalMeasure::new(atoms.into_iter().map(|(s, k, _)| MarkedPoint::new(s, k)).collect(), weights).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn moment_matches_direct_quadrature(k in kernel_strategy(), frac in 0.0f64..0.9) {
        let c = frac * k.moment_abscissa().min(3.0);
        let exact = k.moment(c).unwrap();
        let oracle = moment_oracle(&k, c);
        prop_assert!((exact - oracle).abs() <= 1e-8 * oracle, "moment {exact} vs quadrature {oracle}");
        prop_assert!((k.moment(0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moment_increases_and_tail_vanishes(k in kernel_strategy(), a in 0.0f64..0.45, b in 0.5f64..0.9) {
        let sup = k.moment_abscissa().min(3.0);
        let (c1, c2) = (a * sup, b * sup);
        prop_assert!(k.moment(c1).unwrap() < k.moment(c2).unwrap());
        prop_assert!((k.tail_moment(c2, 0.0).unwrap() - k.moment(c2).unwrap()).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for t in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let v = k.tail_moment(c2, t).unwrap();
            prop_assert!(v <= prev + 1e-15);
            prev = v;
        }
        prop_assert!(k.tail_moment(c2, 400.0).unwrap() < 1e-12);
    }

    #[test]
    fn fading_norm_is_a_norm(s1 in segment_strategy(12, 2), s2 in segment_strategy(12, 2), alpha in -4.0f64..4.0) {
        let n1 = s1.fading_norm();
        prop_assert!((s1.scaled(alpha).fading_norm() - alpha.abs() * n1).abs() <= 1e-12 * (1.0 + n1));
        let sum = s1.axpy(1.0, &s2).unwrap();
        prop_assert!(sum.fading_norm() <= n1 + s2.fading_norm() + 1e-12);
    }

    #[test]
    fn shift_append_does_not_inflate_norm(s in segment_strategy(10, 2), v in prop::collection::vec(-5.0f64..5.0, 2)) {
        let shifted = s.shift_append(&v);
        prop_assert_eq!(shifted.len(), s.len());
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(shifted.fading_norm() <= vnorm.max(s.fading_norm()) + 1e-12);
    }

    #[test]
    fn metric_axioms(a in segment_strategy(8, 1), b in segment_strategy(8, 1), c in segment_strategy(8, 1),
                     ka in 0usize..3, kb in 0usize..3, kc in 0usize..3) {
        let (a, b, c) = (MarkedPoint::new(a, ka), MarkedPoint::new(b, kb), MarkedPoint::new(c, kc));
        let ab = metric_d(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(metric_d(&a, &a).unwrap(), 0.0);
        prop_assert!((ab - metric_d(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!(ab <= metric_d(&a, &c).unwrap() + metric_d(&c, &b).unwrap() + 1e-12);
    }

    #[test]
    fn basic_coupling_preserves_marginals(q in generator_strategy(4), g in prop::collection::vec(-3.0f64..3.0, 4)) {
        let n = q.n_states();
        let qg = q.apply(&g);
        let qc = BasicCoupling::new(&q);
        let first: Vec<Vec<f64>> = (0..n).map(|k| vec![g[k]; n]).collect();
        let second: Vec<Vec<f64>> = (0..n).map(|_| g.clone()).collect();
        let (t1, t2) = (qc.apply(&first), qc.apply(&second));
        for k in 0..n {
            for l in 0..n {
                prop_assert!((t1[k][l] - qg[k]).abs() <= 1e-12);
                prop_assert!((t2[k][l] - qg[l]).abs() <= 1e-12);
            }
        }
        // the diagonal is closed under the coupled motion
        for k in 0..n {
            prop_assert!(qc.rates(k, k).iter().all(|&((a, b), _)| a == b));
        }
    }

    #[test]
    fn spectral_shift(q in generator_strategy(3), f in prop::collection::vec(-6.0f64..2.0, 3), c in -3.0f64..3.0) {
        let z = spectral_rate(&q, &f).unwrap();
        let shifted: Vec<f64> = f.iter().map(|v| v + c).collect();
        prop_assert!((spectral_rate(&q, &shifted).unwrap() - (z - c)).abs() <= 1e-10 * (1.0 + z.abs()));
    }

    #[test]
    fn passing_m_matrix_solves_the_linear_system(
        alpha in prop::collection::vec(-6.0f64..3.0, 3),
        rates in prop::collection::vec(0.0f64..4.0, 9),
    ) {
        let mut alpha = alpha;
        alpha.sort_by(|a, b| b.total_cmp(a));
        let q_f: Vec<Vec<f64>> = (0..3).map(|k| (0..3).map(|l| if k == l { 0.0 } else { rates[3 * k + l] }).collect()).collect();
        let pc = PartitionCertificate::from_group_bounds(alpha.clone(), vec![0.0; 3], q_f, GroupOrdering::Decreasing).unwrap();
        let pc = m_matrix_certificate(&pc, 2.0);
        let pass = ["z_pattern", "nonsingular_m_matrix", "v_positive", "v_decreasing"]
            .iter()
            .all(|n| pc.check(n).is_some_and(|c| c.pass));
        if pass {
            for n in 0..3 {
                let row: f64 = (0..3).map(|l| (pc.q_f[n][l] + if l == n { 2.0 * alpha[n] } else { 0.0 }) * pc.v_f[l]).sum();
                prop_assert!((row + 1.0).abs() <= 1e-10);
            }
            prop_assert!(pc.v_f.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(pc.residual <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 60, ..ProptestConfig::default() })]

    #[test]
    fn wasserstein_is_a_metric(mu in measure_strategy(4), nu in measure_strategy(5), eta in measure_strategy(3)) {
        let p = 2.0;
        let (w_mn, plan) = exact_wasserstein_p(&mu, &nu, p).unwrap();
        let (w_nm, _) = exact_wasserstein_p(&nu, &mu, p).unwrap();
        prop_assert!((w_mn - w_nm).abs() <= 1e-9);
        for (got, want) in plan.row_sums().iter().zip(mu.weights()) {
            prop_assert!((got - want).abs() <= 1e-10);
        }
        for (got, want) in plan.col_sums().iter().zip(nu.weights()) {
            prop_assert!((got - want).abs() <= 1e-10);
        }
        prop_assert!(exact_wasserstein_p(&mu, &mu, p).unwrap().0 <= 1e-9);
        let via = exact_wasserstein_p(&mu, &eta, p).unwrap().0 + exact_wasserstein_p(&eta, &nu, p).unwrap().0;
        prop_assert!(w_mn <= via + 1e-9);
    }
}

#[test]
fn exponential_kernel_moment_by_quadrature() {
    let k = DelayKernel::exponential(3.0).unwrap();
    let oracle = simpson(&|th: f64| 3.0 * (th).exp(), -60.0, 0.0, 1e-13);
    assert!((k.moment(2.0).unwrap() - oracle).abs() < 1e-9);
    assert!((oracle - 3.0).abs() < 1e-9);
    let tail = simpson(&|th: f64| 3.0 * (th).exp(), -60.0, -(2f64.ln()), 1e-13);
    assert!((k.tail_moment(2.0, 2f64.ln()).unwrap() - tail).abs() < 1e-9);
}

#[test]
fn partition_inf_sup_by_enumeration() {
    let rows = vec![
        vec![-2.0, 1.0, 0.5, 0.5],
        vec![1.0, -2.0, 0.5, 0.5],
        vec![1.0, 1.0, -2.5, 0.5],
        vec![1.5, 0.5, 0.5, -2.5],
    ];
    let q = Generator::from_rows(&rows).unwrap();
    let c = DissipativityConstants {
        p: 2.0,
        p0: 0.1,
        r: 0.5,
        kappa: 0.0,
        alpha: vec![-5.0, -4.5, -1.0, -0.5],
        beta: vec![0.0; 4],
        gamma: 0.0,
        kernel: DelayKernel::dirac(0.0).unwrap(),
    };
    let pc = ergo::certificate::partition_reduce(&c, &q, &[-2.0], GroupOrdering::Increasing, false).unwrap();
    let groups = [vec![0usize, 1], vec![2usize, 3]];
    let sums = |from: &[usize], to: &[usize]| -> Vec<f64> { from.iter().map(|&a| to.iter().map(|&b| rows[a][b]).sum()).collect() };
    let up = sums(&groups[0], &groups[1]).into_iter().fold(f64::INFINITY, f64::min);
    let down = sums(&groups[1], &groups[0]).into_iter().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(pc.q_f[0][1], up);
    assert_eq!(pc.q_f[1][0], down);
    assert_eq!((up, down), (1.0, 2.0));
}
