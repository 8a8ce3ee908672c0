//! Randomised search for violations of declared constants.
//!
//! Every inequality is evaluated on random segment pairs with the same
//! quadrature the integrator uses. A violation proves the declared constants
//! wrong for the model; the absence of violations is evidence only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::certificate::{contraction_constants, DissipativityConstants, PartitionCertificate};
use crate::dynamics::ModelSpec;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Stream};
use crate::segment::{DelayIntegrator, Segment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FalsifierConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Node values are drawn from `[-amplitude, amplitude]`.
    pub amplitude: f64,
    /// Grid step of the sampled segments.
    pub h: f64,
    /// A sample violates `lhs <= rhs` when `lhs - rhs > rel_tol·(1 + |lhs| + |rhs|)`.
    pub rel_tol: f64,
}

impl Default for FalsifierConfig {
    fn default() -> Self {
        Self { n_samples: 10_000, seed: 0, amplitude: 2.0, h: 0.05, rel_tol: 1e-9 }
    }
}

/// The sample with the smallest margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub sample: usize,
    pub regime: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub samples: usize,
    /// Smallest `(rhs - lhs) / (1 + |lhs| + |rhs|)` seen.
    pub worst_margin: f64,
    pub violations: usize,
    pub witness: Option<Witness>,
}

impl InequalityCheck {
    fn new(name: &str) -> Self {
        Self { name: name.into(), samples: 0, worst_margin: f64::INFINITY, violations: 0, witness: None }
    }

    fn record(&mut self, sample: usize, regime: usize, lhs: f64, rhs: f64, tol: f64) {
        self.samples += 1;
        let scale = 1.0 + lhs.abs() + rhs.abs();
        let margin = (rhs - lhs) / scale;
        if !(margin >= -tol) {
            self.violations += 1;
        }
        if !(margin >= self.worst_margin) {
            self.worst_margin = margin;
            self.witness = Some(Witness { sample, regime, lhs, rhs });
        }
    }

    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Constants of the Lyapunov bounds for `V(x,k) = v(k)|x|^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConstants {
    /// `v(k)` per regime.
    pub v: Vec<f64>,
    /// `K = max_n (β^F(n) + γ_p·max(γ, 1))·v^F(n)`.
    pub k: f64,
    pub epsilon: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `λ₁ > λ₂/(1-κ₁)^p` at the chosen `ε`.
    pub boundedness_condition: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifierReport {
    pub checks: Vec<InequalityCheck>,
    pub lyapunov: Option<LyapunovConstants>,
}

impl FalsifierReport {
    pub fn check(&self, name: &str) -> Option<&InequalityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(InequalityCheck::pass)
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖M‖²_HS` and `|uᵀM|²` for a row-major `d × d` matrix.
fn hs_and_projection(m: &[f64], u: &[f64], d: usize) -> (f64, f64) {
    let hs = norm2(m);
    let proj = (0..d).map(|j| (0..d).map(|i| u[i] * m[i * d + j]).sum::<f64>().powi(2)).sum();
    (hs, proj)
}

/// Itô generator of `v(k)|x|^p` at `x = z` with drift `b` and diffusion `σ`,
/// plus the switching term: everything except `Σ q_kl v(l)|z|^p`.
fn ito_term(p: f64, v: f64, z: &[f64], b: &[f64], sigma: &[f64]) -> f64 {
    let d = z.len();
    let nz2 = norm2(z);
    if nz2 == 0.0 {
        // the p = 2 Hessian is constant; for p > 2 it vanishes at the origin
        return if p == 2.0 { v * norm2(sigma) } else { 0.0 };
    }
    let nz = nz2.sqrt();
    let unit: Vec<f64> = z.iter().map(|x| x / nz).collect();
    let (hs, proj) = hs_and_projection(sigma, &unit, d);
    let zp2 = nz.powf(p - 2.0);
    p * v * zp2 * dot(z, b) + 0.5 * p * v * zp2 * (hs + (p - 2.0) * proj)
}

/// Random segment shapes: constant, smooth, or independent node values.
fn random_segment(rng: &mut Stream, r: f64, h: f64, len: usize, d: usize, amp: f64) -> Result<Segment> {
    let u = |rng: &mut Stream| rng.random_range(-amp..=amp);
    match rng.random_range(0..3) {
        0 => {
            let c: Vec<f64> = (0..d).map(|_| u(rng)).collect();
            Segment::constant(r, h, len, &c)
        }
        1 => {
            let params: Vec<(f64, f64, f64, f64)> = (0..d)
                .map(|_| (u(rng) / 2.0, u(rng) / 2.0, rng.random_range(0.0..5.0), rng.random_range(0.0..6.3)))
                .collect();
            let nodes: Vec<Vec<f64>> = (0..len)
                .map(|k| {
                    let th = -(k as f64) * h;
                    params.iter().map(|(a, b, w, ph)| a + b * (w * th + ph).sin()).collect()
                })
                .collect();
            let tail = (0..d).map(|_| u(rng)).collect();
            Segment::from_nodes(r, h, &nodes, tail)
        }
        _ => {
            let nodes: Vec<Vec<f64>> = (0..len).map(|_| (0..d).map(|_| u(rng)).collect()).collect();
            let tail = (0..d).map(|_| u(rng)).collect();
            Segment::from_nodes(r, h, &nodes, tail)
        }
    }
}

/// Derives `v`, `K`, `ε` and `λ₀, λ₁, λ₂` from a partition certificate.
///
/// `ε` is halved from `0.1` until `λ₁ > λ₂/(1-κ₁)^p` (or gives up after 40
/// halvings, keeping the last value).
pub fn lyapunov_constants(model: &ModelSpec, c: &DissipativityConstants, pc: &PartitionCertificate) -> Result<LyapunovConstants> {
    let n = model.generator.n_states();
    if pc.groups.is_empty() || pc.v_f.len() != pc.groups.len() {
        return Err(Error::InvalidInput("Lyapunov bounds need a partition over the regimes with v^F computed".into()));
    }
    let mut v = vec![f64::NAN; n];
    for (g, states) in pc.groups.iter().enumerate() {
        for &k in states {
            v[k] = pc.v_f[g];
        }
    }
    if v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidInput("v^F must be positive on every regime".into()));
    }
    let p = c.p;
    let g_eff = c.gamma_p() * c.gamma.max(1.0);
    let k = pc.beta_f.iter().zip(&pc.v_f).map(|(b, v)| (b + g_eff) * v).fold(0.0, f64::max);
    let c2 = v.iter().copied().fold(0.0, f64::max);

    let d = model.dim();
    let zero = Segment::zeros(c.r, 1.0, 2, d)?;
    let rho = DelayIntegrator::for_segment(model.kernel(), &zero)?;
    let (mut b0, mut s0) = (0.0f64, 0.0f64);
    let (mut b, mut s) = (vec![0.0; d], vec![0.0; d * d]);
    for l in 0..n {
        model.coefficients.drift_diffusion(&zero, l, &rho, &mut b, &mut s);
        b0 = b0.max(norm2(&b));
        s0 = s0.max(norm2(&s));
    }
    let kappa1 = contraction_constants(c)?.kappa1;
    let lambdas = |eps: f64| {
        let c_eps = b0 / (4.0 * eps) + c.gamma_p() * (1.0 + g_eff / eps) * s0;
        let c1 = p * c2 * c_eps;
        let lambda0 = 2.0 / p * eps.powf((2.0 - p) / 2.0) * c1.powf(p / 2.0);
        let lambda1 = 1.0 - (p - 2.0) / p * eps - 2.0 * (p - 1.0) * c2 * eps - (p - 2.0) * k;
        let lambda2 = 2.0 * (k + c2 * eps);
        (lambda0, lambda1, lambda2)
    };
    let ok = |(_, l1, l2): (f64, f64, f64)| l1 > l2 / (1.0 - kappa1).powf(p);
    let mut eps = 0.1;
    for _ in 0..40 {
        if ok(lambdas(eps)) {
            break;
        }
        eps /= 2.0;
    }
    let (lambda0, lambda1, lambda2) = lambdas(eps);
    Ok(LyapunovConstants {
        v,
        k,
        epsilon: eps,
        lambda0,
        lambda1,
        lambda2,
        boundedness_condition: ok((lambda0, lambda1, lambda2)),
    })
}

/// Evaluates the contraction bound on `G`, the one-sided drift bound, the
/// diffusion bound and (given Lyapunov constants) the two Lyapunov
/// inequalities on `cfg.n_samples` random segment pairs.
pub fn assumption_falsifier(
    model: &ModelSpec,
    c: &DissipativityConstants,
    lyapunov: Option<&LyapunovConstants>,
    cfg: &FalsifierConfig,
) -> Result<FalsifierReport> {
    let n = model.generator.n_states();
    c.validate(n)?;
    if !(cfg.h > 0.0 && cfg.amplitude > 0.0) {
        return Err(Error::InvalidInput("falsifier needs h > 0 and amplitude > 0".into()));
    }
    let d = model.dim();
    let p = c.p;
    let len = model.memory_nodes(cfg.h, 1e-8, None)?;
    let rho = DelayIntegrator::new(model.kernel(), c.r, cfg.h, len)?;
    let coeffs = model.coefficients.as_ref();
    let q = &model.generator;

    let mut a0 = InequalityCheck::new("A0");
    let mut a1 = InequalityCheck::new("A1");
    let mut a2 = InequalityCheck::new("A2");
    let mut lv = InequalityCheck::new("LV");
    let mut lu = InequalityCheck::new("LU");

    let (mut g1, mut g2) = (vec![0.0; d], vec![0.0; d]);
    let (mut b1, mut b2) = (vec![0.0; d], vec![0.0; d]);
    let (mut s1, mut s2) = (vec![0.0; d * d], vec![0.0; d * d]);
    for i in 0..cfg.n_samples {
        let mut rng = stream(cfg.seed, i as u64, Purpose::Falsifier);
        let k = rng.random_range(0..n);
        let phi = random_segment(&mut rng, c.r, cfg.h, len, d, cfg.amplitude)?;
        let psi = match rng.random_range(0..8) {
            0 => Segment::zeros(c.r, cfg.h, len, d)?,
            1 | 2 => {
                let bump = random_segment(&mut rng, c.r, cfg.h, len, d, cfg.amplitude * 1e-3)?;
                phi.axpy(1.0, &bump)?
            }
            _ => random_segment(&mut rng, c.r, cfg.h, len, d, cfg.amplitude)?,
        };
        coeffs.neutral(&phi, k, &rho, &mut g1);
        coeffs.neutral(&psi, k, &rho, &mut g2);
        coeffs.drift_diffusion(&phi, k, &rho, &mut b1, &mut s1);
        coeffs.drift_diffusion(&psi, k, &rho, &mut b2, &mut s2);
        let int_p = rho.integrate_abs_pow(&phi, Some(&psi), p);
        let int_2 = rho.integrate_abs_pow(&phi, Some(&psi), 2.0);

        let dg: Vec<f64> = (0..d).map(|j| g1[j] - g2[j]).collect();
        a0.record(i, k, norm2(&dg).sqrt().powf(p), c.kappa.powf(p) * int_p, cfg.rel_tol);

        let z: Vec<f64> = (0..d).map(|j| phi.head_value()[j] - psi.head_value()[j] - dg[j]).collect();
        let db: Vec<f64> = (0..d).map(|j| b1[j] - b2[j]).collect();
        let ds: Vec<f64> = (0..d * d).map(|j| s1[j] - s2[j]).collect();
        let nz2 = norm2(&z);
        a1.record(i, k, dot(&z, &db), c.alpha[k] * nz2 + c.beta[k] * int_2, cfg.rel_tol);
        a2.record(i, k, norm2(&ds), c.gamma * int_2, cfg.rel_tol);

        if let Some(ly) = lyapunov {
            let nzp = nz2.sqrt().powf(p);
            let switch: f64 = (0..n).map(|l| q.rate(k, l) * ly.v[l]).sum();
            let lhs = ito_term(p, ly.v[k], &z, &db, &ds) + switch * nzp;
            let rhs = -(1.0 - (p - 2.0) * ly.k) * nzp + 2.0 * ly.k * int_p;
            lu.record(i, k, lhs, rhs, cfg.rel_tol);

            let y: Vec<f64> = (0..d).map(|j| phi.head_value()[j] - g1[j]).collect();
            let nyp = norm2(&y).sqrt().powf(p);
            let lhs = ito_term(p, ly.v[k], &y, &b1, &s1) + switch * nyp;
            let rhs = ly.lambda0 - ly.lambda1 * nyp + ly.lambda2 * rho.integrate_abs_pow(&phi, None, p);
            lv.record(i, k, lhs, rhs, cfg.rel_tol);
        }
    }
    let mut checks = vec![a0, a1, a2];
    if lyapunov.is_some() {
        checks.push(lv);
        checks.push(lu);
    }
    Ok(FalsifierReport { checks, lyapunov: lyapunov.cloned() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{partition_certificate, GroupOrdering};
    use crate::chain::Generator;
    use crate::dynamics::LinearFamily;
    use crate::kernel::DelayKernel;

    fn gen2() -> Generator {
        Generator::from_rows(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap()
    }

    fn cfg(n: usize) -> FalsifierConfig {
        FalsifierConfig { n_samples: n, ..Default::default() }
    }

    #[test]
    fn drift_only_model_is_exact_in_a1() {
        let fam = LinearFamily::scalar(&[0.0, 0.0], &[-1.0, -3.0], &[], &[], &[0.5, 0.5], &[]).unwrap();
        let m = ModelSpec::linear(fam, gen2(), DelayKernel::exponential(4.0).unwrap(), 0.5, 2.0, 0.1).unwrap();
        let rep = assumption_falsifier(&m, &m.constants, None, &cfg(500)).unwrap();
        let a1 = rep.check("A1").unwrap();
        assert!(a1.pass());
        assert!(a1.worst_margin.abs() < 1e-12, "{}", a1.worst_margin);
        assert!(rep.pass());
    }

    #[test]
    fn understated_gamma_is_caught() {
        let fam = LinearFamily::scalar(&[0.1, 0.1], &[-2.0, -2.0], &[], &[], &[0.1, 0.1], &[0.4, 0.4]).unwrap();
        let m = ModelSpec::linear(fam, gen2(), DelayKernel::exponential(4.0).unwrap(), 0.5, 2.0, 0.1).unwrap();
        let mut c = m.constants.clone();
        assert!(assumption_falsifier(&m, &c, None, &cfg(2000)).unwrap().pass());
        c.gamma /= 2.0;
        let rep = assumption_falsifier(&m, &c, None, &cfg(10_000)).unwrap();
        let a2 = rep.check("A2").unwrap();
        assert!(a2.violations > 0 && a2.witness.is_some());
    }

    #[test]
    fn lyapunov_bounds_hold_for_certified_model() {
        let fam = LinearFamily::scalar(&[0.1, 0.1], &[-5.0, -4.0], &[0.5, 0.4], &[0.2, -0.1], &[0.3, 0.2], &[0.2, 0.1])
            .unwrap();
        let m = ModelSpec::linear(fam, gen2(), DelayKernel::exponential(20.0).unwrap(), 0.5, 2.0, 0.1).unwrap();
        let c = &m.constants;
        let pc = partition_certificate(c, &m.generator, &[], GroupOrdering::Decreasing, false).unwrap();
        let ly = lyapunov_constants(&m, c, &pc).unwrap();
        let rep = assumption_falsifier(&m, c, Some(&ly), &cfg(3000)).unwrap();
        for ch in &rep.checks {
            assert!(ch.pass(), "{ch:?}");
        }
    }
}
