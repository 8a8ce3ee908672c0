//! Ergodicity certificates for finite and partitioned switching spaces.
//!
//! Everything here is closed-form or dense linear algebra. The quantities
//! follow one chain:
//!
//! ```text
//! κ₁ = κ δ_{pr}^{1/p},  κ₂ = κ δ_{pr - pα̲}^{1/p}
//! f(k) = (β̄ + γ_p)(p - 2 + 2 δ_{pr - pα̲} / (1 - κ₂)^p) + p α(k),   γ_p = (p - 1)/2
//! ζ = -max Re spec(Q + diag f)
//! ```
//!
//! and, for partitions of the state space, the M-matrix test on
//! `A = -(p·diag(α^F) + Q^F)·H_m`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chain::Generator;
use crate::error::{Error, Result};
use crate::kernel::DelayKernel;
use crate::linalg::{self, mat_to_rows};

/// Declared constants of the contraction and dissipativity assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityConstants {
    pub p: f64,
    pub p0: f64,
    pub r: f64,
    pub kappa: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub kernel: DelayKernel,
}

impl DissipativityConstants {
    pub fn validate(&self, n_states: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.p >= 2.0) || !self.p.is_finite() {
            return bad(format!("p = {} must be >= 2", self.p));
        }
        if !(self.p0 > 0.0) || !self.p0.is_finite() {
            return bad(format!("p0 = {} must be > 0", self.p0));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return bad(format!("r = {} must be > 0", self.r));
        }
        if !(self.kappa >= 0.0) || !(self.gamma >= 0.0) {
            return bad("kappa and gamma must be >= 0".into());
        }
        if self.alpha.len() != n_states || self.beta.len() != n_states {
            return bad(format!(
                "alpha and beta need {n_states} entries (got {} and {})",
                self.alpha.len(),
                self.beta.len()
            ));
        }
        if self.alpha.iter().any(|a| !a.is_finite()) || self.beta.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return bad("alpha must be finite and beta finite and >= 0".into());
        }
        Ok(())
    }

    /// `γ_p = (p - 1)/2`.
    pub fn gamma_p(&self) -> f64 {
        (self.p - 1.0) / 2.0
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn beta_max(&self) -> f64 {
        self.beta.iter().copied().fold(0.0, f64::max)
    }

    /// `(p + p0) ∨ 2`.
    pub fn q_eff(&self) -> f64 {
        (self.p + self.p0).max(2.0)
    }

    /// The same constants read at another moment exponent.
    pub fn at_exponent(&self, p: f64) -> Self {
        Self { p, ..self.clone() }
    }

    /// Exponent of the moment behind `κ₂`: `p·r - p·α̲`.
    pub fn kappa2_exponent(&self) -> f64 {
        self.p * self.r - self.p * self.alpha_min()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub kappa1: f64,
    pub kappa2: f64,
    pub delta_pr: f64,
    pub delta_kappa2: f64,
}

pub fn contraction_constants(c: &DissipativityConstants) -> Result<Contraction> {
    let delta_pr = c.kernel.moment(c.p * c.r)?;
    let delta_kappa2 = c.kernel.moment(c.kappa2_exponent())?;
    Ok(Contraction {
        kappa1: c.kappa * delta_pr.powf(1.0 / c.p),
        kappa2: c.kappa * delta_kappa2.powf(1.0 / c.p),
        delta_pr,
        delta_kappa2,
    })
}

/// `f(k)` for every state.
pub fn f_of(c: &DissipativityConstants) -> Result<Vec<f64>> {
    let k = contraction_constants(c)?;
    if !(k.kappa2 < 1.0) {
        return Err(Error::Kappa2NotContractive { kappa2: k.kappa2 });
    }
    let prefactor = (c.beta_max() + c.gamma_p()) * (c.p - 2.0 + 2.0 * k.delta_kappa2 / (1.0 - k.kappa2).powf(c.p));
    Ok(c.alpha.iter().map(|a| prefactor + c.p * a).collect())
}

/// `Q̂ = Q + diag(f)`.
pub fn q_hat(q: &Generator, f: &[f64]) -> Result<DMatrix<f64>> {
    if f.len() != q.n_states() {
        return Err(Error::InvalidInput(format!("f has {} entries for {} states", f.len(), q.n_states())));
    }
    let mut m = q.matrix().clone();
    for (k, fk) in f.iter().enumerate() {
        m[(k, k)] += fk;
    }
    Ok(m)
}

/// `ζ = -max Re spec(Q + diag f)`.
pub fn spectral_rate(q: &Generator, f: &[f64]) -> Result<f64> {
    Ok(-linalg::spectral_abscissa(&q_hat(q, f)?)?)
}

/// `E_i[exp(∫_0^t f(Λ(v)) dv)] = (exp(t·Q̂)·1)_i` for every start state `i`.
pub fn exp_functional_all(q: &Generator, f: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!("time {t} must be finite and >= 0")));
    }
    let e = linalg::expm(&(q_hat(q, f)? * t));
    Ok(e.row_iter().map(|row| row.sum()).collect())
}

pub fn exp_functional_exact(q: &Generator, f: &[f64], t: f64, i: usize) -> Result<f64> {
    if i >= q.n_states() {
        return Err(Error::InvalidInput(format!("state {i} out of range")));
    }
    Ok(exp_functional_all(q, f, t)?[i])
}

/// Empirical sandwich `c₁ e^{-ζt} ≤ E_i[exp ∫ f] ≤ c₂ e^{-ζt}` over a time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichFit {
    pub c1: f64,
    pub c2: f64,
    pub t_max: f64,
    pub n_times: usize,
}

pub fn fit_sandwich(q: &Generator, f: &[f64], zeta: f64, t_max: f64, n_times: usize) -> Result<SandwichFit> {
    let n_times = n_times.max(2);
    let (mut c1, mut c2) = (f64::INFINITY, 0.0f64);
    let step = linalg::expm(&(q_hat(q, f)? * (t_max / (n_times - 1) as f64)));
    let mut v = DVector::from_element(q.n_states(), 1.0);
    for j in 0..n_times {
        let t = t_max * j as f64 / (n_times - 1) as f64;
        if j > 0 {
            v = &step * v;
        }
        for x in v.iter() {
            let scaled = x * (zeta * t).exp();
            c1 = c1.min(scaled);
            c2 = c2.max(scaled);
        }
    }
    Ok(SandwichFit { c1, c2, t_max, n_times })
}

/// A named verdict with the margin of the inequality behind it; positive
/// margins pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
    /// Non-gating checks are reported but do not affect the overall verdict.
    pub gating: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    fn new(name: impl Into<String>, margin: f64) -> Self {
        Self { name: name.into(), pass: margin > 0.0, margin, gating: true, note: None }
    }

    fn failed(name: impl Into<String>, note: impl Into<String>) -> Self {
        Self { name: name.into(), pass: false, margin: f64::NEG_INFINITY, gating: true, note: Some(note.into()) }
    }

    fn advisory(mut self, note: impl Into<String>) -> Self {
        self.gating = false;
        self.note = Some(note.into());
        self
    }
}

/// Certificate quantities at one moment exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub p: f64,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub f: Vec<f64>,
    pub zeta: Option<f64>,
    pub checks: Vec<Check>,
}

fn exponent_report(c: &DissipativityConstants, q: &Generator) -> Result<ExponentReport> {
    let tag = |s: &str| format!("{s}@p={}", c.p);
    let mut rep = ExponentReport { p: c.p, kappa1: None, kappa2: None, f: vec![], zeta: None, checks: vec![] };
    let k = match contraction_constants(c) {
        Ok(k) => k,
        Err(e @ Error::InfiniteMoment { .. }) => {
            rep.checks.push(Check::failed(tag("moments_finite"), e.to_string()));
            return Ok(rep);
        }
        Err(e) => return Err(e),
    };
    rep.kappa1 = Some(k.kappa1);
    rep.kappa2 = Some(k.kappa2);
    // κ = 0 (no neutral term) is accepted: the margin is the distance to 1
    rep.checks.push(Check::new(tag("kappa1<1"), 1.0 - k.kappa1));
    rep.checks.push(Check::new(tag("kappa2<1"), 1.0 - k.kappa2));
    match f_of(c) {
        Ok(f) => {
            let zeta = spectral_rate(q, &f)?;
            rep.checks.push(Check::new(tag("zeta>0"), zeta));
            rep.f = f;
            rep.zeta = Some(zeta);
        }
        Err(e @ Error::Kappa2NotContractive { .. }) => rep.checks.push(Check::failed(tag("zeta>0"), e.to_string())),
        Err(e) => return Err(e),
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub p: f64,
    pub q_eff: f64,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub f: Vec<f64>,
    pub zeta: Option<f64>,
    pub alpha_min: f64,
    pub at_q_eff: ExponentReport,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sandwich: Option<SandwichFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionCertificate>,
    pub pass: bool,
}

impl CertificateReport {
    fn recompute_pass(&mut self) {
        self.pass = self.checks.iter().filter(|c| c.gating).all(|c| c.pass);
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.gating && !c.pass).collect()
    }

    /// Attaches a partition certificate; its gating verdicts join the overall one.
    pub fn with_partition(mut self, pc: PartitionCertificate) -> Self {
        self.checks.extend(pc.checks.iter().cloned());
        self.partition = Some(pc);
        self.recompute_pass();
        self
    }

    /// Fixed-width text table of all checks.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
        s += &format!("p = {}, q_eff = {}\n", self.p, self.q_eff);
        s += &format!("kappa1 = {}, kappa2 = {}, zeta = {}\n", fmt(self.kappa1), fmt(self.kappa2), fmt(self.zeta));
        s += &format!("f = {:?}\n", self.f.iter().map(|v| (v * 1e6).round() / 1e6).collect::<Vec<_>>());
        s += &format!("{:<34} {:>6} {:>14}\n", "check", "result", "margin");
        for c in &self.checks {
            let res = match (c.pass, c.gating) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "warn",
            };
            s += &format!("{:<34} {:>6} {:>14.6e}\n", c.name, res, c.margin);
        }
        s += &format!("overall: {}\n", if self.pass { "PASS" } else { "FAIL" });
        s
    }
}

/// All finite-space verdicts at the exponents `p` and `(p + p0) ∨ 2`.
pub fn finite_space_certificate(c: &DissipativityConstants, q: &Generator) -> Result<CertificateReport> {
    c.validate(q.n_states())?;
    let at_p = exponent_report(c, q)?;
    let at_q = exponent_report(&c.at_exponent(c.q_eff()), q)?;
    let mut checks = at_p.checks.clone();
    checks.extend(at_q.checks.iter().cloned());
    checks.push(Check::new("alpha_min<0", -c.alpha_min()));
    checks.push(
        Check::new("gamma<=1", 1.0 - c.gamma + f64::MIN_POSITIVE)
            .advisory("diffusion bounds are combined with gamma_p as if gamma <= 1"),
    );
    let sandwich = match at_p.zeta {
        Some(zeta) => Some(fit_sandwich(q, &at_p.f, zeta, 20.0, 201)?),
        None => None,
    };
    let mut rep = CertificateReport {
        p: c.p,
        q_eff: c.q_eff(),
        kappa1: at_p.kappa1,
        kappa2: at_p.kappa2,
        f: at_p.f,
        zeta: at_p.zeta,
        alpha_min: c.alpha_min(),
        at_q_eff: at_q,
        checks,
        sandwich,
        partition: None,
        pass: false,
    };
    rep.recompute_pass();
    Ok(rep)
}

/// Direction in which groups are numbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupOrdering {
    /// Group 1 holds the largest `α` (the default; the only ordering under
    /// which `A` can be a Z-matrix when some group is dissipative).
    #[default]
    Decreasing,
    Increasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionCertificate {
    pub ordering: GroupOrdering,
    /// Interior cut points; `F_n = {k : α(k) ∈ (i_{n-1}, i_n]}` with `i_0 = -∞`, `i_m = ᾱ`.
    pub cuts: Vec<f64>,
    /// States of each group, in group order (empty when built from analytic bounds).
    pub groups: Vec<Vec<usize>>,
    pub alpha_f: Vec<f64>,
    pub beta_f: Vec<f64>,
    pub q_f: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub u_f: Vec<f64>,
    pub v_f: Vec<f64>,
    /// Solution of `(p·diag(α^F) + Q^F)·v = -1`.
    pub v_direct: Vec<f64>,
    pub residual: f64,
    pub threshold_lhs: Vec<f64>,
    pub threshold_rhs: f64,
    pub checks: Vec<Check>,
    pub caveats: Vec<String>,
}

impl PartitionCertificate {
    pub fn m(&self) -> usize {
        self.alpha_f.len()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Group-level quantities supplied directly (for example closed-form
    /// inf/sup bounds of a countable switching space).
    pub fn from_group_bounds(
        alpha_f: Vec<f64>,
        beta_f: Vec<f64>,
        q_f: Vec<Vec<f64>>,
        ordering: GroupOrdering,
    ) -> Result<Self> {
        let m = alpha_f.len();
        if m == 0 || beta_f.len() != m || q_f.len() != m || q_f.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidInput("group bounds must be m, m and m x m".into()));
        }
        let mut q_f = q_f;
        for (k, row) in q_f.iter_mut().enumerate() {
            if row.iter().enumerate().any(|(l, v)| l != k && *v < 0.0) {
                return Err(Error::InvalidInput(format!("Q^F row {k} has a negative off-diagonal rate")));
            }
            row[k] = 0.0;
            row[k] = -row.iter().sum::<f64>();
        }
        Ok(Self::bare(ordering, vec![], vec![], alpha_f, beta_f, q_f, vec!["group bounds supplied analytically".into()]))
    }

    fn bare(
        ordering: GroupOrdering,
        cuts: Vec<f64>,
        groups: Vec<Vec<usize>>,
        alpha_f: Vec<f64>,
        beta_f: Vec<f64>,
        q_f: Vec<Vec<f64>>,
        caveats: Vec<String>,
    ) -> Self {
        Self {
            ordering,
            cuts,
            groups,
            alpha_f,
            beta_f,
            q_f,
            h: vec![],
            a: vec![],
            u_f: vec![],
            v_f: vec![],
            v_direct: vec![],
            residual: f64::NAN,
            threshold_lhs: vec![],
            threshold_rhs: f64::NAN,
            checks: vec![],
            caveats,
        }
    }

    fn push_check(&mut self, check: Check) {
        self.checks.retain(|c| c.name != check.name);
        self.checks.push(check);
    }
}

/// Builds `F_n`, `α^F`, `β^F` and `Q^F` from interior cut points of the range of `α`.
///
/// Set `truncated` when the generator is a finite truncation of a countable
/// space; the certificate then carries a caveat.
pub fn partition_reduce(
    c: &DissipativityConstants,
    q: &Generator,
    cuts: &[f64],
    ordering: GroupOrdering,
    truncated: bool,
) -> Result<PartitionCertificate> {
    let n = q.n_states();
    c.validate(n)?;
    if cuts.windows(2).any(|w| !(w[0] < w[1])) || cuts.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("partition cuts must be finite and strictly increasing".into()));
    }
    let m = cuts.len() + 1;
    let mut groups = vec![Vec::new(); m];
    for (k, a) in c.alpha.iter().enumerate() {
        // F_n = (i_{n-1}, i_n]: the first cut with α ≤ cut
        let g = cuts.partition_point(|&cut| cut < *a);
        groups[g].push(k);
    }
    if let Some(g) = groups.iter().position(Vec::is_empty) {
        return Err(Error::EmptyGroup { group: g });
    }
    if ordering == GroupOrdering::Decreasing {
        groups.reverse();
    }
    let sup = |xs: &[f64], g: &[usize]| g.iter().map(|&k| xs[k]).fold(f64::NEG_INFINITY, f64::max);
    let alpha_f: Vec<f64> = groups.iter().map(|g| sup(&c.alpha, g)).collect();
    let beta_f: Vec<f64> = groups.iter().map(|g| sup(&c.beta, g)).collect();
    let mut q_f = vec![vec![0.0; m]; m];
    for k in 0..m {
        for l in (0..m).filter(|&l| l != k) {
            let sums = groups[k].iter().map(|&j1| groups[l].iter().map(|&j2| q.rate(j1, j2)).sum::<f64>());
            q_f[k][l] = if l > k { sums.fold(f64::INFINITY, f64::min) } else { sums.fold(f64::NEG_INFINITY, f64::max) };
        }
        q_f[k][k] = -q_f[k].iter().sum::<f64>();
    }
    let caveats = if truncated {
        vec!["generator is a finite truncation of a countable space; inf/sup taken over retained states only".into()]
    } else {
        vec![]
    };
    Ok(PartitionCertificate::bare(ordering, cuts.to_vec(), groups, alpha_f, beta_f, q_f, caveats))
}

/// `H_m`: ones on and above the diagonal.
pub fn h_matrix(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| if j >= i { 1.0 } else { 0.0 })
}

const POSITIVITY_TOL: f64 = 1e-12;

/// The M-matrix test on `A = -(p·diag(α^F) + Q^F)·H_m`, plus the direct solve
/// of `(p·diag(α^F) + Q^F)·v = -1`.
pub fn m_matrix_certificate(pc: &PartitionCertificate, p: f64) -> PartitionCertificate {
    let mut pc = pc.clone();
    let m = pc.m();
    let mut b = linalg::mat_from_rows(&pc.q_f);
    for i in 0..m {
        b[(i, i)] += p * pc.alpha_f[i];
    }
    let h = h_matrix(m);
    let a = -(&b * &h);
    pc.h = mat_to_rows(&h);
    pc.a = mat_to_rows(&a);

    let scale = a.amax().max(1.0);
    let max_off = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)])
        .fold(f64::NEG_INFINITY, f64::max);
    // a 1x1 matrix has no off-diagonal entries
    let z_margin = if m == 1 { scale } else { -max_off + POSITIVITY_TOL * scale };
    pc.push_check(Check::new("z_pattern", z_margin));

    let ones = vec![1.0; m];
    match linalg::solve(&a, &ones) {
        Some(u) => {
            let u_min = u.iter().copied().fold(f64::INFINITY, f64::min);
            pc.push_check(Check::new("u_positive", u_min - POSITIVITY_TOL));
            let z_ok = pc.check("z_pattern").is_some_and(|c| c.pass);
            let m_margin = if z_ok { u_min - POSITIVITY_TOL } else { z_margin.min(u_min - POSITIVITY_TOL) };
            pc.push_check(Check::new("nonsingular_m_matrix", m_margin));
            pc.v_f = (&h * DVector::from_vec(u.clone())).iter().copied().collect();
            pc.u_f = u;
        }
        None => {
            pc.push_check(Check::failed("u_positive", "A is singular"));
            pc.push_check(Check::failed("nonsingular_m_matrix", "A is singular"));
        }
    }

    let minus_ones = vec![-1.0; m];
    match linalg::solve(&b, &minus_ones) {
        Some(v) => {
            let bv = &b * DVector::from_vec(v.clone());
            pc.residual = bv.iter().map(|x| (x + 1.0).abs()).fold(0.0, f64::max);
            let v_min = v.iter().copied().fold(f64::INFINITY, f64::min);
            pc.push_check(Check::new("v_positive", v_min - POSITIVITY_TOL));
            let dec = v.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
            let dec = if m == 1 { 1.0 } else { dec };
            pc.push_check(Check::new("v_decreasing", dec));
            if pc.v_f.is_empty() {
                pc.v_f = v.clone();
            }
            pc.v_direct = v;
        }
        None => {
            pc.push_check(Check::failed("v_positive", "p diag(alpha^F) + Q^F is singular"));
            pc.push_check(Check::failed("v_decreasing", "p diag(alpha^F) + Q^F is singular"));
        }
    }
    if pc.ordering == GroupOrdering::Increasing && m > 1 {
        pc.caveats.push(
            "increasing ordering: A[i][m] = -p alpha^F(i), so A fails the Z-pattern whenever a group before the last is dissipative"
                .into(),
        );
    }
    pc
}

/// Right side of the threshold inequality: `(1-κ₁)^p / (2 + (p-2)(1-κ₁)^p)`.
pub fn threshold_rhs(kappa1: f64, p: f64) -> f64 {
    let s = (1.0 - kappa1).powf(p);
    s / (2.0 + (p - 2.0) * s)
}

/// `(β^F(n) + γ_p)·v^F(n) < (1-κ₁)^p / (2 + (p-2)(1-κ₁)^p)` for every group.
pub fn threshold_check(pc: &PartitionCertificate, c: &DissipativityConstants) -> Result<PartitionCertificate> {
    let mut pc = pc.clone();
    if pc.v_f.is_empty() || pc.v_f.iter().any(|v| !(*v > 0.0)) {
        pc.push_check(Check::failed("threshold", "v^F is not available or not positive"));
        return Ok(pc);
    }
    let k1 = contraction_constants(c)?.kappa1;
    let rhs = threshold_rhs(k1, c.p);
    pc.threshold_lhs = pc.beta_f.iter().zip(&pc.v_f).map(|(b, v)| (b + c.gamma_p()) * v).collect();
    pc.threshold_rhs = rhs;
    for (n, lhs) in pc.threshold_lhs.clone().iter().enumerate() {
        pc.push_check(Check::new(format!("threshold[{n}]"), rhs - lhs));
    }
    Ok(pc)
}

/// `partition_reduce` → `m_matrix_certificate` → `threshold_check`.
pub fn partition_certificate(
    c: &DissipativityConstants,
    q: &Generator,
    cuts: &[f64],
    ordering: GroupOrdering,
    truncated: bool,
) -> Result<PartitionCertificate> {
    let pc = partition_reduce(c, q, cuts, ordering, truncated)?;
    threshold_check(&m_matrix_certificate(&pc, c.p), c)
}
