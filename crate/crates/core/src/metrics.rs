//! Wasserstein distances between empirical measures on `E`, coupling upper
//! bounds and exponential decay fits.

use serde::{Deserialize, Serialize};

use crate::chain::{BasicCoupling, Generator};
use crate::dynamics::CoupledOutput;
use crate::error::{Error, Result};
use crate::linalg;
use crate::segment::{metric_d, MarkedPoint};
use crate::stats::{curve_from_moments, fit_line, CurvePoint, LineFit, Moments};

/// Largest supported side of an exact transport problem.
pub const MAX_ATOMS: usize = 512;

/// Finitely supported probability measure on `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<MarkedPoint>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<MarkedPoint>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::InvalidInput("empirical measure needs one positive weight per atom".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput("empirical measure weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("empirical measure weights sum to {total}, not 1")));
        }
        if atoms.iter().any(|a| !a.segment.same_grid(&atoms[0].segment)) {
            return Err(Error::IncompatibleGrids("atoms of an empirical measure".into()));
        }
        Ok(Self { atoms, weights })
    }

    pub fn uniform(atoms: Vec<MarkedPoint>) -> Result<Self> {
        let w = 1.0 / atoms.len().max(1) as f64;
        let n = atoms.len();
        Self::new(atoms, vec![w; n])
    }

    pub fn atoms(&self) -> &[MarkedPoint] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// An optimal coupling of two discrete measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `plan[i][j]` is the mass moved from source atom `i` to target atom `j`.
    pub plan: Vec<Vec<f64>>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let m = self.plan.first().map_or(0, Vec::len);
        (0..m).map(|j| self.plan.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Tree node: rows are `0..n`, columns `n..n+m`.
struct Basis {
    n: usize,
    m: usize,
    /// Basic cells with their flows.
    cells: Vec<(usize, usize, f64)>,
}

impl Basis {
    /// North-west corner rule; always yields `n + m - 1` cells (some may be zero).
    fn north_west(a: &[f64], b: &[f64]) -> Self {
        let (n, m) = (a.len(), b.len());
        let (mut sa, mut sb) = (a.to_vec(), b.to_vec());
        let (mut i, mut j) = (0, 0);
        let mut cells = Vec::with_capacity(n + m - 1);
        loop {
            let x = sa[i].min(sb[j]).max(0.0);
            cells.push((i, j, x));
            sa[i] -= x;
            sb[j] -= x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if j == m - 1 || (i < n - 1 && sa[i] <= sb[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { n, m, cells }
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (c, &(i, j, _)) in self.cells.iter().enumerate() {
            adj[i].push(c);
            adj[self.n + j].push(c);
        }
        adj
    }

    fn other_end(&self, cell: usize, node: usize) -> usize {
        let (i, j, _) = self.cells[cell];
        if node == i {
            self.n + j
        } else {
            i
        }
    }

    /// Dual potentials with `u[0] = 0`.
    fn potentials(&self, cost: &[f64], adj: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut pot = vec![f64::NAN; n + m];
        pot[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &c in &adj[node] {
                let other = self.other_end(c, node);
                if pot[other].is_nan() {
                    let (i, j, _) = self.cells[c];
                    // u_i + v_j = c_ij
                    pot[other] = cost[i * m + j] - pot[node];
                    stack.push(other);
                }
            }
        }
        (pot[..n].to_vec(), pot[n..].to_vec())
    }

    /// Cells on the tree path from row `i` to column `j`, in order.
    fn path(&self, i: usize, j: usize, adj: &[Vec<usize>]) -> Vec<usize> {
        let total = self.n + self.m;
        let mut via = vec![usize::MAX; total];
        let mut seen = vec![false; total];
        seen[i] = true;
        let mut queue = std::collections::VecDeque::from([i]);
        let target = self.n + j;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &c in &adj[node] {
                let other = self.other_end(c, node);
                if !seen[other] {
                    seen[other] = true;
                    via[other] = c;
                    queue.push_back(other);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != i {
            let c = via[node];
            cells.push(c);
            node = self.other_end(c, node);
        }
        cells.reverse();
        cells
    }
}

/// Solves `min Σ c_ij x_ij` over couplings of `a` and `b` (transportation
/// simplex with MODI pricing).
///
/// `cost` is row-major `n × m`. Dantzig pricing is used until 50 consecutive
/// degenerate pivots, then Bland's rule until the next improving pivot.
pub fn solve_transport(a: &[f64], b: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 || cost.len() != n * m {
        return Err(Error::InvalidInput("transport problem needs n, m >= 1 and an n x m cost".into()));
    }
    if n > MAX_ATOMS || m > MAX_ATOMS {
        return Err(Error::SizeLimit { n, m });
    }
    let scale = cost.iter().fold(0.0f64, |s, c| s.max(c.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut basis = Basis::north_west(a, b);
    let mut degenerate_run = 0usize;
    let max_pivots = 100 * (n + m) * (n + m) + 1000;
    let mut in_basis = vec![false; n * m];
    for &(i, j, _) in &basis.cells {
        in_basis[i * m + j] = true;
    }
    for _ in 0..max_pivots {
        let adj = basis.adjacency();
        let (u, v) = basis.potentials(cost, &adj);
        let bland = degenerate_run >= 50;
        let mut entering = None;
        let mut best = -tol;
        'scan: for i in 0..n {
            for j in 0..m {
                if in_basis[i * m + j] {
                    continue;
                }
                let rc = cost[i * m + j] - u[i] - v[j];
                if rc < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = rc;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let mut plan = vec![vec![0.0; m]; n];
            let mut total = 0.0;
            for &(i, j, x) in &basis.cells {
                plan[i][j] += x;
                total += x * cost[i * m + j];
            }
            return Ok(TransportPlan { plan, cost: total });
        };
        let path = basis.path(ei, ej, &adj);
        // path cells alternate: odd positions (0, 2, …) lose mass
        let mut leave = path[0];
        for &c in path.iter().step_by(2) {
            let (x, y) = (basis.cells[c].2, basis.cells[leave].2);
            if x < y || (x == y && c < leave) {
                leave = c;
            }
        }
        let theta = basis.cells[leave].2;
        for (k, &c) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis.cells[c].2 = (basis.cells[c].2 - theta).max(0.0);
            } else {
                basis.cells[c].2 += theta;
            }
        }
        degenerate_run = if theta > 0.0 { 0 } else { degenerate_run + 1 };
        let (li, lj, _) = basis.cells[leave];
        in_basis[li * m + lj] = false;
        in_basis[ei * m + ej] = true;
        basis.cells[leave] = (ei, ej, theta);
    }
    Err(Error::InvalidInput(format!("transport simplex did not converge within {max_pivots} pivots")))
}

/// Exact `W_p(μ, ν)` under the ground cost `d^p`, with an optimal plan.
pub fn exact_wasserstein_p(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<(f64, TransportPlan)> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("W_p needs p >= 1 (got {p})")));
    }
    let (n, m) = (mu.len(), nu.len());
    if n > MAX_ATOMS || m > MAX_ATOMS {
        return Err(Error::SizeLimit { n, m });
    }
    let mut cost = Vec::with_capacity(n * m);
    for a in mu.atoms() {
        for b in nu.atoms() {
            cost.push(metric_d(a, b)?.powf(p));
        }
    }
    let plan = solve_transport(mu.weights(), nu.weights(), &cost)?;
    Ok((plan.cost.max(0.0).powf(1.0 / p), plan))
}

/// Mean `d^p` across coupled runs at each recorded time. Any coupling's mean
/// cost bounds `W_p^p` of the two time-`t` laws from above.
pub fn coupling_upper_bound(runs: &[CoupledOutput], p: f64) -> Result<Vec<CurvePoint>> {
    let Some(first) = runs.first() else {
        return Ok(vec![]);
    };
    let times = &first.first.times;
    let mut acc = vec![Moments::default(); times.len()];
    for run in runs {
        if run.distance.len() != times.len() {
            return Err(Error::InvalidInput("coupled runs are not aligned in time".into()));
        }
        acc.iter_mut().zip(&run.distance).for_each(|(a, d)| a.push(d.powf(p)));
    }
    Ok(curve_from_moments(times, &acc))
}

/// Empirical `P(τ > t)` with binomial standard errors.
pub fn survival_curve(tau: &[Option<f64>], times: &[f64]) -> Vec<CurvePoint> {
    let n = tau.len() as f64;
    times
        .iter()
        .map(|&t| {
            let s = tau.iter().filter(|x| x.is_none_or(|x| x > t)).count() as f64 / n;
            CurvePoint { t, mean: s, stderr: (s * (1.0 - s) / n).sqrt() }
        })
        .collect()
}

/// `-max Re λ` of the basic-coupling generator restricted to the off-diagonal
/// pairs: the exponential tail rate of the coupling time.
pub fn off_diagonal_absorption_rate(q: &Generator) -> Result<f64> {
    let n = q.n_states();
    if n < 2 {
        return Err(Error::InvalidInput("coupling needs at least two states".into()));
    }
    let full = BasicCoupling::new(q).matrix();
    let off: Vec<usize> = (0..n * n).filter(|s| s / n != s % n).collect();
    let sub = nalgebra::DMatrix::from_fn(off.len(), off.len(), |a, b| full[(off[a], off[b])]);
    Ok(-linalg::spectral_abscissa(&sub)?)
}

/// Least-squares fit of `log E ≈ a - ϑ t` over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub window: (f64, f64),
    /// `ϑ̂`, the negated slope.
    pub rate: f64,
    pub intercept: f64,
    /// 95% confidence interval for `ϑ̂`.
    pub rate_ci: (f64, f64),
    pub r_squared: f64,
    pub n_points: usize,
    pub weighted: bool,
}

impl DecayFit {
    /// `ϑ̂ > 0` with a confidence interval that excludes zero.
    pub fn significant(&self) -> bool {
        self.rate > 0.0 && self.rate_ci.0 > 0.0
    }
}

/// `[T/6, T/2]`.
pub fn default_window(horizon: f64) -> (f64, f64) {
    (horizon / 6.0, horizon / 2.0)
}

fn in_window(curve: &[CurvePoint], window: (f64, f64)) -> Vec<CurvePoint> {
    let eps = 1e-9 * window.1.abs().max(1.0);
    curve.iter().copied().filter(|c| c.t >= window.0 - eps && c.t <= window.1 + eps).collect()
}

/// Weighted least squares of `log(mean)` against `t` with weights
/// `(mean/stderr)²`, falling back to equal weights when any standard error is
/// zero.
pub fn fit_exponential_decay(curve: &[CurvePoint], window: (f64, f64)) -> Result<DecayFit> {
    let pts = in_window(curve, window);
    if pts.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "decay window [{}, {}] holds {} points; at least 5 are needed",
            window.0,
            window.1,
            pts.len()
        )));
    }
    if let Some(bad) = pts.iter().find(|c| !(c.mean > 0.0)) {
        return Err(Error::NonpositiveMean { t: bad.t, mean: bad.mean });
    }
    let t: Vec<f64> = pts.iter().map(|c| c.t).collect();
    let y: Vec<f64> = pts.iter().map(|c| c.mean.ln()).collect();
    let weighted = pts.iter().all(|c| c.stderr > 0.0 && c.stderr.is_finite());
    let w: Option<Vec<f64>> = weighted.then(|| pts.iter().map(|c| (c.mean / c.stderr).powi(2)).collect());
    let f = fit_line(&t, &y, w.as_deref())?;
    Ok(DecayFit {
        window,
        rate: -f.slope,
        intercept: f.intercept,
        rate_ci: (-f.slope_ci.1, -f.slope_ci.0),
        r_squared: f.r_squared,
        n_points: f.n,
        weighted,
    })
}

/// Ordinary least-squares line through the curve means over a window.
pub fn trend(curve: &[CurvePoint], window: (f64, f64)) -> Result<LineFit> {
    let pts = in_window(curve, window);
    let t: Vec<f64> = pts.iter().map(|c| c.t).collect();
    let y: Vec<f64> = pts.iter().map(|c| c.mean).collect();
    fit_line(&t, &y, None)
}

/// `true` when the slope's confidence interval reaches zero or below.
pub fn no_positive_trend(fit: &LineFit) -> bool {
    fit.slope_ci.0 <= 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::Segment;
    use approx::assert_relative_eq;

    fn point(v: f64, k: usize) -> MarkedPoint {
        MarkedPoint::new(Segment::constant(1.0, 0.1, 5, &[v]).unwrap(), k)
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let mu = EmpiricalMeasure::uniform(vec![point(0.0, 0), point(1.0, 1), point(-2.0, 0)]).unwrap();
        let (w, plan) = exact_wasserstein_p(&mu, &mu, 2.0).unwrap();
        assert_eq!(w, 0.0);
        for (i, row) in plan.plan.iter().enumerate() {
            assert_relative_eq!(row[i], 1.0 / 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_pair() {
        let mu = EmpiricalMeasure::uniform(vec![point(0.5, 0)]).unwrap();
        let nu = EmpiricalMeasure::uniform(vec![point(2.0, 1)]).unwrap();
        let (w, _) = exact_wasserstein_p(&mu, &nu, 2.0).unwrap();
        assert_relative_eq!(w, 1.5 + 1.0, max_relative = 1e-12);
    }

    #[test]
    fn unbalanced_sizes() {
        // 1 atom of mass 1 against 2 atoms of mass 1/2
        let plan = solve_transport(&[1.0], &[0.5, 0.5], &[1.0, 3.0]).unwrap();
        assert_relative_eq!(plan.cost, 2.0);
        let plan = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &[4.0, 1.0, 1.0, 4.0]).unwrap();
        assert_relative_eq!(plan.cost, 1.0);
    }

    #[test]
    fn oversized_problem_is_refused() {
        let a = vec![1.0 / 600.0; 600];
        assert!(matches!(solve_transport(&a, &[1.0], &vec![0.0; 600]), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn exact_log_linear_decay() {
        let curve: Vec<CurvePoint> =
            (0..=30).map(|i| i as f64 * 0.1).map(|t| CurvePoint { t, mean: (-2.0 * t).exp(), stderr: 0.0 }).collect();
        let fit = fit_exponential_decay(&curve, (0.0, 3.0)).unwrap();
        assert_relative_eq!(fit.rate, 2.0, max_relative = 1e-10);
        assert!(!fit.weighted);
    }

    #[test]
    fn decay_fit_refusals() {
        let curve: Vec<CurvePoint> = (0..4).map(|i| CurvePoint { t: i as f64, mean: 1.0, stderr: 0.1 }).collect();
        assert!(fit_exponential_decay(&curve, (0.0, 10.0)).is_err());
        let mut curve: Vec<CurvePoint> = (0..8).map(|i| CurvePoint { t: i as f64, mean: 1.0, stderr: 0.1 }).collect();
        curve[5].mean = 0.0;
        assert!(matches!(fit_exponential_decay(&curve, (0.0, 10.0)), Err(Error::NonpositiveMean { .. })));
    }

    #[test]
    fn two_state_absorption_rate() {
        let q = Generator::from_rows(&[vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        assert_relative_eq!(off_diagonal_absorption_rate(&q).unwrap(), 3.0, max_relative = 1e-12);
    }
}
