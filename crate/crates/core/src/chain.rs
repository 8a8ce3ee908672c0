//! The switching component: generators, exact samplers, and the basic coupling.
//!
//! States are indexed `0..n`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// A conservative, irreducible rate matrix over a finite state set.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    rates: DMatrix<f64>,
    max_rate: f64,
}

impl Generator {
    /// Validates the matrix; the rate bound defaults to `max_k q_k`.
    pub fn new(rates: DMatrix<f64>) -> Result<Self> {
        let n = rates.nrows();
        if n != rates.ncols() {
            return Err(Error::InvalidGenerator(format!("matrix is {}x{}, not square", n, rates.ncols())));
        }
        if n < 2 {
            return Err(Error::InvalidGenerator("at least two states are required".into()));
        }
        for k in 0..n {
            let mut scale: f64 = 1.0;
            let mut sum = 0.0;
            for l in 0..n {
                let q = rates[(k, l)];
                if !q.is_finite() {
                    return Err(Error::InvalidGenerator(format!("rate ({k},{l}) is not finite")));
                }
                if k != l && q < 0.0 {
                    return Err(Error::InvalidGenerator(format!("off-diagonal rate ({k},{l}) = {q} is negative")));
                }
                scale = scale.max(q.abs());
                sum += q;
            }
            if sum.abs() > ROW_SUM_TOL * scale {
                return Err(Error::InvalidGenerator(format!("row {k} sums to {sum:e}, not 0")));
            }
        }
        if !strongly_connected(&rates) {
            return Err(Error::InvalidGenerator("chain is not irreducible".into()));
        }
        let max_rate = (0..n).map(|k| -rates[(k, k)]).fold(0.0, f64::max);
        Ok(Self { rates, max_rate })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidGenerator("rows have unequal lengths".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Declares the uniform bound `M ≥ max_k q_k`.
    pub fn with_rate_bound(mut self, bound: f64) -> Result<Self> {
        if bound < self.max_rate {
            return Err(Error::InvalidGenerator(format!(
                "declared rate bound {bound} is below max_k q_k = {}",
                self.max_rate
            )));
        }
        self.max_rate = bound;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.rates.nrows()
    }

    pub fn rate(&self, k: usize, l: usize) -> f64 {
        self.rates[(k, l)]
    }

    /// `q_k = -q_kk`.
    pub fn exit_rate(&self, k: usize) -> f64 {
        -self.rates[(k, k)]
    }

    pub fn rate_bound(&self) -> f64 {
        self.max_rate
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rates
    }

    /// `(Qg)(k) = Σ_l q_kl g(l)`.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let n = self.n_states();
        (0..n).map(|k| (0..n).map(|l| self.rates[(k, l)] * g[l]).sum()).collect()
    }

    /// Solves `πQ = 0`, `Σπ = 1`.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        let n = self.n_states();
        let mut a = self.rates.transpose();
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut rhs = nalgebra::DVector::zeros(n);
        rhs[n - 1] = 1.0;
        a.lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::SingularSystem("stationary distribution".into()))
    }

    fn jump_target<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> usize {
        let n = self.n_states();
        let u = rng.random::<f64>() * self.exit_rate(k);
        let mut acc = 0.0;
        let mut last = k;
        for l in (0..n).filter(|&l| l != k) {
            let q = self.rates[(k, l)];
            if q <= 0.0 {
                continue;
            }
            acc += q;
            last = l;
            if u < acc {
                return l;
            }
        }
        last
    }
}

fn strongly_connected(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for l in 0..n {
                let rate = if forward { q[(k, l)] } else { q[(l, k)] };
                if l != k && rate > 0.0 && !seen[l] {
                    seen[l] = true;
                    stack.push(l);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Mark intervals `Δ_kl ⊂ [0, q_k)` of the Poisson-measure representation.
#[derive(Debug, Clone, PartialEq)]
pub struct SkorokhodTable {
    rows: Vec<Vec<MarkInterval>>,
    bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkInterval {
    pub target: usize,
    pub lo: f64,
    pub hi: f64,
}

impl SkorokhodTable {
    /// Lays out the intervals of state `k` back to back from 0, targets in
    /// increasing order skipping `k`; zero rates get no interval.
    pub fn build(q: &Generator) -> Self {
        let n = q.n_states();
        let rows = (0..n)
            .map(|k| {
                let mut lo = 0.0;
                (0..n)
                    .filter(|&l| l != k && q.rate(k, l) > 0.0)
                    .map(|l| {
                        let hi = lo + q.rate(k, l);
                        let iv = MarkInterval { target: l, lo, hi };
                        lo = hi;
                        iv
                    })
                    .collect()
            })
            .collect();
        Self { rows, bound: q.rate_bound() }
    }

    pub fn intervals(&self, k: usize) -> &[MarkInterval] {
        &self.rows[k]
    }

    /// `𝔪(U_k)`, the total length of the active marks of state `k`.
    pub fn active_length(&self, k: usize) -> f64 {
        self.rows[k].last().map_or(0.0, |iv| iv.hi)
    }

    pub fn mark_bound(&self) -> f64 {
        self.bound
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    /// `h(k, u)`: the signed jump `l - k` if `u ∈ Δ_kl`, else 0.
    pub fn jump_size(&self, k: usize, u: f64) -> i64 {
        self.target(k, u).map_or(0, |l| l as i64 - k as i64)
    }

    pub fn target(&self, k: usize, u: f64) -> Option<usize> {
        let row = &self.rows[k];
        let idx = row.partition_point(|iv| iv.hi <= u);
        row.get(idx).filter(|iv| iv.lo <= u).map(|iv| iv.target)
    }
}

/// A right-continuous piecewise-constant path on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingPath {
    pub start: usize,
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl SwitchingPath {
    pub fn constant(start: usize, horizon: f64) -> Self {
        Self { start, jump_times: vec![], states: vec![], horizon }
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.jump_times.partition_point(|&s| s <= t);
        if idx == 0 {
            self.start
        } else {
            self.states[idx - 1]
        }
    }

    pub fn final_state(&self) -> usize {
        self.states.last().copied().unwrap_or(self.start)
    }

    /// `(from, to, state)` pieces covering `[0, T]`.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let n = self.jump_times.len();
        (0..=n).map(move |i| {
            let from = if i == 0 { 0.0 } else { self.jump_times[i - 1] };
            let to = if i == n { self.horizon } else { self.jump_times[i] };
            let state = if i == 0 { self.start } else { self.states[i - 1] };
            (from, to, state)
        })
    }

    /// `∫_0^T f(Λ(v)) dv`.
    pub fn integral(&self, f: &[f64]) -> f64 {
        self.pieces().map(|(a, b, k)| (b - a) * f[k]).sum()
    }

    pub fn occupation(&self, n_states: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n_states];
        for (a, b, k) in self.pieces() {
            occ[k] += b - a;
        }
        occ
    }

    /// `counts[k][l]` = number of jumps `k → l`.
    pub fn transition_counts(&self, n_states: usize) -> Vec<Vec<u64>> {
        let mut counts = vec![vec![0u64; n_states]; n_states];
        let mut from = self.start;
        for &to in &self.states {
            counts[from][to] += 1;
            from = to;
        }
        counts
    }

    /// CSV rows `t_jump,new_state`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_jump,new_state")?;
        writeln!(out, "0,{}", self.start)?;
        for (t, s) in self.jump_times.iter().zip(&self.states) {
            writeln!(out, "{t:e},{s}")?;
        }
        Ok(())
    }
}

/// Holding times `Exp(q_k)`, next state with probability `q_kl / q_k`.
pub fn sample_chain_hold_jump<R: Rng + ?Sized>(q: &Generator, start: usize, horizon: f64, rng: &mut R) -> SwitchingPath {
    let mut path = SwitchingPath::constant(start, horizon);
    let mut t = 0.0;
    let mut k = start;
    loop {
        let rate = q.exit_rate(k);
        if rate <= 0.0 {
            break;
        }
        t += rng.sample::<f64, _>(Exp1) / rate;
        if t > horizon {
            break;
        }
        k = q.jump_target(k, rng);
        path.jump_times.push(t);
        path.states.push(k);
    }
    path
}

/// Waits `Exp(𝔪(U_k))` and a uniform mark on `U_k`, jump given by `h(k, ·)`.
pub fn sample_chain_poisson<R: Rng + ?Sized>(
    table: &SkorokhodTable,
    start: usize,
    horizon: f64,
    rng: &mut R,
) -> SwitchingPath {
    let mut path = SwitchingPath::constant(start, horizon);
    let mut t = 0.0;
    let mut k = start;
    loop {
        let active = table.active_length(k);
        if active <= 0.0 {
            break;
        }
        t += rng.sample::<f64, _>(Exp1) / active;
        if t > horizon {
            break;
        }
        let u = rng.random::<f64>() * active;
        let jump = table.jump_size(k, u);
        if jump == 0 {
            continue;
        }
        k = (k as i64 + jump) as usize;
        path.jump_times.push(t);
        path.states.push(k);
    }
    path
}

/// The basic coupling `Q̃` of a generator with itself.
#[derive(Debug, Clone)]
pub struct BasicCoupling {
    n: usize,
    /// `moves[k*n + l]` = outgoing `((k', l'), rate)` of pair `(k, l)`.
    moves: Vec<Vec<((usize, usize), f64)>>,
}

impl BasicCoupling {
    pub fn new(q: &Generator) -> Self {
        let n = q.n_states();
        let mut moves = Vec::with_capacity(n * n);
        for k in 0..n {
            for l in 0..n {
                moves.push(pair_moves(q, k, l));
            }
        }
        Self { n, moves }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn rates(&self, k: usize, l: usize) -> &[((usize, usize), f64)] {
        &self.moves[k * self.n + l]
    }

    pub fn exit_rate(&self, k: usize, l: usize) -> f64 {
        self.rates(k, l).iter().map(|(_, r)| r).sum()
    }

    /// `(Q̃g)(k, l)` for `g` given as `g[k][l]`.
    pub fn apply(&self, g: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|k| {
                (0..self.n)
                    .map(|l| self.rates(k, l).iter().map(|&((a, b), r)| r * (g[a][b] - g[k][l])).sum())
                    .collect()
            })
            .collect()
    }

    /// Dense generator on `S × S`, pair `(k, l)` at index `k*n + l`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n2 = self.n * self.n;
        let mut m = DMatrix::zeros(n2, n2);
        for k in 0..self.n {
            for l in 0..self.n {
                let i = k * self.n + l;
                for &((a, b), r) in self.rates(k, l) {
                    m[(i, a * self.n + b)] += r;
                    m[(i, i)] -= r;
                }
            }
        }
        m
    }
}

/// Nets the three sums of `Q̃` (including the diagonal terms of `Q`) into
/// nonnegative rates per target pair.
fn pair_moves(q: &Generator, k: usize, l: usize) -> Vec<((usize, usize), f64)> {
    let n = q.n_states();
    if k == l {
        return (0..n).filter(|&m| m != k && q.rate(k, m) > 0.0).map(|m| ((m, m), q.rate(k, m))).collect();
    }
    let mut acc = vec![0.0; n * n];
    for m in 0..n {
        let (qk, ql) = (q.rate(k, m), q.rate(l, m));
        acc[m * n + l] += (qk - ql).max(0.0);
        acc[k * n + m] += (ql - qk).max(0.0);
        acc[m * n + m] += qk.min(ql);
    }
    acc[k * n + l] = 0.0;
    let scale = q.rate_bound().max(1.0);
    acc.into_iter()
        .enumerate()
        .filter(|&(_, r)| r > 1e-14 * scale)
        .map(|(i, r)| ((i / n, i % n), r))
        .collect()
}

/// Two aligned paths driven by `Q̃`, identical from the coupling time on.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSwitchingPath {
    pub first: SwitchingPath,
    pub second: SwitchingPath,
    /// `inf{t ≥ 0 : Λ(t) = Λ'(t)}`; `None` if not reached within the horizon.
    pub coupling_time: Option<f64>,
}

pub fn sample_coupled_chain<R: Rng + ?Sized>(
    coupling: &BasicCoupling,
    start: (usize, usize),
    horizon: f64,
    rng: &mut R,
) -> CoupledSwitchingPath {
    let mut first = SwitchingPath::constant(start.0, horizon);
    let mut second = SwitchingPath::constant(start.1, horizon);
    let mut tau = (start.0 == start.1).then_some(0.0);
    let (mut k, mut l) = start;
    let mut t = 0.0;
    loop {
        let moves = coupling.rates(k, l);
        let total: f64 = moves.iter().map(|(_, r)| r).sum();
        if total <= 0.0 {
            break;
        }
        t += rng.sample::<f64, _>(Exp1) / total;
        if t > horizon {
            break;
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut next = moves[moves.len() - 1].0;
        for &(pair, r) in moves {
            acc += r;
            if u < acc {
                next = pair;
                break;
            }
        }
        if next.0 != k {
            first.jump_times.push(t);
            first.states.push(next.0);
        }
        if next.1 != l {
            second.jump_times.push(t);
            second.states.push(next.1);
        }
        (k, l) = next;
        if tau.is_none() && k == l {
            tau = Some(t);
        }
    }
    CoupledSwitchingPath { first, second, coupling_time: tau }
}
