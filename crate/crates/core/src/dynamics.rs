//! Euler–Maruyama integration of the neutral equation
//!
//! ```text
//! d[X(t) - G(X_t, Λ(t))] = b(X_t, Λ(t)) dt + σ(X_t, Λ(t)) dW(t)
//! ```
//!
//! The state carried from step to step is `Y(t) = X(t) - G(X_t, Λ(t))`
//! together with the segment `X_t`. Each grid step advances `Y` with the
//! coefficients frozen at `X_t` (split at the exact regime jump times), then
//! recovers the new endpoint `x = X(t + h)` from `x = Y + G(X_{t+h}, Λ(t+h))`
//! by fixed-point iteration.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::DissipativityConstants;
use crate::chain::{sample_chain_hold_jump, sample_coupled_chain, BasicCoupling, Generator, SwitchingPath};
use crate::error::{Error, Result};
use crate::kernel::DelayKernel;
use crate::rng::{stream, Purpose, Stream};
use crate::segment::{DelayIntegrator, MarkedPoint, Segment};
use crate::stats::{curve_from_moments, CurvePoint, Moments};

/// The coefficient triple `(G, b, σ)`.
///
/// Every functional receives the current segment, the regime and a
/// [`DelayIntegrator`] for `ρ`-integrals on the segment grid.
pub trait Coefficients: Send + Sync + std::fmt::Debug {
    /// Spatial dimension `d`.
    fn dim(&self) -> usize;

    /// Number of regimes the coefficients are defined for.
    fn n_regimes(&self) -> usize;

    /// `G(φ, k)` into `out` (length `d`).
    fn neutral(&self, seg: &Segment, regime: usize, rho: &DelayIntegrator, out: &mut [f64]);

    /// `b(φ, k)` into `drift` (length `d`) and `σ(φ, k)` into `diffusion`
    /// (`d × d`, row-major).
    fn drift_diffusion(&self, seg: &Segment, regime: usize, rho: &DelayIntegrator, drift: &mut [f64], diffusion: &mut [f64]);

    /// `true` when `G(·, k) ≡ 0`, which lets the integrator skip the fixed point.
    fn neutral_vanishes(&self, _regime: usize) -> bool {
        false
    }
}

/// Linear coefficients
///
/// ```text
/// G(φ,k) = κ_G(k) ∫φ dρ,   b(φ,k) = A_k φ(0) + B_k ∫φ dρ + c_k,   σ(φ,k) = s_k + g_k diag(∫φ dρ)
/// ```
///
/// Matrices are per regime, `d × d` row-major. Omitted `b`, `c`, `s`, `g`
/// blocks are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearFamily {
    pub dim: usize,
    pub kappa_g: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub s: Vec<Vec<f64>>,
    #[serde(default)]
    pub g: Vec<f64>,
}

impl LinearFamily {
    /// Scalar (`d = 1`) family from per-regime coefficients.
    pub fn scalar(kappa_g: &[f64], a: &[f64], b: &[f64], c: &[f64], s: &[f64], g: &[f64]) -> Result<Self> {
        let wrap = |v: &[f64]| v.iter().map(|x| vec![*x]).collect();
        Self { dim: 1, kappa_g: kappa_g.to_vec(), a: wrap(a), b: wrap(b), c: wrap(c), s: wrap(s), g: g.to_vec() }
            .normalized()
    }

    /// Checks shapes and fills omitted blocks with zeros.
    pub fn normalized(mut self) -> Result<Self> {
        let n = self.kappa_g.len();
        let d = self.dim;
        if d == 0 || n == 0 {
            return Err(Error::InvalidInput("linear model needs dim >= 1 and at least one regime".into()));
        }
        let fill = |v: &mut Vec<Vec<f64>>, len: usize, name: &str| -> Result<()> {
            if v.is_empty() {
                *v = vec![vec![0.0; len]; n];
            }
            if v.len() != n || v.iter().any(|m| m.len() != len) {
                return Err(Error::InvalidInput(format!("model.{name}: expected {n} regimes of {len} entries")));
            }
            Ok(())
        };
        fill(&mut self.a, d * d, "a")?;
        fill(&mut self.b, d * d, "b")?;
        fill(&mut self.c, d, "c")?;
        fill(&mut self.s, d * d, "s")?;
        if self.g.is_empty() {
            self.g = vec![0.0; n];
        }
        if self.g.len() != n {
            return Err(Error::InvalidInput(format!("model.g: expected {n} entries")));
        }
        let all = self.kappa_g.iter().chain(&self.g).chain(
            [&self.a, &self.b, &self.c, &self.s].into_iter().flat_map(|m| m.iter().flatten()),
        );
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("model coefficients must be finite".into()));
        }
        Ok(self)
    }

    fn mat(&self, m: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, m)
    }

    /// Constants for which the contraction and dissipativity assumptions hold:
    /// `κ = max|κ_G|`, `α(k) = λ_max(sym A_k) + ‖C_k‖/2`, `β(k) = ‖C_k‖/2` with
    /// `C_k = κ_G(k) A_k + B_k`, and `γ = max g_k²`.
    pub fn derived_constants(&self, kernel: &DelayKernel, r: f64, p: f64, p0: f64) -> DissipativityConstants {
        let n = self.kappa_g.len();
        let mut alpha = Vec::with_capacity(n);
        let mut beta = Vec::with_capacity(n);
        for k in 0..n {
            let a = self.mat(&self.a[k]);
            let c = &a * self.kappa_g[k] + self.mat(&self.b[k]);
            let sym = (&a + a.transpose()) * 0.5;
            let lmax = sym.symmetric_eigenvalues().max();
            let cnorm = c.singular_values().max();
            alpha.push(lmax + cnorm / 2.0);
            beta.push(cnorm / 2.0);
        }
        DissipativityConstants {
            p,
            p0,
            r,
            kappa: self.kappa_g.iter().map(|k| k.abs()).fold(0.0, f64::max),
            alpha,
            beta,
            gamma: self.g.iter().map(|g| g * g).fold(0.0, f64::max),
            kernel: kernel.clone(),
        }
    }
}

const STACK_DIM: usize = 8;

impl Coefficients for LinearFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_regimes(&self) -> usize {
        self.kappa_g.len()
    }

    fn neutral(&self, seg: &Segment, regime: usize, rho: &DelayIntegrator, out: &mut [f64]) {
        let kg = self.kappa_g[regime];
        if kg == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        rho.integrate(seg, out);
        out.iter_mut().for_each(|v| *v *= kg);
    }

    fn drift_diffusion(&self, seg: &Segment, regime: usize, rho: &DelayIntegrator, drift: &mut [f64], diffusion: &mut [f64]) {
        let d = self.dim;
        let mut stack = [0.0; STACK_DIM];
        let mut heap = Vec::new();
        let integral: &mut [f64] = if d <= STACK_DIM {
            &mut stack[..d]
        } else {
            heap.resize(d, 0.0);
            &mut heap
        };
        rho.integrate(seg, integral);
        let x0 = seg.head_value();
        let (a, b, c, s, g) = (&self.a[regime], &self.b[regime], &self.c[regime], &self.s[regime], self.g[regime]);
        for i in 0..d {
            let mut v = c[i];
            for j in 0..d {
                v += a[i * d + j] * x0[j] + b[i * d + j] * integral[j];
            }
            drift[i] = v;
        }
        diffusion.copy_from_slice(s);
        if g != 0.0 {
            for i in 0..d {
                diffusion[i * d + i] += g * integral[i];
            }
        }
    }

    fn neutral_vanishes(&self, regime: usize) -> bool {
        self.kappa_g[regime] == 0.0
    }
}

/// Coefficients, switching generator, delay kernel and declared constants.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub coefficients: Arc<dyn Coefficients>,
    pub generator: Generator,
    pub constants: DissipativityConstants,
}

impl ModelSpec {
    /// Validates dimensions and `G(0, k) = 0` for every regime.
    pub fn new(coefficients: Arc<dyn Coefficients>, generator: Generator, constants: DissipativityConstants) -> Result<Self> {
        let n = generator.n_states();
        if coefficients.n_regimes() != n {
            return Err(Error::InvalidInput(format!(
                "coefficients define {} regimes but the generator has {n}",
                coefficients.n_regimes()
            )));
        }
        constants.validate(n)?;
        let model = Self { coefficients, generator, constants };
        let d = model.dim();
        let zero = Segment::zeros(model.r(), 1.0, 2, d)?;
        let rho = DelayIntegrator::for_segment(model.kernel(), &zero)?;
        let mut out = vec![0.0; d];
        for k in 0..n {
            model.coefficients.neutral(&zero, k, &rho, &mut out);
            if out.iter().any(|v| *v != 0.0) {
                return Err(Error::InvalidInput(format!("G(0, {k}) must vanish, got {out:?}")));
            }
        }
        Ok(model)
    }

    /// A [`LinearFamily`] model with constants derived from its coefficients.
    pub fn linear(family: LinearFamily, generator: Generator, kernel: DelayKernel, r: f64, p: f64, p0: f64) -> Result<Self> {
        let family = family.normalized()?;
        let constants = family.derived_constants(&kernel, r, p, p0);
        Self::new(Arc::new(family), generator, constants)
    }

    pub fn dim(&self) -> usize {
        self.coefficients.dim()
    }

    pub fn r(&self) -> f64 {
        self.constants.r
    }

    pub fn kernel(&self) -> &DelayKernel {
        &self.constants.kernel
    }

    /// Number of segment nodes for step `h`: the smallest `N·h` whose tail
    /// moment at the worst exponent `p·r - p·α̲` is below `tail_tol` (falling
    /// back to `p·r`, then `r`, when a moment is infinite), at least one cell,
    /// and at least `memory` when given.
    pub fn memory_nodes(&self, h: f64, tail_tol: f64, memory: Option<f64>) -> Result<usize> {
        let c = &self.constants;
        let kernel = self.kernel();
        let exponent = [c.kappa2_exponent(), c.p * c.r, c.r]
            .into_iter()
            .find(|&e| kernel.moment(e).is_ok())
            .ok_or_else(|| Error::InvalidInput(format!("delay kernel has no finite moment at r = {}", c.r)))?;
        let tail = |n: usize| kernel.tail_moment(exponent, n as f64 * h).unwrap_or(f64::INFINITY);
        const MAX_NODES: usize = 1 << 24;
        let mut hi = 1usize;
        while tail(hi) > tail_tol {
            hi *= 2;
            if hi > MAX_NODES {
                return Err(Error::InvalidInput(format!(
                    "memory horizon for tail tolerance {tail_tol} exceeds {MAX_NODES} grid cells"
                )));
            }
        }
        let mut lo = hi / 2;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if tail(mid) > tail_tol {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut cells = hi.max(1);
        if let Some(m) = memory {
            cells = cells.max((m / h).ceil() as usize);
        }
        Ok(cells + 1)
    }

    pub fn grid(&self, cfg: &SimConfig) -> Result<Grid> {
        cfg.validate()?;
        let len = self.memory_nodes(cfg.h, cfg.tail_tol, cfg.memory)?;
        Ok(Grid { r: self.r(), h: cfg.h, len, dim: self.dim() })
    }
}

/// The segment grid every path of a run lives on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub r: f64,
    pub h: f64,
    pub len: usize,
    pub dim: usize,
}

impl Grid {
    pub fn memory(&self) -> f64 {
        self.h * (self.len - 1) as f64
    }

    pub fn integrator(&self, kernel: &DelayKernel) -> Result<DelayIntegrator> {
        DelayIntegrator::new(kernel, self.r, self.h, self.len)
    }
}

/// Initial segment specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `φ ≡ c` on the grid (tail limit consistent with the grid).
    Constant(Vec<f64>),
    /// `φ(θ) = e^{-rθ}·c`, tail limit `c`.
    WeightedConstant(Vec<f64>),
    /// Node values at `θ = 0, -h, …` and a tail limit; missing older nodes
    /// are filled with `e^{-rθ}·tail`.
    Nodes { nodes: Vec<Vec<f64>>, tail: Vec<f64> },
}

impl InitialData {
    pub fn to_segment(&self, grid: &Grid) -> Result<Segment> {
        let check = |v: &[f64]| {
            if v.len() == grid.dim {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("initial value has dimension {}, model has {}", v.len(), grid.dim)))
            }
        };
        match self {
            InitialData::Constant(c) => {
                check(c)?;
                Segment::constant(grid.r, grid.h, grid.len, c)
            }
            InitialData::WeightedConstant(c) => {
                check(c)?;
                Segment::weighted_constant(grid.r, grid.h, grid.len, c)
            }
            InitialData::Nodes { nodes, tail } => {
                check(tail)?;
                if nodes.len() > grid.len {
                    return Err(Error::IncompatibleGrids(format!(
                        "{} initial nodes exceed the {} grid nodes",
                        nodes.len(),
                        grid.len
                    )));
                }
                let mut all = nodes.clone();
                for k in nodes.len()..grid.len {
                    let w = (grid.r * grid.h * k as f64).exp();
                    all.push(tail.iter().map(|l| l * w).collect());
                }
                Segment::from_nodes(grid.r, grid.h, &all, tail.clone())
            }
        }
    }
}

fn default_n_paths() -> usize {
    1000
}
fn default_record_every() -> usize {
    1
}
fn default_tol() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    50
}
fn default_tail_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub h: f64,
    pub horizon: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Record every this many grid steps (plus `t = 0`).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_tol")]
    pub fixed_point_tol: f64,
    #[serde(default = "default_max_iter")]
    pub fixed_point_max_iter: usize,
    /// Lower bound for the stored memory `T_mem`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<f64>,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    /// Keep full segment snapshots at recorded times.
    #[serde(default)]
    pub snapshots: bool,
}

impl SimConfig {
    pub fn new(h: f64, horizon: f64) -> Self {
        Self {
            h,
            horizon,
            n_paths: default_n_paths(),
            seed: 0,
            record_every: 1,
            fixed_point_tol: default_tol(),
            fixed_point_max_iter: default_max_iter(),
            memory: None,
            tail_tol: default_tail_tol(),
            snapshots: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("sim.h = {} must be > 0", self.h));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("sim.horizon = {} must be >= 0", self.horizon));
        }
        let n = (self.horizon / self.h).round();
        if (n * self.h - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return bad(format!("sim.horizon = {} is not a multiple of h = {}", self.horizon, self.h));
        }
        if self.record_every == 0 {
            return bad("sim.record_every must be >= 1".into());
        }
        if !(self.fixed_point_tol > 0.0) || self.fixed_point_max_iter == 0 {
            return bad("fixed-point tolerance and iteration cap must be positive".into());
        }
        if !(self.tail_tol > 0.0) {
            return bad("sim.tail_tol must be > 0".into());
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.h).round() as usize
    }

    /// Step indices at which output is recorded: `0, k, 2k, …` and the last step.
    pub fn record_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut steps: Vec<usize> = (0..=n).step_by(self.record_every).collect();
        if *steps.last().unwrap() != n {
            steps.push(n);
        }
        steps
    }

    pub fn record_times(&self) -> Vec<f64> {
        self.record_steps().into_iter().map(|s| s as f64 * self.h).collect()
    }

    fn is_recorded(&self, step: usize) -> bool {
        step % self.record_every == 0 || step == self.n_steps()
    }
}

/// Solves `x = y + G(seg with head x, k)`, starting from the current head.
///
/// Returns the number of iterations used; the head of `seg` holds the solution.
pub fn neutral_fixed_point(
    coefficients: &dyn Coefficients,
    rho: &DelayIntegrator,
    seg: &mut Segment,
    regime: usize,
    y: &[f64],
    tol: f64,
    max_iter: usize,
    t: f64,
) -> Result<usize> {
    let d = y.len();
    let mut g = vec![0.0; d];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        coefficients.neutral(seg, regime, rho, &mut g);
        let head = seg.node_mut(0);
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for i in 0..d {
            let x = y[i] + g[i];
            diff2 += (x - head[i]).powi(2);
            norm2 += x * x;
            head[i] = x;
        }
        residual = diff2.sqrt();
        if !residual.is_finite() {
            return Err(Error::NonFinite { t });
        }
        if residual <= tol * (1.0 + norm2.sqrt()) {
            return Ok(it);
        }
    }
    Err(Error::FixedPointDiverged { t, iterations: max_iter, residual })
}

/// One integrated process: segment, `Y` and frozen coefficients.
struct Process<'m> {
    model: &'m ModelSpec,
    rho: &'m DelayIntegrator,
    seg: Segment,
    y: Vec<f64>,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    frozen: Option<usize>,
    scratch: Vec<f64>,
    tol: f64,
    max_iter: usize,
    max_iterations_used: usize,
}

impl<'m> Process<'m> {
    fn new(model: &'m ModelSpec, rho: &'m DelayIntegrator, init: &MarkedPoint, cfg: &SimConfig) -> Result<Self> {
        let d = model.dim();
        if init.regime >= model.generator.n_states() {
            return Err(Error::InvalidInput(format!("initial regime {} out of range", init.regime)));
        }
        let mut g = vec![0.0; d];
        model.coefficients.neutral(&init.segment, init.regime, rho, &mut g);
        let y = init.segment.head_value().iter().zip(&g).map(|(x, g)| x - g).collect();
        Ok(Self {
            model,
            rho,
            seg: init.segment.clone(),
            y,
            drift: vec![0.0; d],
            diffusion: vec![0.0; d * d],
            frozen: None,
            scratch: vec![0.0; d],
            tol: cfg.fixed_point_tol,
            max_iter: cfg.fixed_point_max_iter,
            max_iterations_used: 0,
        })
    }

    fn freeze(&mut self, regime: usize) {
        if self.frozen != Some(regime) {
            self.model.coefficients.drift_diffusion(&self.seg, regime, self.rho, &mut self.drift, &mut self.diffusion);
            self.frozen = Some(regime);
        }
    }

    fn advance(&mut self, dt: f64, xi: &[f64]) {
        let d = self.y.len();
        let sq = dt.sqrt();
        for i in 0..d {
            let mut v = self.drift[i] * dt;
            for j in 0..d {
                v += self.diffusion[i * d + j] * sq * xi[j];
            }
            self.y[i] += v;
        }
    }

    fn finish_step(&mut self, regime: usize, t: f64) -> Result<()> {
        self.frozen = None;
        // the previous endpoint is the initial guess for the new one
        self.scratch.copy_from_slice(self.seg.head_value());
        self.seg.push(&self.scratch);
        if self.model.coefficients.neutral_vanishes(regime) {
            self.seg.node_mut(0).copy_from_slice(&self.y);
        } else {
            let it = neutral_fixed_point(
                self.model.coefficients.as_ref(),
                self.rho,
                &mut self.seg,
                regime,
                &self.y,
                self.tol,
                self.max_iter,
                t,
            )?;
            self.max_iterations_used = self.max_iterations_used.max(it);
        }
        if self.seg.head_value().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        Ok(())
    }
}

/// Walks a [`SwitchingPath`] forward in time.
struct Cursor<'a> {
    path: &'a SwitchingPath,
    next: usize,
    state: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a SwitchingPath) -> Self {
        Self { path, next: 0, state: path.start }
    }

    fn next_time(&self) -> f64 {
        self.path.jump_times.get(self.next).copied().unwrap_or(f64::INFINITY)
    }

    /// Applies every jump at times `≤ t`.
    fn advance_to(&mut self, t: f64) {
        while self.next_time() <= t {
            self.state = self.path.states[self.next];
            self.next += 1;
        }
    }
}

fn draw_normals(rng: &mut Stream, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
}

/// What an observer sees at a recorded time.
pub struct Sample<'a> {
    pub step: usize,
    pub t: f64,
    pub segment: &'a Segment,
    pub regime: usize,
    pub y: &'a [f64],
}

/// Streams of path `index`: regime path, then Brownian increments.
fn path_streams(seed: u64, index: u64) -> (Stream, Stream) {
    (stream(seed, index, Purpose::Chain), stream(seed, index, Purpose::Noise))
}

/// Simulates one path, calling `observe` at every recorded time.
///
/// Draws come from the streams `(cfg.seed, index)`, so the result does not
/// depend on which other paths are simulated or in which order.
pub fn simulate_path_with(
    model: &ModelSpec,
    rho: &DelayIntegrator,
    init: &MarkedPoint,
    cfg: &SimConfig,
    index: u64,
    mut observe: impl FnMut(&Sample),
) -> Result<SwitchingPath> {
    let (mut chain_rng, mut noise_rng) = path_streams(cfg.seed, index);
    let switching = sample_chain_hold_jump(&model.generator, init.regime, cfg.horizon, &mut chain_rng);
    let mut proc = Process::new(model, rho, init, cfg)?;
    let mut cur = Cursor::new(&switching);
    let mut xi = vec![0.0; model.dim()];
    let h = cfg.h;
    observe(&Sample { step: 0, t: 0.0, segment: &proc.seg, regime: cur.state, y: &proc.y });
    for n in 0..cfg.n_steps() {
        let t1 = (n + 1) as f64 * h;
        let mut a = n as f64 * h;
        loop {
            let next = cur.next_time();
            let b = next.min(t1);
            if b > a {
                proc.freeze(cur.state);
                draw_normals(&mut noise_rng, &mut xi);
                proc.advance(b - a, &xi);
            }
            if next >= t1 {
                break;
            }
            cur.advance_to(b);
            a = b;
        }
        cur.advance_to(t1);
        proc.finish_step(cur.state, t1)?;
        if cfg.is_recorded(n + 1) {
            observe(&Sample { step: n + 1, t: t1, segment: &proc.seg, regime: cur.state, y: &proc.y });
        }
    }
    Ok(switching)
}

/// Recorded output of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutput {
    pub times: Vec<f64>,
    pub regimes: Vec<usize>,
    /// `X(t)` at recorded times.
    pub x: Vec<Vec<f64>>,
    /// `Y(t) = X(t) - G(X_t, Λ(t))` at recorded times.
    pub y: Vec<Vec<f64>>,
    /// Segment snapshots (only when `SimConfig::snapshots` is set).
    pub snapshots: Vec<Segment>,
    pub switching: SwitchingPath,
}

impl PathOutput {
    fn empty(switching: SwitchingPath) -> Self {
        Self { times: vec![], regimes: vec![], x: vec![], y: vec![], snapshots: vec![], switching }
    }

    fn record(&mut self, s: &Sample, snapshots: bool) {
        self.times.push(s.t);
        self.regimes.push(s.regime);
        self.x.push(s.segment.head_value().to_vec());
        self.y.push(s.y.to_vec());
        if snapshots {
            self.snapshots.push(s.segment.clone());
        }
    }

    /// CSV rows `path_id,t,regime,x0..,y0..`.
    pub fn write_csv_rows<W: std::io::Write>(&self, path_id: u64, out: &mut W) -> std::io::Result<()> {
        for i in 0..self.times.len() {
            write!(out, "{path_id},{},{}", self.times[i], self.regimes[i])?;
            for v in self.x[i].iter().chain(&self.y[i]) {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn csv_header(dim: usize) -> String {
        let xs: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        let ys: Vec<String> = (0..dim).map(|i| format!("y{i}")).collect();
        format!("path_id,t,regime,{},{}", xs.join(","), ys.join(","))
    }
}

/// Builds the initial marked point on the run grid.
pub fn initial_point(grid: &Grid, init: &InitialData, regime: usize) -> Result<MarkedPoint> {
    Ok(MarkedPoint::new(init.to_segment(grid)?, regime))
}

pub fn simulate_path(model: &ModelSpec, init: &MarkedPoint, cfg: &SimConfig, index: u64) -> Result<PathOutput> {
    let rho = DelayIntegrator::for_segment(model.kernel(), &init.segment)?;
    let mut out = PathOutput::empty(SwitchingPath::constant(init.regime, cfg.horizon));
    let sw = simulate_path_with(model, &rho, init, cfg, index, |s| out.record(s, cfg.snapshots))?;
    out.switching = sw;
    Ok(out)
}

/// Output of one coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOutput {
    pub first: PathOutput,
    pub second: PathOutput,
    pub tau: Option<f64>,
    /// `d((X_t, Λ(t)), (X'_t, Λ'(t)))` at recorded times.
    pub distance: Vec<f64>,
}

/// Simulates the coupled pair, calling `observe` with both processes at each
/// recorded time.
///
/// Regimes follow the basic coupling. Before the coupling time the two
/// processes use independent Brownian blocks (`Noise` and `CoupledNoise`
/// streams); from the coupling time on both use the first block.
pub fn simulate_coupled_with(
    model: &ModelSpec,
    coupling: &BasicCoupling,
    rho: &DelayIntegrator,
    init: (&MarkedPoint, &MarkedPoint),
    cfg: &SimConfig,
    index: u64,
    mut observe: impl FnMut(&Sample, &Sample),
) -> Result<crate::chain::CoupledSwitchingPath> {
    let mut chain_rng = stream(cfg.seed, index, Purpose::Chain);
    let mut noise1 = stream(cfg.seed, index, Purpose::Noise);
    let mut noise2 = stream(cfg.seed, index, Purpose::CoupledNoise);
    fn sample<'p>(step: usize, t: f64, p: &'p Process, regime: usize) -> Sample<'p> {
        Sample { step, t, segment: &p.seg, regime, y: &p.y }
    }
    let cp = sample_coupled_chain(coupling, (init.0.regime, init.1.regime), cfg.horizon, &mut chain_rng);
    let tau = cp.coupling_time.unwrap_or(f64::INFINITY);
    let mut p1 = Process::new(model, rho, init.0, cfg)?;
    let mut p2 = Process::new(model, rho, init.1, cfg)?;
    let (mut c1, mut c2) = (Cursor::new(&cp.first), Cursor::new(&cp.second));
    let d = model.dim();
    let (mut xi1, mut xi2) = (vec![0.0; d], vec![0.0; d]);
    let h = cfg.h;
    observe(&sample(0, 0.0, &p1, c1.state), &sample(0, 0.0, &p2, c2.state));
    for n in 0..cfg.n_steps() {
        let t1 = (n + 1) as f64 * h;
        let mut a = n as f64 * h;
        loop {
            let next = c1.next_time().min(c2.next_time());
            let b = next.min(t1);
            if b > a {
                p1.freeze(c1.state);
                p2.freeze(c2.state);
                draw_normals(&mut noise1, &mut xi1);
                if a >= tau {
                    xi2.copy_from_slice(&xi1);
                } else {
                    draw_normals(&mut noise2, &mut xi2);
                }
                p1.advance(b - a, &xi1);
                p2.advance(b - a, &xi2);
            }
            if next >= t1 {
                break;
            }
            c1.advance_to(b);
            c2.advance_to(b);
            a = b;
        }
        c1.advance_to(t1);
        c2.advance_to(t1);
        p1.finish_step(c1.state, t1)?;
        p2.finish_step(c2.state, t1)?;
        if cfg.is_recorded(n + 1) {
            observe(&sample(n + 1, t1, &p1, c1.state), &sample(n + 1, t1, &p2, c2.state));
        }
    }
    Ok(cp)
}

pub fn simulate_coupled(
    model: &ModelSpec,
    init: (&MarkedPoint, &MarkedPoint),
    cfg: &SimConfig,
    index: u64,
) -> Result<CoupledOutput> {
    if !init.0.segment.same_grid(&init.1.segment) {
        return Err(Error::IncompatibleGrids("coupled initial segments".into()));
    }
    let coupling = BasicCoupling::new(&model.generator);
    let rho = DelayIntegrator::for_segment(model.kernel(), &init.0.segment)?;
    let placeholder = SwitchingPath::constant(0, cfg.horizon);
    let mut first = PathOutput::empty(placeholder.clone());
    let mut second = PathOutput::empty(placeholder);
    let mut distance = Vec::new();
    let mut err = None;
    let cp = simulate_coupled_with(model, &coupling, &rho, init, cfg, index, |a, b| {
        first.record(a, cfg.snapshots);
        second.record(b, cfg.snapshots);
        match pair_distance(a, b) {
            Ok(v) => distance.push(v),
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    first.switching = cp.first;
    second.switching = cp.second;
    Ok(CoupledOutput { first, second, tau: cp.coupling_time, distance })
}

/// `d = ‖φ - ψ‖_r + 1_{k≠l}` between two observed states.
pub fn pair_distance(a: &Sample, b: &Sample) -> Result<f64> {
    Ok(a.segment.fading_distance(b.segment)? + if a.regime == b.regime { 0.0 } else { 1.0 })
}

/// Paths per work unit. Work units are merged in index order, which keeps
/// Monte-Carlo sums bit-identical for any number of threads.
pub const CHUNK: usize = 256;

/// Runs `per_path(index, acc)` for every path, accumulating into `n_slots`
/// running moments.
pub fn monte_carlo<F>(n_paths: usize, n_slots: usize, per_path: F) -> Result<Vec<Moments>>
where
    F: Fn(u64, &mut [Moments]) -> Result<()> + Sync,
{
    let n_chunks = n_paths.div_ceil(CHUNK);
    let partial: Vec<Result<Vec<Moments>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Moments::default(); n_slots];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                per_path(i as u64, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![Moments::default(); n_slots];
    for part in partial {
        for (t, p) in total.iter_mut().zip(&part?) {
            t.merge(p);
        }
    }
    Ok(total)
}

/// `E‖X_t‖_r^{p}` at the recorded times, with standard errors.
pub fn moment_curve(model: &ModelSpec, init: &MarkedPoint, cfg: &SimConfig, p_exp: f64) -> Result<Vec<CurvePoint>> {
    let rho = DelayIntegrator::for_segment(model.kernel(), &init.segment)?;
    let times = cfg.record_times();
    let acc = monte_carlo(cfg.n_paths, times.len(), |i, acc| {
        let mut j = 0;
        simulate_path_with(model, &rho, init, cfg, i, |s| {
            acc[j].push(s.segment.fading_norm().powf(p_exp));
            j += 1;
        })?;
        Ok(())
    })?;
    Ok(curve_from_moments(&times, &acc))
}

/// Monte-Carlo summary of coupled runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSummary {
    /// `E[d^p]` at recorded times.
    pub curve: Vec<CurvePoint>,
    /// Coupling time of every path (`None` when not reached within the horizon).
    pub tau: Vec<Option<f64>>,
}

/// Runs `cfg.n_paths` coupled pairs and averages `d^p` at recorded times.
pub fn coupled_curve(model: &ModelSpec, init: (&MarkedPoint, &MarkedPoint), cfg: &SimConfig, p: f64) -> Result<CoupledSummary> {
    if !init.0.segment.same_grid(&init.1.segment) {
        return Err(Error::IncompatibleGrids("coupled initial segments".into()));
    }
    let coupling = BasicCoupling::new(&model.generator);
    let rho = DelayIntegrator::for_segment(model.kernel(), &init.0.segment)?;
    let times = cfg.record_times();
    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let parts: Vec<Result<(Vec<Moments>, Vec<Option<f64>>)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Moments::default(); times.len()];
            let mut taus = Vec::new();
            for i in c * CHUNK..((c + 1) * CHUNK).min(cfg.n_paths) {
                let mut j = 0;
                let mut err = None;
                let cp = simulate_coupled_with(model, &coupling, &rho, init, cfg, i as u64, |a, b| {
                    match pair_distance(a, b) {
                        Ok(dist) => acc[j].push(dist.powf(p)),
                        Err(e) => err = Some(e),
                    }
                    j += 1;
                })?;
                if let Some(e) = err {
                    return Err(e);
                }
                taus.push(cp.coupling_time);
            }
            Ok((acc, taus))
        })
        .collect();
    let mut total = vec![Moments::default(); times.len()];
    let mut tau = Vec::with_capacity(cfg.n_paths);
    for part in parts {
        let (acc, taus) = part?;
        total.iter_mut().zip(&acc).for_each(|(t, a)| t.merge(a));
        tau.extend(taus);
    }
    Ok(CoupledSummary { curve: curve_from_moments(&times, &total), tau })
}
