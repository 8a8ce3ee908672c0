//! Discretized elements of the fading-memory space `C_r`.
//!
//! A [`Segment`] stores node values at `θ = 0, -h, …, -T_mem` and a tail
//! limit `L`. The represented function is the piecewise-linear interpolant on
//! the grid and `e^{-rθ}·L` beyond `-T_mem`, so `e^{rθ}φ(θ) → L` exactly.
//!
//! Nodes live in a ring buffer: [`Segment::push`] advances the segment by one
//! grid step in `O(d)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::kernel::{DelayKernel, Quadrature};

#[derive(Debug, Clone)]
pub struct Segment {
    r: f64,
    h: f64,
    dim: usize,
    len: usize,
    head: usize,
    buf: Vec<f64>,
    tail: Vec<f64>,
}

impl Segment {
    /// `nodes[k]` is the value at `θ = -k·h`.
    pub fn from_nodes(r: f64, h: f64, nodes: &[Vec<f64>], tail_limit: Vec<f64>) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) || !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("segment needs r > 0 and h > 0 (got r={r}, h={h})")));
        }
        if nodes.len() < 2 {
            return Err(Error::InvalidInput("segment needs at least two nodes".into()));
        }
        let dim = tail_limit.len();
        if dim == 0 || nodes.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidInput("segment node dimensions disagree".into()));
        }
        let buf: Vec<f64> = nodes.iter().flatten().copied().collect();
        if buf.iter().chain(&tail_limit).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("segment values must be finite".into()));
        }
        Ok(Self { r, h, dim, len: nodes.len(), head: 0, buf, tail: tail_limit })
    }

    pub fn zeros(r: f64, h: f64, len: usize, dim: usize) -> Result<Self> {
        Self::from_nodes(r, h, &vec![vec![0.0; dim]; len], vec![0.0; dim])
    }

    /// Constant nodes with the tail limit the blend rule of [`push`](Self::push)
    /// would produce, so pushing `value` leaves the segment unchanged.
    pub fn constant(r: f64, h: f64, len: usize, value: &[f64]) -> Result<Self> {
        let w = (-r * h * len as f64).exp();
        Self::from_nodes(r, h, &vec![value.to_vec(); len], value.iter().map(|v| v * w).collect())
    }

    /// `φ(θ) = e^{-rθ}·c`, tail limit `c`.
    pub fn weighted_constant(r: f64, h: f64, len: usize, value: &[f64]) -> Result<Self> {
        let nodes: Vec<Vec<f64>> = (0..len)
            .map(|k| {
                let w = (r * h * k as f64).exp();
                value.iter().map(|v| v * w).collect()
            })
            .collect();
        Self::from_nodes(r, h, &nodes, value.to_vec())
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `T_mem = h·(len - 1)`.
    pub fn memory(&self) -> f64 {
        self.h * (self.len - 1) as f64
    }

    pub fn tail_limit(&self) -> &[f64] {
        &self.tail
    }

    pub fn set_tail_limit(&mut self, tail: &[f64]) {
        self.tail.copy_from_slice(tail);
    }

    #[inline]
    fn slot(&self, k: usize) -> usize {
        let s = self.head + k;
        if s >= self.len {
            s - self.len
        } else {
            s
        }
    }

    /// Value at `θ = -k·h`.
    #[inline]
    pub fn node(&self, k: usize) -> &[f64] {
        let s = self.slot(k) * self.dim;
        &self.buf[s..s + self.dim]
    }

    #[inline]
    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.slot(k) * self.dim;
        &mut self.buf[s..s + self.dim]
    }

    /// The value at `θ = 0`.
    pub fn head_value(&self) -> &[f64] {
        self.node(0)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len).map(move |k| self.node(k))
    }

    pub fn same_grid(&self, other: &Segment) -> bool {
        self.r == other.r && self.h == other.h && self.len == other.len && self.dim == other.dim
    }

    fn check_grid(&self, other: &Segment) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::IncompatibleGrids(format!(
                "(r={}, h={}, len={}, d={}) vs (r={}, h={}, len={}, d={})",
                self.r, self.h, self.len, self.dim, other.r, other.h, other.len, other.dim
            )))
        }
    }

    /// Advance by one grid step: `value` becomes the node at `θ = 0`, the
    /// oldest node drops out and sets `L ← e^{r·θ_drop}·x_drop` with
    /// `θ_drop = -T_mem - h`.
    pub fn push(&mut self, value: &[f64]) {
        debug_assert_eq!(value.len(), self.dim);
        let w = (-self.r * self.h * self.len as f64).exp();
        self.head = if self.head == 0 { self.len - 1 } else { self.head - 1 };
        let s = self.head * self.dim;
        for i in 0..self.dim {
            self.tail[i] = w * self.buf[s + i];
            self.buf[s + i] = value[i];
        }
    }

    pub fn shift_append(&self, value: &[f64]) -> Segment {
        let mut s = self.clone();
        s.push(value);
        s
    }

    pub fn scaled(&self, alpha: f64) -> Segment {
        let mut s = self.clone();
        s.buf.iter_mut().chain(s.tail.iter_mut()).for_each(|v| *v *= alpha);
        s
    }

    /// Pointwise `self + alpha·other`.
    pub fn axpy(&self, alpha: f64, other: &Segment) -> Result<Segment> {
        self.check_grid(other)?;
        let mut out = self.clone();
        for k in 0..self.len {
            let src = other.node(k).to_vec();
            out.node_mut(k).iter_mut().zip(src).for_each(|(a, b)| *a += alpha * b);
        }
        out.tail.iter_mut().zip(&other.tail).for_each(|(a, b)| *a += alpha * b);
        Ok(out)
    }

    pub fn difference(&self, other: &Segment) -> Result<Segment> {
        self.axpy(-1.0, other)
    }

    /// `‖φ‖_r = sup_{θ≤0} e^{rθ}|φ(θ)|`, exact for the represented function.
    pub fn fading_norm(&self) -> f64 {
        fading_norm_of(self.r, self.h, self.len, self.dim, |k| self.node(k), &self.tail)
    }

    /// `‖self - other‖_r` without allocating the difference.
    pub fn fading_distance(&self, other: &Segment) -> Result<f64> {
        self.check_grid(other)?;
        let d = self.dim;
        let mut scratch = vec![0.0; 2 * d];
        let tail: Vec<f64> = self.tail.iter().zip(&other.tail).map(|(a, b)| a - b).collect();
        let mut best = norm(&tail);
        let mut prev_w = 1.0;
        let decay = (-self.r * self.h).exp();
        for k in 0..self.len {
            let (cur, rest) = scratch.split_at_mut(d);
            for i in 0..d {
                cur[i] = self.node(k)[i] - other.node(k)[i];
            }
            best = best.max(prev_w * norm(cur));
            if k + 1 < self.len {
                for i in 0..d {
                    rest[i] = self.node(k + 1)[i] - other.node(k + 1)[i];
                }
                best = best.max(cell_sup(self.r, self.h, prev_w * decay, rest, cur));
            }
            prev_w *= decay;
        }
        Ok(best)
    }

    /// Writes `theta,v0,v1,...` rows, newest node first, then a `-inf` row
    /// carrying the tail limit.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let cols: Vec<String> = (0..self.dim).map(|i| format!("v{i}")).collect();
        writeln!(out, "theta,{}", cols.join(","))?;
        for k in 0..self.len {
            let vals: Vec<String> = self.node(k).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{:e},{}", -(k as f64) * self.h, vals.join(","))?;
        }
        let vals: Vec<String> = self.tail.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "-inf,{}", vals.join(","))
    }
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.same_grid(other) && self.tail == other.tail && self.nodes().eq(other.nodes())
    }
}

#[inline]
fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn fading_norm_of<'a>(
    r: f64,
    h: f64,
    len: usize,
    dim: usize,
    node: impl Fn(usize) -> &'a [f64],
    tail: &[f64],
) -> f64 {
    debug_assert_eq!(tail.len(), dim);
    let decay = (-r * h).exp();
    let mut best = norm(tail);
    let mut w = 1.0;
    for k in 0..len {
        best = best.max(w * norm(node(k)));
        if k + 1 < len {
            best = best.max(cell_sup(r, h, w * decay, node(k + 1), node(k)));
        }
        w *= decay;
    }
    best
}

/// Interior maximum of `e^{r(θ_L+s)}|a + b s|` over a cell, `s ∈ (0, h)`,
/// where `a` is the older (left) node value, `b = (newer - older)/h` and
/// `w_left = e^{rθ_L}`. Endpoints are handled by the caller.
fn cell_sup(r: f64, h: f64, w_left: f64, older: &[f64], newer: &[f64]) -> f64 {
    let mut aa = 0.0;
    let mut ab = 0.0;
    let mut bb = 0.0;
    for (a, n) in older.iter().zip(newer) {
        let b = (n - a) / h;
        aa += a * a;
        ab += a * b;
        bb += b * b;
    }
    if bb == 0.0 {
        return 0.0;
    }
    // d/ds [e^{2rs}|a+bs|²] = 0  ⇔  r·bb·s² + (2r·ab + bb)·s + (r·aa + ab) = 0
    let qa = r * bb;
    let qb = 2.0 * r * ab + bb;
    let qc = r * aa + ab;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return 0.0;
    }
    let sq = disc.sqrt();
    let mut best: f64 = 0.0;
    for s in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
        if s > 0.0 && s < h {
            let v2 = aa + 2.0 * ab * s + bb * s * s;
            best = best.max(w_left * (r * s).exp() * v2.max(0.0).sqrt());
        }
    }
    best
}

/// A point of `E = C_r × S`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPoint {
    pub segment: Segment,
    pub regime: usize,
}

impl MarkedPoint {
    pub fn new(segment: Segment, regime: usize) -> Self {
        Self { segment, regime }
    }
}

/// `d((φ,k),(ψ,l)) = ‖φ - ψ‖_r + 1_{k≠l}`.
pub fn metric_d(a: &MarkedPoint, b: &MarkedPoint) -> Result<f64> {
    let dist = a.segment.fading_distance(&b.segment)?;
    Ok(dist + if a.regime == b.regime { 0.0 } else { 1.0 })
}

/// Evaluates `ρ`-integrals of segments on a fixed grid: node weights from
/// [`DelayKernel::quadrature`] plus the analytic contribution of the tail
/// `e^{-rθ}·L` beyond `-T_mem`.
#[derive(Debug, Clone)]
pub struct DelayIntegrator {
    kernel: DelayKernel,
    quad: Quadrature,
    r: f64,
    len: usize,
    /// `∫_{(-∞,-T_mem)} e^{-rθ} ρ(dθ)`.
    tail_r: f64,
}

impl DelayIntegrator {
    pub fn new(kernel: &DelayKernel, r: f64, h: f64, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidInput("delay integrator needs at least two nodes".into()));
        }
        let memory = h * (len - 1) as f64;
        let quad = kernel.quadrature(h, memory)?;
        let tail_r = kernel.tail_moment(r, quad.horizon()).unwrap_or(f64::INFINITY);
        Ok(Self { kernel: kernel.clone(), quad, r, len, tail_r })
    }

    pub fn for_segment(kernel: &DelayKernel, seg: &Segment) -> Result<Self> {
        Self::new(kernel, seg.r(), seg.h(), seg.len())
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    pub fn kernel(&self) -> &DelayKernel {
        &self.kernel
    }

    pub fn endpoint_weight(&self) -> f64 {
        self.quad.endpoint_weight()
    }

    fn check(&self, seg: &Segment) {
        debug_assert!(seg.len() == self.len && seg.h() == self.quad.h, "segment grid differs from integrator grid");
    }

    /// `∫ φ(θ) ρ(dθ)` into `out`.
    pub fn integrate(&self, seg: &Segment, out: &mut [f64]) {
        self.check(seg);
        out.iter_mut().for_each(|v| *v = 0.0);
        for n in &self.quad.nodes {
            let v = seg.node((-n.index) as usize);
            out.iter_mut().zip(v).for_each(|(o, x)| *o += n.weight * x);
        }
        if seg.tail_limit().iter().any(|l| *l != 0.0) {
            out.iter_mut().zip(seg.tail_limit()).for_each(|(o, l)| *o += self.tail_r * l);
        }
    }

    /// `∫ φ(θ) ρ(dθ)` with the node at `θ = 0` left out.
    pub fn integrate_without_head(&self, seg: &Segment, out: &mut [f64]) {
        self.integrate(seg, out);
        let w0 = self.endpoint_weight();
        if w0 != 0.0 {
            out.iter_mut().zip(seg.head_value()).for_each(|(o, x)| *o -= w0 * x);
        }
    }

    /// `∫ |φ(θ) - ψ(θ)|^q ρ(dθ)` (pass `other = None` for `ψ ≡ 0`).
    pub fn integrate_abs_pow(&self, seg: &Segment, other: Option<&Segment>, q: f64) -> f64 {
        self.check(seg);
        let d = seg.dim();
        let diff_norm = |a: &[f64], b: Option<&[f64]>| -> f64 {
            match b {
                Some(b) => (0..d).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt(),
                None => norm(a),
            }
        };
        let mut acc = 0.0;
        for n in &self.quad.nodes {
            let k = (-n.index) as usize;
            acc += n.weight * diff_norm(seg.node(k), other.map(|o| o.node(k))).powf(q);
        }
        let l = diff_norm(seg.tail_limit(), other.map(|o| o.tail_limit()));
        if l > 0.0 {
            let t = self.kernel.tail_moment(q * self.r, self.quad.horizon()).unwrap_or(f64::INFINITY);
            acc += t * l.powf(q);
        }
        acc
    }
}
