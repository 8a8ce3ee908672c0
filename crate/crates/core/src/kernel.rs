//! Delay distributions on the non-positive half line.
//!
//! A [`DelayKernel`] is a finite mixture of Dirac atoms and exponential
//! densities `u·c·e^{cθ}` on `θ ≤ 0`. Mixtures of this kind have closed-form
//! exponential moments
//!
//! ```text
//! δ_c(ρ) = ∫ e^{-cθ} ρ(dθ) = Σ w_j e^{-c θ_j} + Σ u_i c_i / (c_i - c)
//! ```
//!
//! which is what every contraction constant in the crate is built from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Location in time units, `θ ≤ 0`.
    pub theta: f64,
    pub weight: f64,
}

/// Density `weight · rate · e^{rate·θ}` on `θ ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpComponent {
    pub rate: f64,
    pub weight: f64,
}

/// Wire format: `{"atoms": [[theta, w], ...], "exp": [[rate, w], ...]}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct KernelSpec {
    #[serde(default)]
    atoms: Vec<(f64, f64)>,
    #[serde(default)]
    exp: Vec<(f64, f64)>,
}

/// A probability measure on `(-∞, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub struct DelayKernel {
    atoms: Vec<Atom>,
    exp: Vec<ExpComponent>,
}

impl TryFrom<KernelSpec> for DelayKernel {
    type Error = Error;

    fn try_from(spec: KernelSpec) -> Result<Self> {
        DelayKernel::new(
            spec.atoms.into_iter().map(|(theta, weight)| Atom { theta, weight }).collect(),
            spec.exp.into_iter().map(|(rate, weight)| ExpComponent { rate, weight }).collect(),
        )
    }
}

impl From<DelayKernel> for KernelSpec {
    fn from(k: DelayKernel) -> Self {
        KernelSpec {
            atoms: k.atoms.iter().map(|a| (a.theta, a.weight)).collect(),
            exp: k.exp.iter().map(|e| (e.rate, e.weight)).collect(),
        }
    }
}

impl DelayKernel {
    pub fn new(atoms: Vec<Atom>, exp: Vec<ExpComponent>) -> Result<Self> {
        if atoms.is_empty() && exp.is_empty() {
            return Err(Error::InvalidKernel("kernel has no components".into()));
        }
        for a in &atoms {
            if !(a.theta <= 0.0 && a.theta.is_finite()) {
                return Err(Error::InvalidKernel(format!("atom location {} must be <= 0", a.theta)));
            }
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::InvalidKernel(format!("atom weight {} must be > 0", a.weight)));
            }
        }
        for e in &exp {
            if !(e.rate > 0.0 && e.rate.is_finite()) {
                return Err(Error::InvalidKernel(format!("exponential rate {} must be > 0", e.rate)));
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::InvalidKernel(format!("exponential weight {} must be > 0", e.weight)));
            }
        }
        let mass: f64 = atoms.iter().map(|a| a.weight).sum::<f64>() + exp.iter().map(|e| e.weight).sum::<f64>();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidKernel(format!("total mass {mass} differs from 1")));
        }
        Ok(Self { atoms, exp })
    }

    pub fn dirac(theta: f64) -> Result<Self> {
        Self::new(vec![Atom { theta, weight: 1.0 }], vec![])
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(vec![], vec![ExpComponent { rate, weight: 1.0 }])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn exp_components(&self) -> &[ExpComponent] {
        &self.exp
    }

    /// Smallest exponential rate, i.e. the supremum of exponents with a finite moment.
    pub fn moment_abscissa(&self) -> f64 {
        self.exp.iter().map(|e| e.rate).fold(f64::INFINITY, f64::min)
    }

    fn check_finite(&self, c: f64) -> Result<()> {
        match self.exp.iter().find(|e| c >= e.rate) {
            Some(e) => Err(Error::InfiniteMoment { c, rate: e.rate }),
            None => Ok(()),
        }
    }

    /// `δ_c(ρ) = ∫ e^{-cθ} ρ(dθ)`.
    pub fn moment(&self, c: f64) -> Result<f64> {
        self.check_finite(c)?;
        let atoms: f64 = self.atoms.iter().map(|a| a.weight * (-c * a.theta).exp()).sum();
        let dens: f64 = self.exp.iter().map(|e| e.weight * e.rate / (e.rate - c)).sum();
        Ok(atoms + dens)
    }

    /// `∫_{(-∞,-T)} e^{-cθ} ρ(dθ)`; nonincreasing in `T`, equal to [`moment`](Self::moment) at `T = 0`.
    pub fn tail_moment(&self, c: f64, horizon: f64) -> Result<f64> {
        if !(horizon >= 0.0) {
            return Err(Error::InvalidInput(format!("tail horizon {horizon} must be >= 0")));
        }
        self.check_finite(c)?;
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| a.theta < -horizon || (horizon == 0.0 && a.theta <= 0.0))
            .map(|a| a.weight * (-c * a.theta).exp())
            .sum();
        let dens: f64 = self
            .exp
            .iter()
            .map(|e| e.weight * e.rate / (e.rate - c) * (-(e.rate - c) * horizon).exp())
            .sum();
        Ok(atoms + dens)
    }

    /// `ρ((-∞, -T))`.
    pub fn tail_mass(&self, horizon: f64) -> f64 {
        let atoms: f64 = self.atoms.iter().filter(|a| a.theta < -horizon).map(|a| a.weight).sum();
        let dens: f64 = self.exp.iter().map(|e| e.weight * (-e.rate * horizon).exp()).sum();
        atoms + dens
    }

    /// Node weights on the grid `θ_k = -k·h`, `k = 0..=N`, with `N = round(T/h)`.
    ///
    /// Atoms inside `[-N·h, 0]` are moved to the nearest node. Exponential
    /// parts are integrated exactly against the piecewise-linear interpolant
    /// of the node values, so the weights of a component sum to its mass on
    /// `[-N·h, 0]`.
    pub fn quadrature(&self, h: f64, horizon: f64) -> Result<Quadrature> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("grid step {h} must be > 0")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!("quadrature horizon {horizon} must be > 0")));
        }
        let n = (horizon / h).round().max(1.0) as usize;
        let t_eff = n as f64 * h;
        let mut weights = vec![0.0; n + 1];
        let mut snaps = Vec::new();
        for a in &self.atoms {
            if a.theta < -t_eff {
                continue;
            }
            let k = ((-a.theta / h).round() as usize).min(n);
            weights[k] += a.weight;
            snaps.push(AtomSnap { theta: a.theta, index: -(k as i64), distance: (a.theta + k as f64 * h).abs() });
        }
        for e in &self.exp {
            let x = e.rate * h;
            let (older, newer) = cell_split(x);
            for k in 0..n {
                // cell [θ_{k+1}, θ_k]; scale = u·e^{c·θ_{k+1}}
                let scale = e.weight * (-e.rate * (k + 1) as f64 * h).exp();
                weights[k] += scale * newer;
                weights[k + 1] += scale * older;
            }
        }
        let nodes = weights
            .into_iter()
            .enumerate()
            .filter(|(_, w)| *w > 0.0)
            .map(|(k, weight)| QuadNode { index: -(k as i64), weight })
            .collect();
        Ok(Quadrature { h, nodes, snaps, n_cells: n, truncated_mass: self.tail_mass(t_eff) })
    }
}

/// Split of `∫_0^h e^{cs} ds · c` (scaled by `e^{-ch}`) between the older
/// (left) and newer (right) node of a cell, for `x = c·h`.
fn cell_split(x: f64) -> (f64, f64) {
    if x < 1e-3 {
        let x2 = x * x;
        let older = x / 2.0 + x2 / 6.0 + x2 * x / 24.0 + x2 * x2 / 120.0;
        let newer = x / 2.0 + x2 / 3.0 + x2 * x / 8.0 + x2 * x2 / 30.0;
        (older, newer)
    } else {
        let em1 = x.exp_m1() / x;
        (em1 - 1.0, x.exp() - em1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadNode {
    /// Grid index, `≤ 0`; the node sits at `θ = index·h`.
    pub index: i64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomSnap {
    pub theta: f64,
    pub index: i64,
    /// `|θ - index·h|`.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub h: f64,
    pub nodes: Vec<QuadNode>,
    pub snaps: Vec<AtomSnap>,
    pub n_cells: usize,
    /// `ρ((-∞, -N·h))`, the mass left to the analytic tail.
    pub truncated_mass: f64,
}

impl Quadrature {
    pub fn horizon(&self) -> f64 {
        self.n_cells as f64 * self.h
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    pub fn max_snap_distance(&self) -> f64 {
        self.snaps.iter().map(|s| s.distance).fold(0.0, f64::max)
    }

    /// Weight at `θ = 0`.
    pub fn endpoint_weight(&self) -> f64 {
        self.nodes.iter().find(|n| n.index == 0).map_or(0.0, |n| n.weight)
    }
}
