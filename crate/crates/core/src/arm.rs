//! Per-arm probabilities conditional on the standardised control
//! increments `t`.
//!
//! Given `t`, the statistics of different arms are independent and arm `k`'s
//! statistics are a function of its own standardised mean `W_{k,j}`, whose
//! analyses form a Markov chain with correlations `sqrt(n_i / n_{i'})`. The
//! event `Z_{k,j} < c` becomes `W_{k,j} < c(t)` with the shifted limit
//! computed by [`ArmGeometry::limit`].

use crate::design::{CalibratedDesign, Schedule};
use crate::error::{Error, Result};
use crate::mvn::chain_prefix_cdf;
use crate::quadrature::{gauss_hermite_grid, HermiteRule, QuadratureGrid, PRUNE_WEIGHT};
use serde::{Deserialize, Serialize};

/// Numerical settings shared by the analytic engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Numerics {
    /// Gauss–Hermite nodes per control-increment dimension.
    pub nodes_per_dim: usize,
    /// Absolute tolerance of the inner adaptive integrals.
    pub mvn_tol: f64,
    /// Convergence threshold on shape parameters in boundary calibration.
    pub eps_boundary: f64,
    /// Convergence threshold (patients) in sample-size iteration.
    pub eps_n: f64,
    pub max_iter: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self { nodes_per_dim: 32, mvn_tol: 1e-6, eps_boundary: 1e-5, eps_n: 0.05, max_iter: 50 }
    }
}

impl Numerics {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_dim < 2 {
            return Err(Error::Domain("nodes_per_dim must be at least 2".into()));
        }
        if !(self.mvn_tol > 0.0) || !(self.eps_boundary > 0.0) || !(self.eps_n > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Domain("max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self, dims: usize) -> Result<QuadratureGrid> {
        gauss_hermite_grid(self.nodes_per_dim, dims)
    }
}

/// Schedule-derived constants of one arm.
#[derive(Debug, Clone)]
pub struct ArmGeometry {
    pub add_stage: usize,
    /// Cumulative arm sizes.
    pub n: Vec<f64>,
    /// Concurrent control sizes at each analysis.
    pub delta: Vec<f64>,
    /// `sqrt` of the control increment of each period the arm spans.
    pub sqrt_inc: Vec<f64>,
    inflate: Vec<f64>,
    coef: Vec<f64>,
    drift: Vec<f64>,
    /// Adjacent correlations of the arm's own standardised means.
    pub rho: Vec<f64>,
}

impl ArmGeometry {
    pub fn new(schedule: &Schedule, k: usize, sigma: f64) -> Result<Self> {
        if k >= schedule.n_arms() {
            return Err(Error::Shape(format!("arm index {k} out of range")));
        }
        let s = schedule.add_stage[k];
        let n = schedule.n_active[k].clone();
        let jn = n.len();
        let mut delta = Vec::with_capacity(jn);
        let mut sqrt_inc = Vec::with_capacity(jn);
        for j in 0..jn {
            let d = schedule.concurrent_control(k, j);
            let inc = schedule.control_increment(s + j);
            if !(d > 0.0) || !(inc > 0.0) {
                return Err(Error::Schedule(format!(
                    "arm {} has no concurrent controls at analysis {}",
                    k + 1,
                    j + 1
                )));
            }
            delta.push(d);
            sqrt_inc.push(inc.sqrt());
        }
        let inflate = (0..jn).map(|j| (1.0 + n[j] / delta[j]).sqrt()).collect();
        let coef = (0..jn).map(|j| n[j].sqrt() / delta[j]).collect();
        let drift = (0..jn).map(|j| n[j].sqrt() / sigma).collect();
        let rho = (0..jn.saturating_sub(1)).map(|j| (n[j] / n[j + 1]).sqrt()).collect();
        Ok(Self { add_stage: s, n, delta, sqrt_inc, inflate, coef, drift, rho })
    }

    pub fn stages(&self) -> usize {
        self.n.len()
    }

    /// Shifted limit at analysis `j` for a raw boundary value, effect
    /// `theta` and `partial = sum_{i <= j} t_{s+i} sqrt(delta_{s+i})`.
    #[inline]
    pub fn limit(&self, raw: f64, j: usize, theta: f64, partial: f64) -> f64 {
        if raw.is_infinite() {
            return raw;
        }
        raw * self.inflate[j] + self.coef[j] * partial - theta * self.drift[j]
    }

    /// Partial sums of the control terms entering analyses `0..stages`,
    /// taken from the full control vector `t`.
    pub fn partials(&self, t: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        (0..self.stages())
            .map(|j| {
                acc += t[self.add_stage + j] * self.sqrt_inc[j];
                acc
            })
            .collect()
    }
}

/// Shifted lower and upper limits of one arm at one analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedLimits {
    pub arm: usize,
    pub analysis: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Limits on the arm-mean scale equivalent to `l_{k,j} < Z_{k,j} < u_{k,j}`
/// for effect `theta_k` and control increments `t` (indexed by control
/// period, at least `s(k) + j + 1` entries).
pub fn shifted_limits(
    design: &CalibratedDesign,
    k: usize,
    j: usize,
    theta_k: f64,
    t: &[f64],
) -> Result<ShiftedLimits> {
    let g = ArmGeometry::new(&design.schedule, k, design.spec.sigma)?;
    if j >= g.stages() {
        return Err(Error::Shape(format!("arm {} has no analysis {}", k + 1, j + 1)));
    }
    if t.len() < g.add_stage + j + 1 {
        return Err(Error::Shape(format!("need {} control increments, got {}", g.add_stage + j + 1, t.len())));
    }
    let partial: f64 = (0..=j).map(|i| t[g.add_stage + i] * g.sqrt_inc[i]).sum();
    Ok(ShiftedLimits {
        arm: k,
        analysis: j,
        lower: g.limit(design.boundaries.lower[k][j], j, theta_k, partial),
        upper: g.limit(design.boundaries.upper[k][j], j, theta_k, partial),
    })
}

/// For each analysis `j` of one arm, dense tables over the Gauss–Hermite
/// nodes of control periods `s+0..=s+j` holding
/// `fut[j] = P(continue through j-1, W_j < l_j(t))` and
/// `cont[j] = P(continue through j)`. Entries whose product weight is
/// below [`PRUNE_WEIGHT`] are left as NaN and never read by the pruned
/// grid visitors.
#[derive(Debug, Clone)]
pub struct ArmTables {
    pub add_stage: usize,
    m: usize,
    fut: Vec<Vec<f64>>,
    cont: Vec<Vec<f64>>,
}

impl ArmTables {
    pub fn build(
        geom: &ArmGeometry,
        lower: &[f64],
        upper: &[f64],
        theta: f64,
        rule: &HermiteRule,
        tol: f64,
    ) -> Self {
        let jn = geom.stages();
        let m = rule.len();
        let mut fut: Vec<Vec<f64>> = (0..jn).map(|j| vec![f64::NAN; m.pow(j as u32 + 1)]).collect();
        let mut cont = fut.clone();
        let mut lo = vec![0.0; jn];
        let mut hi = vec![0.0; jn];
        let mut ctx = BuildCtx {
            geom,
            lower,
            upper,
            theta,
            rule,
            tol,
            lo: &mut lo,
            hi: &mut hi,
            fut: &mut fut,
            cont: &mut cont,
        };
        ctx.descend(0, 0, 1.0, 0.0, true);
        Self { add_stage: geom.add_stage, m, fut, cont }
    }

    pub fn stages(&self) -> usize {
        self.fut.len()
    }

    /// Flat index of analysis `j` for full control-grid indices `idx`.
    #[inline]
    pub fn index(&self, j: usize, idx: &[usize]) -> usize {
        let mut flat = 0;
        for &i in &idx[self.add_stage..=self.add_stage + j] {
            flat = flat * self.m + i;
        }
        flat
    }

    #[inline]
    pub fn fut(&self, j: usize, idx: &[usize]) -> f64 {
        self.fut[j][self.index(j, idx)]
    }

    #[inline]
    pub fn cont(&self, j: usize, idx: &[usize]) -> f64 {
        self.cont[j][self.index(j, idx)]
    }

    /// `P(continue through j-1, W_j > u_j(t))`.
    #[inline]
    pub fn eff(&self, j: usize, idx: &[usize]) -> f64 {
        let before = if j == 0 { 1.0 } else { self.cont(j - 1, idx) };
        (before - self.fut(j, idx) - self.cont(j, idx)).max(0.0)
    }

    /// Probability of stopping for futility by analysis `j` inclusive.
    pub fn futile_by(&self, j: usize, idx: &[usize]) -> f64 {
        (0..=j).map(|i| self.fut(i, idx)).sum()
    }

    /// Probability of not rejecting the null across all analyses.
    pub fn not_rejected(&self, idx: &[usize]) -> f64 {
        self.futile_by(self.stages() - 1, idx)
    }
}

struct BuildCtx<'a> {
    geom: &'a ArmGeometry,
    lower: &'a [f64],
    upper: &'a [f64],
    theta: f64,
    rule: &'a HermiteRule,
    tol: f64,
    lo: &'a mut Vec<f64>,
    hi: &'a mut Vec<f64>,
    fut: &'a mut Vec<Vec<f64>>,
    cont: &'a mut Vec<Vec<f64>>,
}

impl BuildCtx<'_> {
    fn descend(&mut self, j: usize, flat: usize, weight: f64, partial: f64, alive: bool) {
        let jn = self.geom.stages();
        for i in 0..self.rule.len() {
            let w = weight * self.rule.weights[i];
            if w < PRUNE_WEIGHT {
                continue;
            }
            let p = partial + self.rule.nodes[i] * self.geom.sqrt_inc[j];
            let l = self.geom.limit(self.lower[j], j, self.theta, p);
            let u = self.geom.limit(self.upper[j], j, self.theta, p);
            let idx = flat * self.rule.len() + i;
            let (f, c) = if alive {
                let v = chain_prefix_cdf(&self.geom.rho[..j], &self.lo[..j], &self.hi[..j], [l, u], self.tol);
                let c = if j + 1 == jn { 0.0 } else { (v[1] - v[0]).max(0.0) };
                (v[0], c)
            } else {
                (0.0, 0.0)
            };
            self.fut[j][idx] = f;
            self.cont[j][idx] = c;
            if j + 1 < jn {
                self.lo[j] = l;
                self.hi[j] = u;
                self.descend(j + 1, idx, w, p, c > 0.0);
            }
        }
    }
}

/// Weighted sum of `f(indices, point)` over the pruned tensor grid of
/// `dims` dimensions, in grid order.
pub fn grid_sum<F>(rule: &HermiteRule, dims: usize, mut f: F) -> f64
where
    F: FnMut(&[usize], &[f64]) -> f64,
{
    let grid = QuadratureGrid::from_rule(rule.clone(), dims);
    let mut total = 0.0;
    grid.visit(PRUNE_WEIGHT, |idx, x, w| total += w * f(idx, x));
    total
}

/// Calls `f(indices, weight)` at every node of the pruned tensor grid of
/// `dims` dimensions, in grid order.
pub fn grid_visit<F>(rule: &HermiteRule, dims: usize, mut f: F)
where
    F: FnMut(&[usize], f64),
{
    let grid = QuadratureGrid::from_rule(rule.clone(), dims);
    grid.visit(PRUNE_WEIGHT, |idx, _, w| f(idx, w));
}

/// Tables of every arm of a design under effects `theta`.
pub fn design_tables(design: &CalibratedDesign, theta: &[f64], rule: &HermiteRule, tol: f64) -> Result<Vec<ArmTables>> {
    (0..design.n_arms())
        .map(|k| {
            let g = ArmGeometry::new(&design.schedule, k, design.spec.sigma)?;
            Ok(ArmTables::build(
                &g,
                &design.boundaries.lower[k],
                &design.boundaries.upper[k],
                theta[k],
                rule,
                tol,
            ))
        })
        .collect()
}
