//! Gauss–Hermite tensor grids against the standard normal weight and an
//! adaptive Gauss–Kronrod rule for finite intervals.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Largest number of tensor points a grid may hold.
pub const DEFAULT_GRID_BUDGET: usize = 1 << 26;

/// Product weights below this are dropped by the pruned iterators. With at
/// most `DEFAULT_GRID_BUDGET` points and integrands bounded by one, the
/// discarded mass stays below 1e-7 even in the worst case and is far smaller
/// for the grids used in practice.
pub const PRUNE_WEIGHT: f64 = 1e-15;

/// One-dimensional Gauss–Hermite rule normalised to the standard normal
/// density (probabilists' convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!(
                "Gauss-Hermite rule needs at least 2 nodes, got {n}"
            )));
        }
        let (x, w) = physicists_rule(n);
        let scale = std::f64::consts::PI.sqrt();
        Ok(Self {
            nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v / scale).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Nodes and weights for the weight `exp(-x^2)` by Newton iteration on the
/// orthonormal Hermite recurrence. Nodes are returned in increasing order.
fn physicists_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Tensor-product Gauss–Hermite grid. Points are enumerated in
/// lexicographic order with the last dimension varying fastest; that order
/// is also the summation order of every integral over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    rule: HermiteRule,
    dims: usize,
}

impl QuadratureGrid {
    pub fn nodes_per_dim(&self) -> usize {
        self.rule.len()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn rule(&self) -> &HermiteRule {
        &self.rule
    }

    pub fn len(&self) -> usize {
        self.rule.len().pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.dims == 0
    }

    pub fn from_rule(rule: HermiteRule, dims: usize) -> Self {
        Self { rule, dims }
    }

    /// Same rule over a different number of dimensions.
    pub fn with_dims(&self, dims: usize) -> Self {
        Self { rule: self.rule.clone(), dims }
    }

    /// Visits every point whose product weight is at least `min_weight`, in
    /// grid order, handing over the node indices, the point and its weight.
    /// Subtrees are skipped as soon as the partial weight falls below the
    /// threshold, since the remaining factors are all below one.
    pub fn visit<F>(&self, min_weight: f64, mut f: F)
    where
        F: FnMut(&[usize], &[f64], f64),
    {
        let mut idx = vec![0usize; self.dims];
        let mut point = vec![0.0; self.dims];
        if self.dims == 0 {
            f(&idx, &point, 1.0);
            return;
        }
        self.visit_level(0, 1.0, min_weight, &mut idx, &mut point, &mut f);
    }

    fn visit_level<F>(
        &self,
        level: usize,
        weight: f64,
        min_weight: f64,
        idx: &mut Vec<usize>,
        point: &mut Vec<f64>,
        f: &mut F,
    ) where
        F: FnMut(&[usize], &[f64], f64),
    {
        for (i, (&x, &w)) in self.rule.nodes.iter().zip(&self.rule.weights).enumerate() {
            let wp = weight * w;
            if wp < min_weight {
                continue;
            }
            idx[level] = i;
            point[level] = x;
            if level + 1 == self.dims {
                f(idx, point, wp);
            } else {
                self.visit_level(level + 1, wp, min_weight, idx, point, f);
            }
        }
    }
}

/// Builds a probabilist-normalised tensor Gauss–Hermite grid.
pub fn gauss_hermite_grid(nodes_per_dim: usize, dims: usize) -> Result<QuadratureGrid> {
    gauss_hermite_grid_with_budget(nodes_per_dim, dims, DEFAULT_GRID_BUDGET)
}

pub fn gauss_hermite_grid_with_budget(
    nodes_per_dim: usize,
    dims: usize,
    budget: usize,
) -> Result<QuadratureGrid> {
    if dims == 0 {
        return Err(Error::Domain("quadrature grid needs at least one dimension".into()));
    }
    let rule = HermiteRule::new(nodes_per_dim)?;
    let size = (nodes_per_dim as f64).powi(dims as i32);
    if size > budget as f64 {
        return Err(Error::Capacity { requested: size, budget });
    }
    Ok(QuadratureGrid { rule, dims })
}

/// Weighted sum of `integrand` over every grid point, in grid order.
pub fn integrate_over_grid<F>(grid: &QuadratureGrid, integrand: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut total = 0.0;
    let mut bad: Option<(Vec<f64>, f64)> = None;
    grid.visit(0.0, |_, point, w| {
        if bad.is_some() {
            return;
        }
        let v = integrand(point);
        if !v.is_finite() {
            bad = Some((point.to_vec(), v));
            return;
        }
        total += w * v;
    });
    match bad {
        Some((point, value)) => Err(Error::NonFinite { point, value }),
        None => Ok(total),
    }
}

// Gauss–Kronrod 7/15 abscissae and weights (QUADPACK qk15).
const XGK15: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK15: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG7: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss–Kronrod 15 panel for a vector-valued integrand; returns the
/// Kronrod estimate and the largest Kronrod/Gauss discrepancy.
fn gk15_panel<const N: usize, F>(f: &mut F, a: f64, b: f64) -> ([f64; N], f64)
where
    F: FnMut(f64) -> [f64; N],
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = [0.0; N];
    let mut g = [0.0; N];
    for i in 0..N {
        k[i] = WGK15[7] * fc[i];
        g[i] = WG7[3] * fc[i];
    }
    for j in 0..7 {
        let dx = h * XGK15[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        for i in 0..N {
            let s = f1[i] + f2[i];
            k[i] += WGK15[j] * s;
            if j % 2 == 1 {
                g[i] += WG7[j / 2] * s;
            }
        }
    }
    let mut err = 0.0f64;
    for i in 0..N {
        k[i] *= h;
        g[i] *= h;
        err = err.max((k[i] - g[i]).abs());
    }
    (k, err)
}

/// Adaptive Gauss–Kronrod integration of a vector-valued integrand over a
/// finite interval. Panels are bisected until the Kronrod/Gauss discrepancy
/// of each panel is below its share of `tol` or `max_depth` is reached.
pub fn adaptive_gk<const N: usize, F>(mut f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> [f64; N]
where
    F: FnMut(f64) -> [f64; N],
{
    if b <= a {
        return [0.0; N];
    }
    adapt(&mut f, a, b, tol, max_depth)
}

fn adapt<const N: usize, F>(f: &mut F, a: f64, b: f64, tol: f64, depth: u32) -> [f64; N]
where
    F: FnMut(f64) -> [f64; N],
{
    let (est, err) = gk15_panel(f, a, b);
    if err <= tol || depth == 0 {
        return est;
    }
    let m = 0.5 * (a + b);
    let left = adapt(f, a, m, 0.5 * tol, depth - 1);
    let right = adapt(f, m, b, 0.5 * tol, depth - 1);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = left[i] + right[i];
    }
    out
}

/// Scalar convenience wrapper around [`adaptive_gk`].
pub fn adaptive_gk_scalar<F>(mut f: F, a: f64, b: f64, tol: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    adaptive_gk(|x| [f(x)], a, b, tol, 30)[0]
}
