//! Multivariate normal rectangle probabilities.
//!
//! Bivariate probabilities use Genz's BVND (Drezner–Wesolowsky with
//! Gauss–Legendre nodes), accurate to about 1e-15. Higher dimensions are
//! reduced by conditioning on one coordinate and integrating that coordinate
//! with adaptive Gauss–Kronrod quadrature, recursing until two coordinates
//! remain. When the correlation matrix has the Markov (random-walk) form
//! `rho[i][k] = rho[i][j] * rho[j][k]` for `i < j < k`, the recursion
//! conditions on the second coordinate so the first one separates, which is
//! the case for every group-sequential statistic in this crate.
//!
//! Infinite limits are handled natively. Only the conditioning variable of
//! a quadrature step is clamped to `[-CLAMP, CLAMP]`.

use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::adaptive_gk;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Standard deviations beyond which a conditioning variable is truncated.
pub const CLAMP: f64 = 8.5;

const MAX_DEPTH: u32 = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    /// Validates symmetry, unit diagonal, range and positive
    /// semi-definiteness of a row-major matrix.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("correlation matrix must have dim >= 1".into()));
        }
        if entries.len() != dim * dim {
            return Err(Error::Shape(format!(
                "expected {} entries for dim {dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        for i in 0..dim {
            if (entries[i * dim + i] - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..dim {
                let v = entries[i * dim + j];
                if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                    return Err(Error::Domain(format!("entry ({i},{j}) = {v} outside [-1, 1]")));
                }
                if (v - entries[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::Domain(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        let m = Self { dim, entries };
        if !m.is_psd() {
            return Err(Error::Domain("correlation matrix is not positive semi-definite".into()));
        }
        Ok(m)
    }

    pub fn from_fn<F: Fn(usize, usize) -> f64>(dim: usize, f: F) -> Result<Self> {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                entries[i * dim + j] = if i == j { 1.0 } else { f(i.min(j), i.max(j)) };
            }
        }
        Self::new(dim, entries)
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self { dim, entries }
    }

    /// Correlation of a process with independent increments observed at
    /// strictly increasing information levels: `sqrt(info[i] / info[j])`
    /// for `i <= j`.
    pub fn brownian(info: &[f64]) -> Result<Self> {
        if info.windows(2).any(|w| w[1] <= w[0]) || info.iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("information levels must be positive and increasing".into()));
        }
        Self::from_fn(info.len(), |i, j| (info[i] / info[j]).sqrt())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    fn is_psd(&self) -> bool {
        let n = self.dim;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d < -1e-10 {
                return false;
            }
            let d = d.max(0.0).sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = if d > 1e-12 { s / d } else { 0.0 };
                if d <= 1e-12 && s.abs() > 1e-8 {
                    return false;
                }
            }
        }
        true
    }

    /// Adjacent correlations if the matrix has the Markov chain form.
    pub fn chain_correlations(&self) -> Option<Vec<f64>> {
        let n = self.dim;
        let rho: Vec<f64> = (0..n.saturating_sub(1)).map(|i| self.get(i, i + 1)).collect();
        for i in 0..n {
            let mut prod = 1.0;
            for j in (i + 1)..n {
                prod *= rho[j - 1];
                if (self.get(i, j) - prod).abs() > 1e-12 {
                    return None;
                }
            }
        }
        Some(rho)
    }

    fn sub(&self, keep: &[usize]) -> Self {
        let d = keep.len();
        let mut entries = vec![0.0; d * d];
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                entries[a * d + b] = self.get(i, j);
            }
        }
        Self { dim: d, entries }
    }
}

/// Integration region with possibly infinite limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Rectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape(format!(
                "lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().chain(&upper).any(|v| v.is_nan()) {
            return Err(Error::Domain("rectangle limits contain NaN".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i]) {
            return Err(Error::Domain(format!("lower[{i}] > upper[{i}]")));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn whole_space(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }
}

/// `P(lower <= X <= upper)` for `X ~ N(0, corr)`.
pub fn mvn_rect_prob(corr: &CorrelationMatrix, rect: &Rectangle, tol: f64) -> Result<f64> {
    if rect.dim() != corr.dim() {
        return Err(Error::Shape(format!(
            "rectangle has dim {}, correlation matrix {}",
            rect.dim(),
            corr.dim()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    // Coordinates without constraints marginalise out.
    let keep: Vec<usize> = (0..rect.dim())
        .filter(|&i| rect.lower[i] > f64::NEG_INFINITY || rect.upper[i] < f64::INFINITY)
        .collect();
    if keep.iter().any(|&i| rect.lower[i] >= rect.upper[i]) {
        return Ok(0.0);
    }
    if keep.is_empty() {
        return Ok(1.0);
    }
    let lo: Vec<f64> = keep.iter().map(|&i| rect.lower[i]).collect();
    let hi: Vec<f64> = keep.iter().map(|&i| rect.upper[i]).collect();
    let sub = corr.sub(&keep);
    let p = match sub.chain_correlations() {
        Some(rho) => chain_rect(&rho, &lo, &hi, tol),
        None => general_rect(&sub, &lo, &hi, tol),
    };
    Ok(p.clamp(0.0, 1.0))
}

// Gauss–Legendre half-rules (nodes negative) used by BVND, copied at full
// published precision.
const GL6: [(f64, f64); 3] = [
    (0.171_324_492_379_170_5, -0.932_469_514_203_152_2),
    (0.360_761_573_048_138_4, -0.661_209_386_466_264_7),
    (0.467_913_934_572_690_4, -0.238_619_186_083_197),
];
const GL12: [(f64, f64); 6] = [
    (0.047_175_336_386_511_77, -0.981_560_634_246_719_1),
    (0.106_939_325_995_318_3, -0.904_117_256_370_475),
    (0.160_078_328_543_346_4, -0.769_902_674_194_305),
    (0.203_167_426_723_065_9, -0.587_317_954_286_617_1),
    (0.233_492_536_538_354_7, -0.367_831_498_998_180_2),
    (0.249_147_045_813_402_9, -0.125_233_408_511_469_2),
];
#[allow(clippy::excessive_precision)]
const GL20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, -0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, -0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, -0.912_234_428_251_325_9),
    (0.083_276_741_576_704_75, -0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, -0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, -0.636_053_680_726_515),
    (0.131_688_638_449_176_6, -0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, -0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, -0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, -0.076_526_521_133_497_33),
];

/// `P(X > dh, Y > dk)` for standard bivariate normal with correlation `r`
/// (Genz's BVND).
pub fn bvnd(dh: f64, dk: f64, r: f64) -> f64 {
    if dh == f64::INFINITY || dk == f64::INFINITY {
        return 0.0;
    }
    if dh == f64::NEG_INFINITY {
        return normal::sf(dk);
    }
    if dk == f64::NEG_INFINITY {
        return normal::sf(dh);
    }
    let two_pi = 2.0 * PI;
    let quad: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        if r != 0.0 {
            let hs = (h * h + k * k) / 2.0;
            let asr = r.asin();
            for &(w, x) in quad {
                for sign in [1.0, -1.0] {
                    let sn = (asr * (sign * x + 1.0) / 2.0).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / (2.0 * two_pi);
        }
        return bvn + normal::sf(h) * normal::sf(k);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(b_s / a_s + hk) / 2.0).exp()
            * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        if hk > -160.0 {
            let b = b_s.sqrt();
            bvn -= (-hk / 2.0).exp()
                * two_pi.sqrt()
                * normal::cdf(-b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a /= 2.0;
        for &(w, x) in quad {
            for sign in [1.0, -1.0] {
                let xs = (a * (sign * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -(b_s / xs + hk) / 2.0;
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                            - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / two_pi;
    }
    if r > 0.0 {
        bvn + normal::sf(h.max(k))
    } else {
        -bvn + (normal::sf(h) - normal::sf(k)).max(0.0)
    }
}

/// `P(X < h, Y < k)`.
#[inline]
pub fn bvn_lower(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        0.0
    } else if h == f64::INFINITY {
        normal::cdf(k)
    } else if k == f64::INFINITY {
        normal::cdf(h)
    } else {
        bvnd(-h, -k, r)
    }
}

/// Bivariate rectangle probability by inclusion–exclusion of lower orthants.
pub fn bvn_rect(lo: [f64; 2], hi: [f64; 2], r: f64) -> f64 {
    if lo[0] >= hi[0] || lo[1] >= hi[1] {
        return 0.0;
    }
    if lo[0] == f64::NEG_INFINITY && lo[1] == f64::NEG_INFINITY {
        return bvn_lower(hi[0], hi[1], r);
    }
    if lo[0] == f64::NEG_INFINITY {
        return (bvn_lower(hi[0], hi[1], r) - bvn_lower(hi[0], lo[1], r)).max(0.0);
    }
    if lo[1] == f64::NEG_INFINITY {
        return (bvn_lower(hi[0], hi[1], r) - bvn_lower(lo[0], hi[1], r)).max(0.0);
    }
    (bvn_lower(hi[0], hi[1], r) - bvn_lower(lo[0], hi[1], r) - bvn_lower(hi[0], lo[1], r)
        + bvn_lower(lo[0], lo[1], r))
    .max(0.0)
}

#[inline]
fn clamp_lo(x: f64) -> f64 {
    x.max(-CLAMP)
}

#[inline]
fn clamp_hi(x: f64) -> f64 {
    x.min(CLAMP)
}

/// Rectangle probability for a unit-variance Gaussian Markov chain with
/// adjacent correlations `rho` (length `d - 1`).
pub fn chain_rect(rho: &[f64], lo: &[f64], hi: &[f64], tol: f64) -> f64 {
    let d = lo.len();
    debug_assert_eq!(rho.len() + 1, d);
    if (0..d).any(|i| lo[i] >= hi[i]) {
        return 0.0;
    }
    match d {
        0 => 1.0,
        1 => normal::interval(lo[0], hi[0]),
        2 => bvn_rect([lo[0], lo[1]], [hi[0], hi[1]], rho[0]),
        _ => {
            // Condition on X_2: X_1 separates from the tail X_3..X_d.
            let r0 = rho[0];
            let s0 = (1.0 - r0 * r0).max(1e-24).sqrt();
            let (tail_rho, tail_c, tail_s) = chain_tail_after(&rho[1..]);
            let mut tlo = vec![0.0; d - 2];
            let mut thi = vec![0.0; d - 2];
            let f = |x: f64| {
                let head = normal::interval((lo[0] - r0 * x) / s0, (hi[0] - r0 * x) / s0);
                if head == 0.0 {
                    return [0.0];
                }
                for i in 0..d - 2 {
                    tlo[i] = (lo[i + 2] - tail_c[i] * x) / tail_s[i];
                    thi[i] = (hi[i + 2] - tail_c[i] * x) / tail_s[i];
                }
                [normal::pdf(x) * head * chain_rect(&tail_rho, &tlo, &thi, tol)]
            };
            adaptive_gk(f, clamp_lo(lo[1]), clamp_hi(hi[1]), tol, MAX_DEPTH)[0]
        }
    }
}

/// `P(lo[i] < W_i < hi[i] for i < d - 1, W_{d-1} < x)` for every `x` in
/// `last`, where `W` is a unit-variance Gaussian Markov chain of length
/// `d = lo.len() + 1` with adjacent correlations `rho`.
pub fn chain_prefix_cdf<const N: usize>(
    rho: &[f64],
    lo: &[f64],
    hi: &[f64],
    last: [f64; N],
    tol: f64,
) -> [f64; N] {
    let d = lo.len() + 1;
    debug_assert_eq!(rho.len() + 1, d);
    if (0..d - 1).any(|i| lo[i] >= hi[i]) {
        return [0.0; N];
    }
    match d {
        1 => last.map(normal::cdf),
        2 => last.map(|x| (bvn_lower(hi[0], x, rho[0]) - bvn_lower(lo[0], x, rho[0])).max(0.0)),
        _ => {
            let r0 = rho[0];
            let s0 = (1.0 - r0 * r0).max(1e-24).sqrt();
            let (tail_rho, tail_c, tail_s) = chain_tail_after(&rho[1..]);
            let m = d - 2;
            let mut tlo = vec![0.0; m - 1];
            let mut thi = vec![0.0; m - 1];
            let f = |x: f64| {
                let head = normal::interval((lo[0] - r0 * x) / s0, (hi[0] - r0 * x) / s0);
                if head == 0.0 {
                    return [0.0; N];
                }
                for i in 0..m - 1 {
                    tlo[i] = (lo[i + 2] - tail_c[i] * x) / tail_s[i];
                    thi[i] = (hi[i + 2] - tail_c[i] * x) / tail_s[i];
                }
                let tl = last.map(|v| (v - tail_c[m - 1] * x) / tail_s[m - 1]);
                let w = normal::pdf(x) * head;
                chain_prefix_cdf(&tail_rho, &tlo, &thi, tl, tol).map(|p| w * p)
            };
            adaptive_gk(f, clamp_lo(lo[1]), clamp_hi(hi[1]), tol, MAX_DEPTH)
        }
    }
}

/// Given the adjacent correlations of `X_2, X_3, ..., X_d` (with `rho[0]`
/// linking `X_2` and `X_3`), returns the chain correlations, regression
/// coefficients and standard deviations of `X_3..X_d` conditional on `X_2`.
pub(crate) fn chain_tail_after(rho: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = rho.len();
    let mut c = Vec::with_capacity(m);
    let mut s = Vec::with_capacity(m);
    let mut prod = 1.0;
    for &r in rho {
        prod *= r;
        c.push(prod);
        s.push((1.0 - prod * prod).max(1e-24).sqrt());
    }
    // corr(X_i, X_{i+1} | X_2) = rho_i * s_i / s_{i+1}
    let tail_rho = (0..m.saturating_sub(1)).map(|i| rho[i + 1] * s[i] / s[i + 1]).collect();
    (tail_rho, c, s)
}

/// Conditions on the first coordinate and recurses.
fn general_rect(corr: &CorrelationMatrix, lo: &[f64], hi: &[f64], tol: f64) -> f64 {
    let d = lo.len();
    match d {
        0 => return 1.0,
        1 => return normal::interval(lo[0], hi[0]),
        2 => return bvn_rect([lo[0], lo[1]], [hi[0], hi[1]], corr.get(0, 1)),
        _ => {}
    }
    // Condition on the most constrained coordinate.
    let pivot = (0..d)
        .min_by(|&a, &b| {
            normal::interval(lo[a], hi[a]).total_cmp(&normal::interval(lo[b], hi[b]))
        })
        .unwrap_or(0);
    let rest: Vec<usize> = (0..d).filter(|&i| i != pivot).collect();
    let c: Vec<f64> = rest.iter().map(|&i| corr.get(pivot, i)).collect();
    let s: Vec<f64> = c.iter().map(|v| (1.0 - v * v).max(0.0).sqrt()).collect();

    // Coordinates perfectly correlated with the pivot become constraints on it.
    let mut a = clamp_lo(lo[pivot]);
    let mut b = clamp_hi(hi[pivot]);
    let mut free = Vec::new();
    for (m, &i) in rest.iter().enumerate() {
        if s[m] < 1e-10 {
            let (l, u) = if c[m] > 0.0 {
                (lo[i] / c[m], hi[i] / c[m])
            } else {
                (hi[i] / c[m], lo[i] / c[m])
            };
            a = a.max(l);
            b = b.min(u);
        } else {
            free.push(m);
        }
    }
    if a >= b {
        return 0.0;
    }
    let k = free.len();
    let mut entries = vec![0.0; k * k];
    for (p, &mp) in free.iter().enumerate() {
        for (q, &mq) in free.iter().enumerate() {
            entries[p * k + q] = if p == q {
                1.0
            } else {
                ((corr.get(rest[mp], rest[mq]) - c[mp] * c[mq]) / (s[mp] * s[mq])).clamp(-1.0, 1.0)
            };
        }
    }
    let cond = CorrelationMatrix { dim: k, entries };
    let chain = cond.chain_correlations();
    let mut clo = vec![0.0; k];
    let mut chi = vec![0.0; k];
    let f = |x: f64| {
        for (p, &m) in free.iter().enumerate() {
            let i = rest[m];
            clo[p] = (lo[i] - c[m] * x) / s[m];
            chi[p] = (hi[i] - c[m] * x) / s[m];
        }
        let inner = match &chain {
            Some(rho) => chain_rect(rho, &clo, &chi, tol),
            None => general_rect(&cond, &clo, &chi, tol),
        };
        [normal::pdf(x) * inner]
    };
    adaptive_gk(f, a, b, tol, MAX_DEPTH)[0]
}
