//! Monte Carlo simulation of trials from group sums.
//!
//! Outcomes are normal with known variance, so each group's sum over a
//! recruitment segment is a sufficient statistic; one normal draw per group
//! and segment reproduces the test statistics exactly.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::design::{CalibratedDesign, EffectConfig};
use crate::error::{Error, Result};
use crate::size::Pmf;

/// Patients recruited to each arm and to the control in one stretch of
/// the trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub arms: Vec<f64>,
    pub control: f64,
}

/// Recruitment and analysis plan as executed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timeline {
    pub segments: Vec<Segment>,
    /// First segment in which each arm recruits.
    pub join: Vec<usize>,
    /// Segments at whose end each arm is analysed.
    pub analyses: Vec<Vec<usize>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl Timeline {
    /// The design run as planned: one segment per control stage.
    pub fn planned(design: &CalibratedDesign) -> Self {
        let sched = &design.schedule;
        let k_arms = design.n_arms();
        let segments = (0..sched.control_stages())
            .map(|p| Segment {
                arms: (0..k_arms)
                    .map(|k| {
                        let s = sched.add_stage[k];
                        if p < s || p >= s + sched.stages(k) {
                            0.0
                        } else {
                            let j = p - s;
                            sched.n_active[k][j] - if j == 0 { 0.0 } else { sched.n_active[k][j - 1] }
                        }
                    })
                    .collect(),
                control: sched.control_increment(p),
            })
            .collect();
        Self {
            segments,
            join: sched.add_stage.clone(),
            analyses: (0..k_arms).map(|k| (0..sched.stages(k)).map(|j| sched.add_stage[k] + j).collect()).collect(),
            lower: design.boundaries.lower.clone(),
            upper: design.boundaries.upper.clone(),
            sigma: design.spec.sigma,
        }
    }

    pub fn n_arms(&self) -> usize {
        self.join.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k_arms = self.n_arms();
        let n_seg = self.segments.len();
        if self.analyses.len() != k_arms || self.lower.len() != k_arms || self.upper.len() != k_arms {
            return Err(Error::Shape("timeline arms disagree".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Domain("sigma must be positive".into()));
        }
        for seg in &self.segments {
            if seg.arms.len() != k_arms || seg.arms.iter().chain([&seg.control]).any(|&m| !(m >= 0.0)) {
                return Err(Error::Schedule("segment counts must be non-negative, one per arm".into()));
            }
        }
        for k in 0..k_arms {
            let a = &self.analyses[k];
            if a.is_empty() || a.len() != self.lower[k].len() || a.len() != self.upper[k].len() {
                return Err(Error::Shape(format!("arm {} needs one boundary pair per analysis", k + 1)));
            }
            if a[0] < self.join[k] || a.windows(2).any(|w| w[1] <= w[0]) || a[a.len() - 1] >= n_seg {
                return Err(Error::Schedule(format!("arm {} analyses out of order", k + 1)));
            }
            let arm_n: f64 = (self.join[k]..=a[0]).map(|e| self.segments[e].arms[k]).sum();
            let ctrl_n: f64 = (self.join[k]..=a[0]).map(|e| self.segments[e].control).sum();
            if !(arm_n > 0.0 && ctrl_n > 0.0) {
                return Err(Error::Schedule(format!("arm {} has no patients at its first analysis", k + 1)));
            }
        }
        Ok(())
    }

    fn last_analysis(&self, k: usize) -> usize {
        self.analyses[k][self.analyses[k].len() - 1]
    }
}

/// A proportion or mean with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
}

impl Estimate {
    fn proportion(count: u64, reps: u64) -> Self {
        let p = count as f64 / reps as f64;
        Self { estimate: p, se: (p * (1.0 - p) / reps as f64).sqrt() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    /// Probability of rejecting at least one true null (`theta_k <= 0`).
    pub fwer: Estimate,
    /// Probability that each arm is rejected and recommended.
    pub power: Vec<Estimate>,
    /// Probability that each arm's null is rejected.
    pub reject: Vec<Estimate>,
    pub expected_n: Estimate,
    pub pmf: Pmf,
    pub replicates: u64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub timeline: Timeline,
    pub theta: EffectConfig,
    pub replicates: u64,
    pub seed: u64,
}

impl SimConfig {
    pub fn planned(design: &CalibratedDesign, theta: EffectConfig, replicates: u64, seed: u64) -> Self {
        Self { timeline: Timeline::planned(design), theta, replicates, seed }
    }
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub rejected: Vec<bool>,
    pub recommended: Option<usize>,
    pub total_n: f64,
}

/// Runs one trial from the given stream of standard normals.
pub fn run_trial<R: rand::Rng>(tl: &Timeline, theta: &[f64], rng: &mut R) -> TrialOutcome {
    let k_arms = tl.n_arms();
    let n_seg = tl.segments.len();
    let sigma = tl.sigma;
    // Control prefix sums: index e holds totals over segments 0..e.
    let mut ctrl_n = vec![0.0; n_seg + 1];
    let mut ctrl_s = vec![0.0; n_seg + 1];
    let mut arm_draw = vec![vec![0.0; k_arms]; n_seg];
    for (e, seg) in tl.segments.iter().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        ctrl_n[e + 1] = ctrl_n[e] + seg.control;
        ctrl_s[e + 1] = ctrl_s[e] + sigma * seg.control.sqrt() * z;
        for k in 0..k_arms {
            let m = seg.arms[k];
            if m > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                arm_draw[e][k] = m * theta[k] + sigma * m.sqrt() * z;
            }
        }
    }

    let mut n = vec![0.0; k_arms];
    let mut sum = vec![0.0; k_arms];
    let mut next = vec![0usize; k_arms];
    let mut concluded = vec![false; k_arms];
    let mut rejected = vec![false; k_arms];
    let mut total_n = 0.0;
    for e in 0..n_seg {
        let seg = &tl.segments[e];
        total_n += seg.control;
        for k in 0..k_arms {
            if tl.join[k] <= e && !concluded[k] {
                n[k] += seg.arms[k];
                sum[k] += arm_draw[e][k];
                total_n += seg.arms[k];
            }
        }
        let mut crossers: Vec<usize> = Vec::new();
        for k in 0..k_arms {
            if concluded[k] || next[k] >= tl.analyses[k].len() || tl.analyses[k][next[k]] != e {
                continue;
            }
            let j = next[k];
            next[k] += 1;
            let delta = ctrl_n[e + 1] - ctrl_n[tl.join[k]];
            debug_assert!(delta > 0.0 && delta <= ctrl_n[e + 1]);
            let ctrl_mean = (ctrl_s[e + 1] - ctrl_s[tl.join[k]]) / delta;
            let z = (sum[k] / n[k] - ctrl_mean) / (sigma * (1.0 / n[k] + 1.0 / delta).sqrt());
            if z > tl.upper[k][j] {
                crossers.push(k);
            } else if z < tl.lower[k][j] || e == tl.last_analysis(k) {
                concluded[k] = true;
            }
        }
        if !crossers.is_empty() {
            let mut best = crossers[0];
            for &k in &crossers {
                rejected[k] = true;
                if sum[k] / n[k] > sum[best] / n[best] {
                    best = k;
                }
            }
            return TrialOutcome { rejected, recommended: Some(best), total_n };
        }
        let all_done = (0..k_arms).all(|k| tl.join[k] <= e && concluded[k]);
        if all_done {
            break;
        }
    }
    TrialOutcome { rejected, recommended: None, total_n }
}

/// Replicates per work unit; fixed so that the reduction order does not
/// depend on the number of threads.
const CHUNK: u64 = 4096;

#[derive(Debug, Clone, Default)]
struct Tally {
    any_true: u64,
    reject: Vec<u64>,
    recommend: Vec<u64>,
    n_sum: f64,
    n_sq: f64,
    pmf: BTreeMap<u64, u64>,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        self.any_true += other.any_true;
        for (a, b) in self.reject.iter_mut().zip(&other.reject) {
            *a += b;
        }
        for (a, b) in self.recommend.iter_mut().zip(&other.recommend) {
            *a += b;
        }
        self.n_sum += other.n_sum;
        self.n_sq += other.n_sq;
        for (n, c) in other.pmf {
            *self.pmf.entry(n).or_default() += c;
        }
        self
    }
}

/// The RNG of replicate `i`: stream `i` of the ChaCha generator keyed by
/// `seed`.
pub fn replicate_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

pub fn simulate(config: &SimConfig) -> Result<SimReport> {
    let tl = &config.timeline;
    tl.validate()?;
    config.theta.check(tl.n_arms())?;
    if config.replicates == 0 {
        return Err(Error::Domain("at least one replicate is required".into()));
    }
    let k_arms = tl.n_arms();
    let theta = &config.theta.theta;
    let reps = config.replicates;
    let chunks: Vec<u64> = (0..reps.div_ceil(CHUNK)).collect();
    let tallies: Vec<Tally> = chunks
        .par_iter()
        .map(|&c| {
            let mut t = Tally { reject: vec![0; k_arms], recommend: vec![0; k_arms], ..Default::default() };
            for i in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                let mut rng = replicate_rng(config.seed, i);
                let out = run_trial(tl, theta, &mut rng);
                let mut any_true = false;
                for (k, &rejected) in out.rejected.iter().enumerate() {
                    if rejected {
                        t.reject[k] += 1;
                        any_true |= theta[k] <= 0.0;
                    }
                }
                t.any_true += any_true as u64;
                if let Some(k) = out.recommended {
                    t.recommend[k] += 1;
                }
                t.n_sum += out.total_n;
                t.n_sq += out.total_n * out.total_n;
                *t.pmf.entry(out.total_n.to_bits()).or_default() += 1;
            }
            t
        })
        .collect();
    let total = tallies
        .into_iter()
        .reduce(Tally::merge)
        .expect("at least one chunk");
    let r = reps as f64;
    let mean = total.n_sum / r;
    let var = if reps > 1 { ((total.n_sq - r * mean * mean) / (r - 1.0)).max(0.0) } else { 0.0 };
    Ok(SimReport {
        fwer: Estimate::proportion(total.any_true, reps),
        power: total.recommend.iter().map(|&c| Estimate::proportion(c, reps)).collect(),
        reject: total.reject.iter().map(|&c| Estimate::proportion(c, reps)).collect(),
        expected_n: Estimate { estimate: mean, se: (var / r).sqrt() },
        pmf: Pmf::from_pairs(total.pmf.into_iter().map(|(n, c)| (f64::from_bits(n), c as f64 / r)).collect()),
        replicates: reps,
        seed: config.seed,
    })
}
