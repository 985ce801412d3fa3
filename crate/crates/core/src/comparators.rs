//! Competing ways of running the same set of treatments, for comparison
//! with a platform design.
//!
//! Every comparator is built from the platform design it is compared with:
//! its spec supplies effects, error targets, stage counts and shapes.

use serde::{Deserialize, Serialize};

use crate::arm::Numerics;
use crate::design::{control_schedule, duration, Boundaries, CalibratedDesign, DesignSpec, EffectConfig, Schedule};
use crate::error::{Error, Result};
use crate::fwer::fwer;
use crate::power::{power, size_for_power};
use crate::size::{expected_n_efficient, standard_scenarios};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ComparatorKind {
    /// One two-arm trial per treatment, each at the level that keeps the
    /// FWER across trials at `alpha`.
    SeparateFwer,
    /// One two-arm trial per treatment, each at level `alpha`.
    SeparateNoFwer,
    /// All arms start together with a common number of stages.
    SimultaneousMams { stages: usize },
    /// The two-arm design of the first treatment reused unchanged for every
    /// arm, with the same patients per arm and stage. An arm joining late
    /// uses the boundary values of the analyses it takes part in.
    NaiveSameN,
    /// As `NaiveSameN`, with the later stages shrunk to keep the two-arm
    /// design's maximum sample size.
    NaiveSameMaxN,
}

impl ComparatorKind {
    pub fn label(self) -> String {
        match self {
            Self::SeparateFwer => "separate_fwer".into(),
            Self::SeparateNoFwer => "separate_no_fwer".into(),
            Self::SimultaneousMams { stages } => format!("mams_{stages}stage"),
            Self::NaiveSameN => "naive_same_n".into(),
            Self::NaiveSameMaxN => "naive_same_max_n".into(),
        }
    }
}

/// Expected size and duration under one effect configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub label: String,
    pub expected_n: f64,
    pub expected_duration: f64,
}

/// One comparison row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparatorSummary {
    /// `None` for the platform design itself.
    pub kind: Option<ComparatorKind>,
    pub label: String,
    pub fwer: f64,
    /// Power of each treatment under its least favourable configuration.
    pub power: Vec<f64>,
    pub stages: Vec<usize>,
    /// Patients recruited to each treatment in each of its stages.
    pub stage_sizes: Vec<Vec<f64>>,
    pub max_n: f64,
    pub max_duration: f64,
    /// Recruitment time spent before the trial can start, added to every
    /// duration.
    pub wait_duration: f64,
    pub scenarios: Vec<ScenarioSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparator {
    pub summary: ComparatorSummary,
    /// The designs run: one per trial for separate trials, otherwise one.
    pub designs: Vec<CalibratedDesign>,
}

fn stage_sizes(schedule: &Schedule) -> Vec<Vec<f64>> {
    schedule
        .n_active
        .iter()
        .map(|n| (0..n.len()).map(|j| n[j] - if j == 0 { 0.0 } else { n[j - 1] }).collect())
        .collect()
}

/// Two-arm spec for treatment `k` of `base` at level `alpha`.
fn single_arm_spec(base: &DesignSpec, k: usize, alpha: f64) -> Result<DesignSpec> {
    let mut spec = DesignSpec::new(
        vec![0],
        vec![base.stages[k]],
        vec![base.shapes[k]],
        base.theta_interesting,
        base.theta_null,
        base.sigma,
        alpha,
        base.beta,
        base.recruitment_rate,
    )?;
    spec.stage_ratios = vec![base.stage_ratios[k].clone()];
    spec.validate()?;
    Ok(spec)
}

/// Per-trial level keeping the FWER over `trials` independent trials at
/// `alpha`.
pub fn split_alpha(alpha: f64, trials: usize) -> f64 {
    if trials <= 1 {
        return alpha;
    }
    -((-alpha).ln_1p() / trials as f64).exp_m1()
}

/// Patients recruited in the platform design before its last arm joins.
pub fn waiting_patients(platform: &CalibratedDesign) -> f64 {
    let sched = &platform.schedule;
    let last = *sched.add_stage.iter().max().unwrap_or(&0);
    (0..last)
        .map(|p| {
            let arms: f64 = (0..sched.n_arms())
                .filter(|&k| sched.add_stage[k] <= p && p < sched.add_stage[k] + sched.stages(k))
                .map(|k| {
                    let j = p - sched.add_stage[k];
                    sched.n_active[k][j] - if j == 0 { 0.0 } else { sched.n_active[k][j - 1] }
                })
                .sum();
            arms + sched.control_increment(p)
        })
        .sum()
}

/// Summary row of a single design, such as the platform design itself.
pub fn summarize(label: &str, design: &CalibratedDesign, numerics: &Numerics) -> Result<ComparatorSummary> {
    let mut s = design_summary(None, design, &standard_scenarios(design), 0.0, numerics)?;
    s.label = label.to_string();
    Ok(s)
}

fn design_summary(
    kind: Option<ComparatorKind>,
    design: &CalibratedDesign,
    scenarios: &[(String, EffectConfig)],
    wait: f64,
    numerics: &Numerics,
) -> Result<ComparatorSummary> {
    let rate = design.spec.recruitment_rate;
    let power = (0..design.n_arms()).map(|k| Ok(power(design, k, numerics)?.total)).collect::<Result<Vec<_>>>()?;
    let scenarios = scenarios
        .iter()
        .map(|(label, theta)| {
            let e = expected_n_efficient(design, theta, numerics)?;
            Ok(ScenarioSummary { label: label.clone(), expected_n: e, expected_duration: duration(e + wait, rate) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparatorSummary {
        kind,
        label: kind.map(ComparatorKind::label).unwrap_or_default(),
        fwer: fwer(design, numerics)?,
        power,
        stages: design.schedule.n_active.iter().map(Vec::len).collect(),
        stage_sizes: stage_sizes(&design.schedule),
        max_n: design.max_n(),
        max_duration: duration(design.max_n() + wait, rate),
        wait_duration: duration(wait, rate),
        scenarios,
    })
}

fn separate(kind: ComparatorKind, platform: &CalibratedDesign, numerics: &Numerics) -> Result<Comparator> {
    let base = &platform.spec;
    let k_arms = base.n_arms;
    let alpha = match kind {
        ComparatorKind::SeparateFwer => split_alpha(base.alpha, k_arms),
        _ => base.alpha,
    };
    let designs = (0..k_arms)
        .map(|k| size_for_power(&single_arm_spec(base, k, alpha)?, numerics))
        .collect::<Result<Vec<_>>>()?;
    let mut no_error = 1.0;
    let mut power_k = Vec::with_capacity(k_arms);
    for d in &designs {
        no_error *= 1.0 - fwer(d, numerics)?;
        power_k.push(power(d, 0, numerics)?.total);
    }
    let rate = base.recruitment_rate;
    let scenarios = standard_scenarios(platform)
        .into_iter()
        .map(|(label, theta)| {
            let mut e = 0.0;
            for (k, d) in designs.iter().enumerate() {
                e += expected_n_efficient(d, &EffectConfig { theta: vec![theta.theta[k]] }, numerics)?;
            }
            Ok(ScenarioSummary { label, expected_n: e, expected_duration: duration(e, rate) })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_n: f64 = designs.iter().map(|d| d.max_n()).sum();
    let summary = ComparatorSummary {
        kind: Some(kind),
        label: kind.label(),
        fwer: 1.0 - no_error,
        power: power_k,
        stages: base.stages.clone(),
        stage_sizes: designs.iter().flat_map(|d| stage_sizes(&d.schedule)).collect(),
        max_n,
        max_duration: duration(max_n, rate),
        wait_duration: 0.0,
        scenarios,
    };
    Ok(Comparator { summary, designs })
}

fn simultaneous(stages: usize, platform: &CalibratedDesign, numerics: &Numerics) -> Result<Comparator> {
    let base = &platform.spec;
    if stages == 0 {
        return Err(Error::InvalidDesign("a simultaneous design needs at least one stage".into()));
    }
    let spec = DesignSpec::new(
        vec![0; base.n_arms],
        vec![stages; base.n_arms],
        base.shapes.clone(),
        base.theta_interesting,
        base.theta_null,
        base.sigma,
        base.alpha,
        base.beta,
        base.recruitment_rate,
    )?;
    let kind = ComparatorKind::SimultaneousMams { stages };
    let design = size_for_power(&spec, numerics)?;
    let summary = design_summary(Some(kind), &design, &standard_scenarios(&design), waiting_patients(platform), numerics)?;
    Ok(Comparator { summary, designs: vec![design] })
}

/// The two-arm design's boundaries, indexed by control analysis: an arm
/// that joins late uses the values of the analyses it takes part in.
fn naive_boundaries(two_arm: &CalibratedDesign, spec: &DesignSpec) -> Result<Boundaries> {
    let l = &two_arm.boundaries.lower[0];
    let u = &two_arm.boundaries.upper[0];
    if l.len() < spec.control_stages {
        return Err(Error::InvalidDesign(format!(
            "the two-arm design has {} analyses but the platform runs {}",
            l.len(),
            spec.control_stages
        )));
    }
    let range = |k: usize| spec.add_stage[k]..spec.add_stage[k] + spec.stages[k];
    Ok(Boundaries {
        shapes: spec.shapes.clone(),
        a: vec![two_arm.boundaries.a[0]; spec.n_arms],
        lower: (0..spec.n_arms).map(|k| l[range(k)].to_vec()).collect(),
        upper: (0..spec.n_arms).map(|k| u[range(k)].to_vec()).collect(),
    })
}

fn naive(kind: ComparatorKind, platform: &CalibratedDesign, numerics: &Numerics) -> Result<Comparator> {
    let spec = platform.spec.clone();
    let two_arm = size_for_power(&single_arm_spec(&spec, 0, spec.alpha)?, numerics)?;
    let n0 = two_arm.schedule.n_active[0][0];
    let schedule = match kind {
        ComparatorKind::NaiveSameN => control_schedule(&spec, &vec![n0; spec.n_arms])?,
        _ => same_max_n_schedule(&spec, n0, two_arm.max_n())?,
    };
    let boundaries = naive_boundaries(&two_arm, &spec)?;
    let design = CalibratedDesign::new(spec, schedule, boundaries)?;
    let summary = design_summary(Some(kind), &design, &standard_scenarios(&design), 0.0, numerics)?;
    Ok(Comparator { summary, designs: vec![two_arm, design] })
}

/// Initial arms keep their first stage; everything recruited after the
/// first arm joins is shared evenly over groups and periods, with the
/// joining arms and the control rounded up and the initial arms taking what
/// is left.
fn same_max_n_schedule(spec: &DesignSpec, n0: f64, max_n: f64) -> Result<Schedule> {
    let first_join = spec.add_stage.iter().copied().filter(|&s| s > 0).min().ok_or_else(|| {
        Error::InvalidDesign("same maximum size comparison needs an arm that joins later".into())
    })?;
    if spec.stage_ratios.iter().any(|r| r.windows(2).any(|w| w[1] - w[0] != r[0])) {
        return Err(Error::InvalidDesign("same maximum size comparison needs equal stages".into()));
    }
    let before = n0 * (spec.n_initial_arms as f64 + 1.0) * first_join as f64;
    let remaining = max_n - before;
    let later = spec.control_stages - first_join;
    let slots: usize = (first_join..spec.control_stages).map(|p| spec.recruiting(p).count() + 1).sum();
    let share = remaining / slots as f64;
    let late_n = share.ceil();
    let late_slots: usize =
        (first_join..spec.control_stages).map(|p| spec.recruiting(p).filter(|&k| spec.add_stage[k] > 0).count()).sum();
    let initial_slots = slots - late_slots - later;
    let initial_n = ((remaining - late_n * (late_slots + later) as f64) / initial_slots as f64).floor();
    if !(initial_n > 0.0) {
        return Err(Error::Schedule(format!("no patients left for the initial arms within {max_n}")));
    }
    let n_active: Vec<Vec<f64>> = (0..spec.n_arms)
        .map(|k| {
            let s = spec.add_stage[k];
            (0..spec.stages[k])
                .scan(0.0, |acc, j| {
                    *acc += if s > 0 { late_n } else if s + j < first_join { n0 } else { initial_n };
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let n_control = (0..spec.control_stages)
        .scan(0.0, |acc, p| {
            *acc += if p < first_join { n0 } else { late_n.max(initial_n) };
            Some(*acc)
        })
        .collect();
    Schedule::from_counts(spec.add_stage.clone(), n_active, n_control)
}

/// Builds and evaluates the comparator of `kind` for `platform`.
pub fn build_comparator(kind: ComparatorKind, platform: &CalibratedDesign, numerics: &Numerics) -> Result<Comparator> {
    match kind {
        ComparatorKind::SeparateFwer | ComparatorKind::SeparateNoFwer => separate(kind, platform, numerics),
        ComparatorKind::SimultaneousMams { stages } => simultaneous(stages, platform, numerics),
        ComparatorKind::NaiveSameN | ComparatorKind::NaiveSameMaxN => {
            if platform.spec.n_initial_arms == platform.spec.n_arms {
                return Err(Error::InvalidDesign("naive comparison needs an arm that joins later".into()));
            }
            naive(kind, platform, numerics)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_alpha_matches_product() {
        let a = split_alpha(0.025, 2);
        assert!((a - 0.012579).abs() < 1e-6, "{a}");
        assert!(((1.0 - a) * (1.0 - a) - 0.975).abs() < 1e-12);
        assert_eq!(split_alpha(0.05, 1), 0.05);
    }

    #[test]
    fn same_max_n_allocation() {
        let spec = DesignSpec::setting2([crate::design::Shape::Triangular; 2], 0.0);
        let s = same_max_n_schedule(&spec, 46.0, 276.0).unwrap();
        assert_eq!(s.n_active, vec![vec![46.0, 76.0, 106.0], vec![31.0, 62.0]]);
        assert_eq!(s.n_control, vec![46.0, 77.0, 108.0]);
        assert_eq!(s.max_n(), 276.0);
    }
}
