//! Trial structure: design inputs, recruitment schedule, boundary
//! shapes and effect configurations.
//!
//! Arms and stages are indexed from zero in code. Arm `k` joins the trial
//! after `add_stage[k]` control stages, so its analysis `j` (0-based)
//! coincides with control analysis `add_stage[k] + j` (0-based).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    #[serde(alias = "Tri")]
    Triangular,
    #[serde(alias = "Po")]
    Pocock,
    #[serde(alias = "OBF")]
    OBrienFleming,
}

impl Shape {
    pub fn label(self) -> &'static str {
        match self {
            Shape::Triangular => "Tri",
            Shape::Pocock => "Po",
            Shape::OBrienFleming => "OBF",
        }
    }
}

/// Lower and upper boundaries for one arm with shape parameter `a` and
/// information ratios `r` (cumulative arm sizes relative to any common unit).
pub fn shape_bounds(shape: Shape, a: f64, r: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if r.is_empty() {
        return Err(Error::Shape("boundary needs at least one analysis".into()));
    }
    if r[0] <= 0.0 || r.windows(2).any(|w| w[1] <= w[0]) || r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape(format!("stage ratios must be positive and increasing: {r:?}")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("shape parameter must be positive, got {a}")));
    }
    let jn = r.len();
    let rj = r[jn - 1];
    let mut lower = Vec::with_capacity(jn);
    let mut upper = Vec::with_capacity(jn);
    for (j, &ri) in r.iter().enumerate() {
        let last = j + 1 == jn;
        let (l, u) = match shape {
            Shape::Triangular => {
                let f = ri / rj;
                (-a * (1.0 - 3.0 * f) / ri.sqrt(), a * (1.0 + f) / ri.sqrt())
            }
            Shape::Pocock => (if last { a } else { 0.0 }, a),
            Shape::OBrienFleming => {
                let u = a * (rj / ri).sqrt();
                (if last { u } else { 0.0 }, u)
            }
        };
        // Triangular lower bounds cross zero exactly at a third of the way.
        lower.push(if l == 0.0 { 0.0 } else { l });
        upper.push(u);
    }
    // The final analysis forces a decision; make it exact.
    lower[jn - 1] = upper[jn - 1];
    Ok((lower, upper))
}

/// Everything fixed before boundaries and sample sizes are computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub n_arms: usize,
    pub n_initial_arms: usize,
    /// Control stages completed before each arm joins.
    pub add_stage: Vec<usize>,
    pub stages: Vec<usize>,
    pub control_stages: usize,
    pub sigma: f64,
    pub theta_interesting: f64,
    pub theta_null: f64,
    pub alpha: f64,
    pub beta: f64,
    pub recruitment_rate: f64,
    pub shapes: Vec<Shape>,
    /// Cumulative arm sizes per stage relative to the first stage.
    pub stage_ratios: Vec<Vec<f64>>,
}

impl DesignSpec {
    /// Spec with equally spaced analyses (`r_{k,j} = j`) and the control
    /// running until the last arm's final analysis.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        add_stage: Vec<usize>,
        stages: Vec<usize>,
        shapes: Vec<Shape>,
        theta_interesting: f64,
        theta_null: f64,
        sigma: f64,
        alpha: f64,
        beta: f64,
        recruitment_rate: f64,
    ) -> Result<Self> {
        let n_arms = add_stage.len();
        let n_initial_arms = add_stage.iter().filter(|&&s| s == 0).count();
        let control_stages = add_stage.iter().zip(&stages).map(|(s, j)| s + j).max().unwrap_or(0);
        let stage_ratios = stages.iter().map(|&j| (1..=j).map(|v| v as f64).collect()).collect();
        let spec = Self {
            n_arms,
            n_initial_arms,
            add_stage,
            stages,
            control_stages,
            sigma,
            theta_interesting,
            theta_null,
            alpha,
            beta,
            recruitment_rate,
            shapes,
            stage_ratios,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Two arms, the second joining after one stage, each with two
    /// analyses (control runs three stages).
    pub fn setting1(shape: Shape, theta_null: f64) -> Self {
        Self::flair(vec![2, 2], [shape, shape], theta_null)
    }

    /// Two arms over three control stages; the late arm gets two analyses.
    pub fn setting2(shapes: [Shape; 2], theta_null: f64) -> Self {
        Self::flair(vec![3, 2], shapes, theta_null)
    }

    fn flair(stages: Vec<usize>, shapes: [Shape; 2], theta_null: f64) -> Self {
        Self::new(
            vec![0, 1],
            stages,
            shapes.to_vec(),
            -(0.69f64.ln()),
            theta_null,
            1.0,
            0.025,
            0.2,
            21.0,
        )
        .expect("built-in design is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_arms;
        if k == 0 {
            return Err(Error::InvalidDesign("at least one arm is required".into()));
        }
        for (name, len) in [
            ("add_stage", self.add_stage.len()),
            ("stages", self.stages.len()),
            ("shapes", self.shapes.len()),
            ("stage_ratios", self.stage_ratios.len()),
        ] {
            if len != k {
                return Err(Error::InvalidDesign(format!("{name} has {len} entries for {k} arms")));
            }
        }
        if self.n_initial_arms == 0 || self.n_initial_arms > k {
            return Err(Error::InvalidDesign(format!(
                "initial arms must be between 1 and {k}, got {}",
                self.n_initial_arms
            )));
        }
        for i in 0..k {
            let starts = self.add_stage[i] == 0;
            if starts != (i < self.n_initial_arms) {
                return Err(Error::InvalidDesign(
                    "the first n_initial_arms arms must start at stage 0 and no others".into(),
                ));
            }
            if i > 0 && self.add_stage[i] < self.add_stage[i - 1] {
                return Err(Error::InvalidDesign("arms must be sorted by adding stage".into()));
            }
            if self.stages[i] == 0 {
                return Err(Error::InvalidDesign(format!("arm {} has no analyses", i + 1)));
            }
            if self.add_stage[i] + self.stages[i] > self.control_stages {
                return Err(Error::InvalidDesign(format!(
                    "arm {} ends after the control's last stage",
                    i + 1
                )));
            }
            let r = &self.stage_ratios[i];
            if r.len() != self.stages[i] || r[0] <= 0.0 || r.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidDesign(format!(
                    "arm {} needs {} positive increasing stage ratios",
                    i + 1,
                    self.stages[i]
                )));
            }
        }
        let last = self.add_stage.iter().zip(&self.stages).map(|(s, j)| s + j).max().unwrap_or(0);
        if last != self.control_stages {
            return Err(Error::InvalidDesign(format!(
                "control runs {} stages but the last arm finishes at stage {last}",
                self.control_stages
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidDesign("sigma must be positive".into()));
        }
        if !(self.theta_null < self.theta_interesting) {
            return Err(Error::InvalidDesign(
                "theta_null must be below theta_interesting".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidDesign("alpha and beta must lie in (0, 1)".into()));
        }
        if !(self.recruitment_rate > 0.0) {
            return Err(Error::InvalidDesign("recruitment rate must be positive".into()));
        }
        Ok(())
    }

    /// Arms recruiting during control period `p` (0-based).
    pub fn recruiting(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_arms).filter(move |&k| self.add_stage[k] <= p && p < self.add_stage[k] + self.stages[k])
    }

    /// Sample size per arm of a single-stage two-arm z-test at level
    /// `alpha` and power `1 - beta`; a scale for root-finding brackets.
    pub fn fixed_sample_size(&self) -> f64 {
        let z = crate::normal::quantile(1.0 - self.alpha) + crate::normal::quantile(1.0 - self.beta);
        2.0 * (self.sigma * z / self.theta_interesting).powi(2)
    }
}

/// Cumulative recruitment of every arm and of the control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub add_stage: Vec<usize>,
    /// `n_active[k][j]`: patients on arm `k` by its analysis `j`.
    pub n_active: Vec<Vec<f64>>,
    /// `n_control[j]`: control patients by control analysis `j`.
    pub n_control: Vec<f64>,
}

impl Schedule {
    /// Validates a schedule given by explicit cumulative counts.
    pub fn from_counts(add_stage: Vec<usize>, n_active: Vec<Vec<f64>>, n_control: Vec<f64>) -> Result<Self> {
        let s = Self { add_stage, n_active, n_control };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.add_stage.len() != self.n_active.len() {
            return Err(Error::Schedule("one adding stage per arm required".into()));
        }
        let inc = |v: &[f64]| v.first().is_some_and(|&x| x > 0.0) && v.windows(2).all(|w| w[1] > w[0]);
        if !inc(&self.n_control) {
            return Err(Error::Schedule(format!(
                "control counts must be positive and increasing: {:?}",
                self.n_control
            )));
        }
        for (k, n) in self.n_active.iter().enumerate() {
            if !inc(n) {
                return Err(Error::Schedule(format!(
                    "arm {} counts must be positive and increasing: {n:?}",
                    k + 1
                )));
            }
            if self.add_stage[k] + n.len() > self.n_control.len() {
                return Err(Error::Schedule(format!("arm {} outlasts the control", k + 1)));
            }
        }
        Ok(())
    }

    pub fn n_arms(&self) -> usize {
        self.n_active.len()
    }

    pub fn stages(&self, k: usize) -> usize {
        self.n_active[k].len()
    }

    pub fn control_stages(&self) -> usize {
        self.n_control.len()
    }

    /// Control patients recruited before control analysis `p` (0-based),
    /// i.e. cumulative count after `p` stages.
    #[inline]
    pub fn control_before(&self, p: usize) -> f64 {
        if p == 0 {
            0.0
        } else {
            self.n_control[p - 1]
        }
    }

    /// Control increment of period `p` (0-based).
    #[inline]
    pub fn control_increment(&self, p: usize) -> f64 {
        self.n_control[p] - self.control_before(p)
    }

    /// Concurrent control patients for arm `k` at its analysis `j`.
    #[inline]
    pub fn concurrent_control(&self, k: usize, j: usize) -> f64 {
        let s = self.add_stage[k];
        self.n_control[s + j] - self.control_before(s)
    }

    /// Arm `k`'s sizes relative to its first stage.
    pub fn ratios(&self, k: usize) -> Vec<f64> {
        let n = &self.n_active[k];
        n.iter().map(|v| v / n[0]).collect()
    }

    pub fn max_n(&self) -> f64 {
        self.n_active.iter().map(|n| n[n.len() - 1]).sum::<f64>() + self.n_control[self.n_control.len() - 1]
    }

    pub fn stage1_sizes(&self) -> Vec<f64> {
        self.n_active.iter().map(|n| n[0]).collect()
    }
}

/// Builds the schedule for per-arm first-stage sizes `n1`: arm `k` recruits
/// `n1[k] * r_{k,j}` by its analysis `j`, and in every control period the
/// control recruits as many patients as the largest per-stage increment
/// among the arms recruiting in that period.
pub fn control_schedule(spec: &DesignSpec, n1: &[f64]) -> Result<Schedule> {
    if n1.len() != spec.n_arms {
        return Err(Error::Shape(format!("{} sizes for {} arms", n1.len(), spec.n_arms)));
    }
    if n1.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("stage-one sizes must be positive: {n1:?}")));
    }
    let n_active: Vec<Vec<f64>> = (0..spec.n_arms)
        .map(|k| spec.stage_ratios[k].iter().map(|r| n1[k] * r / spec.stage_ratios[k][0]).collect())
        .collect();
    let mut n_control = Vec::with_capacity(spec.control_stages);
    let mut total = 0.0;
    for p in 0..spec.control_stages {
        let inc = spec
            .recruiting(p)
            .map(|k| {
                let j = p - spec.add_stage[k];
                let prev = if j == 0 { 0.0 } else { n_active[k][j - 1] };
                n_active[k][j] - prev
            })
            .fold(0.0f64, f64::max);
        if inc <= 0.0 {
            return Err(Error::Schedule(format!("no arm recruits during control period {}", p + 1)));
        }
        total += inc;
        n_control.push(total);
    }
    Schedule::from_counts(spec.add_stage.clone(), n_active, n_control)
}

/// Months needed to recruit `n_patients` at a constant rate.
pub fn duration(n_patients: f64, rate: f64) -> f64 {
    n_patients / rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundaries {
    pub shapes: Vec<Shape>,
    pub a: Vec<f64>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl Boundaries {
    /// Boundaries for shape parameters `a` at the schedule's own ratios.
    pub fn from_shapes(shapes: &[Shape], a: &[f64], schedule: &Schedule) -> Result<Self> {
        if shapes.len() != schedule.n_arms() || a.len() != schedule.n_arms() {
            return Err(Error::Shape("one shape and one parameter per arm required".into()));
        }
        let mut lower = Vec::with_capacity(a.len());
        let mut upper = Vec::with_capacity(a.len());
        for k in 0..a.len() {
            let (l, u) = shape_bounds(shapes[k], a[k], &schedule.ratios(k))?;
            lower.push(l);
            upper.push(u);
        }
        Ok(Self { shapes: shapes.to_vec(), a: a.to_vec(), lower, upper })
    }

    pub fn n_arms(&self) -> usize {
        self.a.len()
    }
}

/// A design with boundaries and sample sizes fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedDesign {
    pub spec: DesignSpec,
    pub schedule: Schedule,
    pub boundaries: Boundaries,
}

impl CalibratedDesign {
    pub fn new(spec: DesignSpec, schedule: Schedule, boundaries: Boundaries) -> Result<Self> {
        spec.validate()?;
        schedule.validate()?;
        if schedule.n_arms() != spec.n_arms || boundaries.n_arms() != spec.n_arms {
            return Err(Error::Shape("spec, schedule and boundaries disagree on arm count".into()));
        }
        for k in 0..spec.n_arms {
            let j = schedule.stages(k);
            if boundaries.lower[k].len() != j || boundaries.upper[k].len() != j {
                return Err(Error::Shape(format!("arm {} boundaries do not match its stages", k + 1)));
            }
            if schedule.add_stage[k] != spec.add_stage[k] {
                return Err(Error::Shape(format!("arm {} joins at different stages", k + 1)));
            }
        }
        Ok(Self { spec, schedule, boundaries })
    }

    pub fn n_arms(&self) -> usize {
        self.spec.n_arms
    }

    pub fn max_n(&self) -> f64 {
        self.schedule.max_n()
    }

    pub fn max_duration(&self) -> f64 {
        duration(self.max_n(), self.spec.recruitment_rate)
    }
}

/// True mean differences `theta[k] = mu_k - mu_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectConfig {
    pub theta: Vec<f64>,
}

impl EffectConfig {
    pub fn global_null(n_arms: usize) -> Self {
        Self { theta: vec![0.0; n_arms] }
    }

    /// Least favourable configuration for arm `k`.
    pub fn lfc(spec: &DesignSpec, k: usize) -> Self {
        let mut theta = vec![spec.theta_null; spec.n_arms];
        theta[k] = spec.theta_interesting;
        Self { theta }
    }

    pub fn check(&self, n_arms: usize) -> Result<()> {
        if self.theta.len() != n_arms {
            return Err(Error::Shape(format!("{} effects for {n_arms} arms", self.theta.len())));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("effects must be finite".into()));
        }
        Ok(())
    }
}
