//! Spring-tether model of the fruit/peduncle system and the fitting cost.
//!
//! The peduncle is an ideal linear spring of stiffness `k` and resting length
//! `l` between the fixed attachment point `r_O` (world frame) and the fruit,
//! which is rigidly held at `grasp_point` in the sensor frame. The cost is the
//! mean squared difference between measured (world-frame) and predicted
//! forces; the tension constraints are `l - |r_O - r_a,t| <= 0`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{adjoint_wrench_to_world, Frame, RigidTransform, Vec3, Wrench};

/// Distances at or below this make the spring direction undefined.
pub const SINGULAR_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringParams {
    /// Stiffness, N/m.
    pub k: f64,
    /// Resting length, m.
    pub l: f64,
}

impl SpringParams {
    pub fn new(k: f64, l: f64) -> Result<Self> {
        let s = Self { k, l };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::InvalidTrial(format!("spring stiffness must be > 0, got {}", self.k)));
        }
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(Error::InvalidTrial(format!("resting length must be > 0, got {}", self.l)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Success,
    Failure,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Success => "success",
            Label::Failure => "failure",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One synchronized reading: time, wrist pose `{W}←{S}`, sensor-frame wrench.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSample {
    pub t: f64,
    pub pose: RigidTransform,
    pub wrench: Wrench,
}

/// A validated pull recording. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    id: String,
    label: Label,
    spring: SpringParams,
    grasp_point: Vec3,
    ground_truth: Option<Vec3>,
    samples: Vec<TrialSample>,
}

fn finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

impl Trial {
    pub fn new(
        id: impl Into<String>,
        label: Label,
        spring: SpringParams,
        grasp_point: Vec3,
        ground_truth: Option<Vec3>,
        samples: Vec<TrialSample>,
    ) -> Result<Self> {
        spring.validate()?;
        if samples.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: samples.len(),
            });
        }
        if !finite(&grasp_point) {
            return Err(Error::InvalidTrial("grasp point is not finite".into()));
        }
        for (index, s) in samples.iter().enumerate() {
            let bad = |message: &str| Error::Validation {
                index,
                message: message.to_string(),
            };
            if !s.t.is_finite() {
                return Err(bad("timestamp is not finite"));
            }
            if index > 0 && s.t <= samples[index - 1].t {
                return Err(bad("timestamps must be strictly increasing"));
            }
            if s.wrench.frame != Frame::Sensor {
                return Err(bad("wrench must be expressed in the sensor frame"));
            }
            if !finite(&s.pose.translation)
                || !finite(&s.wrench.force)
                || !finite(&s.wrench.torque)
                || !s.pose.rotation.coords.iter().all(|c| c.is_finite())
            {
                return Err(bad("non-finite pose or wrench component"));
            }
        }
        if let Some(gt) = ground_truth {
            if !finite(&gt) {
                return Err(Error::InvalidTrial("ground truth is not finite".into()));
            }
            let gap = (gt - samples[0].pose.transform_point(&grasp_point)).norm();
            if !(gap.is_finite() && gap > 0.0) {
                return Err(Error::InvalidTrial(
                    "ground truth coincides with the initial fruit position".into(),
                ));
            }
        }
        Ok(Self {
            id: id.into(),
            label,
            spring,
            grasp_point,
            ground_truth,
            samples,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn spring(&self) -> SpringParams {
        self.spring
    }

    pub fn grasp_point(&self) -> Vec3 {
        self.grasp_point
    }

    pub fn ground_truth(&self) -> Option<Vec3> {
        self.ground_truth
    }

    pub fn samples(&self) -> &[TrialSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fruit position at the first sample, `r_a,0`.
    pub fn initial_fruit_position(&self) -> Vec3 {
        apple_position_world(&self.samples[0], &self.grasp_point)
    }

    /// Same trial with every sample's pose pre-multiplied by `frame`, and the
    /// ground truth carried along. Used to re-express a trial in another world
    /// frame.
    pub fn rebased(&self, frame: &RigidTransform) -> Trial {
        let samples = self
            .samples
            .iter()
            .map(|s| TrialSample {
                pose: frame.compose(&s.pose),
                ..*s
            })
            .collect();
        Trial {
            samples,
            ground_truth: self.ground_truth.map(|g| frame.transform_point(&g)),
            ..self.clone()
        }
    }

    pub fn with_ground_truth(&self, ground_truth: Option<Vec3>) -> Trial {
        Trial {
            ground_truth,
            ..self.clone()
        }
    }
}

/// Values and first derivatives of the fitting problem at one candidate `r_O`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEval {
    /// Mean squared force residual, N².
    pub cost: f64,
    /// ∂cost/∂r_O, N²/m.
    pub gradient: Vec3,
    /// `l - |d_t|` per sample, m.
    pub constraint_values: Vec<f64>,
    /// ∂(l - |d_t|)/∂r_O = `-d_t / |d_t|` per sample.
    pub constraint_jacobian: Vec<Vec3>,
}

impl ModelEval {
    /// Largest positive constraint value, 0 when feasible.
    pub fn max_violation(&self) -> f64 {
        self.constraint_values
            .iter()
            .fold(0.0_f64, |acc, &c| acc.max(c))
    }
}

/// `r_a,t`: the grasp point carried into the world frame by the sample pose.
pub fn apple_position_world(sample: &TrialSample, grasp_point: &Vec3) -> Vec3 {
    sample.pose.transform_point(grasp_point)
}

fn spring_vector(r_o: &Vec3, r_a: &Vec3, sample: usize) -> Result<(Vec3, f64)> {
    let d = r_o - r_a;
    let dist = d.norm();
    if !(dist > SINGULAR_DISTANCE) {
        return Err(Error::Singularity {
            sample,
            distance: dist,
        });
    }
    Ok((d, dist))
}

/// `k (|d| - l) d / |d|` with `d = r_O - r_a,t`. Compression (`|d| < l`) is
/// evaluated as written and yields a force pointing away from `r_O`.
pub fn predict_force(r_o: &Vec3, r_a_t: &Vec3, spring: &SpringParams) -> Result<Vec3> {
    let (d, dist) = spring_vector(r_o, r_a_t, 0)?;
    Ok(d * (spring.k * (dist - spring.l) / dist))
}

/// `∂F_pred/∂r_O = k [(1 - l/|d|) I + (l/|d|³) d dᵀ]`.
pub fn force_jacobian(d: &Vec3, dist: f64, spring: &SpringParams) -> Matrix3<f64> {
    let ratio = spring.l / dist;
    (Matrix3::identity() * (1.0 - ratio) + d * d.transpose() * (ratio / (dist * dist))) * spring.k
}

/// A trial reduced to what the cost needs: fruit positions and measured
/// forces, both in the world frame.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub spring: SpringParams,
    pub fruit_positions: Vec<Vec3>,
    pub measured_forces: Vec<Vec3>,
}

/// Cost and constraint summary without derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSummary {
    pub cost: f64,
    /// Sum of positive constraint values.
    pub violation_sum: f64,
    pub max_violation: f64,
}

impl ModelData {
    pub fn from_trial(trial: &Trial) -> Result<Self> {
        let mut fruit_positions = Vec::with_capacity(trial.len());
        let mut measured_forces = Vec::with_capacity(trial.len());
        for s in trial.samples() {
            fruit_positions.push(apple_position_world(s, &trial.grasp_point()));
            measured_forces.push(adjoint_wrench_to_world(&s.pose, &s.wrench)?.force);
        }
        Ok(Self {
            spring: trial.spring(),
            fruit_positions,
            measured_forces,
        })
    }

    pub fn len(&self) -> usize {
        self.fruit_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fruit_positions.is_empty()
    }

    pub fn evaluate(&self, r_o: &Vec3) -> Result<ModelEval> {
        let n = self.len() as f64;
        let mut cost = 0.0;
        let mut gradient = Vec3::zeros();
        let mut constraint_values = Vec::with_capacity(self.len());
        let mut constraint_jacobian = Vec::with_capacity(self.len());
        for (i, (r_a, f_meas)) in self
            .fruit_positions
            .iter()
            .zip(&self.measured_forces)
            .enumerate()
        {
            let (d, dist) = spring_vector(r_o, r_a, i)?;
            let f_pred = d * (self.spring.k * (dist - self.spring.l) / dist);
            let residual = f_pred - f_meas;
            cost += residual.norm_squared();
            gradient += force_jacobian(&d, dist, &self.spring) * residual;
            constraint_values.push(self.spring.l - dist);
            constraint_jacobian.push(-d / dist);
        }
        Ok(ModelEval {
            cost: cost / n,
            gradient: gradient * (2.0 / n),
            constraint_values,
            constraint_jacobian,
        })
    }

    /// Gauss–Newton approximation `(2/n) Σ J_tᵀ J_t` of the cost Hessian.
    pub fn gauss_newton_hessian(&self, r_o: &Vec3) -> Result<Matrix3<f64>> {
        let mut h = Matrix3::zeros();
        for (i, r_a) in self.fruit_positions.iter().enumerate() {
            let (d, dist) = spring_vector(r_o, r_a, i)?;
            let j = force_jacobian(&d, dist, &self.spring);
            h += j.transpose() * j;
        }
        Ok(h * (2.0 / self.len() as f64))
    }

    /// Exact Hessian of the cost. Adds the residual-curvature term
    /// `(k l / |d|³) [r dᵀ + d rᵀ + (r·d)(I - 3 d̂ d̂ᵀ)]` per sample to the
    /// Gauss–Newton part, with `r = F_pred - F_meas`. May be indefinite.
    pub fn cost_hessian(&self, r_o: &Vec3) -> Result<Matrix3<f64>> {
        let mut h = Matrix3::zeros();
        for (i, (r_a, f_meas)) in self
            .fruit_positions
            .iter()
            .zip(&self.measured_forces)
            .enumerate()
        {
            let (d, dist) = spring_vector(r_o, r_a, i)?;
            let j = force_jacobian(&d, dist, &self.spring);
            let r = d * (self.spring.k * (dist - self.spring.l) / dist) - f_meas;
            let u = d / dist;
            let rd = r.dot(&d);
            let curvature = (r * d.transpose() + d * r.transpose()
                + (Matrix3::identity() - u * u.transpose() * 3.0) * rd)
                * (self.spring.k * self.spring.l / (dist * dist * dist));
            h += j.transpose() * j + curvature;
        }
        Ok(h * (2.0 / self.len() as f64))
    }

    /// Σ λ_t ∇²(l - |d_t|) = -Σ λ_t (I - d̂ d̂ᵀ) / |d_t|.
    pub fn constraint_curvature(&self, r_o: &Vec3, multipliers: &[f64]) -> Result<Matrix3<f64>> {
        let mut h = Matrix3::zeros();
        for (i, (r_a, &lambda)) in self.fruit_positions.iter().zip(multipliers).enumerate() {
            if lambda == 0.0 {
                continue;
            }
            let (d, dist) = spring_vector(r_o, r_a, i)?;
            let u = d / dist;
            h -= (Matrix3::identity() - u * u.transpose()) * (lambda / dist);
        }
        Ok(h)
    }

    pub fn cost_summary(&self, r_o: &Vec3) -> Result<CostSummary> {
        let mut cost = 0.0;
        let mut violation_sum = 0.0;
        let mut max_violation = 0.0_f64;
        for (i, (r_a, f_meas)) in self
            .fruit_positions
            .iter()
            .zip(&self.measured_forces)
            .enumerate()
        {
            let (d, dist) = spring_vector(r_o, r_a, i)?;
            let f_pred = d * (self.spring.k * (dist - self.spring.l) / dist);
            cost += (f_pred - f_meas).norm_squared();
            let c = self.spring.l - dist;
            if c > 0.0 {
                violation_sum += c;
                max_violation = max_violation.max(c);
            }
        }
        Ok(CostSummary {
            cost: cost / self.len() as f64,
            violation_sum,
            max_violation,
        })
    }
}

/// Cost, gradient and constraints of `trial` at `r_o`.
pub fn evaluate(r_o: &Vec3, trial: &Trial) -> Result<ModelEval> {
    ModelData::from_trial(trial)?.evaluate(r_o)
}

/// Subtracts the first sample's wrench from every sample so the fit sees zero
/// force at rest.
pub fn bias_compensate(trial: &Trial) -> Trial {
    let bias = trial.samples[0].wrench;
    let samples = trial
        .samples
        .iter()
        .map(|s| TrialSample {
            wrench: Wrench {
                force: s.wrench.force - bias.force,
                torque: s.wrench.torque - bias.torque,
                frame: s.wrench.frame,
            },
            ..*s
        })
        .collect();
    Trial {
        samples,
        ..trial.clone()
    }
}
