//! Constrained least-squares fit of the attachment point.
//!
//! [`minimize`] is a small-scale SQP method: at each iterate it solves a
//! quadratic model of the Lagrangian subject to the linearized tension
//! constraints, then backtracks on an ℓ1 exact-penalty merit function. The
//! QP Hessian is the exact Lagrangian Hessian with its eigenvalues floored to
//! keep it positive definite. Infeasible starts are fine: the linearized
//! constraints pull the iterate back, and inconsistent linearizations fall
//! back to an elastic (slack-penalized) subproblem.
//!
//! [`fit`] wraps [`minimize`] in the reseeding schedule: rerun from the
//! previous answer until the MSE target is met or the restart budget runs out,
//! keeping the best feasible iterate seen.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{ModelData, ModelEval, Trial};
use crate::qp::{self, QpError};

/// Step halvings allowed in the line search before giving up.
pub const MAX_HALVINGS: usize = 30;

const ARMIJO: f64 = 1e-4;
/// Merit slack in units of rounding error on the squared force scale.
const MERIT_NOISE_ULPS: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Reseed while the MSE is above this, N².
    pub mse_target: f64,
    pub max_restarts: usize,
    pub max_iterations_per_run: usize,
    /// Stop when a step is shorter than this times `max(1, |x|)`, m.
    pub relative_step_tolerance: f64,
    /// Stop when the cost changes by less than this fraction of itself.
    pub relative_cost_tolerance: f64,
    /// Allowed `l - |d_t|`, m.
    pub constraint_tolerance: f64,
    /// Stationarity threshold `|∇f + Σ λ ∇c|` for declaring convergence, N²/m.
    pub optimality_tolerance: f64,
    /// Length of the initial offset from the fruit; `None` means the resting
    /// length.
    pub initial_offset_magnitude: Option<f64>,
    /// Record every iterate in [`FitResult::trace`].
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mse_target: 5.0,
            max_restarts: 5,
            max_iterations_per_run: 300,
            relative_step_tolerance: 1e-8,
            relative_cost_tolerance: 1e-10,
            constraint_tolerance: 1e-8,
            optimality_tolerance: 1e-6,
            initial_offset_magnitude: None,
            trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mse_target", self.mse_target),
            ("relative_step_tolerance", self.relative_step_tolerance),
            ("relative_cost_tolerance", self.relative_cost_tolerance),
            ("constraint_tolerance", self.constraint_tolerance),
            ("optimality_tolerance", self.optimality_tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.max_iterations_per_run == 0 {
            return Err(Error::InvalidConfig("max_iterations_per_run must be >= 1".into()));
        }
        if let Some(m) = self.initial_offset_magnitude {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "initial_offset_magnitude must be > 0, got {m}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub r_o: Vec3,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Estimated attachment point, world frame, m.
    pub r_o_hat: Vec3,
    /// Cost at `r_o_hat`, N².
    pub final_mse: f64,
    pub iterations_total: usize,
    pub restarts_used: usize,
    /// Wall time across all runs, s.
    pub runtime: f64,
    pub converged: bool,
    /// `max(0, max_t l - |d_t|)` at `r_o_hat`, m.
    pub max_constraint_violation: f64,
    /// Best-so-far MSE after each run (first run plus every restart).
    pub mse_history: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<Vec<TraceEntry>>,
}

impl FitResult {
    fn is_feasible(&self, tol: f64) -> bool {
        self.max_constraint_violation <= tol
    }
}

/// Starting point `r_a,0 + l û`, with `û` the unit mean of the world-frame
/// measured forces (world `+z` when that mean is below 1e-9 N).
pub fn initial_guess(trial: &Trial) -> Result<Vec3> {
    let data = ModelData::from_trial(trial)?;
    Ok(initial_guess_from(&data, trial.spring().l))
}

fn initial_guess_from(data: &ModelData, offset: f64) -> Vec3 {
    let mean = data.measured_forces.iter().sum::<Vec3>() / data.len() as f64;
    let dir = if mean.norm() < 1e-9 {
        Vec3::z()
    } else {
        mean.normalize()
    };
    data.fruit_positions[0] + dir * offset
}

/// One SQP run from `x0`.
pub fn minimize(trial: &Trial, x0: &Vec3, config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    let data = ModelData::from_trial(trial)?;
    let start = Instant::now();
    let mut result = minimize_data(&data, x0, config)?;
    result.runtime = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Full procedure: initial guess, SQP, then reseeding until the MSE target is
/// met or `max_restarts` reruns have been spent.
pub fn fit(trial: &Trial, config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    let start = Instant::now();
    let data = ModelData::from_trial(trial)?;
    let offset = config
        .initial_offset_magnitude
        .unwrap_or(data.spring.l);
    let x0 = initial_guess_from(&data, offset);

    let mut best = minimize_data(&data, &x0, config)?;
    let mut iterations_total = best.iterations_total;
    let mut trace = best.trace.take();
    let mut history = vec![best.final_mse];
    let mut restarts_used = 0;

    while best.final_mse > config.mse_target && restarts_used < config.max_restarts {
        restarts_used += 1;
        let run = match minimize_data(&data, &best.r_o_hat, config) {
            Ok(run) => run,
            Err(e) => {
                log::warn!("trial {}: restart {restarts_used} failed: {e}", trial.id());
                history.push(best.final_mse);
                break;
            }
        };
        iterations_total += run.iterations_total;
        if let (Some(t), Some(new)) = (trace.as_mut(), run.trace.as_ref()) {
            let offset = t.last().map_or(0, |e: &TraceEntry| e.iteration + 1);
            t.extend(new.iter().map(|e| TraceEntry {
                iteration: e.iteration + offset,
                ..e.clone()
            }));
        }
        if improves(&run, &best, config.constraint_tolerance) {
            best = run;
        }
        history.push(best.final_mse);
    }

    best.iterations_total = iterations_total;
    best.restarts_used = restarts_used;
    best.mse_history = history;
    best.trace = trace;
    best.runtime = start.elapsed().as_secs_f64();
    Ok(best)
}

/// Feasible beats infeasible; then lower cost (or lower violation); exact
/// ties go to the converged candidate.
fn improves(candidate: &FitResult, incumbent: &FitResult, tol: f64) -> bool {
    match (candidate.is_feasible(tol), incumbent.is_feasible(tol)) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => {
            candidate.final_mse < incumbent.final_mse
                || (candidate.final_mse == incumbent.final_mse
                    && candidate.converged
                    && !incumbent.converged)
        }
        (false, false) => candidate.max_constraint_violation < incumbent.max_constraint_violation,
    }
}

struct Step {
    direction: Vec3,
    multipliers: Vec<f64>,
}

/// Solves the SQP subproblem, switching to the elastic form when the
/// linearized constraints are inconsistent.
fn qp_step(hessian: &Matrix3<f64>, eval: &ModelEval, penalty: f64) -> Result<Step> {
    let h = DMatrix::from_iterator(3, 3, hessian.iter().copied());
    let g = DVector::from_column_slice(eval.gradient.as_slice());
    let a: Vec<DVector<f64>> = eval
        .constraint_jacobian
        .iter()
        .map(|j| DVector::from_column_slice(j.as_slice()))
        .collect();
    let b: Vec<f64> = eval.constraint_values.iter().map(|c| -c).collect();

    match qp::solve(&h, &g, &a, &b) {
        Ok(sol) => Ok(Step {
            direction: Vec3::new(sol.x[0], sol.x[1], sol.x[2]),
            multipliers: sol.multipliers.iter().copied().collect(),
        }),
        Err(QpError::Infeasible) | Err(QpError::IterationLimit) => {
            // Variables (p, s): aᵀp - s ≤ -c, s ≥ 0, cost + ρ s + ½ε s².
            let scale = hessian.diagonal().max().max(1.0);
            let mut he = DMatrix::zeros(4, 4);
            he.view_mut((0, 0), (3, 3)).copy_from(&h);
            he[(3, 3)] = 1e-6 * scale;
            let rho = penalty.max(1.0) * 10.0;
            let ge = DVector::from_column_slice(&[g[0], g[1], g[2], rho]);
            let mut ae: Vec<DVector<f64>> = a
                .iter()
                .map(|ai| DVector::from_column_slice(&[ai[0], ai[1], ai[2], -1.0]))
                .collect();
            let mut be = b.clone();
            ae.push(DVector::from_column_slice(&[0.0, 0.0, 0.0, -1.0]));
            be.push(0.0);
            let sol = qp::solve(&he, &ge, &ae, &be).map_err(|e| Error::EvaluationFailure {
                halvings: 0,
                reason: format!("elastic subproblem failed: {e}"),
            })?;
            Ok(Step {
                direction: Vec3::new(sol.x[0], sol.x[1], sol.x[2]),
                multipliers: sol.multipliers.iter().take(a.len()).copied().collect(),
            })
        }
        Err(e) => Err(Error::EvaluationFailure {
            halvings: 0,
            reason: format!("QP subproblem failed: {e}"),
        }),
    }
}

/// Symmetric matrix with eigenvalues replaced by their absolute values, floored.
fn positive_definite(h: &Matrix3<f64>, floor_scale: f64) -> Matrix3<f64> {
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let floor = 1e-8 * floor_scale.max(f64::MIN_POSITIVE);
    let clamped = eig.eigenvalues.map(|v| v.abs().max(floor));
    eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

fn stationarity(eval: &ModelEval, multipliers: &[f64]) -> f64 {
    eval.constraint_jacobian
        .iter()
        .zip(multipliers)
        .fold(eval.gradient, |acc, (a, &l)| acc + a * l)
        .norm()
}

fn minimize_data(data: &ModelData, x0: &Vec3, config: &SolverConfig) -> Result<FitResult> {
    let tol_c = config.constraint_tolerance;
    let mut x = *x0;
    let mut eval = data.evaluate(&x)?;
    let mut multipliers = vec![0.0; data.len()];
    let mut penalty = 0.0_f64;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = false;
    let mut trace = config.trace.then(Vec::new);
    // Cost differences below this are rounding noise, so near the optimum
    // the Armijo test must not insist on resolving them.
    let force_power = data.measured_forces.iter().map(|f| f.norm_squared()).sum::<f64>() / data.len() as f64;
    let merit_noise = MERIT_NOISE_ULPS * f64::EPSILON * force_power;

    // Best feasible iterate seen in this run: (x, cost, violation).
    let mut best: Option<(Vec3, f64, f64)> = None;

    loop {
        let violation = eval.max_violation();
        if let Some(t) = trace.as_mut() {
            t.push(TraceEntry {
                iteration: iterations,
                r_o: x,
                cost: eval.cost,
            });
        }
        if violation <= tol_c && best.is_none_or(|(_, c, _)| eval.cost <= c) {
            best = Some((x, eval.cost, violation));
        }

        let gn = data.gauss_newton_hessian(&x)?;
        let lagrangian = data.cost_hessian(&x)? + data.constraint_curvature(&x, &multipliers)?;
        let hessian = positive_definite(&lagrangian, gn.trace() / 3.0);
        let step = qp_step(&hessian, &eval, penalty)?;
        multipliers = step.multipliers;

        if violation <= tol_c && stationarity(&eval, &multipliers) < config.optimality_tolerance {
            converged = true;
            break;
        }
        if stalled || iterations >= config.max_iterations_per_run {
            break;
        }

        let max_multiplier = multipliers.iter().fold(0.0_f64, |m, &l| m.max(l));
        penalty = penalty.max(2.0 * max_multiplier + 1e-6);

        let violation_sum: f64 = eval.constraint_values.iter().map(|c| c.max(0.0)).sum();
        let merit = eval.cost + penalty * violation_sum;
        let slope = eval.gradient.dot(&step.direction) - penalty * violation_sum;

        let p = step.direction;
        let mut alpha = 1.0;
        let mut accepted = None;
        let mut singular_hits = 0;
        for _ in 0..=MAX_HALVINGS {
            let trial_x = x + p * alpha;
            match data.cost_summary(&trial_x) {
                Ok(s) => {
                    let trial_merit = s.cost + penalty * s.violation_sum;
                    if trial_merit <= merit + ARMIJO * alpha * slope.min(0.0) + merit_noise {
                        accepted = Some((trial_x, s.cost));
                        break;
                    }
                }
                Err(Error::Singularity { .. }) => singular_hits += 1,
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        iterations += 1;

        let Some((new_x, new_cost)) = accepted else {
            if singular_hits > 0 {
                return Err(Error::EvaluationFailure {
                    halvings: MAX_HALVINGS,
                    reason: "iterate hit the spring singularity".into(),
                });
            }
            // No merit decrease at machine precision: judge the current point.
            stalled = true;
            continue;
        };

        let step_len = (new_x - x).norm();
        let cost_change = (eval.cost - new_cost).abs();
        x = new_x;
        eval = data.evaluate(&x)?;
        if step_len <= config.relative_step_tolerance * x.norm().max(1.0)
            || cost_change <= config.relative_cost_tolerance * eval.cost
        {
            stalled = true;
        }
    }

    // A converged end point wins unless an earlier feasible iterate is
    // meaningfully cheaper.
    let final_violation = eval.max_violation();
    let (r_o_hat, final_mse, max_violation, converged) = match best {
        Some((bx, bc, bv))
            if !converged || bc < eval.cost - 1e-12 * (1.0 + eval.cost) =>
        {
            (bx, bc, bv, false)
        }
        _ if converged => (x, eval.cost, final_violation, true),
        _ => (x, eval.cost, final_violation, false),
    };

    Ok(FitResult {
        r_o_hat,
        final_mse,
        iterations_total: iterations,
        restarts_used: 0,
        runtime: 0.0,
        converged,
        max_constraint_violation: max_violation,
        mse_history: vec![final_mse],
        trace,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::geometry::{RigidTransform, Wrench};
    use crate::model::{predict_force, Label, SpringParams, TrialSample};

    fn straight_pull(forces: impl Fn(usize) -> Vec3, r_a0: Vec3, l: f64) -> Trial {
        let samples = (0..10)
            .map(|i| TrialSample {
                t: i as f64 * 0.002,
                pose: RigidTransform::from_translation(r_a0 + Vec3::new(-0.001 * i as f64, 0.0, 0.0)),
                wrench: Wrench::sensor(forces(i), Vec3::zeros()),
            })
            .collect();
        Trial::new(
            "t",
            Label::Success,
            SpringParams::new(632.0, l).unwrap(),
            Vec3::zeros(),
            None,
            samples,
        )
        .unwrap()
    }

    #[test]
    fn initial_guess_along_mean_force() {
        let trial = straight_pull(|_| Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), 0.1);
        assert_abs_diff_eq!(initial_guess(&trial).unwrap(), Vec3::new(0.0, 0.0, 0.1), epsilon = 1e-15);

        let trial = straight_pull(|_| Vec3::zeros(), Vec3::new(0.3, 0.2, 0.1), 0.1);
        assert_abs_diff_eq!(
            initial_guess(&trial).unwrap(),
            Vec3::new(0.3, 0.2, 0.2),
            epsilon = 1e-15
        );

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let trial = straight_pull(|i| Vec3::new(s, s, 0.0) * (i as f64 + 1.0), Vec3::new(1.0, 0.0, 0.0), 0.2);
        let expected = Vec3::new(1.0 + 0.2 * s, 0.2 * s, 0.0);
        assert_abs_diff_eq!(initial_guess(&trial).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn starting_at_the_optimum_converges_immediately() {
        let l = 0.1;
        let sp = SpringParams::new(632.0, l).unwrap();
        let r_o = Vec3::new(0.2, 0.05, 0.1);
        let trial = straight_pull(
            |i| predict_force(&r_o, &Vec3::new(-0.001 * i as f64, 0.0, 0.0), &sp).unwrap(),
            Vec3::zeros(),
            l,
        );
        let res = minimize(&trial, &r_o, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations_total <= 2);
        assert_abs_diff_eq!(res.r_o_hat, r_o, epsilon = 1e-9);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        assert!(c.validate().is_ok());
        c.constraint_tolerance = 0.0;
        assert!(c.validate().is_err());
        let c = SolverConfig {
            max_iterations_per_run: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c: SolverConfig = serde_json::from_str(r#"{"mse_target": 2.5}"#).unwrap();
        assert_eq!(c.mse_target, 2.5);
        assert_eq!(c.max_restarts, 5);
        assert!(serde_json::from_str::<SolverConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn positive_definite_floors_negative_eigenvalues() {
        let h = Matrix3::from_diagonal(&Vec3::new(4.0, -1.0, 0.0));
        let pd = positive_definite(&h, 4.0);
        let eig = SymmetricEigen::new(pd);
        assert!(eig.eigenvalues.iter().all(|&v| v > 0.0));
        assert_abs_diff_eq!(eig.eigenvalues.max(), 4.0, epsilon = 1e-12);
    }
}
