//! Synthetic pull trials.
//!
//! Each trial draws an attachment point from a box, an end-effector
//! orientation from the quarter sphere of approach directions, and a peduncle
//! direction within a cone around the palm normal. The fruit starts at rest
//! (spring at its resting length) and the hand pulls straight back along the
//! palm normal at constant speed. Forces are recorded in the sensor frame with
//! Gaussian noise until the tension reaches the force cap.
//!
//! Grasp compliance makes the fruit drift in the hand under load,
//! `r_a^S(t) = r_a^S(0) + C f_S(t)`, which violates the rigid-grasp
//! assumption the fit relies on.
//!
//! Sensor-frame convention: `+z` is the palm normal, pointing from the palm
//! toward the fruit. Pulling back moves the hand along `-z`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, UnitQuaternion, Vec3, Wrench};
use crate::model::{force_jacobian, predict_force, Label, SpringParams, Trial, TrialSample};

/// Stream reserved for corpus-level draws (label shuffling).
const CORPUS_STREAM: u64 = u64::MAX;

/// Redraws of the trial geometry before giving up on reaching the cap.
const GEOMETRY_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttachmentRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for AttachmentRegion {
    fn default() -> Self {
        Self {
            min: [0.5, -0.3, 0.3],
            max: [0.9, 0.3, 0.7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Spring stiffness, N/m.
    pub k: f64,
    /// Spring resting length, m.
    pub l: f64,
    pub pull_distance: f64,
    /// m/s
    pub pull_speed: f64,
    /// Hz
    pub sample_rate: f64,
    /// Tension at which the recording stops, N.
    pub force_cap: f64,
    /// Per-axis standard deviation of the force noise, N.
    pub noise_sigma: f64,
    /// Grasp compliance in the sensor frame, m/N (row-major, symmetric PSD).
    pub grasp_compliance: [[f64; 3]; 3],
    pub attachment_region: AttachmentRegion,
    /// Fruit center in the sensor frame, m.
    pub grasp_point: [f64; 3],
    /// Angle between the peduncle and the palm normal, degrees `[min, max]`.
    pub off_axis_range_deg: [f64; 2],
    /// Compliance drawn for failure trials along the palm normal, m/N. The
    /// lateral compliance is half of it.
    pub failure_compliance_range: [f64; 2],
    /// Constant sensor-frame force offset, N.
    pub force_bias: [f64; 3],
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k: 632.0,
            l: 0.10,
            pull_distance: 0.15,
            pull_speed: 0.33,
            sample_rate: 500.0,
            force_cap: 5.0,
            noise_sigma: 0.1,
            grasp_compliance: [[0.0; 3]; 3],
            attachment_region: AttachmentRegion::default(),
            grasp_point: [0.0, 0.0, 0.06],
            off_axis_range_deg: [0.0, 80.0],
            failure_compliance_range: [0.002, 0.008],
            force_bias: [0.0; 3],
            seed: 0,
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")))
    }
}

fn compliance_is_psd(c: &Matrix3<f64>) -> bool {
    let sym_err = (c - c.transpose()).amax();
    if sym_err > 1e-12 * c.amax().max(1.0) {
        return false;
    }
    SymmetricEigen::new(*c).eigenvalues.iter().all(|&v| v >= -1e-15)
}

impl SimConfig {
    pub fn compliance(&self) -> Matrix3<f64> {
        let c = &self.grasp_compliance;
        Matrix3::new(
            c[0][0], c[0][1], c[0][2], c[1][0], c[1][1], c[1][2], c[2][0], c[2][1], c[2][2],
        )
    }

    pub fn spring(&self) -> SpringParams {
        SpringParams { k: self.k, l: self.l }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("k", self.k)?;
        check_positive("l", self.l)?;
        check_positive("pull_distance", self.pull_distance)?;
        check_positive("pull_speed", self.pull_speed)?;
        check_positive("sample_rate", self.sample_rate)?;
        check_positive("force_cap", self.force_cap)?;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        if !compliance_is_psd(&self.compliance()) {
            return Err(Error::InvalidConfig(
                "grasp_compliance must be symmetric positive semidefinite".into(),
            ));
        }
        let r = &self.attachment_region;
        if (0..3).any(|i| !(r.min[i].is_finite() && r.max[i].is_finite() && r.min[i] <= r.max[i])) {
            return Err(Error::InvalidConfig("attachment_region min must be <= max".into()));
        }
        let [lo, hi] = self.off_axis_range_deg;
        if !(0.0..=90.0).contains(&lo) || !(lo..=90.0).contains(&hi) {
            return Err(Error::InvalidConfig(
                "off_axis_range_deg must satisfy 0 <= min <= max <= 90".into(),
            ));
        }
        let [clo, chi] = self.failure_compliance_range;
        if !(clo.is_finite() && chi.is_finite() && 0.0 < clo && clo <= chi) {
            return Err(Error::InvalidConfig(
                "failure_compliance_range must satisfy 0 < min <= max".into(),
            ));
        }
        if self.grasp_point.iter().chain(&self.force_bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("grasp_point and force_bias must be finite".into()));
        }
        // Least stretch over the allowed geometry is at the widest off-axis
        // angle, for a rigid grasp.
        let (l, d) = (self.l, self.pull_distance);
        let cos_max = hi.to_radians().cos();
        let stretch = (l * l + 2.0 * l * d * cos_max + d * d).sqrt() - l;
        if self.k * stretch < self.force_cap {
            return Err(Error::InvalidConfig(format!(
                "pull_distance {d} m cannot reach the {} N force cap (max tension {:.3} N)",
                self.force_cap,
                self.k * stretch
            )));
        }
        Ok(())
    }

    /// Digest of the canonical JSON form, used to tie corpora to configs.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Ground-truth record of one synthetic trial.
#[derive(Debug, Clone)]
pub struct SimTrialRecord {
    pub trial: Trial,
    /// Unit direction the hand moved in, world frame.
    pub true_pull_direction: Vec3,
    /// Unit direction from the fruit to the attachment point at rest.
    pub peduncle_direction: Vec3,
    pub orientation: UnitQuaternion,
    pub compliance_applied: bool,
}

/// Deterministic generator for trial `index` of a corpus seeded with `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Palm normal of an orientation (sensor `+z` in the world frame).
pub fn palm_normal(q: &UnitQuaternion) -> Vec3 {
    q * Vec3::z()
}

/// Elevation and azimuth of a direction, degrees.
pub fn elevation_azimuth(n: &Vec3) -> (f64, f64) {
    let elevation = n.z.clamp(-1.0, 1.0).asin().to_degrees();
    let azimuth = n.y.atan2(n.x).to_degrees();
    (elevation, azimuth)
}

/// Area-uniform end-effector orientation on the quarter sphere: palm normal
/// elevation in `[0°, 90°]` above horizontal, azimuth in `[-90°, 90°]` about
/// the base `+x` axis (from `-y` through `+x` to `+y`), uniform roll about the
/// normal.
pub fn sample_orientation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    let elevation = rng.random::<f64>().asin();
    let azimuth = (rng.random::<f64>() - 0.5) * PI;
    let roll = rng.random::<f64>() * 2.0 * PI;
    let n = Vec3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    );
    let align = UnitQuaternion::rotation_between(&Vec3::z(), &n)
        .expect("normal is never antiparallel to +z");
    align * UnitQuaternion::from_axis_angle(&Vec3::z_axis(), roll)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Fruit position in equilibrium with the spring for a given hand pose.
///
/// Solves `x = p + C_W F(x)` by Newton iteration, warm-started at `guess`,
/// until the force changes by less than 1e-9 N.
fn compliant_fruit_position(
    r_o: &Vec3,
    rigid_position: &Vec3,
    compliance_world: &Matrix3<f64>,
    spring: &SpringParams,
    guess: &Vec3,
) -> Result<(Vec3, Vec3)> {
    let mut x = *guess;
    let mut force = predict_force(r_o, &x, spring)?;
    for _ in 0..100 {
        let d = r_o - x;
        let dist = d.norm();
        let residual = x - rigid_position - compliance_world * force;
        // ∂F/∂x = -J, so ∂residual/∂x = I + C J.
        let jac = Matrix3::identity() + compliance_world * force_jacobian(&d, dist, spring);
        let delta = jac
            .lu()
            .solve(&residual)
            .ok_or(Error::ComplianceDiverged)?;
        x -= delta;
        let new_force = predict_force(r_o, &x, spring)?;
        let change = (new_force - force).norm();
        force = new_force;
        if change < 1e-9 {
            return Ok((x, force));
        }
    }
    Err(Error::ComplianceDiverged)
}

struct Geometry {
    r_o: Vec3,
    orientation: UnitQuaternion,
    peduncle: Vec3,
}

fn draw_geometry<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Geometry {
    let region = &config.attachment_region;
    let r_o = Vec3::new(
        uniform(rng, region.min[0], region.max[0]),
        uniform(rng, region.min[1], region.max[1]),
        uniform(rng, region.min[2], region.max[2]),
    );
    let orientation = sample_orientation(rng);
    // Area-uniform direction on the cone band around the palm normal.
    let [lo, hi] = config.off_axis_range_deg;
    let cos_alpha = uniform(rng, hi.to_radians().cos(), lo.to_radians().cos());
    let sin_alpha = (1.0 - cos_alpha * cos_alpha).max(0.0).sqrt();
    let phi = uniform(rng, 0.0, 2.0 * PI);
    let local = Vec3::new(sin_alpha * phi.cos(), sin_alpha * phi.sin(), cos_alpha);
    Geometry {
        r_o,
        orientation,
        peduncle: orientation * local,
    }
}

fn simulate_pull<R: Rng + ?Sized>(
    config: &SimConfig,
    geometry: &Geometry,
    rng: &mut R,
    id: &str,
    label: Label,
) -> Result<SimTrialRecord> {
    let spring = config.spring();
    let rotation = geometry.orientation;
    let normal = palm_normal(&rotation);
    let grasp = Vec3::from(config.grasp_point);
    let compliance = config.compliance();
    let compliant = compliance.amax() > 0.0;
    let compliance_world = rotation.to_rotation_matrix() * compliance * rotation.to_rotation_matrix().transpose();
    let bias = Vec3::from(config.force_bias);
    let noise = (config.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, config.noise_sigma).expect("sigma is finite and positive"));

    let r_a0 = geometry.r_o - geometry.peduncle * spring.l;
    let hand0 = r_a0 - rotation * grasp;
    let dt = 1.0 / config.sample_rate;

    let mut samples = Vec::new();
    let mut fruit = r_a0;
    for i in 0.. {
        let t = i as f64 * dt;
        let travel = config.pull_speed * t;
        if travel > config.pull_distance {
            return Err(Error::CapNotReached {
                force_cap: config.force_cap,
                pull_distance: config.pull_distance,
            });
        }
        let pose = RigidTransform::new(rotation, hand0 - normal * travel);
        let rigid = pose.transform_point(&grasp);
        let (position, force_world) = if compliant {
            compliant_fruit_position(&geometry.r_o, &rigid, &compliance_world, &spring, &fruit)?
        } else if i == 0 {
            // Exactly at rest.
            (rigid, Vec3::zeros())
        } else {
            (rigid, predict_force(&geometry.r_o, &rigid, &spring)?)
        };
        if force_world.norm() > config.force_cap {
            break;
        }
        fruit = position;
        let clean = rotation.inverse() * force_world;
        let mut force = clean + bias;
        if let Some(dist) = &noise {
            force += Vec3::new(dist.sample(rng), dist.sample(rng), dist.sample(rng));
        }
        // Torque about the sensor origin from the force acting at the fruit.
        let lever = grasp + compliance * clean;
        samples.push(TrialSample {
            t,
            pose,
            wrench: Wrench::sensor(force, lever.cross(&force)),
        });
    }

    let trial = Trial::new(id, label, spring, grasp, Some(geometry.r_o), samples)?;
    Ok(SimTrialRecord {
        trial,
        true_pull_direction: -normal,
        peduncle_direction: geometry.peduncle,
        orientation: rotation,
        compliance_applied: compliant,
    })
}

/// One synthetic trial, labeled by whether grasp compliance is active.
///
/// Geometry is redrawn (deterministically, from the same generator) when a
/// draw cannot reach the force cap within the pull distance.
pub fn generate_trial<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SimTrialRecord> {
    let label = if config.compliance().amax() > 0.0 {
        Label::Failure
    } else {
        Label::Success
    };
    generate_labeled(config, rng, "sim", label)
}

fn generate_labeled<R: Rng + ?Sized>(
    config: &SimConfig,
    rng: &mut R,
    id: &str,
    label: Label,
) -> Result<SimTrialRecord> {
    config.validate()?;
    let mut last_err = None;
    for _ in 0..GEOMETRY_ATTEMPTS {
        let geometry = draw_geometry(config, rng);
        match simulate_pull(config, &geometry, rng, id, label) {
            Ok(rec) => return Ok(rec),
            Err(e @ (Error::CapNotReached { .. } | Error::ComplianceDiverged)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Sensor-frame compliance for a failure trial: `c` along the palm normal,
/// `c/2` laterally.
fn failure_compliance<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> [[f64; 3]; 3] {
    let [lo, hi] = config.failure_compliance_range;
    let c = uniform(rng, lo, hi);
    [[0.5 * c, 0.0, 0.0], [0.0, 0.5 * c, 0.0], [0.0, 0.0, c]]
}

pub fn trial_id(index: usize) -> String {
    format!("trial-{index:04}")
}

/// `n_trials` records; `round(n_trials * failure_fraction)` of them use a
/// compliant grasp and are labeled [`Label::Failure`]. Labels are assigned by
/// a seeded shuffle and every trial draws from its own generator stream, so
/// the corpus depends only on `(config, n_trials, failure_fraction)`.
pub fn generate_corpus(
    config: &SimConfig,
    n_trials: usize,
    failure_fraction: f64,
) -> Result<Vec<SimTrialRecord>> {
    if !(0.0..=1.0).contains(&failure_fraction) {
        return Err(Error::InvalidConfig(format!(
            "failure_fraction must be in [0, 1], got {failure_fraction}"
        )));
    }
    config.validate()?;
    let n_failure = (n_trials as f64 * failure_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..n_trials)
        .map(|i| if i < n_failure { Label::Failure } else { Label::Success })
        .collect();
    labels.shuffle(&mut trial_rng(config.seed, CORPUS_STREAM));

    labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = trial_rng(config.seed, i as u64);
            let mut cfg = config.clone();
            cfg.grasp_compliance = match label {
                Label::Failure => failure_compliance(config, &mut rng),
                Label::Success => [[0.0; 3]; 3],
            };
            generate_labeled(&cfg, &mut rng, &trial_id(i), label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::model::{apple_position_world, ModelData};

    fn noiseless() -> SimConfig {
        SimConfig {
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn orientations_stay_on_the_quarter_sphere() {
        let mut rng = trial_rng(7, 0);
        for _ in 0..2000 {
            let q = sample_orientation(&mut rng);
            let n = palm_normal(&q);
            assert!(n.z >= 0.0);
            assert!(n.x >= -1e-12, "azimuth outside the half-plane: {n:?}");
            let (_, az) = elevation_azimuth(&n);
            assert!((-90.0 - 1e-9..=90.0 + 1e-9).contains(&az));
        }
    }

    #[test]
    fn first_sample_is_at_rest() {
        let mut rng = trial_rng(3, 1);
        let rec = generate_trial(&noiseless(), &mut rng).unwrap();
        let trial = &rec.trial;
        let r_o = trial.ground_truth().unwrap();
        let r_a0 = trial.initial_fruit_position();
        assert_abs_diff_eq!((r_o - r_a0).norm(), 0.1, epsilon = 1e-9);
        assert!(trial.samples()[0].wrench.force.norm() < 1e-12);
        assert!(!rec.compliance_applied);
        assert_eq!(trial.label(), Label::Success);
    }

    #[test]
    fn noiseless_forces_match_the_model() {
        let config = noiseless();
        let mut rng = trial_rng(11, 4);
        let rec = generate_trial(&config, &mut rng).unwrap();
        let trial = &rec.trial;
        let r_o = trial.ground_truth().unwrap();
        let data = ModelData::from_trial(trial).unwrap();
        for (s, f) in trial.samples().iter().zip(&data.measured_forces) {
            let r_a = apple_position_world(s, &trial.grasp_point());
            let expected = predict_force(&r_o, &r_a, &config.spring()).unwrap();
            assert_abs_diff_eq!(*f, expected, epsilon = 1e-9);
            assert!(f.norm() <= config.force_cap);
        }
        assert!(data.evaluate(&r_o).unwrap().cost < 1e-12);
    }

    #[test]
    fn compliance_breaks_the_model() {
        let config = SimConfig {
            grasp_compliance: [[0.002, 0.0, 0.0], [0.0, 0.002, 0.0], [0.0, 0.0, 0.004]],
            ..noiseless()
        };
        let mut rng = trial_rng(5, 2);
        let rec = generate_trial(&config, &mut rng).unwrap();
        assert!(rec.compliance_applied);
        assert_eq!(rec.trial.label(), Label::Failure);
        let r_o = rec.trial.ground_truth().unwrap();
        let cost = ModelData::from_trial(&rec.trial).unwrap().evaluate(&r_o).unwrap().cost;
        assert!(cost > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig {
            pull_distance: 0.001,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let bad = SimConfig {
            grasp_compliance: [[-0.01, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            grasp_compliance: [[0.0, 0.01, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            noise_sigma: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn corpus_label_counts() {
        let config = SimConfig::default();
        let corpus = generate_corpus(&config, 70, 0.0).unwrap();
        assert_eq!(corpus.len(), 70);
        assert!(corpus.iter().all(|r| r.trial.label() == Label::Success));

        let corpus = generate_corpus(&config, 105, 1.0 / 3.0).unwrap();
        let failures = corpus.iter().filter(|r| r.trial.label() == Label::Failure).count();
        assert_eq!(failures, 35);
        assert_eq!(corpus.len() - failures, 70);
        assert!(corpus
            .iter()
            .all(|r| r.compliance_applied == (r.trial.label() == Label::Failure)));
        assert!(generate_corpus(&config, 10, 1.5).is_err());
    }

    #[test]
    fn corpus_is_deterministic() {
        let config = SimConfig {
            seed: 99,
            ..Default::default()
        };
        let a = generate_corpus(&config, 12, 0.25).unwrap();
        let b = generate_corpus(&config, 12, 0.25).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.trial, y.trial);
        }
    }
}
