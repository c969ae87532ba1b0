//! Batch scaling experiments: minimize the elastic energy on shrinking
//! balls or tubes, fit the scaling exponent on a log-log grid, and emit
//! machine-readable reports.
//!
//! Rows (distinct radii) are independent jobs and run in parallel; the
//! report is an ordered merge, so identical configs produce byte-identical
//! canonical JSON.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{
    identity_energy_curve, minimize_energy_on, IdentityEnergyRow, MinimizeOptions,
};
use crate::geometry::NormalMetric;
use crate::norm::curvature_norm;
use crate::quadrature::{BallQuadrature, TubeQuadrature};
use crate::{Error, Result};

/// Energies at or below this floor are treated as exactly zero when
/// fitting exponents; flat-metric runs short-circuit to "not applicable".
pub const ZERO_ENERGY_FLOOR: f64 = 1e-13;

/// Default fraction of the reference norm square that the smallest-radius
/// rescaled energy must reach in the qualitative lower-bound check.
pub const DEFAULT_LOWER_BOUND_FRACTION: f64 = 0.01;

fn default_ansatz_degree() -> u32 {
    5
}

fn default_quadrature_degree() -> u32 {
    crate::quadrature::DEFAULT_DEGREE
}

fn default_lower_bound_fraction() -> f64 {
    DEFAULT_LOWER_BOUND_FRACTION
}

/// Experiment domain: a ball of radius `h`, or the tube of cross-section
/// radius `h` around a geodesic segment of the given length through the
/// coordinate origin (the first coordinate axis in normal coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Ball,
    Tube { length: f64 },
}

/// Declarative description of one scaling experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub metric: NormalMetric,
    pub domain: Domain,
    /// Strictly decreasing radii, all inside the metric validity radius.
    pub h_list: Vec<f64>,
    #[serde(default = "default_ansatz_degree")]
    pub ansatz_degree: u32,
    #[serde(default = "default_quadrature_degree")]
    pub quadrature_degree: u32,
    #[serde(default)]
    pub optimizer: MinimizeOptions,
    /// Report destination; the CLI `--out` flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Also tabulate identity-map energies per radius.
    #[serde(default)]
    pub record_identity: bool,
    #[serde(default = "default_lower_bound_fraction")]
    pub lower_bound_fraction: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_list.is_empty() {
            return Err(Error::InvalidConfig("h_list is empty".into()));
        }
        if !self.h_list.iter().all(|&h| h > 0.0) {
            return Err(Error::InvalidConfig("h_list entries must be positive".into()));
        }
        if !self.h_list.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig(
                "h_list must be strictly decreasing".into(),
            ));
        }
        let validity = self.metric.validity_radius();
        let reach = |h: f64| match &self.domain {
            Domain::Ball => h,
            Domain::Tube { length } => (length * length / 4.0 + h * h).sqrt(),
        };
        for &h in &self.h_list {
            if reach(h) > validity {
                return Err(Error::InvalidConfig(format!(
                    "domain at h = {h} reaches {:.4}, beyond the validity radius {validity}",
                    reach(h)
                )));
            }
        }
        if let Domain::Tube { length } = self.domain {
            if !(length > 0.0) {
                return Err(Error::InvalidConfig("tube length must be positive".into()));
            }
            if self.metric.dim() < 3 {
                return Err(Error::InvalidDimension(self.metric.dim()));
            }
        }
        if self.ansatz_degree < 3 {
            return Err(Error::InvalidDegree {
                got: self.ansatz_degree,
                min: 3,
            });
        }
        Ok(())
    }
}

/// One minimization row of a scaling report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub h: f64,
    pub inf_energy: f64,
    pub inf_energy_over_h4: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Machine-readable outcome of a scaling experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    /// Rows ordered by decreasing radius.
    pub rows: Vec<ScalingRow>,
    /// Log-log slope over the three smallest radii; absent when fewer
    /// than two rows carry energy above the zero floor.
    pub fitted_exponent: Option<f64>,
    /// Squared curvature norm of the metric's tensor at the center.
    pub reference_norm_sq: f64,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_rows: Option<Vec<IdentityEnergyRow>>,
}

impl ScalingReport {
    /// Canonical JSON: keys sorted, stable float formatting.
    pub fn canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&value)?)
    }

    /// CSV mirror of the rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,inf_energy,inf_energy_over_h4,converged,iterations\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.h, r.inf_energy, r.inf_energy_over_h4, r.converged, r.iterations
            ));
        }
        out
    }

    pub fn has_unconverged_rows(&self) -> bool {
        self.rows.iter().any(|r| !r.converged)
    }
}

fn reference_norm_sq(metric: &NormalMetric) -> Result<f64> {
    let tensor = metric.curvature_tensor();
    if tensor.is_zero() {
        return Ok(0.0);
    }
    let n = curvature_norm(&tensor)?;
    Ok(n * n)
}

/// Exponent over the three smallest radii with energy above the floor —
/// the rule used for the `fitted_exponent` field of every report (larger
/// radii carry higher-order contamination).
pub fn report_exponent(rows: &[ScalingRow]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.inf_energy > ZERO_ENERGY_FLOOR)
        .map(|r| (r.h, r.inf_energy))
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let tail_start = usable.len().saturating_sub(3);
    fit_scaling_exponent(&usable[tail_start..]).ok()
}

fn run_rows<F>(cfg: &ExperimentConfig, minimize_row: F) -> Result<Vec<ScalingRow>>
where
    F: Fn(f64) -> Result<crate::energy::Minimization> + Sync,
{
    let minimizations: Result<Vec<_>> = cfg
        .h_list
        .par_iter()
        .map(|&h| minimize_row(h))
        .collect();
    Ok(minimizations?
        .into_iter()
        .map(|m| ScalingRow {
            h: m.h,
            inf_energy: m.energy,
            inf_energy_over_h4: m.energy_over_h4,
            converged: m.converged,
            iterations: m.iterations,
        })
        .collect())
}

/// Minimizes the elastic energy on shrinking balls and reports the
/// rescaled energies, the fitted exponent and the reference norm square.
pub fn run_ball_scaling(cfg: &ExperimentConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    if cfg.domain != Domain::Ball {
        return Err(Error::InvalidConfig(
            "run_ball_scaling requires domain = ball".into(),
        ));
    }
    let metric = &cfg.metric;
    let rows = run_rows(cfg, |h| {
        let quad = BallQuadrature::new(metric.dim(), h, cfg.quadrature_degree)?;
        minimize_energy_on(metric, &quad, h, cfg.ansatz_degree, &cfg.optimizer, None)
    })?;
    let fitted_exponent = report_exponent(&rows);
    let identity_rows = if cfg.record_identity {
        Some(identity_energy_curve(
            metric,
            &cfg.h_list,
            cfg.quadrature_degree,
        )?)
    } else {
        None
    };
    Ok(ScalingReport {
        rows,
        fitted_exponent,
        reference_norm_sq: reference_norm_sq(metric)?,
        config: cfg.clone(),
        identity_rows,
    })
}

/// Minimizes the elastic energy on shrinking tubes around a geodesic
/// segment (the first coordinate axis in point-centered normal
/// coordinates of a constant-curvature model).
pub fn run_rod_scaling(cfg: &ExperimentConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    let length = match cfg.domain {
        Domain::Tube { length } => length,
        Domain::Ball => {
            return Err(Error::InvalidConfig(
                "run_rod_scaling requires domain = tube".into(),
            ))
        }
    };
    let metric = &cfg.metric;
    let rows = run_rows(cfg, |h| {
        let quad = TubeQuadrature::new(metric.dim(), h, length, cfg.quadrature_degree)?;
        minimize_energy_on(metric, &quad, h, cfg.ansatz_degree, &cfg.optimizer, None)
    })?;
    let fitted_exponent = report_exponent(&rows);
    Ok(ScalingReport {
        rows,
        fitted_exponent,
        reference_norm_sq: reference_norm_sq(metric)?,
        config: cfg.clone(),
        identity_rows: None,
    })
}

/// Least-squares slope of `log E` against `log h`. Rows with `E ≤ 0` are
/// excluded; fewer than two usable rows is an error. Exact for pure power
/// laws.
pub fn fit_scaling_exponent(rows: &[(f64, f64)]) -> Result<f64> {
    let usable: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(h, e)| *h > 0.0 && *e > 0.0)
        .map(|&(h, e)| (h.ln(), e.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::FitNotApplicable);
    }
    let count = usable.len() as f64;
    let mean_x: f64 = usable.iter().map(|(x, _)| x).sum::<f64>() / count;
    let mean_y: f64 = usable.iter().map(|(_, y)| y).sum::<f64>() / count;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &usable {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::FitNotApplicable);
    }
    Ok(sxy / sxx)
}

/// Qualitative lower-bound check: for a curved metric, the smallest
/// rescaled energy must reach a positive fraction of the reference norm
/// square. Vacuously true for zero curvature. The fraction is the
/// config's `lower_bound_fraction`; the universal constant itself is not
/// validated.
pub fn lower_bound_check(report: &ScalingReport) -> bool {
    if report.reference_norm_sq <= 0.0 {
        return true;
    }
    let min_ratio = report
        .rows
        .iter()
        .map(|r| r.inf_energy_over_h4)
        .fold(f64::INFINITY, f64::min);
    min_ratio >= report.config.lower_bound_fraction * report.reference_norm_sq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::RiemannTensor;

    fn flat_ball_config() -> ExperimentConfig {
        ExperimentConfig {
            metric: NormalMetric::flat(2).unwrap(),
            domain: Domain::Ball,
            h_list: vec![0.2, 0.1],
            ansatz_degree: 3,
            quadrature_degree: 8,
            optimizer: MinimizeOptions {
                quadrature_degree: 8,
                ..Default::default()
            },
            output: None,
            seed: 7,
            record_identity: false,
            lower_bound_fraction: DEFAULT_LOWER_BOUND_FRACTION,
        }
    }

    #[test]
    fn exponent_fit_exact_power_laws() {
        let rows: Vec<(f64, f64)> = [0.4, 0.2, 0.1].iter().map(|&h| (h, h * h * h * h)).collect();
        assert!((fit_scaling_exponent(&rows).unwrap() - 4.0).abs() < 1e-12);

        let rows: Vec<(f64, f64)> = [0.4, 0.2, 0.1].iter().map(|&h| (h, 3.0 * h * h)).collect();
        assert!((fit_scaling_exponent(&rows).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exponent_fit_perturbed_power_law() {
        let rows: Vec<(f64, f64)> = [0.4f64, 0.2, 0.1]
            .iter()
            .map(|&h| (h, h.powi(4) * (1.0 + 0.1 * h)))
            .collect();
        let beta = fit_scaling_exponent(&rows).unwrap();
        assert!(beta > 3.9 && beta < 4.1, "beta {beta}");
    }

    #[test]
    fn exponent_fit_rejects_empty_and_nonpositive() {
        assert!(fit_scaling_exponent(&[]).is_err());
        assert!(fit_scaling_exponent(&[(0.1, 1e-3)]).is_err());
        assert!(fit_scaling_exponent(&[(0.1, 0.0), (0.2, -1.0)]).is_err());
    }

    #[test]
    fn flat_ball_run_short_circuits_exponent() {
        let report = run_ball_scaling(&flat_ball_config()).unwrap();
        assert!(report.rows.iter().all(|r| r.inf_energy <= 1e-10));
        assert!(report.rows.iter().all(|r| r.converged));
        assert!(report.fitted_exponent.is_none());
        assert_eq!(report.reference_norm_sq, 0.0);
        assert!(lower_bound_check(&report));
    }

    #[test]
    fn flat_tube_run_is_zero_energy() {
        let cfg = ExperimentConfig {
            metric: NormalMetric::flat(3).unwrap(),
            domain: Domain::Tube { length: 0.5 },
            h_list: vec![0.1, 0.05],
            ansatz_degree: 3,
            quadrature_degree: 8,
            optimizer: MinimizeOptions {
                quadrature_degree: 8,
                ..Default::default()
            },
            output: None,
            seed: 0,
            record_identity: false,
            lower_bound_fraction: DEFAULT_LOWER_BOUND_FRACTION,
        };
        let report = run_rod_scaling(&cfg).unwrap();
        assert!(report.rows.iter().all(|r| r.inf_energy <= 1e-10));
        assert!(report.fitted_exponent.is_none());
    }

    #[test]
    fn sphere_ball_smoke_run() {
        let cfg = ExperimentConfig {
            metric: NormalMetric::exact_constant(2, 1.0).unwrap(),
            domain: Domain::Ball,
            h_list: vec![0.2, 0.1],
            ansatz_degree: 3,
            quadrature_degree: 12,
            optimizer: MinimizeOptions {
                quadrature_degree: 12,
                ..Default::default()
            },
            output: None,
            seed: 0,
            record_identity: true,
            lower_bound_fraction: DEFAULT_LOWER_BOUND_FRACTION,
        };
        let report = run_ball_scaling(&cfg).unwrap();
        assert!(report.rows.iter().all(|r| r.converged));
        assert!((report.reference_norm_sq - 1.0 / 192.0).abs() < 1e-10);
        let beta = report.fitted_exponent.unwrap();
        assert!(beta > 3.5 && beta < 4.5, "beta {beta}");
        assert!(lower_bound_check(&report));

        // Identity rows reproduce the identity-map benchmark.
        let expected = identity_energy_curve(&cfg.metric, &cfg.h_list, 12).unwrap();
        let got = report.identity_rows.as_ref().unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a.energy - b.energy).abs() <= 1e-12 * (1.0 + b.energy));
        }
    }

    #[test]
    fn lower_bound_detects_zeroed_energies() {
        let mut report = run_ball_scaling(&flat_ball_config()).unwrap();
        report.reference_norm_sq = 1.0 / 192.0; // pretend curvature is nonzero
        assert!(!lower_bound_check(&report));
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = flat_ball_config();
        let a = run_ball_scaling(&cfg).unwrap().canonical_json().unwrap();
        let b = run_ball_scaling(&cfg).unwrap().canonical_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation_rejects_bad_lists() {
        let mut cfg = flat_ball_config();
        cfg.h_list = vec![0.1, 0.2];
        assert!(cfg.validate().is_err());
        let mut cfg = flat_ball_config();
        cfg.h_list = vec![];
        assert!(cfg.validate().is_err());
        // Tube reaching outside the validity radius.
        let cfg = ExperimentConfig {
            metric: NormalMetric::exact_constant(3, 1.0).unwrap(),
            domain: Domain::Tube { length: 4.0 },
            h_list: vec![0.1],
            ansatz_degree: 3,
            quadrature_degree: 8,
            optimizer: MinimizeOptions::default(),
            output: None,
            seed: 0,
            record_identity: false,
            lower_bound_fraction: DEFAULT_LOWER_BOUND_FRACTION,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = flat_ball_config();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);

        // Domain serialization shapes.
        assert!(serde_json::to_string(&Domain::Ball).unwrap().contains("ball"));
        let tube: Domain = serde_json::from_str(r#"{"tube": {"length": 0.5}}"#).unwrap();
        assert_eq!(tube, Domain::Tube { length: 0.5 });
    }

    #[test]
    fn truncated_metric_reference_uses_its_tensor() {
        let t = RiemannTensor::constant_sectional(2, 1.0).unwrap();
        let cfg = ExperimentConfig {
            metric: NormalMetric::truncated(t),
            domain: Domain::Ball,
            h_list: vec![0.1],
            ansatz_degree: 3,
            quadrature_degree: 10,
            optimizer: MinimizeOptions {
                quadrature_degree: 10,
                ..Default::default()
            },
            output: None,
            seed: 0,
            record_identity: false,
            lower_bound_fraction: DEFAULT_LOWER_BOUND_FRACTION,
        };
        let report = run_ball_scaling(&cfg).unwrap();
        assert!((report.reference_norm_sq - 1.0 / 192.0).abs() < 1e-10);
    }
}
