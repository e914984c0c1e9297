//! Scenario files: one JSON document holding every tunable of a run.
//!
//! Every section is optional and falls back to its default; unknown keys are
//! rejected. An empty file is the default scenario.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{DepthPolicy, Extrinsics, Intrinsics, SigmaModel};
use crate::ekf::EkfParams;
use crate::error::{Error, Result};
use crate::flightdyn::{BounceParams, DragParams};
use crate::geometry::BasePose2D;
use crate::harness::{ContactConfig, ExecutorLimits, Launcher, LoopRates};
use crate::planner::PlannerConfig;
use crate::predictor::{Aabb, ExportGates};
use crate::sensorsim::{FilterRules, NoiseModel, SensorScene};
use crate::targets::{SwingTemplates, TargetConfig};
use crate::track2d::AssocGates;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub intrinsics: Intrinsics,
    /// Camera pose in the robot heading frame.
    pub mount: Extrinsics,
    pub sigma: SigmaModel,
    pub depth: DepthPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    /// Ground-truth flight model.
    pub drag: DragParams,
    pub bounce: BounceParams,
    pub camera: CameraConfig,
    pub noise: NoiseModel,
    pub filter: FilterRules,
    pub scene: SensorScene,
    pub assoc: AssocGates,
    pub gates: ExportGates,
    pub ekf: EkfParams,
    pub planner: PlannerConfig,
    pub templates: SwingTemplates,
    pub targets: TargetConfig,
    pub rates: LoopRates,
    pub executor: ExecutorLimits,
    pub contact: ContactConfig,
    pub launcher: Launcher,
    pub robot_start: BasePose2D,
    /// Trial length (s).
    pub duration: f64,
    /// The trial ends once the ball leaves this box.
    pub bounds: Aabb,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            drag: DragParams::default(),
            bounce: BounceParams::default(),
            camera: CameraConfig::default(),
            noise: NoiseModel::default(),
            filter: FilterRules::default(),
            scene: SensorScene::default(),
            assoc: AssocGates::default(),
            gates: ExportGates::default(),
            ekf: EkfParams::default(),
            planner: PlannerConfig::default(),
            templates: SwingTemplates::default(),
            targets: TargetConfig::default(),
            rates: LoopRates::default(),
            executor: ExecutorLimits::default(),
            contact: ContactConfig::default(),
            launcher: Launcher::default(),
            robot_start: BasePose2D::origin(),
            duration: 3.0,
            bounds: Aabb {
                min: Vector3::new(-4.0, -8.0, -0.5),
                max: Vector3::new(16.0, 8.0, 20.0),
            },
        }
    }
}

impl Scenario {
    /// Checks every section, then the cross-section invariants.
    pub fn validate(&self) -> Result<()> {
        self.drag.validate()?;
        self.bounce.validate()?;
        self.camera.intrinsics.validate()?;
        self.camera.mount.validate()?;
        self.camera.sigma.validate()?;
        self.camera.depth.validate()?;
        self.noise.validate()?;
        self.filter.validate()?;
        self.assoc.validate()?;
        self.gates.validate()?;
        self.ekf.validate()?;
        self.planner.validate()?;
        self.templates.validate()?;
        self.targets.validate()?;
        self.rates.validate()?;
        self.executor.validate()?;
        self.contact.validate()?;
        self.launcher.validate()?;
        if !(self.scene.ball_radius > 0.0) {
            return Err(Error::validation("scene.ball_radius", "must be > 0"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::validation("duration", "must be > 0"));
        }
        if (0..3).any(|i| !(self.bounds.min[i] < self.bounds.max[i])) {
            return Err(Error::validation("bounds", "box must be non-degenerate"));
        }
        if !(self.rates.sim_dt <= 1.0 / self.rates.command_hz) {
            return Err(Error::validation("rates.sim_dt", "must not exceed the command period"));
        }
        if !(self.planner.swing_lead < self.gates.t_hit_window[0]) {
            return Err(Error::validation(
                "planner.swing_lead",
                "must be below the minimum of gates.t_hit_window",
            ));
        }
        Ok(())
    }

    /// Noise-free sensing: exact centers and depths, no dropouts or clutter.
    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseModel::noiseless();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Parses and validates scenario text. Blank text gives the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let sc = if text.trim().is_empty() {
            Scenario::default()
        } else {
            serde_json::from_str(text).map_err(|e| Error::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?
        };
        sc.validate()?;
        Ok(sc)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_is_default() {
        let f = write("");
        assert_eq!(load_scenario(f.path()).unwrap(), Scenario::default());
        let f = write("{}\n");
        assert_eq!(load_scenario(f.path()).unwrap(), Scenario::default());
    }

    #[test]
    fn bad_restitution_names_field() {
        let f = write(r#"{"bounce": {"e": 1.5}}"#);
        match load_scenario(f.path()) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "bounce.e"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let sc = Scenario::default();
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(back, sc);
        assert_eq!(back.to_json(), sc.to_json());
    }

    #[test]
    fn unknown_keys_rejected_with_line() {
        let f = write("{\n  \"drag\": {\n    \"g\": 9.81,\n    \"k3\": 1.0\n  }\n}\n");
        match load_scenario(f.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("k3"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = write(r#"{"dragg": {}}"#);
        assert!(matches!(load_scenario(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_scenario("/nonexistent/scenario.json"), Err(Error::Io { .. })));
    }

    #[test]
    fn cross_checks() {
        let mut sc = Scenario::default();
        sc.planner.swing_lead = sc.gates.t_hit_window[0];
        assert!(matches!(sc.validate(), Err(Error::Validation { field, .. }) if field == "planner.swing_lead"));

        let mut sc = Scenario::default();
        sc.rates.sim_dt = 0.01;
        assert!(matches!(sc.validate(), Err(Error::Validation { field, .. }) if field == "rates.sim_dt"));
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let sc = Scenario::from_json(r#"{"planner": {"max_base_speed": 2.0}, "duration": 4}"#).unwrap();
        assert_eq!(sc.planner.max_base_speed, 2.0);
        assert_eq!(sc.planner.r_hit, PlannerConfig::default().r_hit);
        assert_eq!(sc.duration, 4.0);
    }
}
