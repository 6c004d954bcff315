//! On-disk formats shared by the subcommands, plus exit-code plumbing.
//!
//! All angles in files are degrees; reports carry off-yaw values in
//! radians. Prediction files are a JSON array of samples, each with an
//! ego pose, a list of modes (points plus probability), and optionally
//! the ground-truth points.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::{Deserialize, Serialize};

use offyaw::geometry::{Point2, Pose, Trajectory};
use offyaw::metrics::PredictionSet;
use offyaw::raster::HeadingRaster;

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_IO: u8 = 3;

/// A failure that terminates the process with a specific exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CHECK_FAILED,
            message: message.into(),
        }
    }

    pub fn exit(self) -> ExitCode {
        eprintln!("error: {}", self.message);
        ExitCode::from(self.code)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Reads and parses a JSON input file. Parse failures report the line and
/// column from serde_json.
pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::input(format!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

/// Writes a file, mapping failures to the I/O exit code.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::io(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// The raster lives in two files: the PGM named on the command line and a
/// JSON sidecar next to it with the extension swapped to .json.
pub fn sidecar_path(pgm_path: &Path) -> PathBuf {
    pgm_path.with_extension("json")
}

pub fn load_raster(pgm_path: &Path) -> CliResult<HeadingRaster> {
    HeadingRaster::load(pgm_path, &sidecar_path(pgm_path))
        .map_err(|e| CliError::input(format!("cannot load raster {}: {e}", pgm_path.display())))
}

pub fn save_raster(raster: &HeadingRaster, pgm_path: &Path) -> CliResult<()> {
    raster
        .save(pgm_path, &sidecar_path(pgm_path))
        .map_err(|e| CliError::io(format!("cannot write raster {}: {e}", pgm_path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeFile {
    pub points: Vec<Point2>,
    pub probability: f64,
}

/// One sample of a prediction file. Points are in the ego-local frame;
/// `gt` may instead be supplied batch-wide through `--gt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFile {
    pub ego: Pose,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub modes: Vec<ModeFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<Vec<Point2>>,
}

fn default_dt() -> f64 {
    0.5
}

pub fn default_dt_value() -> f64 {
    default_dt()
}

impl SampleFile {
    pub fn to_prediction_set(&self, path: &Path, index: usize) -> CliResult<PredictionSet> {
        let mut trajectories = Vec::with_capacity(self.modes.len());
        let mut probabilities = Vec::with_capacity(self.modes.len());
        for mode in &self.modes {
            let traj = Trajectory::new(mode.points.clone(), self.dt)
                .map_err(|e| CliError::input(format!("{}: sample {index}: {e}", path.display())))?;
            trajectories.push(traj);
            probabilities.push(mode.probability);
        }
        PredictionSet::new(trajectories, probabilities, self.ego)
            .map_err(|e| CliError::input(format!("{}: sample {index}: {e}", path.display())))
    }

    pub fn from_prediction_set(preds: &PredictionSet, gt: Option<&Trajectory>) -> Self {
        Self {
            ego: preds.ego,
            dt: preds.trajectories.first().map_or(default_dt(), |t| t.dt),
            modes: preds
                .trajectories
                .iter()
                .zip(&preds.probabilities)
                .map(|(t, &p)| ModeFile {
                    points: t.points.clone(),
                    probability: p,
                })
                .collect(),
            gt: gt.map(|t| t.points.clone()),
        }
    }
}

/// Ground-truth file: one local-frame point list per sample, aligned with
/// the prediction file by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtFile {
    pub trajectories: Vec<Vec<Point2>>,
    #[serde(default = "default_dt")]
    pub dt: f64,
}
