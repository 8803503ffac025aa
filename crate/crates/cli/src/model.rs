//! The model file shared by `fit`, `predict`, `policy-eval`, `simulate` and
//! `validate`.

use crate::error::{io, CliError, Result};
use chrono::{DateTime, TimeZone, Utc};
use relevo::calendar::Epoch;
use relevo::cost::CostSpec;
use relevo::evolution::Database;
use relevo::fitting::{SegmentationSpec, Variant};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub fn default_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2000, 1, 3, 0, 0, 0).unwrap()
}

/// A database model with its reference time. Intensities inside
/// `database` are in days since `epoch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default = "default_epoch")]
    pub epoch: DateTime<Utc>,
    /// Instant at which cardinalities and histograms hold.
    pub as_of: DateTime<Utc>,
    /// Relation that predictions and policies refer to.
    pub relation: String,
    pub database: Database,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitRecord>,
}

/// How the insertion model was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub variant: Variant,
    pub compound: bool,
    pub window_seconds: f64,
    pub segmentation: SegmentationSpec,
    pub first_event: DateTime<Utc>,
    pub last_event: DateTime<Utc>,
    pub events: usize,
    pub goodness_of_fit: Vec<GofRow>,
}

/// One line of the goodness-of-fit comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofRow {
    pub model: String,
    pub variant: Variant,
    pub compound: bool,
    pub n: usize,
    pub statistic: f64,
    pub threshold_05: f64,
    pub rejected_05: bool,
    /// Smallest tabulated level at which the model is rejected.
    pub rejection_level: Option<f64>,
    pub best: bool,
}

pub const GOF_HEADER: [&str; 9] = [
    "model",
    "variant",
    "compound",
    "n",
    "statistic",
    "threshold_0.05",
    "rejected_0.05",
    "rejection_level",
    "best",
];

impl ModelFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        let model: ModelFile = serde_json::from_str(&text).map_err(|e| CliError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        model.database.relation(&model.relation)?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn epoch(&self) -> Epoch {
        Epoch::new(self.epoch)
    }

    /// Reference time in model days.
    pub fn as_of_days(&self) -> f64 {
        self.epoch().to_days(self.as_of)
    }

    pub fn cost(&self) -> Result<&CostSpec> {
        self.cost.as_ref().ok_or_else(|| CliError::MissingSection("cost".into()))
    }
}
