use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORD_FORMAT: &str = "resperturb-result";
pub const RECORD_VERSION: u32 = 1;
pub const RECORD_FILE: &str = "record.json";
pub const TIMINGS_FILE: &str = "timings.json";

/// One labeled polyline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A family of series sharing axes; rendered as one CSV and one SVG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// File stem of the emitted plot.
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Pin both axes to `[0, 1]` (ROC plots).
    pub unit_axes: bool,
    pub series: Vec<Series>,
}

impl Curve {
    pub fn new(name: impl Into<String>, title: impl Into<String>, x_label: &str, y_label: &str) -> Self {
        Self {
            name: name.into(),
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            unit_axes: false,
            series: Vec::new(),
        }
    }

    pub fn roc(name: impl Into<String>, title: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            unit_axes: true,
            series: vec![Series {
                label: "roc".into(),
                points,
            }],
            ..Self::new(name, title, "false positive rate", "true positive rate")
        }
    }

    pub fn with_series(mut self, label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series {
            label: label.into(),
            points,
        });
        self
    }
}

/// Everything an experiment reports. Serialized fields are a pure function of
/// `(config, seed)`; wall-clock timings live apart in `timings`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    /// Every resolved configuration key, defaults included.
    pub config: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    /// Metrics that came out infinite or NaN, as text.
    pub nonfinite_metrics: BTreeMap<String, String>,
    pub curves: Vec<Curve>,
    /// Files written next to the record, relative to the output directory.
    pub artifacts: Vec<String>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

impl ResultRecord {
    pub fn new(kind: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        Self {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION,
            kind: kind.into(),
            seed,
            config,
            metrics: BTreeMap::new(),
            nonfinite_metrics: BTreeMap::new(),
            curves: Vec::new(),
            artifacts: Vec::new(),
            notes: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// JSON cannot carry non-finite numbers, so those go to `nonfinite_metrics`.
    pub fn metric(&mut self, key: impl Into<String>, value: f64) {
        let key = key.into();
        if value.is_finite() {
            self.metrics.insert(key, value);
        } else {
            self.nonfinite_metrics.insert(key, value.to_string());
        }
    }

    /// Looks up a metric, including the non-finite ones.
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics
            .get(key)
            .copied()
            .or_else(|| self.nonfinite_metrics.get(key).and_then(|s| s.parse().ok()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::Parse(format!("result record: {e}")))?;
        if r.format != RECORD_FORMAT || r.version != RECORD_VERSION {
            return Err(Error::Parse(format!(
                "unsupported record format `{}` version {}",
                r.format, r.version
            )));
        }
        Ok(r)
    }

    /// Writes `record.json` and `timings.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(RECORD_FILE), self.to_json()?.as_bytes())?;
        let timings = serde_json::to_string_pretty(&self.timings).map_err(|e| Error::Parse(e.to_string()))?;
        write_atomic(&dir.join(TIMINGS_FILE), timings.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(RECORD_FILE))?;
        let mut r = Self::from_json(&text)?;
        if let Ok(t) = fs::read_to_string(dir.join(TIMINGS_FILE)) {
            r.timings = serde_json::from_str(&t).map_err(|e| Error::Parse(format!("timings: {e}")))?;
        }
        Ok(r)
    }
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_exact() {
        let mut r = ResultRecord::new("accountant", 3, BTreeMap::from([("seed".into(), "3".into())]));
        r.metric("a", 0.1 + 0.2);
        r.metric("b", f64::INFINITY);
        r.curves.push(Curve::roc("roc", "ROC", vec![(0.0, 0.0), (1.0 / 3.0, 0.7), (1.0, 1.0)]));
        r.timings.insert("total".into(), 1.5);
        let back = ResultRecord::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.metrics, r.metrics);
        assert_eq!(back.curves, r.curves);
        assert_eq!(back.get("b"), Some(f64::INFINITY));
        assert!(back.timings.is_empty());
    }

    #[test]
    fn write_keeps_timings_apart() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = ResultRecord::new("train", 0, BTreeMap::new());
        r.timings.insert("train".into(), 2.0);
        r.write(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(RECORD_FILE)).unwrap();
        assert!(!text.contains("timings"));
        assert_eq!(ResultRecord::read(dir.path()).unwrap().timings["train"], 2.0);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2, "temporary files left behind: {names:?}");
    }

    #[test]
    fn rejects_foreign_json() {
        assert!(ResultRecord::from_json("{\"format\": \"x\"}").is_err());
    }
}
