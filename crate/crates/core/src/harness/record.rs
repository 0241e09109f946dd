//! Result records, their JSON-lines persistence and the mean±std summary.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::metrics::valid_range;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Outcome of one (seed, fold) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub digest: String,
    pub pooler: String,
    pub dataset: String,
    pub seed: u64,
    pub fold: Option<usize>,
    pub status: RunStatus,
    /// Why a failed run stopped.
    pub failure: Option<String>,
    /// Mean training loss of every completed epoch; finite by construction.
    pub epoch_losses: Vec<f64>,
    /// Keys are `<part>_<metric>`, e.g. `test_accuracy`.
    pub metrics: BTreeMap<String, f64>,
    pub seconds: f64,
    /// Process peak resident set, when the platform reports it.
    pub peak_rss_bytes: Option<u64>,
}

impl ResultRecord {
    pub fn check_ranges(&self) -> Result<()> {
        for (name, &v) in &self.metrics {
            let (lo, hi) = valid_range(name);
            if !(v >= lo && v <= hi) {
                return Err(Error::Numeric(format!(
                    "metric {name} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Peak resident set size (`VmHWM`) in bytes; `None` off Linux.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn to_line(record: &ResultRecord) -> Result<String> {
    serde_json::to_string(record)
        .map_err(|e| Error::Numeric(format!("cannot serialise record: {e}")))
}

/// Writes one JSON object per line, replacing `path`.
pub fn persist(records: &[ResultRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(w, "{}", to_line(r)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<ResultRecord>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Serialised appender shared by concurrent runs.
#[derive(Debug)]
pub struct RecordAppender {
    file: Mutex<BufWriter<File>>,
}

impl RecordAppender {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, record: &ResultRecord) -> Result<()> {
        let line = to_line(record)?;
        let mut w = self.file.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(w, "{line}")?;
        w.flush()?;
        Ok(())
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Twelve decimals with trailing zeros removed.
fn fmt_num(x: f64) -> String {
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn fmt_mean_std(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{}±{}", fmt_num(m), fmt_num(s))
}

/// One CSV row per config digest: run counts and `mean±std` for every
/// metric of the successful runs. Standard deviations are population.
pub fn summary_csv(records: &[ResultRecord]) -> String {
    let metric_names: Vec<String> = records
        .iter()
        .flat_map(|r| r.metrics.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut groups: BTreeMap<&str, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.digest).or_default().push(r);
    }
    let mut out = String::from("digest,dataset,pooler,runs,failed");
    for name in &metric_names {
        out.push_str(&format!(",{name} (mean±pop_std)"));
    }
    out.push('\n');
    for (digest, group) in groups {
        let failed = group
            .iter()
            .filter(|r| r.status == RunStatus::Failed)
            .count();
        out.push_str(&format!(
            "{digest},{},{},{},{failed}",
            group[0].dataset,
            group[0].pooler,
            group.len()
        ));
        for name in &metric_names {
            let values: Vec<f64> = group
                .iter()
                .filter_map(|r| r.metrics.get(name).copied())
                .collect();
            out.push(',');
            if !values.is_empty() {
                out.push_str(&fmt_mean_std(&values));
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(seed: u64, acc: f64) -> ResultRecord {
        ResultRecord {
            digest: "d".into(),
            pooler: "topk".into(),
            dataset: "toy".into(),
            seed,
            fold: None,
            status: RunStatus::Ok,
            failure: None,
            epoch_losses: vec![0.7, 0.1 + 0.2],
            metrics: BTreeMap::from([("test_accuracy".to_string(), acc)]),
            seconds: 1.5,
            peak_rss_bytes: Some(1 << 20),
        }
    }

    #[test]
    fn summary_of_two_seeds() {
        assert_eq!(fmt_mean_std(&[0.8, 0.9]), "0.85±0.05");
        let csv = summary_csv(&[record(0, 0.8), record(1, 0.9)]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "digest,dataset,pooler,runs,failed,test_accuracy (mean±pop_std)"
        );
        assert_eq!(lines.next().unwrap(), "d,toy,topk,2,0,0.85±0.05");
    }

    #[test]
    fn persist_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let records = vec![record(0, 0.8), record(1, 1.0 / 3.0)];
        persist(&records, &path).unwrap();
        assert_eq!(load(&path).unwrap(), records);

        let appended = dir.path().join("a.jsonl");
        let app = RecordAppender::open(&appended).unwrap();
        records.iter().for_each(|r| app.append(r).unwrap());
        assert_eq!(load(&appended).unwrap(), records);
    }

    #[test]
    fn malformed_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let good = serde_json::to_string(&record(0, 0.5)).unwrap();
        fs::write(&path, format!("{good}\n{{\"digest\": 3}}\n")).unwrap();
        assert!(matches!(load(&path), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            load(&dir.path().join("none")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn ranges_are_checked() {
        assert!(record(0, 0.5).check_ranges().is_ok());
        assert!(record(0, 1.5).check_ranges().is_err());
    }

    #[test]
    fn peak_rss_is_positive_on_linux() {
        if cfg!(target_os = "linux") {
            assert!(peak_rss_bytes().unwrap() > 0);
        }
    }

    proptest! {
        #[test]
        fn csv_matches_raw_records(values in prop::collection::vec(0.0f64..1.0, 1..10)) {
            let records: Vec<ResultRecord> = values.iter().enumerate().map(|(i, &v)| record(i as u64, v)).collect();
            let csv = summary_csv(&records);
            let cell = csv.lines().nth(1).unwrap().rsplit(',').next().unwrap().to_string();
            let (m, s) = cell.split_once('±').unwrap();
            let (mean, std) = mean_std(&values);
            prop_assert!((m.parse::<f64>().unwrap() - mean).abs() < 1e-9);
            prop_assert!((s.parse::<f64>().unwrap() - std).abs() < 1e-9);
        }
    }
}
