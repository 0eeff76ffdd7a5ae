use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const METRICS_HEADER: &str =
    "step,cumulative_rollouts,train_mean_reward,eval_accuracy,mean_response_length,update_wall_time_s,selected_id";

/// One training-step observation. Step 0 describes the initial policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub cumulative_rollouts: u64,
    /// Mean verifier reward over every rollout sampled in the step.
    pub train_mean_reward: Option<f64>,
    /// Greedy exact-match rate over the training subset; empty on steps
    /// that were not evaluated.
    pub eval_accuracy: Option<f64>,
    pub mean_response_length: Option<f64>,
    #[serde(rename = "update_wall_time_s")]
    pub update_wall_time_seconds: f64,
    #[serde(rename = "selected_id")]
    pub selected_instance_id: Option<usize>,
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(rows: &[MetricsRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(crate::error::Error::format(
            1,
            format!("unexpected metrics header `{}`", header.join(",")),
        ));
    }
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

pub fn load_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    read_csv(std::fs::File::open(path)?)
}

/// Streaming writer that appends rows to a CSV file as steps complete.
pub struct MetricsAppender {
    inner: csv::Writer<std::fs::File>,
}

impl MetricsAppender {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        inner.write_record(METRICS_HEADER.split(','))?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<MetricsRow> {
        vec![
            MetricsRow {
                step: 0,
                cumulative_rollouts: 0,
                train_mean_reward: None,
                eval_accuracy: Some(0.125),
                mean_response_length: None,
                update_wall_time_seconds: 0.0,
                selected_instance_id: None,
            },
            MetricsRow {
                step: 1,
                cumulative_rollouts: 15,
                train_mean_reward: Some(1.0 / 3.0),
                eval_accuracy: None,
                mean_response_length: Some(4.2),
                update_wall_time_seconds: 1.5e-5,
                selected_instance_id: Some(7),
            },
        ]
    }

    #[test]
    fn header_and_lossless_round_trip() {
        let text = to_csv_string(&rows()).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(read_csv(text.as_bytes()).unwrap(), rows());
        assert_eq!(to_csv_string(&[]).unwrap().trim_end(), METRICS_HEADER);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn appender_matches_batch_writer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut app = MetricsAppender::create(&path).unwrap();
        for r in rows() {
            app.append(&r).unwrap();
        }
        drop(app);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, to_csv_string(&rows()).unwrap());
    }
}
