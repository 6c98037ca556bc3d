//! Stream files: JSON-lines points with an optional metadata header, plus
//! the CSV sidecar for explicit distance matrices.
//!
//! A stream file is one JSON object per line. The first line may be a
//! metadata header (recognized by its `schema` field); every other line is
//! an arrival `{"id": <int>, "coords": [..]}`, or `{"id": <int>}` alone when
//! distances come from a matrix sidecar. Ids must be dense and in arrival
//! order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::MetricKind;
use crate::scalar::Real;

pub const STREAM_SCHEMA: &str = "kmedian-stream/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub schema: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Real>,
    /// Certified upper bound on the exact offline optimum, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opt_bound: Option<Real>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasible: Option<bool>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
}

impl StreamMeta {
    pub fn new() -> Self {
        StreamMeta {
            schema: STREAM_SCHEMA.to_string(),
            family: None,
            k: None,
            b: None,
            opt_bound: None,
            metric: None,
            dim: None,
            seed: None,
            feasible: None,
            params: serde_json::Value::Null,
        }
    }
}

impl Default for StreamMeta {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPoint {
    pub id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<Real>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamFile {
    pub meta: Option<StreamMeta>,
    pub points: Vec<StreamPoint>,
}

#[derive(Debug, Error)]
pub enum StreamIoError {
    #[error("line {0}: {1}")]
    Parse(usize, serde_json::Error),
    #[error("line {line}: id {got} out of order (expected {expected})")]
    IdOrder {
        line: usize,
        got: u32,
        expected: u32,
    },
    #[error("stream has no points")]
    Empty,
    #[error("point {0} has no coordinates and no matrix sidecar was given")]
    MissingCoords(u32),
    #[error("point {id} coordinate count {got} != dim {expected}")]
    DimMismatch {
        id: u32,
        got: usize,
        expected: usize,
    },
    #[error("matrix CSV row {row}: {msg}")]
    MatrixCsv { row: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn parse_stream(text: &str) -> Result<StreamFile, StreamIoError> {
    let mut meta = None;
    let mut points = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let val: serde_json::Value =
            serde_json::from_str(line).map_err(|e| StreamIoError::Parse(lineno + 1, e))?;
        if points.is_empty() && meta.is_none() && val.get("schema").is_some() {
            meta =
                Some(serde_json::from_value(val).map_err(|e| StreamIoError::Parse(lineno + 1, e))?);
            continue;
        }
        let p: StreamPoint =
            serde_json::from_value(val).map_err(|e| StreamIoError::Parse(lineno + 1, e))?;
        let expected = points.len() as u32;
        if p.id != expected {
            return Err(StreamIoError::IdOrder {
                line: lineno + 1,
                got: p.id,
                expected,
            });
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(StreamIoError::Empty);
    }
    Ok(StreamFile { meta, points })
}

pub fn write_stream(file: &StreamFile) -> String {
    let mut out = String::new();
    if let Some(meta) = &file.meta {
        out.push_str(&serde_json::to_string(meta).expect("meta serializes"));
        out.push('\n');
    }
    for p in &file.points {
        out.push_str(&serde_json::to_string(p).expect("point serializes"));
        out.push('\n');
    }
    out
}

/// Coordinates of every point; errors if any point lacks them.
pub fn coords_of(file: &StreamFile) -> Result<Vec<Vec<Real>>, StreamIoError> {
    let dim = file
        .points
        .iter()
        .find_map(|p| p.coords.as_ref().map(|c| c.len()))
        .ok_or(StreamIoError::MissingCoords(0))?;
    file.points
        .iter()
        .map(|p| match &p.coords {
            Some(c) if c.len() == dim => Ok(c.clone()),
            Some(c) => Err(StreamIoError::DimMismatch {
                id: p.id,
                got: c.len(),
                expected: dim,
            }),
            None => Err(StreamIoError::MissingCoords(p.id)),
        })
        .collect()
}

/// Row-major symmetric matrix from CSV text.
pub fn parse_matrix_csv(text: &str) -> Result<Vec<Vec<Real>>, StreamIoError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<Real>, _> = line.split(',').map(|f| f.trim().parse::<Real>()).collect();
        match row {
            Ok(r) => rows.push(r),
            Err(e) => {
                return Err(StreamIoError::MatrixCsv {
                    row: i + 1,
                    msg: e.to_string(),
                })
            }
        }
    }
    let n = rows.len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(StreamIoError::MatrixCsv {
                row: i + 1,
                msg: format!("expected {n} columns, got {}", r.len()),
            });
        }
    }
    Ok(rows)
}

pub fn write_matrix_csv(matrix: &[Vec<Real>]) -> String {
    matrix
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_round_trip_with_meta() {
        let mut meta = StreamMeta::new();
        meta.family = Some("fig1".into());
        meta.k = Some(2);
        meta.b = Some(2.0);
        meta.metric = Some(MetricKind::L2);
        meta.dim = Some(1);
        let file = StreamFile {
            meta: Some(meta),
            points: vec![
                StreamPoint {
                    id: 0,
                    coords: Some(vec![-2.0]),
                },
                StreamPoint {
                    id: 1,
                    coords: Some(vec![1.0]),
                },
            ],
        };
        let text = write_stream(&file);
        let parsed = parse_stream(&text).unwrap();
        assert_eq!(file, parsed);
        assert_eq!(coords_of(&parsed).unwrap(), vec![vec![-2.0], vec![1.0]]);
    }

    #[test]
    fn headerless_stream_parses() {
        let text = "{\"id\":0,\"coords\":[0.5,1.0]}\n{\"id\":1,\"coords\":[2.0,3.0]}\n";
        let parsed = parse_stream(text).unwrap();
        assert!(parsed.meta.is_none());
        assert_eq!(parsed.points.len(), 2);
    }

    #[test]
    fn id_gap_rejected() {
        let text = "{\"id\":0,\"coords\":[0.0]}\n{\"id\":2,\"coords\":[1.0]}\n";
        assert!(matches!(
            parse_stream(text),
            Err(StreamIoError::IdOrder { .. })
        ));
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = vec![vec![0.0, 7.0], vec![7.0, 0.0]];
        let text = write_matrix_csv(&m);
        assert_eq!(parse_matrix_csv(&text).unwrap(), m);
    }

    #[test]
    fn ragged_matrix_rejected() {
        assert!(parse_matrix_csv("0,1\n1\n").is_err());
    }

    #[test]
    fn empty_stream_rejected() {
        assert!(matches!(parse_stream(""), Err(StreamIoError::Empty)));
    }
}
