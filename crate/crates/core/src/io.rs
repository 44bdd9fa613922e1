//! CSV formats.
//!
//! | file         | header                                                      |
//! |--------------|-------------------------------------------------------------|
//! | predictions  | `subject_id,point_id,group,true_label,p_0,...,p_{K-1}`      |
//! | assessments  | `subject_id,clinical_score`                                 |
//! | strata       | `subject_id,stratum` (any second column name: subject labels) |
//! | features     | `subject_id,f_0,...,f_{D-1}` (optional `point_id`, `group`, `label` columns before the features) |
//! | scores       | `subject_id[,group],score,n_total,n_relevant`               |
//!
//! Probability columns may be named `p_<class name>` instead of `p_<index>`;
//! the names are then reported back as class names. Empty `group` and
//! `true_label` cells mean "absent"; an empty `score` means missing.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use crate::error::{Error, Result};
use crate::fid::FeatureSet;
use crate::types::{AssessmentTable, Orientation, ProbabilityRecord, Sample, SubjectScore};

fn input_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Input {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    input_error(path, line, err.to_string())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(format!("cannot open {}", path.display()), e))
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    ReaderBuilder::new().trim(Trim::All).from_reader(source)
}

fn header(path: &Path, rdr: &mut csv::Reader<impl Read>) -> Result<Vec<String>> {
    let header = rdr.headers().map_err(|e| csv_error(path, e))?;
    Ok(header
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_string())
        .collect())
}

fn records<'a, R: Read + 'a>(
    path: &'a Path,
    rdr: &'a mut csv::Reader<R>,
) -> impl Iterator<Item = Result<(u64, StringRecord)>> + 'a {
    rdr.records().map(move |r| {
        let r = r.map_err(|e| csv_error(path, e))?;
        let line = r.position().map(|p| p.line()).unwrap_or(0);
        Ok((line, r))
    })
}

fn parse_f64(path: &Path, line: u64, column: &str, cell: &str) -> Result<f64> {
    let value: f64 = cell
        .parse()
        .map_err(|_| input_error(path, line, format!("column {column}: {cell:?} is not a number")))?;
    if !value.is_finite() {
        return Err(input_error(path, line, format!("column {column}: value is not finite")));
    }
    Ok(value)
}

fn optional(cell: &str) -> Option<String> {
    (!cell.is_empty()).then(|| cell.to_string())
}

fn expect_columns(path: &Path, header: &[String], expected: &[&str]) -> Result<()> {
    if header.len() < expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(format_error(
            path,
            format!(
                "expected header starting with {:?}, found {:?}",
                expected.join(","),
                header.join(",")
            ),
        ));
    }
    Ok(())
}

/// Parsed predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub records: Vec<ProbabilityRecord>,
    pub num_classes: usize,
    /// Present when the probability columns carry names rather than indices.
    pub class_names: Option<Vec<String>>,
}

const PREDICTION_COLUMNS: [&str; 4] = ["subject_id", "point_id", "group", "true_label"];

pub fn parse_predictions(source: impl Read, path: &Path) -> Result<Predictions> {
    let mut rdr = reader(source);
    let header = header(path, &mut rdr)?;
    expect_columns(path, &header, &PREDICTION_COLUMNS)?;
    let prob_columns = &header[PREDICTION_COLUMNS.len()..];
    if prob_columns.len() < 2 {
        return Err(format_error(path, "need at least two probability columns p_0,p_1,..."));
    }
    let mut suffixes = Vec::with_capacity(prob_columns.len());
    for col in prob_columns {
        match col.strip_prefix("p_") {
            Some(s) if !s.is_empty() => suffixes.push(s.to_string()),
            _ => {
                return Err(format_error(
                    path,
                    format!("probability column {col:?} must be named p_<class>"),
                ))
            }
        }
    }
    let indexed = suffixes.iter().enumerate().all(|(i, s)| *s == i.to_string());
    let class_names = (!indexed).then_some(suffixes);
    let k = prob_columns.len();

    let mut out = Vec::new();
    for row in records(path, &mut rdr) {
        let (line, r) = row?;
        let label = match &r[3] {
            "" => None,
            cell => Some(
                cell.parse::<usize>()
                    .map_err(|_| input_error(path, line, format!("true_label {cell:?} is not a class index")))?,
            ),
        };
        let probs = (0..k)
            .map(|i| parse_f64(path, line, &prob_columns[i], &r[4 + i]))
            .collect::<Result<Vec<f64>>>()?;
        let record = ProbabilityRecord::new(&r[0], &r[1], optional(&r[2]), probs, label)
            .map_err(|e| input_error(path, line, e.to_string()))?;
        if record.subject_id.is_empty() {
            return Err(input_error(path, line, "empty subject_id"));
        }
        out.push(record);
    }
    Ok(Predictions {
        records: out,
        num_classes: k,
        class_names,
    })
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    parse_predictions(open(path)?, path)
}

fn csv_writer<W: Write>(sink: W) -> csv::Writer<W> {
    WriterBuilder::new().from_writer(sink)
}

fn write_err(e: impl std::fmt::Display) -> Error {
    Error::io("write failed", std::io::Error::other(e.to_string()))
}

pub fn write_predictions(
    sink: impl Write,
    records: &[ProbabilityRecord],
    class_names: Option<&[String]>,
) -> Result<()> {
    let k = records.first().map(|r| r.num_classes()).unwrap_or(2);
    let mut w = csv_writer(sink);
    let mut head: Vec<String> = PREDICTION_COLUMNS.iter().map(|s| s.to_string()).collect();
    match class_names {
        Some(names) => head.extend(names.iter().map(|n| format!("p_{n}"))),
        None => head.extend((0..k).map(|i| format!("p_{i}"))),
    }
    w.write_record(&head).map_err(write_err)?;
    for r in records {
        let mut row = vec![
            r.subject_id.clone(),
            r.point_id.clone(),
            r.group.clone().unwrap_or_default(),
            r.true_label.map(|l| l.to_string()).unwrap_or_default(),
        ];
        row.extend(r.probs().iter().map(|p| p.to_string()));
        w.write_record(&row).map_err(write_err)?;
    }
    w.flush().map_err(|e| Error::io("write failed", e))
}

pub fn parse_assessments(source: impl Read, path: &Path) -> Result<AssessmentTable> {
    let mut rdr = reader(source);
    let header = header(path, &mut rdr)?;
    if header.len() != 2 || header[0] != "subject_id" {
        return Err(format_error(path, "expected header subject_id,clinical_score"));
    }
    let mut table = AssessmentTable::new(header[1].clone(), Orientation::HigherIsHealthier);
    for row in records(path, &mut rdr) {
        let (line, r) = row?;
        let score = parse_f64(path, line, &header[1], &r[1])?;
        table
            .insert(&r[0], score)
            .map_err(|e| input_error(path, line, e.to_string()))?;
    }
    Ok(table)
}

pub fn read_assessments(path: &Path) -> Result<AssessmentTable> {
    parse_assessments(open(path)?, path)
}

pub fn write_assessments(sink: impl Write, table: &AssessmentTable) -> Result<()> {
    let mut w = csv_writer(sink);
    w.write_record(["subject_id", "clinical_score"]).map_err(write_err)?;
    for (id, score) in table.iter() {
        w.write_record([id.to_string(), score.to_string()]).map_err(write_err)?;
    }
    w.flush().map_err(|e| Error::io("write failed", e))
}

pub fn parse_strata(source: impl Read, path: &Path) -> Result<HashMap<String, String>> {
    let mut rdr = reader(source);
    let header = header(path, &mut rdr)?;
    if header.len() != 2 || header[0] != "subject_id" {
        return Err(format_error(path, "expected header subject_id,<label>"));
    }
    let mut out = HashMap::new();
    for row in records(path, &mut rdr) {
        let (line, r) = row?;
        if out.insert(r[0].to_string(), r[1].to_string()).is_some() {
            return Err(input_error(path, line, format!("duplicate subject id {}", &r[0])));
        }
    }
    Ok(out)
}

pub fn read_strata(path: &Path) -> Result<HashMap<String, String>> {
    parse_strata(open(path)?, path)
}

pub fn write_strata<'a>(sink: impl Write, strata: impl IntoIterator<Item = (&'a String, &'a String)>) -> Result<()> {
    let mut w = csv_writer(sink);
    w.write_record(["subject_id", "stratum"]).map_err(write_err)?;
    for (id, s) in strata {
        w.write_record([id, s]).map_err(write_err)?;
    }
    w.flush().map_err(|e| Error::io("write failed", e))
}

/// Reads a features (or raw samples) file. Rows without a `point_id` column
/// get their 1-based row number within the file as point id.
pub fn parse_features(source: impl Read, path: &Path) -> Result<Vec<Sample>> {
    let mut rdr = reader(source);
    let header = header(path, &mut rdr)?;
    if header.first().map(String::as_str) != Some("subject_id") {
        return Err(format_error(path, "first column must be subject_id"));
    }
    let mut col = 1;
    let mut take = |name: &str| {
        if header.get(col).map(String::as_str) == Some(name) {
            col += 1;
            Some(col - 1)
        } else {
            None
        }
    };
    let point_col = take("point_id");
    let group_col = take("group");
    let label_col = take("label");
    let first_feature = col;
    let dim = header.len() - first_feature;
    if dim == 0 {
        return Err(format_error(path, "no feature columns f_0,..."));
    }
    for (i, name) in header[first_feature..].iter().enumerate() {
        if *name != format!("f_{i}") {
            return Err(format_error(path, format!("expected column f_{i}, found {name:?}")));
        }
    }
    let mut out = Vec::new();
    for (row_number, row) in records(path, &mut rdr).enumerate() {
        let (line, r) = row?;
        let label = match label_col.map(|c| &r[c]) {
            None | Some("") => None,
            Some(cell) => Some(
                cell.parse::<usize>()
                    .map_err(|_| input_error(path, line, format!("label {cell:?} is not a class index")))?,
            ),
        };
        let features = (0..dim)
            .map(|i| parse_f64(path, line, &header[first_feature + i], &r[first_feature + i]))
            .collect::<Result<Vec<f64>>>()?;
        out.push(Sample {
            subject_id: r[0].to_string(),
            point_id: point_col
                .map(|c| r[c].to_string())
                .unwrap_or_else(|| (row_number + 1).to_string()),
            group: group_col.and_then(|c| optional(&r[c])),
            label,
            features,
        });
    }
    Ok(out)
}

pub fn read_features(path: &Path) -> Result<Vec<Sample>> {
    parse_features(open(path)?, path)
}

/// Writes samples with all optional columns (`subject_id,point_id,group,label,f_*`).
pub fn write_samples(sink: impl Write, samples: &[Sample]) -> Result<()> {
    let dim = samples.first().map(|s| s.features.len()).unwrap_or(0);
    let mut w = csv_writer(sink);
    let mut head: Vec<String> = ["subject_id", "point_id", "group", "label"].map(String::from).to_vec();
    head.extend((0..dim).map(|i| format!("f_{i}")));
    w.write_record(&head).map_err(write_err)?;
    for s in samples {
        let mut row = vec![
            s.subject_id.clone(),
            s.point_id.clone(),
            s.group.clone().unwrap_or_default(),
            s.label.map(|l| l.to_string()).unwrap_or_default(),
        ];
        row.extend(s.features.iter().map(|f| f.to_string()));
        w.write_record(&row).map_err(write_err)?;
    }
    w.flush().map_err(|e| Error::io("write failed", e))
}

/// Writes `subject_id,point_id,f_*` feature rows.
pub fn write_feature_rows(sink: impl Write, rows: &[(&str, &str, &[f64])]) -> Result<()> {
    let dim = rows.first().map(|r| r.2.len()).unwrap_or(0);
    let mut w = csv_writer(sink);
    let mut head: Vec<String> = vec!["subject_id".into(), "point_id".into()];
    head.extend((0..dim).map(|i| format!("f_{i}")));
    w.write_record(&head).map_err(write_err)?;
    for (subject, point, features) in rows {
        let mut row = vec![subject.to_string(), point.to_string()];
        row.extend(features.iter().map(|f| f.to_string()));
        w.write_record(&row).map_err(write_err)?;
    }
    w.flush().map_err(|e| Error::io("write failed", e))
}

/// Groups feature rows per subject, in first-appearance order.
pub fn feature_sets(samples: &[Sample]) -> Vec<FeatureSet> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut sets: Vec<FeatureSet> = Vec::new();
    for s in samples {
        let slot = *index.entry(s.subject_id.as_str()).or_insert_with(|| {
            sets.push(FeatureSet {
                id: s.subject_id.clone(),
                rows: Vec::new(),
            });
            sets.len() - 1
        });
        sets[slot].rows.push(s.features.clone());
    }
    sets
}

/// A row of a scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub group: Option<String>,
    pub score: SubjectScore,
}

pub fn write_scores(sink: impl Write, rows: &[ScoreRow]) -> Result<()> {
    let grouped = rows.iter().any(|r| r.group.is_some());
    let mut w = csv_writer(sink);
    let head: &[&str] = if grouped {
        &["subject_id", "group", "score", "n_total", "n_relevant"]
    } else {
        &["subject_id", "score", "n_total", "n_relevant"]
    };
    w.write_record(head).map_err(write_err)?;
    for r in rows {
        let s = &r.score;
        let mut row = vec![s.subject_id.clone()];
        if grouped {
            row.push(r.group.clone().unwrap_or_default());
        }
        row.push(s.score.map(|v| v.to_string()).unwrap_or_default());
        row.push(s.n_total.to_string());
        row.push(s.n_relevant.to_string());
        w.write_record(&row).map_err(write_err)?;
    }
    w.flush().map_err(|e| Error::io("write failed", e))
}

pub fn parse_scores(source: impl Read, path: &Path) -> Result<Vec<ScoreRow>> {
    let mut rdr = reader(source);
    let header = header(path, &mut rdr)?;
    let grouped = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["subject_id", "score", "n_total", "n_relevant"] => false,
        ["subject_id", "group", "score", "n_total", "n_relevant"] => true,
        _ => {
            return Err(format_error(
                path,
                "expected header subject_id[,group],score,n_total,n_relevant",
            ))
        }
    };
    let offset = usize::from(grouped);
    let mut out = Vec::new();
    for row in records(path, &mut rdr) {
        let (line, r) = row?;
        let count = |i: usize| -> Result<usize> {
            r[i].parse()
                .map_err(|_| input_error(path, line, format!("{:?} is not a count", &r[i])))
        };
        let score = match &r[1 + offset] {
            "" => None,
            cell => Some(parse_f64(path, line, "score", cell)?),
        };
        out.push(ScoreRow {
            group: if grouped { optional(&r[1]) } else { None },
            score: SubjectScore {
                subject_id: r[0].to_string(),
                score,
                n_total: count(2 + offset)?,
                n_relevant: count(3 + offset)?,
            },
        });
    }
    Ok(out)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    parse_scores(open(path)?, path)
}

/// Label used for in-memory sources in error messages.
pub fn memory_source(name: &str) -> PathBuf {
    PathBuf::from(name)
}
