//! Text file formats: label embeddings, instance datasets, multi-label
//! region files, checkpoints, and evaluation reports.
//!
//! Loaders reject malformed input with the offending line number rather
//! than repairing it.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::embedding::{Dataset, Instance, LabelTable};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::mining::MultiLabelImage;
use crate::trainer::TrainState;

const CHECKPOINT_HEADER: &str = "SEMEMBED v1";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn parse_floats(path: &Path, line_no: usize, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(path, line_no, format!("bad number {tok:?}")))
        })
        .collect()
}

/// One label per line: `label_id<TAB>v1 v2 ... vD`. Vectors are
/// renormalized on load; duplicate ids and inconsistent dimensions error.
pub fn load_label_embeddings(path: impl AsRef<Path>) -> Result<LabelTable> {
    let path = path.as_ref();
    let mut entries = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        let Some((id, rest)) = line.split_once('\t') else {
            return Err(parse_err(
                path,
                line_no,
                "expected `label<TAB>values`".to_string(),
            ));
        };
        if id.is_empty() {
            return Err(parse_err(path, line_no, "empty label id"));
        }
        let values = parse_floats(path, line_no, rest)?;
        if values.is_empty() {
            return Err(parse_err(path, line_no, "no embedding values"));
        }
        if let Some((_, first)) = entries.first() as Option<&(String, Array1<f64>)> {
            if values.len() != first.len() {
                return Err(parse_err(
                    path,
                    line_no,
                    format!(
                        "dimension {} differs from the first line's {}",
                        values.len(),
                        first.len()
                    ),
                ));
            }
        }
        entries.push((id.to_string(), Array1::from(values)));
    }
    if entries.is_empty() {
        return Err(parse_err(path, 0, "no labels in file"));
    }
    LabelTable::new(entries)
}

pub fn write_label_embeddings(path: impl AsRef<Path>, labels: &LabelTable) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (id, vector) in labels.iter() {
        write!(out, "{id}\t").unwrap();
        push_floats(&mut out, vector.iter());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

fn push_floats<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        write!(out, "{v}").unwrap();
        first = false;
    }
}

/// One instance per line: `id<TAB>label<TAB>f1 f2 ... fF`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut instances = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(parse_err(
                path,
                line_no,
                format!(
                    "expected `id<TAB>label<TAB>features` (3 fields), found {}",
                    parts.len()
                ),
            ));
        }
        let values = parse_floats(path, line_no, parts[2])?;
        if values.is_empty() {
            return Err(parse_err(path, line_no, "no feature values"));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("feature dimension {} differs from {d}", values.len()),
                ));
            }
            _ => {}
        }
        instances.push(Instance::new(parts[0], Array1::from(values), parts[1]));
    }
    if instances.is_empty() {
        return Err(parse_err(path, 0, "no instances in file"));
    }
    Dataset::new(instances)
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for inst in dataset.instances() {
        write!(out, "{}\t{}\t", inst.id, inst.label).unwrap();
        push_floats(&mut out, inst.features.iter());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Multi-label region format: an image header
/// `img<TAB>id<TAB>label1,label2<TAB>f1 ... fF` followed by its region
/// lines `reg<TAB>id<TAB>f1 ... fF` until the next header.
pub fn load_multilabel(path: impl AsRef<Path>) -> Result<Vec<MultiLabelImage>> {
    let path = path.as_ref();
    struct Pending {
        id: String,
        features: Array1<f64>,
        labels: BTreeSet<String>,
        regions: Vec<(String, Array1<f64>)>,
    }
    let mut images = Vec::new();
    let mut current: Option<Pending> = None;
    let mut dim: Option<usize> = None;

    let finish = |pending: Option<Pending>, images: &mut Vec<MultiLabelImage>| -> Result<()> {
        if let Some(p) = pending {
            images.push(MultiLabelImage::new(p.id, p.features, p.labels, p.regions)?);
        }
        Ok(())
    };

    for (i, line) in read_lines(path)?.iter().enumerate() {
        let line_no = i + 1;
        let parts: Vec<&str> = line.split('\t').collect();
        match parts[0] {
            "img" => {
                if parts.len() != 4 {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!(
                            "expected `img<TAB>id<TAB>labels<TAB>features` (4 fields), found {}",
                            parts.len()
                        ),
                    ));
                }
                finish(current.take(), &mut images)?;
                let labels: BTreeSet<String> = parts[2]
                    .split(',')
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect();
                if labels.is_empty() {
                    return Err(parse_err(path, line_no, "empty label list"));
                }
                let values = parse_floats(path, line_no, parts[3])?;
                check_dim(path, line_no, &mut dim, values.len())?;
                current = Some(Pending {
                    id: parts[1].to_string(),
                    features: Array1::from(values),
                    labels,
                    regions: Vec::new(),
                });
            }
            "reg" => {
                if parts.len() != 3 {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!(
                            "expected `reg<TAB>id<TAB>features` (3 fields), found {}",
                            parts.len()
                        ),
                    ));
                }
                let Some(pending) = current.as_mut() else {
                    return Err(parse_err(
                        path,
                        line_no,
                        "region line before any image header",
                    ));
                };
                let values = parse_floats(path, line_no, parts[2])?;
                check_dim(path, line_no, &mut dim, values.len())?;
                pending
                    .regions
                    .push((parts[1].to_string(), Array1::from(values)));
            }
            other => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("unknown marker {other:?} (expected `img` or `reg`)"),
                ));
            }
        }
    }
    finish(current.take(), &mut images)?;
    if images.is_empty() {
        return Err(parse_err(path, 0, "no images in file"));
    }
    Ok(images)
}

fn check_dim(path: &Path, line_no: usize, dim: &mut Option<usize>, found: usize) -> Result<()> {
    if found == 0 {
        return Err(parse_err(path, line_no, "no feature values"));
    }
    match dim {
        None => {
            *dim = Some(found);
            Ok(())
        }
        Some(d) if *d != found => Err(parse_err(
            path,
            line_no,
            format!("feature dimension {found} differs from {d}"),
        )),
        _ => Ok(()),
    }
}

/// Writes weights, velocity, and epoch as decimal text with 17 significant
/// digits, which round-trips f64 exactly.
pub fn save_checkpoint(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let weights = state.model.weights();
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_HEADER}").unwrap();
    writeln!(out, "{} {}", weights.nrows(), weights.ncols()).unwrap();
    for matrix in [weights, &state.velocity] {
        for row in matrix.rows() {
            let mut first = true;
            for v in row.iter() {
                if !first {
                    out.push(' ');
                }
                write!(out, "{v:.16e}").unwrap();
                first = false;
            }
            out.push('\n');
        }
    }
    writeln!(out, "{}", state.epoch).unwrap();
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let mut cursor = lines.iter().enumerate();

    let (_, header) = cursor
        .next()
        .ok_or_else(|| parse_err(path, 0, "empty checkpoint"))?;
    if header != CHECKPOINT_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("unsupported version line {header:?}, expected {CHECKPOINT_HEADER:?}"),
        ));
    }
    let (_, dims) = cursor
        .next()
        .ok_or_else(|| parse_err(path, 2, "missing dimensions line"))?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| parse_err(path, 2, format!("bad dimension {t:?}")))
        })
        .collect::<Result<_>>()?;
    let [d, f] = dims[..] else {
        return Err(parse_err(path, 2, "expected `D F`"));
    };

    let mut read_matrix = |label: &str| -> Result<Array2<f64>> {
        let mut values = Vec::with_capacity(d * f);
        for row in 0..d {
            let Some((i, line)) = cursor.next() else {
                return Err(parse_err(
                    path,
                    lines.len(),
                    format!(
                        "truncated {label}: expected {} values ({d} rows), found {}",
                        d * f,
                        values.len()
                    ),
                ));
            };
            let row_values = parse_floats(path, i + 1, line)?;
            if row_values.len() != f {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!(
                        "{label} row {row}: expected {f} values, found {}",
                        row_values.len()
                    ),
                ));
            }
            values.extend(row_values);
        }
        Array2::from_shape_vec((d, f), values)
            .map_err(|e| parse_err(path, 0, format!("{label} shape: {e}")))
    };

    let weights = read_matrix("weights")?;
    let velocity = read_matrix("velocity")?;
    let (i, epoch_line) = cursor
        .next()
        .ok_or_else(|| parse_err(path, lines.len(), "missing epoch line"))?;
    let epoch: usize = epoch_line
        .trim()
        .parse()
        .map_err(|_| parse_err(path, i + 1, format!("bad epoch {epoch_line:?}")))?;
    if let Some((i, extra)) = cursor.next() {
        if !extra.trim().is_empty() {
            return Err(parse_err(path, i + 1, "unexpected trailing content"));
        }
    }

    let model = crate::embedding::EmbeddingModel::from_weights(weights)?;
    Ok(TrainState {
        model,
        velocity,
        epoch,
        loss_history: Vec::new(),
    })
}

/// Flat `key=value` text rendering of a report.
pub fn render_report_txt(report: &EvalReport) -> String {
    let mut out = String::new();
    for (k, v) in &report.hit_at_k {
        writeln!(out, "hit@{k}={v}").unwrap();
    }
    if let (Some(k), Some(m)) = (report.multilabel_k, report.multilabel.as_ref()) {
        writeln!(out, "topk={k}").unwrap();
        writeln!(out, "cp={}", m.per_class_precision).unwrap();
        writeln!(out, "cr={}", m.per_class_recall).unwrap();
        writeln!(out, "cf1={}", m.per_class_f1).unwrap();
        writeln!(out, "op={}", m.overall_precision).unwrap();
        writeln!(out, "or={}", m.overall_recall).unwrap();
        writeln!(out, "of1={}", m.overall_f1).unwrap();
    }
    if let Some(map) = report.map {
        writeln!(out, "map={map}").unwrap();
    }
    for (n, v) in &report.map_at_n {
        writeln!(out, "map@{n}={v}").unwrap();
    }
    if let Some(cm) = &report.confusion {
        writeln!(out, "confusion_labels={}", cm.labels.join(",")).unwrap();
        for (label, row) in cm.labels.iter().zip(&cm.counts) {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(out, "confusion_row_{label}={}", cells.join(" ")).unwrap();
        }
    }
    out
}

/// Writes `report.txt` (key=value lines) and `report.json` side by side.
pub fn write_report(report: &EvalReport, txt_path: impl AsRef<Path>) -> Result<()> {
    let txt_path = txt_path.as_ref();
    fs::write(txt_path, render_report_txt(report)).map_err(|e| io_err(txt_path, e))?;
    let json_path = txt_path.with_extension("json");
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::InvalidData(format!("report serialization: {e}")))?;
    fs::write(&json_path, json + "\n").map_err(|e| io_err(&json_path, e))
}
