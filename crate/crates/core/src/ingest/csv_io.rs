use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::SensorSequence;

const DEFAULT_RATE_HZ: f64 = 50.0;

/// Which columns hold channel values and which holds the label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    /// Channel columns in order; `None` selects every `ch_<i>` column sorted by `i`.
    pub channel_columns: Option<Vec<String>>,
    pub label_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            channel_columns: None,
            label_column: "label".into(),
        }
    }
}

fn parse_rate(line: &str) -> Option<f64> {
    let rest = line.trim_start_matches('#').trim();
    let value = rest.strip_prefix("sample_rate_hz=")?;
    value.trim().parse().ok()
}

/// Loads a labelled sequence.
///
/// Empty or `nan` cells are filled by linear interpolation within their
/// channel; leading and trailing gaps take the nearest present value.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SensorSequence> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let (rate, header_offset, prefix) = match parse_rate(&first) {
        Some(r) if first.trim_start().starts_with('#') => (r, 1, String::new()),
        _ if first.trim_start().starts_with('#') => (DEFAULT_RATE_HZ, 1, String::new()),
        _ => (DEFAULT_RATE_HZ, 0, first),
    };
    let chained = std::io::Cursor::new(prefix.into_bytes()).chain(reader);
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(chained);
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let headers = csv
        .headers()
        .map_err(|e| parse_err(header_offset + 1, e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let channel_idx: Vec<usize> = match &schema.channel_columns {
        Some(names) => names
            .iter()
            .map(|n| column(n).ok_or_else(|| parse_err(header_offset + 1, format!("missing column `{n}`"))))
            .collect::<Result<_>>()?,
        None => {
            let mut found: Vec<(usize, usize)> = headers
                .iter()
                .enumerate()
                .filter_map(|(i, h)| h.strip_prefix("ch_").and_then(|n| n.parse().ok()).map(|n| (n, i)))
                .collect();
            found.sort_unstable();
            found.into_iter().map(|(_, i)| i).collect()
        }
    };
    if channel_idx.is_empty() {
        return Err(parse_err(header_offset + 1, "no channel columns".into()));
    }
    let label_idx = column(&schema.label_column).ok_or_else(|| {
        parse_err(
            header_offset + 1,
            format!("missing label column `{}`", schema.label_column),
        )
    })?;
    let d = channel_idx.len();
    let mut values: Vec<Option<f32>> = Vec::new();
    let mut labels = Vec::new();
    for (row_no, record) in csv.records().enumerate() {
        let line = header_offset + 2 + row_no;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        for &ci in &channel_idx {
            let cell = record.get(ci).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                values.push(None);
            } else {
                let v: f32 = cell
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad number `{cell}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("non-finite value `{cell}`")));
                }
                values.push(Some(v));
            }
        }
        let cell = record.get(label_idx).unwrap_or("");
        let label: usize = cell
            .parse()
            .map_err(|_| parse_err(line, format!("bad label `{cell}`")))?;
        labels.push(label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset(format!("{} has no data rows", path.display())));
    }
    let mut samples = vec![0.0f32; n * d];
    for c in 0..d {
        let column: Vec<Option<f32>> = (0..n).map(|r| values[r * d + c]).collect();
        let filled = interpolate(&column).ok_or_else(|| {
            parse_err(header_offset + 1, format!("channel {c} has no values"))
        })?;
        for (r, v) in filled.into_iter().enumerate() {
            samples[r * d + c] = v;
        }
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    SensorSequence::new(d, samples, labels, classes, rate)
}

fn interpolate(column: &[Option<f32>]) -> Option<Vec<f32>> {
    let present: Vec<usize> = (0..column.len()).filter(|&i| column[i].is_some()).collect();
    let (&first, &last) = (present.first()?, present.last()?);
    let mut out = vec![0.0f32; column.len()];
    for (i, o) in out.iter_mut().enumerate() {
        *o = match column[i] {
            Some(v) => v,
            None if i < first => column[first].unwrap(),
            None if i > last => column[last].unwrap(),
            None => {
                let hi = present.partition_point(|&p| p < i);
                let (a, b) = (present[hi - 1], present[hi]);
                let (va, vb) = (column[a].unwrap() as f64, column[b].unwrap() as f64);
                let frac = (i - a) as f64 / (b - a) as f64;
                (va + (vb - va) * frac) as f32
            }
        };
    }
    Some(out)
}

/// Writes the sequence in the format read by [`load_csv`]. Values use the
/// shortest representation that parses back to the same `f32`.
pub fn write_csv(seq: &SensorSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "# sample_rate_hz={}", seq.sample_rate_hz).map_err(io)?;
    let header: Vec<String> = (0..seq.channels())
        .map(|c| format!("ch_{c}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for i in 0..seq.len() {
        line.clear();
        for v in seq.row(i) {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&seq.labels()[i].to_string());
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}
