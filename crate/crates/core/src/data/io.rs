//! Delimited panel files and transformation-code sidecars.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{TimeSeriesPanel, TransformCode, YearMonth};
use crate::{Error, Result};

/// Series name to transformation code.
pub type TcodeMap = BTreeMap<String, TransformCode>;

/// Delimiter implied by a file extension: tab for `.tsv`/`.tab`, comma otherwise.
pub fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("tab") => b'\t',
        _ => b',',
    }
}

/// Reads a `name = code` sidecar in TOML, or a JSON object when the file ends
/// in `.json`.
pub fn read_tcodes(path: &Path) -> Result<TcodeMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        serde_json::from_str(&text).map_err(|e| Error::format("tcode sidecar", e))
    } else {
        toml::from_str(&text).map_err(|e| Error::format("tcode sidecar", e))
    }
}

pub fn read_panel(path: &Path, tcodes: Option<&TcodeMap>) -> Result<TimeSeriesPanel> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel_from(file, delimiter_for(path), tcodes)
}

fn parse_value(raw: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") || s == "." {
        return Ok(f64::NAN);
    }
    s.parse::<f64>()
        .map_err(|_| Error::format("panel value", format!("`{s}` is not a number")))
}

/// Parses a panel: first column ISO months, header row of series names.
/// Series absent from `tcodes` are taken as untransformed.
pub fn read_panel_from<R: Read>(
    reader: R,
    delimiter: u8,
    tcodes: Option<&TcodeMap>,
) -> Result<TimeSeriesPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::format("panel header", "need a date column and at least one series"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for record in rdr.records() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::format(
                "panel row",
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        dates.push(record[0].parse::<YearMonth>()?);
        for (col, raw) in columns.iter_mut().zip(record.iter().skip(1)) {
            col.push(parse_value(raw)?);
        }
    }
    if let Some(map) = tcodes {
        for key in map.keys() {
            if !names.contains(key) {
                log::warn!("tcode given for `{key}`, which is not in the panel");
            }
        }
    }
    let codes = names
        .iter()
        .map(|n| {
            tcodes
                .and_then(|m| m.get(n).copied())
                .unwrap_or(TransformCode::Level)
        })
        .collect();
    TimeSeriesPanel::new(dates, names, columns, codes)
}

pub fn write_panel(panel: &TimeSeriesPanel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_panel_to(panel, &mut buf, delimiter_for(path))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_panel_to<W: Write>(panel: &TimeSeriesPanel, writer: W, delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(panel.names().iter().cloned());
    wtr.write_record(&header)?;
    let columns: Vec<&[f64]> = panel
        .names()
        .iter()
        .map(|n| panel.column(n))
        .collect::<Result<_>>()?;
    for (t, date) in panel.dates().iter().enumerate() {
        let mut row = vec![date.to_string()];
        row.extend(columns.iter().map(|c| {
            if c[t].is_nan() {
                String::new()
            } else {
                c[t].to_string()
            }
        }));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<panel writer>", e))?;
    Ok(())
}
