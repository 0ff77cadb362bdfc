//! CSV tables for delta grids, crossings and raw counts.
//!
//! Each file starts with one or more `#` lines. The first carries the schema
//! version, the table kind and any flags (`key=value`); the count table adds a
//! `# header=` line with its JSON header.
//!
//! Column orders:
//! - delta: `budget,eps,delta,std_err,source`
//! - crossings: `budget,eps_star,status,bracket_lo,bracket_hi`
//! - counts: `budget_idx,eps_idx,arm,scale_idx,rep_idx,shots,plus_count`
//!   (`arm` is `noisy` or `zne`; `scale_idx` is empty for the noisy arm)

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::boundary::{CrossingEstimate, CrossingStatus};
use crate::error::{Error, Result};
use crate::mse::{CountCell, CountHeader, CountTable, DeltaCurve, DeltaPoint, Source};
use crate::rng::CellKey;

pub const SCHEMA_VERSION: u32 = 1;

/// Contents of the leading `#` lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preamble {
    pub schema_version: u32,
    pub kind: String,
    pub flags: BTreeMap<String, String>,
    pub header_json: Option<String>,
}

impl Preamble {
    pub fn new(kind: &str) -> Self {
        Preamble {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            flags: BTreeMap::new(),
            header_json: None,
        }
    }

    pub fn flag(mut self, key: &str, value: impl ToString) -> Self {
        self.flags.insert(key.to_string(), value.to_string());
        self
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "# schema_version={} kind={}", self.schema_version, self.kind)?;
        for (k, v) in &self.flags {
            write!(w, " {k}={v}")?;
        }
        writeln!(w)?;
        if let Some(h) = &self.header_json {
            writeln!(w, "# header={h}")?;
        }
        Ok(())
    }

    fn parse_line(&mut self, line: &str) -> Result<()> {
        let body = line.trim_start_matches('#').trim();
        if let Some(json) = body.strip_prefix("header=") {
            self.header_json = Some(json.to_string());
            return Ok(());
        }
        for token in body.split_whitespace() {
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("malformed preamble token '{token}'")))?;
            match k {
                "schema_version" => {
                    self.schema_version = v
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad schema version '{v}'")))?
                }
                "kind" => self.kind = v.to_string(),
                _ => {
                    self.flags.insert(k.to_string(), v.to_string());
                }
            }
        }
        Ok(())
    }
}

/// Splits the `#` preamble from the CSV body.
fn split_preamble<R: Read>(reader: R, kind: &str) -> Result<(Preamble, String)> {
    let mut pre = Preamble::default();
    let mut body = String::new();
    let mut seen = false;
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if !seen && line.starts_with('#') {
            pre.parse_line(&line)?;
        } else {
            seen = true;
            body.push_str(&line);
            body.push('\n');
        }
    }
    if pre.schema_version != SCHEMA_VERSION {
        return Err(Error::invalid(format!(
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            pre.schema_version
        )));
    }
    if pre.kind != kind {
        return Err(Error::invalid(format!("expected a {kind} table, found '{}'", pre.kind)));
    }
    Ok((pre, body))
}

#[derive(Debug, Serialize, Deserialize)]
struct DeltaRow {
    budget: f64,
    eps: f64,
    delta: f64,
    std_err: Option<f64>,
    source: String,
}

fn source_str(s: Source) -> &'static str {
    match s {
        Source::Exact => "exact",
        Source::MonteCarlo => "monte_carlo",
    }
}

fn parse_source(s: &str) -> Result<Source> {
    match s {
        "exact" => Ok(Source::Exact),
        "monte_carlo" => Ok(Source::MonteCarlo),
        other => Err(Error::invalid(format!("unknown source '{other}'"))),
    }
}

pub fn write_delta_csv<W: Write>(mut w: W, curves: &[DeltaCurve<f64>], pre: &Preamble) -> Result<()> {
    pre.write_to(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    for p in curves.iter().flat_map(|c| &c.points) {
        csv.serialize(DeltaRow {
            budget: p.budget,
            eps: p.eps,
            delta: p.delta,
            std_err: p.std_err,
            source: source_str(p.source).into(),
        })?;
    }
    csv.flush()?;
    Ok(())
}

/// Reads a delta table; consecutive rows with equal budget form one curve.
pub fn read_delta_csv<R: Read>(r: R) -> Result<(Preamble, Vec<DeltaCurve<f64>>)> {
    let (pre, body) = split_preamble(r, "delta")?;
    let mut curves: Vec<DeltaCurve<f64>> = Vec::new();
    for row in csv::Reader::from_reader(body.as_bytes()).deserialize() {
        let row: DeltaRow = row?;
        let point = DeltaPoint {
            eps: row.eps,
            budget: row.budget,
            delta: row.delta,
            source: parse_source(&row.source)?,
            std_err: row.std_err,
        };
        match curves.last_mut() {
            Some(c) if c.budget == row.budget => c.points.push(point),
            _ => curves.push(DeltaCurve {
                budget: row.budget,
                points: vec![point],
            }),
        }
    }
    Ok((pre, curves))
}

#[derive(Debug, Serialize, Deserialize)]
struct CrossingRow {
    budget: f64,
    eps_star: Option<f64>,
    status: String,
    bracket_lo: Option<f64>,
    bracket_hi: Option<f64>,
}

pub fn write_crossings_csv<W: Write>(
    mut w: W,
    crossings: &[CrossingEstimate<f64>],
    pre: &Preamble,
) -> Result<()> {
    pre.write_to(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    for c in crossings {
        csv.serialize(CrossingRow {
            budget: c.budget,
            eps_star: c.eps_star,
            status: c.status.as_str().into(),
            bracket_lo: c.bracket_lo,
            bracket_hi: c.bracket_hi,
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_crossings_csv<R: Read>(r: R) -> Result<(Preamble, Vec<CrossingEstimate<f64>>)> {
    let (pre, body) = split_preamble(r, "crossings")?;
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(body.as_bytes()).deserialize() {
        let row: CrossingRow = row?;
        let status: CrossingStatus = row.status.parse()?;
        out.push(CrossingEstimate {
            budget: row.budget,
            eps_star: row.eps_star,
            status,
            bracket_lo: row.bracket_lo,
            bracket_hi: row.bracket_hi,
        });
    }
    Ok((pre, out))
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    budget_idx: u32,
    eps_idx: u32,
    arm: String,
    scale_idx: Option<u32>,
    rep_idx: u32,
    shots: u64,
    plus_count: u64,
}

pub fn write_counts_csv<W: Write>(mut w: W, table: &CountTable, pre: &Preamble) -> Result<()> {
    let mut pre = pre.clone();
    pre.kind = "counts".into();
    pre.header_json = Some(serde_json::to_string(&table.header)?);
    pre.write_to(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    for c in &table.cells {
        csv.serialize(CountRow {
            budget_idx: c.budget_idx,
            eps_idx: c.eps_idx,
            arm: if c.is_noisy() { "noisy" } else { "zne" }.into(),
            scale_idx: (!c.is_noisy()).then_some(c.scale_idx),
            rep_idx: c.rep_idx,
            shots: c.shots,
            plus_count: c.plus_count,
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_counts_csv<R: Read>(r: R) -> Result<(Preamble, CountTable)> {
    let (pre, body) = split_preamble(r, "counts")?;
    let header: CountHeader = serde_json::from_str(
        pre.header_json
            .as_deref()
            .ok_or_else(|| Error::invalid("count table lacks a '# header=' line"))?,
    )?;
    let mut cells = Vec::new();
    for row in csv::Reader::from_reader(body.as_bytes()).deserialize() {
        let row: CountRow = row?;
        let scale_idx = match (row.arm.as_str(), row.scale_idx) {
            ("noisy", None) => CellKey::NOISY_ARM,
            ("zne", Some(s)) => s,
            (arm, s) => {
                return Err(Error::invalid(format!("bad arm/scale pair ({arm}, {s:?})")));
            }
        };
        cells.push(CountCell {
            budget_idx: row.budget_idx,
            eps_idx: row.eps_idx,
            scale_idx,
            rep_idx: row.rep_idx,
            shots: row.shots,
            plus_count: row.plus_count,
        });
    }
    let table = CountTable { header, cells };
    table.validate()?;
    Ok((pre, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::find_crossings;
    use crate::models::DeterministicLimitBinary;
    use crate::mse::{exact_curve, mc_sweep};
    use crate::rules::RuleSpec;

    #[test]
    fn delta_and_crossing_round_trip() {
        let m = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        let rule = RuleSpec::<f64>::uniform(&[1.0, 3.0]).unwrap();
        let grid: Vec<f64> = (1..30).map(|i| i as f64 * 1e-3).collect();
        let curves: Vec<_> = [1e3, 1e4]
            .iter()
            .map(|&b| exact_curve(&m, Some(&rule), b, &grid).unwrap())
            .collect();
        let pre = Preamble::new("delta").flag("preregistered", true);
        let mut buf = Vec::new();
        write_delta_csv(&mut buf, &curves, &pre).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# schema_version=1 kind=delta preregistered=true\nbudget,eps,delta,std_err,source\n"));
        let (p2, back) = read_delta_csv(buf.as_slice()).unwrap();
        assert_eq!(p2, pre);
        assert_eq!(back, curves);

        let xs = find_crossings(&curves).unwrap();
        let mut buf = Vec::new();
        write_crossings_csv(&mut buf, &xs, &Preamble::new("crossings")).unwrap();
        assert_eq!(read_crossings_csv(buf.as_slice()).unwrap().1, xs);
        assert!(read_delta_csv(buf.as_slice()).is_err());
    }

    #[test]
    fn counts_round_trip() {
        let m = DeterministicLimitBinary::<f64>::new(1.0).unwrap();
        let rule = RuleSpec::<f64>::uniform(&[1.0, 3.0]).unwrap();
        let awkward: Vec<f64> = (1..6).map(|i| 1e-3 * 1.7f64.powf(i as f64 / 7.0)).collect();
        let (_, table) = mc_sweep(&m, &rule, &[100, 200], &[vec![0.01, 0.02], awkward], 3, 7).unwrap();
        let mut buf = Vec::new();
        write_counts_csv(&mut buf, &table, &Preamble::new("counts")).unwrap();
        let (_, back) = read_counts_csv(buf.as_slice()).unwrap();
        assert_eq!(back, table);
    }
}
