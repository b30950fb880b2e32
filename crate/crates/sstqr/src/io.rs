//! Observation CSV files and their conversion to unit-scaled datasets.
//!
//! The header names the columns `site_id`, `z1`..`zd`, `time` and `value`
//! in any order; `d` is the number of `z` columns.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use sstqr_core::{Dataset, Site, TransformSpec, UnitScale};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub site_id: String,
    pub coords: Vec<f64>,
    pub time: f64,
    pub value: f64,
}

struct Columns {
    site: usize,
    coords: Vec<usize>,
    time: usize,
    value: usize,
}

fn columns(header: &csv::StringRecord) -> Result<Columns> {
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let missing = |name: &str| AppError::Format {
        line: 1,
        message: format!("missing required column `{name}`"),
    };
    let site = find("site_id").ok_or_else(|| missing("site_id"))?;
    let time = find("time").ok_or_else(|| missing("time"))?;
    let value = find("value").ok_or_else(|| missing("value"))?;
    let mut coords = Vec::new();
    while let Some(c) = find(&format!("z{}", coords.len() + 1)) {
        coords.push(c);
    }
    if coords.is_empty() {
        return Err(missing("z1"));
    }
    Ok(Columns {
        site,
        coords,
        time,
        value,
    })
}

/// Parses observations from CSV. A file holding only a header yields an
/// empty list.
pub fn read_observations<R: Read>(reader: R) -> Result<Vec<Observation>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    let cols = columns(&header)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize, name: &str| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("").trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(AppError::Format {
                    line,
                    message: format!("column `{name}`: `{raw}` is not a finite number"),
                }),
            }
        };
        let coords = cols
            .coords
            .iter()
            .enumerate()
            .map(|(k, &i)| num(i, &format!("z{}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        out.push(Observation {
            site_id: rec.get(cols.site).unwrap_or("").to_string(),
            coords,
            time: num(cols.time, "time")?,
            value: num(cols.value, "value")?,
        });
    }
    Ok(out)
}

pub fn read_observations_path(path: &Path) -> Result<Vec<Observation>> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    read_observations(std::io::BufReader::new(file))
}

pub fn write_observations<W: Write>(writer: W, obs: &[Observation]) -> Result<()> {
    let d = obs.first().map_or(0, |o| o.coords.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["site_id".to_string()];
    header.extend((1..=d).map(|k| format!("z{k}")));
    header.push("time".into());
    header.push("value".into());
    w.write_record(&header)?;
    for o in obs {
        let mut row = vec![o.site_id.clone()];
        row.extend(o.coords.iter().map(|v| v.to_string()));
        row.push(o.time.to_string());
        row.push(o.value.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| AppError::io("<output>", e))?;
    Ok(())
}

fn range(name: &str, values: impl Iterator<Item = f64>) -> Result<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi <= lo {
        return Err(AppError::DegenerateTransform(name.to_string()));
    }
    Ok((lo, hi))
}

/// Min-max scales every variable to `[0, 1]` and groups rows by site in
/// order of first appearance.
///
/// A spatial coordinate with a single value (for example one site) is
/// mapped to 0.5; time and value must vary.
pub fn build_dataset(obs: &[Observation]) -> Result<Dataset> {
    let Some(first) = obs.first() else {
        return Err(AppError::Data("no observations".into()));
    };
    let d = first.coords.len();
    if let Some(o) = obs.iter().find(|o| o.coords.len() != d) {
        return Err(AppError::Data(format!(
            "site {} has {} coordinates, expected {d}",
            o.site_id,
            o.coords.len()
        )));
    }
    let mut coords = Vec::with_capacity(d);
    for k in 0..d {
        let name = format!("z{}", k + 1);
        let scale = match range(&name, obs.iter().map(|o| o.coords[k])) {
            Ok((lo, hi)) => UnitScale::new(lo, hi)?,
            Err(_) => UnitScale::new(first.coords[k] - 0.5, first.coords[k] + 0.5)?,
        };
        coords.push(scale);
    }
    let (t0, t1) = range("time", obs.iter().map(|o| o.time))?;
    let (v0, v1) = range("value", obs.iter().map(|o| o.value))?;
    let transforms = TransformSpec {
        coords,
        time: UnitScale::new(t0, t1)?,
        value: UnitScale::new(v0, v1)?,
    };

    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut sites: Vec<Site> = Vec::new();
    let mut raw: Vec<&[f64]> = Vec::new();
    for o in obs {
        let l = *index.entry(o.site_id.as_str()).or_insert_with(|| {
            raw.push(&o.coords);
            sites.push(Site {
                id: o.site_id.clone(),
                coords: o
                    .coords
                    .iter()
                    .zip(&transforms.coords)
                    .map(|(v, s)| s.apply(*v).clamp(0.0, 1.0))
                    .collect(),
                obs: Vec::new(),
            });
            sites.len() - 1
        });
        if raw[l] != o.coords.as_slice() {
            return Err(AppError::Data(format!(
                "site {} appears with different coordinates",
                o.site_id
            )));
        }
        let x = transforms.time.apply(o.time).clamp(0.0, 1.0);
        let y = transforms.value.apply(o.value).clamp(0.0, 1.0);
        sites[l].obs.push((x, y));
    }
    Ok(Dataset::new(d, sites, transforms)?)
}
