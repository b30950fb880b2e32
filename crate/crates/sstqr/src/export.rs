//! Prediction grids in original units.
//!
//! Rows run over quantile levels (or none, in threshold mode), then times
//! (none in slope mode), then the spatial lattice with the last coordinate
//! varying fastest.

use std::io::Write;

use sstqr_core::sampler::summarize_values;
use sstqr_core::{CoefficientField, Error as CoreError, QuantileModel};

use crate::error::{AppError, Result};
use crate::persist::Artifact;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    Quantile,
    SlopeIntercept,
    ThresholdQuantile,
}

/// Evenly spaced points on `[min, max]`; a single point sits at the
/// midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![0.5 * (self.min + self.max)];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|k| if k + 1 == self.count { self.max } else { self.min + k as f64 * step })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRequest {
    pub taus: Vec<f64>,
    /// Times in original units.
    pub xs: Vec<f64>,
    /// Lattice in original coordinate units.
    pub z_grid: Vec<AxisSpec>,
    pub mode: GridMode,
    /// Response level in original units, threshold mode only.
    pub threshold: Option<f64>,
    /// Posterior interval mass for sample input.
    pub mass: f64,
}

impl GridRequest {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: &str| Err(AppError::Validation(m.to_string()));
        if self.mode != GridMode::ThresholdQuantile && self.taus.is_empty() {
            return bad("at least one quantile level is required");
        }
        if self.taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("quantile levels must lie in [0, 1]");
        }
        if self.mode != GridMode::SlopeIntercept && self.xs.is_empty() {
            return bad("at least one time is required");
        }
        if self.xs.iter().any(|x| !x.is_finite()) {
            return bad("times must be finite");
        }
        if self.z_grid.len() != dim {
            return Err(AppError::Validation(format!(
                "lattice has {} axes, model has {dim}",
                self.z_grid.len()
            )));
        }
        if self
            .z_grid
            .iter()
            .any(|a| a.count == 0 || !a.min.is_finite() || !a.max.is_finite() || a.max < a.min)
        {
            return bad("each lattice axis needs count >= 1 and finite min <= max");
        }
        match (self.mode, self.threshold) {
            (GridMode::ThresholdQuantile, None) => return bad("threshold mode needs a threshold"),
            (GridMode::ThresholdQuantile, Some(t)) if !t.is_finite() => return bad("threshold must be finite"),
            (GridMode::ThresholdQuantile, _) => {}
            (_, Some(_)) => return bad("a threshold is only used in threshold mode"),
            _ => {}
        }
        if !(self.mass > 0.0 && self.mass <= 1.0) {
            return bad("interval mass must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Default, Clone, Copy)]
struct Flags {
    clamped_x: bool,
    clamped_z: bool,
    clamped_threshold: bool,
    degenerate: bool,
    failed: bool,
}

impl Flags {
    fn render(&self) -> String {
        let names = [
            (self.clamped_x, "clamped_x"),
            (self.clamped_z, "clamped_z"),
            (self.clamped_threshold, "clamped_threshold"),
            (self.degenerate, "degenerate"),
            (self.failed, "failed"),
        ];
        names
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect::<Vec<_>>()
            .join("|")
    }
}

fn lattice(axes: &[AxisSpec]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for a in axes {
        let pts = a.points();
        out = out
            .into_iter()
            .flat_map(|p| {
                pts.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Writes the grid for a fitted model or posterior samples.
pub fn export_grid<W: Write>(artifact: &Artifact, req: &GridRequest, writer: W) -> Result<()> {
    let model = artifact.model();
    req.validate(model.dim())?;
    let draws: Vec<&CoefficientField> = match artifact {
        Artifact::Model(m) => vec![m.coeffs()],
        Artifact::Samples { samples, .. } => samples.draws.iter().collect(),
    };
    let posterior = matches!(artifact, Artifact::Samples { .. });
    let t = model.transforms();
    let (ymin, yspan) = (t.value.min, t.value.width());

    // unit-scale locations with clamp flags
    let points = lattice(&req.z_grid);
    let mut locs = Vec::with_capacity(points.len());
    for p in &points {
        let mut clamped = false;
        let z: Vec<f64> = p
            .iter()
            .zip(&t.coords)
            .map(|(v, s)| {
                let (u, c) = s.apply_clamped(*v);
                clamped |= c;
                u
            })
            .collect();
        locs.push((z, clamped));
    }
    let xs: Vec<(f64, bool)> = req.xs.iter().map(|x| t.time.apply_clamped(*x)).collect();

    let value_names: &[&str] = match req.mode {
        GridMode::Quantile => &["quantile"],
        GridMode::SlopeIntercept => &["intercept", "slope"],
        GridMode::ThresholdQuantile => &["tau"],
    };
    // outer keys per mode, in output order
    let keys: Vec<(f64, usize)> = match req.mode {
        GridMode::Quantile => req
            .taus
            .iter()
            .flat_map(|tau| (0..xs.len()).map(move |i| (*tau, i)))
            .collect(),
        GridMode::SlopeIntercept => req.taus.iter().map(|tau| (*tau, 0)).collect(),
        GridMode::ThresholdQuantile => (0..xs.len()).map(|i| (f64::NAN, i)).collect(),
    };
    let (thr_unit, thr_clamped) = match req.threshold {
        Some(v) => t.value.apply_clamped(v),
        None => (0.0, false),
    };

    // values[key][loc][column] as per-draw samples
    let nv = value_names.len();
    let mut cells: Vec<Vec<(Vec<f64>, Flags)>> = Vec::with_capacity(keys.len());
    for _ in &keys {
        cells.push(Vec::with_capacity(locs.len()));
    }
    let mut samples: Vec<Vec<Vec<f64>>> = vec![vec![Vec::with_capacity(draws.len()); nv]; keys.len()];
    for (z, zc) in &locs {
        let weights = model.spatial_weights(z)?;
        for s in samples.iter_mut() {
            s.iter_mut().for_each(Vec::clear);
        }
        let mut flags = vec![Flags { clamped_z: *zc, ..Flags::default() }; keys.len()];
        for d in &draws {
            let pair = model.curves_with(d, &weights);
            for (k, &(tau, xi)) in keys.iter().enumerate() {
                let (x, xc) = xs.get(xi).copied().unwrap_or((0.0, false));
                match req.mode {
                    GridMode::Quantile => {
                        flags[k].clamped_x = xc;
                        samples[k][0].push(ymin + yspan * pair.quantile(tau, x));
                    }
                    GridMode::SlopeIntercept => {
                        let b0 = pair.quantile(tau, 0.0);
                        let b1 = pair.quantile(tau, 1.0) - b0;
                        samples[k][0].push(ymin + yspan * b0);
                        samples[k][1].push(b1 * yspan / t.time.width());
                    }
                    GridMode::ThresholdQuantile => {
                        flags[k].clamped_x = xc;
                        flags[k].clamped_threshold = thr_clamped;
                        let v = match pair.inverse(thr_unit, x) {
                            Ok(v) => v,
                            Err(CoreError::Degenerate { lo, hi }) => {
                                flags[k].degenerate = true;
                                0.5 * (lo + hi)
                            }
                            Err(_) => {
                                flags[k].failed = true;
                                f64::NAN
                            }
                        };
                        samples[k][0].push(v);
                    }
                }
            }
        }
        for (k, s) in samples.iter_mut().enumerate() {
            let mut out = Vec::with_capacity(3 * nv);
            for col in s.iter_mut() {
                col.retain(|v| !v.is_nan());
                if posterior {
                    match summarize_values(col, req.mass) {
                        Ok(sum) => out.extend([sum.mean, sum.lower, sum.upper]),
                        Err(_) => out.extend([f64::NAN; 3]),
                    }
                } else {
                    out.push(col.first().copied().unwrap_or(f64::NAN));
                }
            }
            cells[k].push((out, flags[k]));
        }
    }

    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = Vec::new();
    if req.mode != GridMode::ThresholdQuantile {
        header.push("tau".into());
    }
    if req.mode != GridMode::SlopeIntercept {
        header.push("x_original".into());
    }
    header.extend((1..=model.dim()).map(|k| format!("z{k}_original")));
    if req.mode == GridMode::ThresholdQuantile {
        header.push("threshold".into());
    }
    for n in value_names {
        if posterior {
            header.extend([format!("{n}_mean"), format!("{n}_lower"), format!("{n}_upper")]);
        } else {
            header.push((*n).to_string());
        }
    }
    header.push("flags".into());
    w.write_record(&header)?;
    for (k, &(tau, xi)) in keys.iter().enumerate() {
        for (p, (vals, flags)) in points.iter().zip(&cells[k]) {
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            if req.mode != GridMode::ThresholdQuantile {
                row.push(fmt(tau));
            }
            if req.mode != GridMode::SlopeIntercept {
                row.push(fmt(req.xs[xi]));
            }
            row.extend(p.iter().map(|v| fmt(*v)));
            if let Some(thr) = req.threshold {
                row.push(fmt(thr));
            }
            row.extend(vals.iter().map(|v| fmt(*v)));
            row.push(flags.render());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| AppError::io("<grid>", e))?;
    Ok(())
}

/// Default lattice covering the data range of each coordinate.
pub fn default_lattice(model: &QuantileModel, counts: &[usize]) -> Result<Vec<AxisSpec>> {
    if counts.len() != model.dim() {
        return Err(AppError::Validation(format!(
            "grid has {} axes, model has {}",
            counts.len(),
            model.dim()
        )));
    }
    Ok(model
        .transforms()
        .coords
        .iter()
        .zip(counts)
        .map(|(s, c)| AxisSpec {
            min: s.min,
            max: s.max,
            count: *c,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sstqr_core::basis::BasisSpec;
    use sstqr_core::{TransformSpec, UnitScale};

    fn identity(dim: usize, ymax: f64) -> QuantileModel {
        let tb = BasisSpec::new(2, 3).unwrap();
        let sb = BasisSpec::new(3, 1).unwrap();
        let g = tb.greville_abscissae();
        let sp: Vec<f64> = g.windows(2).map(|w| w[1] - w[0]).collect();
        let n = sb.len().pow(dim as u32);
        let blocks = vec![sp; n];
        let f = CoefficientField::from_blocks(dim, sb.len(), &blocks, &blocks).unwrap();
        let mut t = TransformSpec::unit(dim);
        t.value = UnitScale::new(0.0, ymax).unwrap();
        t.time = UnitScale::new(2000.0, 2010.0).unwrap();
        QuantileModel::new(tb, sb, f, t).unwrap()
    }

    fn render(a: &Artifact, req: &GridRequest) -> String {
        let mut buf = Vec::new();
        export_grid(a, req, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn identity_median_is_fifty() {
        let m = identity(2, 100.0);
        let req = GridRequest {
            taus: vec![0.5],
            xs: vec![2000.0, 2007.0],
            z_grid: default_lattice(&m, &[3, 2]).unwrap(),
            mode: GridMode::Quantile,
            threshold: None,
            mass: 0.95,
        };
        let out = render(&Artifact::Model(m), &req);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "tau,x_original,z1_original,z2_original,quantile,flags");
        assert_eq!(lines.len(), 1 + 2 * 6);
        for l in &lines[1..] {
            let v: f64 = l.split(',').nth(4).unwrap().parse().unwrap();
            assert!((v - 50.0).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_at_max_is_one() {
        let m = identity(1, 100.0);
        let req = GridRequest {
            taus: vec![],
            xs: vec![2005.0],
            z_grid: default_lattice(&m, &[4]).unwrap(),
            mode: GridMode::ThresholdQuantile,
            threshold: Some(100.0),
            mass: 0.95,
        };
        let out = render(&Artifact::Model(m.clone()), &req);
        for l in out.lines().skip(1) {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f[3], "1");
            assert_eq!(f[4], "");
        }
        let above = GridRequest {
            threshold: Some(130.0),
            ..req
        };
        let out = render(&Artifact::Model(m), &above);
        assert!(out.lines().skip(1).all(|l| l.ends_with(",1,clamped_threshold")));
    }

    #[test]
    fn slope_units() {
        let m = identity(1, 100.0);
        let req = GridRequest {
            taus: vec![0.25],
            xs: vec![],
            z_grid: default_lattice(&m, &[1]).unwrap(),
            mode: GridMode::SlopeIntercept,
            threshold: None,
            mass: 0.95,
        };
        let out = render(&Artifact::Model(m), &req);
        let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[0], "0.25");
        assert!((row[2].parse::<f64>().unwrap() - 25.0).abs() < 1e-12);
        assert!(row[3].parse::<f64>().unwrap().abs() < 1e-12);
    }

    #[test]
    fn request_validation() {
        let m = identity(1, 1.0);
        let mut req = GridRequest {
            taus: vec![0.5],
            xs: vec![2001.0],
            z_grid: default_lattice(&m, &[2]).unwrap(),
            mode: GridMode::ThresholdQuantile,
            threshold: None,
            mass: 0.9,
        };
        assert!(req.validate(1).is_err());
        req.threshold = Some(0.5);
        assert!(req.validate(1).is_ok());
        req.z_grid[0].count = 0;
        assert!(req.validate(1).is_err());
    }
}
