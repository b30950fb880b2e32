//! The spatio-temporal quantile model.
//!
//! At location `z` the two monotone curves have coefficients
//! `theta_j(z) = sum_k a_{jk} W_k(z)` and `phi_j(z) = sum_k b_{jk} W_k(z)`
//! where `W_k` are tensor products of the univariate spatial basis. Because
//! the weights `W_k(z)` form a partition of unity, each `theta(z)` is again
//! a monotone sequence from 0 to 1.
//!
//! The likelihood of an observation `(x, y)` is `1 / Q'(tau_hat)` where
//! `tau_hat` solves `Q(tau | x, z) = y`. With a quadratic time basis the
//! solve is a closed-form root on one knot interval.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::basis::{BasisSpec, PiecewiseForm};
use crate::dataset::Dataset;
use crate::error::{bail, Error, Result};
use crate::field::{cumulative, CoefficientField, Curve};
use crate::sum::NeumaierSum;

/// Largest time-basis degree the per-interval solver handles.
pub const MAX_TIME_DEGREE: usize = 7;

/// Below this magnitude the quadratic coefficient is treated as zero.
const QUADRATIC_EPS: f64 = 1e-14;

/// Knot-value differences up to this size count as a flat stretch.
const FLAT_EPS: f64 = 1e-13;

/// Affine map of `[min, max]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitScale {
    pub min: f64,
    pub max: f64,
}

impl UnitScale {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            bail!(Validation, "scale needs finite max > min, got [{min}, {max}]");
        }
        Ok(Self { min, max })
    }

    pub const fn identity() -> Self {
        Self { min: 0.0, max: 1.0 }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / self.width()
    }

    /// Maps to the unit interval, clamping; the flag is set when clamping
    /// changed the value.
    pub fn apply_clamped(&self, v: f64) -> (f64, bool) {
        let u = self.apply(v);
        let c = u.clamp(0.0, 1.0);
        (c, c != u)
    }

    pub fn invert(&self, u: f64) -> f64 {
        self.min + u * self.width()
    }
}

/// Unit-interval maps for each spatial coordinate, time and response.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    pub coords: Vec<UnitScale>,
    pub time: UnitScale,
    pub value: UnitScale,
}

impl TransformSpec {
    pub fn unit(dim: usize) -> Self {
        Self {
            coords: vec![UnitScale::identity(); dim],
            time: UnitScale::identity(),
            value: UnitScale::identity(),
        }
    }
}

/// One monotone curve at a fixed location, in per-interval polynomial form.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveForm {
    degree: usize,
    knot_values: Vec<f64>,
    segments: Vec<f64>,
}

impl CurveForm {
    fn empty(form: &PiecewiseForm) -> Self {
        let p = form.intervals();
        Self {
            degree: form.degree(),
            knot_values: vec![0.0; p + 1],
            segments: vec![0.0; p * (form.degree() + 1)],
        }
    }

    pub fn from_spacings(form: &PiecewiseForm, spacings: &[f64]) -> Self {
        let mut c = Self::empty(form);
        c.rebuild(form, spacings);
        c
    }

    /// Recomputes the curve from its coefficient spacings, reusing storage.
    pub fn rebuild(&mut self, form: &PiecewiseForm, spacings: &[f64]) {
        let coeffs = cumulative(spacings);
        let n = self.degree + 1;
        let p = form.intervals();
        for i in 0..p {
            form.segment(i, &coeffs, &mut self.segments[i * n..(i + 1) * n]);
        }
        self.knot_values[0] = 0.0;
        // running max keeps rounding from breaking monotonicity
        for i in 1..p {
            self.knot_values[i] = self.segments[i * n].clamp(self.knot_values[i - 1], 1.0);
        }
        self.knot_values[p] = 1.0;
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.knot_values
    }

    fn segment(&self, i: usize) -> &[f64] {
        let n = self.degree + 1;
        &self.segments[i * n..(i + 1) * n]
    }
}

/// Both curves of the model at one location.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePair {
    pub first: CurveForm,
    pub second: CurveForm,
    breaks: Vec<f64>,
}

fn poly(seg: &[f64], u: f64) -> f64 {
    seg.iter().rev().fold(0.0, |acc, a| acc * u + a)
}

fn poly_derivative(seg: &[f64], u: f64) -> f64 {
    seg.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, a)| acc * u + k as f64 * a)
}

/// Root of an increasing polynomial on `[0, h]` by bisection with Newton
/// steps; used for time degrees other than 1 and 2.
fn bracketed_root(seg: &[f64], target: f64, h: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, h);
    let mut u = 0.5 * h;
    for _ in 0..200 {
        let f = poly(seg, u) - target;
        if f == 0.0 {
            return u;
        }
        if f < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let d = poly_derivative(seg, u);
        let newton = u - f / d;
        u = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-16 {
            break;
        }
    }
    u
}

/// Root of `a u^2 + b u + c = 0` inside `[0, h]` closest to satisfying it.
fn quadratic_root(a: f64, b: f64, c: f64, h: f64) -> Option<f64> {
    if a.abs() < QUADRATIC_EPS {
        if b > 0.0 {
            return Some((-c / b).clamp(0.0, h));
        }
        return None;
    }
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let sq = libm::sqrt(disc);
    let q = -0.5 * (b + if b >= 0.0 { sq } else { -sq });
    let mut roots = [f64::NAN; 2];
    if q != 0.0 {
        roots[0] = q / a;
        roots[1] = c / q;
    } else {
        roots[0] = 0.0;
    }
    let slack = 1e-9 * h.max(1.0);
    let resid = |u: f64| (a * u * u + b * u + c).abs();
    roots
        .iter()
        .copied()
        .filter(|u| u.is_finite() && *u >= -slack && *u <= h + slack)
        .map(|u| u.clamp(0.0, h))
        .min_by(|x, y| resid(*x).total_cmp(&resid(*y)))
}

impl CurvePair {
    fn segment_at(&self, i: usize, x: f64, out: &mut [f64]) {
        let f = self.first.segment(i);
        let s = self.second.segment(i);
        for ((o, a), b) in out.iter_mut().zip(f).zip(s) {
            *o = x * a + (1.0 - x) * b;
        }
    }

    fn locate(&self, tau: f64) -> usize {
        let p = self.breaks.len() - 1;
        let i = self.breaks.partition_point(|b| *b <= tau);
        i.saturating_sub(1).min(p - 1)
    }

    /// `Q(tau | x)` at this location, clamped to `[0, 1]` against rounding.
    pub fn quantile(&self, tau: f64, x: f64) -> f64 {
        let i = self.locate(tau);
        let mut seg = [0.0; MAX_TIME_DEGREE + 1];
        let n = self.first.degree + 1;
        self.segment_at(i, x, &mut seg[..n]);
        poly(&seg[..n], tau - self.breaks[i]).clamp(0.0, 1.0)
    }

    /// `dQ/dtau` at `tau`, right-continuous at knots.
    pub fn derivative(&self, tau: f64, x: f64) -> f64 {
        let i = self.locate(tau);
        let mut seg = [0.0; MAX_TIME_DEGREE + 1];
        let n = self.first.degree + 1;
        self.segment_at(i, x, &mut seg[..n]);
        poly_derivative(&seg[..n], tau - self.breaks[i])
    }

    /// Solves `Q(tau | x) = y`; returns `tau` and `Q'(tau)` from the same
    /// interval.
    pub fn solve(&self, y: f64, x: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&y) {
            bail!(Domain, "response {y} outside [0, 1]");
        }
        let p = self.breaks.len() - 1;
        let kv = |i: usize| x * self.first.knot_values[i] + (1.0 - x) * self.second.knot_values[i];
        // largest i with kv(i) <= y, restricted to an interval index
        let (mut lo, mut hi) = (0usize, p + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if kv(mid) <= y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let i = lo.min(p - 1);

        // flat stretch at the level of the target
        let near = |j: usize| (kv(j) - y).abs() <= FLAT_EPS;
        let flat = |j: usize| near(j) && near(j + 1);
        if let Some(j) = (i.saturating_sub(1)..=(i + 1).min(p - 1)).find(|&j| flat(j)) {
            let (mut a, mut b) = (j, j + 1);
            while a > 0 && flat(a - 1) {
                a -= 1;
            }
            while b < p && flat(b) {
                b += 1;
            }
            return Err(Error::Degenerate {
                lo: self.breaks[a],
                hi: self.breaks[b],
            });
        }

        let n = self.first.degree + 1;
        let mut seg = [0.0; MAX_TIME_DEGREE + 1];
        self.segment_at(i, x, &mut seg[..n]);
        let seg = &seg[..n];
        let h = self.breaks[i + 1] - self.breaks[i];
        let u = if y == 0.0 {
            0.0
        } else if y == 1.0 {
            h
        } else {
            let c = seg[0] - y;
            match n {
                2 => {
                    if seg[1] > 0.0 {
                        (-c / seg[1]).clamp(0.0, h)
                    } else {
                        bracketed_root(seg, y, h)
                    }
                }
                3 => quadratic_root(seg[2], seg[1], c, h)
                    .unwrap_or_else(|| bracketed_root(seg, y, h)),
                _ => bracketed_root(seg, y, h),
            }
        };
        let tau = if y == 1.0 { 1.0 } else { self.breaks[i] + u };
        Ok((tau, poly_derivative(seg, u)))
    }

    pub fn inverse(&self, y: f64, x: f64) -> Result<f64> {
        self.solve(y, x).map(|(t, _)| t)
    }

    /// `-log Q'(tau_hat)`, the log density of `y` given `x` at this location.
    pub fn log_density(&self, x: f64, y: f64) -> Result<f64> {
        let (tau, d) = self.solve(y, x)?;
        if !(d > 0.0) || !d.is_finite() {
            bail!(
                Evaluation,
                "quantile derivative {d} at tau = {tau} is not positive"
            );
        }
        Ok(-libm::log(d))
    }

    /// Compensated sum of log densities of a site's observations; on failure
    /// reports the index of the offending observation.
    pub fn site_log_likelihood(&self, obs: &[(f64, f64)]) -> core::result::Result<f64, (usize, Error)> {
        let mut acc = NeumaierSum::new();
        for (k, (x, y)) in obs.iter().enumerate() {
            acc.add(self.log_density(*x, *y).map_err(|e| (k, e))?);
        }
        Ok(acc.value())
    }
}

/// Quantile model: time basis, spatial basis, coefficient field and the
/// unit-interval transforms of the data it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileModel {
    time_basis: BasisSpec,
    space_basis: BasisSpec,
    form: PiecewiseForm,
    coeffs: CoefficientField,
    transforms: TransformSpec,
}

impl QuantileModel {
    pub fn new(
        time_basis: BasisSpec,
        space_basis: BasisSpec,
        coeffs: CoefficientField,
        transforms: TransformSpec,
    ) -> Result<Self> {
        if time_basis.degree() == 0 || time_basis.degree() > MAX_TIME_DEGREE {
            bail!(
                Validation,
                "time basis degree must be in 1..={MAX_TIME_DEGREE}, got {}",
                time_basis.degree()
            );
        }
        if coeffs.block_len() + 1 != time_basis.len() {
            bail!(
                Validation,
                "blocks hold {} spacings but the time basis has {} functions",
                coeffs.block_len(),
                time_basis.len()
            );
        }
        if coeffs.side() != space_basis.len() {
            bail!(
                Validation,
                "field has {} spatial functions per axis, basis has {}",
                coeffs.side(),
                space_basis.len()
            );
        }
        if transforms.coords.len() != coeffs.dim() {
            bail!(
                Validation,
                "transforms cover {} coordinates, model has {}",
                transforms.coords.len(),
                coeffs.dim()
            );
        }
        let form = PiecewiseForm::new(&time_basis)?;
        Ok(Self {
            time_basis,
            space_basis,
            form,
            coeffs,
            transforms,
        })
    }

    /// A model with every block at the simplex barycentre.
    pub fn shell(
        time_basis: BasisSpec,
        space_basis: BasisSpec,
        dim: usize,
        transforms: TransformSpec,
    ) -> Result<Self> {
        let coeffs = CoefficientField::uniform(dim, space_basis.len(), time_basis.len() - 1)?;
        Self::new(time_basis, space_basis, coeffs, transforms)
    }

    /// The same model with a different coefficient field.
    pub fn with_coeffs(&self, coeffs: CoefficientField) -> Result<Self> {
        if coeffs.dim() != self.dim()
            || coeffs.side() != self.coeffs.side()
            || coeffs.block_len() != self.coeffs.block_len()
        {
            bail!(Validation, "coefficient field does not match the model shape");
        }
        Ok(Self {
            coeffs,
            ..self.clone()
        })
    }

    pub fn time_basis(&self) -> &BasisSpec {
        &self.time_basis
    }

    pub fn space_basis(&self) -> &BasisSpec {
        &self.space_basis
    }

    pub fn form(&self) -> &PiecewiseForm {
        &self.form
    }

    pub fn coeffs(&self) -> &CoefficientField {
        &self.coeffs
    }

    pub fn transforms(&self) -> &TransformSpec {
        &self.transforms
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            bail!(
                Validation,
                "location has {} coordinates, model has {}",
                z.len(),
                self.dim()
            );
        }
        if let Some(v) = z.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            bail!(Validation, "location coordinate {v} outside [0, 1]");
        }
        Ok(())
    }

    fn check_unit(name: &str, v: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Validation(format!("{name} = {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Nonzero tensor-product spatial weights at `z` as `(block index, weight)`.
    pub fn spatial_weights(&self, z: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check_z(z)?;
        let m = self.space_basis.degree();
        let side = self.space_basis.len();
        let mut axes = Vec::with_capacity(z.len());
        for &zi in z {
            let mut local = vec![0.0; m + 1];
            let first = self.space_basis.eval_nonzero(zi, &mut local)?;
            axes.push((first, local));
        }
        let mut out: Vec<(usize, f64)> = vec![(0, 1.0)];
        for (first, local) in &axes {
            let mut next = Vec::with_capacity(out.len() * local.len());
            for (idx, w) in &out {
                for (l, b) in local.iter().enumerate() {
                    if *b != 0.0 {
                        next.push((idx * side + first + l, w * b));
                    }
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// Spacings of `theta(z)` (first curve) or `phi(z)` (second curve).
    pub fn contracted_spacings(&self, weights: &[(usize, f64)], curve: Curve) -> Vec<f64> {
        contracted(&self.coeffs, weights, curve)
    }

    /// Monotone time-basis coefficients of one curve at location `z`.
    pub fn theta_at(&self, z: &[f64], curve: Curve) -> Result<Vec<f64>> {
        let w = self.spatial_weights(z)?;
        Ok(cumulative(&self.contracted_spacings(&w, curve)))
    }

    /// Both curves at `z` in a form suited to repeated evaluation.
    pub fn curves_at(&self, z: &[f64]) -> Result<CurvePair> {
        let w = self.spatial_weights(z)?;
        Ok(self.curves_from_weights(&w))
    }

    pub fn curves_from_weights(&self, weights: &[(usize, f64)]) -> CurvePair {
        self.curves_with(&self.coeffs, weights)
    }

    /// Curves at a location given by its spatial weights, under another
    /// coefficient field of the same shape (e.g. a posterior draw).
    pub fn curves_with(&self, coeffs: &CoefficientField, weights: &[(usize, f64)]) -> CurvePair {
        CurvePair {
            first: CurveForm::from_spacings(&self.form, &contracted(coeffs, weights, Curve::First)),
            second: CurveForm::from_spacings(&self.form, &contracted(coeffs, weights, Curve::Second)),
            breaks: self.form.breaks().to_vec(),
        }
    }

    /// `xi1(tau, z)` or `xi2(tau, z)`.
    pub fn xi(&self, curve: Curve, tau: f64, z: &[f64]) -> Result<f64> {
        Self::check_unit("tau", tau)?;
        let theta = self.theta_at(z, curve)?;
        self.time_basis.eval_curve(&theta, tau)
    }

    /// `Q(tau | x, z) = x xi1(tau, z) + (1 - x) xi2(tau, z)`.
    pub fn quantile(&self, tau: f64, x: f64, z: &[f64]) -> Result<f64> {
        Self::check_unit("tau", tau)?;
        Self::check_unit("x", x)?;
        Ok(self.curves_at(z)?.quantile(tau, x))
    }

    /// `(intercept, slope) = (xi2, xi1 - xi2)` so that `Q = intercept + x slope`.
    pub fn slope_intercept(&self, tau: f64, z: &[f64]) -> Result<(f64, f64)> {
        Self::check_unit("tau", tau)?;
        let c = self.curves_at(z)?;
        let b0 = c.quantile(tau, 0.0);
        let b1 = c.quantile(tau, 1.0) - b0;
        Ok((b0, b1))
    }

    /// The unique `tau` with `Q(tau | x, z) = y`.
    pub fn inverse_quantile(&self, y: f64, x: f64, z: &[f64]) -> Result<f64> {
        Self::check_unit("x", x)?;
        self.curves_at(z)?.inverse(y, x)
    }

    pub fn log_density(&self, x: f64, y: f64, z: &[f64]) -> Result<f64> {
        Self::check_unit("x", x)?;
        self.curves_at(z)?.log_density(x, y)
    }

    /// Sum of log densities over all observations.
    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        if data.dim() != self.dim() {
            bail!(
                Validation,
                "dataset has dimension {}, model has {}",
                data.dim(),
                self.dim()
            );
        }
        let mut acc = NeumaierSum::new();
        for (l, site) in data.sites().iter().enumerate() {
            let curves = self.curves_at(&site.coords)?;
            let v = curves
                .site_log_likelihood(&site.obs)
                .map_err(|(index, e)| Error::Observation {
                    site: l,
                    index,
                    source: alloc::boxed::Box::new(e),
                })?;
            acc.add(v);
        }
        Ok(acc.value())
    }

    /// Free parameters: `2 J2^d (J1 - 2)`.
    pub fn param_count(&self) -> usize {
        self.coeffs.block_count() * self.coeffs.block_len().saturating_sub(1)
    }

    /// `2 k - 2 log L`.
    pub fn aic(&self, data: &Dataset) -> Result<f64> {
        Ok(2.0 * self.param_count() as f64 - 2.0 * self.log_likelihood(data)?)
    }
}

fn contracted(coeffs: &CoefficientField, weights: &[(usize, f64)], curve: Curve) -> Vec<f64> {
    let k = coeffs.block_len();
    let mut out = vec![0.0; k];
    contract_into(coeffs.spacings(curve), k, weights, None, &mut out);
    out
}

/// `out_j = sum_b w_b s_{b j}`, optionally with one block's spacings
/// replaced.
pub(crate) fn contract_into(
    spacings: &[f64],
    block_len: usize,
    weights: &[(usize, f64)],
    replace: Option<(usize, &[f64])>,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (b, w) in weights {
        let block = match replace {
            Some((r, s)) if r == *b => s,
            _ => &spacings[b * block_len..(b + 1) * block_len],
        };
        for (o, s) in out.iter_mut().zip(block) {
            *o += w * s;
        }
    }
}
