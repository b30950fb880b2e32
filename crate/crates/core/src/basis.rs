//! Clamped, equidistant B-spline bases on `[0, 1]`.
//!
//! A basis of degree `m` on `p` equal intervals has `J = p + m` functions.
//! The knot vector repeats `0` and `1` exactly `m + 1` times so that a curve
//! interpolates its first and last coefficients. Evaluation at an interior
//! knot is right-continuous and `t = 1` belongs to the last interval.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    degree: usize,
    intervals: usize,
    knots: Vec<f64>,
}

impl BasisSpec {
    /// Builds the clamped equidistant basis of the given degree on
    /// `intervals` equal pieces of `[0, 1]`.
    pub fn new(degree: usize, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            bail!(Validation, "basis needs at least one interval, got 0");
        }
        let p = intervals as f64;
        let mut knots = Vec::with_capacity(intervals + 2 * degree + 1);
        knots.extend(core::iter::repeat_n(0.0, degree + 1));
        knots.extend((1..intervals).map(|i| i as f64 / p));
        knots.extend(core::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            degree,
            intervals,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Full clamped knot vector, length `J + degree + 1`.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions `J = intervals + degree`.
    pub fn len(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Left end of interval `i` (`0 <= i <= intervals`).
    pub fn breakpoint(&self, i: usize) -> f64 {
        self.knots[self.degree + i]
    }

    /// Index of the interval containing `t`, right-continuous, with `t = 1`
    /// mapped to the last interval. `t` must already be in `[0, 1]`.
    pub fn interval_of(&self, t: f64) -> usize {
        let last = self.intervals - 1;
        let mut i = ((t * self.intervals as f64) as usize).min(last);
        while i > 0 && t < self.breakpoint(i) {
            i -= 1;
        }
        while i < last && t >= self.breakpoint(i + 1) {
            i += 1;
        }
        i
    }

    fn check_t(t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            bail!(Domain, "evaluation point {t} outside [0, 1]");
        }
        Ok(())
    }

    /// Writes the `degree + 1` possibly nonzero basis values at `t` into
    /// `out` and returns the index of the first of them.
    pub fn eval_nonzero(&self, t: f64, out: &mut [f64]) -> Result<usize> {
        Self::check_t(t)?;
        let m = self.degree;
        debug_assert!(out.len() > m);
        let i = self.interval_of(t);
        let span = i + m;
        let u = &self.knots;
        let mut left = vec![0.0; m + 1];
        let mut right = vec![0.0; m + 1];
        out[0] = 1.0;
        for j in 1..=m {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        Ok(i)
    }

    /// All `J` basis values at `t`.
    pub fn eval_basis(&self, t: f64) -> Result<Vec<f64>> {
        let mut local = vec![0.0; self.degree + 1];
        let first = self.eval_nonzero(t, &mut local)?;
        let mut full = vec![0.0; self.len()];
        full[first..first + local.len()].copy_from_slice(&local);
        Ok(full)
    }

    /// `sum_j coeffs[j] * B_j(t)`.
    pub fn eval_curve(&self, coeffs: &[f64], t: f64) -> Result<f64> {
        self.check_len(coeffs)?;
        let mut local = vec![0.0; self.degree + 1];
        let first = self.eval_nonzero(t, &mut local)?;
        Ok(local
            .iter()
            .zip(&coeffs[first..])
            .map(|(b, c)| b * c)
            .sum())
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.len() {
            bail!(
                Validation,
                "expected {} coefficients, got {}",
                self.len(),
                coeffs.len()
            );
        }
        Ok(())
    }

    /// Exact derivative of a curve as a spline of one lower degree on the
    /// same intervals.
    pub fn derivative_expansion(&self, coeffs: &[f64]) -> Result<(BasisSpec, Vec<f64>)> {
        self.check_len(coeffs)?;
        let diffs: Vec<f64> = coeffs.windows(2).map(|w| w[1] - w[0]).collect();
        self.derivative_from_differences(&diffs)
    }

    /// Same as [`derivative_expansion`](Self::derivative_expansion) but takes
    /// the consecutive coefficient differences directly, which avoids
    /// cancellation when the curve is parameterised by its spacings.
    pub fn derivative_from_differences(&self, diffs: &[f64]) -> Result<(BasisSpec, Vec<f64>)> {
        let m = self.degree;
        if m == 0 {
            bail!(Unsupported, "derivative of a degree-0 basis");
        }
        if diffs.len() + 1 != self.len() {
            bail!(
                Validation,
                "expected {} coefficient differences, got {}",
                self.len() - 1,
                diffs.len()
            );
        }
        let t = &self.knots;
        let scale = m as f64;
        let d = diffs
            .iter()
            .enumerate()
            .map(|(j, dc)| scale * dc / (t[j + m + 1] - t[j + 1]))
            .collect();
        Ok((BasisSpec::new(m - 1, self.intervals)?, d))
    }

    /// Knot averages; using them as coefficients reproduces `t -> t`.
    pub fn greville_abscissae(&self) -> Vec<f64> {
        let m = self.degree;
        let t = &self.knots;
        if m == 0 {
            return (0..self.len()).map(|j| 0.5 * (t[j] + t[j + 1])).collect();
        }
        (0..self.len())
            .map(|j| t[j + 1..=j + m].iter().sum::<f64>() / m as f64)
            .collect()
    }
}

/// Per-interval polynomial form of a basis.
///
/// On interval `i` with left end `a_i`, a curve with coefficients `c` equals
/// `sum_k s_k (t - a_i)^k` where `s_k = sum_l c[i + l] * T[i][k][l]`. The
/// table `T` holds the scaled one-sided Taylor coefficients
/// `B_{i+l}^{(k)}(a_i+) / k!` and is built once from repeated exact
/// derivative expansions.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseForm {
    degree: usize,
    intervals: usize,
    breaks: Vec<f64>,
    table: Vec<f64>,
}

impl PiecewiseForm {
    pub fn new(spec: &BasisSpec) -> Result<Self> {
        let m = spec.degree();
        let p = spec.intervals();
        let n = m + 1;
        let mut table = vec![0.0; p * n * n];
        for j in 0..spec.len() {
            let mut coeffs = vec![0.0; spec.len()];
            coeffs[j] = 1.0;
            let mut cur_spec = spec.clone();
            let mut factorial = 1.0;
            for k in 0..=m {
                if k > 0 {
                    factorial *= k as f64;
                }
                let lo = j.saturating_sub(m);
                let hi = j.min(p - 1);
                for i in lo..=hi {
                    let l = j - i;
                    let v = cur_spec.eval_curve(&coeffs, spec.breakpoint(i))?;
                    table[(i * n + k) * n + l] = v / factorial;
                }
                if k < m {
                    let (next_spec, next) = cur_spec.derivative_expansion(&coeffs)?;
                    cur_spec = next_spec;
                    coeffs = next;
                }
            }
        }
        let breaks = (0..=p).map(|i| spec.breakpoint(i)).collect();
        Ok(Self {
            degree: m,
            intervals: p,
            breaks,
            table,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Breakpoints `a_0 = 0 < ... < a_p = 1`.
    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// Polynomial coefficients (ascending powers of `t - a_i`) of the curve
    /// with coefficients `coeffs` on interval `i`.
    pub fn segment(&self, i: usize, coeffs: &[f64], out: &mut [f64]) {
        let n = self.degree + 1;
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let row = &self.table[(i * n + k) * n..(i * n + k + 1) * n];
            *o = row.iter().zip(&coeffs[i..i + n]).map(|(t, c)| t * c).sum();
        }
    }
}
