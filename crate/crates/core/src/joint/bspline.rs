//! B-spline log baseline hazard.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    /// Lower and upper boundary knots.
    pub boundary: (f64, f64),
    pub interior: Vec<f64>,
    pub degree: usize,
    /// Coefficients on the log-hazard scale, one per basis function.
    pub coefficients: Vec<f64>,
}

impl BaselineHazard {
    pub fn new(boundary: (f64, f64), interior: Vec<f64>, degree: usize, coefficients: Vec<f64>) -> Result<Self> {
        let (lo, hi) = boundary;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid("boundary knots must satisfy lo < hi"));
        }
        if interior.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("knots must be nondecreasing"));
        }
        if interior.iter().any(|&k| !(k > lo && k < hi)) {
            return Err(Error::invalid("interior knots must lie strictly inside the boundary"));
        }
        if coefficients.len() != interior.len() + degree + 1 {
            return Err(Error::invalid(format!(
                "expected {} spline coefficients, got {}",
                interior.len() + degree + 1,
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("spline coefficients must be finite"));
        }
        Ok(BaselineHazard {
            boundary,
            interior,
            degree,
            coefficients,
        })
    }

    /// Cubic spline with `n_interior` knots at quantiles of `times`.
    pub fn at_quantiles(times: &[f64], n_interior: usize, upper: f64) -> Result<Self> {
        let mut sorted: Vec<f64> = times.iter().copied().filter(|t| t.is_finite()).collect();
        if sorted.is_empty() {
            return Err(Error::invalid("no times to place knots"));
        }
        sorted.sort_by(f64::total_cmp);
        let mut interior: Vec<f64> = (1..=n_interior)
            .map(|j| crate::stats::quantile_sorted(&sorted, j as f64 / (n_interior + 1) as f64))
            .filter(|&k| k > 0.0 && k < upper)
            .collect();
        interior.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * upper);
        let n = interior.len() + 4;
        BaselineHazard::new((0.0, upper), interior, 3, vec![0.0; n])
    }

    pub fn n_basis(&self) -> usize {
        self.interior.len() + self.degree + 1
    }

    fn knot(&self, i: usize) -> f64 {
        let p = self.degree;
        if i <= p {
            self.boundary.0
        } else if i - p - 1 < self.interior.len() {
            self.interior[i - p - 1]
        } else {
            self.boundary.1
        }
    }

    /// Nonzero basis values at `t`: `(first index, values)` with
    /// `degree + 1` entries.
    pub fn basis(&self, t: f64) -> Result<(usize, Vec<f64>)> {
        let (lo, hi) = self.boundary;
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfRange(format!("t = {t} outside [{lo}, {hi}]")));
        }
        let p = self.degree;
        // span s with knot(s) <= t < knot(s+1); the last span is closed
        let n_span = self.interior.len();
        let mut s = p + self.interior.partition_point(|&k| k <= t);
        if t >= hi {
            s = p + n_span;
        }
        let mut n = vec![0.0; p + 1];
        n[0] = 1.0;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        for j in 1..=p {
            left[j] = t - self.knot(s + 1 - j);
            right[j] = self.knot(s + j) - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((s - p, n))
    }

    /// Full basis row of length `n_basis`.
    pub fn basis_row(&self, t: f64) -> Result<Vec<f64>> {
        let (first, vals) = self.basis(t)?;
        let mut row = vec![0.0; self.n_basis()];
        row[first..first + vals.len()].copy_from_slice(&vals);
        Ok(row)
    }

    /// Distinct knots strictly inside the boundary.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut k = self.interior.clone();
        k.dedup();
        k
    }
}

/// `log λ₀(t) = Σ_k ψ_k B_k(t)`.
pub fn log_baseline_hazard(hazard: &BaselineHazard, t: f64) -> Result<f64> {
    let (first, vals) = hazard.basis(t)?;
    Ok(vals
        .iter()
        .zip(&hazard.coefficients[first..])
        .map(|(b, c)| b * c)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spline(interior: Vec<f64>, coef: Vec<f64>) -> BaselineHazard {
        BaselineHazard::new((0.0, 10.0), interior, 3, coef).unwrap()
    }

    /// Cox–de Boor recursion written out directly on the full knot vector.
    fn de_boor_reference(knots: &[f64], i: usize, p: usize, t: f64) -> f64 {
        if p == 0 {
            return f64::from(u8::from(knots[i] <= t && t < knots[i + 1]));
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (t - knots[i]) / d1 * de_boor_reference(knots, i, p - 1, t);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - t) / d2 * de_boor_reference(knots, i + 1, p - 1, t);
        }
        v
    }

    #[test]
    fn zero_and_constant_coefficients() {
        let s = spline(vec![2.0, 5.0], vec![0.0; 6]);
        for t in [0.0, 1.0, 2.0, 7.3, 10.0] {
            assert_eq!(log_baseline_hazard(&s, t).unwrap(), 0.0);
        }
        let s = spline(vec![2.0, 5.0], vec![-1.3; 6]);
        for t in [0.0, 1.0, 2.0, 7.3, 10.0] {
            assert!((log_baseline_hazard(&s, t).unwrap() + 1.3).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_recursion() {
        let interior = vec![1.5, 4.0, 4.5, 8.0];
        let s = spline(interior.clone(), vec![0.0; 8]);
        let mut knots = vec![0.0; 4];
        knots.extend(&interior);
        knots.extend([10.0; 4]);
        for &t in &[0.0, 0.7, 1.5, 3.3, 4.0, 4.2, 9.99] {
            let row = s.basis_row(t).unwrap();
            for (i, &v) in row.iter().enumerate() {
                let r = de_boor_reference(&knots, i, 3, t);
                assert!((v - r).abs() < 1e-12, "t={t} i={i} {v} {r}");
            }
        }
        // right boundary: the last basis function is 1
        let row = s.basis_row(10.0).unwrap();
        assert!((row[7] - 1.0).abs() < 1e-12 && row[..7].iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn continuous_at_a_knot() {
        let s = spline(vec![3.0], vec![0.4, -1.2, 2.5, 0.3, -0.8]);
        let at = log_baseline_hazard(&s, 3.0).unwrap();
        let below = log_baseline_hazard(&s, 3.0 - 1e-12).unwrap();
        let above = log_baseline_hazard(&s, 3.0 + 1e-12).unwrap();
        assert!((at - below).abs() < 1e-10 && (at - above).abs() < 1e-10);
    }

    #[test]
    fn construction_checks() {
        assert!(BaselineHazard::new((0.0, 1.0), vec![0.5], 3, vec![0.0; 4]).is_err());
        assert!(BaselineHazard::new((0.0, 1.0), vec![0.7, 0.5], 3, vec![0.0; 6]).is_err());
        assert!(BaselineHazard::new((0.0, 1.0), vec![1.0], 3, vec![0.0; 5]).is_err());
        let s = spline(vec![], vec![0.0; 4]);
        assert!(log_baseline_hazard(&s, -0.1).is_err());
        assert!(log_baseline_hazard(&s, 10.1).is_err());
        let q = BaselineHazard::at_quantiles(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 5, 6.0).unwrap();
        assert_eq!(q.interior.len(), 5);
        assert_eq!(q.n_basis(), 9);
    }

    proptest! {
        #[test]
        fn partition_of_unity(t in 0.0f64..=10.0) {
            let s = spline(vec![0.5, 2.0, 2.0, 6.5, 9.0], vec![0.0; 9]);
            let sum: f64 = s.basis_row(t).unwrap().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.basis_row(t).unwrap().iter().all(|&b| b >= -1e-15));
        }
    }
}
