//! Gauss–Legendre quadrature for cumulative hazards.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

pub const GL_POINTS: usize = 15;

fn rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        GaussLegendre::new(NonZeroUsize::new(GL_POINTS).expect("nonzero"))
            .as_node_weight_pairs()
            .to_vec()
    })
}

/// Nodes and weights integrating over `(0, upper]`, one 15-point rule per
/// segment between consecutive `breakpoints`. The first segment uses the
/// substitution `t = a·v²`, which removes `t^(k−1)`-type endpoint behaviour
/// for `k > 1/2`.
pub fn nodes(upper: f64, breakpoints: &[f64]) -> Vec<(f64, f64)> {
    if !(upper > 0.0) {
        return Vec::new();
    }
    let mut edges = vec![0.0];
    edges.extend(breakpoints.iter().copied().filter(|&b| b > 0.0 && b < upper));
    edges.push(upper);
    let mut out = Vec::with_capacity(GL_POINTS * (edges.len() - 1));
    for (s, w) in edges.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        for &(x, wt) in rule() {
            if s == 0 {
                // t = b·v², v ∈ (0, 1)
                let v = 0.5 * (x + 1.0);
                out.push((b * v * v, 0.5 * wt * 2.0 * b * v));
            } else {
                out.push((0.5 * ((b - a) * x + b + a), 0.5 * (b - a) * wt));
            }
        }
    }
    out
}

/// `∫₀ᵀ exp(log_hazard(s)) ds`.
pub fn cumulative_hazard<F: FnMut(f64) -> f64>(mut log_hazard: F, upper: f64, breakpoints: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (t, w) in nodes(upper, breakpoints) {
        let v = log_hazard(t).exp();
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite hazard at t = {t}")));
        }
        total += w * v;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn weibull(a: f64) -> impl Fn(f64) -> f64 {
        move |t: f64| a.ln() + (a - 1.0) * t.ln()
    }

    #[test]
    fn constant_hazard_and_empty_interval() {
        let h = cumulative_hazard(|_| 0.0, 3.7, &[1.0, 2.0]).unwrap();
        assert!((h - 3.7).abs() < 1e-13);
        assert_eq!(cumulative_hazard(|_| 0.0, 0.0, &[]).unwrap(), 0.0);
        assert!(cumulative_hazard(|_| 0.0, 1e-300, &[]).unwrap() < 1e-299);
    }

    #[test]
    fn weibull_matches_closed_form() {
        for &t in &[0.01, 0.5, 1.0, 3.3, 12.0, 31.0] {
            let h = cumulative_hazard(weibull(1.75), t, &[0.8, 2.5, 6.0]).unwrap();
            let exact = t.powf(1.75);
            assert!(((h - exact) / exact).abs() < 1e-6, "{t}: {h} {exact}");
        }
    }

    #[test]
    fn non_finite_integrand_is_an_error() {
        assert!(cumulative_hazard(|_| f64::INFINITY, 1.0, &[]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_additive(a in 0.01f64..10.0, b in 0.01f64..10.0) {
            // a polynomial-in-t log hazard is smooth, so splitting is exact to rounding
            let f = |t: f64| 0.3 - 0.05 * t + 0.01 * t * t;
            let knots = [2.0, 5.0];
            let whole = cumulative_hazard(f, a + b, &knots).unwrap();
            let first = cumulative_hazard(f, a, &knots).unwrap();
            let mut second = 0.0;
            for (t, w) in nodes(b, &[]) {
                second += w * f(a + t).exp();
            }
            prop_assert!(first <= whole);
            prop_assert!((first + second - whole).abs() < 1e-10 * whole.max(1.0));
        }
    }
}
