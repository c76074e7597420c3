//! Spike-and-slab link priors and the correlation-matrix parameterization.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::{log_add_exp, LN_SQRT_2PI};

/// Spike scale `τ₀ = √(σ_d² + τ²)` under `σ_d² + c²τ² = 1` with `σ_d = ratio·τ`.
pub fn compute_tau0(ratio: f64, c: f64) -> Result<f64> {
    if !(ratio > 0.0) || !(c >= 1.0) {
        return Err(Error::invalid("compute_tau0 needs ratio > 0 and c >= 1"));
    }
    let tau2 = 1.0 / (ratio * ratio + c * c);
    Ok((ratio * ratio * tau2 + tau2).sqrt())
}

fn log_normal0(x: f64, sd: f64) -> f64 {
    -LN_SQRT_2PI - sd.ln() - 0.5 * (x / sd).powi(2)
}

/// Log density and partial derivatives of a two-component zero-mean
/// mixture `(1−π) N(0, sd0²) + π N(0, sd1²)`, scaled by `factor` on each
/// component (2 for half-normals).
struct Mix {
    value: f64,
    d_x: f64,
    d_pi: f64,
    /// derivatives w.r.t. `ln sd0`, `ln sd1`
    d_log_sd: (f64, f64),
    slab_responsibility: f64,
}

fn mixture(x: f64, pi: f64, sd0: f64, sd1: f64, factor: f64) -> Mix {
    let l0 = (1.0 - pi).ln() + log_normal0(x, sd0);
    let l1 = pi.ln() + log_normal0(x, sd1);
    let value = log_add_exp(l0, l1) + factor.ln();
    let (r0, r1) = if pi <= 0.0 {
        (1.0, 0.0)
    } else if pi >= 1.0 {
        (0.0, 1.0)
    } else {
        let r1 = (l1 - log_add_exp(l0, l1)).exp();
        (1.0 - r1, r1)
    };
    let dpi0 = if r0 > 0.0 { -r0 / (1.0 - pi) } else { 0.0 };
    let dpi1 = if r1 > 0.0 { r1 / pi } else { 0.0 };
    Mix {
        value,
        d_x: -(r0 * x / (sd0 * sd0) + r1 * x / (sd1 * sd1)),
        d_pi: dpi0 + dpi1,
        d_log_sd: (r0 * (-1.0 + (x / sd0).powi(2)), r1 * (-1.0 + (x / sd1).powi(2))),
        slab_responsibility: r1,
    }
}

/// `log[(1−π) N(d; 0, τ₀²) + π N(d; 0, 1)]`.
pub fn spike_slab_logprior(d: f64, pi: f64, tau0: f64) -> Result<f64> {
    check_pi(pi)?;
    if !(tau0 > 0.0) {
        return Err(Error::invalid("tau0 must be > 0"));
    }
    Ok(mixture(d, pi, tau0, 1.0, 1.0).value)
}

/// `log[(1−π) N⁺(τ; 0, τ₀²s²) + π N⁺(τ; 0, s²)]`.
pub fn halfnormal_mixture_logprior(tau: f64, pi: f64, tau0: f64, s: f64) -> Result<f64> {
    check_pi(pi)?;
    if tau < 0.0 {
        return Err(Error::invalid("tau must be >= 0"));
    }
    if !(tau0 > 0.0 && s > 0.0) {
        return Err(Error::invalid("tau0 and s must be > 0"));
    }
    Ok(mixture(tau, pi, tau0 * s, s, 2.0).value)
}

fn check_pi(pi: f64) -> Result<()> {
    if (0.0..=1.0).contains(&pi) {
        Ok(())
    } else {
        Err(Error::invalid("pi must lie in [0, 1]"))
    }
}

/// Value and gradient pieces of the spike-slab block for one link.
pub(crate) struct LinkPrior {
    pub value: f64,
    pub d_d: f64,
    pub d_tau: f64,
    pub d_pi: f64,
    pub d_s: f64,
    /// Posterior weight of the slab component for `d`.
    pub inclusion: f64,
}

pub(crate) fn link_prior(d: f64, tau: f64, pi: f64, tau0: f64, s: f64) -> LinkPrior {
    let md = mixture(d, pi, tau0, 1.0, 1.0);
    let mt = mixture(tau, pi, tau0 * s, s, 2.0);
    LinkPrior {
        value: md.value + mt.value,
        d_d: md.d_x,
        d_tau: mt.d_x,
        d_pi: md.d_pi + mt.d_pi,
        // both component scales are proportional to s
        d_s: (mt.d_log_sd.0 + mt.d_log_sd.1) / s,
        inclusion: md.slab_responsibility,
    }
}

/// Number of unconstrained values for a `k × k` correlation Cholesky factor.
pub fn n_cpc(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: f64,
}

impl Dual {
    fn c(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
    fn scale(self, k: f64) -> Dual {
        Dual { v: self.v * k, d: self.d * k }
    }
    fn tanh(self) -> Dual {
        let t = self.v.tanh();
        Dual { v: t, d: self.d * (1.0 - t * t) }
    }
    fn sqrt(self) -> Dual {
        let s = self.v.sqrt();
        Dual { v: s, d: self.d * 0.5 / s }
    }
    fn ln(self) -> Dual {
        Dual { v: self.v.ln(), d: self.d / self.v }
    }
    fn one_minus(self) -> Dual {
        Dual { v: 1.0 - self.v, d: -self.d }
    }
}

/// Row `i` of the Cholesky factor from its `i` unconstrained values, plus
/// the log Jacobian of the transform and the LKJ(η = 1) log density terms
/// contributed by the row, `(K − i − 1)·ln L_ii` (0-based `i`).
fn cpc_row(y: &[Dual], k: usize) -> (Vec<Dual>, Dual) {
    let i = y.len();
    let mut row = Vec::with_capacity(i + 1);
    let mut lp = Dual::c(0.0);
    let mut sum_sq = Dual::c(0.0);
    for (j, &yj) in y.iter().enumerate() {
        let z = yj.tanh();
        lp = lp.add(z.mul(z).one_minus().ln());
        let entry = if j == 0 {
            z
        } else {
            let rem = sum_sq.one_minus();
            lp = lp.add(rem.ln().scale(0.5));
            z.mul(rem.sqrt())
        };
        sum_sq = sum_sq.add(entry.mul(entry));
        row.push(entry);
    }
    let diag = sum_sq.one_minus().sqrt();
    if i > 0 {
        lp = lp.add(diag.ln().scale((k - i - 1) as f64));
    }
    row.push(diag);
    (row, lp)
}

fn row_offset(i: usize) -> usize {
    i * i.saturating_sub(1) / 2
}

/// Builds `L_c` from unconstrained values (row-major lower triangle) and
/// returns it with the log prior (LKJ(1) plus the transform's log Jacobian).
pub fn correlation_cholesky(y: &[f64], k: usize) -> Result<(DMatrix<f64>, f64)> {
    if y.len() != n_cpc(k) {
        return Err(Error::invalid("wrong number of correlation parameters"));
    }
    let mut l = DMatrix::zeros(k, k);
    let mut lp = 0.0;
    for i in 0..k {
        let ys: Vec<Dual> = y[row_offset(i)..row_offset(i) + i].iter().map(|&v| Dual::c(v)).collect();
        let (row, rlp) = cpc_row(&ys, k);
        for (j, e) in row.iter().enumerate() {
            l[(i, j)] = e.v;
        }
        lp += rlp.v;
    }
    Ok((l, lp))
}

/// Gradient w.r.t. `y` of `Σ_ij upstream[i,j]·L[i,j] + log prior`.
pub fn correlation_cholesky_grad(y: &[f64], k: usize, upstream: &DMatrix<f64>) -> Vec<f64> {
    let mut grad = vec![0.0; y.len()];
    for i in 1..k {
        let off = row_offset(i);
        for p in 0..i {
            let ys: Vec<Dual> = (0..i)
                .map(|j| Dual { v: y[off + j], d: if j == p { 1.0 } else { 0.0 } })
                .collect();
            let (row, lp) = cpc_row(&ys, k);
            let mut g = lp.d;
            for (j, e) in row.iter().enumerate() {
                g += upstream[(i, j)] * e.d;
            }
            grad[off + p] = g;
        }
    }
    grad
}

/// `b = diag(σ)·L_c·z`.
pub fn noncentered_random_effects(l_c: &DMatrix<f64>, sigma: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let k = sigma.len();
    if l_c.nrows() != k || l_c.ncols() != k || z.len() != k {
        return Err(Error::invalid("dimension mismatch"));
    }
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("random-effect sds must be > 0"));
    }
    for i in 0..k {
        let norm: f64 = (0..=i).map(|j| l_c[(i, j)].powi(2)).sum();
        let upper_zero = (i + 1..k).all(|j| l_c[(i, j)] == 0.0);
        if (norm - 1.0).abs() > 1e-8 || !upper_zero || l_c[(i, i)] <= 0.0 {
            return Err(Error::invalid("L_c is not a correlation Cholesky factor"));
        }
    }
    let b = l_c * DVector::from_column_slice(z);
    Ok(b.iter().zip(sigma).map(|(v, s)| v * s).collect())
}

/// `D = Σ₀ L_c L_cᵀ Σ₀`.
pub fn implied_covariance(l_c: &DMatrix<f64>, sigma: &[f64]) -> DMatrix<f64> {
    let s = DMatrix::from_diagonal(&DVector::from_column_slice(sigma));
    let l = &s * l_c;
    &l * l.transpose()
}

/// Inverse-Gamma `(a, b)` log density of `x` up to a constant.
pub(crate) fn inv_gamma_log(x: f64, a: f64, b: f64) -> (f64, f64) {
    (-(a + 1.0) * x.ln() - b / x, -(a + 1.0) / x + b / (x * x))
}

pub(crate) fn half_normal_log(x: f64, sd: f64) -> (f64, f64) {
    ((2.0 / (PI * sd * sd)).sqrt().ln() - 0.5 * (x / sd).powi(2), -x / (sd * sd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn tau0_examples() {
        assert!((compute_tau0(1.0, 10.0).unwrap() - 0.140720).abs() < 5e-7);
        assert!((compute_tau0(1.0, 10.0).unwrap() - 0.1407).abs() < 5e-5);
        assert!((compute_tau0(1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((compute_tau0(1.0, 3.0).unwrap() - 0.2f64.sqrt()).abs() < 1e-15);
        assert!(compute_tau0(0.0, 10.0).is_err());
        assert!(compute_tau0(1.0, 0.5).is_err());
    }

    #[test]
    fn spike_slab_examples() {
        let phi0 = 1.0 / (2.0 * PI).sqrt();
        assert!((spike_slab_logprior(0.0, 1.0, 0.1407).unwrap() - phi0.ln()).abs() < 1e-12);
        assert!((spike_slab_logprior(0.0, 1.0, 0.1407).unwrap().exp() - 0.398942).abs() < 1e-6);
        let spike = spike_slab_logprior(0.0, 0.0, 0.1407).unwrap().exp();
        assert!((spike - 2.83537).abs() < 1e-4, "{spike}");
        let mix = spike_slab_logprior(0.0, 0.5, 0.1407).unwrap().exp();
        assert!((mix - 1.61716).abs() < 1e-4, "{mix}");
        assert!(spike_slab_logprior(0.0, 1.5, 0.1).is_err());
    }

    #[test]
    fn halfnormal_examples() {
        let h = halfnormal_mixture_logprior(0.0, 1.0, 0.1407, 1.0).unwrap().exp();
        assert!((h - 0.797885).abs() < 1e-6);
        let (t0, s) = (0.1407, 1.7);
        let h = halfnormal_mixture_logprior(0.0, 0.0, t0, s).unwrap().exp();
        assert!((h - 2.0 / (t0 * s * (2.0 * PI).sqrt())).abs() < 1e-12);
        let h = halfnormal_mixture_logprior(0.0, 0.5, 0.1407, 1.0).unwrap().exp();
        assert!((h - 0.5 * (0.797885 + 5.67074)).abs() < 1e-4);
        assert!(halfnormal_mixture_logprior(-0.1, 0.5, 0.14, 1.0).is_err());
    }

    #[test]
    fn link_prior_gradient_matches_finite_differences() {
        let (d, tau, pi, tau0, s) = (0.3, 0.4, 0.35, 0.1407, 0.8);
        let f = |d: f64, tau: f64, pi: f64, s: f64| link_prior(d, tau, pi, tau0, s).value;
        let g = link_prior(d, tau, pi, tau0, s);
        let h = 1e-6;
        let fd = |a: f64, b: f64| (a - b) / (2.0 * h);
        assert!((g.d_d - fd(f(d + h, tau, pi, s), f(d - h, tau, pi, s))).abs() < 1e-6);
        assert!((g.d_tau - fd(f(d, tau + h, pi, s), f(d, tau - h, pi, s))).abs() < 1e-6);
        assert!((g.d_pi - fd(f(d, tau, pi + h, s), f(d, tau, pi - h, s))).abs() < 1e-6);
        assert!((g.d_s - fd(f(d, tau, pi, s + h), f(d, tau, pi, s - h))).abs() < 1e-6);
    }

    #[test]
    fn cholesky_is_a_correlation_factor() {
        let mut rng = rng_for(12, &[]);
        let k = 5;
        let y: Vec<f64> = (0..n_cpc(k)).map(|_| 1.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let (l, _) = correlation_cholesky(&y, k).unwrap();
        let r = &l * l.transpose();
        for i in 0..k {
            assert!((r[(i, i)] - 1.0).abs() < 1e-12);
            assert!(l[(i, i)] > 0.0);
        }
        assert!(r.clone().cholesky().is_some());
        let zero = correlation_cholesky(&vec![0.0; n_cpc(k)], k).unwrap().0;
        assert_eq!(zero, DMatrix::identity(k, k));
    }

    #[test]
    fn two_dim_prior_is_uniform_in_correlation() {
        // For K = 2, LKJ(1) is uniform on ρ ∈ (−1, 1); with ρ = tanh(y) the
        // log density on y is ln(1 − ρ²) + ln ½, so the returned log prior
        // (which drops the constant) must equal ln(1 − tanh² y).
        for &y in &[-2.0, -0.3, 0.0, 0.7, 3.1] {
            let (_, lp) = correlation_cholesky(&[y], 2).unwrap();
            let rho: f64 = f64::tanh(y);
            assert!((lp - (1.0 - rho * rho).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_gradient_matches_finite_differences() {
        let mut rng = rng_for(2, &[]);
        let k = 4;
        let y: Vec<f64> = (0..n_cpc(k)).map(|_| StandardNormal.sample(&mut rng)).collect();
        let up = DMatrix::from_fn(k, k, |i, j| if j <= i { (i * 3 + j) as f64 * 0.1 - 0.4 } else { 0.0 });
        let f = |y: &[f64]| {
            let (l, lp) = correlation_cholesky(y, k).unwrap();
            lp + l.component_mul(&up).sum()
        };
        let g = correlation_cholesky_grad(&y, k, &up);
        for p in 0..y.len() {
            let mut a = y.clone();
            let mut b = y.clone();
            a[p] += 1e-6;
            b[p] -= 1e-6;
            let fd = (f(&a) - f(&b)) / 2e-6;
            assert!((g[p] - fd).abs() < 1e-6 * fd.abs().max(1.0), "{p}: {} {fd}", g[p]);
        }
    }

    #[test]
    fn noncentered_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(noncentered_random_effects(&id, &[1.0; 3], &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let z = [0.3, -1.2, 2.0];
        assert_eq!(noncentered_random_effects(&id, &[1.0; 3], &z).unwrap(), z.to_vec());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.9, 0.9]);
        assert!(noncentered_random_effects(&bad, &[1.0, 1.0], &[0.0, 0.0]).is_err());
        assert!(noncentered_random_effects(&DMatrix::identity(2, 2), &[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn noncentered_monte_carlo_covariance() {
        let rho: f64 = 0.5;
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, rho, (1.0 - rho * rho).sqrt()]);
        let sigma = [1.0, 2.0];
        let d = implied_covariance(&l, &sigma);
        let mut rng = rng_for(7, &[]);
        let n = 100_000;
        let mut acc = [[0.0; 2]; 2];
        for _ in 0..n {
            let z = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            let b = noncentered_random_effects(&l, &sigma, &z).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += b[i] * b[j] / n as f64;
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((acc[i][j] - d[(i, j)]).abs() <= 0.02 * d[(i, j)].abs().max(d[(0, 0)]), "{i}{j}");
            }
        }
    }

    proptest! {
        #[test]
        fn implied_covariance_is_spd(y in proptest::collection::vec(-3.0f64..3.0, 6), s in proptest::collection::vec(0.1f64..5.0, 4)) {
            let (l, _) = correlation_cholesky(&y, 4).unwrap();
            let d = implied_covariance(&l, &s);
            prop_assert!((d.clone() - d.transpose()).abs().max() < 1e-12);
            for i in 0..4 {
                prop_assert!((d[(i, i)] - s[i] * s[i]).abs() < 1e-10 * s[i] * s[i]);
            }
            prop_assert!(d.cholesky().is_some());
        }
    }
}
