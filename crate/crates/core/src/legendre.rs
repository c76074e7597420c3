//! Shifted second-order Legendre trajectories on `[0, T]` and their
//! value / slope / area features.

use crate::error::{Error, Result};

/// Subject-level trajectory `offset + b0 + b1·P1(t) + b2·P2(t)` on `[0, scale]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryCoefficients {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    /// Time-constant covariate contribution (`β3·sex + β4·race + β5·LH + β6·AH`).
    pub fixed_offset: f64,
    pub scale: f64,
}

impl TrajectoryCoefficients {
    pub fn new(b: [f64; 3], fixed_offset: f64, scale: f64) -> Result<Self> {
        let c = TrajectoryCoefficients {
            b0: b[0],
            b1: b[1],
            b2: b[2],
            fixed_offset,
            scale,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid(format!("scale {} must be > 0", self.scale)));
        }
        if ![self.b0, self.b1, self.b2, self.fixed_offset]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("trajectory coefficients must be finite"));
        }
        Ok(())
    }

    fn check_age(&self, t: f64) -> Result<()> {
        self.validate()?;
        if !(0.0..=self.scale).contains(&t) {
            return Err(Error::OutOfRange(format!(
                "age {t} outside [0, {}]",
                self.scale
            )));
        }
        Ok(())
    }

    /// Level coefficient, offset included.
    fn level(&self) -> f64 {
        self.fixed_offset + self.b0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureTriple {
    pub value: f64,
    pub slope: f64,
    pub area: f64,
    pub eval_age: f64,
}

pub fn legendre_basis(t: f64, scale: f64) -> Result<(f64, f64)> {
    if !(scale > 0.0) {
        return Err(Error::invalid(format!("scale {scale} must be > 0")));
    }
    Ok(basis_unchecked(t, scale))
}

#[inline]
fn basis_unchecked(t: f64, scale: f64) -> (f64, f64) {
    let u = 2.0 * t / scale - 1.0;
    (u, 0.5 * (3.0 * u * u - 1.0))
}

pub fn trajectory_value(coef: &TrajectoryCoefficients, t: f64) -> Result<f64> {
    coef.check_age(t)?;
    let (p1, p2) = basis_unchecked(t, coef.scale);
    Ok(coef.level() + coef.b1 * p1 + coef.b2 * p2)
}

pub fn trajectory_slope(coef: &TrajectoryCoefficients, t: f64) -> Result<f64> {
    coef.check_age(t)?;
    let u = 2.0 * t / coef.scale - 1.0;
    Ok(2.0 / coef.scale * (coef.b1 + 3.0 * coef.b2 * u))
}

pub fn trajectory_area(coef: &TrajectoryCoefficients, t0: f64, t: f64) -> Result<f64> {
    coef.check_age(t0)?;
    coef.check_age(t)?;
    if t < t0 {
        return Err(Error::invalid(format!("area upper limit {t} below lower limit {t0}")));
    }
    let w = area_weights(t0, t, coef.scale);
    Ok(w[0] * coef.level() + w[1] * coef.b1 + w[2] * coef.b2)
}

/// Value, slope and area (from `t0`) at age `t`.
pub fn features(coef: &TrajectoryCoefficients, t0: f64, t: f64) -> Result<FeatureTriple> {
    Ok(FeatureTriple {
        value: trajectory_value(coef, t)?,
        slope: trajectory_slope(coef, t)?,
        area: trajectory_area(coef, t0, t)?,
        eval_age: t,
    })
}

/// Which feature of a trajectory links into the hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    Value,
    Slope,
    Area,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Value, Feature::Slope, Feature::Area];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Value => "value",
            Feature::Slope => "slope",
            Feature::Area => "area",
        }
    }

    pub fn parse(s: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == s)
    }
}

fn area_weights(t0: f64, t: f64, scale: f64) -> [f64; 3] {
    let p1_anti = |s: f64| s * s / scale - s;
    let p2_anti = |s: f64| {
        let u = 2.0 * s / scale - 1.0;
        0.25 * scale * (u * u * u - u)
    };
    [t - t0, p1_anti(t) - p1_anti(t0), p2_anti(t) - p2_anti(t0)]
}

/// Linear weights `w` with `feature = w · (offset + b0, b1, b2)`.
///
/// Every feature is linear in the coefficients, which lets samplers cache
/// these weights per evaluation age.
pub fn feature_weights(feature: Feature, t0: f64, t: f64, scale: f64) -> [f64; 3] {
    match feature {
        Feature::Value => {
            let (p1, p2) = basis_unchecked(t, scale);
            [1.0, p1, p2]
        }
        Feature::Slope => {
            let u = 2.0 * t / scale - 1.0;
            [0.0, 2.0 / scale, 6.0 * u / scale]
        }
        Feature::Area => area_weights(t0, t, scale),
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn arb_coef() -> impl Strategy<Value = TrajectoryCoefficients> {
        (
            -200.0f64..200.0,
            -50.0f64..50.0,
            -20.0f64..20.0,
            -10.0f64..10.0,
            5.0f64..40.0,
        )
            .prop_map(|(b0, b1, b2, off, s)| {
                TrajectoryCoefficients::new([b0, b1, b2], off, s).unwrap()
            })
    }

    proptest! {
        #[test]
        fn slope_matches_central_difference(c in arb_coef(), frac in 0.01f64..0.99) {
            let t = frac * c.scale;
            let h = 1e-5;
            let fd = (trajectory_value(&c, t + h).unwrap() - trajectory_value(&c, t - h).unwrap()) / (2.0 * h);
            prop_assert!((fd - trajectory_slope(&c, t).unwrap()).abs() <= 1e-6 * (1.0 + fd.abs()));
        }

        #[test]
        fn area_derivative_is_value(c in arb_coef(), frac in 0.05f64..0.95) {
            let t = frac * c.scale;
            let h = 1e-4;
            let fd = (trajectory_area(&c, 0.0, t + h).unwrap() - trajectory_area(&c, 0.0, t - h).unwrap()) / (2.0 * h);
            let v = trajectory_value(&c, t).unwrap();
            prop_assert!((fd - v).abs() <= 1e-6 * (1.0 + v.abs()));
        }
    }
}
