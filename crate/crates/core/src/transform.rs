//! Monotone maps from bounded or positive quantities onto the real line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    Log,
    /// `log((x − lower) / (upper − x))`.
    Logit { lower: f64, upper: f64 },
}

impl Transform {
    pub fn logit(lower: f64, upper: f64) -> Result<Self> {
        let t = Transform::Logit { lower, upper };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Transform::Logit { lower, upper } if !(lower < upper) || !lower.is_finite() || !upper.is_finite() => {
                Err(Error::Invalid(format!(
                    "logit bounds must satisfy lower < upper, got ({lower}, {upper})"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: f64) -> Result<f64> {
        match *self {
            Transform::Identity if x.is_finite() => Ok(x),
            Transform::Log if x > 0.0 && x.is_finite() => Ok(x.ln()),
            Transform::Logit { lower, upper } if x > lower && x < upper => {
                Ok(((x - lower) / (upper - x)).ln())
            }
            _ => Err(Error::Domain {
                transform: self.to_string(),
                value: x,
            }),
        }
    }

    pub fn invert(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit { lower, upper } => {
                let width = upper - lower;
                if u >= 0.0 {
                    lower + width / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    lower + width * e / (1.0 + e)
                }
            }
        }
    }

    pub fn apply_all(&self, xs: &[f64]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    pub fn invert_all(&self, us: &[f64]) -> Vec<f64> {
        us.iter().map(|&u| self.invert(u)).collect()
    }
}

impl std::fmt::Display for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transform::Identity => write!(f, "identity"),
            Transform::Log => write!(f, "log"),
            Transform::Logit { lower, upper } => write!(f, "logit({lower}, {upper})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn logit_midpoint_is_zero() {
        let t = Transform::logit(5.0, 80.0).unwrap();
        assert_eq!(t.apply(42.5).unwrap(), 0.0);
    }

    #[test]
    fn log_of_one() {
        assert_eq!(Transform::Log.apply(1.0).unwrap(), 0.0);
    }

    #[test]
    fn field_transform_value() {
        let t = Transform::logit(1.7, 10249.0).unwrap();
        let expected = (15.3f64 / 10232.0).ln();
        assert!((t.apply(17.0).unwrap() - expected).abs() < 1e-14);
        assert!((t.apply(17.0).unwrap() - (-6.5054)).abs() < 5e-5);
    }

    #[test]
    fn domain_violations_are_errors() {
        let t = Transform::logit(5.0, 80.0).unwrap();
        assert!(matches!(t.apply(5.0), Err(Error::Domain { .. })));
        assert!(t.apply(80.0).is_err());
        assert!(t.apply(100.0).is_err());
        assert!(Transform::Log.apply(0.0).is_err());
        assert!(Transform::Log.apply(-1.0).is_err());
        assert!(Transform::logit(3.0, 3.0).is_err());
    }

    #[test]
    fn simple_inverses() {
        assert_eq!(Transform::Identity.invert(-2.5), -2.5);
        assert_eq!(Transform::Identity.apply(Transform::Identity.invert(7.0)).unwrap(), 7.0);
        assert_eq!(Transform::logit(0.0, 1.0).unwrap().invert(0.0), 0.5);
    }

    #[test]
    fn parses_from_toml() {
        #[derive(Deserialize)]
        struct T {
            t: Transform,
        }
        let t: T = toml::from_str(r#"t = { kind = "logit", lower = 5.0, upper = 80.0 }"#).unwrap();
        assert_eq!(t.t, Transform::Logit { lower: 5.0, upper: 80.0 });
        let t: T = toml::from_str(r#"t = { kind = "log" }"#).unwrap();
        assert_eq!(t.t, Transform::Log);
    }

    fn transforms() -> impl Strategy<Value = Transform> {
        prop_oneof![
            Just(Transform::Identity),
            Just(Transform::Log),
            (-50.0..50.0f64, 0.1..200.0f64)
                .prop_map(|(lower, width)| Transform::Logit { lower, upper: lower + width }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn apply_after_invert(t in transforms(), u in -8.0..8.0f64) {
            let back = t.apply(t.invert(u)).unwrap();
            prop_assert!((back - u).abs() <= 1e-12 * (1.0 + u.abs()), "{t}: {u} -> {back}");
        }

        #[test]
        fn invert_after_apply(t in transforms(), frac in 0.001..0.999f64) {
            let x = match t {
                Transform::Identity => (frac - 0.5) * 100.0,
                Transform::Log => frac * 50.0,
                Transform::Logit { lower, upper } => lower + frac * (upper - lower),
            };
            let back = t.invert(t.apply(x).unwrap());
            prop_assert!((back - x).abs() <= 1e-10 * x.abs() + 1e-12);
        }

        #[test]
        fn strictly_monotone(t in transforms(), f1 in 0.001..0.999f64, f2 in 0.001..0.999f64) {
            prop_assume!(f1 != f2);
            let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            let map = |f: f64| match t {
                Transform::Identity => f * 10.0,
                Transform::Log => f * 10.0,
                Transform::Logit { lower, upper } => lower + f * (upper - lower),
            };
            let (x1, x2) = (map(lo), map(hi));
            prop_assume!(x1 < x2);
            prop_assert!(t.apply(x1).unwrap() < t.apply(x2).unwrap());
        }
    }
}
