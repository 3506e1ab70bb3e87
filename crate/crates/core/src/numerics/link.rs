use serde::{Deserialize, Serialize};

use crate::error::{AtrelError, Result};

/// Arguments of the logit inverse are clamped into `[EPS, 1 - EPS]`.
pub const LOGIT_CLAMP: f64 = 1e-12;

/// Strictly increasing mean function `g` of a generalized linear model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

impl Link {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Logit => logistic(x),
        }
    }

    /// First derivative `ġ(x)`.
    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Logit => {
                let p = logistic(x);
                p * (1.0 - p)
            }
        }
    }

    /// `g⁻¹(a)`. Logit arguments must lie in the open unit interval; values
    /// within `LOGIT_CLAMP` of the boundary are clamped.
    pub fn inverse(self, a: f64) -> Result<f64> {
        self.inverse_clamped(a).map(|(x, _)| x)
    }

    /// Like [`Link::inverse`], also reporting whether the argument was clamped.
    pub fn inverse_clamped(self, a: f64) -> Result<(f64, bool)> {
        match self {
            Link::Identity => {
                if a.is_nan() {
                    return Err(AtrelError::Domain("identity inverse of NaN".into()));
                }
                Ok((a, false))
            }
            Link::Logit => {
                if !(a > 0.0 && a < 1.0) {
                    return Err(AtrelError::Domain(format!("logit inverse requires a in (0, 1), got {a}")));
                }
                let clamped = a.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                Ok(((clamped / (1.0 - clamped)).ln(), clamped != a))
            }
        }
    }

    /// `ğ(a) = ġ(g⁻¹(a))`.
    pub fn breve(self, a: f64) -> Result<f64> {
        Ok(self.deriv(self.inverse(a)?))
    }

    /// True when `a` lies in the range of `g`.
    pub fn in_range(self, a: f64) -> bool {
        match self {
            Link::Identity => a.is_finite(),
            Link::Logit => a > 0.0 && a < 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Logit => "logit",
        }
    }
}

impl std::str::FromStr for Link {
    type Err = AtrelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Link::Identity),
            "logit" | "logistic" => Ok(Link::Logit),
            other => Err(AtrelError::Config(format!("unknown link '{other}'"))),
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn logit_midpoint() {
        assert_eq!(Link::Logit.eval(0.0), 0.5);
        assert_eq!(Link::Logit.breve(0.5).unwrap(), 0.25);
    }

    #[test]
    fn identity_breve_is_one() {
        for a in [-3.0, 0.0, 0.2, 17.5] {
            assert_eq!(Link::Identity.breve(a).unwrap(), 1.0);
        }
    }

    #[test]
    fn logit_inverse_domain() {
        assert!(matches!(Link::Logit.inverse(0.0), Err(AtrelError::Domain(_))));
        assert!(matches!(Link::Logit.inverse(1.0), Err(AtrelError::Domain(_))));
        assert!(matches!(Link::Logit.inverse(-0.1), Err(AtrelError::Domain(_))));
        assert!(Link::Logit.breve(f64::NAN).is_err());
        let (_, clamped) = Link::Logit.inverse_clamped(1e-15).unwrap();
        assert!(clamped);
        let (_, clamped) = Link::Logit.inverse_clamped(0.3).unwrap();
        assert!(!clamped);
    }

    #[test]
    fn logistic_extremes_stay_finite() {
        assert_eq!(Link::Logit.eval(-800.0), 0.0);
        assert_eq!(Link::Logit.eval(800.0), 1.0);
        assert!(Link::Logit.deriv(800.0) >= 0.0);
    }

    #[test]
    fn round_trip_grid() {
        // Beyond |x| ~ 13 the upper tail 1 - g(x) keeps too few significant
        // bits in f64 for 1e-10 recovery; the error there is bounded by the
        // spacing of doubles near 1 divided by g'(x).
        let mut x = -30.0;
        while x <= 30.0 {
            let back = Link::Logit.inverse(Link::Logit.eval(x)).unwrap();
            let clamp_edge = ((1.0 - LOGIT_CLAMP) / LOGIT_CLAMP).ln();
            if x.abs() <= 13.0 {
                assert!((back - x).abs() <= 1e-10, "x={x} back={back}");
            } else if x.abs() < clamp_edge {
                let bound = 4.0 * f64::EPSILON / Link::Logit.deriv(x);
                assert!((back - x).abs() <= bound.max(1e-10), "x={x} back={back}");
            } else {
                assert!((back.abs() - clamp_edge).abs() <= 1e-3, "x={x} back={back}");
            }
            x += 0.25;
        }
    }

    proptest! {
        #[test]
        fn logit_round_trip(x in -13.0f64..13.0) {
            let back = Link::Logit.inverse(Link::Logit.eval(x)).unwrap();
            prop_assert!((back - x).abs() <= 1e-10);
        }

        #[test]
        fn identity_round_trip(x in -1e6f64..1e6) {
            prop_assert_eq!(Link::Identity.inverse(Link::Identity.eval(x)).unwrap(), x);
        }

        #[test]
        fn derivative_positive(x in -30.0f64..30.0) {
            prop_assert!(Link::Logit.deriv(x) > 0.0);
            prop_assert!(Link::Logit.eval(x + 1e-3) >= Link::Logit.eval(x));
            if x.abs() < 15.0 {
                prop_assert!(Link::Logit.eval(x + 1e-3) > Link::Logit.eval(x));
            }
        }

        #[test]
        fn breve_matches_definition(a in 1e-6f64..(1.0 - 1e-6)) {
            let direct = Link::Logit.deriv(Link::Logit.inverse(a).unwrap());
            prop_assert_eq!(Link::Logit.breve(a).unwrap(), direct);
        }
    }
}
