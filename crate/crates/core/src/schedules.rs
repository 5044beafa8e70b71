//! Scalar sequences consumed by the optimizers: step sizes of the form
//! `c / (n^a + c')`, the vanishing ridge `nu_n` added to the conditioner, and
//! the log-power averaging weights `(ln(k+1))^tau`.
//!
//! All schedules are pure functions of the iteration index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step sequence `value(n) = scale / (n^exponent + shift)` for `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub exponent: f64,
    pub scale: f64,
    pub shift: f64,
}

impl StepSchedule {
    pub fn new(exponent: f64, scale: f64, shift: f64) -> Result<Self> {
        let s = StepSchedule {
            exponent,
            scale,
            shift,
        };
        s.validate()?;
        Ok(s)
    }

    /// `1 / (n + shift)`.
    pub fn harmonic(shift: f64) -> Self {
        StepSchedule {
            exponent: 1.0,
            scale: 1.0,
            shift,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exponent > 0.5 && self.exponent <= 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "exponent {} outside (1/2, 1]",
                self.exponent
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "scale {} must be positive",
                self.scale
            )));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "shift {} must be nonnegative",
                self.shift
            )));
        }
        Ok(())
    }

    /// Panics on `n == 0`: the sequences are indexed from 1.
    #[inline]
    pub fn value(&self, n: u64) -> f64 {
        assert!(n >= 1, "step schedules are indexed from n = 1");
        self.scale / ((n as f64).powf(self.exponent) + self.shift)
    }
}

/// Vanishing ridge `nu_n` added to the conditioner of the Newton step.
///
/// `nu / n^(1 - alpha)` for `alpha < 1`, `nu / ln n` for `alpha = 1`
/// (with `value(1) = nu` since `ln 1 = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeSchedule {
    pub nu: f64,
    pub alpha_exponent: f64,
}

impl RidgeSchedule {
    pub fn new(nu: f64, alpha_exponent: f64) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::InvalidSchedule(format!("nu {nu} must be nonnegative")));
        }
        if !(alpha_exponent > 0.5 && alpha_exponent <= 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "alpha exponent {alpha_exponent} outside (1/2, 1]"
            )));
        }
        Ok(RidgeSchedule { nu, alpha_exponent })
    }

    pub fn zero() -> Self {
        RidgeSchedule {
            nu: 0.0,
            alpha_exponent: 1.0,
        }
    }

    #[inline]
    pub fn value(&self, n: u64) -> f64 {
        assert!(n >= 1, "ridge schedules are indexed from n = 1");
        if self.nu == 0.0 {
            return 0.0;
        }
        if self.alpha_exponent < 1.0 {
            self.nu / (n as f64).powf(1.0 - self.alpha_exponent)
        } else if n == 1 {
            self.nu
        } else {
            self.nu / (n as f64).ln()
        }
    }
}

/// Averaging weights `omega_k = (ln(k+1))^tau`, with `0^0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingWeights {
    pub tau: f64,
}

impl AveragingWeights {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidSchedule(format!("tau {tau} must be nonnegative")));
        }
        Ok(AveragingWeights { tau })
    }

    #[inline]
    pub fn value(&self, k: u64) -> f64 {
        if self.tau == 0.0 {
            return 1.0;
        }
        ((k + 1) as f64).ln().powf(self.tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn step_identity_case() {
        let s = StepSchedule::new(1.0, 1.0, 0.0).unwrap();
        assert_eq!(s.value(1), 1.0);
    }

    #[test]
    fn step_standard_offset() {
        let s = StepSchedule::harmonic(1000.0);
        assert!((s.value(1) - 1.0 / 1001.0).abs() < 1e-18);
        assert!((s.value(1) - 9.990e-4).abs() < 1e-7);
    }

    #[test]
    fn step_larger_averaged_schedule() {
        let d: f64 = 1000.0;
        let c = d.powf(0.25);
        let s = StepSchedule::new(0.75, c, c * d).unwrap();
        // d^0.25 = 5.6234..., so 5.6234 / (1 + 5623.4) = 9.9982e-4
        let expected = c / (1.0 + c * d);
        assert!((s.value(1) - expected).abs() < 1e-18);
        assert!((s.value(1) - 9.998_222_036_761_5e-4).abs() < 1e-15);
    }

    #[test]
    #[should_panic]
    fn step_rejects_zero_index() {
        StepSchedule::harmonic(0.0).value(0);
    }

    #[test]
    fn step_rejects_bad_parameters() {
        assert!(StepSchedule::new(0.5, 1.0, 0.0).is_err());
        assert!(StepSchedule::new(1.1, 1.0, 0.0).is_err());
        assert!(StepSchedule::new(0.75, 0.0, 0.0).is_err());
        assert!(StepSchedule::new(0.75, 1.0, -1.0).is_err());
    }

    #[test]
    fn ridge_examples() {
        let zero = RidgeSchedule::new(0.0, 0.75).unwrap();
        for n in [1, 2, 17, 1000] {
            assert_eq!(zero.value(n), 0.0);
        }
        let r = RidgeSchedule::new(1.0, 0.75).unwrap();
        assert!((r.value(16) - 0.5).abs() < 1e-15);

        let r1 = RidgeSchedule::new(1.0, 1.0).unwrap();
        // 1 / ln 8 = 1 / (3 ln 2)
        let oracle = 1.0 / (3.0 * std::f64::consts::LN_2);
        assert!((r1.value(8) - oracle).abs() < 1e-15);
        assert!((r1.value(8) - 0.480_898_346_962_988).abs() < 1e-12);
        assert_eq!(r1.value(1), 1.0);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(AveragingWeights::new(0.0).unwrap().value(0), 1.0);
        assert_eq!(AveragingWeights::new(2.0).unwrap().value(0), 0.0);
        let w = AveragingWeights::new(2.0).unwrap().value(1);
        let ln2 = std::f64::consts::LN_2;
        assert!((w - ln2 * ln2).abs() < 1e-15);
        assert!((w - 0.480_453_013_918_201_4).abs() < 1e-14);
    }

    #[test]
    fn ridge_times_step_partial_sums_keep_growing() {
        let partial = |a: StepSchedule, r: RidgeSchedule, upto: u64| {
            (1..=upto).map(|n| a.value(n) * r.value(n)).sum::<f64>()
        };
        // alpha < 1: the product behaves like nu / n, partial sums grow like ln n
        let a = StepSchedule::new(0.75, 1.0, 0.0).unwrap();
        let r = RidgeSchedule::new(1.0, 0.75).unwrap();
        let (early, late) = (partial(a, r, 1_000), partial(a, r, 1_000_000));
        assert!(late > early + 6.0, "early {early}, late {late}");
        // alpha = 1: 1 / (n ln n), partial sums grow like ln ln n
        let a = StepSchedule::harmonic(0.0);
        let r = RidgeSchedule::new(1.0, 1.0).unwrap();
        let (early, late) = (partial(a, r, 1_000), partial(a, r, 1_000_000));
        assert!(late > early + 0.6, "early {early}, late {late}");
    }

    #[test]
    fn squared_steps_vanish_relative_to_steps() {
        let g = StepSchedule::new(0.75, 1.0, 0.0).unwrap();
        let ratio = |n: u64| g.value(n).powi(2) / g.value(n);
        assert!(ratio(1_000_000) < 1e-4);
        assert!(ratio(1_000_000) < ratio(1_000));
    }

    proptest! {
        #[test]
        fn step_is_positive_and_non_increasing(
            exponent in 0.501f64..=1.0,
            scale in 1e-3f64..1e3,
            shift in 0.0f64..1e4,
            n in 1u64..1_000_000,
        ) {
            let s = StepSchedule::new(exponent, scale, shift).unwrap();
            prop_assert!(s.value(n) > 0.0);
            prop_assert!(s.value(n + 1) <= s.value(n));
        }

        #[test]
        fn ridge_is_non_increasing_from_two(
            nu in 0.0f64..10.0,
            alpha in 0.501f64..=1.0,
            n in 2u64..1_000_000,
        ) {
            let r = RidgeSchedule::new(nu, alpha).unwrap();
            prop_assert!(r.value(n) >= 0.0);
            prop_assert!(r.value(n + 1) <= r.value(n));
        }

        #[test]
        fn weights_are_nonnegative(tau in 0.0f64..4.0, k in 0u64..1_000_000) {
            let w = AveragingWeights::new(tau).unwrap();
            prop_assert!(w.value(k) >= 0.0);
            if k >= 1 {
                prop_assert!(w.value(k + 1) >= w.value(k));
            }
        }
    }
}
