//! Count arithmetic for the DP tables: checked integers or log-domain floats.

use std::fmt::Debug;

use num_traits::Float;

use super::{Domain, DpError};

/// Stand-in for `log(0)`. A finite sentinel keeps log-add-exp free of NaNs.
pub const LOG_ZERO: f64 = -999_999.0;

/// A value the subsequence-count recurrences can be evaluated in.
pub trait CountValue: Copy + Send + Sync + PartialEq + Debug + 'static {
    const DOMAIN: Domain;

    fn zero() -> Self;
    fn one() -> Self;
    fn add(self, rhs: Self) -> Result<Self, DpError>;
    fn mul(self, rhs: Self) -> Result<Self, DpError>;
    fn is_zero(self) -> bool;
    /// Natural log of the represented count (`-inf` for an exact zero, the
    /// sentinel for a log-domain zero).
    fn ln(self) -> f64;
    /// `self / den` as a real number.
    fn ratio(self, den: Self) -> f64;
}

impl CountValue for u64 {
    const DOMAIN: Domain = Domain::Exact;

    #[inline]
    fn zero() -> Self {
        0
    }

    #[inline]
    fn one() -> Self {
        1
    }

    #[inline]
    fn add(self, rhs: Self) -> Result<Self, DpError> {
        self.checked_add(rhs).ok_or(DpError::Overflow)
    }

    #[inline]
    fn mul(self, rhs: Self) -> Result<Self, DpError> {
        self.checked_mul(rhs).ok_or(DpError::Overflow)
    }

    #[inline]
    fn is_zero(self) -> bool {
        self == 0
    }

    fn ln(self) -> f64 {
        (self as f64).ln()
    }

    fn ratio(self, den: Self) -> f64 {
        self as f64 / den as f64
    }
}

/// Log of a nonnegative count, stored in float type `F`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LogCount<F>(pub F);

impl<F: Float> LogCount<F> {
    #[inline]
    fn sentinel() -> F {
        F::from(LOG_ZERO).unwrap()
    }

    #[inline]
    pub fn value(self) -> F {
        self.0
    }
}

/// `log(exp(a) + exp(b))` with the sentinel treated as `log(0)`.
#[inline]
pub fn logaddexp<F: Float>(a: F, b: F) -> F {
    let zero = F::from(LOG_ZERO).unwrap();
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo <= zero {
        return hi.max(zero);
    }
    hi + (lo - hi).exp().ln_1p()
}

macro_rules! log_count_impl {
    ($f:ty, $dom:expr) => {
        impl CountValue for LogCount<$f> {
            const DOMAIN: Domain = $dom;

            #[inline]
            fn zero() -> Self {
                LogCount(LOG_ZERO as $f)
            }

            #[inline]
            fn one() -> Self {
                LogCount(0.0)
            }

            #[inline]
            fn add(self, rhs: Self) -> Result<Self, DpError> {
                Ok(LogCount(logaddexp(self.0, rhs.0)))
            }

            #[inline]
            fn mul(self, rhs: Self) -> Result<Self, DpError> {
                let z = Self::sentinel();
                if self.0 <= z || rhs.0 <= z {
                    Ok(LogCount(z))
                } else {
                    Ok(LogCount(self.0 + rhs.0))
                }
            }

            #[inline]
            fn is_zero(self) -> bool {
                self.0 <= Self::sentinel()
            }

            fn ln(self) -> f64 {
                self.0 as f64
            }

            fn ratio(self, den: Self) -> f64 {
                if self.is_zero() {
                    0.0
                } else {
                    (self.0 - den.0).exp() as f64
                }
            }
        }
    };
}

log_count_impl!(f64, Domain::Log);
log_count_impl!(f32, Domain::LogF32);
