use std::cmp::Ordering;
use std::fmt;

use super::KernelError;

/// A point on the simulation clock.
///
/// Finite values are non-negative. [`SimTime::PASSIVE`] stands for "never" and
/// orders after every finite time. NaN can never be stored.
#[derive(Clone, Copy, PartialEq)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);
    pub const PASSIVE: SimTime = SimTime(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self, KernelError> {
        if value.is_nan() || value < 0.0 || value == f64::NEG_INFINITY {
            return Err(KernelError::InvalidTime(value));
        }
        Ok(SimTime(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_passive(self) -> bool {
        self.0 == f64::INFINITY
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    /// Shifts the time forward by a non-negative duration. PASSIVE stays PASSIVE.
    pub fn after(self, duration: f64) -> SimTime {
        debug_assert!(duration >= 0.0);
        SimTime(self.0 + duration)
    }

    /// Duration from `earlier` to `self`; infinite if `self` is PASSIVE.
    pub fn since(self, earlier: SimTime) -> f64 {
        if self.is_passive() {
            f64::INFINITY
        } else {
            self.0 - earlier.0
        }
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_passive() {
            f.write_str("PASSIVE")
        } else {
            write!(f, "{:?}", self.0)
        }
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
