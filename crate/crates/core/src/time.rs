//! Simulated time.
//!
//! All event times are integer picoseconds so that ordering and equality are
//! exact. Analytical cost models work in `f64` seconds and are quantized once
//! when they enter the event domain.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// A point or span on the simulated clock, in picoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const PS_PER_US: u64 = 1_000_000;
    pub const PS_PER_MS: u64 = 1_000_000_000;
    pub const PS_PER_S: u64 = 1_000_000_000_000;

    pub const fn from_picos(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * Self::PS_PER_US)
    }

    /// Rounds to the nearest picosecond. Negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        let ps = (secs * Self::PS_PER_S as f64).round();
        if ps.is_nan() || ps <= 0.0 {
            SimTime(0)
        } else if ps >= u64::MAX as f64 {
            SimTime(u64::MAX)
        } else {
            SimTime(ps as u64)
        }
    }

    pub const fn as_picos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / Self::PS_PER_S as f64
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / Self::PS_PER_MS as f64
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}ms", self.as_millis_f64())
    }
}
