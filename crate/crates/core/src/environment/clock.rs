use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClockError {
    #[error("clock regression: now {now}, requested {requested}")]
    Regression { now: Timestamp, requested: Timestamp },
    #[error("acceleration must be finite and >= 1, got {0}")]
    BadAcceleration(f64),
}

/// Master time reference of the generator.
///
/// Virtual time only moves forward. Wall-clock advances are scaled by
/// `acceleration`; sub-millisecond remainders are carried so long runs do
/// not drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualClock {
    now: Timestamp,
    acceleration: f64,
    #[serde(skip)]
    carry_ms: f64,
}

impl VirtualClock {
    pub fn new(start: Timestamp, acceleration: f64) -> Result<Self, ClockError> {
        if !acceleration.is_finite() || acceleration < 1.0 {
            return Err(ClockError::BadAcceleration(acceleration));
        }
        Ok(VirtualClock { now: start, acceleration, carry_ms: 0.0 })
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn acceleration(&self) -> f64 {
        self.acceleration
    }

    /// Advance by `wall_ms` of real time.
    pub fn advance_wall(&mut self, wall_ms: f64) -> Timestamp {
        let exact = wall_ms.max(0.0) * self.acceleration + self.carry_ms;
        let whole = exact.floor();
        self.carry_ms = exact - whole;
        self.now = self.now + whole as i64;
        self.now
    }

    /// Jump to an absolute virtual time; never backwards.
    pub fn advance_to(&mut self, t: Timestamp) -> Result<(), ClockError> {
        if t < self.now {
            return Err(ClockError::Regression { now: self.now, requested: t });
        }
        self.now = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_slow_motion() {
        assert!(VirtualClock::new(Timestamp(0), 0.5).is_err());
        assert!(VirtualClock::new(Timestamp(0), f64::NAN).is_err());
    }

    #[test]
    fn regression_is_an_error() {
        let mut c = VirtualClock::new(Timestamp(1000), 1.0).unwrap();
        assert!(c.advance_to(Timestamp(999)).is_err());
        assert_eq!(c.now(), Timestamp(1000));
        c.advance_to(Timestamp(1000)).unwrap();
    }

    proptest! {
        #[test]
        fn monotone_under_any_advances(steps in proptest::collection::vec(0.0f64..5000.0, 1..200)) {
            let mut c = VirtualClock::new(Timestamp(0), 600.0).unwrap();
            let mut prev = c.now();
            for s in steps {
                let t = c.advance_wall(s);
                prop_assert!(t >= prev);
                prev = t;
            }
        }

        #[test]
        fn scaled_advance_within_one_quantum(steps in proptest::collection::vec(0.0f64..1000.0, 1..100), accel in 1.0f64..1000.0) {
            let mut c = VirtualClock::new(Timestamp(0), accel).unwrap();
            let wall: f64 = steps.iter().sum();
            for s in &steps {
                c.advance_wall(*s);
            }
            let expected = wall * accel;
            prop_assert!((c.now().millis() as f64 - expected).abs() <= 1.0 + expected * 1e-12);
        }
    }
}
