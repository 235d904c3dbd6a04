//! External excitation `J^e(t, x)`.
//!
//! In box mode the value is a flux density on the lateral boundary; in
//! interval mode it is the distributed extracellular source `s(t, x)` that
//! enters `c_m dv/dt + I = -a_e d2u_e/dx2 - s`. With this sign a negative
//! amplitude depolarizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    Constant,
    /// Rectangular pulse on `[start, start + duration)`.
    Pulse { start: f64, duration: f64 },
    /// `exp(-((t - center) / width)^2)`.
    Gaussian { center: f64, width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceProfile {
    Uniform,
    /// `exp(-((x1 - center) / width)^2)`.
    Gaussian { center: f64, width: f64 },
    /// Indicator of `start <= x1 <= end`.
    Window { start: f64, end: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub amplitude: f64,
    pub time: TimeProfile,
    pub space: SpaceProfile,
}

impl Default for Stimulus {
    fn default() -> Self {
        Stimulus::none()
    }
}

impl Stimulus {
    pub fn none() -> Self {
        Stimulus {
            amplitude: 0.0,
            time: TimeProfile::Constant,
            space: SpaceProfile::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(Error::input("stimulus amplitude must be finite"));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::input(format!("stimulus {name} = {v} must be positive")))
            }
        };
        match self.time {
            TimeProfile::Constant => {}
            TimeProfile::Pulse { start, duration } => {
                positive("duration", duration)?;
                if !(start >= 0.0) {
                    return Err(Error::input("pulse start must be non-negative"));
                }
            }
            TimeProfile::Gaussian { center, width } => {
                positive("width", width)?;
                if !center.is_finite() {
                    return Err(Error::input("pulse center must be finite"));
                }
            }
        }
        match self.space {
            SpaceProfile::Uniform => {}
            SpaceProfile::Gaussian { width, .. } => positive("width", width)?,
            SpaceProfile::Window { start, end } => {
                if !(end > start) {
                    return Err(Error::input("stimulus window must have end > start"));
                }
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude == 0.0
    }

    pub fn time_factor(&self, t: f64) -> f64 {
        match self.time {
            TimeProfile::Constant => 1.0,
            TimeProfile::Pulse { start, duration } => {
                if t >= start && t < start + duration {
                    1.0
                } else {
                    0.0
                }
            }
            TimeProfile::Gaussian { center, width } => (-((t - center) / width).powi(2)).exp(),
        }
    }

    pub fn space_factor(&self, x1: f64) -> f64 {
        match self.space {
            SpaceProfile::Uniform => 1.0,
            SpaceProfile::Gaussian { center, width } => (-((x1 - center) / width).powi(2)).exp(),
            SpaceProfile::Window { start, end } => {
                if x1 >= start && x1 <= end {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn value(&self, t: f64, x1: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        self.amplitude * self.time_factor(t) * self.space_factor(x1)
    }

    pub fn scaled(&self, factor: f64) -> Stimulus {
        Stimulus {
            amplitude: self.amplitude * factor,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_evaluate() {
        let s = Stimulus {
            amplitude: -2.0,
            time: TimeProfile::Pulse {
                start: 0.1,
                duration: 0.2,
            },
            space: SpaceProfile::Window { start: 0.4, end: 0.6 },
        };
        assert_eq!(s.value(0.15, 0.5), -2.0);
        assert_eq!(s.value(0.35, 0.5), 0.0);
        assert_eq!(s.value(0.15, 0.7), 0.0);
        let g = Stimulus {
            amplitude: 1.0,
            time: TimeProfile::Gaussian { center: 1.0, width: 0.5 },
            space: SpaceProfile::Gaussian { center: 0.0, width: 1.0 },
        };
        assert_eq!(g.value(1.0, 0.0), 1.0);
        assert!((g.value(1.5, 1.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert!(Stimulus::none().value(3.0, 0.2) == 0.0);
    }

    #[test]
    fn validation() {
        let mut s = Stimulus::none();
        s.time = TimeProfile::Pulse {
            start: 0.0,
            duration: 0.0,
        };
        assert!(s.validate().is_err());
        s.time = TimeProfile::Constant;
        s.space = SpaceProfile::Window { start: 1.0, end: 0.5 };
        assert!(s.validate().is_err());
    }
}
