//! Epoch-indexed excitation factor that decays to exactly zero.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
    Step,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ScheduleKind::Cosine),
            "linear" => Ok(ScheduleKind::Linear),
            "step" => Ok(ScheduleKind::Step),
            _ => Err(Error::Config(format!(
                "schedule must be cosine, linear or step, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Linear => "linear",
            ScheduleKind::Step => "step",
        })
    }
}

/// `α(t)` over `total_epochs` epochs, zero from epoch `zero_from` on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumSchedule {
    kind: ScheduleKind,
    alpha0: f64,
    total_epochs: usize,
    zero_from: usize,
}

impl CurriculumSchedule {
    /// `alpha0` must be finite and non-negative (zero disables excitation);
    /// `zero_from` must lie in `1..=total_epochs`.
    pub fn new(kind: ScheduleKind, alpha0: f64, total_epochs: usize, zero_from: usize) -> Result<Self> {
        if !(alpha0 >= 0.0 && alpha0.is_finite()) {
            return Err(Error::Config(format!("alpha0 must be finite and ≥ 0, got {alpha0}")));
        }
        if total_epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if zero_from == 0 || zero_from > total_epochs {
            return Err(Error::Config(format!(
                "zero_from must be in 1..={total_epochs}, got {zero_from}"
            )));
        }
        Ok(CurriculumSchedule {
            kind,
            alpha0,
            total_epochs,
            zero_from,
        })
    }

    /// Schedule whose last fifth of epochs runs with `α = 0`.
    pub fn with_default_tail(kind: ScheduleKind, alpha0: f64, total_epochs: usize) -> Result<Self> {
        Self::new(kind, alpha0, total_epochs, default_zero_from(total_epochs))
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn zero_from(&self) -> usize {
        self.zero_from
    }

    /// Factor for epoch `t` (constant within the epoch).
    pub fn alpha_at(&self, t: usize) -> f64 {
        if t >= self.zero_from {
            return 0.0;
        }
        let frac = t as f64 / self.zero_from as f64;
        let a = match self.kind {
            ScheduleKind::Cosine => self.alpha0 * 0.5 * (1.0 + (PI * frac).cos()),
            ScheduleKind::Linear => self.alpha0 * (1.0 - frac),
            ScheduleKind::Step => self.alpha0,
        };
        a.max(0.0)
    }
}

/// `round(0.8·T)` clamped into `1..=T`.
pub fn default_zero_from(total_epochs: usize) -> usize {
    ((0.8 * total_epochs as f64).round() as usize).clamp(1, total_epochs.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear, ScheduleKind::Step] {
            let s = CurriculumSchedule::new(kind, 1.5, 10, 8).unwrap();
            assert_eq!(s.alpha_at(0), 1.5);
            for t in 8..20 {
                assert_eq!(s.alpha_at(t).to_bits(), 0.0f64.to_bits());
            }
        }
    }

    #[test]
    fn cosine_midpoint() {
        let s = CurriculumSchedule::new(ScheduleKind::Cosine, 1.0, 10, 10).unwrap();
        assert!((s.alpha_at(5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_and_step_shapes() {
        let s = CurriculumSchedule::new(ScheduleKind::Linear, 2.0, 4, 4).unwrap();
        assert_eq!(
            (0..5).map(|t| s.alpha_at(t)).collect::<Vec<_>>(),
            vec![2.0, 1.5, 1.0, 0.5, 0.0]
        );
        let s = CurriculumSchedule::new(ScheduleKind::Step, 2.0, 4, 3).unwrap();
        assert_eq!(
            (0..5).map(|t| s.alpha_at(t)).collect::<Vec<_>>(),
            vec![2.0, 2.0, 2.0, 0.0, 0.0]
        );
    }

    #[test]
    fn invalid_schedules() {
        assert!(CurriculumSchedule::new(ScheduleKind::Cosine, 1.0, 10, 0).is_err());
        assert!(CurriculumSchedule::new(ScheduleKind::Cosine, 1.0, 10, 11).is_err());
        assert!(CurriculumSchedule::new(ScheduleKind::Cosine, -1.0, 10, 5).is_err());
        assert!(CurriculumSchedule::new(ScheduleKind::Cosine, 1.0, 0, 1).is_err());
    }

    #[test]
    fn default_tail() {
        assert_eq!(default_zero_from(30), 24);
        assert_eq!(default_zero_from(10), 8);
        assert_eq!(default_zero_from(1), 1);
        assert_eq!(default_zero_from(2), 2);
    }
}
