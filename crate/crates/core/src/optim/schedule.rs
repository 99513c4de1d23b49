use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    /// Multiply by `gamma` at every milestone epoch reached.
    Multistep { milestones: Vec<u32>, gamma: f64 },
    /// Cosine annealing to zero at `total_epochs`, then held there.
    Cosine { total_epochs: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    pub base_lr: f64,
}

impl Schedule {
    pub fn constant(base_lr: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            base_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        match &self.kind {
            ScheduleKind::Multistep { milestones, gamma } => {
                if !milestones.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::InvalidArgument(format!(
                        "milestones must be strictly increasing, got {milestones:?}"
                    )));
                }
                if !(*gamma > 0.0 && *gamma <= 1.0) {
                    return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
                }
            }
            ScheduleKind::Cosine { total_epochs } if *total_epochs == 0 => {
                return Err(Error::InvalidArgument("cosine schedule needs total_epochs >= 1".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        match &self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::Multistep { milestones, gamma } => {
                let passed = milestones.iter().filter(|m| **m <= epoch).count();
                self.base_lr * gamma.powi(passed as i32)
            }
            ScheduleKind::Cosine { total_epochs } => {
                let t = epoch.min(*total_epochs) as f64 / *total_epochs as f64;
                self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_stage() -> Schedule {
        Schedule {
            kind: ScheduleKind::Multistep {
                milestones: vec![100, 150],
                gamma: 0.1,
            },
            base_lr: 2.0,
        }
    }

    #[test]
    fn multistep() {
        let s = two_stage();
        assert_eq!(s.lr_at(0), 2.0);
        assert!((s.lr_at(120) - 0.2).abs() < 1e-15);
        assert!((s.lr_at(150) - 0.02).abs() < 1e-15);
        assert_eq!(s.lr_at(99), 2.0);
    }

    #[test]
    fn cosine_ends_at_zero_and_clamps() {
        let s = Schedule {
            kind: ScheduleKind::Cosine { total_epochs: 100 },
            base_lr: 1.0,
        };
        assert_eq!(s.lr_at(0), 1.0);
        assert!(s.lr_at(100).abs() < 1e-15);
        assert_eq!(s.lr_at(250), s.lr_at(100));
        assert!((s.lr_at(50) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(two_stage().validate().is_ok());
        let bad = Schedule {
            kind: ScheduleKind::Multistep {
                milestones: vec![150, 100],
                gamma: 0.1,
            },
            base_lr: 1.0,
        };
        assert!(bad.validate().is_err());
        assert!(Schedule::constant(0.0).validate().is_err());
    }
}
