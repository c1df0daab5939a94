//! Online difficulty soft weighting.
//!
//! Each prompt's advantages are scaled by `F(acc)`, a function of the group's
//! rollout accuracy. The sine variants peak at `acc = 0.5`; Easy keeps full
//! weight on easy prompts (`acc >= 0.5`), Hard keeps it on hard ones.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rollout::AdvantageSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightVariant {
    Easy,
    Medium,
    Hard,
    /// Weight 1 inside the closed band `[t_min, t_max]`, 0 outside.
    Binary {
        t_min: f64,
        t_max: f64,
    },
    /// Constant weight 1.
    Unweighted,
}

impl WeightVariant {
    pub fn validate(&self) -> Result<()> {
        if let WeightVariant::Binary { t_min, t_max } = *self {
            if !(0.0 <= t_min && t_min <= t_max && t_max <= 1.0) {
                return Err(Error::Config(format!(
                    "binary band needs 0 <= t_min <= t_max <= 1, got [{t_min}, {t_max}]"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for WeightVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightVariant::Easy => f.write_str("easy"),
            WeightVariant::Medium => f.write_str("medium"),
            WeightVariant::Hard => f.write_str("hard"),
            WeightVariant::Binary { t_min, t_max } => write!(f, "binary:{t_min}:{t_max}"),
            WeightVariant::Unweighted => f.write_str("none"),
        }
    }
}

impl FromStr for WeightVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.trim() {
            "easy" => WeightVariant::Easy,
            "medium" => WeightVariant::Medium,
            "hard" => WeightVariant::Hard,
            "none" => WeightVariant::Unweighted,
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                match parts.as_slice() {
                    ["binary", lo, hi] => {
                        let parse = |x: &str| {
                            x.parse::<f64>()
                                .map_err(|_| Error::Config(format!("bad binary band bound {x:?}")))
                        };
                        WeightVariant::Binary {
                            t_min: parse(lo)?,
                            t_max: parse(hi)?,
                        }
                    }
                    _ => return Err(Error::Config(format!("unknown weighting variant {other:?}"))),
                }
            }
        };
        v.validate()?;
        Ok(v)
    }
}

/// `F(acc)` for the given variant.
pub fn weight(variant: WeightVariant, acc: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&acc) {
        return Err(Error::Input(format!("group accuracy {acc} outside [0, 1]")));
    }
    let sine = (PI * acc).sin();
    Ok(match variant {
        WeightVariant::Easy => {
            if acc < 0.5 {
                sine
            } else {
                1.0
            }
        }
        WeightVariant::Medium => sine,
        WeightVariant::Hard => {
            if acc <= 0.5 {
                1.0
            } else {
                sine
            }
        }
        WeightVariant::Binary { t_min, t_max } => {
            variant.validate()?;
            if (t_min..=t_max).contains(&acc) {
                1.0
            } else {
                0.0
            }
        }
        WeightVariant::Unweighted => 1.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAdvantageSet {
    pub per_response: Vec<f64>,
    pub weight: f64,
    /// Whether the zero-accuracy damping factor was applied.
    pub zero_acc_damp_applied: bool,
}

/// Scales group advantages by `F(group_acc)`, and additionally by `w` for
/// zero-accuracy groups while the length reward is active.
pub fn reweight_advantages(
    base: &AdvantageSet,
    group_acc: f64,
    variant: WeightVariant,
    w: f64,
    dylr_active: bool,
) -> Result<WeightedAdvantageSet> {
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::Config(format!("damping factor w must lie in (0, 1], got {w}")));
    }
    let f = weight(variant, group_acc)?;
    let damp = dylr_active && group_acc == 0.0;
    let scale = if damp { f * w } else { f };
    Ok(WeightedAdvantageSet {
        per_response: base.per_response.iter().map(|a| scale * a).collect(),
        weight: f,
        zero_acc_damp_applied: damp,
    })
}
