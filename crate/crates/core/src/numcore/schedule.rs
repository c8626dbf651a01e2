use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// `lr_end + ½(lr_start − lr_end)(1 + cos(π·step/total_steps))`, step clamped.
    CosineAnneal {
        lr_start: f64,
        lr_end: f64,
        total_steps: usize,
    },
    /// Multiply by `factor` whenever the best metric has gone `patience`
    /// epochs without improving.
    PlateauDrop {
        lr_start: f64,
        factor: f64,
        patience: usize,
    },
}

impl LrSchedule {
    pub fn plateau(lr_start: f64) -> Self {
        LrSchedule::PlateauDrop {
            lr_start,
            factor: 0.1,
            patience: 10,
        }
    }

    /// Learning rate at `step`. `metric_history` holds one entry per
    /// completed epoch and is only read by the plateau variant.
    pub fn lr_at(&self, step: usize, metric_history: &[f64]) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::CosineAnneal {
                lr_start,
                lr_end,
                total_steps,
            } => {
                if total_steps == 0 {
                    return lr_end;
                }
                let s = step.min(total_steps) as f64 / total_steps as f64;
                lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * s).cos())
            }
            LrSchedule::PlateauDrop {
                lr_start,
                factor,
                patience,
            } => {
                let mut lr = lr_start;
                let mut best = f64::INFINITY;
                let mut stale = 0usize;
                for &m in metric_history {
                    if m < best {
                        best = m;
                        stale = 0;
                    } else {
                        stale += 1;
                        if stale >= patience.max(1) {
                            lr *= factor;
                            stale = 0;
                        }
                    }
                }
                lr
            }
        }
    }
}
