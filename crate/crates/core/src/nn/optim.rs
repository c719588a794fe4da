//! Adam with coupled L2 regularization, and per-epoch learning-rate schedules.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::param::Parameters;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub l2_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_l2(l2_decay: f64) -> Self {
        Self {
            l2_decay,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            l2_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    step: u64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Names of parameters that have optimizer state.
    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.state.keys().map(String::as_str)
    }

    /// One update of every parameter in `module` (named under `prefix`).
    ///
    /// `g' = g + l2·θ`, `m ← β₁m + (1−β₁)g'`, `v ← β₂v + (1−β₂)g'²`,
    /// `θ ← θ − lr·m̂/(√v̂ + ε)`.
    pub fn step<P>(&mut self, module: &mut P, prefix: &str, lr: f64) -> Result<()>
    where
        P: Parameters<T> + ?Sized,
    {
        let mut missing = None;
        module.visit(prefix, &mut |name, p| {
            if p.grad.is_none() && missing.is_none() {
                missing = Some(name.to_string());
            }
        });
        if let Some(name) = missing {
            return Err(Error::Contract(format!("parameter `{name}` has no gradient")));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps, l2) = (T::from_f64(lr), T::from_f64(c.epsilon), T::from_f64(c.l2_decay));
        let one = T::one();
        let state = &mut self.state;
        module.visit_mut(prefix, &mut |name, p| {
            let n = p.value.numel();
            let slot = state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            });
            let grad = p.grad.as_ref().expect("checked above");
            for (i, (theta, &g)) in p.value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                let g = g + l2 * *theta;
                slot.m[i] = b1 * slot.m[i] + (one - b1) * g;
                slot.v[i] = b2 * slot.v[i] + (one - b2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    /// Linear ramp `peak·e/warmup` up to `warmup_epochs`, then linear decay to
    /// zero at `total_epochs`.
    WarmupLinearDecay {
        peak: f64,
        warmup_epochs: usize,
        total_epochs: usize,
    },
    /// `initial · factor^⌊e/period⌋`.
    StepDecay {
        initial: f64,
        factor: f64,
        period_epochs: usize,
    },
}

impl LrSchedule {
    /// Learning rate for epoch `epoch`. Epochs beyond the end of a warmup
    /// schedule get 0.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::WarmupLinearDecay {
                peak,
                warmup_epochs,
                total_epochs,
            } => {
                if epoch <= warmup_epochs {
                    if warmup_epochs == 0 {
                        peak
                    } else {
                        peak * epoch as f64 / warmup_epochs as f64
                    }
                } else if epoch <= total_epochs {
                    peak * (total_epochs - epoch) as f64 / (total_epochs - warmup_epochs) as f64
                } else {
                    0.0
                }
            }
            LrSchedule::StepDecay {
                initial,
                factor,
                period_epochs,
            } => {
                let k = epoch / period_epochs.max(1);
                initial * factor.powi(k as i32)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::WarmupLinearDecay {
                peak,
                warmup_epochs,
                total_epochs,
            } => {
                if !(peak >= 0.0) || warmup_epochs > total_epochs {
                    return Err(Error::Config(format!(
                        "warmup_linear_decay needs peak ≥ 0 and warmup ≤ total, got {peak}, {warmup_epochs}, {total_epochs}"
                    )));
                }
            }
            LrSchedule::StepDecay {
                initial,
                factor,
                period_epochs,
            } => {
                if !(initial >= 0.0) || !(factor >= 0.0) || period_epochs == 0 {
                    return Err(Error::Config(format!(
                        "step_decay needs initial ≥ 0, factor ≥ 0, period ≥ 1, got {initial}, {factor}, {period_epochs}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::Param;
    use crate::tensor::Tensor;

    struct One(Param<f64>);

    impl Parameters<f64> for One {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
            f(&crate::nn::param::join(prefix, "x"), &self.0);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            f(&crate::nn::param::join(prefix, "x"), &mut self.0);
        }
    }

    fn scalar(v: f64) -> One {
        One(Param::new(Tensor::scalar(v)))
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(0.7);
        p.0.grad = Some(Tensor::scalar(0.0));
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut p, "", 0.1).unwrap();
        }
        assert_eq!(p.0.value.data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        p.0.grad = Some(Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, "", 0.001).unwrap();
        // m̂ = v̂ = 1 → Δθ = −lr/(1 + ε)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.0.value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut p = scalar(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        let mut last = 1.0f64;
        for _ in 0..10 {
            let x = p.0.value.data()[0];
            p.0.grad = Some(Tensor::scalar(2.0 * x));
            adam.step(&mut p, "", 0.05).unwrap();
            let now = p.0.value.data()[0].abs();
            assert!(now < last, "{now} !< {last}");
            last = now;
        }
        assert_eq!(adam.steps_taken(), 10);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut p = scalar(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut p, "m", 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn coupled_l2_pulls_towards_zero() {
        let mut p = scalar(2.0);
        p.0.grad = Some(Tensor::scalar(0.0));
        let mut adam = Adam::new(AdamConfig::with_l2(0.5));
        adam.step(&mut p, "", 0.01).unwrap();
        assert!(p.0.value.data()[0] < 2.0);
    }

    #[test]
    fn warmup_schedule_points() {
        let s = LrSchedule::WarmupLinearDecay {
            peak: 5e-4,
            warmup_epochs: 30,
            total_epochs: 500,
        };
        assert_eq!(s.lr_at(30), 5e-4);
        assert!((s.lr_at(15) - 2.5e-4).abs() < 1e-18);
        assert!((s.lr_at(1) - 5e-4 / 30.0).abs() < 1e-18);
        assert_eq!(s.lr_at(500), 0.0);
        assert_eq!(s.lr_at(501), 0.0);
        // midway through decay
        assert!((s.lr_at(265) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn step_schedule_points() {
        let s = LrSchedule::StepDecay {
            initial: 1e-4,
            factor: 0.65,
            period_epochs: 45,
        };
        assert_eq!(s.lr_at(0), 1e-4);
        assert_eq!(s.lr_at(44), 1e-4);
        assert!((s.lr_at(45) - 6.5e-5).abs() < 1e-18);
        assert!((s.lr_at(90) - 1e-4 * 0.65 * 0.65).abs() < 1e-18);
    }

    #[test]
    fn schedule_toml_round_trip() {
        let s: LrSchedule =
            toml::from_str("kind = \"step_decay\"\ninitial = 1e-5\nfactor = 0.65\nperiod_epochs = 20\n")
                .unwrap();
        assert_eq!(
            s,
            LrSchedule::StepDecay {
                initial: 1e-5,
                factor: 0.65,
                period_epochs: 20
            }
        );
        assert!(toml::from_str::<LrSchedule>("kind = \"step_decay\"\nbogus = 1\n").is_err());
    }
}
