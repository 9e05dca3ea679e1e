use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use super::NnError;
use crate::mask::BinaryMask;

/// Added to probabilities inside the logarithm.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Per pixel `1 - w_c * p[c]`; affine in the probability, may go negative.
    Literal,
    /// Per pixel `-w_c * ln(p[c] + LOG_EPS)`.
    #[serde(rename = "standard-wcce")]
    StandardWcce,
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Self::Literal),
            "standard-wcce" => Ok(Self::StandardWcce),
            other => Err(format!("unknown loss mode `{other}`")),
        }
    }
}

/// Class weights `[background, skeleton]` and loss form. Both modes average over
/// every pixel of every sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub class_weights: [f64; 2],
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            class_weights: [1.0, 25.0],
            mode: LossMode::StandardWcce,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.class_weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(NnError::InvalidConfig(format!(
                "class weights must be positive, got {:?}",
                self.class_weights
            )))
        }
    }
}

fn check<T: Real>(probs: &Tensor<T>, targets: &[BinaryMask]) -> Result<(), NnError> {
    let [n, c, h, w] = probs.shape();
    if c != 2 {
        return Err(NnError::ChannelCount(c));
    }
    if targets.len() != n || targets.iter().any(|t| t.dims() != (h, w)) {
        return Err(NnError::ShapeMismatch(format!(
            "probabilities {:?} against {} targets",
            probs.shape(),
            targets.len()
        )));
    }
    Ok(())
}

/// Mean per-pixel weighted loss; accumulated in `f64` in row-major sample order.
pub fn weighted_loss<T: Real>(probs: &Tensor<T>, targets: &[BinaryMask], cfg: &LossConfig) -> Result<f64, NnError> {
    check(probs, targets)?;
    let [n, _, h, w] = probs.shape();
    let hw = h * w;
    let mut total = 0.0f64;
    for (s, target) in targets.iter().enumerate() {
        let p = probs.sample(s);
        for (i, &fg) in target.data().iter().enumerate() {
            let c = fg as usize;
            let pc = p[c * hw + i].to_f64().unwrap();
            let wc = cfg.class_weights[c];
            total += match cfg.mode {
                LossMode::Literal => 1.0 - wc * pc,
                LossMode::StandardWcce => -wc * (pc + LOG_EPS).ln(),
            };
        }
    }
    Ok(total / (n * hw) as f64)
}

/// Gradient of [`weighted_loss`] with respect to the probabilities.
pub fn weighted_loss_backward<T: Real>(
    probs: &Tensor<T>,
    targets: &[BinaryMask],
    cfg: &LossConfig,
) -> Result<Tensor<T>, NnError> {
    check(probs, targets)?;
    let [n, _, h, w] = probs.shape();
    let hw = h * w;
    let scale = 1.0 / (n * hw) as f64;
    let mut grad = Tensor::zeros(probs.shape());
    for (s, target) in targets.iter().enumerate() {
        let p = probs.sample(s);
        let g = grad.sample_mut(s);
        for (i, &fg) in target.data().iter().enumerate() {
            let c = fg as usize;
            let wc = cfg.class_weights[c];
            let d = match cfg.mode {
                LossMode::Literal => -wc * scale,
                LossMode::StandardWcce => -wc * scale / (p[c * hw + i].to_f64().unwrap() + LOG_EPS),
            };
            g[c * hw + i] = T::lit(d);
        }
    }
    Ok(grad)
}
