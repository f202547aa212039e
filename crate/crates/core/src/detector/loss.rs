use super::{network::sigmoid, AnchorLabel, DetectorError, LossConfig, NetworkOutput, Result, TrainingTargets};
use crate::neural::{cast, Real, Tensor};

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `-ln σ(x)`, stable for large `|x|`.
fn softplus_neg(x: f64) -> f64 {
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub positive_cls: f64,
    pub negative_cls: f64,
    pub regression: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Weighted sum of mean positive BCE, mean negative BCE and mean
/// smooth-L1 over positive residuals, with gradients for both heads.
/// Binary cross-entropy is taken from logits.
pub fn compute_loss<T: Real>(
    out: &NetworkOutput<T>,
    targets: &TrainingTargets,
    w: &LossConfig,
) -> Result<(LossBreakdown, Tensor<T>, Tensor<T>)> {
    let n = out.anchor_count();
    if targets.labels.len() != n {
        return Err(DetectorError::ShapeMismatch(format!(
            "{} targets for {n} anchors",
            targets.labels.len()
        )));
    }
    let positives = targets.count(AnchorLabel::Positive);
    let negatives = targets.count(AnchorLabel::Negative);
    if negatives == 0 {
        return Err(DetectorError::NoNegatives);
    }
    let shape = out.score_logits.shape();
    let (y, plane) = (shape[0], shape[1] * shape[2]);
    let mut d_logits = Tensor::zeros(shape);
    let mut d_reg = Tensor::zeros(out.regression.shape());
    let mut loss = LossBreakdown {
        positives,
        negatives,
        ..Default::default()
    };
    let pos_scale = if positives > 0 { 1.0 / positives as f64 } else { 0.0 };
    let neg_scale = 1.0 / negatives as f64;
    for (i, label) in targets.labels.iter().enumerate() {
        let (cell, k) = (i / y, i % y);
        let s = out.logit(i);
        match label {
            AnchorLabel::Positive => {
                loss.positive_cls += softplus_neg(s) * pos_scale;
                d_logits.data[k * plane + cell] = cast(w.alpha * (sigmoid(s) - 1.0) * pos_scale);
                let pred = out.residuals(i);
                let target = targets.residuals[i].expect("positive anchors carry residuals");
                for j in 0..7 {
                    let e = pred[j] - target[j];
                    loss.regression += smooth_l1(e) * pos_scale;
                    d_reg.data[(k * 7 + j) * plane + cell] = cast(w.lambda * smooth_l1_grad(e) * pos_scale);
                }
            }
            AnchorLabel::Negative => {
                loss.negative_cls += softplus_neg(-s) * neg_scale;
                d_logits.data[k * plane + cell] = cast(w.beta * sigmoid(s) * neg_scale);
            }
            AnchorLabel::Ignore => {}
        }
    }
    loss.total = w.alpha * loss.positive_cls + w.beta * loss.negative_cls + w.lambda * loss.regression;
    Ok((loss, d_logits, d_reg))
}
