//! Confidence-threshold gated binary cross-entropy and the comparison
//! losses (class-weighted CE, focal loss, negative re-sampling).
//!
//! A sample is a prediction `p ∈ (0,1)` with a binary tag. The gated loss
//! drops a sample (`ξ = 0`) when its prediction is on the correct side of
//! the decision threshold `T` *and* farther than `C` from 0.5. Both
//! comparisons are strict, and `ξ` is constant with respect to `p`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    ConfThreshold,
    PlainCe,
    WeightedCe,
    Focal,
    ResampledCe,
}

impl LossVariant {
    pub const ALL: [LossVariant; 5] = [
        LossVariant::PlainCe,
        LossVariant::WeightedCe,
        LossVariant::ResampledCe,
        LossVariant::Focal,
        LossVariant::ConfThreshold,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::ConfThreshold => "conf_threshold",
            LossVariant::PlainCe => "plain_ce",
            LossVariant::WeightedCe => "weighted_ce",
            LossVariant::Focal => "focal",
            LossVariant::ResampledCe => "resampled_ce",
        }
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Decision threshold `T`.
    pub threshold: f64,
    /// Confidence threshold `C`.
    pub confidence: f64,
    pub variant: LossVariant,
    pub w_pos: f64,
    pub w_neg: f64,
    pub gamma: f64,
    /// Negatives kept per positive by the re-sampling variant.
    pub resample_ratio: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            threshold: 0.5,
            confidence: 0.1,
            variant: LossVariant::ConfThreshold,
            w_pos: 0.75,
            w_neg: 0.25,
            gamma: 2.0,
            resample_ratio: 5.0,
        }
    }
}

impl LossConfig {
    pub fn with_variant(variant: LossVariant) -> Self {
        LossConfig {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("loss threshold T must lie in (0, 1)");
        }
        if !(0.0..=0.5).contains(&self.confidence) {
            return fail("confidence threshold C must lie in [0, 0.5]");
        }
        if !(self.w_pos > 0.0 && self.w_neg > 0.0) {
            return fail("class weights must be positive");
        }
        if !(self.gamma >= 0.0) {
            return fail("focal gamma must be non-negative");
        }
        if !(self.resample_ratio >= 1.0) {
            return fail("re-sampling ratio must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleLoss<T> {
    pub value: T,
    /// `ξ = 0`
    pub gated: bool,
}

#[inline]
fn clamp<T: Scalar>(p: T) -> T {
    let eps = T::lit(EPS);
    p.max(eps).min(T::one() - eps)
}

#[inline]
fn tag<T: Scalar>(positive: bool) -> T {
    if positive {
        T::one()
    } else {
        T::zero()
    }
}

/// `-[t log p + (1-t) log(1-p)]`
pub fn binary_ce<T: Scalar>(p: T, positive: bool) -> T {
    let p = clamp(p);
    if positive {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// `d ce / dp`, evaluated at the clamped probability.
pub fn binary_ce_grad<T: Scalar>(p: T, positive: bool) -> T {
    let p = clamp(p);
    if positive {
        -T::one() / p
    } else {
        T::one() / (T::one() - p)
    }
}

/// Switch coefficient: 0 when the prediction is correct with respect to `T`
/// and confident beyond `C`, 1 otherwise.
pub fn gate<T: Scalar>(p: T, positive: bool, cfg: &LossConfig) -> u8 {
    let t_thr = T::lit(cfg.threshold);
    let correct = (tag::<T>(positive) - t_thr) * (p - t_thr) > T::zero();
    let confident = (p - T::half()).abs() > T::lit(cfg.confidence);
    if correct && confident {
        0
    } else {
        1
    }
}

pub fn conf_threshold_ce<T: Scalar>(p: T, positive: bool, cfg: &LossConfig) -> SampleLoss<T> {
    if gate(p, positive, cfg) == 0 {
        SampleLoss {
            value: T::zero(),
            gated: true,
        }
    } else {
        SampleLoss {
            value: binary_ce(p, positive),
            gated: false,
        }
    }
}

pub fn conf_threshold_ce_grad<T: Scalar>(p: T, positive: bool, cfg: &LossConfig) -> T {
    T::lit(f64::from(gate(p, positive, cfg))) * binary_ce_grad(p, positive)
}

pub fn weighted_ce<T: Scalar>(p: T, positive: bool, w_pos: f64, w_neg: f64) -> T {
    class_weight::<T>(positive, w_pos, w_neg) * binary_ce(p, positive)
}

pub fn weighted_ce_grad<T: Scalar>(p: T, positive: bool, w_pos: f64, w_neg: f64) -> T {
    class_weight::<T>(positive, w_pos, w_neg) * binary_ce_grad(p, positive)
}

fn class_weight<T: Scalar>(positive: bool, w_pos: f64, w_neg: f64) -> T {
    T::lit(if positive { w_pos } else { w_neg })
}

/// Focal loss with modulating factor `(1 - p_t)^γ`.
pub fn focal<T: Scalar>(p: T, positive: bool, gamma: f64) -> T {
    let p = clamp(p);
    let g = T::lit(gamma);
    if positive {
        (T::one() - p).powf(g) * -p.ln()
    } else {
        p.powf(g) * -(T::one() - p).ln()
    }
}

pub fn focal_grad<T: Scalar>(p: T, positive: bool, gamma: f64) -> T {
    let p = clamp(p);
    let g = T::lit(gamma);
    let one = T::one();
    if positive {
        let q = one - p;
        let modulating = if gamma == 0.0 {
            T::zero()
        } else {
            g * q.powf(g - one) * p.ln()
        };
        modulating - q.powf(g) / p
    } else {
        let q = one - p;
        let modulating = if gamma == 0.0 {
            T::zero()
        } else {
            -g * p.powf(g - one) * q.ln()
        };
        modulating + p.powf(g) / q
    }
}

/// Keeps every positive and a uniform sample, without replacement, of at
/// most `ratio × positives` negatives (`ratio` negatives when there are no
/// positives).
pub fn resample_mask<R: Rng>(tags: &[bool], ratio: f64, rng: &mut R) -> Vec<bool> {
    let positives = tags.iter().filter(|&&t| t).count();
    let negatives: Vec<usize> = (0..tags.len()).filter(|&i| !tags[i]).collect();
    let budget = if positives == 0 {
        ratio.floor() as usize
    } else {
        (ratio * positives as f64).floor() as usize
    };
    let keep = budget.min(negatives.len());
    let mut mask: Vec<bool> = tags.to_vec();
    for j in index::sample(rng, negatives.len(), keep) {
        mask[negatives[j]] = true;
    }
    mask
}

/// Per-class totals and gated counts; class index 0 is negative, 1 positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateStats {
    pub total: [usize; 2],
    pub gated: [usize; 2],
}

impl GateStats {
    pub fn merge(&mut self, other: &GateStats) {
        for c in 0..2 {
            self.total[c] += other.total[c];
            self.gated[c] += other.gated[c];
        }
    }

    pub fn gated_total(&self) -> usize {
        self.gated[0] + self.gated[1]
    }

    pub fn fraction(&self, class: usize) -> Option<f64> {
        (self.total[class] > 0).then(|| self.gated[class] as f64 / self.total[class] as f64)
    }
}

/// Loss of one stage's samples with the derivative for every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct StageLoss<T> {
    pub value: T,
    pub grads: Vec<T>,
    pub stats: GateStats,
}

/// Value and derivative of one sample under the configured variant.
/// Re-sampling is applied by the caller's mask, so here it is plain CE.
pub fn sample_loss<T: Scalar>(p: T, positive: bool, cfg: &LossConfig) -> (SampleLoss<T>, T) {
    match cfg.variant {
        LossVariant::ConfThreshold => (
            conf_threshold_ce(p, positive, cfg),
            conf_threshold_ce_grad(p, positive, cfg),
        ),
        LossVariant::PlainCe | LossVariant::ResampledCe => (
            SampleLoss {
                value: binary_ce(p, positive),
                gated: false,
            },
            binary_ce_grad(p, positive),
        ),
        LossVariant::WeightedCe => (
            SampleLoss {
                value: weighted_ce(p, positive, cfg.w_pos, cfg.w_neg),
                gated: false,
            },
            weighted_ce_grad(p, positive, cfg.w_pos, cfg.w_neg),
        ),
        LossVariant::Focal => (
            SampleLoss {
                value: focal(p, positive, cfg.gamma),
                gated: false,
            },
            focal_grad(p, positive, cfg.gamma),
        ),
    }
}

/// Sum of per-sample losses. Samples masked out (`mask[i] == false`)
/// contribute neither loss nor statistics.
pub fn stage_loss<T: Scalar>(
    probs: &[T],
    targets: &[bool],
    cfg: &LossConfig,
    mask: Option<&[bool]>,
) -> StageLoss<T> {
    debug_assert_eq!(probs.len(), targets.len());
    let mut value = T::zero();
    let mut grads = vec![T::zero(); probs.len()];
    let mut stats = GateStats::default();
    for (i, (&p, &t)) in probs.iter().zip(targets).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let (loss, grad) = sample_loss(p, t, cfg);
        let class = usize::from(t);
        stats.total[class] += 1;
        if loss.gated {
            stats.gated[class] += 1;
        }
        value += loss.value;
        grads[i] = grad;
    }
    StageLoss {
        value,
        grads,
        stats,
    }
}
