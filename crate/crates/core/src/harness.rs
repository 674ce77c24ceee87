//! Side-by-side comparison of the imbalance-handling losses on one corpus.

use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedSentence, RelationSchema};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::evaluation::{micro_prf, MatchMode, MetricReport};
use crate::loss::{LossConfig, LossVariant};
use crate::model::{Model, Thresholds};
use crate::scalar::Scalar;
use crate::training::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: LossVariant,
    pub settings: String,
    pub final_loss: f64,
    pub exact: MetricReport,
    pub partial: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub epochs: usize,
    pub train_sentences: usize,
    pub eval_sentences: usize,
    pub rows: Vec<ComparisonRow>,
}

fn settings(cfg: &LossConfig) -> String {
    match cfg.variant {
        LossVariant::PlainCe => "-".into(),
        LossVariant::WeightedCe => format!("w+={} w-={}", cfg.w_pos, cfg.w_neg),
        LossVariant::ResampledCe => format!("1:{}", cfg.resample_ratio),
        LossVariant::Focal => format!("gamma={}", cfg.gamma),
        LossVariant::ConfThreshold => format!("T={} C={}", cfg.threshold, cfg.confidence),
    }
}

fn score<T: Scalar>(model: &Model<T>, corpus: &[AnnotatedSentence], th: &Thresholds, mode: MatchMode) -> Result<MetricReport> {
    let preds: Vec<_> = model
        .extract_corpus(corpus, th)
        .into_iter()
        .map(|v| v.into_iter().map(|s| s.triple).collect())
        .collect();
    let gold: Vec<_> = corpus.iter().map(|s| s.triples().to_vec()).collect();
    micro_prf(&preds, &gold, mode)
}

/// Trains one model per loss variant from identical initialization and
/// scores each on `eval`. Every variant trains single-threaded, so the
/// report depends only on the inputs and seed.
pub fn compare_losses<T: Scalar>(
    train_set: &[AnnotatedSentence],
    eval_set: &[AnnotatedSentence],
    schema: &RelationSchema,
    encoder_cfg: EncoderConfig,
    base: &TrainConfig,
) -> Result<ComparisonReport> {
    let rows = LossVariant::ALL
        .par_iter()
        .map(|&variant| {
            let cfg = TrainConfig {
                loss: LossConfig { variant, ..base.loss },
                ..base.clone()
            };
            let out = train::<T>(train_set, schema, encoder_cfg, cfg.clone(), None)?;
            Ok(ComparisonRow {
                variant,
                settings: settings(&cfg.loss),
                final_loss: out.log.last().map_or(f64::NAN, |r| r.total_loss),
                exact: score(&out.model, eval_set, &cfg.thresholds, MatchMode::Exact)?,
                partial: score(&out.model, eval_set, &cfg.thresholds, MatchMode::Partial)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport {
        seed: base.seed,
        epochs: base.epochs,
        train_sentences: train_set.len(),
        eval_sentences: eval_set.len(),
        rows,
    })
}

pub fn render_comparison(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "seed {}  epochs {}  train {}  eval {}",
        report.seed, report.epochs, report.train_sentences, report.eval_sentences
    );
    let _ = writeln!(
        out,
        "{:<15} {:<16} {:>10} {:>7} {:>7} {:>7} {:>9}",
        "loss", "settings", "last loss", "P", "R", "F1", "F1 (par)"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<15} {:<16} {:>10.4} {:>7.2} {:>7.2} {:>7.2} {:>9.2}",
            r.variant.name(),
            r.settings,
            r.final_loss,
            100.0 * r.exact.precision,
            100.0 * r.exact.recall,
            100.0 * r.exact.f1,
            100.0 * r.partial.f1
        );
    }
    out
}
