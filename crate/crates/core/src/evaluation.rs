//! Micro precision/recall/F1 over extracted triples, under partial or exact
//! matching, overall and per sentence subset.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::{bucket_by_triple_count, classify_overlap, AnnotatedSentence, TripleBucket, Triple};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Relation and the head (last) token of both entities.
    Partial,
    /// Relation and both full spans.
    #[default]
    Exact,
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partial" => Ok(MatchMode::Partial),
            "exact" => Ok(MatchMode::Exact),
            _ => Err(Error::Config(format!("unknown match mode `{s}`"))),
        }
    }
}

pub fn triple_matches(pred: &Triple, gold: &Triple, mode: MatchMode) -> bool {
    match_key(pred, mode) == match_key(gold, mode)
}

/// Tuple compared under `mode`: `(subject start, subject end, relation,
/// object start, object end)` with starts collapsed for partial matching.
fn match_key(t: &Triple, mode: MatchMode) -> (usize, usize, usize, usize, usize) {
    match mode {
        MatchMode::Exact => (t.subject.start, t.subject.end, t.relation, t.object.start, t.object.end),
        MatchMode::Partial => (0, t.subject.head(), t.relation, 0, t.object.head()),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
}

impl MetricReport {
    pub fn from_counts(predicted: usize, gold: usize, correct: usize) -> Self {
        let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricReport {
            precision,
            recall,
            f1,
            predicted,
            gold,
            correct,
        }
    }

    /// No gold triples to score against.
    pub fn is_empty(&self) -> bool {
        self.gold == 0
    }
}

/// Counts of `(predicted, gold, correct)` for one sentence. Predictions are
/// deduplicated; each gold item is credited at most once.
fn sentence_counts<K: Eq + Hash, I: Eq + Hash + Clone>(
    pred: &[I],
    gold: &[I],
    key: impl Fn(&I) -> K,
) -> (usize, usize, usize) {
    let dedup = |xs: &[I]| {
        let mut seen = std::collections::HashSet::new();
        xs.iter().filter(|x| seen.insert((*x).clone())).cloned().collect::<Vec<_>>()
    };
    let pred = dedup(pred);
    let gold = dedup(gold);
    let mut gold_by_key: HashMap<K, usize> = HashMap::new();
    for g in &gold {
        *gold_by_key.entry(key(g)).or_default() += 1;
    }
    let mut correct = 0;
    for p in &pred {
        if let Some(n) = gold_by_key.get_mut(&key(p)) {
            if *n > 0 {
                *n -= 1;
                correct += 1;
            }
        }
    }
    (pred.len(), gold.len(), correct)
}

/// Counts aggregated over all sentences before forming ratios.
pub fn micro_prf(predictions: &[Vec<Triple>], gold: &[Vec<Triple>], mode: MatchMode) -> Result<MetricReport> {
    if predictions.len() != gold.len() {
        return Err(Error::Alignment {
            predicted: predictions.len(),
            gold: gold.len(),
        });
    }
    let (mut np, mut ng, mut nc) = (0, 0, 0);
    for (p, g) in predictions.iter().zip(gold) {
        let (a, b, c) = sentence_counts(p, g, |t| match_key(t, mode));
        np += a;
        ng += b;
        nc += c;
    }
    Ok(MetricReport::from_counts(np, ng, nc))
}

/// Triple given by surface strings, for scoring external systems' output.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SurfaceTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

fn last_token(s: &str) -> &str {
    s.split_whitespace().last().unwrap_or("")
}

pub fn micro_prf_surface(
    predictions: &[Vec<SurfaceTriple>],
    gold: &[Vec<SurfaceTriple>],
    mode: MatchMode,
) -> Result<MetricReport> {
    if predictions.len() != gold.len() {
        return Err(Error::Alignment {
            predicted: predictions.len(),
            gold: gold.len(),
        });
    }
    let key = |t: &SurfaceTriple| match mode {
        MatchMode::Exact => (t.subject.clone(), t.relation.clone(), t.object.clone()),
        MatchMode::Partial => (
            last_token(&t.subject).to_string(),
            t.relation.clone(),
            last_token(&t.object).to_string(),
        ),
    };
    let (mut np, mut ng, mut nc) = (0, 0, 0);
    for (p, g) in predictions.iter().zip(gold) {
        let (a, b, c) = sentence_counts(p, g, key);
        np += a;
        ng += b;
        nc += c;
    }
    Ok(MetricReport::from_counts(np, ng, nc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub subset: String,
    pub sentences: usize,
    pub metrics: MetricReport,
}

/// One report per subset, in the order Normal, SEO, EPO, T=1 .. T>=5.
pub fn evaluate_subsets(
    predictions: &[Vec<Triple>],
    corpus: &[AnnotatedSentence],
    mode: MatchMode,
) -> Result<Vec<SubsetReport>> {
    if predictions.len() != corpus.len() {
        return Err(Error::Alignment {
            predicted: predictions.len(),
            gold: corpus.len(),
        });
    }
    let labels: Vec<_> = corpus.iter().map(classify_overlap).collect();
    let buckets = bucket_by_triple_count(corpus);
    let mut subsets: Vec<(String, Vec<usize>)> = vec![
        ("Normal".into(), (0..corpus.len()).filter(|&i| labels[i].is_normal).collect()),
        ("SEO".into(), (0..corpus.len()).filter(|&i| labels[i].is_seo).collect()),
        ("EPO".into(), (0..corpus.len()).filter(|&i| labels[i].is_epo).collect()),
    ];
    for b in TripleBucket::ALL {
        subsets.push((b.label().into(), buckets.get(&b).cloned().unwrap_or_default()));
    }
    subsets
        .into_iter()
        .map(|(subset, idx)| {
            let p: Vec<Vec<Triple>> = idx.iter().map(|&i| predictions[i].clone()).collect();
            let g: Vec<Vec<Triple>> = idx.iter().map(|&i| corpus[i].triples().to_vec()).collect();
            Ok(SubsetReport {
                subset,
                sentences: idx.len(),
                metrics: micro_prf(&p, &g, mode)?,
            })
        })
        .collect()
}

/// Aligned text table of P/R/F1 (as percentages) per row.
pub fn render_table(rows: &[SubsetReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>9} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "subset", "sentences", "P", "R", "F1", "pred", "gold", "correct"
    );
    for r in rows {
        let m = &r.metrics;
        if m.is_empty() && m.predicted == 0 {
            let _ = writeln!(
                out,
                "{:<8} {:>9} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
                r.subset, r.sentences, "-", "-", "-", 0, 0, 0
            );
        } else {
            let _ = writeln!(
                out,
                "{:<8} {:>9} {:>7.2} {:>7.2} {:>7.2} {:>7} {:>7} {:>7}",
                r.subset,
                r.sentences,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1,
                m.predicted,
                m.gold,
                m.correct
            );
        }
    }
    out
}
