//! Sample-count accounting for the class-imbalance comparison between this
//! cascade and the two-step reference that tags objects per relation.

use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedSentence, RelationSchema, Span};
use crate::training::{build_training_samples, NoiseConfig, Stage};

/// Counts describing one sentence: length `l`, distinct subjects `s`,
/// distinct (subject, object) pairs `n`, triples `t`, relations `r`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub l: usize,
    pub s: usize,
    pub n: usize,
    pub t: usize,
    pub r: usize,
}

impl SampleCounts {
    pub fn of(sentence: &AnnotatedSentence, relations: usize) -> Self {
        SampleCounts {
            l: sentence.len(),
            s: sentence.subjects().len(),
            n: sentence.pairs().len(),
            t: sentence.triples().len(),
            r: relations,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.s <= self.n && self.n <= self.t && self.t <= self.n * self.r
    }
}

/// `2l + 2sl + nr`
pub fn count_total(c: &SampleCounts) -> usize {
    2 * c.l + 2 * c.s * c.l + c.n * c.r
}

/// `2s + 2n + t`
pub fn count_positive(c: &SampleCounts) -> usize {
    2 * c.s + 2 * c.n + c.t
}

/// `2l + 2slr`
pub fn count_casrel_total(l: usize, s: usize, r: usize) -> usize {
    2 * l + 2 * s * l * r
}

/// `2s + 2t`
pub fn count_casrel_positive(s: usize, t: usize) -> usize {
    2 * s + 2 * t
}

/// Negatives per positive; `None` when there are no positives.
pub fn imbalance_ratio(total: usize, positive: usize) -> Option<f64> {
    (positive > 0).then(|| (total - positive) as f64 / positive as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCounts {
    pub counts: SampleCounts,
    pub measured_total: usize,
    pub measured_positive: usize,
    pub formula_total: usize,
    pub formula_positive: usize,
    pub casrel_total: usize,
    pub casrel_positive: usize,
    /// Some entities of one stage share a boundary token, so one tag slot
    /// stands for several positives.
    pub degenerate: bool,
}

impl EmpiricalCounts {
    pub fn measured_negative(&self) -> usize {
        self.measured_total - self.measured_positive
    }

    pub fn ratio(&self) -> Option<f64> {
        imbalance_ratio(self.measured_total, self.measured_positive)
    }

    pub fn formula_ratio(&self) -> Option<f64> {
        imbalance_ratio(self.formula_total, self.formula_positive)
    }

    pub fn casrel_ratio(&self) -> Option<f64> {
        imbalance_ratio(self.casrel_total, self.casrel_positive)
    }

    pub fn matches_formula(&self) -> bool {
        self.measured_total == self.formula_total && self.measured_positive == self.formula_positive
    }
}

fn shares_boundary(spans: &[Span]) -> bool {
    spans.iter().enumerate().any(|(i, a)| {
        spans[i + 1..]
            .iter()
            .any(|b| a.start == b.start || a.end == b.end)
    })
}

/// Builds the noise-free training samples for `sentence`, counts them, and
/// pairs the counts with the formula predictions.
pub fn empirical_counts(sentence: &AnnotatedSentence, schema: &RelationSchema) -> EmpiricalCounts {
    let r = schema.len();
    let c = SampleCounts::of(sentence, r);
    // The generator is never consulted with injection disabled.
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let set = build_training_samples(sentence, r, &NoiseConfig::disabled(), &mut rng);
    let (mut total, mut positive) = (0, 0);
    for stage in Stage::ALL {
        let (t, p) = set.count(stage);
        total += t;
        positive += p;
    }
    let subjects = sentence.subjects();
    let degenerate =
        shares_boundary(&subjects) || subjects.iter().any(|&s| shares_boundary(&sentence.objects_of(s)));
    EmpiricalCounts {
        counts: c,
        measured_total: total,
        measured_positive: positive,
        formula_total: count_total(&c),
        formula_positive: count_positive(&c),
        casrel_total: count_casrel_total(c.l, c.s, c.r),
        casrel_positive: count_casrel_positive(c.s, c.t),
        degenerate,
    }
}

/// Aggregate sample counts under one accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub total: usize,
    pub positive: usize,
    pub negative: usize,
    /// Negatives per positive; `null` when undefined.
    pub ratio: Option<f64>,
}

impl CountSummary {
    fn new(total: usize, positive: usize) -> Self {
        CountSummary {
            total,
            positive,
            negative: total - positive,
            ratio: imbalance_ratio(total, positive),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusAnalysis {
    pub sentences: usize,
    pub relations: usize,
    pub measured: CountSummary,
    pub formula: CountSummary,
    pub casrel: CountSummary,
    /// Indices of sentences whose entities share boundary tokens.
    pub degenerate: Vec<usize>,
    /// Non-degenerate sentences whose measured counts differ from the formula.
    pub mismatches: Vec<usize>,
}

pub fn analyze_corpus(corpus: &[AnnotatedSentence], schema: &RelationSchema) -> CorpusAnalysis {
    let mut sums = [0usize; 6];
    let mut degenerate = Vec::new();
    let mut mismatches = Vec::new();
    for (i, s) in corpus.iter().enumerate() {
        let e = empirical_counts(s, schema);
        for (slot, v) in sums.iter_mut().zip([
            e.measured_total,
            e.measured_positive,
            e.formula_total,
            e.formula_positive,
            e.casrel_total,
            e.casrel_positive,
        ]) {
            *slot += v;
        }
        if e.degenerate {
            degenerate.push(i);
        } else if !e.matches_formula() {
            mismatches.push(i);
        }
    }
    CorpusAnalysis {
        sentences: corpus.len(),
        relations: schema.len(),
        measured: CountSummary::new(sums[0], sums[1]),
        formula: CountSummary::new(sums[2], sums[3]),
        casrel: CountSummary::new(sums[4], sums[5]),
        degenerate,
        mismatches,
    }
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |r| format!("{r:.3}"))
}

pub fn render_analysis(a: &CorpusAnalysis) -> String {
    let mut out = format!("sentences: {}  relations: {}\n", a.sentences, a.relations);
    out.push_str(&format!(
        "{:<22} {:>10} {:>10} {:>10} {:>10}\n",
        "accounting", "total", "positive", "negative", "neg/pos"
    ));
    for (name, c) in [
        ("cascade (measured)", &a.measured),
        ("cascade (formula)", &a.formula),
        ("two-step reference", &a.casrel),
    ] {
        out.push_str(&format!(
            "{:<22} {:>10} {:>10} {:>10} {:>10}\n",
            name,
            c.total,
            c.positive,
            c.negative,
            fmt_ratio(c.ratio)
        ));
    }
    let list = |v: &[usize]| {
        if v.is_empty() {
            "none".to_string()
        } else {
            v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
        }
    };
    out.push_str(&format!("degenerate sentences: {}\n", list(&a.degenerate)));
    out.push_str(&format!("formula mismatches: {}\n", list(&a.mismatches)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_corpus, tokenize, SyntheticConfig, Triple};
    use proptest::prelude::*;

    fn c(l: usize, s: usize, n: usize, t: usize, r: usize) -> SampleCounts {
        SampleCounts { l, s, n, t, r }
    }

    #[test]
    fn formula_examples() {
        assert_eq!(count_total(&c(10, 2, 3, 3, 4)), 72);
        assert_eq!(count_total(&c(7, 0, 0, 0, 4)), 14);
        assert_eq!(count_total(&c(1, 1, 1, 1, 1)), 5);
        assert_eq!(count_positive(&c(10, 2, 3, 3, 4)), 13);
        assert_eq!(count_positive(&c(0, 0, 0, 0, 0)), 0);
        assert_eq!(count_positive(&c(3, 1, 1, 1, 1)), 5);
        assert_eq!(count_casrel_total(10, 2, 4), 180);
        assert_eq!(count_casrel_total(10, 2, 1), 60);
        assert_eq!(count_casrel_total(10, 0, 4), 20);
    }

    fn constructed() -> AnnotatedSentence {
        // l=10, subjects (0,0),(4,5); pairs ((0,0),(2,2)), ((0,0),(7,8)), ((4,5),(7,8))
        AnnotatedSentence::new(
            tokenize("a b c d e f g h i j"),
            vec![
                Triple::new(Span::new(0, 0), 0, Span::new(2, 2)),
                Triple::new(Span::new(0, 0), 1, Span::new(7, 8)),
                Triple::new(Span::new(4, 5), 2, Span::new(7, 8)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn measured_counts_equal_formulas_on_constructed_sentence() {
        let schema = RelationSchema::new(["a", "b", "c", "d"]).unwrap();
        let e = empirical_counts(&constructed(), &schema);
        assert_eq!(e.counts, c(10, 2, 3, 3, 4));
        assert!(!e.degenerate);
        assert_eq!(e.measured_total, 72);
        assert_eq!(e.measured_positive, 13);
        assert_eq!(e.measured_negative(), 59);
    }

    #[test]
    fn triple_free_sentence() {
        let schema = RelationSchema::new(["a"]).unwrap();
        let s = AnnotatedSentence::new(tokenize("x y z"), vec![]).unwrap();
        let e = empirical_counts(&s, &schema);
        assert_eq!((e.measured_total, e.measured_positive), (6, 0));
        assert_eq!(e.ratio(), None);
    }

    #[test]
    fn shared_boundary_is_flagged() {
        let schema = RelationSchema::new(["a", "b", "c", "d"]).unwrap();
        let s = AnnotatedSentence::new(
            tokenize("a b c d e"),
            vec![
                Triple::new(Span::new(0, 1), 0, Span::new(3, 3)),
                Triple::new(Span::new(1, 1), 1, Span::new(4, 4)),
            ],
        )
        .unwrap();
        let e = empirical_counts(&s, &schema);
        assert!(e.degenerate);
        assert!(e.measured_positive < e.formula_positive);
        let a = analyze_corpus(&[constructed(), s], &schema);
        assert_eq!(a.degenerate, vec![1]);
        assert!(a.mismatches.is_empty());
        assert!(render_analysis(&a).contains("degenerate sentences: 1"));
    }

    #[test]
    fn empty_corpus_ratio_is_undefined() {
        let schema = RelationSchema::new(["a"]).unwrap();
        let s = AnnotatedSentence::new(tokenize("x y"), vec![]).unwrap();
        let a = analyze_corpus(&[s], &schema);
        assert_eq!(a.measured.ratio, None);
        assert!(render_analysis(&a).contains("undefined"));
    }

    proptest! {
        #[test]
        fn total_bounded_by_reference(l in 1usize..30, s in 0usize..5, extra in 0usize..20, r in 1usize..6) {
            let n = (s + extra).min(s * l);
            let cnt = c(l, s, n, n, r);
            if r == 1 {
                // A single relation: the pair stage is pure overhead.
                prop_assert_eq!(count_total(&cnt), count_casrel_total(l, s, r) + n);
            } else {
                prop_assert!(count_total(&cnt) <= count_casrel_total(l, s, r));
            }
            if r > 1 && n < s * l {
                prop_assert!(count_total(&cnt) < count_casrel_total(l, s, r));
            }
        }

        #[test]
        fn generated_sentences_have_smaller_ratio(seed in 0u64..200) {
            let cfg = SyntheticConfig { sentences: 10, ..SyntheticConfig::default() };
            let corpus = generate_synthetic_corpus(&cfg, seed).unwrap();
            for s in &corpus.sentences {
                let e = empirical_counts(s, &corpus.schema);
                prop_assert_eq!(e.measured_negative() + e.measured_positive, e.measured_total);
                let k = e.counts;
                if !e.degenerate {
                    prop_assert!(e.matches_formula());
                    if k.r > 1 && k.n < k.s * k.l {
                        prop_assert!(e.formula_ratio().unwrap() < e.casrel_ratio().unwrap());
                    }
                }
            }
        }
    }
}
