//! Subject tagging, subject-conditioned object tagging, entity-pair relation
//! scoring, and start/end span decoding.

use rand::Rng;

use crate::data::Span;
use crate::encoder::TokenReprSequence;
use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

/// Per-token start and end probabilities from one binary tagger.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanProbs<T> {
    pub start: Vec<T>,
    pub end: Vec<T>,
}

impl<T: Scalar> SpanProbs<T> {
    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }
}

/// Mean feature vector over an entity span.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityVector<T> {
    pub v: Vec<T>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationProbs<T> {
    pub probs: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerParams<T> {
    pub w_start_s: Matrix<T>,
    pub b_start_s: Matrix<T>,
    pub w_end_s: Matrix<T>,
    pub b_end_s: Matrix<T>,
    pub w_start_o: Matrix<T>,
    pub b_start_o: Matrix<T>,
    pub w_end_o: Matrix<T>,
    pub b_end_o: Matrix<T>,
    /// `|R| × d_h`
    pub w_r: Matrix<T>,
    /// `1 × |R|`
    pub b_r: Matrix<T>,
}

impl<T: Scalar> TaggerParams<T> {
    pub fn init<R: Rng>(d_h: usize, relations: usize, scale: f64, rng: &mut R) -> Self {
        TaggerParams {
            w_start_s: Matrix::uniform(1, d_h, scale, rng),
            b_start_s: Matrix::uniform(1, 1, scale, rng),
            w_end_s: Matrix::uniform(1, d_h, scale, rng),
            b_end_s: Matrix::uniform(1, 1, scale, rng),
            w_start_o: Matrix::uniform(1, d_h, scale, rng),
            b_start_o: Matrix::uniform(1, 1, scale, rng),
            w_end_o: Matrix::uniform(1, d_h, scale, rng),
            b_end_o: Matrix::uniform(1, 1, scale, rng),
            w_r: Matrix::uniform(relations, d_h, scale, rng),
            b_r: Matrix::uniform(1, relations, scale, rng),
        }
    }

    pub fn relations(&self) -> usize {
        self.w_r.rows()
    }

    pub fn d_h(&self) -> usize {
        self.w_r.cols()
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        vec![
            ("tagger.w_start_s".into(), &self.w_start_s),
            ("tagger.b_start_s".into(), &self.b_start_s),
            ("tagger.w_end_s".into(), &self.w_end_s),
            ("tagger.b_end_s".into(), &self.b_end_s),
            ("tagger.w_start_o".into(), &self.w_start_o),
            ("tagger.b_start_o".into(), &self.b_start_o),
            ("tagger.w_end_o".into(), &self.w_end_o),
            ("tagger.b_end_o".into(), &self.b_end_o),
            ("tagger.w_r".into(), &self.w_r),
            ("tagger.b_r".into(), &self.b_r),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        vec![
            &mut self.w_start_s,
            &mut self.b_start_s,
            &mut self.w_end_s,
            &mut self.b_end_s,
            &mut self.w_start_o,
            &mut self.b_start_o,
            &mut self.w_end_o,
            &mut self.b_end_o,
            &mut self.w_r,
            &mut self.b_r,
        ]
    }

    pub fn register<'a>(&'a self, tape: &mut Tape<'a, T>) -> TaggerVars {
        TaggerVars {
            w_start_s: tape.param(&self.w_start_s),
            b_start_s: tape.param(&self.b_start_s),
            w_end_s: tape.param(&self.w_end_s),
            b_end_s: tape.param(&self.b_end_s),
            w_start_o: tape.param(&self.w_start_o),
            b_start_o: tape.param(&self.b_start_o),
            w_end_o: tape.param(&self.w_end_o),
            b_end_o: tape.param(&self.b_end_o),
            w_r: tape.param(&self.w_r),
            b_r: tape.param(&self.b_r),
        }
    }
}

fn binary_tag<T: Scalar>(
    rows: impl Iterator<Item = Vec<T>>,
    w_start: &Matrix<T>,
    b_start: &Matrix<T>,
    w_end: &Matrix<T>,
    b_end: &Matrix<T>,
) -> SpanProbs<T> {
    let (bs, be) = (b_start.get(0, 0), b_end.get(0, 0));
    let (start, end) = rows
        .map(|h| {
            (
                (dot(w_start.row(0), &h) + bs).sigmoid(),
                (dot(w_end.row(0), &h) + be).sigmoid(),
            )
        })
        .unzip();
    SpanProbs { start, end }
}

/// Start/end probabilities of each token beginning or ending a subject.
pub fn tag_subjects<T: Scalar>(sub: &TokenReprSequence<T>, params: &TaggerParams<T>) -> SpanProbs<T> {
    binary_tag(
        (0..sub.len()).map(|i| sub.vector(i).to_vec()),
        &params.w_start_s,
        &params.b_start_s,
        &params.w_end_s,
        &params.b_end_s,
    )
}

/// Mean of the feature vectors inside `span`.
pub fn entity_vector<T: Scalar>(features: &TokenReprSequence<T>, span: Span) -> EntityVector<T> {
    let idx: Vec<usize> = span.positions().collect();
    EntityVector {
        v: features.matrix().mean_rows(&idx),
        span,
    }
}

/// Subject representation `v_s`, averaged over subject features.
pub fn subject_vector<T: Scalar>(sub: &TokenReprSequence<T>, span: Span) -> EntityVector<T> {
    entity_vector(sub, span)
}

/// Object start/end probabilities conditioned on one subject through the
/// hadamard product `h_obj^i ∘ v_s`.
pub fn tag_objects<T: Scalar>(
    obj: &TokenReprSequence<T>,
    v_s: &EntityVector<T>,
    params: &TaggerParams<T>,
) -> Result<SpanProbs<T>> {
    if v_s.v.len() != obj.dim() {
        return Err(Error::Shape(format!(
            "subject vector has {} components, features have {}",
            v_s.v.len(),
            obj.dim()
        )));
    }
    Ok(binary_tag(
        (0..obj.len()).map(|i| {
            obj.vector(i)
                .iter()
                .zip(&v_s.v)
                .map(|(&a, &b)| a * b)
                .collect()
        }),
        &params.w_start_o,
        &params.b_start_o,
        &params.w_end_o,
        &params.b_end_o,
    ))
}

/// Sorted union of the token positions covered by the two spans.
pub fn loc_positions(subject: Span, object: Span) -> Vec<usize> {
    let mut loc: Vec<usize> = subject.positions().chain(object.positions()).collect();
    loc.sort_unstable();
    loc.dedup();
    loc
}

/// Per-relation probability for one entity pair: the sigmoid of the relation
/// scores averaged over every position of the pair's combined range.
pub fn score_relations<T: Scalar>(
    rel: &TokenReprSequence<T>,
    v_s: &EntityVector<T>,
    v_o: &EntityVector<T>,
    params: &TaggerParams<T>,
) -> Result<RelationProbs<T>> {
    let d = rel.dim();
    if v_s.v.len() != d || v_o.v.len() != d {
        return Err(Error::Shape("entity vectors must match the feature size".into()));
    }
    let loc = loc_positions(v_s.span, v_o.span);
    let r = params.relations();
    let mut probs = vec![T::zero(); r];
    for &i in &loc {
        let x: Vec<T> = rel
            .vector(i)
            .iter()
            .zip(&v_s.v)
            .zip(&v_o.v)
            .map(|((&h, &s), &o)| h * s * o)
            .collect();
        for (k, p) in probs.iter_mut().enumerate() {
            *p += (dot(params.w_r.row(k), &x) + params.b_r.get(0, k)).sigmoid();
        }
    }
    let n = T::lit(loc.len() as f64);
    probs.iter_mut().for_each(|p| *p /= n);
    Ok(RelationProbs { probs })
}

/// Pairs each start above `threshold` with the nearest end above
/// `threshold` at or after it and before the next start.
pub fn decode_spans<T: Scalar>(probs: &SpanProbs<T>, threshold: T) -> Vec<Span> {
    let starts: Vec<usize> = (0..probs.len()).filter(|&i| probs.start[i] > threshold).collect();
    let mut spans = Vec::with_capacity(starts.len());
    for (k, &s) in starts.iter().enumerate() {
        let limit = starts.get(k + 1).copied().unwrap_or(probs.len());
        if let Some(e) = (s..limit).find(|&e| probs.end[e] > threshold) {
            spans.push(Span::new(s, e));
        }
    }
    spans
}

// ---------------------------------------------------------------------------
// Tape versions

#[derive(Clone, Copy, Debug)]
pub struct TaggerVars {
    pub w_start_s: Var,
    pub b_start_s: Var,
    pub w_end_s: Var,
    pub b_end_s: Var,
    pub w_start_o: Var,
    pub b_start_o: Var,
    pub w_end_o: Var,
    pub b_end_o: Var,
    pub w_r: Var,
    pub b_r: Var,
}

/// `(start, end)` probability columns, each `l × 1`.
pub fn subject_probs_graph<T: Scalar>(tape: &mut Tape<'_, T>, tv: &TaggerVars, sub: Var) -> (Var, Var) {
    let zs = tape.affine(sub, tv.w_start_s, Some(tv.b_start_s));
    let ze = tape.affine(sub, tv.w_end_s, Some(tv.b_end_s));
    (tape.sigmoid(zs), tape.sigmoid(ze))
}

pub fn entity_vector_graph<T: Scalar>(tape: &mut Tape<'_, T>, features: Var, span: Span) -> Var {
    let idx: Vec<usize> = span.positions().collect();
    tape.mean_rows(features, &idx)
}

pub fn object_probs_graph<T: Scalar>(
    tape: &mut Tape<'_, T>,
    tv: &TaggerVars,
    obj: Var,
    v_s: Var,
) -> (Var, Var) {
    let cond = tape.mul_row(obj, v_s);
    let zs = tape.affine(cond, tv.w_start_o, Some(tv.b_start_o));
    let ze = tape.affine(cond, tv.w_end_o, Some(tv.b_end_o));
    (tape.sigmoid(zs), tape.sigmoid(ze))
}

/// Relation probabilities for one pair, `1 × |R|`.
pub fn relation_probs_graph<T: Scalar>(
    tape: &mut Tape<'_, T>,
    tv: &TaggerVars,
    rel: Var,
    v_s: Var,
    v_o: Var,
    subject: Span,
    object: Span,
) -> Var {
    let loc = loc_positions(subject, object);
    let rows = tape.select_rows(rel, &loc);
    let a = tape.mul_row(rows, v_s);
    let b = tape.mul_row(a, v_o);
    let z = tape.affine(b, tv.w_r, Some(tv.b_r));
    let p = tape.sigmoid(z);
    let all: Vec<usize> = (0..loc.len()).collect();
    tape.mean_rows(p, &all)
}
