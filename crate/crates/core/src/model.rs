//! The full extraction model: vocabulary, relation schema, encoder and
//! tagger parameters, the inference cascade, and checkpoints.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedSentence, RelationSchema, Span, Triple};
use crate::encoder::{self, ContextFeatures, EncoderConfig, EncoderParams, EncoderVars, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::Tape;
use crate::linalg::{Matrix, MatrixRecord};
use crate::scalar::Scalar;
use crate::taggers::{self, TaggerParams, TaggerVars};

pub const CHECKPOINT_FORMAT: &str = "cascade-rte-checkpoint/1";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: EncoderParams<T>,
    pub tagger: TaggerParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init<R: Rng>(
        vocab_size: usize,
        relations: usize,
        cfg: &EncoderConfig,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        ModelParams {
            encoder: EncoderParams::init(vocab_size, cfg, scale, rng),
            tagger: TaggerParams::init(cfg.d_h, relations, scale, rng),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = self.encoder.tensors();
        out.extend(self.tagger.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.tagger.tensors_mut());
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for m in z.tensors_mut() {
            m.fill(T::zero());
        }
        z
    }

    pub fn register<'a>(&'a self, tape: &mut Tape<'a, T>) -> (EncoderVars, TaggerVars) {
        let e = self.encoder.register(tape);
        let t = self.tagger.register(tape);
        (e, t)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    /// Adds `k × other` into `self`, tensor by tensor.
    pub fn axpy(&mut self, k: T, other: &ModelParams<T>) {
        let src: Vec<&Matrix<T>> = other.tensors().into_iter().map(|(_, m)| m).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.axpy(k, s);
        }
    }
}

/// Per-stage decision thresholds used when decoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub subject: f64,
    pub object: f64,
    pub relation: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            subject: 0.5,
            object: 0.5,
            relation: 0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("subject", self.subject),
            ("object", self.object),
            ("relation", self.relation),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} threshold {v} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredTriple {
    pub triple: Triple,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub schema: RelationSchema,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new<R: Rng>(
        config: EncoderConfig,
        vocab: Vocabulary,
        schema: RelationSchema,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(vocab.len(), schema.len(), &config, init_scale, rng);
        Ok(Model {
            config,
            vocab,
            schema,
            params,
        })
    }

    pub fn token_ids(&self, sentence: &AnnotatedSentence) -> Vec<usize> {
        self.vocab.ids(sentence.tokens())
    }

    pub fn features(&self, sentence: &AnnotatedSentence) -> ContextFeatures<T> {
        let h = encoder::encode(&self.token_ids(sentence), &self.params.encoder);
        encoder::project(&h, &self.params.encoder)
    }

    /// Subjects, then objects per subject, then relations per pair. The
    /// result holds no duplicate triples and is sorted.
    pub fn extract(&self, sentence: &AnnotatedSentence, th: &Thresholds) -> Vec<ScoredTriple> {
        let f = self.features(sentence);
        let tp = &self.params.tagger;
        let subjects = taggers::decode_spans(&taggers::tag_subjects(&f.sub, tp), T::lit(th.subject));
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in subjects {
            let v_s = taggers::subject_vector(&f.sub, s);
            let obj_probs = taggers::tag_objects(&f.obj, &v_s, tp).expect("d_h consistent");
            for o in taggers::decode_spans(&obj_probs, T::lit(th.object)) {
                let v_o = taggers::entity_vector(&f.obj, o);
                let rel = taggers::score_relations(&f.rel, &v_s, &v_o, tp).expect("d_h consistent");
                for (r, &p) in rel.probs.iter().enumerate() {
                    if p > T::lit(th.relation) {
                        let triple = Triple::new(s, r, o);
                        if seen.insert(triple) {
                            out.push(ScoredTriple {
                                triple,
                                probability: p.as_f64(),
                            });
                        }
                    }
                }
            }
        }
        out.sort_by_key(|s| s.triple);
        out
    }

    pub fn extract_triples(&self, sentence: &AnnotatedSentence, th: &Thresholds) -> Vec<Triple> {
        self.extract(sentence, th).into_iter().map(|s| s.triple).collect()
    }

    /// Extraction over a corpus; fans out across sentences, output order
    /// follows the input.
    pub fn extract_corpus(&self, corpus: &[AnnotatedSentence], th: &Thresholds) -> Vec<Vec<ScoredTriple>> {
        use rayon::prelude::*;
        corpus.par_iter().map(|s| self.extract(s, th)).collect()
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    #[serde(flatten)]
    pub tensor: MatrixRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub step: u64,
    pub m: Vec<MatrixRecord>,
    pub v: Vec<MatrixRecord>,
}

/// Self-describing checkpoint. Tensors are stored as `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub scalar: String,
    pub epoch: usize,
    pub best_dev_f1: Option<f64>,
    /// Run configuration echo.
    pub config: serde_json::Value,
    pub encoder: EncoderConfig,
    pub vocab: Vocabulary,
    pub schema: RelationSchema,
    pub params: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerRecord>,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        model: &Model<T>,
        epoch: usize,
        config: serde_json::Value,
        optimizer: Option<OptimizerRecord>,
        best_dev_f1: Option<f64>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            scalar: T::NAME.to_string(),
            epoch,
            best_dev_f1,
            config,
            encoder: model.config,
            vocab: model.vocab.clone(),
            schema: model.schema.clone(),
            params: model
                .params
                .tensors()
                .into_iter()
                .map(|(name, m)| NamedTensor {
                    name,
                    tensor: m.into(),
                })
                .collect(),
            optimizer,
        }
    }

    pub fn model<T: Scalar>(&self) -> Result<Model<T>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format tag `{}`",
                self.format
            )));
        }
        self.encoder.validate()?;
        let mut params = ModelParams::<T>::init(
            self.vocab.len(),
            self.schema.len(),
            &self.encoder,
            0.0,
            &mut rand::rngs::mock::StepRng::new(0, 0),
        );
        let expected: Vec<(String, (usize, usize))> = params
            .tensors()
            .into_iter()
            .map(|(n, m)| (n, m.shape()))
            .collect();
        if expected.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for ((slot, (name, shape)), stored) in params.tensors_mut().into_iter().zip(expected).zip(&self.params) {
            if stored.name != name || (stored.tensor.rows, stored.tensor.cols) != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {}x{} does not match `{name}` {}x{}",
                    stored.name, stored.tensor.rows, stored.tensor.cols, shape.0, shape.1
                )));
            }
            *slot = stored.tensor.to_matrix()?;
        }
        Ok(Model {
            config: self.encoder,
            vocab: self.vocab.clone(),
            schema: self.schema.clone(),
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_vec(self)?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&body)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(ck)
    }
}

/// Surface form of an extracted triple, for output files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedTriple {
    pub subject: String,
    pub subject_span: Span,
    pub relation: String,
    pub object: String,
    pub object_span: Span,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub text: String,
    pub triples: Vec<PredictedTriple>,
}

impl PredictionRecord {
    pub fn new(sentence: &AnnotatedSentence, schema: &RelationSchema, triples: &[ScoredTriple]) -> Self {
        PredictionRecord {
            text: sentence.text(),
            triples: triples
                .iter()
                .map(|s| PredictedTriple {
                    subject: sentence.surface(s.triple.subject),
                    subject_span: s.triple.subject,
                    relation: schema.name(s.triple.relation).to_string(),
                    object: sentence.surface(s.triple.object),
                    object_span: s.triple.object,
                    probability: s.probability,
                })
                .collect(),
        }
    }
}
