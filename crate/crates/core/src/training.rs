//! Teacher-forced training of the cascade with injected noise conditions.
//!
//! Each sentence yields three groups of binary samples: subject start/end
//! tags, object start/end tags conditioned on each gold (or noise) subject,
//! and multi-hot relation tags for each gold (or noise) entity pair. The
//! sentence objective is the sum of the three stage losses; a batch
//! averages sentence objectives.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedSentence, RelationSchema, Span};
use crate::encoder::{self, EncoderConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{micro_prf, MatchMode};
use crate::graph::{Tape, Var};
use crate::linalg::Matrix;
use crate::loss::{resample_mask, stage_loss, GateStats, LossConfig, LossVariant, StageLoss};
use crate::model::{Checkpoint, Model, ModelParams, Thresholds};
use crate::optim::{AdamW, AdamWConfig};
use crate::scalar::Scalar;
use crate::taggers;

/// Derives an independent seed for a named random stream.
pub fn sub_seed(seed: u64, stream: &str) -> u64 {
    // FNV-1a over the stream name, mixed with splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for `stream` at position `index` (for example an epoch).
pub fn stream_rng(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, stream));
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Probability that a sentence receives injected noise conditions.
    pub injection_prob: f64,
    pub spans_per_injection: usize,
    pub max_span_len: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            injection_prob: 0.2,
            spans_per_injection: 1,
            max_span_len: 3,
        }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        NoiseConfig {
            injection_prob: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub loss: LossConfig,
    pub noise: NoiseConfig,
    pub optimizer: AdamWConfig,
    /// Decoding thresholds used for dev-set evaluation.
    pub thresholds: Thresholds,
    pub dev_match: MatchMode,
    /// Stop after this many epochs without dev-F1 improvement.
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 1,
            learning_rate: 1e-3,
            seed: 42,
            init_scale: 0.1,
            loss: LossConfig::default(),
            noise: NoiseConfig::default(),
            optimizer: AdamWConfig::default(),
            thresholds: Thresholds::default(),
            dev_match: MatchMode::Exact,
            early_stopping_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise.injection_prob) {
            return Err(Error::Config("noise injection probability must lie in [0, 1]".into()));
        }
        if self.noise.max_span_len == 0 {
            return Err(Error::Config("noise max_span_len must be positive".into()));
        }
        self.loss.validate()?;
        self.thresholds.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Subject,
    Object,
    Relation,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Subject, Stage::Object, Stage::Relation];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Subject => "subject",
            Stage::Object => "object",
            Stage::Relation => "relation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gold,
    Noise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectCondition {
    pub subject: Span,
    pub provenance: Provenance,
    pub start: Vec<bool>,
    pub end: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairCondition {
    pub subject: Span,
    pub object: Span,
    pub provenance: Provenance,
    /// One tag per relation.
    pub targets: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSampleSet {
    pub subject_start: Vec<bool>,
    pub subject_end: Vec<bool>,
    pub objects: Vec<ObjectCondition>,
    pub pairs: Vec<PairCondition>,
}

impl TrainingSampleSet {
    /// Flattened targets of one stage, in the order the losses see them.
    pub fn targets(&self, stage: Stage) -> Vec<bool> {
        match stage {
            Stage::Subject => [self.subject_start.as_slice(), &self.subject_end].concat(),
            Stage::Object => self
                .objects
                .iter()
                .flat_map(|c| c.start.iter().chain(&c.end).copied())
                .collect(),
            Stage::Relation => self.pairs.iter().flat_map(|p| p.targets.iter().copied()).collect(),
        }
    }

    /// `(total, positive)` sample counts for one stage.
    pub fn count(&self, stage: Stage) -> (usize, usize) {
        let t = self.targets(stage);
        (t.len(), t.iter().filter(|&&x| x).count())
    }

    pub fn total(&self) -> usize {
        Stage::ALL.iter().map(|&s| self.count(s).0).sum()
    }

    pub fn positives(&self) -> usize {
        Stage::ALL.iter().map(|&s| self.count(s).1).sum()
    }
}

fn span_tags(len: usize, spans: &[Span]) -> (Vec<bool>, Vec<bool>) {
    let mut start = vec![false; len];
    let mut end = vec![false; len];
    for s in spans {
        start[s.start] = true;
        end[s.end] = true;
    }
    (start, end)
}

/// Spans of length `1..=max_len` that overlap no gold entity.
fn noise_candidates(sentence: &AnnotatedSentence, max_len: usize) -> Vec<Span> {
    let gold: Vec<Span> = sentence
        .triples()
        .iter()
        .flat_map(|t| [t.subject, t.object])
        .collect();
    let l = sentence.len();
    let mut out = Vec::new();
    for start in 0..l {
        for end in start..l.min(start + max_len) {
            let s = Span::new(start, end);
            if gold.iter().all(|g| !g.overlaps(&s)) {
                out.push(s);
            }
        }
    }
    out
}

/// Teacher-forced samples for one sentence, with optional noise conditions.
pub fn build_training_samples<R: Rng>(
    sentence: &AnnotatedSentence,
    relations: usize,
    noise: &NoiseConfig,
    rng: &mut R,
) -> TrainingSampleSet {
    let l = sentence.len();
    let subjects = sentence.subjects();
    let (subject_start, subject_end) = span_tags(l, &subjects);

    let mut objects: Vec<ObjectCondition> = subjects
        .iter()
        .map(|&s| {
            let (start, end) = span_tags(l, &sentence.objects_of(s));
            ObjectCondition {
                subject: s,
                provenance: Provenance::Gold,
                start,
                end,
            }
        })
        .collect();

    let mut pairs: Vec<PairCondition> = sentence
        .pairs()
        .into_iter()
        .map(|(s, o)| {
            let mut targets = vec![false; relations];
            for r in sentence.relations_of(s, o) {
                targets[r] = true;
            }
            PairCondition {
                subject: s,
                object: o,
                provenance: Provenance::Gold,
                targets,
            }
        })
        .collect();

    if noise.injection_prob > 0.0 && rng.gen_bool(noise.injection_prob) {
        let candidates = noise_candidates(sentence, noise.max_span_len);
        for _ in 0..noise.spans_per_injection {
            if candidates.is_empty() {
                break;
            }
            let subject = candidates[rng.gen_range(0..candidates.len())];
            if !objects.iter().any(|c| c.subject == subject) {
                objects.push(ObjectCondition {
                    subject,
                    provenance: Provenance::Noise,
                    start: vec![false; l],
                    end: vec![false; l],
                });
            }
            if candidates.len() > 1 {
                let mut object = subject;
                while object == subject {
                    object = candidates[rng.gen_range(0..candidates.len())];
                }
                if !pairs.iter().any(|p| p.subject == subject && p.object == object) {
                    pairs.push(PairCondition {
                        subject,
                        object,
                        provenance: Provenance::Noise,
                        targets: vec![false; relations],
                    });
                }
            }
        }
    }

    TrainingSampleSet {
        subject_start,
        subject_end,
        objects,
        pairs,
    }
}

/// Per-stage keep masks for the re-sampling variant (`None` elsewhere).
pub type StageMasks = [Option<Vec<bool>>; 3];

pub fn stage_masks<R: Rng>(samples: &TrainingSampleSet, cfg: &LossConfig, rng: &mut R) -> StageMasks {
    if cfg.variant != LossVariant::ResampledCe {
        return [None, None, None];
    }
    Stage::ALL.map(|s| Some(resample_mask(&samples.targets(s), cfg.resample_ratio, rng)))
}

/// Stage losses through the plain (non-differentiable) forward path.
pub fn sentence_losses<T: Scalar>(
    params: &ModelParams<T>,
    ids: &[usize],
    samples: &TrainingSampleSet,
    cfg: &LossConfig,
    masks: &StageMasks,
) -> [StageLoss<T>; 3] {
    let h = encoder::encode(ids, &params.encoder);
    let f = encoder::project(&h, &params.encoder);
    let tp = &params.tagger;

    let sp = taggers::tag_subjects(&f.sub, tp);
    let subject_probs = [sp.start, sp.end].concat();

    let mut object_probs = Vec::new();
    for c in &samples.objects {
        let v_s = taggers::subject_vector(&f.sub, c.subject);
        let p = taggers::tag_objects(&f.obj, &v_s, tp).expect("consistent d_h");
        object_probs.extend(p.start);
        object_probs.extend(p.end);
    }

    let mut relation_probs = Vec::new();
    for pc in &samples.pairs {
        let v_s = taggers::subject_vector(&f.sub, pc.subject);
        let v_o = taggers::entity_vector(&f.obj, pc.object);
        let p = taggers::score_relations(&f.rel, &v_s, &v_o, tp).expect("consistent d_h");
        relation_probs.extend(p.probs);
    }

    let probs = [subject_probs, object_probs, relation_probs];
    [0, 1, 2].map(|k| {
        stage_loss(
            &probs[k],
            &samples.targets(Stage::ALL[k]),
            cfg,
            masks[k].as_deref(),
        )
    })
}

/// Stage losses recorded on a tape; `roots[k]` is the scalar loss of stage `k`.
pub struct SentenceGraph<T> {
    pub roots: [Var; 3],
    pub losses: [StageLoss<T>; 3],
    pub total: Var,
}

/// Attaches the loss of one stage to the tape, given the probability nodes
/// whose entries, concatenated, line up with `targets`.
fn stage_heads<T: Scalar>(
    tape: &mut Tape<'_, T>,
    nodes: &[Var],
    targets: &[bool],
    cfg: &LossConfig,
    mask: Option<&[bool]>,
) -> (Var, StageLoss<T>) {
    let probs: Vec<T> = nodes
        .iter()
        .flat_map(|&v| tape.value(v).as_slice().to_vec())
        .collect();
    let loss = stage_loss(&probs, targets, cfg, mask);
    let mut heads = Vec::with_capacity(nodes.len());
    let mut offset = 0;
    for (k, &v) in nodes.iter().enumerate() {
        let (rows, cols) = tape.value(v).shape();
        let g = loss.grads[offset..offset + rows * cols].to_vec();
        offset += rows * cols;
        let value = if k == 0 { loss.value } else { T::zero() };
        heads.push(tape.head(v, value, Matrix::from_vec(rows, cols, g).expect("shape")));
    }
    (tape.sum_scalars(&heads), loss)
}

pub fn sentence_graph<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    params: &'a ModelParams<T>,
    ids: &[usize],
    samples: &TrainingSampleSet,
    cfg: &LossConfig,
    masks: &StageMasks,
) -> SentenceGraph<T> {
    let (ev, tv) = params.register(tape);
    let h = encoder::encode_graph(tape, &ev, ids);
    let f = encoder::project_graph(tape, &ev, h);

    let (ss, se) = taggers::subject_probs_graph(tape, &tv, f.sub);
    let subject_nodes = vec![ss, se];

    let mut object_nodes = Vec::with_capacity(2 * samples.objects.len());
    for c in &samples.objects {
        let v_s = taggers::entity_vector_graph(tape, f.sub, c.subject);
        let (os, oe) = taggers::object_probs_graph(tape, &tv, f.obj, v_s);
        object_nodes.push(os);
        object_nodes.push(oe);
    }

    let mut relation_nodes = Vec::with_capacity(samples.pairs.len());
    for pc in &samples.pairs {
        let v_s = taggers::entity_vector_graph(tape, f.sub, pc.subject);
        let v_o = taggers::entity_vector_graph(tape, f.obj, pc.object);
        relation_nodes.push(taggers::relation_probs_graph(
            tape, &tv, f.rel, v_s, v_o, pc.subject, pc.object,
        ));
    }

    let nodes = [subject_nodes, object_nodes, relation_nodes];
    let mut roots = Vec::with_capacity(3);
    let mut losses = Vec::with_capacity(3);
    for (k, stage) in Stage::ALL.iter().enumerate() {
        let (root, loss) = stage_heads(tape, &nodes[k], &samples.targets(*stage), cfg, masks[k].as_deref());
        roots.push(root);
        losses.push(loss);
    }
    let total = tape.sum_scalars(&roots);
    let losses: [StageLoss<T>; 3] = losses.try_into().unwrap_or_else(|_| unreachable!("three stages"));
    SentenceGraph {
        roots: [roots[0], roots[1], roots[2]],
        losses,
        total,
    }
}

// ---------------------------------------------------------------------------
// Logs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub stage: Stage,
    pub class: u8,
    pub total: usize,
    pub gated: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageValues {
    pub subject: f64,
    pub object: f64,
    pub relation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_variant: LossVariant,
    /// Mean per-sentence objective over the epoch.
    pub total_loss: f64,
    pub stage_loss: StageValues,
    pub gating: Vec<GateRecord>,
    pub dev_f1: Option<f64>,
    pub optimizer_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageGating {
    pub stage: Stage,
    /// Gated fraction of negative samples.
    pub negative: Option<f64>,
    /// Gated fraction of positive samples.
    pub positive: Option<f64>,
}

/// Fraction of samples with `ξ = 0` per stage and class; `None` when the
/// epoch did not use the gated loss.
pub fn gating_report(record: &EpochRecord) -> Option<Vec<StageGating>> {
    if record.loss_variant != LossVariant::ConfThreshold {
        return None;
    }
    Some(
        Stage::ALL
            .iter()
            .map(|&stage| {
                let frac = |class: u8| {
                    record
                        .gating
                        .iter()
                        .find(|g| g.stage == stage && g.class == class)
                        .filter(|g| g.total > 0)
                        .map(|g| g.gated as f64 / g.total as f64)
                };
                StageGating {
                    stage,
                    negative: frac(0),
                    positive: frac(1),
                }
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Trainer

pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub cfg: TrainConfig,
    optimizer: AdamW<T>,
    epochs_done: usize,
    best_dev_f1: Option<f64>,
    stale_epochs: usize,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh model; the vocabulary comes from `corpus`.
    pub fn new(
        corpus: &[AnnotatedSentence],
        schema: &RelationSchema,
        encoder_cfg: EncoderConfig,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::Data("training corpus is empty".into()));
        }
        let vocab = Vocabulary::build(corpus.iter().flat_map(|s| s.tokens().iter().map(String::as_str)));
        let mut rng = stream_rng(cfg.seed, "init", 0);
        let model = Model::new(encoder_cfg, vocab, schema.clone(), cfg.init_scale, &mut rng)?;
        let optimizer = AdamW::new(&model.params, cfg.learning_rate, cfg.optimizer);
        Ok(Trainer {
            model,
            cfg,
            optimizer,
            epochs_done: 0,
            best_dev_f1: None,
            stale_epochs: 0,
        })
    }

    /// Resumes from a checkpoint, restoring optimizer state and epoch counter.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = ck.model::<T>()?;
        let mut optimizer = AdamW::new(&model.params, cfg.learning_rate, cfg.optimizer);
        if let Some(rec) = &ck.optimizer {
            optimizer.restore(rec)?;
        }
        Ok(Trainer {
            model,
            cfg,
            optimizer,
            epochs_done: ck.epoch,
            best_dev_f1: ck.best_dev_f1,
            stale_epochs: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn best_dev_f1(&self) -> Option<f64> {
        self.best_dev_f1
    }

    pub fn finished(&self) -> bool {
        self.epochs_done >= self.cfg.epochs
            || self
                .cfg
                .early_stopping_patience
                .is_some_and(|p| self.stale_epochs >= p)
    }

    pub fn checkpoint(&self, config_echo: serde_json::Value) -> Checkpoint {
        Checkpoint::capture(
            &self.model,
            self.epochs_done,
            config_echo,
            Some(self.optimizer.record()),
            self.best_dev_f1,
        )
    }

    /// One pass over `corpus`. Returns the epoch log record; `dev_f1` is
    /// filled when `dev` is given.
    pub fn run_epoch(
        &mut self,
        corpus: &[AnnotatedSentence],
        dev: Option<&[AnnotatedSentence]>,
    ) -> Result<EpochRecord> {
        let epoch = self.epochs_done + 1;
        let seed = self.cfg.seed;
        let relations = self.model.schema.len();
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut stream_rng(seed, "order", epoch as u64));
        let mut noise_rng = stream_rng(seed, "noise", epoch as u64);
        let mut resample_rng = stream_rng(seed, "resample", epoch as u64);

        let mut stage_sums = [0.0f64; 3];
        let mut stats = [GateStats::default(); 3];
        let mut grads = self.model.params.zeros_like();

        for batch in order.chunks(self.cfg.batch_size) {
            for m in grads.tensors_mut() {
                m.fill(T::zero());
            }
            let scale = T::one() / T::lit(batch.len() as f64);
            for &i in batch {
                let sentence = &corpus[i];
                let ids = self.model.token_ids(sentence);
                let samples = build_training_samples(sentence, relations, &self.cfg.noise, &mut noise_rng);
                let masks = stage_masks(&samples, &self.cfg.loss, &mut resample_rng);
                let mut tape = Tape::new();
                let graph = sentence_graph(&mut tape, &self.model.params, &ids, &samples, &self.cfg.loss, &masks);
                for (k, loss) in graph.losses.iter().enumerate() {
                    if !loss.value.is_finite() || loss.grads.iter().any(|g| !g.is_finite()) {
                        return Err(Error::Diverged {
                            epoch,
                            stage: Stage::ALL[k].name().into(),
                        });
                    }
                    stage_sums[k] += loss.value.as_f64();
                    stats[k].merge(&loss.stats);
                }
                let pgrads = tape.backward(graph.total, scale);
                for (slot, g) in grads.tensors_mut().into_iter().zip(pgrads) {
                    if let Some(g) = g {
                        slot.add_assign(&g);
                    }
                }
            }
            self.optimizer.step(&mut self.model.params, &grads);
            if !self.model.params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    stage: "parameters".into(),
                });
            }
        }
        self.epochs_done = epoch;

        let n = corpus.len().max(1) as f64;
        let stage_loss = StageValues {
            subject: stage_sums[0] / n,
            object: stage_sums[1] / n,
            relation: stage_sums[2] / n,
        };
        let gating = Stage::ALL
            .iter()
            .zip(&stats)
            .flat_map(|(&stage, s)| {
                (0..2u8).map(move |class| GateRecord {
                    stage,
                    class,
                    total: s.total[class as usize],
                    gated: s.gated[class as usize],
                })
            })
            .collect();

        let dev_f1 = match dev {
            Some(dev) if !dev.is_empty() => {
                let f1 = self.evaluate(dev, self.cfg.dev_match)?;
                if self.best_dev_f1.is_none_or(|b| f1 > b) {
                    self.best_dev_f1 = Some(f1);
                    self.stale_epochs = 0;
                } else {
                    self.stale_epochs += 1;
                }
                Some(f1)
            }
            _ => None,
        };

        Ok(EpochRecord {
            epoch,
            loss_variant: self.cfg.loss.variant,
            total_loss: stage_loss.subject + stage_loss.object + stage_loss.relation,
            stage_loss,
            gating,
            dev_f1,
            optimizer_steps: self.optimizer.steps(),
        })
    }

    /// Micro F1 of the current model on `corpus`.
    pub fn evaluate(&self, corpus: &[AnnotatedSentence], mode: MatchMode) -> Result<f64> {
        let preds: Vec<_> = self
            .model
            .extract_corpus(corpus, &self.cfg.thresholds)
            .into_iter()
            .map(|v| v.into_iter().map(|s| s.triple).collect())
            .collect();
        let gold: Vec<_> = corpus.iter().map(|s| s.triples().to_vec()).collect();
        Ok(micro_prf(&preds, &gold, mode)?.f1)
    }
}

pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub log: Vec<EpochRecord>,
}

/// Trains for `cfg.epochs` epochs (or until early stopping).
pub fn train<T: Scalar>(
    corpus: &[AnnotatedSentence],
    schema: &RelationSchema,
    encoder_cfg: EncoderConfig,
    cfg: TrainConfig,
    dev: Option<&[AnnotatedSentence]>,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::<T>::new(corpus, schema, encoder_cfg, cfg)?;
    let mut log = Vec::new();
    while !trainer.finished() {
        log.push(trainer.run_epoch(corpus, dev)?);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        log,
    })
}
