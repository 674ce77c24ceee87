//! Annotated sentences, corpus I/O, overlap-pattern classification and the
//! seeded synthetic corpus generator.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of relation names. The index of a name is its relation id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationSchema {
    relations: Vec<String>,
    index: HashMap<String, usize>,
}

impl RelationSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let relations: Vec<String> = names.into_iter().map(Into::into).collect();
        if relations.is_empty() {
            return Err(Error::Schema("at least one relation is required".into()));
        }
        let mut index = HashMap::with_capacity(relations.len());
        for (i, name) in relations.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Schema(format!("relation {i} has an empty name")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate relation `{name}`")));
            }
        }
        Ok(RelationSchema { relations, index })
    }

    /// `|R|`
    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.relations[id]
    }

    pub fn names(&self) -> &[String] {
        &self.relations
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum SchemaFile {
            Object { relations: Vec<String> },
            List(Vec<String>),
        }
        let names = match serde_json::from_str::<SchemaFile>(&text)? {
            SchemaFile::Object { relations } | SchemaFile::List(relations) => relations,
        };
        Self::new(names)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(&serde_json::json!({ "relations": self.relations }))?;
        fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }
}

impl Serialize for RelationSchema {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.relations.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RelationSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        RelationSchema::new(names).map_err(serde::de::Error::custom)
    }
}

/// Inclusive token range `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "span start {start} after end {end}");
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Head token used by partial matching: the last token of the span.
    pub fn head(&self) -> usize {
        self.end
    }

    pub fn positions(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn fits(&self, len: usize) -> bool {
        self.start <= self.end && self.end < len
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: Span,
    pub relation: usize,
    pub object: Span,
}

impl Triple {
    pub fn new(subject: Span, relation: usize, object: Span) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedSentence {
    tokens: Vec<String>,
    triples: Vec<Triple>,
}

impl AnnotatedSentence {
    /// Validates spans and drops repeated triples, keeping first occurrences.
    pub fn new(tokens: Vec<String>, triples: Vec<Triple>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("sentence has no tokens".into()));
        }
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(triples.len());
        for t in triples {
            if !t.subject.fits(tokens.len()) || !t.object.fits(tokens.len()) {
                return Err(Error::Data(format!(
                    "triple {}-{}-{} outside a {}-token sentence",
                    t.subject,
                    t.relation,
                    t.object,
                    tokens.len()
                )));
            }
            if seen.insert(t) {
                kept.push(t);
            }
        }
        Ok(AnnotatedSentence {
            tokens,
            triples: kept,
        })
    }

    pub fn from_text(text: &str, triples: Vec<Triple>) -> Result<Self> {
        Self::new(tokenize(text), triples)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn surface(&self, span: Span) -> String {
        self.tokens[span.start..=span.end].join(" ")
    }

    /// Distinct gold subject spans in ascending order.
    pub fn subjects(&self) -> Vec<Span> {
        let set: std::collections::BTreeSet<Span> = self.triples.iter().map(|t| t.subject).collect();
        set.into_iter().collect()
    }

    /// Distinct gold objects of `subject`, ascending.
    pub fn objects_of(&self, subject: Span) -> Vec<Span> {
        let set: std::collections::BTreeSet<Span> = self
            .triples
            .iter()
            .filter(|t| t.subject == subject)
            .map(|t| t.object)
            .collect();
        set.into_iter().collect()
    }

    /// Distinct gold (subject, object) pairs, ascending.
    pub fn pairs(&self) -> Vec<(Span, Span)> {
        let set: std::collections::BTreeSet<(Span, Span)> =
            self.triples.iter().map(|t| (t.subject, t.object)).collect();
        set.into_iter().collect()
    }

    /// Relation ids annotated on `(subject, object)`.
    pub fn relations_of(&self, subject: Span, object: Span) -> Vec<usize> {
        let mut rels: Vec<usize> = self
            .triples
            .iter()
            .filter(|t| t.subject == subject && t.object == object)
            .map(|t| t.relation)
            .collect();
        rels.sort_unstable();
        rels
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

// ---------------------------------------------------------------------------
// Overlap patterns and triple-count buckets

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OverlapLabel {
    pub is_normal: bool,
    pub is_epo: bool,
    pub is_seo: bool,
}

impl OverlapLabel {
    pub fn from_flags(is_epo: bool, is_seo: bool) -> Self {
        OverlapLabel {
            is_normal: !is_epo && !is_seo,
            is_epo,
            is_seo,
        }
    }
}

/// Pairwise over distinct triples: identical entity pairs (either order) mark
/// EPO, exactly one shared entity span marks SEO.
pub fn classify_overlap(sentence: &AnnotatedSentence) -> OverlapLabel {
    let triples = sentence.triples();
    let mut epo = false;
    let mut seo = false;
    for (i, a) in triples.iter().enumerate() {
        for b in &triples[i + 1..] {
            let same_pair = (a.subject == b.subject && a.object == b.object)
                || (a.subject == b.object && a.object == b.subject);
            if same_pair {
                epo = true;
                continue;
            }
            let a_ents = [a.subject, a.object];
            let shared = a_ents
                .iter()
                .filter(|e| **e == b.subject || **e == b.object)
                .count();
            if shared >= 1 {
                seo = true;
            }
        }
    }
    OverlapLabel::from_flags(epo, seo)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TripleBucket {
    One,
    Two,
    Three,
    Four,
    FiveOrMore,
}

impl TripleBucket {
    pub const ALL: [TripleBucket; 5] = [
        TripleBucket::One,
        TripleBucket::Two,
        TripleBucket::Three,
        TripleBucket::Four,
        TripleBucket::FiveOrMore,
    ];

    pub fn of_count(n: usize) -> Option<Self> {
        match n {
            0 => None,
            1 => Some(TripleBucket::One),
            2 => Some(TripleBucket::Two),
            3 => Some(TripleBucket::Three),
            4 => Some(TripleBucket::Four),
            _ => Some(TripleBucket::FiveOrMore),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TripleBucket::One => "T=1",
            TripleBucket::Two => "T=2",
            TripleBucket::Three => "T=3",
            TripleBucket::Four => "T=4",
            TripleBucket::FiveOrMore => "T>=5",
        }
    }
}

/// Sentence indices per triple-count bucket. Sentences without triples are
/// not placed in any bucket.
pub fn bucket_by_triple_count(corpus: &[AnnotatedSentence]) -> BTreeMap<TripleBucket, Vec<usize>> {
    let mut out: BTreeMap<TripleBucket, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.iter().enumerate() {
        if let Some(b) = TripleBucket::of_count(s.triples().len()) {
            out.entry(b).or_default().push(i);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Corpus files

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub text: String,
    #[serde(default)]
    pub triple_list: Vec<(String, String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedRecord {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedCorpus {
    pub sentences: Vec<AnnotatedSentence>,
    pub skipped: Vec<SkippedRecord>,
}

pub fn load_corpus(path: impl AsRef<Path>, schema: &RelationSchema) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corpus = parse_corpus(&text, schema)?;
    for s in &corpus.skipped {
        log::warn!("{}: skipped record {}: {}", path.display(), s.index, s.reason);
    }
    Ok(corpus)
}

/// Parses a JSON array of records or one record per line (auto-detected).
pub fn parse_corpus(text: &str, schema: &RelationSchema) -> Result<LoadedCorpus> {
    let records: Vec<(usize, serde_json::Result<CorpusRecord>)> =
        if text.trim_start().starts_with('[') {
            let values: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| Error::Format {
                index: 0,
                message: e.to_string(),
            })?;
            values
                .into_iter()
                .enumerate()
                .map(|(i, v)| (i, serde_json::from_value(v)))
                .collect()
        } else {
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| (i, serde_json::from_str(l)))
                .collect()
        };

    let mut out = LoadedCorpus::default();
    for (index, rec) in records {
        let rec = rec.map_err(|e| Error::Format {
            index,
            message: e.to_string(),
        })?;
        match align_record(&rec, schema)? {
            Ok(sentence) => out.sentences.push(sentence),
            Err(reason) => out.skipped.push(SkippedRecord { index, reason }),
        }
    }
    Ok(out)
}

/// Outer error: schema problems (fatal). Inner error: unalignable record.
fn align_record(
    rec: &CorpusRecord,
    schema: &RelationSchema,
) -> Result<std::result::Result<AnnotatedSentence, String>> {
    let tokens = tokenize(&rec.text);
    if tokens.is_empty() {
        return Ok(Err("empty text".into()));
    }
    let mut triples = Vec::with_capacity(rec.triple_list.len());
    for (subj, rel, obj) in &rec.triple_list {
        let relation = schema.id(rel)?;
        let Some(subject) = align_entity(&tokens, subj) else {
            return Ok(Err(format!("subject `{subj}` not found in text")));
        };
        let Some(object) = align_entity(&tokens, obj) else {
            return Ok(Err(format!("object `{obj}` not found in text")));
        };
        triples.push(Triple::new(subject, relation, object));
    }
    Ok(AnnotatedSentence::new(tokens, triples).map_err(|e| e.to_string()))
}

/// First occurrence of the entity's tokens as a contiguous run.
pub fn align_entity(tokens: &[String], entity: &str) -> Option<Span> {
    let needle = tokenize(entity);
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - needle.len())
        .find(|&i| tokens[i..i + needle.len()] == needle[..])
        .map(|i| Span::new(i, i + needle.len() - 1))
}

pub fn to_record(sentence: &AnnotatedSentence, schema: &RelationSchema) -> CorpusRecord {
    CorpusRecord {
        text: sentence.text(),
        triple_list: sentence
            .triples()
            .iter()
            .map(|t| {
                (
                    sentence.surface(t.subject),
                    schema.name(t.relation).to_string(),
                    sentence.surface(t.object),
                )
            })
            .collect(),
    }
}

/// Writes one JSON record per line.
pub fn write_corpus(
    path: impl AsRef<Path>,
    sentences: &[AnnotatedSentence],
    schema: &RelationSchema,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for s in sentences {
        serde_json::to_writer(&mut buf, &to_record(s, schema))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Synthetic corpora

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapMix {
    pub normal: f64,
    pub epo: f64,
    pub seo: f64,
}

impl Default for OverlapMix {
    fn default() -> Self {
        OverlapMix {
            normal: 0.5,
            epo: 0.2,
            seo: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub sentences: usize,
    /// Upper bound on distinct surface tokens across the corpus.
    pub vocab_size: usize,
    pub relations: usize,
    pub mix: OverlapMix,
    pub max_entity_len: usize,
    pub max_triples: usize,
    /// Filler tokens inserted before each entity, drawn from `0..=max_filler`.
    pub max_filler: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            sentences: 100,
            vocab_size: 60,
            relations: 4,
            mix: OverlapMix::default(),
            max_entity_len: 2,
            max_triples: 3,
            max_filler: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub sentences: Vec<AnnotatedSentence>,
    pub schema: RelationSchema,
    /// Overlap label each sentence was built to have.
    pub intended: Vec<OverlapLabel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pattern {
    Normal,
    Epo,
    Seo,
}

struct Vocab {
    triggers: Vec<String>,
    fillers: Vec<String>,
    entities: Vec<String>,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<Vocab> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sentences == 0 || self.vocab_size == 0 || self.relations == 0 {
            return bad("sentences, vocab_size and relations must be positive".into());
        }
        if self.max_entity_len == 0 || self.max_triples == 0 {
            return bad("max_entity_len and max_triples must be positive".into());
        }
        let m = self.mix;
        if [m.normal, m.epo, m.seo].iter().any(|f| !(0.0..=1.0).contains(f))
            || (m.normal + m.epo + m.seo - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "overlap mix ({}, {}, {}) must be non-negative and sum to 1",
                m.normal, m.epo, m.seo
            ));
        }
        if m.epo > 0.0 && self.relations < 2 {
            return bad("EPO sentences need at least 2 relations".into());
        }
        if (m.epo > 0.0 || m.seo > 0.0) && self.max_triples < 2 {
            return bad("overlapping sentences need max_triples >= 2".into());
        }
        let n_fillers = if self.max_filler > 0 {
            ((self.vocab_size.saturating_sub(self.relations)) / 6).max(1)
        } else {
            0
        };
        let n_entities = self
            .vocab_size
            .saturating_sub(self.relations + n_fillers);
        let max_entities = 2 * self.max_triples;
        if n_entities < max_entities * self.max_entity_len {
            return bad(format!(
                "vocab_size {} leaves {n_entities} entity words; {} needed for {} entities",
                self.vocab_size,
                max_entities * self.max_entity_len,
                max_entities
            ));
        }
        Ok(Vocab {
            triggers: (0..self.relations).map(|i| format!("r{i}")).collect(),
            fillers: (0..n_fillers).map(|i| format!("w{i}")).collect(),
            entities: (0..n_entities).map(|i| format!("e{i}")).collect(),
        })
    }
}

/// Deterministic for a given `(config, seed)`.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticCorpus> {
    let vocab = cfg.validate()?;
    let schema = RelationSchema::new((0..cfg.relations).map(|i| format!("rel_{i}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let counts = apportion(
        cfg.sentences,
        &[cfg.mix.normal, cfg.mix.epo, cfg.mix.seo],
    );
    let mut patterns = Vec::with_capacity(cfg.sentences);
    for (p, &n) in [Pattern::Normal, Pattern::Epo, Pattern::Seo].iter().zip(&counts) {
        patterns.extend(std::iter::repeat_n(*p, n));
    }
    patterns.shuffle(&mut rng);

    let mut sentences = Vec::with_capacity(cfg.sentences);
    let mut intended = Vec::with_capacity(cfg.sentences);
    for p in patterns {
        let (sentence, label) = generate_sentence(cfg, &vocab, p, &mut rng)?;
        sentences.push(sentence);
        intended.push(label);
    }
    Ok(SyntheticCorpus {
        sentences,
        schema,
        intended,
    })
}

/// Largest-remainder apportionment of `total` over `fractions`.
fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            rest -= 1;
        }
    }
    counts
}

/// Triples expressed over abstract entity ids.
type EntityTriple = (usize, usize, usize);

fn generate_sentence(
    cfg: &SyntheticConfig,
    vocab: &Vocab,
    pattern: Pattern,
    rng: &mut ChaCha8Rng,
) -> Result<(AnnotatedSentence, OverlapLabel)> {
    let rel = |rng: &mut ChaCha8Rng| rng.gen_range(0..cfg.relations);
    let mut n_entities = 0usize;
    let mut fresh = || {
        n_entities += 1;
        n_entities - 1
    };
    let mut triples: Vec<EntityTriple> = Vec::new();
    match pattern {
        Pattern::Normal => {
            let k = rng.gen_range(1..=cfg.max_triples);
            for _ in 0..k {
                let (s, o) = (fresh(), fresh());
                triples.push((s, rel(rng), o));
            }
        }
        Pattern::Epo => {
            let k = rng.gen_range(2..=cfg.max_triples.min(cfg.relations));
            let (s, o) = (fresh(), fresh());
            let mut rels: Vec<usize> = (0..cfg.relations).collect();
            rels.shuffle(rng);
            let reversed = k >= 2 && rng.gen_bool(0.25);
            for (i, &r) in rels.iter().take(k).enumerate() {
                if reversed && i == k - 1 {
                    triples.push((o, r, s));
                } else {
                    triples.push((s, r, o));
                }
            }
        }
        Pattern::Seo => {
            let k = rng.gen_range(2..=cfg.max_triples);
            let (s, o) = (fresh(), fresh());
            triples.push((s, rel(rng), o));
            for _ in 1..k {
                let used: Vec<usize> = triples.iter().flat_map(|t| [t.0, t.2]).collect();
                let anchor = used[rng.gen_range(0..used.len())];
                let new = fresh();
                if rng.gen_bool(0.5) {
                    triples.push((anchor, rel(rng), new));
                } else {
                    triples.push((new, rel(rng), anchor));
                }
            }
        }
    }

    // Entity surface forms: unique entity words within the sentence.
    let mut pool: Vec<&String> = vocab.entities.iter().collect();
    pool.shuffle(rng);
    let mut pool = pool.into_iter();
    let mut words: Vec<Vec<String>> = Vec::with_capacity(n_entities);
    for _ in 0..n_entities {
        let len = rng.gen_range(1..=cfg.max_entity_len);
        words.push((0..len).map(|_| pool.next().expect("validated vocab").clone()).collect());
    }

    // Entities appear in order of first mention; a subject is followed by
    // the trigger word of each of its relations.
    let mut order: Vec<usize> = Vec::new();
    for &(s, _, o) in &triples {
        for e in [s, o] {
            if !order.contains(&e) {
                order.push(e);
            }
        }
    }
    let mut tokens = Vec::new();
    let mut spans = vec![Span::new(0, 0); n_entities];
    for &e in &order {
        push_fillers(cfg, vocab, rng, &mut tokens);
        let start = tokens.len();
        tokens.extend(words[e].iter().cloned());
        spans[e] = Span::new(start, tokens.len() - 1);
        for &(s, r, _) in &triples {
            if s == e {
                tokens.push(vocab.triggers[r].clone());
            }
        }
    }
    push_fillers(cfg, vocab, rng, &mut tokens);

    let triples: Vec<Triple> = triples
        .iter()
        .map(|&(s, r, o)| Triple::new(spans[s], r, spans[o]))
        .collect();
    let label = match pattern {
        Pattern::Normal => OverlapLabel::from_flags(false, false),
        Pattern::Epo => OverlapLabel::from_flags(true, false),
        Pattern::Seo => OverlapLabel::from_flags(false, true),
    };
    Ok((AnnotatedSentence::new(tokens, triples)?, label))
}

fn push_fillers(cfg: &SyntheticConfig, vocab: &Vocab, rng: &mut ChaCha8Rng, out: &mut Vec<String>) {
    if vocab.fillers.is_empty() {
        return;
    }
    for _ in 0..rng.gen_range(0..=cfg.max_filler) {
        out.push(vocab.fillers[rng.gen_range(0..vocab.fillers.len())].clone());
    }
}
