//! Token encoder: embeddings followed by stacked bidirectional LSTM layers,
//! and the three position-wise affine projections that give the subject,
//! object and relation context features.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const UNK: &str = "<unk>";

/// Token to id mapping; id 0 is reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(mut tokens: Vec<String>) -> Self {
        if tokens.first().map(String::as_str) != Some(UNK) {
            tokens.insert(0, UNK.to_string());
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in first-seen order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen = vec![UNK.to_string()];
        let mut index: HashMap<String, usize> = HashMap::new();
        index.insert(UNK.to_string(), 0);
        for t in tokens {
            if !index.contains_key(t) {
                index.insert(t.to_string(), seen.len());
                seen.push(t.to_string());
            }
        }
        Vocabulary {
            tokens: seen,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_emb: usize,
    /// Hidden size; each LSTM direction has `d_h / 2` units.
    pub d_h: usize,
    pub layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_emb: 64,
            d_h: 32,
            layers: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.d_h == 0 || self.layers == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !self.d_h.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d_h = {} must be even (two LSTM directions)",
                self.d_h
            )));
        }
        Ok(())
    }
}

/// One vector per token (`l × d_h`).
#[derive(Clone, Debug, PartialEq)]
pub struct TokenReprSequence<T> {
    vectors: Matrix<T>,
}

impl<T: Scalar> TokenReprSequence<T> {
    pub fn new(vectors: Matrix<T>) -> Self {
        TokenReprSequence { vectors }
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, i: usize) -> &[T] {
        self.vectors.row(i)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.vectors
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.vectors
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextFeatures<T> {
    pub sub: TokenReprSequence<T>,
    pub obj: TokenReprSequence<T>,
    pub rel: TokenReprSequence<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    /// Input weights, gates stacked as input, forget, cell, output (`4H × in`).
    pub w_ih: Matrix<T>,
    pub w_hh: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Scalar> LstmParams<T> {
    fn init<R: Rng>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        LstmParams {
            w_ih: Matrix::uniform(4 * hidden, input, scale, rng),
            w_hh: Matrix::uniform(4 * hidden, hidden, scale, rng),
            bias: Matrix::uniform(1, 4 * hidden, scale, rng),
        }
    }

    fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    /// Runs the cell over `x` (`l × in`) in forward or reverse order. Output
    /// row `t` is the hidden state after reading position `t`.
    fn run(&self, x: &Matrix<T>, reverse: bool) -> Matrix<T> {
        let hsz = self.hidden();
        let pre = x.affine(&self.w_ih, Some(&self.bias));
        let mut out = Matrix::zeros(x.rows(), hsz);
        let mut h: Option<Matrix<T>> = None;
        let mut c: Option<Vec<T>> = None;
        let order: Vec<usize> = if reverse {
            (0..x.rows()).rev().collect()
        } else {
            (0..x.rows()).collect()
        };
        for t in order {
            let mut z = pre.row(t).to_vec();
            if let Some(h) = &h {
                let rec = h.affine(&self.w_hh, None);
                for (a, &b) in z.iter_mut().zip(rec.row(0)) {
                    *a += b;
                }
            }
            let mut c_new = vec![T::zero(); hsz];
            let mut h_new = vec![T::zero(); hsz];
            for k in 0..hsz {
                let i = z[k].sigmoid();
                let f = z[hsz + k].sigmoid();
                let g = z[2 * hsz + k].tanh();
                let o = z[3 * hsz + k].sigmoid();
                let ig = i * g;
                c_new[k] = match &c {
                    Some(c) => f * c[k] + ig,
                    None => ig,
                };
                h_new[k] = o * c_new[k].tanh();
            }
            out.row_mut(t).copy_from_slice(&h_new);
            h = Some(Matrix::row_vector(h_new));
            c = Some(c_new);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmLayer<T> {
    pub forward: LstmParams<T>,
    pub backward: LstmParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub embedding: Matrix<T>,
    pub layers: Vec<BiLstmLayer<T>>,
    pub w_sub: Matrix<T>,
    pub b_sub: Matrix<T>,
    pub w_obj: Matrix<T>,
    pub b_obj: Matrix<T>,
    pub w_rel: Matrix<T>,
    pub b_rel: Matrix<T>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn init<R: Rng>(vocab_size: usize, cfg: &EncoderConfig, scale: f64, rng: &mut R) -> Self {
        let half = cfg.d_h / 2;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let input = if l == 0 { cfg.d_emb } else { cfg.d_h };
            layers.push(BiLstmLayer {
                forward: LstmParams::init(input, half, scale, rng),
                backward: LstmParams::init(input, half, scale, rng),
            });
        }
        let d = cfg.d_h;
        EncoderParams {
            embedding: Matrix::uniform(vocab_size, cfg.d_emb, scale, rng),
            layers,
            w_sub: Matrix::uniform(d, d, scale, rng),
            b_sub: Matrix::uniform(1, d, scale, rng),
            w_obj: Matrix::uniform(d, d, scale, rng),
            b_obj: Matrix::uniform(1, d, scale, rng),
            w_rel: Matrix::uniform(d, d, scale, rng),
            b_rel: Matrix::uniform(1, d, scale, rng),
        }
    }

    pub fn d_h(&self) -> usize {
        self.w_sub.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    /// All tensors in canonical order, with stable names.
    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = vec![("encoder.embedding".to_string(), &self.embedding)];
        for (i, layer) in self.layers.iter().enumerate() {
            for (dir, p) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                out.push((format!("encoder.lstm{i}.{dir}.w_ih"), &p.w_ih));
                out.push((format!("encoder.lstm{i}.{dir}.w_hh"), &p.w_hh));
                out.push((format!("encoder.lstm{i}.{dir}.bias"), &p.bias));
            }
        }
        out.extend([
            ("encoder.w_sub".to_string(), &self.w_sub),
            ("encoder.b_sub".to_string(), &self.b_sub),
            ("encoder.w_obj".to_string(), &self.w_obj),
            ("encoder.b_obj".to_string(), &self.b_obj),
            ("encoder.w_rel".to_string(), &self.w_rel),
            ("encoder.b_rel".to_string(), &self.b_rel),
        ]);
        out
    }

    /// Same order as [`EncoderParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.layers {
            for p in [&mut layer.forward, &mut layer.backward] {
                out.push(&mut p.w_ih);
                out.push(&mut p.w_hh);
                out.push(&mut p.bias);
            }
        }
        out.extend([
            &mut self.w_sub,
            &mut self.b_sub,
            &mut self.w_obj,
            &mut self.b_obj,
            &mut self.w_rel,
            &mut self.b_rel,
        ]);
        out
    }

    pub fn register<'a>(&'a self, tape: &mut Tape<'a, T>) -> EncoderVars {
        let embedding = tape.param(&self.embedding);
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut dirs = Vec::with_capacity(2);
            for p in [&layer.forward, &layer.backward] {
                dirs.push(LstmVars {
                    w_ih: tape.param(&p.w_ih),
                    w_hh: tape.param(&p.w_hh),
                    bias: tape.param(&p.bias),
                    hidden: p.hidden(),
                });
            }
            let backward = dirs.pop().expect("two directions");
            let forward = dirs.pop().expect("two directions");
            layers.push((forward, backward));
        }
        EncoderVars {
            embedding,
            layers,
            w_sub: tape.param(&self.w_sub),
            b_sub: tape.param(&self.b_sub),
            w_obj: tape.param(&self.w_obj),
            b_obj: tape.param(&self.b_obj),
            w_rel: tape.param(&self.w_rel),
            b_rel: tape.param(&self.b_rel),
        }
    }
}

/// Per-token representations `h^i` for a sentence given as vocabulary ids.
pub fn encode<T: Scalar>(ids: &[usize], params: &EncoderParams<T>) -> TokenReprSequence<T> {
    let mut x = params.embedding.select_rows(ids);
    for layer in &params.layers {
        let f = layer.forward.run(&x, false);
        let b = layer.backward.run(&x, true);
        let mut out = Matrix::zeros(x.rows(), f.cols() + b.cols());
        for t in 0..x.rows() {
            let row = out.row_mut(t);
            row[..f.cols()].copy_from_slice(f.row(t));
            row[f.cols()..].copy_from_slice(b.row(t));
        }
        x = out;
    }
    TokenReprSequence::new(x)
}

/// Position-wise affine maps giving subject, object and relation features.
pub fn project<T: Scalar>(h: &TokenReprSequence<T>, params: &EncoderParams<T>) -> ContextFeatures<T> {
    let m = h.matrix();
    ContextFeatures {
        sub: TokenReprSequence::new(m.affine(&params.w_sub, Some(&params.b_sub))),
        obj: TokenReprSequence::new(m.affine(&params.w_obj, Some(&params.b_obj))),
        rel: TokenReprSequence::new(m.affine(&params.w_rel, Some(&params.b_rel))),
    }
}

// ---------------------------------------------------------------------------
// Tape versions

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    hidden: usize,
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub embedding: Var,
    layers: Vec<(LstmVars, LstmVars)>,
    pub w_sub: Var,
    pub b_sub: Var,
    pub w_obj: Var,
    pub b_obj: Var,
    pub w_rel: Var,
    pub b_rel: Var,
}

/// Context features as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars {
    pub sub: Var,
    pub obj: Var,
    pub rel: Var,
}

fn lstm_graph<T: Scalar>(tape: &mut Tape<'_, T>, p: LstmVars, x: Var, reverse: bool) -> Var {
    let hsz = p.hidden;
    let len = tape.value(x).rows();
    let pre = tape.affine(x, p.w_ih, Some(p.bias));
    let mut outs: Vec<Option<Var>> = vec![None; len];
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for t in order {
        let mut z = tape.row(pre, t);
        if let Some(h) = h {
            let rec = tape.affine(h, p.w_hh, None);
            z = tape.add(z, rec);
        }
        let zi = tape.col_slice(z, 0, hsz);
        let zf = tape.col_slice(z, hsz, hsz);
        let zg = tape.col_slice(z, 2 * hsz, hsz);
        let zo = tape.col_slice(z, 3 * hsz, hsz);
        let i = tape.sigmoid(zi);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let ig = tape.mul(i, g);
        let c_new = match c {
            Some(c) => {
                let f = tape.sigmoid(zf);
                let fc = tape.mul(f, c);
                tape.add(fc, ig)
            }
            None => ig,
        };
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc);
        outs[t] = Some(h_new);
        h = Some(h_new);
        c = Some(c_new);
    }
    let outs: Vec<Var> = outs.into_iter().map(|v| v.expect("every step ran")).collect();
    tape.stack_rows(&outs)
}

pub fn encode_graph<T: Scalar>(tape: &mut Tape<'_, T>, vars: &EncoderVars, ids: &[usize]) -> Var {
    let mut x = tape.embed(vars.embedding, ids);
    for &(fwd, bwd) in &vars.layers {
        let f = lstm_graph(tape, fwd, x, false);
        let b = lstm_graph(tape, bwd, x, true);
        x = tape.concat_cols(f, b);
    }
    x
}

pub fn project_graph<T: Scalar>(tape: &mut Tape<'_, T>, vars: &EncoderVars, h: Var) -> FeatureVars {
    FeatureVars {
        sub: tape.affine(h, vars.w_sub, Some(vars.b_sub)),
        obj: tape.affine(h, vars.w_obj, Some(vars.b_obj)),
        rel: tape.affine(h, vars.w_rel, Some(vars.b_rel)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(d_h: usize) -> EncoderParams<f64> {
        let cfg = EncoderConfig {
            d_emb: 6,
            d_h,
            layers: 2,
        };
        EncoderParams::init(10, &cfg, 0.1, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn encode_shape_and_determinism() {
        let p = params(32);
        let a = encode(&[1, 2, 3, 4], &p);
        assert_eq!(a.len(), 4);
        assert_eq!(a.dim(), 32);
        assert_eq!(a, encode(&[1, 2, 3, 4], &p));
        assert!(a.matrix().is_finite());
    }

    #[test]
    fn project_identity_and_constant() {
        let mut p = params(4);
        let h = encode(&[1, 2, 3, 4, 5, 6, 7], &p);
        p.w_sub = Matrix::identity(4);
        p.b_sub = Matrix::zeros(1, 4);
        p.w_obj = Matrix::zeros(4, 4);
        p.b_obj = Matrix::row_vector(vec![1.0, 2.0, 3.0, 4.0]);
        let f = project(&h, &p);
        assert_eq!(f.sub.matrix(), h.matrix());
        for i in 0..7 {
            assert_eq!(f.obj.vector(i), &[1.0, 2.0, 3.0, 4.0]);
        }
        assert_eq!(f.rel.len(), 7);
    }

    #[test]
    fn project_is_linear_without_bias() {
        let mut p = params(4);
        p.b_sub = Matrix::zeros(1, 4);
        let h = encode(&[1, 2, 3], &p);
        let scaled = TokenReprSequence::new(h.matrix().scale(3.0));
        let a = project(&h, &p).sub;
        let b = project(&scaled, &p).sub;
        for (x, y) in a.matrix().as_slice().iter().zip(b.matrix().as_slice()) {
            assert!((3.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let p = params(8);
        let ids = [3, 1, 4, 1, 5];
        let plain = project(&encode(&ids, &p), &p);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let h = encode_graph(&mut tape, &vars, &ids);
        let f = project_graph(&mut tape, &vars, h);
        assert_eq!(tape.param_count(), p.tensors().len());
        for (a, b) in [(f.sub, &plain.sub), (f.obj, &plain.obj), (f.rel, &plain.rel)] {
            for (x, y) in tape.value(a).as_slice().iter().zip(b.matrix().as_slice()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn registration_order_matches_tensor_order() {
        let p = params(8);
        let mut tape = Tape::new();
        let _ = p.register(&mut tape);
        let shapes: Vec<_> = p.tensors().iter().map(|(_, m)| m.shape()).collect();
        let mut q = p.clone();
        let mut_shapes: Vec<_> = q.tensors_mut().iter().map(|m| m.shape()).collect();
        assert_eq!(shapes, mut_shapes);
        assert_eq!(tape.param_count(), shapes.len());
    }

    #[test]
    fn odd_hidden_size_is_rejected() {
        let cfg = EncoderConfig {
            d_h: 7,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn vocabulary_maps_unknown_to_zero() {
        let v = Vocabulary::build(["a", "b", "a"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("b"), 2);
        assert_eq!(v.id("zzz"), 0);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
