use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Mat, Tape, Var};
use super::tokenizer::{eos_position, Tokenizer};
use crate::clustering::seeded_rng;
use crate::encoder::{DEFAULT_JITTER, DEFAULT_PATCH_SIZE};
use crate::error::{Error, Result};
use crate::records::FeatureGrid;

/// How patch tokens and the `[CLS]` token combine into the image descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Cls,
    Avg,
    Max,
    ClsMax,
    ClsAvg,
}

impl Pooling {
    pub const ALL: [Pooling; 5] = [Pooling::Cls, Pooling::Avg, Pooling::Max, Pooling::ClsMax, Pooling::ClsAvg];

    /// True for the modes that concatenate `[CLS]` with pooled patches.
    pub fn is_concat(self) -> bool {
        matches!(self, Pooling::ClsMax | Pooling::ClsAvg)
    }

    pub fn code(self) -> u32 {
        match self {
            Pooling::Cls => 0,
            Pooling::Avg => 1,
            Pooling::Max => 2,
            Pooling::ClsMax => 3,
            Pooling::ClsAvg => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Cls => "cls",
            Pooling::Avg => "avg",
            Pooling::Max => "max",
            Pooling::ClsMax => "cls_max",
            Pooling::ClsAvg => "cls_avg",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown pooling mode {s:?}")))
    }
}

/// Where the L2 normalization of descriptors is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Whole,
    /// Each half normalized on its own, then scaled by 1/√2 (concat modes only).
    PerHalf,
}

/// Parameters of the frozen encoder the model was trained against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderInfo {
    pub seed: u64,
    pub patch_size: usize,
    pub jitter: f32,
}

impl Default for EncoderInfo {
    fn default() -> Self {
        Self { seed: 0, patch_size: DEFAULT_PATCH_SIZE, jitter: DEFAULT_JITTER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub text_dim: usize,
    pub max_len: usize,
    pub text_depth: usize,
    pub vision_blocks: usize,
    pub heads: usize,
    pub hash_buckets: u32,
    pub pooling: Pooling,
    pub norm: NormMode,
    pub encoder: EncoderInfo,
    /// Side, in patches, of the grids seen during training.
    pub train_grid: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            text_dim: 64,
            max_len: 16,
            text_depth: 1,
            vision_blocks: 2,
            heads: 1,
            hash_buckets: 64,
            pooling: Pooling::ClsAvg,
            norm: NormMode::Whole,
            encoder: EncoderInfo::default(),
            train_grid: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.text_dim == 0 {
            return Err(Error::invalid("model dims must be positive"));
        }
        if self.max_len < 2 {
            return Err(Error::invalid("max_len must be at least 2"));
        }
        if self.vision_blocks > 2 {
            return Err(Error::invalid("at most two vision blocks"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) || !self.text_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid("heads must divide both model widths"));
        }
        Ok(())
    }

    /// Width of the image descriptor and of the text slice it is compared with.
    pub fn descriptor_dim(&self) -> usize {
        if self.pooling.is_concat() {
            2 * self.dim
        } else {
            self.dim
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockIdx {
    ln1_gain: usize,
    ln1_bias: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2_gain: usize,
    ln2_bias: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

struct Layout {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Layout {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols));
        self.inits.push(init);
        self.names.len() - 1
    }

    fn block(&mut self, prefix: &str, d: usize) -> BlockIdx {
        let s = 1.0 / (d as f64).sqrt();
        let out = 0.02;
        BlockIdx {
            ln1_gain: self.add(format!("{prefix}.ln1.gain"), 1, d, Init::Ones),
            ln1_bias: self.add(format!("{prefix}.ln1.bias"), 1, d, Init::Zeros),
            wq: self.add(format!("{prefix}.attn.wq"), d, d, Init::Normal(s)),
            wk: self.add(format!("{prefix}.attn.wk"), d, d, Init::Normal(s)),
            wv: self.add(format!("{prefix}.attn.wv"), d, d, Init::Normal(s)),
            wo: self.add(format!("{prefix}.attn.wo"), d, d, Init::Normal(out)),
            ln2_gain: self.add(format!("{prefix}.ln2.gain"), 1, d, Init::Ones),
            ln2_bias: self.add(format!("{prefix}.ln2.bias"), 1, d, Init::Zeros),
            w1: self.add(format!("{prefix}.ffn.w1"), d, 4 * d, Init::Normal(s)),
            b1: self.add(format!("{prefix}.ffn.b1.bias"), 1, 4 * d, Init::Zeros),
            w2: self.add(format!("{prefix}.ffn.w2"), 4 * d, d, Init::Normal(out)),
            b2: self.add(format!("{prefix}.ffn.b2.bias"), 1, d, Init::Zeros),
        }
    }
}

/// Initial value of the log logit scale: ln(1 / 0.07).
pub fn initial_log_temperature() -> f64 {
    (1.0f64 / 0.07).ln()
}

pub const LOG_TEMPERATURE_MIN: f64 = 0.0;

pub fn log_temperature_max() -> f64 {
    100f64.ln()
}

/// Text encoder, vision blocks and logit scale, trained against frozen
/// features.
#[derive(Debug, Clone)]
pub struct AlignmentModel {
    config: ModelConfig,
    tokenizer: Tokenizer,
    names: Vec<String>,
    params: Vec<Mat>,
    log_temp: usize,
    tok_emb: usize,
    pos_emb: usize,
    proj_w: usize,
    proj_b: usize,
    text_blocks: Vec<BlockIdx>,
    vision_blocks: Vec<BlockIdx>,
    /// Diagnostic switch: skip the attention sublayer in every block.
    pub attention_enabled: bool,
}

struct Skeleton {
    layout: Layout,
    log_temp: usize,
    tok_emb: usize,
    pos_emb: usize,
    proj_w: usize,
    proj_b: usize,
    text_blocks: Vec<BlockIdx>,
    vision_blocks: Vec<BlockIdx>,
}

fn skeleton(config: &ModelConfig, vocab: usize) -> Skeleton {
    let mut layout = Layout { names: vec![], shapes: vec![], inits: vec![] };
    let (d, dt) = (config.dim, config.text_dim);
    let emb = 1.0 / (dt as f64).sqrt();
    let log_temp = layout.add("log_temperature".into(), 1, 1, Init::Zeros);
    let tok_emb = layout.add("text.tok_emb".into(), vocab, dt, Init::Normal(emb));
    let pos_emb = layout.add("text.pos_emb".into(), config.max_len, dt, Init::Normal(emb));
    let text_blocks = (0..config.text_depth).map(|i| layout.block(&format!("text.block{i}"), dt)).collect();
    let proj_w = layout.add("text.proj.w".into(), dt, 2 * d, Init::Normal(emb));
    let proj_b = layout.add("text.proj.bias".into(), 1, 2 * d, Init::Zeros);
    let vision_blocks = (0..config.vision_blocks).map(|i| layout.block(&format!("vision.block{i}"), d)).collect();
    Skeleton { layout, log_temp, tok_emb, pos_emb, proj_w, proj_b, text_blocks, vision_blocks }
}

impl AlignmentModel {
    /// Fresh model with seeded random initialization.
    pub fn new(config: ModelConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        config.validate()?;
        check_tokenizer(&config, &tokenizer)?;
        let sk = skeleton(&config, tokenizer.vocab_size());
        let params = sk
            .layout
            .shapes
            .iter()
            .zip(&sk.layout.inits)
            .enumerate()
            .map(|(i, (&(r, c), init))| match *init {
                Init::Zeros => Mat::zeros(r, c),
                Init::Ones => Mat::from_vec(r, c, vec![1.0; r * c]),
                Init::Normal(std) => {
                    let mut rng = seeded_rng(seed, 100 + i as u64);
                    let dist = Normal::new(0.0, std).expect("positive std");
                    Mat::from_vec(r, c, (0..r * c).map(|_| dist.sample(&mut rng)).collect())
                }
            })
            .collect::<Vec<_>>();
        let mut model = Self::assemble(config, tokenizer, sk, params);
        model.params[model.log_temp].data[0] = initial_log_temperature();
        Ok(model)
    }

    /// Rebuilds a model from named tensors, e.g. read from a checkpoint.
    pub fn from_named(config: ModelConfig, tokenizer: Tokenizer, named: Vec<(String, Mat)>) -> Result<Self> {
        config.validate()?;
        check_tokenizer(&config, &tokenizer)?;
        let sk = skeleton(&config, tokenizer.vocab_size());
        if named.len() != sk.layout.names.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, found {}",
                sk.layout.names.len(),
                named.len()
            )));
        }
        let mut params = Vec::with_capacity(named.len());
        for ((name, &(r, c)), (got_name, m)) in sk.layout.names.iter().zip(&sk.layout.shapes).zip(named) {
            if *name != got_name {
                return Err(Error::invalid(format!("expected tensor {name}, found {got_name}")));
            }
            if (m.rows, m.cols) != (r, c) {
                return Err(Error::DimMismatch { expected: r * c, got: m.len() });
            }
            if m.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("tensor {name} holds non-finite values")));
            }
            params.push(m);
        }
        Ok(Self::assemble(config, tokenizer, sk, params))
    }

    fn assemble(config: ModelConfig, tokenizer: Tokenizer, sk: Skeleton, params: Vec<Mat>) -> Self {
        Self {
            config,
            tokenizer,
            names: sk.layout.names,
            params,
            log_temp: sk.log_temp,
            tok_emb: sk.tok_emb,
            pos_emb: sk.pos_emb,
            proj_w: sk.proj_w,
            proj_b: sk.proj_b,
            text_blocks: sk.text_blocks,
            vision_blocks: sk.vision_blocks,
            attention_enabled: true,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Mat::len).sum()
    }

    pub fn log_temperature(&self) -> f64 {
        self.params[self.log_temp].data[0]
    }

    pub fn log_temperature_index(&self) -> usize {
        self.log_temp
    }

    pub(crate) fn clamp_log_temperature(&mut self) {
        let v = &mut self.params[self.log_temp].data[0];
        *v = v.clamp(LOG_TEMPERATURE_MIN, log_temperature_max());
    }

    /// Whether weight decay applies to parameter `index`.
    pub fn decays(&self, index: usize) -> bool {
        let n = &self.names[index];
        !(index == self.log_temp || n.ends_with(".bias") || n.ends_with(".gain"))
    }

    pub fn tokenize(&self, caption: &str) -> Vec<u32> {
        self.tokenizer.tokenize(caption)
    }

    fn block(&self, tape: &mut Tape, b: &BlockIdx, x: Var, key_mask: Option<&[bool]>) -> Var {
        let p = |t: &mut Tape, i: usize| t.param(i);
        let mut x = x;
        if self.attention_enabled {
            let (g, bi) = (p(tape, b.ln1_gain), p(tape, b.ln1_bias));
            let h = tape.layer_norm(x, g, bi);
            let (wq, wk, wv, wo) = (p(tape, b.wq), p(tape, b.wk), p(tape, b.wv), p(tape, b.wo));
            let q = tape.matmul(h, wq);
            let k = tape.matmul(h, wk);
            let v = tape.matmul(h, wv);
            let width = tape.value(q).cols;
            let dh = width / self.config.heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut outs = Vec::with_capacity(self.config.heads);
            for head in 0..self.config.heads {
                let (qh, kh, vh) = if self.config.heads == 1 {
                    (q, k, v)
                } else {
                    (tape.slice_cols(q, head * dh, dh), tape.slice_cols(k, head * dh, dh), tape.slice_cols(v, head * dh, dh))
                };
                let s = tape.matmul_bt(qh, kh);
                let s = tape.scale(s, scale);
                let a = tape.softmax(s, key_mask);
                outs.push(tape.matmul(a, vh));
            }
            let o = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
            let o = tape.matmul(o, wo);
            x = tape.add(x, o);
        }
        let (g, bi) = (p(tape, b.ln2_gain), p(tape, b.ln2_bias));
        let h = tape.layer_norm(x, g, bi);
        let (w1, b1, w2, b2) = (p(tape, b.w1), p(tape, b.b1), p(tape, b.w2), p(tape, b.b2));
        let f = tape.matmul(h, w1);
        let f = tape.add_row(f, b1);
        let f = tape.gelu(f);
        let f = tape.matmul(f, w2);
        let f = tape.add_row(f, b2);
        tape.add(x, f)
    }

    /// Unnormalized 1×2D text output read at the EOS position.
    pub fn text_forward(&self, tape: &mut Tape, ids: &[u32]) -> Result<Var> {
        if ids.len() != self.config.max_len {
            return Err(Error::DimMismatch { expected: self.config.max_len, got: ids.len() });
        }
        let vocab = self.params[self.tok_emb].rows;
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let eos = eos_position(ids);
        // Everything after EOS is padding and is never attended to.
        let mask: Vec<bool> = (0..ids.len()).map(|i| i <= eos).collect();
        let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let te = tape.param(self.tok_emb);
        let pe = tape.param(self.pos_emb);
        let tok = tape.gather_rows(te, &idx);
        let mut x = tape.add(tok, pe);
        for b in &self.text_blocks {
            x = self.block(tape, b, x, Some(&mask));
        }
        let e = tape.slice_rows(x, eos, 1);
        let (w, bias) = (tape.param(self.proj_w), tape.param(self.proj_b));
        let y = tape.matmul(e, w);
        Ok(tape.add_row(y, bias))
    }

    /// Runs the vision blocks over `[cls; patches]`; returns `(c′, patches′)`.
    pub fn vision_forward(&self, tape: &mut Tape, grid: &FeatureGrid) -> Result<(Var, Var)> {
        let d = self.config.dim;
        if grid.dim() != d {
            return Err(Error::DimMismatch { expected: d, got: grid.dim() });
        }
        let n = grid.num_patches();
        let mut data = Vec::with_capacity((n + 1) * d);
        data.extend(grid.cls().as_slice().iter().map(|&v| v as f64));
        data.extend(grid.patches().as_slice().iter().map(|&v| v as f64));
        let mut x = tape.leaf(Mat::from_vec(n + 1, d, data));
        for b in &self.vision_blocks {
            x = self.block(tape, b, x, None);
        }
        Ok((tape.slice_rows(x, 0, 1), tape.slice_rows(x, 1, n)))
    }

    pub fn pool(&self, tape: &mut Tape, cls: Var, patches: Var, mode: Pooling) -> Var {
        match mode {
            Pooling::Cls => cls,
            Pooling::Avg => tape.mean_rows(patches),
            Pooling::Max => tape.max_rows(patches),
            Pooling::ClsAvg => {
                let m = tape.mean_rows(patches);
                tape.concat_cols(&[cls, m])
            }
            Pooling::ClsMax => {
                let m = tape.max_rows(patches);
                tape.concat_cols(&[cls, m])
            }
        }
    }

    /// Normalizes a descriptor-width row according to the configured mode.
    pub fn normalize(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.value(x).cols;
        if self.config.norm == NormMode::PerHalf && self.config.pooling.is_concat() && w.is_multiple_of(2) {
            let h = w / 2;
            let a = tape.slice_cols(x, 0, h);
            let b = tape.slice_cols(x, h, h);
            let a = tape.l2_normalize_rows(a);
            let b = tape.l2_normalize_rows(b);
            let c = tape.concat_cols(&[a, b]);
            tape.scale(c, std::f64::consts::FRAC_1_SQRT_2)
        } else {
            tape.l2_normalize_rows(x)
        }
    }

    /// Text output restricted to the descriptor width (the first D dims for
    /// single-width pooling).
    pub fn text_descriptor(&self, tape: &mut Tape, full: Var) -> Var {
        let d = self.config.descriptor_dim();
        if d == 2 * self.config.dim {
            full
        } else {
            tape.slice_cols(full, 0, d)
        }
    }

    // Tape-free conveniences for inference.

    /// Raw 2D text output for one token sequence.
    pub fn encode_ids(&self, ids: &[u32]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let v = self.text_forward(&mut tape, ids)?;
        Ok(tape.value(v).data.clone())
    }

    /// `(c′, patches′)` as plain matrices.
    pub fn vision_values(&self, grid: &FeatureGrid) -> Result<(Vec<f64>, Mat)> {
        let mut tape = Tape::new(&self.params);
        let (c, p) = self.vision_forward(&mut tape, grid)?;
        Ok((tape.value(c).data.clone(), tape.value(p).clone()))
    }

    /// Normalized global descriptor `g` under the trained pooling mode.
    pub fn image_descriptor(&self, grid: &FeatureGrid) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let (c, p) = self.vision_forward(&mut tape, grid)?;
        let g = self.pool(&mut tape, c, p, self.config.pooling);
        let g = self.normalize(&mut tape, g);
        Ok(tape.value(g).data.clone())
    }
}

fn check_tokenizer(config: &ModelConfig, tok: &Tokenizer) -> Result<()> {
    if tok.max_len() != config.max_len {
        return Err(Error::invalid(format!(
            "tokenizer max_len {} differs from model max_len {}",
            tok.max_len(),
            config.max_len
        )));
    }
    if tok.hash_buckets() != config.hash_buckets {
        return Err(Error::invalid("tokenizer hash buckets differ from model config"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::tokenizer::PAD;
    use crate::tensor::{Matrix, Vector};

    fn tiny(pooling: Pooling, text_depth: usize, vision_blocks: usize) -> AlignmentModel {
        let config = ModelConfig {
            dim: 8,
            text_dim: 8,
            max_len: 6,
            text_depth,
            vision_blocks,
            heads: 2,
            hash_buckets: 4,
            pooling,
            ..ModelConfig::default()
        };
        let tok = Tokenizer::from_corpus(["red square", "blue circle"], 6, 4);
        AlignmentModel::new(config, tok, 3).unwrap()
    }

    fn grid(n: usize, d: usize, salt: f32) -> FeatureGrid {
        let cls = Vector::new((0..d).map(|i| ((i as f32 + salt) * 0.7).sin()).collect()).unwrap();
        let p = Matrix::new(n, d, (0..n * d).map(|i| ((i as f32 + salt) * 1.3).cos()).collect()).unwrap();
        FeatureGrid::new(cls, p, 1, n).unwrap()
    }

    #[test]
    fn pad_content_is_ignored() {
        let m = tiny(Pooling::ClsAvg, 1, 0);
        let mut ids = m.tokenize("red square");
        let a = m.encode_ids(&ids).unwrap();
        for t in ids.iter_mut().skip(3) {
            assert_eq!(*t, PAD);
            *t = 5;
        }
        assert_eq!(a, m.encode_ids(&ids).unwrap());
    }

    #[test]
    fn zero_depth_text_is_projected_embedding() {
        let m = tiny(Pooling::ClsAvg, 0, 0);
        let ids = m.tokenize("blue");
        let out = m.encode_ids(&ids).unwrap();
        let (te, pe, w, b) = (&m.params[m.tok_emb], &m.params[m.pos_emb], &m.params[m.proj_w], &m.params[m.proj_b]);
        let e: Vec<f64> = te.row(ids[1] as usize).iter().zip(pe.row(1)).map(|(a, b)| a + b).collect();
        for j in 0..w.cols {
            let want = b.data[j] + (0..w.rows).map(|k| e[k] * w.data[k * w.cols + j]).sum::<f64>();
            assert!((out[j] - want).abs() < 1e-12);
        }
        assert_eq!(out, m.encode_ids(&ids).unwrap());
    }

    #[test]
    fn zero_vision_blocks_is_identity() {
        let m = tiny(Pooling::ClsAvg, 1, 0);
        let g = grid(4, 8, 0.0);
        let (c, p) = m.vision_values(&g).unwrap();
        assert_eq!(c, g.cls().as_slice().iter().map(|&v| v as f64).collect::<Vec<_>>());
        assert_eq!(p.data, g.patches().as_slice().iter().map(|&v| v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn per_token_path_is_equivariant() {
        let mut m = tiny(Pooling::ClsAvg, 1, 2);
        m.attention_enabled = false;
        let g = grid(3, 8, 1.0);
        let mut swapped = g.patches().clone();
        let (r0, r2) = (g.patches().row(0).to_vec(), g.patches().row(2).to_vec());
        swapped.row_mut(0).copy_from_slice(&r2);
        swapped.row_mut(2).copy_from_slice(&r0);
        let g2 = FeatureGrid::new(g.cls().clone(), swapped, 1, 3).unwrap();
        let (_, a) = m.vision_values(&g).unwrap();
        let (_, b) = m.vision_values(&g2).unwrap();
        assert_eq!(a.row(0), b.row(2));
        assert_eq!(a.row(2), b.row(0));
        assert_eq!(a.row(1), b.row(1));
        assert_eq!((a.rows, a.cols), (3, 8));
    }

    #[test]
    fn pooling_arithmetic() {
        let m = tiny(Pooling::ClsAvg, 0, 0);
        let params = m.params.clone();
        let mut t = Tape::new(&params);
        let c = t.leaf(Mat::row_vector(vec![5.0, 5.0]));
        let p = t.leaf(Mat::from_vec(2, 2, vec![1.0, 0.0, 3.0, 2.0]));
        let g = m.pool(&mut t, c, p, Pooling::ClsAvg);
        assert_eq!(t.value(g).data, vec![5.0, 5.0, 2.0, 1.0]);
        let g = m.pool(&mut t, c, p, Pooling::ClsMax);
        assert_eq!(t.value(g).data, vec![5.0, 5.0, 3.0, 2.0]);
        let g = m.pool(&mut t, c, p, Pooling::Cls);
        assert_eq!(t.value(g).data, vec![5.0, 5.0]);
        let same = t.leaf(Mat::from_vec(3, 2, vec![0.5, -1.0, 0.5, -1.0, 0.5, -1.0]));
        for mode in [Pooling::Avg, Pooling::Max] {
            let g = m.pool(&mut t, c, same, mode);
            assert_eq!(t.value(g).data, vec![0.5, -1.0]);
        }
    }

    #[test]
    fn descriptor_widths() {
        for mode in Pooling::ALL {
            let m = tiny(mode, 1, 1);
            let g = m.image_descriptor(&grid(4, 8, 2.0)).unwrap();
            assert_eq!(g.len(), if mode.is_concat() { 16 } else { 8 });
            assert!((g.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(m.encode_ids(&m.tokenize("red")).unwrap().len(), 16);
            assert_eq!(mode.to_string().parse::<Pooling>().unwrap(), mode);
        }
    }
}
