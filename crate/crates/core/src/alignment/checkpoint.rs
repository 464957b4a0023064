//! DTXM model checkpoints: config block, tokenizer vocabulary, then named
//! tensors stored as f32.

use std::fs;
use std::path::Path;

use super::model::{AlignmentModel, EncoderInfo, ModelConfig, NormMode, Pooling};
use super::tape::Mat;
use super::tokenizer::Tokenizer;
use crate::error::{FormatError, Result};
use crate::formats::{ByteReader, ByteWriter, FORMAT_VERSION};

pub const MODEL_MAGIC: &[u8; 4] = b"DTXM";

pub fn encode_model(model: &AlignmentModel) -> Vec<u8> {
    let c = model.config();
    let mut w = ByteWriter::new(MODEL_MAGIC);
    w.u32(FORMAT_VERSION);
    for v in [c.dim, c.text_dim, c.max_len, c.text_depth, c.vision_blocks, c.heads] {
        w.u32(v as u32);
    }
    w.u32(c.hash_buckets);
    w.u32(c.pooling.code());
    w.u32(match c.norm {
        NormMode::Whole => 0,
        NormMode::PerHalf => 1,
    });
    w.u64(c.encoder.seed);
    w.u32(c.encoder.patch_size as u32);
    w.f32s(&[c.encoder.jitter]);
    w.u32(c.train_grid as u32);
    let words = model.tokenizer().words();
    w.u32(words.len() as u32);
    for word in words {
        w.str(word);
    }
    w.u32(model.params().len() as u32);
    for (name, p) in model.param_names().iter().zip(model.params()) {
        w.str(name);
        w.u32(2);
        w.u32(p.rows as u32);
        w.u32(p.cols as u32);
        let vals: Vec<f32> = p.data.iter().map(|&x| x as f32).collect();
        w.f32s(&vals);
    }
    w.finish()
}

fn malformed(detail: impl Into<String>) -> FormatError {
    FormatError::Malformed { what: "DTXM", detail: detail.into() }
}

pub fn decode_model(buf: &[u8]) -> Result<AlignmentModel> {
    let mut r = ByteReader::open(buf, MODEL_MAGIC)?;
    r.version("DTXM")?;
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.u32("DTXM config")? as usize;
    }
    let hash_buckets = r.u32("DTXM config")?;
    let pooling = Pooling::from_code(r.u32("DTXM config")?).ok_or_else(|| malformed("unknown pooling code"))?;
    let norm = match r.u32("DTXM config")? {
        0 => NormMode::Whole,
        1 => NormMode::PerHalf,
        x => return Err(malformed(format!("unknown normalization code {x}")).into()),
    };
    let seed = r.u64("DTXM config")?;
    let patch_size = r.u32("DTXM config")? as usize;
    let jitter = r.f32s(1, "DTXM config")?[0];
    let train_grid = r.u32("DTXM config")? as usize;
    let config = ModelConfig {
        dim: dims[0],
        text_dim: dims[1],
        max_len: dims[2],
        text_depth: dims[3],
        vision_blocks: dims[4],
        heads: dims[5],
        hash_buckets,
        pooling,
        norm,
        encoder: EncoderInfo { seed, patch_size, jitter },
        train_grid,
    };
    let n_words = r.u32("DTXM vocabulary")? as usize;
    let mut words = Vec::with_capacity(n_words.min(1 << 16));
    for _ in 0..n_words {
        words.push(r.str("DTXM vocabulary")?);
    }
    if config.max_len == 0 {
        return Err(malformed("max_len is zero").into());
    }
    let tokenizer = Tokenizer::new(words, config.max_len, hash_buckets);
    let n_tensors = r.u32("DTXM tensors")? as usize;
    let mut named = Vec::with_capacity(n_tensors.min(1 << 12));
    for _ in 0..n_tensors {
        let name = r.str("DTXM tensor name")?;
        let rank = r.u32("DTXM tensor header")?;
        if rank != 2 {
            return Err(malformed(format!("tensor {name} has rank {rank}")).into());
        }
        let rows = r.u32("DTXM tensor header")? as usize;
        let cols = r.u32("DTXM tensor header")? as usize;
        let vals = r.f32s(rows * cols, "DTXM tensor payload")?;
        named.push((name, Mat::from_vec(rows, cols, vals.into_iter().map(f64::from).collect())));
    }
    r.expect_end("DTXM")?;
    AlignmentModel::from_named(config, tokenizer, named).map_err(|e| malformed(e.to_string()).into())
}

pub fn write_model(path: impl AsRef<Path>, model: &AlignmentModel) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<AlignmentModel> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn roundtrip_is_f32_exact() {
        let tok = Tokenizer::from_corpus(["a red square", "green"], 8, 5);
        let cfg = ModelConfig { dim: 8, text_dim: 8, max_len: 8, hash_buckets: 5, ..ModelConfig::default() };
        let m = AlignmentModel::new(cfg, tok, 1).unwrap();
        let buf = encode_model(&m);
        let back = decode_model(&buf).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.tokenizer(), m.tokenizer());
        for (a, b) in m.params().iter().zip(back.params()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert_eq!(encode_model(&back), buf);
        assert!(matches!(decode_model(&buf[..buf.len() - 3]), Err(Error::Format(FormatError::Truncated(_)))));
        assert!(matches!(decode_model(b"DTXE"), Err(Error::Format(FormatError::BadMagic { .. }))));
    }
}
