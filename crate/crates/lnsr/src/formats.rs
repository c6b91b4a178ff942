//! Binary model checkpoints and neighbor-index snapshots.
//!
//! Both start with one text line (magic and decimal fields separated by
//! spaces) followed by 64-bit little-endian floats.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use lnsr_core::encoder::{EncoderConfig, EncoderModel};
use lnsr_core::manifold::NeighborIndex;
use lnsr_core::Tensor;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "LNSR1";
pub const KNN_MAGIC: &str = "KNN1";

fn write_floats(out: &mut impl Write, data: &[f64]) -> std::io::Result<()> {
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_floats(input: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn read_header(path: &Path, reader: &mut impl BufRead, magic: &str) -> Result<Vec<String>> {
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let mut fields = line.split_whitespace().map(str::to_owned);
    if fields.next().as_deref() != Some(magic) {
        return Err(Error::format(path, format!("missing {magic} header")));
    }
    Ok(fields.collect())
}

fn parse_field<T: std::str::FromStr>(path: &Path, fields: &[String], i: usize, name: &str) -> Result<T> {
    fields
        .get(i)
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad or missing header field {name}")))
}

fn ensure_eof(path: &Path, reader: &mut impl Read) -> Result<()> {
    let mut rest = [0u8; 1];
    match reader.read(&mut rest).map_err(|e| Error::io(path, e))? {
        0 => Ok(()),
        _ => Err(Error::format(path, "trailing bytes after payload")),
    }
}

pub fn save_checkpoint(model: &EncoderModel, path: &Path) -> Result<()> {
    let c = model.config();
    let mut out = Vec::new();
    writeln!(
        out,
        "{CHECKPOINT_MAGIC} {} {} {} {} {} {} {} {} {}",
        c.vocab_size,
        c.embed_dim,
        c.num_layers,
        c.num_heads,
        c.ffn_dim,
        c.max_seq_len,
        c.num_outputs,
        c.dropout_rate,
        u8::from(c.pre_norm)
    )
    .expect("write to memory");
    for p in model.params() {
        write_floats(&mut out, p.data()).expect("write to memory");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderModel> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let f = read_header(path, &mut reader, CHECKPOINT_MAGIC)?;
    if f.len() != 9 {
        return Err(Error::format(path, "checkpoint header needs 9 config fields"));
    }
    let pre_norm: u8 = parse_field(path, &f, 8, "pre_norm")?;
    let config = EncoderConfig {
        vocab_size: parse_field(path, &f, 0, "vocab_size")?,
        embed_dim: parse_field(path, &f, 1, "embed_dim")?,
        num_layers: parse_field(path, &f, 2, "num_layers")?,
        num_heads: parse_field(path, &f, 3, "num_heads")?,
        ffn_dim: parse_field(path, &f, 4, "ffn_dim")?,
        max_seq_len: parse_field(path, &f, 5, "max_seq_len")?,
        num_outputs: parse_field(path, &f, 6, "num_outputs")?,
        dropout_rate: parse_field(path, &f, 7, "dropout_rate")?,
        pre_norm: pre_norm != 0,
    };
    config.validate()?;
    let mut params = Vec::new();
    for shape in config.param_shapes() {
        let n = shape.iter().product();
        let data = read_floats(&mut reader, n).map_err(|_| Error::format(path, "truncated parameter payload"))?;
        params.push(Tensor::new(shape, data)?);
    }
    ensure_eof(path, &mut reader)?;
    Ok(EncoderModel::from_params(config, params)?)
}

pub fn save_knn_snapshot(index: &NeighborIndex, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{KNN_MAGIC} {} {}", index.len(), index.dim()).expect("write to memory");
    write_floats(&mut out, index.vectors().data()).expect("write to memory");
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_knn_snapshot(path: &Path) -> Result<NeighborIndex> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let f = read_header(path, &mut reader, KNN_MAGIC)?;
    let n: usize = parse_field(path, &f, 0, "N")?;
    let d: usize = parse_field(path, &f, 1, "d")?;
    let data = read_floats(&mut reader, n * d).map_err(|_| Error::format(path, "truncated vector payload"))?;
    ensure_eof(path, &mut reader)?;
    Ok(NeighborIndex::build(Tensor::new(vec![n, d], data)?)?)
}
