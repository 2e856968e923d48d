//! Versioned model files.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! b"NARN" | u32 version | u32 n_delays | u32 n_hidden | u8 activation
//! f64 × (n·h) W1 row-major | f64 × h b1 | f64 × h W2 | f64 b2
//! f64 × 2n input (min, max) pairs | f64 × 2 target (min, max)
//! ```
//!
//! The text form carries the same fields line by line and uses Rust's
//! shortest round-trip float formatting, so it is also exact.

use std::io::{BufRead, Read, Write};

use super::{Activation, NarnnModel, Topology};
use crate::dataset::{MinMax, Normalizer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NARN";
const TEXT_MAGIC: &str = "narnn-model";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_binary<W: Write>(model: &NarnnModel, mut out: W) -> Result<()> {
    let t = model.topology;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(t.n_delays as u32).to_le_bytes())?;
    out.write_all(&(t.n_hidden as u32).to_le_bytes())?;
    out.write_all(&[t.activation.code()])?;
    for v in model.params() {
        out.write_all(&v.to_le_bytes())?;
    }
    for s in model.normalizer.inputs.iter().chain(std::iter::once(&model.normalizer.target)) {
        out.write_all(&s.min.to_le_bytes())?;
        out.write_all(&s.max.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Parse(format!("truncated model file: {e}")))?;
    Ok(buf)
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<_, 8>(input)?))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<_, 4>(input)?))
}

pub fn read_binary<R: Read>(mut input: R) -> Result<NarnnModel> {
    if &read_exact::<_, 4>(&mut input)? != MAGIC {
        return Err(Error::Parse("not a binary model file".into()));
    }
    let version = read_u32(&mut input)?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported model version {version}")));
    }
    let n_delays = read_u32(&mut input)? as usize;
    let n_hidden = read_u32(&mut input)? as usize;
    let activation = Activation::from_code(read_exact::<_, 1>(&mut input)?[0])?;
    let topology = Topology::new(n_delays, n_hidden, activation)?;

    let params = (0..topology.n_params())
        .map(|_| read_f64(&mut input))
        .collect::<Result<Vec<_>>>()?;
    let mut scales = Vec::with_capacity(n_delays + 1);
    for _ in 0..=n_delays {
        scales.push(MinMax {
            min: read_f64(&mut input)?,
            max: read_f64(&mut input)?,
        });
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Parse(format!("{} trailing bytes after model", rest.len())));
    }
    let target = scales.pop().expect("n_delays + 1 scales");
    assemble(topology, &params, Normalizer { inputs: scales, target })
}

fn assemble(topology: Topology, params: &[f64], normalizer: Normalizer) -> Result<NarnnModel> {
    let mut m = NarnnModel::zeros(topology);
    m.set_params(params)?;
    m.with_normalizer(normalizer)
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

pub fn write_text<W: Write>(model: &NarnnModel, mut out: W) -> Result<()> {
    let t = model.topology;
    writeln!(out, "{TEXT_MAGIC} v{FORMAT_VERSION}")?;
    writeln!(out, "n_delays {}", t.n_delays)?;
    writeln!(out, "n_hidden {}", t.n_hidden)?;
    writeln!(out, "activation {}", t.activation)?;
    for row in model.w1.chunks_exact(t.n_delays) {
        writeln!(out, "w1 {}", join(row))?;
    }
    writeln!(out, "b1 {}", join(&model.b1))?;
    writeln!(out, "w2 {}", join(&model.w2))?;
    writeln!(out, "b2 {:?}", model.b2)?;
    for s in &model.normalizer.inputs {
        writeln!(out, "input_scale {:?} {:?}", s.min, s.max)?;
    }
    let s = model.normalizer.target;
    writeln!(out, "target_scale {:?} {:?}", s.min, s.max)?;
    Ok(())
}

pub fn read_text<R: BufRead>(input: R) -> Result<NarnnModel> {
    let mut lines = input.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let mut next = |key: &str| -> Result<(usize, Vec<String>)> {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing {key:?} line")))?;
        let line = line?;
        let mut parts = line.split_whitespace().map(str::to_string);
        match parts.next() {
            Some(k) if k == key => Ok((no, parts.collect())),
            other => Err(Error::Parse(format!("line {no}: expected {key:?}, found {other:?}"))),
        }
    };
    let floats = |no: usize, vals: &[String], n: usize| -> Result<Vec<f64>> {
        if vals.len() != n {
            return Err(Error::Parse(format!("line {no}: expected {n} values, got {}", vals.len())));
        }
        vals.iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {no}: {e}"))))
            .collect()
    };
    let count = |no: usize, vals: &[String]| -> Result<usize> {
        vals.first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("line {no}: expected a count")))
    };

    let (no, v) = next(TEXT_MAGIC)?;
    if v.first().map(String::as_str) != Some(&format!("v{FORMAT_VERSION}")[..]) {
        return Err(Error::Parse(format!("line {no}: unsupported model version {v:?}")));
    }
    let (no, v) = next("n_delays")?;
    let n_delays = count(no, &v)?;
    let (no, v) = next("n_hidden")?;
    let n_hidden = count(no, &v)?;
    let (no, v) = next("activation")?;
    let activation: Activation = v
        .first()
        .ok_or_else(|| Error::Parse(format!("line {no}: missing activation")))?
        .parse()?;
    let topology = Topology::new(n_delays, n_hidden, activation)?;

    let mut params = Vec::with_capacity(topology.n_params());
    for _ in 0..n_hidden {
        let (no, v) = next("w1")?;
        params.extend(floats(no, &v, n_delays)?);
    }
    let (no, v) = next("b1")?;
    params.extend(floats(no, &v, n_hidden)?);
    let (no, v) = next("w2")?;
    params.extend(floats(no, &v, n_hidden)?);
    let (no, v) = next("b2")?;
    params.extend(floats(no, &v, 1)?);

    let mut inputs = Vec::with_capacity(n_delays);
    for _ in 0..n_delays {
        let (no, v) = next("input_scale")?;
        let mm = floats(no, &v, 2)?;
        inputs.push(MinMax { min: mm[0], max: mm[1] });
    }
    let (no, v) = next("target_scale")?;
    let mm = floats(no, &v, 2)?;
    let target = MinMax { min: mm[0], max: mm[1] };
    assemble(topology, &params, Normalizer { inputs, target })
}

/// Read either form, sniffing the leading magic.
pub fn read_any(bytes: &[u8]) -> Result<NarnnModel> {
    if bytes.starts_with(MAGIC) {
        read_binary(bytes)
    } else {
        read_text(bytes)
    }
}
