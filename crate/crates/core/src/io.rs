//! On-disk formats.
//!
//! Binary formats start with one line of canonical JSON (sorted keys,
//! shortest round-trip floats) holding a `magic` field, then a `\n`, then a
//! little-endian payload:
//!
//! | magic   | payload                                                  |
//! |---------|----------------------------------------------------------|
//! | `OHDS1` | `n·dim` f32 descriptors, row-major                       |
//! | `OHCB1` | `classes` packed rows, `⌈K/64⌉` u64 words each            |
//! | `OHIX1` | `count` records of `id: u64` followed by the packed words |
//! | `OHCD1` | code list, same record layout as `OHIX1`                  |
//!
//! Models (`OHMD1`) are a single canonical JSON line with every parameter
//! as a decimal f64. Labels are `id,class[;class...]` text lines.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codebook::{Codebook, CodebookMethod};
use crate::encoder::{Architecture, BatchNorm, DenseLayer, EncoderParams};
use crate::error::{Error, Result};
use crate::hamming::{words_for, PackedCode};
use crate::metrics::DistanceHistograms;
use crate::retrieval::HammingIndex;
use crate::scalar::Scalar;

pub const DESCRIPTOR_MAGIC: &str = "OHDS1";
pub const CODEBOOK_MAGIC: &str = "OHCB1";
pub const MODEL_MAGIC: &str = "OHMD1";
pub const INDEX_MAGIC: &str = "OHIX1";
pub const CODES_MAGIC: &str = "OHCD1";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Compact JSON with object keys sorted.
pub fn canonical_json<S: Serialize>(value: &S) -> Result<String> {
    // Value maps are BTreeMaps, so this sorts keys at every level.
    Ok(serde_json::to_string(&serde_json::to_value(value)?)?)
}

/// Pretty JSON with sorted keys and a trailing newline, for reports.
pub fn canonical_json_pretty<S: Serialize>(value: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&serde_json::to_value(value)?)?;
    s.push('\n');
    Ok(s)
}

fn with_header<H: Serialize>(header: &H, payload_len: usize) -> Result<Vec<u8>> {
    let head = canonical_json(header)?;
    let mut out = Vec::with_capacity(head.len() + 1 + payload_len);
    out.extend_from_slice(head.as_bytes());
    out.push(b'\n');
    Ok(out)
}

fn split_header(bytes: &[u8]) -> Result<(Value, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err("missing header line"))?;
    let header: Value =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| format_err(format!("header is not JSON: {e}")))?;
    Ok((header, &bytes[nl + 1..]))
}

fn magic_of(header: &Value) -> Option<&str> {
    header.get("magic").and_then(Value::as_str)
}

fn expect_magic(header: &Value, magic: &str) -> Result<()> {
    match magic_of(header) {
        Some(m) if m == magic => Ok(()),
        Some(m) => Err(Error::UnknownMagic(m.to_string())),
        None => Err(format_err("header has no magic")),
    }
}

fn parse_header<H: for<'de> Deserialize<'de>>(header: Value, magic: &str) -> Result<H> {
    expect_magic(&header, magic)?;
    serde_json::from_value(header).map_err(|e| format_err(format!("bad {magic} header: {e}")))
}

fn u64_words(payload: &[u8]) -> impl Iterator<Item = u64> + '_ {
    payload
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
}

// ---------------------------------------------------------------- descriptors

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorHeader {
    magic: String,
    n: usize,
    dim: usize,
    dtype: String,
    order: String,
}

pub fn encode_descriptors<T: Scalar>(x: ArrayView2<T>) -> Result<Vec<u8>> {
    let header = DescriptorHeader {
        magic: DESCRIPTOR_MAGIC.into(),
        n: x.nrows(),
        dim: x.ncols(),
        dtype: "f32".into(),
        order: "row-major".into(),
    };
    let mut out = with_header(&header, 4 * x.len())?;
    for &v in x.iter() {
        let f = v.to_f32().ok_or_else(|| format_err("value not representable as f32"))?;
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_descriptors<T: Scalar>(bytes: &[u8]) -> Result<Array2<T>> {
    let (header, payload) = split_header(bytes)?;
    let h: DescriptorHeader = parse_header(header, DESCRIPTOR_MAGIC)?;
    if h.dtype != "f32" || h.order != "row-major" {
        return Err(format_err(format!("unsupported layout {} {}", h.dtype, h.order)));
    }
    let expected =
        h.n.checked_mul(h.dim)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| format_err("descriptor size overflows"))?;
    if payload.len() != expected {
        return Err(format_err(format!(
            "payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let values: Vec<T> = payload
        .chunks_exact(4)
        .map(|c| T::lit(f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk")))))
        .collect();
    Array2::from_shape_vec((h.n, h.dim), values).map_err(|e| format_err(e.to_string()))
}

// ------------------------------------------------------------------ codebook

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookHeader {
    magic: String,
    classes: usize,
    bits: usize,
    method: CodebookMethod,
    seed: Option<u64>,
}

pub fn encode_codebook(cb: &Codebook) -> Result<Vec<u8>> {
    let header = CodebookHeader {
        magic: CODEBOOK_MAGIC.into(),
        classes: cb.classes(),
        bits: cb.bits(),
        method: cb.method(),
        seed: cb.seed(),
    };
    let mut out = with_header(&header, 8 * cb.classes() * words_for(cb.bits()))?;
    for row in cb.packed_rows() {
        for w in row.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook> {
    let (header, payload) = split_header(bytes)?;
    let h: CodebookHeader = parse_header(header, CODEBOOK_MAGIC)?;
    let wpc = words_for(h.bits);
    if payload.len() != 8 * wpc * h.classes {
        return Err(format_err("codebook payload length does not match header"));
    }
    let words: Vec<u64> = u64_words(payload).collect();
    let rows = words
        .chunks_exact(wpc.max(1))
        .map(|w| PackedCode::from_words(h.bits, w.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Codebook::from_packed(rows, h.method, h.seed)
}

// ------------------------------------------------------------ index / codes

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordsHeader {
    magic: String,
    bits: usize,
    count: usize,
}

fn encode_records<'a>(
    magic: &str,
    bits: usize,
    records: impl ExactSizeIterator<Item = (u64, &'a [u64])>,
) -> Result<Vec<u8>> {
    let count = records.len();
    let header = RecordsHeader {
        magic: magic.into(),
        bits,
        count,
    };
    let mut out = with_header(&header, count * 8 * (1 + words_for(bits)))?;
    for (id, words) in records {
        out.extend_from_slice(&id.to_le_bytes());
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_records(bytes: &[u8], magic: &str) -> Result<Vec<(u64, PackedCode)>> {
    let (header, payload) = split_header(bytes)?;
    let h: RecordsHeader = parse_header(header, magic)?;
    let stride = 1 + words_for(h.bits);
    if payload.len() != 8 * stride * h.count {
        return Err(format_err(format!("{magic} payload length does not match header")));
    }
    let words: Vec<u64> = u64_words(payload).collect();
    words
        .chunks_exact(stride)
        .map(|r| Ok((r[0], PackedCode::from_words(h.bits, r[1..].to_vec())?)))
        .collect()
}

pub fn encode_index(index: &HammingIndex) -> Result<Vec<u8>> {
    let entries: Vec<(u64, PackedCode)> = index.entries().collect();
    encode_records(
        INDEX_MAGIC,
        index.bits(),
        entries.iter().map(|(id, c)| (*id, c.words())),
    )
}

pub fn decode_index(bytes: &[u8]) -> Result<HammingIndex> {
    HammingIndex::build(decode_records(bytes, INDEX_MAGIC)?)
}

/// Code lists must share one width; an empty list is written with `bits = 0`.
pub fn encode_codes(codes: &[(u64, PackedCode)]) -> Result<Vec<u8>> {
    let bits = codes.first().map_or(0, |(_, c)| c.bits());
    if codes.iter().any(|(_, c)| c.bits() != bits) {
        return Err(format_err("codes have mixed bit widths"));
    }
    encode_records(CODES_MAGIC, bits, codes.iter().map(|(id, c)| (*id, c.words())))
}

pub fn decode_codes(bytes: &[u8]) -> Result<Vec<(u64, PackedCode)>> {
    decode_records(bytes, CODES_MAGIC)
}

// --------------------------------------------------------------------- model

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    magic: String,
    architecture: Architecture,
    mlp: Vec<LayerFile>,
    latent_weight: Vec<Vec<f64>>,
    bn: BnFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BnFile {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    epsilon: f64,
}

fn rows_of<T: Scalar>(m: &Array2<T>) -> Vec<Vec<f64>> {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn vec_of<T: Scalar>(v: &Array1<T>) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn matrix_from<T: Scalar>(rows: &[Vec<f64>]) -> Result<Array2<T>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(format_err("ragged matrix"));
    }
    let flat: Vec<T> = rows.iter().flatten().map(|&x| T::lit(x)).collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| format_err(e.to_string()))
}

fn array_from<T: Scalar>(v: &[f64]) -> Array1<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

pub fn encode_model<T: Scalar>(params: &EncoderParams<T>) -> Result<Vec<u8>> {
    if !params.is_finite() {
        return Err(format_err("model has non-finite parameters"));
    }
    let file = ModelFile {
        magic: MODEL_MAGIC.into(),
        architecture: params.arch.clone(),
        mlp: params
            .mlp
            .iter()
            .map(|l| LayerFile {
                weight: rows_of(&l.weight),
                bias: vec_of(&l.bias),
            })
            .collect(),
        latent_weight: rows_of(&params.latent_weight),
        bn: BnFile {
            gamma: vec_of(&params.bn.gamma),
            beta: vec_of(&params.bn.beta),
            running_mean: vec_of(&params.bn.running_mean),
            running_var: vec_of(&params.bn.running_var),
            momentum: params.bn.momentum.as_f64(),
            epsilon: params.bn.epsilon.as_f64(),
        },
    };
    let mut s = canonical_json(&file)?;
    s.push('\n');
    Ok(s.into_bytes())
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<EncoderParams<T>> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| format_err(format!("model is not JSON: {e}")))?;
    let f: ModelFile = parse_header(value, MODEL_MAGIC)?;
    let mlp = f
        .mlp
        .iter()
        .map(|l| {
            Ok(DenseLayer {
                weight: matrix_from(&l.weight)?,
                bias: array_from(&l.bias),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = EncoderParams {
        arch: f.architecture,
        mlp,
        latent_weight: matrix_from(&f.latent_weight)?,
        bn: BatchNorm {
            gamma: array_from(&f.bn.gamma),
            beta: array_from(&f.bn.beta),
            running_mean: array_from(&f.bn.running_mean),
            running_var: array_from(&f.bn.running_var),
            momentum: T::lit(f.bn.momentum),
            epsilon: T::lit(f.bn.epsilon),
        },
    };
    params.validate()?;
    Ok(params)
}

// -------------------------------------------------------------------- labels

/// Parses `id,class[;class...]` lines. Blank lines are ignored.
pub fn parse_labels(text: &str) -> Result<Vec<(u64, Vec<usize>)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| format_err(format!("labels line {}: {what}", lineno + 1));
        let (id, classes) = line.split_once(',').ok_or_else(|| bad("expected id,classes"))?;
        let id: u64 = id.trim().parse().map_err(|_| bad("bad id"))?;
        let classes = classes
            .split(';')
            .map(|c| c.trim().parse::<usize>().map_err(|_| bad("bad class")))
            .collect::<Result<Vec<_>>>()?;
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        out.push((id, classes));
    }
    Ok(out)
}

pub fn format_labels(labels: &[(u64, Vec<usize>)]) -> String {
    let mut s = String::new();
    for (id, classes) in labels {
        let joined: Vec<String> = classes.iter().map(usize::to_string).collect();
        s.push_str(&format!("{id},{}\n", joined.join(";")));
    }
    s
}

/// Label sets for rows `0..n`, looked up by id.
pub fn labels_for_rows(labels: &[(u64, Vec<usize>)], n: usize) -> Result<Vec<Vec<usize>>> {
    let map: BTreeMap<u64, &Vec<usize>> = labels.iter().map(|(id, l)| (*id, l)).collect();
    (0..n as u64)
        .map(|i| {
            map.get(&i)
                .map(|l| (*l).clone())
                .ok_or_else(|| format_err(format!("no labels for row {i}")))
        })
        .collect()
}

// --------------------------------------------------------------- histograms

pub fn histogram_csv(h: &DistanceHistograms) -> String {
    let mut s = String::from("bin_low,bin_high,intra_freq,inter_freq\n");
    for j in 0..h.intra.len() {
        s.push_str(&format!(
            "{},{},{},{}\n",
            h.bin_low[j], h.bin_high[j], h.intra[j], h.inter[j]
        ));
    }
    s
}

// ---------------------------------------------------------------- roundtrip

/// Magic of a toolkit file, if it carries one.
pub fn detect_magic(bytes: &[u8]) -> Result<String> {
    let (header, _) = split_header(bytes)?;
    magic_of(&header)
        .map(str::to_string)
        .ok_or_else(|| format_err("header has no magic"))
}

/// Decodes and re-encodes any magic-tagged toolkit file.
pub fn reencode(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = detect_magic(bytes)?;
    match magic.as_str() {
        DESCRIPTOR_MAGIC => encode_descriptors(decode_descriptors::<f32>(bytes)?.view()),
        CODEBOOK_MAGIC => encode_codebook(&decode_codebook(bytes)?),
        MODEL_MAGIC => encode_model(&decode_model::<f64>(bytes)?),
        INDEX_MAGIC => encode_index(&decode_index(bytes)?),
        CODES_MAGIC => encode_codes(&decode_codes(bytes)?),
        other => Err(Error::UnknownMagic(other.to_string())),
    }
}

/// Reads `path_in`, writes its canonical re-encoding to `path_out`, and
/// reports whether the two are byte-identical.
pub fn roundtrip_check(path_in: &Path, path_out: &Path) -> Result<bool> {
    let bytes = fs::read(path_in)?;
    let out = reencode(&bytes)?;
    fs::write(path_out, &out)?;
    Ok(out == bytes)
}
