//! Binary weight files.
//!
//! ```text
//! SSTU1
//! tensor <name> f32 <rank> <dim>... <offset> <byte_len>
//! ...
//! arch <input_size> <base_channels> <depth> <decoders>
//! tag <provenance>
//!
//! <little-endian f32 blob>
//! ```
//!
//! Offsets are relative to the start of the blob. Tensors appear in layer
//! plan order; the head kernel size is read back from its shape.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use super::{ArchConfig, Decoders, Head, WeightBundle, DEPTH, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "SSTU1";

pub fn to_bytes(bundle: &WeightBundle) -> Vec<u8> {
    let mut header = format!("{MAGIC}\n");
    let mut offset = 0usize;
    for (name, t) in bundle.params() {
        let len = t.len() * 4;
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            header,
            "tensor {name} f32 {} {} {offset} {len}",
            t.shape().len(),
            dims.join(" ")
        );
        offset += len;
    }
    let a = bundle.arch();
    let _ = writeln!(
        header,
        "arch {} {} {} {}",
        a.input_size,
        a.base_channels,
        a.depth,
        a.decoders.count()
    );
    let _ = writeln!(header, "tag {}", bundle.tag());
    header.push('\n');
    let mut out = header.into_bytes();
    out.reserve(offset);
    for t in bundle.params().values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_weights(bundle: &WeightBundle, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<WeightBundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
    line_offset: usize,
}

fn bad(offset: usize, detail: impl Into<String>) -> Error {
    Error::WeightFile {
        offset,
        detail: detail.into(),
    }
}

fn num(tok: Option<&str>, at: usize, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| bad(at, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| bad(at, format!("{what} {tok:?} is not a non-negative integer")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<WeightBundle> {
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| bad(0, "header is not terminated by a blank line"))?;
    let header =
        std::str::from_utf8(&bytes[..header_end + 1]).map_err(|e| bad(e.valid_up_to(), "header is not valid UTF-8"))?;
    let blob = &bytes[header_end + 2..];
    let blob_start = header_end + 2;

    let mut entries = Vec::new();
    let mut arch = None;
    let mut tag = None;
    let mut pos = 0usize;
    for (i, line) in header.split_terminator('\n').enumerate() {
        let at = pos;
        pos += line.len() + 1;
        if i == 0 {
            if line != MAGIC {
                return Err(bad(0, format!("bad magic {line:?}, expected {MAGIC:?}")));
            }
            continue;
        }
        let mut toks = line.split(' ');
        match toks.next() {
            Some("tensor") => {
                let name = toks.next().ok_or_else(|| bad(at, "tensor line without a name"))?;
                match toks.next() {
                    Some("f32") => {}
                    other => return Err(bad(at, format!("tensor {name}: unsupported dtype {other:?}"))),
                }
                let rank = num(toks.next(), at, "rank")?;
                let shape = (0..rank)
                    .map(|_| num(toks.next(), at, "dimension"))
                    .collect::<Result<Vec<_>>>()?;
                let offset = num(toks.next(), at, "offset")?;
                let len = num(toks.next(), at, "byte length")?;
                if toks.next().is_some() {
                    return Err(bad(at, format!("tensor {name}: trailing fields")));
                }
                entries.push(Entry {
                    name: name.to_string(),
                    shape,
                    offset,
                    len,
                    line_offset: at,
                });
            }
            Some("arch") => {
                let input_size = num(toks.next(), at, "input size")?;
                let base_channels = num(toks.next(), at, "base channels")?;
                let depth = num(toks.next(), at, "depth")?;
                let decoders = match num(toks.next(), at, "decoder count")? {
                    1 => Decoders::One,
                    2 => Decoders::Two,
                    n => return Err(bad(at, format!("decoder count {n} is not 1 or 2"))),
                };
                arch = Some((at, input_size, base_channels, depth, decoders));
            }
            Some("tag") => {
                tag = Some(toks.collect::<Vec<_>>().join(" "));
            }
            _ => return Err(bad(at, format!("unrecognised header line {line:?}"))),
        }
    }
    let (arch_at, input_size, base_channels, depth, decoders) =
        arch.ok_or_else(|| bad(header_end, "header has no arch line"))?;
    let tag = tag.ok_or_else(|| bad(header_end, "header has no tag line"))?;

    let mut params = IndexMap::with_capacity(entries.len());
    for e in &entries {
        let expected = e.shape.iter().product::<usize>() * 4;
        if e.len != expected {
            return Err(bad(
                e.line_offset,
                format!(
                    "tensor {}: declared byte length {} does not match shape {:?} ({expected} bytes)",
                    e.name, e.len, e.shape
                ),
            ));
        }
        let end = e
            .offset
            .checked_add(e.len)
            .filter(|&end| end <= blob.len())
            .ok_or_else(|| {
                bad(
                    blob_start + e.offset.min(blob.len()),
                    format!(
                        "tensor {}: bytes {}..{} run past the end of the {}-byte blob",
                        e.name,
                        e.offset,
                        e.offset.saturating_add(e.len),
                        blob.len()
                    ),
                )
            })?;
        let data = blob[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if params
            .insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)
            .is_some()
        {
            return Err(bad(e.line_offset, format!("tensor {} declared twice", e.name)));
        }
    }

    if depth != DEPTH {
        return Err(bad(arch_at, format!("depth {depth} is not supported")));
    }
    let head_name = match decoders {
        Decoders::One => "head.weight".to_string(),
        Decoders::Two => "exo.head.weight".to_string(),
    };
    let head = match params.get(&head_name).map(|t| t.shape().get(2).copied()) {
        Some(Some(3)) => Head::Conv3x3,
        Some(_) => Head::Conv1x1,
        None => return Err(bad(header_end, format!("file has no {head_name}"))),
    };
    let arch = ArchConfig {
        input_size,
        base_channels,
        depth,
        decoders,
        head,
    };
    if !params.keys().any(|k| k.starts_with(ENCODER_PREFIX)) {
        return Err(bad(header_end, "file holds no encoder tensors"));
    }
    WeightBundle::from_parts(arch, tag, params).map_err(|e| bad(header_end, e.to_string()))
}
