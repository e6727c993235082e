//! Dataset directory layout.
//!
//! `manifest.json` plus one `sample_NNNNN.bin` per sample, numbered by id:
//!
//! | offset | size | content                                         |
//! |--------|------|-------------------------------------------------|
//! | 0      | 8    | magic `MVGPR1\0\0`                              |
//! | 8      | 8    | `H_m`, `W_m`, `H_t`, `W_t` as little-endian u16 |
//! | 16     | 1    | label (0..=3)                                   |
//! | 17     | 4·H_m·W_m | main view, row-major little-endian f32     |
//! | ...    | 4·H_t·W_t | top view, row-major little-endian f32      |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{class_counts, Class, Dims, Image, MultiViewSample};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const SAMPLE_MAGIC: &[u8; 8] = b"MVGPR1\0\0";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub n_samples: usize,
    pub counts: [usize; 4],
    pub main_dims: Dims,
    pub top_dims: Dims,
    pub noise_level: f64,
    pub seed: u64,
    #[serde(default)]
    pub config_hash: Option<String>,
}

fn sample_file(id: usize) -> String {
    format!("sample_{id:05}.bin")
}

fn dim_u16(n: usize) -> Result<[u8; 2]> {
    u16::try_from(n)
        .map(|v| v.to_le_bytes())
        .map_err(|_| Error::invalid(format!("extent {n} does not fit in u16")))
}

pub fn encode_sample(s: &MultiViewSample) -> Result<Vec<u8>> {
    let (dm, dt) = (s.main_view.dims(), s.top_view.dims());
    let mut buf = Vec::with_capacity(HEADER_LEN + 1 + 4 * (dm.area() + dt.area()));
    buf.extend_from_slice(SAMPLE_MAGIC);
    for n in [dm.height, dm.width, dt.height, dt.width] {
        buf.extend_from_slice(&dim_u16(n)?);
    }
    buf.push(s.label.index() as u8);
    for p in s.main_view.pixels().iter().chain(s.top_view.pixels()) {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_sample(id: usize, bytes: &[u8]) -> Result<MultiViewSample> {
    let bad = |what: &str| Error::Format(format!("{}: {what}", sample_file(id)));
    if bytes.len() < HEADER_LEN + 1 || &bytes[..8] != SAMPLE_MAGIC {
        return Err(bad("missing MVGPR1 header"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let dm = Dims::new(u16_at(8), u16_at(10));
    let dt = Dims::new(u16_at(12), u16_at(14));
    let label = Class::from_index(bytes[16] as usize).map_err(|_| bad("label out of range"))?;
    let body = &bytes[HEADER_LEN + 1..];
    if body.len() != 4 * (dm.area() + dt.area()) {
        return Err(bad(&format!(
            "payload is {} bytes, header implies {}",
            body.len(),
            4 * (dm.area() + dt.area())
        )));
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let (m, t) = floats.split_at(dm.area());
    Ok(MultiViewSample {
        id,
        main_view: Image::new(dm, m.to_vec()).map_err(|e| bad(&e.to_string()))?,
        top_view: Image::new(dt, t.to_vec()).map_err(|e| bad(&e.to_string()))?,
        label,
    })
}

pub fn save_dataset(dir: &Path, samples: &[MultiViewSample], manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if manifest.n_samples != samples.len() || manifest.counts != class_counts(samples) {
        return Err(Error::invalid("manifest counts disagree with samples"));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.id != i {
            return Err(Error::invalid(format!("sample at position {i} has id {}", s.id)));
        }
        let path = dir.join(sample_file(i));
        fs::write(&path, encode_sample(s)?).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
        Error::Format(format!("manifest.json unreadable ({e}); cannot determine format version"))
    })?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Format("manifest.json has no valid format_version".into()))?;
    if found != u64::from(FORMAT_VERSION) {
        return Err(Error::Version {
            found: found.try_into().unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value)
        .map_err(|e| Error::Format(format!("manifest.json (format version {found}): {e}")))
}

pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<MultiViewSample>)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = parse_manifest(&text)?;
    let mut samples = Vec::with_capacity(manifest.n_samples);
    for id in 0..manifest.n_samples {
        let path = dir.join(sample_file(id));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let s = decode_sample(id, &bytes)?;
        if s.main_view.dims() != manifest.main_dims || s.top_view.dims() != manifest.top_dims {
            return Err(Error::Format(format!(
                "{} has dims {}/{}, manifest says {}/{}",
                sample_file(id),
                s.main_view.dims(),
                s.top_view.dims(),
                manifest.main_dims,
                manifest.top_dims
            )));
        }
        samples.push(s);
    }
    if class_counts(&samples) != manifest.counts {
        return Err(Error::Format("class counts disagree with manifest".into()));
    }
    Ok((manifest, samples))
}
