//! Binary checkpoints.
//!
//! Layout: the magic bytes `EDGS`, a little-endian `u32` version, a `u32`
//! header length and that many bytes of UTF-8 header, then the raw arrays in
//! manifest order. The header holds `key=value` metadata, the run
//! configuration between `[config]` and `[arrays]`, and one manifest line per
//! array: `name dtype rows cols` with dtype `f64` or `u32`. All numbers are
//! little-endian and floats are stored as their exact bits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::IoError;
use crate::autodiff::Tensor;
use crate::heads::HeadBank;
use crate::scene::AnchorSet;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 4] = b"EDGS";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to render from, or keep training, a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub scene: AnchorSet,
    pub heads: HeadBank,
    pub config: TrainConfig,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

enum Array<'a> {
    F64(&'a Tensor),
    U32(&'a [u32]),
}

fn arrays(ck: &Checkpoint) -> Vec<(String, Array<'_>)> {
    let s = &ck.scene;
    let mut out = vec![
        ("anchor.positions".to_string(), Array::F64(s.positions())),
        ("anchor.levels".to_string(), Array::U32(s.levels())),
    ];
    for (name, t) in s.tensors() {
        out.push((format!("anchor.{name}"), Array::F64(t)));
    }
    for (head, mlp) in ck.heads.mlps() {
        for (i, layer) in mlp.layers.iter().enumerate() {
            out.push((format!("head.{head}.{i}.weight"), Array::F64(&layer.weight)));
            out.push((format!("head.{head}.{i}.bias"), Array::F64(&layer.bias)));
        }
    }
    out
}

pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let list = arrays(ck);
    let mut header = String::new();
    let _ = writeln!(header, "iteration={}", ck.iteration);
    let seed: String = ck.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    let _ = writeln!(header, "rng_seed={seed}");
    let _ = writeln!(header, "rng_stream={}", ck.rng.get_stream());
    let _ = writeln!(header, "rng_word_pos={}", ck.rng.get_word_pos());
    let _ = writeln!(header, "voxel_size={:016x}", ck.scene.voxel_size().to_bits());
    let _ = writeln!(header, "k={}", ck.scene.k());
    header.push_str("[config]\n");
    header.push_str(
        &RunConfig {
            train: ck.config.clone(),
            ..Default::default()
        }
        .to_text(),
    );
    header.push_str("[arrays]\n");
    for (name, a) in &list {
        let (dtype, rows, cols) = match a {
            Array::F64(t) => ("f64", t.rows(), t.cols()),
            Array::U32(v) => ("u32", v.len(), 1),
        };
        let _ = writeln!(header, "{name} {dtype} {rows} {cols}");
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, a) in &list {
        match a {
            Array::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Array::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IoError> {
        if self.bytes.len() - self.pos < n {
            return Err(IoError::Truncated { array: what.to_string() });
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self, what: &str) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn bad(array: &str, msg: impl Into<String>) -> IoError {
    IoError::BadArray {
        array: array.to_string(),
        msg: msg.into(),
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, IoError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| IoError::BadMagic)? != MAGIC {
        return Err(IoError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = r.u32("header length")? as usize;
    let header = std::str::from_utf8(r.take(len, "header")?).map_err(|_| bad("header", "not UTF-8"))?;
    let (meta, rest) = header
        .split_once("[config]\n")
        .ok_or_else(|| bad("header", "missing [config]"))?;
    let (config_text, manifest) = rest
        .split_once("[arrays]\n")
        .ok_or_else(|| bad("header", "missing [arrays]"))?;

    let meta: std::collections::HashMap<&str, &str> = meta.lines().filter_map(|l| l.split_once('=')).collect();
    let field = |k: &str| meta.get(k).copied().ok_or_else(|| bad("header", format!("missing {k}")));
    let parse_err = |k: &str| bad("header", format!("bad {k}"));
    let iteration: u64 = field("iteration")?.parse().map_err(|_| parse_err("iteration"))?;
    let seed_hex = field("rng_seed")?;
    if seed_hex.len() != 64 {
        return Err(parse_err("rng_seed"));
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| parse_err("rng_seed"))?;
    }
    let stream: u64 = field("rng_stream")?.parse().map_err(|_| parse_err("rng_stream"))?;
    let word_pos: u128 = field("rng_word_pos")?.parse().map_err(|_| parse_err("rng_word_pos"))?;
    let voxel_size = f64::from_bits(u64::from_str_radix(field("voxel_size")?, 16).map_err(|_| parse_err("voxel_size"))?);
    let k: usize = field("k")?.parse().map_err(|_| parse_err("k"))?;
    let config = RunConfig::parse(config_text)?.train;

    let mut f64s = std::collections::HashMap::new();
    let mut levels = None;
    let mut names = Vec::new();
    for line in manifest.lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, dtype, rows, cols] = parts[..] else {
            return Err(bad("manifest", format!("malformed line {line:?}")));
        };
        let rows: usize = rows.parse().map_err(|_| bad(name, "bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| bad(name, "bad column count"))?;
        let count = rows.checked_mul(cols).ok_or_else(|| bad(name, "shape overflows"))?;
        match dtype {
            "f64" => {
                let raw = r.take(count.checked_mul(8).ok_or_else(|| bad(name, "shape overflows"))?, name)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                f64s.insert(
                    name.to_string(),
                    Tensor::new(rows, cols, data).map_err(|e| bad(name, e.to_string()))?,
                );
            }
            "u32" => {
                let raw = r.take(count.checked_mul(4).ok_or_else(|| bad(name, "shape overflows"))?, name)?;
                levels = Some(
                    raw.chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect::<Vec<_>>(),
                );
            }
            other => return Err(bad(name, format!("unknown dtype {other}"))),
        }
        names.push(name.to_string());
    }
    if r.pos != bytes.len() {
        return Err(bad("manifest", format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut take = |name: &str| f64s.remove(name).ok_or_else(|| bad(name, "missing"));
    let scene = AnchorSet::from_parts(
        take("anchor.positions")?,
        levels.ok_or_else(|| bad("anchor.levels", "missing"))?,
        take("anchor.features")?,
        take("anchor.offset_features")?,
        take("anchor.offset_positions")?,
        take("anchor.anchor_scales")?,
        take("anchor.offset_scales")?,
        take("anchor.offset_quats")?,
        take("anchor.position_scale")?,
        voxel_size,
        k,
    )
    .map_err(|m| bad("anchor", m))?;
    let mut heads = HeadBank::zeros(k, scene.feature_dim(), config.view_dependent);
    for (head, mlp) in heads.mlps_mut() {
        for (i, layer) in mlp.layers.iter_mut().enumerate() {
            for (part, dst) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
                let name = format!("head.{head}.{i}.{part}");
                let t = take(&name)?;
                if t.shape() != dst.shape() {
                    return Err(bad(&name, format!("expected {}, got {}", dst.shape(), t.shape())));
                }
                *dst = t;
            }
        }
    }
    if let Some(extra) = f64s.keys().next() {
        return Err(bad(extra, "not expected by this model"));
    }

    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(Checkpoint {
        scene,
        heads,
        config,
        iteration,
        rng,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), IoError> {
    fs::write(path, write_checkpoint(ck)).map_err(|e| IoError::file(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    read_checkpoint(&fs::read(path).map_err(|e| IoError::file(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{voxelize_points, PointCloud};
    use rand::{RngCore, SeedableRng};

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..20).map(|i| [i as f64 * 0.3, (i % 3) as f64, 0.1]).collect();
        let scene = voxelize_points(&PointCloud::new(pts, None).unwrap(), 0.6, 4, 8, &mut rng).unwrap();
        let heads = HeadBank::new(4, 8, true, &mut rng);
        let mut state = ChaCha8Rng::seed_from_u64(9);
        state.set_stream(1);
        state.next_u64();
        Checkpoint {
            scene,
            heads,
            config: TrainConfig {
                offsets: 4,
                lambda_t: 0.1 + 0.2,
                ..Default::default()
            },
            iteration: 17,
            rng: state,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = write_checkpoint(&ck);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(write_checkpoint(&back), bytes);
        let mut a = ck.rng.clone();
        let mut b = back.rng.clone();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = write_checkpoint(&sample());
        assert!(matches!(read_checkpoint(b"NOPE"), Err(IoError::BadMagic)));
        let mut v0 = bytes.clone();
        v0[4..8].copy_from_slice(&0u32.to_le_bytes());
        let err = read_checkpoint(&v0).unwrap_err();
        assert!(matches!(err, IoError::Version { found: 0, expected: 1 }));
        assert!(err.to_string().contains("version 0"));
        match read_checkpoint(&bytes[..bytes.len() - 3]) {
            Err(IoError::Truncated { array }) => assert_eq!(array, "head.deform.3.bias"),
            other => panic!("{other:?}"),
        }
        match read_checkpoint(&bytes[..40]) {
            Err(IoError::Truncated { array }) => assert_eq!(array, "header"),
            other => panic!("{other:?}"),
        }
    }
}
