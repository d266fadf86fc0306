//! Readers and writers for every file the workbench produces.
//!
//! Floats go through `serde_json` (shortest round-trip representation) or
//! Rust's `Display`, which is also shortest round-trip, so re-running a step
//! reproduces the same bytes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use topple_core::learn::{EpochStats, ModelParams, LAYOUT};
use topple_core::physics::Trajectory;
use topple_core::render::Image;

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 5] = b"SLNN1";
pub const LOSS_CSV_HEADER: &str = "epoch,loss,train_acc";
pub const TRAJECTORY_CSV_HEADER: &str =
    "block,start_x,start_y,start_z,end_x,end_y,end_z,displacement";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Write through a temporary sibling and rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{}.{n}.tmp", std::process::id()));
    let tmp = path.with_file_name(name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializing plain data");
    v.push(b'\n');
    v
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_pretty(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.into(),
        line: source.line(),
        source,
    })
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("serializing plain data");
        out.push(b'\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, &to_jsonl(items))
}

pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.into(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(path, &read_bytes(path)?)
}

/// Raw little-endian `f32` values.
pub fn encode_tensor(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_tensor(path: &Path, bytes: &[u8], len: usize) -> Result<Vec<f32>> {
    if bytes.len() != 4 * len {
        return Err(Error::format(
            path,
            format!("tensor has {} bytes, expected {}", bytes.len(), 4 * len),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// 8-bit RGB PNG.
pub fn encode_png(img: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("writing to memory");
        w.write_image_data(&img.pixels).expect("writing to memory");
    }
    out
}

pub fn decode_png(path: &Path, bytes: &[u8]) -> Result<Image> {
    let bad = |e: png::DecodingError| Error::format(path, e.to_string());
    let mut reader = png::Decoder::new(std::io::Cursor::new(bytes))
        .read_info()
        .map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "expected 8-bit RGB"));
    }
    buf.truncate(info.buffer_size());
    Ok(Image {
        width: info.width as usize,
        height: info.height as usize,
        pixels: buf,
    })
}

/// Binary PPM (P6).
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// `SLNN1`, block count, then per block: name, shape and little-endian
/// `f64` values. All integers are little-endian `u32`.
pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    let mut out = MODEL_MAGIC.to_vec();
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put(&mut out, LAYOUT.len());
    for ((name, shape), block) in LAYOUT.iter().zip(params.blocks()) {
        put(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put(&mut out, shape.len());
        for &d in shape.iter() {
            put(&mut out, d);
        }
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(path: &Path, bytes: &[u8]) -> Result<ModelParams> {
    let bad = |msg: &str| Error::format(path, msg);
    let mut rest = bytes
        .strip_prefix(MODEL_MAGIC.as_slice())
        .ok_or_else(|| bad("missing SLNN1 magic"))?;
    let mut take = |n: usize| -> Result<&[u8]> {
        if rest.len() < n {
            return Err(bad("truncated model file"));
        }
        let (head, tail) = rest.split_at(n);
        rest = tail;
        Ok(head)
    };
    let mut params = ModelParams::zeros();
    let count = u32_le(take(4)?) as usize;
    if count != LAYOUT.len() {
        return Err(bad("unexpected number of parameter blocks"));
    }
    for ((name, shape), block) in LAYOUT.iter().zip(params.blocks_mut()) {
        let n = u32_le(take(4)?) as usize;
        if take(n)? != name.as_bytes() {
            return Err(Error::format(path, format!("expected block {name}")));
        }
        let dims = u32_le(take(4)?) as usize;
        let mut got = Vec::with_capacity(dims);
        for _ in 0..dims {
            got.push(u32_le(take(4)?) as usize);
        }
        if got != *shape {
            return Err(Error::format(
                path,
                format!("block {name} has shape {got:?}, expected {shape:?}"),
            ));
        }
        for v in block.iter_mut() {
            let b = take(8)?;
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    if !rest.is_empty() {
        return Err(bad("trailing bytes after the last block"));
    }
    Ok(params)
}

fn u32_le(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

pub fn loss_csv(curve: &[EpochStats]) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "{LOSS_CSV_HEADER}").unwrap();
    for s in curve {
        writeln!(out, "{},{},{}", s.epoch, s.loss, s.train_acc).unwrap();
    }
    out
}

/// Start and end pose of every block, with the displacement used for the
/// stability label.
pub fn trajectory_csv(traj: &Trajectory) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "{TRAJECTORY_CSV_HEADER}").unwrap();
    if let (Some(s), Some(e), Some(d)) = (&traj.start, &traj.end, traj.displacements()) {
        for (i, ((a, b), d)) in s.iter().zip(e).zip(d).enumerate() {
            let (p, q) = (a.position, b.position);
            writeln!(out, "{i},{},{},{},{},{},{},{d}", p.x, p.y, p.z, q.x, q.y, q.z).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let v = vec![0.0f32, 1.0, 0.25, 60.0 / 255.0];
        let b = encode_tensor(&v);
        assert_eq!(b.len(), 16);
        assert_eq!(&b[4..8], &1.0f32.to_le_bytes());
        assert_eq!(decode_tensor(Path::new("t"), &b, 4).unwrap(), v);
        assert!(decode_tensor(Path::new("t"), &b, 5).is_err());
    }

    #[test]
    fn model_round_trip_and_corruption() {
        let p = ModelParams::init(3);
        let bytes = encode_model(&p);
        assert_eq!(&bytes[..5], b"SLNN1");
        assert_eq!(decode_model(Path::new("m"), &bytes).unwrap(), p);
        assert!(decode_model(Path::new("m"), &bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(Path::new("m"), &extra).is_err());
        assert!(decode_model(Path::new("m"), b"SLNN2").is_err());
    }

    #[test]
    fn png_round_trip() {
        let mut img = Image::filled(5, 3, [60, 60, 60]);
        img.set(4, 2, [200, 170, 120]);
        let bytes = encode_png(&img);
        assert_eq!(decode_png(Path::new("i"), &bytes).unwrap(), img);
        assert_eq!(bytes, encode_png(&img));
    }

    #[test]
    fn loss_csv_shape() {
        let curve = [EpochStats {
            epoch: 1,
            loss: 0.5,
            train_acc: 0.75,
        }];
        assert_eq!(
            String::from_utf8(loss_csv(&curve)).unwrap(),
            "epoch,loss,train_acc\n1,0.5,0.75\n"
        );
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
