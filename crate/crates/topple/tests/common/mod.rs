#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;

use topple::core::dataset::{sample_study_set, ManifestRecord, Split};
use topple::core::learn::INPUT_SIDE;
use topple::core::render::Image;
use topple::core::scene::GroupTag;
use topple::core::stability::StabilityLabel;
use topple::formats;
use topple::pipeline::{Dataset, MANIFEST, STUDY};

/// A hand-made dataset: 12 scenes per listed group, half Train and half
/// Test, alternating labels, tiny distinct images and constant tensors.
pub fn fake_dataset(dir: &Path, groups: &[GroupTag]) -> Dataset {
    let mut records = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        for i in 0..12 {
            let id = format!("{g}-{i:04}");
            let mut img = Image::filled(8, 8, [gi as u8 * 10, i as u8 * 20, 7]);
            img.set(0, 0, [255, 255, 255]);
            let png = formats::encode_png(&img);
            let tensor = formats::encode_tensor(&vec![i as f32 / 12.0; INPUT_SIDE * INPUT_SIDE]);
            let image_path = format!("images/{}.png", formats::sha256_hex(&png));
            let tensor_path = format!("tensors/{}.f32", formats::sha256_hex(&tensor));
            formats::write_atomic(&dir.join(&image_path), &png).unwrap();
            formats::write_atomic(&dir.join(&tensor_path), &tensor).unwrap();
            records.push(ManifestRecord {
                scene_id: id,
                group: *g,
                image_path,
                tensor_path,
                label: if i % 2 == 0 {
                    StabilityLabel::Stable
                } else {
                    StabilityLabel::Unstable
                },
                split: if i < 6 { Split::Train } else { Split::Test },
            });
        }
    }
    records.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    if groups.len() == 16 {
        let study = sample_study_set(&records, 0).unwrap();
        formats::write_json(&dir.join(STUDY), &study).unwrap();
    }
    formats::write_jsonl(&dir.join(MANIFEST), &records).unwrap();
    Dataset::open(dir).unwrap()
}

pub struct Response {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Response {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| {
            panic!("{e}: {}", String::from_utf8_lossy(&self.body));
        })
    }
}

/// Minimal HTTP/1.1 client: one request per connection.
pub fn request(addr: SocketAddr, method: &str, path: &str, body: Option<&str>) -> Response {
    let mut s = TcpStream::connect(addr).unwrap();
    let body = body.unwrap_or("");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\
         Content-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).unwrap();
    let split = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .expect("header terminator");
    let head = String::from_utf8_lossy(&raw[..split]).to_string();
    let mut lines = head.lines();
    let status = lines.next().unwrap().split(' ').nth(1).unwrap().parse().unwrap();
    let mut content_type = String::new();
    let mut chunked = false;
    for l in lines {
        let (k, v) = l.split_once(':').unwrap();
        match k.to_ascii_lowercase().as_str() {
            "content-type" => content_type = v.trim().to_string(),
            "transfer-encoding" => chunked = v.trim().eq_ignore_ascii_case("chunked"),
            _ => {}
        }
    }
    let mut body = raw[split + 4..].to_vec();
    if chunked {
        body = dechunk(&body);
    }
    Response {
        status,
        content_type,
        body,
    }
}

fn dechunk(mut b: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = b.windows(2).position(|w| w == b"\r\n").unwrap();
        let n = usize::from_str_radix(std::str::from_utf8(&b[..eol]).unwrap().trim(), 16).unwrap();
        b = &b[eol + 2..];
        if n == 0 {
            return out;
        }
        out.extend_from_slice(&b[..n]);
        b = &b[n + 2..];
    }
}
