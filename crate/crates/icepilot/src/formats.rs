//! On-disk formats: scene JSON, the binary slice format with its JSON
//! sidecar, and grayscale PNG encoding for the wire.
//!
//! Slice file layout: the 8-byte magic `ICESLC1\n`, width and height as
//! `u32` LE, then `width·height` intensities as `f32` LE in row-major order
//! (row 0 at the apex).

use std::fs;
use std::path::{Path, PathBuf};

use icepilot_core::fan::{SliceImage, SliceMeta};
use icepilot_core::phantom::AnatomyScene;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::Error;

pub const SLICE_MAGIC: &[u8; 8] = b"ICESLC1\n";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_scene(path: &Path, scene: &AnatomyScene) -> Result<(), Error> {
    write_json(path, scene)
}

pub fn load_scene(path: &Path) -> Result<AnatomyScene, Error> {
    read_json(path)
}

pub fn encode_slice(image: &SliceImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + image.intensity.len() * 4);
    out.extend_from_slice(SLICE_MAGIC);
    out.extend_from_slice(&image.width.to_le_bytes());
    out.extend_from_slice(&image.height.to_le_bytes());
    for v in &image.intensity {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses the binary body; `meta` comes from the sidecar.
pub fn decode_slice(bytes: &[u8], meta: SliceMeta) -> Result<SliceImage, String> {
    if bytes.len() < 16 || &bytes[..8] != SLICE_MAGIC {
        return Err("not a slice file (bad magic)".into());
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let height = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
    let n = width as usize * height as usize;
    let body = &bytes[16..];
    if body.len() != n * 4 {
        return Err(format!(
            "expected {} intensity bytes, found {}",
            n * 4,
            body.len()
        ));
    }
    let intensity = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(SliceImage {
        width,
        height,
        intensity,
        labels: None,
        meta,
    })
}

/// Sidecar path: the slice path with a `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the slice body and a sidecar holding `sidecar` (which should embed
/// the slice metadata).
pub fn write_slice<T: Serialize>(
    path: &Path,
    image: &SliceImage,
    sidecar: &T,
) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_slice(image)).map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), sidecar)
}

pub fn read_slice(path: &Path, meta: SliceMeta) -> Result<SliceImage, Error> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_slice(&bytes, meta).map_err(|r| Error::format(path, r))
}

/// 8-bit grayscale PNG with intensities clamped to [0, 1].
pub fn encode_png(image: &SliceImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width, image.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        let pixels: Vec<u8> = image
            .intensity
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        writer
            .write_image_data(&pixels)
            .expect("in-memory PNG body");
    }
    out
}

/// Decodes an 8-bit grayscale PNG to `(width, height, pixels)`.
pub fn decode_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), String> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("image too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(format!(
            "unexpected PNG format {:?}/{:?}",
            info.color_type, info.bit_depth
        ));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use icepilot_core::fan::{render_home_pose, FanParams};
    use icepilot_core::phantom::template_scene;
    use icepilot_core::se3::RigidTransform;

    fn slice() -> SliceImage {
        let fan = FanParams {
            width: 40,
            height: 30,
            ..FanParams::default()
        };
        let mut s = render_home_pose(&template_scene(), &RigidTransform::identity(), &fan, 4);
        s.labels = None;
        s
    }

    #[test]
    fn slice_round_trip() {
        let s = slice();
        let back = decode_slice(&encode_slice(&s), s.meta.clone()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn slice_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = slice();
        let path = dir.path().join("a/b.slc");
        write_slice(&path, &s, &s.meta).unwrap();
        let meta: SliceMeta = read_json(&sidecar_path(&path)).unwrap();
        assert_eq!(read_slice(&path, meta).unwrap(), s);
    }

    #[test]
    fn corrupt_slices_are_rejected() {
        let s = slice();
        let mut bytes = encode_slice(&s);
        assert!(decode_slice(&bytes[..10], s.meta.clone()).is_err());
        bytes.pop();
        assert!(decode_slice(&bytes, s.meta.clone()).is_err());
        bytes[0] = b'X';
        assert!(decode_slice(&bytes, s.meta.clone()).is_err());
    }

    #[test]
    fn png_round_trip_quantizes() {
        let s = slice();
        let (w, h, px) = decode_png(&encode_png(&s)).unwrap();
        assert_eq!((w, h), (40, 30));
        for (p, v) in px.iter().zip(&s.intensity) {
            assert!((f32::from(*p) / 255.0 - v.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn scene_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        let scene = template_scene();
        save_scene(&path, &scene).unwrap();
        assert_eq!(load_scene(&path).unwrap(), scene);
    }
}
