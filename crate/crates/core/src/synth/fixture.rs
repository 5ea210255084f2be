//! Binary scene fixtures.
//!
//! ```text
//! "SRRM" | u16 version | u32 width | u32 height | u32 labels | u32 class
//! | f64 × (h·w·l)  score, pixel-major
//! | f64 × (3·h·w)  rgb, channel-major
//! | u32 × (h·w)    clean labels, row-major
//! | u8  × (h·w)    corruption mask (0 or 1)
//! | u32            CRC-32 of every preceding byte
//! ```
//!
//! All values little-endian.

use std::fs;
use std::path::Path;

use super::{RgbImage, SyntheticScene};
use crate::error::{Error, FixtureError, Result};
use crate::score::{LabelMap, ScoreTensor};

pub const FIXTURE_MAGIC: [u8; 4] = *b"SRRM";
pub const FIXTURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4;

pub fn encode_fixture(scene: &SyntheticScene) -> Vec<u8> {
    let (w, h, l) = (scene.score.width(), scene.score.height(), scene.score.labels());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (w * h * l + 3 * w * h) + 5 * w * h + 4);
    out.extend_from_slice(&FIXTURE_MAGIC);
    out.extend_from_slice(&FIXTURE_VERSION.to_le_bytes());
    for v in [w, h, l, scene.label] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in scene.score.data().iter().chain(scene.rgb.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &c in scene.clean_labels.as_slice() {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out.extend(scene.corruption_mask.iter().map(|&m| m as u8));
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Payload size for the given dimensions, or `None` on overflow.
fn body_len(w: usize, h: usize, l: usize) -> Option<usize> {
    let px = w.checked_mul(h)?;
    let floats = px.checked_mul(l)?.checked_add(px.checked_mul(3)?)?;
    floats
        .checked_mul(8)?
        .checked_add(px.checked_mul(5)?)?
        .checked_add(HEADER_LEN + 4)
}

pub fn decode_fixture(bytes: &[u8]) -> std::result::Result<SyntheticScene, FixtureError> {
    let truncated = |needed| FixtureError::Truncated {
        needed,
        available: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_LEN));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != FIXTURE_MAGIC {
        return Err(FixtureError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FIXTURE_VERSION {
        return Err(FixtureError::UnsupportedVersion(version));
    }
    let w = u32_at(bytes, 6) as usize;
    let h = u32_at(bytes, 10) as usize;
    let l = u32_at(bytes, 14) as usize;
    let label = u32_at(bytes, 18) as usize;
    if w == 0 || h == 0 || l == 0 {
        return Err(FixtureError::Invalid(format!("zero dimension {w}x{h}x{l}")));
    }
    let total = body_len(w, h, l)
        .ok_or_else(|| FixtureError::Invalid(format!("dimensions {w}x{h}x{l} overflow")))?;
    if bytes.len() < total {
        return Err(truncated(total));
    }
    if bytes.len() > total {
        return Err(FixtureError::TrailingBytes(bytes.len() - total));
    }
    let stored = u32_at(bytes, total - 4);
    let computed = crc32fast::hash(&bytes[..total - 4]);
    if stored != computed {
        return Err(FixtureError::Checksum { stored, computed });
    }

    let px = w * h;
    let mut at = HEADER_LEN;
    let mut floats = |n: usize| {
        let v: Vec<f64> = bytes[at..at + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        at += 8 * n;
        v
    };
    let score = floats(px * l);
    let rgb = floats(3 * px);
    let mut at = HEADER_LEN + 8 * (px * l + 3 * px);
    let clean: Vec<usize> = (0..px).map(|i| u32_at(bytes, at + 4 * i) as usize).collect();
    at += 4 * px;
    let mut mask = Vec::with_capacity(px);
    for &b in &bytes[at..at + px] {
        match b {
            0 => mask.push(false),
            1 => mask.push(true),
            _ => return Err(FixtureError::Invalid(format!("mask byte {b}"))),
        }
    }
    let invalid = |e: Error| FixtureError::Invalid(e.to_string());
    let score = ScoreTensor::new(w, h, l, score).map_err(invalid)?;
    let scene = SyntheticScene {
        score,
        rgb: RgbImage::new(w, h, rgb).map_err(invalid)?,
        label,
        clean_labels: LabelMap::new(w, h, clean).map_err(invalid)?,
        corruption_mask: mask,
    };
    if scene.clean_labels.as_slice().iter().any(|&c| c >= l) {
        return Err(FixtureError::Invalid(format!("clean label outside 0..{l}")));
    }
    scene.validate().map_err(invalid)?;
    Ok(scene)
}

pub fn write_fixture(scene: &SyntheticScene, path: &Path) -> Result<()> {
    fs::write(path, encode_fixture(scene)).map_err(|e| Error::io(path, e))
}

pub fn read_fixture(path: &Path) -> Result<SyntheticScene> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_fixture(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneRecipe};

    fn sample() -> SyntheticScene {
        generate_scene(
            &SceneRecipe {
                width: 16,
                height: 16,
                margin: 2,
                max_cells: 2,
                ..SceneRecipe::default()
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let s = sample();
        let bytes = encode_fixture(&s);
        let back = decode_fixture(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_fixture(&back), bytes);
    }

    #[test]
    fn malformed_inputs_give_typed_errors() {
        let bytes = encode_fixture(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_fixture(&bad), Err(FixtureError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(decode_fixture(&bad), Err(FixtureError::UnsupportedVersion(9)));
        assert!(matches!(
            decode_fixture(&bytes[..bytes.len() - 1]),
            Err(FixtureError::Truncated { .. })
        ));
        assert!(matches!(decode_fixture(&bytes[..10]), Err(FixtureError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad.push(0);
        assert_eq!(decode_fixture(&bad), Err(FixtureError::TrailingBytes(1)));
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(matches!(decode_fixture(&bad), Err(FixtureError::Checksum { .. })));
        let mut bad = bytes.clone();
        bad[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        bad[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_fixture(&bad).is_err());
        assert!(decode_fixture(&[]).is_err());
    }
}
