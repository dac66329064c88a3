//! Binary clip format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AMDM"
//! 4       4     version (u32 LE, 1)
//! 8       4     frame count F (u32 LE)
//! 12      4     feature dimension D (u32 LE, 263)
//! 16      4*F*D samples, f32 LE, frame-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::ClipError;
use crate::motion::{MotionClip, FEATURE_DIM};

pub const CLIP_MAGIC: [u8; 4] = *b"AMDM";
pub const CLIP_VERSION: u32 = 1;
pub const CLIP_HEADER_LEN: usize = 16;

pub fn encode_clip(clip: &MotionClip) -> Vec<u8> {
    let (f, d) = clip.frames().dim();
    let mut out = Vec::with_capacity(CLIP_HEADER_LEN + 4 * f * d);
    out.extend_from_slice(&CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in clip.frames().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Decodes one clip from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_clip_prefix(bytes: &[u8], fps: f32) -> Result<(MotionClip, usize), ClipError> {
    if bytes.len() < CLIP_HEADER_LEN {
        return Err(ClipError::Truncated {
            expected: CLIP_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != CLIP_MAGIC {
        return Err(ClipError::BadMagic);
    }
    let version = u32_at(bytes, 4);
    if version != CLIP_VERSION {
        return Err(ClipError::Version(version));
    }
    let f = u32_at(bytes, 8) as usize;
    let d = u32_at(bytes, 12) as usize;
    if d != FEATURE_DIM {
        return Err(ClipError::Dimension { found: d });
    }
    let need = 4 * f * d;
    let body = &bytes[CLIP_HEADER_LEN..];
    if body.len() < need {
        return Err(ClipError::Truncated {
            expected: need,
            found: body.len(),
        });
    }
    let samples: Vec<f32> = body[..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    let frames = Array2::from_shape_vec((f, d), samples).expect("sample count matches F*D");
    Ok((MotionClip::new(frames, fps), CLIP_HEADER_LEN + need))
}

/// Decodes a buffer holding exactly one clip.
pub fn decode_clip(bytes: &[u8], fps: f32) -> Result<MotionClip, ClipError> {
    let (clip, used) = decode_clip_prefix(bytes, fps)?;
    if used != bytes.len() {
        return Err(ClipError::Io(format!(
            "{} trailing bytes after clip",
            bytes.len() - used
        )));
    }
    Ok(clip)
}

pub fn write_clip(mut w: impl Write, clip: &MotionClip) -> Result<(), ClipError> {
    w.write_all(&encode_clip(clip))?;
    Ok(())
}

pub fn read_clip(mut r: impl Read, fps: f32) -> Result<MotionClip, ClipError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_clip(&bytes, fps)
}

pub fn save_clip(path: &Path, clip: &MotionClip) -> Result<(), ClipError> {
    fs::write(path, encode_clip(clip))?;
    Ok(())
}

pub fn load_clip(path: &Path, fps: f32) -> Result<MotionClip, ClipError> {
    decode_clip(&fs::read(path)?, fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            n in 1usize..6,
            seed in any::<u64>(),
        ) {
            let noise = crate::rng::standard_normal(&mut crate::rng::seeded(seed), n, FEATURE_DIM);
            let clip = MotionClip::new(noise, 20.0);
            let back = decode_clip(&encode_clip(&clip), 20.0).unwrap();
            prop_assert_eq!(back, clip);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_clip(&MotionClip::zeros(2, 20.0));
        assert_eq!(&bytes[..4], b"AMDM");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(u32_at(&bytes, 8), 2);
        assert_eq!(u32_at(&bytes, 12), 263);
        assert_eq!(bytes.len(), 16 + 2 * 263 * 4);
    }

    #[test]
    fn reader_rejects_bad_headers() {
        let good = encode_clip(&MotionClip::zeros(2, 20.0));
        let mut magic = good.clone();
        magic[0] = b'X';
        assert_eq!(decode_clip(&magic, 20.0), Err(ClipError::BadMagic));
        let mut version = good.clone();
        version[4] = 2;
        assert_eq!(decode_clip(&version, 20.0), Err(ClipError::Version(2)));
        let mut dim = good.clone();
        dim[12..16].copy_from_slice(&262u32.to_le_bytes());
        assert_eq!(
            decode_clip(&dim, 20.0),
            Err(ClipError::Dimension { found: 262 })
        );
        assert!(matches!(
            decode_clip(&good[..good.len() - 3], 20.0),
            Err(ClipError::Truncated { .. })
        ));
    }
}
