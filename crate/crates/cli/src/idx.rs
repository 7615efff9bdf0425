//! IDX file ingestion (the MNIST container format).
//!
//! Magic 0x00000803 marks a rank-3 unsigned-byte image file whose pixels
//! are scaled to `[0, 1]`; magic 0x00000801 marks a rank-1 label file whose
//! bytes become integer-valued floats. All header fields are big-endian.

use crate::CliError;
use s2fp8_core::Tensor;
use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

pub fn load_idx(path: &Path) -> Result<Tensor, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    parse_idx(&bytes).map_err(|e| match e {
        CliError::Io(msg) => CliError::io(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_idx(bytes: &[u8]) -> Result<Tensor, CliError> {
    let magic = read_u32_be(bytes, 0)?;
    let rank = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => {
            return Err(CliError::io(format!(
                "bad magic {other:#010x} at offset 0 (expected {IMAGES_MAGIC:#010x} \
                 for images or {LABELS_MAGIC:#010x} for labels)"
            )))
        }
    };
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for i in 0..rank {
        let d = read_u32_be(bytes, 4 + 4 * i)? as usize;
        if d == 0 {
            return Err(CliError::io(format!("zero dimension at offset {}", 4 + 4 * i)));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| CliError::io("dimension product overflows".to_string()))?;
        shape.push(d);
    }
    let payload_at = 4 + 4 * rank;
    let payload = bytes
        .get(payload_at..)
        .filter(|p| p.len() >= count)
        .ok_or_else(|| {
            CliError::io(format!(
                "truncated payload: expected {count} bytes from offset {payload_at}, file has {}",
                bytes.len().saturating_sub(payload_at)
            ))
        })?;
    if payload.len() != count {
        return Err(CliError::io(format!(
            "trailing bytes: expected exactly {count} payload bytes from offset {payload_at}"
        )));
    }
    let data: Vec<f32> = if magic == IMAGES_MAGIC {
        payload.iter().map(|&b| b as f32 / 255.0).collect()
    } else {
        payload.iter().map(|&b| b as f32).collect()
    };
    Ok(Tensor::new(shape, data).expect("shape/data sizes agree"))
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32, CliError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| CliError::io(format!("truncated at offset {offset}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    fn image_file(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        out.extend_from_slice(&n.to_be_bytes());
        out.extend_from_slice(&rows.to_be_bytes());
        out.extend_from_slice(&cols.to_be_bytes());
        out.extend_from_slice(pixels);
        out
    }

    #[test]
    fn parses_labels() {
        let t = parse_idx(&label_file(&[1, 2, 3])).unwrap();
        assert_eq!(t.shape(), &[3]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn scales_image_bytes() {
        let t = parse_idx(&image_file(1, 2, 2, &[0, 128, 255, 51])).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data()[2], 1.0);
        assert!((t.data()[1] - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = label_file(&[1]);
        bytes[3] = 0x99;
        let err = parse_idx(&bytes).unwrap_err();
        assert!(err.to_string().contains("offset 0"), "{err}");
    }

    #[test]
    fn rejects_truncation_and_trailing() {
        let bytes = label_file(&[1, 2, 3]);
        let err = parse_idx(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let mut extra = bytes.clone();
        extra.push(9);
        let err = parse_idx(&extra).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn rejects_dim_overflow() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        let err = parse_idx(&bytes).unwrap_err();
        assert!(err.to_string().contains("overflow"), "{err}");
    }
}
