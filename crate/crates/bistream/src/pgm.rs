//! Binary greyscale PGM (P5) images.

use std::path::Path;

use bistream_core::{Error, Tensor};

use crate::error::StoreResult;
use crate::fsutil;

/// Encode an `[H, W]` map with values in `[0, 1]` (clamped) as 8-bit P5.
pub fn encode(map: &Tensor<f32>) -> Result<Vec<u8>, Error> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::Shape {
            op: "pgm",
            expected: "[H, W]".into(),
            actual: format!("{s:?}"),
        });
    }
    let mut out = format!("P5\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(map.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write(path: &Path, map: &Tensor<f32>) -> StoreResult<()> {
    fsutil::write_atomic(path, &encode(map)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_pixels() {
        let m = Tensor::new(&[1, 3], vec![0.0, 0.5, 2.0]).unwrap();
        let b = encode(&m).unwrap();
        assert_eq!(&b[..11], b"P5\n3 1\n255\n");
        assert_eq!(&b[11..], &[0, 128, 255]);
    }
}
