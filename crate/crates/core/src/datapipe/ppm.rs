//! Binary PPM (`P6`, maxval 255).

use thiserror::Error;

use super::Image;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PpmError {
    #[error("unsupported format: magic {0:?}, expected \"P6\"")]
    WrongMagic(String),
    #[error("unsupported maxval {0}, expected 255")]
    Maxval(u32),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated pixel data: header promises {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, PpmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PpmError::Header(format!("missing or invalid {what}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, PpmError> {
    let magic = bytes.get(..2).unwrap_or(bytes);
    if magic != b"P6" {
        return Err(PpmError::WrongMagic(String::from_utf8_lossy(magic).into_owned()));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PpmError::Header(format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(PpmError::Maxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PpmError::Header("no whitespace after maxval".into()));
    }
    let payload = &bytes[cur.pos + 1..];
    let expected = width * height * 3;
    if payload.len() < expected {
        return Err(PpmError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    Ok(Image {
        width,
        height,
        pixels: payload[..expected].to_vec(),
    })
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_pixel_image() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
        assert_eq!(img.pixel(1, 0), [0, 0, 255]);
    }

    #[test]
    fn rejects_other_magic_and_maxval() {
        assert_eq!(decode_ppm(b"P5\n1 1\n255\n\0"), Err(PpmError::WrongMagic("P5".into())));
        assert_eq!(
            decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"),
            Err(PpmError::Maxval(65535))
        );
        assert!(matches!(decode_ppm(b"P6\n1"), Err(PpmError::Header(_))));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0; 9]);
        assert_eq!(
            decode_ppm(&bytes),
            Err(PpmError::Truncated {
                expected: 12,
                actual: 9
            })
        );
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P6 # made by hand\n1 # w\n1\n255\n\x01\x02\x03";
        assert_eq!(decode_ppm(bytes).unwrap().pixels, vec![1, 2, 3]);
    }

    proptest! {
        #[test]
        fn decode_encode_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let pixels: Vec<u8> = (0..w * h * 3).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
            let img = Image { width: w, height: h, pixels };
            let once = decode_ppm(&encode_ppm(&img)).unwrap();
            prop_assert_eq!(&once, &img);
            prop_assert_eq!(decode_ppm(&encode_ppm(&once)).unwrap(), img);
        }
    }
}
