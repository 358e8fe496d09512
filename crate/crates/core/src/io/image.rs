//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_start: usize,
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<(usize, usize)> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(start, format!("expected {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("ascii digits")
        .parse()
        .map(|v| (v, start))
        .map_err(|_| Error::parse(start, format!("{what} out of range")))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::parse(0, "expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let (width, at_w) = header_number(bytes, &mut pos, "width")?;
    let (height, at_h) = header_number(bytes, &mut pos, "height")?;
    let (maxval, at) = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::parse(
            at,
            format!("maxval {maxval} unsupported, need 255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(
            if width == 0 { at_w } else { at_h },
            "zero image extent",
        ));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::parse(pos, "expected whitespace after maxval")),
    }
    Ok(Header {
        channels,
        width,
        height,
        data_start: pos,
    })
}

/// Decodes to a `(1, c, h, w)` tensor with values in `[0, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes)?;
    let plane = h.width * h.height;
    let need = plane * h.channels;
    let payload = &bytes[h.data_start..];
    if payload.len() < need {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload, {} of {need} bytes", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(Error::parse(
            h.data_start + need,
            "trailing bytes after payload",
        ));
    }
    let mut data = vec![0.0; need];
    for (i, &b) in payload.iter().enumerate() {
        let (pix, ch) = (i / h.channels, i % h.channels);
        data[ch * plane + pix] = b as f64 / 255.0;
    }
    Tensor::from_vec(Shape::new(1, h.channels, h.height, h.width), data)
}

/// Encodes a `(1, 1, h, w)` or `(1, 3, h, w)` tensor, clamping to `[0, 1]`
/// and quantizing with `round(v * 255)`.
pub fn encode_image(t: &Tensor) -> Result<Vec<u8>> {
    let s = t.shape();
    let magic = match (s.n, s.c) {
        (1, 1) => "P5",
        (1, 3) => "P6",
        _ => return Err(Error::dimension("encode_image", "(1, 1|3, h, w)", s)),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", s.w, s.h).into_bytes();
    let plane = s.plane();
    for pix in 0..plane {
        for ch in 0..s.c {
            let v = t.plane(0, ch)[pix];
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_image(&read_bytes(path.as_ref())?)
}

pub fn write_image(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_image(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_p5() {
        let t = decode_image(b"P5\n2 2\n255\n\0\0\0\0").unwrap();
        assert_eq!(t, Tensor::zeros(Shape::new(1, 1, 2, 2)));
    }

    #[test]
    fn p6_channel_order() {
        let t = decode_image(b"P6 1 1 255\n\xff\x80\x00").unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 1, 1));
        assert_eq!(t.as_slice(), &[1.0, 128.0 / 255.0, 0.0]);
    }

    #[test]
    fn comments_in_header() {
        let t = decode_image(b"P5 # made by hand\n3 # width\n1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(t.shape(), Shape::new(1, 1, 1, 3));
    }

    #[test]
    fn round_trip_lossless() {
        let bytes: Vec<u8> = (0..=255u8).collect();
        let mut file = b"P6\n16 16\n85\n".to_vec();
        assert!(decode_image(&file).is_err());
        file = b"P5\n16 16\n255\n".to_vec();
        file.extend(&bytes);
        let t = decode_image(&file).unwrap();
        assert_eq!(encode_image(&t).unwrap(), file);
    }

    #[test]
    fn quantization_clamps() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![-0.5, 0.5, 1.7, 0.999]).unwrap();
        let b = encode_image(&t).unwrap();
        assert_eq!(&b[b.len() - 4..], &[0, 128, 255, 255]);
    }

    #[test]
    fn errors_carry_offsets() {
        assert!(matches!(
            decode_image(b"P3\n1 1\n255\n"),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(matches!(
            decode_image(b"P5\n1 x\n255\n"),
            Err(Error::Parse { offset: 5, .. })
        ));
        assert!(matches!(
            decode_image(b"P5\n2 2\n255\n\0\0"),
            Err(Error::Parse { offset: 13, .. })
        ));
        assert!(matches!(
            decode_image(b"P5\n1 1\n65535\n\0\0"),
            Err(Error::Parse { offset: 7, .. })
        ));
        assert!(encode_image(&Tensor::zeros(Shape::new(1, 2, 1, 1))).is_err());
    }
}
