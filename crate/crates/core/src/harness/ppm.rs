//! Binary PPM ("P6", 8-bit) images as channels-first tensors in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|b| *b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(Error::Format("PPM header ends early".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("PPM {what} is not a number: {:?}", String::from_utf8_lossy(tok))))
}

/// Decodes a P6 image with maxval 255 into a `3×H×W` tensor.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P6" {
        return Err(Error::Format("not a binary PPM (magic P6 expected)".into()));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("PPM maxval must be 255, got {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height * 3;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::Format(format!("PPM payload truncated: need {n} bytes, have {}", bytes.len().saturating_sub(pos))))?;
    let plane = width * height;
    Ok(Tensor::from_fn([3, height, width], |i| {
        let (ch, p) = (i / plane.max(1), i % plane.max(1));
        raster[p * 3 + ch] as f64 / 255.0
    }))
}

/// Encodes a `3×H×W` (or `1×H×W`, replicated to grey) tensor; values are
/// clamped to `[0, 1]` and rounded half up to 8 bits. `comments` become
/// `#` lines after the magic.
pub fn encode_ppm(image: &Tensor, comments: &[String]) -> Result<Vec<u8>> {
    let (c, h, w) = match image.shape() {
        [c @ (1 | 3), h, w] => (*c, *h, *w),
        s => return Err(Error::shape("encode_ppm", s, &[3, 0, 0])),
    };
    let mut out = b"P6\n".to_vec();
    for line in comments {
        for part in line.lines() {
            out.extend_from_slice(format!("# {part}\n").as_bytes());
        }
    }
    out.extend_from_slice(format!("{w} {h}\n255\n").as_bytes());
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..3 {
            let v = image.data()[(if c == 1 { 0 } else { ch }) * plane + p];
            out.push((v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8);
        }
    }
    Ok(out)
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(image: &Tensor, path: &Path, comments: &[String]) -> Result<()> {
    std::fs::write(path, encode_ppm(image, comments)?).map_err(|e| Error::io(path, e))
}
