// SPDX-License-Identifier: Apache-2.0
//! Binary greyscale PGM (`P5`, maxval 255).

use litho_cfno::Grid;

use crate::error::{IoError, Result};

pub fn encode_pgm(g: &Grid<u8>) -> Vec<u8> {
    let (h, w) = g.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(g.as_slice());
    out
}

/// Binary image: 1 becomes 255.
pub fn encode_binary(g: &Grid<u8>) -> Vec<u8> {
    encode_pgm(&g.map(|&v| if v != 0 { 255 } else { 0 }))
}

/// Values in `[0, 1]` scaled to `0..=255`.
pub fn encode_unit(g: &Grid<f64>) -> Vec<u8> {
    encode_pgm(&g.map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
}

fn token<'a>(data: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(IoError::Format("truncated PGM header".into()));
    }
    Ok(&data[start..*pos])
}

fn number(data: &[u8], pos: &mut usize) -> Result<usize> {
    let t = token(data, pos)?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            IoError::Format(format!(
                "bad PGM header field `{}`",
                String::from_utf8_lossy(t)
            ))
        })
}

pub fn decode_pgm(data: &[u8]) -> Result<Grid<u8>> {
    let mut pos = 0;
    if token(data, &mut pos)? != b"P5" {
        return Err(IoError::Format("not a binary PGM (P5)".into()));
    }
    let w = number(data, &mut pos)?;
    let h = number(data, &mut pos)?;
    let maxval = number(data, &mut pos)?;
    if maxval != 255 {
        return Err(IoError::Format(format!("unsupported PGM maxval {maxval}")));
    }
    pos += 1;
    let payload = data.get(pos..).unwrap_or(&[]);
    if payload.len() != w * h {
        return Err(IoError::Format(format!(
            "PGM payload has {} bytes, expected {}",
            payload.len(),
            w * h
        )));
    }
    Ok(Grid::from_vec(h, w, payload.to_vec())?)
}

/// Reads a binary image; any non-zero grey level counts as foreground.
pub fn decode_binary(data: &[u8]) -> Result<Grid<u8>> {
    Ok(decode_pgm(data)?.map(|&v| u8::from(v >= 128)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_foreground_value() {
        let g = Grid::from_vec(2, 3, vec![0, 1, 0, 1, 1, 0]).unwrap();
        let bytes = encode_binary(&g);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 255, 0, 255, 255, 0]);
        assert_eq!(decode_binary(&bytes).unwrap(), g);
    }

    #[test]
    fn comments_in_header() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        assert_eq!(decode_pgm(&bytes).unwrap().as_slice(), &[7, 9]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n2").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }
}
