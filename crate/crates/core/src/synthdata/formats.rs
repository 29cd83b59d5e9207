//! Binary PPM (P6), PGM (P5) and PFM (`Pf`, grayscale) codecs.

use std::fs;
use std::path::Path;

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::mask::Mask;

/// Splits off `n` whitespace-separated header tokens (skipping `#` comments)
/// plus the single whitespace byte that ends the header.
fn header<'a>(bytes: &'a [u8], n: usize, path: &Path) -> Result<(Vec<&'a str>, &'a [u8])> {
    let mut tokens = Vec::with_capacity(n);
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::corrupt(path, "truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::corrupt(path, "non-ASCII header"))?;
        tokens.push(tok);
    }
    if i >= bytes.len() {
        return Err(Error::corrupt(path, "missing raster data"));
    }
    Ok((tokens, &bytes[i + 1..]))
}

fn dims(tokens: &[&str], path: &Path) -> Result<(usize, usize)> {
    let p = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0 && v <= 1 << 16)
            .ok_or_else(|| Error::corrupt(path, format!("bad dimension {s:?}")))
    };
    let (w, h) = (p(tokens[1])?, p(tokens[2])?);
    Ok((h, w))
}

fn expect_len(data: &[u8], want: usize, path: &Path) -> Result<()> {
    if data.len() != want {
        return Err(Error::corrupt(path, format!("expected {want} raster bytes, found {}", data.len())));
    }
    Ok(())
}

/// `[3, H, W]` image in `[0, 1]` to 8-bit P6.
pub fn encode_ppm(image: &Array) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("ppm image", s, &[3, 0, 0]));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..h * w {
        for c in 0..3 {
            out.push((image.data()[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Array> {
    let (t, data) = header(bytes, 4, path)?;
    if t[0] != "P6" || t[3] != "255" {
        return Err(Error::corrupt(path, "not an 8-bit binary PPM"));
    }
    let (h, w) = dims(&t, path)?;
    expect_len(data, 3 * h * w, path)?;
    let mut out = Array::zeros(&[3, h, w]);
    for i in 0..h * w {
        for c in 0..3 {
            out.data_mut()[c * h * w + i] = data[3 * i + c] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Valid pixels as 255, invalid as 0.
pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&v| if v { 255u8 } else { 0 }));
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Mask> {
    let (t, data) = header(bytes, 4, path)?;
    if t[0] != "P5" || t[3] != "255" {
        return Err(Error::corrupt(path, "not an 8-bit binary PGM"));
    }
    let (h, w) = dims(&t, path)?;
    expect_len(data, h * w, path)?;
    Mask::new(h, w, data.iter().map(|&v| v >= 128).collect())
}

/// `[H, W]` map to little-endian grayscale PFM. Rows are stored bottom-up
/// as the format requires.
pub fn encode_pfm(map: &Array) -> Result<Vec<u8>> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::shape("pfm map", s, &[0, 0]));
    }
    let (h, w) = (s[0], s[1]);
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for &v in &map.data()[y * w..(y + 1) * w] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Array> {
    let (t, data) = header(bytes, 4, path)?;
    if t[0] != "Pf" {
        return Err(Error::corrupt(path, "not a grayscale PFM"));
    }
    let (h, w) = dims(&t, path)?;
    let scale: f64 = t[3]
        .parse()
        .ok()
        .filter(|s: &f64| *s != 0.0 && s.is_finite())
        .ok_or_else(|| Error::corrupt(path, format!("bad scale {:?}", t[3])))?;
    expect_len(data, 4 * h * w, path)?;
    let mut out = Array::zeros(&[h, w]);
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (h - 1 - k / w, k % w);
        out.data_mut()[row * w + col] = v as f64;
    }
    if !out.all_finite() {
        return Err(Error::corrupt(path, "non-finite value in map"));
    }
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: &Path, image: &Array) -> Result<()> {
    write(path, &encode_ppm(image)?)
}

pub fn read_ppm(path: &Path) -> Result<Array> {
    decode_ppm(&read(path)?, path)
}

pub fn write_pfm(path: &Path, map: &Array) -> Result<()> {
    write(path, &encode_pfm(map)?)
}

pub fn read_pfm(path: &Path) -> Result<Array> {
    decode_pfm(&read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_layout_is_bottom_up() {
        let m = Array::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_pfm(&m).unwrap();
        let hdr = b"Pf\n3 2\n-1.0\n";
        assert_eq!(&bytes[..hdr.len()], hdr);
        assert_eq!(f32::from_le_bytes(bytes[hdr.len()..hdr.len() + 4].try_into().unwrap()), 4.0);
        assert_eq!(decode_pfm(&bytes, Path::new("m")).unwrap(), m);
    }

    #[test]
    fn big_endian_pfm_reads() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes, Path::new("m")).unwrap().data(), &[2.5]);
    }

    #[test]
    fn truncation_is_corruption() {
        let m = Array::full(&[4, 4], 1.5);
        let bytes = encode_pfm(&m).unwrap();
        let p = Path::new("d.pfm");
        assert!(matches!(decode_pfm(&bytes[..bytes.len() - 1], p), Err(Error::Corrupt { .. })));
        assert!(matches!(decode_pfm(&bytes[..5], p), Err(Error::Corrupt { .. })));
        let img = Array::full(&[3, 2, 2], 0.5);
        let ppm = encode_ppm(&img).unwrap();
        assert!(matches!(decode_ppm(&ppm[..ppm.len() - 2], p), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn ppm_and_pgm_round_trip() {
        let img = Array::from_fn(&[3, 3, 5], |i| (i * 17 % 256) as f64 / 255.0);
        assert_eq!(decode_ppm(&encode_ppm(&img).unwrap(), Path::new("i")).unwrap(), img);
        let mask = Mask::new(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&mask), Path::new("m")).unwrap(), mask);
        let commented = b"P5\n# note\n1 1\n255\n\xff";
        assert_eq!(decode_pgm(commented, Path::new("m")).unwrap().count(), 1);
    }
}
