//! Image and kernel file formats.
//!
//! * Float text images: a header line `H W C`, then `H` lines of `W * C`
//!   pixel-interleaved values (whitespace separated; line breaks are not
//!   significant on read).
//! * Kernel text files: a header line `S`, then `S x S` row-major taps.
//!   Taps are normalized to unit sum on load.
//! * PNG: 8- or 16-bit gray/RGB, with an optional scalar gamma (2.2) applied
//!   as expansion on load and compression on save.

use std::fs;
use std::io::{BufReader, Cursor, Write};
use std::path::Path;

use super::{Image, Kernel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gamma exponent used by the PNG gamma flag.
pub const DISPLAY_GAMMA: f64 = 2.2;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_numbers<'a>(path: &Path, tokens: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(path, format!("not a number: '{t}'")))
        })
        .collect()
}

pub fn format_image_text<T: Scalar>(image: &Image<T>) -> String {
    let (h, w, c) = image.shape();
    let values = image.to_interleaved();
    let mut out = format!("{h} {w} {c}\n");
    for row in values.chunks(w * c) {
        let line: Vec<String> = row.iter().map(|v| format!("{:e}", v.as_f64())).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_image_text<T: Scalar>(path: &Path, text: &str) -> Result<Image<T>> {
    let mut tokens = text.split_whitespace();
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        let t = tokens
            .next()
            .ok_or_else(|| Error::parse(path, "missing 'H W C' header"))?;
        *slot = t
            .parse()
            .map_err(|_| Error::parse(path, format!("bad header field '{t}'")))?;
    }
    let [h, w, c] = header;
    let values = parse_numbers(path, tokens)?;
    if values.len() != h * w * c {
        return Err(Error::parse(
            path,
            format!("expected {} values, found {}", h * w * c, values.len()),
        ));
    }
    let values: Vec<T> = values.into_iter().map(T::lit).collect();
    Image::from_interleaved(h, w, c, &values).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn read_image_text<T: Scalar>(path: &Path) -> Result<Image<T>> {
    parse_image_text(path, &read_text(path)?)
}

pub fn write_image_text<T: Scalar>(path: &Path, image: &Image<T>) -> Result<()> {
    write_atomic(path, format_image_text(image).as_bytes())
}

pub fn format_kernel_text<T: Scalar>(kernel: &Kernel<T>) -> String {
    let s = kernel.size();
    let mut out = format!("{s}\n");
    for row in kernel.taps().chunks(s) {
        let line: Vec<String> = row.iter().map(|v| format!("{:e}", v.as_f64())).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_kernel_text<T: Scalar>(path: &Path, text: &str) -> Result<Kernel<T>> {
    let mut tokens = text.split_whitespace();
    let t = tokens
        .next()
        .ok_or_else(|| Error::parse(path, "missing kernel size header"))?;
    let s: usize = t
        .parse()
        .map_err(|_| Error::parse(path, format!("bad kernel size '{t}'")))?;
    let values = parse_numbers(path, tokens)?;
    let taps = values.into_iter().map(T::lit).collect();
    Kernel::from_taps(s, taps).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn read_kernel_text<T: Scalar>(path: &Path) -> Result<Kernel<T>> {
    parse_kernel_text(path, &read_text(path)?)
}

pub fn write_kernel_text<T: Scalar>(path: &Path, kernel: &Kernel<T>) -> Result<()> {
    write_atomic(path, format_kernel_text(kernel).as_bytes())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

/// Decodes a PNG to `[0, 1]`; alpha is dropped, palettes are expanded.
pub fn decode_png<T: Scalar>(bytes: &[u8], gamma_encoded: bool) -> Result<Image<T>> {
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (h, w) = (info.height as usize, info.width as usize);
    let src_channels = info.color_type.samples();
    let channels = if src_channels >= 3 { 3 } else { 1 };
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf[..info.buffer_size()]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect(),
        other => return Err(Error::Png(format!("unsupported bit depth {other:?}"))),
    };
    let mut data = Vec::with_capacity(h * w * channels);
    for px in samples.chunks_exact(src_channels) {
        for &v in &px[..channels] {
            data.push(T::lit(v));
        }
    }
    let img = Image::from_interleaved(h, w, channels, &data)?;
    Ok(if gamma_encoded {
        img.expand_gamma(DISPLAY_GAMMA)
    } else {
        img
    })
}

/// Encodes to PNG after clamping to `[0, 1]`, optionally gamma-compressing first.
pub fn encode_png<T: Scalar>(image: &Image<T>, depth: BitDepth, gamma_encoded: bool) -> Result<Vec<u8>> {
    let img = if gamma_encoded {
        image.compress_gamma(DISPLAY_GAMMA)
    } else {
        image.clone()
    };
    let (h, w, c) = img.shape();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(if c == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        let values = img.to_interleaved();
        let bytes: Vec<u8> = match depth {
            BitDepth::Eight => {
                enc.set_depth(png::BitDepth::Eight);
                values
                    .iter()
                    .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect()
            }
            BitDepth::Sixteen => {
                enc.set_depth(png::BitDepth::Sixteen);
                values
                    .iter()
                    .flat_map(|v| ((v.as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
                    .collect()
            }
        };
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&bytes).map_err(png_err)?;
    }
    Ok(out)
}

pub fn read_png<T: Scalar>(path: &Path, gamma_encoded: bool) -> Result<Image<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, gamma_encoded).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_png<T: Scalar>(path: &Path, image: &Image<T>, depth: BitDepth, gamma_encoded: bool) -> Result<()> {
    write_atomic(path, &encode_png(image, depth, gamma_encoded)?)
}

/// Reads `.png` through the PNG decoder (linear, no gamma) and anything else
/// as a float text image.
pub fn read_image_any<T: Scalar>(path: &Path) -> Result<Image<T>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => read_png(path, false),
        _ => read_image_text(path),
    }
}

/// Counterpart of [`read_image_any`]; PNGs are written 16-bit linear.
pub fn write_image_any<T: Scalar>(path: &Path, image: &Image<T>) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => write_png(path, image, BitDepth::Sixteen, false),
        _ => write_image_text(path, image),
    }
}

/// Sorted list of regular files in `dir` with one of the given extensions.
pub fn list_files(dir: &Path, extensions: &[&str]) -> Result<Vec<std::path::PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ok = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| extensions.iter().any(|x| x.eq_ignore_ascii_case(e)))
            .unwrap_or(false);
        if ok && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_image_round_trip_is_exact() {
        let img = Image::from_fn(3, 4, 3, |c, y, x| (c as f64 + 0.1) / (y * 4 + x + 1) as f64).unwrap();
        let text = format_image_text(&img);
        assert!(text.starts_with("3 4 3\n"));
        let back: Image<f64> = parse_image_text(Path::new("mem"), &text).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn text_image_rejects_truncation() {
        let err = parse_image_text::<f64>(Path::new("x.txt"), "2 2 1\n0 1 2").unwrap_err();
        assert!(err.to_string().contains("expected 4 values"));
    }

    #[test]
    fn kernel_is_normalized_on_load() {
        let k: Kernel<f64> = parse_kernel_text(Path::new("k"), "3\n0 1 0\n1 4 1\n0 1 0\n").unwrap();
        assert!((k.get(1, 1) - 0.5).abs() < 1e-15);
        assert!(parse_kernel_text::<f64>(Path::new("k"), "2\n1 1 1 1").is_err());
    }

    #[test]
    fn png_round_trip_quantizes() {
        let img = Image::from_fn(5, 6, 3, |c, y, x| ((c + y + x) % 7) as f64 / 6.0).unwrap();
        for (depth, tol) in [(BitDepth::Eight, 0.5 / 255.0 + 1e-12), (BitDepth::Sixteen, 0.5 / 65535.0 + 1e-12)] {
            let bytes = encode_png(&img, depth, false).unwrap();
            let back: Image<f64> = decode_png(&bytes, false).unwrap();
            assert_eq!(back.shape(), img.shape());
            for (a, b) in back.data().iter().zip(img.data()) {
                assert!((a - b).abs() <= tol);
            }
        }
    }

    #[test]
    fn png_gamma_flag_inverts() {
        let img = Image::from_fn(4, 4, 1, |_, y, x| (y * 4 + x) as f64 / 15.0).unwrap();
        let bytes = encode_png(&img, BitDepth::Sixteen, true).unwrap();
        let back: Image<f64> = decode_png(&bytes, true).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
