//! Raster I/O: 8-bit PNG for sRGB-encoded images and little-endian PFM
//! (portable float map) for linear images.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ColorSpace, Image};
use crate::error::{Error, Result};

/// Decode an 8-bit PNG. The result is tagged sRGB-encoded with samples
/// mapped to `[0, 1]` by dividing by 255.
pub fn load_png(path: &Path) -> Result<Image> {
    let dyn_img = image::open(path)
        .map_err(|e| Error::ImageDecode { path: path.to_path_buf(), message: e.to_string() })?;
    let (w, h) = (dyn_img.width() as usize, dyn_img.height() as usize);
    match dyn_img {
        image::DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Image::from_data(w, h, 1, ColorSpace::SrgbEncoded, data)
        }
        other => {
            let rgb = other.into_rgb8();
            let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Image::from_data(w, h, 3, ColorSpace::SrgbEncoded, data)
        }
    }
}

/// Write an sRGB-encoded image as 8-bit PNG. Samples are clamped to `[0, 1]`
/// and rounded to the nearest code value.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    if img.space() != ColorSpace::SrgbEncoded {
        return Err(Error::WrongColorSpace {
            expected: ColorSpace::SrgbEncoded.name(),
            got: img.space().name(),
        });
    }
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let res = match img.channels() {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("sized buffer")
            .save_with_format(path, image::ImageFormat::Png),
        _ => image::RgbImage::from_raw(w, h, bytes)
            .expect("sized buffer")
            .save_with_format(path, image::ImageFormat::Png),
    };
    res.map_err(|e| Error::io(format!("writing {}", path.display()), std::io::Error::other(e)))
}

/// Decode a little-endian PFM file into a linear image. Both the grayscale
/// (`Pf`) and color (`PF`) variants are accepted; scanlines are stored
/// bottom-to-top per the format.
pub fn load_pfm(path: &Path) -> Result<Image> {
    let mut reader = BufReader::new(
        File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?,
    );
    let mut contents = Vec::new();
    reader
        .read_to_end(&mut contents)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;

    let parse_err = |m: &str| Error::Parse { path: path.to_path_buf(), message: m.to_string() };

    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> Result<String> {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: "truncated header".into(),
            });
        }
        // Consume exactly one whitespace byte after the token.
        pos += 1;
        Ok(String::from_utf8_lossy(&data[start..pos - 1]).into_owned())
    };

    let magic = token(&contents)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(parse_err(&format!("bad PFM magic {other:?}"))),
    };
    let width: usize = token(&contents)?.parse().map_err(|_| parse_err("bad width"))?;
    let height: usize = token(&contents)?.parse().map_err(|_| parse_err("bad height"))?;
    let scale: f64 = token(&contents)?.parse().map_err(|_| parse_err("bad scale"))?;
    if scale >= 0.0 {
        return Err(parse_err("big-endian PFM not supported"));
    }

    let expected = width * height * channels * 4;
    let body = &contents[pos..];
    if body.len() < expected {
        return Err(parse_err(&format!("expected {expected} payload bytes, got {}", body.len())));
    }
    let mut data = vec![0.0f64; width * height * channels];
    for row in 0..height {
        let src_row = height - 1 - row;
        for i in 0..width * channels {
            let off = (src_row * width * channels + i) * 4;
            let bits = u32::from_le_bytes(body[off..off + 4].try_into().unwrap());
            data[row * width * channels + i] = f32::from_bits(bits) as f64;
        }
    }
    Image::from_data(width, height, channels, ColorSpace::Linear, data)
}

/// Write a linear image as little-endian PFM (scale -1.0, f32 samples).
pub fn save_pfm(img: &Image, path: &Path) -> Result<()> {
    if img.space() != ColorSpace::Linear {
        return Err(Error::WrongColorSpace {
            expected: ColorSpace::Linear.name(),
            got: img.space().name(),
        });
    }
    let mut out = BufWriter::new(
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?,
    );
    let magic = if img.channels() == 1 { "Pf" } else { "PF" };
    let ctx = || format!("writing {}", path.display());
    write!(out, "{magic}\n{} {}\n-1.0\n", img.width(), img.height())
        .map_err(|e| Error::io(ctx(), e))?;
    let wc = img.width() * img.channels();
    for row in (0..img.height()).rev() {
        for i in 0..wc {
            let v = img.data()[row * wc + i] as f32;
            out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(ctx(), e))?;
        }
    }
    out.flush().map_err(|e| Error::io(ctx(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn pfm_round_trip_is_exact_at_f32() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // f32-representable values survive the round trip bit-for-bit.
        let data: Vec<f64> = (0..5 * 4 * 3).map(|_| rng.random::<f32>() as f64).collect();
        let img = Image::from_data(5, 4, 3, ColorSpace::Linear, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pfm");
        save_pfm(&img, &p).unwrap();
        let back = load_pfm(&p).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pfm_grayscale_round_trip() {
        let img = Image::from_data(3, 2, 1, ColorSpace::Linear, vec![0.0, 1.0, 2.5, 3.0, 4.0, 5.5])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pfm");
        save_pfm(&img, &p).unwrap();
        assert_eq!(load_pfm(&p).unwrap(), img);
    }

    #[test]
    fn png_round_trip_preserves_8bit_codes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let data: Vec<f64> =
            (0..6 * 6 * 3).map(|_| rng.random_range(0..=255u32) as f64 / 255.0).collect();
        let img = Image::from_data(6, 6, 3, ColorSpace::SrgbEncoded, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        save_png(&img, &p).unwrap();
        let back = load_png(&p).unwrap();
        assert_eq!(back.space(), ColorSpace::SrgbEncoded);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn png_rejects_linear_input() {
        let img = Image::new(2, 2, 3, ColorSpace::Linear);
        let dir = tempfile::tempdir().unwrap();
        assert!(save_png(&img, &dir.path().join("x.png")).is_err());
    }
}
