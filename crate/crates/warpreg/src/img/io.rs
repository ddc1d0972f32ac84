//! Image file formats: 8-bit PNG (1 or 3 channels) mapped linearly to
//! [0, 1], and a lossless raw float dump for test fixtures.
//!
//! Raw dump layout: one ASCII header line `m n c`, then `m*n*c` little-endian
//! f32 samples in (row, col, channel) order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

pub fn load_png(path: &Path) -> Result<Image> {
    let dyn_img = image::open(path).map_err(|e| Error::Codec(e.to_string()))?;
    match dyn_img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            Ok(Image::from_fn(h, w, 1, |i, j, _| {
                g.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
            }))
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            Ok(Image::from_fn(h, w, 3, |i, j, k| {
                rgb.get_pixel(j as u32, i as u32)[k] as f64 / 255.0
            }))
        }
    }
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let (m, n, c) = img.shape();
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    match c {
        1 => {
            let mut buf = image::GrayImage::new(n as u32, m as u32);
            for i in 0..m {
                for j in 0..n {
                    buf.put_pixel(j as u32, i as u32, image::Luma([to_u8(img.get(i, j, 0))]));
                }
            }
            buf.save(path).map_err(|e| Error::Codec(e.to_string()))
        }
        3 => {
            let mut buf = image::RgbImage::new(n as u32, m as u32);
            for i in 0..m {
                for j in 0..n {
                    let px = image::Rgb([
                        to_u8(img.get(i, j, 0)),
                        to_u8(img.get(i, j, 1)),
                        to_u8(img.get(i, j, 2)),
                    ]);
                    buf.put_pixel(j as u32, i as u32, px);
                }
            }
            buf.save(path).map_err(|e| Error::Codec(e.to_string()))
        }
        other => Err(Error::Codec(format!(
            "png export supports 1 or 3 channels, got {other}"
        ))),
    }
}

pub fn save_raw(img: &Image, path: &Path) -> Result<()> {
    let (m, n, c) = img.shape();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{m} {n} {c}")?;
    for v in img.data() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_raw(path: &Path) -> Result<Image> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
        if header.len() > 64 {
            return Err(Error::Codec("raw header too long".into()));
        }
    }
    let header = String::from_utf8(header).map_err(|e| Error::Codec(e.to_string()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| Error::Codec(e.to_string())))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(Error::Codec(format!("raw header '{header}' is not 'm n c'")));
    }
    let (m, n, c) = (dims[0], dims[1], dims[2]);
    let mut data = vec![0.0f64; m * n * c];
    let mut buf = [0u8; 4];
    for v in &mut data {
        r.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf) as f64;
    }
    Image::from_vec(m, n, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn raw_round_trip_is_f32_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Image::from_fn(7, 5, 3, |_, _, _| rng.gen_range(-4.0..4.0));
        let dir = std::env::temp_dir().join("warpreg_raw_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.raw");
        save_raw(&img, &path).unwrap();
        let back = load_raw(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data().iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn png_round_trip_quantizes_to_8_bits() {
        let img = Image::from_fn(6, 9, 3, |i, j, k| ((i + 2 * j + 3 * k) % 17) as f64 / 16.0);
        let dir = std::env::temp_dir().join("warpreg_png_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.png");
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data().iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }
}
