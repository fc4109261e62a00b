//! 8-bit PNG and binary PPM/PGM.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

fn decode_err(path: &Path, reason: impl ToString) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Loads an image with samples mapped to [0, 1] by `/255`. The format is
/// detected from the file contents. Alpha channels are dropped.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| decode_err(path, e))?
        .with_guessed_format()
        .map_err(|e| decode_err(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        Some(other) => return Err(decode_err(path, format!("unsupported format {other:?}"))),
        None => return Err(decode_err(path, "unrecognized file signature")),
    }
    let decoded = reader.decode().map_err(|e| decode_err(path, e))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, bytes) = match decoded {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        DynamicImage::ImageLumaA8(b) => (1, b.into_raw().chunks(2).map(|p| p[0]).collect()),
        DynamicImage::ImageRgba8(b) => (
            3,
            b.into_raw().chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        ),
        other => {
            return Err(decode_err(
                path,
                format!("unsupported sample layout {:?}; only 8-bit images are supported", other.color()),
            ))
        }
    };
    let scale = T::of(255.0);
    Image::new(h, w, channels, bytes.into_iter().map(|b| T::of(b as f64) / scale).collect())
        .map_err(|e| decode_err(path, e))
}

/// Quantizes `round(clamp(x) * 255)`.
pub fn quantize<T: Scalar>(img: &Image<T>) -> Vec<u8> {
    img.data()
        .iter()
        .map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Writes `.png`, `.ppm` (RGB) or `.pgm` (grayscale) chosen by extension.
pub fn save_image<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let enc_err = |reason: String| Error::Encode {
        path: path.to_path_buf(),
        reason,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let mut bytes = quantize(img);
    let mut color = if img.channels() == 3 {
        ExtendedColorType::Rgb8
    } else {
        ExtendedColorType::L8
    };

    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let out = BufWriter::new(file);
    let res = match ext.as_str() {
        "png" => PngEncoder::new(out).write_image(&bytes, w, h, color),
        "ppm" => {
            if img.channels() == 1 {
                bytes = bytes.iter().flat_map(|&b| [b, b, b]).collect();
                color = ExtendedColorType::Rgb8;
            }
            PnmEncoder::new(out)
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .write_image(&bytes, w, h, color)
        }
        "pgm" => {
            if img.channels() != 1 {
                return Err(enc_err("PGM holds grayscale images only".into()));
            }
            PnmEncoder::new(out)
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
                .write_image(&bytes, w, h, color)
        }
        _ => return Err(enc_err(format!("unsupported output extension {ext:?}"))),
    };
    res.map_err(|e| enc_err(e.to_string()))
}
