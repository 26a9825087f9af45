//! PNG export and the `LFF1` raw feature format.
//!
//! `LFF1`: magic "LFF1", width u32, height u32, C u32, then width*height*C
//! little-endian f32 values, pixel-major.

use std::io::{self, Cursor, Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use image::{ImageBuffer, ImageEncoder, Luma, Rgb};
use thiserror::Error;

use super::{FeatureImage, RenderOutput, WeightMapStack};
use crate::real::Real;

pub const FEATURE_MAGIC: [u8; 4] = *b"LFF1";

#[derive(Debug, Error)]
pub enum FeatureFileError {
    #[error("bad magic bytes {0:?}, expected \"LFF1\"")]
    BadMagic([u8; 4]),
    #[error("feature file truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn to_u8<T: Real>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png<P: image::PixelWithColorType<Subpixel = S>, S: image::Primitive>(
    img: &ImageBuffer<P, Vec<S>>,
) -> Vec<u8>
where
    [S]: image::EncodableLayout,
{
    use image::EncodableLayout;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(
            img.as_raw().as_bytes(),
            img.width(),
            img.height(),
            P::COLOR_TYPE,
        )
        .expect("in-memory PNG encoding");
    out
}

/// 8-bit RGB PNG of the color buffer.
pub fn rgb_png<T: Real>(out: &RenderOutput<T>) -> Vec<u8> {
    let raw: Vec<u8> = out.rgb.iter().map(|&v| to_u8(v)).collect();
    let img: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(out.width as u32, out.height as u32, raw).expect("rgb buffer size");
    encode_png(&img)
}

/// 8-bit grayscale PNG of accumulated alpha.
pub fn alpha_png<T: Real>(out: &RenderOutput<T>) -> Vec<u8> {
    let raw: Vec<u8> = out.alpha.iter().map(|&v| to_u8(v)).collect();
    let img: ImageBuffer<Luma<u8>, _> =
        ImageBuffer::from_raw(out.width as u32, out.height as u32, raw).expect("alpha buffer size");
    encode_png(&img)
}

/// 16-bit grayscale PNG of one atom's weight map.
pub fn weight_map_png16<T: Real>(stack: &WeightMapStack<T>, atom: usize) -> Vec<u8> {
    let raw: Vec<u16> = stack
        .map(atom)
        .into_iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(stack.width as u32, stack.height as u32, raw).expect("map size");
    encode_png(&img)
}

pub fn write_feature_file<W: Write>(features: &FeatureImage<f32>, w: &mut W) -> io::Result<()> {
    w.write_all(&FEATURE_MAGIC)?;
    w.write_u32::<LE>(features.width as u32)?;
    w.write_u32::<LE>(features.height as u32)?;
    w.write_u32::<LE>(features.c as u32)?;
    for &v in &features.data {
        w.write_f32::<LE>(v)?;
    }
    Ok(())
}

pub fn read_feature_file(bytes: &[u8]) -> Result<FeatureImage<f32>, FeatureFileError> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| FeatureFileError::Truncated)?;
    if magic != FEATURE_MAGIC {
        return Err(FeatureFileError::BadMagic(magic));
    }
    let mut dims = [0u32; 3];
    cur.read_u32_into::<LE>(&mut dims)
        .map_err(|_| FeatureFileError::Truncated)?;
    let [width, height, c] = dims.map(|d| d as usize);
    let count = width as u128 * height as u128 * c as u128;
    if count * 4 != (bytes.len() - 16) as u128 {
        return Err(FeatureFileError::Truncated);
    }
    let mut data = vec![0.0f32; count as usize];
    cur.read_f32_into::<LE>(&mut data)
        .map_err(|_| FeatureFileError::Truncated)?;
    Ok(FeatureImage {
        width,
        height,
        c,
        data,
    })
}
