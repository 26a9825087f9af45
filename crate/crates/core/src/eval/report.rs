use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Cursor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::LabelImage;

/// Segmentation and image-quality numbers for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub miou: f64,
    pub accuracy: f64,
    pub per_class_iou: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ssim: Option<f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two-column aligned text table.
    pub fn to_table(&self) -> String {
        let mut rows = vec![
            ("mIoU".to_string(), format!("{:.4}", self.miou)),
            ("Acc.".to_string(), format!("{:.4}", self.accuracy)),
        ];
        if let Some(p) = self.psnr {
            rows.push(("PSNR".into(), format!("{p:.2}")));
        }
        if let Some(s) = self.ssim {
            rows.push(("SSIM".into(), format!("{s:.4}")));
        }
        for (class, iou) in &self.per_class_iou {
            rows.push((format!("IoU[{class}]"), format!("{iou:.4}")));
        }
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<w0$}  {:>w1$}", "metric", "value");
        let _ = writeln!(out, "{}  {}", "-".repeat(w0), "-".repeat(w1));
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<w0$}  {v:>w1$}");
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum LabelPngError {
    #[error("label {0} does not fit an indexed PNG (0..=254 or -1)")]
    Range(i32),
    #[error(transparent)]
    Encode(#[from] png::EncodingError),
    #[error(transparent)]
    Decode(#[from] png::DecodingError),
    #[error("unsupported label PNG: {0}")]
    Format(String),
}

fn palette_color(index: u8) -> [u8; 3] {
    if index == 0 {
        return [0, 0, 0];
    }
    // Golden-ratio hue walk, fixed so outputs are reproducible.
    let h = (index as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let s = |v: f64| (55.0 + 200.0 * v).round() as u8;
    [s(r), s(g), s(b)]
}

/// Indexed 8-bit PNG; palette index is `label + 1`, so index 0 (black) is
/// the unlabeled pixel.
pub fn write_label_png(labels: &LabelImage) -> Result<Vec<u8>, LabelPngError> {
    let mut indices = Vec::with_capacity(labels.labels.len());
    for &l in &labels.labels {
        if !(-1..=254).contains(&l) {
            return Err(LabelPngError::Range(l));
        }
        indices.push((l + 1) as u8);
    }
    let used = indices.iter().copied().max().unwrap_or(0) as usize + 1;
    let palette: Vec<u8> = (0..used).flat_map(|i| palette_color(i as u8)).collect();
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, labels.width as u32, labels.height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette);
        let mut w = enc.write_header()?;
        w.write_image_data(&indices)?;
    }
    Ok(bytes)
}

/// Reads an indexed PNG written by [`write_label_png`], or an 8-bit
/// grayscale PNG whose value is the label (255 meaning unlabeled).
pub fn read_label_png(bytes: &[u8]) -> Result<LabelImage, LabelPngError> {
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| LabelPngError::Format("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(LabelPngError::Format(format!("bit depth {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let labels: Vec<i32> = match info.color_type {
        png::ColorType::Indexed => data.iter().map(|&i| i as i32 - 1).collect(),
        png::ColorType::Grayscale => data
            .iter()
            .map(|&v| if v == 255 { -1 } else { v as i32 })
            .collect(),
        other => return Err(LabelPngError::Format(format!("color type {other:?}"))),
    };
    if labels.len() != w * h {
        return Err(LabelPngError::Format("row padding not supported".into()));
    }
    Ok(LabelImage {
        width: w,
        height: h,
        labels,
    })
}

/// 8-bit grayscale PNG of a similarity image: `s` in [-1, 1] maps to
/// `round((s + 1) / 2 * 255)`, so the below-floor sentinel -1 is black.
pub fn heatmap_png(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>, LabelPngError> {
    if values.len() != width * height {
        return Err(LabelPngError::Format(format!(
            "{} values for a {width}x{height} image",
            values.len()
        )));
    }
    let raw: Vec<u8> = values
        .iter()
        .map(|&s| ((s.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
        .collect();
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header()?.write_image_data(&raw)?;
    }
    Ok(bytes)
}
