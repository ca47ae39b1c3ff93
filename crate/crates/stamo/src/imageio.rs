//! Lossless 8-bit RGB PNG round-trip for observations.

use crate::error::{Error, Result};
use crate::gripperworld::Observation;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

pub fn save_png(path: &Path, obs: &Observation) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        obs.width() as u32,
        obs.height() as u32,
    );
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&obs.to_u8())
        .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<Observation> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!(
            "{}: expected 8-bit RGB, got {:?}/{:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    Ok(Observation::from_u8(h, w, &buf[..w * h * 3]))
}

/// Concatenate images left-to-right with a 1-pixel separator column, for
/// interpolation strips.
pub fn hstack(images: &[Observation]) -> Observation {
    assert!(!images.is_empty());
    let h = images[0].height();
    let total_w: usize = images.iter().map(|i| i.width()).sum::<usize>() + images.len() - 1;
    let mut out = Observation::zeros(h, total_w);
    let mut x0 = 0;
    for (idx, img) in images.iter().enumerate() {
        for y in 0..h {
            for x in 0..img.width() {
                for c in 0..3 {
                    out.set(y, x0 + x, c, img.get(y, x, c));
                }
            }
        }
        x0 += img.width();
        if idx + 1 < images.len() {
            for y in 0..h {
                for c in 0..3 {
                    out.set(y, x0, c, 1.0);
                }
            }
            x0 += 1;
        }
    }
    out
}
