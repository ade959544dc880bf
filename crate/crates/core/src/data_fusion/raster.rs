//! PNG encoding of images and masks. Masks are single-channel 8-bit rasters
//! with 0 = negative and 255 = positive.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask, RgbImage};

pub const MASK_POSITIVE: u8 = 255;

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0).collect();
    Grid::from_vec(h as usize, w as usize, data)
}

pub fn write_rgb(path: &Path, image: &RgbImage) -> Result<()> {
    let raw: Vec<u8> = image.as_slice().iter().flatten().copied().collect();
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, raw)
        .expect("buffer length matches dimensions");
    save(path, |p| buf.save_with_format(p, image::ImageFormat::Png))
}

/// Any value at or above 128 reads as positive.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] >= 128).collect();
    Grid::from_vec(h as usize, w as usize, data)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let raw: Vec<u8> = mask
        .as_slice()
        .iter()
        .map(|&v| if v { MASK_POSITIVE } else { 0 })
        .collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer length matches dimensions");
    save(path, |p| buf.save_with_format(p, image::ImageFormat::Png))
}

/// Writes an 8-bit palette-indexed PNG.
pub fn write_indexed(path: &Path, indices: &Grid<u8>, palette: &[[u8; 3]]) -> Result<()> {
    ensure_parent(path)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        std::io::BufWriter::new(file),
        indices.width() as u32,
        indices.height() as u32,
    );
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(palette.iter().flatten().copied().collect::<Vec<u8>>());
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(indices.as_slice()).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Reads the raw palette indices of an indexed PNG.
pub fn read_indexed(path: &Path) -> Result<Grid<u8>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let to_io = |e: png::DecodingError| Error::io(path, std::io::Error::other(e));
    let mut reader = decoder.read_info().map_err(to_io)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(to_io)?;
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::ShapeMismatch(format!(
            "{} is not an 8-bit indexed PNG",
            path.display()
        )));
    }
    buf.truncate(info.buffer_size());
    Grid::from_vec(info.height as usize, info.width as usize, buf)
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn save(path: &Path, f: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    ensure_parent(path)?;
    f(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = Grid::from_fn(5, 7, |r, c| [r as u8 * 10, c as u8 * 20, 99]);
        let mask = Grid::from_fn(5, 7, |r, c| (r + c) % 3 == 0);
        let ip = dir.path().join("a/img.png");
        let mp = dir.path().join("a/mask.png");
        write_rgb(&ip, &img).unwrap();
        write_mask(&mp, &mask).unwrap();
        assert_eq!(read_rgb(&ip).unwrap(), img);
        assert_eq!(read_mask(&mp).unwrap(), mask);

        let idx = Grid::from_fn(3, 4, |r, c| ((r * 4 + c) % 3) as u8);
        let xp = dir.path().join("idx.png");
        write_indexed(&xp, &idx, &[[0, 0, 0], [255, 0, 0], [0, 255, 0]]).unwrap();
        assert_eq!(read_indexed(&xp).unwrap(), idx);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            read_mask(Path::new("/nonexistent/x.png")),
            Err(Error::MissingFile(_))
        ));
    }
}
