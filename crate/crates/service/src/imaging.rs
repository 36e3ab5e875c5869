//! PNG wire encoding for frames.

use std::io::Cursor;

use thiserror::Error;
use vigil_core::vdevices::Frame;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("expected 8-bit RGB, got {0:?} at depth {1:?}")]
    Format(png::ColorType, png::BitDepth),
}

pub fn encode_png(frame: &Frame) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::with_capacity(frame.pixels.len() / 8);
    {
        let mut enc = png::Encoder::new(&mut out, frame.width, frame.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&frame.pixels)?;
        writer.finish()?;
    }
    Ok(out)
}

/// Decodes an RGB8 PNG into a frame without ground truth.
pub fn decode_png(
    bytes: &[u8],
    camera_id: &str,
    tick: u64,
    time: f64,
) -> Result<Frame, ImageError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Format(info.color_type, info.bit_depth));
    }
    buf.truncate(info.buffer_size());
    Ok(Frame {
        camera_id: camera_id.to_string(),
        tick,
        time,
        width: info.width,
        height: info.height,
        pixels: buf,
        ground_truth: Vec::new(),
    })
}
