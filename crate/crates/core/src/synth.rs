//! Synthetic images behind the shipped fixtures and the pitfall demos.
//! Everything here is a pure function of its arguments.

use crate::image::ImageBuffer;
use crate::manifest::ColorLayout;

pub const RED: [u8; 3] = [255, 0, 0];
pub const BLUE: [u8; 3] = [0, 0, 255];

/// Class index of "blue-dominant" in the reference weights.
pub const BLUE_DOMINANT: usize = 2;

/// A `size x size` image: a `border`-pixel frame around a solid interior.
pub fn frame_image(size: usize, border: usize, frame: [u8; 3], interior: [u8; 3]) -> ImageBuffer {
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let edge = y < border || x < border || y + border >= size || x + border >= size;
            data.extend_from_slice(if edge { &frame } else { &interior });
        }
    }
    ImageBuffer::from_u8(size, size, ColorLayout::Rgb, data).expect("frame dims are consistent")
}

/// Mostly red, with a blue square in the middle third.
pub fn red_blue() -> ImageBuffer {
    frame_image(64, 20, RED, BLUE)
}

/// Twenty framed images whose red border grows from 1 to 20 pixels around
/// a blue subject, each with its ground-truth class. Center cropping cuts
/// into the border, so some images change class with and without it.
pub fn frame_border_dataset() -> Vec<(String, ImageBuffer, usize)> {
    (1..=20)
        .map(|border| (format!("frame_{border:02}.ppm"), frame_image(64, border, RED, BLUE), BLUE_DOMINANT))
        .collect()
}

/// Smooth color gradient; its JPEG encoding exercises the chroma path of
/// decoders.
pub fn gradient(width: usize, height: usize) -> ImageBuffer {
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let r = (x * 255 / width.max(2).saturating_sub(1).max(1)) as u8;
            let g = (y * 255 / height.max(2).saturating_sub(1).max(1)) as u8;
            let b = ((x + y) * 127 / (width + height).max(1)) as u8;
            data.extend_from_slice(&[r, g, b]);
        }
    }
    ImageBuffer::from_u8(width, height, ColorLayout::Rgb, data).expect("gradient dims are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_geometry() {
        let img = frame_image(8, 2, RED, BLUE);
        assert_eq!(img.pixel_u8(0, 0), Some(&RED[..]));
        assert_eq!(img.pixel_u8(1, 4), Some(&RED[..]));
        assert_eq!(img.pixel_u8(2, 2), Some(&BLUE[..]));
        assert_eq!(img.pixel_u8(5, 5), Some(&BLUE[..]));
        assert_eq!(img.pixel_u8(6, 5), Some(&RED[..]));
        assert_eq!(frame_border_dataset().len(), 20);
    }
}
