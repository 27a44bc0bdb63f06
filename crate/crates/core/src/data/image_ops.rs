use image::RgbImage;

use super::DataError;

/// Side length every image is resized to before feature extraction.
pub const TARGET_SIDE: usize = 256;

/// Row-major `height × width × 3` tensor of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == height * width * 3).then_some(ImageTensor { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ImageTensor { height, width, data: vec![value; height * width * 3] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Bilinear resampling to `out_h × out_w`, keeping 0–255 channel values.
///
/// Pixel centers are aligned (half-pixel convention): output `(y, x)` samples
/// the source at `((y+½)·H/out_h − ½, (x+½)·W/out_w − ½)`, clamped to the
/// source extent. Interpolation is written as `a + t·(b − a)` so constant
/// regions stay exactly constant.
pub fn resize_bilinear(img: &RgbImage, out_h: usize, out_w: usize) -> Result<ImageTensor, DataError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 || out_h == 0 || out_w == 0 {
        return Err(DataError::EmptyImage);
    }
    let src = |y: usize, x: usize, c: usize| img.get_pixel(x as u32, y as u32)[c] as f64;
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), s - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| coord(x, w, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, h, out_h);
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = src(y0, x0, c) + fx * (src(y0, x1, c) - src(y0, x0, c));
                let bottom = src(y1, x0, c) + fx * (src(y1, x1, c) - src(y1, x0, c));
                data.push(top + fy * (bottom - top));
            }
        }
    }
    Ok(ImageTensor { height: out_h, width: out_w, data })
}

/// Resize to 256×256, then scale channels into `[0, 1]`.
pub fn preprocess(img: &RgbImage) -> Result<ImageTensor, DataError> {
    let mut t = resize_bilinear(img, TARGET_SIDE, TARGET_SIDE)?;
    for v in &mut t.data {
        *v /= 255.0;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    #[test]
    fn zeros_stay_zero() {
        let t = preprocess(&RgbImage::new(512, 512)).unwrap();
        assert_eq!((t.height(), t.width()), (256, 256));
        assert!(t.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_image_maps_to_one() {
        let t = preprocess(&RgbImage::from_pixel(37, 300, Rgb([255, 255, 255]))).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_image_rejected() {
        assert!(matches!(preprocess(&RgbImage::new(0, 4)), Err(DataError::EmptyImage)));
    }

    #[test]
    fn checkerboard_upsample_matches_hand_grid() {
        // 2x2 checkerboard, red channel: [[0, 255], [255, 0]]
        let mut img = RgbImage::new(2, 2);
        img.put_pixel(1, 0, Rgb([255, 0, 0]));
        img.put_pixel(0, 1, Rgb([255, 0, 0]));
        let t = resize_bilinear(&img, 4, 4).unwrap();
        // Source coordinates for 2 -> 4: (o + 0.5)/2 - 0.5 = -0.25, 0.25, 0.75, 1.25
        // clamped to 0, 0.25, 0.75, 1. Hand-evaluated bilinear grid:
        let hand = [
            [0.0, 63.75, 191.25, 255.0],
            [63.75, 95.625, 159.375, 191.25],
            [191.25, 159.375, 95.625, 63.75],
            [255.0, 191.25, 63.75, 0.0],
        ];
        for y in 0..4 {
            for x in 0..4 {
                assert!((t.get(y, x, 0) - hand[y][x]).abs() < 1e-12, "({y},{x}) = {}", t.get(y, x, 0));
                assert_eq!(t.get(y, x, 1), 0.0);
            }
        }
    }

    #[test]
    fn identity_size_is_exact() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([(x * 40) as u8, (y * 70) as u8, 9]));
        let t = resize_bilinear(&img, 3, 5).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                for c in 0..3 {
                    assert_eq!(t.get(y, x, c), img.get_pixel(x as u32, y as u32)[c] as f64);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn preprocess_stays_in_unit_range(w in 1u32..40, h in 1u32..40, seed in any::<u32>()) {
            let img = RgbImage::from_fn(w, h, |x, y| {
                let v = seed.wrapping_mul(2654435761).wrapping_add(x * 97 + y * 31);
                Rgb([(v % 256) as u8, ((v >> 8) % 256) as u8, ((v >> 16) % 256) as u8])
            });
            let t = preprocess(&img).unwrap();
            prop_assert_eq!(t.as_slice().len(), 256 * 256 * 3);
            prop_assert!(t.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
