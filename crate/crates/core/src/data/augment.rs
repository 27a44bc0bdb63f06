//! Training-set augmentation: 45° rotations, horizontal flips and HSV
//! brightness scaling.

use image::{Rgb, RgbImage};

use super::{DataError, Payload, SampleRecord, SiteDataset};

/// Which variants [`augment`] produces.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationPolicy {
    /// Multiples of 45 in `[0, 315]`; must contain 0.
    pub rotation_degrees: Vec<u16>,
    pub horizontal_flip: bool,
    /// Positive factors applied to the HSV value channel; must contain 1.0.
    pub brightness_factors: Vec<f64>,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            rotation_degrees: (0..8).map(|k| k * 45).collect(),
            horizontal_flip: true,
            brightness_factors: vec![1.0, 1.25, 1.5],
        }
    }
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        AugmentationPolicy {
            rotation_degrees: vec![0],
            horizontal_flip: false,
            brightness_factors: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidPolicy(m));
        if let Some(d) = self.rotation_degrees.iter().find(|&&d| d % 45 != 0 || d > 315) {
            return bad(format!("rotation {d} is not a multiple of 45 in [0, 315]"));
        }
        if !self.rotation_degrees.contains(&0) {
            return bad("rotations must include 0".into());
        }
        if let Some(f) = self.brightness_factors.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return bad(format!("brightness factor {f} is not positive"));
        }
        if !self.brightness_factors.contains(&1.0) {
            return bad("brightness factors must include 1.0".into());
        }
        Ok(())
    }

    /// `|rotations| · (1 + flip) · |factors|`, duplicates ignored.
    pub fn variant_count(&self) -> usize {
        let (rot, fac) = self.normalized();
        rot.len() * if self.horizontal_flip { 2 } else { 1 } * fac.len()
    }

    fn normalized(&self) -> (Vec<u16>, Vec<f64>) {
        let mut rot = self.rotation_degrees.clone();
        rot.sort_unstable();
        rot.dedup();
        let mut fac = self.brightness_factors.clone();
        fac.sort_by(f64::total_cmp);
        fac.dedup();
        (rot, fac)
    }
}

/// Rotation counter-clockwise (as displayed) about the image center, on the
/// same canvas. Nearest-neighbour inverse mapping; pixels that map outside the
/// source are zero.
pub fn rotate(img: &RgbImage, degrees: u16) -> RgbImage {
    if degrees.is_multiple_of(360) {
        return img.clone();
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    // exact (cos, sin) for multiples of 45°
    let (cos, sin) = match (degrees / 45) % 8 {
        0 => (1.0, 0.0),
        1 => (h, h),
        2 => (0.0, 1.0),
        3 => (-h, h),
        4 => (-1.0, 0.0),
        5 => (-h, -h),
        6 => (0.0, -1.0),
        _ => (h, -h),
    };
    let (w, ht) = (img.width(), img.height());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (ht as f64 - 1.0) / 2.0;
    RgbImage::from_fn(w, ht, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        // y grows downward, so a displayed CCW turn is a CW turn in (x, y)
        let sx = (cos * dx - sin * dy + cx).round();
        let sy = (sin * dx + cos * dy + cy).round();
        if sx >= 0.0 && sy >= 0.0 && (sx as u32) < w && (sy as u32) < ht {
            *img.get_pixel(sx as u32, sy as u32)
        } else {
            Rgb([0, 0, 0])
        }
    })
}

pub fn flip_horizontal(img: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(img)
}

/// Hexcone RGB → HSV on `[0, 1]` channels. Hue is in sextants, `[0, 6)`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (hue, s, v)
}

/// Inverse of [`rgb_to_hsv`]: `C = V·S`, `X = C·(1 − |H mod 2 − 1|)`,
/// `m = V − C`, sextant picks the channel permutation.
pub fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let x = c * (1.0 - (hue.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match hue.floor() as i64 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Scales the HSV value channel by `factor`, clipping at the channel maximum.
pub fn brightness(img: &RgbImage, factor: f64) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let [r, g, b] = p.0.map(|c| c as f64 / 255.0);
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r, g, b) = hsv_to_rgb(h, s, (v * factor).min(1.0));
        p.0 = [r, g, b].map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    out
}

/// All variants of `img` under `policy`: rotations ascending × {no flip, flip}
/// × brightness factors ascending. Each variant is rotate → flip → brightness.
/// With `include_identity == false` the untouched variant is left out.
pub fn augment(img: &RgbImage, policy: &AugmentationPolicy, include_identity: bool) -> Result<Vec<RgbImage>, DataError> {
    policy.validate()?;
    let (rotations, factors) = policy.normalized();
    let flips: &[bool] = if policy.horizontal_flip { &[false, true] } else { &[false] };
    let mut out = Vec::with_capacity(policy.variant_count());
    for &deg in &rotations {
        let rotated = rotate(img, deg);
        for &flip in flips {
            let base = if flip { flip_horizontal(&rotated) } else { rotated.clone() };
            for &f in &factors {
                if !include_identity && deg == 0 && !flip && f == 1.0 {
                    continue;
                }
                out.push(if f == 1.0 { base.clone() } else { brightness(&base, f) });
            }
        }
    }
    Ok(out)
}

/// Expands every image record into its augmented variants. Variant ids are
/// `<sample_id>~r<deg>[f]b<factor>`; label, patient and site are kept.
/// Feature records pass through unchanged.
pub fn augment_dataset(ds: &SiteDataset, policy: &AugmentationPolicy) -> Result<SiteDataset, DataError> {
    policy.validate()?;
    let (rotations, factors) = policy.normalized();
    let flips: &[bool] = if policy.horizontal_flip { &[false, true] } else { &[false] };
    let mut records = Vec::new();
    for rec in ds.records() {
        let Payload::Image(img) = &rec.payload else {
            records.push(rec.clone());
            continue;
        };
        let variants = augment(img, policy, true)?;
        let mut tags = Vec::with_capacity(variants.len());
        for &deg in &rotations {
            for &flip in flips {
                for &f in &factors {
                    tags.push(format!("r{deg}{}b{f}", if flip { "f" } else { "" }));
                }
            }
        }
        for (variant, tag) in variants.into_iter().zip(tags) {
            let id = if tag == "r0b1" { rec.sample_id.clone() } else { format!("{}~{tag}", rec.sample_id) };
            records.push(SampleRecord::new(id, rec.patient_id.clone(), rec.site_id.clone(), rec.label(), Payload::Image(variant))?);
        }
    }
    SiteDataset::new(ds.site_id(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 29 + y * 7) as u8, (x * y) as u8, (200 - x - y) as u8]))
    }

    #[test]
    fn identity_policy_returns_input() {
        let img = sample(6, 4);
        let out = augment(&img, &AugmentationPolicy::identity(), true).unwrap();
        assert_eq!(out, vec![img.clone()]);
        assert!(augment(&img, &AugmentationPolicy::identity(), false).unwrap().is_empty());
    }

    #[test]
    fn flip_is_an_involution() {
        let img = sample(7, 5);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
        assert_ne!(flip_horizontal(&img), img);
    }

    #[test]
    fn default_policy_count_and_canvas() {
        let img = sample(9, 6);
        let p = AugmentationPolicy::default();
        let out = augment(&img, &p, true).unwrap();
        assert_eq!(out.len(), 8 * 2 * 3);
        assert_eq!(p.variant_count(), 48);
        assert!(out.iter().all(|v| v.dimensions() == (9, 6)));
        assert_eq!(out[0], img);
    }

    #[test]
    fn quarter_turns_on_square_images_are_exact() {
        let img = sample(4, 4);
        let r90 = rotate(&img, 90);
        // CCW quarter turn: the top-right pixel moves to the top-left
        assert_eq!(r90.get_pixel(0, 0), img.get_pixel(3, 0));
        assert_eq!(rotate(&rotate(&rotate(&r90, 90), 90), 90), img);
        assert_eq!(rotate(&rotate(&img, 180), 180), img);
    }

    #[test]
    fn diagonal_rotation_zero_fills_corners() {
        let img = RgbImage::from_pixel(11, 11, Rgb([255, 255, 255]));
        let r = rotate(&img, 45);
        assert_eq!(r.dimensions(), (11, 11));
        assert_eq!(r.get_pixel(0, 0), &Rgb([0, 0, 0]));
        assert_eq!(r.get_pixel(5, 5), &Rgb([255, 255, 255]));
    }

    #[test]
    fn brightness_clips_value_channel() {
        // Hand HSV: (200,120,40)/255 has V = 200/255, S = 0.8, H = 0.5 sextant.
        // Scaling V by 1.5 gives 300/255 > 1, clipped to 1.
        // Back: C = 0.8, X = 0.8·(1 − |0.5 − 1|) = 0.4, m = 0.2 → (1.0, 0.6, 0.2).
        let img = RgbImage::from_pixel(1, 1, Rgb([200, 120, 40]));
        let out = brightness(&img, 1.5);
        assert_eq!(out.get_pixel(0, 0), &Rgb([255, 153, 51]));
        let (_, _, v) = rgb_to_hsv(1.0, 0.6, 0.2);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn brightness_scales_unclipped_pixels() {
        let img = RgbImage::from_pixel(1, 1, Rgb([100, 60, 20]));
        // V = 100/255 → 125/255; every channel scales by 1.25
        assert_eq!(brightness(&img, 1.25).get_pixel(0, 0), &Rgb([125, 75, 25]));
    }

    #[test]
    fn invalid_policies() {
        let mut p = AugmentationPolicy::default();
        p.rotation_degrees.push(30);
        assert!(p.validate().is_err());
        let p = AugmentationPolicy { rotation_degrees: vec![45], ..AugmentationPolicy::default() };
        assert!(p.validate().is_err());
        let p = AugmentationPolicy { brightness_factors: vec![1.25], ..AugmentationPolicy::default() };
        assert!(p.validate().is_err());
        let p = AugmentationPolicy { brightness_factors: vec![1.0, -1.0], ..AugmentationPolicy::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn dataset_augmentation_keeps_labels() {
        let rec = SampleRecord::new("s1", "p1", "nih", 3, Payload::Image(sample(5, 5))).unwrap();
        let feat = SampleRecord::new("s2", "p2", "nih", 2, Payload::Features(vec![0.5])).unwrap();
        let ds = SiteDataset::new("nih", vec![rec, feat]).unwrap();
        let p = AugmentationPolicy { rotation_degrees: vec![0, 90], horizontal_flip: true, brightness_factors: vec![1.0, 1.5] };
        let out = augment_dataset(&ds, &p).unwrap();
        assert_eq!(out.len(), 8 + 1);
        assert!(out.records()[..8].iter().all(|r| r.label() == 3 && r.patient_id == "p1"));
        assert_eq!(out.records()[0].sample_id, "s1");
        assert_eq!(out.records()[3].sample_id, "s1~r0fb1.5");
    }

    proptest! {
        #[test]
        fn unit_factor_round_trips_every_pixel(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
            let img = RgbImage::from_pixel(1, 1, Rgb([r, g, b]));
            prop_assert_eq!(brightness(&img, 1.0), img);
        }

        #[test]
        fn brightening_never_darkens(r in any::<u8>(), g in any::<u8>(), b in any::<u8>(), f in 1.0f64..3.0) {
            let img = RgbImage::from_pixel(1, 1, Rgb([r, g, b]));
            let out = brightness(&img, f);
            let before = r.max(g).max(b);
            let after = out.get_pixel(0, 0).0.into_iter().max().unwrap();
            prop_assert!(after >= before);
        }
    }
}
