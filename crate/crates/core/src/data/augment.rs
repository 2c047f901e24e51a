//! Geometric and photometric augmentation.
//!
//! Geometric transforms share one inverse map between rgb (bilinear) and
//! depth (nearest). Sampling outside the frame clamps to the border.

use rand::Rng;

use super::SceneSample;
use crate::losses::{DEPTH_MAX, DEPTH_MIN};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop_frac_max: f64,
    pub scale_range: (f64, f64),
    pub flip_prob: f64,
    /// Rotation is drawn from `[-rotate_deg, rotate_deg]`.
    pub rotate_deg: f64,
    pub brightness_delta: f64,
    pub contrast_range: (f64, f64),
    pub sat_hue_delta: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_frac_max: 0.10,
            scale_range: (0.75, 1.25),
            flip_prob: 0.5,
            rotate_deg: 10.0,
            brightness_delta: 10.0 / 255.0,
            contrast_range: (0.5, 2.0),
            sat_hue_delta: 20.0 / 255.0,
        }
    }
}

impl AugmentConfig {
    /// No-op configuration.
    pub fn identity() -> Self {
        AugmentConfig {
            crop_frac_max: 0.0,
            scale_range: (1.0, 1.0),
            flip_prob: 0.0,
            rotate_deg: 0.0,
            brightness_delta: 0.0,
            contrast_range: (1.0, 1.0),
            sat_hue_delta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo <= hi && lo > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} range ({lo}, {hi}) must be positive and ordered"))
            }
        };
        ordered("scale", self.scale_range)?;
        ordered("contrast", self.contrast_range)?;
        if !(0.0..1.0).contains(&self.crop_frac_max) {
            return Err(format!("crop fraction {} outside [0, 1)", self.crop_frac_max));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(format!("flip probability {} outside [0, 1]", self.flip_prob));
        }
        for (name, v) in [
            ("rotation", self.rotate_deg),
            ("brightness", self.brightness_delta),
            ("saturation/hue", self.sat_hue_delta),
        ] {
            if v < 0.0 {
                return Err(format!("{name} magnitude {v} is negative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterParams {
    pub const NONE: JitterParams = JitterParams {
        brightness: 0.0,
        contrast: 1.0,
        saturation: 0.0,
        hue: 0.0,
    };
}

fn sample_plane_bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

fn nearest_index(v: f64, len: usize) -> usize {
    v.round().clamp(0.0, (len - 1) as f64) as usize
}

/// Resamples through `inverse`, which maps an output pixel centre to source
/// coordinates. Depth is multiplied by `depth_factor` and re-clamped.
fn warp(sample: &SceneSample, depth_factor: f64, inverse: impl Fn(f64, f64) -> (f64, f64)) -> SceneSample {
    let (h, w) = (sample.height(), sample.width());
    let n = h * w;
    let src_rgb = sample.rgb.values();
    let src_depth = sample.depth.values();
    let mut rgb = vec![0.0; 3 * n];
    let mut depth = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse(x as f64, y as f64);
            for c in 0..3 {
                let v = sample_plane_bilinear(&src_rgb[c * n..(c + 1) * n], h, w, sx, sy);
                rgb[c * n + y * w + x] = v.clamp(0.0, 1.0);
            }
            let d = src_depth[nearest_index(sy, h) * w + nearest_index(sx, w)];
            depth[y * w + x] = (d * depth_factor).clamp(DEPTH_MIN, DEPTH_MAX);
        }
    }
    SceneSample {
        rgb: Tensor::from_vec(sample.rgb.shape(), rgb).expect("same shape"),
        depth: Tensor::from_vec(sample.depth.shape(), depth).expect("same shape"),
        family: sample.family,
        seed: sample.seed,
    }
}

/// Crops the window at `(top, left)` of size `crop_h x crop_w` pixels and
/// resizes it back to the full frame.
pub fn crop_resize(sample: &SceneSample, top: f64, left: f64, crop_h: f64, crop_w: f64) -> SceneSample {
    let (h, w) = (sample.height() as f64, sample.width() as f64);
    let (ky, kx) = (crop_h / h, crop_w / w);
    warp(sample, 1.0, |x, y| (left + (x + 0.5) * kx - 0.5, top + (y + 0.5) * ky - 0.5))
}

/// Zooms about the image centre by `factor`; depth is divided by `factor`.
pub fn scale(sample: &SceneSample, factor: f64) -> SceneSample {
    let cx = (sample.width() - 1) as f64 / 2.0;
    let cy = (sample.height() - 1) as f64 / 2.0;
    warp(sample, 1.0 / factor, |x, y| (cx + (x - cx) / factor, cy + (y - cy) / factor))
}

/// Rotates counter-clockwise by `degrees` about the image centre.
pub fn rotate(sample: &SceneSample, degrees: f64) -> SceneSample {
    let cx = (sample.width() - 1) as f64 / 2.0;
    let cy = (sample.height() - 1) as f64 / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    // y points down, so a visual counter-clockwise turn uses the transposed matrix.
    warp(sample, 1.0, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
    })
}

/// Mirrors columns exactly.
pub fn flip_horizontal(sample: &SceneSample) -> SceneSample {
    let flip = |t: &Tensor| {
        let w = t.shape().width();
        let mut v = t.values().to_vec();
        v.chunks_mut(w).for_each(|row| row.reverse());
        Tensor::from_vec(t.shape(), v).expect("same shape")
    };
    SceneSample {
        rgb: flip(&sample.rgb),
        depth: flip(&sample.depth),
        family: sample.family,
        seed: sample.seed,
    }
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Brightness shift, contrast about the mean grey level, then saturation and
/// hue shifts in HSV. Depth is untouched.
pub fn color_jitter(sample: &SceneSample, p: &JitterParams) -> SceneSample {
    let n = sample.height() * sample.width();
    let mut rgb = sample.rgb.values().to_vec();
    for v in rgb.iter_mut() {
        *v = (*v + p.brightness).clamp(0.0, 1.0);
    }
    let mean = rgb.iter().sum::<f64>() / rgb.len() as f64;
    for v in rgb.iter_mut() {
        *v = ((*v - mean) * p.contrast + mean).clamp(0.0, 1.0);
    }
    if p.saturation != 0.0 || p.hue != 0.0 {
        for i in 0..n {
            let [h, s, v] = rgb_to_hsv([rgb[i], rgb[n + i], rgb[2 * n + i]]);
            let out = hsv_to_rgb([h + p.hue, (s + p.saturation).clamp(0.0, 1.0), v]);
            for c in 0..3 {
                rgb[c * n + i] = out[c].clamp(0.0, 1.0);
            }
        }
    }
    SceneSample {
        rgb: Tensor::from_vec(sample.rgb.shape(), rgb).expect("same shape"),
        depth: sample.depth.clone(),
        family: sample.family,
        seed: sample.seed,
    }
}

fn draw(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Crop, scale, flip, rotate, then colour jitter, all drawn from `rng`.
pub fn augment(sample: &SceneSample, config: &AugmentConfig, rng: &mut impl Rng) -> SceneSample {
    let (h, w) = (sample.height() as f64, sample.width() as f64);
    let fh = draw(rng, 0.0, config.crop_frac_max);
    let fw = draw(rng, 0.0, config.crop_frac_max);
    let (ch, cw) = (h * (1.0 - fh), w * (1.0 - fw));
    let top = draw(rng, 0.0, h - ch);
    let left = draw(rng, 0.0, w - cw);
    let factor = draw(rng, config.scale_range.0, config.scale_range.1);
    let flip = rng.gen_bool(config.flip_prob);
    let angle = draw(rng, -config.rotate_deg, config.rotate_deg);
    let jitter = JitterParams {
        brightness: draw(rng, -config.brightness_delta, config.brightness_delta),
        contrast: draw(rng, config.contrast_range.0, config.contrast_range.1),
        saturation: draw(rng, -config.sat_hue_delta, config.sat_hue_delta),
        hue: draw(rng, -config.sat_hue_delta, config.sat_hue_delta),
    };

    let mut out = if fh > 0.0 || fw > 0.0 {
        crop_resize(sample, top, left, ch, cw)
    } else {
        sample.clone()
    };
    if factor != 1.0 {
        out = scale(&out, factor);
    }
    if flip {
        out = flip_horizontal(&out);
    }
    if angle != 0.0 {
        out = rotate(&out, angle);
    }
    if jitter != JitterParams::NONE {
        out = color_jitter(&out, &jitter);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneFamily};
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> SceneSample {
        generate_scene(SceneFamily::Boxes, 3, 32, 64).unwrap()
    }

    #[test]
    fn flip_is_an_involution() {
        let s = sample();
        let back = flip_horizontal(&flip_horizontal(&s));
        assert_eq!(back.rgb.values(), s.rgb.values());
        assert_eq!(back.depth.values(), s.depth.values());
    }

    #[test]
    fn scale_divides_constant_depth() {
        let mut s = sample();
        s.depth = Tensor::full(Shape::new(1, 1, 32, 64).unwrap(), 5.0);
        let out = scale(&s, 1.25);
        assert!(out.depth.values().iter().all(|&d| d == 4.0));
    }

    #[test]
    fn jitter_leaves_depth_alone() {
        let s = sample();
        let p = JitterParams {
            brightness: 0.03,
            contrast: 1.7,
            saturation: -0.05,
            hue: 0.07,
        };
        let out = color_jitter(&s, &p);
        assert_eq!(out.depth.values(), s.depth.values());
        assert_ne!(out.rgb.values(), s.rgb.values());
        assert!(out.rgb.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [[0.2, 0.5, 0.9], [0.9, 0.1, 0.3], [0.4, 0.4, 0.4], [0.0, 1.0, 0.5]] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-12, "{rgb:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn identity_config_is_a_no_op() {
        let s = sample();
        let out = augment(&s, &AugmentConfig::identity(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.rgb.values(), s.rgb.values());
        assert_eq!(out.depth.values(), s.depth.values());
    }

    #[test]
    fn zero_rotation_and_full_crop_reproduce_input() {
        let s = sample();
        assert_eq!(rotate(&s, 0.0).depth.values(), s.depth.values());
        let c = crop_resize(&s, 0.0, 0.0, 32.0, 64.0);
        assert_eq!(c.depth.values(), s.depth.values());
        for (a, b) in c.rgb.values().iter().zip(s.rgb.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn default_config_validates() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            scale_range: (1.2, 0.8),
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
