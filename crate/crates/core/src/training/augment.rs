//! Random rotation, isotropic scaling and horizontal flips about the image centre.

use rand::Rng;

use crate::data::Sample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Rotations are drawn uniformly from `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_rotation_deg: 10.0,
            scale_min: 0.9,
            scale_max: 1.1,
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(format!(
                "max_rotation_deg must lie in [0, 180], got {}",
                self.max_rotation_deg
            ));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(format!(
                "scale range [{}, {}] must be positive and ordered",
                self.scale_min, self.scale_max
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(format!("flip_prob must lie in [0, 1], got {}", self.flip_prob));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation_deg: f64,
    pub scale: f64,
    pub flip: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        rotation_deg: 0.0,
        scale: 1.0,
        flip: false,
    };

    pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let r = cfg.max_rotation_deg;
        Self {
            rotation_deg: if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 },
            scale: if cfg.scale_max > cfg.scale_min {
                rng.random_range(cfg.scale_min..=cfg.scale_max)
            } else {
                cfg.scale_min
            },
            flip: rng.random_bool(cfg.flip_prob),
        }
    }

    /// Resamples `sample`: bilinear for the image, nearest neighbour for the
    /// mask, zero outside the source extent.
    pub fn apply(&self, sample: &Sample) -> Sample {
        let (h, w) = (sample.height, sample.width);
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let inv = 1.0 / self.scale;
        let img = &sample.image;
        let at = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                img[y as usize * w + x as usize] as f64
            }
        };
        let mut image = Vec::with_capacity(h * w);
        let mut mask = sample.mask.as_ref().map(|_| Vec::with_capacity(h * w));
        for y in 0..h {
            for x in 0..w {
                let x = if self.flip { w - 1 - x } else { x };
                // Inverse map: output offset rotated back and unscaled.
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let sy = cy + inv * (cos * dy - sin * dx);
                let sx = cx + inv * (sin * dy + cos * dx);

                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as isize, x0 as isize);
                let mut v = at(y0, x0) * (1.0 - fy) * (1.0 - fx) + at(y0, x0 + 1) * (1.0 - fy) * fx;
                if fy != 0.0 {
                    v += at(y0 + 1, x0) * fy * (1.0 - fx) + at(y0 + 1, x0 + 1) * fy * fx;
                }
                image.push(v.clamp(0.0, 1.0) as f32);

                if let (Some(out), Some(src)) = (mask.as_mut(), &sample.mask) {
                    let (ny, nx) = (sy.round(), sx.round());
                    let inside = ny >= 0.0 && nx >= 0.0 && ny < h as f64 && nx < w as f64;
                    out.push(if inside { src[ny as usize * w + nx as usize] } else { 0 });
                }
            }
        }
        Sample {
            id: sample.id.clone(),
            height: h,
            width: w,
            image,
            mask,
        }
    }
}

/// Applies a freshly drawn transform, or clones the sample when disabled.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    if !cfg.enabled {
        return sample.clone();
    }
    Transform::draw(cfg, rng).apply(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    #[test]
    fn identity_is_exact() {
        let s = &generate_synthetic(1, 16, 12, 3)[0];
        assert_eq!(&Transform::IDENTITY.apply(s), s);
    }

    #[test]
    fn double_flip_is_identity() {
        let s = &generate_synthetic(1, 16, 12, 3)[0];
        let flip = Transform {
            flip: true,
            ..Transform::IDENTITY
        };
        let once = flip.apply(s);
        assert_ne!(&once, s);
        assert_eq!(&flip.apply(&once), s);
    }

    #[test]
    fn disabled_config_is_passthrough() {
        use rand::SeedableRng;
        let s = &generate_synthetic(1, 8, 8, 1)[0];
        let cfg = AugmentConfig {
            enabled: false,
            ..AugmentConfig::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(&augment(s, &cfg, &mut rng), s);
    }
}
