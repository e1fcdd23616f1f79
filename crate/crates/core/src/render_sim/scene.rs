use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shortest wavelength (pixels) produced by [`SceneSpec::random`].
pub const MIN_WAVELENGTH: f64 = 24.0;

/// Shortest wavelength of the panning focus scene, fine enough for a
/// depth-of-field blur to remove most of the detail.
pub const FOCUS_MIN_WAVELENGTH: f64 = 12.0;

/// Upper bound on rendered pixels per frame accepted from scene files.
const MAX_PIXELS: usize = 1 << 24;

/// `amplitude * sin(kx * u + ky * v + phase)` added to every channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wave {
    pub kx: f64,
    pub ky: f64,
    pub phase: f64,
    pub amplitude: [f64; 3],
}

/// A smooth procedural texture in object space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Texture {
    pub base: [f64; 3],
    #[serde(default)]
    pub waves: Vec<Wave>,
}

impl Texture {
    pub fn flat(rgb: [f64; 3]) -> Self {
        Self {
            base: rgb,
            waves: Vec::new(),
        }
    }

    pub fn eval(&self, u: f64, v: f64) -> [f64; 3] {
        let mut c = self.base;
        for w in &self.waves {
            let s = (w.kx * u + w.ky * v + w.phase).sin();
            for (ci, a) in c.iter_mut().zip(w.amplitude) {
                *ci += a * s;
            }
        }
        c
    }

    /// The texture must stay inside `[0, 1]` without clamping.
    fn validate(&self, what: &str) -> Result<()> {
        for ch in 0..3 {
            let swing: f64 = self.waves.iter().map(|w| w.amplitude[ch].abs()).sum();
            let b = self.base[ch];
            if !(b.is_finite() && swing.is_finite() && b - swing >= 0.0 && b + swing <= 1.0) {
                return Err(Error::domain(format!(
                    "{what}: channel {ch} can leave [0, 1]"
                )));
            }
        }
        if self
            .waves
            .iter()
            .any(|w| !(w.kx.is_finite() && w.ky.is_finite() && w.phase.is_finite()))
        {
            return Err(Error::domain(format!("{what}: non-finite wave")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    #[default]
    Rect,
    Ellipse,
}

/// Top-left corner over time: `start + velocity * t + amplitude * sin(frequency * t + phase)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Trajectory {
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    pub amplitude: [f64; 2],
    pub frequency: f64,
    pub phase: f64,
}

impl Trajectory {
    pub fn fixed(x: f64, y: f64) -> Self {
        Self {
            start: [x, y],
            ..Default::default()
        }
    }

    pub fn at(&self, t: f64) -> [f64; 2] {
        let s = (self.frequency * t + self.phase).sin();
        [
            self.start[0] + self.velocity[0] * t + self.amplitude[0] * s,
            self.start[1] + self.velocity[1] * t + self.amplitude[1] * s,
        ]
    }

    fn is_finite(&self) -> bool {
        self.start
            .iter()
            .chain(&self.velocity)
            .chain(&self.amplitude)
            .chain([&self.frequency, &self.phase])
            .all(|v| v.is_finite())
    }
}

/// A flat billboard at a fixed depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sprite {
    #[serde(default)]
    pub shape: Shape,
    /// `[width, height]` in pixels.
    pub size: [f64; 2],
    /// In `(0, 1]`; 1 is the background plane.
    pub depth: f64,
    pub trajectory: Trajectory,
    pub albedo: Texture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    /// On-screen velocity (pixels per frame) of content on the background
    /// plane. Content at depth `d` moves at `pan / d`.
    #[serde(default)]
    pub pan: [f64; 2],
    pub background: Texture,
    #[serde(default)]
    pub sprites: Vec<Sprite>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0
            || self.height == 0
            || !self.width.is_multiple_of(4)
            || !self.height.is_multiple_of(4)
        {
            return Err(Error::domain(format!(
                "scene resolution {}x{} must be positive multiples of 4",
                self.width, self.height
            )));
        }
        if self
            .width
            .checked_mul(self.height)
            .is_none_or(|p| p > MAX_PIXELS)
        {
            return Err(Error::domain("scene resolution is too large"));
        }
        if self.frame_count == 0 {
            return Err(Error::domain("scene needs at least one frame"));
        }
        if !self.pan.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("pan must be finite"));
        }
        self.background.validate("background")?;
        for (i, s) in self.sprites.iter().enumerate() {
            if !(s.depth > 0.0 && s.depth <= 1.0) {
                return Err(Error::domain(format!(
                    "sprite {i}: depth {} outside (0, 1]",
                    s.depth
                )));
            }
            if !(s.size.iter().all(|v| v.is_finite() && *v > 0.0)) {
                return Err(Error::domain(format!("sprite {i}: size must be positive")));
            }
            if !s.trajectory.is_finite() {
                return Err(Error::domain(format!(
                    "sprite {i}: trajectory must be finite"
                )));
            }
            s.albedo.validate(&format!("sprite {i}"))?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: SceneSpec = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Screen-space top-left of sprite `i` at time `t`, including parallax.
    pub fn sprite_origin(&self, i: usize, t: f64) -> [f64; 2] {
        let s = &self.sprites[i];
        let p = s.trajectory.at(t);
        [
            p[0] + self.pan[0] * t / s.depth,
            p[1] + self.pan[1] * t / s.depth,
        ]
    }

    /// Screen offset of the background texture at time `t`.
    pub fn background_origin(&self, t: f64) -> [f64; 2] {
        [self.pan[0] * t, self.pan[1] * t]
    }

    /// Sprite indices from far to near; ties keep declaration order.
    pub fn paint_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.sprites.len()).collect();
        order.sort_by(|&a, &b| self.sprites[b].depth.total_cmp(&self.sprites[a].depth));
        order
    }

    /// A random scene of smooth textured billboards drifting over a panning
    /// background.
    pub fn random(seed: u64, width: usize, height: usize, frame_count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pan = [rng.gen_range(-2.5..2.5), rng.gen_range(-1.0..1.0)];
        let background = random_texture(&mut rng, MIN_WAVELENGTH);
        let n = rng.gen_range(2..=4);
        let sprites = (0..n)
            .map(|_| {
                let w = rng.gen_range(0.2..0.4) * width as f64;
                let h = rng.gen_range(0.2..0.4) * height as f64;
                Sprite {
                    shape: if rng.gen_bool(0.5) {
                        Shape::Rect
                    } else {
                        Shape::Ellipse
                    },
                    size: [w, h],
                    depth: rng.gen_range(0.35..0.95),
                    trajectory: Trajectory {
                        start: [
                            rng.gen_range(0.0..width as f64 - w),
                            rng.gen_range(0.0..height as f64 - h),
                        ],
                        velocity: [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)],
                        amplitude: [rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)],
                        frequency: rng.gen_range(0.1..0.5),
                        phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    },
                    albedo: random_texture(&mut rng, MIN_WAVELENGTH),
                }
            })
            .collect();
        Self {
            width,
            height,
            frame_count,
            pan,
            background,
            sprites,
        }
    }

    /// A horizontally panning scene whose sprites sit on the `focal_depth`
    /// plane in front of the background, for depth-of-field studies. Sprites
    /// reuse the background's wave spectrum with their own base colour and
    /// phases, so every depth plane carries the same amount of detail.
    pub fn panning_focus_scene(
        seed: u64,
        width: usize,
        height: usize,
        frame_count: usize,
        focal_depth: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pan_speed = rng.gen_range(1.0..2.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let background = random_texture(&mut rng, FOCUS_MIN_WAVELENGTH);
        let n = 2;
        let sprites = (0..n)
            .map(|i| {
                let w = 0.3 * width as f64;
                let h = 0.45 * height as f64;
                let slot = (i as f64 + 0.5) / n as f64;
                let albedo = Texture {
                    base: std::array::from_fn(|_| rng.gen_range(0.35..0.65)),
                    waves: background
                        .waves
                        .iter()
                        .map(|wave| Wave {
                            phase: rng.gen_range(0.0..std::f64::consts::TAU),
                            ..wave.clone()
                        })
                        .collect(),
                };
                Sprite {
                    shape: Shape::Rect,
                    size: [w, h],
                    depth: focal_depth,
                    trajectory: Trajectory {
                        start: [
                            slot * width as f64 - w / 2.0,
                            rng.gen_range(0.1..0.45) * height as f64,
                        ],
                        amplitude: [rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.5)],
                        frequency: rng.gen_range(0.1..0.4),
                        ..Default::default()
                    },
                    albedo,
                }
            })
            .collect();
        Self {
            width,
            height,
            frame_count,
            pan: [pan_speed, 0.0],
            background,
            sprites,
        }
    }
}

fn random_texture(rng: &mut ChaCha8Rng, min_wavelength: f64) -> Texture {
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.35..0.65));
    let waves = (0..3)
        .map(|_| {
            let wavelength = rng.gen_range(min_wavelength..3.0 * min_wavelength);
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let k = std::f64::consts::TAU / wavelength;
            Wave {
                kx: k * angle.cos(),
                ky: k * angle.sin(),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
                amplitude: std::array::from_fn(|_| rng.gen_range(0.0..0.1)),
            }
        })
        .collect();
    Texture { base, waves }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_scenes_validate() {
        for seed in 0..20 {
            SceneSpec::random(seed, 64, 48, 5).validate().unwrap();
            SceneSpec::panning_focus_scene(seed, 64, 48, 5, 0.4)
                .validate()
                .unwrap();
        }
    }

    #[test]
    fn json_round_trip() {
        let s = SceneSpec::random(3, 32, 32, 4);
        assert_eq!(SceneSpec::from_json(&s.to_json().unwrap()).unwrap(), s);
    }

    #[test]
    fn invalid_scenes_are_rejected() {
        let mut s = SceneSpec::random(1, 32, 32, 4);
        s.width = 30;
        assert!(matches!(s.validate(), Err(Error::Domain(_))));
        let mut s = SceneSpec::random(1, 32, 32, 4);
        s.sprites[0].depth = 0.0;
        assert!(s.validate().is_err());
        let mut s = SceneSpec::random(1, 32, 32, 4);
        s.background.base[0] = 1.5;
        assert!(s.validate().is_err());
    }
}
