//! The JSON run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::CorpusSpec;
use crate::render_sim::{InjectionMode, PostEffect, PostEffectStack, SceneSpec};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

/// Scenes rendered by `simulate` and `evaluate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Number of seeded scenes; scene `i` uses seed `seed + i`.
    pub scenes: usize,
    /// A scene file replaces the procedural scenes.
    pub scene_file: Option<PathBuf>,
    /// Depth plane the procedural sprites sit on and the camera focuses on.
    pub focal_depth: f64,
    pub post: PostEffectStack,
    pub mode: InjectionMode,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let focal_depth = 0.4;
        Self {
            width: 96,
            height: 64,
            frames: 6,
            scenes: 10,
            scene_file: None,
            focal_depth,
            post: PostEffectStack::new(vec![PostEffect::DepthOfField {
                focal_depth,
                blur_scale: 6.0,
                max_sigma: 3.0,
            }]),
            mode: InjectionMode::BeforePost,
        }
    }
}

impl SimulateConfig {
    /// The scenes to render under run seed `seed`.
    pub fn scenes(&self, seed: u64) -> Result<Vec<SceneSpec>> {
        if let Some(path) = &self.scene_file {
            let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
            return Ok(vec![SceneSpec::from_json(&text)?]);
        }
        (0..self.scenes as u64)
            .map(|i| {
                let s = SceneSpec::panning_focus_scene(
                    seed.wrapping_add(i),
                    self.width,
                    self.height,
                    self.frames,
                    self.focal_depth,
                );
                s.validate()?;
                Ok(s)
            })
            .collect()
    }
}

/// Everything a command needs besides its file arguments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// The single source of randomness; copied into the trainer, the data
    /// order and the scene generator.
    pub seed: u64,
    /// Style image used by `train` and `evaluate`.
    pub style: Option<PathBuf>,
    pub corpus: CorpusSpec,
    pub train: TrainConfig,
    pub simulate: SimulateConfig,
}

impl RunConfig {
    /// Parses and validates; every failure is a configuration error.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        c.apply_seed(c.seed);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Sets the run seed everywhere it is consumed.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.corpus.shuffle_seed = seed;
        self.corpus.resize_to = (self.train.resolution, self.train.resolution);
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let s = &self.simulate;
        if s.frames < 2 {
            return Err(Error::config("simulate.frames must be at least 2"));
        }
        if s.width == 0
            || s.height == 0
            || !s.width.is_multiple_of(4)
            || !s.height.is_multiple_of(4)
        {
            return Err(Error::config(
                "simulate.width and simulate.height must be positive multiples of 4",
            ));
        }
        if s.width.saturating_mul(s.height) > 1 << 22 {
            return Err(Error::config("simulate resolution is too large"));
        }
        if s.scenes == 0 || s.scenes > 1000 {
            return Err(Error::config("simulate.scenes must be in 1..=1000"));
        }
        if !(s.focal_depth > 0.0 && s.focal_depth <= 1.0) {
            return Err(Error::config("simulate.focal_depth must be in (0, 1]"));
        }
        s.post.validate()
    }
}
