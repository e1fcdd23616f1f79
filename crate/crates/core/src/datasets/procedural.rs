//! Deterministic stand-in images for tests, smoke runs and examples.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{ColourSpace, ImageTensor};
use crate::render_sim::{
    rasterise, render_sequence, InjectionMode, PostEffect, PostEffectStack, SceneSpec,
};
use crate::{Error, Result};

/// A textured still of layered shapes.
pub fn procedural_photo(seed: u64, height: usize, width: usize) -> Result<ImageTensor> {
    Ok(rasterise(&SceneSpec::random(seed, width, height, 1), 0.0)?.colour)
}

/// A frame from the simulated render loop with bloom and vignetting.
pub fn procedural_game_frame(seed: u64, height: usize, width: usize) -> Result<ImageTensor> {
    let scene = SceneSpec::random(seed ^ 0x005e_ed0f_9a3e, width, height, 1);
    let stack = PostEffectStack::new(vec![
        PostEffect::Bloom {
            threshold: 0.55,
            intensity: 0.6,
            sigma: 2.0,
        },
        PostEffect::Vignette { strength: 0.4 },
    ]);
    let out = render_sequence(&scene, &stack, InjectionMode::None, None)?;
    Ok(out.frames.into_iter().next().expect("one frame"))
}

/// A saturated, high-contrast pattern of warped colour bands.
pub fn procedural_style(seed: u64, height: usize, width: usize) -> Result<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette: Vec<[f64; 3]> = (0..4)
        .map(|_| {
            std::array::from_fn(|_| {
                if rng.gen_bool(0.5) {
                    rng.gen_range(0.0..0.25)
                } else {
                    rng.gen_range(0.75..1.0)
                }
            })
        })
        .collect();
    let (k1, k2, warp) = (
        rng.gen_range(0.15..0.35),
        rng.gen_range(0.05..0.15),
        rng.gen_range(2.0..5.0),
    );
    ImageTensor::from_fn(3, height, width, ColourSpace::Rgb, |c, y, x| {
        let (xf, yf) = (x as f64, y as f64);
        let phase = k1 * xf + warp * (k2 * yf).sin() + 0.5 * (0.3 * (xf + yf)).sin();
        let band = (phase.rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * 4.0) as usize;
        palette[band.min(3)][c]
    })
}

/// Writes `photos` stills to `dir/photos` and `synthetic` render-loop frames
/// to `dir/synthetic`, returning both directories.
pub fn write_procedural_corpus(
    dir: &Path,
    photos: usize,
    synthetic: usize,
    size: usize,
    seed: u64,
) -> Result<(PathBuf, PathBuf)> {
    if size == 0 || !size.is_multiple_of(4) {
        return Err(Error::domain(
            "corpus size must be a positive multiple of 4",
        ));
    }
    let (pd, sd) = (dir.join("photos"), dir.join("synthetic"));
    for d in [&pd, &sd] {
        std::fs::create_dir_all(d).map_err(Error::io(d))?;
    }
    for i in 0..photos {
        procedural_photo(seed.wrapping_add(i as u64), size, size)?
            .save_png(&pd.join(format!("photo_{i:03}.png")))?;
    }
    for i in 0..synthetic {
        procedural_game_frame(seed.wrapping_add(i as u64), size, size)?
            .save_png(&sd.join(format!("frame_{i:03}.png")))?;
    }
    Ok((pd, sd))
}
