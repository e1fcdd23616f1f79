//! A 2.5-D stand-in for a real-time render loop.
//!
//! Procedural billboard scenes rasterise to colour, depth and surface-id
//! buffers with exact optical flow. A stylisation pass can be injected
//! before or after the post-process stack.

mod effects;
mod raster;
mod scene;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use effects::{
    bloom, depth_of_field, erode, laplacian_energy, motion_blur, vignette, PostEffect,
    PostEffectStack,
};
pub use raster::{analytic_flow, motion_field, rasterise, surface_ids, Raster, BACKGROUND_ID};
pub use scene::{
    SceneSpec, Shape, Sprite, Texture, Trajectory, Wave, FOCUS_MIN_WAVELENGTH, MIN_WAVELENGTH,
};

use crate::imaging::{write_flo, FlowField, ImageTensor};
use crate::network::StyleModel;
use crate::{Error, Result};

/// Where the stylisation pass runs relative to the post-process stack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    #[default]
    BeforePost,
    AfterPost,
    None,
}

impl InjectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InjectionMode::BeforePost => "before_post",
            InjectionMode::AfterPost => "after_post",
            InjectionMode::None => "none",
        }
    }
}

impl std::str::FromStr for InjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before_post" => Ok(InjectionMode::BeforePost),
            "after_post" => Ok(InjectionMode::AfterPost),
            "none" => Ok(InjectionMode::None),
            other => Err(Error::config(format!(
                "unknown injection mode {other:?}; expected before_post, after_post or none"
            ))),
        }
    }
}

/// A colour-buffer transform the render loop can host.
pub trait StylePass {
    fn apply(&self, colour: &ImageTensor) -> Result<ImageTensor>;
    fn id(&self) -> String;
}

impl StylePass for StyleModel<f32> {
    fn apply(&self, colour: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.stylise(colour)?.display)
    }

    fn id(&self) -> String {
        format!("style-network:{}", &self.checksum()[..12])
    }
}

/// Passes the colour buffer through unchanged; isolates ordering effects in
/// tests.
pub struct IdentityPass;

impl StylePass for IdentityPass {
    fn apply(&self, colour: &ImageTensor) -> Result<ImageTensor> {
        Ok(colour.clone())
    }

    fn id(&self) -> String {
        "identity".into()
    }
}

/// Buffers of one frame at the injection point.
#[derive(Clone, Debug)]
pub struct GBufferFrame {
    pub colour: ImageTensor,
    pub depth: ImageTensor,
    pub ids: Vec<u32>,
    /// Screen motion of the surface at each pixel during the next frame.
    pub motion: FlowField,
    /// Masked flow to the next frame (see [`analytic_flow`]).
    pub flow: FlowField,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub mode: InjectionMode,
    pub frames: Vec<ImageTensor>,
    pub gbuffers: Vec<GBufferFrame>,
}

impl RenderOutput {
    /// Flows between consecutive frames (`frames.len() - 1` of them).
    pub fn flows(&self) -> Vec<FlowField> {
        let n = self.gbuffers.len().saturating_sub(1);
        self.gbuffers[..n].iter().map(|g| g.flow.clone()).collect()
    }

    /// Writes `frame_NNNN.png`, `depth_NNNN.png` and `flow_NNNN.flo`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let mut written = Vec::new();
        for (t, (frame, g)) in self.frames.iter().zip(&self.gbuffers).enumerate() {
            let f = dir.join(format!("frame_{t:04}.png"));
            frame.save_png(&f)?;
            let d = dir.join(format!("depth_{t:04}.png"));
            g.depth.save_png(&d)?;
            written.extend([f, d]);
            if t + 1 < self.frames.len() {
                let fl = dir.join(format!("flow_{t:04}.flo"));
                write_flo(&g.flow, &fl)?;
                written.push(fl);
            }
        }
        Ok(written)
    }
}

/// G-buffer of frame `t`.
pub fn gbuffer_frame(scene: &SceneSpec, t: usize) -> Result<GBufferFrame> {
    let tf = t as f64;
    let Raster { colour, depth, ids } = rasterise(scene, tf)?;
    let motion = motion_field(scene, &ids, tf)?;
    let flow = analytic_flow(scene, tf)?;
    Ok(GBufferFrame {
        colour,
        depth,
        ids,
        motion,
        flow,
    })
}

/// Exact flow from frame `t` to `t + 1` with disocclusions masked.
pub fn ground_truth_flow(scene: &SceneSpec, t: usize) -> Result<FlowField> {
    scene.validate()?;
    if t + 1 >= scene.frame_count {
        return Err(Error::domain(format!(
            "frame {t} has no successor in a {}-frame scene",
            scene.frame_count
        )));
    }
    analytic_flow(scene, t as f64)
}

/// Applies `stack` to the frame's own colour buffer.
pub fn apply_post_stack(frame: &GBufferFrame, stack: &PostEffectStack) -> Result<ImageTensor> {
    stack.apply(&frame.colour, &frame.depth, &frame.motion)
}

/// Renders every frame, running `pass` at the position `mode` selects.
pub fn render_sequence(
    scene: &SceneSpec,
    stack: &PostEffectStack,
    mode: InjectionMode,
    pass: Option<&dyn StylePass>,
) -> Result<RenderOutput> {
    scene.validate()?;
    stack.validate()?;
    let pass = match (mode, pass) {
        (InjectionMode::None, _) => None,
        (_, Some(p)) => Some(p),
        (m, None) => {
            return Err(Error::config(format!(
                "injection mode {} needs a style pass",
                m.as_str()
            )));
        }
    };
    let mut frames = Vec::with_capacity(scene.frame_count);
    let mut gbuffers = Vec::with_capacity(scene.frame_count);
    for t in 0..scene.frame_count {
        let g = gbuffer_frame(scene, t)?;
        let out = match (mode, pass) {
            (InjectionMode::BeforePost, Some(p)) => {
                stack.apply(&p.apply(&g.colour)?, &g.depth, &g.motion)?
            }
            (InjectionMode::AfterPost, Some(p)) => {
                p.apply(&stack.apply(&g.colour, &g.depth, &g.motion)?)?
            }
            _ => stack.apply(&g.colour, &g.depth, &g.motion)?,
        };
        frames.push(out);
        gbuffers.push(g);
    }
    Ok(RenderOutput {
        mode,
        frames,
        gbuffers,
    })
}

/// Mean squared Laplacian of every output frame over the background plane
/// and over the `focal_depth` plane, each summed over frames. Both regions
/// come from the frame's own depth buffer. The focal region is eroded by
/// `focal_erode` and the background by `background_erode`, which should
/// exceed the blur reach so halos of in-focus edges are not counted.
pub fn focus_region_energies(
    output: &RenderOutput,
    focal_depth: f64,
    focal_erode: usize,
    background_erode: usize,
) -> Result<(f64, f64)> {
    let (mut background, mut focal) = (0.0, 0.0);
    for (frame, g) in output.frames.iter().zip(&output.gbuffers) {
        let (_, h, w) = frame.dims();
        let depth = g.depth.data();
        let far: Vec<bool> = depth.iter().map(|&d| d == 1.0).collect();
        let near: Vec<bool> = depth.iter().map(|&d| d == focal_depth).collect();
        background += laplacian_energy(frame, &erode(&far, h, w, background_erode))?;
        focal += laplacian_energy(frame, &erode(&near, h, w, focal_erode))?;
    }
    Ok((background, focal))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dof_stack() -> PostEffectStack {
        PostEffectStack::new(vec![PostEffect::DepthOfField {
            focal_depth: 0.5,
            blur_scale: 4.0,
            max_sigma: 4.0,
        }])
    }

    #[test]
    fn static_scene_frames_are_identical() {
        let mut s = SceneSpec::random(2, 32, 32, 3);
        s.pan = [0.0, 0.0];
        for sp in &mut s.sprites {
            sp.trajectory.velocity = [0.0, 0.0];
            sp.trajectory.amplitude = [0.0, 0.0];
        }
        let out =
            render_sequence(&s, &PostEffectStack::default(), InjectionMode::None, None).unwrap();
        assert!(out.frames.windows(2).all(|w| w[0] == w[1]));
        let f = ground_truth_flow(&s, 0).unwrap();
        assert!(f.dx().iter().chain(f.dy()).all(|&v| v == 0.0));
        assert_eq!(f.valid_count(), 32 * 32);
    }

    #[test]
    fn identity_pass_makes_order_irrelevant() {
        let s = SceneSpec::random(4, 32, 32, 2);
        let before = render_sequence(
            &s,
            &dof_stack(),
            InjectionMode::BeforePost,
            Some(&IdentityPass),
        )
        .unwrap();
        let after = render_sequence(
            &s,
            &dof_stack(),
            InjectionMode::AfterPost,
            Some(&IdentityPass),
        )
        .unwrap();
        assert_eq!(before.frames, after.frames);
    }

    #[test]
    fn stylised_modes_need_a_pass() {
        let s = SceneSpec::random(4, 32, 32, 2);
        assert!(render_sequence(&s, &dof_stack(), InjectionMode::BeforePost, None).is_err());
    }

    #[test]
    fn mode_none_ignores_the_model() {
        let s = SceneSpec::random(5, 32, 32, 2);
        let m = crate::network::build_network(0);
        let a = render_sequence(&s, &dof_stack(), InjectionMode::None, Some(&m)).unwrap();
        let b = render_sequence(&s, &dof_stack(), InjectionMode::None, None).unwrap();
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn out_of_range_flow_is_a_domain_error() {
        let s = SceneSpec::random(1, 16, 16, 3);
        assert!(matches!(ground_truth_flow(&s, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn mode_parses() {
        assert_eq!(
            "after_post".parse::<InjectionMode>().unwrap(),
            InjectionMode::AfterPost
        );
        assert!("sideways".parse::<InjectionMode>().is_err());
    }
}
