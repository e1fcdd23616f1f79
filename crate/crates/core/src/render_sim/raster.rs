use super::scene::{SceneSpec, Shape};
use crate::imaging::{ColourSpace, FlowField, ImageTensor};
use crate::Result;

/// Surface id of the background plane; sprite `i` has id `i + 1`.
pub const BACKGROUND_ID: u32 = 0;

/// Colour, depth and surface ids of one rasterised frame.
pub struct Raster {
    pub colour: ImageTensor,
    pub depth: ImageTensor,
    pub ids: Vec<u32>,
}

fn covers(scene: &SceneSpec, i: usize, origin: [f64; 2], x: f64, y: f64) -> bool {
    let [w, h] = scene.sprites[i].size;
    let (u, v) = (x - origin[0], y - origin[1]);
    match scene.sprites[i].shape {
        Shape::Rect => (0.0..w).contains(&u) && (0.0..h).contains(&v),
        Shape::Ellipse => {
            let (du, dv) = ((u - w / 2.0) / (w / 2.0), (v - h / 2.0) / (h / 2.0));
            du * du + dv * dv <= 1.0
        }
    }
}

/// Surface id at every pixel centre of frame `t` (painter's order).
pub fn surface_ids(scene: &SceneSpec, t: f64) -> Vec<u32> {
    let (w, h) = (scene.width, scene.height);
    let mut ids = vec![BACKGROUND_ID; w * h];
    for i in scene.paint_order() {
        let o = scene.sprite_origin(i, t);
        let [sw, sh] = scene.sprites[i].size;
        let x0 = o[0].floor().max(0.0) as usize;
        let y0 = o[1].floor().max(0.0) as usize;
        let x1 = ((o[0] + sw).ceil().max(0.0) as usize).min(w);
        let y1 = ((o[1] + sh).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                if covers(scene, i, o, x as f64, y as f64) {
                    ids[y * w + x] = i as u32 + 1;
                }
            }
        }
    }
    ids
}

pub fn rasterise(scene: &SceneSpec, t: f64) -> Result<Raster> {
    let (w, h) = (scene.width, scene.height);
    let ids = surface_ids(scene, t);
    let bg = scene.background_origin(t);
    let origins: Vec<[f64; 2]> = (0..scene.sprites.len())
        .map(|i| scene.sprite_origin(i, t))
        .collect();
    let mut colour = vec![0.0; 3 * w * h];
    let mut depth = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (c, d) = match ids[p] {
                BACKGROUND_ID => (
                    scene.background.eval(x as f64 - bg[0], y as f64 - bg[1]),
                    1.0,
                ),
                id => {
                    let i = id as usize - 1;
                    let o = origins[i];
                    let s = &scene.sprites[i];
                    (s.albedo.eval(x as f64 - o[0], y as f64 - o[1]), s.depth)
                }
            };
            for ch in 0..3 {
                colour[ch * w * h + p] = c[ch];
            }
            depth[p] = d;
        }
    }
    Ok(Raster {
        colour: ImageTensor::new_clamped(3, h, w, colour, ColourSpace::Rgb)?,
        depth: ImageTensor::new(1, h, w, depth, ColourSpace::Luminance)?,
        ids,
    })
}

/// Screen displacement of surface `id` between `t` and `t + 1`.
fn surface_motion(scene: &SceneSpec, id: u32, t: f64) -> [f64; 2] {
    let (a, b) = match id {
        BACKGROUND_ID => (scene.background_origin(t), scene.background_origin(t + 1.0)),
        id => (
            scene.sprite_origin(id as usize - 1, t),
            scene.sprite_origin(id as usize - 1, t + 1.0),
        ),
    };
    [b[0] - a[0], b[1] - a[1]]
}

/// Per-pixel screen motion of the surface visible in frame `t` (unmasked).
pub fn motion_field(scene: &SceneSpec, ids: &[u32], t: f64) -> Result<FlowField> {
    let motions: Vec<[f64; 2]> = (0..=scene.sprites.len() as u32)
        .map(|id| surface_motion(scene, id, t))
        .collect();
    let dx = ids.iter().map(|&id| motions[id as usize][0]).collect();
    let dy = ids.iter().map(|&id| motions[id as usize][1]).collect();
    FlowField::new(scene.height, scene.width, dx, dy, None)
}

/// Flow from frame `t` to `t + 1`, indexed by pixels of frame `t + 1`: the
/// vector at `p` is the offset into frame `t` that reconstructs `p`.
///
/// A pixel is valid when every bilinear source neighbour in frame `t` lies
/// inside the frame and shows the same surface.
pub fn analytic_flow(scene: &SceneSpec, t: f64) -> Result<FlowField> {
    let (w, h) = (scene.width, scene.height);
    let now = surface_ids(scene, t);
    let next = surface_ids(scene, t + 1.0);
    let motions: Vec<[f64; 2]> = (0..=scene.sprites.len() as u32)
        .map(|id| surface_motion(scene, id, t))
        .collect();
    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let id = next[p];
            let [mx, my] = motions[id as usize];
            dx[p] = -mx;
            dy[p] = -my;
            let (sx, sy) = (x as f64 - mx, y as f64 - my);
            valid[p] = neighbours(sx, w)
                .zip(neighbours(sy, h))
                .is_some_and(|(xs, ys)| {
                    ys.iter()
                        .flatten()
                        .all(|&yy| xs.iter().flatten().all(|&xx| now[yy * w + xx] == id))
                });
        }
    }
    FlowField::new(h, w, dx, dy, Some(valid))
}

/// Pixel indices with non-zero bilinear weight at coordinate `s`, or `None`
/// when `s` falls outside `[0, n - 1]`.
fn neighbours(s: f64, n: usize) -> Option<[Option<usize>; 2]> {
    if !(s >= 0.0 && s <= (n - 1) as f64) {
        return None;
    }
    let f = s.floor();
    let i = f as usize;
    Some(if s > f {
        [Some(i), Some(i + 1)]
    } else {
        [Some(i), None]
    })
}
