use std::path::Path;

use super::ImageTensor;
use crate::{Error, Result};

/// Values with a magnitude above this are "unknown" in the Middlebury layout.
pub const UNKNOWN_FLOW: f32 = 1e10;
const UNKNOWN_THRESHOLD: f32 = 1e9;
const FLO_MAGIC: f32 = 202021.25;
const MAX_FLO_PIXELS: usize = 1 << 26;

/// Per-pixel displacement between consecutive frames.
///
/// The vector stored at pixel `p` is the sampling offset into frame `t` that
/// reconstructs pixel `p` of frame `t + 1`: `next(p) ~ frame(p + v(p))`.
/// Content moving right by `v` px/frame therefore carries the vector `-v`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
    valid: Option<Vec<bool>>,
}

impl FlowField {
    pub fn new(
        height: usize,
        width: usize,
        dx: Vec<f64>,
        dy: Vec<f64>,
        valid: Option<Vec<bool>>,
    ) -> Result<Self> {
        let n = height * width;
        if n == 0 {
            return Err(Error::domain("empty flow field"));
        }
        if dx.len() != n || dy.len() != n {
            return Err(Error::domain(format!(
                "flow components have {} and {} entries for {height}x{width}",
                dx.len(),
                dy.len()
            )));
        }
        if valid.as_ref().is_some_and(|m| m.len() != n) {
            return Err(Error::domain("flow validity mask has the wrong size"));
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite flow vector"));
        }
        Ok(Self {
            height,
            width,
            dx,
            dy,
            valid,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::uniform(height, width, 0.0, 0.0)
    }

    pub fn uniform(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        let n = height * width;
        Self::new(height, width, vec![dx; n], vec![dy; n], None).expect("finite uniform flow")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid.as_ref().is_none_or(|m| m[y * self.width + x])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.as_ref().map_or(self.height * self.width, |m| {
            m.iter().filter(|&&v| v).count()
        })
    }

    pub fn with_mask(mut self, mask: Option<Vec<bool>>) -> Result<Self> {
        if mask
            .as_ref()
            .is_some_and(|m| m.len() != self.height * self.width)
        {
            return Err(Error::domain("flow validity mask has the wrong size"));
        }
        self.valid = mask;
        Ok(self)
    }

    /// Middlebury `.flo` bytes; masked pixels are written as unknown flow.
    pub fn to_flo_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.dx.len());
        out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        out.extend_from_slice(&(self.width as i32).to_le_bytes());
        out.extend_from_slice(&(self.height as i32).to_le_bytes());
        for i in 0..self.dx.len() {
            let known = self.valid.as_ref().is_none_or(|m| m[i]);
            let (u, v) = if known {
                (self.dx[i] as f32, self.dy[i] as f32)
            } else {
                (UNKNOWN_FLOW, UNKNOWN_FLOW)
            };
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Decodes Middlebury `.flo` bytes. Unknown vectors become masked zeros.
pub fn parse_flo(bytes: &[u8]) -> Result<FlowField> {
    let corrupt = |reason: String| Error::Corrupt {
        what: "flo file",
        reason,
    };
    if bytes.len() < 12 {
        return Err(corrupt(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(corrupt(format!("bad magic {magic}")));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 {
        return Err(corrupt(format!("non-positive size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let n = w
        .checked_mul(h)
        .filter(|&n| n <= MAX_FLO_PIXELS)
        .ok_or_else(|| corrupt(format!("implausible size {w}x{h}")))?;
    if bytes.len() != 12 + 8 * n {
        return Err(corrupt(format!(
            "expected {} bytes for {w}x{h}, got {}",
            12 + 8 * n,
            bytes.len()
        )));
    }
    let mut dx = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for i in 0..n {
        let u = f32::from_le_bytes(word(12 + 8 * i));
        let v = f32::from_le_bytes(word(16 + 8 * i));
        let unknown = !u.is_finite()
            || !v.is_finite()
            || u.abs() > UNKNOWN_THRESHOLD
            || v.abs() > UNKNOWN_THRESHOLD;
        if unknown {
            dx.push(0.0);
            dy.push(0.0);
        } else {
            dx.push(u as f64);
            dy.push(v as f64);
        }
        mask.push(!unknown);
    }
    let valid = if mask.iter().all(|&m| m) {
        None
    } else {
        Some(mask)
    };
    FlowField::new(h, w, dx, dy, valid)
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    parse_flo(&bytes)
}

pub fn write_flo(flow: &FlowField, path: &Path) -> Result<()> {
    std::fs::write(path, flow.to_flo_bytes()).map_err(Error::io(path))
}

/// Backward warp: `out(p) = frame(p + flow(p))`, bilinear, sample coordinates
/// clamped to the frame.
pub fn warp_with_flow(frame: &ImageTensor, flow: &FlowField) -> Result<ImageTensor> {
    let (c, h, w) = frame.dims();
    if flow.height() != h || flow.width() != w {
        return Err(Error::domain(format!(
            "flow {}x{} does not match frame {h}x{w}",
            flow.height(),
            flow.width()
        )));
    }
    let mut data = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = flow.at(y, x);
            let sx = (x as f64 + fx).clamp(0.0, (w - 1) as f64);
            let sy = (y as f64 + fy).clamp(0.0, (h - 1) as f64);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let ax = sx - x0 as f64;
            let ay = sy - y0 as f64;
            for ch in 0..c {
                let p = frame.plane(ch);
                let top = p[y0 * w + x0] * (1.0 - ax) + p[y0 * w + x1] * ax;
                let bot = p[y1 * w + x0] * (1.0 - ax) + p[y1 * w + x1] * ax;
                data[(ch * h + y) * w + x] = top * (1.0 - ay) + bot * ay;
            }
        }
    }
    ImageTensor::new_clamped(c, h, w, data, frame.colour_space())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ColourSpace;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(3, h, w, ColourSpace::Rgb, |c, y, x| {
            ((c * 31 + y * 7 + x * 3) % 23) as f64 / 22.0
        })
        .unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let img = ramp(6, 9);
        let out = warp_with_flow(&img, &FlowField::zeros(6, 9)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn unit_shift_reads_right_neighbour() {
        let img = ramp(5, 8);
        let out = warp_with_flow(&img, &FlowField::uniform(5, 8, 1.0, 0.0)).unwrap();
        for c in 0..3 {
            for y in 0..5 {
                for x in 0..8 {
                    let expect = img.get(c, y, (x + 1).min(7));
                    assert_eq!(out.get(c, y, x), expect);
                }
            }
        }
    }

    #[test]
    fn half_pixel_flow_averages_neighbours() {
        let img = ImageTensor::from_fn(1, 3, 2, ColourSpace::Luminance, |_, y, x| {
            (y * 2 + x) as f64 / 10.0
        })
        .unwrap();
        let out = warp_with_flow(&img, &FlowField::uniform(3, 2, 0.5, 0.0)).unwrap();
        for y in 0..3 {
            let mean = 0.5 * (img.get(0, y, 0) + img.get(0, y, 1));
            assert!((out.get(0, y, 0) - mean).abs() < 1e-6);
            assert_eq!(out.get(0, y, 1), img.get(0, y, 1));
        }
    }

    #[test]
    fn dimension_mismatch_is_a_domain_error() {
        let img = ramp(4, 4);
        assert!(matches!(
            warp_with_flow(&img, &FlowField::zeros(4, 5)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn flo_round_trip_keeps_mask() {
        let mask: Vec<bool> = (0..12).map(|i| i % 5 != 0).collect();
        let f = FlowField::new(
            3,
            4,
            (0..12).map(|i| i as f64 * 0.25).collect(),
            vec![-1.5; 12],
            Some(mask.clone()),
        )
        .unwrap();
        let back = parse_flo(&f.to_flo_bytes()).unwrap();
        assert_eq!(back.mask().unwrap(), &mask[..]);
        for i in 0..12 {
            if mask[i] {
                assert_eq!(back.dx()[i], f.dx()[i]);
                assert_eq!(back.dy()[i], -1.5);
            }
        }
    }

    #[test]
    fn flo_rejects_garbage() {
        assert!(parse_flo(b"PIEH").is_err());
        let mut b = FlowField::zeros(2, 2).to_flo_bytes();
        b.pop();
        assert!(matches!(parse_flo(&b), Err(Error::Corrupt { .. })));
        b[0] = 0;
        assert!(parse_flo(&b).is_err());
    }
}
