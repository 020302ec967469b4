//! Weak (flip + shift) and strong (RandAugment-style + cutout) image
//! augmentation. Images are channels-first slices with values in `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_MAGNITUDE: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Weak,
    Strong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    pub op_count: usize,
    pub magnitude: u32,
    pub cutout_fraction: f32,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self::strong()
    }
}

impl AugmentPolicy {
    pub fn weak() -> Self {
        Self {
            kind: AugmentKind::Weak,
            op_count: 0,
            magnitude: 0,
            cutout_fraction: 0.0,
        }
    }

    /// Two ops at magnitude 10 followed by a half-side cutout.
    pub fn strong() -> Self {
        Self {
            kind: AugmentKind::Strong,
            op_count: 2,
            magnitude: 10,
            cutout_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.magnitude > MAX_MAGNITUDE {
            return Err(Error::Config {
                key: "magnitude".into(),
                message: format!("{} outside [0, {MAX_MAGNITUDE}]", self.magnitude),
            });
        }
        if !(0.0..=0.5).contains(&self.cutout_fraction) {
            return Err(Error::Config {
                key: "cutout_fraction".into(),
                message: format!("{} outside [0, 0.5]", self.cutout_fraction),
            });
        }
        Ok(())
    }

    pub fn apply<R: Rng>(&self, image: &[f32], dims: [usize; 3], rng: &mut R) -> Vec<f32> {
        match self.kind {
            AugmentKind::Weak => weak_augment(image, dims, rng),
            AugmentKind::Strong => strong_augment(image, dims, rng, self),
        }
    }
}

/// One draw of the weak pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeakDraw {
    pub flip: bool,
    pub dy: i64,
    pub dx: i64,
}

impl WeakDraw {
    pub fn sample<R: Rng>(dims: [usize; 3], rng: &mut R) -> Self {
        let (sy, sx) = max_weak_shift(dims);
        Self {
            flip: rng.gen_bool(0.5),
            dy: rng.gen_range(-sy..=sy),
            dx: rng.gen_range(-sx..=sx),
        }
    }
}

/// Largest weak translation per axis, `⌊H/8⌋` and `⌊W/8⌋`.
pub fn max_weak_shift(dims: [usize; 3]) -> (i64, i64) {
    ((dims[1] / 8) as i64, (dims[2] / 8) as i64)
}

pub fn apply_weak(image: &[f32], dims: [usize; 3], draw: WeakDraw) -> Vec<f32> {
    let [c, h, w] = dims;
    let mut out = vec![0f32; image.len()];
    for ch in 0..c {
        let src = &image[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let sy = (y - draw.dy).clamp(0, h as i64 - 1) as usize;
                let mut sx = (x - draw.dx).clamp(0, w as i64 - 1) as usize;
                if draw.flip {
                    sx = w - 1 - sx;
                }
                dst[y as usize * w + x as usize] = src[sy * w + sx];
            }
        }
    }
    out
}

pub fn weak_augment<R: Rng>(image: &[f32], dims: [usize; 3], rng: &mut R) -> Vec<f32> {
    let draw = WeakDraw::sample(dims, rng);
    apply_weak(image, dims, draw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrongOp {
    Identity,
    AutoContrast,
    Brightness,
    ColorShift,
    Contrast,
    Equalize,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
}

pub const STRONG_OPS: [StrongOp; 14] = [
    StrongOp::Identity,
    StrongOp::AutoContrast,
    StrongOp::Brightness,
    StrongOp::ColorShift,
    StrongOp::Contrast,
    StrongOp::Equalize,
    StrongOp::Posterize,
    StrongOp::Rotate,
    StrongOp::Sharpness,
    StrongOp::ShearX,
    StrongOp::ShearY,
    StrongOp::Solarize,
    StrongOp::TranslateX,
    StrongOp::TranslateY,
];

pub fn strong_augment<R: Rng>(image: &[f32], dims: [usize; 3], rng: &mut R, policy: &AugmentPolicy) -> Vec<f32> {
    let level = policy.magnitude.min(MAX_MAGNITUDE) as f32 / MAX_MAGNITUDE as f32;
    let mut img = image.to_vec();
    for _ in 0..policy.op_count {
        let op = STRONG_OPS[rng.gen_range(0..STRONG_OPS.len())];
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        img = apply_op(&img, dims, op, level * sign);
    }
    let side = (policy.cutout_fraction * dims[1] as f32).floor() as usize;
    if side > 0 {
        let cy = rng.gen_range(0..dims[1]);
        let cx = rng.gen_range(0..dims[2]);
        cutout(&mut img, dims, cy, cx, side);
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

/// The weak flip and shift followed by the strong pipeline, as used for
/// every strongly augmented training view.
pub fn strong_view<R: Rng>(image: &[f32], dims: [usize; 3], rng: &mut R, policy: &AugmentPolicy) -> Vec<f32> {
    let shifted = weak_augment(image, dims, rng);
    strong_augment(&shifted, dims, rng, policy)
}

/// Fills a `side × side` square centered at (cy, cx) with 0.5, cropped to the image.
pub fn cutout(img: &mut [f32], dims: [usize; 3], cy: usize, cx: usize, side: usize) {
    let [c, h, w] = dims;
    let y0 = cy.saturating_sub(side / 2);
    let x0 = cx.saturating_sub(side / 2);
    let (y1, x1) = ((y0 + side).min(h), (x0 + side).min(w));
    for ch in 0..c {
        for y in y0..y1 {
            for x in x0..x1 {
                img[ch * h * w + y * w + x] = 0.5;
            }
        }
    }
}

/// Applies one op; `s` in `[-1, 1]` is the signed strength.
pub fn apply_op(img: &[f32], dims: [usize; 3], op: StrongOp, s: f32) -> Vec<f32> {
    let [c, h, w] = dims;
    let plane = h * w;
    let a = s.abs();
    match op {
        StrongOp::Identity => img.to_vec(),
        StrongOp::AutoContrast => {
            let mut out = img.to_vec();
            for p in out.chunks_mut(plane) {
                let lo = p.iter().cloned().fold(f32::INFINITY, f32::min);
                let hi = p.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                if hi > lo {
                    p.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
                }
            }
            out
        }
        StrongOp::Brightness => {
            let f = 1.0 + 0.9 * s;
            img.iter().map(|v| v * f).collect()
        }
        StrongOp::ColorShift => {
            let f = 1.0 + 0.9 * s;
            let mut out = img.to_vec();
            for i in 0..plane {
                let gray = (0..c).map(|ch| img[ch * plane + i]).sum::<f32>() / c as f32;
                for ch in 0..c {
                    out[ch * plane + i] = gray + f * (img[ch * plane + i] - gray);
                }
            }
            out
        }
        StrongOp::Contrast => {
            let f = 1.0 + 0.9 * s;
            let mean = img.iter().sum::<f32>() / img.len() as f32;
            img.iter().map(|v| mean + f * (v - mean)).collect()
        }
        StrongOp::Equalize => {
            let mut out = img.to_vec();
            for p in out.chunks_mut(plane) {
                let bin = |v: f32| ((v.clamp(0.0, 1.0) * 255.0).round()) as usize;
                let mut cdf = [0usize; 256];
                p.iter().for_each(|&v| cdf[bin(v)] += 1);
                for i in 1..256 {
                    cdf[i] += cdf[i - 1];
                }
                let first = cdf.iter().copied().find(|&n| n > 0).unwrap_or(0);
                if plane > first {
                    let span = (plane - first) as f32;
                    p.iter_mut()
                        .for_each(|v| *v = (cdf[bin(*v)] - first) as f32 / span);
                }
            }
            out
        }
        StrongOp::Posterize => {
            let bits = 8 - (4.0 * a).round() as i32;
            let levels = (1 << bits) as f32;
            img.iter()
                .map(|v| ((v * 255.0 / 256.0 * levels).floor() / levels * 256.0 / 255.0).min(1.0))
                .collect()
        }
        StrongOp::Solarize => {
            let thr = 1.0 - a;
            img.iter().map(|&v| if v > thr { 1.0 - v } else { v }).collect()
        }
        StrongOp::Sharpness => {
            let f = 1.0 + 0.9 * s;
            let mut out = img.to_vec();
            for ch in 0..c {
                let p = &img[ch * plane..(ch + 1) * plane];
                for y in 1..h.saturating_sub(1) {
                    for x in 1..w.saturating_sub(1) {
                        let mut acc = 4.0 * p[y * w + x];
                        for (dy, dx) in [(-1i64, -1i64), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                            acc += p[(y as i64 + dy) as usize * w + (x as i64 + dx) as usize];
                        }
                        let smooth = acc / 12.0;
                        out[ch * plane + y * w + x] = smooth + f * (p[y * w + x] - smooth);
                    }
                }
            }
            out
        }
        StrongOp::Rotate => {
            let theta = (30.0 * s).to_radians();
            let (sin, cos) = theta.sin_cos();
            let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
            resample(img, dims, |y, x| {
                let (yy, xx) = (y - cy, x - cx);
                (cy + cos * yy - sin * xx, cx + sin * yy + cos * xx)
            })
        }
        StrongOp::ShearX => resample(img, dims, |y, x| (y, x + 0.3 * s * (y - (h as f32 - 1.0) / 2.0))),
        StrongOp::ShearY => resample(img, dims, |y, x| (y + 0.3 * s * (x - (w as f32 - 1.0) / 2.0), x)),
        StrongOp::TranslateX => {
            let d = (0.3 * s * w as f32).round();
            resample(img, dims, |y, x| (y, x - d))
        }
        StrongOp::TranslateY => {
            let d = (0.3 * s * h as f32).round();
            resample(img, dims, |y, x| (y - d, x))
        }
    }
}

/// Nearest-neighbour inverse mapping with edge padding.
fn resample(img: &[f32], dims: [usize; 3], src: impl Fn(f32, f32) -> (f32, f32)) -> Vec<f32> {
    let [c, h, w] = dims;
    let plane = h * w;
    let mut map = Vec::with_capacity(plane);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src(y as f32, x as f32);
            let sy = (sy.round() as i64).clamp(0, h as i64 - 1) as usize;
            let sx = (sx.round() as i64).clamp(0, w as i64 - 1) as usize;
            map.push(sy * w + sx);
        }
    }
    let mut out = vec![0f32; img.len()];
    for ch in 0..c {
        for (i, &m) in map.iter().enumerate() {
            out[ch * plane + i] = img[ch * plane + m];
        }
    }
    out
}
