//! Spatio-temporal feature kernels: RoIAlign, tube-of-interest pooling,
//! the temporal-then-spatial baseline, and pose / box mask rasterization.
//!
//! Feature coordinates are continuous with the value of cell `(i, j)` sitting
//! at `(j + 0.5, i + 0.5)`. Bilinear samples clamp to the border cells.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, Trajectory};

pub const DEFAULT_SAMPLING_RATIO: usize = 2;

/// `d x T x H x W` features stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    d: usize,
    t: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FeatureVolume {
    pub fn new(d: usize, t: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || t == 0 || h == 0 || w == 0 {
            return Err(Error::data(format!("volume dimensions must be positive, got {d}x{t}x{h}x{w}")));
        }
        if data.len() != d * t * h * w {
            return Err(Error::data(format!(
                "volume {d}x{t}x{h}x{w} needs {} values, got {}",
                d * t * h * w,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("volume contains non-finite values"));
        }
        Ok(FeatureVolume { d, t, h, w, data })
    }

    pub fn from_fn(
        d: usize,
        t: usize,
        h: usize,
        w: usize,
        f: impl Fn(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(d * t * h * w);
        for c in 0..d {
            for f_ in 0..t {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(c, f_, y, x));
                    }
                }
            }
        }
        FeatureVolume::new(d, t, h, w, data)
    }

    /// (d, T, H, W)
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.d, self.t, self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, c: usize, f: usize, y: usize, x: usize) -> f64 {
        self.data[((c * self.t + f) * self.h + y) * self.w + x]
    }

    /// Frame `f` as a `d x H x W` map.
    pub fn frame(&self, f: usize) -> FeatureMap {
        let mut data = Vec::with_capacity(self.d * self.h * self.w);
        for c in 0..self.d {
            let start = (c * self.t + f) * self.h * self.w;
            data.extend_from_slice(&self.data[start..start + self.h * self.w]);
        }
        FeatureMap { d: self.d, h: self.h, w: self.w, data }
    }

    /// Mean over the time axis.
    pub fn temporal_mean(&self) -> FeatureMap {
        let plane = self.h * self.w;
        let mut data = vec![0.0; self.d * plane];
        for c in 0..self.d {
            for f in 0..self.t {
                let start = (c * self.t + f) * plane;
                for (acc, v) in data[c * plane..(c + 1) * plane].iter_mut().zip(&self.data[start..start + plane]) {
                    *acc += v;
                }
            }
        }
        let inv = 1.0 / self.t as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        FeatureMap { d: self.d, h: self.h, w: self.w, data }
    }

    /// Element-wise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &FeatureVolume, b: f64) -> Result<FeatureVolume> {
        if self.dims() != other.dims() {
            return Err(Error::usage("volumes differ in shape"));
        }
        let data = self.data.iter().zip(&other.data).map(|(u, v)| a * u + b * v).collect();
        FeatureVolume::new(self.d, self.t, self.h, self.w, data)
    }
}

/// One `d x H x W` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(d: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || h == 0 || w == 0 || data.len() != d * h * w {
            return Err(Error::data(format!("map {d}x{h}x{w} does not match {} values", data.len())));
        }
        Ok(FeatureMap { d, h, w, data })
    }

    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn bilinear(&self, c: usize, y: f64, x: f64) -> f64 {
        let sy = (y - 0.5).clamp(0.0, (self.h - 1) as f64);
        let sx = (x - 0.5).clamp(0.0, (self.w - 1) as f64);
        let y0 = sy.floor() as usize;
        let x0 = sx.floor() as usize;
        let y1 = (y0 + 1).min(self.h - 1);
        let x1 = (x0 + 1).min(self.w - 1);
        let ly = sy - y0 as f64;
        let lx = sx - x0 as f64;
        (1.0 - ly) * ((1.0 - lx) * self.at(c, y0, x0) + lx * self.at(c, y0, x1))
            + ly * ((1.0 - lx) * self.at(c, y1, x0) + lx * self.at(c, y1, x1))
    }
}

/// Pooled `d x h x w` features.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl PooledFeature {
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    /// Largest absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &PooledFeature) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiAlignParams {
    pub out_h: usize,
    pub out_w: usize,
    /// Samples per bin along each axis.
    pub sampling_ratio: usize,
}

impl RoiAlignParams {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        RoiAlignParams { out_h, out_w, sampling_ratio: DEFAULT_SAMPLING_RATIO }
    }
}

/// RoIAlign: splits `roi` into `out_h x out_w` bins and averages
/// `sampling_ratio^2` evenly spaced bilinear samples in each. No coordinate
/// is rounded.
pub fn roi_align(map: &FeatureMap, roi: &BoundingBox, params: RoiAlignParams) -> Result<PooledFeature> {
    if params.out_h == 0 || params.out_w == 0 || params.sampling_ratio == 0 {
        return Err(Error::usage("output size and sampling ratio must be at least 1"));
    }
    if !roi.is_valid() || roi.area() <= 0.0 {
        return Err(Error::data(format!("RoI {roi} is degenerate")));
    }
    if !roi.within(map.w as f64, map.h as f64) {
        return Err(Error::data(format!("RoI {roi} exceeds the {}x{} map", map.w, map.h)));
    }
    let RoiAlignParams { out_h, out_w, sampling_ratio: sr } = params;
    let bin_h = roi.height() / out_h as f64;
    let bin_w = roi.width() / out_w as f64;
    let norm = 1.0 / (sr * sr) as f64;
    let mut data = Vec::with_capacity(map.d * out_h * out_w);
    for c in 0..map.d {
        for by in 0..out_h {
            for bx in 0..out_w {
                let mut acc = 0.0;
                for iy in 0..sr {
                    let y = roi.y0 + by as f64 * bin_h + (iy as f64 + 0.5) * bin_h / sr as f64;
                    for ix in 0..sr {
                        let x = roi.x0 + bx as f64 * bin_w + (ix as f64 + 0.5) * bin_w / sr as f64;
                        acc += map.bilinear(c, y, x);
                    }
                }
                data.push(acc * norm);
            }
        }
    }
    Ok(PooledFeature { d: map.d, h: out_h, w: out_w, data })
}

/// Tube-of-interest pooling: RoIAlign on every frame at that frame's box,
/// then the mean over frames. `traj` must supply a box for each of the `T`
/// frames (see [`crate::model::fill_trajectory`]).
pub fn toi_pool(vol: &FeatureVolume, traj: &Trajectory, params: RoiAlignParams) -> Result<PooledFeature> {
    if traj.boxes.len() != vol.t {
        return Err(Error::usage(format!(
            "trajectory covers {} frames but the volume has {}",
            traj.boxes.len(),
            vol.t
        )));
    }
    let mut acc: Option<PooledFeature> = None;
    for (f, b) in traj.boxes.iter().enumerate() {
        let b = b.ok_or_else(|| Error::usage(format!("trajectory has no box at frame {f}; fill it first")))?;
        let pooled = roi_align(&vol.frame(f), &b, params)?;
        match acc.as_mut() {
            None => acc = Some(pooled),
            Some(sum) => sum.data.iter_mut().zip(&pooled.data).for_each(|(s, v)| *s += v),
        }
    }
    let mut out = acc.ok_or_else(|| Error::usage("empty trajectory"))?;
    let inv = 1.0 / vol.t as f64;
    out.data.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Baseline that pools over time first and then applies one RoIAlign at a
/// fixed (keyframe) box.
pub fn naive_temporal_roi(
    vol: &FeatureVolume,
    keyframe_box: &BoundingBox,
    params: RoiAlignParams,
) -> Result<PooledFeature> {
    roi_align(&vol.temporal_mean(), keyframe_box, params)
}

pub const NUM_JOINTS: usize = 17;

/// Limb topology over the 17 COCO keypoints (nose, eyes, ears, shoulders,
/// elbows, wrists, hips, knees, ankles), as a 16-edge tree.
pub const COCO_LIMBS: [(usize, usize); 16] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSkeleton {
    pub joints: [(f64, f64); NUM_JOINTS],
    pub edges: [(usize, usize); 16],
}

impl PoseSkeleton {
    pub fn new(joints: [(f64, f64); NUM_JOINTS]) -> Self {
        PoseSkeleton { joints, edges: COCO_LIMBS }
    }

    pub fn with_edges(joints: [(f64, f64); NUM_JOINTS], edges: [(usize, usize); 16]) -> Result<Self> {
        if let Some(e) = edges.iter().find(|(a, b)| *a >= NUM_JOINTS || *b >= NUM_JOINTS) {
            return Err(Error::data(format!("limb {e:?} references a joint outside 0..17")));
        }
        Ok(PoseSkeleton { joints, edges })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    Skeleton,
    HumanBox,
    ObjectBox,
}

/// Stacked `channels x H x W` masks with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    pub roles: Vec<ChannelRole>,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl MaskStack {
    fn zeros(roles: Vec<ChannelRole>, h: usize, w: usize) -> Self {
        let n = roles.len() * h * w;
        MaskStack { roles, h, w, data: vec![0.0; n] }
    }

    pub fn channels(&self) -> usize {
        self.roles.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn raise(&mut self, c: usize, y: i64, x: i64, v: f64) {
        if y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w {
            let i = (c * self.h + y as usize) * self.w + x as usize;
            self.data[i] = self.data[i].max(v);
        }
    }
}

/// Clips segment `p -> q` to `[lo, hi]` on both axes (Liang-Barsky).
fn clip_segment(p: (f64, f64), q: (f64, f64), lo: (f64, f64), hi: (f64, f64)) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (q.0 - p.0, q.1 - p.1);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (den, num) in [(-dx, p.0 - lo.0), (dx, hi.0 - p.0), (-dy, p.1 - lo.1), (dy, hi.1 - p.1)] {
        if den == 0.0 {
            if num < 0.0 {
                return None;
            }
        } else {
            let t = num / den;
            if den < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    (t0 <= t1).then_some(((p.0 + t0 * dx, p.1 + t0 * dy), (p.0 + t1 * dx, p.1 + t1 * dy)))
}

/// Integer cells on the line between two cells (Bresenham), endpoints included.
fn line_cells(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == b {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws the 16 limbs as lines `thickness` cells wide; limb `k` (0-based)
/// gets value `(k + 1) / 16`. Overlaps keep the larger value, parts outside
/// the canvas are clipped and a limb with coincident joints marks one cell.
pub fn skeleton_mask(pose: &PoseSkeleton, h: usize, w: usize, thickness: usize) -> MaskStack {
    let mut mask = MaskStack::zeros(vec![ChannelRole::Skeleton], h, w);
    let t = thickness.max(1) as i64;
    let (lo_off, hi_off) = (-(t - 1) / 2, t / 2);
    let margin = t as f64 + 1.0;
    let lo = (-margin, -margin);
    let hi = (w as f64 + margin, h as f64 + margin);
    for (k, &(a, b)) in pose.edges.iter().enumerate() {
        let value = (k + 1) as f64 / pose.edges.len() as f64;
        let (p, q) = (pose.joints[a], pose.joints[b]);
        if ![p.0, p.1, q.0, q.1].iter().all(|v| v.is_finite()) {
            continue;
        }
        let Some((p, q)) = clip_segment(p, q, lo, hi) else { continue };
        let cell = |pt: (f64, f64)| (pt.0.floor() as i64, pt.1.floor() as i64);
        for (x, y) in line_cells(cell(p), cell(q)) {
            for oy in lo_off..=hi_off {
                for ox in lo_off..=hi_off {
                    mask.raise(0, y + oy, x + ox, value);
                }
            }
        }
    }
    mask
}

fn fill_box(mask: &mut MaskStack, c: usize, b: &BoundingBox) {
    for y in 0..mask.h {
        let cy = y as f64 + 0.5;
        if cy < b.y0 || cy >= b.y1 {
            continue;
        }
        for x in 0..mask.w {
            let cx = x as f64 + 0.5;
            if cx >= b.x0 && cx < b.x1 {
                mask.data[(c * mask.h + y) * mask.w + x] = 1.0;
            }
        }
    }
}

/// Binary human-box and object-box channels; a cell is inside when its
/// center lies in the half-open box `[x0, x1) x [y0, y1)`.
pub fn pair_box_masks(human: &BoundingBox, object: &BoundingBox, h: usize, w: usize) -> MaskStack {
    let mut mask = MaskStack::zeros(vec![ChannelRole::HumanBox, ChannelRole::ObjectBox], h, w);
    fill_box(&mut mask, 0, human);
    fill_box(&mut mask, 1, object);
    mask
}

/// Concatenates the pair masks followed by the skeleton mask.
pub fn masking_pose_stack(skeleton: &MaskStack, pair: &MaskStack) -> Result<MaskStack> {
    if skeleton.roles != [ChannelRole::Skeleton] {
        return Err(Error::usage("first argument must be a single skeleton channel"));
    }
    if pair.roles != [ChannelRole::HumanBox, ChannelRole::ObjectBox] {
        return Err(Error::usage("second argument must be the human/object box channels"));
    }
    if (skeleton.h, skeleton.w) != (pair.h, pair.w) {
        return Err(Error::usage(format!("mask sizes differ: {}x{} vs {}x{}", skeleton.h, skeleton.w, pair.h, pair.w)));
    }
    let mut data = pair.data.clone();
    data.extend_from_slice(&skeleton.data);
    Ok(MaskStack {
        roles: vec![ChannelRole::HumanBox, ChannelRole::ObjectBox, ChannelRole::Skeleton],
        h: pair.h,
        w: pair.w,
        data,
    })
}

/// Magic number opening a feature-volume file ("FVOL" in little-endian bytes).
pub const VOLUME_MAGIC: i32 = i32::from_le_bytes(*b"FVOL");
pub const VOLUME_VERSION: i32 = 1;

/// Writes the binary volume format: eight little-endian `i32` header fields
/// `(magic, version, d, T, H, W, h, w)` followed by `d*T*H*W` little-endian
/// `f32` values in channel, frame, row, column order. `h` and `w` are
/// reserved for a pooled output size and are 0 when unused.
pub fn write_volume<W: Write>(out: &mut W, vol: &FeatureVolume, pooled_hw: (usize, usize)) -> io::Result<()> {
    let header = [
        VOLUME_MAGIC,
        VOLUME_VERSION,
        vol.d as i32,
        vol.t as i32,
        vol.h as i32,
        vol.w as i32,
        pooled_hw.0 as i32,
        pooled_hw.1 as i32,
    ];
    for v in header {
        out.write_all(&v.to_le_bytes())?;
    }
    for &v in &vol.data {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a volume written by [`write_volume`]; returns it with the reserved
/// `(h, w)` fields.
pub fn read_volume<R: Read>(input: &mut R) -> Result<(FeatureVolume, (usize, usize))> {
    let io_err = |e: io::Error| Error::data(format!("reading feature volume: {e}"));
    let mut header = [0i32; 8];
    let mut word = [0u8; 4];
    for slot in &mut header {
        input.read_exact(&mut word).map_err(io_err)?;
        *slot = i32::from_le_bytes(word);
    }
    if header[0] != VOLUME_MAGIC {
        return Err(Error::data("not a feature-volume file (bad magic)"));
    }
    if header[1] != VOLUME_VERSION {
        return Err(Error::data(format!("unsupported feature-volume version {}", header[1])));
    }
    if header[2..].iter().any(|&v| v < 0) {
        return Err(Error::data("negative dimension in feature-volume header"));
    }
    let [d, t, h, w, ph, pw] = [header[2], header[3], header[4], header[5], header[6], header[7]].map(|v| v as usize);
    let n = d
        .checked_mul(t)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::data("feature-volume dimensions overflow"))?;
    let mut bytes = vec![0u8; n * 4];
    input.read_exact(&mut bytes).map_err(io_err)?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok((FeatureVolume::new(d, t, h, w, data)?, (ph, pw)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1)
    }

    #[test]
    fn roi_align_on_constant_map() {
        let map = FeatureMap::new(2, 4, 5, vec![3.5; 40]).unwrap();
        let out = roi_align(&map, &bx(0.3, 1.1, 4.2, 3.9), RoiAlignParams::new(3, 2)).unwrap();
        assert!(out.data.iter().all(|&v| (v - 3.5).abs() < 1e-12));
        assert_eq!((out.d, out.h, out.w), (2, 3, 2));
    }

    #[test]
    fn roi_align_left_column_reads_left_values() {
        let map = FeatureMap::new(1, 2, 2, vec![0.0, 10.0, 0.0, 10.0]).unwrap();
        let out = roi_align(&map, &bx(0.1, 0.2, 0.4, 1.8), RoiAlignParams::new(1, 1)).unwrap();
        assert_eq!(out.data, vec![0.0]);
    }

    #[test]
    fn roi_align_rejects_bad_boxes() {
        let map = FeatureMap::new(1, 4, 4, vec![0.0; 16]).unwrap();
        assert!(matches!(roi_align(&map, &bx(1.0, 1.0, 1.0, 3.0), RoiAlignParams::new(1, 1)), Err(Error::Data(_))));
        assert!(matches!(roi_align(&map, &bx(1.0, 1.0, 5.0, 3.0), RoiAlignParams::new(1, 1)), Err(Error::Data(_))));
    }

    #[test]
    fn toi_pool_means_constant_frames() {
        let vol = FeatureVolume::from_fn(1, 2, 3, 3, |_, f, _, _| if f == 0 { 1.0 } else { 3.0 }).unwrap();
        let traj = Trajectory::constant(0, bx(0.0, 0.0, 3.0, 3.0), 2);
        let out = toi_pool(&vol, &traj, RoiAlignParams::new(1, 1)).unwrap();
        assert_eq!(out.data, vec![2.0]);
        let short = Trajectory::constant(0, bx(0.0, 0.0, 3.0, 3.0), 1);
        assert!(matches!(toi_pool(&vol, &short, RoiAlignParams::new(1, 1)), Err(Error::Usage(_))));
        let gap = Trajectory { start_frame: 0, boxes: vec![Some(bx(0.0, 0.0, 3.0, 3.0)), None] };
        assert!(matches!(toi_pool(&vol, &gap, RoiAlignParams::new(1, 1)), Err(Error::Usage(_))));
    }

    #[test]
    fn moving_box_separates_the_two_pools() {
        let vol = FeatureVolume::from_fn(1, 2, 8, 8, |_, _, _, x| if x < 4 { 0.0 } else { 10.0 }).unwrap();
        let left = bx(0.5, 2.0, 3.0, 6.0);
        let right = bx(5.0, 2.0, 7.5, 6.0);
        let traj = Trajectory { start_frame: 0, boxes: vec![Some(left), Some(right)] };
        let p = RoiAlignParams::new(1, 1);
        let toi = toi_pool(&vol, &traj, p).unwrap();
        let naive = naive_temporal_roi(&vol, &left, p).unwrap();
        assert_eq!(toi.data, vec![5.0]);
        assert_eq!(naive.data, vec![0.0]);
    }

    fn horizontal_pose(y: f64, x0: f64, x1: f64) -> PoseSkeleton {
        // Every joint parked on the first joint except joint 1, so only
        // limb 0 (joints 0-1) is a proper line and every other limb that
        // touches joint 0 collapses onto its cell.
        let mut joints = [(x0, y); NUM_JOINTS];
        joints[1] = (x1, y);
        joints[3] = (x1, y);
        PoseSkeleton::new(joints)
    }

    #[test]
    fn skeleton_horizontal_line() {
        let pose = horizontal_pose(2.5, 1.2, 6.7);
        let m = skeleton_mask(&pose, 5, 10, 1);
        for y in 0..5 {
            for x in 0..10 {
                let v = m.at(0, y, x);
                if y == 2 && (1..=6).contains(&x) {
                    assert!(v > 0.0, "({y},{x}) should be drawn");
                } else {
                    assert_eq!(v, 0.0, "({y},{x}) should be empty");
                }
            }
        }
        // Limb 2 (joints 1-3) collapses onto (2, 6) and is the largest value there.
        assert_eq!(m.at(0, 2, 6), 3.0 / 16.0);
    }

    #[test]
    fn skeleton_degenerate_pose_is_one_cell() {
        let pose = PoseSkeleton::new([(3.4, 1.9); NUM_JOINTS]);
        let m = skeleton_mask(&pose, 4, 6, 1);
        let lit: Vec<usize> = (0..24).filter(|&i| m.data[i] > 0.0).collect();
        assert_eq!(lit, vec![6 + 3]);
        assert_eq!(m.data[9], 1.0);
    }

    #[test]
    fn skeleton_clips_far_joints() {
        let mut joints = [(2.0, 2.0); NUM_JOINTS];
        joints[1] = (1e12, 2.0);
        let m = skeleton_mask(&PoseSkeleton::new(joints), 4, 6, 1);
        // Limbs 0 (joints 0-1) and 2 (joints 1-3) both run along row 2.
        for x in 2..6 {
            assert_eq!(m.at(0, 2, x), if x == 2 { 1.0 } else { 3.0 / 16.0 });
        }
        assert!(m.channel(0)[..12].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn box_masks() {
        let m = pair_box_masks(&bx(0.0, 0.0, 7.0, 4.0), &bx(2.0, 2.0, 2.0, 3.0), 4, 7);
        assert!(m.channel(0).iter().all(|&v| v == 1.0));
        assert!(m.channel(1).iter().all(|&v| v == 0.0));
        let m = pair_box_masks(&bx(0.0, 0.0, 3.5, 4.0), &bx(0.0, 0.0, 3.5, 4.0), 4, 7);
        assert_eq!(m.channel(0).iter().filter(|&&v| v == 1.0).count(), 3 * 4);
    }

    #[test]
    fn stack_order_and_shape_checks() {
        let sk = skeleton_mask(&PoseSkeleton::new([(1.0, 1.0); NUM_JOINTS]), 3, 3, 1);
        let pair = pair_box_masks(&bx(0.0, 0.0, 1.0, 1.0), &bx(2.0, 2.0, 3.0, 3.0), 3, 3);
        let stack = masking_pose_stack(&sk, &pair).unwrap();
        assert_eq!(stack.channels(), 3);
        assert_eq!(stack.channel(0), pair.channel(0));
        assert_eq!(stack.channel(1), pair.channel(1));
        assert_eq!(stack.channel(2), sk.channel(0));

        let zero = masking_pose_stack(
            &MaskStack::zeros(vec![ChannelRole::Skeleton], 2, 2),
            &MaskStack::zeros(vec![ChannelRole::HumanBox, ChannelRole::ObjectBox], 2, 2),
        )
        .unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));

        let small = pair_box_masks(&bx(0.0, 0.0, 1.0, 1.0), &bx(0.0, 0.0, 1.0, 1.0), 2, 3);
        assert!(matches!(masking_pose_stack(&sk, &small), Err(Error::Usage(_))));
        assert!(matches!(masking_pose_stack(&pair, &sk), Err(Error::Usage(_))));
    }

    #[test]
    fn volume_binary_round_trip() {
        let vol =
            FeatureVolume::from_fn(2, 3, 2, 4, |c, f, y, x| (c * 100 + f * 10 + y * 4 + x) as f64 * 0.25).unwrap();
        let mut buf = Vec::new();
        write_volume(&mut buf, &vol, (7, 7)).unwrap();
        assert_eq!(buf.len(), 32 + 4 * 48);
        assert_eq!(&buf[..4], b"FVOL");
        let (back, hw) = read_volume(&mut buf.as_slice()).unwrap();
        assert_eq!(back, vol);
        assert_eq!(hw, (7, 7));
        buf[0] = b'X';
        assert!(read_volume(&mut buf.as_slice()).is_err());
    }

    fn arb_volume() -> impl Strategy<Value = FeatureVolume> {
        (1usize..3, 1usize..4, 2usize..7, 2usize..7).prop_flat_map(|(d, t, h, w)| {
            prop::collection::vec(-10.0..10.0f64, d * t * h * w)
                .prop_map(move |data| FeatureVolume::new(d, t, h, w, data).unwrap())
        })
    }

    fn arb_box_in(h: usize, w: usize) -> impl Strategy<Value = BoundingBox> {
        (0.0..1.0f64, 0.0..1.0f64, 0.05..1.0f64, 0.05..1.0f64).prop_map(move |(a, b, c, d)| {
            let x0 = a * (w as f64 - 0.5);
            let y0 = b * (h as f64 - 0.5);
            let x1 = x0 + c * (w as f64 - x0);
            let y1 = y0 + d * (h as f64 - y0);
            bx(x0, y0, x1, y1)
        })
    }

    proptest! {
        #[test]
        fn roi_align_is_a_convex_combination(
            (vol, roi) in arb_volume().prop_flat_map(|v| {
                let (_, _, h, w) = v.dims();
                (Just(v), arb_box_in(h, w))
            }),
            oh in 1usize..4, ow in 1usize..4, sr in 1usize..4,
        ) {
            let map = vol.frame(0);
            let out = roi_align(&map, &roi, RoiAlignParams { out_h: oh, out_w: ow, sampling_ratio: sr }).unwrap();
            for c in 0..map.d {
                let plane = &map.data[c * map.h * map.w..(c + 1) * map.h * map.w];
                let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for v in &out.data[c * oh * ow..(c + 1) * oh * ow] {
                    prop_assert!(*v >= lo - 1e-9 && *v <= hi + 1e-9);
                }
            }
        }

        #[test]
        fn static_tube_commutes(
            (vol, roi) in arb_volume().prop_flat_map(|v| {
                let (_, _, h, w) = v.dims();
                (Just(v), arb_box_in(h, w))
            }),
        ) {
            let (_, t, _, _) = vol.dims();
            let p = RoiAlignParams::new(2, 2);
            let toi = toi_pool(&vol, &Trajectory::constant(0, roi, t), p).unwrap();
            let naive = naive_temporal_roi(&vol, &roi, p).unwrap();
            prop_assert!(toi.max_abs_diff(&naive) <= 1e-6);
        }

        #[test]
        fn skeleton_values_are_sixteenths(
            joints in prop::collection::vec((-5.0..25.0f64, -5.0..25.0f64), NUM_JOINTS),
            thickness in 1usize..4,
        ) {
            let mut arr = [(0.0, 0.0); NUM_JOINTS];
            arr.copy_from_slice(&joints);
            let m = skeleton_mask(&PoseSkeleton::new(arr), 20, 20, thickness);
            for v in &m.data {
                let k = v * 16.0;
                prop_assert!(k == k.round() && (0.0..=16.0).contains(&k));
            }
        }

        #[test]
        fn box_masks_are_binary(a in arb_box_in(9, 9), b in arb_box_in(9, 9)) {
            let m = pair_box_masks(&a, &b, 9, 9);
            prop_assert!(m.data.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}
