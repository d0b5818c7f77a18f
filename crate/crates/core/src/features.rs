//! Feature extraction: absolute temporal gradient, interest points inside
//! dilated person masks, and the 3D gradient patches that form each person's
//! training set.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{BoundingBox, FrameSequence, MaskFrame, MaskSequence};

/// Per-pixel absolute difference of consecutive frames, `depth = frames - 1`.
#[derive(Debug, Clone)]
pub struct GradientVolume {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    values: Vec<f64>,
}

impl GradientVolume {
    #[inline]
    pub fn value(&self, x: usize, y: usize, frame: usize) -> f64 {
        self.values[(frame * self.height + y) * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A gradient voxel selected as a patch center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterestPoint {
    pub x: usize,
    pub y: usize,
    pub frame: usize,
    pub person_id: usize,
}

/// The `m x n` nonnegative training matrix of one person in one interval;
/// each column is one vectorized gradient patch.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub person_id: usize,
    pub interval: usize,
    pub data: Array2<f64>,
}

impl PatchSet {
    pub fn new(person_id: usize, interval: usize, data: Array2<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::EmptyPatchSet { person_id });
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::NonFinite(format!(
                "patch set for person {person_id} has entries outside [0, 1]"
            )));
        }
        Ok(Self {
            person_id,
            interval,
            data,
        })
    }

    /// Patch dimension (rows).
    pub fn patch_dim(&self) -> usize {
        self.data.nrows()
    }

    /// Patch count (columns).
    pub fn patch_count(&self) -> usize {
        self.data.ncols()
    }
}

/// Interest point and patch extraction settings.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FeatureConfig {
    /// Gradient threshold on [0,1]-scaled values.
    pub gradient_threshold: f64,
    /// When set, keep the top q% of in-mask gradient voxels instead of using
    /// the fixed threshold.
    pub threshold_percentile: Option<f64>,
    /// Patch spatial extent (odd).
    pub spatial_extent: usize,
    /// Patch temporal extent (odd).
    pub temporal_extent: usize,
    /// Mask dilation radius in pixels.
    pub dilation_radius: usize,
    /// Cap on patches per person per interval.
    pub max_patches: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            gradient_threshold: 0.08,
            threshold_percentile: None,
            spatial_extent: 15,
            temporal_extent: 7,
            dilation_radius: 5,
            max_patches: 15_000,
            seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_threshold > 0.0 && self.gradient_threshold < 1.0) {
            return Err(Error::Config(format!(
                "gradient threshold must lie in (0, 1), got {}",
                self.gradient_threshold
            )));
        }
        if let Some(q) = self.threshold_percentile {
            if !(q > 0.0 && q < 100.0) {
                return Err(Error::Config(format!(
                    "threshold percentile must lie in (0, 100), got {q}"
                )));
            }
        }
        for (name, extent) in [
            ("spatial", self.spatial_extent),
            ("temporal", self.temporal_extent),
        ] {
            if extent < 3 || extent % 2 == 0 {
                return Err(Error::Config(format!(
                    "{name} extent must be odd and >= 3, got {extent}"
                )));
            }
        }
        if self.max_patches == 0 {
            return Err(Error::Config("max_patches must be >= 1".into()));
        }
        Ok(())
    }

    /// Rows of a vectorized patch.
    pub fn patch_dim(&self) -> usize {
        self.spatial_extent * self.spatial_extent * self.temporal_extent
    }
}

/// Absolute temporal gradient of the whole sequence.
pub fn temporal_gradient(frames: &FrameSequence) -> GradientVolume {
    let (w, h) = (frames.width, frames.height);
    let depth = frames.frame_count() - 1;
    let mut values = Vec::with_capacity(w * h * depth);
    for f in 0..depth {
        let cur = frames.frame(f);
        let next = frames.frame(f + 1);
        values.extend(cur.iter().zip(next).map(|(&a, &b)| (b - a).abs()));
    }
    GradientVolume {
        width: w,
        height: h,
        depth,
        values,
    }
}

/// Morphological dilation by a square structuring element of half-width
/// `radius`. Box masks expand by `radius` on each side, clamped to the frame.
pub fn dilate_mask(mask: &MaskSequence, radius: usize) -> MaskSequence {
    if radius == 0 {
        return mask.clone();
    }
    let frames = mask
        .frames
        .iter()
        .map(|frame| match frame {
            MaskFrame::Empty => MaskFrame::Empty,
            MaskFrame::Box(b) => {
                let x0 = b.x.saturating_sub(radius);
                let y0 = b.y.saturating_sub(radius);
                let x1 = (b.x + b.w + radius).min(mask.width);
                let y1 = (b.y + b.h + radius).min(mask.height);
                MaskFrame::Box(BoundingBox {
                    x: x0,
                    y: y0,
                    w: x1 - x0,
                    h: y1 - y0,
                })
            }
            MaskFrame::Bitmap(bits) => {
                MaskFrame::Bitmap(dilate_bitmap(bits, mask.width, mask.height, radius))
            }
        })
        .collect();
    MaskSequence {
        person_id: mask.person_id,
        width: mask.width,
        height: mask.height,
        frames,
    }
}

// Square SE dilation is separable: a horizontal max-run then a vertical one.
fn dilate_bitmap(bits: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let mut horiz = vec![false; bits.len()];
    for y in 0..height {
        let row = &bits[y * width..(y + 1) * width];
        for x in 0..width {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius + 1).min(width);
            horiz[y * width + x] = row[lo..hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; bits.len()];
    for x in 0..width {
        for y in 0..height {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius + 1).min(height);
            out[y * width + x] = (lo..hi).any(|yy| horiz[yy * width + x]);
        }
    }
    out
}

/// Keep the voxels whose gradient exceeds the threshold, that lie inside the
/// (already dilated) mask, and whose full patch window fits in the volume.
///
/// The mask frame used for a gradient frame `f` is the earlier of the two
/// differenced raw frames. Points come back in raster order (frame, row,
/// column), which fixes downstream column order.
pub fn detect_interest_points(
    grad: &GradientVolume,
    mask: &MaskSequence,
    cfg: &FeatureConfig,
) -> Vec<InterestPoint> {
    let half_s = cfg.spatial_extent / 2;
    let half_t = cfg.temporal_extent / 2;
    let threshold = match cfg.threshold_percentile {
        Some(q) => percentile_threshold(grad, mask, q).unwrap_or(cfg.gradient_threshold),
        None => cfg.gradient_threshold,
    };
    let mut points = Vec::new();
    if grad.width < cfg.spatial_extent
        || grad.height < cfg.spatial_extent
        || grad.depth < cfg.temporal_extent
    {
        return points;
    }
    for f in half_t..grad.depth - half_t {
        for y in half_s..grad.height - half_s {
            for x in half_s..grad.width - half_s {
                if grad.value(x, y, f) > threshold && mask.contains(x, y, f) {
                    points.push(InterestPoint {
                        x,
                        y,
                        frame: f,
                        person_id: mask.person_id,
                    });
                }
            }
        }
    }
    points
}

/// Threshold keeping the top `q` percent of in-mask gradient voxels.
fn percentile_threshold(grad: &GradientVolume, mask: &MaskSequence, q: f64) -> Option<f64> {
    let mut in_mask: Vec<f64> = Vec::new();
    for f in 0..grad.depth {
        for y in 0..grad.height {
            for x in 0..grad.width {
                if mask.contains(x, y, f) {
                    in_mask.push(grad.value(x, y, f));
                }
            }
        }
    }
    if in_mask.is_empty() {
        return None;
    }
    in_mask.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((in_mask.len() as f64) * (1.0 - q / 100.0)).floor() as usize;
    Some(in_mask[rank.min(in_mask.len() - 1)])
}

/// Extract one vectorized patch column per interest point.
///
/// Vectorization order is fixed: x fastest, then y, then frame.
pub fn extract_patchset(
    grad: &GradientVolume,
    points: &[InterestPoint],
    cfg: &FeatureConfig,
    interval: usize,
) -> Result<PatchSet> {
    let person_id = points.first().map(|p| p.person_id).unwrap_or(0);
    if points.is_empty() {
        return Err(Error::EmptyPatchSet { person_id });
    }
    let half_s = cfg.spatial_extent / 2;
    let half_t = cfg.temporal_extent / 2;
    let m = cfg.patch_dim();
    let mut data = Array2::zeros((m, points.len()));
    for (col, p) in points.iter().enumerate() {
        let mut row = 0;
        for df in 0..cfg.temporal_extent {
            let f = p.frame + df - half_t;
            for dy in 0..cfg.spatial_extent {
                let y = p.y + dy - half_s;
                for dx in 0..cfg.spatial_extent {
                    let x = p.x + dx - half_s;
                    data[(row, col)] = grad.value(x, y, f);
                    row += 1;
                }
            }
        }
    }
    PatchSet::new(person_id, interval, data)
}

/// Subsample every set to `n = min(min_j n_j, n_max)` patches.
///
/// Sampling is uniform without replacement; each person draws from an
/// independent stream of the master seed, so parallel extraction order cannot
/// change the result. Selected columns keep their original relative order.
pub fn equalize_patch_counts(sets: Vec<PatchSet>, n_max: usize, seed: u64) -> Vec<PatchSet> {
    let n = sets
        .iter()
        .map(|s| s.patch_count())
        .min()
        .unwrap_or(0)
        .min(n_max);
    sets.into_iter()
        .map(|set| {
            if set.patch_count() == n {
                return set;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(set.person_id as u64);
            let mut picked = rand::seq::index::sample(&mut rng, set.patch_count(), n).into_vec();
            picked.sort_unstable();
            let data = set.data.select(ndarray::Axis(1), &picked);
            PatchSet {
                person_id: set.person_id,
                interval: set.interval,
                data,
            }
        })
        .collect()
}
