//! Frame and mask ingestion.
//!
//! Frames come from a directory of grayscale PGM/PNG images whose
//! lexicographic filename order is the temporal order. Masks come either from
//! label images (pixel value = person id, 0 = background) or from a CSV of
//! per-frame bounding boxes. Sequences are then sliced into fixed-length,
//! non-overlapping analysis intervals.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::DynamicImage;

use crate::error::{Error, Result};

/// A grayscale video segment with pixels scaled to `[0, 1]`.
///
/// Pixels are stored frame-major, row-major within a frame. `max_value`
/// records the source quantization so that frames can be written back
/// without loss.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub max_value: u16,
    pixels: Vec<f64>,
}

impl FrameSequence {
    pub fn new(
        width: usize,
        height: usize,
        fps: f64,
        max_value: u16,
        pixels: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("frame dimensions must be positive".into()));
        }
        if pixels.len() % (width * height) != 0 {
            return Err(Error::ShapeMismatch(format!(
                "pixel buffer of {} values is not a multiple of {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        let frame_count = pixels.len() / (width * height);
        if frame_count < 2 {
            return Err(Error::Config(format!(
                "a frame sequence needs at least 2 frames, got {frame_count}"
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::NonFinite(
                "pixel values must lie in [0, 1]".to_string(),
            ));
        }
        Ok(Self {
            width,
            height,
            fps,
            max_value,
            pixels,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.pixels.len() / (self.width * self.height)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize, frame: usize) -> f64 {
        self.pixels[(frame * self.height + y) * self.width + x]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        let len = self.width * self.height;
        &self.pixels[frame * len..(frame + 1) * len]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Copy of the frames `[start, start + length)` as a standalone sequence.
    pub fn window(&self, start: usize, length: usize) -> Result<Self> {
        if start + length > self.frame_count() {
            return Err(Error::ShapeMismatch(format!(
                "window {}..{} exceeds {} frames",
                start,
                start + length,
                self.frame_count()
            )));
        }
        let len = self.width * self.height;
        Self::new(
            self.width,
            self.height,
            self.fps,
            self.max_value,
            self.pixels[start * len..(start + length) * len].to_vec(),
        )
    }
}

/// Axis-aligned box, clamped to frame bounds on construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// One frame of a person's mask.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskFrame {
    /// The person has no mask in this frame.
    Empty,
    Box(BoundingBox),
    /// Dense bitmap, `width * height` entries, row-major.
    Bitmap(Vec<bool>),
}

/// Per-frame masks for one person; exactly one entry per frame of the parent
/// sequence.
#[derive(Debug, Clone)]
pub struct MaskSequence {
    pub person_id: usize,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<MaskFrame>,
}

impl MaskSequence {
    pub fn contains(&self, x: usize, y: usize, frame: usize) -> bool {
        match &self.frames[frame] {
            MaskFrame::Empty => false,
            MaskFrame::Box(b) => b.contains(x, y),
            MaskFrame::Bitmap(bits) => bits[y * self.width + x],
        }
    }

    pub fn window(&self, start: usize, length: usize) -> MaskSequence {
        MaskSequence {
            person_id: self.person_id,
            width: self.width,
            height: self.height,
            frames: self.frames[start..start + length].to_vec(),
        }
    }
}

/// A contiguous run of frames used as one analysis unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start_frame: usize,
    pub length: usize,
    pub index: usize,
}

fn image_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("png") | Some("PGM") | Some("PNG")
            )
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Decoded image as `[0, 1]` luminance plus the source max value.
fn decode_gray(path: &Path) -> Result<(usize, usize, u16, Vec<f64>)> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (max, values) = match img {
        DynamicImage::ImageLuma8(buf) => {
            (255u16, buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(buf) => (
            65535u16,
            buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        ),
        // Color inputs are reduced by channel average.
        other => {
            let rgb = other.into_rgb8();
            let values = rgb
                .pixels()
                .map(|p| (p.0[0] as f64 + p.0[1] as f64 + p.0[2] as f64) / (3.0 * 255.0))
                .collect();
            (255u16, values)
        }
    };
    Ok((w, h, max, values))
}

/// Load a frame directory, keeping every `subsample`-th frame.
///
/// `fps` describes the source stream; the stored rate is `fps / subsample`.
pub fn load_frames_subsampled(dir: &Path, fps: f64, subsample: usize) -> Result<FrameSequence> {
    if subsample == 0 {
        return Err(Error::Config("subsample factor must be >= 1".into()));
    }
    let paths = image_paths(dir)?;
    let paths: Vec<&PathBuf> = paths.iter().step_by(subsample).collect();
    if paths.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 frames in {}, found {}",
            dir.display(),
            paths.len()
        )));
    }
    let mut pixels = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut max_value = 0u16;
    for path in &paths {
        let (w, h, max, values) = decode_gray(path)?;
        match dims {
            None => dims = Some((w, h)),
            Some((ew, eh)) if ew != w || eh != h => {
                return Err(Error::DimensionMismatch {
                    path: path.to_path_buf(),
                    expected_width: ew,
                    expected_height: eh,
                    width: w,
                    height: h,
                });
            }
            _ => {}
        }
        max_value = max_value.max(max);
        pixels.extend(values);
    }
    let (width, height) = dims.unwrap();
    FrameSequence::new(width, height, fps / subsample as f64, max_value, pixels)
}

pub fn load_frames(dir: &Path, fps: f64) -> Result<FrameSequence> {
    load_frames_subsampled(dir, fps, 1)
}

/// Write every frame back as a binary PGM, preserving the source quantization.
pub fn write_frames(dir: &Path, frames: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let max = frames.max_value as u32;
    for f in 0..frames.frame_count() {
        let path = dir.join(format!("frame_{f:06}.pgm"));
        let mut out = Vec::with_capacity(frames.width * frames.height * 2 + 32);
        write!(out, "P5\n{} {}\n{}\n", frames.width, frames.height, max).unwrap();
        for &v in frames.frame(f) {
            let q = (v * max as f64).round() as u32;
            if max > 255 {
                out.extend_from_slice(&(q as u16).to_be_bytes());
            } else {
                out.push(q as u8);
            }
        }
        fs::write(&path, out).map_err(|source| Error::Io { path, source })?;
    }
    Ok(())
}

/// Masks plus any non-fatal loader warnings (e.g. clamped boxes).
#[derive(Debug)]
pub struct MaskLoad {
    pub sequences: Vec<MaskSequence>,
    pub warnings: Vec<String>,
}

/// Load per-person masks for `person_count` persons.
///
/// A directory is read as label images (pixel value = person id); a `.csv`
/// file as `frame,person,x,y,w,h` rows with zero-based frame and x/y and
/// one-based person. Missing rows yield empty masks.
pub fn load_masks(
    path: &Path,
    person_count: usize,
    frame_count: usize,
    width: usize,
    height: usize,
) -> Result<MaskLoad> {
    if path.is_dir() {
        load_label_masks(path, person_count, frame_count, width, height)
    } else {
        load_csv_masks(path, person_count, frame_count, width, height)
    }
}

fn load_label_masks(
    dir: &Path,
    person_count: usize,
    frame_count: usize,
    width: usize,
    height: usize,
) -> Result<MaskLoad> {
    let paths = image_paths(dir)?;
    if paths.len() != frame_count {
        return Err(Error::MalformedMask(format!(
            "expected {} label images in {}, found {}",
            frame_count,
            dir.display(),
            paths.len()
        )));
    }
    let mut sequences: Vec<MaskSequence> = (1..=person_count)
        .map(|person_id| MaskSequence {
            person_id,
            width,
            height,
            frames: Vec::with_capacity(frame_count),
        })
        .collect();
    for path in &paths {
        let img = image::open(path).map_err(|e| Error::ImageDecode {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if img.width() as usize != width || img.height() as usize != height {
            return Err(Error::DimensionMismatch {
                path: path.clone(),
                expected_width: width,
                expected_height: height,
                width: img.width() as usize,
                height: img.height() as usize,
            });
        }
        let labels = img.into_luma8();
        let mut bitmaps = vec![vec![false; width * height]; person_count];
        for (i, p) in labels.into_raw().iter().enumerate() {
            let v = *p as usize;
            if v == 0 {
                continue;
            }
            if v > person_count {
                return Err(Error::MalformedMask(format!(
                    "label value {} exceeds person count {} in {}",
                    v,
                    person_count,
                    path.display()
                )));
            }
            bitmaps[v - 1][i] = true;
        }
        for (seq, bits) in sequences.iter_mut().zip(bitmaps) {
            if bits.iter().any(|&b| b) {
                seq.frames.push(MaskFrame::Bitmap(bits));
            } else {
                seq.frames.push(MaskFrame::Empty);
            }
        }
    }
    Ok(MaskLoad {
        sequences,
        warnings: Vec::new(),
    })
}

fn load_csv_masks(
    path: &Path,
    person_count: usize,
    frame_count: usize,
    width: usize,
    height: usize,
) -> Result<MaskLoad> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::MalformedMask(format!("cannot read {}: {e}", path.display()))
    })?;
    let mut sequences: Vec<MaskSequence> = (1..=person_count)
        .map(|person_id| MaskSequence {
            person_id,
            width,
            height,
            frames: vec![MaskFrame::Empty; frame_count],
        })
        .collect();
    let mut warnings = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::MalformedMask(format!("{}: {e}", path.display())))?;
        if record.len() < 6 {
            return Err(Error::MalformedMask(format!(
                "{} row {}: expected 6 columns, got {}",
                path.display(),
                line + 2,
                record.len()
            )));
        }
        let field = |i: usize| -> Result<i64> {
            record[i].trim().parse().map_err(|_| {
                Error::MalformedMask(format!(
                    "{} row {}: non-numeric field `{}`",
                    path.display(),
                    line + 2,
                    &record[i]
                ))
            })
        };
        let (frame, person) = (field(0)?, field(1)?);
        let (x, y, w, h) = (field(2)?, field(3)?, field(4)?, field(5)?);
        if person < 1 || person as usize > person_count {
            return Err(Error::MalformedMask(format!(
                "{} row {}: person {} out of 1..={}",
                path.display(),
                line + 2,
                person,
                person_count
            )));
        }
        if frame < 0 || frame as usize >= frame_count {
            return Err(Error::MalformedMask(format!(
                "{} row {}: frame {} out of 0..{}",
                path.display(),
                line + 2,
                frame,
                frame_count
            )));
        }
        let (bx, by, bw, bh) = clamp_box(x, y, w, h, width, height);
        if bx as i64 != x || by as i64 != y || bw as i64 != w || bh as i64 != h {
            warnings.push(format!(
                "box ({x},{y},{w},{h}) for person {person} at frame {frame} clamped to ({bx},{by},{bw},{bh})"
            ));
        }
        let entry = if bw == 0 || bh == 0 {
            MaskFrame::Empty
        } else {
            MaskFrame::Box(BoundingBox {
                x: bx,
                y: by,
                w: bw,
                h: bh,
            })
        };
        sequences[person as usize - 1].frames[frame as usize] = entry;
    }
    Ok(MaskLoad {
        sequences,
        warnings,
    })
}

fn clamp_box(
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize) {
    let x0 = x.clamp(0, width as i64);
    let y0 = y.clamp(0, height as i64);
    let x1 = (x + w.max(0)).clamp(0, width as i64);
    let y1 = (y + h.max(0)).clamp(0, height as i64);
    (
        x0 as usize,
        y0 as usize,
        (x1 - x0) as usize,
        (y1 - y0) as usize,
    )
}

/// Tile the sequence into intervals of `seconds_per_interval`, dropping the
/// trailing partial interval.
pub fn slice_intervals(frames: &FrameSequence, seconds_per_interval: f64) -> Result<Vec<Interval>> {
    let length = (seconds_per_interval * frames.fps).round() as usize;
    // A 7-frame temporal patch needs at least 7 gradient frames, i.e. 8 raw ones.
    if length < 8 {
        return Err(Error::Config(format!(
            "interval of {seconds_per_interval} s at {} fps is {length} frames; need >= 8",
            frames.fps
        )));
    }
    let count = frames.frame_count() / length;
    Ok((0..count)
        .map(|index| Interval {
            start_frame: index * length,
            length,
            index,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_pgm(path: &Path, w: usize, h: usize, values: &[u8]) {
        let mut out = Vec::new();
        write!(out, "P5\n{w} {h}\n255\n").unwrap();
        out.extend_from_slice(values);
        fs::write(path, out).unwrap();
    }

    #[test]
    fn loads_frames_in_lexicographic_order() {
        let dir = tempdir().unwrap();
        for (i, v) in [10u8, 20, 30].iter().enumerate() {
            write_pgm(&dir.path().join(format!("im_{i:03}.pgm")), 4, 3, &[*v; 12]);
        }
        let frames = load_frames(dir.path(), 30.0).unwrap();
        assert_eq!(frames.width, 4);
        assert_eq!(frames.height, 3);
        assert_eq!(frames.frame_count(), 3);
        assert_eq!(frames.pixel(0, 0, 0), 10.0 / 255.0);
        assert_eq!(frames.pixel(3, 2, 2), 30.0 / 255.0);
    }

    #[test]
    fn single_frame_directory_is_rejected() {
        let dir = tempdir().unwrap();
        write_pgm(&dir.path().join("a.pgm"), 2, 2, &[0; 4]);
        assert!(matches!(
            load_frames(dir.path(), 30.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let dir = tempdir().unwrap();
        write_pgm(&dir.path().join("a.pgm"), 2, 2, &[0; 4]);
        write_pgm(&dir.path().join("b.pgm"), 3, 2, &[0; 6]);
        assert!(matches!(
            load_frames(dir.path(), 30.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn frame_roundtrip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let vals: Vec<u8> = (0..48).map(|i| (i * 5 % 256) as u8).collect();
        write_pgm(&dir.path().join("a.pgm"), 4, 3, &vals[..12].to_vec());
        write_pgm(&dir.path().join("b.pgm"), 4, 3, &vals[12..24].to_vec());
        write_pgm(&dir.path().join("c.pgm"), 4, 3, &vals[24..36].to_vec());
        write_pgm(&dir.path().join("d.pgm"), 4, 3, &vals[36..].to_vec());
        let frames = load_frames(dir.path(), 8.0).unwrap();

        let out = tempdir().unwrap();
        write_frames(out.path(), &frames).unwrap();
        let reloaded = load_frames(out.path(), 8.0).unwrap();
        assert_eq!(frames.pixels(), reloaded.pixels());
    }

    #[test]
    fn subsampling_halves_rate_and_keeps_every_other_frame() {
        let dir = tempdir().unwrap();
        for i in 0..6 {
            write_pgm(
                &dir.path().join(format!("f{i}.pgm")),
                2,
                2,
                &[(i * 10) as u8; 4],
            );
        }
        let frames = load_frames_subsampled(dir.path(), 30.0, 2).unwrap();
        assert_eq!(frames.frame_count(), 3);
        assert_eq!(frames.fps, 15.0);
        assert_eq!(frames.pixel(0, 0, 1), 20.0 / 255.0);
    }

    #[test]
    fn label_masks_split_by_person() {
        let dir = tempdir().unwrap();
        // 3x2 label image: left column person 1, right column person 2.
        let labels = [1u8, 0, 2, 1, 0, 2];
        write_pgm(&dir.path().join("m0.pgm"), 3, 2, &labels);
        write_pgm(&dir.path().join("m1.pgm"), 3, 2, &labels);
        let masks = load_masks(dir.path(), 2, 2, 3, 2).unwrap();
        assert_eq!(masks.sequences.len(), 2);
        assert!(masks.sequences[0].contains(0, 0, 0));
        assert!(!masks.sequences[0].contains(2, 0, 0));
        assert!(masks.sequences[1].contains(2, 1, 1));
    }

    #[test]
    fn label_value_above_person_count_is_rejected() {
        let dir = tempdir().unwrap();
        write_pgm(&dir.path().join("m0.pgm"), 2, 1, &[0, 3]);
        write_pgm(&dir.path().join("m1.pgm"), 2, 1, &[0, 0]);
        assert!(matches!(
            load_masks(dir.path(), 2, 2, 2, 1),
            Err(Error::MalformedMask(_))
        ));
    }

    #[test]
    fn csv_masks_fill_missing_rows_with_empty() {
        let dir = tempdir().unwrap();
        let csv_path = dir.path().join("boxes.csv");
        fs::write(
            &csv_path,
            "frame,person,x,y,w,h\n5,1,10,10,50,100\n0,2,0,0,5,5\n",
        )
        .unwrap();
        let masks = load_masks(&csv_path, 2, 8, 640, 480).unwrap();
        assert!(masks.warnings.is_empty());
        assert!(masks.sequences[0].contains(10, 10, 5));
        assert!(masks.sequences[0].contains(59, 109, 5));
        assert!(!masks.sequences[0].contains(60, 10, 5));
        // person 2 at frame 7 was never mentioned: empty, no error
        assert_eq!(masks.sequences[1].frames[7], MaskFrame::Empty);
    }

    #[test]
    fn out_of_frame_box_is_clamped_with_warning() {
        let dir = tempdir().unwrap();
        let csv_path = dir.path().join("boxes.csv");
        fs::write(&csv_path, "frame,person,x,y,w,h\n0,1,-5,-5,20,20\n").unwrap();
        let masks = load_masks(&csv_path, 1, 1, 10, 10).unwrap();
        assert_eq!(masks.warnings.len(), 1);
        assert_eq!(
            masks.sequences[0].frames[0],
            MaskFrame::Box(BoundingBox {
                x: 0,
                y: 0,
                w: 10,
                h: 10
            })
        );
    }

    #[test]
    fn intervals_tile_without_overlap() {
        let pixels = vec![0.5; 4 * 4 * 150];
        let frames = FrameSequence::new(4, 4, 30.0, 255, pixels).unwrap();
        let intervals = slice_intervals(&frames, 1.0).unwrap();
        assert_eq!(intervals.len(), 5);
        for (i, iv) in intervals.iter().enumerate() {
            assert_eq!(iv.start_frame, i * 30);
            assert_eq!(iv.length, 30);
            assert_eq!(iv.index, i);
        }
    }

    #[test]
    fn partial_interval_is_dropped() {
        let pixels = vec![0.0; 2 * 2 * 35];
        let frames = FrameSequence::new(2, 2, 30.0, 255, pixels).unwrap();
        let intervals = slice_intervals(&frames, 1.0).unwrap();
        assert_eq!(intervals.len(), 1);
        assert_eq!(intervals[0].length, 30);
    }

    #[test]
    fn too_short_interval_is_a_configuration_error() {
        let pixels = vec![0.0; 2 * 2 * 30];
        let frames = FrameSequence::new(2, 2, 30.0, 255, pixels).unwrap();
        assert!(matches!(
            slice_intervals(&frames, 0.2),
            Err(Error::Config(_))
        ));
    }
}
