//! Sequences in the OTB directory layout: `img/0001.jpg`, … plus
//! `groundtruth_rect.txt` with one 1-indexed `x,y,w,h` box per line.

use std::fs;
use std::path::{Path, PathBuf};

use fusetrack::image::Image;
use thiserror::Error;

use crate::metrics::BBox;

pub const GT_FILE: &str = "groundtruth_rect.txt";
pub const IMG_DIR: &str = "img";

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
    #[error("{path}: {err}")]
    Image { path: PathBuf, err: image::ImageError },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}: no frames found")]
    Empty(PathBuf),
    #[error("{frames} frames but {boxes} ground-truth boxes")]
    LengthMismatch { frames: usize, boxes: usize },
    #[error("frame {index} is {actual:?}, expected {expected:?}")]
    FrameSize { index: usize, expected: (usize, usize), actual: (usize, usize) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Image<f64>>,
    /// 0-indexed boxes, one per frame.
    pub ground_truth: Vec<BBox>,
}

impl Sequence {
    pub fn new(name: impl Into<String>, frames: Vec<Image<f64>>, ground_truth: Vec<BBox>) -> Result<Self, SequenceError> {
        if frames.len() != ground_truth.len() {
            return Err(SequenceError::LengthMismatch {
                frames: frames.len(),
                boxes: ground_truth.len(),
            });
        }
        if let Some(first) = frames.first() {
            let expected = (first.width(), first.height());
            for (index, f) in frames.iter().enumerate() {
                if (f.width(), f.height()) != expected {
                    return Err(SequenceError::FrameSize {
                        index,
                        expected,
                        actual: (f.width(), f.height()),
                    });
                }
            }
        }
        Ok(Self {
            name: name.into(),
            frames,
            ground_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Parses ground truth; fields may be separated by commas, tabs or spaces.
/// Coordinates are converted from 1-indexed to 0-indexed.
pub fn parse_ground_truth(text: &str, path: &Path) -> Result<Vec<BBox>, SequenceError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| SequenceError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let fields: Vec<&str> = line
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (dst, f) in v.iter_mut().zip(&fields) {
            *dst = f.parse::<f64>().map_err(|e| err(format!("{f:?}: {e}")))?;
            if !dst.is_finite() {
                return Err(err(format!("non-finite value {f:?}")));
            }
        }
        if !(v[2] > 0.0 && v[3] > 0.0) {
            return Err(err(format!("box size must be positive, got {}x{}", v[2], v[3])));
        }
        out.push(BBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]));
    }
    Ok(out)
}

pub fn format_ground_truth(boxes: &[BBox]) -> String {
    boxes
        .iter()
        .map(|b| format!("{},{},{},{}\n", b.x + 1.0, b.y + 1.0, b.w, b.h))
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SequenceError + '_ {
    move |err| SequenceError::Io {
        path: path.to_path_buf(),
        err,
    }
}

pub fn read_image(path: &Path) -> Result<Image<f64>, SequenceError> {
    let img = image::open(path)
        .map_err(|err| SequenceError::Image {
            path: path.to_path_buf(),
            err,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(Image::new(w as usize, h as usize, 3, data).expect("rgb buffer matches dimensions"))
}

pub fn to_rgb8(img: &Image<f64>) -> image::RgbImage {
    let (w, h) = (img.width(), img.height());
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = img.pixel(x as usize, y as usize);
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        if px.len() >= 3 {
            image::Rgb([q(px[0]), q(px[1]), q(px[2])])
        } else {
            image::Rgb([q(px[0]); 3])
        }
    })
}

/// Frame files `img/NNNN.<ext>` sorted by frame number.
fn frame_files(dir: &Path) -> Result<Vec<PathBuf>, SequenceError> {
    let img_dir = dir.join(IMG_DIR);
    let mut files: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&img_dir).map_err(io_err(&img_dir))? {
        let path = entry.map_err(io_err(&img_dir))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if !matches!(ext.as_str(), "jpg" | "jpeg" | "png") {
            continue;
        }
        if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) {
            files.push((n, path));
        }
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

pub fn load_sequence(dir: &Path) -> Result<Sequence, SequenceError> {
    let gt_path = dir.join(GT_FILE);
    let text = fs::read_to_string(&gt_path).map_err(io_err(&gt_path))?;
    let gt = parse_ground_truth(&text, &gt_path)?;
    let files = frame_files(dir)?;
    if files.is_empty() {
        return Err(SequenceError::Empty(dir.join(IMG_DIR)));
    }
    let frames = files.iter().map(|p| read_image(p)).collect::<Result<Vec<_>, _>>()?;
    let name = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("sequence")
        .to_string();
    Sequence::new(name, frames, gt)
}

/// Writes PNG frames and 1-indexed ground truth.
pub fn save_sequence(seq: &Sequence, dir: &Path) -> Result<(), SequenceError> {
    let img_dir = dir.join(IMG_DIR);
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    for (i, frame) in seq.frames.iter().enumerate() {
        let path = img_dir.join(format!("{:04}.png", i + 1));
        to_rgb8(frame).save(&path).map_err(|err| SequenceError::Image {
            path: path.clone(),
            err,
        })?;
    }
    let gt_path = dir.join(GT_FILE);
    fs::write(&gt_path, format_ground_truth(&seq.ground_truth)).map_err(io_err(&gt_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_delimiters() {
        let gt = parse_ground_truth("1,2,3,4\n5\t6\t7\t8\n\n9 10 11 12\n", Path::new("gt")).unwrap();
        assert_eq!(gt.len(), 3);
        assert_eq!(gt[0], BBox::new(0.0, 1.0, 3.0, 4.0));
        assert_eq!(gt[1], BBox::new(4.0, 5.0, 7.0, 8.0));
    }

    #[test]
    fn reports_line_numbers() {
        match parse_ground_truth("1,2,3,4\n1,2,x,4\n", Path::new("gt")) {
            Err(SequenceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_ground_truth("1,2,3\n", Path::new("gt")),
            Err(SequenceError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_ground_truth("1,2,0,4\n", Path::new("gt")),
            Err(SequenceError::Parse { line: 1, .. })
        ));
    }
}
