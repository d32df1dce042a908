//! Running the tracker over sequences and writing CSV reports.
//!
//! Per-frame CSV columns: `frame,x,y,w,h,beta_d,beta_s,xi,loss`. Frame 0 is
//! the initialization box and carries `nan` fusion fields.
//! Summary CSV columns: `sequence,auc,op50,op75,dp20,status`.
//! Floats are written with six decimals.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use fusetrack::fusion::FusionMode;
use fusetrack::tracker::{TargetState, Tracker, TrackerConfig, TrackerError};

use crate::metrics::{success_metrics, BBox, MetricReport};
use crate::sequence::{to_rgb8, Sequence};

pub const FRAME_HEADER: &str = "frame,x,y,w,h,beta_d,beta_s,xi,loss";
pub const SUMMARY_HEADER: &str = "sequence,auc,op50,op75,dp20,status";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub bbox: BBox,
    pub beta_d: f64,
    pub beta_s: f64,
    pub xi: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub name: String,
    pub frames: Vec<FrameRecord>,
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sequences: Vec<SequenceResult>,
    pub files: Vec<PathBuf>,
}

fn to_bbox(s: &TargetState<f64>) -> BBox {
    let (x, y, w, h) = s.to_box();
    BBox::new(x, y, w, h)
}

/// Tracks a whole sequence from its first ground-truth box.
pub fn track_sequence(seq: &Sequence, cfg: &TrackerConfig) -> Result<Vec<FrameRecord>, TrackerError> {
    let Some(first) = seq.frames.first() else {
        return Ok(Vec::new());
    };
    let g = seq.ground_truth[0];
    let init = TargetState::from_box(g.x, g.y, g.w, g.h);
    let mut tracker = Tracker::initialize(first, init, cfg)?;
    let mut out = Vec::with_capacity(seq.len());
    out.push(FrameRecord {
        frame: 0,
        bbox: to_bbox(&tracker.state()),
        beta_d: f64::NAN,
        beta_s: f64::NAN,
        xi: f64::NAN,
        loss: f64::NAN,
    });
    for (i, frame) in seq.frames.iter().enumerate().skip(1) {
        let r = tracker.process_frame(frame)?;
        out.push(FrameRecord {
            frame: i,
            bbox: to_bbox(&r.state),
            beta_d: r.fusion.beta_d,
            beta_s: r.fusion.beta_s,
            xi: r.fusion.xi,
            loss: r.fusion.loss,
        });
    }
    Ok(out)
}

fn f6(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn frames_csv(frames: &[FrameRecord]) -> String {
    let mut s = String::from(FRAME_HEADER);
    s.push('\n');
    for r in frames {
        let b = r.bbox;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.frame,
            f6(b.x),
            f6(b.y),
            f6(b.w),
            f6(b.h),
            f6(r.beta_d),
            f6(r.beta_s),
            f6(r.xi),
            f6(r.loss)
        );
    }
    s
}

pub fn summary_csv(results: &[SequenceResult]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in results {
        match (&r.metrics, &r.error) {
            (Some(m), None) => {
                let _ = writeln!(s, "{},{},{},{},{},ok", r.name, f6(m.auc), f6(m.op50), f6(m.op75), f6(m.dp20));
            }
            (_, err) => {
                let msg = err.as_deref().unwrap_or("no result").replace([',', '\n'], ";");
                let _ = writeln!(s, "{},nan,nan,nan,nan,error: {msg}", r.name);
            }
        }
    }
    s
}

fn draw_rect(img: &mut image::RgbImage, b: &BBox, color: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let x1 = (b.x + b.w).round() as i64 - 1;
    let y1 = (b.y + b.h).round() as i64 - 1;
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && x < w && y < h {
            img.put_pixel(x as u32, y as u32, image::Rgb(color));
        }
    };
    for t in 0..2 {
        for x in x0..=x1 {
            put(x, y0 + t);
            put(x, y1 - t);
        }
        for y in y0..=y1 {
            put(x0 + t, y);
            put(x1 - t, y);
        }
    }
}

/// Writes `dir/NNNN.ppm` frames with the ground truth (green) and the prediction (red).
pub fn write_overlay(seq: &Sequence, frames: &[FrameRecord], dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (rec, (img, gt)) in frames.iter().zip(seq.frames.iter().zip(&seq.ground_truth)) {
        let mut rgb = to_rgb8(img);
        draw_rect(&mut rgb, gt, [0, 220, 0]);
        draw_rect(&mut rgb, &rec.bbox, [230, 20, 20]);
        let path = dir.join(format!("{:04}.ppm", rec.frame + 1));
        rgb.save_with_format(&path, image::ImageFormat::Pnm)
            .map_err(io::Error::other)?;
    }
    Ok(())
}

/// Evaluates every sequence under `mode`. Tracker failures are recorded per
/// sequence and do not stop the run. When `out_dir` is given, per-frame and
/// summary CSVs (and optional overlays) are written there.
pub fn run_eval(
    sequences: &[Sequence],
    cfg: &TrackerConfig,
    mode: FusionMode<f64>,
    out_dir: Option<&Path>,
    overlay: bool,
) -> io::Result<EvalReport> {
    let cfg = TrackerConfig {
        fusion: mode,
        ..cfg.clone()
    };
    let mut results = Vec::with_capacity(sequences.len());
    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    for seq in sequences {
        let result = match track_sequence(seq, &cfg) {
            Ok(frames) => {
                let boxes: Vec<BBox> = frames.iter().map(|f| f.bbox).collect();
                match success_metrics(&boxes, &seq.ground_truth) {
                    Ok(m) => SequenceResult {
                        name: seq.name.clone(),
                        frames,
                        metrics: Some(m),
                        error: None,
                    },
                    Err(e) => SequenceResult {
                        name: seq.name.clone(),
                        frames,
                        metrics: None,
                        error: Some(e.to_string()),
                    },
                }
            }
            Err(e) => SequenceResult {
                name: seq.name.clone(),
                frames: Vec::new(),
                metrics: None,
                error: Some(e.to_string()),
            },
        };
        if let Some(dir) = out_dir {
            let path = dir.join(format!("{}.csv", seq.name));
            fs::write(&path, frames_csv(&result.frames))?;
            files.push(path);
            if overlay && !result.frames.is_empty() {
                write_overlay(seq, &result.frames, &dir.join("overlay").join(&seq.name))?;
            }
        }
        results.push(result);
    }
    if let Some(dir) = out_dir {
        let path = dir.join("summary.csv");
        fs::write(&path, summary_csv(&results))?;
        files.push(path);
    }
    Ok(EvalReport {
        sequences: results,
        files,
    })
}
