//! Overlap and centre-error metrics.

use thiserror::Error;

/// Axis-aligned box `(x, y, w, h)` with top-left corner `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Euclidean distance between box centres.
pub fn center_error(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

pub const CURVE_STEPS: usize = 101;
pub const DP_MAX_PX: f64 = 50.0;

/// IOU thresholds `0, 0.01, …, 1`.
pub fn overlap_thresholds() -> Vec<f64> {
    (0..CURVE_STEPS).map(|i| i as f64 / (CURVE_STEPS - 1) as f64).collect()
}

/// Centre-error thresholds `0, 0.5, …, 50` pixels.
pub fn distance_thresholds() -> Vec<f64> {
    (0..CURVE_STEPS)
        .map(|i| DP_MAX_PX * i as f64 / (CURVE_STEPS - 1) as f64)
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{pred} predictions for {gt} ground-truth boxes")]
    LengthMismatch { pred: usize, gt: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ious: Vec<f64>,
    pub center_errors: Vec<f64>,
    /// Fraction of frames with IOU strictly above each overlap threshold.
    pub op_curve: Vec<f64>,
    /// Mean of the OP curve.
    pub auc: f64,
    /// Fraction of frames with centre error strictly below each distance threshold.
    pub dp_curve: Vec<f64>,
    pub dp20: f64,
    pub op50: f64,
    pub op75: f64,
}

fn fraction(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| pred(v)).count() as f64 / values.len() as f64
}

/// Success (OP/AUC) and precision (DP) metrics of a trajectory.
pub fn success_metrics(pred: &[BBox], gt: &[BBox]) -> Result<MetricReport, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    let center_errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| center_error(p, g)).collect();
    let op_curve: Vec<f64> = overlap_thresholds()
        .into_iter()
        .map(|t| fraction(&ious, |v| v > t))
        .collect();
    let auc = op_curve.iter().sum::<f64>() / op_curve.len() as f64;
    let dp_curve = distance_thresholds()
        .into_iter()
        .map(|t| fraction(&center_errors, |v| v < t))
        .collect();
    Ok(MetricReport {
        op50: fraction(&ious, |v| v > 0.5),
        op75: fraction(&ious, |v| v > 0.75),
        dp20: fraction(&center_errors, |v| v < 20.0),
        ious,
        center_errors,
        op_curve,
        auc,
        dp_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &BBox::new(1.0, 0.0, 2.0, 2.0)) - 2.0 / 6.0).abs() < 1e-15);
        // Touching edges do not overlap.
        assert_eq!(iou(&a, &BBox::new(2.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn perfect_and_disjoint() {
        let gt = vec![BBox::new(3.0, 4.0, 10.0, 20.0); 7];
        let r = success_metrics(&gt, &gt).unwrap();
        assert_eq!(r.op_curve[100], 0.0);
        assert!(r.op_curve[..100].iter().all(|&v| v == 1.0));
        assert!((r.auc - 100.0 / 101.0).abs() < 1e-15);
        assert_eq!(r.dp_curve[0], 0.0);
        assert_eq!(r.dp20, 1.0);

        let far: Vec<BBox> = gt.iter().map(|b| BBox::new(b.x + 100.0, b.y, b.w, b.h)).collect();
        let r = success_metrics(&far, &gt).unwrap();
        assert_eq!(r.auc, 0.0);
        assert_eq!(r.dp20, 0.0);
    }

    #[test]
    fn length_mismatch() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(
            success_metrics(&[b], &[b, b]),
            Err(MetricError::LengthMismatch { pred: 1, gt: 2 })
        );
    }
}
