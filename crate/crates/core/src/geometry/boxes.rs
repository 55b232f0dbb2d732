//! Axis-aligned boxes in `(cx, cy, w, h)` form.

use crate::error::{Error, Result};

fn corners(b: &[f64; 4]) -> [f64; 4] {
    [b[0] - b[2] / 2.0, b[1] - b[3] / 2.0, b[0] + b[2] / 2.0, b[1] + b[3] / 2.0]
}

fn check(b: &[f64; 4]) -> Result<()> {
    if b.iter().any(|v| !v.is_finite()) || b[2] <= 0.0 || b[3] <= 0.0 {
        return Err(Error::Degenerate(format!("box {b:?} needs positive width and height")));
    }
    Ok(())
}

fn inter_union(a: &[f64; 4], b: &[f64; 4]) -> (f64, f64) {
    let (ca, cb) = (corners(a), corners(b));
    let iw = (ca[2].min(cb[2]) - ca[0].max(cb[0])).max(0.0);
    let ih = (ca[3].min(cb[3]) - ca[1].max(cb[1])).max(0.0);
    let inter = iw * ih;
    (inter, a[2] * a[3] + b[2] * b[3] - inter)
}

/// Intersection over union; 0 for degenerate boxes.
pub fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let (inter, union) = inter_union(a, b);
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Generalized IoU: `IoU - |hull \ union| / |hull|`, in `[-1, 1]`.
pub fn box_giou(a: &[f64; 4], b: &[f64; 4]) -> Result<f64> {
    check(a)?;
    check(b)?;
    let (inter, union) = inter_union(a, b);
    let (ca, cb) = (corners(a), corners(b));
    let hull = (ca[2].max(cb[2]) - ca[0].min(cb[0])) * (ca[3].max(cb[3]) - ca[1].min(cb[1]));
    Ok(inter / union - (hull - union) / hull)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = [0.0, 0.0, 2.0, 2.0];
        assert_eq!(box_iou(&a, &a), 1.0);
        assert!((box_iou(&a, &[1.0, 0.0, 2.0, 2.0]) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(box_giou(&a, &a).unwrap(), 1.0);
        let g = box_giou(&[0.0, 0.0, 1.0, 1.0], &[0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(g.abs() < 1e-12);
        let far = box_giou(&[0.0, 0.0, 1.0, 1.0], &[10.0, 10.0, 1.0, 1.0]).unwrap();
        assert!(far < -0.9 && far >= -1.0);
        assert!(box_giou(&[0.0, 0.0, 0.0, 1.0], &a).is_err());
    }
}
