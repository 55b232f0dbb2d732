use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

pub type Point3 = [f64; 3];

/// Directed cubic Bézier centerline: `P0` is the lane start, `P3` its end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BezierLane {
    pub control_points: [Point3; 4],
    pub confidence: f64,
    pub class_id: u32,
}

impl BezierLane {
    pub fn new(control_points: [Point3; 4], confidence: f64, class_id: u32) -> Result<Self> {
        let lane = Self {
            control_points,
            confidence,
            class_id,
        };
        lane.validate()?;
        Ok(lane)
    }

    /// Ground-truth style lane: confidence 1, class 0.
    pub fn from_points(control_points: [Point3; 4]) -> Result<Self> {
        Self::new(control_points, 1.0, 0)
    }

    /// Straight lane with equispaced control points.
    pub fn straight(start: Point3, end: Point3) -> Result<Self> {
        let lerp = |t: f64| std::array::from_fn(|i| start[i] + t * (end[i] - start[i]));
        Self::from_points([start, lerp(1.0 / 3.0), lerp(2.0 / 3.0), end])
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite control point"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }

    pub fn start(&self) -> Point3 {
        self.control_points[0]
    }

    pub fn end(&self) -> Point3 {
        self.control_points[3]
    }

    /// Point at parameter `t` (Bernstein form).
    pub fn eval(&self, t: f64) -> Result<Point3> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("curve parameter {t} outside [0, 1]")));
        }
        Ok(self.eval_unchecked(t))
    }

    fn eval_unchecked(&self, t: f64) -> Point3 {
        let b = bernstein(t);
        let p = &self.control_points;
        std::array::from_fn(|i| b[0] * p[0][i] + b[1] * p[1][i] + b[2] * p[2][i] + b[3] * p[3][i])
    }

    /// `k` points at `t = j/(k-1)`.
    pub fn sample(&self, k: usize) -> Result<Vec<Point3>> {
        sample_params(k).map(|ts| ts.into_iter().map(|t| self.eval_unchecked(t)).collect())
    }

    pub fn translated(&self, d: Point3) -> Self {
        let mut out = self.clone();
        for p in &mut out.control_points {
            for i in 0..3 {
                p[i] += d[i];
            }
        }
        out
    }

    /// Control points as a 4×3 tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![4, 3], self.control_points.iter().flatten().copied().collect())
            .expect("validated lane")
    }
}

pub fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

fn sample_params(k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 samples per curve, got {k}")));
    }
    Ok((0..k).map(|j| j as f64 / (k - 1) as f64).collect())
}

/// K×4 matrix whose rows are the Bernstein weights at the uniform sample
/// parameters, so `basis @ control_points` samples a curve.
pub fn bernstein_matrix(k: usize) -> Result<Tensor> {
    let data = sample_params(k)?.into_iter().flat_map(bernstein).collect();
    Tensor::new(vec![k, 4], data)
}

/// Samples a batch of curves on the tape: `(B,4,D)` control points to
/// `(B,K,D)` points.
pub fn sample_curves(tape: &Tape, control_points: Var, k: usize) -> Result<Var> {
    let shape = tape.shape(control_points);
    let (b, d) = match shape.as_slice() {
        [b, 4, d] => (*b, *d),
        _ => return Err(Error::shape("sample_curves", format!("control points {shape:?}, expected (B,4,D)"))),
    };
    let basis = tape.constant(bernstein_matrix(k)?);
    let cp = tape.permute(control_points, &[1, 0, 2])?;
    let cp = tape.reshape(cp, &[4, b * d])?;
    let pts = tape.matmul(basis, cp)?;
    let pts = tape.reshape(pts, &[k, b, d])?;
    tape.permute(pts, &[1, 0, 2])
}

/// Least-squares cubic through `points`, assuming they are sampled at
/// uniform curve parameters. Endpoints are not pinned.
pub fn fit_cubic(points: &[Point3]) -> Result<[Point3; 4]> {
    let n = points.len();
    if n < 4 {
        return Err(Error::invalid(format!("need at least 4 points to fit a cubic, got {n}")));
    }
    let ts = sample_params(n)?;
    let mut ata = [[0.0; 4]; 4];
    let mut atb = [[0.0; 3]; 4];
    for (t, p) in ts.iter().zip(points) {
        let b = bernstein(*t);
        for r in 0..4 {
            for c in 0..4 {
                ata[r][c] += b[r] * b[c];
            }
            for d in 0..3 {
                atb[r][d] += b[r] * p[d];
            }
        }
    }
    solve4(ata, atb)
}

/// Gaussian elimination with partial pivoting on a 4×4 system with three
/// right-hand sides.
fn solve4(mut a: [[f64; 4]; 4], mut b: [[f64; 3]; 4]) -> Result<[Point3; 4]> {
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() < 1e-14 {
            return Err(Error::Degenerate("singular least-squares system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..4 {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            for d in 0..3 {
                b[r][d] -= f * b[col][d];
            }
        }
    }
    Ok(std::array::from_fn(|r| std::array::from_fn(|d| b[r][d] / a[r][r])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_straight_midpoint() {
        let l = BezierLane::from_points([[0., 0., 0.], [1., 0., 0.], [2., 0., 0.], [3., 0., 0.]]).unwrap();
        assert_eq!(l.eval(0.5).unwrap(), [1.5, 0.0, 0.0]);
        assert_eq!(l.eval(0.0).unwrap(), l.start());
        assert_eq!(l.eval(1.0).unwrap(), l.end());
        assert!(l.eval(1.5).is_err());
        assert!(l.sample(1).is_err());
        assert_eq!(l.sample(2).unwrap(), vec![l.start(), l.end()]);
    }

    #[test]
    fn fit_recovers_exact_cubic() {
        let l = BezierLane::from_points([[0., 0., 0.], [3., 2., 0.1], [7., -1., 0.2], [10., 1., 0.]]).unwrap();
        let fit = fit_cubic(&l.sample(11).unwrap()).unwrap();
        for (a, b) in fit.iter().flatten().zip(l.control_points.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn tape_sampling_matches_direct() {
        let l = BezierLane::from_points([[0., 0., 0.], [0., 1., 0.], [1., 1., 0.], [1., 0., 0.]]).unwrap();
        let tape = Tape::new();
        let cp = tape.constant(l.to_tensor().reshaped(&[1, 4, 3]).unwrap());
        let pts = sample_curves(&tape, cp, 11).unwrap();
        let direct: Vec<f64> = l.sample(11).unwrap().into_iter().flatten().collect();
        for (a, b) in tape.data(pts).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
