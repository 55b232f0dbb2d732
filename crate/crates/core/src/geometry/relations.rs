//! Pairwise lane relations measured in the BEV plane (z ignored).

use super::bezier::{BezierLane, Point3};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

pub(crate) const DEGENERATE_CHORD: f64 = 1e-9;

fn dist_xy(a: Point3, b: Point3) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Minimum BEV distance over the four start/end pairings.
pub fn endpoint_min_distance(a: &BezierLane, b: &BezierLane) -> f64 {
    let ea = [a.start(), a.end()];
    let eb = [b.start(), b.end()];
    ea.iter()
        .flat_map(|p| eb.iter().map(move |q| dist_xy(*p, *q)))
        .fold(f64::INFINITY, f64::min)
}

/// Unsigned angle in `[0, π]` between the BEV chords (end − start).
pub fn angle_difference(a: &BezierLane, b: &BezierLane) -> Result<f64> {
    let ca = chord(a)?;
    let cb = chord(b)?;
    let cross = ca[0] * cb[1] - ca[1] * cb[0];
    let dot = ca[0] * cb[0] + ca[1] * cb[1];
    Ok(cross.abs().atan2(dot))
}

fn chord(l: &BezierLane) -> Result<[f64; 2]> {
    let c = [l.end()[0] - l.start()[0], l.end()[1] - l.start()[1]];
    if c[0].hypot(c[1]) < DEGENERATE_CHORD {
        return Err(Error::Degenerate("lane start and end coincide".into()));
    }
    Ok(c)
}

/// Differentiable pairwise relations for `(N,4,3)` control points:
/// `(dist, angle)`, each `(N,N)`.
pub fn pairwise_relations(tape: &Tape, control_points: Var) -> Result<(Var, Var)> {
    let shape = tape.shape(control_points);
    let n = match shape.as_slice() {
        [n, 4, 3] => *n,
        _ => return Err(Error::shape("pairwise_relations", format!("{shape:?}, expected (N,4,3)"))),
    };
    {
        let cp = tape.value(control_points);
        for (i, lane) in cp.data().chunks(12).enumerate() {
            if (lane[9] - lane[0]).hypot(lane[10] - lane[1]) < DEGENERATE_CHORD {
                return Err(Error::Degenerate(format!("lane {i}: start and end coincide")));
            }
        }
    }
    let xy = tape.slice(control_points, 2, 0, 2)?;
    let start = tape.reshape(tape.slice(xy, 1, 0, 1)?, &[n, 2])?;
    let end = tape.reshape(tape.slice(xy, 1, 3, 4)?, &[n, 2])?;

    let pair = |a: Var, b: Var| -> Result<Var> {
        let a = tape.reshape(a, &[n, 1, 2])?;
        let b = tape.reshape(b, &[1, n, 2])?;
        let d = tape.sub(a, b)?;
        let d = tape.norm_lastdim(d)?;
        tape.reshape(d, &[n, n, 1])
    };
    let all = tape.concat(
        &[pair(start, start)?, pair(start, end)?, pair(end, start)?, pair(end, end)?],
        2,
    )?;
    let dist = tape.min_axis(all, 2)?;

    let chord = tape.sub(end, start)?;
    let dot = tape.matmul(chord, tape.transpose(chord)?)?;
    let cx = tape.slice(chord, 1, 0, 1)?;
    let cy = tape.slice(chord, 1, 1, 2)?;
    let cross = tape.sub(
        tape.mul(cx, tape.transpose(cy)?)?,
        tape.mul(cy, tape.transpose(cx)?)?,
    )?;
    let angle = tape.atan2(tape.abs(cross)?, dot)?;
    Ok((dist, angle))
}

/// Stacks lane control points into an `(N,4,3)` tensor.
pub fn stack_control_points(lanes: &[BezierLane]) -> Result<Tensor> {
    let data = lanes
        .iter()
        .flat_map(|l| l.control_points.iter().flatten().copied())
        .collect();
    Tensor::new(vec![lanes.len(), 4, 3], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: [f64; 2], b: [f64; 2]) -> BezierLane {
        BezierLane::straight([a[0], a[1], 0.0], [b[0], b[1], 0.0]).unwrap()
    }

    #[test]
    fn fixtures() {
        let a = seg([0., 0.], [1., 0.]);
        let b = seg([3., 0.], [5., 0.]);
        assert_eq!(endpoint_min_distance(&a, &b), 2.0);
        assert_eq!(endpoint_min_distance(&a, &a), 0.0);
        assert_eq!(angle_difference(&a, &b).unwrap(), 0.0);
        let up = seg([0., 0.], [0., 2.]);
        assert!((angle_difference(&a, &up).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let back = seg([1., 0.], [0., 0.]);
        assert!((angle_difference(&a, &back).unwrap() - std::f64::consts::PI).abs() < 1e-15);
        let point = BezierLane::from_points([[1., 1., 0.], [2., 2., 0.], [0., 0., 0.], [1., 1., 5.]]).unwrap();
        assert!(matches!(angle_difference(&a, &point), Err(Error::Degenerate(_))));
    }

    #[test]
    fn tape_relations_match_scalar_versions() {
        let lanes = vec![seg([0., 0.], [1., 0.]), seg([3., 1.], [5., -2.]), seg([-1., 4.], [-2., 2.])];
        let tape = Tape::new();
        let cp = tape.constant(stack_control_points(&lanes).unwrap());
        let (d, a) = pairwise_relations(&tape, cp).unwrap();
        let (d, a) = (tape.value(d).clone(), tape.value(a).clone());
        for i in 0..3 {
            for j in 0..3 {
                assert!((d.at(&[i, j]) - endpoint_min_distance(&lanes[i], &lanes[j])).abs() < 1e-12);
                assert!((a.at(&[i, j]) - angle_difference(&lanes[i], &lanes[j]).unwrap()).abs() < 1e-12);
            }
        }
    }
}
