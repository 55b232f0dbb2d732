//! Point-set and polyline distances.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

fn euclid<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn nearest<const D: usize>(p: &[f64; D], set: &[[f64; D]]) -> f64 {
    set.iter().map(|q| euclid(p, q)).fold(f64::INFINITY, f64::min)
}

fn non_empty<T>(what: &str, s: &[T]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    Ok(())
}

/// `½·mean_a min_b ‖a−b‖ + ½·mean_b min_a ‖a−b‖`.
pub fn chamfer_distance<const D: usize>(a: &[[f64; D]], b: &[[f64; D]]) -> Result<f64> {
    non_empty("first point set", a)?;
    non_empty("second point set", b)?;
    let ab = a.iter().map(|p| nearest(p, b)).sum::<f64>() / a.len() as f64;
    let ba = b.iter().map(|p| nearest(p, a)).sum::<f64>() / b.len() as f64;
    Ok(0.5 * (ab + ba))
}

/// Discrete Fréchet distance over monotone couplings.
pub fn discrete_frechet<const D: usize>(a: &[[f64; D]], b: &[[f64; D]]) -> Result<f64> {
    non_empty("first polyline", a)?;
    non_empty("second polyline", b)?;
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = euclid(p, q);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

pub fn hausdorff<const D: usize>(a: &[[f64; D]], b: &[[f64; D]]) -> Result<f64> {
    non_empty("first point set", a)?;
    non_empty("second point set", b)?;
    let ab = a.iter().map(|p| nearest(p, b)).fold(0.0, f64::max);
    let ba = b.iter().map(|p| nearest(p, a)).fold(0.0, f64::max);
    Ok(ab.max(ba))
}

/// Per-pair symmetric Chamfer distance on the tape: `(B,K,D)` vs `(B,K',D)`
/// to `(B,)`.
pub fn chamfer_var(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    let (bsz, ka, kb, d) = match (sa.as_slice(), sb.as_slice()) {
        ([b1, ka, d1], [b2, kb, d2]) if b1 == b2 && d1 == d2 && *ka > 0 && *kb > 0 => (*b1, *ka, *kb, *d1),
        _ => return Err(Error::shape("chamfer", format!("{sa:?} vs {sb:?}"))),
    };
    let ar = tape.reshape(a, &[bsz, ka, 1, d])?;
    let br = tape.reshape(b, &[bsz, 1, kb, d])?;
    let dist = tape.norm_lastdim(tape.sub(ar, br)?)?;
    let ab = tape.mean_axis(tape.min_axis(dist, 2)?, 1)?;
    let ba = tape.mean_axis(tape.min_axis(dist, 1)?, 1)?;
    tape.scale(tape.add(ab, ba)?, 0.5)
}
