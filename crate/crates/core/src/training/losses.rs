use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{chamfer_var, sample_curves};
use crate::numerics::tape::softplus;
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalConfig {
    /// Positive-class weight; `None` weighs both classes by 1.
    pub alpha: Option<f64>,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            alpha: Some(0.25),
            gamma: 2.0,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("focal alpha must lie in [0, 1], got {a}")));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("focal gamma must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    Mean,
    Sum,
    /// Sum divided by the given count (clamped to at least 1).
    Normalized(f64),
}

fn reduce(tape: &Tape, v: Var, reduction: Reduction) -> Result<Var> {
    match reduction {
        Reduction::Mean => tape.mean(v),
        Reduction::Sum => tape.sum(v),
        Reduction::Normalized(n) => tape.scale(tape.sum(v)?, 1.0 / n.max(1.0)),
    }
}

fn check_binary(op: &'static str, t: &Tensor) -> Result<()> {
    if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("{op}: targets must be 0 or 1")));
    }
    Ok(())
}

/// Binary focal loss on logits against `{0, 1}` targets of the same shape.
pub fn focal_loss(tape: &Tape, logits: Var, targets: &Tensor, cfg: &FocalConfig, reduction: Reduction) -> Result<Var> {
    let shape = tape.shape(logits);
    if shape != targets.shape() {
        return Err(Error::shape("focal_loss", format!("{shape:?} vs {:?}", targets.shape())));
    }
    check_binary("focal_loss", targets)?;
    let t = tape.constant(targets.clone());
    let ce = tape.sub(tape.softplus(logits)?, tape.mul(t, logits)?)?;
    let mut elem = ce;
    if cfg.gamma != 0.0 {
        // 1 - p_t, written so that neither branch loses precision.
        let q_pos = tape.sigmoid(tape.neg(logits)?)?;
        let q_neg = tape.sigmoid(logits)?;
        let not_t = tape.constant(Tensor::new(shape.clone(), targets.data().iter().map(|v| 1.0 - v).collect())?);
        let q = tape.add(tape.mul(t, q_pos)?, tape.mul(not_t, q_neg)?)?;
        elem = tape.mul(tape.powf(q, cfg.gamma)?, elem)?;
    }
    if let Some(a) = cfg.alpha {
        let w = Tensor::new(shape, targets.data().iter().map(|v| a * v + (1.0 - a) * (1.0 - v)).collect())?;
        elem = tape.mul(tape.constant(w), elem)?;
    }
    reduce(tape, elem, reduction)
}

/// Scalar focal loss of one logit; used for matching costs.
pub fn focal_value(logit: f64, target: bool, cfg: &FocalConfig) -> f64 {
    let (ce, q) = if target {
        (softplus(-logit), crate::numerics::tape::sigmoid_value(-logit))
    } else {
        (softplus(logit), crate::numerics::tape::sigmoid_value(logit))
    };
    let a = cfg.alpha.map_or(1.0, |a| if target { a } else { 1.0 - a });
    a * q.powf(cfg.gamma) * ce
}

/// Classification matching cost: positive focal term minus negative.
pub fn focal_match_cost(logit: f64, cfg: &FocalConfig) -> f64 {
    focal_value(logit, true, cfg) - focal_value(logit, false, cfg)
}

/// Per-row `1 - GIoU` for `(P,4)` `(cx, cy, w, h)` boxes against fixed
/// targets; returns `(P,)`.
pub fn giou_loss(tape: &Tape, pred: Var, target: &Tensor) -> Result<Var> {
    let shape = tape.shape(pred);
    if shape.len() != 2 || shape[1] != 4 || shape != target.shape() {
        return Err(Error::shape("giou_loss", format!("{shape:?} vs {:?}", target.shape())));
    }
    for (name, t) in [("prediction", &*tape.value(pred)), ("target", target)] {
        if t.data().chunks(4).any(|b| !(b[2] > 0.0 && b[3] > 0.0)) {
            return Err(Error::Degenerate(format!("giou_loss: {name} box with non-positive size")));
        }
    }
    let col = |v: Var, i: usize| tape.slice(v, 1, i, i + 1);
    let tgt = tape.constant(target.clone());
    let bounds = |v: Var| -> Result<[Var; 4]> {
        let (cx, cy, w, h) = (col(v, 0)?, col(v, 1)?, col(v, 2)?, col(v, 3)?);
        let hw = tape.scale(w, 0.5)?;
        let hh = tape.scale(h, 0.5)?;
        Ok([tape.sub(cx, hw)?, tape.sub(cy, hh)?, tape.add(cx, hw)?, tape.add(cy, hh)?])
    };
    let (a, b) = (bounds(pred)?, bounds(tgt)?);
    let area = |v: Var| tape.mul(col(v, 2)?, col(v, 3)?);
    let iw = tape.relu(tape.sub(tape.minimum(a[2], b[2])?, tape.maximum(a[0], b[0])?)?)?;
    let ih = tape.relu(tape.sub(tape.minimum(a[3], b[3])?, tape.maximum(a[1], b[1])?)?)?;
    let inter = tape.mul(iw, ih)?;
    let union = tape.sub(tape.add(area(pred)?, area(tgt)?)?, inter)?;
    let hw = tape.sub(tape.maximum(a[2], b[2])?, tape.minimum(a[0], b[0])?)?;
    let hh = tape.sub(tape.maximum(a[3], b[3])?, tape.minimum(a[1], b[1])?)?;
    let hull = tape.mul(hw, hh)?;
    let iou = tape.div(inter, union)?;
    let gap = tape.div(tape.sub(hull, union)?, hull)?;
    let giou = tape.sub(iou, gap)?;
    let loss = tape.rsub_scalar(1.0, giou)?;
    tape.reshape(loss, &[shape[0]])
}

/// Sum of absolute differences per leading index: `(P, ...)` to `(P,)`.
pub fn l1_loss(tape: &Tape, pred: Var, target: &Tensor) -> Result<Var> {
    let shape = tape.shape(pred);
    if shape != target.shape() || shape.is_empty() {
        return Err(Error::shape("l1_loss", format!("{shape:?} vs {:?}", target.shape())));
    }
    let d = tape.abs(tape.sub(pred, tape.constant(target.clone()))?)?;
    let per: usize = shape[1..].iter().product();
    tape.sum_axis(tape.reshape(d, &[shape[0], per])?, 1)
}

/// Chamfer distance between `k`-point samplings of predicted and target
/// curves: `(B,4,3)` against `(B,4,3)` to `(B,)`.
pub fn bezier_chamfer_loss(tape: &Tape, pred: Var, target: &Tensor, k: usize) -> Result<Var> {
    let shape = tape.shape(pred);
    if shape != target.shape() {
        return Err(Error::shape("bezier_chamfer_loss", format!("{shape:?} vs {:?}", target.shape())));
    }
    let a = sample_curves(tape, pred, k)?;
    let b = sample_curves(tape, tape.constant(target.clone()), k)?;
    chamfer_var(tape, a, b)
}

/// `log(1 + Σ exp(d))` over all entries of `d`, computed stably.
fn log1p_sum_exp(tape: &Tape, d: Var) -> Result<Var> {
    let m = tape.value(d).data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = tape.add_scalar(tape.log(tape.sum(tape.exp(tape.add_scalar(d, -m)?)?)?)?, m)?;
    tape.softplus(lse)
}

/// Contrastive topology loss over an `R×C` logit matrix. Each row (then
/// each column) with at least one positive pairs its positives against
/// its `n_neg` highest-scoring negatives; the loss is the mean over both
/// directions of the mean per-line term. Lines without positives or
/// negatives are skipped; a direction with no usable line is left out of
/// the outer mean, and the loss is 0 when neither direction has one.
pub fn infonce_topology_loss(tape: &Tape, logits: Var, targets: &Tensor, n_neg: usize) -> Result<Var> {
    let shape = tape.shape(logits);
    if shape.len() != 2 || shape != targets.shape() {
        return Err(Error::shape("infonce_topology_loss", format!("{shape:?} vs {:?}", targets.shape())));
    }
    check_binary("infonce_topology_loss", targets)?;
    let (rows, cols) = (shape[0], shape[1]);
    let flat = tape.reshape(logits, &[rows * cols])?;
    let values = tape.value(logits).data().to_vec();
    let gt = targets.data();
    let mut dir_means = Vec::new();
    for transpose in [false, true] {
        let (lines, len) = if transpose { (cols, rows) } else { (rows, cols) };
        let mut terms = Vec::new();
        for l in 0..lines {
            let idx = |k: usize| if transpose { k * cols + l } else { l * cols + k };
            let pos: Vec<usize> = (0..len).map(idx).filter(|&i| gt[i] == 1.0).collect();
            let mut neg: Vec<usize> = (0..len).map(idx).filter(|&i| gt[i] == 0.0).collect();
            if pos.is_empty() || neg.is_empty() || n_neg == 0 {
                continue;
            }
            // Hardest first; ties keep the lower index.
            neg.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
            neg.truncate(n_neg);
            let vp = tape.reshape(tape.index_select(flat, 0, &pos)?, &[pos.len(), 1])?;
            let vn = tape.reshape(tape.index_select(flat, 0, &neg)?, &[1, neg.len()])?;
            terms.push(log1p_sum_exp(tape, tape.sub(vn, vp)?)?);
        }
        if !terms.is_empty() {
            let n = terms.len();
            let s = tape.sum(tape.concat(&terms.iter().map(|&t| tape.reshape(t, &[1])).collect::<Result<Vec<_>>>()?, 0)?)?;
            dir_means.push(tape.scale(s, 1.0 / n as f64)?);
        }
    }
    match dir_means.len() {
        0 => tape.scalar(0.0),
        1 => Ok(dir_means[0]),
        _ => tape.scale(tape.add(dir_means[0], dir_means[1])?, 0.5),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn focal(logits: &[f64], targets: &[f64], cfg: FocalConfig, r: Reduction) -> f64 {
        let tape = Tape::new();
        let n = logits.len();
        let x = tape.leaf(t(&[n], logits));
        let v = focal_loss(&tape, x, &t(&[n], targets), &cfg, r).unwrap();
        tape.item(v).unwrap()
    }

    #[test]
    fn focal_half_probability() {
        let v = focal(&[0.0], &[1.0], FocalConfig::default(), Reduction::Mean);
        assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        // 0.0433217 rounds to the quoted five decimals.
        assert!((v - 0.04332).abs() <= 5e-6);
        assert!((focal_value(0.0, true, &FocalConfig::default()) - v).abs() < 1e-15);
    }

    #[test]
    fn focal_confident_positive_vanishes() {
        assert!(focal(&[30.0], &[1.0], FocalConfig::default(), Reduction::Mean) < 1e-20);
    }

    #[test]
    fn focal_degenerates_to_bce() {
        let cfg = FocalConfig {
            alpha: Some(1.0),
            gamma: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: f64 = rng.gen_range(-6.0..6.0);
            let p = 1.0 / (1.0 + (-x).exp());
            assert!((focal(&[x], &[1.0], cfg, Reduction::Sum) + p.ln()).abs() < 1e-10);
        }
        // Without alpha both classes reduce to BCE.
        let cfg = FocalConfig { alpha: None, gamma: 0.0 };
        let x = 0.7f64;
        let p = 1.0 / (1.0 + (-x).exp());
        assert!((focal(&[x], &[0.0], cfg, Reduction::Sum) + (1.0 - p).ln()).abs() < 1e-12);
    }

    #[test]
    fn focal_reductions_and_errors() {
        let cfg = FocalConfig::default();
        let (x, y) = ([0.3, -1.2, 2.0], [1.0, 0.0, 0.0]);
        let sum = focal(&x, &y, cfg, Reduction::Sum);
        assert!((focal(&x, &y, cfg, Reduction::Mean) - sum / 3.0).abs() < 1e-15);
        assert!((focal(&x, &y, cfg, Reduction::Normalized(2.0)) - sum / 2.0).abs() < 1e-15);
        assert!((focal(&x, &y, cfg, Reduction::Normalized(0.0)) - sum).abs() < 1e-15);
        assert!(x.iter().zip(&y).all(|(&a, &b)| focal_value(a, b == 1.0, &cfg) >= 0.0));
        let tape = Tape::new();
        let v = tape.leaf(t(&[1], &[0.0]));
        assert!(focal_loss(&tape, v, &t(&[1], &[0.5]), &cfg, Reduction::Mean).is_err());
        assert!(focal_loss(&tape, v, &t(&[2], &[0.0, 1.0]), &cfg, Reduction::Mean).is_err());
    }

    fn giou(a: [f64; 4], b: [f64; 4]) -> Result<f64> {
        let tape = Tape::new();
        let p = tape.leaf(t(&[1, 4], &a));
        let v = giou_loss(&tape, p, &t(&[1, 4], &b))?;
        tape.item(v)
    }

    #[test]
    fn giou_cases() {
        assert!(giou([0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0]).unwrap().abs() < 1e-15);
        assert!((giou([0.0, 0.0, 1.0, 1.0], [0.0, 1.0, 1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        // Far apart boxes approach the upper bound of 2.
        let far = giou([0.0, 0.0, 1.0, 1.0], [100.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(far > 1.9 && far <= 2.0);
        assert!(matches!(giou([0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 1.0, 1.0]), Err(Error::Degenerate(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut b = || [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0)];
            let (x, y) = (b(), b());
            let v = giou(x, y).unwrap();
            assert!((0.0..=2.0).contains(&v));
            assert!((v - (1.0 - crate::geometry::box_giou(&x, &y).unwrap())).abs() < 1e-12);
        }
    }

    #[test]
    fn l1_sums_per_row() {
        let tape = Tape::new();
        let p = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let v = l1_loss(&tape, p, &t(&[2, 2], &[0.0, 0.0, 3.0, 5.0])).unwrap();
        assert_eq!(tape.value(v).data(), &[3.0, 1.0]);
    }

    fn straight(offset: [f64; 3]) -> Vec<f64> {
        (0..4).flat_map(|i| [i as f64 * 3.0 + offset[0], offset[1], offset[2]]).collect()
    }

    #[test]
    fn chamfer_cases() {
        let tape = Tape::new();
        let p = tape.leaf(t(&[1, 4, 3], &straight([0.0; 3])));
        let same = bezier_chamfer_loss(&tape, p, &t(&[1, 4, 3], &straight([0.0; 3])), 11).unwrap();
        assert!(tape.item(same).unwrap().abs() < 1e-12);
        // Samples are 0.9 m apart, so a 1 m shift leaves every point 0.1 m
        // from a neighbour except the end points.
        let shifted = bezier_chamfer_loss(&tape, p, &t(&[1, 4, 3], &straight([0.0, 1.0, 0.0])), 11).unwrap();
        assert!((tape.item(shifted).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chamfer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cp: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let gt = t(&[1, 4, 3], &(0..12).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
        let eval = |cp: &[f64]| {
            let tape = Tape::new();
            let p = tape.leaf(t(&[1, 4, 3], cp).with_requires_grad(true));
            let v = tape.sum(bezier_chamfer_loss(&tape, p, &gt, 11).unwrap()).unwrap();
            (tape.item(v).unwrap(), tape.backward(v).unwrap().get(p))
        };
        let (_, grad) = eval(&cp);
        let h = 1e-6;
        for i in 0..12 {
            let (mut a, mut b) = (cp.clone(), cp.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (eval(&a).0 - eval(&b).0) / (2.0 * h);
            assert!((fd - grad.data()[i]).abs() < 1e-5, "coord {i}: {fd} vs {}", grad.data()[i]);
        }
    }

    fn infonce(shape: [usize; 2], logits: &[f64], gt: &[f64], n_neg: usize) -> f64 {
        let tape = Tape::new();
        let x = tape.leaf(t(&shape, logits));
        let v = infonce_topology_loss(&tape, x, &t(&shape, gt), n_neg).unwrap();
        tape.item(v).unwrap()
    }

    #[test]
    fn infonce_single_pair_is_log_two() {
        assert!((infonce([1, 2], &[0.0, 0.0], &[1.0, 0.0], 3) - 2f64.ln()).abs() < 1e-9);
        assert!((infonce([2, 1], &[0.0, 0.0], &[1.0, 0.0], 3) - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn infonce_fixtures() {
        assert_eq!(infonce([2, 2], &[1.0, 2.0, 3.0, 4.0], &[0.0; 4], 3), 0.0);
        let v = infonce([2, 2], &[5.0, -5.0, -5.0, 5.0], &[1.0, 0.0, 0.0, 1.0], 3);
        assert!((v - (-10f64).exp().ln_1p()).abs() < 1e-15);
        assert!((v - 4.54e-5).abs() < 1e-7);
        // Large gaps stay finite.
        assert!(infonce([1, 2], &[-800.0, 800.0], &[1.0, 0.0], 3).is_finite());
    }

    #[test]
    fn infonce_with_one_positive_is_softmax_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let n = rng.gen_range(2..8);
            let pos = rng.gen_range(0..n);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let gt: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i == pos))).collect();
            // Every negative is kept when n_neg covers the line.
            let got = infonce([1, n], &logits, &gt, n);
            let denom: f64 = logits.iter().map(|v| v.exp()).sum();
            let want = -(logits[pos].exp() / denom).ln();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn infonce_mines_hardest_negatives() {
        // One positive, negatives 3 > 1 > -2 > -9 with two kept.
        let logits = [0.0, -2.0, 3.0, -9.0, 1.0];
        let got = infonce([1, 5], &logits, &[1.0, 0.0, 0.0, 0.0, 0.0], 2);
        assert!((got - (3f64.exp() + 1f64.exp()).ln_1p()).abs() < 1e-12);
    }

    #[test]
    fn infonce_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let logits: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let gt: Vec<f64> = (0..12).map(|_| f64::from(u8::from(rng.gen_bool(0.3)))).collect();
            let base = infonce([3, 4], &logits, &gt, 3);
            assert!(base >= 0.0);
            for i in 0..12 {
                let mut up = logits.clone();
                up[i] += 0.5;
                let v = infonce([3, 4], &up, &gt, 3);
                if gt[i] == 1.0 {
                    let has_neg = |line: &[usize]| line.iter().any(|&k| gt[k] == 0.0);
                    let (r, c) = (i / 4, i % 4);
                    let row: Vec<usize> = (0..4).map(|k| r * 4 + k).collect();
                    let col: Vec<usize> = (0..3).map(|k| k * 4 + c).collect();
                    if has_neg(&row) || has_neg(&col) {
                        assert!(v < base, "positive {i}");
                    }
                } else {
                    assert!(v >= base - 1e-15, "negative {i}");
                }
            }
        }
    }
}
