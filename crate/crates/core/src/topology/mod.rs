//! Pairwise relation embeddings and adjacency logits for lane-to-lane and
//! lane-to-traffic-element topology.

mod l2l;
mod l2t;

pub use l2l::L2lHead;
pub use l2t::{L2tHead, Pooling};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationKind {
    L2l,
    L2t,
}

/// Pairwise feature block: `values` is `(N, N, C)` or `(N, M, C)`.
#[derive(Debug, Clone, Copy)]
pub struct RelationEmbedding {
    pub values: Var,
    pub kind: RelationKind,
}

/// `(N, C1)` rows and `(M, C2)` columns to `(N, M, C1 + C2)` where entry
/// `(i, j)` is `[rows_i, cols_j]`.
pub fn broadcast_concat(tape: &Tape, rows: Var, cols: Var) -> Result<Var> {
    let (sr, sc) = (tape.shape(rows), tape.shape(cols));
    let (n, c1, m, c2) = match (sr.as_slice(), sc.as_slice()) {
        ([n, c1], [m, c2]) => (*n, *c1, *m, *c2),
        _ => return Err(Error::shape("broadcast_concat", format!("{sr:?} and {sc:?}"))),
    };
    let r = tape.broadcast_to(tape.reshape(rows, &[n, 1, c1])?, &[n, m, c1])?;
    let c = tape.broadcast_to(tape.reshape(cols, &[1, m, c2])?, &[n, m, c2])?;
    tape.concat(&[r, c], 2)
}

/// Splits `(N,4,3)` control points into BEV `(start, end)` points, `(N,2)`
/// each.
pub(crate) fn endpoints_xy(tape: &Tape, control_points: Var) -> Result<(Var, Var)> {
    let s = tape.shape(control_points);
    let n = match s.as_slice() {
        [n, 4, 3] => *n,
        _ => return Err(Error::shape("endpoints", format!("{s:?}, expected (N,4,3)"))),
    };
    let xy = tape.slice(control_points, 2, 0, 2)?;
    let start = tape.reshape(tape.slice(xy, 1, 0, 1)?, &[n, 2])?;
    let end = tape.reshape(tape.slice(xy, 1, 3, 4)?, &[n, 2])?;
    Ok((start, end))
}
