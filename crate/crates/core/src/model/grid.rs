use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Bev,
    Fv,
}

/// Rectangle covered by a grid. Columns run along x, rows along y.
/// For BEV grids the units are meters; for FV grids, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridExtent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GridExtent {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min;
        if !ok {
            return Err(Error::invalid(format!("degenerate grid extent {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

/// H×W×C feature map anchored in a world or image frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub values: Tensor,
    pub extent: GridExtent,
    pub frame: Frame,
}

impl FeatureGrid {
    pub fn new(values: Tensor, extent: GridExtent, frame: Frame) -> Result<Self> {
        extent.validate()?;
        match values.shape() {
            [h, w, _] if *h >= 2 && *w >= 2 => {}
            s => return Err(Error::shape("feature_grid", format!("{s:?}, expected H,W >= 2"))),
        }
        Ok(Self { values, extent, frame })
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    /// Continuous `(row, col)` grid coordinates of frame point `(x, y)`;
    /// integer coordinates are cell centers.
    pub fn to_grid(&self, x: f64, y: f64) -> [f64; 2] {
        let e = &self.extent;
        [
            (y - e.y_min) / (e.y_max - e.y_min) * self.height() as f64 - 0.5,
            (x - e.x_min) / (e.x_max - e.x_min) * self.width() as f64 - 0.5,
        ]
    }

    /// Frame coordinates of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let e = &self.extent;
        [
            e.x_min + (col as f64 + 0.5) * (e.x_max - e.x_min) / self.width() as f64,
            e.y_min + (row as f64 + 0.5) * (e.y_max - e.y_min) / self.height() as f64,
        ]
    }

    /// Tape version of [`Self::to_grid`] for `(..., 2)` `(x, y)` inputs.
    pub fn to_grid_var(&self, tape: &Tape, xy: Var) -> Result<Var> {
        let e = &self.extent;
        let sx = self.width() as f64 / (e.x_max - e.x_min);
        let sy = self.height() as f64 / (e.y_max - e.y_min);
        let shape = tape.shape(xy);
        if shape.last() != Some(&2) {
            return Err(Error::shape("to_grid", format!("{shape:?}, expected (..., 2)")));
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = tape.reshape(xy, &[rows, 2])?;
        let m = tape.constant(Tensor::new(vec![2, 2], vec![0.0, sx, sy, 0.0])?);
        let off = tape.constant(Tensor::new(vec![2], vec![-e.y_min * sy - 0.5, -e.x_min * sx - 0.5])?);
        let g = tape.add(tape.matmul(flat, m)?, off)?;
        tape.reshape(g, &shape)
    }
}
