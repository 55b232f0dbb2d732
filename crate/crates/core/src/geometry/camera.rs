use serde::{Deserialize, Serialize};

use super::bezier::Point3;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

pub(crate) const MIN_DEPTH: f64 = 0.1;

/// Pinhole camera; world frame is x forward, y left, z up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: [[f64; 3]; 3],
    /// World to camera rotation (camera frame: x right, y down, z forward).
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    /// `(width, height)` in pixels.
    pub image_size: (u32, u32),
}

impl CameraModel {
    pub fn new(
        intrinsics: [[f64; 3]; 3],
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        image_size: (u32, u32),
    ) -> Result<Self> {
        let cam = Self {
            intrinsics,
            rotation,
            translation,
            image_size,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `position` looking along world +x, pitched down by `pitch`
    /// radians, with focal lengths `fx, fy` and the principal point at the
    /// image center.
    pub fn forward_facing(position: Point3, pitch: f64, fx: f64, fy: f64, image_size: (u32, u32)) -> Result<Self> {
        let (s, c) = pitch.sin_cos();
        // Rows are the camera axes expressed in world coordinates.
        let right = [0.0, -1.0, 0.0];
        let down = [-s, 0.0, -c];
        let forward = [c, 0.0, -s];
        let rotation = [right, down, forward];
        let translation = std::array::from_fn(|i| -dot(&rotation[i], &position));
        let intrinsics = [
            [fx, 0.0, f64::from(image_size.0) / 2.0],
            [0.0, fy, f64::from(image_size.1) / 2.0],
            [0.0, 0.0, 1.0],
        ];
        Self::new(intrinsics, rotation, translation, image_size)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .intrinsics
            .iter()
            .chain(&self.rotation)
            .flatten()
            .chain(&self.translation);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite camera parameter"));
        }
        if self.fx() <= 0.0 || self.fy() <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(&r[i], &r[j]) - want).abs() > 1e-9 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        let det = dot(&r[0], &cross(&r[1], &r[2]));
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("camera rotation has determinant -1"));
        }
        Ok(())
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[0][0]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[1][1]
    }

    pub fn cx(&self) -> f64 {
        self.intrinsics[0][2]
    }

    pub fn cy(&self) -> f64 {
        self.intrinsics[1][2]
    }

    pub fn to_camera(&self, p: &Point3) -> Point3 {
        std::array::from_fn(|i| dot(&self.rotation[i], p) + self.translation[i])
    }

    /// Pixel of a camera-frame point (no validity check).
    fn pixel(&self, c: &Point3) -> [f64; 2] {
        let k = &self.intrinsics;
        [
            (k[0][0] * c[0] + k[0][1] * c[1]) / c[2] + k[0][2],
            k[1][1] * c[1] / c[2] + k[1][2],
        ]
    }

    pub fn in_image(&self, px: &[f64; 2]) -> bool {
        px[0] >= 0.0 && px[1] >= 0.0 && px[0] < f64::from(self.image_size.0) && px[1] < f64::from(self.image_size.1)
    }

    /// Projects world points; a point is valid iff its depth exceeds
    /// 0.1 m and its pixel lies inside the image.
    pub fn project(&self, points: &[Point3]) -> (Vec<[f64; 2]>, Vec<bool>) {
        points
            .iter()
            .map(|p| {
                let c = self.to_camera(p);
                if c[2] <= MIN_DEPTH {
                    return ([0.0, 0.0], false);
                }
                let px = self.pixel(&c);
                (px, self.in_image(&px))
            })
            .unzip()
    }

    /// Differentiable projection of `(P,3)` world points to `(P,2)`
    /// pixels. Depth is clamped at the validity threshold so invalid points
    /// stay finite; the mask is computed from values.
    pub fn project_var(&self, tape: &Tape, points: Var) -> Result<(Var, Vec<bool>)> {
        let shape = tape.shape(points);
        if shape.len() != 2 || shape[1] != 3 {
            return Err(Error::shape("project", format!("{shape:?}, expected (P,3)")));
        }
        let p = shape[0];
        let rt = Tensor::new(vec![3, 3], (0..9).map(|i| self.rotation[i % 3][i / 3]).collect())?;
        let cam = tape.matmul(points, tape.constant(rt))?;
        let cam = tape.add(cam, tape.constant(Tensor::new(vec![3], self.translation.to_vec())?))?;
        let xy = tape.slice(cam, 1, 0, 2)?;
        let z = tape.slice(cam, 1, 2, 3)?;
        let zc = tape.maximum(z, tape.scalar(MIN_DEPTH)?)?;
        let k = &self.intrinsics;
        let kt = Tensor::new(vec![2, 2], vec![k[0][0], 0.0, k[0][1], k[1][1]])?;
        let uv = tape.matmul(tape.div(xy, zc)?, tape.constant(kt))?;
        let uv = tape.add(uv, tape.constant(Tensor::new(vec![2], vec![self.cx(), self.cy()])?))?;
        let mask = {
            let zv = tape.value(z);
            let px = tape.value(uv);
            (0..p)
                .map(|i| zv.data()[i] > MIN_DEPTH && self.in_image(&[px.data()[2 * i], px.data()[2 * i + 1]]))
                .collect()
        };
        Ok((uv, mask))
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
