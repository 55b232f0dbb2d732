//! Synthetic road scenes: lane graphs, traffic elements, ground-truth
//! topology, and the rasterized grids the model reads.

mod config;
mod generator;
mod io;
mod raster;

pub use config::{CameraConfig, RasterConfig, SceneConfig};
pub use generator::{generate_dataset, generate_scene, scene_seed};
pub use io::{
    load_dataset, load_scene, read_manifest, save_dataset, save_scene, scene_from_json, scene_to_json, Manifest,
    ManifestEntry, MANIFEST_FILE, SCENE_VERSION,
};
pub use raster::{rasterize, BEV_CHANNELS, FV_CHANNELS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BezierLane, CameraModel};
use crate::model::BevExtent;

/// Maximum end-to-start gap between connected lanes.
pub const CONNECT_TOLERANCE: f64 = 0.2;

/// Traffic light or sign as it appears in the front view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficElement {
    /// `(cx, cy, w, h)` in pixels.
    pub bbox: [f64; 4],
    pub class_id: u32,
}

impl TrafficElement {
    /// Box scaled to `[0, 1]` image coordinates.
    pub fn normalized(&self, image_size: (u32, u32)) -> [f64; 4] {
        let (w, h) = (f64::from(image_size.0), f64::from(image_size.1));
        [self.bbox[0] / w, self.bbox[1] / h, self.bbox[2] / w, self.bbox[3] / h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub scene_id: String,
    pub seed: u64,
    pub lanes: Vec<BezierLane>,
    pub traffic_elements: Vec<TrafficElement>,
    /// `adj_l2l[i][j] = 1` iff lane `j` continues from the end of lane `i`.
    pub adj_l2l: Vec<Vec<u8>>,
    /// `adj_l2t[i][t] = 1` iff element `t` governs lane `i`.
    pub adj_l2t: Vec<Vec<u8>>,
    pub camera: CameraModel,
    pub bev_extent: BevExtent,
}

impl Scene {
    /// Scene with no lanes or traffic elements.
    pub fn empty(scene_id: impl Into<String>, seed: u64, camera: CameraModel, bev_extent: BevExtent) -> Self {
        Self {
            scene_id: scene_id.into(),
            seed,
            lanes: Vec::new(),
            traffic_elements: Vec::new(),
            adj_l2l: Vec::new(),
            adj_l2t: Vec::new(),
            camera,
            bev_extent,
        }
    }

    pub fn num_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn num_tes(&self) -> usize {
        self.traffic_elements.len()
    }

    /// Successor indices of lane `i`.
    pub fn successors(&self, i: usize) -> Vec<usize> {
        self.adj_l2l[i].iter().enumerate().filter(|(_, &a)| a == 1).map(|(j, _)| j).collect()
    }

    /// Predecessor indices of lane `j`.
    pub fn predecessors(&self, j: usize) -> Vec<usize> {
        (0..self.lanes.len()).filter(|&i| self.adj_l2l[i][j] == 1).collect()
    }

    /// Checks every structural and geometric invariant of a scene.
    pub fn validate(&self) -> Result<()> {
        let n = self.lanes.len();
        let m = self.traffic_elements.len();
        self.bev_extent.validate()?;
        self.camera.validate()?;
        for (i, lane) in self.lanes.iter().enumerate() {
            lane.validate().map_err(|e| Error::invalid(format!("lane {i}: {e}")))?;
        }
        for (t, te) in self.traffic_elements.iter().enumerate() {
            if te.bbox.iter().any(|v| !v.is_finite()) || te.bbox[2] <= 0.0 || te.bbox[3] <= 0.0 {
                return Err(Error::invalid(format!("traffic element {t}: degenerate box {:?}", te.bbox)));
            }
        }
        check_matrix("adj_l2l", &self.adj_l2l, n, n)?;
        check_matrix("adj_l2t", &self.adj_l2t, n, m)?;
        for i in 0..n {
            if self.adj_l2l[i][i] != 0 {
                return Err(Error::invalid(format!("adj_l2l: lane {i} is its own successor")));
            }
            for j in 0..n {
                if self.adj_l2l[i][j] == 1 {
                    let gap = dist3(&self.lanes[i].end(), &self.lanes[j].start());
                    if gap >= CONNECT_TOLERANCE {
                        return Err(Error::invalid(format!(
                            "adj_l2l: lanes {i}->{j} connected but end-to-start gap is {gap:.3} m"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_matrix(name: &str, a: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    if a.len() != rows || a.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid(format!("{name}: expected a {rows}x{cols} matrix")));
    }
    if a.iter().flatten().any(|&v| v > 1) {
        return Err(Error::invalid(format!("{name}: entries must be 0 or 1")));
    }
    Ok(())
}

pub(crate) fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
