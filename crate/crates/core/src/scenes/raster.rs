use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{RasterConfig, Scene};
use crate::error::{Error, Result};
use crate::model::{FeatureGrid, Frame, GridExtent};
use crate::numerics::Tensor;

/// Occupancy, heading sin, heading cos, junction proximity, endpoint
/// proximity.
pub const BEV_CHANNELS: usize = 5;
/// One box channel per traffic-element class, then projected lanes.
pub const FV_CHANNELS: usize = 4;

const TE_CLASSES: usize = 3;
const SAMPLES: usize = 41;
/// Half-width of the BEV stroke profile in meters.
const STROKE: f64 = 1.0;
/// Half-width of the FV stroke profile in pixels.
const FV_STROKE: f64 = 8.0;
const JUNCTION_SIGMA: f64 = 2.5;
const ENDPOINT_SIGMA: f64 = 0.75;
const NOISE_SALT: u64 = 0x6e6f_6973_6520_6772;

/// Distance from `p` to segment `ab`.
fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

fn gaussian(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Renders the BEV and FV feature grids of a scene, adding seeded noise.
pub fn rasterize(scene: &Scene, cfg: &RasterConfig) -> Result<(FeatureGrid, FeatureGrid)> {
    scene.validate()?;
    if scene.traffic_elements.iter().any(|t| t.class_id as usize >= TE_CLASSES) {
        return Err(Error::invalid(format!("traffic element class must be below {TE_CLASSES}")));
    }
    let mut bev = bev_signal(scene, cfg)?;
    let mut fv = fv_signal(scene, cfg)?;
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ NOISE_SALT);
        for v in bev.values.data_mut().iter_mut().chain(fv.values.data_mut()) {
            *v += normal.sample(&mut rng);
        }
    }
    Ok((bev, fv))
}

fn bev_signal(scene: &Scene, cfg: &RasterConfig) -> Result<FeatureGrid> {
    let (h, w) = (cfg.bev_height, cfg.bev_width);
    let mut grid = FeatureGrid::new(
        Tensor::zeros(&[h, w, BEV_CHANNELS]),
        scene.bev_extent.grid_extent(),
        Frame::Bev,
    )?;
    let polylines = scene
        .lanes
        .iter()
        .map(|l| l.sample(SAMPLES).map(|ps| ps.iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let endpoints: Vec<[f64; 2]> = scene
        .lanes
        .iter()
        .flat_map(|l| [l.start(), l.end()])
        .map(|p| [p[0], p[1]])
        .collect();
    let mut junctions = Vec::new();
    for i in 0..scene.num_lanes() {
        if scene.successors(i).len() > 1 {
            let p = scene.lanes[i].end();
            junctions.push([p[0], p[1]]);
        }
        if scene.predecessors(i).len() > 1 {
            let p = scene.lanes[i].start();
            junctions.push([p[0], p[1]]);
        }
    }
    let mut out = vec![0.0f64; h * w * BEV_CHANNELS];
    for r in 0..h {
        for c in 0..w {
            let p = grid.cell_center(r, c);
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for line in &polylines {
                for seg in line.windows(2) {
                    let d = segment_distance(p, seg[0], seg[1]);
                    if d < best.0 {
                        best = (d, seg[1][1] - seg[0][1], seg[1][0] - seg[0][0]);
                    }
                }
            }
            let cell = &mut out[(r * w + c) * BEV_CHANNELS..(r * w + c + 1) * BEV_CHANNELS];
            let occ = (1.0 - best.0 / STROKE).max(0.0);
            if occ > 0.0 {
                let heading = best.1.atan2(best.2);
                cell[0] = occ;
                cell[1] = occ * heading.sin();
                cell[2] = occ * heading.cos();
            }
            let near = |pts: &[[f64; 2]], sigma: f64| {
                pts.iter()
                    .map(|q| gaussian((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2), sigma))
                    .fold(0.0, f64::max)
            };
            cell[3] = near(&junctions, JUNCTION_SIGMA);
            cell[4] = near(&endpoints, ENDPOINT_SIGMA);
        }
    }
    grid.values = Tensor::new(vec![h, w, BEV_CHANNELS], out)?;
    Ok(grid)
}

/// Length of the overlap of two intervals.
fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

fn fv_signal(scene: &Scene, cfg: &RasterConfig) -> Result<FeatureGrid> {
    let (h, w) = (cfg.fv_height, cfg.fv_width);
    let (iw, ih) = scene.camera.image_size;
    let extent = GridExtent {
        x_min: 0.0,
        x_max: f64::from(iw),
        y_min: 0.0,
        y_max: f64::from(ih),
    };
    let mut grid = FeatureGrid::new(Tensor::zeros(&[h, w, FV_CHANNELS]), extent, Frame::Fv)?;
    let (cw, ch) = (f64::from(iw) / w as f64, f64::from(ih) / h as f64);
    let mut strokes: Vec<[[f64; 2]; 2]> = Vec::new();
    for lane in &scene.lanes {
        let pts = lane.sample(SAMPLES)?;
        let (px, _) = scene.camera.project(&pts);
        let depth_ok: Vec<bool> = pts.iter().map(|p| scene.camera.to_camera(p)[2] > 1.0).collect();
        for i in 1..pts.len() {
            if depth_ok[i - 1] && depth_ok[i] {
                strokes.push([px[i - 1], px[i]]);
            }
        }
    }
    let mut out = vec![0.0f64; h * w * FV_CHANNELS];
    for r in 0..h {
        for c in 0..w {
            let cell = &mut out[(r * w + c) * FV_CHANNELS..(r * w + c + 1) * FV_CHANNELS];
            let xs = (c as f64 * cw, (c + 1) as f64 * cw);
            let ys = (r as f64 * ch, (r + 1) as f64 * ch);
            for te in &scene.traffic_elements {
                let b = te.bbox;
                let cover = overlap(xs, (b[0] - b[2] / 2.0, b[0] + b[2] / 2.0))
                    * overlap(ys, (b[1] - b[3] / 2.0, b[1] + b[3] / 2.0))
                    / (cw * ch);
                let k = te.class_id as usize;
                cell[k] = cell[k].max(cover);
            }
            let p = grid.cell_center(r, c);
            let d = strokes
                .iter()
                .map(|s| segment_distance(p, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            cell[TE_CLASSES] = (1.0 - d / FV_STROKE).max(0.0);
        }
    }
    grid.values = Tensor::new(vec![h, w, FV_CHANNELS], out)?;
    Ok(grid)
}
