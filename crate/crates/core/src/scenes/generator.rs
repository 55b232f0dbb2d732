use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{BORDER, JUNCTION_MARGIN};
use super::{Scene, SceneConfig, TrafficElement};
use crate::error::{Error, Result};
use crate::geometry::{BezierLane, CameraModel, Point3};

/// Seed of scene `index` in a dataset generated from `base_seed`.
pub fn scene_seed(base_seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` scenes generated in parallel; scene `i` uses [`scene_seed`].
pub fn generate_dataset(cfg: &SceneConfig, base_seed: u64, count: usize) -> Result<Vec<Scene>> {
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut s = generate_scene(cfg, scene_seed(base_seed, i))?;
            s.scene_id = format!("scene_{i:05}");
            Ok(s)
        })
        .collect()
}

/// Near-planar ground `z = c + gx x + gy y`.
#[derive(Debug, Clone, Copy)]
struct Ground {
    c: f64,
    gx: f64,
    gy: f64,
}

impl Ground {
    fn lift(&self, x: f64, y: f64) -> Point3 {
        [x, y, self.c + self.gx * x + self.gy * y]
    }
}

/// Scene under construction.
struct Builder {
    ground: Ground,
    lanes: Vec<BezierLane>,
    edges: Vec<(usize, usize)>,
}

impl Builder {
    /// Cubic with Hermite end tangents `t0, t1` (derivatives with respect to
    /// the curve parameter), lifted onto the ground plane. Exact for any
    /// planar polynomial path of degree three or less.
    fn hermite(&mut self, p0: [f64; 2], t0: [f64; 2], p3: [f64; 2], t3: [f64; 2]) -> Result<usize> {
        let p1 = [p0[0] + t0[0] / 3.0, p0[1] + t0[1] / 3.0];
        let p2 = [p3[0] - t3[0] / 3.0, p3[1] - t3[1] / 3.0];
        let cps = [p0, p1, p2, p3].map(|p| self.ground.lift(p[0], p[1]));
        self.lanes.push(BezierLane::from_points(cps)?);
        Ok(self.lanes.len() - 1)
    }

    fn straight(&mut self, a: [f64; 2], b: [f64; 2]) -> Result<usize> {
        let d = [b[0] - a[0], b[1] - a[1]];
        self.hermite(a, d, b, d)
    }

    fn connect(&mut self, from: usize, to: usize) {
        self.edges.push((from, to));
    }
}

/// Road whose centerline follows `y = k/2 (x - x0)^2`.
#[derive(Debug, Clone, Copy)]
struct Corridor {
    kappa: f64,
    x0: f64,
}

impl Corridor {
    fn point(&self, x: f64, offset: f64) -> [f64; 2] {
        [x, self.kappa / 2.0 * (x - self.x0).powi(2) + offset]
    }

    fn slope(&self, x: f64) -> f64 {
        self.kappa * (x - self.x0)
    }

    /// Lane at lateral `offset` running from `xa` to `xb` (either order).
    fn segment(&self, b: &mut Builder, xa: f64, xb: f64, offset: f64) -> Result<usize> {
        let dx = xb - xa;
        b.hermite(
            self.point(xa, offset),
            [dx, self.slope(xa) * dx],
            self.point(xb, offset),
            [dx, self.slope(xb) * dx],
        )
    }
}

/// Candidate traffic element before projection.
struct Placement {
    class_id: u32,
    center: Point3,
    size: [f64; 2],
    governs: Vec<usize>,
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

fn uniform_count(rng: &mut impl Rng, r: [usize; 2]) -> usize {
    rng.gen_range(r[0]..=r[1])
}

/// Sorted breakpoints in `(lo, hi)` with at least `gap` spacing from each
/// other and the ends.
fn breakpoints(rng: &mut impl Rng, count: usize, lo: f64, hi: f64, gap: f64) -> Vec<f64> {
    if count == 0 || hi - lo <= 2.0 * gap {
        return Vec::new();
    }
    for _ in 0..32 {
        let mut xs: Vec<f64> = (0..count).map(|_| rng.gen_range(lo + gap..hi - gap)).collect();
        xs.sort_by(f64::total_cmp);
        if xs.windows(2).all(|w| w[1] - w[0] >= gap) {
            return xs;
        }
    }
    Vec::new()
}

/// Deterministic scene for `seed`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = cfg.bev_extent;
    let n_fwd = uniform_count(&mut rng, cfg.forward_lanes);
    let n_bwd = uniform_count(&mut rng, cfg.backward_lanes);
    let ground = Ground {
        c: rng.gen_range(-0.1..=0.1),
        gx: rng.gen_range(-cfg.max_slope..=cfg.max_slope),
        gy: rng.gen_range(-cfg.max_slope..=cfg.max_slope),
    };
    let cam = &cfg.camera;
    let height = uniform(&mut rng, cam.height);
    let pitch = uniform(&mut rng, cam.pitch);
    let camera = CameraModel::forward_facing(
        raise(ground.lift(0.0, 0.0), height),
        pitch,
        cam.focal,
        cam.focal,
        (cam.image_width, cam.image_height),
    )?;
    let junction = rng.gen_bool(cfg.intersection_probability);
    let mut b = Builder {
        ground,
        lanes: Vec::new(),
        edges: Vec::new(),
    };
    let placements = if junction {
        junction_layout(cfg, &mut rng, &mut b, n_fwd, n_bwd)?
    } else {
        corridor_layout(cfg, &mut rng, &mut b, n_fwd, n_bwd)?
    };
    let n = b.lanes.len();
    if n > cfg.max_lanes {
        return Err(Error::Infeasible(format!("scene has {n} lanes, more than max_lanes = {}", cfg.max_lanes)));
    }
    for lane in &b.lanes {
        if lane.control_points.iter().any(|p| !e.contains(p)) {
            return Err(Error::Infeasible("authored lane leaves the BEV extent".into()));
        }
    }
    let mut adj_l2l = vec![vec![0u8; n]; n];
    for &(i, j) in &b.edges {
        adj_l2l[i][j] = 1;
    }

    let wanted = uniform_count(&mut rng, cfg.traffic_elements);
    let mut order: Vec<usize> = (0..placements.len()).collect();
    order.shuffle(&mut rng);
    let mut chosen: Vec<(usize, TrafficElement)> = Vec::new();
    for idx in order {
        if chosen.len() == wanted {
            break;
        }
        if let Some(bbox) = project_box(&camera, &placements[idx]) {
            chosen.push((
                idx,
                TrafficElement {
                    bbox,
                    class_id: placements[idx].class_id,
                },
            ));
        }
    }
    chosen.sort_by_key(|(idx, _)| *idx);
    let mut adj_l2t = vec![vec![0u8; chosen.len()]; n];
    for (t, (idx, _)) in chosen.iter().enumerate() {
        for &lane in &placements[*idx].governs {
            adj_l2t[lane][t] = 1;
        }
    }
    let scene = Scene {
        scene_id: format!("seed_{seed}"),
        seed,
        lanes: b.lanes,
        traffic_elements: chosen.into_iter().map(|(_, te)| te).collect(),
        adj_l2l,
        adj_l2t,
        camera,
        bev_extent: e,
    };
    scene.validate()?;
    Ok(scene)
}

fn corridor_layout(
    cfg: &SceneConfig,
    rng: &mut impl Rng,
    b: &mut Builder,
    n_fwd: usize,
    n_bwd: usize,
) -> Result<Vec<Placement>> {
    let e = cfg.bev_extent;
    let w = cfg.lane_width;
    let kappa = uniform(rng, cfg.curvature) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let road = Corridor {
        kappa,
        x0: (e.x_min + e.x_max) / 2.0,
    };
    let (x_lo, x_hi) = (e.x_min + BORDER, e.x_max - BORDER);
    let gap = 4.0;
    let aligned = rng.gen_bool(cfg.hard_negative_probability);
    let shared = {
        let k = rng.gen_range(0..=cfg.max_breakpoints);
        breakpoints(rng, k.max(1).min(cfg.max_breakpoints), x_lo, x_hi, gap)
    };
    let mut chains: Vec<(f64, Vec<(usize, f64, f64)>)> = Vec::new();
    for (count, sign) in [(n_fwd, -1.0), (n_bwd, 1.0)] {
        for i in 0..count {
            let offset = sign * (i as f64 + 0.5) * w;
            let cuts = if aligned {
                shared.iter().map(|x| x + rng.gen_range(-0.3..=0.3)).collect()
            } else {
                let k = rng.gen_range(0..=cfg.max_breakpoints);
                breakpoints(rng, k, x_lo, x_hi, gap)
            };
            let mut xs = vec![x_lo];
            xs.extend(cuts);
            xs.push(x_hi);
            if sign > 0.0 {
                xs.reverse();
            }
            let mut chain = Vec::new();
            for pair in xs.windows(2) {
                let id = road.segment(b, pair[0], pair[1], offset)?;
                chain.push((id, pair[0].min(pair[1]), pair[0].max(pair[1])));
            }
            for link in chain.windows(2) {
                b.connect(link[0].0, link[1].0);
            }
            chains.push((offset, chain));
        }
    }

    let covering = |side: f64, x: f64| -> Vec<usize> {
        chains
            .iter()
            .filter(|(o, _)| o.signum() == side)
            .filter_map(|(_, c)| c.iter().find(|(_, lo, hi)| (*lo..=*hi).contains(&x)).map(|s| s.0))
            .collect()
    };
    let mut out = Vec::new();
    let right_edge = -(n_fwd as f64) * w - 1.5;
    let left_edge = n_bwd as f64 * w + 1.5;
    for _ in 0..2 {
        let x = rng.gen_range(6.0..(e.x_max - 4.0).max(7.0));
        let [_, y] = road.point(x, right_edge);
        out.push(Placement {
            class_id: 2,
            center: raise(b.ground.lift(x, y), 2.5),
            size: [1.2, 1.2],
            governs: covering(-1.0, x),
        });
    }
    {
        let x = rng.gen_range(8.0..(e.x_max - 4.0).max(9.0));
        let [_, y] = road.point(x, -(n_fwd as f64) * w / 2.0);
        out.push(Placement {
            class_id: 0,
            center: raise(b.ground.lift(x, y), 4.5),
            size: [1.0, 2.4],
            governs: covering(-1.0, x),
        });
    }
    if n_bwd > 0 {
        let x = rng.gen_range(6.0..(e.x_max - 4.0).max(7.0));
        let [_, y] = road.point(x, left_edge);
        out.push(Placement {
            class_id: 1,
            center: raise(b.ground.lift(x, y), 2.5),
            size: [1.2, 1.2],
            governs: covering(1.0, x),
        });
    }
    Ok(out)
}

fn raise(mut p: Point3, dz: f64) -> Point3 {
    p[2] += dz;
    p
}

fn junction_layout(
    cfg: &SceneConfig,
    rng: &mut impl Rng,
    b: &mut Builder,
    n_fwd: usize,
    n_bwd: usize,
) -> Result<Vec<Placement>> {
    let e = cfg.bev_extent;
    let w = cfg.lane_width;
    let span = e.x_max - e.x_min;
    let xj = rng.gen_range(e.x_min + 0.35 * span..=e.x_min + 0.6 * span);
    let a = w + JUNCTION_MARGIN;
    let y_low = -(n_fwd as f64) * w - JUNCTION_MARGIN;
    let y_high = (n_bwd.max(1) as f64) * w + JUNCTION_MARGIN;
    let (x_lo, x_hi) = (e.x_min + BORDER, e.x_max - BORDER);
    let (y_lo, y_hi) = (e.y_min + BORDER, e.y_max - BORDER);
    let (stop, exit) = (xj - a, xj + a);
    let x_left = xj + w / 2.0;
    let x_right = xj - w / 2.0;

    let mut incoming = Vec::new();
    for i in 0..n_fwd {
        let y = -(i as f64 + 0.5) * w;
        let inc = b.straight([x_lo, y], [stop, y])?;
        let through = b.straight([stop, y], [exit, y])?;
        let out = b.straight([exit, y], [x_hi, y])?;
        b.connect(inc, through);
        b.connect(through, out);
        incoming.push((inc, through, y));
    }
    let left_out = b.straight([x_left, y_high], [x_left, y_hi])?;
    let right_out = b.straight([x_right, y_low], [x_right, y_lo])?;
    let (inc0, _, y0) = incoming[0];
    let dx = x_left - stop;
    let dy = y_high - y0;
    let left_turn = b.hermite([stop, y0], [1.6 * dx, 0.0], [x_left, y_high], [0.0, 1.6 * dy])?;
    b.connect(inc0, left_turn);
    b.connect(left_turn, left_out);
    let (inc_r, _, y_r) = incoming[n_fwd - 1];
    let dx = x_right - stop;
    let dy = y_low - y_r;
    let right_turn = b.hermite([stop, y_r], [1.6 * dx, 0.0], [x_right, y_low], [0.0, 1.6 * dy])?;
    b.connect(inc_r, right_turn);
    b.connect(right_turn, right_out);
    // Crossing traffic merging into the right-turn exit.
    let cross_in = b.straight([x_right, y_hi], [x_right, y_high])?;
    let cross = b.straight([x_right, y_high], [x_right, y_low])?;
    b.connect(cross_in, cross);
    b.connect(cross, right_out);

    let mut backward_in = Vec::new();
    for i in 0..n_bwd {
        let y = (i as f64 + 0.5) * w;
        let inc = b.straight([x_hi, y], [exit, y])?;
        let through = b.straight([exit, y], [stop, y])?;
        let out = b.straight([stop, y], [x_lo, y])?;
        b.connect(inc, through);
        b.connect(through, out);
        backward_in.push(inc);
    }

    let mut out = Vec::new();
    for &(inc, through, y) in &incoming {
        let mut governs = vec![inc, through];
        if inc == inc0 {
            governs.push(left_turn);
        }
        if inc == inc_r {
            governs.push(right_turn);
        }
        out.push(Placement {
            class_id: 0,
            center: raise(b.ground.lift(exit + 1.0, y), 4.5),
            size: [1.0, 2.4],
            governs,
        });
    }
    // Turn sign on the right shoulder that governs the leftmost lane.
    out.push(Placement {
        class_id: 1,
        center: raise(b.ground.lift(stop - 1.0, y_low - 0.5), 2.5),
        size: [1.2, 1.2],
        governs: vec![inc0, left_turn],
    });
    if n_bwd > 0 {
        out.push(Placement {
            class_id: 2,
            center: raise(b.ground.lift(exit + 1.0, y_high + 0.5), 2.5),
            size: [1.2, 1.2],
            governs: backward_in,
        });
    }
    Ok(out)
}

/// Image-space box of an upright rectangle facing the camera, clipped to
/// the image; `None` when mostly out of view.
fn project_box(camera: &CameraModel, p: &Placement) -> Option<[f64; 4]> {
    let [hw, hh] = [p.size[0] / 2.0, p.size[1] / 2.0];
    let c = p.center;
    let corners: Vec<Point3> = [(-hw, -hh), (-hw, hh), (hw, -hh), (hw, hh)]
        .iter()
        .map(|(dy, dz)| [c[0], c[1] + dy, c[2] + dz])
        .collect();
    let mut u = (f64::INFINITY, f64::NEG_INFINITY);
    let mut v = (f64::INFINITY, f64::NEG_INFINITY);
    for q in &corners {
        let cam = camera.to_camera(q);
        if cam[2] <= 1.0 {
            return None;
        }
        let px = [
            camera.fx() * cam[0] / cam[2] + camera.cx(),
            camera.fy() * cam[1] / cam[2] + camera.cy(),
        ];
        u = (u.0.min(px[0]), u.1.max(px[0]));
        v = (v.0.min(px[1]), v.1.max(px[1]));
    }
    let full = (u.1 - u.0) * (v.1 - v.0);
    let (w_img, h_img) = (f64::from(camera.image_size.0), f64::from(camera.image_size.1));
    let cu = (u.0.max(0.0), u.1.min(w_img));
    let cv = (v.0.max(0.0), v.1.min(h_img));
    let (bw, bh) = (cu.1 - cu.0, cv.1 - cv.0);
    if bw < 4.0 || bh < 4.0 || bw * bh < 0.5 * full {
        return None;
    }
    Some([(cu.0 + cu.1) / 2.0, (cv.0 + cv.1) / 2.0, bw, bh])
}
