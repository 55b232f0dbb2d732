use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BevExtent, InputSpec};

/// Grid resolutions and the noise added on top of the rasterized signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterConfig {
    pub bev_height: usize,
    pub bev_width: usize,
    pub fv_height: usize,
    pub fv_width: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            bev_height: 32,
            bev_width: 64,
            fv_height: 24,
            fv_width: 48,
            noise: 0.05,
        }
    }
}

/// Distribution of camera poses; ranges are `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub height: [f64; 2],
    /// Downward pitch in radians.
    pub pitch: [f64; 2],
    pub focal: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            height: [1.4, 1.8],
            pitch: [0.0, 0.04],
            focal: 240.0,
            image_width: 480,
            image_height: 240,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Lanes travelling along +x.
    pub forward_lanes: [usize; 2],
    /// Lanes travelling along -x.
    pub backward_lanes: [usize; 2],
    pub intersection_probability: f64,
    /// Magnitude of the road centerline curvature in 1/m.
    pub curvature: [f64; 2],
    /// Maximum number of splits of a corridor lane into successive segments.
    pub max_breakpoints: usize,
    /// Probability that parallel lanes break at nearly the same place,
    /// creating close but unconnected endpoint pairs.
    pub hard_negative_probability: f64,
    pub traffic_elements: [usize; 2],
    pub lane_width: f64,
    /// Maximum road grade in either direction.
    pub max_slope: f64,
    /// Upper bound on lanes per scene (the lane query budget).
    pub max_lanes: usize,
    pub bev_extent: BevExtent,
    pub raster: RasterConfig,
    pub camera: CameraConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            forward_lanes: [1, 2],
            backward_lanes: [0, 2],
            intersection_probability: 0.5,
            curvature: [0.0, 0.004],
            max_breakpoints: 2,
            hard_negative_probability: 0.5,
            traffic_elements: [1, 4],
            lane_width: 3.5,
            max_slope: 0.008,
            max_lanes: 20,
            bev_extent: BevExtent::default(),
            raster: RasterConfig::default(),
            camera: CameraConfig::default(),
        }
    }
}

/// Margin kept between authored lanes and the BEV border.
pub(crate) const BORDER: f64 = 0.5;
/// Clearance between the stop line and the crossing road.
pub(crate) const JUNCTION_MARGIN: f64 = 1.0;

impl SceneConfig {
    /// Input shapes of the grids rasterized from these scenes.
    pub fn input_spec(&self) -> InputSpec {
        InputSpec {
            bev_channels: super::BEV_CHANNELS,
            fv_channels: super::FV_CHANNELS,
            bev_extent: self.bev_extent,
        }
    }

    /// Most lanes a scene can contain under this configuration.
    pub fn max_scene_lanes(&self) -> usize {
        let (f, b) = (self.forward_lanes[1], self.backward_lanes[1]);
        let corridor = (f + b) * (self.max_breakpoints + 1);
        if self.intersection_probability > 0.0 {
            corridor.max(3 * f + 3 * b + 6)
        } else {
            corridor
        }
    }

    /// Largest lateral drift of the curved road centerline.
    pub(crate) fn max_drift(&self) -> f64 {
        let half = (self.bev_extent.x_max - self.bev_extent.x_min) / 2.0;
        self.curvature[1] / 2.0 * half * half
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let range_ok = |r: [usize; 2]| r[0] <= r[1];
        let frange_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !range_ok(self.forward_lanes) || self.forward_lanes[0] == 0 {
            return fail(format!("scene.forward_lanes must be a non-empty range starting at 1 or more, got {:?}", self.forward_lanes));
        }
        if !range_ok(self.backward_lanes) {
            return fail(format!("scene.backward_lanes is an empty range {:?}", self.backward_lanes));
        }
        if !range_ok(self.traffic_elements) {
            return fail(format!("scene.traffic_elements is an empty range {:?}", self.traffic_elements));
        }
        if !frange_ok(self.curvature) || self.curvature[0] < 0.0 {
            return fail(format!("scene.curvature must be a non-negative range, got {:?}", self.curvature));
        }
        for (name, p) in [
            ("intersection_probability", self.intersection_probability),
            ("hard_negative_probability", self.hard_negative_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("scene.{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return fail(format!("scene.lane_width must be positive, got {}", self.lane_width));
        }
        if !(self.max_slope >= 0.0 && self.max_slope.is_finite()) {
            return fail(format!("scene.max_slope must be non-negative, got {}", self.max_slope));
        }
        let r = &self.raster;
        if !(r.noise >= 0.0 && r.noise.is_finite()) {
            return fail(format!("scene.raster.noise must be non-negative, got {}", r.noise));
        }
        if r.bev_height < 2 || r.bev_width < 2 || r.fv_height < 2 || r.fv_width < 2 {
            return fail("scene.raster grid sizes must be at least 2".into());
        }
        let c = &self.camera;
        if !frange_ok(c.height) || c.height[0] <= 0.0 || !frange_ok(c.pitch) || !(c.focal > 0.0) {
            return fail("scene.camera ranges must be non-empty with positive height and focal".into());
        }
        if c.image_width < 2 || c.image_height < 2 {
            return fail("scene.camera image size must be at least 2x2".into());
        }
        self.bev_extent.validate()?;
        self.check_feasible()
    }

    fn check_feasible(&self) -> Result<()> {
        let e = &self.bev_extent;
        let w = self.lane_width;
        let (f, b) = (self.forward_lanes[1] as f64, self.backward_lanes[1] as f64);
        let need_low = f * w + self.max_drift() + BORDER;
        let need_high = b * w + self.max_drift() + BORDER;
        if -need_low < e.y_min || need_high > e.y_max {
            return Err(Error::Infeasible(format!(
                "{} + {} lanes of width {w} m do not fit laterally in [{}, {}]",
                self.forward_lanes[1], self.backward_lanes[1], e.y_min, e.y_max
            )));
        }
        if self.intersection_probability > 0.0 {
            // The crossing road needs at least a short approach on each side.
            let low = f * w + JUNCTION_MARGIN;
            let high = b.max(1.0) * w + JUNCTION_MARGIN;
            if e.y_min + BORDER > -low - 1.0 || e.y_max - BORDER < high + 1.0 {
                return Err(Error::Infeasible(
                    "junction crossing road has no room between the main road and the BEV border".into(),
                ));
            }
            let span = e.x_max - e.x_min;
            if span < 4.0 * (w + JUNCTION_MARGIN) + 8.0 {
                return Err(Error::Infeasible(format!("BEV length {span} m is too short for a junction")));
            }
        }
        if self.max_scene_lanes() > self.max_lanes {
            return Err(Error::Infeasible(format!(
                "configuration can produce {} lanes, more than max_lanes = {}",
                self.max_scene_lanes(),
                self.max_lanes
            )));
        }
        Ok(())
    }
}
