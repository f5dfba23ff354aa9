//! Foreground-disruption objective and synthetic scenes.
//!
//! The score of a cubemap is the fraction of boundary-band pixels that are
//! foreground, averaged over the four lateral faces. The band covers the
//! `m = floor(A·W_c)` outermost pixel rows/columns along each penalized edge;
//! by default the left, right and top edges (objects resting on the bottom
//! edge are not penalized).

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, wrap_lon, EquirectImage, EquirectMask, Face, FaceMask, SphericalCoord};

pub const DEFAULT_MARGIN: f64 = 0.0625;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Left,
    Right,
    Top,
    Bottom,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenominatorMode {
    /// `|FG ∩ band| / |band|`
    #[default]
    BandOccupancy,
    /// `|FG ∩ band| / W_c²`
    WholeFace,
    /// `|FG ∩ band| / max(|FG|, 1)`
    ForegroundNormalized,
}

impl std::str::FromStr for DenominatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "band-occupancy" | "band" => Ok(Self::BandOccupancy),
            "whole-face" | "face" => Ok(Self::WholeFace),
            "foreground-normalized" | "foreground" => Ok(Self::ForegroundNormalized),
            other => Err(Error::invalid(format!("unknown denominator mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub margin_frac: f64,
    pub denominator_mode: DenominatorMode,
    pub penalized_edges: Vec<Edge>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            margin_frac: DEFAULT_MARGIN,
            denominator_mode: DenominatorMode::BandOccupancy,
            penalized_edges: vec![Edge::Left, Edge::Right, Edge::Top],
        }
    }
}

impl ObjectiveConfig {
    pub fn with_mode(mode: DenominatorMode) -> Self {
        Self { denominator_mode: mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        // 0.5 is admitted so the full-face limit is expressible.
        if !(self.margin_frac > 0.0 && self.margin_frac <= 0.5) {
            return Err(Error::invalid(format!("margin {} outside (0, 0.5]", self.margin_frac)));
        }
        if self.penalized_edges.is_empty() {
            return Err(Error::invalid("at least one edge must be penalized"));
        }
        Ok(())
    }

    /// Margin in pixels for a face of side `face_size`.
    pub fn margin_px(&self, face_size: usize) -> usize {
        (self.margin_frac * face_size as f64).floor() as usize
    }
}

/// Binary mask of the boundary band for a `face_size` face.
pub fn band_mask(face_size: usize, cfg: &ObjectiveConfig) -> Result<FaceMask> {
    cfg.validate()?;
    let m = cfg.margin_px(face_size);
    if m == 0 {
        return Err(Error::invalid(format!(
            "margin {} rounds to zero pixels at face size {face_size}",
            cfg.margin_frac
        )));
    }
    let has = |e| cfg.penalized_edges.contains(&e);
    let (left, right, top, bottom) = (has(Edge::Left), has(Edge::Right), has(Edge::Top), has(Edge::Bottom));
    let mut mask = FaceMask::zeros(face_size);
    for y in 0..face_size {
        for x in 0..face_size {
            let inside = (left && x < m)
                || (right && x >= face_size - m)
                || (top && y < m)
                || (bottom && y >= face_size - m);
            mask.data[y * face_size + x] = u8::from(inside);
        }
    }
    Ok(mask)
}

/// Binary foreground on the four lateral faces, in front/right/back/left order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForegroundCubemap {
    face_size: usize,
    lateral: [FaceMask; 4],
}

impl ForegroundCubemap {
    pub fn new(lateral: [FaceMask; 4]) -> Result<Self> {
        let face_size = lateral[0].size;
        for face in &lateral {
            if face.size != face_size || face.data.len() != face_size * face_size {
                return Err(Error::ShapeMismatch {
                    expected: format!("{face_size}x{face_size} face"),
                    actual: format!("size {} with {} values", face.size, face.data.len()),
                });
            }
            if let Some((index, &v)) = face.data.iter().enumerate().find(|(_, v)| **v > 1) {
                return Err(Error::NonBinaryMask { index, value: v as f32 });
            }
        }
        Ok(Self { face_size, lateral })
    }

    pub fn face_size(&self) -> usize {
        self.face_size
    }

    pub fn faces(&self) -> &[FaceMask; 4] {
        &self.lateral
    }

    pub fn face(&self, face: Face) -> &FaceMask {
        assert!(face.index() < 4, "{face} is not a lateral face");
        &self.lateral[face.index()]
    }
}

/// Band geometry precomputed for one face size.
#[derive(Clone, Debug)]
pub struct Objective {
    cfg: ObjectiveConfig,
    face_size: usize,
    band: Vec<usize>,
}

impl Objective {
    pub fn new(face_size: usize, cfg: ObjectiveConfig) -> Result<Self> {
        let mask = band_mask(face_size, &cfg)?;
        let band = mask.data.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect();
        Ok(Self { cfg, face_size, band })
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    pub fn band_len(&self) -> usize {
        self.band.len()
    }

    pub fn face_score(&self, face: &FaceMask) -> f64 {
        let hits = self.band.iter().filter(|&&i| face.data[i] == 1).count() as f64;
        let denom = match self.cfg.denominator_mode {
            DenominatorMode::BandOccupancy => self.band.len() as f64,
            DenominatorMode::WholeFace => (self.face_size * self.face_size) as f64,
            DenominatorMode::ForegroundNormalized => face.count().max(1) as f64,
        };
        hits / denom
    }

    pub fn face_scores(&self, fg: &ForegroundCubemap) -> Result<[f64; 4]> {
        if fg.face_size != self.face_size {
            return Err(Error::ShapeMismatch {
                expected: format!("face size {}", self.face_size),
                actual: format!("face size {}", fg.face_size),
            });
        }
        Ok(std::array::from_fn(|i| self.face_score(&fg.lateral[i])))
    }

    pub fn score(&self, fg: &ForegroundCubemap) -> Result<f64> {
        Ok(mean_of_four(self.face_scores(fg)?))
    }

    /// Mean score over four lateral faces of matching size.
    pub fn score_faces(&self, faces: &[FaceMask; 4]) -> f64 {
        mean_of_four(std::array::from_fn(|i| self.face_score(&faces[i])))
    }
}

// Summed in sorted order so the mean is bit-identical under face permutations.
fn mean_of_four(mut scores: [f64; 4]) -> f64 {
    scores.sort_by(f64::total_cmp);
    scores.iter().sum::<f64>() / 4.0
}

/// Disruption score in `[0, 1]`: mean over lateral faces of the banded foreground fraction.
pub fn disruption_score(fg: &ForegroundCubemap, cfg: &ObjectiveConfig) -> Result<f64> {
    Objective::new(fg.face_size, cfg.clone())?.score(fg)
}

/// Lateral foreground faces of a mask rendered at `theta`.
pub fn fg_for_angle(mask: &EquirectMask, theta: f64, face_size: usize) -> Result<ForegroundCubemap> {
    let cube = geometry::project_mask(mask, theta, face_size)?;
    let [front, right, back, left, _, _] = cube.faces;
    ForegroundCubemap::new([front, right, back, left])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Spherical cap; `half_extents[0]` is its angular radius.
    Cap,
    /// Latitude/longitude box with half-extents `[lat, lon]`.
    Rect,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Flat,
    #[default]
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub center: SphericalCoord,
    pub half_extents: [f64; 2],
    pub shape: Shape,
    pub intensity: f32,
}

/// Longitude/latitude box. `lon_min > lon_max` means the box wraps across ±π.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalBox {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

impl SphericalBox {
    pub fn contains(&self, c: SphericalCoord) -> bool {
        self.contains_with_slack(c, 0.0)
    }

    pub fn contains_with_slack(&self, c: SphericalCoord, slack: f64) -> bool {
        if c.lat < self.lat_min - slack || c.lat > self.lat_max + slack {
            return false;
        }
        if self.lon_min <= self.lon_max {
            c.lon >= self.lon_min - slack && c.lon <= self.lon_max + slack
        } else {
            c.lon >= self.lon_min - slack || c.lon <= self.lon_max + slack
        }
    }

    pub fn is_valid(&self) -> bool {
        let lon_ok = |v: f64| (-PI..=PI).contains(&v);
        let lat_ok = |v: f64| (-FRAC_PI_2..=FRAC_PI_2).contains(&v);
        lon_ok(self.lon_min) && lon_ok(self.lon_max) && lat_ok(self.lat_min) && lat_ok(self.lat_max) && self.lat_min <= self.lat_max
    }
}

impl SceneObject {
    pub fn contains(&self, c: SphericalCoord) -> bool {
        match self.shape {
            Shape::Cap => self.center.angular_distance(&c) <= self.half_extents[0],
            Shape::Rect => {
                (c.lat - self.center.lat).abs() <= self.half_extents[0]
                    && wrap_lon(c.lon - self.center.lon).abs() <= self.half_extents[1]
            }
        }
    }

    pub fn bounding_box(&self) -> SphericalBox {
        let (lat_half, lon_half) = match self.shape {
            Shape::Cap => {
                let r = self.half_extents[0];
                let lon_half = if self.center.lat.abs() + r >= FRAC_PI_2 {
                    PI
                } else {
                    (r.sin() / self.center.lat.cos()).clamp(-1.0, 1.0).asin()
                };
                (r, lon_half)
            }
            Shape::Rect => (self.half_extents[0], self.half_extents[1]),
        };
        let lat_min = (self.center.lat - lat_half).max(-FRAC_PI_2);
        let lat_max = (self.center.lat + lat_half).min(FRAC_PI_2);
        if lon_half >= PI {
            return SphericalBox { lon_min: -PI, lat_min, lon_max: PI, lat_max };
        }
        SphericalBox {
            lon_min: wrap_lon(self.center.lon - lon_half),
            lat_min,
            lon_max: wrap_lon(self.center.lon + lon_half),
            lat_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub texture: Texture,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, obj) in self.objects.iter().enumerate() {
            let needed = match obj.shape {
                Shape::Cap => &obj.half_extents[..1],
                Shape::Rect => &obj.half_extents[..],
            };
            if needed.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
                return Err(Error::invalid(format!("object {i}: extents must be positive")));
            }
            if obj.center.lat.abs() >= FRAC_PI_3 {
                return Err(Error::invalid(format!("object {i}: center latitude must satisfy |lat| < π/3")));
            }
            if !(0.0..=1.0).contains(&obj.intensity) {
                return Err(Error::invalid(format!("object {i}: intensity outside [0, 1]")));
            }
        }
        Ok(())
    }
}

struct Wave {
    axis: [f64; 3],
    freq: f64,
    phase: f64,
    amp: f64,
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0f64..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Renders a scene at `height` rows (width `2·height`): RGB image plus the
/// union mask of all objects, evaluated at pixel centers.
pub fn synth_scene(spec: &SceneSpec, height: usize) -> Result<(EquirectImage, EquirectMask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let waves: Vec<[Wave; 3]> = (0..3)
        .map(|_| {
            std::array::from_fn(|_| Wave {
                axis: unit_vector(&mut rng),
                freq: rng.gen_range(0.5..2.0),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
                amp: rng.gen_range(0.0..1.0 / 3.0),
            })
        })
        .collect();
    let texture = spec.texture;
    let background = |c: SphericalCoord, ch: usize| -> f64 {
        match texture {
            Texture::Flat => 0.5,
            Texture::Gradient => {
                let d = geometry::spherical_to_dir(c);
                0.5 + 0.25
                    * waves[ch]
                        .iter()
                        .map(|w| {
                            let t = d[0] * w.axis[0] + d[1] * w.axis[1] + d[2] * w.axis[2];
                            w.amp * (w.freq * t + w.phase).sin()
                        })
                        .sum::<f64>()
            }
        }
    };
    let image = EquirectImage::from_fn(2 * height, height, 3, |c, ch| {
        match spec.objects.iter().rev().find(|o| o.contains(c)) {
            Some(obj) => obj.intensity,
            None => background(c, ch) as f32,
        }
    })?;
    let mask = EquirectMask::from_fn(2 * height, height, |c| spec.objects.iter().any(|o| o.contains(c)))?;
    Ok((image, mask))
}

/// Distribution of random scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Range of the angular radius (caps) or half-extents (rects), radians.
    pub extent_range: (f64, f64),
    /// Object centers are drawn with `|lat| <= lat_limit`.
    pub lat_limit: f64,
    /// Probability that an object is a cap rather than a rect.
    pub cap_probability: f64,
    pub texture: Texture,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            min_objects: 1,
            max_objects: 3,
            extent_range: (0.15, 0.45),
            lat_limit: 0.35,
            cap_probability: 0.5,
            texture: Texture::Gradient,
        }
    }
}

impl SceneParams {
    /// One compact object per scene.
    pub fn single_object() -> Self {
        Self { min_objects: 1, max_objects: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.extent_range;
        if self.min_objects > self.max_objects {
            return Err(Error::invalid("min_objects exceeds max_objects"));
        }
        if !(lo > 0.0 && lo <= hi && hi < FRAC_PI_2) {
            return Err(Error::invalid("extent range must satisfy 0 < min <= max < π/2"));
        }
        if !(0.0..FRAC_PI_3).contains(&self.lat_limit) {
            return Err(Error::invalid("lat_limit must lie in [0, π/3)"));
        }
        if !(0.0..=1.0).contains(&self.cap_probability) {
            return Err(Error::invalid("cap_probability must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn sample(&self, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1_ab1e);
        let count = rng.gen_range(self.min_objects..=self.max_objects);
        let (lo, hi) = self.extent_range;
        let objects = (0..count)
            .map(|_| {
                let lat = if self.lat_limit > 0.0 { rng.gen_range(-self.lat_limit..=self.lat_limit) } else { 0.0 };
                let lon = rng.gen_range(-PI..PI);
                let shape = if rng.gen_bool(self.cap_probability) { Shape::Cap } else { Shape::Rect };
                let half_extents = match shape {
                    Shape::Cap => {
                        let r = rng.gen_range(lo..=hi);
                        [r, r]
                    }
                    Shape::Rect => [rng.gen_range(lo..=hi) * 0.8, rng.gen_range(lo..=hi)],
                };
                SceneObject {
                    center: SphericalCoord { lat, lon },
                    half_extents,
                    shape,
                    intensity: rng.gen_range(0.0..=0.15f32) + if rng.gen_bool(0.5) { 0.85 } else { 0.0 },
                }
            })
            .collect();
        SceneSpec { objects, texture: self.texture, seed }
    }
}
