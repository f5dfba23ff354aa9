//! Spherical coordinates and rotation-aware cubemap rendering.
//!
//! Conventions used throughout the crate:
//!
//! - Directions are right-handed with `+z` forward, `+y` up and `+x` right.
//!   Longitude is `atan2(x, z)` and latitude is `asin(y)`, so the front face
//!   center sits at `(lat 0, lon 0)` and the right face at `lon = π/2`.
//! - Equirectangular pixel `(col, row)` has its center at
//!   `lon = -π + (col + 0.5)·2π/W` and `lat = π/2 - (row + 0.5)·π/H`.
//!   Longitude wraps across the ±π seam; latitude clamps at the poles.
//! - A cubemap rendered at snap angle `θ` is the cube rotated by `+θ` in
//!   azimuth: the face pixel whose view coordinate is `c` shows the panorama
//!   point `p` with `rotate_coords(p, θ) == c`, so the front face center shows
//!   panorama longitude `θ`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps a longitude into `[-π, π)`.
pub fn wrap_lon(lon: f64) -> f64 {
    let mut w = (lon + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w -= TAU;
    }
    w
}

/// Wraps an azimuth into `[0, π/2)`.
pub fn wrap_quarter(theta: f64) -> f64 {
    let w = theta.rem_euclid(FRAC_PI_2);
    if w >= FRAC_PI_2 {
        0.0
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    pub lat: f64,
    pub lon: f64,
}

impl SphericalCoord {
    /// Builds a coordinate, wrapping longitude. Latitude must lie in `[-π/2, π/2]`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::NonFinite(format!("coordinate ({lat}, {lon})")));
        }
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&lat) {
            return Err(Error::invalid(format!("latitude {lat} outside [-π/2, π/2]")));
        }
        Ok(Self { lat, lon: wrap_lon(lon) })
    }

    /// Great-circle distance in radians.
    pub fn angular_distance(&self, other: &SphericalCoord) -> f64 {
        let a = spherical_to_dir(*self);
        let b = spherical_to_dir(*other);
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        sin.atan2(dot)
    }
}

/// The azimuth transform: `(lat, lon) -> (lat, lon - theta)`, longitude re-wrapped.
pub fn rotate_coords(c: SphericalCoord, theta: f64) -> SphericalCoord {
    SphericalCoord { lat: c.lat, lon: wrap_lon(c.lon - theta) }
}

pub fn spherical_to_dir(c: SphericalCoord) -> [f64; 3] {
    let (sl, cl) = c.lat.sin_cos();
    let (so, co) = c.lon.sin_cos();
    [cl * so, sl, cl * co]
}

/// Inverse of [`spherical_to_dir`]. The input is normalized first; at the
/// poles longitude is defined as 0.
pub fn dir_to_spherical(d: [f64; 3]) -> Result<SphericalCoord> {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::invalid("direction must be a finite non-zero vector"));
    }
    let [x, y, z] = [d[0] / norm, d[1] / norm, d[2] / norm];
    let horiz = x.hypot(z);
    let lat = y.atan2(horiz);
    let lon = if horiz == 0.0 { 0.0 } else { wrap_lon(x.atan2(z)) };
    Ok(SphericalCoord { lat, lon })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    Front,
    Right,
    Back,
    Left,
    Top,
    Bottom,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::Front, Face::Right, Face::Back, Face::Left, Face::Top, Face::Bottom];
    /// The contiguous horizontal strip, in increasing longitude.
    pub const LATERAL: [Face; 4] = [Face::Front, Face::Right, Face::Back, Face::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Face::Front => "front",
            Face::Right => "right",
            Face::Back => "back",
            Face::Left => "left",
            Face::Top => "top",
            Face::Bottom => "bottom",
        }
    }

    /// `(center, right, down)` axes of the face plane.
    fn basis(self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        match self {
            Face::Front => ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]),
            Face::Right => ([1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]),
            Face::Back => ([0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]),
            Face::Left => ([-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]),
            Face::Top => ([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            Face::Bottom => ([0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]),
        }
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Face {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Face::ALL
            .into_iter()
            .find(|face| face.name() == s)
            .ok_or_else(|| Error::UnknownFace(s.to_string()))
    }
}

/// Unit direction through face coordinate `(u, v)`, with `u` running left to
/// right and `v` top to bottom, both in `[0, 1]`.
pub fn face_ray(face: Face, u: f64, v: f64) -> [f64; 3] {
    let (n, r, d) = face.basis();
    let a = 2.0 * u - 1.0;
    let b = 2.0 * v - 1.0;
    let ray = [
        n[0] + a * r[0] + b * d[0],
        n[1] + a * r[1] + b * d[1],
        n[2] + a * r[2] + b * d[2],
    ];
    let len = (ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2]).sqrt();
    [ray[0] / len, ray[1] / len, ray[2] / len]
}

/// Face hit by a direction and the `(u, v)` coordinate on it.
pub fn dir_to_face(d: [f64; 3]) -> (Face, f64, f64) {
    let mut best = Face::Front;
    let mut best_t = f64::NEG_INFINITY;
    for face in Face::ALL {
        let (n, _, _) = face.basis();
        let t = d[0] * n[0] + d[1] * n[1] + d[2] * n[2];
        if t > best_t {
            best_t = t;
            best = face;
        }
    }
    let (_, r, dn) = best.basis();
    let a = (d[0] * r[0] + d[1] * r[1] + d[2] * r[2]) / best_t;
    let b = (d[0] * dn[0] + d[1] * dn[1] + d[2] * dn[2]) / best_t;
    (best, (a + 1.0) * 0.5, (b + 1.0) * 0.5)
}

/// A panorama in equirectangular projection, row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct EquirectImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if height == 0 || width != 2 * height {
        return Err(Error::InvalidImage(format!(
            "equirectangular image must be 2:1 and non-empty, got {width}x{height}"
        )));
    }
    Ok(())
}

impl EquirectImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", width * height * channels),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("value {v} at index {i} outside [0, 1]")));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image by evaluating `f(coord, channel)` at every pixel center.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(SphericalCoord, usize) -> f32,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height * channels);
        for row in 0..height {
            for col in 0..width {
                let c = pixel_center(width, height, col, row);
                for ch in 0..channels {
                    data.push(f(c, ch).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, col: usize, row: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }
}

/// Spherical coordinate of an equirect pixel center.
pub fn pixel_center(width: usize, height: usize, col: usize, row: usize) -> SphericalCoord {
    SphericalCoord {
        lat: FRAC_PI_2 - (row as f64 + 0.5) * PI / height as f64,
        lon: -PI + (col as f64 + 0.5) * TAU / width as f64,
    }
}

/// Nearest equirect pixel `(col, row)` for a coordinate.
pub fn nearest_pixel(width: usize, height: usize, c: SphericalCoord) -> (usize, usize) {
    let fx = (c.lon + PI) / TAU * width as f64;
    let fy = (FRAC_PI_2 - c.lat) / PI * height as f64;
    let col = (fx.floor() as i64).rem_euclid(width as i64) as usize;
    let row = (fy.floor().max(0.0) as usize).min(height - 1);
    (col, row)
}

/// Bilinear sample of one channel. Longitude wraps, latitude clamps.
pub fn sample_equirect(img: &EquirectImage, c: SphericalCoord, channel: usize) -> f32 {
    let w = img.width as f64;
    let h = img.height as f64;
    let fx = (c.lon + PI) / TAU * w - 0.5;
    let fy = ((FRAC_PI_2 - c.lat) / PI * h - 0.5).clamp(0.0, h - 1.0);
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let c0 = (x0 as i64).rem_euclid(img.width as i64) as usize;
    let c1 = (c0 + 1) % img.width;
    let r0 = y0 as usize;
    let r1 = (r0 + 1).min(img.height - 1);
    let p = |col: usize, row: usize| img.get(col, row, channel) as f64;
    let top = p(c0, r0) * (1.0 - tx) + p(c1, r0) * tx;
    let bottom = p(c0, r1) * (1.0 - tx) + p(c1, r1) * tx;
    (top * (1.0 - ty) + bottom * ty) as f32
}

/// A binary equirectangular mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquirectMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl EquirectMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", width * height),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some((index, &v)) = data.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::NonBinaryMask { index, value: v as f32 });
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; width * height])
    }

    /// Converts a single-channel image whose values are exactly 0 or 1.
    pub fn from_image(img: &EquirectImage) -> Result<Self> {
        if img.channels != 1 {
            return Err(Error::InvalidImage("mask must be single-channel".into()));
        }
        let mut data = Vec::with_capacity(img.data.len());
        for (index, &v) in img.data.iter().enumerate() {
            match v {
                0.0 => data.push(0),
                1.0 => data.push(1),
                value => return Err(Error::NonBinaryMask { index, value }),
            }
        }
        Self::new(img.width, img.height, data)
    }

    /// Thresholds the first channel at 0.5.
    pub fn threshold(img: &EquirectImage) -> Self {
        let data = img
            .data
            .chunks(img.channels)
            .map(|px| u8::from(px[0] >= 0.5))
            .collect();
        Self { width: img.width, height: img.height, data }
    }

    /// Builds a mask by evaluating a predicate at every pixel center.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(SphericalCoord) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(u8::from(f(pixel_center(width, height, col, row))));
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn to_image(&self) -> EquirectImage {
        EquirectImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn sample_nearest(&self, c: SphericalCoord) -> u8 {
        let (col, row) = nearest_pixel(self.width, self.height, c);
        self.get(col, row)
    }
}

/// A candidate snap angle, optionally tied to a grid slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapAngle {
    pub theta: f64,
    pub grid_index: Option<usize>,
}

impl SnapAngle {
    /// A free angle, wrapped into `[0, π/2)`.
    pub fn from_radians(theta: f64) -> Self {
        Self { theta: wrap_quarter(theta), grid_index: None }
    }

    pub fn canonical() -> Self {
        Self { theta: 0.0, grid_index: Some(0) }
    }
}

/// The `n` uniformly spaced azimuth candidates `k·(π/2)/n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngleGrid {
    n: usize,
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self { n: 20 }
    }
}

impl AngleGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("angle grid must have at least one candidate"));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn step(&self) -> f64 {
        FRAC_PI_2 / self.n as f64
    }

    pub fn angle(&self, index: usize) -> SnapAngle {
        assert!(index < self.n, "grid index {index} out of range for n = {}", self.n);
        SnapAngle { theta: index as f64 * FRAC_PI_2 / self.n as f64, grid_index: Some(index) }
    }

    pub fn candidates(&self) -> Vec<SnapAngle> {
        (0..self.n).map(|k| self.angle(k)).collect()
    }

    /// Index reached from `index` after moving `offset` slots, modulo `n`.
    pub fn offset(&self, index: usize, offset: i64) -> usize {
        (index as i64 + offset).rem_euclid(self.n as i64) as usize
    }

    /// Nearest candidate, treating the grid as periodic in π/2.
    pub fn nearest(&self, theta: f64) -> usize {
        let k = (wrap_quarter(theta) / self.step()).round() as usize;
        k % self.n
    }

    pub fn snap(&self, theta: f64) -> SnapAngle {
        self.angle(self.nearest(theta))
    }
}

/// One square face of a cubemap, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceImage {
    pub size: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FaceImage {
    pub fn get(&self, x: usize, y: usize, channel: usize) -> f32 {
        self.data[(y * self.size + x) * self.channels + channel]
    }

    /// Bilinear sample at `(u, v)` in `[0, 1]`, clamped to the face.
    pub fn sample(&self, u: f64, v: f64, channel: usize) -> f32 {
        let max = (self.size - 1) as f64;
        let fx = (u * self.size as f64 - 0.5).clamp(0.0, max);
        let fy = (v * self.size as f64 - 0.5).clamp(0.0, max);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.size - 1);
        let y1 = (y0 + 1).min(self.size - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let p = |x, y| self.get(x, y, channel) as f64;
        let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
        let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
        (top * (1.0 - ty) + bottom * ty) as f32
    }
}

/// A binary face, one byte per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaceMask {
    pub size: usize,
    pub data: Vec<u8>,
}

impl FaceMask {
    pub fn zeros(size: usize) -> Self {
        Self { size, data: vec![0; size * size] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.size + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cubemap {
    pub face_size: usize,
    /// Indexed by [`Face::index`].
    pub faces: [FaceImage; 6],
    /// Azimuth the cubemap was rendered at, radians.
    pub source_angle: f64,
}

impl Cubemap {
    pub fn face(&self, face: Face) -> &FaceImage {
        &self.faces[face.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskCubemap {
    pub face_size: usize,
    pub faces: [FaceMask; 6],
    pub source_angle: f64,
}

impl MaskCubemap {
    pub fn face(&self, face: Face) -> &FaceMask {
        &self.faces[face.index()]
    }
}

pub const MIN_FACE_SIZE: usize = 8;

fn check_face_size(face_size: usize) -> Result<()> {
    if face_size < MIN_FACE_SIZE {
        return Err(Error::invalid(format!("face size {face_size} below minimum {MIN_FACE_SIZE}")));
    }
    Ok(())
}

/// Panorama coordinate shown at pixel `(x, y)` of `face` when rendered at `theta`.
pub fn face_pixel_source(face: Face, x: usize, y: usize, face_size: usize, theta: f64) -> SphericalCoord {
    let u = (x as f64 + 0.5) / face_size as f64;
    let v = (y as f64 + 0.5) / face_size as f64;
    let view = dir_to_spherical(face_ray(face, u, v)).expect("face rays are unit length");
    rotate_coords(view, -theta)
}

/// Renders the panorama to a cubemap with the cube rotated by `theta` radians.
pub fn project_cubemap(img: &EquirectImage, theta: f64, face_size: usize) -> Result<Cubemap> {
    check_face_size(face_size)?;
    if !theta.is_finite() {
        return Err(Error::NonFinite(format!("theta {theta}")));
    }
    let faces = Face::ALL.map(|face| {
        let mut data = Vec::with_capacity(face_size * face_size * img.channels);
        for y in 0..face_size {
            for x in 0..face_size {
                let src = face_pixel_source(face, x, y, face_size, theta);
                for ch in 0..img.channels {
                    data.push(sample_equirect(img, src, ch));
                }
            }
        }
        FaceImage { size: face_size, channels: img.channels, data }
    });
    Ok(Cubemap { face_size, faces, source_angle: theta })
}

/// Like [`project_cubemap`] for binary masks, with nearest-neighbor sampling.
pub fn project_mask(mask: &EquirectMask, theta: f64, face_size: usize) -> Result<MaskCubemap> {
    check_face_size(face_size)?;
    if !theta.is_finite() {
        return Err(Error::NonFinite(format!("theta {theta}")));
    }
    let faces = Face::ALL.map(|face| {
        let mut data = Vec::with_capacity(face_size * face_size);
        for y in 0..face_size {
            for x in 0..face_size {
                data.push(mask.sample_nearest(face_pixel_source(face, x, y, face_size, theta)));
            }
        }
        FaceMask { size: face_size, data }
    });
    Ok(MaskCubemap { face_size, faces, source_angle: theta })
}

/// Resamples a cubemap back to an equirectangular image of the given height,
/// undoing the cubemap's rotation.
pub fn cubemap_to_equirect(cube: &Cubemap, height: usize) -> Result<EquirectImage> {
    let channels = cube.faces[0].channels;
    EquirectImage::from_fn(2 * height, height, channels, |p, ch| {
        let view = rotate_coords(p, cube.source_angle);
        let (face, u, v) = dir_to_face(spherical_to_dir(view));
        cube.face(face).sample(u, v, ch)
    })
}

/// Precomputed nearest-neighbor lookups for the four lateral faces at every
/// candidate of an [`AngleGrid`]. Produces exactly the lateral faces of
/// [`project_mask`] at the grid angles, without the per-pixel trigonometry.
#[derive(Clone, Debug)]
pub struct MaskProjector {
    width: usize,
    height: usize,
    face_size: usize,
    grid: AngleGrid,
    lut: Vec<u32>,
}

impl MaskProjector {
    pub fn new(width: usize, height: usize, face_size: usize, grid: AngleGrid) -> Result<Self> {
        check_dims(width, height)?;
        check_face_size(face_size)?;
        let per_angle = 4 * face_size * face_size;
        let mut lut = Vec::with_capacity(grid.len() * per_angle);
        for k in 0..grid.len() {
            let theta = grid.angle(k).theta;
            for face in Face::LATERAL {
                for y in 0..face_size {
                    for x in 0..face_size {
                        let (col, row) = nearest_pixel(width, height, face_pixel_source(face, x, y, face_size, theta));
                        lut.push((row * width + col) as u32);
                    }
                }
            }
        }
        Ok(Self { width, height, face_size, grid, lut })
    }

    pub fn face_size(&self) -> usize {
        self.face_size
    }

    pub fn grid(&self) -> AngleGrid {
        self.grid
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Lateral faces (front, right, back, left) of `mask` at grid slot `index`.
    pub fn lateral(&self, mask: &EquirectMask, index: usize) -> Result<[FaceMask; 4]> {
        if mask.width != self.width || mask.height != self.height {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} mask", self.width, self.height),
                actual: format!("{}x{}", mask.width, mask.height),
            });
        }
        let per_face = self.face_size * self.face_size;
        let base = index * 4 * per_face;
        Ok(std::array::from_fn(|f| {
            let lut = &self.lut[base + f * per_face..base + (f + 1) * per_face];
            FaceMask { size: self.face_size, data: lut.iter().map(|&i| mask.data[i as usize]).collect() }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn lon_dist(a: f64, b: f64) -> f64 {
        wrap_lon(a - b).abs()
    }

    #[test]
    fn rotate_identity_and_quarter() {
        let c = SphericalCoord::new(0.3, 1.0).unwrap();
        assert_eq!(rotate_coords(c, 0.0), c);
        let r = rotate_coords(c, FRAC_PI_2);
        assert_eq!(r.lat, 0.3);
        assert!(close(r.lon, 1.0 - FRAC_PI_2, 1e-15));
    }

    #[test]
    fn rotate_wraps_across_seam() {
        let c = SphericalCoord::new(0.0, -PI + 0.1).unwrap();
        let r = rotate_coords(c, 0.2);
        // modular oracle: (x + π) mod 2π - π computed on the integer-shifted value
        let oracle = -PI + 0.1 - 0.2 + TAU;
        assert!(close(r.lon, oracle, 1e-12));
        assert!(close(r.lon, PI - 0.1, 1e-12));
        assert!((-PI..PI).contains(&r.lon));
    }

    #[test]
    fn wrap_lon_half_open() {
        assert_eq!(wrap_lon(PI), -PI);
        assert_eq!(wrap_lon(-PI), -PI);
        assert!(wrap_lon(-1e-9) < 0.0);
        assert!(wrap_lon(3.0 * TAU + 0.5) - 0.5 < 1e-12);
    }

    #[test]
    fn latitude_bounds_rejected() {
        assert!(SphericalCoord::new(1.6, 0.0).is_err());
        assert!(SphericalCoord::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn face_centers_anchor_conventions() {
        let expect = [
            (Face::Front, 0.0, 0.0),
            (Face::Right, 0.0, FRAC_PI_2),
            (Face::Back, 0.0, -PI),
            (Face::Left, 0.0, -FRAC_PI_2),
        ];
        for (face, lat, lon) in expect {
            let c = dir_to_spherical(face_ray(face, 0.5, 0.5)).unwrap();
            assert!(close(c.lat, lat, 1e-12), "{face}");
            assert!(lon_dist(c.lon, lon) < 1e-12, "{face}: {}", c.lon);
        }
        let top = dir_to_spherical(face_ray(Face::Top, 0.5, 0.5)).unwrap();
        assert!(close(top.lat, FRAC_PI_2, 1e-12));
        let bottom = dir_to_spherical(face_ray(Face::Bottom, 0.5, 0.5)).unwrap();
        assert!(close(bottom.lat, -FRAC_PI_2, 1e-12));
    }

    #[test]
    fn front_face_left_pixel_longitude() {
        let size = 64;
        let u = 0.5 / size as f64;
        let c = dir_to_spherical(face_ray(Face::Front, u, 0.5)).unwrap();
        // analytic rectilinear: x/z = 2u - 1
        let analytic = (2.0 * u - 1.0).atan();
        // numeric: ray built by hand on the z = 1 plane
        let numeric = (-1.0 + 1.0 / size as f64).atan2(1.0);
        assert!(close(c.lon, analytic, 1e-12));
        assert!(close(c.lon, numeric, 1e-12));
        assert!(close(c.lon, -PI / 4.0 + 0.0078, 1e-4));
    }

    #[test]
    fn face_ids_parse() {
        assert_eq!("right".parse::<Face>().unwrap(), Face::Right);
        assert!(matches!("diagonal".parse::<Face>(), Err(Error::UnknownFace(_))));
    }

    #[test]
    fn adjacent_face_edges_meet() {
        let pairs = [
            (Face::Front, 1.0, Face::Right, 0.0),
            (Face::Right, 1.0, Face::Back, 0.0),
            (Face::Back, 1.0, Face::Left, 0.0),
            (Face::Left, 1.0, Face::Front, 0.0),
        ];
        for (a, ua, b, ub) in pairs {
            for v in [0.1, 0.5, 0.9] {
                let ra = face_ray(a, ua, v);
                let rb = face_ray(b, ub, v);
                for i in 0..3 {
                    assert!(close(ra[i], rb[i], 1e-12), "{a}/{b}");
                }
            }
        }
        for u in [0.2, 0.7] {
            let t = face_ray(Face::Top, u, 1.0);
            let f = face_ray(Face::Front, u, 0.0);
            let bt = face_ray(Face::Bottom, u, 0.0);
            let fb = face_ray(Face::Front, u, 1.0);
            for i in 0..3 {
                assert!(close(t[i], f[i], 1e-12));
                assert!(close(bt[i], fb[i], 1e-12));
            }
        }
    }

    #[test]
    fn poles_and_forward() {
        let f = dir_to_spherical([0.0, 0.0, 1.0]).unwrap();
        assert_eq!((f.lat, f.lon), (0.0, 0.0));
        let up = dir_to_spherical([0.0, 1.0, 0.0]).unwrap();
        assert!(close(up.lat, FRAC_PI_2, 1e-15));
        assert_eq!(up.lon, 0.0);
        let down = dir_to_spherical([0.0, -2.0, -0.0]).unwrap();
        assert_eq!(down.lon, 0.0);
        assert!(dir_to_spherical([0.0; 3]).is_err());
    }

    #[test]
    fn dir_to_face_inverts_face_ray() {
        for face in Face::ALL {
            for (u, v) in [(0.1, 0.2), (0.5, 0.5), (0.93, 0.61)] {
                let (f, uu, vv) = dir_to_face(face_ray(face, u, v));
                assert_eq!(f, face);
                assert!(close(u, uu, 1e-12) && close(v, vv, 1e-12));
            }
        }
    }

    fn gradient_image() -> EquirectImage {
        EquirectImage::from_fn(32, 16, 1, |c, _| (0.5 + 0.4 * c.lat.sin() * c.lon.cos()) as f32).unwrap()
    }

    #[test]
    fn sampling_constant_and_pixel_centers() {
        let img = EquirectImage::constant(32, 16, 3, 0.25).unwrap();
        for (lat, lon) in [(0.0, 0.0), (1.5, 3.1), (-FRAC_PI_2, -PI)] {
            let c = SphericalCoord::new(lat, lon).unwrap();
            assert_eq!(sample_equirect(&img, c, 2), 0.25);
        }
        let img = gradient_image();
        for (col, row) in [(0, 0), (5, 7), (31, 15)] {
            let c = pixel_center(32, 16, col, row);
            assert!((sample_equirect(&img, c, 0) - img.get(col, row, 0)).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_seam_is_continuous() {
        let mut data = vec![0.0f32; 32 * 16];
        for row in 0..16 {
            data[row * 32] = 1.0;
            data[row * 32 + 31] = 0.5;
        }
        let img = EquirectImage::new(32, 16, 1, data).unwrap();
        let lat = pixel_center(32, 16, 0, 8).lat;
        let at_seam = sample_equirect(&img, SphericalCoord { lat, lon: -PI }, 0);
        assert!((at_seam - 0.75).abs() < 1e-6);
        let from_left = sample_equirect(&img, SphericalCoord { lat, lon: PI - 1e-12 }, 0);
        let from_right = sample_equirect(&img, SphericalCoord { lat, lon: -PI + 1e-12 }, 0);
        assert!((from_left - at_seam).abs() < 1e-6);
        assert!((from_right - at_seam).abs() < 1e-6);
    }

    #[test]
    fn image_validation() {
        assert!(EquirectImage::new(30, 16, 1, vec![0.0; 480]).is_err());
        assert!(EquirectImage::new(32, 16, 1, vec![1.5; 512]).is_err());
        assert!(EquirectImage::new(32, 16, 2, vec![0.0; 1024]).is_err());
        assert!(EquirectMask::new(32, 16, vec![2; 512]).is_err());
        let gray = EquirectImage::constant(32, 16, 1, 0.5).unwrap();
        assert!(matches!(EquirectMask::from_image(&gray), Err(Error::NonBinaryMask { .. })));
    }

    #[test]
    fn constant_panorama_gives_constant_faces() {
        let img = EquirectImage::constant(64, 32, 3, 0.6).unwrap();
        let cube = project_cubemap(&img, 0.37, 8).unwrap();
        for face in &cube.faces {
            assert!(face.data.iter().all(|&v| (v - 0.6).abs() < 1e-6));
        }
        assert!(project_cubemap(&img, 0.0, 4).is_err());
    }

    #[test]
    fn delta_lands_on_front_center() {
        let (w, h) = (256, 128);
        let theta = 0.3;
        let target = SphericalCoord::new(0.0, theta).unwrap();
        let (col, row) = nearest_pixel(w, h, target);
        let mut data = vec![0.0f32; w * h];
        data[row * w + col] = 1.0;
        let img = EquirectImage::new(w, h, 1, data).unwrap();
        let size = 32;
        let cube = project_cubemap(&img, theta, size).unwrap();
        let mut best = (Face::Top, 0, 0, -1.0f32);
        for face in Face::ALL {
            for y in 0..size {
                for x in 0..size {
                    let v = cube.face(face).get(x, y, 0);
                    if v > best.3 {
                        best = (face, x, y, v);
                    }
                }
            }
        }
        assert_eq!(best.0, Face::Front);
        // inversion oracle: the face pixel whose ray hits the delta pixel center
        let (_, u, v) = dir_to_face(spherical_to_dir(rotate_coords(pixel_center(w, h, col, row), theta)));
        let ex = (u * size as f64).floor() as usize;
        let ey = (v * size as f64).floor() as usize;
        assert!(best.1.abs_diff(ex) <= 1 && best.2.abs_diff(ey) <= 1);
        assert!(best.1.abs_diff(size / 2) <= 1 && best.2.abs_diff(size / 2) <= 1);
    }

    #[test]
    fn quarter_turn_permutes_lateral_faces() {
        let img = gradient_image();
        let theta = 0.2;
        let a = project_cubemap(&img, theta, 16).unwrap();
        let b = project_cubemap(&img, theta + FRAC_PI_2, 16).unwrap();
        // b.front = a.right, b.right = a.back, b.back = a.left, b.left = a.front
        for (i, face) in Face::LATERAL.into_iter().enumerate() {
            let next = Face::LATERAL[(i + 1) % 4];
            let diff = b
                .face(face)
                .data
                .iter()
                .zip(&a.face(next).data)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            assert!(diff <= 2.0 / 255.0, "{face}: {diff}");
        }
    }

    #[test]
    fn hemisphere_mask() {
        let mask = EquirectMask::from_fn(128, 64, |c| c.lon.abs() <= FRAC_PI_2).unwrap();
        let cube = project_mask(&mask, 0.0, 16).unwrap();
        // per-pixel ray membership oracle
        for face in Face::ALL {
            for y in 0..16 {
                for x in 0..16 {
                    let src = face_pixel_source(face, x, y, 16, 0.0);
                    let (col, row) = nearest_pixel(128, 64, src);
                    let expected = u8::from(pixel_center(128, 64, col, row).lon.abs() <= FRAC_PI_2);
                    assert_eq!(cube.face(face).get(x, y), expected);
                }
            }
        }
        assert!(cube.face(Face::Front).data.iter().all(|&v| v == 1));
        assert!(cube.face(Face::Back).data.iter().all(|&v| v == 0));
    }

    #[test]
    fn trivial_masks() {
        let zeros = EquirectMask::zeros(64, 32).unwrap();
        let ones = EquirectMask::new(64, 32, vec![1; 64 * 32]).unwrap();
        let z = project_mask(&zeros, 0.4, 8).unwrap();
        let o = project_mask(&ones, 0.4, 8).unwrap();
        assert!(z.faces.iter().all(|f| f.count() == 0));
        assert!(o.faces.iter().all(|f| f.count() == 64));
    }

    #[test]
    fn pole_only_image_stays_finite() {
        let (w, h) = (64, 32);
        let mut data = vec![0.0f32; w * h];
        for col in 0..w {
            data[col] = 1.0;
            data[(h - 1) * w + col] = 1.0;
        }
        let img = EquirectImage::new(w, h, 1, data).unwrap();
        let cube = project_cubemap(&img, 1.1, 15).unwrap();
        assert!(cube.faces.iter().all(|f| f.data.iter().all(|v| v.is_finite())));
        assert!(cube.face(Face::Top).get(7, 7, 0) > 0.9);
    }

    #[test]
    fn projector_matches_project_mask() {
        let mask = EquirectMask::from_fn(64, 32, |c| (c.lon * 3.0).sin() + c.lat > 0.2).unwrap();
        let grid = AngleGrid::new(5).unwrap();
        let proj = MaskProjector::new(64, 32, 8, grid).unwrap();
        for k in 0..5 {
            let full = project_mask(&mask, grid.angle(k).theta, 8).unwrap();
            let lat = proj.lateral(&mask, k).unwrap();
            for (i, face) in Face::LATERAL.into_iter().enumerate() {
                assert_eq!(&lat[i], full.face(face));
            }
        }
    }

    #[test]
    fn grid_candidates() {
        let grid = AngleGrid::default();
        let c = grid.candidates();
        assert_eq!(c.len(), 20);
        assert!(c.windows(2).all(|w| w[0].theta < w[1].theta));
        assert_eq!(c[7].theta, 7.0 * FRAC_PI_2 / 20.0);
        assert_eq!(grid.nearest(FRAC_PI_2 - 1e-9), 0);
        assert_eq!(grid.offset(3, -5), 18);
        let s = grid.snap(0.5);
        assert_eq!(grid.snap(s.theta), s);
    }

    proptest! {
        #[test]
        fn rotation_composes(lat in -1.5f64..1.5, lon in -PI..PI, a in -7.0f64..7.0, b in -7.0f64..7.0) {
            let c = SphericalCoord::new(lat, lon).unwrap();
            let twice = rotate_coords(rotate_coords(c, a), b);
            let once = rotate_coords(c, a + b);
            prop_assert_eq!(twice.lat, once.lat);
            prop_assert!(lon_dist(twice.lon, once.lon) < 1e-12);
            prop_assert!((-PI..PI).contains(&twice.lon));
        }

        #[test]
        fn spherical_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let n = (x * x + y * y + z * z).sqrt();
            prop_assume!(n > 1e-3);
            let d = [x / n, y / n, z / n];
            let c = dir_to_spherical(d).unwrap();
            let back = spherical_to_dir(c);
            let c2 = dir_to_spherical(back).unwrap();
            prop_assert!((c.lat - c2.lat).abs() < 1e-9);
            prop_assert!(c.lat.abs() > FRAC_PI_2 - 1e-9 || lon_dist(c.lon, c2.lon) < 1e-9);
            for i in 0..3 {
                prop_assert!((back[i] - d[i]).abs() < 1e-9);
            }
        }
    }
}
