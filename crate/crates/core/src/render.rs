//! Driver's-view rasterizer.
//!
//! Every pixel is cast from a chase camera onto the ground plane and shaded
//! by what it lands on: road, wall band, off-road, or sky above the horizon.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Track};
use crate::vec2::Vec2;

/// Width of the wall band drawn just outside each edge.
pub const WALL_BAND: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("block {block} does not divide {height}x{width}")]
    IndivisibleShape { block: usize, height: usize, width: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    pub horizontal_fov: f64,
    pub camera_height: f64,
    /// Distance behind the vehicle origin.
    pub back_offset: f64,
    /// Downward tilt in radians.
    pub pitch: f64,
    /// Ground hits closer than this are culled and drawn as off-road.
    pub near_clip: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width: 96,
            height: 64,
            channels: 1,
            horizontal_fov: 90f64.to_radians(),
            camera_height: 2.0,
            back_offset: 4.0,
            pitch: 10f64.to_radians(),
            near_clip: 0.5,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidCamera("image size must be positive".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(RenderError::InvalidCamera("channels must be 1 or 3".into()));
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < std::f64::consts::PI) {
            return Err(RenderError::InvalidCamera("horizontal_fov must be in (0, pi)".into()));
        }
        if !(self.camera_height > 0.0) {
            return Err(RenderError::InvalidCamera("camera_height must be positive".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height * self.channels
    }

    /// Normalised image-plane coordinates of a pixel center (x right, y up).
    pub fn image_plane(&self, px: usize, py: usize) -> (f64, f64) {
        let tx = (self.horizontal_fov / 2.0).tan();
        let ty = tx * self.height as f64 / self.width as f64;
        let xn = (2.0 * px as f64 + 1.0 - self.width as f64) / self.width as f64 * tx;
        let yn = (self.height as f64 - 2.0 * py as f64 - 1.0) / self.height as f64 * ty;
        (xn, yn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PixelClass {
    Sky,
    Road,
    Wall,
    OffRoad,
}

impl PixelClass {
    pub fn gray(self) -> u8 {
        match self {
            PixelClass::Sky => 200,
            PixelClass::Road => 60,
            PixelClass::Wall => 255,
            PixelClass::OffRoad => 130,
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            PixelClass::Sky => [135, 180, 235],
            PixelClass::Road => [70, 70, 75],
            PixelClass::Wall => [230, 40, 40],
            PixelClass::OffRoad => [60, 140, 60],
        }
    }
}

/// Rendered image with 8-bit levels; [`Frame::value`] maps them into `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major `H x W x C`.
    pub data: Vec<u8>,
    /// Simulation tick the frame was rendered at.
    pub timestamp: u64,
}

impl Frame {
    pub fn value(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c] as f32 / 255.0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 255.0).collect()
    }

    /// Binary PGM (grayscale) or PPM (RGB).
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

/// Ray through pixel `(px, py)` in the vehicle frame (x forward, y left, z up).
fn pixel_ray(cam: &CameraSpec, px: usize, py: usize, cos_p: f64, sin_p: f64) -> [f64; 3] {
    let (xn, yn) = cam.image_plane(px, py);
    // forward (cos p, 0, -sin p), up (sin p, 0, cos p), right (0, -1, 0)
    [cos_p + yn * sin_p, -xn, -sin_p + yn * cos_p]
}

/// Ground-plane point hit by the ray through pixel `(px, py)`, or `None` above the horizon.
pub fn ground_point(cam: &CameraSpec, pose: &Pose, px: usize, py: usize) -> Option<Vec2> {
    let (sin_p, cos_p) = cam.pitch.sin_cos();
    let (sin_y, cos_y) = pose.yaw.sin_cos();
    ground_hit(cam, pose, px, py, cos_p, sin_p, cos_y, sin_y)
}

#[allow(clippy::too_many_arguments)]
fn ground_hit(
    cam: &CameraSpec,
    pose: &Pose,
    px: usize,
    py: usize,
    cos_p: f64,
    sin_p: f64,
    cos_y: f64,
    sin_y: f64,
) -> Option<Vec2> {
    let d = pixel_ray(cam, px, py, cos_p, sin_p);
    if d[2] >= 0.0 {
        return None;
    }
    let t = cam.camera_height / -d[2];
    let lx = -cam.back_offset + t * d[0];
    let ly = t * d[1];
    Some(pose.position + Vec2::new(cos_y * lx - sin_y * ly, sin_y * lx + cos_y * ly))
}

pub fn classify_ground(track: &Track, p: Vec2) -> PixelClass {
    let half = track.width() / 2.0;
    match track.centerline_distance_within(p, half + WALL_BAND) {
        Some(d) if d <= half => PixelClass::Road,
        Some(_) => PixelClass::Wall,
        None => PixelClass::OffRoad,
    }
}

pub fn classify_pixel(track: &Track, pose: &Pose, cam: &CameraSpec, px: usize, py: usize) -> PixelClass {
    let (sin_p, cos_p) = cam.pitch.sin_cos();
    let (sin_y, cos_y) = pose.yaw.sin_cos();
    classify_with(track, pose, cam, px, py, cos_p, sin_p, cos_y, sin_y)
}

#[allow(clippy::too_many_arguments)]
fn classify_with(
    track: &Track,
    pose: &Pose,
    cam: &CameraSpec,
    px: usize,
    py: usize,
    cos_p: f64,
    sin_p: f64,
    cos_y: f64,
    sin_y: f64,
) -> PixelClass {
    match ground_hit(cam, pose, px, py, cos_p, sin_p, cos_y, sin_y) {
        None => PixelClass::Sky,
        Some(g) => {
            if g.distance(pose.position - Vec2::new(cos_y, sin_y) * cam.back_offset).hypot(cam.camera_height)
                < cam.near_clip
            {
                PixelClass::OffRoad
            } else {
                classify_ground(track, g)
            }
        }
    }
}

pub fn render_view(track: &Track, pose: &Pose, cam: &CameraSpec, timestamp: u64) -> Frame {
    let (sin_p, cos_p) = cam.pitch.sin_cos();
    let (sin_y, cos_y) = pose.yaw.sin_cos();
    let mut data = Vec::with_capacity(cam.pixel_count());
    for py in 0..cam.height {
        for px in 0..cam.width {
            let class = classify_with(track, pose, cam, px, py, cos_p, sin_p, cos_y, sin_y);
            if cam.channels == 1 {
                data.push(class.gray());
            } else {
                data.extend_from_slice(&class.rgb());
            }
        }
    }
    Frame {
        width: cam.width,
        height: cam.height,
        channels: cam.channels,
        data,
        timestamp,
    }
}

/// Lossless block-to-channel rearrangement in `[0, 1]` floats:
/// `out[y, x, c*b*b + dy*b + dx] = frame[y*b + dy, x*b + dx, c]`.
/// Returns the data with shape `(H/b, W/b, C*b*b)`.
pub fn space_to_depth(frame: &Frame, block: usize) -> Result<(Vec<f32>, [usize; 3]), RenderError> {
    let (h, w, c) = (frame.height, frame.width, frame.channels);
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(RenderError::IndivisibleShape {
            block,
            height: h,
            width: w,
        });
    }
    let (ho, wo, co) = (h / block, w / block, c * block * block);
    let mut out = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let oi = ((y / block) * wo + x / block) * co + ch * block * block + (y % block) * block + x % block;
                out[oi] = frame.value(y, x, ch);
            }
        }
    }
    Ok((out, [ho, wo, co]))
}

/// Inverse of [`space_to_depth`], re-quantised to 8-bit levels.
pub fn depth_to_space(data: &[f32], shape: [usize; 3], block: usize, timestamp: u64) -> Result<Frame, RenderError> {
    let [ho, wo, co] = shape;
    if block == 0 || co % (block * block) != 0 || data.len() != ho * wo * co {
        return Err(RenderError::IndivisibleShape {
            block,
            height: ho,
            width: wo,
        });
    }
    let (h, w, c) = (ho * block, wo * block, co / (block * block));
    let mut out = vec![0u8; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let si = ((y / block) * wo + x / block) * co + ch * block * block + (y % block) * block + x % block;
                out[(y * w + x) * c + ch] = (data[si] * 255.0).round() as u8;
            }
        }
    }
    Ok(Frame {
        width: w,
        height: h,
        channels: c,
        data: out,
        timestamp,
    })
}
