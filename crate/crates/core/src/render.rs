//! Software rasterizer for tower scenes.
//!
//! The camera looks at the centre of the scene bounds from the `-y` side,
//! tilted down by the elevation angle. Blocks are drawn as flat-shaded quads
//! with a z-buffer; the ground is an infinite plane found by casting one ray
//! per pixel. Screen coordinates are measured from the image centre, which
//! keeps the output exactly mirror-symmetric for mirrored scenes.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::Vec3;
use crate::scene::Scene;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("cannot frame an empty scene")]
    EmptyScene,
    #[error("invalid camera configuration")]
    InvalidCamera,
    #[error("image side {side} is not a multiple of {target}")]
    NonDivisible { side: usize, target: usize },
    #[error("image is not square ({width}x{height})")]
    NotSquare { width: usize, height: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraConfig {
    pub fov_y_deg: f64,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub margin: f64,
    pub resolution: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            fov_y_deg: 40.0,
            elevation_deg: 15.0,
            azimuth_deg: 0.0,
            margin: 1.2,
            resolution: 800,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let ok = self.fov_y_deg > 0.0
            && self.fov_y_deg < 180.0
            && self.margin.is_finite()
            && self.margin >= 1.0
            && self.elevation_deg.is_finite()
            && self.azimuth_deg.is_finite()
            && self.resolution >= 64;
        if ok {
            Ok(())
        } else {
            Err(RenderError::InvalidCamera)
        }
    }
}

/// A framed pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub eye: Vec3,
    pub target: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    /// Focal length in pixels.
    pub focal: f64,
    pub resolution: usize,
}

impl Camera {
    /// Camera-space coordinates `(x right, y up, depth)`.
    pub fn to_view(&self, p: Vec3) -> Vec3 {
        let d = p - self.eye;
        Vec3::new(d.dot(self.right), d.dot(self.up), d.dot(self.forward))
    }

    /// Pixel coordinates (x to the right, y down, origin at the top-left
    /// corner), or `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let v = self.to_view(p);
        if v.z <= 0.0 {
            return None;
        }
        let half = self.resolution as f64 / 2.0;
        Some((half + self.focal * v.x / v.z, half - self.focal * v.y / v.z))
    }
}

/// Aim the camera at the centre of the scene bounds, far enough back that the
/// bounding sphere (scaled by `margin`) fits the vertical field of view.
pub fn frame_camera(scene: &Scene, base: &CameraConfig) -> Result<Camera, RenderError> {
    base.validate()?;
    let (lo, hi) = scene.bounds().ok_or(RenderError::EmptyScene)?;
    let target = (lo + hi) * 0.5;
    let radius = (hi - lo).length() * 0.5;
    let half_fov = base.fov_y_deg.to_radians() * 0.5;
    let distance = base.margin * radius / libm::sin(half_fov);
    let (el, az) = (
        base.elevation_deg.to_radians(),
        base.azimuth_deg.to_radians(),
    );
    let forward = Vec3::new(
        libm::sin(az) * libm::cos(el),
        libm::cos(az) * libm::cos(el),
        -libm::sin(el),
    );
    let right = forward.cross(Vec3::Z).normalize_or_zero();
    let up = right.cross(forward);
    Ok(Camera {
        eye: target - forward * distance,
        target,
        forward,
        right,
        up,
        focal: base.resolution as f64 * 0.5 / libm::tan(half_fov),
        resolution: base.resolution,
    })
}

/// Fixed scene lighting and palette.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lighting {
    /// Direction the light travels (towards the scene).
    pub direction: Vec3,
    pub intensity: f64,
    pub ambient: f64,
    pub albedo: [u8; 3],
    pub background: [u8; 3],
    pub ground: [u8; 3],
}

impl Default for Lighting {
    fn default() -> Self {
        Lighting {
            direction: Vec3::new(-0.4, -0.3, -0.85),
            intensity: 0.8,
            ambient: 0.3,
            albedo: [200, 170, 120],
            background: [60, 60, 60],
            ground: [120, 120, 120],
        }
    }
}

impl Lighting {
    /// Lambertian colour of a block face with outward normal `n`.
    pub fn shade(&self, n: Vec3) -> [u8; 3] {
        let l = self.direction.normalize_or_zero();
        let k = self.ambient + self.intensity * n.dot(-l).max(0.0);
        self.albedo
            .map(|c| libm::round((c as f64 * k).clamp(0.0, 255.0)) as u8)
    }
}

/// Row-major 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            pixels,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn mirrored_x(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }
}

struct Target<'a> {
    image: &'a mut Image,
    /// Inverse view depth per pixel; larger is closer.
    inv_depth: Vec<f64>,
}

/// Render `scene` through `camera`.
pub fn rasterize(scene: &Scene, camera: &Camera, lighting: &Lighting) -> Image {
    let n = camera.resolution;
    let mut image = Image::filled(n, n, lighting.background);
    let mut target = Target {
        image: &mut image,
        inv_depth: vec![0.0; n * n],
    };
    draw_ground(&mut target, camera, lighting);
    for block in &scene.blocks {
        let b = block.oriented_box();
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let normal = b.axis(axis) * sign;
                let corners = b.face(axis, sign);
                let centre = (corners[0] + corners[2]) * 0.5;
                if normal.dot(centre - camera.eye) >= 0.0 {
                    continue;
                }
                let rgb = lighting.shade(normal);
                let v = corners.map(|c| camera.to_view(c));
                if v.iter().any(|p| p.z <= 1e-9) {
                    continue;
                }
                draw_triangle(&mut target, camera, [v[0], v[1], v[2]], rgb);
                draw_triangle(&mut target, camera, [v[0], v[2], v[3]], rgb);
            }
        }
    }
    image
}

/// Screen position relative to the image centre, y up, in pixels.
fn screen(camera: &Camera, v: Vec3) -> (f64, f64) {
    (camera.focal * v.x / v.z, camera.focal * v.y / v.z)
}

/// Centre of pixel `i` relative to the image centre.
fn pixel_centre(i: usize, n: usize) -> f64 {
    i as f64 + 0.5 - n as f64 / 2.0
}

fn draw_ground(target: &mut Target<'_>, camera: &Camera, lighting: &Lighting) {
    let n = camera.resolution;
    for py in 0..n {
        let sy = -pixel_centre(py, n);
        for px in 0..n {
            let sx = pixel_centre(px, n);
            let dir = camera.forward * camera.focal + camera.right * sx + camera.up * sy;
            if dir.z >= 0.0 {
                continue;
            }
            let t = -camera.eye.z / dir.z;
            if t <= 0.0 {
                continue;
            }
            // View depth of the hit point is `t * focal` along `forward`.
            target.inv_depth[py * n + px] = 1.0 / (t * camera.focal);
            target.image.set(px, py, lighting.ground);
        }
    }
}

fn draw_triangle(target: &mut Target<'_>, camera: &Camera, v: [Vec3; 3], rgb: [u8; 3]) {
    let n = camera.resolution;
    let s = v.map(|p| screen(camera, p));
    let area = edge(s[0], s[1], s[2]);
    if area == 0.0 {
        return;
    }
    let inv_z = v.map(|p| 1.0 / p.z);
    let half = n as f64 / 2.0;
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &s {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    // Pixel columns whose centres can fall inside the triangle.
    let col = |x: f64| libm::floor(x + half - 0.5);
    let c0 = col(xmin).max(0.0) as usize;
    let c1 = (col(xmax) + 1.0).min(n as f64 - 1.0);
    // Rows run downwards while screen y runs upwards.
    let r0 = libm::floor(half - ymax - 0.5).max(0.0) as usize;
    let r1 = (libm::floor(half - ymin - 0.5) + 1.0).min(n as f64 - 1.0);
    if c1 < 0.0 || r1 < 0.0 {
        return;
    }
    let (c1, r1) = (c1 as usize, r1 as usize);
    for py in r0..=r1 {
        let sy = -pixel_centre(py, n);
        for px in c0..=c1 {
            let p = (pixel_centre(px, n), sy);
            let w0 = edge(s[1], s[2], p);
            let w1 = edge(s[2], s[0], p);
            let w2 = edge(s[0], s[1], p);
            // Either winding counts; edges are inclusive.
            let inside =
                (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) || (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
            if !inside {
                continue;
            }
            let d = (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]) / area;
            let k = py * n + px;
            if d > target.inv_depth[k] {
                target.inv_depth[k] = d;
                target.image.set(px, py, rgb);
            }
        }
    }
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Box-filter `img` down to `side x side` and convert to luma in `[0, 1]`.
pub fn downsample(img: &Image, side: usize) -> Result<Vec<f32>, RenderError> {
    if img.width != img.height {
        return Err(RenderError::NotSquare {
            width: img.width,
            height: img.height,
        });
    }
    if side == 0 || !img.width.is_multiple_of(side) {
        return Err(RenderError::NonDivisible {
            side: img.width,
            target: side,
        });
    }
    let f = img.width / side;
    let norm = (f * f) as f64;
    let mut out = Vec::with_capacity(side * side);
    for oy in 0..side {
        for ox in 0..side {
            let mut sum = [0u64; 3];
            for y in oy * f..(oy + 1) * f {
                for x in ox * f..(ox + 1) * f {
                    let rgb = img.get(x, y);
                    for c in 0..3 {
                        sum[c] += rgb[c] as u64;
                    }
                }
            }
            let [r, g, b] = sum.map(|s| s as f64 / norm);
            out.push(((0.299 * r + 0.587 * g + 0.114 * b) / 255.0) as f32);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Quat;
    use crate::scene::{Block, BlockDims, GroupTag, SceneParams};

    fn scene(blocks: Vec<Block>) -> Scene {
        Scene {
            id: "t".into(),
            params: SceneParams::new("4B-2D-Uni".parse::<GroupTag>().unwrap(), 0),
            blocks,
        }
    }

    fn cube(x: f64, y: f64, z: f64) -> Block {
        Block::axis_aligned(BlockDims::new(0.1, 0.1, 0.1), Vec3::new(x, y, z))
    }

    #[test]
    fn cube_projects_inside_central_frame() {
        let s = scene(vec![cube(0.0, 0.0, 0.1)]);
        let cam = frame_camera(&s, &CameraConfig::default()).unwrap();
        let n = cam.resolution as f64;
        for v in s.blocks[0].oriented_box().vertices() {
            let (x, y) = cam.project(v).unwrap();
            assert!(x > 0.02 * n && x < 0.98 * n, "{x}");
            assert!(y > 0.02 * n && y < 0.98 * n, "{y}");
        }
    }

    #[test]
    fn taller_tower_is_framed_from_further_away() {
        let column = |k: usize| {
            scene(
                (0..k)
                    .map(|i| cube(0.0, 0.0, 0.1 + 0.2 * i as f64))
                    .collect(),
            )
        };
        let cfg = CameraConfig::default();
        let near = frame_camera(&column(4), &cfg).unwrap();
        let far = frame_camera(&column(14), &cfg).unwrap();
        assert!((far.eye - far.target).length() > (near.eye - near.target).length());
        assert_eq!(frame_camera(&column(4), &cfg).unwrap(), near);
    }

    #[test]
    fn empty_scene_shows_ground_and_background() {
        let framed = scene(vec![cube(0.0, 0.0, 0.1)]);
        let cam = frame_camera(&framed, &CameraConfig::default()).unwrap();
        let light = Lighting::default();
        let img = rasterize(&scene(Vec::new()), &cam, &light);
        assert!(img
            .pixels
            .chunks(3)
            .all(|p| p == light.background || p == light.ground));
        assert_eq!(img.get(400, 0), light.background);
        assert_eq!(img.get(400, 799), light.ground);
        assert_eq!(
            frame_camera(&scene(Vec::new()), &CameraConfig::default()),
            Err(RenderError::EmptyScene)
        );
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = scene(vec![cube(0.0, 0.0, 0.1), cube(0.05, 0.0, 0.3)]);
        let cam = frame_camera(&s, &CameraConfig::default()).unwrap();
        let l = Lighting::default();
        assert_eq!(rasterize(&s, &cam, &l), rasterize(&s, &cam, &l));
    }

    #[test]
    fn nearer_cube_wins_depth_test() {
        // A is turned 45 degrees and sits directly behind B, so none of its
        // faces share B's front normal.
        let mut a = Block::axis_aligned(BlockDims::new(0.2, 0.2, 0.2), Vec3::new(0.0, 0.45, 0.2));
        a.orientation = Quat::from_axis_angle(Vec3::Z, core::f64::consts::FRAC_PI_4);
        let b = cube(0.0, 0.0, 0.1);
        let cfg = CameraConfig::default();
        let cam = frame_camera(&scene(vec![a, b]), &cfg).unwrap();
        let light = Lighting::default();
        let (x, y) = cam.project(Vec3::new(0.0, -0.1, 0.17)).unwrap();
        let (x, y) = (x as usize, y as usize);
        let front = light.shade(Vec3::new(0.0, -1.0, 0.0));
        for order in [vec![a, b], vec![b, a]] {
            assert_eq!(rasterize(&scene(order), &cam, &light).get(x, y), front);
        }
        let behind = rasterize(&scene(vec![a]), &cam, &light).get(x, y);
        assert_ne!(behind, front);
        assert_ne!(behind, light.ground);
    }

    #[test]
    fn mirrored_scene_renders_mirrored_image() {
        let tilt = Quat::from_axis_angle(Vec3::Y, 0.3);
        let mut tilted = cube(0.07, 0.0, 0.5);
        tilted.orientation = tilt;
        let s = scene(vec![
            Block::axis_aligned(BlockDims::new(0.3, 0.1, 0.1), Vec3::new(0.13, 0.0, 0.1)),
            Block::axis_aligned(BlockDims::new(0.1, 0.1, 0.3), Vec3::new(0.31, 0.0, 0.5)),
            tilted,
        ]);
        let m = s.mirrored_x();
        let cfg = CameraConfig {
            resolution: 128,
            ..CameraConfig::default()
        };
        let light = Lighting::default();
        let mut mirrored_light = light;
        mirrored_light.direction.x = -light.direction.x;
        let a = rasterize(&s, &frame_camera(&s, &cfg).unwrap(), &light);
        let b = rasterize(&m, &frame_camera(&m, &cfg).unwrap(), &mirrored_light);
        assert_eq!(a.mirrored_x(), b);
    }

    #[test]
    fn downsample_fixtures() {
        let white = Image::filled(64, 64, [255, 255, 255]);
        assert!(downsample(&white, 8).unwrap().iter().all(|&v| v == 1.0));
        let grey = Image::filled(128, 128, [60, 60, 60]);
        for v in downsample(&grey, 64).unwrap() {
            assert!((v as f64 - 60.0 / 255.0).abs() < 1e-7);
        }
        let mut checker = Image::filled(64, 64, [0, 0, 0]);
        for y in 0..64 {
            for x in 0..64 {
                if (x + y) % 2 == 0 {
                    checker.set(x, y, [255, 255, 255]);
                }
            }
        }
        assert!(downsample(&checker, 32).unwrap().iter().all(|&v| v == 0.5));
        assert_eq!(
            downsample(&white, 48),
            Err(RenderError::NonDivisible {
                side: 64,
                target: 48
            })
        );
    }
}
