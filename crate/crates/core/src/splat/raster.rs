//! Tile-based front-to-back compositing.
//!
//! Splats are depth-sorted once (index breaks ties), binned into square tiles
//! by the bounding box of their 3-sigma ellipse, and each pixel walks its
//! tile's list in global depth order. A pixel only takes a splat when it lies
//! inside that ellipse, so the tile size never changes the image.

use rayon::prelude::*;

use super::camera::CameraModel;
use super::project::{project_gaussian, Splat2D};
use super::scene::SceneModel;
use super::{Frame, SplatError};

pub const ALPHA_MAX: f32 = 0.99;
pub const ALPHA_MIN: f32 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f32 = 1.0 / 255.0;
/// Squared Mahalanobis radius of the support ellipse (3 sigma).
const SUPPORT_SQ: f32 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub tile_size: u32,
    pub background: [f64; 3],
    pub near: f64,
    /// Worker count; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: 16,
            background: [0.5; 3],
            near: 0.1,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Packed {
    mx: f32,
    my: f32,
    // inverse covariance (a b; b c)
    ca: f32,
    cb: f32,
    cc: f32,
    color: [f32; 3],
    opacity: f32,
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
}

fn pack(s: &Splat2D, width: u32, height: u32) -> Option<Packed> {
    let (a, b, c) = (s.cov[(0, 0)], s.cov[(0, 1)], s.cov[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let rx = 3.0 * a.sqrt();
    let ry = 3.0 * c.sqrt();
    let x0 = (s.mean.x - rx).ceil().max(0.0);
    let y0 = (s.mean.y - ry).ceil().max(0.0);
    let x1 = (s.mean.x + rx).floor().min(width as f64 - 1.0);
    let y1 = (s.mean.y + ry).floor().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some(Packed {
        mx: s.mean.x as f32,
        my: s.mean.y as f32,
        ca: (c / det) as f32,
        cb: (-b / det) as f32,
        cc: (a / det) as f32,
        color: s.color.map(|v| v as f32),
        opacity: s.alpha_peak as f32,
        x0: x0 as u32,
        x1: x1 as u32,
        y0: y0 as u32,
        y1: y1 as u32,
    })
}

/// Projects and depth-sorts every Gaussian visible from `cam`.
pub fn project_and_sort(scene: &SceneModel, cam: &CameraModel, near: f64) -> Vec<Splat2D> {
    let mut projected: Vec<(usize, Splat2D)> = scene
        .gaussians()
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, cam, near).map(|s| (i, s)))
        .collect();
    projected.sort_unstable_by(|(ia, a), (ib, b)| a.depth.total_cmp(&b.depth).then(ia.cmp(ib)));
    projected.into_iter().map(|(_, s)| s).collect()
}

/// Renders `scene` from `cam`.
pub fn rasterize(
    scene: &SceneModel,
    cam: &CameraModel,
    opts: &RenderOptions,
) -> Result<Frame, SplatError> {
    cam.intrinsics.validate()?;
    if opts.tile_size == 0 {
        return Err(SplatError::InvalidCamera("tile size must be positive".into()));
    }
    match opts.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| SplatError::ThreadPool(e.to_string()))?;
            Ok(pool.install(|| rasterize_inner(scene, cam, opts)))
        }
        None => Ok(rasterize_inner(scene, cam, opts)),
    }
}

fn rasterize_inner(scene: &SceneModel, cam: &CameraModel, opts: &RenderOptions) -> Frame {
    let splats = project_and_sort(scene, cam, opts.near);
    composite(&splats, cam, opts)
}

/// Composites already sorted splats.
pub fn composite(sorted: &[Splat2D], cam: &CameraModel, opts: &RenderOptions) -> Frame {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let ts = opts.tile_size;
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);

    let packed: Vec<Packed> = sorted.iter().filter_map(|s| pack(s, w, h)).collect();
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (i, p) in packed.iter().enumerate() {
        for ty in p.y0 / ts..=p.y1 / ts {
            for tx in p.x0 / ts..=p.x1 / ts {
                bins[(ty * tiles_x + tx) as usize].push(i as u32);
            }
        }
    }

    let bg = opts.background.map(|v| v as f32);
    let tiles: Vec<Vec<u8>> = bins
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let tx = t as u32 % tiles_x;
            let ty = t as u32 / tiles_x;
            render_tile(&packed, list, tx * ts, ty * ts, ts, w, h, bg)
        })
        .collect();

    let mut pixels = vec![0u8; (w * h * 3) as usize];
    for (t, buf) in tiles.iter().enumerate() {
        let x0 = (t as u32 % tiles_x) * ts;
        let y0 = (t as u32 / tiles_x) * ts;
        let tw = ts.min(w - x0) as usize;
        for (row, chunk) in buf.chunks_exact(tw * 3).enumerate() {
            let start = (((y0 as usize + row) * w as usize) + x0 as usize) * 3;
            pixels[start..start + tw * 3].copy_from_slice(chunk);
        }
    }
    Frame::new(w, h, pixels, 0.0, cam.pose)
}

#[allow(clippy::too_many_arguments)]
fn render_tile(
    packed: &[Packed],
    list: &[u32],
    x0: u32,
    y0: u32,
    ts: u32,
    w: u32,
    h: u32,
    bg: [f32; 3],
) -> Vec<u8> {
    let x1 = (x0 + ts).min(w);
    let y1 = (y0 + ts).min(h);
    let mut out = Vec::with_capacity(((x1 - x0) * (y1 - y0) * 3) as usize);
    for py in y0..y1 {
        for px in x0..x1 {
            let mut t = 1.0f32;
            let mut c = [0.0f32; 3];
            let (fx, fy) = (px as f32, py as f32);
            for &i in list {
                let s = &packed[i as usize];
                if px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1 {
                    continue;
                }
                let dx = fx - s.mx;
                let dy = fy - s.my;
                let q = s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy;
                if !(q <= SUPPORT_SQ) {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * q).exp()).min(ALPHA_MAX);
                if alpha < ALPHA_MIN {
                    continue;
                }
                let wgt = t * alpha;
                c[0] += wgt * s.color[0];
                c[1] += wgt * s.color[1];
                c[2] += wgt * s.color[2];
                t *= 1.0 - alpha;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            for k in 0..3 {
                out.push(to_u8(c[k] + t * bg[k]));
            }
        }
    }
    out
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
