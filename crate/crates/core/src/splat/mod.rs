//! Gaussian splatting scenes and the software rasterizer that renders camera
//! frames from them.

mod camera;
mod ply;
mod project;
mod raster;
mod scene;
pub mod sh;

use std::path::Path;

use thiserror::Error;

use crate::geometry::Pose;

pub use camera::{forward_camera_mount, CameraModel, CameraRig, Intrinsics};
pub use ply::{load_scene, save_scene};
pub use project::{covariance_3d, project_gaussian, Splat2D, COV_DILATION};
pub use raster::{
    composite, project_and_sort, rasterize, RenderOptions, ALPHA_MAX, ALPHA_MIN,
    TRANSMITTANCE_MIN,
};
pub use scene::{generate_test_scene, Aabb, BlobSpec, Gaussian, SceneModel, SceneSource};
pub use sh::{evaluate_sh, ShCoeffs};

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("PLY vertex element lacks field '{0}'")]
    MissingField(String),
    #[error("PLY body truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{culled} of {total} Gaussians failed validation")]
    TooManyCulled { culled: usize, total: usize },
    #[error("scene has no Gaussians")]
    EmptyScene,
    #[error("blob {0} has invalid parameters")]
    InvalidBlob(usize),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("image: {0}")]
    Image(String),
}

/// An RGB8 image, row-major from the top-left, stamped with the capture time
/// and the true camera-to-world pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    pub timestamp: f64,
    pub camera_pose: Pose,
}

impl Frame {
    /// Panics if the buffer length is not `width * height * 3`.
    pub fn new(width: u32, height: u32, pixels: Vec<u8>, timestamp: f64, camera_pose: Pose) -> Self {
        assert_eq!(pixels.len(), (width * height * 3) as usize, "RGB8 buffer size");
        Self {
            width,
            height,
            pixels,
            timestamp,
            camera_pose,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, SplatError> {
        use image::ImageEncoder;
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.pixels, self.width, self.height, image::ExtendedColorType::Rgb8)
            .map_err(|e| SplatError::Image(e.to_string()))?;
        Ok(out)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), SplatError> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| SplatError::Io(path.display().to_string(), e))
    }

    pub fn decode_png(bytes: &[u8], timestamp: f64, camera_pose: Pose) -> Result<Self, SplatError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| SplatError::Image(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self::new(w, h, img.into_raw(), timestamp, camera_pose))
    }

    pub fn load_png(path: impl AsRef<Path>, timestamp: f64, camera_pose: Pose) -> Result<Self, SplatError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| SplatError::Io(path.display().to_string(), e))?;
        Self::decode_png(&bytes, timestamp, camera_pose)
    }
}

/// Renders the view from a vehicle at `body_pose`, with the camera placed by
/// the rig's extrinsic. The frame carries the true camera pose.
pub fn render_at(
    scene: &SceneModel,
    body_pose: &Pose,
    rig: &CameraRig,
    opts: &RenderOptions,
    timestamp: f64,
) -> Result<Frame, SplatError> {
    let cam = CameraModel::new(rig.intrinsics, rig.camera_pose(body_pose))?;
    let mut frame = rasterize(scene, &cam, opts)?;
    frame.timestamp = timestamp;
    Ok(frame)
}
