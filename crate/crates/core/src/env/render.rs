use std::path::Path;

use nalgebra::Vector2;

use super::{CubeSpec, CubeState, EnvConfig};
use crate::error::{Error, Result};

pub const FRAME_SIZE: usize = 84;
pub const FRAME_CHANNELS: usize = 3;

const TABLE: [u8; 3] = [205, 205, 205];
const CIRCLE: [u8; 3] = [235, 110, 110];
const EFFECTOR: [u8; 3] = [30, 30, 30];

/// 84x84 RGB image, row-major HWC, row 0 at the far (+y) edge of the table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * FRAME_SIZE + col) * FRAME_CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            FRAME_SIZE as u32,
            FRAME_SIZE as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Runtime(format!("writing {}: {e}", path.display())))
    }
}

/// World coordinates of a pixel center.
pub(crate) fn pixel_center(config: &EnvConfig, row: usize, col: usize) -> Vector2<f64> {
    let h = config.table_half_extent;
    let scale = 2.0 * h / FRAME_SIZE as f64;
    Vector2::new(-h + (col as f64 + 0.5) * scale, h - (row as f64 + 0.5) * scale)
}

pub(crate) fn render<'a>(
    config: &EnvConfig,
    effector: Vector2<f64>,
    cubes: impl Iterator<Item = (&'a CubeSpec, &'a CubeState)> + Clone,
) -> Frame {
    let center = Vector2::new(config.circle_center[0], config.circle_center[1]);
    let mut pixels = Vec::with_capacity(FRAME_SIZE * FRAME_SIZE * FRAME_CHANNELS);
    for row in 0..FRAME_SIZE {
        for col in 0..FRAME_SIZE {
            let p = pixel_center(config, row, col);
            let mut color = if (p - center).norm() <= config.circle_radius { CIRCLE } else { TABLE };
            for (spec, state) in cubes.clone() {
                let h = spec.side / 2.0;
                let d = p - state.position;
                if d.x.abs() <= h && d.y.abs() <= h {
                    color = spec.color;
                }
            }
            if (p - effector).norm() <= config.effector_radius {
                color = EFFECTOR;
            }
            pixels.extend_from_slice(&color);
        }
    }
    Frame { pixels }
}
