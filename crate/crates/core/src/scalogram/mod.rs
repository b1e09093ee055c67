//! Time-frequency diagrams: a discretized continuous wavelet transform with a
//! sampled db4 wavelet, stored one scale per row, and its 8-bit rendering.

mod cwt;
mod image;
mod wavelet;

pub use cwt::{cwt, cwt_strided, Scalogram};
pub use image::{
    read_f32, read_pgm, to_grayscale, write_f32, write_pgm, F32Sidecar, GrayImage,
};
pub use wavelet::{daubechies_filter, quadrature_mirror, WaveletTable};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalogramConfig {
    /// Rows use scales `1, 2, ..., scale_count` (in samples).
    pub scale_count: usize,
    /// Cascade refinements for the wavelet table.
    pub iterations: u32,
    /// Column spacing in samples.
    pub stride: usize,
}

impl Default for ScalogramConfig {
    fn default() -> Self {
        Self {
            scale_count: 64,
            iterations: 10,
            stride: 1,
        }
    }
}

impl ScalogramConfig {
    pub fn scales(&self) -> Vec<f64> {
        (1..=self.scale_count).map(|j| j as f64).collect()
    }
}
