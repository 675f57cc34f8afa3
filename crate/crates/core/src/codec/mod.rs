//! End-to-end codec: stream format, encoder/decoder, training objective and
//! loop.

pub mod bitstream;
pub mod layout;
pub mod loss;
pub mod pipeline;
pub mod synthetic;
pub mod train;

pub use bitstream::{ChunkKind, Header, Stream};
pub use loss::{rd_loss, LossOptions, PreparedCloud, RDLossBreakdown};
pub use pipeline::{decode, encode, scatter_colors, stream_prefix_len, Decoded, EncodeOptions, Encoded};
pub use synthetic::{synthetic_cloud, SyntheticSpec};
pub use train::{TrainConfig, TrainState, Trainer, LAMBDAS};

use serde::{Deserialize, Serialize};

use crate::cloud::{map_attributes, PointCloud};
use crate::error::Result;
use crate::metrics::{psnr_yuv, YuvPsnr};
use crate::nn::ModelWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub layer: usize,
    pub bytes: usize,
    pub bpp: f64,
    pub psnr: YuvPsnr,
}

/// Rate and quality of `P_hat_l` for every layer, from one encoding. Rate
/// counts the stream prefix needed for the layer over all input points;
/// quality compares the points the layer covers with the original.
pub fn rd_points(pc: &PointCloud, weights: &ModelWeights, opts: &EncodeOptions) -> Result<Vec<RdPoint>> {
    let enc = encode(pc, weights, opts)?;
    let nl = weights.config().layers;
    (1..=nl)
        .rev()
        .map(|l| {
            let n = enc.prefix_len(l);
            let dec = decode(&enc.bytes[..n], pc, weights, l)?;
            let covered: Vec<usize> = (0..pc.len()).filter(|&i| dec.labels[i] as usize >= l).collect();
            let reference = map_attributes(pc, &covered)?;
            Ok(RdPoint {
                layer: l,
                bytes: n,
                bpp: (n * 8) as f64 / pc.len() as f64,
                psnr: psnr_yuv(&reference, &dec.cloud)?,
            })
        })
        .collect()
}

pub fn rd_point(pc: &PointCloud, weights: &ModelWeights, opts: &EncodeOptions, upto_layer: usize) -> Result<RdPoint> {
    let points = rd_points(pc, weights, opts)?;
    points
        .into_iter()
        .find(|p| p.layer == upto_layer)
        .ok_or_else(|| crate::Error::InvalidArgument(format!("layer {upto_layer} out of range")))
}
