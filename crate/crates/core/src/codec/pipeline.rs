//! Encoder and progressive decoder.

use crate::cloud::{quantize_channel, rgb_to_yuv, yuv_pixel_to_rgb, ColorSpace, PointCloud};
use crate::entropy::{decode_mask, decode_symbol, encode_mask, encode_symbol, GaussianModel, LaplaceModel};
use crate::entropy::{RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};
use crate::fs::GroupSpec;
use crate::layers::decompose_labels;
use crate::morton;
use crate::nn::model::{condition_layers, LayerConditioning, RowPredictor};
use crate::nn::quant::quantize_index;
use crate::nn::{Graph, ModelWeights, Tensor};

use super::bitstream::{push_chunk, ChunkKind, Header, Stream};
use super::layout::{cloud_normals, layer_members, LayerFeatures, LayerLayout};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeOptions {
    pub spec: GroupSpec,
    pub lambda_index: u8,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            spec: GroupSpec::default(),
            lambda_index: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub header: Header,
    /// Each chunk with the byte offset just past it.
    pub chunks: Vec<(ChunkKind, usize)>,
    /// Coded bin indices per layer (index `l - 1`), row-major.
    pub latents: Vec<Vec<i64>>,
    pub hyper: Vec<i64>,
}

impl Encoded {
    /// Length of the shortest prefix that reconstructs `P_layer`.
    pub fn prefix_len(&self, layer: usize) -> usize {
        prefix_len(self.header.encoded_len(), &self.chunks, layer)
    }
}

fn prefix_len(header_len: usize, chunks: &[(ChunkKind, usize)], layer: usize) -> usize {
    chunks
        .iter()
        .filter(|(k, _)| !matches!(k, ChunkKind::Latent(l) if *l < layer))
        .map(|&(_, end)| end)
        .max()
        .unwrap_or(header_len)
}

#[derive(Debug, Clone)]
pub struct Decoded {
    /// `P_hat_l` as RGB8, points in the order of the supplied geometry.
    pub cloud: PointCloud,
    /// Full-cloud layer label of every point of the supplied geometry.
    pub labels: Vec<u8>,
    pub latents: Vec<Option<Vec<i64>>>,
    pub hyper: Vec<i64>,
}

fn check_weights(weights: &ModelWeights) -> Result<()> {
    weights.config().validate()
}

fn prior_params(weights: &ModelWeights) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::with_params(weights.params());
    let (m, s) = weights.network().prior(&mut g);
    (g.value(m).data().to_vec(), g.value(s).data().to_vec())
}

/// Previous rows for the context, most recent last.
fn window(rows: &[Vec<f64>], window: usize) -> Vec<&[f64]> {
    rows[rows.len().saturating_sub(window)..]
        .iter()
        .map(Vec::as_slice)
        .collect()
}

pub fn encode(pc: &PointCloud, weights: &ModelWeights, opts: &EncodeOptions) -> Result<Encoded> {
    pc.expect_colorspace(ColorSpace::Rgb8)?;
    if pc.is_empty() {
        return Err(Error::EmptyCloud);
    }
    check_weights(weights)?;
    let net = weights.network();
    let store = weights.params();
    let cfg = net.config.clone();
    let nl = cfg.layers;

    let labels = decompose_labels(pc, nl, &opts.spec)?;
    let members = layer_members(pc.geometry(), &labels, nl);
    let counts: Vec<u32> = members.iter().map(|m| m.len() as u32).collect();
    let header = Header::new(pc.bitdepth(), &opts.spec, weights.hash(), opts.lambda_index, counts)?;
    let mut bytes = Vec::new();
    header.write(&mut bytes);
    let mut chunks = Vec::new();

    let mut remaining = morton::morton_order(pc.geometry());
    for l in (2..=nl).rev() {
        if header.mask_needed(l) {
            let mask: Vec<bool> = remaining.iter().map(|&i| labels[i] as usize == l).collect();
            let mut enc = RangeEncoder::new();
            encode_mask(&mut enc, &mask)?;
            push_chunk(&mut bytes, &enc.finish())?;
            chunks.push((ChunkKind::Mask(l), bytes.len()));
        }
        remaining.retain(|&i| labels[i] as usize != l);
    }

    let yuv = rgb_to_yuv(pc)?;
    let normals = cloud_normals(pc)?;
    let mut latents_y: Vec<Option<Tensor>> = vec![None; nl];
    for l in 1..=nl {
        if members[l - 1].is_empty() {
            continue;
        }
        let layout = LayerLayout::build(pc.geometry(), pc.bitdepth(), l, &members[l - 1])?;
        let f = LayerFeatures::build(&layout, yuv.colors(), &normals)?;
        let mut g = Graph::with_params(store);
        let x = g.input(f.feats);
        let n = g.input(f.normals);
        let y = net.fnet(&mut g, l, x, n, &layout.mask)?;
        latents_y[l - 1] = Some(g.value(y).clone());
    }

    let mut hyper = vec![0i64; cfg.hyper_dim];
    if let Some(base) = &latents_y[nl - 1] {
        let mut g = Graph::with_params(store);
        let y = g.input(base.clone());
        let z = net.hyper_encode(&mut g, y)?;
        hyper = g
            .value(z)
            .data()
            .iter()
            .map(|v| v.round_ties_even() as i64)
            .collect();
        let (mean, scale) = prior_params(weights);
        let mut enc = RangeEncoder::new();
        for (c, &k) in hyper.iter().enumerate() {
            encode_symbol(&mut enc, &GaussianModel::new(mean[c], scale[c])?, k)?;
        }
        push_chunk(&mut bytes, &enc.finish())?;
        chunks.push((ChunkKind::Hyper, bytes.len()));
    }
    let z_hat = Tensor::from_vec(1, cfg.hyper_dim, hyper.iter().map(|&k| k as f64).collect())?;
    let cond = condition_layers(net, store, &z_hat)?;

    let mut latents = vec![Vec::new(); nl];
    for l in (1..=nl).rev() {
        let Some(y) = &latents_y[l - 1] else { continue };
        let LayerConditioning { adapted, delta } = cond[l - 1].clone();
        let predictor = RowPredictor::new(net, store, l, adapted);
        let mut enc = RangeEncoder::new();
        let mut decoded: Vec<Vec<f64>> = Vec::with_capacity(y.rows());
        let mut idx = Vec::with_capacity(y.len());
        for r in 0..y.rows() {
            let (mu, b) = predictor.predict(&window(&decoded, cfg.context_window))?;
            let mut row = Vec::with_capacity(cfg.latent_dim);
            for c in 0..cfg.latent_dim {
                let k = quantize_index(y.get(r, c), delta[c])?;
                encode_symbol(&mut enc, &LaplaceModel::new(mu[c], b[c], delta[c])?, k)?;
                row.push(delta[c] * k as f64);
                idx.push(k);
            }
            decoded.push(row);
        }
        push_chunk(&mut bytes, &enc.finish())?;
        chunks.push((ChunkKind::Latent(l), bytes.len()));
        latents[l - 1] = idx;
    }
    Ok(Encoded {
        bytes,
        header,
        chunks,
        latents,
        hyper,
    })
}

/// Decodes `P_hat_upto_layer` given the full-cloud geometry (colors of
/// `geometry` are ignored).
pub fn decode(bytes: &[u8], geometry: &PointCloud, weights: &ModelWeights, upto_layer: usize) -> Result<Decoded> {
    let stream = Stream::parse(bytes)?;
    let h = &stream.header;
    check_weights(weights)?;
    let found = weights.hash();
    if h.model_hash != found {
        return Err(Error::HashMismatch {
            expected: h.model_hash,
            found,
        });
    }
    let net = weights.network();
    let store = weights.params();
    let cfg = net.config.clone();
    let nl = cfg.layers;
    if h.num_layers() != nl {
        return Err(Error::ConfigMismatch(format!(
            "stream has {} layers, model {}",
            h.num_layers(),
            nl
        )));
    }
    if upto_layer == 0 || upto_layer > nl {
        return Err(Error::InvalidArgument(format!("layer {upto_layer} outside 1..={nl}")));
    }
    if geometry.len() != h.points as usize || geometry.bitdepth() != h.bitdepth {
        return Err(Error::GeometryMismatch(format!(
            "stream has {} points at bit depth {}, geometry {} at {}",
            h.points,
            h.bitdepth,
            geometry.len(),
            geometry.bitdepth()
        )));
    }
    if !stream.can_decode(upto_layer) {
        return Err(Error::TruncatedStream(format!(
            "stream cannot reconstruct layer {upto_layer}; lowest available is {:?}",
            stream.decodable_upto()
        )));
    }
    let chunk = |k: ChunkKind| {
        stream
            .chunk(k)
            .ok_or_else(|| Error::TruncatedStream(format!("missing {k:?} chunk")))
    };

    let mut labels = vec![1u8; geometry.len()];
    let mut remaining = morton::morton_order(geometry.geometry());
    for l in (2..=nl).rev() {
        let count = h.count(l);
        let mask = if h.mask_needed(l) {
            let mut dec = RangeDecoder::new(chunk(ChunkKind::Mask(l))?)?;
            let m = decode_mask(&mut dec, remaining.len())?;
            if m.iter().filter(|&&b| b).count() != count {
                return Err(Error::CorruptChunk(format!("layer {l} mask disagrees with its count")));
            }
            m
        } else {
            vec![count > 0; remaining.len()]
        };
        let mut keep = Vec::with_capacity(remaining.len() - count);
        for (&i, &m) in remaining.iter().zip(&mask) {
            if m {
                labels[i] = l as u8;
            } else {
                keep.push(i);
            }
        }
        remaining = keep;
    }
    if remaining.len() != h.count(1) {
        return Err(Error::CorruptChunk("layer 1 count disagrees with the masks".into()));
    }
    let members = layer_members(geometry.geometry(), &labels, nl);

    let mut hyper = vec![0i64; cfg.hyper_dim];
    if h.count(nl) > 0 {
        let (mean, scale) = prior_params(weights);
        let mut dec = RangeDecoder::new(chunk(ChunkKind::Hyper)?)?;
        for (c, v) in hyper.iter_mut().enumerate() {
            *v = decode_symbol(&mut dec, &GaussianModel::new(mean[c], scale[c])?)?;
        }
    }
    let z_hat = Tensor::from_vec(1, cfg.hyper_dim, hyper.iter().map(|&k| k as f64).collect())?;
    let cond = condition_layers(net, store, &z_hat)?;

    let mut colors = vec![[0.0f64; 3]; geometry.len()];
    let mut latents = vec![None; nl];
    for l in (upto_layer..=nl).rev() {
        if members[l - 1].is_empty() {
            continue;
        }
        let layout = LayerLayout::build(geometry.geometry(), geometry.bitdepth(), l, &members[l - 1])?;
        let LayerConditioning { adapted, delta } = cond[l - 1].clone();
        let predictor = RowPredictor::new(net, store, l, adapted);
        let mut dec = RangeDecoder::new(chunk(ChunkKind::Latent(l))?)?;
        let mut decoded: Vec<Vec<f64>> = Vec::with_capacity(layout.blocks);
        let mut idx = Vec::with_capacity(layout.blocks * cfg.latent_dim);
        for _ in 0..layout.blocks {
            let (mu, b) = predictor.predict(&window(&decoded, cfg.context_window))?;
            let mut row = Vec::with_capacity(cfg.latent_dim);
            for c in 0..cfg.latent_dim {
                let k = decode_symbol(&mut dec, &LaplaceModel::new(mu[c], b[c], delta[c])?)?;
                row.push(delta[c] * k as f64);
                idx.push(k);
            }
            decoded.push(row);
        }
        let y = Tensor::from_vec(layout.blocks, cfg.latent_dim, decoded.concat())?;
        let mut g = Graph::with_params(store);
        let yv = g.input(y);
        let rel = g.input(layout.rel_pos.clone());
        let out = net.synthesize(&mut g, l, yv, rel, &layout.mask)?;
        scatter_colors(&layout, g.value(out), &mut colors)?;
        latents[l - 1] = Some(idx);
    }

    let keep: Vec<usize> = (0..geometry.len())
        .filter(|&i| labels[i] as usize >= upto_layer)
        .collect();
    let cloud = PointCloud::from_parts_unchecked(
        keep.iter().map(|&i| geometry.geometry()[i]).collect(),
        keep.iter().map(|&i| colors[i]).collect(),
        geometry.bitdepth(),
        ColorSpace::Rgb8,
    );
    Ok(Decoded {
        cloud,
        labels,
        latents,
        hyper,
    })
}

/// Writes the YUV slot rows of one layer back to its points as RGB8.
pub fn scatter_colors(layout: &LayerLayout, yuv_slots: &Tensor, colors: &mut [[f64; 3]]) -> Result<()> {
    if yuv_slots.rows() != layout.slots() || yuv_slots.cols() < 3 {
        return Err(Error::ShapeMismatch(format!(
            "{:?} slot colors for {} slots",
            yuv_slots.shape(),
            layout.slots()
        )));
    }
    let len = colors.len();
    for (s, (&p, &m)) in layout.slot_points.iter().zip(layout.mask.iter()).enumerate() {
        if m {
            let row = yuv_slots.row(s);
            let c = colors.get_mut(p).ok_or(Error::IndexOutOfRange { index: p, len })?;
            *c = yuv_pixel_to_rgb([row[0], row[1], row[2]]).map(quantize_channel);
        }
    }
    Ok(())
}

/// Length of the prefix of a (possibly truncated) stream that reconstructs
/// `P_layer`.
pub fn stream_prefix_len(bytes: &[u8], layer: usize) -> Result<usize> {
    let s = Stream::parse(bytes)?;
    if !s.can_decode(layer) {
        return Err(Error::TruncatedStream(format!("layer {layer} not decodable")));
    }
    let chunks: Vec<(ChunkKind, usize)> = s.chunks.iter().map(|(k, _)| *k).zip(s.chunk_ends.iter().copied()).collect();
    Ok(prefix_len(s.header_len, &chunks, layer))
}
