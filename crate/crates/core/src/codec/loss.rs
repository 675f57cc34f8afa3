//! Rate-distortion training objective.
//!
//! `D` sums, over the coded layers, the mean squared YUV error (0-255
//! scale, summed over channels) of the layer's points. Rates are bits per
//! input point: `entropy_bits` covers every layer's latents under the
//! context model, `hyper_bits` the base latents given the hyper latent plus
//! the hyper latent under its factorized prior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{rgb_to_yuv, ColorSpace, PointCloud};
use crate::error::{Error, Result};
use crate::fs::GroupSpec;
use crate::layers::decompose_labels;
use crate::nn::{Graph, Network, ParamStore, Tensor, Var};

use super::layout::{cloud_normals, layer_members, LayerFeatures, LayerLayout};

#[derive(Debug, Clone)]
pub struct PreparedLayer {
    pub layout: LayerLayout,
    pub features: LayerFeatures,
}

/// Decomposition, blocks and features of one training cloud, computed once.
#[derive(Debug, Clone)]
pub struct PreparedCloud {
    pub points: usize,
    /// Index `l - 1`; `None` for layers that code no points.
    pub layers: Vec<Option<PreparedLayer>>,
}

impl PreparedCloud {
    pub fn new(pc: &PointCloud, num_layers: usize, spec: &GroupSpec) -> Result<Self> {
        pc.expect_colorspace(ColorSpace::Rgb8)?;
        if pc.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let labels = decompose_labels(pc, num_layers, spec)?;
        let members = layer_members(pc.geometry(), &labels, num_layers);
        let yuv = rgb_to_yuv(pc)?;
        let normals = cloud_normals(pc)?;
        let layers = members
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if m.is_empty() {
                    return Ok(None);
                }
                let layout = LayerLayout::build(pc.geometry(), pc.bitdepth(), i + 1, m)?;
                let features = LayerFeatures::build(&layout, yuv.colors(), &normals)?;
                Ok(Some(PreparedLayer { layout, features }))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            points: pc.len(),
            layers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Uniform noise in `[-0.5, 0.5)`, scaled by the step sizes inside the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LossNoise {
    pub latents: Vec<Option<Tensor>>,
    pub hyper: Tensor,
}

impl LossNoise {
    pub fn sample(prep: &PreparedCloud, net: &Network, rng: &mut impl Rng) -> Self {
        let d = net.config.latent_dim;
        let mut uniform = |r: usize, c: usize| {
            Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen::<f64>() - 0.5).collect())
                .expect("shape matches")
        };
        let latents = prep
            .layers
            .iter()
            .map(|l| l.as_ref().map(|l| uniform(l.layout.blocks, d)))
            .collect();
        let hyper = uniform(1, net.config.hyper_dim);
        Self { latents, hyper }
    }

    pub fn zeros(prep: &PreparedCloud, net: &Network) -> Self {
        Self {
            latents: prep
                .layers
                .iter()
                .map(|l| l.as_ref().map(|l| Tensor::zeros(l.layout.blocks, net.config.latent_dim)))
                .collect(),
            hyper: Tensor::zeros(1, net.config.hyper_dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Replaces the reconstruction with the target, isolating the rate terms.
    pub identity_reconstruction: bool,
}

impl LossOptions {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            identity_reconstruction: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub distortion: Var,
    pub entropy_bits: Var,
    pub hyper_bits: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RDLossBreakdown {
    pub distortion: f64,
    pub entropy_bits: f64,
    pub hyper_bits: f64,
    pub total: f64,
}

impl RDLossBreakdown {
    pub fn combine(distortion: f64, entropy_bits: f64, hyper_bits: f64, opts: &LossOptions) -> Self {
        Self {
            distortion,
            entropy_bits,
            hyper_bits,
            total: distortion + opts.lambda1 * entropy_bits + opts.lambda2 * hyper_bits,
        }
    }
}

fn add_all(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut acc = g.input(Tensor::scalar(0.0));
    for &t in terms {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Builds the training loss in `g` (noise proxy for quantization).
pub fn loss_graph(
    g: &mut Graph,
    net: &Network,
    prep: &PreparedCloud,
    noise: &LossNoise,
    opts: &LossOptions,
) -> Result<LossVars> {
    let nl = net.config.layers;
    if prep.num_layers() != nl {
        return Err(Error::ConfigMismatch(format!(
            "cloud prepared for {} layers, model has {nl}",
            prep.num_layers()
        )));
    }
    let mut ys: Vec<Option<Var>> = vec![None; nl];
    for (i, layer) in prep.layers.iter().enumerate() {
        if let Some(p) = layer {
            let x = g.input(p.features.feats.clone());
            let n = g.input(p.features.normals.clone());
            ys[i] = Some(net.fnet(g, i + 1, x, n, &p.layout.mask)?);
        }
    }

    let mut hyper_terms = Vec::new();
    let z_tilde = match ys[nl - 1] {
        Some(base) => {
            let z = net.hyper_encode(g, base)?;
            let u = g.input(noise.hyper.clone());
            let zt = g.add(z, u)?;
            let (mean, scale) = net.prior(g);
            let bits = g.gaussian_bits(zt, mean, scale)?;
            hyper_terms.push(g.sum(bits));
            zt
        }
        None => g.input(Tensor::zeros(1, net.config.hyper_dim)),
    };
    let h = net.hyper_decode(g, z_tilde)?;

    let mut distortion_terms = Vec::new();
    let mut entropy_terms = Vec::new();
    for (i, layer) in prep.layers.iter().enumerate() {
        let (Some(p), Some(y)) = (layer, ys[i]) else { continue };
        let l = i + 1;
        let u = noise.latents[i]
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch(format!("no noise for layer {l}")))?;
        let a = net.adapter(g, l, h)?;
        let delta = net.delta(g, l, a)?;
        let delta_rows = g.repeat_rows(delta, p.layout.blocks)?;
        let uv = g.input(u.clone());
        let offset = g.mul(uv, delta_rows)?;
        let y_tilde = g.add(y, offset)?;
        let ctx = net.context(g, l, y_tilde)?;
        let (mu, b) = net.param_head(g, l, ctx, a)?;
        let bits = g.laplace_bits(y_tilde, mu, b, delta_rows)?;
        let bits = g.sum(bits);
        entropy_terms.push(bits);
        if l == nl {
            hyper_terms.push(bits);
        }

        let target = g.input(p.features.target.clone());
        let recon = if opts.identity_reconstruction {
            target
        } else {
            let rel = g.input(p.layout.rel_pos.clone());
            net.synthesize(g, l, y_tilde, rel, &p.layout.mask)?
        };
        let diff = g.sub(recon, target)?;
        let diff = g.mask_rows(diff, p.layout.mask.clone())?;
        let sq = g.mul(diff, diff)?;
        let s = g.sum(sq);
        distortion_terms.push(g.scale(s, 1.0 / p.layout.points as f64));
    }

    let per_point = 1.0 / prep.points as f64;
    let distortion = add_all(g, &distortion_terms)?;
    let entropy = add_all(g, &entropy_terms)?;
    let entropy_bits = g.scale(entropy, per_point);
    let hyper = add_all(g, &hyper_terms)?;
    let hyper_bits = g.scale(hyper, per_point);
    let we = g.scale(entropy_bits, opts.lambda1);
    let wh = g.scale(hyper_bits, opts.lambda2);
    let total = add_all(g, &[distortion, we, wh])?;
    Ok(LossVars {
        distortion,
        entropy_bits,
        hyper_bits,
        total,
    })
}

fn breakdown(g: &Graph, v: &LossVars) -> RDLossBreakdown {
    RDLossBreakdown {
        distortion: g.value(v.distortion).item(),
        entropy_bits: g.value(v.entropy_bits).item(),
        hyper_bits: g.value(v.hyper_bits).item(),
        total: g.value(v.total).item(),
    }
}

/// Loss value with freshly sampled quantization noise.
pub fn rd_loss(
    prep: &PreparedCloud,
    net: &Network,
    store: &ParamStore,
    opts: &LossOptions,
    rng: &mut impl Rng,
) -> Result<RDLossBreakdown> {
    let noise = LossNoise::sample(prep, net, rng);
    let mut g = Graph::with_params(store);
    let v = loss_graph(&mut g, net, prep, &noise, opts)?;
    Ok(breakdown(&g, &v))
}

/// Loss and parameter gradients for the given noise draw.
pub fn rd_loss_with_grads(
    prep: &PreparedCloud,
    net: &Network,
    store: &ParamStore,
    noise: &LossNoise,
    opts: &LossOptions,
) -> Result<(RDLossBreakdown, Vec<Tensor>)> {
    let mut g = Graph::with_params(store);
    let v = loss_graph(&mut g, net, prep, noise, opts)?;
    let b = breakdown(&g, &v);
    let grads = g.backward(v.total)?;
    Ok((b, grads.params(store)))
}
