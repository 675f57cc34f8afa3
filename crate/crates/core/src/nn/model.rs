//! The full set of networks: per-layer analysis (FNet) and synthesis
//! (ReFNet) stacks, a shared reconstruction head, the hyper
//! encoder/decoder with its factorized prior, and per-layer entropy
//! parameter heads with context and adaptive step sizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{GeometryRefine, Linear, NeighborConv, OffsetAttention};
use super::graph::{Graph, Mask, Var};
use super::params::ParamStore;
use super::quant::{DELTA_MAX, DELTA_MIN};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::layers::check_layer_count;
use crate::octree::BLOCK_SIZE;

/// Clamp range of the Laplace log-scale: scale stays in `[1e-6, 1e3]`.
pub const LOG_SCALE_MIN: f64 = -13.815_510_557_964_274;
pub const LOG_SCALE_MAX: f64 = 6.907_755_278_982_137;

/// Input features per slot: three centered color channels and the slot
/// position relative to the block centroid.
pub const INPUT_FEATURES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layers: usize,
    /// Conv-block count of FNet-l / ReFNet-l, strictly increasing.
    pub depths: Vec<usize>,
    pub width: usize,
    pub latent_dim: usize,
    pub hyper_dim: usize,
    pub hyper_features: usize,
    pub adapter_dim: usize,
    pub context_dim: usize,
    pub context_window: usize,
    pub heads: usize,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            depths: vec![2, 3, 4, 5],
            width: 64,
            latent_dim: 32,
            hyper_dim: 16,
            hyper_features: 64,
            adapter_dim: 32,
            context_dim: 32,
            context_window: 4,
            heads: 1,
            delta_min: DELTA_MIN,
            delta_max: DELTA_MAX,
        }
    }
}

impl NetworkConfig {
    /// Narrow variant that trains in minutes on one core.
    pub fn toy() -> Self {
        Self {
            width: 16,
            latent_dim: 8,
            hyper_dim: 4,
            hyper_features: 16,
            adapter_dim: 8,
            context_dim: 8,
            ..Self::default()
        }
    }

    /// Same widths with `layers` layers and depths `2, 3, ..., layers + 1`.
    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self.depths = (2..layers + 2).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_layer_count(self.layers)?;
        if self.depths.len() != self.layers {
            return Err(Error::ConfigMismatch(format!(
                "{} depths for {} layers",
                self.depths.len(),
                self.layers
            )));
        }
        if self.depths[0] == 0 || self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ConfigMismatch(format!(
                "depths {:?} must be positive and strictly increasing",
                self.depths
            )));
        }
        let dims = [
            self.width,
            self.latent_dim,
            self.hyper_dim,
            self.hyper_features,
            self.adapter_dim,
            self.context_dim,
            self.context_window,
        ];
        if dims.contains(&0) {
            return Err(Error::ConfigMismatch("zero-width dimension".into()));
        }
        if self.heads != 1 {
            return Err(Error::ConfigMismatch(format!(
                "{} attention heads; only 1 is supported",
                self.heads
            )));
        }
        if !(self.delta_min > 0.0 && self.delta_min < self.delta_max) {
            return Err(Error::ConfigMismatch(format!(
                "step range [{}, {}]",
                self.delta_min, self.delta_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNets {
    pub fnet_convs: Vec<NeighborConv>,
    pub fnet_attn: OffsetAttention,
    pub fnet_refine: GeometryRefine,
    pub fnet_head: Linear,
    pub refnet_in: Linear,
    pub refnet_convs: Vec<NeighborConv>,
    pub context: Linear,
    pub adapter: Linear,
    pub head_hidden: Linear,
    pub head_mu: Linear,
    pub head_log_scale: Linear,
    pub hsq: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub layers: Vec<LayerNets>,
    pub recon_attn: OffsetAttention,
    pub recon_head: Linear,
    pub hyper_enc: [Linear; 2],
    pub hyper_dec: [Linear; 2],
    pub prior_mean: super::params::ParamId,
    pub prior_log_scale: super::params::ParamId,
}

/// Initial bias of the step-size head; `sigmoid(-2)` gives steps near 0.5.
const HSQ_BIAS_INIT: f64 = -2.0;

impl Network {
    /// Registers every parameter of `config` into `store` in a fixed order.
    pub fn register(config: &NetworkConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let mut layers = Vec::with_capacity(c.layers);
        for l in 1..=c.layers {
            let depth = c.depths[l - 1];
            let p = |s: &str| format!("layer{l}.{s}");
            let mut fnet_convs = Vec::with_capacity(depth);
            for i in 0..depth {
                let fan_in = if i == 0 { INPUT_FEATURES } else { c.width };
                fnet_convs.push(NeighborConv::register(store, &p(&format!("fnet.conv{i}")), fan_in, c.width, rng)?);
            }
            let fnet_attn = OffsetAttention::register(store, &p("fnet.attn"), c.width, rng)?;
            let fnet_refine = GeometryRefine::register(store, &p("fnet.refine"), c.width, rng)?;
            let fnet_head = Linear::register(store, &p("fnet.head"), c.width, c.latent_dim, true, rng)?;
            let refnet_in = Linear::register(store, &p("refnet.in"), c.latent_dim, c.width, true, rng)?;
            let mut refnet_convs = Vec::with_capacity(depth);
            for i in 0..depth {
                let fan_in = if i == 0 { c.width + 3 } else { c.width };
                refnet_convs.push(NeighborConv::register(store, &p(&format!("refnet.conv{i}")), fan_in, c.width, rng)?);
            }
            let context = Linear::register(
                store,
                &p("entropy.context"),
                c.context_window * c.latent_dim,
                c.context_dim,
                false,
                rng,
            )?;
            let adapter = Linear::register(store, &p("entropy.adapter"), c.hyper_features, c.adapter_dim, true, rng)?;
            let head_hidden = Linear::register(
                store,
                &p("entropy.hidden"),
                c.context_dim + c.adapter_dim,
                c.width,
                true,
                rng,
            )?;
            let head_mu = Linear::register(store, &p("entropy.mu"), c.width, c.latent_dim, true, rng)?;
            let head_log_scale = Linear::register(store, &p("entropy.log_scale"), c.width, c.latent_dim, true, rng)?;
            let hsq = Linear::register(store, &p("entropy.hsq"), c.adapter_dim, c.latent_dim, true, rng)?;
            if let Some(b) = hsq.b {
                *store.get_mut(b) = Tensor::filled(1, c.latent_dim, HSQ_BIAS_INIT);
            }
            layers.push(LayerNets {
                fnet_convs,
                fnet_attn,
                fnet_refine,
                fnet_head,
                refnet_in,
                refnet_convs,
                context,
                adapter,
                head_hidden,
                head_mu,
                head_log_scale,
                hsq,
            });
        }
        let recon_attn = OffsetAttention::register(store, "recon.attn", c.width, rng)?;
        let recon_head = Linear::register(store, "recon.head", c.width, 3, true, rng)?;
        if let Some(b) = recon_head.b {
            *store.get_mut(b) = Tensor::filled(1, 3, 0.5);
        }
        let hyper_enc = [
            Linear::register(store, "hyper.enc0", c.latent_dim, c.width, true, rng)?,
            Linear::register(store, "hyper.enc1", c.width, c.hyper_dim, true, rng)?,
        ];
        let hyper_dec = [
            Linear::register(store, "hyper.dec0", c.hyper_dim, c.width, true, rng)?,
            Linear::register(store, "hyper.dec1", c.width, c.hyper_features, true, rng)?,
        ];
        let prior_mean = store.add("hyper.prior.mean", Tensor::zeros(1, c.hyper_dim))?;
        let prior_log_scale = store.add("hyper.prior.log_scale", Tensor::zeros(1, c.hyper_dim))?;
        Ok(Self {
            config: config.clone(),
            layers,
            recon_attn,
            recon_head,
            hyper_enc,
            hyper_dec,
            prior_mean,
            prior_log_scale,
        })
    }

    fn layer(&self, layer: usize) -> Result<&LayerNets> {
        if layer == 0 || layer > self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} outside 1..={}",
                self.layers.len()
            )));
        }
        Ok(&self.layers[layer - 1])
    }

    /// Analysis network of layer `l`: slot features (`[n*8, 6]`) and
    /// normals (`[n*8, 3]`) to one latent row per block.
    pub fn fnet(&self, g: &mut Graph, layer: usize, feats: Var, normals: Var, mask: &Mask) -> Result<Var> {
        let nets = self.layer(layer)?;
        let mut f = feats;
        for conv in &nets.fnet_convs {
            f = conv.forward(g, f, mask, BLOCK_SIZE)?;
            f = g.relu(f);
        }
        f = nets.fnet_attn.forward(g, f, mask, BLOCK_SIZE)?;
        f = nets.fnet_refine.forward(g, f, normals, mask, BLOCK_SIZE)?;
        let head = nets.fnet_head.forward(g, f)?;
        g.mean_pool(head, mask.clone(), BLOCK_SIZE)
    }

    /// Synthesis of layer `l` followed by the shared reconstruction head:
    /// latent rows to per-slot colors on the 0-255 scale, unclamped.
    pub fn synthesize(&self, g: &mut Graph, layer: usize, latents: Var, rel_pos: Var, mask: &Mask) -> Result<Var> {
        let nets = self.layer(layer)?;
        let h = nets.refnet_in.forward(g, latents)?;
        let h = g.relu(h);
        let h = g.broadcast(h, BLOCK_SIZE);
        let mut f = g.concat_cols(&[h, rel_pos])?;
        for conv in &nets.refnet_convs {
            f = conv.forward(g, f, mask, BLOCK_SIZE)?;
            f = g.relu(f);
        }
        f = self.recon_attn.forward(g, f, mask, BLOCK_SIZE)?;
        let o = self.recon_head.forward(g, f)?;
        Ok(g.scale(o, 255.0))
    }

    /// Hyper analysis: per-row MLP on the base latents, averaged to one row.
    pub fn hyper_encode(&self, g: &mut Graph, base_latents: Var) -> Result<Var> {
        let n = g.shape(base_latents)[0];
        if n == 0 {
            return Err(Error::EmptyCloud);
        }
        let h = self.hyper_enc[0].forward(g, base_latents)?;
        let h = g.relu(h);
        let h = self.hyper_enc[1].forward(g, h)?;
        let avg = g.input(Tensor::filled(1, n, 1.0 / n as f64));
        g.matmul(avg, h)
    }

    pub fn hyper_decode(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let h = self.hyper_dec[0].forward(g, z)?;
        let h = g.relu(h);
        self.hyper_dec[1].forward(g, h)
    }

    /// Mean and scale rows of the factorized prior over `z`.
    pub fn prior(&self, g: &mut Graph) -> (Var, Var) {
        let m = g.param(self.prior_mean);
        let ls = g.param(self.prior_log_scale);
        (m, g.exp_clamped(ls, LOG_SCALE_MIN, LOG_SCALE_MAX))
    }

    pub fn adapter(&self, g: &mut Graph, layer: usize, hyper: Var) -> Result<Var> {
        self.layer(layer)?.adapter.forward(g, hyper)
    }

    /// Step sizes of layer `l` as one `[1, d_y]` row.
    pub fn delta(&self, g: &mut Graph, layer: usize, adapted: Var) -> Result<Var> {
        let x = self.layer(layer)?.hsq.forward(g, adapted)?;
        let s = g.sigmoid(x);
        let c = &self.config;
        let s = g.scale(s, c.delta_max - c.delta_min);
        Ok(g.add_scalar(s, c.delta_min))
    }

    /// Causal context of every row: a linear map over the previous
    /// `context_window` rows, zero-padded at the start.
    pub fn context(&self, g: &mut Graph, layer: usize, rows: Var) -> Result<Var> {
        let nets = self.layer(layer)?;
        let shifted: Vec<Var> = (1..=self.config.context_window)
            .map(|k| g.shift_rows(rows, k))
            .collect();
        let x = g.concat_cols(&shifted)?;
        nets.context.forward(g, x)
    }

    /// Laplace mean and scale from context rows and the (row-broadcast)
    /// adapted hyper features.
    pub fn param_head(&self, g: &mut Graph, layer: usize, context: Var, adapted: Var) -> Result<(Var, Var)> {
        let nets = self.layer(layer)?;
        let n = g.shape(context)[0];
        let a = g.repeat_rows(adapted, n)?;
        let x = g.concat_cols(&[context, a])?;
        let h = nets.head_hidden.forward(g, x)?;
        let h = g.relu(h);
        let mu = nets.head_mu.forward(g, h)?;
        let ls = nets.head_log_scale.forward(g, h)?;
        let b = g.exp_clamped(ls, LOG_SCALE_MIN, LOG_SCALE_MAX);
        Ok((mu, b))
    }
}

/// Per-layer quantities that depend only on the decoded hyper latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerConditioning {
    pub adapted: Tensor,
    pub delta: Vec<f64>,
}

/// Row-at-a-time evaluation of the entropy parameters, shared by encoder
/// and decoder so both see bitwise-identical values.
pub struct RowPredictor<'a> {
    net: &'a Network,
    store: &'a ParamStore,
    layer: usize,
    adapted: Tensor,
}

impl<'a> RowPredictor<'a> {
    pub fn new(net: &'a Network, store: &'a ParamStore, layer: usize, adapted: Tensor) -> Self {
        Self {
            net,
            store,
            layer,
            adapted,
        }
    }

    /// Mean and scale for the row after `previous` (most recent last).
    pub fn predict(&self, previous: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = &self.net.config;
        let w = c.context_window;
        let d = c.latent_dim;
        let mut ctx_in = vec![0.0; w * d];
        for k in 1..=w {
            if let Some(row) = previous.len().checked_sub(k).map(|i| previous[i]) {
                ctx_in[(k - 1) * d..k * d].copy_from_slice(row);
            }
        }
        let mut g = Graph::with_params(self.store);
        let x = g.input(Tensor::from_vec(1, w * d, ctx_in)?);
        let ctx = self.net.layer(self.layer)?.context.forward(&mut g, x)?;
        let a = g.input(self.adapted.clone());
        let (mu, b) = self.net.param_head(&mut g, self.layer, ctx, a)?;
        Ok((g.value(mu).data().to_vec(), g.value(b).data().to_vec()))
    }
}

/// Adapter output and step sizes of every layer from the decoded hyper
/// latent row.
pub fn condition_layers(net: &Network, store: &ParamStore, z_hat: &Tensor) -> Result<Vec<LayerConditioning>> {
    let mut g = Graph::with_params(store);
    let z = g.input(z_hat.clone());
    let h = net.hyper_decode(&mut g, z)?;
    (1..=net.config.layers)
        .map(|l| {
            let a = net.adapter(&mut g, l, h)?;
            let d = net.delta(&mut g, l, a)?;
            Ok(LayerConditioning {
                adapted: g.value(a).clone(),
                delta: g.value(d).data().to_vec(),
            })
        })
        .collect()
}
