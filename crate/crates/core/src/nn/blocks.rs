//! Network building blocks over a [`Graph`]. Each block owns parameter ids
//! registered in a [`ParamStore`] under a name prefix.

use rand::Rng;

use super::graph::{Graph, Mask, Var};
use super::params::{glorot, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), glorot(rng, fan_in, fan_out))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(1, fan_out))?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// `out_i = W_self f_i + W_neigh mean_{j != i, unpadded}(f_j) + bias`,
/// padded rows forced to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborConv {
    pub w_self: ParamId,
    pub w_neigh: ParamId,
    pub bias: ParamId,
}

impl NeighborConv {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            w_self: store.add(format!("{name}.w_self"), glorot(rng, fan_in, fan_out))?,
            w_neigh: store.add(format!("{name}.w_neigh"), glorot(rng, fan_in, fan_out))?,
            bias: store.add(format!("{name}.b"), Tensor::zeros(1, fan_out))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: &Mask, group: usize) -> Result<Var> {
        let ws = g.param(self.w_self);
        let wn = g.param(self.w_neigh);
        let b = g.param(self.bias);
        let own = g.matmul(x, ws)?;
        let nm = g.neighbor_mean(x, mask.clone(), group)?;
        let nb = g.matmul(nm, wn)?;
        let s = g.add(own, nb)?;
        let s = g.add_bias(s, b)?;
        g.mask_rows(s, mask.clone())
    }
}

/// `out = f + ReLU((f - attn(f)) W + b)` with single-head attention inside
/// each group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub lbr: Linear,
}

impl OffsetAttention {
    pub fn register(store: &mut ParamStore, name: &str, width: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            wq: store.add(format!("{name}.wq"), glorot(rng, width, width))?,
            wk: store.add(format!("{name}.wk"), glorot(rng, width, width))?,
            wv: store.add(format!("{name}.wv"), glorot(rng, width, width))?,
            lbr: Linear::register(store, &format!("{name}.lbr"), width, width, true, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, f: Var, mask: &Mask, group: usize) -> Result<Var> {
        let wq = g.param(self.wq);
        let wk = g.param(self.wk);
        let wv = g.param(self.wv);
        let q = g.matmul(f, wq)?;
        let k = g.matmul(f, wk)?;
        let v = g.matmul(f, wv)?;
        let attn = g.attention(q, k, v, mask.clone(), group)?;
        let offset = g.sub(f, attn)?;
        let h = self.lbr.forward(g, offset)?;
        let h = g.relu(h);
        let out = g.add(f, h)?;
        g.mask_rows(out, mask.clone())
    }
}

/// `out = f + NC2(ReLU(NC1([f, normals])))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryRefine {
    pub nc1: NeighborConv,
    pub nc2: NeighborConv,
}

impl GeometryRefine {
    pub fn register(store: &mut ParamStore, name: &str, width: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            nc1: NeighborConv::register(store, &format!("{name}.nc1"), width + 3, width, rng)?,
            nc2: NeighborConv::register(store, &format!("{name}.nc2"), width, width, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, f: Var, normals: Var, mask: &Mask, group: usize) -> Result<Var> {
        let x = g.concat_cols(&[f, normals])?;
        let h = self.nc1.forward(g, x, mask, group)?;
        let h = g.relu(h);
        let h = self.nc2.forward(g, h, mask, group)?;
        g.add(f, h)
    }
}
