//! Multi-layer decomposition `P_1 -> P_2 -> ... -> P_L` with residual sets,
//! and progressive recomposition.
//!
//! Every point carries a label: points of the residual `P_{l,res}` have
//! label `l`, base points have label `L`. A point belongs to `P_l` iff its
//! label is at least `l`. All layer clouds are subsequences of the input in
//! input order, which makes recomposition an exact inverse.

use crate::cloud::{map_attributes, PointCloud};
use crate::error::{Error, Result};
use crate::fs::{high_point_indices, GroupSpec};
use crate::morton;

pub const DEFAULT_LAYERS: usize = 4;
pub const MAX_LAYERS: usize = 6;

pub fn check_layer_count(num_layers: usize) -> Result<()> {
    if !(1..=MAX_LAYERS).contains(&num_layers) {
        return Err(Error::InvalidArgument(format!(
            "layer count {num_layers} outside 1..={MAX_LAYERS}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    num_layers: usize,
    base: PointCloud,
    residuals: Vec<PointCloud>,
    labels: Vec<u8>,
}

impl LayerStack {
    /// Builds a stack from per-point labels over `full` (labels in 1..=L).
    pub fn from_labels(full: &PointCloud, labels: Vec<u8>, num_layers: usize) -> Result<Self> {
        check_layer_count(num_layers)?;
        if labels.len() != full.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} points",
                labels.len(),
                full.len()
            )));
        }
        let mut per_layer: Vec<Vec<usize>> = vec![Vec::new(); num_layers];
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            if l == 0 || l > num_layers {
                return Err(Error::InvalidArgument(format!(
                    "label {l} outside 1..={num_layers}"
                )));
            }
            per_layer[l - 1].push(i);
        }
        let base = map_attributes(full, &per_layer[num_layers - 1])?;
        let residuals = per_layer[..num_layers - 1]
            .iter()
            .map(|idx| map_attributes(full, idx))
            .collect::<Result<_>>()?;
        Ok(Self {
            num_layers,
            base,
            residuals,
            labels,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn base(&self) -> &PointCloud {
        &self.base
    }

    /// `P_{l,res}` for `l` in `1..L`.
    pub fn residual(&self, layer: usize) -> Result<&PointCloud> {
        if layer == 0 || layer >= self.num_layers {
            return Err(Error::InvalidArgument(format!(
                "residual layer {layer} outside 1..{}",
                self.num_layers
            )));
        }
        Ok(&self.residuals[layer - 1])
    }

    pub fn residuals(&self) -> &[PointCloud] {
        &self.residuals
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The set coded at layer `l`: the residual for `l < L`, the base for `l = L`.
    pub fn coded_set(&self, layer: usize) -> Result<&PointCloud> {
        self.check_layer(layer)?;
        if layer == self.num_layers {
            Ok(&self.base)
        } else {
            Ok(&self.residuals[layer - 1])
        }
    }

    /// `|P_l|` for l = 1..=L.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_layers + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        let mut sizes = vec![0usize; self.num_layers];
        let mut acc = 0;
        for l in (1..=self.num_layers).rev() {
            acc += counts[l];
            sizes[l - 1] = acc;
        }
        sizes
    }

    /// First layer `l >= 2` whose point set is empty, if any.
    pub fn first_empty_layer(&self) -> Option<usize> {
        let sizes = self.layer_sizes();
        (2..=self.num_layers).find(|&l| sizes[l - 1] == 0)
    }

    /// Membership of `P_l` over the full geometry, in Morton order of `full`.
    pub fn layer_mask(&self, full: &PointCloud, layer: usize) -> Result<Vec<bool>> {
        self.check_layer(layer)?;
        self.check_full(full)?;
        Ok(morton::morton_order(full.geometry())
            .into_iter()
            .map(|i| self.labels[i] as usize >= layer)
            .collect())
    }

    /// `P_l` as a subsequence of the input.
    pub fn layer_cloud(&self, layer: usize) -> Result<PointCloud> {
        self.recompose(layer)
    }

    /// `P_L` plus every residual of layers `>= l`, in input order.
    pub fn recompose(&self, upto_layer: usize) -> Result<PointCloud> {
        self.check_layer(upto_layer)?;
        let mut cursors = vec![0usize; self.num_layers];
        let mut geometry = Vec::new();
        let mut colors = Vec::new();
        for &l in &self.labels {
            let l = l as usize;
            let source = if l == self.num_layers {
                &self.base
            } else {
                &self.residuals[l - 1]
            };
            let k = cursors[l - 1];
            cursors[l - 1] += 1;
            if l >= upto_layer {
                geometry.push(source.geometry()[k]);
                colors.push(source.colors()[k]);
            }
        }
        Ok(PointCloud::from_parts_unchecked(
            geometry,
            colors,
            self.base.bitdepth(),
            self.base.colorspace(),
        ))
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.num_layers {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} outside 1..={}",
                self.num_layers
            )));
        }
        Ok(())
    }

    fn check_full(&self, full: &PointCloud) -> Result<()> {
        if full.len() != self.labels.len() {
            return Err(Error::GeometryMismatch(format!(
                "cloud has {} points, stack has {}",
                full.len(),
                self.labels.len()
            )));
        }
        Ok(())
    }
}

/// Per-point labels from repeated frequency splitting. Once a split yields
/// no high points all deeper layers stay empty.
pub fn decompose_labels(pc: &PointCloud, num_layers: usize, spec: &GroupSpec) -> Result<Vec<u8>> {
    check_layer_count(num_layers)?;
    spec.validate()?;
    let mut labels = vec![num_layers as u8; pc.len()];
    let mut current: Vec<usize> = (0..pc.len()).collect();
    for layer in 1..num_layers {
        if current.is_empty() {
            break;
        }
        let sub = map_attributes(pc, &current)?;
        let (high, _) = high_point_indices(&sub, spec)?;
        let mut is_high = vec![false; current.len()];
        for &h in &high {
            is_high[h] = true;
        }
        for (k, &i) in current.iter().enumerate() {
            if !is_high[k] {
                labels[i] = layer as u8;
            }
        }
        current = high.iter().map(|&h| current[h]).collect();
    }
    Ok(labels)
}

pub fn decompose(pc: &PointCloud, num_layers: usize, spec: &GroupSpec) -> Result<LayerStack> {
    let labels = decompose_labels(pc, num_layers, spec)?;
    LayerStack::from_labels(pc, labels, num_layers)
}
