//! Per-layer block layout and network inputs.
//!
//! A layer's coded set is taken in Morton order of the full cloud, so the
//! encoder and a decoder holding only the geometry (in any point order)
//! build identical blocks and latent row sequences.

use std::sync::Arc;

use crate::cloud::PointCloud;
use crate::cloud::ColorSpace;
use crate::error::Result;
use crate::morton;
use crate::nn::{Mask, Tensor};
use crate::normals::NormalField;
use crate::octree::{partition_cloud, BlockSet, BLOCK_SIZE};

/// Geometry-only view of one layer: what both sides can compute.
#[derive(Debug, Clone)]
pub struct LayerLayout {
    pub layer: usize,
    /// Full-cloud index of every slot (padding repeats a real member).
    pub slot_points: Vec<usize>,
    pub mask: Mask,
    /// `(p - centroid) / edge` per slot, `[n_blocks * 8, 3]`.
    pub rel_pos: Tensor,
    pub blocks: usize,
    pub points: usize,
}

impl LayerLayout {
    /// `members` are full-cloud indices of the layer's coded set, in Morton
    /// order of the full cloud.
    pub fn build(full_geometry: &[[u32; 3]], bitdepth: u8, layer: usize, members: &[usize]) -> Result<Self> {
        let geometry: Vec<[u32; 3]> = members.iter().map(|&i| full_geometry[i]).collect();
        let n = geometry.len();
        let sub = PointCloud::from_parts_unchecked(geometry, vec![[0.0; 3]; n], bitdepth, ColorSpace::Rgb8);
        let set: BlockSet = if n == 0 { BlockSet::default() } else { partition_cloud(&sub)? };
        let mut slot_points = Vec::with_capacity(set.len() * BLOCK_SIZE);
        let mut mask = Vec::with_capacity(set.len() * BLOCK_SIZE);
        let mut rel = Vec::with_capacity(set.len() * BLOCK_SIZE * 3);
        for b in &set.blocks {
            let e = f64::from(b.edge);
            for (&s, &m) in b.slots.iter().zip(&b.mask) {
                slot_points.push(members[s]);
                mask.push(m);
                let p = sub.geometry()[s];
                rel.extend((0..3).map(|a| (f64::from(p[a]) - b.centroid[a]) / e));
            }
        }
        Ok(Self {
            layer,
            blocks: set.len(),
            points: n,
            rel_pos: Tensor::from_vec(slot_points.len(), 3, rel)?,
            mask: Arc::from(mask),
            slot_points,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    pub fn slots(&self) -> usize {
        self.slot_points.len()
    }
}

/// Encoder-side tensors of one layer.
#[derive(Debug, Clone)]
pub struct LayerFeatures {
    /// `[yuv / 255 - 0.5, rel_pos]` per slot.
    pub feats: Tensor,
    pub normals: Tensor,
    /// YUV colors per slot on the 0-255 scale.
    pub target: Tensor,
}

impl LayerFeatures {
    pub fn build(layout: &LayerLayout, yuv: &[[f64; 3]], normals: &NormalField) -> Result<Self> {
        let s = layout.slots();
        let mut feats = Vec::with_capacity(s * 6);
        let mut nrm = Vec::with_capacity(s * 3);
        let mut target = Vec::with_capacity(s * 3);
        for (k, &i) in layout.slot_points.iter().enumerate() {
            feats.extend(yuv[i].iter().map(|c| c / 255.0 - 0.5));
            feats.extend_from_slice(layout.rel_pos.row(k));
            nrm.extend_from_slice(&normals.normals[i]);
            target.extend_from_slice(&yuv[i]);
        }
        Ok(Self {
            feats: Tensor::from_vec(s, 6, feats)?,
            normals: Tensor::from_vec(s, 3, nrm)?,
            target: Tensor::from_vec(s, 3, target)?,
        })
    }
}

/// Full-cloud indices per layer (index `l - 1`), each in Morton order.
pub fn layer_members(geometry: &[[u32; 3]], labels: &[u8], num_layers: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); num_layers];
    for i in morton::morton_order(geometry) {
        out[labels[i] as usize - 1].push(i);
    }
    out
}

/// Normals for the analysis networks; clouds too small for a neighborhood
/// get zeros.
pub fn cloud_normals(pc: &PointCloud) -> Result<NormalField> {
    let k = crate::normals::DEFAULT_NEIGHBORS.min(pc.len());
    if k < 3 {
        return Ok(NormalField::zeros(pc.len()));
    }
    crate::normals::estimate_normals(pc, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn random_geometry(seed: u64, n: usize) -> Vec<[u32; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut g = Vec::new();
        while g.len() < n {
            let p = [0, 1, 2].map(|_| rng.gen_range(0..64));
            if seen.insert(p) {
                g.push(p);
            }
        }
        g
    }

    #[test]
    fn layout_ignores_input_order() {
        let g = random_geometry(1, 300);
        let labels: Vec<u8> = (0..300).map(|i| (i % 2) as u8 + 1).collect();
        let members = layer_members(&g, &labels, 2);
        let a = LayerLayout::build(&g, 8, 2, &members[1]).unwrap();

        let perm: Vec<usize> = (0..300).rev().collect();
        let g2: Vec<[u32; 3]> = perm.iter().map(|&i| g[i]).collect();
        let l2: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        let m2 = layer_members(&g2, &l2, 2);
        let b = LayerLayout::build(&g2, 8, 2, &m2[1]).unwrap();
        let pa: Vec<[u32; 3]> = a.slot_points.iter().map(|&i| g[i]).collect();
        let pb: Vec<[u32; 3]> = b.slot_points.iter().map(|&i| g2[i]).collect();
        assert_eq!(pa, pb);
        assert_eq!(a.rel_pos, b.rel_pos);
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn every_member_has_one_real_slot() {
        let g = random_geometry(2, 500);
        let members: Vec<usize> = (0..500).collect();
        let l = LayerLayout::build(&g, 8, 1, &members).unwrap();
        let mut real: Vec<usize> = l
            .slot_points
            .iter()
            .zip(l.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&p, _)| p)
            .collect();
        real.sort_unstable();
        assert_eq!(real, members);
        assert_eq!(l.slots(), l.blocks * BLOCK_SIZE);
        assert!(l.rel_pos.data().iter().all(|v| v.abs() <= 1.0));
        assert!(LayerLayout::build(&g, 8, 1, &[]).unwrap().is_empty());
    }
}
