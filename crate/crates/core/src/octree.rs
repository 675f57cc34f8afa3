//! Height-sorted patching and octree partitioning into fixed-width blocks.

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::morton;

pub const PATCH_SIZE: usize = 4096;
pub const BLOCK_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub patch_index: usize,
    pub points: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Point indices; padded slots repeat a real member.
    pub slots: [usize; BLOCK_SIZE],
    /// `true` for real points, `false` for padding.
    pub mask: [bool; BLOCK_SIZE],
    /// Mean position of the real members, in voxel units.
    pub centroid: [f64; 3],
    pub origin: [u32; 3],
    pub edge: u32,
}

impl Block {
    pub fn occupancy(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&s, _)| s)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockSet {
    pub blocks: Vec<Block>,
}

impl BlockSet {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.blocks.iter().map(Block::occupancy).sum()
    }
}

/// Sorts by (z, y, x, index) and cuts into runs of [`PATCH_SIZE`].
pub fn make_patches(pc: &PointCloud) -> Vec<Patch> {
    let g = pc.geometry();
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_unstable_by_key(|&i| (g[i][2], g[i][1], g[i][0], i));
    order
        .chunks(PATCH_SIZE)
        .enumerate()
        .map(|(patch_index, c)| Patch {
            patch_index,
            points: c.to_vec(),
        })
        .collect()
}

fn make_block(pc: &PointCloud, members: &[usize], origin: [u32; 3], edge: u32) -> Block {
    let g = pc.geometry();
    let n = members.len() as f64;
    let mut centroid = [0.0; 3];
    for &i in members {
        for (c, &v) in centroid.iter_mut().zip(&g[i]) {
            *c += f64::from(v);
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let dist = |i: usize| -> f64 {
        (0..3)
            .map(|a| (f64::from(g[i][a]) - centroid[a]).powi(2))
            .sum()
    };
    let mut nearest = members[0];
    for &i in &members[1..] {
        if dist(i) < dist(nearest) {
            nearest = i;
        }
    }
    let mut slots = [nearest; BLOCK_SIZE];
    let mut mask = [false; BLOCK_SIZE];
    for (k, &i) in members.iter().enumerate() {
        slots[k] = i;
        mask[k] = true;
    }
    Block {
        slots,
        mask,
        centroid,
        origin,
        edge,
    }
}

fn split(
    pc: &PointCloud,
    sorted: &[(u64, usize)],
    code_base: u64,
    level_bits: u32,
    origin: [u32; 3],
    out: &mut Vec<Block>,
) {
    if sorted.is_empty() {
        return;
    }
    let edge = 1u32 << level_bits;
    if sorted.len() <= BLOCK_SIZE || level_bits == 0 {
        let members: Vec<usize> = sorted.iter().map(|&(_, i)| i).collect();
        out.push(make_block(pc, &members, origin, edge));
        return;
    }
    let child_bits = level_bits - 1;
    let span = 1u64 << (3 * child_bits);
    let half = 1u32 << child_bits;
    let mut start = 0;
    for child in 0..8u64 {
        let hi = code_base + (child + 1) * span;
        let end = start + sorted[start..].partition_point(|&(c, _)| c < hi);
        let child_origin = [
            origin[0] + if child & 1 != 0 { half } else { 0 },
            origin[1] + if child & 2 != 0 { half } else { 0 },
            origin[2] + if child & 4 != 0 { half } else { 0 },
        ];
        split(
            pc,
            &sorted[start..end],
            code_base + child * span,
            child_bits,
            child_origin,
            out,
        );
        start = end;
    }
}

/// Recursive 8-way split of the patch's bounding cube until every leaf
/// holds at most [`BLOCK_SIZE`] points. Leaves come out in Morton order of
/// their origin; members inside a leaf are in Morton order.
pub fn build_octree(patch: &Patch, pc: &PointCloud) -> Result<BlockSet> {
    if patch.points.is_empty() {
        return Err(Error::InvalidArgument("empty patch".into()));
    }
    let g = pc.geometry();
    if let Some(&bad) = patch.points.iter().find(|&&i| i >= g.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: g.len(),
        });
    }
    let mut lo = [u32::MAX; 3];
    let mut hi = [0u32; 3];
    for &i in &patch.points {
        for a in 0..3 {
            lo[a] = lo[a].min(g[i][a]);
            hi[a] = hi[a].max(g[i][a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).max().unwrap_or(0) + 1;
    let edge = extent.next_power_of_two();
    let bits = edge.trailing_zeros();
    let mut sorted: Vec<(u64, usize)> = patch
        .points
        .iter()
        .map(|&i| {
            let p = g[i];
            (morton::encode(p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]), i)
        })
        .collect();
    sorted.sort_unstable();
    let mut blocks = Vec::new();
    split(pc, &sorted, 0, bits, lo, &mut blocks);
    Ok(BlockSet { blocks })
}

/// Blocks for every patch of `pc`, concatenated in patch order.
pub fn partition_cloud(pc: &PointCloud) -> Result<BlockSet> {
    let patches = make_patches(pc);
    let sets: Vec<BlockSet> = patches
        .par_iter()
        .map(|p| build_octree(p, pc))
        .collect::<Result<_>>()?;
    Ok(BlockSet {
        blocks: sets.into_iter().flat_map(|s| s.blocks).collect(),
    })
}
