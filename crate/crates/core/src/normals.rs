//! Per-point normals from the covariance of the k nearest neighbors.
//!
//! Neighbors are found with an exact ring search over a uniform voxel grid;
//! candidates are ranked by (squared distance, Morton code), which makes the
//! result independent of the input point order. The query point counts as
//! one of its own `k` neighbors.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::morton;

pub const DEFAULT_NEIGHBORS: usize = 16;

/// Relative eigenvalue gap below which the smallest eigenspace counts as
/// multi-dimensional.
const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    pub normals: Vec<[f64; 3]>,
    /// Set where the neighborhood had no unique flattest direction
    /// (colinear or isotropic); the normal then follows the axis tie rule.
    pub degenerate: Vec<bool>,
}

impl NormalField {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// All-zero field for clouds too small to estimate anything.
    pub fn zeros(n: usize) -> Self {
        Self {
            normals: vec![[0.0; 3]; n],
            degenerate: vec![true; n],
        }
    }
}

struct Grid {
    cell: i64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    codes: Vec<u64>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl Grid {
    fn new(points: &[[u32; 3]], k: usize) -> Self {
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(i64::from(p[a]));
                hi[a] = hi[a].max(i64::from(p[a]));
            }
        }
        let volume: f64 = (0..3).map(|a| (hi[a] - lo[a] + 1) as f64).product();
        let per_cell = (volume * k as f64 / points.len() as f64).cbrt() / 2.0;
        let mut cell = (per_cell.ceil() as i64).max(1);
        let order = morton::morton_order(points);
        let extent = (0..3).map(|a| hi[a] - lo[a] + 1).max().unwrap_or(1);
        // surfaces leave most of the volume empty; grow the cells until the
        // occupied ones hold about k/2 points each
        let cells = loop {
            let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
            for &i in &order {
                let key = points[i].map(|v| i64::from(v) / cell);
                cells.entry(key).or_default().push(i);
            }
            if 2 * points.len() >= k * cells.len() || cell >= extent {
                break cells;
            }
            cell *= 2;
        };
        let codes = points.iter().map(morton::encode_point).collect();
        let lo = lo.map(|v| v / cell);
        let hi = hi.map(|v| v / cell);
        Self {
            cell,
            cells,
            codes,
            lo,
            hi,
        }
    }

    fn max_ring(&self, c: [i64; 3]) -> i64 {
        (0..3)
            .map(|a| (c[a] - self.lo[a]).max(self.hi[a] - c[a]))
            .max()
            .unwrap_or(0)
    }

    fn knn(&self, points: &[[u32; 3]], query: usize, k: usize) -> Vec<usize> {
        let q = points[query].map(i64::from);
        let c = q.map(|v| v / self.cell);
        let mut cand: Vec<(i64, u64, usize)> = Vec::new();
        let last = self.max_ring(c);
        for r in 0..=last {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(members) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &j in members {
                                let p = points[j].map(i64::from);
                                let d2 = (0..3).map(|a| (p[a] - q[a]).pow(2)).sum();
                                cand.push((d2, self.codes[j], j));
                            }
                        }
                    }
                }
            }
            if cand.len() >= k {
                cand.sort_unstable();
                // every unvisited point is at least r*cell + 1 away
                let bound = r * self.cell;
                if cand[k - 1].0 <= bound * bound {
                    break;
                }
            }
        }
        cand.sort_unstable();
        cand.truncate(k);
        cand.into_iter().map(|(_, _, j)| j).collect()
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix.
/// Returns eigenvalues ascending with eigenvectors as columns of the
/// corresponding entries.
pub(crate) fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off <= f64::EPSILON * 1e-3 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in &mut v {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]).then(i.cmp(&j)));
    let values = order.map(|i| a[i][i]);
    let vectors = order.map(|i| [v[0][i], v[1][i], v[2][i]]);
    (values, vectors)
}

fn orient(n: [f64; 3]) -> [f64; 3] {
    let mut best = 0;
    for a in 1..3 {
        if n[a].abs() > n[best].abs() {
            best = a;
        }
    }
    if n[best] < 0.0 {
        n.map(|v| -v)
    } else {
        n
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

/// Normal of a neighborhood; the flag marks a non-unique flattest direction.
pub(crate) fn neighborhood_normal(points: &[[f64; 3]]) -> ([f64; 3], bool) {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    mean = mean.map(|v| v / n);
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c] / n;
            }
        }
    }
    let (values, vectors) = symmetric_eigen3(cov);
    let tol = DEGENERACY_TOL * values[2].abs().max(f64::MIN_POSITIVE);
    let multiplicity = values.iter().filter(|&&l| l - values[0] <= tol).count();
    if multiplicity == 1 {
        return (orient(normalize(vectors[0])), false);
    }
    // Flattest eigenspace is at least 2-D: project the coordinate axes onto
    // it and take the first one that survives.
    let basis = &vectors[..multiplicity];
    for axis in 0..3 {
        let mut proj = [0.0; 3];
        for b in basis {
            let w = b[axis];
            for a in 0..3 {
                proj[a] += w * b[a];
            }
        }
        let norm2: f64 = proj.iter().map(|v| v * v).sum();
        if norm2 > 1e-6 {
            return (orient(normalize(proj)), true);
        }
    }
    ([0.0, 0.0, 1.0], true)
}

pub fn estimate_normals(pc: &PointCloud, k: usize) -> Result<NormalField> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("neighbor count {k} < 3")));
    }
    if pc.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} points is fewer than k = {k}",
            pc.len()
        )));
    }
    let points = pc.geometry();
    let grid = Grid::new(points, k);
    let (normals, degenerate) = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let nb: Vec<[f64; 3]> = grid
                .knn(points, i, k)
                .into_iter()
                .map(|j| points[j].map(f64::from))
                .collect();
            neighborhood_normal(&nb)
        })
        .unzip();
    Ok(NormalField {
        normals,
        degenerate,
    })
}
