//! Procedurally colored primitives used as training and test clouds.

use std::collections::HashSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{ColorSpace, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub points: usize,
    pub bitdepth: u8,
    pub primitives: usize,
    /// Standard deviation of the per-point color noise.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            points: 8192,
            bitdepth: 10,
            primitives: 4,
            noise: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Plane { u: [f64; 3], v: [f64; 3], side: f64 },
    Sphere { radius: f64 },
    Cube { half: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Primitive {
    shape: Shape,
    center: [f64; 3],
    base: [f64; 3],
    gradient: [f64; 3],
    direction: [f64; 3],
    extent: f64,
}

fn unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let t: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [r * t.cos(), r * t.sin(), z]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    a.map(|v| v / n)
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
}

impl Primitive {
    fn random(rng: &mut impl Rng, area: f64, limit: f64) -> Self {
        let (shape, extent) = match rng.gen_range(0..3) {
            0 => {
                let n = unit_vector(rng);
                let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                let u = normalize(cross(n, helper));
                let v = cross(n, u);
                let side = area.sqrt();
                (Shape::Plane { u, v, side }, side * 0.75)
            }
            1 => {
                let radius = (area / (4.0 * PI)).sqrt();
                (Shape::Sphere { radius }, radius)
            }
            _ => {
                let half = (area / 24.0).sqrt();
                (Shape::Cube { half }, half * 1.8)
            }
        };
        let margin = extent + 1.0;
        let center = [0, 1, 2].map(|_| rng.gen_range(margin..(limit - margin).max(margin + 1.0)));
        let base = [0, 1, 2].map(|_| rng.gen_range(50.0..205.0));
        let gradient = [0, 1, 2].map(|_| rng.gen_range(-45.0..45.0));
        Self {
            shape,
            center,
            base,
            gradient,
            direction: unit_vector(rng),
            extent,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        let off = match self.shape {
            Shape::Plane { u, v, side } => {
                let s = rng.gen_range(-0.5..0.5) * side;
                let t = rng.gen_range(-0.5..0.5) * side;
                [0, 1, 2].map(|a| s * u[a] + t * v[a])
            }
            Shape::Sphere { radius } => unit_vector(rng).map(|c| c * radius),
            Shape::Cube { half } => {
                let axis = rng.gen_range(0..3);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = [0, 1, 2].map(|_| rng.gen_range(-half..half));
                p[axis] = sign * half;
                p
            }
        };
        [0, 1, 2].map(|a| self.center[a] + off[a])
    }

    fn color(&self, p: [f64; 3], noise: f64, rng: &mut impl Rng) -> [f64; 3] {
        let t: f64 = (0..3).map(|a| (p[a] - self.center[a]) * self.direction[a]).sum::<f64>() / self.extent;
        [0, 1, 2].map(|c| (self.base[c] + self.gradient[c] * t + noise * gaussian(rng)).round().clamp(0.0, 255.0))
    }
}

/// A voxelized scene of planes, spheres and cubes with exactly
/// `spec.points` points. Each primitive carries a linear color gradient plus
/// Gaussian noise.
pub fn synthetic_cloud(spec: &SyntheticSpec, seed: u64) -> Result<PointCloud> {
    if spec.points == 0 || spec.primitives == 0 {
        return Err(Error::InvalidArgument("synthetic cloud needs points and primitives".into()));
    }
    let limit = f64::from(1u32 << spec.bitdepth);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // surface area per primitive, a little above the point budget so the
    // voxelized surfaces come out dense
    let area = 1.5 * spec.points as f64 / spec.primitives as f64;
    let prims: Vec<Primitive> = (0..spec.primitives)
        .map(|_| Primitive::random(&mut rng, area, limit))
        .collect();
    let mut seen = HashSet::with_capacity(spec.points);
    let mut geometry = Vec::with_capacity(spec.points);
    let mut colors = Vec::with_capacity(spec.points);
    let mut attempts = 0usize;
    while geometry.len() < spec.points {
        attempts += 1;
        if attempts > spec.points * 200 {
            return Err(Error::InvalidArgument(format!(
                "could not place {} distinct points",
                spec.points
            )));
        }
        let prim = &prims[rng.gen_range(0..prims.len())];
        let p = prim.sample(&mut rng);
        let v = p.map(|c| c.round().clamp(0.0, limit - 1.0) as u32);
        if seen.insert(v) {
            geometry.push(v);
            colors.push(prim.color(p, spec.noise, &mut rng));
        }
    }
    PointCloud::new(geometry, colors, spec.bitdepth, ColorSpace::Rgb8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_size_and_deterministic() {
        let spec = SyntheticSpec {
            points: 2000,
            ..Default::default()
        };
        let a = synthetic_cloud(&spec, 4).unwrap();
        assert_eq!(a.len(), 2000);
        assert_eq!(a, synthetic_cloud(&spec, 4).unwrap());
        assert_ne!(a, synthetic_cloud(&spec, 5).unwrap());
    }

    #[test]
    fn surfaces_are_dense() {
        let pc = synthetic_cloud(&SyntheticSpec::default(), 1).unwrap();
        let set: HashSet<[u32; 3]> = pc.geometry().iter().copied().collect();
        let with_neighbor = pc
            .geometry()
            .iter()
            .filter(|p| {
                (0..3).any(|a| {
                    let mut q = **p;
                    q[a] += 1;
                    set.contains(&q)
                })
            })
            .count();
        assert!(with_neighbor as f64 > 0.5 * pc.len() as f64);
    }
}
