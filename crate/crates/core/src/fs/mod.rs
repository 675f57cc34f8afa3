//! Frequency sampling: split a cloud into the points carrying high-frequency
//! color variation and the smooth remainder.
//!
//! Points are ordered (Morton or input order) and chunked into groups of
//! `omega`. Per group and per channel the colors are centered on the group
//! mean, Hamming-windowed and transformed; coefficients whose magnitude is at
//! most `q`% of the channel maximum are kept, the rest zeroed, and the result
//! is transformed back. The per-position Euclidean norm of the three
//! channel residuals is the selection signal; positions above
//! `tau * max` (and above an absolute floor) form the high set.

pub mod fft;

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{map_attributes, set_difference, PointCloud};
use crate::error::{Error, Result};
use crate::morton;

pub use fft::{dft_forward, dft_inverse};

pub type Spectrum = Vec<Complex64>;

/// Residual magnitudes at or below this are treated as exact zeros.
pub const SELECTION_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupOrdering {
    Input,
    Morton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub omega: usize,
    pub q_percent: f64,
    pub tau: f64,
    pub ordering: GroupOrdering,
}

impl Default for GroupSpec {
    fn default() -> Self {
        Self {
            omega: 1024,
            q_percent: 60.0,
            tau: 0.1,
            ordering: GroupOrdering::Morton,
        }
    }
}

impl GroupSpec {
    pub fn validate(&self) -> Result<()> {
        if self.omega < 8 || !self.omega.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "group size {} must be a power of two >= 8",
                self.omega
            )));
        }
        if !(self.q_percent > 0.0 && self.q_percent <= 100.0) {
            return Err(Error::InvalidArgument(format!(
                "q = {} outside (0, 100]",
                self.q_percent
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau = {} outside (0, 1)",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencySplit {
    pub high_indices: Vec<usize>,
    pub low_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FsStats {
    pub groups: usize,
    pub points: usize,
    pub selected: usize,
    /// Energy of the retained (small-magnitude) coefficients.
    pub kept_energy: f64,
    /// Energy of the full windowed spectrum.
    pub total_energy: f64,
}

impl FsStats {
    pub fn selected_fraction(&self) -> f64 {
        if self.points == 0 {
            0.0
        } else {
            self.selected as f64 / self.points as f64
        }
    }

    fn merge(mut self, other: FsStats) -> FsStats {
        self.groups += other.groups;
        self.points += other.points;
        self.selected += other.selected;
        self.kept_energy += other.kept_energy;
        self.total_energy += other.total_energy;
        self
    }
}

/// `w(n) = 0.54 - 0.46 cos(2 pi n / (N - 1))`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("window length {n} < 2")));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / denom).cos())
        .collect())
}

/// Keeps coefficients with magnitude `<= q/100 * max`, zeroes the rest.
pub fn threshold_spectrum(spectrum: &[Complex64], q_percent: f64) -> Spectrum {
    let max = spectrum.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let limit = q_percent / 100.0 * max;
    spectrum
        .iter()
        .map(|&c| if c.norm() <= limit { c } else { Complex64::new(0.0, 0.0) })
        .collect()
}

struct GroupResult {
    selected: Vec<usize>,
    kept_energy: f64,
    total_energy: f64,
}

fn analyze_group(colors: &[[f64; 3]], spec: &GroupSpec, window: &[f64]) -> Result<GroupResult> {
    let valid = colors.len();
    if valid == 0 {
        return Err(Error::InvalidArgument("empty group".into()));
    }
    let omega = spec.omega;
    if valid > omega {
        return Err(Error::InvalidArgument(format!(
            "group of {valid} points exceeds omega = {omega}"
        )));
    }
    let last = colors[valid - 1];
    let mut signal = vec![0.0f64; omega];
    let mut strength = vec![0.0f64; omega];
    let mut kept_energy = 0.0;
    let mut total_energy = 0.0;
    for ch in 0..3 {
        for (i, s) in signal.iter_mut().enumerate() {
            *s = if i < valid { colors[i][ch] } else { last[ch] };
        }
        let mean = signal.iter().sum::<f64>() / omega as f64;
        for (s, w) in signal.iter_mut().zip(window) {
            *s = (*s - mean) * w;
        }
        let spectrum = fft::dft_forward(&signal)?;
        let kept = threshold_spectrum(&spectrum, spec.q_percent);
        total_energy += spectrum.iter().map(|c| c.norm_sqr()).sum::<f64>();
        kept_energy += kept.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let residual = fft::dft_inverse(&kept)?;
        for (acc, r) in strength.iter_mut().zip(&residual) {
            *acc += r.norm_sqr();
        }
    }
    let strength: Vec<f64> = strength[..valid].iter().map(|v| v.sqrt()).collect();
    let peak = strength.iter().copied().fold(0.0, f64::max);
    let cut = (spec.tau * peak).max(SELECTION_FLOOR);
    let selected = (0..valid).filter(|&i| strength[i] > cut).collect();
    Ok(GroupResult {
        selected,
        kept_energy,
        total_energy,
    })
}

/// Selection on one group of at most `omega` colors; shorter groups are
/// padded by repeating the last color and padded positions are never chosen.
pub fn select_high_points(colors: &[[f64; 3]], spec: &GroupSpec) -> Result<FrequencySplit> {
    spec.validate()?;
    let window = hamming_window(spec.omega)?;
    let res = analyze_group(colors, spec, &window)?;
    let mut is_high = vec![false; colors.len()];
    for &i in &res.selected {
        is_high[i] = true;
    }
    let low_indices = (0..colors.len()).filter(|&i| !is_high[i]).collect();
    Ok(FrequencySplit {
        high_indices: res.selected,
        low_indices,
    })
}

fn grouping_order(pc: &PointCloud, ordering: GroupOrdering) -> Vec<usize> {
    match ordering {
        GroupOrdering::Input => (0..pc.len()).collect(),
        GroupOrdering::Morton => morton::morton_order(pc.geometry()),
    }
}

/// Indices (ascending, into `pc`) of the high-frequency points, with stats.
pub fn high_point_indices(pc: &PointCloud, spec: &GroupSpec) -> Result<(Vec<usize>, FsStats)> {
    spec.validate()?;
    let window = hamming_window(spec.omega)?;
    let order = grouping_order(pc, spec.ordering);
    let groups: Vec<&[usize]> = order.chunks(spec.omega).collect();
    let results: Vec<(Vec<usize>, FsStats)> = groups
        .par_iter()
        .map(|members| {
            let colors: Vec<[f64; 3]> = members.iter().map(|&i| pc.colors()[i]).collect();
            let res = analyze_group(&colors, spec, &window)?;
            let picked: Vec<usize> = res.selected.iter().map(|&p| members[p]).collect();
            let stats = FsStats {
                groups: 1,
                points: members.len(),
                selected: picked.len(),
                kept_energy: res.kept_energy,
                total_energy: res.total_energy,
            };
            Ok((picked, stats))
        })
        .collect::<Result<_>>()?;
    let mut high = Vec::new();
    let mut stats = FsStats::default();
    for (picked, s) in results {
        high.extend(picked);
        stats = stats.merge(s);
    }
    high.sort_unstable();
    Ok((high, stats))
}

/// Splits `pc` into (high, low); both keep `pc`'s relative order and the
/// original attributes.
pub fn fs_split(pc: &PointCloud, spec: &GroupSpec) -> Result<(PointCloud, PointCloud)> {
    fs_split_with_stats(pc, spec).map(|(h, l, _)| (h, l))
}

pub fn fs_split_with_stats(
    pc: &PointCloud,
    spec: &GroupSpec,
) -> Result<(PointCloud, PointCloud, FsStats)> {
    if pc.is_empty() {
        spec.validate()?;
        return Ok((pc.clone(), pc.clone(), FsStats::default()));
    }
    let (high_idx, stats) = high_point_indices(pc, spec)?;
    let high = map_attributes(pc, &high_idx)?;
    let low = set_difference(pc, &high)?;
    Ok((high, low, stats))
}
