//! PSNR aggregation and Bjøntegaard delta metrics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::{channel_psnr, rgb_to_yuv, ColorSpace, PointCloud};
use crate::error::{Error, Result};

pub const MIN_CURVE_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YuvPsnr {
    pub y: f64,
    pub u: f64,
    pub v: f64,
    /// `(6 Y + U + V) / 8`, averaged in the PSNR domain.
    pub combined: f64,
}

impl YuvPsnr {
    pub fn from_channels(y: f64, u: f64, v: f64) -> Self {
        Self {
            y,
            u,
            v,
            combined: (6.0 * y + u + v) / 8.0,
        }
    }
}

fn as_yuv(pc: &PointCloud) -> Result<PointCloud> {
    match pc.colorspace() {
        ColorSpace::Yuv => Ok(pc.clone()),
        ColorSpace::Rgb8 => rgb_to_yuv(pc),
    }
}

/// Per-channel YUV PSNR with points matched by coordinate.
pub fn psnr_yuv(reference: &PointCloud, test: &PointCloud) -> Result<YuvPsnr> {
    let r = as_yuv(reference)?;
    let t = as_yuv(test)?;
    Ok(YuvPsnr::from_channels(
        channel_psnr(&r, &t, 0)?,
        channel_psnr(&r, &t, 1)?,
        channel_psnr(&r, &t, 2)?,
    ))
}

/// Rate-PSNR points with strictly increasing positive rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RDCurve {
    points: Vec<(f64, f64)>,
}

impl RDCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < MIN_CURVE_POINTS {
            return Err(Error::InsufficientPoints {
                needed: MIN_CURVE_POINTS,
                got: points.len(),
            });
        }
        if points.iter().any(|&(r, p)| !(r > 0.0 && r.is_finite() && p.is_finite())) {
            return Err(Error::InvalidArgument("rates must be positive and PSNR finite".into()));
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidArgument("rates must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn log_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0.log10()).collect()
    }

    fn psnrs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BdMethod {
    /// Least-squares cubic over all points.
    #[default]
    Cubic,
    /// Shape-preserving piecewise cubic interpolation.
    Pchip,
}

/// Least-squares polynomial coefficients (lowest order first) of degree
/// `deg`, fitted on `x` shifted and scaled to about unit range.
struct Poly {
    coef: Vec<f64>,
    shift: f64,
    scale: f64,
}

impl Poly {
    fn fit(x: &[f64], y: &[f64], deg: usize) -> Result<Self> {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift = 0.5 * (lo + hi);
        let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
        let n = deg + 1;
        let mut a = vec![vec![0.0; n + 1]; n];
        for (&xi, &yi) in x.iter().zip(y) {
            let t = (xi - shift) / scale;
            let pows: Vec<f64> = (0..2 * n).map(|k| t.powi(k as i32)).collect();
            for r in 0..n {
                for c in 0..n {
                    a[r][c] += pows[r + c];
                }
                a[r][n] += pows[r] * yi;
            }
        }
        let coef = solve(a).ok_or_else(|| Error::InvalidArgument("degenerate RD points".into()))?;
        Ok(Self { coef, shift, scale })
    }

    fn eval(&self, x: f64) -> f64 {
        let t = (x - self.shift) / self.scale;
        self.coef.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

/// Gauss-Jordan elimination with partial pivoting on an augmented matrix.
fn solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson slopes).
struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidArgument("piecewise fit needs distinct abscissae".into()));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let n = x.len();
        let h: Vec<f64> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
        let s: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        for k in 1..n - 1 {
            if s[k - 1] * s[k] > 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / s[k - 1] + w2 / s[k]);
            }
        }
        let end = |h0: f64, h1: f64, s0: f64, s1: f64| {
            let e = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
            if e.signum() != s0.signum() {
                0.0
            } else if s0.signum() != s1.signum() && e.abs() > 3.0 * s0.abs() {
                3.0 * s0
            } else {
                e
            }
        };
        if n > 2 {
            d[0] = end(h[0], h[1], s[0], s[1]);
            d[n - 1] = end(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
        } else {
            d[0] = s[0];
            d[1] = s[0];
        }
        Ok(Self { x, y, d })
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let k = self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[k]
            + (s3 - 2.0 * s2 + s) * h * self.d[k]
            + (-2.0 * s3 + 3.0 * s2) * self.y[k + 1]
            + (s3 - s2) * h * self.d[k + 1]
    }
}

enum Fit {
    Cubic(Poly),
    Pchip(Pchip),
}

impl Fit {
    fn new(x: &[f64], y: &[f64], method: BdMethod) -> Result<Self> {
        Ok(match method {
            BdMethod::Cubic => Fit::Cubic(Poly::fit(x, y, 3)?),
            BdMethod::Pchip => Fit::Pchip(Pchip::new(x, y)?),
        })
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            Fit::Cubic(p) => p.eval(x),
            Fit::Pchip(p) => p.eval(x),
        }
    }

    /// Integral over `[a, b]`, exact for piecewise cubics: 3-point
    /// Gauss-Legendre on each piece.
    fn integrate(&self, a: f64, b: f64) -> f64 {
        let mut knots = vec![a];
        if let Fit::Pchip(p) = self {
            knots.extend(p.x.iter().copied().filter(|&x| x > a && x < b));
        }
        knots.push(b);
        let nodes = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
        knots
            .windows(2)
            .map(|w| {
                let (m, r) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                r * nodes.iter().map(|&(t, wt)| wt * self.eval(m + r * t)).sum::<f64>()
            })
            .sum()
    }
}

fn overlap(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = min(a).max(min(b));
    let hi = max(a).min(max(b));
    if !(hi > lo) {
        return Err(Error::EmptyOverlap);
    }
    Ok((lo, hi))
}

fn mean_difference(xr: &[f64], yr: &[f64], xt: &[f64], yt: &[f64], method: BdMethod) -> Result<f64> {
    let (lo, hi) = overlap(xr, xt)?;
    let fr = Fit::new(xr, yr, method)?;
    let ft = Fit::new(xt, yt, method)?;
    Ok((ft.integrate(lo, hi) - fr.integrate(lo, hi)) / (hi - lo))
}

/// Average rate change of `test` against `reference` at equal PSNR, in percent.
pub fn bd_rate(reference: &RDCurve, test: &RDCurve, method: BdMethod) -> Result<f64> {
    let d = mean_difference(
        &reference.psnrs(),
        &reference.log_rates(),
        &test.psnrs(),
        &test.log_rates(),
        method,
    )?;
    Ok(100.0 * (10f64.powf(d) - 1.0))
}

/// Average PSNR change of `test` against `reference` at equal rate, in dB.
pub fn bd_psnr(reference: &RDCurve, test: &RDCurve, method: BdMethod) -> Result<f64> {
    mean_difference(
        &reference.log_rates(),
        &reference.psnrs(),
        &test.log_rates(),
        &test.psnrs(),
        method,
    )
}

/// One operating point of a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdRow {
    pub bpp: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
    pub yuv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCurve {
    pub label: String,
    pub rows: Vec<RdRow>,
}

impl LabeledCurve {
    pub fn y_curve(&self) -> Result<RDCurve> {
        RDCurve::new(self.rows.iter().map(|r| (r.bpp, r.y)).collect())
    }

    pub fn yuv_curve(&self) -> Result<RDCurve> {
        RDCurve::new(self.rows.iter().map(|r| (r.bpp, r.yuv)).collect())
    }
}

const REPORT_HEADER: [&str; 6] = ["label", "bpp", "y_psnr", "u_psnr", "v_psnr", "yuv_psnr"];

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

/// Writes `path` as CSV and a gnuplot data file next to it (`.dat`), one
/// indexed block per curve.
pub fn rd_report(curves: &[LabeledCurve], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(REPORT_HEADER).map_err(|e| Error::csv(path, e))?;
    for c in curves {
        for r in &c.rows {
            w.write_record([c.label.clone(), fmt4(r.bpp), fmt4(r.y), fmt4(r.u), fmt4(r.v), fmt4(r.yuv)])
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let mut dat = String::new();
    for (i, c) in curves.iter().enumerate() {
        if i > 0 {
            dat.push_str("\n\n");
        }
        dat.push_str(&format!("# {}\n# bpp y_psnr u_psnr v_psnr yuv_psnr\n", c.label));
        for r in &c.rows {
            dat.push_str(&format!(
                "{} {} {} {} {}\n",
                fmt4(r.bpp),
                fmt4(r.y),
                fmt4(r.u),
                fmt4(r.v),
                fmt4(r.yuv)
            ));
        }
    }
    let dat_path = path.with_extension("dat");
    fs::write(&dat_path, dat).map_err(|e| Error::io(&dat_path, e))
}

/// Reads a report CSV; rows with the same label form one curve, in order
/// of first appearance.
pub fn parse_rd_report(path: impl AsRef<Path>) -> Result<Vec<LabeledCurve>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(Error::Report(format!("unexpected columns {:?}", header)));
    }
    let mut curves: Vec<LabeledCurve> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Report(format!("bad number {:?} in column {}", &rec[i], REPORT_HEADER[i])))
        };
        let row = RdRow {
            bpp: num(1)?,
            y: num(2)?,
            u: num(3)?,
            v: num(4)?,
            yuv: num(5)?,
        };
        match curves.iter_mut().find(|c| c.label == rec[0]) {
            Some(c) => c.rows.push(row),
            None => curves.push(LabeledCurve {
                label: rec[0].to_string(),
                rows: vec![row],
            }),
        }
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(f64, f64)]) -> RDCurve {
        RDCurve::new(points.to_vec()).unwrap()
    }

    fn reference() -> RDCurve {
        curve(&[(0.1, 30.0), (0.25, 33.1), (0.5, 35.7), (1.0, 38.2), (2.0, 40.3)])
    }

    #[test]
    fn combined_psnr_weights() {
        assert_eq!(YuvPsnr::from_channels(40.0, 40.0, 40.0).combined, 40.0);
        assert_eq!(YuvPsnr::from_channels(48.0, 32.0, 32.0).combined, 44.0);
    }

    #[test]
    fn identical_curves_have_zero_delta() {
        for m in [BdMethod::Cubic, BdMethod::Pchip] {
            assert!(bd_rate(&reference(), &reference(), m).unwrap().abs() < 1e-12);
            assert!(bd_psnr(&reference(), &reference(), m).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn shifted_curves() {
        let r = reference();
        let cheaper = curve(&r.points().iter().map(|&(b, p)| (0.9 * b, p)).collect::<Vec<_>>());
        let better = curve(&r.points().iter().map(|&(b, p)| (b, p + 0.5)).collect::<Vec<_>>());
        for m in [BdMethod::Cubic, BdMethod::Pchip] {
            assert!((bd_rate(&r, &cheaper, m).unwrap() + 10.0).abs() < 1e-9);
            assert!((bd_psnr(&r, &better, m).unwrap() - 0.5).abs() < 1e-9);
            assert!(bd_rate(&r, &better, m).unwrap() < 0.0);
            assert!(bd_rate(&better, &r, m).unwrap() > 0.0);
        }
    }

    #[test]
    fn curve_validation() {
        assert!(matches!(
            RDCurve::new(vec![(1.0, 30.0); 3]),
            Err(Error::InsufficientPoints { needed: 4, got: 3 })
        ));
        assert!(RDCurve::new(vec![(1.0, 30.0), (1.0, 31.0), (2.0, 32.0), (3.0, 33.0)]).is_err());
        let far = curve(&[(10.0, 50.0), (20.0, 51.0), (30.0, 52.0), (40.0, 53.0)]);
        assert!(matches!(bd_rate(&reference(), &far, BdMethod::Cubic), Err(Error::EmptyOverlap)));
    }

    #[test]
    fn cubic_fit_reproduces_cubic() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 2.0 * v + 0.5 * v * v * v).collect();
        let p = Poly::fit(&x, &y, 3).unwrap();
        assert!((p.eval(2.5) - (1.0 - 5.0 + 0.5 * 15.625)).abs() < 1e-9);
        let f = Fit::Cubic(p);
        // integral of 1 - 2x + x^3/2 over [0, 4] = 4 - 16 + 32
        assert!((f.integrate(0.0, 4.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rd.csv");
        let rows = |o: f64| {
            (0..4)
                .map(|i| RdRow {
                    bpp: 0.5 * (i + 1) as f64,
                    y: 30.0 + i as f64 + o,
                    u: 40.0,
                    v: 41.0,
                    yuv: 33.0 + o,
                })
                .collect::<Vec<_>>()
        };
        let curves = vec![
            LabeledCurve { label: "a, model".into(), rows: rows(0.0) },
            LabeledCurve { label: "b".into(), rows: rows(1.0) },
        ];
        rd_report(&curves, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1 + 8);
        assert_eq!(parse_rd_report(&p).unwrap(), curves);
        assert!(p.with_extension("dat").exists());
        rd_report(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 1);
    }
}
