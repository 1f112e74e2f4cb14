//! Image-quality metrics: correlation coefficient, relative error, PSNR and
//! SSIM. `re` and `psnr` treat the second argument as the reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{min_max_normalize, IMAGE_SIDE};

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!("images of {} and {} pixels", x.len(), y.len())));
    }
    Ok(())
}

/// Pearson correlation of the flattened images. A single constant image
/// correlates as 0.
pub fn cc(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    match (sxx > 0.0, syy > 0.0) {
        (false, false) => Err(Error::ConstantImage),
        (true, true) => Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)),
        _ => Ok(0.0),
    }
}

/// ||x - y|| / ||y||.
pub fn re(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x, y)?;
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ny == 0.0 {
        return Err(Error::ZeroReference);
    }
    let nd = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(nd / ny)
}

/// 10 log10(peak^2 / MSE); `f64::INFINITY` when the images are identical.
pub fn psnr(x: &[f64], y: &[f64], peak: f64) -> Result<f64> {
    same_len(x, y)?;
    let mse = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum::<f64>().powi(2);
    let mut w = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = g[i] * g[j] / total;
        }
    }
    w
}

/// Half-sample symmetric reflection: -1 -> 0, n -> n - 1.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Mean local SSIM of two `side x side` images (values expected in [0, 1]).
pub fn ssim_with_side(x: &[f64], y: &[f64], side: usize) -> Result<f64> {
    same_len(x, y)?;
    if side * side != x.len() {
        return Err(Error::Shape(format!("{} pixels is not {side}x{side}", x.len())));
    }
    let w = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let half = (SSIM_WINDOW / 2) as isize;
    let mut total = 0.0;
    for r in 0..side {
        for c in 0..side {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, wrow) in w.iter().enumerate() {
                let rr = reflect(r as isize + i as isize - half, side);
                for (j, wv) in wrow.iter().enumerate() {
                    let cc = reflect(c as isize + j as isize - half, side);
                    let (a, b) = (x[rr * side + cc], y[rr * side + cc]);
                    mx += wv * a;
                    my += wv * b;
                    xx += wv * a * a;
                    yy += wv * b * b;
                    xy += wv * a * b;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cxy = xy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (side * side) as f64)
}

pub fn ssim(x: &[f64], y: &[f64]) -> Result<f64> {
    ssim_with_side(x, y, IMAGE_SIDE)
}

/// All four metrics on a min-max normalized (reconstruction, label) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cc: f64,
    pub re: f64,
    /// `None` when the normalized images coincide (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub ssim: f64,
}

impl MetricReport {
    pub fn evaluate(reconstruction: &[f64], label: &[f64]) -> Result<Self> {
        let x = min_max_normalize(reconstruction);
        let y = min_max_normalize(label);
        let p = psnr(&x, &y, 1.0)?;
        Ok(Self {
            cc: cc(&x, &y)?,
            re: re(&x, &y)?,
            psnr_db: p.is_finite().then_some(p),
            ssim: ssim(&x, &y)?,
        })
    }
}

/// Batch means; infinite PSNRs are counted separately and left out of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub cc: f64,
    pub re: f64,
    pub psnr_db: f64,
    pub psnr_infinite: usize,
    pub ssim: f64,
}

impl MetricSummary {
    pub fn from_reports(reports: &[MetricReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let finite: Vec<f64> = reports.iter().filter_map(|r| r.psnr_db).collect();
        Self {
            count: reports.len(),
            cc: reports.iter().map(|r| r.cc).sum::<f64>() / n,
            re: reports.iter().map(|r| r.re).sum::<f64>() / n,
            psnr_db: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
            psnr_infinite: reports.len() - finite.len(),
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        }
    }
}
