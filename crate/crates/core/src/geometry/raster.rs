use serde::{Deserialize, Serialize};

use super::{GeometryHash, Mesh, Point2, Symmetry};
use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 48;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// The 48x48 output basis over the sensing square.
///
/// Pixels are stored row-major with row 0 along the top edge (y = side)
/// and column 0 along the left edge (x = 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGrid {
    side: f64,
}

impl ImageGrid {
    pub fn new(side: f64) -> Self {
        Self { side }
    }

    pub fn pixel_size(&self) -> f64 {
        self.side / IMAGE_SIDE as f64
    }

    pub fn pixel_center(&self, pixel: usize) -> Point2 {
        let (r, c) = (pixel / IMAGE_SIDE, pixel % IMAGE_SIDE);
        let h = self.pixel_size();
        Point2::new((c as f64 + 0.5) * h, self.side - (r as f64 + 0.5) * h)
    }

    pub fn pixel_at(&self, p: Point2) -> Option<usize> {
        let h = self.pixel_size();
        let c = (p.x / h).floor();
        let r = ((self.side - p.y) / h).floor();
        let max = IMAGE_SIDE as f64;
        if (0.0..max).contains(&c) && (0.0..max).contains(&r) {
            Some(r as usize * IMAGE_SIDE + c as usize)
        } else {
            None
        }
    }

    /// Pixel-space image of a symmetry: `out[p] = input[src[p]]` transforms an
    /// image the same way `sym` transforms the domain.
    pub fn symmetry_source(&self, sym: Symmetry) -> Vec<usize> {
        let inv = sym.inverse();
        (0..IMAGE_PIXELS)
            .map(|p| {
                self.pixel_at(inv.apply(self.pixel_center(p), self.side))
                    .expect("pixel grid is closed under the square symmetries")
            })
            .collect()
    }
}

/// A 48x48 conductivity (or conductivity-change) image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionImage {
    pub pixels: Vec<f64>,
    pub geometry_hash: GeometryHash,
}

impl ReconstructionImage {
    pub fn new(pixels: Vec<f64>, geometry_hash: GeometryHash) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::Shape(format!(
                "image has {} pixels, expected {IMAGE_PIXELS}",
                pixels.len()
            )));
        }
        Ok(Self {
            pixels,
            geometry_hash,
        })
    }

    pub fn zeros(geometry_hash: GeometryHash) -> Self {
        Self {
            pixels: vec![0.0; IMAGE_PIXELS],
            geometry_hash,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    pub fn norm(&self) -> f64 {
        self.pixels.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// (row, col) of the largest pixel value.
    pub fn argmax(&self) -> (usize, usize) {
        let p = self
            .pixels
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        (p / IMAGE_SIDE, p % IMAGE_SIDE)
    }

    /// Min-max normalization to [0, 1]; a constant image maps to zeros.
    pub fn normalized(&self) -> Vec<f64> {
        min_max_normalize(&self.pixels)
    }

    /// Normalized 8-bit rendering, row-major.
    pub fn to_u8(&self) -> Vec<u8> {
        self.normalized()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn transformed(&self, source: &[usize]) -> Self {
        Self {
            pixels: source.iter().map(|&s| self.pixels[s]).collect(),
            geometry_hash: self.geometry_hash,
        }
    }
}

pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / range).collect()
}

/// Exact element/pixel overlap areas, stored per pixel.
#[derive(Debug, Clone)]
pub struct Rasterizer {
    grid: ImageGrid,
    geometry_hash: GeometryHash,
    element_areas: Vec<f64>,
    pixel_start: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

type Poly = Vec<(f64, f64)>;

/// Clips a convex polygon against the half-plane `sign * (coord - bound) <= 0`.
fn clip(poly: &Poly, axis: usize, bound: f64, sign: f64) -> Poly {
    let val = |p: &(f64, f64)| sign * (if axis == 0 { p.0 } else { p.1 } - bound);
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (va, vb) = (val(&a), val(&b));
        if va <= 0.0 {
            out.push(a);
        }
        if (va < 0.0 && vb > 0.0) || (va > 0.0 && vb < 0.0) {
            let t = va / (va - vb);
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    out
}

fn polygon_area(poly: &Poly) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    0.5 * twice.abs()
}

impl Rasterizer {
    pub fn new(mesh: &Mesh) -> Self {
        let grid = ImageGrid::new(mesh.side());
        let h = grid.pixel_size();
        let side = mesh.side();
        let mut per_pixel: Vec<Vec<(usize, f64)>> = vec![Vec::new(); IMAGE_PIXELS];
        let last = IMAGE_SIDE as isize - 1;
        for (e, tri) in mesh.elements().iter().enumerate() {
            let pts = tri.map(|v| mesh.nodes()[v]);
            let poly: Poly = pts.iter().map(|p| (p.x, p.y)).collect();
            let (xmin, xmax) = pts
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                    (a.min(p.x), b.max(p.x))
                });
            let (ymin, ymax) = pts
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                    (a.min(p.y), b.max(p.y))
                });
            let c0 = ((xmin / h).floor() as isize).clamp(0, last);
            let c1 = ((xmax / h).floor() as isize).clamp(0, last);
            let r0 = (((side - ymax) / h).floor() as isize).clamp(0, last);
            let r1 = (((side - ymin) / h).floor() as isize).clamp(0, last);
            for r in r0..=r1 {
                let (ylo, yhi) = (side - (r + 1) as f64 * h, side - r as f64 * h);
                let band = clip(&clip(&poly, 1, ylo, -1.0), 1, yhi, 1.0);
                if band.len() < 3 {
                    continue;
                }
                for c in c0..=c1 {
                    let (xlo, xhi) = (c as f64 * h, (c + 1) as f64 * h);
                    let piece = clip(&clip(&band, 0, xlo, -1.0), 0, xhi, 1.0);
                    let area = polygon_area(&piece);
                    if area > 1e-12 * h * h {
                        per_pixel[r as usize * IMAGE_SIDE + c as usize].push((e, area));
                    }
                }
            }
        }
        let mut pixel_start = Vec::with_capacity(IMAGE_PIXELS + 1);
        let mut entries = Vec::new();
        for list in per_pixel {
            pixel_start.push(entries.len());
            entries.extend(list);
        }
        pixel_start.push(entries.len());
        Self {
            grid,
            geometry_hash: mesh.geometry_hash(),
            element_areas: mesh.areas().to_vec(),
            pixel_start,
            entries,
        }
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn geometry_hash(&self) -> GeometryHash {
        self.geometry_hash
    }

    pub fn element_count(&self) -> usize {
        self.element_areas.len()
    }

    pub fn element_areas(&self) -> &[f64] {
        &self.element_areas
    }

    /// `(element, overlap area)` pairs covering `pixel`.
    pub fn pixel_entries(&self, pixel: usize) -> &[(usize, f64)] {
        &self.entries[self.pixel_start[pixel]..self.pixel_start[pixel + 1]]
    }

    /// Area-weighted pixel averages of per-element values.
    pub fn rasterize_values(&self, element_values: &[f64]) -> Vec<f64> {
        (0..IMAGE_PIXELS)
            .map(|p| {
                let entries = self.pixel_entries(p);
                let (num, den) = entries.iter().fold((0.0, 0.0), |(n, d), &(e, a)| {
                    (n + a * element_values[e], d + a)
                });
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn rasterize(&self, element_values: &[f64]) -> Result<ReconstructionImage> {
        if element_values.len() != self.element_count() {
            return Err(Error::Shape(format!(
                "{} values for {} elements",
                element_values.len(),
                self.element_count()
            )));
        }
        ReconstructionImage::new(self.rasterize_values(element_values), self.geometry_hash)
    }

    /// Element averages of a pixel-constant field (the adjoint direction of
    /// [`rasterize_values`](Self::rasterize_values)).
    pub fn element_average(&self, pixel_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.element_count()];
        for (p, &v) in pixel_values.iter().enumerate() {
            for &(e, a) in self.pixel_entries(p) {
                out[e] += v * a;
            }
        }
        for (o, a) in out.iter_mut().zip(&self.element_areas) {
            *o /= a;
        }
        out
    }

    /// Integral of a per-element field over the domain.
    pub fn element_integral(&self, element_values: &[f64]) -> f64 {
        element_values
            .iter()
            .zip(&self.element_areas)
            .map(|(v, a)| v * a)
            .sum()
    }

    /// Integral of a pixel image over the domain.
    pub fn image_integral(&self, pixels: &[f64]) -> f64 {
        let h = self.grid.pixel_size();
        pixels.iter().sum::<f64>() * h * h
    }
}
