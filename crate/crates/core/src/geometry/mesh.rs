use std::collections::HashMap;

use super::{GeometryHash, Point2, Region, SensorGeometry, Symmetry};
use crate::error::{Error, Result};

/// Default solver element size in mm.
pub const DEFAULT_ELEMENT_SIZE: f64 = 2.0;

/// Conforming first-order triangulation of the sensing domain.
///
/// The mesh is a tensor-product grid whose lines pass through every strip
/// edge, electrode endpoint and electrode centre. Each grid cell is split
/// along the diagonal pointing towards the domain centre, which makes the
/// node and element sets invariant under the symmetries of the square.
#[derive(Debug, Clone)]
pub struct Mesh {
    side: f64,
    geometry_hash: GeometryHash,
    grid: Vec<f64>,
    nodes: Vec<Point2>,
    elements: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    electrode_segments: Vec<Vec<usize>>,
    element_region: Vec<Region>,
    areas: Vec<f64>,
    centroids: Vec<Point2>,
    gradients: Vec<[[f64; 2]; 3]>,
}

fn breakpoints(geom: &SensorGeometry) -> Vec<f64> {
    let l = geom.side_length;
    let mut pts = vec![0.0, l, 0.5 * l];
    pts.extend(geom.mask().strip_edges());
    let s = geom.electrode_spacing();
    let h = 0.5 * geom.electrode_width;
    for k in 0..geom.electrodes_per_side() {
        let c = (k as f64 + 0.5) * s;
        pts.extend([c - h, c, c + h]);
    }
    pts.sort_by(f64::total_cmp);
    let tol = 1e-9 * l;
    let mut out: Vec<f64> = Vec::with_capacity(pts.len());
    for p in pts {
        match out.last() {
            Some(&last) if (p - last).abs() <= tol => {}
            _ => out.push(p),
        }
    }
    out
}

fn subdivide(breaks: &[f64], target: f64) -> Vec<f64> {
    let mut grid = vec![breaks[0]];
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let n = ((b - a) / target - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=n {
            grid.push(if k == n {
                b
            } else {
                a + (b - a) * k as f64 / n as f64
            });
        }
    }
    grid
}

/// Builds the structured, lattice-aligned mesh for `geom`.
pub fn generate_mesh(geom: &SensorGeometry, target_element_size: f64) -> Result<Mesh> {
    geom.validate()?;
    if !(target_element_size.is_finite() && target_element_size > 0.0) {
        return Err(Error::MeshResolution(format!(
            "target element size {target_element_size} must be positive"
        )));
    }
    let mask = geom.mask();
    if !mask.is_uniform() && target_element_size > 0.5 * geom.channel_width {
        return Err(Error::MeshResolution(format!(
            "target element size {target_element_size} mm cannot resolve {} mm channels",
            geom.channel_width
        )));
    }

    let l = geom.side_length;
    let grid = subdivide(&breakpoints(geom), target_element_size);
    let n = grid.len() - 1;
    let stride = n + 1;
    let idx = |i: usize, j: usize| j * stride + i;

    let mut nodes = Vec::with_capacity(stride * stride);
    for &y in &grid {
        for &x in &grid {
            nodes.push(Point2::new(x, y));
        }
    }

    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            let cx = 0.5 * (grid[i] + grid[i + 1]) - 0.5 * l;
            let cy = 0.5 * (grid[j] + grid[j + 1]) - 0.5 * l;
            if cx * cy > 0.0 {
                elements.push([a, b, c]);
                elements.push([a, c, d]);
            } else {
                elements.push([a, b, d]);
                elements.push([b, c, d]);
            }
        }
    }

    // counter-clockwise walk: bottom, right, top, left
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary_edges.push([idx(i, 0), idx(i + 1, 0)]);
    }
    for j in 0..n {
        boundary_edges.push([idx(n, j), idx(n, j + 1)]);
    }
    for i in (0..n).rev() {
        boundary_edges.push([idx(i + 1, n), idx(i, n)]);
    }
    for j in (0..n).rev() {
        boundary_edges.push([idx(0, j + 1), idx(0, j)]);
    }

    let mut electrode_segments = vec![Vec::new(); geom.electrode_count];
    for (k, edge) in boundary_edges.iter().enumerate() {
        let (p, q) = (nodes[edge[0]], nodes[edge[1]]);
        let mid = Point2::new(0.5 * (p.x + q.x), 0.5 * (p.y + q.y));
        let arc = geom.boundary_arc(mid);
        for (e, segs) in electrode_segments.iter_mut().enumerate() {
            let (lo, hi) = geom.electrode_arc_span(e);
            if arc > lo && arc < hi {
                segs.push(k);
            }
        }
    }
    if let Some(e) = electrode_segments.iter().position(|s| s.len() < 2) {
        return Err(Error::MeshResolution(format!(
            "electrode {} spans fewer than two boundary edges",
            e + 1
        )));
    }

    let mut areas = Vec::with_capacity(elements.len());
    let mut centroids = Vec::with_capacity(elements.len());
    let mut gradients = Vec::with_capacity(elements.len());
    let mut element_region = Vec::with_capacity(elements.len());
    for tri in &elements {
        let [p0, p1, p2] = tri.map(|v| nodes[v]);
        let det = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
        let centroid = Point2::new((p0.x + p1.x + p2.x) / 3.0, (p0.y + p1.y + p2.y) / 3.0);
        // grad(phi_i) = (y_j - y_k, x_k - x_j) / det for cyclic (i, j, k)
        let g = |pj: Point2, pk: Point2| [(pj.y - pk.y) / det, (pk.x - pj.x) / det];
        gradients.push([g(p1, p2), g(p2, p0), g(p0, p1)]);
        areas.push(0.5 * det);
        element_region.push(mask.classify(centroid));
        centroids.push(centroid);
    }

    Ok(Mesh {
        side: l,
        geometry_hash: geom.hash(),
        grid,
        nodes,
        elements,
        boundary_edges,
        electrode_segments,
        element_region,
        areas,
        centroids,
        gradients,
    })
}

impl Mesh {
    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn geometry_hash(&self) -> GeometryHash {
        self.geometry_hash
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn electrode_segments(&self) -> &[Vec<usize>] {
        &self.electrode_segments
    }

    pub fn element_region(&self) -> &[Region] {
        &self.element_region
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn centroids(&self) -> &[Point2] {
        &self.centroids
    }

    /// Constant shape-function gradients of each element, per local vertex.
    pub fn gradients(&self) -> &[[[f64; 2]; 3]] {
        &self.gradients
    }

    /// Grid line coordinates shared by both axes.
    pub fn grid_lines(&self) -> &[f64] {
        &self.grid
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Maximum index distance between two nodes of one element.
    pub fn bandwidth(&self) -> usize {
        self.grid.len() + 1
    }

    /// Node closest to the domain centre (the grounding reference).
    pub fn center_node(&self) -> usize {
        let c = Point2::new(0.5 * self.side, 0.5 * self.side);
        (0..self.nodes.len())
            .min_by(|&a, &b| {
                self.nodes[a]
                    .distance(c)
                    .total_cmp(&self.nodes[b].distance(c))
            })
            .unwrap_or(0)
    }

    pub fn channel_area(&self) -> f64 {
        self.areas
            .iter()
            .zip(&self.element_region)
            .filter(|(_, r)| **r == Region::Channel)
            .map(|(a, _)| a)
            .sum()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// `map[e]` is the element occupying the image of element `e` under `sym`.
    pub fn element_symmetry_map(&self, sym: Symmetry) -> Vec<usize> {
        let key = |p: Point2| ((p.x * 1e6).round() as i64, (p.y * 1e6).round() as i64);
        let lookup: HashMap<(i64, i64), usize> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(e, &c)| (key(c), e))
            .collect();
        self.centroids
            .iter()
            .map(|&c| {
                let image = sym.apply(c, self.side);
                *lookup
                    .get(&key(image))
                    .expect("mesh is closed under the square symmetries")
            })
            .collect()
    }
}
