//! Sensor domain, lattice mask, electrode layout and the triangular mesh.
//!
//! Coordinates are in millimetres with the origin at the lower-left corner of
//! the square sensing domain. Electrodes are numbered counter-clockwise
//! starting from the left end of the bottom edge.

mod field;
mod mask;
mod mesh;
mod raster;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use field::{
    baseline_field, baseline_field_with_floor, ConductivityField, FLOOR_RATIO, SIGMA0,
    T_REF,
};
pub use mask::{LatticeMask, Region};
pub use mesh::{generate_mesh, Mesh, DEFAULT_ELEMENT_SIZE};
pub use raster::{
    min_max_normalize, ImageGrid, Rasterizer, ReconstructionImage, IMAGE_PIXELS, IMAGE_SIDE,
};

const CANONICAL_HEADER: &str = "# lattice-eit geometry v1";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Content hash binding derived artifacts (meshes, fields, frames, models)
/// to the geometry they were produced from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeometryHash(pub u64);

impl fmt::Display for GeometryHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl GeometryHash {
    pub fn ensure(self, found: GeometryHash) -> Result<()> {
        if self == found {
            Ok(())
        } else {
            Err(Error::HashMismatch {
                expected: self,
                found,
            })
        }
    }
}

/// Square sensing sheet with a strip-grid lattice and boundary electrodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorGeometry {
    pub side_length: f64,
    /// Lattice strip width `w`; zero means a uniform conductive sheet.
    pub channel_width: f64,
    /// Conductive layer thickness `t`.
    pub layer_thickness: f64,
    pub electrode_count: usize,
    pub electrode_width: f64,
    pub lattice_pitch: f64,
}

impl Default for SensorGeometry {
    fn default() -> Self {
        Self {
            side_length: 100.0,
            channel_width: 4.0,
            layer_thickness: 3.0,
            electrode_count: 16,
            electrode_width: 8.0,
            lattice_pitch: 12.5,
        }
    }
}

/// Which side of the square an electrode sits on, in counter-clockwise order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl SensorGeometry {
    pub fn uniform() -> Self {
        Self {
            channel_width: 0.0,
            ..Self::default()
        }
    }

    pub fn with_lattice(channel_width: f64, layer_thickness: f64) -> Self {
        Self {
            channel_width,
            layer_thickness,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGeometry(msg));
        let finite = [
            self.side_length,
            self.channel_width,
            self.layer_thickness,
            self.electrode_width,
            self.lattice_pitch,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("all lengths must be finite".into());
        }
        if self.side_length <= 0.0 {
            return bad(format!("side length {} must be positive", self.side_length));
        }
        if self.lattice_pitch <= 0.0 {
            return bad(format!("lattice pitch {} must be positive", self.lattice_pitch));
        }
        if self.channel_width < 0.0 || self.channel_width > self.lattice_pitch {
            return bad(format!(
                "channel width {} must lie in [0, pitch {}]",
                self.channel_width, self.lattice_pitch
            ));
        }
        if self.layer_thickness <= 0.0 {
            return bad(format!(
                "layer thickness {} must be positive",
                self.layer_thickness
            ));
        }
        if self.electrode_count == 0 || self.electrode_count % 4 != 0 {
            return bad(format!(
                "electrode count {} must be a positive multiple of 4",
                self.electrode_count
            ));
        }
        if self.electrode_width <= 0.0 || self.electrode_width >= self.electrode_spacing() {
            return bad(format!(
                "electrode width {} must be positive and smaller than the spacing {}",
                self.electrode_width,
                self.electrode_spacing()
            ));
        }
        Ok(())
    }

    pub fn electrodes_per_side(&self) -> usize {
        self.electrode_count / 4
    }

    /// Centre-to-centre distance between neighbouring electrodes along the boundary.
    pub fn electrode_spacing(&self) -> f64 {
        self.side_length / self.electrodes_per_side().max(1) as f64
    }

    pub fn perimeter(&self) -> f64 {
        4.0 * self.side_length
    }

    /// Arc-length position (counter-clockwise from the origin) of an electrode centre.
    pub fn electrode_arc_center(&self, electrode: usize) -> f64 {
        (electrode as f64 + 0.5) * self.electrode_spacing()
    }

    /// Arc-length interval covered by an electrode.
    pub fn electrode_arc_span(&self, electrode: usize) -> (f64, f64) {
        let c = self.electrode_arc_center(electrode);
        let h = 0.5 * self.electrode_width;
        (c - h, c + h)
    }

    pub fn electrode_side(&self, electrode: usize) -> Side {
        match electrode / self.electrodes_per_side() {
            0 => Side::Bottom,
            1 => Side::Right,
            2 => Side::Top,
            _ => Side::Left,
        }
    }

    pub fn electrode_center(&self, electrode: usize) -> Point2 {
        self.boundary_point(self.electrode_arc_center(electrode))
    }

    /// Maps a counter-clockwise arc-length position to a point on the boundary.
    pub fn boundary_point(&self, arc: f64) -> Point2 {
        let l = self.side_length;
        let s = arc.rem_euclid(4.0 * l);
        if s < l {
            Point2::new(s, 0.0)
        } else if s < 2.0 * l {
            Point2::new(l, s - l)
        } else if s < 3.0 * l {
            Point2::new(3.0 * l - s, l)
        } else {
            Point2::new(0.0, 4.0 * l - s)
        }
    }

    /// Inverse of [`boundary_point`](Self::boundary_point) for points on the boundary.
    pub fn boundary_arc(&self, p: Point2) -> f64 {
        let l = self.side_length;
        let tol = 1e-9 * l;
        if p.y.abs() <= tol && p.x < l - tol {
            p.x
        } else if (p.x - l).abs() <= tol && p.y < l - tol {
            l + p.y
        } else if (p.y - l).abs() <= tol && p.x > tol {
            3.0 * l - p.x
        } else {
            4.0 * l - p.y
        }
    }

    /// Conductive-layer conductance relative to the reference thickness.
    pub fn thickness_factor(&self) -> f64 {
        self.layer_thickness / T_REF
    }

    pub fn mask(&self) -> LatticeMask {
        LatticeMask::new(self)
    }

    /// Canonical key/value document; the content hash is taken over this text.
    pub fn to_canonical_text(&self) -> String {
        format!(
            "{CANONICAL_HEADER}\n\
             side_length_mm = {}\n\
             channel_width_mm = {}\n\
             layer_thickness_mm = {}\n\
             electrode_count = {}\n\
             electrode_width_mm = {}\n\
             lattice_pitch_mm = {}\n",
            self.side_length,
            self.channel_width,
            self.layer_thickness,
            self.electrode_count,
            self.electrode_width,
            self.lattice_pitch,
        )
    }

    /// Parses a key/value geometry document. Missing keys take their defaults.
    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut geom = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                what: "geometry document",
                detail: format!("line {}: expected `key = value`", lineno + 1),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let num = || {
                value.parse::<f64>().map_err(|e| Error::Format {
                    what: "geometry document",
                    detail: format!("line {}: {key}: {e}", lineno + 1),
                })
            };
            match key {
                "side_length_mm" => geom.side_length = num()?,
                "channel_width_mm" => geom.channel_width = num()?,
                "layer_thickness_mm" => geom.layer_thickness = num()?,
                "electrode_width_mm" => geom.electrode_width = num()?,
                "lattice_pitch_mm" => geom.lattice_pitch = num()?,
                "electrode_count" => {
                    geom.electrode_count = value.parse().map_err(|e| Error::Format {
                        what: "geometry document",
                        detail: format!("line {}: {key}: {e}", lineno + 1),
                    })?
                }
                other => {
                    return Err(Error::Format {
                        what: "geometry document",
                        detail: format!("line {}: unknown key `{other}`", lineno + 1),
                    })
                }
            }
        }
        geom.validate()?;
        Ok(geom)
    }

    pub fn hash(&self) -> GeometryHash {
        let digest = Sha256::digest(self.to_canonical_text().as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        GeometryHash(u64::from_be_bytes(bytes))
    }

    pub fn contains_disc(&self, center: Point2, radius: f64) -> bool {
        let l = self.side_length;
        radius > 0.0
            && center.x - radius >= 0.0
            && center.x + radius <= l
            && center.y - radius >= 0.0
            && center.y + radius <= l
    }
}

/// One of the eight symmetries of the square, acting about the domain centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Symmetry(u8);

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry(0);
    pub const ROT90: Symmetry = Symmetry(1);
    pub const ROT180: Symmetry = Symmetry(2);
    pub const ROT270: Symmetry = Symmetry(3);
    /// x -> L - x
    pub const FLIP_X: Symmetry = Symmetry(4);
    /// y -> L - y
    pub const FLIP_Y: Symmetry = Symmetry(5);
    /// x <-> y
    pub const TRANSPOSE: Symmetry = Symmetry(6);
    pub const ANTI_TRANSPOSE: Symmetry = Symmetry(7);

    pub fn new(id: u8) -> Option<Self> {
        (id < 8).then_some(Symmetry(id))
    }

    pub fn all() -> impl Iterator<Item = Symmetry> {
        (0..8).map(Symmetry)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn is_reflection(self) -> bool {
        self.0 >= 4
    }

    pub fn inverse(self) -> Symmetry {
        match self.0 {
            1 => Symmetry(3),
            3 => Symmetry(1),
            other => Symmetry(other),
        }
    }

    pub fn apply(self, p: Point2, side: f64) -> Point2 {
        let (x, y, l) = (p.x, p.y, side);
        let (nx, ny) = match self.0 {
            0 => (x, y),
            1 => (l - y, x),
            2 => (l - x, l - y),
            3 => (y, l - x),
            4 => (l - x, y),
            5 => (x, l - y),
            6 => (y, x),
            _ => (l - y, l - x),
        };
        Point2::new(nx, ny)
    }
}

impl fmt::Display for Symmetry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.0 {
            0 => "identity",
            1 => "rot90",
            2 => "rot180",
            3 => "rot270",
            4 => "flip-x",
            5 => "flip-y",
            6 => "transpose",
            _ => "anti-transpose",
        };
        f.write_str(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_is_valid() {
        SensorGeometry::default().validate().unwrap();
        SensorGeometry::uniform().validate().unwrap();
    }

    #[test]
    fn rejects_bad_layouts() {
        let g = SensorGeometry {
            electrode_count: 15,
            ..Default::default()
        };
        assert!(g.validate().is_err());
        let g = SensorGeometry {
            channel_width: 13.0,
            ..Default::default()
        };
        assert!(g.validate().is_err());
        let g = SensorGeometry {
            electrode_width: 25.0,
            ..Default::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn electrode_gaps_are_equal_including_corners() {
        let g = SensorGeometry::default();
        let n = g.electrode_count;
        let arcs: Vec<f64> = (0..n).map(|e| g.electrode_arc_center(e)).collect();
        let gaps: Vec<f64> = (0..n)
            .map(|e| (arcs[(e + 1) % n] - arcs[e]).rem_euclid(g.perimeter()))
            .collect();
        for gap in &gaps {
            assert!((gap - gaps[0]).abs() <= 1e-6 * gaps[0]);
        }
        // no electrode touches a corner
        for e in 0..n {
            let (a, b) = g.electrode_arc_span(e);
            let corner = (a / g.side_length).ceil() * g.side_length;
            assert!(b < corner || a > corner);
            assert!(a.rem_euclid(g.side_length) > 0.0);
        }
    }

    #[test]
    fn boundary_arc_roundtrip() {
        let g = SensorGeometry::default();
        for k in 0..400 {
            let s = k as f64 + 0.25;
            let back = g.boundary_arc(g.boundary_point(s));
            assert!((back - s).abs() < 1e-9, "{s} -> {back}");
        }
    }

    #[test]
    fn canonical_text_roundtrip_and_hash_is_stable() {
        let g = SensorGeometry::with_lattice(6.0, 2.0);
        let text = g.to_canonical_text();
        let back = SensorGeometry::from_canonical_text(&text).unwrap();
        assert_eq!(g, back);
        assert_eq!(g.hash(), back.hash());
        assert_ne!(g.hash(), SensorGeometry::default().hash());
    }

    #[test]
    fn symmetry_inverse_undoes_apply() {
        let p = Point2::new(13.0, 71.5);
        for g in Symmetry::all() {
            let q = g.inverse().apply(g.apply(p, 100.0), 100.0);
            assert!(q.distance(p) < 1e-12, "{g}");
        }
        let mut q = p;
        for _ in 0..4 {
            q = Symmetry::ROT90.apply(q, 100.0);
        }
        assert!(q.distance(p) < 1e-12);
    }
}
