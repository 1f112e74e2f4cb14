use serde::{Deserialize, Serialize};

use super::{Point2, SensorGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// Conductive hydrogel strip.
    Channel,
    /// Non-conductive silicone between strips.
    Matrix,
}

/// Point classifier for the strip-grid lattice.
///
/// Strips of width `w` run horizontally and vertically, centred on lines
/// spaced `pitch` apart and anchored at the domain centre, so the mask is
/// invariant under every symmetry of the square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeMask {
    side: f64,
    width: f64,
    pitch: f64,
}

impl LatticeMask {
    pub fn new(geom: &SensorGeometry) -> Self {
        Self {
            side: geom.side_length,
            width: geom.channel_width,
            pitch: geom.lattice_pitch,
        }
    }

    /// True when the lattice degenerates to a uniform conductive sheet.
    pub fn is_uniform(&self) -> bool {
        self.width <= 0.0 || self.width >= self.pitch
    }

    /// Distance from coordinate `v` to the nearest strip centre line.
    fn line_distance(&self, v: f64) -> f64 {
        let r = (v - 0.5 * self.side).rem_euclid(self.pitch);
        r.min(self.pitch - r)
    }

    pub fn classify(&self, p: Point2) -> Region {
        if self.is_uniform() {
            return Region::Channel;
        }
        let half = 0.5 * self.width;
        if self.line_distance(p.x) <= half || self.line_distance(p.y) <= half {
            Region::Channel
        } else {
            Region::Matrix
        }
    }

    /// Strip-centre line positions inside `[0, side]`.
    pub fn line_positions(&self) -> Vec<f64> {
        let c = 0.5 * self.side;
        let k = (c / self.pitch).floor() as i64;
        (-k..=k).map(|i| c + i as f64 * self.pitch).collect()
    }

    /// Strip boundaries clipped to the domain, as breakpoints for meshing.
    pub fn strip_edges(&self) -> Vec<f64> {
        if self.is_uniform() {
            return Vec::new();
        }
        let half = 0.5 * self.width;
        let mut edges = Vec::new();
        let c = 0.5 * self.side;
        let k = (c / self.pitch).ceil() as i64 + 1;
        for i in -k..=k {
            let line = c + i as f64 * self.pitch;
            for e in [line - half, line + half] {
                if e > 0.0 && e < self.side {
                    edges.push(e);
                }
            }
        }
        edges
    }
}
