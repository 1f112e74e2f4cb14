use serde::{Deserialize, Serialize};

use super::{GeometryHash, Mesh, Region, SensorGeometry};
use crate::error::{Error, Result};

/// Background hydrogel conductivity in S/m.
pub const SIGMA0: f64 = 0.00312;
/// Layer thickness (mm) at which the sheet conductance equals `SIGMA0`.
pub const T_REF: f64 = 3.0;
/// Silicone conductivity as a fraction of `SIGMA0`.
pub const FLOOR_RATIO: f64 = 1e-6;

/// Per-element conductivity over a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductivityField {
    pub values: Vec<f64>,
    pub geometry_hash: GeometryHash,
}

impl ConductivityField {
    pub fn new(values: Vec<f64>, mesh: &Mesh) -> Result<Self> {
        if values.len() != mesh.element_count() {
            return Err(Error::Shape(format!(
                "field has {} values, mesh has {} elements",
                values.len(),
                mesh.element_count()
            )));
        }
        Ok(Self {
            values,
            geometry_hash: mesh.geometry_hash(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            geometry_hash: self.geometry_hash,
        }
    }

    /// Element-wise `self - other`; used for difference images.
    pub fn difference(&self, other: &ConductivityField) -> Result<Vec<f64>> {
        self.geometry_hash.ensure(other.geometry_hash)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect())
    }
}

/// No-touch conductivity: thickness-scaled hydrogel in the channels and a
/// small positive floor in the silicone.
pub fn baseline_field(geom: &SensorGeometry, mesh: &Mesh) -> Result<ConductivityField> {
    baseline_field_with_floor(geom, mesh, FLOOR_RATIO)
}

pub fn baseline_field_with_floor(
    geom: &SensorGeometry,
    mesh: &Mesh,
    floor_ratio: f64,
) -> Result<ConductivityField> {
    geom.hash().ensure(mesh.geometry_hash())?;
    let channel = SIGMA0 * geom.thickness_factor();
    let floor = SIGMA0 * floor_ratio;
    let values = mesh
        .element_region()
        .iter()
        .map(|r| match r {
            Region::Channel => channel,
            Region::Matrix => floor,
        })
        .collect();
    ConductivityField::new(values, mesh)
}
