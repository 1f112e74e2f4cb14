use nalgebra::DMatrix;

use super::{PairSolutions, Protocol};
use crate::error::{Error, Result};
use crate::geometry::{GeometryHash, Mesh, Rasterizer, IMAGE_PIXELS};

/// Sensitivity of each channel to each element conductivity (V per S/m).
#[derive(Debug, Clone)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    pub geometry_hash: GeometryHash,
    pub protocol_version: u32,
}

/// Sensitivity to pixel-constant conductivity changes (channels x 2304).
#[derive(Debug, Clone)]
pub struct RasterJacobian {
    pub matrix: DMatrix<f64>,
    pub geometry_hash: GeometryHash,
    pub protocol_version: u32,
}

fn element_gradients(mesh: &Mesh, u: &[f64]) -> Vec<[f64; 2]> {
    mesh.elements()
        .iter()
        .zip(mesh.gradients())
        .map(|(t, g)| {
            let mut out = [0.0; 2];
            for i in 0..3 {
                out[0] += g[i][0] * u[t[i]];
                out[1] += g[i][1] * u[t[i]];
            }
            out
        })
        .collect()
}

impl Jacobian {
    /// Adjoint formula: dV/dsigma_e = -I * area_e * grad u_drive . grad u_meas,
    /// both potentials for unit current.
    pub(super) fn from_solutions(
        mesh: &Mesh,
        protocol: &Protocol,
        solutions: &PairSolutions,
    ) -> Self {
        let grads: Vec<Vec<[f64; 2]>> = solutions
            .potentials
            .iter()
            .map(|u| element_gradients(mesh, u))
            .collect();
        let index = |p| {
            if let Some(i) = solutions.pairs.iter().position(|q| *q == p) {
                (i, 1.0)
            } else {
                let i = solutions
                    .pairs
                    .iter()
                    .position(|q| q.reversed() == p)
                    .expect("pair was solved");
                (i, -1.0)
            }
        };
        let areas = mesh.areas();
        let n_el = mesh.element_count();
        let current = protocol.current();
        let mut matrix = DMatrix::zeros(protocol.len(), n_el);
        for (row, c) in protocol.channels().iter().enumerate() {
            let (d, sd) = index(c.drive);
            let (m, sm) = index(c.measure);
            let k = -current * sd * sm;
            for e in 0..n_el {
                let (a, b) = (grads[d][e], grads[m][e]);
                matrix[(row, e)] = k * areas[e] * (a[0] * b[0] + a[1] * b[1]);
            }
        }
        Self {
            matrix,
            geometry_hash: mesh.geometry_hash(),
            protocol_version: protocol.version(),
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Chains the element Jacobian with the element-average map so that column
/// `p` is the response to a unit conductivity change over pixel `p`.
pub fn jacobian_raster(jac: &Jacobian, rasterizer: &Rasterizer) -> Result<RasterJacobian> {
    jac.geometry_hash.ensure(rasterizer.geometry_hash())?;
    if jac.cols() != rasterizer.element_count() {
        return Err(Error::Shape(format!(
            "jacobian has {} columns, rasterizer {} elements",
            jac.cols(),
            rasterizer.element_count()
        )));
    }
    let areas = rasterizer.element_areas();
    let mut matrix = DMatrix::zeros(jac.rows(), IMAGE_PIXELS);
    for p in 0..IMAGE_PIXELS {
        for &(e, a) in rasterizer.pixel_entries(p) {
            let w = a / areas[e];
            for r in 0..jac.rows() {
                matrix[(r, p)] += w * jac.matrix[(r, e)];
            }
        }
    }
    Ok(RasterJacobian {
        matrix,
        geometry_hash: jac.geometry_hash,
        protocol_version: jac.protocol_version,
    })
}
