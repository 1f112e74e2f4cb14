use crate::error::{Error, Result};
use crate::geometry::{ConductivityField, GeometryHash, Mesh};
use crate::linalg::{BandCholesky, BandedSym};

use super::ElectrodePair;

const RESIDUAL_TOL: f64 = 1e-10;

/// Assembled (ungrounded) P1 stiffness matrix and its grounding node.
#[derive(Debug, Clone)]
pub struct StiffnessSystem {
    matrix: BandedSym,
    ground: usize,
    geometry_hash: GeometryHash,
}

/// Standard first-order assembly with piecewise-constant conductivity.
pub fn assemble(mesh: &Mesh, field: &ConductivityField) -> Result<StiffnessSystem> {
    mesh.geometry_hash().ensure(field.geometry_hash)?;
    if field.len() != mesh.element_count() {
        return Err(Error::Shape(format!(
            "field has {} values, mesh has {} elements",
            field.len(),
            mesh.element_count()
        )));
    }
    if let Some((e, s)) = field
        .values
        .iter()
        .enumerate()
        .find(|(_, s)| !(**s > 0.0 && s.is_finite()))
    {
        return Err(Error::SingularSystem(format!(
            "element {e} has conductivity {s}"
        )));
    }
    let mut matrix = BandedSym::zeros(mesh.node_count(), mesh.bandwidth());
    for (e, tri) in mesh.elements().iter().enumerate() {
        let g = &mesh.gradients()[e];
        let w = field.values[e] * mesh.areas()[e];
        for a in 0..3 {
            for b in 0..=a {
                let k = w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                if a == b {
                    matrix.add(tri[a], tri[a], k);
                } else {
                    matrix.add(tri[a], tri[b], k);
                }
            }
        }
    }
    Ok(StiffnessSystem {
        matrix,
        ground: mesh.center_node(),
        geometry_hash: mesh.geometry_hash(),
    })
}

impl StiffnessSystem {
    pub fn matrix(&self) -> &BandedSym {
        &self.matrix
    }

    pub fn ground(&self) -> usize {
        self.ground
    }

    pub fn geometry_hash(&self) -> GeometryHash {
        self.geometry_hash
    }

    pub fn with_ground(mut self, node: usize) -> Self {
        self.ground = node;
        self
    }

    /// Grounds the reference node and factorizes.
    pub fn factorize(&self) -> Result<FactorizedSystem> {
        let mut grounded = self.matrix.clone();
        grounded.pin(self.ground);
        let chol = grounded.cholesky()?;
        Ok(FactorizedSystem {
            chol,
            grounded,
            ground: self.ground,
        })
    }
}

/// Cholesky factor of the grounded system, shareable across solves.
#[derive(Debug, Clone)]
pub struct FactorizedSystem {
    chol: BandCholesky,
    grounded: BandedSym,
    ground: usize,
}

impl FactorizedSystem {
    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    /// Solves with the potential pinned to zero at the ground node. One step
    /// of iterative refinement is applied if the first residual is too large.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut b = rhs.to_vec();
        b[self.ground] = 0.0;
        let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = self.chol.solve(&b);
        if norm_b == 0.0 {
            return Ok(x);
        }
        let residual = |x: &[f64]| -> (Vec<f64>, f64) {
            let ax = self.grounded.matvec(x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt() / norm_b;
            (r, n)
        };
        let (r, rel) = residual(&x);
        if rel <= RESIDUAL_TOL {
            return Ok(x);
        }
        let dx = self.chol.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        let (_, rel) = residual(&x);
        if rel <= RESIDUAL_TOL {
            Ok(x)
        } else {
            Err(Error::SolverDivergence { residual: rel })
        }
    }
}

/// Per-electrode nodal weights of the gap model: uniform current density
/// along the electrode edges. The same weights give the length-averaged
/// electrode potential, so injection and measurement are adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeWeights {
    weights: Vec<Vec<(usize, f64)>>,
}

impl ElectrodeWeights {
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let weights = mesh
            .electrode_segments()
            .iter()
            .map(|segs| {
                let mut acc: Vec<(usize, f64)> = Vec::new();
                let mut total = 0.0;
                for &s in segs {
                    let [a, b] = mesh.boundary_edges()[s];
                    let len = mesh.nodes()[a].distance(mesh.nodes()[b]);
                    total += len;
                    for v in [a, b] {
                        match acc.iter_mut().find(|(n, _)| *n == v) {
                            Some(entry) => entry.1 += 0.5 * len,
                            None => acc.push((v, 0.5 * len)),
                        }
                    }
                }
                acc.iter_mut().for_each(|(_, w)| *w /= total);
                acc.sort_by_key(|(n, _)| *n);
                acc
            })
            .collect();
        Self { weights }
    }

    pub fn electrode_count(&self) -> usize {
        self.weights.len()
    }

    pub fn electrode(&self, e: usize) -> &[(usize, f64)] {
        &self.weights[e]
    }

    /// Length-averaged potential over electrode `e`.
    pub fn mean(&self, e: usize, potentials: &[f64]) -> f64 {
        self.weights[e]
            .iter()
            .map(|&(n, w)| w * potentials[n])
            .sum()
    }

    /// Nodal load vector for `current` entering at `pair.pos` and leaving at `pair.neg`.
    pub fn load(&self, pair: ElectrodePair, current: f64, nodes: usize) -> Vec<f64> {
        let mut f = vec![0.0; nodes];
        for &(n, w) in &self.weights[pair.pos] {
            f[n] += current * w;
        }
        for &(n, w) in &self.weights[pair.neg] {
            f[n] -= current * w;
        }
        f
    }

    /// Load vector for a unit of "weight" on a single electrode (not current
    /// conserving on its own; differences of two give a pair injection).
    pub fn unit_load(&self, e: usize, nodes: usize) -> Vec<f64> {
        let mut f = vec![0.0; nodes];
        for &(n, w) in &self.weights[e] {
            f[n] += w;
        }
        f
    }
}

/// Nodal potentials for `current` driven through `pair`.
pub fn solve_injection(
    system: &FactorizedSystem,
    weights: &ElectrodeWeights,
    pair: ElectrodePair,
    current: f64,
) -> Result<Vec<f64>> {
    system.solve(&weights.load(pair, current, system.dim()))
}
