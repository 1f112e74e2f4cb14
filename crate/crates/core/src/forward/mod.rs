//! Discretized forward problem, adjacent measurement protocol and the
//! sensitivity (Jacobian) matrix.

mod frame;
mod jacobian;
mod protocol;
mod system;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{ConductivityField, Mesh};

pub use frame::{read_frames, write_frames, MeasurementFrame, FRAME_HEADER_BYTES};
pub use jacobian::{jacobian_raster, Jacobian, RasterJacobian};
pub use protocol::{Channel, ElectrodePair, Protocol, DEFAULT_CURRENT, PROTOCOL_VERSION};
pub use system::{
    assemble, solve_injection, ElectrodeWeights, FactorizedSystem, StiffnessSystem,
};

/// Unit-current potentials for every distinct electrode pair of a protocol.
#[derive(Debug, Clone)]
pub struct PairSolutions {
    pairs: Vec<ElectrodePair>,
    potentials: Vec<Vec<f64>>,
}

impl PairSolutions {
    pub fn pairs(&self) -> &[ElectrodePair] {
        &self.pairs
    }

    /// Potentials for unit current through `pair`; a reversed pair is negated.
    pub fn potential(&self, pair: ElectrodePair) -> Option<(&[f64], f64)> {
        if let Some(i) = self.pairs.iter().position(|p| *p == pair) {
            Some((&self.potentials[i], 1.0))
        } else {
            self.pairs
                .iter()
                .position(|p| *p == pair.reversed())
                .map(|i| (self.potentials[i].as_slice(), -1.0))
        }
    }
}

/// Mesh, protocol and electrode model bundled for repeated simulation.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    mesh: Arc<Mesh>,
    protocol: Protocol,
    weights: ElectrodeWeights,
    ground: Option<usize>,
}

impl ForwardModel {
    pub fn new(mesh: Arc<Mesh>, protocol: Protocol) -> Result<Self> {
        if protocol.electrode_count() != mesh.electrode_segments().len() {
            return Err(Error::Shape(format!(
                "protocol uses {} electrodes, mesh has {}",
                protocol.electrode_count(),
                mesh.electrode_segments().len()
            )));
        }
        let weights = ElectrodeWeights::from_mesh(&mesh);
        Ok(Self {
            mesh,
            protocol,
            weights,
            ground: None,
        })
    }

    /// Overrides the grounding node (defaults to the node nearest the centre).
    pub fn with_ground(mut self, node: usize) -> Self {
        self.ground = Some(node);
        self
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn weights(&self) -> &ElectrodeWeights {
        &self.weights
    }

    pub fn factorize(&self, field: &ConductivityField) -> Result<FactorizedSystem> {
        let mut system = assemble(&self.mesh, field)?;
        if let Some(g) = self.ground {
            system = system.with_ground(g);
        }
        system.factorize()
    }

    /// One factorization and one unit-current solve per distinct pair.
    pub fn solve_pairs(
        &self,
        field: &ConductivityField,
        protocol: &Protocol,
    ) -> Result<PairSolutions> {
        let system = self.factorize(field)?;
        let pairs = protocol.pairs();
        let potentials = pairs
            .iter()
            .map(|&p| solve_injection(&system, &self.weights, p, 1.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(PairSolutions { pairs, potentials })
    }

    fn measure(&self, solutions: &PairSolutions, protocol: &Protocol) -> MeasurementFrame {
        let current = protocol.current();
        let values = protocol
            .channels()
            .iter()
            .map(|c| {
                let (u, sign) = solutions
                    .potential(c.drive)
                    .expect("drive pair was solved");
                let v = self.weights.mean(c.measure.pos, u) - self.weights.mean(c.measure.neg, u);
                sign * current * v
            })
            .collect();
        MeasurementFrame {
            values,
            protocol_version: protocol.version(),
            geometry_hash: self.mesh.geometry_hash(),
        }
    }

    pub fn simulate_frame(&self, field: &ConductivityField) -> Result<MeasurementFrame> {
        self.simulate_with(field, &self.protocol)
    }

    /// Simulates an arbitrary protocol (e.g. the extended reciprocal set).
    pub fn simulate_with(
        &self,
        field: &ConductivityField,
        protocol: &Protocol,
    ) -> Result<MeasurementFrame> {
        let sol = self.solve_pairs(field, protocol)?;
        Ok(self.measure(&sol, protocol))
    }

    pub fn jacobian(&self, field: &ConductivityField) -> Result<Jacobian> {
        let sol = self.solve_pairs(field, &self.protocol)?;
        Ok(Jacobian::from_solutions(&self.mesh, &self.protocol, &sol))
    }

    /// Reference frame and Jacobian from a single factorization.
    pub fn frame_and_jacobian(
        &self,
        field: &ConductivityField,
    ) -> Result<(MeasurementFrame, Jacobian)> {
        let sol = self.solve_pairs(field, &self.protocol)?;
        let frame = self.measure(&sol, &self.protocol);
        let jac = Jacobian::from_solutions(&self.mesh, &self.protocol, &sol);
        Ok((frame, jac))
    }

    /// Element current-density magnitudes |sigma grad u| for `current`
    /// driven through `pair`.
    pub fn current_density(
        &self,
        field: &ConductivityField,
        pair: ElectrodePair,
        current: f64,
    ) -> Result<Vec<f64>> {
        let system = self.factorize(field)?;
        let u = solve_injection(&system, &self.weights, pair, current)?;
        Ok(self
            .mesh
            .elements()
            .iter()
            .zip(self.mesh.gradients())
            .zip(&field.values)
            .map(|((t, g), s)| {
                let gx: f64 = (0..3).map(|i| g[i][0] * u[t[i]]).sum();
                let gy: f64 = (0..3).map(|i| g[i][1] * u[t[i]]).sum();
                s * gx.hypot(gy)
            })
            .collect())
    }
}
