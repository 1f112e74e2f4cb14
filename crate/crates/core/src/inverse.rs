//! One-step Tikhonov difference imaging and a ridge-regression linear
//! inverse map, plus their binary container.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{jacobian_raster, ForwardModel, MeasurementFrame, Protocol, RasterJacobian};
use crate::geometry::{
    baseline_field, generate_mesh, GeometryHash, Rasterizer, ReconstructionImage, SensorGeometry,
    IMAGE_PIXELS,
};

pub const DEFAULT_LAMBDA: f64 = 1e-3;
pub const DEFAULT_RIDGE: f64 = 1e-3;
pub const MIN_TRAINING_PAIRS: usize = 500;

const MAGIC: &[u8; 8] = b"LEITINV1";
const KIND_TIKHONOV: u32 = 1;
const KIND_LINEAR: u32 = 2;

/// Conductivity model the Tikhonov Jacobian is linearized about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linearization {
    /// Uniform sheet with the same electrodes and the lattice's mean sheet
    /// conductance. Its smooth pixel sensitivities keep the image peak at the
    /// touch instead of snapping to strip edges.
    #[default]
    Homogenized,
    /// The lattice baseline itself.
    Exact,
}

/// Raster Jacobian for reconstructing frames measured on `geom`; the result
/// is bound to `geom`'s hash whichever model it was linearized about.
pub fn sensor_raster_jacobian(
    geom: &SensorGeometry,
    element_size: f64,
    linearization: Linearization,
) -> Result<RasterJacobian> {
    let model_geom = match linearization {
        Linearization::Exact => geom.clone(),
        Linearization::Homogenized => SensorGeometry {
            channel_width: 0.0,
            ..geom.clone()
        },
    };
    let mesh = Arc::new(generate_mesh(&model_geom, element_size)?);
    let mut field = baseline_field(&model_geom, &mesh)?;
    if linearization == Linearization::Homogenized {
        let lattice = generate_mesh(geom, element_size)?;
        field = field.scaled(lattice.channel_area() / lattice.total_area());
    }
    let model = ForwardModel::new(mesh.clone(), Protocol::adjacent(geom.electrode_count))?;
    let jac = model.jacobian(&field)?;
    let mut raster = jacobian_raster(&jac, &Rasterizer::new(&mesh))?;
    raster.geometry_hash = geom.hash();
    Ok(raster)
}

/// Zeroth-order Tikhonov: minimizes ||J x - dV||^2 + lambda s ||x||^2 with
/// s = trace(J^T J) / pixels.
#[derive(Debug, Clone)]
pub struct TikhonovSolver {
    jacobian: DMatrix<f64>,
    lambda: f64,
    scale: f64,
    /// Precomputed (J^T J + lambda s I)^-1 J^T, pixels x channels.
    operator: DMatrix<f64>,
    geometry_hash: GeometryHash,
    protocol_version: u32,
}

impl TikhonovSolver {
    pub fn new(jacobian: &RasterJacobian, lambda: f64) -> Result<Self> {
        Self::from_parts(
            jacobian.matrix.clone(),
            lambda,
            jacobian.geometry_hash,
            jacobian.protocol_version,
        )
    }

    fn from_parts(
        jacobian: DMatrix<f64>,
        lambda: f64,
        geometry_hash: GeometryHash,
        protocol_version: u32,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        let pixels = jacobian.ncols();
        let scale = jacobian.iter().map(|v| v * v).sum::<f64>() / pixels as f64;
        // (J^T J + a I)^-1 J^T = J^T (J J^T + a I)^-1: only a channels x channels
        // system needs factorizing.
        let mut gram = &jacobian * jacobian.transpose();
        for i in 0..gram.nrows() {
            gram[(i, i)] += lambda * scale;
        }
        let chol = gram.cholesky().ok_or_else(|| {
            Error::SingularSystem("regularized Gram matrix is not positive definite".into())
        })?;
        let operator = chol.solve(&jacobian).transpose();
        Ok(Self {
            jacobian,
            lambda,
            scale,
            operator,
            geometry_hash,
            protocol_version,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    pub fn geometry_hash(&self) -> GeometryHash {
        self.geometry_hash
    }

    pub fn reconstruct_delta(&self, delta: &[f64]) -> Result<ReconstructionImage> {
        check_channels(delta, self.operator.ncols())?;
        let x = &self.operator * DVector::from_column_slice(delta);
        ReconstructionImage::new(x.as_slice().to_vec(), self.geometry_hash)
    }

    pub fn reconstruct(
        &self,
        touch: &MeasurementFrame,
        reference: &MeasurementFrame,
    ) -> Result<ReconstructionImage> {
        self.geometry_hash.ensure(reference.geometry_hash)?;
        self.reconstruct_delta(&touch.delta(reference)?)
    }

    /// ||(J^T J + lambda s I) x - J^T dV|| / ||J^T dV||.
    pub fn normal_residual(&self, image: &[f64], delta: &[f64]) -> f64 {
        let x = DVector::from_column_slice(image);
        let b = self.jacobian.transpose() * DVector::from_column_slice(delta);
        let ax = self.jacobian.transpose() * (&self.jacobian * &x) + &x * (self.lambda * self.scale);
        (ax - &b).norm() / b.norm()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(
            w,
            &Header {
                kind: KIND_TIKHONOV,
                rows: self.jacobian.nrows(),
                cols: self.jacobian.ncols(),
                param: self.lambda,
                geometry_hash: self.geometry_hash,
                protocol_version: self.protocol_version,
                dataset_hash: [0; 32],
            },
        )?;
        write_matrix(w, &self.jacobian)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let h = read_header(r, KIND_TIKHONOV)?;
        let j = read_matrix(r, h.rows, h.cols)?;
        Self::from_parts(j, h.param, h.geometry_hash, h.protocol_version)
    }
}

fn check_channels(delta: &[f64], channels: usize) -> Result<()> {
    if delta.len() != channels {
        return Err(Error::Shape(format!(
            "{} channel values, expected {channels}",
            delta.len()
        )));
    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("non-finite channel value".into()));
    }
    Ok(())
}

/// Affine map image = F dV + b fitted by ridge regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInverseMap {
    pub matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// Ridge parameter relative to the mean input variance.
    pub ridge: f64,
    pub geometry_hash: GeometryHash,
    pub protocol_version: u32,
    pub dataset_hash: [u8; 32],
}

/// Training pairs as row-major matrices: `inputs` is samples x channels and
/// `targets` samples x pixels.
pub struct TrainingSet<'a> {
    pub inputs: &'a DMatrix<f64>,
    pub targets: &'a DMatrix<f64>,
    pub geometry_hash: GeometryHash,
    pub protocol_version: u32,
    pub dataset_hash: [u8; 32],
}

/// Closed-form ridge regression on centred data. The penalty mu ||F||^2 uses
/// mu = ridge * trace(X_c^T X_c) / channels so the parameter is unit-free.
pub fn fit_linear_map(data: &TrainingSet<'_>, ridge: f64) -> Result<LinearInverseMap> {
    let (x, y) = (data.inputs, data.targets);
    let n = x.nrows();
    if n < MIN_TRAINING_PAIRS {
        return Err(Error::InsufficientData {
            needed: MIN_TRAINING_PAIRS,
            got: n,
        });
    }
    if y.nrows() != n {
        return Err(Error::Shape(format!("{n} inputs but {} targets", y.nrows())));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge must be positive, got {ridge}")));
    }
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let xt = xc.transpose();
    let mut gram = &xt * &xc;
    let channels = gram.nrows();
    let trace = gram.trace();
    let mu = if trace > 0.0 {
        ridge * trace / channels as f64
    } else {
        ridge
    };
    for i in 0..channels {
        gram[(i, i)] += mu;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("ridge Gram matrix".into()))?;
    // F^T = (X^T X + mu I)^-1 X^T Y
    let ft = chol.solve(&(&xt * &yc));
    let matrix = ft.transpose();
    let bias = y_mean.transpose() - &matrix * x_mean.transpose();
    Ok(LinearInverseMap {
        matrix,
        bias,
        ridge,
        geometry_hash: data.geometry_hash,
        protocol_version: data.protocol_version,
        dataset_hash: data.dataset_hash,
    })
}

impl LinearInverseMap {
    /// F dV + b as a flat vector.
    pub fn apply_raw(&self, delta: &[f64]) -> Result<Vec<f64>> {
        check_channels(delta, self.matrix.ncols())?;
        let x = &self.matrix * DVector::from_column_slice(delta) + &self.bias;
        Ok(x.as_slice().to_vec())
    }

    pub fn apply_delta(&self, delta: &[f64]) -> Result<ReconstructionImage> {
        ReconstructionImage::new(self.apply_raw(delta)?, self.geometry_hash)
    }

    pub fn apply(
        &self,
        touch: &MeasurementFrame,
        reference: &MeasurementFrame,
    ) -> Result<ReconstructionImage> {
        self.geometry_hash.ensure(reference.geometry_hash)?;
        self.apply_delta(&touch.delta(reference)?)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(
            w,
            &Header {
                kind: KIND_LINEAR,
                rows: self.matrix.nrows(),
                cols: self.matrix.ncols(),
                param: self.ridge,
                geometry_hash: self.geometry_hash,
                protocol_version: self.protocol_version,
                dataset_hash: self.dataset_hash,
            },
        )?;
        write_matrix(w, &self.matrix)?;
        for v in self.bias.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let h = read_header(r, KIND_LINEAR)?;
        let matrix = read_matrix(r, h.rows, h.cols)?;
        let bias = read_matrix(r, h.rows, 1)?;
        Ok(Self {
            matrix,
            bias: bias.column(0).into_owned(),
            ridge: h.param,
            geometry_hash: h.geometry_hash,
            protocol_version: h.protocol_version,
            dataset_hash: h.dataset_hash,
        })
    }
}

/// Either reconstruction model, as loaded from a container file.
#[derive(Debug, Clone)]
pub enum InverseModel {
    Tikhonov(TikhonovSolver),
    Linear(LinearInverseMap),
}

impl InverseModel {
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() < 12 || &buf[..8] != MAGIC {
            return Err(format_err("bad magic"));
        }
        match u32::from_le_bytes(buf[8..12].try_into().unwrap()) {
            KIND_TIKHONOV => Ok(Self::Tikhonov(TikhonovSolver::read_from(&mut buf.as_slice())?)),
            KIND_LINEAR => Ok(Self::Linear(LinearInverseMap::read_from(&mut buf.as_slice())?)),
            k => Err(format_err(&format!("unknown model kind {k}"))),
        }
    }

    pub fn reconstruct_delta(&self, delta: &[f64]) -> Result<ReconstructionImage> {
        match self {
            Self::Tikhonov(s) => s.reconstruct_delta(delta),
            Self::Linear(m) => m.apply_delta(delta),
        }
    }

    pub fn geometry_hash(&self) -> GeometryHash {
        match self {
            Self::Tikhonov(s) => s.geometry_hash,
            Self::Linear(m) => m.geometry_hash,
        }
    }
}

struct Header {
    kind: u32,
    rows: usize,
    cols: usize,
    param: f64,
    geometry_hash: GeometryHash,
    protocol_version: u32,
    dataset_hash: [u8; 32],
}

fn format_err(detail: &str) -> Error {
    Error::Format {
        what: "inverse model",
        detail: detail.to_string(),
    }
}

fn write_header<W: Write>(w: &mut W, h: &Header) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&h.kind.to_le_bytes())?;
    w.write_all(&(h.rows as u32).to_le_bytes())?;
    w.write_all(&(h.cols as u32).to_le_bytes())?;
    w.write_all(&h.param.to_le_bytes())?;
    w.write_all(&h.geometry_hash.0.to_le_bytes())?;
    w.write_all(&h.protocol_version.to_le_bytes())?;
    w.write_all(&h.dataset_hash)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, kind: u32) -> Result<Header> {
    let mut buf = [0u8; 8 + 4 + 4 + 4 + 8 + 8 + 4 + 32];
    r.read_exact(&mut buf)
        .map_err(|e| format_err(&format!("truncated header: {e}")))?;
    if &buf[..8] != MAGIC {
        return Err(format_err("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let found = u32_at(8);
    if found != kind {
        return Err(format_err(&format!("expected model kind {kind}, found {found}")));
    }
    let rows = u32_at(12) as usize;
    let cols = u32_at(16) as usize;
    if rows == 0 || cols == 0 || rows.max(cols) > 16 * IMAGE_PIXELS {
        return Err(format_err(&format!("implausible shape {rows}x{cols}")));
    }
    Ok(Header {
        kind,
        rows,
        cols,
        param: f64::from_le_bytes(buf[20..28].try_into().unwrap()),
        geometry_hash: GeometryHash(u64::from_le_bytes(buf[28..36].try_into().unwrap())),
        protocol_version: u32_at(36),
        dataset_hash: buf[40..72].try_into().unwrap(),
    })
}

fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut buf = vec![0u8; 8 * rows * cols];
    r.read_exact(&mut buf)
        .map_err(|e| format_err(&format!("truncated body: {e}")))?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(format_err("non-finite entry"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// SHA-256 over arbitrary byte chunks, for binding a map to its data.
pub fn content_hash<'a>(chunks: impl IntoIterator<Item = &'a [u8]>) -> [u8; 32] {
    let mut h = Sha256::new();
    for c in chunks {
        h.update(c);
    }
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;
    use std::sync::OnceLock;

    use super::*;
    use crate::geometry::Point2;
    use crate::phantom::{apply_phantom, TouchMode, TouchPhantom, TouchPoint};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    struct Fixture {
        geom: SensorGeometry,
        model: ForwardModel,
        base: crate::geometry::ConductivityField,
        reference: MeasurementFrame,
        raster: Rasterizer,
        solver: TikhonovSolver,
    }

    fn fixture() -> &'static Fixture {
        static CELL: OnceLock<Fixture> = OnceLock::new();
        CELL.get_or_init(|| {
            let geom = SensorGeometry::default();
            let mesh = Arc::new(generate_mesh(&geom, 2.0).unwrap());
            let base = baseline_field(&geom, &mesh).unwrap();
            let model = ForwardModel::new(mesh.clone(), Protocol::adjacent(16)).unwrap();
            let reference = model.simulate_frame(&base).unwrap();
            let raster = Rasterizer::new(&mesh);
            let jr = sensor_raster_jacobian(&geom, 2.0, Linearization::Homogenized).unwrap();
            let solver = TikhonovSolver::new(&jr, DEFAULT_LAMBDA).unwrap();
            Fixture {
                geom,
                model,
                base,
                reference,
                raster,
                solver,
            }
        })
    }

    fn touch_delta(f: &Fixture, touches: Vec<TouchPoint>) -> Vec<f64> {
        let p = TouchPhantom::new(TouchMode::Contrast, 0, touches);
        let field = apply_phantom(&f.base, f.model.mesh(), &f.geom, &p).unwrap();
        f.model
            .simulate_frame(&field)
            .unwrap()
            .delta(&f.reference)
            .unwrap()
    }

    #[test]
    fn zero_delta_gives_zero_image() {
        let f = fixture();
        let img = f.solver.reconstruct(&f.reference, &f.reference).unwrap();
        assert!(img.pixels.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn over_regularization_vanishes() {
        let f = fixture();
        let d = touch_delta(f, vec![TouchPoint::new(30.0, 60.0, 8.0, 2.0)]);
        let big = TikhonovSolver::from_parts(
            f.solver.jacobian.clone(),
            1e9,
            f.solver.geometry_hash,
            1,
        )
        .unwrap();
        let a = f.solver.reconstruct_delta(&d).unwrap().norm();
        let b = big.reconstruct_delta(&d).unwrap().norm();
        assert!(b < 1e-6 * a);
    }

    #[test]
    fn single_touch_is_localized() {
        let f = fixture();
        let d = touch_delta(f, vec![TouchPoint::new(25.0, 25.0, 8.75, 2.0)]);
        let img = f.solver.reconstruct_delta(&d).unwrap();
        let (row, col) = img.argmax();
        let grid = f.raster.grid();
        let truth = grid.pixel_at(Point2::new(25.0, 25.0)).unwrap();
        let (tr, tc) = (truth / 48, truth % 48);
        assert!(row.abs_diff(tr) <= 1 && col.abs_diff(tc) <= 1, "{row},{col} vs {tr},{tc}");
    }

    #[test]
    fn homogenized_model_localizes_better_than_exact() {
        let f = fixture();
        let exact = TikhonovSolver::new(
            &sensor_raster_jacobian(&f.geom, 2.0, Linearization::Exact).unwrap(),
            DEFAULT_LAMBDA,
        )
        .unwrap();
        assert_eq!(exact.geometry_hash(), f.solver.geometry_hash());
        let grid = f.raster.grid();
        let mut r = rng::seeded(77);
        let (mut hom, mut exa) = (0, 0);
        for _ in 0..12 {
            let rad = r.random_range(6.25..=13.75);
            let x = r.random_range(rad..=100.0 - rad);
            let y = r.random_range(rad..=100.0 - rad);
            let d = touch_delta(f, vec![TouchPoint::new(x, y, rad, 2.0)]);
            let t = grid.pixel_at(Point2::new(x, y)).unwrap();
            let hit = |img: ReconstructionImage| {
                let (row, col) = img.argmax();
                row.abs_diff(t / 48) <= 1 && col.abs_diff(t % 48) <= 1
            };
            hom += hit(f.solver.reconstruct_delta(&d).unwrap()) as usize;
            exa += hit(exact.reconstruct_delta(&d).unwrap()) as usize;
        }
        assert!(hom >= 10 && hom > exa, "homogenized {hom}, exact {exa}");
    }

    #[test]
    fn normal_equations_hold() {
        let f = fixture();
        let d = touch_delta(f, vec![TouchPoint::new(60.0, 40.0, 10.0, 0.3)]);
        let img = f.solver.reconstruct_delta(&d).unwrap();
        assert!(f.solver.normal_residual(&img.pixels, &d) <= 1e-8);
    }

    #[test]
    fn hash_mismatch_is_rejected() {
        let f = fixture();
        let mut other = f.reference.clone();
        other.geometry_hash = GeometryHash(f.reference.geometry_hash.0 ^ 1);
        assert!(matches!(
            f.solver.reconstruct(&other, &other),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn noise_moves_peak_by_at_most_one_pixel() {
        let f = fixture();
        let d = touch_delta(f, vec![TouchPoint::new(62.0, 70.0, 8.0, 2.0)]);
        let clean = f.solver.reconstruct_delta(&d).unwrap().argmax();
        let rms = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
        let sd = rms * 10f64.powf(-40.0 / 20.0);
        let mut r = rng::seeded(4);
        let normal = rand_distr::Normal::new(0.0, sd).unwrap();
        let noisy: Vec<f64> = d.iter().map(|v| v + r.sample(normal)).collect();
        let n = f.solver.reconstruct_delta(&noisy).unwrap().argmax();
        assert!(clean.0.abs_diff(n.0) <= 1 && clean.1.abs_diff(n.1) <= 1);
    }

    #[test]
    fn tikhonov_container_roundtrip() {
        let f = fixture();
        let mut buf = Vec::new();
        f.solver.write_to(&mut buf).unwrap();
        let back = match InverseModel::read_from(&mut buf.as_slice()).unwrap() {
            InverseModel::Tikhonov(s) => s,
            _ => panic!("wrong kind"),
        };
        assert_eq!(back.jacobian, f.solver.jacobian);
        assert_eq!(back.operator, f.solver.operator);
        buf[0] = b'X';
        assert!(InverseModel::read_from(&mut buf.as_slice()).is_err());
    }

    fn synthetic(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        // targets are an exact affine function of the inputs plus nothing else
        let mut r = rng::seeded(seed);
        let x = DMatrix::from_fn(n, 6, |_, _| r.random::<f64>() - 0.5);
        let w = DMatrix::from_fn(6, 9, |i, j| ((i * 9 + j) as f64 * 0.37).sin());
        let mut y = &x * &w;
        for mut row in y.row_iter_mut() {
            row.add_scalar_mut(0.25);
        }
        (x, y)
    }

    fn set<'a>(x: &'a DMatrix<f64>, y: &'a DMatrix<f64>) -> TrainingSet<'a> {
        TrainingSet {
            inputs: x,
            targets: y,
            geometry_hash: GeometryHash(1),
            protocol_version: 1,
            dataset_hash: [7; 32],
        }
    }

    #[test]
    fn ridge_limits() {
        let (x, y) = synthetic(600, 1);
        let zero = DMatrix::zeros(600, 9);
        let m = fit_linear_map(&set(&x, &zero), 1e-3).unwrap();
        assert!(m.matrix.iter().all(|v| *v == 0.0) && m.bias.iter().all(|v| *v == 0.0));

        let m = fit_linear_map(&set(&x, &y), 1e12).unwrap();
        assert!(m.matrix.amax() < 1e-9);
        let mean = y.row_mean();
        for j in 0..9 {
            assert!((m.bias[j] - mean[j]).abs() < 1e-9);
        }

        // tiny ridge recovers the exact affine map
        let m = fit_linear_map(&set(&x, &y), 1e-12).unwrap();
        let pred = &x * m.matrix.transpose();
        for i in 0..600 {
            for j in 0..9 {
                assert!((pred[(i, j)] + m.bias[j] - y[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn too_few_pairs() {
        let (x, y) = synthetic(499, 2);
        assert!(matches!(
            fit_linear_map(&set(&x, &y), 1e-3),
            Err(Error::InsufficientData { needed: 500, got: 499 })
        ));
    }

    #[test]
    fn linear_container_roundtrip() {
        let (x, y) = synthetic(600, 3);
        let m = fit_linear_map(&set(&x, &y), 1e-3).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        match InverseModel::read_from(&mut buf.as_slice()).unwrap() {
            InverseModel::Linear(back) => assert_eq!(back, m),
            _ => panic!("wrong kind"),
        }
        buf.truncate(buf.len() - 3);
        assert!(LinearInverseMap::read_from(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn tikhonov_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let f = fixture();
            let mut r = rng::seeded(seed);
            let d1: Vec<f64> = (0..104).map(|_| r.random::<f64>() - 0.5).collect();
            let d2: Vec<f64> = (0..104).map(|_| r.random::<f64>() - 0.5).collect();
            let mix: Vec<f64> = d1.iter().zip(&d2).map(|(x, y)| a * x + b * y).collect();
            let i1 = f.solver.reconstruct_delta(&d1).unwrap();
            let i2 = f.solver.reconstruct_delta(&d2).unwrap();
            let im = f.solver.reconstruct_delta(&mix).unwrap();
            let scale = im.norm().max(i1.norm()).max(i2.norm());
            for p in 0..IMAGE_PIXELS {
                let e = a * i1.pixels[p] + b * i2.pixels[p];
                prop_assert!((im.pixels[p] - e).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn linear_map_is_affine(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let (x, y) = synthetic(600, 5);
            let m = fit_linear_map(&set(&x, &y), 1e-3).unwrap();
            let d1 = [0.1, -0.2, 0.3, 0.0, 0.05, -0.4];
            let d2 = [-0.3, 0.1, 0.0, 0.2, -0.1, 0.25];
            let mix: Vec<f64> = d1.iter().zip(&d2).map(|(p, q)| a * p + b * q).collect();
            let z = m.apply_raw(&[0.0; 6]).unwrap();
            prop_assert_eq!(z.as_slice(), m.bias.as_slice());
            let lin = |d: &[f64]| -> DVector<f64> {
                DVector::from_vec(m.apply_raw(d).unwrap()) - &m.bias
            };
            let lhs = lin(&mix);
            let rhs = lin(&d1) * a + lin(&d2) * b;
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }
    }
}
