//! Relative voltage-change sensitivity over a grid of lattice widths and
//! layer thicknesses.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, MeasurementFrame, Protocol};
use crate::geometry::{
    baseline_field, generate_mesh, SensorGeometry, DEFAULT_ELEMENT_SIZE,
};
use crate::phantom::{apply_phantom, random_phantom, TouchMode, TouchPhantom};
use crate::rng::derive_seed;

/// References below this magnitude (volts) make the ratio meaningless.
pub const DEGENERATE_REFERENCE: f64 = 1e-15;

/// Mean over channels of |V_touch - V_ref| / |V_ref|.
pub fn v_rel(touch: &MeasurementFrame, reference: &MeasurementFrame) -> Result<f64> {
    let delta = touch.delta(reference)?;
    if delta.is_empty() {
        return Err(Error::Shape("empty frames".into()));
    }
    let mut sum = 0.0;
    for (channel, (d, r)) in delta.iter().zip(&reference.values).enumerate() {
        if !(r.abs() >= DEGENERATE_REFERENCE) {
            return Err(Error::DegenerateReference { channel, value: *r });
        }
        sum += d.abs() / r.abs();
    }
    Ok(sum / delta.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub widths: Vec<f64>,
    pub thicknesses: Vec<f64>,
    /// Phantoms per touch count.
    pub phantoms_per_condition: usize,
    pub touch_counts: Vec<usize>,
    pub master_seed: u64,
    /// Solver mesh size; refined to w/2 in cells with narrower channels.
    pub element_size: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            widths: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            thicknesses: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            phantoms_per_condition: 10,
            touch_counts: vec![1, 2, 3],
            master_seed: 0,
            element_size: DEFAULT_ELEMENT_SIZE,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.widths.is_empty() || self.thicknesses.is_empty() || self.touch_counts.is_empty() {
            return bad("sweep grid must not be empty".into());
        }
        if self.widths.iter().any(|w| !(*w >= 0.0)) {
            return bad("widths must be non-negative".into());
        }
        if self.thicknesses.iter().any(|t| !(*t > 0.0)) {
            return bad("thicknesses must be positive".into());
        }
        if self.phantoms_per_condition == 0 || self.touch_counts.contains(&0) {
            return bad("counts must be positive".into());
        }
        Ok(())
    }

    /// Seed of phantom `k` for the `c`-th touch count; shared by every cell.
    pub fn phantom_seed(&self, c: usize, k: usize) -> u64 {
        derive_seed(self.master_seed, (c * self.phantoms_per_condition + k) as u64)
    }

    pub fn cell_phantoms(&self, geom: &SensorGeometry) -> Result<Vec<TouchPhantom>> {
        let mut out = Vec::new();
        for (c, &n) in self.touch_counts.iter().enumerate() {
            for k in 0..self.phantoms_per_condition {
                out.push(random_phantom(n, TouchMode::Depth, geom, self.phantom_seed(c, k))?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub width: f64,
    pub thickness: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub values: Vec<f64>,
}

impl SweepCell {
    pub fn from_values(width: f64, thickness: f64, values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            width,
            thickness,
            mean,
            std,
            n,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, width: f64, thickness: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.width == width && c.thickness == thickness)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("w,t,mean,std,n\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{:.9e},{:.9e},{}", c.width, c.thickness, c.mean, c.std, c.n);
        }
        out
    }

    pub fn report(&self) -> String {
        let mut out = String::from("  w (mm)  t (mm)      mean V_rel       std    n\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{:8.2}{:8.2}{:16.6e}{:10.3e}{:5}",
                c.width, c.thickness, c.mean, c.std, c.n
            );
        }
        if let Some((w, t)) = select_optimum(self) {
            let _ = writeln!(out, "optimum: w = {w} mm, t = {t} mm");
        }
        out
    }
}

/// V_rel for each phantom on one geometry, against a single reference frame.
pub fn evaluate_geometry(
    geom: &SensorGeometry,
    element_size: f64,
    phantoms: &[TouchPhantom],
) -> Result<Vec<f64>> {
    let h = if geom.channel_width > 0.0 && geom.channel_width < geom.lattice_pitch {
        element_size.min(0.5 * geom.channel_width)
    } else {
        element_size
    };
    let mesh = Arc::new(generate_mesh(geom, h)?);
    let base = baseline_field(geom, &mesh)?;
    let model = ForwardModel::new(mesh.clone(), Protocol::adjacent(geom.electrode_count))?;
    let reference = model.simulate_frame(&base)?;
    phantoms
        .iter()
        .map(|p| {
            let field = apply_phantom(&base, &mesh, geom, p)?;
            v_rel(&model.simulate_frame(&field)?, &reference)
        })
        .collect()
}

pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut cells = Vec::with_capacity(config.widths.len() * config.thicknesses.len());
    for &w in &config.widths {
        for &t in &config.thicknesses {
            let geom = SensorGeometry::with_lattice(w, t);
            geom.validate()?;
            let phantoms = config.cell_phantoms(&geom)?;
            let values = evaluate_geometry(&geom, config.element_size, &phantoms)?;
            cells.push(SweepCell::from_values(w, t, values));
        }
    }
    Ok(SweepResult { cells })
}

/// Cell with the largest mean V_rel; ties go to the smaller width, then the
/// smaller thickness.
pub fn select_optimum(result: &SweepResult) -> Option<(f64, f64)> {
    result
        .cells
        .iter()
        .min_by(|a, b| {
            b.mean
                .total_cmp(&a.mean)
                .then(a.width.total_cmp(&b.width))
                .then(a.thickness.total_cmp(&b.thickness))
        })
        .map(|c| (c.width, c.thickness))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryHash;
    use crate::phantom::TouchPoint;
    use proptest::prelude::*;

    fn frame(values: Vec<f64>) -> MeasurementFrame {
        MeasurementFrame {
            values,
            protocol_version: 1,
            geometry_hash: GeometryHash(1),
        }
    }

    #[test]
    fn v_rel_hand_cases() {
        let r = frame(vec![1.0, 2.0]);
        assert_eq!(v_rel(&r, &r).unwrap(), 0.0);
        assert!((v_rel(&frame(vec![2.0, 4.0]), &r).unwrap() - 1.0).abs() < 1e-15);
        // (0.1/1 + 0.2/2) / 2
        assert!((v_rel(&frame(vec![1.1, 1.8]), &r).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn degenerate_reference_is_rejected() {
        let r = frame(vec![1.0, 1e-16]);
        assert!(matches!(
            v_rel(&r, &r),
            Err(Error::DegenerateReference { channel: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn v_rel_is_scale_invariant(
            vals in prop::collection::vec((0.1f64..10.0, -1.0f64..1.0), 1..20),
            k in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        ) {
            let r: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let t: Vec<f64> = vals.iter().map(|v| v.0 + v.1).collect();
            let a = v_rel(&frame(t.clone()), &frame(r.clone())).unwrap();
            let b = v_rel(
                &frame(t.iter().map(|v| v * k).collect()),
                &frame(r.iter().map(|v| v * k).collect()),
            ).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn optimum_is_invariant_under_scaling(
            means in prop::collection::vec(0.0f64..1.0, 1..12),
            k in 0.01f64..100.0,
        ) {
            let make = |scale: f64| SweepResult {
                cells: means.iter().enumerate().map(|(i, m)| SweepCell {
                    width: (i % 4) as f64, thickness: (i / 4) as f64 + 1.0,
                    mean: m * scale, std: 0.0, n: 1, values: vec![],
                }).collect(),
            };
            prop_assert_eq!(select_optimum(&make(1.0)), select_optimum(&make(k)));
        }
    }

    fn cell(w: f64, t: f64, mean: f64) -> SweepCell {
        SweepCell {
            width: w,
            thickness: t,
            mean,
            std: 0.0,
            n: 1,
            values: vec![mean],
        }
    }

    #[test]
    fn optimum_selection() {
        let single = SweepResult {
            cells: vec![cell(2.0, 2.0, 0.1)],
        };
        assert_eq!(select_optimum(&single), Some((2.0, 2.0)));
        let strict = SweepResult {
            cells: vec![cell(0.0, 3.0, 0.03), cell(4.0, 3.0, 0.07), cell(6.0, 3.0, 0.04)],
        };
        assert_eq!(select_optimum(&strict), Some((4.0, 3.0)));
        let tie = SweepResult {
            cells: vec![cell(6.0, 3.0, 0.07), cell(4.0, 3.0, 0.07)],
        };
        assert_eq!(select_optimum(&tie), Some((4.0, 3.0)));
        assert_eq!(select_optimum(&SweepResult { cells: vec![] }), None);
    }

    #[test]
    fn zero_depth_gives_zero_v_rel() {
        let geom = SensorGeometry::default();
        let p = TouchPhantom::new(
            TouchMode::Depth,
            0,
            vec![TouchPoint::new(50.0, 50.0, 8.0, 0.0)],
        );
        let v = evaluate_geometry(&geom, 4.0, &[p]).unwrap();
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn v_rel_grows_with_press_depth() {
        let geom = SensorGeometry::with_lattice(4.0, 5.0);
        let phantoms: Vec<_> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&d| {
                TouchPhantom::new(
                    TouchMode::Depth,
                    0,
                    vec![TouchPoint::new(37.0, 58.0, 7.5, d)],
                )
            })
            .collect();
        let v = evaluate_geometry(&geom, 2.0, &phantoms).unwrap();
        assert!(v.windows(2).all(|w| w[1] >= w[0]), "{v:?}");
        assert!(v[0] > 0.0);
    }

    #[test]
    fn sweep_is_deterministic_and_shaped() {
        let config = SweepConfig {
            widths: vec![0.0, 4.0],
            thicknesses: vec![3.0],
            phantoms_per_condition: 2,
            touch_counts: vec![1, 2],
            master_seed: 17,
            element_size: 4.0,
        };
        let a = run_sweep(&config).unwrap();
        assert_eq!(a.cells.len(), 2);
        assert!(a.cells.iter().all(|c| c.n == 4 && c.mean.is_finite()));
        assert_eq!(a, run_sweep(&config).unwrap());
        assert!(a.to_table().starts_with("w,t,mean,std,n\n0,3,"));
    }
}
