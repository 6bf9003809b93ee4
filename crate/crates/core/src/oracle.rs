//! Quasi-static potential solver.
//!
//! Solves `div(sigma grad phi) = 0` on the conductive voxels with a 7-point
//! finite-volume stencil. Face conductance is the harmonic mean of the two
//! voxel conductivities times face area over center distance. Electrode
//! voxels are Dirichlet nodes; faces toward air and the grid boundary carry
//! no current. The resulting system is symmetric positive definite and is
//! solved with Jacobi-preconditioned conjugate gradients.
//!
//! The model is purely resistive: permittivity plays no part here.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ElectrodeLayout;
use crate::tissue::TissueTable;
use crate::volume::{GridMeta, LabelVolume, ScalarField, Unit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveParams {
    pub voltage_a: f64,
    pub voltage_b: f64,
    pub rel_residual_tol: f64,
    /// `None` means `200 * n_unknowns^(1/3)`.
    pub max_iterations: Option<usize>,
    /// Voxels with conductivity below this (S/m) are insulating.
    pub sigma_floor: f64,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            voltage_a: 1.0,
            voltage_b: -1.0,
            rel_residual_tol: 1e-8,
            max_iterations: None,
            sigma_floor: 1e-9,
        }
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_residual_tol > 0.0) {
            return Err(Error::Invalid("rel_residual_tol must be > 0".into()));
        }
        if !(self.voltage_a.is_finite() && self.voltage_b.is_finite()) {
            return Err(Error::Invalid("electrode voltages must be finite".into()));
        }
        if !(self.sigma_floor >= 0.0) {
            return Err(Error::Invalid("sigma_floor must be >= 0".into()));
        }
        Ok(())
    }

    fn iteration_budget(&self, unknowns: usize) -> usize {
        self.max_iterations
            .unwrap_or_else(|| (200.0 * (unknowns.max(1) as f64).cbrt()).ceil() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSolution {
    /// Potential in volts; zero outside `conductive`.
    pub phi: ScalarField,
    /// Voxels in the solved component (electrode voxels included).
    pub conductive: Vec<bool>,
    pub iterations: usize,
    pub final_residual: f64,
    pub voltage_a: f64,
    pub voltage_b: f64,
}

impl PotentialSolution {
    /// Voxels whose potential leaves `[min(Va,Vb) - slack, max(Va,Vb) + slack]`.
    pub fn max_principle_violations(&self, slack: f64) -> usize {
        let lo = self.voltage_a.min(self.voltage_b) - slack;
        let hi = self.voltage_a.max(self.voltage_b) + slack;
        self.phi
            .values()
            .iter()
            .zip(&self.conductive)
            .filter(|&(&p, &c)| c && !(lo..=hi).contains(&p))
            .count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveLog {
    pub iterations: usize,
    pub final_residual: f64,
    pub n_unknowns: usize,
    pub wall_seconds: f64,
}

const NONE: u32 = u32::MAX;

/// Assembled linear system over the free (non-electrode) conductive voxels.
struct System {
    /// voxel index of each unknown
    voxels: Vec<usize>,
    diag: Vec<f64>,
    nbr: Vec<[u32; 6]>,
    g: Vec<[f64; 6]>,
    rhs: Vec<f64>,
}

impl System {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            let mut acc = self.diag[i] * x[i];
            let nb = &self.nbr[i];
            let g = &self.g[i];
            for k in 0..6 {
                if nb[k] != NONE {
                    acc -= g[k] * x[nb[k] as usize];
                }
            }
            *out = acc;
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conductive voxels connected to electrode `a` via 6-neighbors.
fn connected_component(meta: &GridMeta, conductive: &[bool], seeds: &[usize]) -> Vec<bool> {
    let mut seen = vec![false; meta.len()];
    let mut stack: Vec<usize> = Vec::new();
    for &s in seeds {
        if conductive[s] && !seen[s] {
            seen[s] = true;
            stack.push(s);
        }
    }
    while let Some(i) = stack.pop() {
        for axis in 0..3 {
            for dir in [-1, 1] {
                if let Some(n) = meta.neighbor(i, axis, dir) {
                    if conductive[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
    }
    seen
}

pub fn solve_potential(
    volume: &LabelVolume,
    table: &TissueTable,
    layout: &ElectrodeLayout,
    params: &SolveParams,
) -> Result<PotentialSolution> {
    params.validate()?;
    let meta = *volume.meta();
    layout.check_grid(&meta)?;
    let (sigma, _) = table.lookup_properties(volume)?;
    let sigma = sigma.into_values();
    let conducting: Vec<bool> = sigma.iter().map(|&s| s >= params.sigma_floor && s > 0.0).collect();

    // Dirichlet value per voxel, NaN where free
    let mut fixed = vec![f64::NAN; meta.len()];
    for (patch, v) in [(&layout.patch_a, params.voltage_a), (&layout.patch_b, params.voltage_b)] {
        for &i in patch {
            if !conducting[i] {
                return Err(Error::Invalid(format!("electrode voxel {i} is not conductive")));
            }
            fixed[i] = v;
        }
    }

    let from_a = connected_component(&meta, &conducting, &layout.patch_a);
    if !layout.patch_b.iter().any(|&i| from_a[i]) {
        return Err(Error::NoConductivePath);
    }
    // Components touching only one patch are still well posed (constant
    // potential); components touching neither are excluded.
    let seeds: Vec<usize> = layout.patch_a.iter().chain(&layout.patch_b).copied().collect();
    let solved = connected_component(&meta, &conducting, &seeds);

    let mut unknown_of = vec![NONE; meta.len()];
    let mut voxels = Vec::new();
    for i in 0..meta.len() {
        if solved[i] && fixed[i].is_nan() {
            unknown_of[i] = voxels.len() as u32;
            voxels.push(i);
        }
    }
    let [sx, sy, sz] = meta.spacing;
    let coef = [sy * sz / sx, sx * sz / sy, sx * sy / sz];

    let n = voxels.len();
    let mut sys = System {
        voxels,
        diag: vec![0.0; n],
        nbr: vec![[NONE; 6]; n],
        g: vec![[0.0; 6]; n],
        rhs: vec![0.0; n],
    };
    for u in 0..n {
        let i = sys.voxels[u];
        let mut slot = 0;
        for axis in 0..3 {
            for dir in [-1i8, 1] {
                let Some(j) = meta.neighbor(i, axis, dir) else { continue };
                if !solved[j] {
                    continue;
                }
                let g = harmonic(sigma[i], sigma[j]) * coef[axis];
                sys.diag[u] += g;
                if fixed[j].is_nan() {
                    sys.nbr[u][slot] = unknown_of[j];
                    sys.g[u][slot] = g;
                    slot += 1;
                } else {
                    sys.rhs[u] += g * fixed[j];
                }
            }
        }
    }

    let x0 = 0.5 * (params.voltage_a + params.voltage_b);
    let (x, iterations, final_residual) = pcg(&sys, x0, params.rel_residual_tol, params.iteration_budget(n))?;

    let mut phi = vec![0.0; meta.len()];
    for i in 0..meta.len() {
        if !fixed[i].is_nan() {
            phi[i] = fixed[i];
        }
    }
    for (u, &i) in sys.voxels.iter().enumerate() {
        phi[i] = x[u];
    }
    Ok(PotentialSolution {
        phi: ScalarField::new(meta, phi, Unit::Volt)?,
        conductive: solved,
        iterations,
        final_residual,
        voltage_a: params.voltage_a,
        voltage_b: params.voltage_b,
    })
}

fn pcg(sys: &System, x0: f64, tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)> {
    let n = sys.diag.len();
    let mut x = vec![x0; n];
    if n == 0 {
        return Ok((x, 0, 0.0));
    }
    let b_norm = dot(&sys.rhs, &sys.rhs).sqrt();
    let mut q = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64], q: &mut [f64]| -> f64 {
        sys.apply(x, q);
        for i in 0..n {
            r[i] = sys.rhs[i] - q[i];
        }
        dot(r, r).sqrt()
    };
    let mut r = vec![0.0; n];
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut res = true_residual(&x, &mut r, &mut q) / scale;
    if res <= tol || b_norm == 0.0 && res == 0.0 {
        return Ok((x, 0, res));
    }
    let inv_diag: Vec<f64> = sys.diag.iter().map(|&d| 1.0 / d).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut it = 0;
    while it < max_iter {
        it += 1;
        sys.apply(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = dot(&r, &r).sqrt() / scale;
        if res <= tol {
            // confirm against the recomputed residual; restart if the
            // recurrence has drifted
            res = true_residual(&x, &mut r, &mut q) / scale;
            if res <= tol {
                return Ok((x, it, res));
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        iterations: it,
        residual: res,
    })
}

/// Solve and time; returns the solution and its log entry.
pub fn solve_logged(
    volume: &LabelVolume,
    table: &TissueTable,
    layout: &ElectrodeLayout,
    params: &SolveParams,
) -> Result<(PotentialSolution, SolveLog)> {
    let t = Instant::now();
    let sol = solve_potential(volume, table, layout, params)?;
    let log = SolveLog {
        iterations: sol.iterations,
        final_residual: sol.final_residual,
        n_unknowns: sol.conductive.iter().filter(|&&c| c).count()
            - layout.patch_a.len()
            - layout.patch_b.len(),
        wall_seconds: t.elapsed().as_secs_f64(),
    };
    Ok((sol, log))
}

/// Field magnitude |grad phi| in V/cm; zero outside the solved voxels.
///
/// Central differences where both axis neighbors are conductive, one-sided
/// where only one is, and no contribution from an axis with neither.
pub fn field_magnitude(solution: &PotentialSolution, meta: &GridMeta) -> Result<ScalarField> {
    solution.phi.meta().ensure_same(meta)?;
    let phi = solution.phi.values();
    let cond = &solution.conductive;
    let mut out = vec![0.0; meta.len()];
    for i in 0..meta.len() {
        if !cond[i] {
            continue;
        }
        let mut sum = 0.0;
        for axis in 0..3 {
            let h = meta.spacing[axis];
            let lo = meta.neighbor(i, axis, -1).filter(|&j| cond[j]);
            let hi = meta.neighbor(i, axis, 1).filter(|&j| cond[j]);
            let g = match (lo, hi) {
                (Some(l), Some(u)) => (phi[u] - phi[l]) / (2.0 * h),
                (None, Some(u)) => (phi[u] - phi[i]) / h,
                (Some(l), None) => (phi[i] - phi[l]) / h,
                (None, None) => 0.0,
            };
            sum += g * g;
        }
        // V/mm -> V/cm
        out[i] = sum.sqrt() * 10.0;
    }
    ScalarField::new(*meta, out, Unit::VoltPerCm)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearityReport {
    /// max |E(2V) - 2 E(V)| / max 2 E(V) over the compared voxels
    pub max_rel_deviation: f64,
    pub voxels_compared: usize,
    /// conductive voxels outside the electrode-connected component
    pub voxels_excluded: usize,
}

/// Solve at the given drive and at twice the drive; compare |E| scaling.
pub fn linearity_check(
    volume: &LabelVolume,
    table: &TissueTable,
    layout: &ElectrodeLayout,
    params: &SolveParams,
) -> Result<LinearityReport> {
    let meta = volume.meta();
    let one = solve_potential(volume, table, layout, params)?;
    let doubled = SolveParams {
        voltage_a: 2.0 * params.voltage_a,
        voltage_b: 2.0 * params.voltage_b,
        ..params.clone()
    };
    let two = solve_potential(volume, table, layout, &doubled)?;
    let e1 = field_magnitude(&one, meta)?;
    let e2 = field_magnitude(&two, meta)?;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut compared = 0;
    for i in 0..meta.len() {
        if one.conductive[i] {
            compared += 1;
            worst = worst.max((e2.get(i) - 2.0 * e1.get(i)).abs());
            scale = scale.max(2.0 * e1.get(i));
        }
    }
    let (sigma, _) = table.lookup_properties(volume)?;
    let conductive_total = sigma.values().iter().filter(|&&s| s >= params.sigma_floor && s > 0.0).count();
    Ok(LinearityReport {
        max_rel_deviation: if scale > 0.0 { worst / scale } else { 0.0 },
        voxels_compared: compared,
        voxels_excluded: conductive_total - compared,
    })
}

/// Per-voxel current imbalance `sum_faces G (phi_nbr - phi_v)` for every free
/// solved voxel (A/..., in the solver's units).
pub fn current_imbalance(
    volume: &LabelVolume,
    table: &TissueTable,
    layout: &ElectrodeLayout,
    solution: &PotentialSolution,
) -> Result<Vec<f64>> {
    let meta = volume.meta();
    let (sigma, _) = table.lookup_properties(volume)?;
    let sigma = sigma.values();
    let phi = solution.phi.values();
    let mut electrode = vec![false; meta.len()];
    for &i in layout.patch_a.iter().chain(&layout.patch_b) {
        electrode[i] = true;
    }
    let [sx, sy, sz] = meta.spacing;
    let coef = [sy * sz / sx, sx * sz / sy, sx * sy / sz];
    let mut out = Vec::new();
    for i in 0..meta.len() {
        if !solution.conductive[i] || electrode[i] {
            continue;
        }
        let mut flux = 0.0;
        for axis in 0..3 {
            for dir in [-1, 1] {
                if let Some(j) = meta.neighbor(i, axis, dir) {
                    if solution.conductive[j] {
                        flux += harmonic(sigma[i], sigma[j]) * coef[axis] * (phi[j] - phi[i]);
                    }
                }
            }
        }
        out.push(flux);
    }
    Ok(out)
}
