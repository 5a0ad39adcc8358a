//! Ground-truth generator: first-order finite-volume solver for the 2D
//! compressible Euler equations with a Rusanov (local Lax-Friedrichs) flux,
//! reflective obstacles and configurable domain edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field2;
use crate::scenario::{rasterize_layout, GridSpec, ScenarioCase};

/// TNT detonation constants. Only the ratio `e0 / rho0` drives the energy
/// deposition; the JWL coefficients are kept for reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetonationConstants {
    /// Internal energy per unit initial volume, MJ/m³.
    pub e0_mj_per_m3: f64,
    /// Explosive density, kg/m³.
    pub rho0: f64,
    /// Detonation velocity, m/s (unused).
    pub detonation_velocity: f64,
    /// JWL coefficients A and B in MPa and exponents R1, R2, omega (unused).
    pub jwl_a_mpa: f64,
    pub jwl_b_mpa: f64,
    pub jwl_r1: f64,
    pub jwl_r2: f64,
    pub jwl_omega: f64,
}

impl DetonationConstants {
    pub const TNT: Self = Self {
        e0_mj_per_m3: 7000.0,
        rho0: 1630.0,
        detonation_velocity: 6930.0,
        jwl_a_mpa: 3.71e5,
        jwl_b_mpa: 3.23e3,
        jwl_r1: 4.15,
        jwl_r2: 0.95,
        jwl_omega: 0.3,
    };

    /// Energy released per kilogram of charge, MJ/kg.
    pub fn specific_energy_mj_per_kg(&self) -> f64 {
        self.e0_mj_per_m3 / self.rho0
    }

    /// Energy released by `charge_kg`, in joules.
    pub fn charge_energy_j(&self, charge_kg: f64) -> f64 {
        charge_kg * self.specific_energy_mj_per_kg() * 1e6
    }
}

impl Default for DetonationConstants {
    fn default() -> Self {
        Self::TNT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeBoundary {
    /// Zero-gradient ghost cells while the flow leaves the domain, mirror
    /// cells while it points inward, so edges never inject mass or energy.
    Transmissive,
    /// Mirror ghost cells: a closed box.
    Reflective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub gamma: f64,
    pub cfl: f64,
    /// Pa
    pub ambient_pressure: f64,
    /// kg/m³
    pub ambient_density: f64,
    /// Simulated duration, s.
    pub t_end: f64,
    /// Number of output frames, including the initial state.
    pub n_out: usize,
    /// Radius of the energy-deposition disk, m.
    pub source_radius: f64,
    pub edges: EdgeBoundary,
    pub detonation: DetonationConstants,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 1.4,
            cfl: 0.4,
            ambient_pressure: 102_759.0,
            ambient_density: 1.225,
            t_end: 0.15,
            n_out: 290,
            source_radius: 2.0,
            edges: EdgeBoundary::Transmissive,
            detonation: DetonationConstants::TNT,
            max_steps: 2_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(Error::config(format!("cfl {} outside (0, 1)", self.cfl)));
        }
        if !(self.gamma > 1.0) {
            return Err(Error::config(format!("gamma {} must exceed 1", self.gamma)));
        }
        if !(self.ambient_pressure > 0.0 && self.ambient_density > 0.0) {
            return Err(Error::config("ambient state must be positive"));
        }
        if self.n_out < 2 || !(self.t_end > 0.0) {
            return Err(Error::config("need t_end > 0 and at least two output frames"));
        }
        Ok(())
    }

    /// Spacing between output frames.
    pub fn dt_out(&self) -> f64 {
        self.t_end / (self.n_out - 1) as f64
    }

    pub fn ambient_sound_speed(&self) -> f64 {
        (self.gamma * self.ambient_pressure / self.ambient_density).sqrt()
    }

    /// Ambient internal energy per unit mass, J/kg.
    pub fn ambient_specific_internal_energy(&self) -> f64 {
        self.ambient_pressure / ((self.gamma - 1.0) * self.ambient_density)
    }
}

/// Conserved variables per cell, row-major with y outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct ConservedState {
    pub nx: usize,
    pub ny: usize,
    pub rho: Vec<f64>,
    pub rho_u: Vec<f64>,
    pub rho_v: Vec<f64>,
    /// Volumetric total energy ρE, J/m³.
    pub energy: Vec<f64>,
}

impl ConservedState {
    pub fn from_primitive(
        nx: usize,
        ny: usize,
        gamma: f64,
        mut prim: impl FnMut(usize, usize) -> [f64; 4],
    ) -> Self {
        let n = nx * ny;
        let mut s = Self {
            nx,
            ny,
            rho: Vec::with_capacity(n),
            rho_u: Vec::with_capacity(n),
            rho_v: Vec::with_capacity(n),
            energy: Vec::with_capacity(n),
        };
        for j in 0..ny {
            for i in 0..nx {
                let [rho, u, v, p] = prim(i, j);
                s.rho.push(rho);
                s.rho_u.push(rho * u);
                s.rho_v.push(rho * v);
                s.energy.push(p / (gamma - 1.0) + 0.5 * rho * (u * u + v * v));
            }
        }
        s
    }

    pub fn uniform(nx: usize, ny: usize, cfg: &SolverConfig) -> Self {
        let (rho, p) = (cfg.ambient_density, cfg.ambient_pressure);
        Self::from_primitive(nx, ny, cfg.gamma, |_, _| [rho, 0.0, 0.0, p])
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn pressure_at(&self, k: usize, gamma: f64) -> f64 {
        let rho = self.rho[k];
        let ke = 0.5 * (self.rho_u[k] * self.rho_u[k] + self.rho_v[k] * self.rho_v[k]) / rho;
        (gamma - 1.0) * (self.energy[k] - ke)
    }

    /// Σ ρ·dx·dy over fluid cells.
    pub fn total_mass(&self, grid: &GridSpec, solid: &SolidMask) -> f64 {
        sum_fluid(&self.rho, solid) * grid.dx * grid.dy
    }

    pub fn total_energy(&self, grid: &GridSpec, solid: &SolidMask) -> f64 {
        sum_fluid(&self.energy, solid) * grid.dx * grid.dy
    }
}

fn sum_fluid(values: &[f64], solid: &SolidMask) -> f64 {
    values
        .iter()
        .zip(solid.cells.iter())
        .filter(|(_, &s)| !s)
        .map(|(v, _)| v)
        .sum()
}

/// Cells blocked by buildings.
#[derive(Clone, Debug, PartialEq)]
pub struct SolidMask {
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<bool>,
}

impl SolidMask {
    pub fn empty(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            cells: vec![false; nx * ny],
        }
    }

    pub fn from_layout(mask: &Field2<f32>) -> Self {
        Self {
            nx: mask.nx(),
            ny: mask.ny(),
            cells: mask.as_slice().iter().map(|&v| v > 0.5).collect(),
        }
    }

    #[inline]
    pub fn is_solid(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.nx + i]
    }
}

/// Ambient air with the charge energy deposited uniformly in the fluid
/// cells whose centres lie within `source_radius` of the source.
pub fn init_state(
    case: &ScenarioCase,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<(ConservedState, SolidMask)> {
    cfg.validate()?;
    let solid = SolidMask::from_layout(&rasterize_layout(case, grid));
    let mut state = ConservedState::uniform(grid.nx, grid.ny, cfg);
    let src = &case.source;
    if !case.domain.contains(src.x, src.y) {
        return Err(Error::config(format!(
            "source ({}, {}) lies outside the domain",
            src.x, src.y
        )));
    }
    let energy = cfg.detonation.charge_energy_j(src.charge_kg);
    if energy <= 0.0 {
        return Ok((state, solid));
    }

    let mut in_disk = Vec::new();
    let mut any_in_radius = false;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.center(i, j);
            if (x - src.x).hypot(y - src.y) <= cfg.source_radius {
                any_in_radius = true;
                if !solid.is_solid(i, j) {
                    in_disk.push(j * grid.nx + i);
                }
            }
        }
    }
    if !any_in_radius {
        // grid coarser than the disk: fall back to the cell holding the source
        let i = ((src.x / grid.dx) as usize).min(grid.nx - 1);
        let j = ((src.y / grid.dy) as usize).min(grid.ny - 1);
        if !solid.is_solid(i, j) {
            in_disk.push(j * grid.nx + i);
        }
    }
    if in_disk.is_empty() {
        return Err(Error::SourceOccluded {
            x: src.x,
            y: src.y,
            radius: cfg.source_radius,
        });
    }
    // unit depth: the deposited volume is the disk's discrete area × 1 m
    let volume = in_disk.len() as f64 * grid.dx * grid.dy;
    let added = energy / volume;
    for k in in_disk {
        state.energy[k] += added;
    }
    Ok((state, solid))
}

/// Pressure from the ideal-gas equation of state. Fails on the first cell
/// with non-positive density or pressure.
pub fn eos_pressure(state: &ConservedState, gamma: f64) -> Result<Vec<f64>> {
    let mut p = Vec::with_capacity(state.cells());
    for k in 0..state.cells() {
        let rho = state.rho[k];
        let pk = state.pressure_at(k, gamma);
        if !(rho > 0.0) || !(pk > 0.0) {
            return Err(Error::SolverFailure {
                step: 0,
                time: 0.0,
                i: k % state.nx,
                j: k / state.nx,
                reason: format!("non-positive state: rho = {rho}, p = {pk}"),
            });
        }
        p.push(pk);
    }
    Ok(p)
}

/// Largest stable explicit step: `cfl · min(dx, dy) / max(|u| + |v| + c)`.
pub fn stable_dt(
    state: &ConservedState,
    grid: &GridSpec,
    cfg: &SolverConfig,
    solid: &SolidMask,
) -> Result<f64> {
    let h = grid.dx.min(grid.dy);
    let mut max_speed = 0.0f64;
    for k in 0..state.cells() {
        if solid.cells[k] {
            continue;
        }
        let rho = state.rho[k];
        let (u, v) = (state.rho_u[k] / rho, state.rho_v[k] / rho);
        let p = state.pressure_at(k, cfg.gamma);
        let speed = u.abs() + v.abs() + (cfg.gamma * p / rho).sqrt();
        if !speed.is_finite() {
            return Err(Error::SolverFailure {
                step: 0,
                time: 0.0,
                i: k % state.nx,
                j: k / state.nx,
                reason: format!("non-finite wave speed (rho = {rho}, p = {p})"),
            });
        }
        max_speed = max_speed.max(speed);
    }
    if max_speed <= 0.0 {
        return Err(Error::SolverFailure {
            step: 0,
            time: 0.0,
            i: 0,
            j: 0,
            reason: "no fluid cells".into(),
        });
    }
    Ok(cfg.cfl * h / max_speed)
}

#[derive(Clone, Copy, Debug)]
struct Prim {
    rho: f64,
    un: f64,
    ut: f64,
    p: f64,
    e: f64,
    c: f64,
}

/// Rusanov flux normal to a face, in face-local (normal, tangential)
/// components: [mass, normal momentum, tangential momentum, energy].
#[inline]
fn rusanov(l: &Prim, r: &Prim) -> [f64; 4] {
    let fl = [
        l.rho * l.un,
        l.rho * l.un * l.un + l.p,
        l.rho * l.un * l.ut,
        l.un * (l.e + l.p),
    ];
    let fr = [
        r.rho * r.un,
        r.rho * r.un * r.un + r.p,
        r.rho * r.un * r.ut,
        r.un * (r.e + r.p),
    ];
    let ul = [l.rho, l.rho * l.un, l.rho * l.ut, l.e];
    let ur = [r.rho, r.rho * r.un, r.rho * r.ut, r.e];
    let s = (l.un.abs() + l.c).max(r.un.abs() + r.c);
    let mut f = [0.0; 4];
    for q in 0..4 {
        f[q] = 0.5 * (fl[q] + fr[q]) - 0.5 * s * (ur[q] - ul[q]);
    }
    f
}

#[inline]
fn mirror(p: &Prim) -> Prim {
    Prim { un: -p.un, ..*p }
}

/// Advances the fluid cells by one forward-Euler step of size `dt`.
pub fn step(
    state: &ConservedState,
    dt: f64,
    grid: &GridSpec,
    cfg: &SolverConfig,
    solid: &SolidMask,
) -> Result<ConservedState> {
    let (nx, ny) = (state.nx, state.ny);
    let gamma = cfg.gamma;
    let n = nx * ny;
    let mut rho = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut c = vec![0.0; n];
    for k in 0..n {
        if solid.cells[k] {
            continue;
        }
        let r = state.rho[k];
        rho[k] = r;
        u[k] = state.rho_u[k] / r;
        v[k] = state.rho_v[k] / r;
        p[k] = state.pressure_at(k, gamma);
        c[k] = (gamma * p[k] / r).sqrt();
    }
    // x-faces use (u, v) as (normal, tangential); y-faces use (v, u)
    let prim_x = |k: usize| Prim {
        rho: rho[k],
        un: u[k],
        ut: v[k],
        p: p[k],
        e: state.energy[k],
        c: c[k],
    };
    let prim_y = |k: usize| Prim {
        rho: rho[k],
        un: v[k],
        ut: u[k],
        p: p[k],
        e: state.energy[k],
        c: c[k],
    };
    // `outward` is the sign of the edge's outward normal along the face axis
    let edge_ghost = |inner: Prim, outward: f64| match cfg.edges {
        EdgeBoundary::Transmissive if inner.un * outward >= 0.0 => inner,
        _ => mirror(&inner),
    };

    let mut res = vec![[0.0f64; 4]; n];
    let ax = dt / grid.dx;
    let ay = dt / grid.dy;

    for j in 0..ny {
        let row = j * nx;
        for f in 0..=nx {
            let left = (f > 0).then(|| row + f - 1);
            let right = (f < nx).then(|| row + f);
            let ls = left.map(|k| solid.cells[k]).unwrap_or(true);
            let rs = right.map(|k| solid.cells[k]).unwrap_or(true);
            let (l, r) = match (left, right) {
                (Some(kl), Some(kr)) => match (ls, rs) {
                    (false, false) => (prim_x(kl), prim_x(kr)),
                    (false, true) => (prim_x(kl), mirror(&prim_x(kl))),
                    (true, false) => (mirror(&prim_x(kr)), prim_x(kr)),
                    (true, true) => continue,
                },
                (Some(kl), None) if !ls => (prim_x(kl), edge_ghost(prim_x(kl), 1.0)),
                (None, Some(kr)) if !rs => (edge_ghost(prim_x(kr), -1.0), prim_x(kr)),
                _ => continue,
            };
            let flux = rusanov(&l, &r);
            let fx = [flux[0], flux[1], flux[2], flux[3]];
            if let (Some(kl), false) = (left, ls) {
                let q = &mut res[kl];
                q[0] -= ax * fx[0];
                q[1] -= ax * fx[1];
                q[2] -= ax * fx[2];
                q[3] -= ax * fx[3];
            }
            if let (Some(kr), false) = (right, rs) {
                let q = &mut res[kr];
                q[0] += ax * fx[0];
                q[1] += ax * fx[1];
                q[2] += ax * fx[2];
                q[3] += ax * fx[3];
            }
        }
    }
    for i in 0..nx {
        for f in 0..=ny {
            let below = (f > 0).then(|| (f - 1) * nx + i);
            let above = (f < ny).then(|| f * nx + i);
            let bs = below.map(|k| solid.cells[k]).unwrap_or(true);
            let as_ = above.map(|k| solid.cells[k]).unwrap_or(true);
            let (l, r) = match (below, above) {
                (Some(kb), Some(ka)) => match (bs, as_) {
                    (false, false) => (prim_y(kb), prim_y(ka)),
                    (false, true) => (prim_y(kb), mirror(&prim_y(kb))),
                    (true, false) => (mirror(&prim_y(ka)), prim_y(ka)),
                    (true, true) => continue,
                },
                (Some(kb), None) if !bs => (prim_y(kb), edge_ghost(prim_y(kb), 1.0)),
                (None, Some(ka)) if !as_ => (edge_ghost(prim_y(ka), -1.0), prim_y(ka)),
                _ => continue,
            };
            let flux = rusanov(&l, &r);
            // back to (mass, x-momentum, y-momentum, energy)
            let gy = [flux[0], flux[2], flux[1], flux[3]];
            if let (Some(kb), false) = (below, bs) {
                let q = &mut res[kb];
                q[0] -= ay * gy[0];
                q[1] -= ay * gy[1];
                q[2] -= ay * gy[2];
                q[3] -= ay * gy[3];
            }
            if let (Some(ka), false) = (above, as_) {
                let q = &mut res[ka];
                q[0] += ay * gy[0];
                q[1] += ay * gy[1];
                q[2] += ay * gy[2];
                q[3] += ay * gy[3];
            }
        }
    }

    let mut next = state.clone();
    for k in 0..n {
        if solid.cells[k] {
            continue;
        }
        let q = res[k];
        next.rho[k] += q[0];
        next.rho_u[k] += q[1];
        next.rho_v[k] += q[2];
        next.energy[k] += q[3];
        let r = next.rho[k];
        let pk = next.pressure_at(k, gamma);
        if !(r > 0.0 && r.is_finite()) || !(pk > 0.0 && pk.is_finite()) {
            return Err(Error::SolverFailure {
                step: 0,
                time: 0.0,
                i: k % nx,
                j: k / nx,
                reason: format!("positivity lost: rho = {r}, p = {pk}"),
            });
        }
    }
    Ok(next)
}

/// Uniformly sampled pressure frames of one simulated case.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub case_id: String,
    pub grid: GridSpec,
    /// Seconds between consecutive frames.
    pub dt_out: f64,
    /// Pressure in Pa, `frames[k]` at time `k · dt_out`.
    pub frames: Vec<Field2<f32>>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Pressure history of one cell across all frames.
    pub fn history(&self, i: usize, j: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.get(i, j) as f64).collect()
    }
}

/// Statistics of a completed run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationStats {
    pub steps: usize,
    pub final_time: f64,
    pub min_dt: f64,
    pub max_dt: f64,
    /// Simulated time at which each frame was captured.
    pub capture_times: Vec<f64>,
}

fn pressure_frame(state: &ConservedState, gamma: f64) -> Field2<f32> {
    Field2::from_fn(state.nx, state.ny, |i, j| {
        state.pressure_at(j * state.nx + i, gamma) as f32
    })
}

/// Runs a case to `t_end`, capturing frame `k` at the first step whose end
/// time reaches `k · dt_out`.
pub fn simulate(case: &ScenarioCase, grid: &GridSpec, cfg: &SolverConfig) -> Result<FrameSequence> {
    simulate_with_stats(case, grid, cfg).map(|(seq, _)| seq)
}

pub fn simulate_with_stats(
    case: &ScenarioCase,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<(FrameSequence, SimulationStats)> {
    let (state, solid) = init_state(case, grid, cfg)?;
    run_from(state, &solid, &case.case_id, grid, cfg)
}

/// Advances `state` and captures frames as in [`simulate`].
pub fn run_from(
    mut state: ConservedState,
    solid: &SolidMask,
    case_id: &str,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<(FrameSequence, SimulationStats)> {
    cfg.validate()?;
    let dt_out = cfg.dt_out();
    let mut frames = Vec::with_capacity(cfg.n_out);
    let mut stats = SimulationStats {
        min_dt: f64::INFINITY,
        ..Default::default()
    };
    frames.push(pressure_frame(&state, cfg.gamma));
    stats.capture_times.push(0.0);

    let mut t = 0.0;
    let mut steps = 0usize;
    let at = |e: Error, steps: usize, t: f64| match e {
        Error::SolverFailure { i, j, reason, .. } => Error::SolverFailure {
            step: steps,
            time: t,
            i,
            j,
            reason,
        },
        other => other,
    };
    while frames.len() < cfg.n_out {
        if steps >= cfg.max_steps {
            return Err(Error::SolverFailure {
                step: steps,
                time: t,
                i: 0,
                j: 0,
                reason: format!("step budget of {} exhausted", cfg.max_steps),
            });
        }
        let dt = stable_dt(&state, grid, cfg, solid).map_err(|e| at(e, steps, t))?;
        state = step(&state, dt, grid, cfg, solid).map_err(|e| at(e, steps, t))?;
        steps += 1;
        t += dt;
        stats.min_dt = stats.min_dt.min(dt);
        stats.max_dt = stats.max_dt.max(dt);
        // several output times can fall inside one large step
        while frames.len() < cfg.n_out && t >= frames.len() as f64 * dt_out * (1.0 - 1e-12) {
            frames.push(pressure_frame(&state, cfg.gamma));
            stats.capture_times.push(t);
        }
    }
    stats.steps = steps;
    stats.final_time = t;
    Ok((
        FrameSequence {
            case_id: case_id.to_string(),
            grid: *grid,
            dt_out,
            frames,
        },
        stats,
    ))
}
