//! Time evolution of the single-excitation model.
//!
//! Two engines produce the same observables:
//!
//! * [`evolve_full`] integrates the Lindblad master equation for the whole
//!   density matrix. It is the reference path.
//! * [`evolve_fast`] evolves only the excited-sector amplitudes under the
//!   non-Hermitian generator `H_e − (i/2)·Γ`. Every jump lands in the vacuum,
//!   which the Hamiltonian never touches, so the populations and the
//!   vacuum–qubit coherence follow exactly from the no-jump amplitudes.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{InitialState, ModelMatrices, QUBIT, VACUUM};
use crate::ode::{self, Tolerances};
use crate::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Full,
    #[default]
    Fast,
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Engine::Full),
            "fast" => Ok(Engine::Fast),
            other => Err(Error::param(format!("unknown engine `{other}`"))),
        }
    }
}

/// How the fast engine advances the amplitudes between output points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FastPropagator {
    /// One matrix exponential for the output spacing, applied repeatedly.
    #[default]
    Exponential,
    /// The same adaptive Runge–Kutta integrator as the full engine.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// μs
    pub max_step: f64,
    /// μs
    pub horizon: f64,
    pub output_points: usize,
    pub max_steps: usize,
    pub fast_propagator: FastPropagator,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            max_step: 10.0,
            horizon: 500.0,
            output_points: 2000,
            max_steps: 20_000_000,
            fast_propagator: FastPropagator::Exponential,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::param("tolerances must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("horizon must be positive"));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::param("max_step must be positive"));
        }
        if self.output_points < 2 {
            return Err(Error::param("need at least two output points"));
        }
        Ok(())
    }

    /// Uniform output grid `[0, horizon]`.
    pub fn output_grid(&self) -> Vec<f64> {
        let n = self.output_points;
        (0..n)
            .map(|i| self.horizon * i as f64 / (n - 1) as f64)
            .collect()
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances {
            rel: self.rel_tol,
            abs: self.abs_tol,
            max_step: self.max_step,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub p_qubit: f64,
    pub p_tls_total: f64,
    pub coherence_abs: f64,
    pub trace: f64,
}

/// Observables sampled on the output grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub p_qubit: Vec<f64>,
    pub p_tls_total: Vec<f64>,
    pub coherence_abs: Vec<f64>,
    pub trace: Vec<f64>,
    pub engine: Engine,
}

pub const TRAJECTORY_CSV_HEADER: &str = "t_us,p_qubit,p_tls_total,coherence_abs,trace";

impl Trajectory {
    fn with_capacity(n: usize, engine: Engine) -> Self {
        Trajectory {
            t: Vec::with_capacity(n),
            p_qubit: Vec::with_capacity(n),
            p_tls_total: Vec::with_capacity(n),
            coherence_abs: Vec::with_capacity(n),
            trace: Vec::with_capacity(n),
            engine,
        }
    }

    fn push(&mut self, t: f64, o: Observables) {
        self.t.push(t);
        self.p_qubit.push(o.p_qubit);
        self.p_tls_total.push(o.p_tls_total);
        self.coherence_abs.push(o.coherence_abs);
        self.trace.push(o.trace);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Total excitation left in the qubit and the defects.
    pub fn excitation(&self) -> Vec<f64> {
        self.p_qubit
            .iter()
            .zip(&self.p_tls_total)
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(80 * (self.len() + 1));
        out.push_str(TRAJECTORY_CSV_HEADER);
        out.push('\n');
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.t[i], self.p_qubit[i], self.p_tls_total[i], self.coherence_abs[i], self.trace[i]
            );
        }
        out
    }
}

/// Lindblad generator applied to `rho`:
/// `−i[H, ρ] + Σ γ_s (|0⟩⟨s|ρ|s⟩⟨0| − ½{|s⟩⟨s|, ρ})`.
///
/// `rho` must be Hermitian; the commutator is assembled as `Hρ − (Hρ)†`.
pub fn lindblad_rhs(rho: &DMatrix<Complex64>, model: &ModelMatrices) -> Result<DMatrix<Complex64>> {
    if rho.nrows() != model.dim || rho.ncols() != model.dim {
        return Err(Error::Dimension {
            expected: model.dim,
            got: rho.nrows(),
        });
    }
    let rhs = LindbladRhs::new(model);
    let mut out = DMatrix::<Complex64>::zeros(model.dim, model.dim);
    let mut scratch = vec![ZERO; model.dim * model.dim];
    rhs.apply(rho.as_slice(), out.as_mut_slice(), &mut scratch);
    Ok(out)
}

/// Precomputed pieces of the Lindblad generator, column-major like nalgebra.
struct LindbladRhs {
    dim: usize,
    h: Vec<Complex64>,
    /// Total decay rate out of each basis state.
    gamma: Vec<f64>,
}

impl LindbladRhs {
    fn new(model: &ModelMatrices) -> Self {
        LindbladRhs {
            dim: model.dim,
            h: model.hamiltonian.as_slice().to_vec(),
            gamma: model.state_decay_rates(),
        }
    }

    fn apply(&self, rho: &[Complex64], out: &mut [Complex64], hrho: &mut [Complex64]) {
        let n = self.dim;
        // hrho = H·ρ, column by column.
        for c in 0..n {
            let col = &mut hrho[c * n..(c + 1) * n];
            col.fill(ZERO);
            for k in 0..n {
                let r_kc = rho[c * n + k];
                if r_kc == ZERO {
                    continue;
                }
                let h_col = &self.h[k * n..(k + 1) * n];
                for (o, h) in col.iter_mut().zip(h_col) {
                    *o += h * r_kc;
                }
            }
        }
        let mut feed = 0.0;
        for s in 0..n {
            feed += self.gamma[s] * rho[s * n + s].re;
        }
        for c in 0..n {
            for r in 0..n {
                let comm = hrho[c * n + r] - hrho[r * n + c].conj();
                let damp = 0.5 * (self.gamma[r] + self.gamma[c]);
                out[c * n + r] = -I * comm - damp * rho[c * n + r];
            }
        }
        out[VACUUM] += feed;
    }
}

fn as_complex(v: &[f64]) -> &[Complex64] {
    assert!(v.len().is_multiple_of(2));
    // SAFETY: Complex64 is #[repr(C)] { re: f64, im: f64 }, so an even-length
    // f64 slice has the same layout as a Complex64 slice of half the length.
    unsafe { std::slice::from_raw_parts(v.as_ptr().cast::<Complex64>(), v.len() / 2) }
}

fn as_complex_mut(v: &mut [f64]) -> &mut [Complex64] {
    assert!(v.len().is_multiple_of(2));
    // SAFETY: see `as_complex`.
    unsafe { std::slice::from_raw_parts_mut(v.as_mut_ptr().cast::<Complex64>(), v.len() / 2) }
}

fn flatten(m: &[Complex64]) -> Vec<f64> {
    m.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Observables of a density matrix in the model basis.
pub fn observables_rho(rho: &DMatrix<Complex64>) -> Observables {
    observables_slice(rho.as_slice(), rho.nrows())
}

fn observables_slice(rho: &[Complex64], n: usize) -> Observables {
    let diag = |i: usize| rho[i * n + i].re;
    let p_tls_total: f64 = (2..n).map(diag).sum();
    Observables {
        p_qubit: diag(QUBIT),
        p_tls_total,
        // ρ[0, 1] sits in column 1, row 0.
        coherence_abs: rho[QUBIT * n + VACUUM].norm(),
        trace: (0..n).map(diag).sum(),
    }
}

/// Observables of the pure-state family: vacuum amplitude `c_vac` (constant
/// in time) and excited-sector amplitudes `psi` (qubit first).
pub fn observables_psi(c_vac: Complex64, psi: &[Complex64]) -> Observables {
    let p_qubit = psi[0].norm_sqr();
    let p_tls_total: f64 = psi[1..].iter().map(|z| z.norm_sqr()).sum();
    let excited = p_qubit + p_tls_total;
    let vacuum = 1.0 - excited;
    Observables {
        p_qubit,
        p_tls_total,
        coherence_abs: c_vac.norm() * psi[0].norm(),
        trace: vacuum + excited,
    }
}

/// Integrates the master equation from `rho0`.
pub fn evolve_full(
    rho0: &DMatrix<Complex64>,
    model: &ModelMatrices,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    evolve_full_observed(rho0, model, cfg, |_, _| {})
}

/// [`evolve_full`], also handing every output state to `on_state`.
pub fn evolve_full_observed(
    rho0: &DMatrix<Complex64>,
    model: &ModelMatrices,
    cfg: &IntegratorConfig,
    mut on_state: impl FnMut(f64, &DMatrix<Complex64>),
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = model.dim;
    if rho0.nrows() != n || rho0.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: rho0.nrows(),
        });
    }
    let rhs = LindbladRhs::new(model);
    let grid = cfg.output_grid();
    let mut traj = Trajectory::with_capacity(grid.len(), Engine::Full);
    let mut scratch = vec![ZERO; n * n];
    ode::integrate(
        |_, y, dy| rhs.apply(as_complex(y), as_complex_mut(dy), &mut scratch),
        &flatten(rho0.as_slice()),
        &grid,
        &cfg.tolerances(),
        |y| hermitize(as_complex_mut(y), n),
        |_, t, y| {
            let rho = as_complex(y);
            traj.push(t, observables_slice(rho, n));
            on_state(t, &DMatrix::from_column_slice(n, n, rho));
        },
    )?;
    Ok(traj)
}

fn hermitize(rho: &mut [Complex64], n: usize) {
    for c in 0..n {
        rho[c * n + c].im = 0.0;
        for r in (c + 1)..n {
            let a = rho[c * n + r];
            let b = rho[r * n + c];
            let avg = 0.5 * (a + b.conj());
            rho[c * n + r] = avg;
            rho[r * n + c] = avg.conj();
        }
    }
}

/// A pure initial state `c_vac|0⟩ + Σ ψ_j|j⟩` with `ψ` over the excited
/// sector (qubit first, then defects).
#[derive(Debug, Clone, PartialEq)]
pub struct SectorState {
    pub c_vac: Complex64,
    pub excited: Vec<Complex64>,
}

impl SectorState {
    /// Recovers the amplitudes of a pure density matrix; mixed states are not
    /// in the fast engine's family.
    pub fn from_density(rho: &DMatrix<Complex64>) -> Result<Self> {
        let n = rho.nrows();
        let (pivot, weight) = (0..n)
            .map(|i| (i, rho[(i, i)].re))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::UnsupportedState("empty density matrix".into()))?;
        if weight <= 0.0 {
            return Err(Error::UnsupportedState("density matrix has no population".into()));
        }
        let scale = 1.0 / weight.sqrt();
        // ψ_i = ρ[i, p] / sqrt(ρ[p, p]) up to a global phase.
        let psi: Vec<Complex64> = (0..n).map(|i| rho[(i, pivot)] * scale).collect();
        for r in 0..n {
            for c in 0..n {
                if (psi[r] * psi[c].conj() - rho[(r, c)]).norm() > 1e-12 {
                    return Err(Error::UnsupportedState(
                        "the fast engine needs a pure single-excitation state".into(),
                    ));
                }
            }
        }
        Ok(SectorState {
            c_vac: psi[VACUUM],
            excited: psi[1..].to_vec(),
        })
    }

    pub fn from_initial(state: &InitialState, dim: usize) -> Self {
        let (c_vac, c_q) = state.amplitudes();
        let mut excited = vec![ZERO; dim - 1];
        excited[0] = c_q;
        SectorState { c_vac, excited }
    }
}

/// `H_e − (i/2)·Γ` on the excited sector.
pub fn effective_hamiltonian(model: &ModelMatrices) -> DMatrix<Complex64> {
    let m = model.dim - 1;
    let rates = model.state_decay_rates();
    let mut h = model.hamiltonian.view((1, 1), (m, m)).into_owned();
    for j in 0..m {
        h[(j, j)] -= 0.5 * I * rates[j + 1];
    }
    h
}

/// Evolves the excited-sector amplitudes of `state`.
pub fn evolve_fast(state: &SectorState, model: &ModelMatrices, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let m = model.dim - 1;
    if state.excited.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: state.excited.len(),
        });
    }
    let h_eff = effective_hamiltonian(model);
    let grid = cfg.output_grid();
    let mut traj = Trajectory::with_capacity(grid.len(), Engine::Fast);
    match cfg.fast_propagator {
        FastPropagator::Exponential => {
            let dt = grid[1] - grid[0];
            let step = (h_eff * Complex64::new(0.0, -dt)).exp();
            if step.iter().any(|z| !z.is_finite()) {
                return Err(Error::Integration {
                    t: 0.0,
                    reason: "non-finite propagator".into(),
                });
            }
            let mut psi = DVector::from_column_slice(&state.excited);
            let mut next = DVector::<Complex64>::zeros(m);
            for (i, &t) in grid.iter().enumerate() {
                if i > 0 {
                    step.mul_to(&psi, &mut next);
                    std::mem::swap(&mut psi, &mut next);
                }
                traj.push(t, observables_psi(state.c_vac, psi.as_slice()));
            }
        }
        FastPropagator::Adaptive => {
            let h = h_eff.as_slice().to_vec();
            ode::integrate(
                |_, y, dy| {
                    let psi = as_complex(y);
                    let out = as_complex_mut(dy);
                    out.fill(ZERO);
                    for (k, &p) in psi.iter().enumerate() {
                        if p == ZERO {
                            continue;
                        }
                        for (o, h) in out.iter_mut().zip(&h[k * m..(k + 1) * m]) {
                            *o += h * p;
                        }
                    }
                    for o in out.iter_mut() {
                        *o *= -I;
                    }
                },
                &flatten(&state.excited),
                &grid,
                &cfg.tolerances(),
                |_| {},
                |_, t, y| traj.push(t, observables_psi(state.c_vac, as_complex(y))),
            )?;
        }
    }
    Ok(traj)
}

/// Runs `engine` from the given initial state.
pub fn simulate(
    model: &ModelMatrices,
    initial: &InitialState,
    engine: Engine,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    match engine {
        Engine::Full => evolve_full(&initial.rho, model, cfg),
        Engine::Fast => evolve_fast(&SectorState::from_initial(initial, model.dim), model, cfg),
    }
}
