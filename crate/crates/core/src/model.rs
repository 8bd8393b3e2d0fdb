//! Single-excitation model: Hamiltonian in the frame rotating at the qubit
//! frequency and the phonon-emission channels of the retained defects.
//!
//! Basis: index 0 is the vacuum (qubit and all defects in their ground
//! state), index 1 the excited qubit and index `i + 2` the excited defect `i`
//! of the retained set. Time is in μs and energies in rad/μs throughout.

use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::constants::{PER_SECOND_TO_PER_MICROSECOND, TWO_PI};
use crate::stm::RetainedSet;
use crate::{Error, Result};

pub const VACUUM: usize = 0;
pub const QUBIT: usize = 1;

/// Basis index of retained defect `i`.
pub fn tls_index(i: usize) -> usize {
    i + 2
}

/// Jump from an excited defect to the vacuum at `rate` (1/μs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollapseChannel {
    /// Basis index of the decaying state.
    pub source: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    pub dim: usize,
    /// Hermitian, rad/μs. Row and column 0 are zero.
    pub hamiltonian: DMatrix<Complex64>,
    pub channels: Vec<CollapseChannel>,
}

impl ModelMatrices {
    pub fn build(set: &RetainedSet, qubit_freq_hz: f64) -> Result<Self> {
        let hamiltonian = build_hamiltonian(set, qubit_freq_hz)?;
        let channels = build_collapse(set)?;
        Ok(ModelMatrices {
            dim: hamiltonian.nrows(),
            hamiltonian,
            channels,
        })
    }

    /// Number of retained defects.
    pub fn k(&self) -> usize {
        self.dim - 2
    }

    /// Decay rate of every basis state (zero for the vacuum, the qubit and
    /// dark defects).
    pub fn state_decay_rates(&self) -> Vec<f64> {
        let mut rates = vec![0.0; self.dim];
        for c in &self.channels {
            rates[c.source] += c.rate;
        }
        rates
    }

    /// Per-defect rates 1/T1 in retained order; zero for dark defects.
    pub fn collapse_rates(&self) -> Vec<f64> {
        self.state_decay_rates()[2..].to_vec()
    }

    pub fn max_hermiticity_error(&self) -> f64 {
        let h = &self.hamiltonian;
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for c in 0..self.dim {
                worst = worst.max((h[(r, c)] - h[(c, r)].conj()).norm());
            }
        }
        worst
    }

    /// Debug dump as JSON (real and imaginary parts row by row).
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            dim: usize,
            hamiltonian_re: Vec<Vec<f64>>,
            hamiltonian_im: Vec<Vec<f64>>,
            channels: &'a [CollapseChannel],
        }
        let rows = |f: fn(&Complex64) -> f64| {
            (0..self.dim)
                .map(|r| (0..self.dim).map(|c| f(&self.hamiltonian[(r, c)])).collect())
                .collect()
        };
        Ok(serde_json::to_string_pretty(&Dump {
            dim: self.dim,
            hamiltonian_re: rows(|z| z.re),
            hamiltonian_im: rows(|z| z.im),
            channels: &self.channels,
        })?)
    }
}

/// Hamiltonian of the retained set in the frame rotating at `qubit_freq_hz`.
///
/// Diagonal: defect detunings `2π·(f_i − f_q)`; qubit–defect flip-flop `Ω_i`
/// on row/column 1; defect–defect flip-flop `J_ij` between defect states.
pub fn build_hamiltonian(set: &RetainedSet, qubit_freq_hz: f64) -> Result<DMatrix<Complex64>> {
    if set.is_empty() {
        return Err(Error::Construction("retained set is empty".into()));
    }
    if !qubit_freq_hz.is_finite() {
        return Err(Error::Construction("qubit frequency is not finite".into()));
    }
    let k = set.len();
    let dim = k + 2;
    let to_us = PER_SECOND_TO_PER_MICROSECOND;
    let mut h = DMatrix::<Complex64>::zeros(dim, dim);
    for (i, d) in set.defects.iter().enumerate() {
        let detuning = TWO_PI * (d.energy_freq_hz - qubit_freq_hz) * to_us;
        let omega = d.omega * to_us;
        if !detuning.is_finite() || !omega.is_finite() {
            return Err(Error::Construction(format!("defect {i} has non-finite parameters")));
        }
        let s = tls_index(i);
        h[(s, s)] = Complex64::new(detuning, 0.0);
        h[(QUBIT, s)] = Complex64::new(omega, 0.0);
        h[(s, QUBIT)] = Complex64::new(omega, 0.0);
        for j in (i + 1)..k {
            let v = set.coupling(i, j) * to_us;
            if !v.is_finite() {
                return Err(Error::Construction(format!("J[{i}][{j}] is not finite")));
            }
            let t = tls_index(j);
            h[(s, t)] = Complex64::new(v, 0.0);
            h[(t, s)] = Complex64::new(v, 0.0);
        }
    }
    Ok(h)
}

/// One channel per defect with a finite relaxation time; dark defects have
/// none and the qubit never decays directly.
pub fn build_collapse(set: &RetainedSet) -> Result<Vec<CollapseChannel>> {
    let mut out = Vec::with_capacity(set.len());
    for (i, d) in set.defects.iter().enumerate() {
        let t1 = d.t1_tls_us;
        if t1.is_nan() || t1 <= 0.0 {
            return Err(Error::Construction(format!("defect {i} has relaxation time {t1}")));
        }
        if t1.is_infinite() {
            continue;
        }
        out.push(CollapseChannel {
            source: tls_index(i),
            rate: 1.0 / t1,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InitialKind {
    /// Qubit in |1⟩, for T1.
    Excited,
    /// Qubit in (|0⟩ + |1⟩)/√2, for T2.
    Superposition,
}

impl FromStr for InitialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "excited" => Ok(InitialKind::Excited),
            "superposition" => Ok(InitialKind::Superposition),
            other => Err(Error::UnsupportedState(format!("unknown initial state `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub kind: InitialKind,
    pub rho: DMatrix<Complex64>,
}

impl InitialState {
    /// Amplitudes `(c_vac, c_qubit)` of the pure initial state.
    pub fn amplitudes(&self) -> (Complex64, Complex64) {
        match self.kind {
            InitialKind::Excited => (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
            InitialKind::Superposition => {
                let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                (a, a)
            }
        }
    }
}

/// Pure initial state with every defect in its ground state.
pub fn initial_state(kind: InitialKind, dim: usize) -> Result<InitialState> {
    if dim < 3 {
        return Err(Error::Dimension { expected: 3, got: dim });
    }
    let mut rho = DMatrix::<Complex64>::zeros(dim, dim);
    match kind {
        InitialKind::Excited => rho[(QUBIT, QUBIT)] = Complex64::new(1.0, 0.0),
        InitialKind::Superposition => {
            for r in [VACUUM, QUBIT] {
                for c in [VACUUM, QUBIT] {
                    rho[(r, c)] = Complex64::new(0.5, 0.0);
                }
            }
        }
    }
    Ok(InitialState { kind, rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::Position;
    use crate::stm::TlsDefect;

    fn tls(freq: f64, omega: f64, t1: f64, x: f64) -> TlsDefect {
        TlsDefect {
            index: 0,
            position: Position { x, y: 0.0, depth: 0.0 },
            energy_freq_hz: freq,
            delta0_norm: 1.0,
            delta_norm: 0.0,
            log_tan_half_theta: 0.0,
            dipole_debye: 3.0,
            dipole_field_angle: 0.0,
            local_field: [1.0, 0.0, 0.0],
            g: omega,
            omega,
            t1_tls_us: t1,
            distance_to_jj_um: x,
        }
    }

    #[test]
    fn single_resonant_tls() {
        let omega = TWO_PI * 0.1 * 1e6; // rad/s
        let set = RetainedSet::new(vec![tls(5e9, omega, 0.1, 0.0)]);
        let h = build_hamiltonian(&set, 5e9).unwrap();
        assert_eq!(h.nrows(), 3);
        for r in 0..3 {
            for c in 0..3 {
                let expected = if (r, c) == (1, 2) || (r, c) == (2, 1) {
                    TWO_PI * 0.1
                } else {
                    0.0
                };
                assert!((h[(r, c)].re - expected).abs() < 1e-12 && h[(r, c)].im == 0.0);
            }
        }
    }

    #[test]
    fn detuning_units() {
        let set = RetainedSet::new(vec![tls(5e9 + 10e6, 0.0, 0.1, 0.0)]);
        let h = build_hamiltonian(&set, 5e9).unwrap();
        let d = h[(2, 2)].re;
        assert!((d - 62.831_853_071_795_86).abs() / 62.83 < 1e-9, "{d}");
    }

    #[test]
    fn decoupled_pair_has_no_cross_term() {
        let a = tls(5e9, 1e5, 0.1, 0.0);
        let b = tls(5e9, 1e5, 0.1, 1.0);
        let set = RetainedSet::from_parts(vec![a, b], vec![0.0; 4]).unwrap();
        let m = ModelMatrices::build(&set, 5e9).unwrap();
        assert_eq!(m.hamiltonian[(2, 3)], Complex64::new(0.0, 0.0));
        assert_eq!(m.hamiltonian[(3, 2)], Complex64::new(0.0, 0.0));
        assert_eq!(m.max_hermiticity_error(), 0.0);
        for i in 0..m.dim {
            assert_eq!(m.hamiltonian[(0, i)], Complex64::new(0.0, 0.0));
            assert_eq!(m.hamiltonian[(i, 0)], Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn collapse_channels() {
        let mut dark = tls(5e9, 0.0, f64::INFINITY, 2.0);
        dark.delta0_norm = 0.0;
        let set = RetainedSet::new(vec![tls(5e9, 1e5, 0.05, 0.0), dark, tls(5e9, 1e5, 0.5, 1.0)]);
        let ch = build_collapse(&set).unwrap();
        assert_eq!(ch.len(), 2);
        assert_eq!(ch[0], CollapseChannel { source: 2, rate: 20.0 });
        assert_eq!(ch[1].source, 4);
        let m = ModelMatrices::build(&set, 5e9).unwrap();
        assert_eq!(m.collapse_rates(), vec![20.0, 0.0, 2.0]);

        let bad = RetainedSet::new(vec![tls(5e9, 1e5, -1.0, 0.0)]);
        assert!(build_collapse(&bad).is_err());
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let set = RetainedSet::new(vec![tls(f64::NAN, 1e5, 0.1, 0.0)]);
        assert!(matches!(build_hamiltonian(&set, 5e9), Err(Error::Construction(_))));
        let empty = RetainedSet::new(vec![]);
        assert!(build_hamiltonian(&empty, 5e9).is_err());
    }

    #[test]
    fn initial_states() {
        let e = initial_state(InitialKind::Excited, 3).unwrap();
        assert_eq!(e.rho[(1, 1)], Complex64::new(1.0, 0.0));
        assert_eq!(e.rho.iter().filter(|z| z.norm() > 0.0).count(), 1);
        let s = initial_state(InitialKind::Superposition, 4).unwrap();
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(s.rho[(r, c)], Complex64::new(0.5, 0.0));
        }
        for st in [&e, &s] {
            assert!((st.rho.trace() - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        assert!(initial_state(InitialKind::Excited, 2).is_err());
        assert!("bogus".parse::<InitialKind>().is_err());
        assert_eq!("superposition".parse::<InitialKind>().unwrap(), InitialKind::Superposition);
    }
}
