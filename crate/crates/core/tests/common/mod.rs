//! Shared helpers for the integration tests: an independent superoperator
//! oracle, random models and a Kolmogorov–Smirnov statistic.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tlsbath::model::{CollapseChannel, ModelMatrices};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Generator acting on column-stacked `vec(ρ)`, built from explicit jump
/// operators `√γ |0⟩⟨s|` with `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`.
pub fn liouvillian(model: &ModelMatrices) -> DMatrix<Complex64> {
    let n = model.dim;
    let id = DMatrix::<Complex64>::identity(n, n);
    let h = &model.hamiltonian;
    let i = Complex64::new(0.0, 1.0);
    let mut l = (kron(&id, h) - kron(&h.transpose(), &id)) * (-i);
    for ch in &model.channels {
        let mut jump = DMatrix::<Complex64>::zeros(n, n);
        jump[(0, ch.source)] = Complex64::new(ch.rate.sqrt(), 0.0);
        let jdj = jump.adjoint() * &jump;
        l += kron(&jump.conjugate(), &jump);
        l -= kron(&id, &jdj) * Complex64::new(0.5, 0.0);
        l -= kron(&jdj.transpose(), &id) * Complex64::new(0.5, 0.0);
    }
    l
}

/// ρ on a uniform grid `t_j = j·dt`, propagated by `exp(L·dt)`.
pub fn oracle_states(model: &ModelMatrices, rho0: &DMatrix<Complex64>, dt: f64, steps: usize) -> Vec<DMatrix<Complex64>> {
    let n = model.dim;
    let prop = (liouvillian(model) * Complex64::new(dt, 0.0)).exp();
    let mut v = nalgebra::DVector::from_column_slice(rho0.as_slice());
    let mut out = Vec::with_capacity(steps + 1);
    out.push(rho0.clone());
    for _ in 0..steps {
        v = &prop * v;
        out.push(DMatrix::from_column_slice(n, n, v.as_slice()));
    }
    out
}

/// Qubit coupled resonantly to one defect decaying at `gamma`.
pub fn single_tls(omega: f64, gamma: f64) -> ModelMatrices {
    let mut h = DMatrix::zeros(3, 3);
    h[(1, 2)] = Complex64::new(omega, 0.0);
    h[(2, 1)] = Complex64::new(omega, 0.0);
    ModelMatrices {
        dim: 3,
        hamiltonian: h,
        channels: vec![CollapseChannel { source: 2, rate: gamma }],
    }
}

/// Random model with `k` defects: detunings within ±20 rad/μs, couplings up
/// to 2 rad/μs, pair couplings up to 0.5 rad/μs, decay rates 0.02–20 /μs and
/// roughly one dark defect in five.
pub fn random_model(k: usize, seed: u64) -> ModelMatrices {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = k + 2;
    let mut h = DMatrix::<Complex64>::zeros(n, n);
    let mut channels = Vec::new();
    for s in 2..n {
        h[(s, s)] = Complex64::new(rng.random_range(-20.0..20.0), 0.0);
        let om = Complex64::new(rng.random_range(-2.0..2.0), 0.0);
        h[(1, s)] = om;
        h[(s, 1)] = om;
        for t in (s + 1)..n {
            let j = Complex64::new(rng.random_range(-0.5..0.5), 0.0);
            h[(s, t)] = j;
            h[(t, s)] = j;
        }
        if rng.random::<f64>() > 0.2 {
            channels.push(CollapseChannel {
                source: s,
                rate: 10f64.powf(rng.random_range(-1.7..1.3)),
            });
        }
    }
    ModelMatrices { dim: n, hamiltonian: h, channels }
}

pub fn excited(n: usize) -> DMatrix<Complex64> {
    let mut rho = DMatrix::zeros(n, n);
    rho[(1, 1)] = ONE;
    rho
}

pub fn superposition(n: usize) -> DMatrix<Complex64> {
    let mut rho = DMatrix::zeros(n, n);
    for r in 0..2 {
        for c in 0..2 {
            rho[(r, c)] = Complex64::new(0.5, 0.0);
        }
    }
    rho
}

pub fn min_eigenvalue(rho: &DMatrix<Complex64>) -> f64 {
    rho.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Two-sided KS statistic of `samples` against the uniform CDF on `[lo, hi]`.
pub fn ks_uniform(samples: &mut [f64], lo: f64, hi: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}
