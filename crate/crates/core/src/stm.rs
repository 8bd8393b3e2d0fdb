//! Standard-tunneling-model defect ensembles.
//!
//! Each defect gets a uniform energy inside a narrow band around the qubit,
//! a tunneling ratio `Δ0/E = sin θ` with density ∝ 1/sin θ, a position in the
//! lossy surface layer and a random dipole–field angle. Only the strongest
//! coupled defects are kept for the dynamics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constants::{C_RMS, DEBYE, HBAR, MIN_PAIR_SEPARATION};
use crate::device::{self, magnitude, DeviceGeometry, FieldSource, Position};
use crate::{Error, Result};

const ENERGY_STREAM: u64 = 1;
const THETA_STREAM: u64 = 2;
const ANGLE_STREAM: u64 = 3;

/// Which quantity orders defects when picking the retained set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankBy {
    /// Effective coupling `|Ω| = |g|·Δ0/E`.
    #[default]
    Omega,
    /// Bare dipole coupling `|g|`.
    G,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSpec {
    pub n_total: usize,
    pub qubit_freq_hz: f64,
    /// Half-width δ of the TLS energy band around the qubit, Hz.
    pub band_halfwidth_hz: f64,
    /// `ln tan(d/2)` for the lower cutoff `d` on θ; −10⁴ for `d = 2·exp(−10⁴)`.
    pub log_tan_half_cutoff: f64,
    pub dipole_debye: f64,
    pub t1_min_us: f64,
    pub retain_k: usize,
    pub seed: u64,
    pub rank_by: RankBy,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            n_total: 1_000_000,
            qubit_freq_hz: 5e9,
            band_halfwidth_hz: 10e6,
            log_tan_half_cutoff: -1e4,
            dipole_debye: 3.0,
            t1_min_us: 0.05,
            retain_k: 200,
            seed: 0,
            rank_by: RankBy::Omega,
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_total == 0 {
            return Err(Error::param("n_total must be at least 1"));
        }
        if !(self.qubit_freq_hz > 0.0 && self.qubit_freq_hz.is_finite()) {
            return Err(Error::param("qubit frequency must be positive"));
        }
        if !(self.band_halfwidth_hz > 0.0 && self.band_halfwidth_hz < 0.01 * self.qubit_freq_hz) {
            return Err(Error::param(
                "band half-width must be positive and much smaller than the qubit frequency",
            ));
        }
        if !(self.log_tan_half_cutoff < 0.0 && self.log_tan_half_cutoff.is_finite()) {
            return Err(Error::param("theta cutoff must satisfy ln tan(d/2) < 0"));
        }
        if !(0.1..=4.0).contains(&self.dipole_debye) {
            return Err(Error::param("dipole moment must lie in [0.1, 4.0] Debye"));
        }
        if !(self.t1_min_us > 0.0 && self.t1_min_us.is_finite()) {
            return Err(Error::param("t1_min must be positive"));
        }
        if self.retain_k == 0 || self.retain_k > self.n_total {
            return Err(Error::param("retain_k must be in 1..=n_total"));
        }
        Ok(())
    }
}

/// One sampled defect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlsDefect {
    /// Sample index within its ensemble.
    pub index: usize,
    pub position: Position,
    /// Transition frequency E/h, Hz.
    pub energy_freq_hz: f64,
    /// Δ0/E.
    pub delta0_norm: f64,
    /// Δ/E.
    pub delta_norm: f64,
    /// ln tan(θ/2), exact even where Δ0/E underflows.
    pub log_tan_half_theta: f64,
    pub dipole_debye: f64,
    /// Angle between dipole and local field, rad in [0, π].
    pub dipole_field_angle: f64,
    /// Single-photon field at the defect, V/m.
    pub local_field: [f64; 3],
    /// Bare coupling p·E·cos φ/ħ, rad/s.
    pub g: f64,
    /// Effective coupling g·Δ0/E, rad/s.
    pub omega: f64,
    /// Relaxation time, μs; infinite for dark defects (Δ0 = 0).
    #[serde(with = "infinite_as_null")]
    pub t1_tls_us: f64,
    pub distance_to_jj_um: f64,
}

impl TlsDefect {
    /// |p|·|E|/ħ in rad/s (no angular factor).
    pub fn pe_over_hbar(&self) -> f64 {
        self.dipole_debye * DEBYE * magnitude(&self.local_field) / HBAR
    }

    pub fn is_dark(&self) -> bool {
        !self.t1_tls_us.is_finite()
    }

    /// Recomputes the dipole-dependent couplings for another dipole moment.
    pub fn with_dipole(&self, dipole_debye: f64) -> TlsDefect {
        let g = bare_coupling(dipole_debye, magnitude(&self.local_field), self.dipole_field_angle);
        TlsDefect {
            dipole_debye,
            g,
            omega: g * self.delta0_norm,
            ..self.clone()
        }
    }

    /// Recomputes the relaxation time for another `t1_min`.
    pub fn with_t1_min(&self, t1_min_us: f64) -> TlsDefect {
        TlsDefect {
            t1_tls_us: relaxation_time_unchecked(self.delta0_norm, t1_min_us),
            ..self.clone()
        }
    }

    fn rank_value(&self, rank: RankBy) -> f64 {
        match rank {
            RankBy::Omega => self.omega.abs(),
            RankBy::G => self.g.abs(),
        }
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// `p·|E|·cos φ / ħ` in rad/s.
pub fn bare_coupling(dipole_debye: f64, field_magnitude: f64, angle: f64) -> f64 {
    dipole_debye * DEBYE * field_magnitude * angle.cos() / HBAR
}

/// `t1_min / (Δ0/E)²`; a dark defect (`delta0_norm = 0`) never relaxes and
/// returns `f64::INFINITY`.
pub fn tls_relaxation_time(delta0_norm: f64, t1_min_us: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta0_norm) {
        return Err(Error::param(format!("delta0_norm {delta0_norm} outside [0, 1]")));
    }
    if !(t1_min_us > 0.0 && t1_min_us.is_finite()) {
        return Err(Error::param("t1_min must be positive"));
    }
    Ok(relaxation_time_unchecked(delta0_norm, t1_min_us))
}

fn relaxation_time_unchecked(delta0_norm: f64, t1_min_us: f64) -> f64 {
    if delta0_norm == 0.0 {
        f64::INFINITY
    } else {
        t1_min_us / (delta0_norm * delta0_norm)
    }
}

/// Flip-flop coupling between two defects, rad/s:
/// `C_rms / (4 r³) · (Δ0/E)_i · (Δ0/E)_j / ħ` with `r ≥ 1 nm`.
pub fn tls_tls_coupling(a: &TlsDefect, b: &TlsDefect) -> f64 {
    let r = a.position.separation_m(&b.position).max(MIN_PAIR_SEPARATION);
    C_RMS / (4.0 * r * r * r) * a.delta0_norm * b.delta0_norm / HBAR
}

/// Maps a uniform variate to `(Δ0/E, Δ/E)` through the inverse CDF
/// `θ(u) = 2·atan(exp(L·(1 − u)))`.
///
/// Works from `t = tan(θ/2)` directly so tiny tunneling ratios underflow to
/// exact zeros instead of losing the identity `sin² + cos² = 1`.
pub fn tunneling_from_uniform(u: f64, log_tan_half_cutoff: f64) -> (f64, f64) {
    let t = (log_tan_half_cutoff * (1.0 - u)).exp();
    let t2 = t * t;
    let sin = 2.0 * t / (1.0 + t2);
    let cos = (1.0 - t2) / (1.0 + t2);
    (sin, cos)
}

/// `θ` itself, for callers that want the angle.
pub fn theta_from_uniform(u: f64, log_tan_half_cutoff: f64) -> f64 {
    2.0 * (log_tan_half_cutoff * (1.0 - u)).exp().atan()
}

/// Deterministic stream of defects for one ensemble.
///
/// Positions, energies, tunneling ratios and angles each come from their own
/// random stream, so the positions match [`device::sample_positions`] for the
/// same seed.
pub struct EnsembleSampler<'a, F: FieldSource + ?Sized> {
    spec: &'a EnsembleSpec,
    geometry: &'a DeviceGeometry,
    field: &'a F,
    positions: ChaCha8Rng,
    energies: ChaCha8Rng,
    thetas: ChaCha8Rng,
    angles: ChaCha8Rng,
    next: usize,
}

impl<'a, F: FieldSource + ?Sized> EnsembleSampler<'a, F> {
    pub fn new(spec: &'a EnsembleSpec, geometry: &'a DeviceGeometry, field: &'a F) -> Result<Self> {
        spec.validate()?;
        geometry.validate()?;
        Ok(EnsembleSampler {
            spec,
            geometry,
            field,
            positions: device::stream_rng(spec.seed, device::POSITION_STREAM),
            energies: device::stream_rng(spec.seed, ENERGY_STREAM),
            thetas: device::stream_rng(spec.seed, THETA_STREAM),
            angles: device::stream_rng(spec.seed, ANGLE_STREAM),
            next: 0,
        })
    }

    fn draw(&mut self) -> Draw {
        let position = device::draw_position(self.geometry, &mut self.positions);
        let u_e: f64 = self.energies.random();
        let u_theta: f64 = self.thetas.random();
        let u_phi: f64 = self.angles.random();
        let log_tan_half_theta = self.spec.log_tan_half_cutoff * (1.0 - u_theta);
        let (delta0_norm, delta_norm) = tunneling_from_uniform(u_theta, self.spec.log_tan_half_cutoff);
        let index = self.next;
        self.next += 1;
        Draw {
            index,
            position,
            energy_freq_hz: self.spec.qubit_freq_hz + self.spec.band_halfwidth_hz * (2.0 * u_e - 1.0),
            delta0_norm,
            delta_norm,
            log_tan_half_theta,
            angle: std::f64::consts::PI * u_phi,
        }
    }

    fn complete(&self, d: Draw) -> Result<TlsDefect> {
        let local_field = self.field.field_at(&d.position)?;
        let g = bare_coupling(self.spec.dipole_debye, magnitude(&local_field), d.angle);
        Ok(TlsDefect {
            index: d.index,
            position: d.position,
            energy_freq_hz: d.energy_freq_hz,
            delta0_norm: d.delta0_norm,
            delta_norm: d.delta_norm,
            log_tan_half_theta: d.log_tan_half_theta,
            dipole_debye: self.spec.dipole_debye,
            dipole_field_angle: d.angle,
            local_field,
            g,
            omega: g * d.delta0_norm,
            t1_tls_us: relaxation_time_unchecked(d.delta0_norm, self.spec.t1_min_us),
            distance_to_jj_um: self.geometry.distance_to_jj(d.position.x, d.position.y),
        })
    }
}

struct Draw {
    index: usize,
    position: Position,
    energy_freq_hz: f64,
    delta0_norm: f64,
    delta_norm: f64,
    log_tan_half_theta: f64,
    angle: f64,
}

impl<F: FieldSource + ?Sized> Iterator for EnsembleSampler<'_, F> {
    type Item = Result<TlsDefect>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.spec.n_total {
            return None;
        }
        let d = self.draw();
        Some(self.complete(d))
    }
}

/// The whole ensemble, in sample order.
pub fn sample_ensemble<F: FieldSource + ?Sized>(
    spec: &EnsembleSpec,
    geometry: &DeviceGeometry,
    field: &F,
) -> Result<Vec<TlsDefect>> {
    EnsembleSampler::new(spec, geometry, field)?.collect()
}

/// Ranking order: strongest first, then closer to the junction, then lower
/// sample index.
fn rank_order(a: &TlsDefect, b: &TlsDefect, rank: RankBy) -> Ordering {
    b.rank_value(rank)
        .total_cmp(&a.rank_value(rank))
        .then_with(|| a.distance_to_jj_um.total_cmp(&b.distance_to_jj_um))
        .then_with(|| a.index.cmp(&b.index))
}

/// The `k` strongest defects, sorted, with their pair couplings.
pub fn select_top_k(mut defects: Vec<TlsDefect>, k: usize, rank: RankBy) -> Result<RetainedSet> {
    if k > defects.len() {
        return Err(Error::Size {
            requested: k,
            available: defects.len(),
        });
    }
    defects.sort_by(|a, b| rank_order(a, b, rank));
    defects.truncate(k);
    Ok(RetainedSet::new(defects))
}

struct Ranked(TlsDefect, RankBy);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    // Max-heap on "worse": the heap top is the weakest retained defect.
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0, self.1)
    }
}

/// Streams the ensemble and keeps only the `spec.retain_k` strongest defects.
/// Equivalent to `select_top_k(sample_ensemble(..), retain_k, rank_by)` without
/// holding the full ensemble in memory.
pub fn sample_retained<F: FieldSource + ?Sized>(
    spec: &EnsembleSpec,
    geometry: &DeviceGeometry,
    field: &F,
) -> Result<RetainedSet> {
    let k = spec.retain_k;
    let mut sampler = EnsembleSampler::new(spec, geometry, field)?;
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    while sampler.next < spec.n_total {
        let draw = sampler.draw();
        if heap.len() == k && spec.rank_by == RankBy::Omega && draw.delta0_norm == 0.0 {
            // Ω = 0 cannot displace a retained defect with Ω ≠ 0.
            if heap.peek().is_some_and(|w| w.0.omega != 0.0) {
                continue;
            }
        }
        let defect = sampler.complete(draw)?;
        if heap.len() < k {
            heap.push(Ranked(defect, spec.rank_by));
        } else if let Some(worst) = heap.peek() {
            if rank_order(&defect, &worst.0, spec.rank_by) == Ordering::Less {
                heap.pop();
                heap.push(Ranked(defect, spec.rank_by));
            }
        }
    }
    let mut defects: Vec<TlsDefect> = heap.into_iter().map(|r| r.0).collect();
    defects.sort_by(|a, b| rank_order(a, b, spec.rank_by));
    Ok(RetainedSet::new(defects))
}

/// Strongest defects of one ensemble plus their symmetric pair couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedSet {
    pub defects: Vec<TlsDefect>,
    /// Row-major K×K flip-flop couplings J, rad/s; zero diagonal.
    pair_coupling: Vec<f64>,
}

impl RetainedSet {
    /// Builds the set from already-ranked defects, computing all pair couplings.
    pub fn new(defects: Vec<TlsDefect>) -> Self {
        let k = defects.len();
        let mut j = vec![0.0; k * k];
        for a in 0..k {
            for b in (a + 1)..k {
                let v = tls_tls_coupling(&defects[a], &defects[b]);
                j[a * k + b] = v;
                j[b * k + a] = v;
            }
        }
        RetainedSet {
            defects,
            pair_coupling: j,
        }
    }

    pub fn from_parts(defects: Vec<TlsDefect>, pair_coupling: Vec<f64>) -> Result<Self> {
        let k = defects.len();
        if pair_coupling.len() != k * k {
            return Err(Error::Dimension {
                expected: k * k,
                got: pair_coupling.len(),
            });
        }
        for a in 0..k {
            if pair_coupling[a * k + a] != 0.0 {
                return Err(Error::Construction("pair coupling diagonal must be zero".into()));
            }
            for b in 0..k {
                let v = pair_coupling[a * k + b];
                if !v.is_finite() || v != pair_coupling[b * k + a] {
                    return Err(Error::Construction(
                        "pair coupling must be finite and symmetric".into(),
                    ));
                }
            }
        }
        Ok(RetainedSet {
            defects,
            pair_coupling,
        })
    }

    pub fn len(&self) -> usize {
        self.defects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defects.is_empty()
    }

    /// J between retained defects `a` and `b`, rad/s.
    pub fn coupling(&self, a: usize, b: usize) -> f64 {
        self.pair_coupling[a * self.len() + b]
    }

    pub fn pair_coupling(&self) -> &[f64] {
        &self.pair_coupling
    }

    /// The `k` strongest defects of this set (same ranking, same couplings).
    pub fn truncated(&self, k: usize) -> Result<RetainedSet> {
        let n = self.len();
        if k > n {
            return Err(Error::Size {
                requested: k,
                available: n,
            });
        }
        let mut j = Vec::with_capacity(k * k);
        for a in 0..k {
            j.extend_from_slice(&self.pair_coupling[a * n..a * n + k]);
        }
        Ok(RetainedSet {
            defects: self.defects[..k].to_vec(),
            pair_coupling: j,
        })
    }

    /// Same geometry with every coupling regenerated for a new dipole moment.
    /// A uniform dipole leaves the ranking unchanged.
    pub fn with_dipole(&self, dipole_debye: f64) -> RetainedSet {
        RetainedSet {
            defects: self.defects.iter().map(|d| d.with_dipole(dipole_debye)).collect(),
            pair_coupling: self.pair_coupling.clone(),
        }
    }

    /// Same defects with relaxation times regenerated for a new `t1_min`.
    pub fn with_t1_min(&self, t1_min_us: f64) -> RetainedSet {
        RetainedSet {
            defects: self.defects.iter().map(|d| d.with_t1_min(t1_min_us)).collect(),
            pair_coupling: self.pair_coupling.clone(),
        }
    }

    /// Replaces every qubit coupling by zero (debugging and null checks).
    pub fn without_qubit_coupling(&self) -> RetainedSet {
        let mut out = self.clone();
        for d in &mut out.defects {
            d.g = 0.0;
            d.omega = 0.0;
        }
        out
    }

    /// Writes the JSON-lines replay format: a header, one line per defect,
    /// then one line per row of J.
    pub fn write_jsonl(&self, path: &Path, header: &RetainedHeader) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        let mut header = header.clone();
        header.k = self.len();
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for d in &self.defects {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        let k = self.len();
        for (row, values) in self.pair_coupling.chunks(k.max(1)).enumerate().take(k) {
            serde_json::to_writer(&mut out, &JRow { j_row: row, values: values.to_vec() })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<(RetainedHeader, RetainedSet)> {
        let file = BufReader::new(fs::File::open(path)?);
        let mut lines = file.lines().enumerate();
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (_, first) = lines
            .next()
            .ok_or_else(|| err(1, "empty retained-set file".into()))?;
        let header: RetainedHeader =
            serde_json::from_str(&first?).map_err(|e| err(1, e.to_string()))?;
        if header.format != RETAINED_FORMAT {
            return Err(err(1, format!("unknown format `{}`", header.format)));
        }
        let mut defects = Vec::with_capacity(header.k);
        let mut j = vec![0.0; header.k * header.k];
        let mut rows_seen = 0;
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if defects.len() < header.k {
                defects.push(serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?);
            } else {
                let row: JRow = serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?;
                if row.j_row >= header.k || row.values.len() != header.k {
                    return Err(err(i + 1, "J row has the wrong shape".into()));
                }
                j[row.j_row * header.k..(row.j_row + 1) * header.k].copy_from_slice(&row.values);
                rows_seen += 1;
            }
        }
        if defects.len() != header.k || rows_seen != header.k {
            return Err(err(0, format!("expected {} defects and J rows", header.k)));
        }
        Ok((header, RetainedSet::from_parts(defects, j)?))
    }
}

pub const RETAINED_FORMAT: &str = "tlsbath-retained v1";

/// First line of a retained-set file: enough context to replay the trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedHeader {
    pub format: String,
    pub k: usize,
    pub qubit_freq_hz: f64,
    pub seed: u64,
    pub spec: EnsembleSpec,
}

impl RetainedHeader {
    pub fn new(spec: &EnsembleSpec) -> Self {
        RetainedHeader {
            format: RETAINED_FORMAT.to_string(),
            k: 0,
            qubit_freq_hz: spec.qubit_freq_hz,
            seed: spec.seed,
            spec: spec.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JRow {
    j_row: usize,
    values: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{FieldMap, SyntheticField, SyntheticFieldParams};

    pub(crate) fn defect(index: usize, omega: f64, distance: f64) -> TlsDefect {
        TlsDefect {
            index,
            position: Position {
                x: distance,
                y: 0.0,
                depth: 0.0,
            },
            energy_freq_hz: 5e9,
            delta0_norm: 1.0,
            delta_norm: 0.0,
            log_tan_half_theta: 0.0,
            dipole_debye: 3.0,
            dipole_field_angle: 0.0,
            local_field: [1.0, 0.0, 0.0],
            g: omega,
            omega,
            t1_tls_us: 0.05,
            distance_to_jj_um: distance,
        }
    }

    fn uniform_field() -> FieldMap {
        let mut m = FieldMap::new(2, 2, (-750.0, -750.0), (1500.0, 1500.0), vec![[1.0, 0.0, 0.0]; 4])
            .unwrap();
        m.photon_scaled = true;
        m.omega_q = Some(1.0);
        m
    }

    #[test]
    fn inverse_cdf_upper_boundary() {
        let (s, c) = tunneling_from_uniform(1.0, -1e4);
        assert_eq!(s, 1.0);
        assert_eq!(c, 0.0);
        assert_eq!(theta_from_uniform(1.0, -1e4), std::f64::consts::FRAC_PI_2);
        // Deep in the tail the ratio underflows to an exact zero.
        let (s, c) = tunneling_from_uniform(0.5, -1e4);
        assert_eq!((s, c), (0.0, 1.0));
    }

    #[test]
    fn bare_coupling_three_debye() {
        let g = bare_coupling(3.0, 1.0, 0.0);
        assert!((g - 9.489e4).abs() < 5.0, "{g}");
        assert!((g / crate::constants::TWO_PI - 15.1e3).abs() < 50.0);
    }

    #[test]
    fn relaxation_time_examples() {
        assert_eq!(tls_relaxation_time(1.0, 0.05).unwrap(), 0.05);
        assert!((tls_relaxation_time(0.1, 0.05).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(tls_relaxation_time(0.5, 1.0).unwrap(), 4.0);
        assert_eq!(tls_relaxation_time(0.0, 1.0).unwrap(), f64::INFINITY);
        assert!(tls_relaxation_time(1.5, 1.0).is_err());
    }

    #[test]
    fn pair_coupling_examples() {
        let a = defect(0, 1.0, 0.0);
        let b = defect(1, 1.0, 1.0);
        let j = tls_tls_coupling(&a, &b);
        assert!((j - 3.793e3).abs() < 1.0, "{j}");
        let c = defect(2, 1.0, 2.0);
        let j2 = tls_tls_coupling(&a, &c);
        assert!((j / j2 - 8.0).abs() < 1e-12);
        let mut dark = b.clone();
        dark.delta0_norm = 0.0;
        assert_eq!(tls_tls_coupling(&a, &dark), 0.0);
        // Coincident defects are clamped at 1 nm.
        let same = tls_tls_coupling(&a, &a);
        assert!(same.is_finite() && same > 0.0);
    }

    #[test]
    fn top_k_sorts_and_breaks_ties() {
        let ds = vec![defect(0, 5e3, 10.0), defect(1, 1e3, 1.0), defect(2, -3e3, 5.0)];
        let set = select_top_k(ds.clone(), 2, RankBy::Omega).unwrap();
        let idx: Vec<_> = set.defects.iter().map(|d| d.index).collect();
        assert_eq!(idx, vec![0, 2]);

        let ties = vec![defect(0, 1.0, 3.0), defect(1, 1.0, 1.0), defect(2, 1.0, 2.0), defect(3, 1.0, 1.0)];
        let set = select_top_k(ties, 4, RankBy::Omega).unwrap();
        let idx: Vec<_> = set.defects.iter().map(|d| d.index).collect();
        assert_eq!(idx, vec![1, 3, 2, 0]);

        assert!(matches!(
            select_top_k(ds, 4, RankBy::Omega),
            Err(Error::Size { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn streaming_selection_matches_full_sort() {
        let spec = EnsembleSpec {
            n_total: 20_000,
            retain_k: 50,
            seed: 11,
            ..Default::default()
        };
        let geom = DeviceGeometry::default();
        let field = SyntheticField::new(geom.clone(), SyntheticFieldParams::default()).unwrap();
        let all = sample_ensemble(&spec, &geom, &field).unwrap();
        let full = select_top_k(all, spec.retain_k, spec.rank_by).unwrap();
        let streamed = sample_retained(&spec, &geom, &field).unwrap();
        assert_eq!(full, streamed);

        let spec_g = EnsembleSpec {
            rank_by: RankBy::G,
            ..spec
        };
        let all = sample_ensemble(&spec_g, &geom, &field).unwrap();
        let full = select_top_k(all, spec_g.retain_k, RankBy::G).unwrap();
        assert_eq!(full, sample_retained(&spec_g, &geom, &field).unwrap());
    }

    #[test]
    fn sampled_defects_satisfy_invariants() {
        let spec = EnsembleSpec {
            n_total: 5_000,
            retain_k: 10,
            seed: 5,
            ..Default::default()
        };
        let geom = DeviceGeometry::default();
        let ds = sample_ensemble(&spec, &geom, &uniform_field()).unwrap();
        let positions = device::sample_positions(&geom, spec.n_total, spec.seed).unwrap();
        for (d, p) in ds.iter().zip(&positions) {
            assert_eq!(d.position, *p);
            assert!((d.delta0_norm.powi(2) + d.delta_norm.powi(2) - 1.0).abs() < 1e-12);
            assert!((d.energy_freq_hz - 5e9).abs() <= 10e6);
            assert_eq!(d.omega, d.g * d.delta0_norm);
            assert!(d.omega.abs() <= d.g.abs());
            if d.delta0_norm > 0.0 {
                assert_eq!(d.t1_tls_us, 0.05 / (d.delta0_norm * d.delta0_norm));
            } else {
                assert!(d.is_dark());
            }
            assert!((0.0..=std::f64::consts::PI).contains(&d.dipole_field_angle));
        }
    }

    #[test]
    fn dipole_rescaling_is_exact() {
        let set = RetainedSet::new(vec![defect(0, 0.0, 1.0), defect(1, 0.0, 3.0)]).with_dipole(3.0);
        let half = set.with_dipole(1.5);
        for (a, b) in set.defects.iter().zip(&half.defects) {
            assert_eq!(b.omega, a.omega * 0.5);
        }
        assert_eq!(set.pair_coupling(), half.pair_coupling());
    }

    #[test]
    fn truncation_keeps_leading_block() {
        let set = RetainedSet::new((0..5).map(|i| defect(i, 10.0 - i as f64, i as f64)).collect());
        let t = set.truncated(3).unwrap();
        assert_eq!(t.len(), 3);
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(t.coupling(a, b), set.coupling(a, b));
            }
        }
        assert!(set.truncated(6).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let mut ds: Vec<_> = (0..4).map(|i| defect(i, 1e3 * (4 - i) as f64, 0.7 * i as f64)).collect();
        ds[3].delta0_norm = 0.0;
        ds[3].t1_tls_us = f64::INFINITY;
        let set = RetainedSet::new(ds);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        let header = RetainedHeader::new(&EnsembleSpec::default());
        set.write_jsonl(&path, &header).unwrap();
        let (h, back) = RetainedSet::read_jsonl(&path).unwrap();
        assert_eq!(h.k, 4);
        assert_eq!(back, set);
    }
}
