//! Transmon geometry, single-photon electric-field maps and TLS placement.
//!
//! Lengths over the chip surface are in μm, depths below the surface in nm
//! and fields in V/m. A field map is a surface map: the depth of a defect
//! inside the thin lossy layer does not change the field it sees.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, TWO_PI};
use crate::{Error, Result};

/// Axis-aligned rectangle, μm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Rect {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn centered(width: f64, height: f64) -> Self {
        Rect::new(-width / 2.0, -height / 2.0, width / 2.0, height / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(other.x_min, other.y_min) && self.contains(other.x_max, other.y_max)
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }

    /// Distance from a point to the filled rectangle (zero inside).
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x_min - x).max(0.0).max(x - self.x_max);
        let dy = (self.y_min - y).max(0.0).max(y - self.y_max);
        dx.hypot(dy)
    }

    /// Distance from a point to the rectangle's boundary, together with the
    /// in-plane unit vector pointing away from the conductor at the nearest
    /// boundary point.
    pub fn boundary_distance(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        if self.contains(x, y) {
            // Inside (or on the boundary): nearest of the four edges.
            let candidates = [
                (x - self.x_min, [-1.0, 0.0]),
                (self.x_max - x, [1.0, 0.0]),
                (y - self.y_min, [0.0, -1.0]),
                (self.y_max - y, [0.0, 1.0]),
            ];
            let mut best = candidates[0];
            for c in &candidates[1..] {
                if c.0 < best.0 {
                    best = *c;
                }
            }
            best
        } else {
            let cx = x.clamp(self.x_min, self.x_max);
            let cy = y.clamp(self.y_min, self.y_max);
            let (ux, uy) = (x - cx, y - cy);
            let d = ux.hypot(uy);
            (d, [ux / d, uy / d])
        }
    }
}

/// Chip layout: overall extent, capacitor pads and the Josephson junction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceGeometry {
    /// Chip surface, μm.
    pub chip_extent: Rect,
    /// Conductor rectangles (pads and leads), μm.
    pub pad_rectangles: Vec<Rect>,
    /// Junction footprint, μm (250 × 350 nm by default, centered at the origin).
    pub jj_rectangle: Rect,
    /// Thickness of the lossy surface layer, nm.
    pub surface_depth_nm: f64,
}

impl Default for DeviceGeometry {
    /// A double-pad transmon on a 1.5 × 1.5 mm² chip. Each pad is joined to
    /// the junction by a narrow lead.
    fn default() -> Self {
        DeviceGeometry {
            chip_extent: Rect::centered(1500.0, 1500.0),
            pad_rectangles: vec![
                Rect::new(-430.0, -300.0, -30.0, 300.0),
                Rect::new(30.0, -300.0, 430.0, 300.0),
                Rect::new(-30.0, -0.5, -0.125, 0.5),
                Rect::new(0.125, -0.5, 30.0, 0.5),
            ],
            jj_rectangle: Rect::centered(0.250, 0.350),
            surface_depth_nm: 3.0,
        }
    }
}

impl DeviceGeometry {
    pub fn validate(&self) -> Result<()> {
        if !self.chip_extent.is_valid() {
            return Err(Error::param("chip extent must be a non-empty rectangle"));
        }
        if !self.jj_rectangle.is_valid() || !self.chip_extent.contains_rect(&self.jj_rectangle) {
            return Err(Error::param("junction rectangle must lie inside the chip"));
        }
        if !(self.surface_depth_nm > 0.0 && self.surface_depth_nm.is_finite()) {
            return Err(Error::param("surface depth must be positive"));
        }
        for (i, pad) in self.pad_rectangles.iter().enumerate() {
            if !pad.is_valid() {
                return Err(Error::param(format!("pad {i} is not a valid rectangle")));
            }
            if pad.overlaps(&self.jj_rectangle) {
                return Err(Error::param(format!("pad {i} overlaps the junction")));
            }
        }
        Ok(())
    }

    /// In-plane distance from the junction center, μm.
    pub fn distance_to_jj(&self, x: f64, y: f64) -> f64 {
        let (cx, cy) = self.jj_rectangle.center();
        (x - cx).hypot(y - cy)
    }

    /// Distance to the nearest pad boundary and the outward direction there.
    /// `None` when the layout has no pads.
    fn nearest_pad_edge(&self, x: f64, y: f64) -> Option<(f64, [f64; 2])> {
        self.pad_rectangles
            .iter()
            .map(|p| p.boundary_distance(x, y))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// Location of one defect: surface coordinates in μm, depth in nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl Position {
    /// 3-D separation in metres.
    pub fn separation_m(&self, other: &Position) -> f64 {
        let dx = (self.x - other.x) * 1e-6;
        let dy = (self.y - other.y) * 1e-6;
        let dz = (self.depth - other.depth) * 1e-9;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Anything that can report the single-photon field at a defect position.
pub trait FieldSource: Sync {
    fn field_at(&self, pos: &Position) -> Result<[f64; 3]>;
}

pub fn magnitude(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Regular surface grid of electric-field vectors.
///
/// Node `(ix, iy)` sits at `(x0 + ix·dx, y0 + iy·dy)` and is stored at
/// `values[iy·nx + ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMap {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub values: Vec<[f64; 3]>,
    pub photon_scaled: bool,
    /// Angular frequency (rad/s) used for the single-photon normalization.
    pub omega_q: Option<f64>,
}

const HEADER_TAG: &str = "fieldmap";
const HEADER_VERSION: &str = "v1";

impl FieldMap {
    pub fn new(
        nx: usize,
        ny: usize,
        origin: (f64, f64),
        spacing: (f64, f64),
        values: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let map = FieldMap {
            nx,
            ny,
            x0: origin.0,
            y0: origin.1,
            dx: spacing.0,
            dy: spacing.1,
            values,
            photon_scaled: false,
            omega_q: None,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::param("field grid must have at least one node per axis"));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dx.is_finite() && self.dy.is_finite()) {
            return Err(Error::param("grid spacing must be positive"));
        }
        if !(self.x0.is_finite() && self.y0.is_finite()) {
            return Err(Error::param("grid origin must be finite"));
        }
        if self.values.len() != self.nx * self.ny {
            return Err(Error::param("non-rectangular grid"));
        }
        if self.values.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::param("field values must be finite"));
        }
        if self.photon_scaled && self.omega_q.is_none() {
            return Err(Error::param("a photon-scaled map must record omega_q"));
        }
        Ok(())
    }

    pub fn node(&self, ix: usize, iy: usize) -> [f64; 3] {
        self.values[iy * self.nx + ix]
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + (self.nx - 1) as f64 * self.dx
    }

    pub fn y_max(&self) -> f64 {
        self.y0 + (self.ny - 1) as f64 * self.dy
    }

    /// Bilinear interpolation of the field vector; ignores scaling state.
    pub fn interpolate(&self, x: f64, y: f64) -> Result<[f64; 3]> {
        let (ix, fx) = locate(x, self.x0, self.dx, self.nx).ok_or(Error::OutOfBounds { x, y })?;
        let (iy, fy) = locate(y, self.y0, self.dy, self.ny).ok_or(Error::OutOfBounds { x, y })?;
        let ix1 = (ix + 1).min(self.nx - 1);
        let iy1 = (iy + 1).min(self.ny - 1);
        let v00 = self.node(ix, iy);
        let v10 = self.node(ix1, iy);
        let v01 = self.node(ix, iy1);
        let v11 = self.node(ix1, iy1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let lower = v00[c] + fx * (v10[c] - v00[c]);
            let upper = v01[c] + fx * (v11[c] - v01[c]);
            out[c] = lower + fy * (upper - lower);
        }
        Ok(out)
    }

    /// Multiplies every vector by `sqrt(ħ·omega_q / sim_energy)` so the map
    /// describes a single photon at `omega_q` instead of the `sim_energy`
    /// (J) excitation it was exported at.
    pub fn scale_to_single_photon(mut self, sim_energy: f64, omega_q: f64) -> Result<FieldMap> {
        if self.photon_scaled {
            return Err(Error::InvalidState(
                "field map is already scaled to a single photon".into(),
            ));
        }
        if !(sim_energy > 0.0 && sim_energy.is_finite()) {
            return Err(Error::param("simulation energy must be positive"));
        }
        if !(omega_q > 0.0 && omega_q.is_finite()) {
            return Err(Error::param("omega_q must be positive"));
        }
        let factor = single_photon_factor(sim_energy, omega_q);
        for v in &mut self.values {
            for c in v.iter_mut() {
                *c *= factor;
            }
        }
        self.photon_scaled = true;
        self.omega_q = Some(omega_q);
        Ok(self)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(64 * (self.values.len() + 1));
        let omega = match self.omega_q {
            Some(w) => format!("{w:.16e}"),
            None => "none".to_string(),
        };
        let _ = writeln!(
            out,
            "{HEADER_TAG} {HEADER_VERSION} nx={} ny={} x0={:.16e} y0={:.16e} dx={:.16e} dy={:.16e} scaled={} omega_q={}",
            self.nx,
            self.ny,
            self.x0,
            self.y0,
            self.dx,
            self.dy,
            u8::from(self.photon_scaled),
            omega
        );
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let v = self.node(ix, iy);
                let _ = writeln!(out, "{ix} {iy} {:.16e} {:.16e} {:.16e}", v[0], v[1], v[2]);
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FieldMap> {
        let text = fs::read_to_string(path)?;
        FieldMap::parse(&text, path)
    }

    /// Parses the text grid format. `origin` is only used in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<FieldMap> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| err(1, "empty file, expected fieldmap header".into()))?;
        let header = parse_header(header).map_err(|m| err(1, m))?;

        let n = header.nx * header.ny;
        let mut values: Vec<Option<[f64; 3]>> = vec![None; n];
        let mut last_line = 1;
        for (lineno, line) in lines {
            last_line = lineno;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(err(
                    lineno,
                    format!("expected `ix iy Ex Ey Ez`, found {} fields", fields.len()),
                ));
            }
            let ix: usize = fields[0]
                .parse()
                .map_err(|_| err(lineno, format!("bad column index `{}`", fields[0])))?;
            let iy: usize = fields[1]
                .parse()
                .map_err(|_| err(lineno, format!("bad row index `{}`", fields[1])))?;
            if ix >= header.nx || iy >= header.ny {
                return Err(err(lineno, format!("node ({ix}, {iy}) outside the declared grid")));
            }
            let mut v = [0.0f64; 3];
            for (c, s) in v.iter_mut().zip(&fields[2..]) {
                *c = s
                    .parse()
                    .map_err(|_| err(lineno, format!("bad field component `{s}`")))?;
                if !c.is_finite() {
                    return Err(err(lineno, format!("non-finite field component `{s}`")));
                }
            }
            let slot = &mut values[iy * header.nx + ix];
            if slot.is_some() {
                return Err(err(lineno, format!("duplicate node ({ix}, {iy})")));
            }
            *slot = Some(v);
        }
        let values: Option<Vec<[f64; 3]>> = values.into_iter().collect();
        let values = values.ok_or_else(|| err(last_line + 1, "non-rectangular grid".into()))?;

        let map = FieldMap {
            nx: header.nx,
            ny: header.ny,
            x0: header.x0,
            y0: header.y0,
            dx: header.dx,
            dy: header.dy,
            values,
            photon_scaled: header.scaled,
            omega_q: header.omega_q,
        };
        map.validate().map_err(|e| err(1, e.to_string()))?;
        Ok(map)
    }
}

impl FieldSource for FieldMap {
    fn field_at(&self, pos: &Position) -> Result<[f64; 3]> {
        if !self.photon_scaled {
            return Err(Error::InvalidState(
                "field map must be scaled to a single photon before sampling".into(),
            ));
        }
        self.interpolate(pos.x, pos.y)
    }
}

/// Cell index and fractional offset of `x` along one axis.
fn locate(x: f64, origin: f64, spacing: f64, n: usize) -> Option<(usize, f64)> {
    let s = (x - origin) / spacing;
    let last = (n - 1) as f64;
    // Half-ulp slack so points written from node coordinates stay inside.
    let eps = 1e-9;
    if !(s >= -eps && s <= last + eps) {
        return None;
    }
    let s = s.clamp(0.0, last);
    if n == 1 {
        return Some((0, 0.0));
    }
    let i = (s.floor() as usize).min(n - 2);
    Some((i, s - i as f64))
}

struct Header {
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
    dx: f64,
    dy: f64,
    scaled: bool,
    omega_q: Option<f64>,
}

fn parse_header(line: &str) -> std::result::Result<Header, String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(HEADER_TAG) || parts.next() != Some(HEADER_VERSION) {
        return Err(format!("malformed header, expected `{HEADER_TAG} {HEADER_VERSION} ...`"));
    }
    let mut get = |key: &str| -> std::result::Result<String, String> {
        let part = parts
            .next()
            .ok_or_else(|| format!("malformed header, missing `{key}=`"))?;
        part.strip_prefix(key)
            .and_then(|s| s.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| format!("malformed header, expected `{key}=` but found `{part}`"))
    };
    let int = |k: &str, s: String| s.parse::<usize>().map_err(|_| format!("bad {k} `{s}`"));
    let float = |k: &str, s: String| s.parse::<f64>().map_err(|_| format!("bad {k} `{s}`"));
    let nx = int("nx", get("nx")?)?;
    let ny = int("ny", get("ny")?)?;
    let x0 = float("x0", get("x0")?)?;
    let y0 = float("y0", get("y0")?)?;
    let dx = float("dx", get("dx")?)?;
    let dy = float("dy", get("dy")?)?;
    let scaled = match get("scaled")?.as_str() {
        "0" => false,
        "1" => true,
        other => return Err(format!("bad scaled flag `{other}`")),
    };
    let omega_q = match get("omega_q")?.as_str() {
        "none" => None,
        s => Some(float("omega_q", s.to_string())?),
    };
    if nx == 0 || ny == 0 {
        return Err("malformed header, grid must be non-empty".into());
    }
    Ok(Header {
        nx,
        ny,
        x0,
        y0,
        dx,
        dy,
        scaled,
        omega_q,
    })
}

/// `sqrt(ħ·omega_q / sim_energy)`.
pub fn single_photon_factor(sim_energy: f64, omega_q: f64) -> f64 {
    (HBAR * omega_q / sim_energy).sqrt()
}

/// Parameters of the analytic surface-field model
/// `|E| = E_jj·exp(−d_jj/σ_jj) + E_edge/(1 + d_edge/ℓ)^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticFieldParams {
    /// Field at the junction, V/m.
    pub e_jj: f64,
    /// Field at a conductor edge, V/m.
    pub e_edge: f64,
    /// Edge decay length ℓ, μm.
    pub edge_decay_um: f64,
    /// Edge decay exponent p.
    pub edge_exponent: f64,
    /// Junction decay length σ_jj, μm.
    pub jj_decay_um: f64,
    /// Grid spacing used when rasterizing to a [`FieldMap`], μm.
    pub spacing_um: f64,
    /// Qubit angular frequency the magnitudes refer to, rad/s.
    pub omega_q: f64,
}

impl Default for SyntheticFieldParams {
    fn default() -> Self {
        SyntheticFieldParams {
            e_jj: 10.0,
            e_edge: 1.0,
            edge_decay_um: 100.0,
            edge_exponent: 1.0,
            jj_decay_um: 0.1,
            spacing_um: 5.0,
            omega_q: TWO_PI * 5e9,
        }
    }
}

impl SyntheticFieldParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.spacing_um) {
            return Err(Error::param("grid spacing must be positive"));
        }
        if !positive(self.edge_decay_um) || !positive(self.jj_decay_um) {
            return Err(Error::param("decay lengths must be positive"));
        }
        if !(self.edge_exponent >= 0.0 && self.edge_exponent.is_finite()) {
            return Err(Error::param("edge exponent must be non-negative"));
        }
        if !(self.e_jj >= 0.0 && self.e_edge >= 0.0 && self.e_jj.is_finite() && self.e_edge.is_finite()) {
            return Err(Error::param("field amplitudes must be non-negative"));
        }
        if !positive(self.omega_q) {
            return Err(Error::param("omega_q must be positive"));
        }
        Ok(())
    }
}

/// Analytic single-photon field over a [`DeviceGeometry`], evaluated exactly
/// at each point (no rasterization).
#[derive(Debug, Clone)]
pub struct SyntheticField {
    pub geometry: DeviceGeometry,
    pub params: SyntheticFieldParams,
}

impl SyntheticField {
    pub fn new(geometry: DeviceGeometry, params: SyntheticFieldParams) -> Result<Self> {
        geometry.validate()?;
        params.validate()?;
        Ok(SyntheticField { geometry, params })
    }

    pub fn magnitude_at(&self, x: f64, y: f64) -> f64 {
        let p = &self.params;
        let d_jj = self.geometry.jj_rectangle.distance(x, y);
        let jj_term = p.e_jj * (-d_jj / p.jj_decay_um).exp();
        let edge_term = match self.geometry.nearest_pad_edge(x, y) {
            Some((d_edge, _)) => p.e_edge / (1.0 + d_edge / p.edge_decay_um).powf(p.edge_exponent),
            None => 0.0,
        };
        jj_term + edge_term
    }

    /// Field vector: the model magnitude along the in-plane normal of the
    /// nearest conductor edge (pads or junction).
    pub fn vector_at(&self, x: f64, y: f64) -> [f64; 3] {
        let mag = self.magnitude_at(x, y);
        let jj = self.geometry.jj_rectangle.boundary_distance(x, y);
        let dir = match self.geometry.nearest_pad_edge(x, y) {
            Some(pad) if pad.0 < jj.0 => pad.1,
            _ => jj.1,
        };
        [mag * dir[0], mag * dir[1], 0.0]
    }

    /// Rasterizes the model over the chip extent.
    pub fn to_field_map(&self) -> Result<FieldMap> {
        let chip = &self.geometry.chip_extent;
        let h = self.params.spacing_um;
        let nx = (chip.width() / h).floor() as usize + 1;
        let ny = (chip.height() / h).floor() as usize + 1;
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            let y = chip.y_min + iy as f64 * h;
            for ix in 0..nx {
                let x = chip.x_min + ix as f64 * h;
                values.push(self.vector_at(x, y));
            }
        }
        let mut map = FieldMap::new(nx, ny, (chip.x_min, chip.y_min), (h, h), values)?;
        map.photon_scaled = true;
        map.omega_q = Some(self.params.omega_q);
        Ok(map)
    }
}

impl FieldSource for SyntheticField {
    fn field_at(&self, pos: &Position) -> Result<[f64; 3]> {
        Ok(self.vector_at(pos.x, pos.y))
    }
}

/// Rasterized synthetic field. The map is marked photon-scaled: the model
/// magnitudes already describe a single photon.
pub fn synthetic_field(geometry: &DeviceGeometry, params: &SyntheticFieldParams) -> Result<FieldMap> {
    SyntheticField::new(geometry.clone(), *params)?.to_field_map()
}

/// Random-stream identifiers shared with the ensemble sampler.
pub(crate) const POSITION_STREAM: u64 = 0;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws the next position uniformly over the chip surface and layer depth.
pub(crate) fn draw_position(geometry: &DeviceGeometry, rng: &mut ChaCha8Rng) -> Position {
    let chip = &geometry.chip_extent;
    let x = chip.x_min + rng.random::<f64>() * chip.width();
    let y = chip.y_min + rng.random::<f64>() * chip.height();
    let depth = rng.random::<f64>() * geometry.surface_depth_nm;
    Position { x, y, depth }
}

/// `n` positions uniform over the chip and the surface layer; deterministic in
/// `seed`.
pub fn sample_positions(geometry: &DeviceGeometry, n: usize, seed: u64) -> Result<Vec<Position>> {
    if n == 0 {
        return Err(Error::param("need at least one position"));
    }
    geometry.validate()?;
    let mut rng = stream_rng(seed, POSITION_STREAM);
    Ok((0..n).map(|_| draw_position(geometry, &mut rng)).collect())
}
