//! Complex E-fields of infinitesimal electric/magnetic dipoles, optionally
//! above a PEC ground plane at z = 0, and assembly of the transfer matrix
//! mapping dipole moments to sampled tangential field components.
//!
//! Conventions: time factor e^{+jωt}, propagation e^{−jkr}. A z-directed
//! electric dipole of moment p = I·l (A·m) radiates, in its own spherical
//! frame,
//!
//! ```text
//! E_r = η₀ p cosθ / (2π r²) · (1 + 1/(jkr)) · e^{−jkr}
//! E_θ = j η₀ k p sinθ / (4π r) · (1 + 1/(jkr) − 1/(kr)²) · e^{−jkr}
//! ```
//!
//! and a z-directed magnetic dipole of moment K = I_m·l (V·m)
//!
//! ```text
//! E_φ = −j k K sinθ / (4π r) · (1 + 1/(jkr)) · e^{−jkr}
//! ```
//!
//! All near-field terms are kept. Other orientations are evaluated by
//! mapping the dipole axis onto a local z axis and rotating back.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::constants::{wavenumber, ETA0};
use crate::error::{Error, Result};
use crate::scan::{FieldDataset, ScanPoint, ScanSurface};

/// Observation closer than this to a source (or its image) is singular.
pub const SINGULARITY_RADIUS: f64 = 1e-12;

/// The six axis-aligned infinitesimal dipole kinds: electric (`P*`, moment
/// in A·m) and magnetic (`M*`, moment in V·m).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum DipoleType {
    PX,
    PY,
    PZ,
    MX,
    MY,
    MZ,
}

impl DipoleType {
    pub const ALL: [DipoleType; 6] = [
        DipoleType::PX,
        DipoleType::PY,
        DipoleType::PZ,
        DipoleType::MX,
        DipoleType::MY,
        DipoleType::MZ,
    ];

    pub fn is_electric(self) -> bool {
        matches!(self, DipoleType::PX | DipoleType::PY | DipoleType::PZ)
    }

    /// Dipole axis as a unit vector.
    pub fn axis(self) -> Vector3<f64> {
        match self {
            DipoleType::PX | DipoleType::MX => Vector3::x(),
            DipoleType::PY | DipoleType::MY => Vector3::y(),
            DipoleType::PZ | DipoleType::MZ => Vector3::z(),
        }
    }

    /// Sign of the image dipole for a PEC ground at z = 0: a vertical
    /// electric or horizontal magnetic dipole images with the same sign,
    /// a horizontal electric or vertical magnetic dipole with the opposite.
    pub fn image_sign(self) -> f64 {
        match self {
            DipoleType::PZ | DipoleType::MX | DipoleType::MY => 1.0,
            DipoleType::PX | DipoleType::PY | DipoleType::MZ => -1.0,
        }
    }
}

impl std::fmt::Display for DipoleType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for DipoleType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PX" => Ok(DipoleType::PX),
            "PY" => Ok(DipoleType::PY),
            "PZ" => Ok(DipoleType::PZ),
            "MX" => Ok(DipoleType::MX),
            "MY" => Ok(DipoleType::MY),
            "MZ" => Ok(DipoleType::MZ),
            other => Err(Error::Config(format!("unknown dipole kind `{other}`"))),
        }
    }
}

/// An infinitesimal dipole: kind, position and complex moment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dipole {
    pub kind: DipoleType,
    pub position: Vector3<f64>,
    pub moment: Complex64,
}

impl Dipole {
    pub fn new(kind: DipoleType, position: Vector3<f64>, moment: Complex64) -> Result<Self> {
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidGeometry("dipole position not finite".into()));
        }
        if !moment.re.is_finite() || !moment.im.is_finite() {
            return Err(Error::InvalidGeometry("dipole moment not finite".into()));
        }
        Ok(Self {
            kind,
            position,
            moment,
        })
    }
}

/// Propagation environment: frequency and an optional PEC ground plane at
/// z = 0. With the ground enabled, sources must sit strictly above the
/// plane; observation points may touch it (z ≥ 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Environment {
    pub ground: bool,
    pub frequency_hz: f64,
}

impl Environment {
    pub fn new(ground: bool, frequency_hz: f64) -> Result<Self> {
        if !frequency_hz.is_finite() || frequency_hz <= 0.0 {
            return Err(Error::Config(format!(
                "frequency must be positive, got {frequency_hz}"
            )));
        }
        Ok(Self {
            ground,
            frequency_hz,
        })
    }

    pub fn wavenumber(&self) -> f64 {
        wavenumber(self.frequency_hz)
    }
}

/// Field of a z-directed dipole of unit moment at the origin, evaluated at
/// displacement `v` in the dipole's own frame.
fn z_dipole_local(electric: bool, k: f64, v: Vector3<f64>) -> Result<Vector3<Complex64>> {
    let r = v.norm();
    if r < SINGULARITY_RADIUS {
        return Err(Error::Singularity(SINGULARITY_RADIUS));
    }
    let rho = (v.x * v.x + v.y * v.y).sqrt();
    let cos_t = v.z / r;
    let sin_t = rho / r;
    // φ is undefined on the axis; the sinθ factors kill those terms there,
    // so any fixed choice works.
    let (sin_p, cos_p) = if rho > 0.0 {
        (v.y / rho, v.x / rho)
    } else {
        (0.0, 1.0)
    };
    let kr = k * r;
    let phase = Complex64::new(0.0, -kr).exp();
    let inv_jkr = Complex64::new(0.0, -1.0 / kr); // 1/(jkr)

    if electric {
        let e_r = phase
            * (Complex64::new(1.0, 0.0) + inv_jkr)
            * Complex64::from(ETA0 * cos_t / (2.0 * PI * r * r));
        let e_t = Complex64::new(0.0, ETA0 * k * sin_t / (4.0 * PI * r))
            * (Complex64::new(1.0 - 1.0 / (kr * kr), 0.0) + inv_jkr)
            * phase;
        let r_hat = v / r;
        let t_hat = Vector3::new(cos_t * cos_p, cos_t * sin_p, -sin_t);
        Ok(Vector3::new(
            e_r * r_hat.x + e_t * t_hat.x,
            e_r * r_hat.y + e_t * t_hat.y,
            e_r * r_hat.z + e_t * t_hat.z,
        ))
    } else {
        let e_p = Complex64::new(0.0, -k * sin_t / (4.0 * PI * r))
            * (Complex64::new(1.0, 0.0) + inv_jkr)
            * phase;
        let p_hat = Vector3::new(-sin_p, cos_p, 0.0);
        Ok(Vector3::new(e_p * p_hat.x, e_p * p_hat.y, Complex64::ZERO))
    }
}

/// Free-space unit-moment field of an axis-aligned dipole. Orientation is
/// handled by a cyclic axis permutation into the local z frame and back.
fn unit_efield_free(kind: DipoleType, position: Vector3<f64>, obs: Vector3<f64>, k: f64)
    -> Result<Vector3<Complex64>> {
    let d = obs - position;
    match kind {
        DipoleType::PZ | DipoleType::MZ => z_dipole_local(kind.is_electric(), k, d),
        DipoleType::PX | DipoleType::MX => {
            // local (x,y,z) = global (y,z,x)
            let e = z_dipole_local(kind.is_electric(), k, Vector3::new(d.y, d.z, d.x))?;
            Ok(Vector3::new(e.z, e.x, e.y))
        }
        DipoleType::PY | DipoleType::MY => {
            // local (x,y,z) = global (z,x,y)
            let e = z_dipole_local(kind.is_electric(), k, Vector3::new(d.z, d.x, d.y))?;
            Ok(Vector3::new(e.y, e.z, e.x))
        }
    }
}

/// E-field of a unit-moment dipole, including the PEC image contribution
/// when the environment has the ground enabled.
pub fn unit_efield(
    kind: DipoleType,
    position: Vector3<f64>,
    obs: Vector3<f64>,
    env: &Environment,
) -> Result<Vector3<Complex64>> {
    let k = env.wavenumber();
    if !env.ground {
        return unit_efield_free(kind, position, obs, k);
    }
    if position.z <= 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "source at z={} must lie above the PEC ground plane",
            position.z
        )));
    }
    if obs.z < 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "observation at z={} lies below the PEC ground plane",
            obs.z
        )));
    }
    let direct = unit_efield_free(kind, position, obs, k)?;
    let image_pos = Vector3::new(position.x, position.y, -position.z);
    let image = unit_efield_free(kind, image_pos, obs, k)?;
    let s = kind.image_sign();
    Ok(Vector3::new(
        direct.x + s * image.x,
        direct.y + s * image.y,
        direct.z + s * image.z,
    ))
}

/// Total E-field of a dipole with the given complex moment.
pub fn dipole_efield(
    kind: DipoleType,
    position: Vector3<f64>,
    moment: Complex64,
    obs: Vector3<f64>,
    env: &Environment,
) -> Result<Vector3<Complex64>> {
    let unit = unit_efield(kind, position, obs, env)?;
    Ok(Vector3::new(
        unit.x * moment,
        unit.y * moment,
        unit.z * moment,
    ))
}

/// Project a complex field vector onto a scan point's tangential directions,
/// returning (E·tangent_u, E·tangent_v).
pub fn project_components(e: &Vector3<Complex64>, point: &ScanPoint) -> (Complex64, Complex64) {
    let dot = |t: &Vector3<f64>| e.x * t.x + e.y * t.y + e.z * t.z;
    (dot(&point.tangent_u), dot(&point.tangent_v))
}

/// Which tangential component a transfer-matrix row holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    U,
    V,
}

/// Complex M×N map from dipole moments to sampled field components. Rows
/// come in pairs per scan point (tangent_u first, then tangent_v) in surface
/// point order; column j is the field of layout entry j with unit moment.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    pub entries: DMatrix<Complex64>,
    pub row_map: Vec<(usize, Component)>,
}

impl TransferMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    /// Multiply by a moment vector. Accumulation runs in column order per
    /// row, so superposition over sub-layouts is bit-reproducible.
    pub fn apply(&self, moments: &[Complex64]) -> Result<Vec<Complex64>> {
        if moments.len() != self.cols() {
            return Err(Error::ShapeMismatch(format!(
                "moment vector length {} vs {} columns",
                moments.len(),
                self.cols()
            )));
        }
        let m = self.rows();
        let mut out = vec![Complex64::ZERO; m];
        for (j, d) in moments.iter().enumerate() {
            let col = self.entries.column(j);
            for i in 0..m {
                out[i] += col[i] * d;
            }
        }
        Ok(out)
    }

    /// Wrap a raw matrix, pairing rows (u, v) per point.
    pub fn from_entries(entries: DMatrix<Complex64>) -> Result<Self> {
        if !entries.nrows().is_multiple_of(2) {
            return Err(Error::ShapeMismatch(
                "transfer matrix must have an even row count".into(),
            ));
        }
        let row_map = (0..entries.nrows())
            .map(|r| (r / 2, if r % 2 == 0 { Component::U } else { Component::V }))
            .collect();
        Ok(Self { entries, row_map })
    }
}

/// Assemble the transfer matrix for a dipole layout over a scan surface.
pub fn build_transfer_matrix(
    layout: &[(DipoleType, Vector3<f64>)],
    surface: &ScanSurface,
    env: &Environment,
) -> Result<TransferMatrix> {
    if layout.is_empty() {
        return Err(Error::Config("empty dipole layout".into()));
    }
    let m = 2 * surface.len();
    let n = layout.len();
    let mut entries = DMatrix::zeros(m, n);
    let mut row_map = Vec::with_capacity(m);
    for (i, point) in surface.points().iter().enumerate() {
        for (j, (kind, position)) in layout.iter().enumerate() {
            let e = unit_efield(*kind, *position, point.position, env)?;
            let (eu, ev) = project_components(&e, point);
            entries[(2 * i, j)] = eu;
            entries[(2 * i + 1, j)] = ev;
        }
        row_map.push((i, Component::U));
        row_map.push((i, Component::V));
    }
    Ok(TransferMatrix { entries, row_map })
}

/// Complex tangential components (u, v) per point for a set of dipoles.
pub fn forward_complex(
    dipoles: &[Dipole],
    surface: &ScanSurface,
    env: &Environment,
) -> Result<Vec<(Complex64, Complex64)>> {
    if dipoles.is_empty() {
        return Ok(vec![(Complex64::ZERO, Complex64::ZERO); surface.len()]);
    }
    let layout: Vec<_> = dipoles.iter().map(|d| (d.kind, d.position)).collect();
    let moments: Vec<_> = dipoles.iter().map(|d| d.moment).collect();
    let t = build_transfer_matrix(&layout, surface, env)?;
    let rows = t.apply(&moments)?;
    Ok(rows.chunks_exact(2).map(|c| (c[0], c[1])).collect())
}

/// Forward-model a dipole set into a dataset with magnitudes and phases.
pub fn forward_fields(
    dipoles: &[Dipole],
    surface: &ScanSurface,
    env: &Environment,
) -> Result<FieldDataset> {
    let components = forward_complex(dipoles, surface, env)?;
    let mut mag_u = Vec::with_capacity(components.len());
    let mut mag_v = Vec::with_capacity(components.len());
    let mut phase_u = Vec::with_capacity(components.len());
    let mut phase_v = Vec::with_capacity(components.len());
    for (eu, ev) in components {
        mag_u.push(eu.norm());
        mag_v.push(ev.norm());
        phase_u.push(eu.arg());
        phase_v.push(ev.arg());
    }
    FieldDataset::new(
        surface.clone(),
        env.frequency_hz,
        mag_u,
        mag_v,
        Some(phase_u),
        Some(phase_v),
    )
}

/// JSON record of one dipole: position plus polar moment, the on-disk
/// format for both synthesis input and extraction output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DipoleRecord {
    pub kind: DipoleType,
    pub position: [f64; 3],
    #[serde(default)]
    pub magnitude: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

impl DipoleRecord {
    pub fn from_dipole(d: &Dipole) -> Self {
        Self {
            kind: d.kind,
            position: [d.position.x, d.position.y, d.position.z],
            magnitude: d.moment.norm(),
            phase_deg: d.moment.arg().to_degrees(),
        }
    }

    pub fn to_dipole(&self) -> Result<Dipole> {
        Dipole::new(
            self.kind,
            Vector3::from(self.position),
            Complex64::from_polar(self.magnitude, self.phase_deg.to_radians()),
        )
    }
}

pub fn write_dipole_list(dipoles: &[Dipole], path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<DipoleRecord> = dipoles.iter().map(DipoleRecord::from_dipole).collect();
    let text = serde_json::to_string_pretty(&records)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_dipole_list(path: impl AsRef<Path>) -> Result<Vec<Dipole>> {
    let text = std::fs::read_to_string(path)?;
    let records: Vec<DipoleRecord> = serde_json::from_str(&text)?;
    records.iter().map(DipoleRecord::to_dipole).collect()
}
