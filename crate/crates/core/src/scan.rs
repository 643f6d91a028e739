//! Scan geometry, field-sample storage and dataset file I/O.
//!
//! A [`ScanSurface`] is an ordered list of points, each carrying a pair of
//! orthonormal tangential directions. Field magnitudes are stored per point
//! against those generic directions (`mag_u`, `mag_v`), so cylindrical,
//! planar and free-form point-cloud scans all go through the same types.
//! On a cylindrical scan `tangent_u = ẑ` (axial component) and
//! `tangent_v = φ̂` (azimuthal component).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Tangent vectors must be unit length and mutually orthogonal to this
/// tolerance.
pub const TANGENT_TOL: f64 = 1e-12;

/// Two scan points closer than this (in metres) are considered duplicates.
pub const MIN_POINT_SEPARATION: f64 = 1e-9;

/// One spatial sample of the scan: a position and the two directions along
/// which the field components were taken.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub position: Vector3<f64>,
    pub tangent_u: Vector3<f64>,
    pub tangent_v: Vector3<f64>,
}

impl ScanPoint {
    /// Build a point, enforcing the orthonormality invariants.
    pub fn new(
        position: Vector3<f64>,
        tangent_u: Vector3<f64>,
        tangent_v: Vector3<f64>,
    ) -> Result<Self> {
        for (name, t) in [("tangent_u", &tangent_u), ("tangent_v", &tangent_v)] {
            if !t.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidGeometry(format!("{name} is not finite")));
            }
            if (t.norm() - 1.0).abs() > TANGENT_TOL {
                return Err(Error::InvalidGeometry(format!(
                    "{name} is not unit length (norm {})",
                    t.norm()
                )));
            }
        }
        if tangent_u.dot(&tangent_v).abs() > TANGENT_TOL {
            return Err(Error::InvalidGeometry(format!(
                "tangents not orthogonal (dot {})",
                tangent_u.dot(&tangent_v)
            )));
        }
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidGeometry("position is not finite".into()));
        }
        Ok(Self {
            position,
            tangent_u,
            tangent_v,
        })
    }
}

/// Ordered collection of scan points with a text label.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSurface {
    points: Vec<ScanPoint>,
    pub label: String,
}

impl ScanSurface {
    /// Build a surface, rejecting empty point lists and duplicate points.
    pub fn new(points: Vec<ScanPoint>, label: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGeometry("surface has no points".into()));
        }
        if let Some((i, j)) = find_duplicate(&points) {
            return Err(Error::InvalidGeometry(format!(
                "points {i} and {j} closer than {MIN_POINT_SEPARATION} m"
            )));
        }
        Ok(Self {
            points,
            label: label.into(),
        })
    }

    pub fn points(&self) -> &[ScanPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// True when both surfaces hold the same grid (positions and tangents
    /// within `tol`), point for point.
    pub fn same_grid(&self, other: &ScanSurface, tol: f64) -> bool {
        self.first_grid_mismatch(other, tol).is_none()
    }

    /// Index of the first point at which the grids differ, if any. A length
    /// mismatch reports the shorter length as the offending index.
    pub fn first_grid_mismatch(&self, other: &ScanSurface, tol: f64) -> Option<usize> {
        if self.len() != other.len() {
            return Some(self.len().min(other.len()));
        }
        self.points.iter().zip(&other.points).position(|(a, b)| {
            (a.position - b.position).norm() > tol
                || (a.tangent_u - b.tangent_u).norm() > tol
                || (a.tangent_v - b.tangent_v).norm() > tol
        })
    }
}

fn find_duplicate(points: &[ScanPoint]) -> Option<(usize, usize)> {
    let min_sq = MIN_POINT_SEPARATION * MIN_POINT_SEPARATION;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if (points[i].position - points[j].position).norm_squared() < min_sq {
                return Some((i, j));
            }
        }
    }
    None
}

/// Cylindrical scan grid: the Cartesian product of `heights` and `azimuths`
/// on a cylinder of the given radius about the z axis through `axis_origin`.
///
/// Points are ordered row-major with height as the outer index. Each point
/// carries `tangent_u = ẑ` and `tangent_v = φ̂ = (−sinφ, cosφ, 0)`.
pub fn make_cylinder(
    radius: f64,
    heights: &[f64],
    azimuths: &[f64],
    axis_origin: Vector3<f64>,
) -> Result<ScanSurface> {
    if radius.is_nan() || radius <= 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "cylinder radius must be positive, got {radius}"
        )));
    }
    for (name, axis) in [("heights", heights), ("azimuths", azimuths)] {
        if axis.is_empty() {
            return Err(Error::InvalidGeometry(format!("{name} is empty")));
        }
        if axis.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGeometry(format!(
                "{name} must be strictly increasing"
            )));
        }
    }
    let mut points = Vec::with_capacity(heights.len() * azimuths.len());
    for &h in heights {
        for &phi in azimuths {
            let (sin_phi, cos_phi) = phi.sin_cos();
            let position = axis_origin + Vector3::new(radius * cos_phi, radius * sin_phi, h);
            points.push(ScanPoint::new(
                position,
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(-sin_phi, cos_phi, 0.0),
            )?);
        }
    }
    ScanSurface::new(points, "surface1")
}

/// `count` azimuth samples uniformly covering [0, 2π).
pub fn uniform_azimuths(count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| 2.0 * std::f64::consts::PI * i as f64 / count as f64)
        .collect()
}

/// Rectangular grid on the plane spanned by `u_axis` and `v_axis` through
/// `origin`. Points are placed at `origin + su·u_axis + sv·v_axis` for each
/// (su, sv) in the Cartesian product, u outer / v inner. Tangents are the
/// Gram–Schmidt orthonormalization of the two axes, so non-orthogonal axes
/// are accepted as long as they are not parallel.
pub fn make_plane(
    origin: Vector3<f64>,
    u_axis: Vector3<f64>,
    v_axis: Vector3<f64>,
    u_samples: &[f64],
    v_samples: &[f64],
) -> Result<ScanSurface> {
    if u_samples.is_empty() || v_samples.is_empty() {
        return Err(Error::InvalidGeometry("plane sample lists are empty".into()));
    }
    let nu = u_axis.norm();
    if nu == 0.0 {
        return Err(Error::InvalidGeometry("u_axis is zero".into()));
    }
    let tangent_u = u_axis / nu;
    let v_perp = v_axis - tangent_u * v_axis.dot(&tangent_u);
    let nv = v_perp.norm();
    if nv < 1e-12 * v_axis.norm() || nv == 0.0 {
        return Err(Error::InvalidGeometry("plane axes are parallel".into()));
    }
    let tangent_v = v_perp / nv;
    let mut points = Vec::with_capacity(u_samples.len() * v_samples.len());
    for &su in u_samples {
        for &sv in v_samples {
            let position = origin + u_axis * su + v_axis * sv;
            points.push(ScanPoint::new(position, tangent_u, tangent_v)?);
        }
    }
    ScanSurface::new(points, "surface1")
}

/// Field magnitudes (and, for synthetic ground truth, phases) sampled on a
/// scan surface at a single frequency. Magnitudes are linear V/m along each
/// point's tangents; phases are radians.
#[derive(Debug, Clone)]
pub struct FieldDataset {
    pub surface: ScanSurface,
    pub frequency_hz: f64,
    pub mag_u: Vec<f64>,
    pub mag_v: Vec<f64>,
    pub phase_u: Option<Vec<f64>>,
    pub phase_v: Option<Vec<f64>>,
}

impl FieldDataset {
    pub fn new(
        surface: ScanSurface,
        frequency_hz: f64,
        mag_u: Vec<f64>,
        mag_v: Vec<f64>,
        phase_u: Option<Vec<f64>>,
        phase_v: Option<Vec<f64>>,
    ) -> Result<Self> {
        if frequency_hz.is_nan() || frequency_hz <= 0.0 {
            return Err(Error::Config(format!(
                "frequency must be positive, got {frequency_hz}"
            )));
        }
        let n = surface.len();
        if mag_u.len() != n || mag_v.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "magnitude lengths ({}, {}) do not match point count {n}",
                mag_u.len(),
                mag_v.len()
            )));
        }
        for (name, m) in [("mag_u", &mag_u), ("mag_v", &mag_v)] {
            if let Some(i) = m.iter().position(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Schema {
                    row: Some(i + 1),
                    msg: format!("{name} must be finite and non-negative, got {}", m[i]),
                });
            }
        }
        if phase_u.is_some() != phase_v.is_some() {
            return Err(Error::ShapeMismatch(
                "phase_u and phase_v must both be present or both absent".into(),
            ));
        }
        for (name, p) in [("phase_u", &phase_u), ("phase_v", &phase_v)] {
            if let Some(p) = p {
                if p.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "{name} length {} does not match point count {n}",
                        p.len()
                    )));
                }
                if let Some(i) = p.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Schema {
                        row: Some(i + 1),
                        msg: format!("{name} must be finite"),
                    });
                }
            }
        }
        Ok(Self {
            surface,
            frequency_hz,
            mag_u,
            mag_v,
            phase_u,
            phase_v,
        })
    }

    pub fn has_phases(&self) -> bool {
        self.phase_u.is_some()
    }

    /// Magnitudes flattened in transfer-matrix row order: (u, v) per point.
    pub fn row_magnitudes(&self) -> Vec<f64> {
        let mut rows = Vec::with_capacity(2 * self.mag_u.len());
        for i in 0..self.mag_u.len() {
            rows.push(self.mag_u[i]);
            rows.push(self.mag_v[i]);
        }
        rows
    }

    /// Total measured field energy Σ(|E_u|² + |E_v|²).
    pub fn energy(&self) -> f64 {
        self.mag_u
            .iter()
            .zip(&self.mag_v)
            .map(|(u, v)| u * u + v * v)
            .sum()
    }
}

/// Convert a magnitude in dBµV/m to linear V/m.
pub fn db_uv_m_to_v_m(db: f64) -> f64 {
    10f64.powf(db / 20.0) * 1e-6
}

const COLUMNS_NO_PHASE: [&str; 11] = [
    "x", "y", "z", "tux", "tuy", "tuz", "tvx", "tvy", "tvz", "mag_u", "mag_v",
];
const COLUMNS_WITH_PHASE: [&str; 13] = [
    "x", "y", "z", "tux", "tuy", "tuz", "tvx", "tvy", "tvz", "mag_u", "mag_v", "phase_u",
    "phase_v",
];

/// Serialize a dataset to the canonical CSV format.
///
/// The first line holds the frequency (`# frequency_hz=...`), the second the
/// column header; one row per point follows. Floats are written with Rust's
/// shortest round-trip formatting, so a write→read cycle is bit-exact.
pub fn write_dataset(dataset: &FieldDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# frequency_hz={}", dataset.frequency_hz).unwrap();
    let with_phase = dataset.has_phases();
    let header: &[&str] = if with_phase {
        &COLUMNS_WITH_PHASE
    } else {
        &COLUMNS_NO_PHASE
    };
    writeln!(out, "{}", header.join(",")).unwrap();
    for (i, p) in dataset.surface.points().iter().enumerate() {
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.position.x,
            p.position.y,
            p.position.z,
            p.tangent_u.x,
            p.tangent_u.y,
            p.tangent_u.z,
            p.tangent_v.x,
            p.tangent_v.y,
            p.tangent_v.z,
            dataset.mag_u[i],
            dataset.mag_v[i]
        )
        .unwrap();
        if with_phase {
            write!(
                out,
                ",{},{}",
                dataset.phase_u.as_ref().unwrap()[i],
                dataset.phase_v.as_ref().unwrap()[i]
            )
            .unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a dataset from the canonical CSV format. The surface label is taken
/// from the file stem. With `magnitudes_in_db_uv_m` set, `mag_u`/`mag_v` are
/// interpreted as dBµV/m and converted to linear V/m.
pub fn read_dataset(path: impl AsRef<Path>, magnitudes_in_db_uv_m: bool) -> Result<FieldDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "surface1".into());
    parse_dataset(&text, &label, magnitudes_in_db_uv_m)
}

/// Parse the CSV text of a dataset (see [`read_dataset`]).
pub fn parse_dataset(
    text: &str,
    label: &str,
    magnitudes_in_db_uv_m: bool,
) -> Result<FieldDataset> {
    let mut lines = text.lines();
    let freq_line = lines.next().ok_or(Error::Schema {
        row: None,
        msg: "empty file".into(),
    })?;
    let frequency_hz = parse_frequency_header(freq_line)?;
    let rest = &text[freq_line.len()..];
    let rest = rest.strip_prefix('\n').unwrap_or(rest);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(rest.as_bytes());
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let with_phase = if headers == COLUMNS_WITH_PHASE {
        true
    } else if headers == COLUMNS_NO_PHASE {
        false
    } else {
        return Err(Error::Schema {
            row: None,
            msg: format!(
                "unexpected column header `{}`; expected `{}` or `{}`",
                headers.join(","),
                COLUMNS_NO_PHASE.join(","),
                COLUMNS_WITH_PHASE.join(",")
            ),
        });
    };

    let mut points = Vec::new();
    let mut mag_u = Vec::new();
    let mut mag_v = Vec::new();
    let mut phase_u = Vec::new();
    let mut phase_v = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        let expected = if with_phase { 13 } else { 11 };
        if record.len() != expected {
            return Err(Error::Schema {
                row: Some(row),
                msg: format!("expected {expected} fields, got {}", record.len()),
            });
        }
        let mut fields = [0f64; 13];
        for (i, raw) in record.iter().enumerate() {
            fields[i] = raw.parse::<f64>().map_err(|_| Error::Schema {
                row: Some(row),
                msg: format!("field `{}` is not a number: `{raw}`", headers[i]),
            })?;
            if fields[i].is_nan() {
                return Err(Error::Schema {
                    row: Some(row),
                    msg: format!("field `{}` is NaN", headers[i]),
                });
            }
        }
        let point = ScanPoint::new(
            Vector3::new(fields[0], fields[1], fields[2]),
            Vector3::new(fields[3], fields[4], fields[5]),
            Vector3::new(fields[6], fields[7], fields[8]),
        )
        .map_err(|e| Error::Schema {
            row: Some(row),
            msg: e.to_string(),
        })?;
        points.push(point);
        let (mu, mv) = if magnitudes_in_db_uv_m {
            (db_uv_m_to_v_m(fields[9]), db_uv_m_to_v_m(fields[10]))
        } else {
            (fields[9], fields[10])
        };
        for (name, m) in [("mag_u", mu), ("mag_v", mv)] {
            if m < 0.0 || !m.is_finite() {
                return Err(Error::Schema {
                    row: Some(row),
                    msg: format!("{name} must be finite and non-negative, got {m}"),
                });
            }
        }
        mag_u.push(mu);
        mag_v.push(mv);
        if with_phase {
            phase_u.push(fields[11]);
            phase_v.push(fields[12]);
        }
    }

    if let Some((i, j)) = find_duplicate(&points) {
        return Err(Error::Schema {
            row: Some(j + 1),
            msg: format!("duplicate scan point (matches row {})", i + 1),
        });
    }
    let surface = ScanSurface::new(points, label).map_err(|e| Error::Schema {
        row: None,
        msg: e.to_string(),
    })?;
    FieldDataset::new(
        surface,
        frequency_hz,
        mag_u,
        mag_v,
        with_phase.then_some(phase_u),
        with_phase.then_some(phase_v),
    )
}

fn parse_frequency_header(line: &str) -> Result<f64> {
    let trimmed = line.trim();
    let body = trimmed.strip_prefix('#').ok_or(Error::Schema {
        row: None,
        msg: format!("first line must be `# frequency_hz=<float>`, got `{trimmed}`"),
    })?;
    let (key, value) = body.trim().split_once('=').ok_or(Error::Schema {
        row: None,
        msg: "missing `frequency_hz=<float>` in header".into(),
    })?;
    if key.trim() != "frequency_hz" {
        return Err(Error::Schema {
            row: None,
            msg: format!("unexpected header key `{}`", key.trim()),
        });
    }
    let f: f64 = value.trim().parse().map_err(|_| Error::Schema {
        row: None,
        msg: format!("frequency is not a number: `{}`", value.trim()),
    })?;
    if !f.is_finite() || f <= 0.0 {
        return Err(Error::Schema {
            row: None,
            msg: format!("frequency must be positive and finite, got {f}"),
        });
    }
    Ok(f)
}

/// JSON description of a scan surface, used by the CLI to build grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceSpec {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(flatten)]
    pub geometry: GeometrySpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometrySpec {
    Cylinder {
        radius: f64,
        heights: AxisSpec,
        azimuths: AzimuthSpec,
        #[serde(default)]
        axis_origin: [f64; 3],
    },
    Plane {
        origin: [f64; 3],
        u_axis: [f64; 3],
        v_axis: [f64; 3],
        u_samples: AxisSpec,
        v_samples: AxisSpec,
    },
}

/// Sample positions along one axis: either an explicit list or a
/// start/stop/step range (stop inclusive).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    Range { start: f64, stop: f64, step: f64 },
    Values(Vec<f64>),
}

impl AxisSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            AxisSpec::Values(v) => Ok(v.clone()),
            AxisSpec::Range { start, stop, step } => {
                if step.is_nan() || *step <= 0.0 || stop < start {
                    return Err(Error::Config(format!(
                        "bad axis range start={start} stop={stop} step={step}"
                    )));
                }
                let n = ((stop - start) / step + 0.5).floor() as usize + 1;
                Ok((0..n).map(|i| start + i as f64 * step).collect())
            }
        }
    }
}

/// Azimuth samples: a uniform count over [0, 2π) or an explicit list of
/// radians.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AzimuthSpec {
    Count { count: usize },
    Values(Vec<f64>),
}

impl AzimuthSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            AzimuthSpec::Values(v) => Ok(v.clone()),
            AzimuthSpec::Count { count } => {
                if *count == 0 {
                    return Err(Error::Config("azimuth count must be positive".into()));
                }
                Ok(uniform_azimuths(*count))
            }
        }
    }
}

impl SurfaceSpec {
    /// Materialize the grid this spec describes.
    pub fn build(&self, default_label: &str) -> Result<ScanSurface> {
        let label = self.label.clone().unwrap_or_else(|| default_label.into());
        let surface = match &self.geometry {
            GeometrySpec::Cylinder {
                radius,
                heights,
                azimuths,
                axis_origin,
            } => make_cylinder(
                *radius,
                &heights.values()?,
                &azimuths.values()?,
                Vector3::from(*axis_origin),
            )?,
            GeometrySpec::Plane {
                origin,
                u_axis,
                v_axis,
                u_samples,
                v_samples,
            } => make_plane(
                Vector3::from(*origin),
                Vector3::from(*u_axis),
                Vector3::from(*v_axis),
                &u_samples.values()?,
                &v_samples.values()?,
            )?,
        };
        Ok(surface.with_label(label))
    }
}
