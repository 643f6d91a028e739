//! Analytic reference sources and synthetic-dataset generation: the
//! half-wavelength wire antenna (sinusoidal standing-wave current, moment
//! integral, segmented-dipole discretization) and scripted dipole scenes
//! with optional magnitude noise.

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constants::wavelength;
use crate::error::{Error, Result};
use crate::forward::{forward_fields, Dipole, DipoleRecord, DipoleType, Environment};
use crate::scan::{FieldDataset, ScanSurface, SurfaceSpec};

/// Center-fed thin wire antenna carrying the standing-wave current
/// I(z) = I₀·sin[(2π/λ)(λ/4 − |z|)] with I₀ = V/Z_in.
#[derive(Debug, Clone, PartialEq)]
pub struct WireAntenna {
    pub center: Vector3<f64>,
    /// Physical length (λ/2 for the half-wave case).
    pub length: f64,
    /// Wire direction, unit length.
    pub axis: Vector3<f64>,
    pub feed_voltage: Complex64,
    pub input_impedance: Complex64,
}

impl WireAntenna {
    pub fn new(
        center: Vector3<f64>,
        length: f64,
        axis: Vector3<f64>,
        feed_voltage: Complex64,
        input_impedance: Complex64,
    ) -> Result<Self> {
        if length.is_nan() || length <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "wire length must be positive, got {length}"
            )));
        }
        if (axis.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidGeometry(format!(
                "wire axis must be unit length, norm {}",
                axis.norm()
            )));
        }
        if input_impedance.norm() == 0.0 {
            return Err(Error::Config("input impedance must be nonzero".into()));
        }
        Ok(Self {
            center,
            length,
            axis,
            feed_voltage,
            input_impedance,
        })
    }

    /// Half-wave antenna: length fixed to λ/2.
    pub fn half_wave(
        center: Vector3<f64>,
        axis: Vector3<f64>,
        feed_voltage: Complex64,
        input_impedance: Complex64,
        lambda: f64,
    ) -> Result<Self> {
        Self::new(center, lambda / 2.0, axis, feed_voltage, input_impedance)
    }

    /// Feed current I₀ = V/Z_in.
    pub fn feed_current(&self) -> Complex64 {
        self.feed_voltage / self.input_impedance
    }
}

/// Standing-wave current at position `z_local` along the wire (measured
/// from the center). Symmetric in z: I(z) = I(−z).
pub fn wire_current(ant: &WireAntenna, z_local: f64, lambda: f64) -> Result<Complex64> {
    if z_local.abs() > ant.length / 2.0 {
        return Err(Error::InvalidGeometry(format!(
            "z = {z_local} outside the wire (half-length {})",
            ant.length / 2.0
        )));
    }
    let k = 2.0 * std::f64::consts::PI / lambda;
    Ok(ant.feed_current() * (k * (lambda / 4.0 - z_local.abs())).sin())
}

/// Total moment of a half-wave wire: ∫ I(z) dz = I₀·λ/π. Only defined for
/// the half-wave length the closed form belongs to.
pub fn wire_moment(ant: &WireAntenna, lambda: f64) -> Result<Complex64> {
    if (ant.length - lambda / 2.0).abs() > 1e-9 * lambda {
        return Err(Error::Unsupported(format!(
            "moment integral requires a half-wave antenna (length {} vs λ/2 = {})",
            ant.length,
            lambda / 2.0
        )));
    }
    Ok(ant.feed_current() * lambda / std::f64::consts::PI)
}

/// Discretize the wire into `n_segments` collinear electric dipoles at the
/// segment midpoints, each with moment I(z_i)·Δz. The wire axis must be
/// aligned with a coordinate axis (the dipole basis is axis-aligned);
/// an anti-parallel axis folds its sign into the moments.
pub fn wire_segments(ant: &WireAntenna, n_segments: usize, lambda: f64) -> Result<Vec<Dipole>> {
    if n_segments == 0 {
        return Err(Error::Config("segment count must be at least 1".into()));
    }
    let (kind, sign) = axis_aligned_kind(&ant.axis)?;
    let dz = ant.length / n_segments as f64;
    let mut dipoles = Vec::with_capacity(n_segments);
    for i in 0..n_segments {
        let z = -ant.length / 2.0 + (i as f64 + 0.5) * dz;
        let current = wire_current(ant, z, lambda)?;
        dipoles.push(Dipole::new(
            kind,
            ant.center + ant.axis * z,
            current * dz * sign,
        )?);
    }
    Ok(dipoles)
}

fn axis_aligned_kind(axis: &Vector3<f64>) -> Result<(DipoleType, f64)> {
    for (kind, unit) in [
        (DipoleType::PX, Vector3::x()),
        (DipoleType::PY, Vector3::y()),
        (DipoleType::PZ, Vector3::z()),
    ] {
        if (axis - unit).norm() < 1e-9 {
            return Ok((kind, 1.0));
        }
        if (axis + unit).norm() < 1e-9 {
            return Ok((kind, -1.0));
        }
    }
    Err(Error::Unsupported(format!(
        "wire axis ({}, {}, {}) is not aligned with a coordinate axis",
        axis.x, axis.y, axis.z
    )))
}

/// A radiating source in a synthetic scene.
#[derive(Debug, Clone)]
pub enum Source {
    Dipole(Dipole),
    Wire { antenna: WireAntenna, segments: usize },
}

impl Source {
    /// Expand into concrete dipoles for the given frequency.
    pub fn to_dipoles(&self, frequency_hz: f64) -> Result<Vec<Dipole>> {
        match self {
            Source::Dipole(d) => Ok(vec![d.clone()]),
            Source::Wire { antenna, segments } => {
                wire_segments(antenna, *segments, wavelength(frequency_hz))
            }
        }
    }
}

/// Magnitude noise model: multiplicative uniform ripple in dB and/or
/// additive Gaussian in V/m (clamped at zero).
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(default)]
    pub uniform_db: Option<f64>,
    #[serde(default)]
    pub gaussian_sigma: Option<f64>,
}

impl NoiseModel {
    pub fn is_none(&self) -> bool {
        self.uniform_db.is_none() && self.gaussian_sigma.is_none()
    }
}

/// Forward-model a scene onto a surface, keeping noiseless phases as the
/// ground-truth columns and optionally perturbing the magnitudes. Every
/// magnitude sample draws its own noise factor; the draw order is fixed
/// (point by point, u before v), so output is deterministic per seed.
pub fn synth_dataset(
    sources: &[Source],
    surface: &ScanSurface,
    env: &Environment,
    noise_db: Option<f64>,
    seed: u64,
) -> Result<FieldDataset> {
    synth_dataset_with(
        sources,
        surface,
        env,
        &NoiseModel {
            uniform_db: noise_db,
            gaussian_sigma: None,
        },
        seed,
    )
}

/// As [`synth_dataset`], with the full noise model.
pub fn synth_dataset_with(
    sources: &[Source],
    surface: &ScanSurface,
    env: &Environment,
    noise: &NoiseModel,
    seed: u64,
) -> Result<FieldDataset> {
    let mut dipoles = Vec::new();
    for s in sources {
        dipoles.extend(s.to_dipoles(env.frequency_hz)?);
    }
    let mut ds = if dipoles.is_empty() {
        FieldDataset::new(
            surface.clone(),
            env.frequency_hz,
            vec![0.0; surface.len()],
            vec![0.0; surface.len()],
            Some(vec![0.0; surface.len()]),
            Some(vec![0.0; surface.len()]),
        )?
    } else {
        forward_fields(&dipoles, surface, env)?
    };
    if noise.is_none() {
        return Ok(ds);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..ds.mag_u.len() {
        for mag in [&mut ds.mag_u[i], &mut ds.mag_v[i]] {
            if let Some(db) = noise.uniform_db {
                let u = rng.gen_range(-db..=db);
                *mag *= 10f64.powf(u / 20.0);
            }
            if let Some(sigma) = noise.gaussian_sigma {
                // Box–Muller from two uniforms
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen::<f64>();
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                *mag = (*mag + sigma * g).max(0.0);
            }
        }
    }
    Ok(ds)
}

/// JSON scene: sources plus environment, noise and the surfaces to sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub frequency_hz: f64,
    #[serde(default)]
    pub ground: bool,
    pub sources: Vec<SceneSource>,
    #[serde(default)]
    pub noise_db: Option<f64>,
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub surfaces: Vec<SurfaceSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    Dipole(DipoleRecord),
    Wire(WireSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireSpec {
    pub center: [f64; 3],
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    /// Physical length in metres; omitted means λ/2 at the scene frequency.
    #[serde(default)]
    pub length: Option<f64>,
    pub voltage: Polar,
    pub impedance: ReIm,
    #[serde(default = "default_segments")]
    pub segments: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Polar {
    pub magnitude: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReIm {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_segments() -> usize {
    101
}

impl Scene {
    pub fn environment(&self) -> Result<Environment> {
        Environment::new(self.ground, self.frequency_hz)
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            uniform_db: self.noise_db,
            gaussian_sigma: self.noise_sigma,
        }
    }

    pub fn build_sources(&self) -> Result<Vec<Source>> {
        let lambda = wavelength(self.frequency_hz);
        self.sources
            .iter()
            .map(|s| match s {
                SceneSource::Dipole(rec) => Ok(Source::Dipole(rec.to_dipole()?)),
                SceneSource::Wire(w) => {
                    let antenna = WireAntenna::new(
                        Vector3::from(w.center),
                        w.length.unwrap_or(lambda / 2.0),
                        Vector3::from(w.axis),
                        Complex64::from_polar(w.voltage.magnitude, w.voltage.phase_deg.to_radians()),
                        Complex64::new(w.impedance.re, w.impedance.im),
                    )?;
                    Ok(Source::Wire {
                        antenna,
                        segments: w.segments,
                    })
                }
            })
            .collect()
    }
}
