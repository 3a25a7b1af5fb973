//! Quasi-static optical response of a metal nanorod modeled as a prolate
//! spheroid: polarizability with radiation reaction, scattering spectra,
//! the exact exterior field of the uniformly polarized spheroid, emission
//! rate enhancement for a nearby dipole, and the combined response of an
//! emitter coupled to both the rod and a guided fiber mode.
//!
//! Axis convention matches the rest of the crate: the rod's long axis lies
//! along `z` (the fiber axis); `x` points radially away from the fiber.
//! Lengths are nanometers, cross sections nm^2.

use num_complex::Complex64;
use std::io::BufRead;
use thiserror::Error;

use crate::waveguide::{guided_dop, GuidedFractions};

/// Tabulated relative permittivity of bulk gold (Lorentz-Drude fit),
/// generated once and frozen; see the file header for the oscillator
/// parameters.
const GOLD_TABLE: &str = include_str!("../assets/gold_permittivity.csv");

/// Drude parameters of the embedded gold table, needed to re-damp the free
/// electron term for finite-size particles. Plasma energy and damping in eV.
const DRUDE_PLASMA_EV: f64 = 9.03;
const DRUDE_STRENGTH: f64 = 0.760;
const DRUDE_DAMPING_EV: f64 = 0.053;
/// hbar times the gold Fermi velocity (1.40e6 m/s), in eV nm.
const HBAR_VF_EV_NM: f64 = 0.9212;
/// Photon energy-wavelength product, eV nm.
const EV_NM: f64 = 1239.841984;

#[derive(Debug, Error)]
pub enum PlasmonError {
    #[error("wavelength {wavelength} nm outside tabulated range [{min}, {max}] nm")]
    OutOfRange { wavelength: f64, min: f64, max: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no usable spectral peak: {0}")]
    NoPeak(String),
    #[error("evaluation point ({x:.2}, {y:.2}, {z:.2}) nm lies inside the scatterer")]
    InsideScatterer { x: f64, y: f64, z: f64 },
    #[error("bad permittivity table: {0}")]
    BadTable(String),
}

/// Complex relative permittivity versus wavelength, linearly interpolated
/// between nodes. Imaginary parts are non-negative (exp(-i omega t)
/// convention, passive material).
#[derive(Debug, Clone, PartialEq)]
pub struct Permittivity {
    wavelengths: Vec<f64>,
    values: Vec<Complex64>,
}

impl Permittivity {
    /// Bulk gold from the embedded Lorentz-Drude table, 400-900 nm.
    pub fn gold() -> Self {
        Self::from_csv(GOLD_TABLE.as_bytes()).expect("embedded gold table is valid")
    }

    /// Wavelength-independent permittivity (any positive wavelength).
    pub fn constant(value: Complex64) -> Self {
        Permittivity {
            wavelengths: vec![1.0, 1e9],
            values: vec![value, value],
        }
    }

    /// Parses `wavelength_nm,eps_real,eps_imag` rows; `#` comments and a
    /// header line are skipped.
    pub fn from_csv(reader: impl BufRead) -> Result<Self, PlasmonError> {
        let mut wavelengths = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| PlasmonError::BadTable(format!("read error: {e}")))?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("wavelength") {
                continue;
            }
            let fields: Vec<&str> = t.split(',').collect();
            if fields.len() != 3 {
                return Err(PlasmonError::BadTable(format!(
                    "line {}: expected 3 comma-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64, PlasmonError> {
                s.trim().parse().map_err(|_| {
                    PlasmonError::BadTable(format!("line {}: bad number {s:?}", lineno + 1))
                })
            };
            let lam = parse(fields[0])?;
            let re = parse(fields[1])?;
            let im = parse(fields[2])?;
            if !(lam.is_finite() && re.is_finite() && im.is_finite()) {
                return Err(PlasmonError::BadTable(format!(
                    "line {}: non-finite entry",
                    lineno + 1
                )));
            }
            if im < 0.0 {
                return Err(PlasmonError::BadTable(format!(
                    "line {}: negative imaginary part {im} (passive material required)",
                    lineno + 1
                )));
            }
            wavelengths.push(lam);
            values.push(Complex64::new(re, im));
        }
        if wavelengths.len() < 2 {
            return Err(PlasmonError::BadTable("need at least two rows".into()));
        }
        if !wavelengths.windows(2).all(|p| p[1] > p[0]) {
            return Err(PlasmonError::BadTable(
                "wavelengths must be strictly increasing".into(),
            ));
        }
        Ok(Permittivity {
            wavelengths,
            values,
        })
    }

    /// Tabulated wavelength range (nm).
    pub fn range(&self) -> (f64, f64) {
        (self.wavelengths[0], *self.wavelengths.last().unwrap())
    }

    /// Permittivity at `wavelength` nm; exact on nodes, linear in between.
    pub fn at(&self, wavelength: f64) -> Result<Complex64, PlasmonError> {
        let (min, max) = self.range();
        if !(wavelength >= min && wavelength <= max) {
            return Err(PlasmonError::OutOfRange {
                wavelength,
                min,
                max,
            });
        }
        let idx = match self
            .wavelengths
            .binary_search_by(|w| w.partial_cmp(&wavelength).unwrap())
        {
            Ok(i) => return Ok(self.values[i]),
            Err(i) => i,
        };
        let (w0, w1) = (self.wavelengths[idx - 1], self.wavelengths[idx]);
        let t = (wavelength - w0) / (w1 - w0);
        Ok(self.values[idx - 1] * (1.0 - t) + self.values[idx] * t)
    }

    /// Returns a copy with the free-electron damping increased by the
    /// finite-size surface-scattering rate `amplitude * hbar v_F / l_eff`.
    /// The transform swaps the bulk Drude term for a re-damped one, so it
    /// is only meaningful for tables sharing the embedded gold Drude
    /// parameters.
    pub fn with_surface_damping(&self, effective_path_nm: f64, amplitude: f64) -> Self {
        let dg = amplitude * HBAR_VF_EV_NM / effective_path_nm;
        let wp2 = DRUDE_PLASMA_EV * DRUDE_PLASMA_EV * DRUDE_STRENGTH;
        let values = self
            .wavelengths
            .iter()
            .zip(&self.values)
            .map(|(&lam, &v)| {
                let w = Complex64::new(EV_NM / lam, 0.0);
                let bulk = wp2 / (w * (w + Complex64::new(0.0, DRUDE_DAMPING_EV)));
                let sized = wp2 / (w * (w + Complex64::new(0.0, DRUDE_DAMPING_EV + dg)));
                v + bulk - sized
            })
            .collect();
        Permittivity {
            wavelengths: self.wavelengths.clone(),
            values,
        }
    }
}

/// Nanorod geometry, modeled as a prolate spheroid with the long axis on z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NanorodSpec {
    /// Tip-to-tip length, nm.
    pub length: f64,
    /// Transverse diameter, nm.
    pub diameter: f64,
    /// Refractive index of the effective embedding medium.
    pub medium_index: f64,
}

impl NanorodSpec {
    pub fn new(length: f64, diameter: f64, medium_index: f64) -> Self {
        NanorodSpec {
            length,
            diameter,
            medium_index,
        }
    }

    /// The 75 x 30 nm gold rod used throughout the examples. The medium
    /// index is calibrated so that the orientation-averaged scattering peak
    /// of this rod (with default surface damping) sits at 650.0 nm.
    pub fn gold_75x30() -> Self {
        NanorodSpec::new(75.0, 30.0, 1.2838)
    }

    pub fn validate(&self) -> Result<(), PlasmonError> {
        if !(self.length.is_finite() && self.diameter.is_finite() && self.length >= self.diameter) {
            return Err(PlasmonError::DegenerateInput(format!(
                "need length >= diameter > 0 for a rod or sphere, got {} x {}",
                self.length, self.diameter
            )));
        }
        if self.diameter <= 0.0 {
            return Err(PlasmonError::DegenerateInput(
                "diameter must be positive".into(),
            ));
        }
        if !(self.medium_index.is_finite() && self.medium_index > 0.0) {
            return Err(PlasmonError::DegenerateInput(format!(
                "medium index must be positive, got {}",
                self.medium_index
            )));
        }
        Ok(())
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.length / self.diameter
    }

    /// Spheroid volume, nm^3.
    pub fn volume(&self) -> f64 {
        std::f64::consts::FRAC_PI_3 * 4.0 * (self.length / 2.0) * (self.diameter / 2.0).powi(2)
    }

    /// Prolate spheroid surface area, nm^2.
    pub fn surface_area(&self) -> f64 {
        let a = self.length / 2.0;
        let b = self.diameter / 2.0;
        let e2 = 1.0 - (b / a).powi(2);
        // asin(e)/e through its series near the sphere, where the closed
        // form divides 0 by 0.
        let cap = if e2 < 1e-6 {
            (a / b) * (1.0 + e2 / 6.0 + 3.0 * e2 * e2 / 40.0)
        } else {
            let e = e2.sqrt();
            a / (b * e) * e.asin()
        };
        2.0 * std::f64::consts::PI * b * b * (1.0 + cap)
    }

    /// Mean free path limit 4V/S used by the surface-damping correction.
    pub fn effective_path_length(&self) -> f64 {
        4.0 * self.volume() / self.surface_area()
    }

    /// Focal half-distance c of the spheroid, nm.
    fn focal(&self) -> f64 {
        ((self.length / 2.0).powi(2) - (self.diameter / 2.0).powi(2)).sqrt()
    }

    /// Surface coordinate xi0 = (length/2)/c in prolate spheroidal
    /// coordinates.
    fn xi0(&self) -> f64 {
        (self.length / 2.0) / self.focal()
    }
}

/// The gold permittivity to pair with a rod: bulk gold with the rod's own
/// finite-size damping correction applied.
pub fn gold_for_rod(rod: &NanorodSpec) -> Permittivity {
    Permittivity::gold().with_surface_damping(rod.effective_path_length(), 1.0)
}

/// Geometric depolarization factors [x, y, z]; z is the long axis. They
/// sum to 1, and the transverse pair are equal.
pub fn depolarization_factors(rod: &NanorodSpec) -> [f64; 3] {
    let ratio = rod.diameter / rod.length;
    let e2 = 1.0 - ratio * ratio;
    // Series around the sphere; the closed form loses all digits as e -> 0.
    let l_long = if e2 < 1e-6 {
        1.0 / 3.0 - 2.0 * e2 / 15.0 - 2.0 * e2 * e2 / 35.0
    } else {
        let e = e2.sqrt();
        (1.0 - e2) / (e2 * e) * (e.atanh() - e)
    };
    let l_trans = 0.5 * (1.0 - l_long);
    [l_trans, l_trans, l_long]
}

/// Quasi-static spheroid polarizability per axis, nm^3, convention
/// p = eps0 eps_m alpha E.
pub fn quasistatic_polarizability(rod: &NanorodSpec, eps_metal: Complex64) -> [Complex64; 3] {
    let eps_m = Complex64::new(rod.medium_index * rod.medium_index, 0.0);
    let v = rod.volume();
    let l = depolarization_factors(rod);
    let d = eps_metal - eps_m;
    [
        v * d / (eps_m + l[0] * d),
        v * d / (eps_m + l[1] * d),
        v * d / (eps_m + l[2] * d),
    ]
}

/// Polarizability with the radiation-reaction correction, nm^3. The
/// correction keeps the optical theorem consistent: extinction equals
/// scattering for a lossless particle.
pub fn effective_polarizability(
    rod: &NanorodSpec,
    eps_metal: Complex64,
    wavelength: f64,
) -> [Complex64; 3] {
    let k = 2.0 * std::f64::consts::PI * rod.medium_index / wavelength;
    let rr = Complex64::new(0.0, k * k * k / (6.0 * std::f64::consts::PI));
    quasistatic_polarizability(rod, eps_metal).map(|a| a / (1.0 - rr * a))
}

/// One row of a scattering spectrum; cross sections in nm^2.
#[derive(Debug, Clone, Copy)]
pub struct SpectrumRow {
    pub wavelength: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    /// Orientation average (x + y + z)/3.
    pub sigma_avg: f64,
}

/// Scattering cross sections per polarization over a wavelength grid.
pub fn scattering_spectrum(
    rod: &NanorodSpec,
    metal: &Permittivity,
    wavelengths: &[f64],
) -> Result<Vec<SpectrumRow>, PlasmonError> {
    rod.validate()?;
    if wavelengths.len() < 2 {
        return Err(PlasmonError::DegenerateInput(
            "need at least two wavelengths".into(),
        ));
    }
    let mut rows = Vec::with_capacity(wavelengths.len());
    for &lam in wavelengths {
        if !(lam.is_finite() && lam > 0.0) {
            return Err(PlasmonError::DegenerateInput(format!(
                "bad wavelength {lam}"
            )));
        }
        let eps = metal.at(lam)?;
        let alpha = effective_polarizability(rod, eps, lam);
        let k = 2.0 * std::f64::consts::PI * rod.medium_index / lam;
        let pre = k.powi(4) / (6.0 * std::f64::consts::PI);
        let s: Vec<f64> = alpha.iter().map(|a| pre * a.norm_sqr()).collect();
        rows.push(SpectrumRow {
            wavelength: lam,
            sigma_x: s[0],
            sigma_y: s[1],
            sigma_z: s[2],
            sigma_avg: (s[0] + s[1] + s[2]) / 3.0,
        });
    }
    Ok(rows)
}

/// Peak location and width of a sampled resonance curve.
#[derive(Debug, Clone, Copy)]
pub struct PeakAnalysis {
    /// Parabolically refined peak position.
    pub peak_wavelength: f64,
    /// Refined peak value.
    pub peak_value: f64,
    /// Full width at half maximum from linear interpolation of the
    /// half-maximum crossings.
    pub fwhm: f64,
}

/// Finds the interior maximum of a sampled curve and its full width at
/// half maximum. Fails if the maximum sits on the grid edge or either
/// half-maximum crossing lies outside the grid.
pub fn analyze_peak(x: &[f64], y: &[f64]) -> Result<PeakAnalysis, PlasmonError> {
    if x.len() != y.len() || x.len() < 5 {
        return Err(PlasmonError::DegenerateInput(
            "peak analysis needs matched arrays of at least 5 samples".into(),
        ));
    }
    if !x.windows(2).all(|p| p[1] > p[0]) {
        return Err(PlasmonError::DegenerateInput(
            "abscissa must be strictly increasing".into(),
        ));
    }
    let i = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
    if i == 0 || i == y.len() - 1 {
        return Err(PlasmonError::NoPeak(format!(
            "maximum sits on the grid edge at {}",
            x[i]
        )));
    }
    // Parabola through the three points around the maximum (grid may be
    // non-uniform).
    let (x0, x1, x2) = (x[i - 1], x[i], x[i + 1]);
    let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
    let d0 = (y1 - y0) / (x1 - x0);
    let d1 = (y2 - y1) / (x2 - x1);
    let curv = (d1 - d0) / (x2 - x0);
    let (peak_x, peak_v) = if curv < 0.0 {
        let xv = 0.5 * (x0 + x1) - d0 / (2.0 * curv);
        let xv = xv.clamp(x0, x2);
        let yv = y1 + curv * (xv - x1) * (xv - x0) + d0 * (xv - x1);
        (xv, yv.max(y1))
    } else {
        (x1, y1)
    };
    let half = peak_v / 2.0;
    let mut left = None;
    for j in (0..i).rev() {
        if y[j] <= half {
            let t = (half - y[j]) / (y[j + 1] - y[j]);
            left = Some(x[j] + t * (x[j + 1] - x[j]));
            break;
        }
    }
    let mut right = None;
    for j in i + 1..y.len() {
        if y[j] <= half {
            let t = (half - y[j - 1]) / (y[j] - y[j - 1]);
            right = Some(x[j - 1] + t * (x[j] - x[j - 1]));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok(PeakAnalysis {
            peak_wavelength: peak_x,
            peak_value: peak_v,
            fwhm: r - l,
        }),
        _ => Err(PlasmonError::NoPeak(
            "half-maximum crossing falls outside the sampled range".into(),
        )),
    }
}

fn q1(xi: f64) -> f64 {
    0.5 * xi * ((xi + 1.0) / (xi - 1.0)).ln() - 1.0
}

fn q1_prime(xi: f64) -> f64 {
    0.5 * ((xi + 1.0) / (xi - 1.0)).ln() - xi / (xi * xi - 1.0)
}

fn q1_second(xi: f64) -> f64 {
    2.0 / (xi * xi - 1.0).powi(2)
}

/// Exterior field kernels of the uniformly polarized spheroid. Row `a` is
/// the vector field w_a(r) such that a rod dipole moment p along axis `a`
/// produces E(r) = p w_a(r) / (4 pi eps0 eps_m); units 1/nm^3. Far from
/// the rod each kernel tends to the point-dipole form (3 n n - I) e_a /r^3.
pub fn scattered_field_kernel(
    rod: &NanorodSpec,
    pos: [f64; 3],
) -> Result<[[f64; 3]; 3], PlasmonError> {
    rod.validate()?;
    let a_half = rod.length / 2.0;
    let b_half = rod.diameter / 2.0;
    let [x, y, z] = pos;
    let rho2 = x * x + y * y;
    if rho2 / (b_half * b_half) + z * z / (a_half * a_half) <= 1.0 {
        return Err(PlasmonError::InsideScatterer { x, y, z });
    }
    let c = rod.focal();
    if c < 1e-4 * b_half {
        // Sphere limit: the exterior of a uniformly polarized sphere is the
        // field of a point dipole at its center. The spheroidal route loses
        // precision here because xi grows without bound.
        let r = (rho2 + z * z).sqrt();
        let n = [x / r, y / r, z / r];
        let r3 = r * r * r;
        let mut w = [[0.0; 3]; 3];
        for (a, row) in w.iter_mut().enumerate() {
            for (u, val) in row.iter_mut().enumerate() {
                let delta = if a == u { 1.0 } else { 0.0 };
                *val = (3.0 * n[a] * n[u] - delta) / r3;
            }
        }
        return Ok(w);
    }
    let xi0 = rod.xi0();
    let r1 = (rho2 + (z + c) * (z + c)).sqrt();
    let r2 = (rho2 + (z - c) * (z - c)).sqrt();
    let xi = (r1 + r2) / (2.0 * c);
    debug_assert!(xi > xi0 * (1.0 - 1e-12));
    // Gradient of xi in Cartesian coordinates.
    let gx = (x / r1 + x / r2) / (2.0 * c);
    let gy = (y / r1 + y / r2) / (2.0 * c);
    let gz = ((z + c) / r1 + (z - c) / r2) / (2.0 * c);
    let c3 = c * c * c;

    // Longitudinal kernel: potential (3/c^3) z Q1(xi)/xi.
    let g = q1(xi) / xi;
    let gp = (q1_prime(xi) * xi - q1(xi)) / (xi * xi);
    let w_z = [
        -(3.0 / c3) * z * gp * gx,
        -(3.0 / c3) * z * gp * gy,
        -(3.0 / c3) * (g + z * gp * gz),
    ];

    // Transverse kernels: potential -(3/(2 c^3)) * (x or y) * Q1'(xi).
    let qp = q1_prime(xi);
    let qpp = q1_second(xi);
    let w_x = [
        (3.0 / (2.0 * c3)) * (qp + x * qpp * gx),
        (3.0 / (2.0 * c3)) * (x * qpp * gy),
        (3.0 / (2.0 * c3)) * (x * qpp * gz),
    ];
    let w_y = [
        (3.0 / (2.0 * c3)) * (y * qpp * gx),
        (3.0 / (2.0 * c3)) * (qp + y * qpp * gy),
        (3.0 / (2.0 * c3)) * (y * qpp * gz),
    ];
    Ok([w_x, w_y, w_z])
}

/// Emission-rate enhancement (total decay, radiative plus absorbed) for a
/// dipole at `pos`, one value per dipole orientation x, y, z. Each
/// orientation drives the rod mode of matching polarization; cross-axis
/// near-field mixing is outside this surrogate, which keeps the
/// per-orientation factors well defined. Unity far from the rod or when
/// the rod is index matched.
pub fn purcell_factors(
    rod: &NanorodSpec,
    metal: &Permittivity,
    wavelength: f64,
    pos: [f64; 3],
) -> Result<[f64; 3], PlasmonError> {
    let eps = metal.at(wavelength)?;
    let alpha = effective_polarizability(rod, eps, wavelength);
    let w = scattered_field_kernel(rod, pos)?;
    let k = 2.0 * std::f64::consts::PI * rod.medium_index / wavelength;
    let pre = 3.0 / (8.0 * std::f64::consts::PI * k * k * k);
    let mut pf = [0.0; 3];
    for u in 0..3 {
        pf[u] = 1.0 + pre * alpha[u].im * w[u][u] * w[u][u];
    }
    Ok(pf)
}

/// Local intensity enhancement |E/E0|^2 at `pos` for an incident field
/// polarized along `axis` (0 = x, 1 = y, 2 = z).
pub fn near_field_enhancement(
    rod: &NanorodSpec,
    metal: &Permittivity,
    wavelength: f64,
    pos: [f64; 3],
    axis: usize,
) -> Result<f64, PlasmonError> {
    if axis > 2 {
        return Err(PlasmonError::DegenerateInput(format!(
            "axis index {axis} out of range"
        )));
    }
    let eps = metal.at(wavelength)?;
    let alpha = effective_polarizability(rod, eps, wavelength);
    let w = scattered_field_kernel(rod, pos)?;
    let scale = alpha[axis] / (4.0 * std::f64::consts::PI);
    let mut total = 0.0;
    for comp in 0..3 {
        let incident = if comp == axis { 1.0 } else { 0.0 };
        let field = Complex64::new(incident, 0.0) + scale * w[axis][comp];
        total += field.norm_sqr();
    }
    Ok(total)
}

/// Combined rod-plus-fiber figures for an emitter on a line parallel to
/// the rod axis.
#[derive(Debug, Clone, Copy)]
pub struct HybridRow {
    /// Axial displacement of the emitter from the rod center, nm.
    pub displacement: f64,
    pub pf_x: f64,
    pub pf_y: f64,
    pub pf_z: f64,
    /// Orientation-averaged emission enhancement.
    pub pf_avg: f64,
    /// Guided count-rate enhancement relative to the bare-fiber emitter:
    /// sum of PF_i T_i over sum of T_i.
    pub enhancement: f64,
    /// Guided polarization contrast with rod weighting applied.
    pub dop: f64,
}

/// Sweeps the emitter along a line at `standoff` nm from the rod surface
/// (impact parameter radius/2 + standoff on the x side), displaced by `d`
/// along the rod axis, and combines emission enhancement with the guided
/// channeling fractions of the bare fiber.
pub fn hybrid_response(
    rod: &NanorodSpec,
    metal: &Permittivity,
    wavelength: f64,
    fractions: &GuidedFractions,
    standoff: f64,
    displacements: &[f64],
) -> Result<Vec<HybridRow>, PlasmonError> {
    rod.validate()?;
    if !(standoff.is_finite() && standoff > 0.0) {
        return Err(PlasmonError::DegenerateInput(format!(
            "standoff must be positive, got {standoff}"
        )));
    }
    let t = fractions.as_array();
    let t_sum = t[0] + t[1] + t[2];
    if !(t_sum > 0.0) {
        return Err(PlasmonError::DegenerateInput(
            "channeling fractions must have a positive sum".into(),
        ));
    }
    let impact = rod.diameter / 2.0 + standoff;

    // The rod filters the guided light spectrally: each channeling fraction
    // is weighted by the rod response Im alpha on the matching axis. The
    // result does not depend on emitter position. With no absorber (alpha
    // real or zero) the bare-fiber contrast applies unchanged.
    let eps = metal.at(wavelength)?;
    let alpha = effective_polarizability(rod, eps, wavelength);
    let im_sum = alpha[0].im + alpha[1].im + alpha[2].im;
    let dop = if im_sum > 1e-9 * rod.volume() {
        guided_dop(t[0] * alpha[0].im, t[1] * alpha[1].im, t[2] * alpha[2].im)
    } else {
        guided_dop(t[0], t[1], t[2])
    };

    let mut rows = Vec::with_capacity(displacements.len());
    for &d in displacements {
        let pf = purcell_factors(rod, metal, wavelength, [impact, 0.0, d])?;
        let weighted = [pf[0] * t[0], pf[1] * t[1], pf[2] * t[2]];
        let w_sum = weighted[0] + weighted[1] + weighted[2];
        rows.push(HybridRow {
            displacement: d,
            pf_x: pf[0],
            pf_y: pf[1],
            pf_z: pf[2],
            pf_avg: (pf[0] + pf[1] + pf[2]) / 3.0,
            enhancement: w_sum / t_sum,
            dop,
        });
    }
    Ok(rows)
}

/// Writes spectrum rows as CSV.
pub fn write_spectrum_csv(
    rows: &[SpectrumRow],
    w: &mut impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(w, "wavelength_nm,sigma_x,sigma_y,sigma_z,sigma_avg")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6e},{:.6e},{:.6e},{:.6e}",
            r.wavelength, r.sigma_x, r.sigma_y, r.sigma_z, r.sigma_avg
        )?;
    }
    Ok(())
}

/// Writes hybrid sweep rows as CSV.
pub fn write_hybrid_csv(rows: &[HybridRow], w: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "displacement_nm,pf_x,pf_y,pf_z,pf_avg,enhancement,dop")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.displacement, r.pf_x, r.pf_y, r.pf_z, r.pf_avg, r.enhancement, r.dop
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rod() -> NanorodSpec {
        NanorodSpec::gold_75x30()
    }

    #[test]
    fn gold_table_loads_and_interpolates() {
        let gold = Permittivity::gold();
        let (lo, hi) = gold.range();
        assert_eq!(lo, 400.0);
        assert_eq!(hi, 900.0);
        // Node-exact lookup.
        let e650 = gold.at(650.0).unwrap();
        assert_relative_eq!(e650.re, -10.780822, max_relative = 1e-4);
        assert!(e650.im > 1.8 && e650.im < 2.1);
        // Interpolated values sit between neighbors.
        let e = gold.at(651.0).unwrap();
        let a = gold.at(650.0).unwrap();
        let b = gold.at(652.0).unwrap();
        assert!((e.re - 0.5 * (a.re + b.re)).abs() < 1e-9);
        assert!(matches!(
            gold.at(399.0),
            Err(PlasmonError::OutOfRange { .. })
        ));
        assert!(matches!(
            gold.at(901.0),
            Err(PlasmonError::OutOfRange { .. })
        ));
    }

    #[test]
    fn surface_damping_raises_loss_only() {
        let gold = Permittivity::gold();
        let damped = gold.with_surface_damping(rod().effective_path_length(), 1.0);
        let (b, d) = (gold.at(650.0).unwrap(), damped.at(650.0).unwrap());
        assert!(d.im > b.im);
        assert!((d.re - b.re).abs() < 0.1);
    }

    #[test]
    fn depolarization_factors_sum_to_one() {
        let l = depolarization_factors(&rod());
        assert_relative_eq!(l[0] + l[1] + l[2], 1.0, max_relative = 1e-12);
        assert_eq!(l[0], l[1]);
        assert_relative_eq!(l[2], 0.135146, max_relative = 1e-4);
        assert_relative_eq!(l[0], 0.432427, max_relative = 1e-4);
        // Near-sphere limit: 1/3 each.
        let near_sphere = NanorodSpec::new(30.01, 30.0, 1.0);
        let ls = depolarization_factors(&near_sphere);
        for v in ls {
            assert_relative_eq!(v, 1.0 / 3.0, max_relative = 1e-3);
        }
    }

    /// Independent route to the depolarization factors through the exterior
    /// Legendre functions; ties the field kernel to the Gans response.
    #[test]
    fn depolarization_matches_legendre_route() {
        let r = rod();
        let xi0 = r.xi0();
        let l = depolarization_factors(&r);
        assert_relative_eq!(l[2], (xi0 * xi0 - 1.0) * q1(xi0), max_relative = 1e-10);
        assert_relative_eq!(
            l[0],
            -0.5 * xi0 * (xi0 * xi0 - 1.0) * q1_prime(xi0),
            max_relative = 1e-10
        );
    }

    #[test]
    fn polarizability_reduces_to_sphere_limit() {
        let near_sphere = NanorodSpec::new(30.003, 30.0, 1.0);
        let eps = Complex64::new(-11.0, 1.2);
        let a = quasistatic_polarizability(&near_sphere, eps);
        let r3 = (15.0f64).powi(3);
        let sphere = 4.0 * std::f64::consts::PI * r3 * (eps - 1.0) / (eps + 2.0);
        for ax in a {
            assert_relative_eq!(ax.re, sphere.re, max_relative = 2e-3);
            assert_relative_eq!(ax.im, sphere.im, max_relative = 2e-3);
        }
    }

    #[test]
    fn radiation_reaction_preserves_optical_theorem_for_lossless_metal() {
        // Real permittivity: no absorption, so extinction must equal
        // scattering exactly; the quasi-static form alone violates this.
        let r = rod();
        let eps = Complex64::new(-10.0, 0.0);
        let lam = 650.0;
        let k = 2.0 * std::f64::consts::PI * r.medium_index / lam;
        for a in effective_polarizability(&r, eps, lam) {
            let ext = k * a.im;
            let sca = k.powi(4) * a.norm_sqr() / (6.0 * std::f64::consts::PI);
            assert_relative_eq!(ext, sca, max_relative = 1e-10);
        }
    }

    #[test]
    fn longitudinal_resonance_at_650() {
        let r = rod();
        let gold = gold_for_rod(&r);
        let lams: Vec<f64> = (0..501).map(|i| 400.0 + i as f64).collect();
        let rows = scattering_spectrum(&r, &gold, &lams).unwrap();
        let avg: Vec<f64> = rows.iter().map(|x| x.sigma_avg).collect();
        let peak = analyze_peak(&lams, &avg).unwrap();
        assert!(
            (peak.peak_wavelength - 650.0).abs() < 1.0,
            "peak at {}",
            peak.peak_wavelength
        );
        assert!(
            peak.fwhm > 80.0 && peak.fwhm < 100.0,
            "fwhm {} outside expected window",
            peak.fwhm
        );
        // The long-axis mode dominates the red resonance.
        let at_peak = rows.iter().min_by(|a, b| {
            (a.wavelength - 650.0)
                .abs()
                .total_cmp(&(b.wavelength - 650.0).abs())
        });
        let row = at_peak.unwrap();
        assert!(row.sigma_z > 10.0 * row.sigma_x);
    }

    #[test]
    fn peak_analysis_rejects_edges_and_flat_data() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let rising: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!(matches!(
            analyze_peak(&x, &rising),
            Err(PlasmonError::NoPeak(_))
        ));
        // Peak present but half maximum never crossed on the left.
        let shallow: Vec<f64> = x
            .iter()
            .map(|v| 10.0 - 0.1 * (v - 5.0) * (v - 5.0))
            .collect();
        assert!(matches!(
            analyze_peak(&x, &shallow),
            Err(PlasmonError::NoPeak(_))
        ));
    }

    #[test]
    fn kernel_matches_point_dipole_far_away() {
        let r = rod();
        let far = 60.0 * r.length;
        for pos in [
            [far, 0.0, 0.0],
            [0.0, 0.0, far],
            [far / 1.7321, far / 1.7321, far / 1.7321],
        ] {
            let w = scattered_field_kernel(&r, pos).unwrap();
            let rr = (pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]).sqrt();
            let n = [pos[0] / rr, pos[1] / rr, pos[2] / rr];
            for a in 0..3 {
                for comp in 0..3 {
                    let delta = if a == comp { 1.0 } else { 0.0 };
                    let dipole = (3.0 * n[a] * n[comp] - delta) / rr.powi(3);
                    let err = (w[a][comp] - dipole).abs();
                    let scale = 1.0 / rr.powi(3);
                    assert!(
                        err < 2e-3 * scale,
                        "kernel[{a}][{comp}] {} vs dipole {dipole} at {pos:?}",
                        w[a][comp]
                    );
                }
            }
        }
    }

    /// The kernel potentials must be harmonic outside the rod.
    #[test]
    fn kernel_potentials_satisfy_laplace() {
        let r = rod();
        let c = r.focal();
        let c3 = c * c * c;
        let phi_z = |p: [f64; 3]| {
            let r1 = (p[0] * p[0] + p[1] * p[1] + (p[2] + c) * (p[2] + c)).sqrt();
            let r2 = (p[0] * p[0] + p[1] * p[1] + (p[2] - c) * (p[2] - c)).sqrt();
            let xi = (r1 + r2) / (2.0 * c);
            3.0 / c3 * p[2] * q1(xi) / xi
        };
        let phi_x = |p: [f64; 3]| {
            let r1 = (p[0] * p[0] + p[1] * p[1] + (p[2] + c) * (p[2] + c)).sqrt();
            let r2 = (p[0] * p[0] + p[1] * p[1] + (p[2] - c) * (p[2] - c)).sqrt();
            let xi = (r1 + r2) / (2.0 * c);
            -(3.0 / (2.0 * c3)) * p[0] * q1_prime(xi)
        };
        let h = 0.05;
        for phi in [&phi_z as &dyn Fn([f64; 3]) -> f64, &phi_x] {
            for pos in [[25.0, 5.0, 10.0], [0.0, 0.0, 45.0], [30.0, -12.0, -28.0]] {
                let mut lap = 0.0;
                let p0 = phi(pos);
                for dim in 0..3 {
                    let mut pp = pos;
                    let mut pm = pos;
                    pp[dim] += h;
                    pm[dim] -= h;
                    lap += (phi(pp) - 2.0 * p0 + phi(pm)) / (h * h);
                }
                // Scale by a representative second-derivative magnitude.
                let scale = p0.abs().max(1e-12) / (h * h) * 1e-7;
                assert!(lap.abs() < scale.max(1e-10), "Laplacian {lap} at {pos:?}");
            }
        }
    }

    /// Exterior kernel potential must continuously meet the uniform
    /// interior solution on the spheroid surface.
    #[test]
    fn kernel_potential_continuous_on_surface() {
        let r = rod();
        let c = r.focal();
        let xi0 = r.xi0();
        let l = depolarization_factors(&r);
        let v = r.volume();
        for eta in [-0.9, -0.5, -0.1, 0.3, 0.7, 0.95] {
            let z = c * xi0 * eta;
            let rho = c * ((xi0 * xi0 - 1.0) * (1.0 - eta * eta as f64)).sqrt();
            let x = rho;
            // Longitudinal: exterior (3/c^3) z Q1/xi vs interior 4 pi L_z z / V.
            let ext_z = 3.0 / (c * c * c) * z * q1(xi0) / xi0;
            let int_z = 4.0 * std::f64::consts::PI * l[2] * z / v;
            assert_relative_eq!(ext_z, int_z, max_relative = 1e-9, epsilon = 1e-12);
            // Transverse: exterior -(3/(2c^3)) x Q1' vs interior 4 pi L_x x / V.
            let ext_x = -(3.0 / (2.0 * c * c * c)) * x * q1_prime(xi0);
            let int_x = 4.0 * std::f64::consts::PI * l[0] * x / v;
            assert_relative_eq!(ext_x, int_x, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn kernel_rejects_interior_points() {
        let r = rod();
        assert!(matches!(
            scattered_field_kernel(&r, [0.0, 0.0, 0.0]),
            Err(PlasmonError::InsideScatterer { .. })
        ));
        assert!(matches!(
            scattered_field_kernel(&r, [0.0, 0.0, 37.0]),
            Err(PlasmonError::InsideScatterer { .. })
        ));
        assert!(scattered_field_kernel(&r, [0.0, 0.0, 38.0]).is_ok());
        assert!(scattered_field_kernel(&r, [15.5, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn purcell_factor_is_unity_when_index_matched() {
        let r = rod();
        let eps_m = Complex64::new(r.medium_index * r.medium_index, 0.0);
        let matched = Permittivity::constant(eps_m);
        let pf = purcell_factors(&r, &matched, 650.0, [20.0, 0.0, 0.0]).unwrap();
        for v in pf {
            assert_relative_eq!(v, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn purcell_factor_decays_to_unity_far_away() {
        let r = rod();
        let gold = gold_for_rod(&r);
        let near = purcell_factors(&r, &gold, 650.0, [20.0, 0.0, 0.0]).unwrap();
        let far = purcell_factors(&r, &gold, 650.0, [20.0, 0.0, 4000.0]).unwrap();
        assert!(near[2] > 10.0, "on-resonance near-field PF_z = {}", near[2]);
        for v in far {
            assert!((v - 1.0).abs() < 1e-3, "far PF {v}");
        }
    }

    #[test]
    fn near_field_enhancement_peaks_at_the_tip() {
        let r = rod();
        let gold = gold_for_rod(&r);
        let tip = near_field_enhancement(&r, &gold, 650.0, [0.0, 0.0, 42.5], 2).unwrap();
        let side = near_field_enhancement(&r, &gold, 650.0, [20.0, 0.0, 0.0], 2).unwrap();
        let far = near_field_enhancement(&r, &gold, 650.0, [0.0, 0.0, 3000.0], 2).unwrap();
        assert!(tip > 10.0, "tip enhancement {tip}");
        assert!(tip > side);
        assert_relative_eq!(far, 1.0, max_relative = 1e-2);
        assert!(matches!(
            near_field_enhancement(&r, &gold, 650.0, [0.0, 0.0, 0.0], 2),
            Err(PlasmonError::InsideScatterer { .. })
        ));
    }

    #[test]
    fn hybrid_response_reaches_bare_fiber_limits() {
        let r = rod();
        let gold = gold_for_rod(&r);
        let fr = GuidedFractions {
            t_x: 0.33,
            t_y: 0.12,
            t_z: 0.13,
            averaged_efficiency: (0.33 + 0.12 + 0.13) / 3.0,
        };
        let rows = hybrid_response(&r, &gold, 650.0, &fr, 5.0, &[0.0, 30.0, 5000.0]).unwrap();
        let far = rows.last().unwrap();
        assert_relative_eq!(far.enhancement, 1.0, max_relative = 1e-2);
        assert!(rows[0].enhancement > far.enhancement);
        // The rod weighting boosts the contrast above the bare fiber and
        // holds it steady along the sweep.
        let bare = guided_dop(0.33, 0.12, 0.13);
        for row in &rows {
            assert!(row.dop > bare && row.dop < 1.0);
            assert_relative_eq!(row.dop, rows[0].dop, max_relative = 1e-12);
        }
        // Index-matched rod: exactly the bare-fiber limit at every distance.
        let matched = Permittivity::constant(Complex64::new(r.medium_index.powi(2), 0.0));
        let trivial = hybrid_response(&r, &matched, 650.0, &fr, 5.0, &[0.0, 15.0]).unwrap();
        for row in trivial {
            assert_relative_eq!(row.enhancement, 1.0, max_relative = 1e-12);
            assert_relative_eq!(row.pf_avg, 1.0, max_relative = 1e-12);
            assert_relative_eq!(row.dop, bare, max_relative = 1e-12);
        }
    }

    #[test]
    fn purcell_path_has_central_maximum_and_interior_minimum() {
        let r = rod();
        let gold = gold_for_rod(&r);
        let ds: Vec<f64> = (0..51).map(|i| i as f64).collect();
        let mut pf_avg = Vec::new();
        for &d in &ds {
            let pf = purcell_factors(&r, &gold, 650.0, [20.0, 0.0, d]).unwrap();
            pf_avg.push((pf[0] + pf[1] + pf[2]) / 3.0);
        }
        let argmax = (0..pf_avg.len())
            .max_by(|&a, &b| pf_avg[a].total_cmp(&pf_avg[b]))
            .unwrap();
        let argmin = (0..pf_avg.len())
            .min_by(|&a, &b| pf_avg[a].total_cmp(&pf_avg[b]))
            .unwrap();
        assert_eq!(argmax, 0, "strongest enhancement at the rod waist");
        assert!(
            ds[argmin] >= 20.0 && ds[argmin] <= 45.0,
            "interior minimum at {} nm",
            ds[argmin]
        );
        // Past the minimum the axial lobe lifts the rate again slightly.
        assert!(pf_avg[50] > pf_avg[argmin]);
    }

    #[test]
    fn longitudinal_peak_red_shifts_with_aspect_ratio() {
        let gold = Permittivity::gold();
        let wl: Vec<f64> = (0..251).map(|i| 400.0 + 2.0 * i as f64).collect();
        let mut peaks = Vec::new();
        for length in [52.5, 75.0, 97.5] {
            let r = NanorodSpec {
                length,
                diameter: 30.0,
                medium_index: NanorodSpec::gold_75x30().medium_index,
            };
            let rows = scattering_spectrum(&r, &gold, &wl).unwrap();
            let sig: Vec<f64> = rows.iter().map(|s| s.sigma_z).collect();
            peaks.push(analyze_peak(&wl, &sig).unwrap().peak_wavelength);
        }
        assert!(
            peaks[0] < peaks[1] && peaks[1] < peaks[2],
            "peaks {peaks:?}"
        );
    }

    #[test]
    fn response_is_even_in_axial_displacement() {
        let r = rod();
        let gold = gold_for_rod(&r);
        for z in [7.0, 19.0, 33.0] {
            for axis in 0..3 {
                let plus = near_field_enhancement(&r, &gold, 650.0, [20.0, 0.0, z], axis).unwrap();
                let minus =
                    near_field_enhancement(&r, &gold, 650.0, [20.0, 0.0, -z], axis).unwrap();
                assert_relative_eq!(plus, minus, max_relative = 1e-9);
            }
        }
        let fr = GuidedFractions {
            t_x: 0.33,
            t_y: 0.12,
            t_z: 0.13,
            averaged_efficiency: (0.33 + 0.12 + 0.13) / 3.0,
        };
        let rows =
            hybrid_response(&r, &gold, 650.0, &fr, 5.0, &[-25.0, -10.0, 10.0, 25.0]).unwrap();
        assert_relative_eq!(rows[0].pf_avg, rows[3].pf_avg, max_relative = 1e-9);
        assert_relative_eq!(rows[1].pf_avg, rows[2].pf_avg, max_relative = 1e-9);
        assert_relative_eq!(
            rows[0].enhancement,
            rows[3].enhancement,
            max_relative = 1e-9
        );
    }

    #[test]
    fn sphere_is_accepted_and_isotropic() {
        let s = NanorodSpec::new(30.0, 30.0, NanorodSpec::gold_75x30().medium_index);
        s.validate().unwrap();
        for v in depolarization_factors(&s) {
            assert_relative_eq!(v, 1.0 / 3.0, max_relative = 1e-12);
        }
        assert_relative_eq!(
            s.surface_area(),
            4.0 * std::f64::consts::PI * 15.0 * 15.0,
            max_relative = 1e-12
        );

        let gold = gold_for_rod(&s);
        let wl: Vec<f64> = (0..251).map(|i| 400.0 + 2.0 * i as f64).collect();
        let rows = scattering_spectrum(&s, &gold, &wl).unwrap();
        for r in &rows {
            assert_relative_eq!(r.sigma_x, r.sigma_z, max_relative = 1e-12);
        }
        let sig: Vec<f64> = rows.iter().map(|r| r.sigma_avg).collect();
        let peak = analyze_peak(&wl, &sig).unwrap().peak_wavelength;
        // The peak should sit close to the small-sphere resonance, where the
        // metal permittivity crosses -2 eps_medium.
        let eps_m = s.medium_index * s.medium_index;
        let cross = wl
            .iter()
            .min_by(|&&a, &&b| {
                let fa = (gold.at(a).unwrap().re + 2.0 * eps_m).abs();
                let fb = (gold.at(b).unwrap().re + 2.0 * eps_m).abs();
                fa.total_cmp(&fb)
            })
            .copied()
            .unwrap();
        assert!(
            (peak - cross).abs() < 30.0,
            "sphere peak {peak} vs resonance crossing {cross}"
        );

        // Exterior kernel reduces to a central point dipole and joins the
        // slightly eccentric spheroid continuously.
        let w = scattered_field_kernel(&s, [0.0, 0.0, 60.0]).unwrap();
        let r3 = 60.0f64.powi(3);
        assert_relative_eq!(w[2][2], 2.0 / r3, max_relative = 1e-12);
        assert_relative_eq!(w[0][0], -1.0 / r3, max_relative = 1e-12);
        let near = NanorodSpec::new(30.0003, 30.0, s.medium_index);
        let wn = scattered_field_kernel(&near, [0.0, 0.0, 60.0]).unwrap();
        assert_relative_eq!(wn[2][2], w[2][2], max_relative = 1e-5);
        assert!(matches!(
            scattered_field_kernel(&s, [5.0, 5.0, 5.0]),
            Err(PlasmonError::InsideScatterer { .. })
        ));
    }
}
