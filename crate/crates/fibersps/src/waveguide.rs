//! Guided-mode solver for subwavelength step-index fibers.
//!
//! Solves the exact hybrid-mode eigenvalue problem for the fundamental HE11
//! mode of a two-layer circular waveguide, builds the full vector field
//! profile (E and H, core and cladding), and evaluates how efficiently a
//! point dipole just outside the surface emits into the guided mode.
//!
//! Axis convention used throughout the crate: `z` is the fiber axis, `x` is
//! the radial axis through the emitter, `y` completes the right-handed
//! frame. All lengths at the API are nanometers; fields are computed in SI
//! units internally with modal power normalized to 1 W.

use num_complex::Complex64;
use thiserror::Error;

use crate::bessel::{j1_over_x, jn, jn_prime, kn, kn_prime};

/// Vacuum light speed, m/s.
const C0: f64 = 2.99792458e8;
/// Vacuum permittivity, F/m.
const EPS0: f64 = 8.8541878128e-12;
/// Vacuum permeability, H/m.
const MU0: f64 = 1.25663706212e-6;

/// First zero of J1; the HE11 search stays below it so the dispersion
/// function has no poles inside the bracket.
const J1_FIRST_ZERO: f64 = 3.831705970207512;

/// Single-mode cutoff: fibers with V above this carry more than one mode.
pub const SINGLE_MODE_V_LIMIT: f64 = 2.405;

#[derive(Debug, Error)]
pub enum WaveguideError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no guided mode found (V = {v_number:.4}); the mode is at or beyond cutoff")]
    NoGuidedMode { v_number: f64 },
    #[error("root search failed to converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
}

/// Step-index fiber geometry and materials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberSpec {
    /// Core diameter in nm.
    pub diameter: f64,
    /// Core refractive index.
    pub core_index: f64,
    /// Cladding (surrounding medium) refractive index.
    pub clad_index: f64,
}

impl FiberSpec {
    pub fn new(diameter: f64, core_index: f64, clad_index: f64) -> Self {
        FiberSpec {
            diameter,
            core_index,
            clad_index,
        }
    }

    /// Silica nanofiber in air: n = 1.457 around the red, cladding n = 1.
    pub fn silica_in_air(diameter: f64) -> Self {
        FiberSpec::new(diameter, 1.457, 1.0)
    }

    /// Core radius in nm.
    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn validate(&self) -> Result<(), WaveguideError> {
        if !(self.diameter.is_finite() && self.diameter > 0.0) {
            return Err(WaveguideError::DegenerateInput(format!(
                "diameter must be positive, got {}",
                self.diameter
            )));
        }
        if !(self.core_index.is_finite() && self.clad_index.is_finite()) || self.clad_index <= 0.0 {
            return Err(WaveguideError::DegenerateInput(
                "indices must be finite and positive".into(),
            ));
        }
        if self.core_index <= self.clad_index {
            return Err(WaveguideError::DegenerateInput(format!(
                "core index {} must exceed cladding index {}",
                self.core_index, self.clad_index
            )));
        }
        Ok(())
    }
}

/// Normalized frequency V = pi d / lambda * sqrt(n1^2 - n2^2).
pub fn v_number(fiber: &FiberSpec, wavelength: f64) -> f64 {
    std::f64::consts::PI * fiber.diameter / wavelength
        * (fiber.core_index.powi(2) - fiber.clad_index.powi(2)).sqrt()
}

/// Dimensionless mode parameters shared by the dispersion relation and the
/// field construction.
#[derive(Debug, Clone, Copy)]
struct ModeParams {
    /// Core transverse parameter u = a*sqrt(n1^2 k0^2 - beta^2).
    u: f64,
    /// Cladding decay parameter w = a*sqrt(beta^2 - n2^2 k0^2).
    w: f64,
    /// beta / k0.
    neff: f64,
}

/// Hybrid-mode dispersion function for azimuthal order 1. Roots are guided
/// modes; HE11 is the root with the smallest u (largest beta).
fn dispersion(fiber: &FiberSpec, v: f64, u: f64) -> f64 {
    let w = (v * v - u * u).sqrt();
    let n1 = fiber.core_index;
    let n2 = fiber.clad_index;
    let jp = jn_prime(1, u) / (u * jn(1, u));
    let kp = kn_prime(1, w) / (w * kn(1, w));
    let inv = 1.0 / (u * u) + 1.0 / (w * w);
    // (beta/k0)^2 (1/u^2 + 1/w^2) = n1^2/u^2 + n2^2/w^2 exactly, which keeps
    // the expression finite-difference friendly near the endpoints.
    let rhs = (n1 * n1 / (u * u) + n2 * n2 / (w * w)) * inv;
    (jp + kp) * (n1 * n1 * jp + n2 * n2 * kp) - rhs
}

/// Options for the mode solver; defaults match the shipped analysis grids.
#[derive(Debug, Clone, Copy)]
pub struct ModeSolverOptions {
    /// Radial samples of the stored field profile.
    pub grid_radial: usize,
    /// Azimuthal samples of the stored field profile.
    pub grid_azimuthal: usize,
    /// Scan resolution of the root bracketing stage.
    pub scan_points: usize,
}

impl Default for ModeSolverOptions {
    fn default() -> Self {
        ModeSolverOptions {
            grid_radial: 256,
            grid_azimuthal: 128,
            scan_points: 4000,
        }
    }
}

/// Radial profile functions of one circular-polarization component
/// (azimuthal index l = +1 or -1), in SI units, before normalization.
#[derive(Debug, Clone, Copy)]
struct RadialBasis {
    a_m: f64,
    u: f64,
    w: f64,
    beta: f64,
    omega: f64,
    n1: f64,
    n2: f64,
    /// Hz/Ez amplitude ratio for l = +1; flips sign with l.
    b_over_a: Complex64,
    /// Cladding continuity factor J1(u)/K1(w).
    clad_scale: f64,
}

/// Cylindrical field components (e_r, e_phi, e_z, h_r, h_phi, h_z) at one
/// radius, for the e^{i l phi} mode with the phase factor split off.
#[derive(Debug, Clone, Copy)]
struct RadialFields {
    er: Complex64,
    ephi: Complex64,
    ez: Complex64,
    hr: Complex64,
    hphi: Complex64,
    hz: Complex64,
}

impl RadialBasis {
    fn new(fiber: &FiberSpec, wavelength: f64, mp: ModeParams) -> Self {
        let a_m = fiber.radius() * 1e-9;
        let k0 = 2.0 * std::f64::consts::PI / (wavelength * 1e-9);
        let beta = mp.neff * k0;
        let omega = C0 * k0;
        let (u, w) = (mp.u, mp.w);
        let jp = jn_prime(1, u) / (u * jn(1, u));
        let kp = kn_prime(1, w) / (w * kn(1, w));
        let s = (1.0 / (u * u) + 1.0 / (w * w)) / (jp + kp);
        let b_over_a = Complex64::new(0.0, beta * s / (omega * MU0));
        RadialBasis {
            a_m,
            u,
            w,
            beta,
            omega,
            n1: fiber.core_index,
            n2: fiber.clad_index,
            b_over_a,
            clad_scale: jn(1, u) / kn(1, w),
        }
    }

    /// Fields at radius r (meters) for azimuthal index l (+1 or -1).
    /// Multiply by e^{i l phi} for the full mode.
    fn at(&self, r: f64, l: i32) -> RadialFields {
        let i = Complex64::new(0.0, 1.0);
        let lf = l as f64;
        let b = self.b_over_a * lf;
        let (beta, omega) = (self.beta, self.omega);
        if r < self.a_m {
            let h = self.u / self.a_m;
            let arg = h * r;
            let f = jn(1, arg);
            let fp = jn_prime(1, arg);
            // J1(hr)/r = h * (J1(arg)/arg), finite at r = 0.
            let f_over_r = h * j1_over_x(arg);
            let inv_p2 = 1.0 / (h * h);
            let n2el = self.n1 * self.n1;
            let er = -i * inv_p2 * (beta * h * fp + i * lf * omega * MU0 * b * f_over_r);
            let ephi = -i * inv_p2 * (i * lf * beta * f_over_r - omega * MU0 * b * h * fp);
            let hr = -i * inv_p2 * (beta * b * h * fp - i * lf * omega * EPS0 * n2el * f_over_r);
            let hphi = -i * inv_p2 * (i * lf * beta * b * f_over_r + omega * EPS0 * n2el * h * fp);
            RadialFields {
                er,
                ephi,
                ez: Complex64::new(f, 0.0),
                hr,
                hphi,
                hz: b * f,
            }
        } else {
            let q = self.w / self.a_m;
            let arg = q * r;
            let scale = self.clad_scale;
            let f = scale * kn(1, arg);
            let fp = scale * kn_prime(1, arg);
            let f_over_r = f / r;
            let inv_p2 = -1.0 / (q * q);
            let n2el = self.n2 * self.n2;
            let er = -i * inv_p2 * (beta * q * fp + i * lf * omega * MU0 * b * f_over_r);
            let ephi = -i * inv_p2 * (i * lf * beta * f_over_r - omega * MU0 * b * q * fp);
            let hr = -i * inv_p2 * (beta * b * q * fp - i * lf * omega * EPS0 * n2el * f_over_r);
            let hphi = -i * inv_p2 * (i * lf * beta * b * f_over_r + omega * EPS0 * n2el * q * fp);
            RadialFields {
                er,
                ephi,
                ez: Complex64::new(f, 0.0),
                hr,
                hphi,
                hz: b * f,
            }
        }
    }
}

/// One sample of the stored mode profile (quasi-linearly x-polarized
/// representation), cylindrical components in SI units.
#[derive(Debug, Clone, Copy)]
pub struct FieldSample {
    pub e_r: Complex64,
    pub e_phi: Complex64,
    pub e_z: Complex64,
    pub h_r: Complex64,
    pub h_phi: Complex64,
    pub h_z: Complex64,
}

impl FieldSample {
    /// Axial Poynting density (1/2) Re(E x H*)_z in W/m^2.
    pub fn poynting_z(&self) -> f64 {
        0.5 * (self.e_r * self.h_phi.conj() - self.e_phi * self.h_r.conj()).re
    }

    /// |E|^2 over all components.
    pub fn e_intensity(&self) -> f64 {
        self.e_r.norm_sqr() + self.e_phi.norm_sqr() + self.e_z.norm_sqr()
    }
}

/// Sampled mode profile on a polar grid. The radial grid is piecewise
/// uniform with a node exactly on the core boundary; the azimuthal grid is
/// uniform over [0, 2 pi).
#[derive(Debug, Clone)]
pub struct FieldProfile {
    /// Radii in nm.
    pub r: Vec<f64>,
    /// Azimuthal angles in radians.
    pub phi: Vec<f64>,
    /// Samples indexed `[phi][r]`.
    pub samples: Vec<Vec<FieldSample>>,
}

/// Solved HE11 mode.
#[derive(Debug, Clone)]
pub struct GuidedMode {
    pub fiber: FiberSpec,
    /// Vacuum wavelength in nm.
    pub wavelength: f64,
    /// Propagation constant in rad/m.
    pub beta: f64,
    /// beta / k0.
    pub effective_index: f64,
    pub v_number: f64,
    /// True when V exceeds the single-mode limit; reported, not fatal.
    pub multimode: bool,
    /// Core transverse parameter u.
    pub u: f64,
    /// Cladding decay parameter w.
    pub w: f64,
    /// Amplitude applied to the raw fields so modal power is 1 W.
    pub norm: f64,
    /// Sampled x-polarized profile, normalized.
    pub profile: FieldProfile,
    basis: RadialBasis,
}

/// Builds the radial quadrature grid: one quarter of the nodes uniformly in
/// the core, the rest uniform out to where the evanescent tail is below
/// 1e-7 of the peak. The boundary radius appears twice, once a hair inside
/// and once exactly on it, because the axial Poynting density jumps across
/// the index step; each side of the kink then integrates its own one-sided
/// values and the trapezoid rule stays second order.
fn radial_grid(a_nm: f64, w: f64, n: usize) -> Vec<f64> {
    let n_core = (n / 4).max(4);
    let n_clad = n - n_core;
    let r_max = a_nm * (1.0 + 8.0 / w.max(0.05));
    let mut r = Vec::with_capacity(n + 1);
    for i in 0..n_core {
        r.push(a_nm * i as f64 / n_core as f64);
    }
    r.push(a_nm * (1.0 - 1e-12));
    for i in 0..n_clad {
        r.push(a_nm + (r_max - a_nm) * i as f64 / (n_clad - 1) as f64);
    }
    r
}

fn solve_root(fiber: &FiberSpec, v: f64, scan_points: usize) -> Result<f64, WaveguideError> {
    let u_hi = v.min(J1_FIRST_ZERO * 0.9999) * (1.0 - 1e-9);
    let u_lo = v * 1e-6;
    let f_at = |u: f64| dispersion(fiber, v, u);
    let mut prev_u = u_lo;
    let mut prev_f = f_at(u_lo);
    let mut bracket = None;
    for k in 1..=scan_points {
        let u = u_lo + (u_hi - u_lo) * k as f64 / scan_points as f64;
        let f = f_at(u);
        if prev_f.signum() != f.signum() && prev_f.is_finite() && f.is_finite() {
            bracket = Some((prev_u, u));
            break;
        }
        prev_u = u;
        prev_f = f;
    }
    let (mut lo, mut hi) = bracket.ok_or(WaveguideError::NoGuidedMode { v_number: v })?;
    let mut f_lo = f_at(lo);
    const MAX_ITER: usize = 200;
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= 1e-15 * mid {
            return Ok(mid);
        }
        let f_mid = f_at(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_lo.signum() == f_mid.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Err(WaveguideError::NonConvergence {
        iterations: MAX_ITER,
    })
}

/// Solves the HE11 mode with default grid options.
pub fn solve_guided_mode(fiber: &FiberSpec, wavelength: f64) -> Result<GuidedMode, WaveguideError> {
    solve_guided_mode_with(fiber, wavelength, &ModeSolverOptions::default())
}

/// Solves the HE11 mode: brackets the dispersion root by scanning u upward
/// (HE11 is the smallest-u root), bisects to relative tolerance below 1e-12,
/// then builds and normalizes the field profile.
pub fn solve_guided_mode_with(
    fiber: &FiberSpec,
    wavelength: f64,
    opts: &ModeSolverOptions,
) -> Result<GuidedMode, WaveguideError> {
    fiber.validate()?;
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(WaveguideError::DegenerateInput(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    let v = v_number(fiber, wavelength);
    let u = solve_root(fiber, v, opts.scan_points)?;
    let w = (v * v - u * u).sqrt();
    let k0_nm = 2.0 * std::f64::consts::PI / wavelength;
    let a_nm = fiber.radius();
    let neff = {
        let n1k = fiber.core_index * k0_nm;
        ((n1k * n1k - (u / a_nm).powi(2)).sqrt()) / k0_nm
    };
    let basis = RadialBasis::new(fiber, wavelength, ModeParams { u, w, neff });

    let mut mode = GuidedMode {
        fiber: *fiber,
        wavelength,
        beta: neff * 2.0 * std::f64::consts::PI / (wavelength * 1e-9),
        effective_index: neff,
        v_number: v,
        multimode: v > SINGLE_MODE_V_LIMIT,
        u,
        w,
        norm: 1.0,
        profile: FieldProfile {
            r: Vec::new(),
            phi: Vec::new(),
            samples: Vec::new(),
        },
        basis,
    };
    let raw_power = mode.power_on_grid(opts.grid_radial, opts.grid_azimuthal);
    if !(raw_power.is_finite() && raw_power > 0.0) {
        return Err(WaveguideError::DegenerateInput(
            "mode power integral is not positive; geometry is degenerate".into(),
        ));
    }
    mode.norm = 1.0 / raw_power.sqrt();
    mode.profile = mode.sample_profile(opts.grid_radial, opts.grid_azimuthal);
    Ok(mode)
}

impl GuidedMode {
    /// Raw (unnormalized basis) x-polarized sample at (r_m, phi).
    fn raw_sample(&self, r_m: f64, phi: f64) -> FieldSample {
        let plus = self.basis.at(r_m, 1);
        let minus = self.basis.at(r_m, -1);
        let ph_p = Complex64::from_polar(1.0, phi);
        let ph_m = ph_p.conj();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        FieldSample {
            e_r: (plus.er * ph_p + minus.er * ph_m) * inv_sqrt2,
            e_phi: (plus.ephi * ph_p + minus.ephi * ph_m) * inv_sqrt2,
            e_z: (plus.ez * ph_p + minus.ez * ph_m) * inv_sqrt2,
            h_r: (plus.hr * ph_p + minus.hr * ph_m) * inv_sqrt2,
            h_phi: (plus.hphi * ph_p + minus.hphi * ph_m) * inv_sqrt2,
            h_z: (plus.hz * ph_p + minus.hz * ph_m) * inv_sqrt2,
        }
    }

    fn scaled(&self, s: FieldSample) -> FieldSample {
        let n = self.norm;
        FieldSample {
            e_r: s.e_r * n,
            e_phi: s.e_phi * n,
            e_z: s.e_z * n,
            h_r: s.h_r * n,
            h_phi: s.h_phi * n,
            h_z: s.h_z * n,
        }
    }

    /// Normalized x-polarized field sample at radius r (nm), angle phi.
    pub fn field_at(&self, r_nm: f64, phi: f64) -> FieldSample {
        self.scaled(self.raw_sample(r_nm * 1e-9, phi))
    }

    fn sample_profile(&self, nr: usize, nphi: usize) -> FieldProfile {
        let r_nm = radial_grid(self.fiber.radius(), self.w, nr);
        let phi: Vec<f64> = (0..nphi)
            .map(|j| 2.0 * std::f64::consts::PI * j as f64 / nphi as f64)
            .collect();
        let samples = phi
            .iter()
            .map(|&p| {
                r_nm.iter()
                    .map(|&r| self.scaled(self.raw_sample(r * 1e-9, p)))
                    .collect()
            })
            .collect();
        FieldProfile {
            r: r_nm,
            phi,
            samples,
        }
    }

    /// Modal power (W) integrated on an (nr x nphi) polar grid from the
    /// analytic fields with the current normalization. Trapezoid in r,
    /// rectangle rule in phi.
    pub fn power_on_grid(&self, nr: usize, nphi: usize) -> f64 {
        let r_nm = radial_grid(self.fiber.radius(), self.w, nr);
        let dphi = 2.0 * std::f64::consts::PI / nphi as f64;
        let mut ring = vec![0.0f64; r_nm.len()];
        for j in 0..nphi {
            let phi = dphi * j as f64;
            for (iq, &r) in r_nm.iter().enumerate() {
                let s = self.scaled(self.raw_sample(r * 1e-9, phi));
                ring[iq] += s.poynting_z() * dphi;
            }
        }
        let mut power = 0.0;
        for i in 1..r_nm.len() {
            let r0 = r_nm[i - 1] * 1e-9;
            let r1 = r_nm[i] * 1e-9;
            power += 0.5 * (ring[i - 1] * r0 + ring[i] * r1) * (r1 - r0);
        }
        power
    }

    /// Re-integrates the stored profile samples; 1.0 up to grid round-off
    /// for a normalized mode.
    pub fn recompute_power(&self) -> f64 {
        let p = &self.profile;
        let nphi = p.phi.len();
        let dphi = 2.0 * std::f64::consts::PI / nphi as f64;
        let mut ring = vec![0.0f64; p.r.len()];
        for row in &p.samples {
            for (iq, s) in row.iter().enumerate() {
                ring[iq] += s.poynting_z() * dphi;
            }
        }
        let mut power = 0.0;
        for i in 1..p.r.len() {
            let r0 = p.r[i - 1] * 1e-9;
            let r1 = p.r[i] * 1e-9;
            power += 0.5 * (ring[i - 1] * r0 + ring[i] * r1) * (r1 - r0);
        }
        power
    }
}

/// Per-axis channeling: the proportion of a dipole's emission that enters
/// the guided mode (both propagation directions), with the non-guided rate
/// approximated by the free-space rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidedFractions {
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
    /// Mean channeling efficiency over the three dipole axes.
    pub averaged_efficiency: f64,
}

impl GuidedFractions {
    pub fn as_array(&self) -> [f64; 3] {
        [self.t_x, self.t_y, self.t_z]
    }
}

/// Guided emission rate relative to the free-space rate, per dipole axis,
/// for a dipole at (r0, phi0). Sums both quasi-linear mode orientations and
/// both propagation directions.
fn guided_rate_ratios(mode: &GuidedMode, r0_nm: f64, phi0: f64) -> [f64; 3] {
    let r_m = r0_nm * 1e-9;
    // x-polarized orientation at the emitter angle, and the same mode
    // rotated a quarter turn (the y-polarized orientation).
    let sx = mode.scaled(mode.raw_sample(r_m, phi0));
    let sy = {
        let plus = mode.basis.at(r_m, 1);
        let minus = mode.basis.at(r_m, -1);
        let ph_p = Complex64::from_polar(1.0, phi0);
        let ph_m = ph_p.conj();
        let i = Complex64::new(0.0, 1.0);
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        mode.scaled(FieldSample {
            e_r: (plus.er * ph_p - minus.er * ph_m) * (-i * inv_sqrt2),
            e_phi: (plus.ephi * ph_p - minus.ephi * ph_m) * (-i * inv_sqrt2),
            e_z: (plus.ez * ph_p - minus.ez * ph_m) * (-i * inv_sqrt2),
            h_r: (plus.hr * ph_p - minus.hr * ph_m) * (-i * inv_sqrt2),
            h_phi: (plus.hphi * ph_p - minus.hphi * ph_m) * (-i * inv_sqrt2),
            h_z: (plus.hz * ph_p - minus.hz * ph_m) * (-i * inv_sqrt2),
        })
    };
    let omega = 2.0 * std::f64::consts::PI * C0 / (mode.wavelength * 1e-9);
    // Power into one direction of a unit-power mode from dipole p:
    // P = omega^2 |p . e*|^2 / 16; free space P0 = omega^4 p^2/(12 pi eps0 c^3).
    // Both directions double the transverse and axial couplings alike.
    let prefactor = 3.0 * std::f64::consts::PI * EPS0 * C0.powi(3) / (2.0 * omega * omega);
    // Cylindrical components at phi0 map onto the emitter frame: r -> x,
    // phi -> y, z -> z.
    let coupling = |comp: fn(&FieldSample) -> Complex64| {
        prefactor * (comp(&sx).norm_sqr() + comp(&sy).norm_sqr())
    };
    [
        coupling(|s| s.e_r),
        coupling(|s| s.e_phi),
        coupling(|s| s.e_z),
    ]
}

/// Channeling fractions for a dipole at `radial_offset` nm from the fiber
/// axis (on or outside the surface).
pub fn channeling_fractions(
    mode: &GuidedMode,
    radial_offset: f64,
) -> Result<GuidedFractions, WaveguideError> {
    channeling_fractions_at(mode, radial_offset, 0.0)
}

/// As [`channeling_fractions`], with an explicit azimuthal position. The
/// result is rotation invariant; the emitter frame rotates with the point.
pub fn channeling_fractions_at(
    mode: &GuidedMode,
    radial_offset: f64,
    phi0: f64,
) -> Result<GuidedFractions, WaveguideError> {
    if !(radial_offset.is_finite()) || radial_offset < mode.fiber.radius() * (1.0 - 1e-12) {
        return Err(WaveguideError::DegenerateInput(format!(
            "radial offset {radial_offset} nm must be at or outside the fiber radius {} nm",
            mode.fiber.radius()
        )));
    }
    let g = guided_rate_ratios(mode, radial_offset, phi0);
    // Proportion of total emission entering the guide, with the non-guided
    // rate taken as the free-space rate.
    let t = [
        g[0] / (1.0 + g[0]),
        g[1] / (1.0 + g[1]),
        g[2] / (1.0 + g[2]),
    ];
    Ok(GuidedFractions {
        t_x: t[0],
        t_y: t[1],
        t_z: t[2],
        averaged_efficiency: (t[0] + t[1] + t[2]) / 3.0,
    })
}

/// Degree of polarization implied by per-axis channeling:
/// (T_y + T_z - T_x) / (T_y + T_z + T_x). Scale invariant in T.
pub fn guided_dop(t_x: f64, t_y: f64, t_z: f64) -> f64 {
    let denom = t_y + t_z + t_x;
    if denom == 0.0 {
        return 0.0;
    }
    (t_y + t_z - t_x) / denom
}

/// Which geometric parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    DiameterNm,
    WavelengthNm,
}

/// One row of a mode sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub parameter: f64,
    pub beta: f64,
    pub v_number: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
    pub efficiency: f64,
    pub dop: f64,
}

/// Sweeps diameter or wavelength for a surface dipole and tabulates mode
/// and channeling quantities.
pub fn mode_sweep(
    template: &FiberSpec,
    wavelength: f64,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<Vec<SweepRow>, WaveguideError> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let (fiber, lambda) = match parameter {
            SweepParameter::DiameterNm => (
                FiberSpec::new(value, template.core_index, template.clad_index),
                wavelength,
            ),
            SweepParameter::WavelengthNm => (*template, value),
        };
        let mode = solve_guided_mode(&fiber, lambda)?;
        let fr = channeling_fractions(&mode, fiber.radius())?;
        rows.push(SweepRow {
            parameter: value,
            beta: mode.beta,
            v_number: mode.v_number,
            t_x: fr.t_x,
            t_y: fr.t_y,
            t_z: fr.t_z,
            efficiency: fr.averaged_efficiency,
            dop: guided_dop(fr.t_x, fr.t_y, fr.t_z),
        });
    }
    Ok(rows)
}

/// Writes sweep rows as CSV with the standard column set.
pub fn write_sweep_csv(rows: &[SweepRow], w: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "parameter,beta,V,T_x,T_y,T_z,efficiency,dop")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.8e},{:.8},{:.8e},{:.8e},{:.8e},{:.8e},{:.8}",
            r.parameter, r.beta, r.v_number, r.t_x, r.t_y, r.t_z, r.efficiency, r.dop
        )?;
    }
    Ok(())
}

/// Writes a field profile as CSV: radius, angle, |E|^2, axial Poynting.
pub fn write_profile_csv(
    profile: &FieldProfile,
    w: &mut impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(w, "r_nm,phi_rad,e_intensity,poynting_z")?;
    for (j, &phi) in profile.phi.iter().enumerate() {
        for (i, &r) in profile.r.iter().enumerate() {
            let s = &profile.samples[j][i];
            writeln!(
                w,
                "{:.4},{:.6},{:.8e},{:.8e}",
                r,
                phi,
                s.e_intensity(),
                s.poynting_z()
            )?;
        }
    }
    Ok(())
}
