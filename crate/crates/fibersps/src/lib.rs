//! Simulation and analysis toolkit for nanofiber-coupled, plasmon-enhanced
//! single-photon sources.
//!
//! The crate models the full signal chain of a fiber-coupled quantum emitter
//! experiment: the guided mode of a subwavelength step-index fiber, the
//! quasi-static response of a metal nanorod sitting on it, a stochastic
//! photon emitter with blinking and detector imperfections, a binary time-tag
//! container, and the estimators used to turn tag streams back into physics
//! (correlation histograms, lifetime fits, saturation curves, polarization
//! and blinking statistics).
//!
//! # Modules
//!
//! * [`waveguide`] - HE11 mode solver and emitter-to-fiber channeling
//! * [`plasmon`] - gold permittivity, spheroid polarizability, scattering
//!   spectra, near fields, and the combined rod-on-fiber response
//! * [`emitter`] - stochastic photon streams and the detection chain
//! * [`tags`] - NTG1 time-tag container and stream utilities
//! * [`inference`] - correlator, fitting engine, and derived metrics
//! * [`cli`] - config handling and the `fibersps` command-line entry points
//!
//! # Examples
//!
//! Each major capability has a runnable example. From the workspace root:
//!
//! ```text
//! cargo run --example mode_profile        # solve the HE11 mode of a 320 nm fiber
//! cargo run --example channeling_sweep    # channeling efficiency vs fiber diameter
//! cargo run --example lspr_spectrum       # nanorod scattering spectrum, peak + width
//! cargo run --example near_field_map      # field enhancement around the rod
//! cargo run --example hybrid_curve        # decay enhancement / fiber coupling vs emitter position
//! cargo run --example simulate_coupled    # write a pulsed photon stream as NTG1
//! cargo run --example lifetime_fit        # decay histogram and lifetime recovery
//! cargo run --example g2_analysis         # continuous-wave antibunching dip
//! cargo run --example purity_pulsed       # pulsed single-photon purity
//! cargo run --example saturation_curve    # brightness vs excitation intensity
//! cargo run --example polarization_dop    # analyzer sweep and degree of polarization
//! cargo run --example blinking_trace      # intensity trace and on/off statistics
//! ```

mod bessel;
pub mod cli;
pub mod emitter;
pub mod inference;
pub mod plasmon;
pub mod tags;
pub mod waveguide;
