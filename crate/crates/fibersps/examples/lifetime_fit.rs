//! Recovers excited-state lifetimes from pulsed streams: builds the
//! sync-referenced decay histogram for both emitter presets and fits an
//! exponential, using a jitter-aware model when the decay is not much longer
//! than the instrument response.

use fibersps::emitter::{
    apply_detection, simulate_emission, DetectorChain, EmitterModel, ExcitationSpec,
};
use fibersps::inference::{decay_histogram, fit_decay, write_decay_csv};
use std::fs::File;
use std::io::BufWriter;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let chain = DetectorChain::default();
    for (name, model, duration_s) in [
        ("coupled", EmitterModel::coupled(), 20.0),
        ("uncoupled", EmitterModel::uncoupled(), 40.0),
    ] {
        let excitation = ExcitationSpec::pulsed(387.0, 10.0);
        let emitted = simulate_emission(&model, &excitation, duration_s, 7)?;
        let detected = apply_detection(&emitted, &chain, 11)?;
        let hist = decay_histogram(&detected, 2, 50)?;
        let fit = fit_decay(&hist, chain.jitter_fwhm_ps)?;
        let tau = fit.fit.value("tau_ns").unwrap();
        let err = fit.fit.uncertainty("tau_ns").unwrap();
        println!(
            "{name}: tau = {tau:.3} +/- {err:.3} ns (model {} ns), jitter-aware: {}, \
             resolution-limited: {}",
            model.lifetime_ns, fit.jitter_aware, fit.resolution_limited
        );
        if name == "coupled" {
            let mut w = BufWriter::new(File::create("decay_coupled.csv")?);
            write_decay_csv(&hist, &mut w)?;
            println!("  histogram written to decay_coupled.csv");
        }
    }
    Ok(())
}
