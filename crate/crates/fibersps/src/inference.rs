//! Estimators for photon-stream measurements: correlograms and antibunching
//! fits, pulsed purity, lifetime fits, saturation and polarization fits,
//! blinking statistics, and the derived source metrics. Nonlinear fits run
//! through one damped Gauss-Newton engine with numeric Jacobians; decay
//! fits use the same engine with Poisson likelihood weights.

use crate::tags::TagStream;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("fit did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("singular Jacobian: some parameter has no effect on the model")]
    SingularJacobian,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("histogram covers {found} side peaks per side, need {needed}")]
    InsufficientPeaks { found: usize, needed: usize },
    #[error("missing input: {0}")]
    MissingInput(&'static str),
}

/// Parameter estimates with 1-sigma uncertainties. `converged` is false only
/// for results assembled from partial information; fits that fail to
/// converge return an error instead.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
    pub uncertainties: Vec<f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|&n| n == name)
            .map(|i| self.values[i])
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|&n| n == name)
            .map(|i| self.uncertainties[i])
    }
}

enum Weighting<'a> {
    /// Fixed least-squares weights; `None` means unweighted, and the
    /// covariance is then scaled by the residual variance.
    Fixed(Option<&'a [f64]>),
    /// Weights 1/mu refreshed every iteration; solves the Poisson maximum
    /// likelihood score equations, with the deviance as the objective.
    Poisson,
}

fn model_vec<F: Fn(&[f64], f64) -> f64>(model: &F, p: &[f64], x: &[f64]) -> Vec<f64> {
    x.iter().map(|&xi| model(p, xi)).collect()
}

fn objective(y: &[f64], mu: &[f64], w: &Weighting) -> f64 {
    match w {
        Weighting::Fixed(wopt) => y
            .iter()
            .zip(mu)
            .enumerate()
            .map(|(i, (yi, mi))| wopt.map_or(1.0, |ws| ws[i]) * (yi - mi) * (yi - mi))
            .sum(),
        Weighting::Poisson => y
            .iter()
            .zip(mu)
            .map(|(&yi, &mi)| {
                if mi <= 0.0 {
                    return f64::NAN;
                }
                if yi > 0.0 {
                    2.0 * (mi - yi + yi * (yi / mi).ln())
                } else {
                    2.0 * mi
                }
            })
            .sum(),
    }
}

fn step_weights(w: &Weighting, mu: &[f64]) -> Vec<f64> {
    match w {
        Weighting::Fixed(None) => vec![1.0; mu.len()],
        Weighting::Fixed(Some(ws)) => ws.to_vec(),
        Weighting::Poisson => mu.iter().map(|&m| 1.0 / m.max(1e-9)).collect(),
    }
}

fn numeric_jacobian<F: Fn(&[f64], f64) -> f64>(model: &F, p: &[f64], x: &[f64]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(x.len(), p.len());
    let mut plus = p.to_vec();
    let mut minus = p.to_vec();
    for k in 0..p.len() {
        let h = (1e-6 * p[k].abs()).max(1e-9);
        plus[k] = p[k] + h;
        minus[k] = p[k] - h;
        for (i, &xi) in x.iter().enumerate() {
            j[(i, k)] = (model(&plus, xi) - model(&minus, xi)) / (2.0 * h);
        }
        plus[k] = p[k];
        minus[k] = p[k];
    }
    j
}

const MAX_FIT_ITERATIONS: usize = 500;

fn fit_core<F: Fn(&[f64], f64) -> f64>(
    model: F,
    x: &[f64],
    y: &[f64],
    weighting: Weighting,
    names: &'static [&'static str],
    guess: &[f64],
) -> Result<FitResult, InferenceError> {
    let n = x.len();
    let np = guess.len();
    assert_eq!(names.len(), np);
    if n != y.len() || n < np {
        return Err(InferenceError::DegenerateData(format!(
            "{n} points cannot constrain {np} parameters"
        )));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(InferenceError::DegenerateData(
            "non-finite values in the data".into(),
        ));
    }

    let mut p = guess.to_vec();
    let mut mu = model_vec(&model, &p, x);
    let mut obj = objective(y, &mu, &weighting);
    if !obj.is_finite() {
        return Err(InferenceError::DegenerateData(
            "model is not finite at the initial guess".into(),
        ));
    }

    // Levenberg damping on the Gauss-Newton normal equations. lambda = 0
    // tries the undamped step first, so linear problems land in one move.
    let mut lambda = 0.0f64;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        let j = numeric_jacobian(&model, &p, x);
        let w = step_weights(&weighting, &mu);

        let mut nmat = DMatrix::<f64>::zeros(np, np);
        let mut grad = DVector::<f64>::zeros(np);
        for i in 0..n {
            let ri = y[i] - mu[i];
            for a in 0..np {
                grad[a] += w[i] * j[(i, a)] * ri;
                for b in a..np {
                    nmat[(a, b)] += w[i] * j[(i, a)] * j[(i, b)];
                }
            }
        }
        for a in 0..np {
            for b in 0..a {
                nmat[(a, b)] = nmat[(b, a)];
            }
        }
        if (0..np).any(|a| !(nmat[(a, a)] > 0.0) || !nmat[(a, a)].is_finite()) {
            return Err(InferenceError::SingularJacobian);
        }

        let mut aug = nmat.clone();
        for a in 0..np {
            aug[(a, a)] *= 1.0 + lambda;
        }
        let delta = match aug.lu().solve(&grad) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                lambda = (lambda * 10.0).max(1e-4);
                if lambda > 1e14 {
                    return Err(InferenceError::NonConvergence { iterations });
                }
                continue;
            }
        };

        let cand: Vec<f64> = p.iter().zip(delta.iter()).map(|(pi, di)| pi + di).collect();
        let mu_c = model_vec(&model, &cand, x);
        let obj_c = objective(y, &mu_c, &weighting);
        if obj_c.is_finite() && obj_c <= obj {
            let rel_step = delta
                .iter()
                .zip(&cand)
                .map(|(d, pc)| d.abs() / pc.abs().max(1e-12))
                .fold(0.0, f64::max);
            let rel_drop = (obj - obj_c) / obj.abs().max(1e-300);
            p = cand;
            mu = mu_c;
            obj = obj_c;
            lambda = if lambda < 1e-10 { 0.0 } else { lambda / 3.0 };
            if rel_step < 1e-10 || rel_drop < 1e-12 {
                converged = true;
                break;
            }
        } else {
            lambda = (lambda * 10.0).max(1e-4);
            if lambda > 1e14 {
                break;
            }
        }
    }
    if !converged {
        return Err(InferenceError::NonConvergence { iterations });
    }

    // Covariance from the normal matrix at the optimum. Unweighted fits get
    // the usual residual-variance scale; weighted and Poisson fits carry
    // their scale in the weights already.
    let j = numeric_jacobian(&model, &p, x);
    let w = step_weights(&weighting, &mu);
    let mut nmat = DMatrix::<f64>::zeros(np, np);
    for i in 0..n {
        for a in 0..np {
            for b in 0..np {
                nmat[(a, b)] += w[i] * j[(i, a)] * j[(i, b)];
            }
        }
    }
    let scale = match &weighting {
        Weighting::Fixed(None) => {
            if n > np {
                obj / (n - np) as f64
            } else {
                0.0
            }
        }
        _ => 1.0,
    };
    let uncertainties = match nmat.try_inverse() {
        Some(cov) => (0..np)
            .map(|a| (cov[(a, a)] * scale).max(0.0).sqrt())
            .collect(),
        None => vec![f64::INFINITY; np],
    };

    Ok(FitResult {
        names: names.to_vec(),
        values: p,
        uncertainties,
        residual_norm: obj.max(0.0).sqrt(),
        converged: true,
        iterations,
    })
}

/// Weighted nonlinear least squares. `weights` are inverse variances;
/// `None` falls back to unweighted with residual-based uncertainties.
pub fn nlls_fit<F: Fn(&[f64], f64) -> f64>(
    model: F,
    x: &[f64],
    y: &[f64],
    weights: Option<&[f64]>,
    names: &'static [&'static str],
    guess: &[f64],
) -> Result<FitResult, InferenceError> {
    fit_core(model, x, y, Weighting::Fixed(weights), names, guess)
}

/// Poisson maximum-likelihood fit for histogram counts; minimizes the
/// deviance, reported through `residual_norm` as its square root.
pub fn poisson_mle_fit<F: Fn(&[f64], f64) -> f64>(
    model: F,
    x: &[f64],
    counts: &[f64],
    names: &'static [&'static str],
    guess: &[f64],
) -> Result<FitResult, InferenceError> {
    if counts.iter().any(|&c| c < 0.0) {
        return Err(InferenceError::DegenerateData(
            "negative counts in a Poisson fit".into(),
        ));
    }
    fit_core(model, x, counts, Weighting::Poisson, names, guess)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Raw,
    CwNormalized,
    Pulsed,
}

/// Cross-correlation histogram of two timestamp sequences.
#[derive(Debug, Clone)]
pub struct CorrelationHistogram {
    pub bin_width_ps: u64,
    /// Bin centers in ps; bin k spans [k*w - w/2, k*w + w/2).
    pub lags: Vec<f64>,
    pub counts: Vec<u64>,
    pub normalized: Option<Vec<f64>>,
    /// Expected counts per bin for uncorrelated streams, set by
    /// [`normalize_cw`].
    pub accidental: Option<f64>,
    pub normalization: Normalization,
}

fn is_sorted(t: &[u64]) -> bool {
    t.windows(2).all(|p| p[1] >= p[0])
}

/// Counts ordered pairs (t_b - t_a) into centered lag bins, sweeping both
/// sorted streams once with a sliding window. The sweep reaches half a bin
/// past max_lag so the outermost bins have full width.
pub fn correlate(
    a: &[u64],
    b: &[u64],
    bin_width_ps: u64,
    max_lag_ps: u64,
) -> Result<CorrelationHistogram, InferenceError> {
    if bin_width_ps == 0 || max_lag_ps < bin_width_ps {
        return Err(InferenceError::DegenerateData(format!(
            "bin width {bin_width_ps} ps and max lag {max_lag_ps} ps do not define bins"
        )));
    }
    if !is_sorted(a) || !is_sorted(b) {
        return Err(InferenceError::DegenerateData(
            "timestamp sequences must be sorted".into(),
        ));
    }
    let k_max = (max_lag_ps / bin_width_ps) as i64;
    let sweep = max_lag_ps - (max_lag_ps % bin_width_ps) + bin_width_ps / 2 + 1;
    let mut counts = vec![0u64; (2 * k_max + 1) as usize];
    let w = bin_width_ps as f64;
    let mut lo = 0usize;
    for &ta in a {
        while lo < b.len() && b[lo] + sweep < ta {
            lo += 1;
        }
        for &tb in &b[lo..] {
            if tb > ta + sweep {
                break;
            }
            let k = ((tb as i64 - ta as i64) as f64 / w).round() as i64;
            if k.abs() <= k_max {
                counts[(k + k_max) as usize] += 1;
            }
        }
    }
    Ok(CorrelationHistogram {
        bin_width_ps,
        lags: (-k_max..=k_max).map(|k| k as f64 * w).collect(),
        counts,
        normalized: None,
        accidental: None,
        normalization: Normalization::Raw,
    })
}

/// [`correlate`] over two channels of one stream.
pub fn correlate_channels(
    stream: &TagStream,
    channel_a: u8,
    channel_b: u8,
    bin_width_ps: u64,
    max_lag_ps: u64,
) -> Result<CorrelationHistogram, InferenceError> {
    correlate(
        &stream.channel_timestamps(channel_a),
        &stream.channel_timestamps(channel_b),
        bin_width_ps,
        max_lag_ps,
    )
}

/// Divides the histogram by the accidental level rate_a * rate_b *
/// duration * bin width, the expected pair count for uncorrelated streams.
pub fn normalize_cw(
    mut hist: CorrelationHistogram,
    rate_a_hz: f64,
    rate_b_hz: f64,
    duration_s: f64,
) -> Result<CorrelationHistogram, InferenceError> {
    if !(rate_a_hz > 0.0 && rate_b_hz > 0.0 && duration_s > 0.0) {
        return Err(InferenceError::DegenerateData(
            "rates and duration must be positive".into(),
        ));
    }
    let accidental = rate_a_hz * rate_b_hz * duration_s * hist.bin_width_ps as f64 * 1e-12;
    hist.normalized = Some(hist.counts.iter().map(|&c| c as f64 / accidental).collect());
    hist.accidental = Some(accidental);
    hist.normalization = Normalization::CwNormalized;
    Ok(hist)
}

/// Fits the normalized CW correlogram with a symmetric exponential recovery
/// B * (1 - (1 - g) * exp(-|tau|/tau_r)), so the dip parameter is already
/// referenced to the fitted baseline. Weights come from the Poisson error
/// of each bin's raw count.
pub fn fit_antibunching_cw(hist: &CorrelationHistogram) -> Result<FitResult, InferenceError> {
    let (Some(norm), Some(accidental)) = (&hist.normalized, hist.accidental) else {
        return Err(InferenceError::DegenerateData(
            "histogram must be CW-normalized first".into(),
        ));
    };
    let n = norm.len();
    if n < 7 {
        return Err(InferenceError::DegenerateData(
            "too few bins for an antibunching fit".into(),
        ));
    }
    let weights: Vec<f64> = hist
        .counts
        .iter()
        .map(|&c| accidental * accidental / c.max(1) as f64)
        .collect();

    let quarter = (n / 4).max(1);
    let baseline0 = (norm[..quarter].iter().sum::<f64>() + norm[n - quarter..].iter().sum::<f64>())
        / (2 * quarter) as f64;
    let baseline0 = if baseline0 > 0.0 { baseline0 } else { 1.0 };
    let center = n / 2;
    let g0 = (norm[center] / baseline0).clamp(0.0, 1.2);
    let target = baseline0 - (baseline0 - norm[center]) / std::f64::consts::E;
    let tau0_ps = (center + 1..n)
        .find(|&i| norm[i] >= target)
        .map(|i| hist.lags[i])
        .unwrap_or(hist.lags[n - 1] / 5.0)
        .max(hist.bin_width_ps as f64);

    let model = |p: &[f64], lag: f64| {
        let tau_ps = p[1] * 1000.0;
        if tau_ps <= 0.0 {
            return f64::NAN;
        }
        p[2] * (1.0 - (1.0 - p[0]) * (-lag.abs() / tau_ps).exp())
    };
    nlls_fit(
        model,
        &hist.lags,
        norm,
        Some(&weights),
        &["g2_0", "rise_time_ns", "baseline"],
        &[g0, tau0_ps / 1000.0, baseline0],
    )
}

const SIDE_PEAKS_PER_SIDE: usize = 10;

/// Pulsed-source purity: the central-peak area over the mean area of the
/// nearest ten side peaks on each side, each integrated over a full
/// repetition period centered on the peak. Invariant under uniform count
/// scaling.
pub fn pulsed_purity(
    hist: &CorrelationHistogram,
    rep_period_ps: u64,
) -> Result<FitResult, InferenceError> {
    if rep_period_ps == 0 {
        return Err(InferenceError::DegenerateData(
            "repetition period must be positive".into(),
        ));
    }
    let period = rep_period_ps as f64;
    let covered = hist.lags.last().copied().unwrap_or(0.0) + hist.bin_width_ps as f64 / 2.0;
    let full_windows = ((covered - period / 2.0) / period).floor();
    let found = if full_windows.is_sign_negative() {
        0
    } else {
        full_windows as usize
    };
    if found < SIDE_PEAKS_PER_SIDE {
        return Err(InferenceError::InsufficientPeaks {
            found,
            needed: SIDE_PEAKS_PER_SIDE,
        });
    }

    let mut central = 0.0f64;
    let mut side_total = 0.0f64;
    for (i, &lag) in hist.lags.iter().enumerate() {
        let m = (lag / period).round() as i64;
        let c = hist.counts[i] as f64;
        if m == 0 {
            central += c;
        } else if m.unsigned_abs() as usize <= SIDE_PEAKS_PER_SIDE {
            side_total += c;
        }
    }
    let n_side = (2 * SIDE_PEAKS_PER_SIDE) as f64;
    let side_mean = side_total / n_side;
    if side_mean <= 0.0 {
        return Err(InferenceError::DegenerateData(
            "side peaks carry no counts".into(),
        ));
    }
    let g = central / side_mean;
    let sigma_central = central.max(1.0).sqrt();
    let sigma_side_mean = side_total.sqrt() / n_side;
    let sigma = ((sigma_central / side_mean).powi(2)
        + (central * sigma_side_mean / (side_mean * side_mean)).powi(2))
    .sqrt();

    Ok(FitResult {
        names: vec!["g2_0"],
        values: vec![g],
        uncertainties: vec![sigma],
        residual_norm: 0.0,
        converged: true,
        iterations: 0,
    })
}

/// Histogram of photon delays after the previous sync pulse, folded over
/// the repetition period.
#[derive(Debug, Clone)]
pub struct DecayHistogram {
    pub bin_width_ps: f64,
    /// Pulse repetition period, ps.
    pub period_ps: f64,
    /// Bin centers, ps after the sync.
    pub t: Vec<f64>,
    pub counts: Vec<f64>,
}

/// Folds every non-sync event onto its delay since the previous sync pulse.
/// Events before the first sync are dropped.
pub fn decay_histogram(
    stream: &TagStream,
    sync_channel: u8,
    bin_width_ps: u64,
) -> Result<DecayHistogram, InferenceError> {
    if bin_width_ps == 0 {
        return Err(InferenceError::DegenerateData(
            "bin width must be positive".into(),
        ));
    }
    stream
        .check_sorted()
        .map_err(|e| InferenceError::DegenerateData(e.to_string()))?;
    let syncs = stream.channel_timestamps(sync_channel);
    if syncs.len() < 2 {
        return Err(InferenceError::DegenerateData(
            "need at least two sync pulses".into(),
        ));
    }
    // Sparse sync trains (pulses recorded only when they produced a photon)
    // have gaps at exact multiples of the period, so the smallest positive
    // gap is the period itself. Delays past one period are dropped rather
    // than refolded; with sparse syncs a refold is only possible when the
    // intermediate pulse happens to be recorded, and keeping longer delays
    // would fold in a per-period survivorship factor that biases the decay.
    let period = syncs
        .windows(2)
        .map(|p| p[1] - p[0])
        .filter(|&g| g > 0)
        .min()
        .ok_or_else(|| InferenceError::DegenerateData("sync pulses all coincide".into()))?;

    let n_bins = (period as f64 / bin_width_ps as f64).ceil() as usize;
    let mut counts = vec![0.0f64; n_bins];
    let mut last_sync: Option<u64> = None;
    let mut folded = 0usize;
    for rec in &stream.records {
        if rec.channel == sync_channel {
            last_sync = Some(rec.timestamp);
        } else if let Some(s) = last_sync {
            let idx = ((rec.timestamp - s) / bin_width_ps) as usize;
            if idx < n_bins {
                counts[idx] += 1.0;
                folded += 1;
            }
        }
    }
    if folded == 0 {
        return Err(InferenceError::DegenerateData(
            "no photon events after the first sync".into(),
        ));
    }
    let w = bin_width_ps as f64;
    Ok(DecayHistogram {
        bin_width_ps: w,
        period_ps: period as f64,
        t: (0..n_bins).map(|i| (i as f64 + 0.5) * w).collect(),
        counts,
    })
}

/// Lifetime fit outcome. `jitter_aware` reports whether the decay was fit
/// with the Gaussian-smeared exponential; `resolution_limited` warns that
/// the fitted lifetime sits below three times the timing jitter.
#[derive(Debug, Clone)]
pub struct DecayFit {
    pub fit: FitResult,
    pub jitter_aware: bool,
    pub resolution_limited: bool,
}

pub(crate) const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Fits amplitude * exp(-t/tau) + background to a folded decay histogram
/// by Poisson maximum likelihood. When the rough lifetime is under ten
/// jitter widths the exponential is replaced by its closed-form convolution
/// with a Gaussian of the given FWHM, and the fit then starts from t = 0
/// to use the resolved rising edge.
pub fn fit_decay(hist: &DecayHistogram, jitter_fwhm_ps: f64) -> Result<DecayFit, InferenceError> {
    if hist.counts.len() < 5 {
        return Err(InferenceError::DegenerateData(
            "too few bins for a decay fit".into(),
        ));
    }
    if !(jitter_fwhm_ps >= 0.0 && jitter_fwhm_ps.is_finite()) {
        return Err(InferenceError::DegenerateData(
            "jitter FWHM must be finite and non-negative".into(),
        ));
    }
    let n = hist.counts.len();
    let peak_idx = (0..n)
        .max_by(|&a, &b| hist.counts[a].total_cmp(&hist.counts[b]))
        .unwrap();
    let peak = hist.counts[peak_idx];
    let tail_n = (n / 10).max(1);
    let background0 = hist.counts[n - tail_n..].iter().sum::<f64>() / tail_n as f64;
    let target = background0 + (peak - background0) / std::f64::consts::E;
    let tau0_ps = (peak_idx + 1..n)
        .find(|&i| hist.counts[i] <= target)
        .map(|i| hist.t[i] - hist.t[peak_idx])
        .unwrap_or((hist.t[n - 1] - hist.t[peak_idx]) / 3.0)
        .max(hist.bin_width_ps);

    let sigma = jitter_fwhm_ps / FWHM_PER_SIGMA;
    let jitter_aware = jitter_fwhm_ps > 0.0 && tau0_ps < 10.0 * jitter_fwhm_ps;

    // Drop the sliver at the period end where negative-jitter events wrap
    // around; they belong to the next pulse's rising edge.
    let hi = if sigma > 0.0 {
        hist.t
            .iter()
            .position(|&t| t > hist.period_ps - 5.0 * sigma)
            .unwrap_or(n)
    } else {
        n
    };
    let lo = if jitter_aware { 0 } else { peak_idx };
    if hi.saturating_sub(lo) < 5 {
        return Err(InferenceError::DegenerateData(
            "fit window shorter than five bins".into(),
        ));
    }
    let x = &hist.t[lo..hi];
    let y = &hist.counts[lo..hi];

    let guess = [
        tau0_ps / 1000.0,
        (peak - background0).max(1e-3),
        background0.max(1e-3),
    ];
    let names: &'static [&'static str] = &["tau_ns", "amplitude", "background"];
    let fit = if jitter_aware {
        let model = move |p: &[f64], t: f64| {
            let tau = p[0] * 1000.0;
            if tau <= 0.0 {
                return f64::NAN;
            }
            let exponent = (sigma * sigma / (2.0 * tau * tau) - t / tau).min(700.0);
            let edge = (sigma / tau - t / sigma) / std::f64::consts::SQRT_2;
            p[1] * 0.5 * exponent.exp() * puruspe::erfc(edge) + p[2]
        };
        poisson_mle_fit(model, x, y, names, &guess)?
    } else {
        let model = |p: &[f64], t: f64| {
            let tau = p[0] * 1000.0;
            if tau <= 0.0 {
                return f64::NAN;
            }
            p[1] * (-t / tau).exp() + p[2]
        };
        poisson_mle_fit(model, x, y, names, &guess)?
    };

    let tau_ps = fit.value("tau_ns").unwrap() * 1000.0;
    let resolution_limited = jitter_fwhm_ps > 0.0 && tau_ps < 3.0 * jitter_fwhm_ps;
    Ok(DecayFit {
        fit,
        jitter_aware,
        resolution_limited,
    })
}

/// Fits the two-level saturation curve N(I) = N_max * I / (I + I_sat) to
/// (intensity, rate) points by unweighted least squares.
pub fn fit_saturation(points: &[(f64, f64)]) -> Result<FitResult, InferenceError> {
    if points
        .iter()
        .any(|&(i, r)| !i.is_finite() || !r.is_finite() || i < 0.0 || r < 0.0)
    {
        return Err(InferenceError::DegenerateData(
            "intensities and rates must be finite and non-negative".into(),
        ));
    }
    let mut intensities: Vec<f64> = points.iter().map(|p| p.0).collect();
    intensities.sort_by(f64::total_cmp);
    let distinct = 1 + intensities
        .windows(2)
        .filter(|p| p[1] - p[0] > 1e-9 * p[1].abs().max(1.0))
        .count();
    if points.len() < 3 || distinct < 3 {
        return Err(InferenceError::DegenerateData(format!(
            "need at least 3 distinct intensities, got {distinct}"
        )));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let n0 = y.iter().cloned().fold(0.0, f64::max).max(1e-12) * 1.2;
    let i0 = intensities[intensities.len() / 2].max(1e-12);
    let model = |p: &[f64], i: f64| {
        if p[1] <= 0.0 {
            return f64::NAN;
        }
        p[0] * i / (i + p[1])
    };
    nlls_fit(model, &x, &y, None, &["n_max", "i_sat"], &[n0, i0])
}

/// Fits N(theta) = A cos^2(theta - theta0) + B through its linear
/// reparametrization in (1, cos 2theta, sin 2theta), which is exact, and
/// reports dop = A/(A + 2B). For constant counts the orientation is
/// undetermined and its uncertainty comes back infinite.
pub fn fit_cos_squared(angles_deg: &[f64], counts: &[f64]) -> Result<FitResult, InferenceError> {
    let n = angles_deg.len();
    if n != counts.len() || n < 4 {
        return Err(InferenceError::DegenerateData(
            "need at least 4 matched angle/count samples".into(),
        ));
    }
    if !angles_deg.iter().chain(counts).all(|v| v.is_finite()) {
        return Err(InferenceError::DegenerateData(
            "non-finite values in the data".into(),
        ));
    }
    let mut sorted = angles_deg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = 1 + sorted.windows(2).filter(|p| p[1] - p[0] > 1e-9).count();
    let span = sorted[n - 1] - sorted[0];
    if distinct < 4 || span < 180.0 - 1e-9 {
        return Err(InferenceError::DegenerateData(format!(
            "need 4 distinct angles spanning 180 degrees, got {distinct} over {span:.1}"
        )));
    }

    let x = DMatrix::from_fn(n, 3, |i, k| {
        let two_theta = 2.0 * angles_deg[i].to_radians();
        match k {
            0 => 1.0,
            1 => two_theta.cos(),
            _ => two_theta.sin(),
        }
    });
    let yv = DVector::from_column_slice(counts);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &yv;
    let c = xtx
        .clone()
        .lu()
        .solve(&xty)
        .ok_or(InferenceError::SingularJacobian)?;

    let (c0, c1, c2) = (c[0], c[1], c[2]);
    if !(c0 > 0.0) {
        return Err(InferenceError::DegenerateData(
            "counts must have a positive mean level".into(),
        ));
    }
    let r = c1.hypot(c2);
    let theta0_deg = (0.5 * c2.atan2(c1)).to_degrees();
    let amplitude = 2.0 * r;
    let floor = c0 - r;
    let dop = r / c0;

    let residual = &yv - &x * &c;
    let ssr = residual.norm_squared();
    let s2 = if n > 3 { ssr / (n - 3) as f64 } else { 0.0 };
    let uncertainties = match xtx.try_inverse() {
        Some(inv) => {
            let cov = inv * s2;
            let sigma_of = |g: [f64; 3]| {
                let mut v = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        v += g[a] * cov[(a, b)] * g[b];
                    }
                }
                if v.is_finite() {
                    v.max(0.0).sqrt()
                } else {
                    f64::INFINITY
                }
            };
            let ga = [0.0, 2.0 * c1 / r, 2.0 * c2 / r];
            let gb = [1.0, -c1 / r, -c2 / r];
            let deg = 180.0 / std::f64::consts::PI;
            let gt = [0.0, -c2 / (2.0 * r * r) * deg, c1 / (2.0 * r * r) * deg];
            let gd = [-r / (c0 * c0), c1 / (r * c0), c2 / (r * c0)];
            vec![sigma_of(ga), sigma_of(gb), sigma_of(gt), sigma_of(gd)]
        }
        None => vec![f64::INFINITY; 4],
    };
    // No resolvable modulation leaves the orientation undetermined.
    let mut uncertainties = uncertainties;
    if r < 1e-9 * c0 {
        uncertainties[2] = f64::INFINITY;
    }

    Ok(FitResult {
        names: vec!["amplitude", "floor", "theta0_deg", "dop"],
        values: vec![amplitude, floor, theta0_deg, dop],
        uncertainties,
        residual_norm: ssr.sqrt(),
        converged: true,
        iterations: 1,
    })
}

/// Bright/dark statistics of a binned intensity trace.
#[derive(Debug, Clone)]
pub struct BlinkingStats {
    pub threshold: f64,
    pub on_fraction: f64,
    pub mean_on_dwell_s: f64,
    pub mean_off_dwell_s: f64,
    pub on_runs: usize,
    pub off_runs: usize,
    /// The count histogram showed a single level; the threshold fell back
    /// to the midpoint of the 10th and 90th percentiles.
    pub unimodal: bool,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn gauss_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

struct Mixture {
    w: [f64; 2],
    mu: [f64; 2],
    sd: [f64; 2],
}

fn two_gaussian_em(v: &[f64], init_lo: f64, init_hi: f64) -> Option<Mixture> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd_all = var.sqrt();
    if sd_all < 1e-9 {
        return None;
    }
    let sd_floor = (0.5f64).max(1e-6 * mean.abs());
    let mut m = Mixture {
        w: [0.5, 0.5],
        mu: [init_lo, init_hi],
        sd: [(sd_all / 2.0).max(sd_floor); 2],
    };
    for _ in 0..300 {
        let mut sum_r = [0.0; 2];
        let mut sum_rx = [0.0; 2];
        let mut sum_rxx = [0.0; 2];
        for &x in v {
            let p0 = m.w[0] * gauss_pdf(x, m.mu[0], m.sd[0]);
            let p1 = m.w[1] * gauss_pdf(x, m.mu[1], m.sd[1]);
            let total = p0 + p1;
            let r1 = if total > 1e-300 { p1 / total } else { 0.5 };
            let r = [1.0 - r1, r1];
            for k in 0..2 {
                sum_r[k] += r[k];
                sum_rx[k] += r[k] * x;
                sum_rxx[k] += r[k] * x * x;
            }
        }
        let mut delta = 0.0f64;
        for k in 0..2 {
            if sum_r[k] < 1e-12 {
                return None;
            }
            let w = sum_r[k] / n;
            let mu = sum_rx[k] / sum_r[k];
            let sd = ((sum_rxx[k] / sum_r[k] - mu * mu).max(0.0))
                .sqrt()
                .max(sd_floor);
            delta = delta
                .max((w - m.w[k]).abs())
                .max((mu - m.mu[k]).abs() / mean.abs().max(1.0))
                .max((sd - m.sd[k]).abs() / sd_all);
            m.w[k] = w;
            m.mu[k] = mu;
            m.sd[k] = sd;
        }
        if delta < 1e-8 {
            break;
        }
    }
    if m.mu[0] > m.mu[1] {
        m.mu.swap(0, 1);
        m.sd.swap(0, 1);
        m.w.swap(0, 1);
    }
    if m.w[0] < 1e-3 || m.w[1] < 1e-3 || !m.mu.iter().chain(&m.sd).all(|v| v.is_finite()) {
        return None;
    }
    Some(m)
}

/// Splits a binned intensity trace into bright and dark periods. The
/// threshold sits at the density minimum of a two-Gaussian decomposition of
/// the count histogram; when no interior minimum exists the trace is
/// flagged unimodal and the 10th/90th percentile midpoint is used instead.
/// Bins exactly at the threshold continue the preceding state.
pub fn blinking_stats(counts: &[u64], bin_width_s: f64) -> Result<BlinkingStats, InferenceError> {
    if counts.len() < 100 {
        return Err(InferenceError::DegenerateData(format!(
            "need at least 100 bins, got {}",
            counts.len()
        )));
    }
    if !(bin_width_s > 0.0 && bin_width_s.is_finite()) {
        return Err(InferenceError::DegenerateData(
            "bin width must be positive".into(),
        ));
    }
    let v: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    let q10 = percentile(&sorted, 0.10);
    let q90 = percentile(&sorted, 0.90);
    let fallback = 0.5 * (q10 + q90);

    let (threshold, unimodal) = match two_gaussian_em(&v, q10, q90) {
        Some(m) => {
            let density = |x: f64| {
                m.w[0] * gauss_pdf(x, m.mu[0], m.sd[0]) + m.w[1] * gauss_pdf(x, m.mu[1], m.sd[1])
            };
            let steps = 400;
            let argmin = (0..=steps)
                .map(|i| m.mu[0] + (m.mu[1] - m.mu[0]) * i as f64 / steps as f64)
                .min_by(|&a, &b| density(a).total_cmp(&density(b)))
                .unwrap();
            let interior = argmin > m.mu[0] + 1e-12 && argmin < m.mu[1] - 1e-12;
            if interior && density(argmin) < density(m.mu[0]) && density(argmin) < density(m.mu[1])
            {
                (argmin, false)
            } else {
                (fallback, true)
            }
        }
        None => (fallback, true),
    };

    // Ties continue the previous state; a leading tie reads as bright so a
    // constant trace is fully on.
    let mut state = true;
    let mut on_bins = 0usize;
    let mut runs: Vec<(bool, usize)> = Vec::new();
    for &x in &v {
        let s = if x > threshold {
            true
        } else if x < threshold {
            false
        } else {
            state
        };
        state = s;
        if s {
            on_bins += 1;
        }
        match runs.last_mut() {
            Some((rs, len)) if *rs == s => *len += 1,
            _ => runs.push((s, 1)),
        }
    }
    let dwell = |want: bool| {
        let r: Vec<usize> = runs
            .iter()
            .filter(|(s, _)| *s == want)
            .map(|&(_, l)| l)
            .collect();
        if r.is_empty() {
            (0.0, 0)
        } else {
            (
                r.iter().sum::<usize>() as f64 / r.len() as f64 * bin_width_s,
                r.len(),
            )
        }
    };
    let (mean_on_dwell_s, on_runs) = dwell(true);
    let (mean_off_dwell_s, off_runs) = dwell(false);

    Ok(BlinkingStats {
        threshold,
        on_fraction: on_bins as f64 / v.len() as f64,
        mean_on_dwell_s,
        mean_off_dwell_s,
        on_runs,
        off_runs,
        unimodal,
    })
}

/// Reference lifetime for the lifetime-ratio enhancement figure.
pub const DEFAULT_REFERENCE_LIFETIME_NS: f64 = 55.0;

/// Inputs for the derived source metrics.
#[derive(Debug, Clone)]
pub struct MetricsInput {
    /// Fitted saturated detected rate on one fiber side, Hz.
    pub n_max_hz: f64,
    /// Collection, filter, and detector efficiencies, multiplied into the
    /// overall detection probability.
    pub chain_efficiencies: [f64; 3],
    pub lifetime_ns: f64,
    pub reference_lifetime_ns: f64,
    /// Guided-rate figure of a comparison emitter, Hz; enables the
    /// enhancement ratio.
    pub comparison_gamma_sp_hz: Option<f64>,
    pub dop: Option<f64>,
    pub g2_0: Option<f64>,
}

/// Derived source metrics; rates in Hz.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub alpha: f64,
    pub gamma_sp_hz: f64,
    pub pf: f64,
    pub ef: Option<f64>,
    pub coupling_efficiency: f64,
    pub dop: Option<f64>,
    pub g2_0: Option<f64>,
}

/// Combines fit outputs into the derived metrics: detection probability
/// alpha, guided photon rate 2 N_max / alpha (the factor two restores the
/// undetected fiber direction), lifetime-ratio enhancement, rate ratio
/// against a comparison emitter, and coupling efficiency gamma * tau.
pub fn derived_metrics(input: &MetricsInput) -> Result<MetricsReport, InferenceError> {
    if input.n_max_hz.is_nan() {
        return Err(InferenceError::MissingInput("n_max_hz"));
    }
    if input.lifetime_ns.is_nan() {
        return Err(InferenceError::MissingInput("lifetime_ns"));
    }
    if !(input.n_max_hz >= 0.0 && input.n_max_hz.is_finite()) {
        return Err(InferenceError::DegenerateData(
            "saturated rate must be finite and non-negative".into(),
        ));
    }
    if !(input.lifetime_ns > 0.0 && input.reference_lifetime_ns > 0.0) {
        return Err(InferenceError::DegenerateData(
            "lifetimes must be positive".into(),
        ));
    }
    if input
        .chain_efficiencies
        .iter()
        .any(|&e| !(e > 0.0 && e <= 1.0))
    {
        return Err(InferenceError::DegenerateData(
            "chain efficiencies must lie in (0, 1]".into(),
        ));
    }
    let alpha = input.chain_efficiencies.iter().product::<f64>();
    let gamma_sp_hz = 2.0 * input.n_max_hz / alpha;
    let ef = match input.comparison_gamma_sp_hz {
        Some(g) if g > 0.0 => Some(gamma_sp_hz / g),
        Some(_) => {
            return Err(InferenceError::DegenerateData(
                "comparison rate must be positive".into(),
            ))
        }
        None => None,
    };
    Ok(MetricsReport {
        alpha,
        gamma_sp_hz,
        pf: input.reference_lifetime_ns / input.lifetime_ns,
        ef,
        coupling_efficiency: gamma_sp_hz * input.lifetime_ns * 1e-9,
        dop: input.dop,
        g2_0: input.g2_0,
    })
}

/// Writes a correlogram as CSV; the normalized column is empty when the
/// histogram is raw.
pub fn write_histogram_csv(
    hist: &CorrelationHistogram,
    w: &mut impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(w, "lag_ps,counts,normalized")?;
    for i in 0..hist.lags.len() {
        match &hist.normalized {
            Some(n) => writeln!(w, "{},{},{:.6e}", hist.lags[i], hist.counts[i], n[i])?,
            None => writeln!(w, "{},{},", hist.lags[i], hist.counts[i])?,
        }
    }
    Ok(())
}

/// Writes a folded decay histogram as CSV.
pub fn write_decay_csv(hist: &DecayHistogram, w: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "t_ps,counts")?;
    for i in 0..hist.t.len() {
        writeln!(w, "{},{}", hist.t[i], hist.counts[i])?;
    }
    Ok(())
}
