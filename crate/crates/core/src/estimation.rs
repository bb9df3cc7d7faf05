//! Nonlinear least-squares engine and the fit models used throughout:
//! longitudinal decay, coherence envelope, Ramsey sinusoids with optional
//! beating, power-law scaling of the coherence time, and the average-fidelity
//! crossing.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::pair_modulation;
use crate::error::{Error, Result};
use crate::model::{DDSequence, EnvironmentModel, Trace};

/// Parameter estimates with standard errors from the linearized covariance at
/// the optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: BTreeMap<String, f64>,
    pub sigmas: BTreeMap<String, f64>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.sigmas[name]
    }
}

/// One fit parameter with its initial value and box bounds.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: &'static str,
    pub init: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Parameter {
    pub fn new(name: &'static str, init: f64, lo: f64, hi: f64) -> Self {
        Parameter { name, init, lo, hi }
    }
}

/// Power-law scaling of the coherence time with the pulse number,
/// T(N) = t_ref * (N/4)^eta.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingLaw {
    /// Coherence time at N = 4 (s).
    pub t_ref: f64,
    pub eta: f64,
}

impl ScalingLaw {
    pub fn coherence_time(&self, n_pulses: u32) -> f64 {
        self.t_ref * (n_pulses as f64 / 4.0).powf(self.eta)
    }
}

const MAX_ITERATIONS: usize = 200;
const REL_TOL: f64 = 1e-10;
const JACOBIAN_REL_STEP: f64 = 1e-6;
const LAMBDA_MAX: f64 = 1e14;

fn residuals<F>(model: &F, p: &[f64], data: &Trace) -> DVector<f64>
where
    F: Fn(&[f64], usize, f64) -> f64,
{
    DVector::from_iterator(
        data.len(),
        data.times
            .iter()
            .zip(&data.values)
            .enumerate()
            .map(|(i, (&t, &y))| model(p, i, t) - y),
    )
}

fn step_size(p: f64) -> f64 {
    JACOBIAN_REL_STEP * p.abs().max(1.0)
}

pub(crate) fn forward_jacobian<F>(model: &F, p: &[f64], r0: &DVector<f64>, data: &Trace) -> DMatrix<f64>
where
    F: Fn(&[f64], usize, f64) -> f64,
{
    let mut j = DMatrix::zeros(data.len(), p.len());
    let mut work = p.to_vec();
    for col in 0..p.len() {
        let h = step_size(p[col]);
        work[col] = p[col] + h;
        let r1 = residuals(model, &work, data);
        work[col] = p[col];
        for row in 0..data.len() {
            j[(row, col)] = (r1[row] - r0[row]) / h;
        }
    }
    j
}

#[cfg(test)]
pub(crate) fn central_jacobian<F>(model: &F, p: &[f64], data: &Trace) -> DMatrix<f64>
where
    F: Fn(&[f64], usize, f64) -> f64,
{
    let mut j = DMatrix::zeros(data.len(), p.len());
    let mut work = p.to_vec();
    for col in 0..p.len() {
        let h = step_size(p[col]);
        work[col] = p[col] + h;
        let rp = residuals(model, &work, data);
        work[col] = p[col] - h;
        let rm = residuals(model, &work, data);
        work[col] = p[col];
        for row in 0..data.len() {
            j[(row, col)] = (rp[row] - rm[row]) / (2.0 * h);
        }
    }
    j
}

fn build_result(
    params: &[Parameter],
    p: &[f64],
    residual_norm: f64,
    sigmas: Vec<f64>,
    converged: bool,
    iterations: usize,
) -> FitResult {
    FitResult {
        params: params.iter().zip(p).map(|(d, &v)| (d.name.to_string(), v)).collect(),
        sigmas: params.iter().zip(sigmas).map(|(d, v)| (d.name.to_string(), v)).collect(),
        residual_norm,
        converged,
        iterations,
    }
}

fn covariance_sigmas(j: &DMatrix<f64>, cost: f64, n: usize, k: usize) -> Vec<f64> {
    let jtj = j.transpose() * j;
    let dof = n.saturating_sub(k).max(1) as f64;
    let s2 = cost / dof;
    match jtj.try_inverse() {
        Some(inv) => (0..k).map(|i| (s2 * inv[(i, i)]).max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; k],
    }
}

/// Damped Gauss-Newton least squares: multiplicative damping on the normal
/// equations, forward-difference Jacobian with relative step 1e-6, damping
/// x10 on rejected steps and /10 on accepted ones. Converges when the
/// relative change of the squared residual drops below 1e-10, capped at 200
/// iterations. Deterministic.
pub fn nlls_fit<F>(model: F, params: &[Parameter], data: &Trace) -> Result<FitResult>
where
    F: Fn(&[f64], usize, f64) -> f64,
{
    if data.is_empty() {
        return Err(Error::FitSetup("no data points".into()));
    }
    if data.len() < params.len() {
        return Err(Error::FitSetup(format!(
            "{} data points cannot constrain {} parameters",
            data.len(),
            params.len()
        )));
    }
    for d in params {
        if !(d.lo <= d.init && d.init <= d.hi) {
            return Err(Error::FitSetup(format!(
                "initial {} = {} outside bounds [{}, {}]",
                d.name, d.init, d.lo, d.hi
            )));
        }
    }

    let k = params.len();
    let mut p: Vec<f64> = params.iter().map(|d| d.init).collect();
    let mut r = residuals(&model, &p, data);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let j = forward_jacobian(&model, &p, &r, data);
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = jtj.clone();
            for i in 0..k {
                damped[(i, i)] += lambda * jtj[(i, i)];
            }
            let step = damped.lu().solve(&(-&jtr));
            let Some(step) = step else {
                lambda *= 10.0;
                continue;
            };
            if !step.iter().all(|v| v.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            let trial: Vec<f64> = p
                .iter()
                .zip(step.iter())
                .zip(params)
                .map(|((&pi, &di), d)| (pi + di).clamp(d.lo, d.hi))
                .collect();
            let r_trial = residuals(&model, &trial, data);
            let cost_trial = r_trial.norm_squared();
            if cost_trial.is_finite() && cost_trial <= cost {
                let rel_change = (cost - cost_trial) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                r = r_trial;
                cost = cost_trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel_change < REL_TOL {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // Singular or stuck at every damping level.
            let sigmas = covariance_sigmas(&forward_jacobian(&model, &p, &r, data), cost, data.len(), k);
            return Ok(build_result(params, &p, cost.sqrt(), sigmas, false, iterations));
        }
        if converged {
            break;
        }
    }

    let j = forward_jacobian(&model, &p, &r, data);
    let sigmas = covariance_sigmas(&j, cost, data.len(), k);
    Ok(build_result(params, &p, cost.sqrt(), sigmas, converged, iterations))
}

fn check_fidelity_range(data: &Trace) -> Result<()> {
    if data.values.iter().any(|&v| !(0.0..=1.05).contains(&v)) {
        return Err(Error::FitSetup("fidelity values must lie in [0, 1.05]".into()));
    }
    Ok(())
}

/// Longitudinal relaxation fit F = 2/3 exp(-t/T1) + 1/3.
pub fn fit_t1(data: &Trace) -> Result<FitResult> {
    check_fidelity_range(data)?;
    let span = data.times.last().unwrap_or(&1.0) - data.times.first().unwrap_or(&0.0);
    let params = [Parameter::new("t1", span.max(1e-9), 1e-12, 1e30)];
    nlls_fit(
        |p, _, t| 2.0 / 3.0 * (-t / p[0]).exp() + 1.0 / 3.0,
        &params,
        data,
    )
}

/// Coherence-envelope fit F = 1/2 + A * M(t) * exp(-(t/T)^n), with the pair
/// modulation M(t) computed from the environment model at the trace's pulse
/// number (meta key `n_pulses`). Every data time must map to a delay on the
/// 1 ns grid.
pub fn fit_envelope(data: &Trace, model: &EnvironmentModel) -> Result<FitResult> {
    let n_pulses: u32 = data
        .meta
        .get("n_pulses")
        .ok_or_else(|| Error::FitSetup("trace meta lacks n_pulses".into()))?
        .parse()
        .map_err(|_| Error::FitSetup("trace meta n_pulses is not an integer".into()))?;
    if n_pulses == 0 {
        return Err(Error::FitSetup("n_pulses must be positive".into()));
    }

    let mut modulation = Vec::with_capacity(data.len());
    for &t in &data.times {
        let tau_ns_f = t / (2.0 * n_pulses as f64) * 1e9;
        let tau_ns = tau_ns_f.round();
        if (tau_ns_f - tau_ns).abs() > 0.5 || tau_ns < 1.0 {
            return Err(Error::FitSetup(format!(
                "time {t} s does not map to a realizable delay at N = {n_pulses}"
            )));
        }
        let seq = DDSequence { n_pulses, tau_ns: tau_ns as u64, phase_scheme: "XY8".into() };
        let m: f64 = model.pairs.iter().map(|p| pair_modulation(p, &seq)).product();
        modulation.push(m);
    }

    let span = data.times.last().unwrap() - data.times.first().unwrap();
    let params = [
        Parameter::new("amplitude", 0.5, 1e-6, 1.0),
        Parameter::new("t_coh", (0.5 * span).max(1e-9), 1e-9, 1e30),
        Parameter::new("exponent", 2.0, 0.5, 4.0),
    ];
    nlls_fit(
        move |p, i, t| 0.5 + p[0] * modulation[i] * (-(t / p[1]).powf(p[2])).exp(),
        &params,
        data,
    )
}

/// Gaussian-decay Ramsey fit
/// F = a + A exp(-(t/T2*)^2) cos(2 pi delta t + phi), optionally multiplied
/// by cos(2 pi f_beat t). The detuning is seeded from the periodogram peak;
/// with beating, from the mean of the two strongest peaks and the beat from
/// half their separation.
pub fn fit_ramsey(data: &Trace, with_beating: bool) -> Result<FitResult> {
    if data.len() < 8 {
        return Err(Error::FitSetup("ramsey fit needs at least 8 points".into()));
    }
    let span = data.times.last().unwrap() - data.times.first().unwrap();
    let mean = data.values.iter().sum::<f64>() / data.len() as f64;
    let max = data.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = data.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let nyquist = 0.5 * (data.len() - 1) as f64 / span;

    let peaks = periodogram_peaks(data, 2);
    let (delta0, beat0) = match (with_beating, peaks.as_slice()) {
        (false, [first, ..]) => (first.0, 0.0),
        (false, []) => (nyquist / 4.0, 0.0),
        (true, [first, second, ..]) => {
            (0.5 * (first.0 + second.0), 0.5 * (first.0 - second.0).abs())
        }
        (true, [first]) => (first.0, 1.0 / span),
        (true, []) => (nyquist / 4.0, 1.0 / span),
    };

    let mut params = vec![
        Parameter::new("a", mean, -1.0, 2.0),
        Parameter::new("amplitude", (0.5 * (max - min)).max(1e-9), -2.0, 2.0),
        Parameter::new("t2_star", (0.5 * span).max(1e-9), 1e-9, 1e30),
        Parameter::new("delta", delta0, 0.0, nyquist),
        Parameter::new("phi", 0.0, -7.0, 7.0),
    ];
    if with_beating {
        params.push(Parameter::new("f_beat", beat0.max(1e-3), 0.0, nyquist));
    }
    nlls_fit(
        move |p, _, t| {
            let tau = std::f64::consts::TAU;
            let mut v = p[0] + p[1] * (-(t / p[2]).powi(2)).exp() * (tau * p[3] * t + p[4]).cos();
            if with_beating {
                v = p[0] + (v - p[0]) * (tau * p[5] * t).cos();
            }
            v
        },
        &params,
        data,
    )
}

/// Coherence-time scaling fit T(N) = t_ref (N/4)^eta, solved exactly as a
/// linear least-squares problem in log-log space.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingLaw> {
    if points.iter().any(|&(n, t)| !(n > 0.0) || !(t > 0.0)) {
        return Err(Error::FitSetup("pulse numbers and coherence times must be positive".into()));
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::FitSetup("scaling fit needs at least 2 distinct pulse numbers".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 / 4.0).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let eta = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - eta * sx) / n;
    Ok(ScalingLaw { t_ref: intercept.exp(), eta })
}

/// Exponential decay toward the fully mixed value,
/// F = 1/3 + A exp(-t/T_dec), and the time where it crosses the classical
/// bound F = 2/3: t_cross = T_dec ln(3A). No crossing exists for A <= 1/3.
pub fn fit_fidelity_crossing(data: &Trace) -> Result<(FitResult, Option<f64>)> {
    check_fidelity_range(data)?;
    let span = data.times.last().unwrap() - data.times.first().unwrap();
    let max = data.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let params = [
        Parameter::new("amplitude", (max - 1.0 / 3.0).max(0.01), 1e-6, 2.0),
        Parameter::new("t_dec", (0.5 * span).max(1e-9), 1e-12, 1e30),
    ];
    let fit = nlls_fit(
        |p, _, t| 1.0 / 3.0 + p[0] * (-t / p[1]).exp(),
        &params,
        data,
    )?;
    let a = fit.param("amplitude");
    let t_dec = fit.param("t_dec");
    let crossing = if a > 1.0 / 3.0 { Some(t_dec * (3.0 * a).ln()) } else { None };
    Ok((fit, crossing))
}

/// Dominant frequency of a uniformly sampled trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimate {
    /// Periodogram bin center (Hz).
    pub raw: f64,
    /// Local sinusoid-fit refinement (Hz).
    pub refined: f64,
    /// Periodogram bin width (Hz).
    pub bin_width: f64,
}

fn check_uniform(data: &Trace) -> Result<f64> {
    if data.len() < 8 {
        return Err(Error::FitSetup("frequency extraction needs at least 8 points".into()));
    }
    let dt = (data.times.last().unwrap() - data.times[0]) / (data.len() - 1) as f64;
    for w in data.times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(Error::FitSetup("frequency extraction needs uniform sampling".into()));
        }
    }
    Ok(dt)
}

fn power_spectrum(values: &[f64]) -> Vec<f64> {
    use rustfft::num_complex::Complex;
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> =
        values.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().take(n / 2).map(|c| c.norm_sqr()).collect()
}

/// Local maxima of the periodogram, strongest first, as (frequency, power).
fn periodogram_peaks(data: &Trace, count: usize) -> Vec<(f64, f64)> {
    let Ok(dt) = check_uniform(data) else { return Vec::new() };
    let power = power_spectrum(&data.values);
    let n = data.len();
    let mut peaks: Vec<(f64, f64)> = (1..power.len().saturating_sub(1))
        .filter(|&k| power[k] >= power[k - 1] && power[k] >= power[k + 1] && power[k] > 0.0)
        .map(|k| (k as f64 / (n as f64 * dt), power[k]))
        .collect();
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    peaks.truncate(count);
    peaks
}

/// Periodogram peak plus a local four-parameter sinusoid refinement.
pub fn extract_frequency(data: &Trace) -> Result<FrequencyEstimate> {
    let dt = check_uniform(data)?;
    let n = data.len();
    let power = power_spectrum(&data.values);
    let variance = data.values.iter().map(|&v| v * v).sum::<f64>() / n as f64
        - (data.values.iter().sum::<f64>() / n as f64).powi(2);
    if variance < 1e-24 {
        return Err(Error::ConstantTrace);
    }
    let (k_max, &p_max) = power
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .ok_or(Error::ConstantTrace)?;
    if p_max <= 0.0 {
        return Err(Error::ConstantTrace);
    }
    let bin_width = 1.0 / (n as f64 * dt);
    let raw = k_max as f64 * bin_width;

    let mean = data.values.iter().sum::<f64>() / n as f64;
    let amp0 = 2.0 * p_max.sqrt() / n as f64;
    let params = [
        Parameter::new("a", mean, -10.0, 10.0),
        Parameter::new("amplitude", amp0, -10.0, 10.0),
        Parameter::new("frequency", raw, (raw - bin_width).max(bin_width * 0.25), raw + bin_width),
        Parameter::new("phi", 0.0, -7.0, 7.0),
    ];
    let fit = nlls_fit(
        |p, _, t| p[0] + p[1] * (std::f64::consts::TAU * p[2] * t + p[3]).cos(),
        &params,
        data,
    )?;
    let refined = if fit.converged { fit.param("frequency") } else { raw };
    Ok(FrequencyEstimate { raw, refined, bin_width })
}
