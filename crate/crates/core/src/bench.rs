//! Monte-Carlo studies: per-trial lambda sweep, order selection and
//! validation scoring for the nuclear-norm method and the classical
//! baseline, aggregated into a reproducible report.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{n4sid_baseline, BaselineConfig};
use crate::datagen::{
    open_loop_batch, random_stable_system, sign_input, simulate_closed_loop, ClosedLoopConfig,
    OpenLoopConfig,
};
use crate::error::{N2sidError, Result};
use crate::model::StateSpaceModel;
use crate::pipeline::{sweep_lambda, validation_fit, IdentifyConfig, OrderPolicy};
pub use crate::pipeline::select_lambda;
use crate::solver::SolverOptions;

/// Wall-clock stage timings in seconds. Excluded from the canonical report
/// hash so reruns stay hash-identical.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrialTimings {
    pub solve_s: f64,
    pub extract_s: f64,
    pub baseline_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub trial_seed: u64,
    pub n2sid_fit: Option<f64>,
    pub n4sid_fit: Option<f64>,
    pub n2sid_order: Option<usize>,
    pub n4sid_order: Option<usize>,
    /// Eigenvalues of the identified A matrices as (re, im) pairs.
    pub n2sid_eigs: Vec<(f64, f64)>,
    pub n4sid_eigs: Vec<(f64, f64)>,
    pub lambda_selected: Option<f64>,
    /// Identification and validation batches both methods consumed.
    pub ident_hash: String,
    pub valid_hash: String,
    /// Negative validation fits are kept in the data and only flagged.
    pub outlier: bool,
    pub error: Option<String>,
    pub timings: TrialTimings,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Summary {
    pub completed_trials: usize,
    pub n2sid_mean_fit: f64,
    pub n4sid_mean_fit: f64,
    pub n2sid_median_fit: f64,
    pub n4sid_median_fit: f64,
    pub n2sid_mean_order: f64,
    pub n4sid_mean_order: f64,
    /// Fraction of completed trials where the nuclear-norm fit is strictly higher.
    pub win_rate: f64,
    pub loss_rate: f64,
    pub tie_rate: f64,
    /// Mean matched distance of the eigenvalue clouds to the true
    /// eigenvalues; populated by the closed-loop study.
    pub n2sid_eig_spread: Option<f64>,
    pub n4sid_eig_spread: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub study: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub trials: Vec<TrialResult>,
    pub summary: Summary,
}

impl BenchReport {
    /// Report serialization with timings zeroed; the hash of this form is the
    /// determinism contract.
    pub fn canonical_json(&self) -> String {
        let mut clone = self.clone();
        for t in &mut clone.trials {
            t.timings = TrialTimings::default();
        }
        serde_json::to_string(&clone).expect("report serializes")
    }

    pub fn canonical_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_json().as_bytes());
        format!("{:x}", h.finalize())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(master: u64, trial: usize, purpose: u64) -> u64 {
    splitmix64(master ^ splitmix64((trial as u64) << 8 | purpose))
}

fn eigs_of(model: &StateSpaceModel) -> Vec<(f64, f64)> {
    model.eigenvalues().iter().map(|z| (z.re, z.im)).collect()
}

/// Mean matched distance between an eigenvalue pair and the target pair,
/// minimized over the assignment.
pub fn eig_pair_distance(eigs: &[(f64, f64)], truth: &[(f64, f64)]) -> f64 {
    if eigs.len() != 2 || truth.len() != 2 {
        return f64::NAN;
    }
    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let direct = d(eigs[0], truth[0]) + d(eigs[1], truth[1]);
    let crossed = d(eigs[0], truth[1]) + d(eigs[1], truth[0]);
    direct.min(crossed) / 2.0
}

/// Shared study parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub s: usize,
    pub sketch_width: Option<usize>,
    pub lambda_grid: Vec<f64>,
    pub order_cap: usize,
    pub solver: SolverOptions,
    /// Select lambda on validation data instead of identification data.
    pub select_on_validation: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            s: 15,
            sketch_width: Some(22),
            lambda_grid: crate::solver::default_lambda_grid(),
            order_cap: 10,
            solver: SolverOptions::default(),
            select_on_validation: false,
        }
    }
}

fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("N2SID_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                builder = builder.num_threads(n);
            }
        }
    }
    builder.build().expect("thread pool")
}

struct MethodOutcome {
    fit: f64,
    order: usize,
    eigs: Vec<(f64, f64)>,
    lambda: Option<f64>,
}

fn run_n2sid(
    io: &crate::model::IoBatch,
    valid: &crate::model::IoBatch,
    study: &StudyConfig,
    order: OrderPolicy,
    sketch_seed: u64,
) -> Result<MethodOutcome> {
    let cfg = IdentifyConfig {
        s: study.s,
        lambda_grid: study.lambda_grid.clone(),
        order,
        sketch_width: study.sketch_width,
        sketch_seed,
        solver: study.solver.clone(),
        output_only: false,
    };
    let points = sweep_lambda(io, &cfg)?;
    let chosen = if study.select_on_validation {
        let mut best = &points[0];
        for pt in &points {
            let f = validation_fit(&pt.identified.model, valid)?;
            let bf = validation_fit(&best.identified.model, valid)?;
            if f >= bf {
                best = pt;
            }
        }
        best
    } else {
        select_lambda(&points)?
    };
    let fit = validation_fit(&chosen.identified.model, valid)?;
    Ok(MethodOutcome {
        fit,
        order: chosen.identified.order,
        eigs: eigs_of(&chosen.identified.model),
        lambda: Some(chosen.lambda_over_n),
    })
}

fn run_baseline(
    io: &crate::model::IoBatch,
    valid: &crate::model::IoBatch,
    study: &StudyConfig,
    fixed_order: Option<usize>,
) -> Result<MethodOutcome> {
    let res = n4sid_baseline(
        io,
        &BaselineConfig {
            s: study.s,
            order: fixed_order,
            order_cap: study.order_cap,
        },
    )?;
    let fit = validation_fit(&res.model, valid)?;
    Ok(MethodOutcome {
        fit,
        order: res.order,
        eigs: eigs_of(&res.model),
        lambda: None,
    })
}

fn make_trial(
    trial: usize,
    trial_seed: u64,
    ident: &crate::model::IoBatch,
    valid: &crate::model::IoBatch,
    n2sid: Result<MethodOutcome>,
    baseline: Result<MethodOutcome>,
    timings: TrialTimings,
) -> TrialResult {
    let mut result = TrialResult {
        trial,
        trial_seed,
        n2sid_fit: None,
        n4sid_fit: None,
        n2sid_order: None,
        n4sid_order: None,
        n2sid_eigs: Vec::new(),
        n4sid_eigs: Vec::new(),
        lambda_selected: None,
        ident_hash: ident.content_hash(),
        valid_hash: valid.content_hash(),
        outlier: false,
        error: None,
        timings,
    };
    match n2sid {
        Ok(out) => {
            result.n2sid_fit = Some(out.fit);
            result.n2sid_order = Some(out.order);
            result.n2sid_eigs = out.eigs;
            result.lambda_selected = out.lambda;
        }
        Err(e) => result.error = Some(format!("n2sid: {e}")),
    }
    match baseline {
        Ok(out) => {
            result.n4sid_fit = Some(out.fit);
            result.n4sid_order = Some(out.order);
            result.n4sid_eigs = out.eigs;
        }
        Err(e) => {
            let msg = format!("baseline: {e}");
            result.error = Some(match result.error.take() {
                Some(prev) => format!("{prev}; {msg}"),
                None => msg,
            });
        }
    }
    result.outlier = result.n2sid_fit.map_or(false, |f| f < 0.0)
        || result.n4sid_fit.map_or(false, |f| f < 0.0);
    result
}

fn summarize(trials: &[TrialResult], closed_loop: bool) -> Summary {
    let completed: Vec<&TrialResult> = trials
        .iter()
        .filter(|t| t.n2sid_fit.is_some() && t.n4sid_fit.is_some())
        .collect();
    let mut summary = Summary {
        completed_trials: completed.len(),
        ..Summary::default()
    };
    if completed.is_empty() {
        return summary;
    }
    let mean = |it: &mut dyn Iterator<Item = f64>| -> f64 {
        let v: Vec<f64> = it.collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    summary.n2sid_mean_fit = mean(&mut completed.iter().map(|t| t.n2sid_fit.unwrap()));
    summary.n4sid_mean_fit = mean(&mut completed.iter().map(|t| t.n4sid_fit.unwrap()));
    summary.n2sid_median_fit = median(completed.iter().map(|t| t.n2sid_fit.unwrap()).collect());
    summary.n4sid_median_fit = median(completed.iter().map(|t| t.n4sid_fit.unwrap()).collect());
    summary.n2sid_mean_order =
        mean(&mut completed.iter().map(|t| t.n2sid_order.unwrap() as f64));
    summary.n4sid_mean_order =
        mean(&mut completed.iter().map(|t| t.n4sid_order.unwrap() as f64));
    let n = completed.len() as f64;
    let wins = completed
        .iter()
        .filter(|t| t.n2sid_fit.unwrap() > t.n4sid_fit.unwrap())
        .count() as f64;
    let losses = completed
        .iter()
        .filter(|t| t.n2sid_fit.unwrap() < t.n4sid_fit.unwrap())
        .count() as f64;
    summary.win_rate = wins / n;
    summary.loss_rate = losses / n;
    summary.tie_rate = 1.0 - summary.win_rate - summary.loss_rate;
    if closed_loop {
        let truth = [(0.0, 0.0), (0.7, 0.0)];
        summary.n2sid_eig_spread = Some(mean(
            &mut completed
                .iter()
                .map(|t| eig_pair_distance(&t.n2sid_eigs, &truth))
                .filter(|d| d.is_finite()),
        ));
        summary.n4sid_eig_spread = Some(mean(
            &mut completed
                .iter()
                .map(|t| eig_pair_distance(&t.n4sid_eigs, &truth))
                .filter(|d| d.is_finite()),
        ));
    }
    summary
}

/// Open-loop study: fresh random systems per trial, auto order for both
/// methods, validation on a second batch from the same model.
pub fn run_open_loop_study(
    trials: usize,
    config: &OpenLoopConfig,
    study: &StudyConfig,
    master_seed: u64,
) -> Result<BenchReport> {
    if trials == 0 {
        return Err(N2sidError::Config("need at least one trial".into()));
    }
    config.validate()?;
    let pool = thread_pool();
    let results: Vec<TrialResult> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|trial| {
                let seed_model = derive_seed(master_seed, trial, 1);
                let seed_ident = derive_seed(master_seed, trial, 2);
                let seed_valid = derive_seed(master_seed, trial, 3);
                let seed_sketch = derive_seed(master_seed, trial, 4);
                let mut timings = TrialTimings::default();
                let prep = (|| -> Result<_> {
                    let model = random_stable_system(config, seed_model)?;
                    let (ident, _, _) = open_loop_batch(&model, config, seed_ident)?;
                    let (valid, _, _) = open_loop_batch(&model, config, seed_valid)?;
                    Ok((ident, valid))
                })();
                let (ident, valid) = match prep {
                    Ok(pair) => pair,
                    Err(e) => {
                        return TrialResult {
                            trial,
                            trial_seed: seed_model,
                            n2sid_fit: None,
                            n4sid_fit: None,
                            n2sid_order: None,
                            n4sid_order: None,
                            n2sid_eigs: Vec::new(),
                            n4sid_eigs: Vec::new(),
                            lambda_selected: None,
                            ident_hash: String::new(),
                            valid_hash: String::new(),
                            outlier: false,
                            error: Some(format!("datagen: {e}")),
                            timings: TrialTimings::default(),
                        }
                    }
                };
                let t0 = Instant::now();
                let n2 = run_n2sid(
                    &ident,
                    &valid,
                    study,
                    OrderPolicy::Auto {
                        cap: study.order_cap,
                    },
                    seed_sketch,
                );
                timings.solve_s = t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let base = run_baseline(&ident, &valid, study, None);
                timings.baseline_s = t1.elapsed().as_secs_f64();
                make_trial(trial, seed_model, &ident, &valid, n2, base, timings)
            })
            .collect()
    });
    let summary = summarize(&results, false);
    Ok(BenchReport {
        study: "open-loop".into(),
        master_seed,
        config: serde_json::json!({
            "open_loop": config,
            "study": study,
        }),
        trials: results,
        summary,
    })
}

/// Closed-loop study: fixed plant, reference and noise redrawn per trial,
/// fixed order 2 for both methods.
pub fn run_closed_loop_study(
    trials: usize,
    config: &ClosedLoopConfig,
    study: &StudyConfig,
    master_seed: u64,
) -> Result<BenchReport> {
    if trials == 0 {
        return Err(N2sidError::Config("need at least one trial".into()));
    }
    let pool = thread_pool();
    let results: Vec<TrialResult> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|trial| {
                let seed_ref_i = derive_seed(master_seed, trial, 11);
                let seed_noise_i = derive_seed(master_seed, trial, 12);
                let seed_ref_v = derive_seed(master_seed, trial, 13);
                let seed_noise_v = derive_seed(master_seed, trial, 14);
                let seed_sketch = derive_seed(master_seed, trial, 15);
                let mut timings = TrialTimings::default();
                let prep = (|| -> Result<_> {
                    let r_i = sign_input(1, config.num_samples, seed_ref_i);
                    let (ident, _) = simulate_closed_loop(config, &r_i, seed_noise_i)?;
                    let r_v = sign_input(1, config.num_samples, seed_ref_v);
                    let (valid, _) = simulate_closed_loop(config, &r_v, seed_noise_v)?;
                    Ok((ident, valid))
                })();
                let (ident, valid) = match prep {
                    Ok(pair) => pair,
                    Err(e) => {
                        return TrialResult {
                            trial,
                            trial_seed: seed_ref_i,
                            n2sid_fit: None,
                            n4sid_fit: None,
                            n2sid_order: None,
                            n4sid_order: None,
                            n2sid_eigs: Vec::new(),
                            n4sid_eigs: Vec::new(),
                            lambda_selected: None,
                            ident_hash: String::new(),
                            valid_hash: String::new(),
                            outlier: false,
                            error: Some(format!("datagen: {e}")),
                            timings: TrialTimings::default(),
                        }
                    }
                };
                let t0 = Instant::now();
                let n2 = run_n2sid(&ident, &valid, study, OrderPolicy::Fixed(2), seed_sketch);
                timings.solve_s = t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let base = run_baseline(&ident, &valid, study, Some(2));
                timings.baseline_s = t1.elapsed().as_secs_f64();
                make_trial(trial, seed_ref_i, &ident, &valid, n2, base, timings)
            })
            .collect()
    });
    let summary = summarize(&results, true);
    Ok(BenchReport {
        study: "closed-loop".into(),
        master_seed,
        config: serde_json::json!({
            "closed_loop": config,
            "study": study,
        }),
        trials: results,
        summary,
    })
}

/// Fit-vs-fit scatter rows as CSV; negative-fit outliers are flagged, not
/// dropped.
pub fn scatter_csv(report: &BenchReport) -> String {
    let mut out = String::from("trial,n2sid_fit,n4sid_fit,outlier\n");
    for t in &report.trials {
        if let (Some(a), Some(b)) = (t.n2sid_fit, t.n4sid_fit) {
            out.push_str(&format!("{},{},{},{}\n", t.trial, a, b, t.outlier));
        }
    }
    out
}

/// Eigenvalue cloud rows as CSV.
pub fn eigs_csv(report: &BenchReport) -> String {
    let mut out = String::from("trial,method,re,im\n");
    for t in &report.trials {
        for (re, im) in &t.n2sid_eigs {
            out.push_str(&format!("{},n2sid,{},{}\n", t.trial, re, im));
        }
        for (re, im) in &t.n4sid_eigs {
            out.push_str(&format!("{},n4sid,{},{}\n", t.trial, re, im));
        }
    }
    out
}

fn svg_header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

/// Fit-vs-fit scatter with the diagonal; outliers are filtered here (plot
/// emission only) and the count noted in the title.
pub fn scatter_svg(report: &BenchReport) -> String {
    let pts: Vec<(f64, f64)> = report
        .trials
        .iter()
        .filter(|t| !t.outlier)
        .filter_map(|t| Some((t.n4sid_fit?, t.n2sid_fit?)))
        .collect();
    let dropped = report.trials.iter().filter(|t| t.outlier).count();
    let (w, h, mlo) = (440.0, 440.0, 50.0);
    let lo = pts
        .iter()
        .flat_map(|p| [p.0, p.1])
        .fold(100.0f64, f64::min)
        .min(0.0);
    let span = (100.0 - lo).max(1e-9);
    let sx = |v: f64| mlo + (v - lo) / span * (w - 2.0 * mlo);
    let sy = |v: f64| h - mlo - (v - lo) / span * (h - 2.0 * mlo);
    let mut svg = svg_header(w, h);
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">validation fit, {} ({} outliers hidden)</text>\n",
        w / 2.0,
        report.study,
        dropped
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n",
        sx(lo),
        sy(lo),
        sx(100.0),
        sy(100.0)
    ));
    for (x, y) in &pts {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.7\"/>\n",
            sx(*x),
            sy(*y)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">baseline fit</text>\n",
        w / 2.0,
        h - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"11\" transform=\"rotate(-90 14 {})\">nuclear-norm fit</text>\n",
        h / 2.0,
        h / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Eigenvalue clouds of both methods with the unit circle.
pub fn eigs_svg(report: &BenchReport) -> String {
    let (w, h) = (440.0, 440.0);
    let scale = 140.0;
    let cx = w / 2.0;
    let cy = h / 2.0;
    let mut svg = svg_header(w, h);
    svg.push_str(&format!(
        "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{scale}\" fill=\"none\" stroke=\"gray\"/>\n"
    ));
    for t in &report.trials {
        for (re, im) in &t.n2sid_eigs {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n",
                cx + re * scale,
                cy - im * scale
            ));
        }
        for (re, im) in &t.n4sid_eigs {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"indianred\" fill-opacity=\"0.6\"/>\n",
                cx + re * scale,
                cy - im * scale
            ));
        }
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">eigenvalues of A (blue: nuclear norm, red: baseline)</text>\n",
        w / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}
