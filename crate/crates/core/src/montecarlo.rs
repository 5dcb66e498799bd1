//! Seeded Monte Carlo estimation of the expected risks.
//!
//! Trial `i` of point `k` always draws from `trial_rng(master_seed, i, k)`, and
//! results are reduced in trial order, so estimates are bitwise identical for
//! any thread count.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{fit_source, fit_target, source_risk, target_risk, TargetSolver};
use crate::linalg::{trial_rng, Selector};
use crate::model::{
    check_feasible, sample_source_instance, sample_target_instance, sample_uniform_layout, CoordinateLayout,
    ProblemConfig,
};

/// Sample mean with its standard error (sample sd / √trials).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EmpiricalEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub master_seed: u64,
}

impl EmpiricalEstimate {
    pub fn from_samples(samples: &[f64], master_seed: u64) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 trials, got {n}")));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self { mean, stderr: (var / n as f64).sqrt(), trials: n, master_seed })
    }

    /// (mean − reference)/stderr. Differences within floating-point resolution
    /// count as zero, so deterministic points (stderr 0) do not blow up.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = self.mean - reference;
        if diff.abs() <= RESOLUTION * self.mean.abs().max(reference.abs()) {
            0.0
        } else {
            diff / self.stderr
        }
    }

    /// |z| ≤ k.
    pub fn agrees_with(&self, reference: f64, k_sigma: f64) -> bool {
        self.z_score(reference).abs() <= k_sigma
    }
}

/// Relative difference below which an estimate equals its reference exactly.
pub const RESOLUTION: f64 = 1e-12;

/// Exact conditional risks of one trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialRisks {
    pub source: f64,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PointKind {
    /// Layout redrawn uniformly every trial.
    Uniform { p_tilde: usize, p: usize, t: usize },
    /// Fixed layout; only data and noise are redrawn.
    Specific(CoordinateLayout),
}

/// One grid point; `id` enters the per-trial seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub id: u64,
    pub kind: PointKind,
    pub sigma_eta_sq: Option<f64>,
}

impl SweepPoint {
    pub fn uniform(id: u64, p_tilde: usize, p: usize, t: usize) -> Self {
        Self { id, kind: PointKind::Uniform { p_tilde, p, t }, sigma_eta_sq: None }
    }

    pub fn specific(id: u64, layout: CoordinateLayout) -> Self {
        Self { id, kind: PointKind::Specific(layout), sigma_eta_sq: None }
    }

    pub fn with_sigma_eta_sq(mut self, sigma_eta_sq: f64) -> Self {
        self.sigma_eta_sq = Some(sigma_eta_sq);
        self
    }

    pub fn check(&self, d: usize) -> Result<()> {
        match &self.kind {
            PointKind::Uniform { p_tilde, p, t } => check_feasible(d, *p_tilde, *p, *t),
            PointKind::Specific(l) if l.d() != d => {
                Err(Error::InvalidLayout(format!("layout has d = {}, config has d = {d}", l.d())))
            }
            PointKind::Specific(_) => Ok(()),
        }
    }
}

/// Draws a uniform layout, then source and target data; fits both; returns exact risks.
pub fn run_trial_uniform<R: Rng + ?Sized>(
    config: &ProblemConfig,
    p_tilde: usize,
    p: usize,
    t: usize,
    rng: &mut R,
) -> Result<TrialRisks> {
    let layout = sample_uniform_layout(config.d(), p_tilde, p, t, rng)?;
    run_trial_specific(config, &layout, rng)
}

pub fn run_trial_specific<R: Rng + ?Sized>(
    config: &ProblemConfig,
    layout: &CoordinateLayout,
    rng: &mut R,
) -> Result<TrialRisks> {
    if layout.d() != config.d() {
        return Err(Error::InvalidLayout(format!("layout has d = {}, config has d = {}", layout.d(), config.d())));
    }
    let src = sample_source_instance(config, rng);
    let fit = fit_source(&src.z, &src.v, layout.s())?;
    let tgt = sample_target_instance(config, rng);
    let beta_hat = fit_target(&tgt.x, &tgt.y, &fit, layout)?.beta_hat;
    Ok(TrialRisks {
        source: source_risk(&fit.theta_hat, &src.theta, config.sigma_xi_sq())?,
        target: target_risk(&beta_hat, config.beta(), config.sigma_eps_sq())?,
    })
}

/// Source risk alone, with S uniform of size p̃.
pub fn run_source_trial<R: Rng + ?Sized>(config: &ProblemConfig, p_tilde: usize, rng: &mut R) -> Result<f64> {
    let layout = sample_uniform_layout(config.d(), p_tilde, 0, 0, rng)?;
    let src = sample_source_instance(config, rng);
    let fit = fit_source(&src.z, &src.v, layout.s())?;
    source_risk(&fit.theta_hat, &src.theta, config.sigma_xi_sq())
}

/// Runs `f(trial_index)` for every trial and returns the results in trial
/// order. `threads == 0` uses rayon's default pool; `1` runs inline.
pub fn run_trials<T, F>(trials: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    if threads == 1 {
        return (0..trials as u64).map(f).collect();
    }
    let work = || (0..trials as u64).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    if threads == 0 {
        return work();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
    pool.install(work)
}

/// Source and target estimates from the same trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskEstimates {
    pub source: EmpiricalEstimate,
    pub target: EmpiricalEstimate,
}

pub fn estimate_mean_risks(
    config: &ProblemConfig,
    point: &SweepPoint,
    trials: usize,
    master_seed: u64,
    threads: usize,
) -> Result<RiskEstimates> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 trials, got {trials}")));
    }
    point.check(config.d())?;
    let owned;
    let config = match point.sigma_eta_sq {
        Some(s) => {
            owned = config.with_sigma_eta_sq(s)?;
            &owned
        }
        None => config,
    };
    let risks = run_trials(trials, threads, |i| {
        let mut rng = trial_rng(master_seed, i, point.id);
        match &point.kind {
            PointKind::Uniform { p_tilde, p, t } => run_trial_uniform(config, *p_tilde, *p, *t, &mut rng),
            PointKind::Specific(layout) => run_trial_specific(config, layout, &mut rng),
        }
    })?;
    let src: Vec<f64> = risks.iter().map(|r| r.source).collect();
    let tgt: Vec<f64> = risks.iter().map(|r| r.target).collect();
    Ok(RiskEstimates {
        source: EmpiricalEstimate::from_samples(&src, master_seed)?,
        target: EmpiricalEstimate::from_samples(&tgt, master_seed)?,
    })
}

/// Mean target risk at a grid point.
pub fn estimate_mean_risk(
    config: &ProblemConfig,
    point: &SweepPoint,
    trials: usize,
    master_seed: u64,
    threads: usize,
) -> Result<EmpiricalEstimate> {
    Ok(estimate_mean_risks(config, point, trials, master_seed, threads)?.target)
}

/// Mean source risk over uniform S of size p̃ (seed point index = p̃).
pub fn estimate_source_risk(
    config: &ProblemConfig,
    p_tilde: usize,
    trials: usize,
    master_seed: u64,
    threads: usize,
) -> Result<EmpiricalEstimate> {
    check_feasible(config.d(), p_tilde, 0, 0)?;
    let risks = run_trials(trials, threads, |i| {
        run_source_trial(config, p_tilde, &mut trial_rng(master_seed, i, p_tilde as u64))
    })?;
    EmpiricalEstimate::from_samples(&risks, master_seed)
}

/// (‖β‖²/d)·(1 + p/(n − p − 1)) or (‖β‖²/d)·(1 + n/(p − n − 1)).
fn alpha(beta_norm_sq: f64, d: usize, p: usize, n: usize) -> f64 {
    let (pf, nf) = (p as f64, n as f64);
    let base = beta_norm_sq / d as f64;
    if p + 2 <= n {
        base * (1.0 + pf / (nf - pf - 1.0))
    } else {
        base * (1.0 + nf / (pf - nf - 1.0))
    }
}

/// Values of p entering the empirical ΔE average: 1 ≤ p ≤ d − m, outside the target band.
pub fn delta_transfer_p_values(d: usize, n_tgt: usize, m: usize) -> Vec<usize> {
    (1..=d.saturating_sub(m)).filter(|&p| !(p + 1 >= n_tgt && p <= n_tgt + 1)).collect()
}

/// Empirical ΔE_transfer at p̃ with m transferred parameters.
///
/// Each trial draws S, T (|T| = m), source and target data once, then walks a
/// random ordering of [d] \ T: the first p coordinates form F. For every
/// admissible p the target is fitted with T transferred and with T zeroed
/// (same data, same F), and the normalized difference
/// (E(t=m) − E(t=0))/(m·α(p)) is averaged over p. The per-trial averages are
/// i.i.d., which gives the standard error. The mean estimates ΔE·d/‖β‖².
pub fn empirical_delta_transfer(
    config: &ProblemConfig,
    p_tilde: usize,
    m: usize,
    trials: usize,
    master_seed: u64,
) -> Result<EmpiricalEstimate> {
    empirical_delta_transfer_with_threads(config, p_tilde, m, trials, master_seed, 0)
}

pub fn empirical_delta_transfer_with_threads(
    config: &ProblemConfig,
    p_tilde: usize,
    m: usize,
    trials: usize,
    master_seed: u64,
    threads: usize,
) -> Result<EmpiricalEstimate> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if p_tilde < m {
        return Err(Error::InvalidArgument(format!("p̃ = {p_tilde} is smaller than m = {m}")));
    }
    check_feasible(config.d(), p_tilde, 0, m)?;
    let d = config.d();
    let n = config.n_tgt();
    let ps = delta_transfer_p_values(d, n, m);
    if ps.is_empty() {
        return Err(Error::Infeasible("no admissible p for the empirical ΔE average".into()));
    }
    let b2 = config.beta_norm_sq();
    let empty = Selector::empty(d);
    let per_trial = run_trials(trials, threads, |i| {
        let mut rng = trial_rng(master_seed, i, p_tilde as u64);
        let layout = sample_uniform_layout(d, p_tilde, 0, m, &mut rng)?;
        let src = sample_source_instance(config, &mut rng);
        let fit = fit_source(&src.z, &src.v, layout.s())?;
        let tgt = sample_target_instance(config, &mut rng);
        let mut order: Vec<usize> = layout.t().complement().coords().to_vec();
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        for &p in &ps {
            let f = Selector::from_unsorted(order[..p].to_vec(), d)?;
            let solver = TargetSolver::new(&tgt.x, &tgt.y, &f)?;
            let with = solver.fit(&fit, layout.t())?;
            let without = solver.fit(&fit, &empty)?;
            let diff = target_risk(&with.beta_hat, config.beta(), 0.0)? - target_risk(&without.beta_hat, config.beta(), 0.0)?;
            acc += diff / (m as f64 * alpha(b2, d, p, n));
        }
        Ok(acc / ps.len() as f64)
    })?;
    EmpiricalEstimate::from_samples(&per_trial, master_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic;
    use crate::linalg::seeded_rng;
    use crate::model::{make_beta, BetaShape, RelationOperator};
    use approx::assert_relative_eq;

    #[test]
    fn estimate_from_samples() {
        let e = EmpiricalEstimate::from_samples(&[1.0, 3.0], 5).unwrap();
        assert_eq!(e.mean, 2.0);
        assert_relative_eq!(e.stderr, 1.0);
        assert_eq!((e.trials, e.master_seed), (2, 5));
        assert!(EmpiricalEstimate::from_samples(&[1.0], 0).is_err());
        assert!(e.agrees_with(4.9, 3.0));
        assert!(!e.agrees_with(5.1, 3.0));
        assert_relative_eq!(e.z_score(0.0), 2.0);
    }

    #[test]
    fn deterministic_estimates_compare_at_float_resolution() {
        let e = EmpiricalEstimate::from_samples(&[83.99999999999999; 4], 0).unwrap();
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.z_score(84.00000000000003), 0.0);
        assert!(e.agrees_with(84.00000000000003, 3.0));
        assert!(!e.agrees_with(84.001, 3.0));
    }

    #[test]
    fn noiseless_full_recovery_chain() {
        let beta = make_beta(&BetaShape::Linear, 6).unwrap();
        let cfg = ProblemConfig::new(6, 10, 8, 0.0, 0.0, 0.0, beta, RelationOperator::IdentityScale(1.0)).unwrap();
        let r = run_trial_uniform(&cfg, 6, 6, 0, &mut seeded_rng(1)).unwrap();
        assert!(r.source.abs() < 1e-18 && r.target.abs() < 1e-18, "{r:?}");
        let l = CoordinateLayout::from_sets(6, (1..=6).collect(), (1..=6).collect(), vec![]).unwrap();
        let r = run_trial_specific(&cfg, &l, &mut seeded_rng(2)).unwrap();
        assert!(r.source.abs() < 1e-18 && r.target.abs() < 1e-18, "{r:?}");
    }

    #[test]
    fn trials_are_seed_reproducible() {
        let cfg = ProblemConfig::reference();
        let a = run_trial_uniform(&cfg, 60, 30, 10, &mut seeded_rng(9)).unwrap();
        let b = run_trial_uniform(&cfg, 60, 30, 10, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_trial_mean_is_hand_average() {
        let cfg = ProblemConfig::reference();
        let point = SweepPoint::uniform(3, 80, 10, 16);
        let est = estimate_mean_risk(&cfg, &point, 2, 77, 1).unwrap();
        let r0 = run_trial_uniform(&cfg, 80, 10, 16, &mut trial_rng(77, 0, 3)).unwrap().target;
        let r1 = run_trial_uniform(&cfg, 80, 10, 16, &mut trial_rng(77, 1, 3)).unwrap().target;
        assert_eq!(est.mean, (r0 + r1) / 2.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = ProblemConfig::reference();
        let point = SweepPoint::uniform(1, 70, 40, 8).with_sigma_eta_sq(0.5);
        let a = estimate_mean_risks(&cfg, &point, 24, 5, 1).unwrap();
        let b = estimate_mean_risks(&cfg, &point, 24, 5, 8).unwrap();
        let c = estimate_mean_risks(&cfg, &point, 24, 5, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let x = empirical_delta_transfer_with_threads(&cfg, 80, 5, 4, 3, 1).unwrap();
        let y = empirical_delta_transfer_with_threads(&cfg, 80, 5, 4, 3, 3).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn sigma_override_applies() {
        let cfg = ProblemConfig::reference();
        let base = SweepPoint::uniform(0, 80, 0, 40);
        let a = estimate_mean_risk(&cfg, &base, 8, 1, 1).unwrap();
        let b = estimate_mean_risk(&cfg, &base.clone().with_sigma_eta_sq(2.0), 8, 1, 1).unwrap();
        assert_ne!(a.mean, b.mean);
    }

    #[test]
    fn invalid_requests() {
        let cfg = ProblemConfig::reference();
        assert!(estimate_mean_risk(&cfg, &SweepPoint::uniform(0, 80, 0, 0), 1, 0, 1).is_err());
        assert!(estimate_mean_risk(&cfg, &SweepPoint::uniform(0, 10, 75, 10), 4, 0, 1).is_err());
        assert!(empirical_delta_transfer(&cfg, 4, 5, 4, 0).is_err());
        assert!(empirical_delta_transfer(&cfg, 80, 0, 4, 0).is_err());
    }

    #[test]
    fn p_values_for_reference_dimensions() {
        let ps = delta_transfer_p_values(80, 20, 5);
        assert_eq!(ps.len(), 72);
        assert!(!ps.contains(&19) && !ps.contains(&20) && !ps.contains(&21));
        assert_eq!((ps[0], *ps.last().unwrap()), (1, 75));
    }

    // p = 0 with t transferred parameters: cheap, so 2000 trials are affordable.
    #[test]
    fn pure_transfer_matches_closed_form() {
        let cfg = ProblemConfig::reference();
        let est = estimate_mean_risk(&cfg, &SweepPoint::uniform(0, 80, 0, 40), 2000, 11, 0).unwrap();
        let exact = analytic::target_error_no_learning(&cfg, 80, 40).unwrap().to_f64();
        assert!(est.agrees_with(exact, 3.0), "{est:?} vs {exact}");
    }

    #[test]
    fn identical_tasks_empirical_delta() {
        // noiseless identical tasks with an underparameterized source: ΔE = −κ/d
        let d = 30;
        let beta = make_beta(&BetaShape::Linear, d).unwrap();
        let cfg = ProblemConfig::new(d, 40, 10, 0.0, 1.0, 0.0, beta, RelationOperator::IdentityScale(1.0)).unwrap();
        let est = empirical_delta_transfer(&cfg, d, 5, 200, 4).unwrap();
        let expected = analytic::delta_transfer_uniform(&cfg, d).unwrap().to_f64();
        assert_relative_eq!(expected, -1.0, max_relative = 1e-12);
        assert!(est.agrees_with(expected, 3.0), "{est:?}");
    }
}
