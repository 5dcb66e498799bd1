//! Closed-form expected generalization errors and transfer-usefulness thresholds.
//!
//! Every formula has three branches: underparameterized (k ≤ N − 2), the
//! forbidden band k ∈ {N − 1, N, N + 1} where the expectation is infinite, and
//! overparameterized (k ≥ N + 2). Infinity is a value here, not an error.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{Selector, Vector};
use crate::model::{check_feasible, task_scalars, CoordinateLayout, LayoutScalars, ProblemConfig};

/// Which forbidden band made an error infinite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    /// p ∈ {n − 1, n, n + 1}.
    Target,
    /// p̃ ∈ {ñ − 1, ñ, ñ + 1}.
    Source,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtendedError {
    Finite(f64),
    Infinite(Band),
}

impl ExtendedError {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedError::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            ExtendedError::Finite(v) => Some(*v),
            ExtendedError::Infinite(_) => None,
        }
    }

    /// Finite value, or +∞.
    pub fn to_f64(&self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }

    pub fn band(&self) -> Option<Band> {
        match self {
            ExtendedError::Finite(_) => None,
            ExtendedError::Infinite(b) => Some(*b),
        }
    }
}

impl fmt::Display for ExtendedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedError::Finite(v) => write!(f, "{v}"),
            ExtendedError::Infinite(_) => f.write_str("inf"),
        }
    }
}

/// Sorted, disjoint inclusive integer intervals of p̃.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BeneficialRange {
    pub intervals: Vec<(usize, usize)>,
}

impl BeneficialRange {
    pub fn contains(&self, p_tilde: usize) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= p_tilde && p_tilde <= hi)
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = usize> + '_ {
        self.intervals.iter().flat_map(|&(lo, hi)| lo..=hi)
    }
}

fn in_band(k: usize, n: usize) -> bool {
    k + 1 >= n && k <= n + 1
}

// p = 0 has nothing to fit, so it never sits in the target band
// (relevant only for n = 1).
fn target_in_band(p: usize, n: usize) -> bool {
    p > 0 && in_band(p, n)
}

fn check_p_tilde(config: &ProblemConfig, p_tilde: usize) -> Result<()> {
    if p_tilde == 0 || p_tilde > config.d() {
        return Err(Error::InvalidArgument(format!("p̃ = {p_tilde} outside [1, {}]", config.d())));
    }
    Ok(())
}

fn kappa_rho(config: &ProblemConfig) -> Result<(f64, f64)> {
    let s = task_scalars(config, None)?;
    Ok((s.kappa, s.rho))
}

// c = E[Z_S⁺Z_S] scale: 1 below ñ, ñ/p̃ above.
fn shrink(p_tilde: usize, n_src: usize) -> f64 {
    if p_tilde <= n_src {
        1.0
    } else {
        n_src as f64 / p_tilde as f64
    }
}

/// Source error for a fixed S and realized θ.
pub fn source_error_deterministic_s(config: &ProblemConfig, s: &Selector, theta: &Vector) -> Result<ExtendedError> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("S must be nonempty".into()));
    }
    if s.ambient_dim() != config.d() || theta.len() != config.d() {
        return Err(Error::DimensionMismatch("S and θ must live in dimension d".into()));
    }
    let (pt, n) = (s.len(), config.n_src());
    if in_band(pt, n) {
        return Ok(ExtendedError::Infinite(Band::Source));
    }
    let theta_s = s.norm_sq(theta)?;
    let theta_sc = s.complement().norm_sq(theta)?;
    let miss = theta_sc + config.sigma_xi_sq();
    let (ptf, nf) = (pt as f64, n as f64);
    Ok(ExtendedError::Finite(if pt + 2 <= n {
        (nf - 1.0) / (nf - ptf - 1.0) * miss
    } else {
        (ptf - 1.0) / (ptf - nf - 1.0) * miss + (ptf - nf) / ptf * theta_s
    }))
}

/// Source error averaged over uniform S of size p̃ and over η.
pub fn expected_source_error(config: &ProblemConfig, p_tilde: usize) -> Result<ExtendedError> {
    check_p_tilde(config, p_tilde)?;
    let (kappa, _) = kappa_rho(config)?;
    let n = config.n_src();
    if in_band(p_tilde, n) {
        return Ok(ExtendedError::Infinite(Band::Source));
    }
    let (d, pt, nf) = (config.d() as f64, p_tilde as f64, n as f64);
    let miss = (d - pt) / d * kappa + config.sigma_xi_sq();
    Ok(ExtendedError::Finite(if p_tilde + 2 <= n {
        (nf - 1.0) / (nf - pt - 1.0) * miss
    } else {
        (pt - 1.0) / (pt - nf - 1.0) * miss + (pt - nf) / d * kappa
    }))
}

/// ΔE_transfer written through a source error value:
/// (1/p̃)(E_src − σ_ξ² − κ) − 2(κ/d)(ρ − 1)·c.
pub fn delta_transfer_from_source_error(
    config: &ProblemConfig,
    p_tilde: usize,
    source_error: ExtendedError,
) -> Result<ExtendedError> {
    check_p_tilde(config, p_tilde)?;
    let (kappa, rho) = kappa_rho(config)?;
    let Some(e_src) = source_error.value() else {
        return Ok(ExtendedError::Infinite(Band::Source));
    };
    let (d, pt) = (config.d() as f64, p_tilde as f64);
    let c = shrink(p_tilde, config.n_src());
    Ok(ExtendedError::Finite(
        (e_src - config.sigma_xi_sq() - kappa) / pt - 2.0 * kappa / d * (rho - 1.0) * c,
    ))
}

/// Expected change in target error per transferred parameter (uniform layouts).
pub fn delta_transfer_uniform(config: &ProblemConfig, p_tilde: usize) -> Result<ExtendedError> {
    check_p_tilde(config, p_tilde)?;
    let (kappa, rho) = kappa_rho(config)?;
    let n = config.n_src();
    if in_band(p_tilde, n) {
        return Ok(ExtendedError::Infinite(Band::Source));
    }
    let (d, pt, nf) = (config.d() as f64, p_tilde as f64, n as f64);
    // d + dΓ⁻¹, written so that σ_ξ² = 0 is fine
    let a = d + d * config.sigma_xi_sq() / kappa;
    Ok(ExtendedError::Finite(if p_tilde + 2 <= n {
        kappa / d * (1.0 - 2.0 * rho + (a - pt) / (nf - pt - 1.0))
    } else {
        kappa / d * (nf / pt) * (1.0 - 2.0 * rho + (a - pt) / (pt - nf - 1.0))
    }))
}

/// Expected target error over uniform layouts with |S| = p̃, |F| = p, |T| = t.
pub fn expected_target_error_uniform(config: &ProblemConfig, p_tilde: usize, p: usize, t: usize) -> Result<ExtendedError> {
    check_feasible(config.d(), p_tilde, p, t)?;
    let n = config.n_tgt();
    if target_in_band(p, n) {
        return Ok(ExtendedError::Infinite(Band::Target));
    }
    let delta = if t == 0 {
        0.0
    } else {
        match delta_transfer_uniform(config, p_tilde)? {
            ExtendedError::Finite(v) => v,
            inf => return Ok(inf),
        }
    };
    let b2 = config.beta_norm_sq();
    let (d, pf, nf) = (config.d() as f64, p as f64, n as f64);
    let bracket = (d - pf) / d * b2 + config.sigma_eps_sq() + t as f64 * delta;
    Ok(ExtendedError::Finite(if p == 0 {
        bracket
    } else if p + 2 <= n {
        (nf - 1.0) / (nf - pf - 1.0) * bracket
    } else {
        (pf - 1.0) / (pf - nf - 1.0) * bracket + (pf - nf) / d * b2
    }))
}

/// Target error when nothing is transferred (t = 0).
pub fn target_error_no_transfer(config: &ProblemConfig, p: usize) -> Result<ExtendedError> {
    let d = config.d();
    if p > d {
        return Err(Error::Infeasible(format!("p = {p} exceeds d = {d}")));
    }
    let n = config.n_tgt();
    let b2 = config.beta_norm_sq();
    let s2 = config.sigma_eps_sq();
    if p == 0 {
        return Ok(ExtendedError::Finite(b2 + s2));
    }
    if in_band(p, n) {
        return Ok(ExtendedError::Infinite(Band::Target));
    }
    let (df, pf, nf) = (d as f64, p as f64, n as f64);
    let base = (1.0 - pf / df) * b2 + s2;
    Ok(ExtendedError::Finite(if p + 2 <= n {
        (1.0 + pf / (nf - pf - 1.0)) * base
    } else {
        (1.0 + nf / (pf - nf - 1.0)) * base + (pf - nf) / df * b2
    }))
}

/// Target error with t transferred parameters and no free ones (p = 0).
pub fn target_error_no_learning(config: &ProblemConfig, p_tilde: usize, t: usize) -> Result<ExtendedError> {
    check_p_tilde(config, p_tilde)?;
    if t > p_tilde {
        return Err(Error::Infeasible(format!("t = {t} exceeds p̃ = {p_tilde}")));
    }
    let null = config.beta_norm_sq() + config.sigma_eps_sq();
    if t == 0 {
        return Ok(ExtendedError::Finite(null));
    }
    let n = config.n_src();
    if in_band(p_tilde, n) {
        return Ok(ExtendedError::Infinite(Band::Source));
    }
    let (kappa, rho) = kappa_rho(config)?;
    let (d, pt, nf, tf) = (config.d() as f64, p_tilde as f64, n as f64, t as f64);
    let noise_term = d * config.sigma_xi_sq() / kappa;
    Ok(ExtendedError::Finite(if p_tilde + 2 <= n {
        null + tf * kappa / d * (1.0 - 2.0 * rho + (d - pt + noise_term) / (nf - pt - 1.0))
    } else {
        null + tf * kappa / d * nf / pt * (1.0 - 2.0 * rho + (d - pt + noise_term) / (pt - nf - 1.0))
    }))
}

/// ρ above which transfer helps at this p̃: ΔE_transfer < 0 ⇔ ρ > threshold.
pub fn rho_threshold_uniform(config: &ProblemConfig, p_tilde: usize) -> Result<f64> {
    let Some(e_src) = expected_source_error(config, p_tilde)?.value() else {
        return Err(Error::Band(format!("p̃ = {p_tilde} is within one of ñ = {}", config.n_src())));
    };
    let (kappa, _) = kappa_rho(config)?;
    let (d, pt) = (config.d() as f64, p_tilde as f64);
    let scale = 1.0 / shrink(p_tilde, config.n_src());
    Ok(1.0 + d / (2.0 * pt) * ((e_src - config.sigma_xi_sq()) / kappa - 1.0) * scale)
}

/// Integer p̃ ∈ [1, d] where uniform transfer is beneficial, from the four
/// range conditions on ρ, ñ and A = d(1 + Γ⁻¹). Thresholds are strict.
pub fn ptilde_beneficial_ranges(config: &ProblemConfig) -> Result<BeneficialRange> {
    let (kappa, rho) = kappa_rho(config)?;
    let d = config.d();
    let (df, nf) = (d as f64, config.n_src() as f64);
    let a = df + df * config.sigma_xi_sq() / kappa;

    // Real intervals (lower, upper) with open ends where the conditions are strict.
    let mut real: Vec<(Bound, Bound)> = Vec::new();
    if rho > 0.0 && nf < df - 1.0 {
        real.push((Bound::Open(nf + 1.0 + (a - nf - 1.0) / (2.0 * rho)), Bound::Closed(df)));
    }
    if rho > 1.0 && nf <= a + 1.0 {
        real.push((Bound::Closed(1.0), Bound::Open(nf - 1.0 - (a - nf + 1.0) / (2.0 * (rho - 1.0)))));
    }
    if (0.0..1.0).contains(&rho) && nf > a + 1.0 {
        real.push((Bound::Open(nf - 1.0 - (a - nf + 1.0) / (2.0 * (rho - 1.0))), Bound::Closed(df)));
    }
    if rho >= 1.0 && nf > a + 1.0 {
        real.push((Bound::Closed(1.0), Bound::Closed(df)));
    }

    let mut member = vec![false; d + 1];
    for (lo, hi) in real {
        let first = lo.first_integer_above().max(1);
        let last = hi.last_integer_below().min(d as i64);
        for k in first..=last {
            member[k as usize] = true;
        }
    }
    let n = config.n_src();
    let mut intervals = Vec::new();
    let mut start = None;
    for k in 1..=d + 1 {
        let on = k <= d && member.get(k).copied().unwrap_or(false) && !in_band(k, n);
        match (on, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                intervals.push((s, k - 1));
                start = None;
            }
            _ => {}
        }
    }
    Ok(BeneficialRange { intervals })
}

#[derive(Clone, Copy, Debug)]
enum Bound {
    Open(f64),
    Closed(f64),
}

impl Bound {
    fn first_integer_above(self) -> i64 {
        match self {
            Bound::Open(x) => clamp_i64(x.floor()) + 1,
            Bound::Closed(x) => clamp_i64(x.ceil()),
        }
    }

    fn last_integer_below(self) -> i64 {
        match self {
            Bound::Open(x) => clamp_i64(x.ceil()) - 1,
            Bound::Closed(x) => clamp_i64(x.floor()),
        }
    }
}

fn clamp_i64(x: f64) -> i64 {
    if x.is_nan() {
        0
    } else {
        x.clamp(-1e15, 1e15) as i64
    }
}

fn layout_scalars(config: &ProblemConfig, layout: &CoordinateLayout) -> Result<LayoutScalars> {
    if layout.d() != config.d() {
        return Err(Error::InvalidLayout(format!("layout has d = {}, config has d = {}", layout.d(), config.d())));
    }
    Ok(task_scalars(config, Some(layout))?.layout.expect("layout scalars requested"))
}

/// E‖θ̂_T‖² for a fixed layout, expectation over data and η.
pub fn expected_transferred_energy(config: &ProblemConfig, layout: &CoordinateLayout) -> Result<ExtendedError> {
    let ls = layout_scalars(config, layout)?;
    if ls.t == 0 {
        return Ok(ExtendedError::Finite(0.0));
    }
    let n = config.n_src();
    if in_band(ls.p_tilde, n) {
        return Ok(ExtendedError::Infinite(Band::Source));
    }
    let (pt, nf, tf) = (ls.p_tilde as f64, n as f64, ls.t as f64);
    let noise = tf * (ls.zeta_sc + config.sigma_xi_sq());
    Ok(ExtendedError::Finite(if ls.p_tilde + 2 <= n {
        ls.kappa_t + noise / (nf - pt - 1.0)
    } else {
        let mixed = ((pt * pt - nf * pt) * (tf / pt) * ls.energy_s + (nf * pt - 1.0) * ls.kappa_t) / (pt * pt - 1.0);
        nf / pt * (mixed + noise / (pt - nf - 1.0))
    }))
}

/// E‖θ̂_T − θ_T‖² for a fixed layout.
pub fn expected_transferred_source_error(config: &ProblemConfig, layout: &CoordinateLayout) -> Result<ExtendedError> {
    let ls = layout_scalars(config, layout)?;
    Ok(match expected_transferred_energy(config, layout)? {
        ExtendedError::Finite(e) => {
            let c = shrink(ls.p_tilde, config.n_src());
            ExtendedError::Finite(e - 2.0 * c * ls.kappa_t + ls.kappa_t)
        }
        inf => inf,
    })
}

/// ΔE^(T,S) = E‖θ̂_T − β_T‖² − ‖β_T‖²: the change in target error from
/// transferring T instead of zeroing it.
pub fn delta_transfer_specific(config: &ProblemConfig, layout: &CoordinateLayout) -> Result<ExtendedError> {
    let ls = layout_scalars(config, layout)?;
    if ls.t == 0 {
        return Ok(ExtendedError::Finite(0.0));
    }
    let n = config.n_src();
    if in_band(ls.p_tilde, n) {
        return Ok(ExtendedError::Infinite(Band::Source));
    }
    let (pt, nf, tf) = (ls.p_tilde as f64, n as f64, ls.t as f64);
    let noise = tf * (ls.zeta_sc + config.sigma_xi_sq());
    Ok(ExtendedError::Finite(if ls.p_tilde + 2 <= n {
        ls.kappa_t - 2.0 * ls.inner_t + noise / (nf - pt - 1.0)
    } else {
        // ψ_T κ_T = (t/p̃)(‖(Hβ)_S‖² + p̃σ_η²); this form survives κ_T = 0.
        let psi_kappa = tf / pt * ls.energy_s;
        let mixed = ((pt * pt - nf * pt) * psi_kappa + (nf * pt - 1.0) * ls.kappa_t) / (pt * pt - 1.0);
        nf / pt * (mixed - 2.0 * ls.inner_t + noise / (pt - nf - 1.0))
    }))
}

/// Target error for one specific layout, expectation over data and η.
pub fn target_error_specific(config: &ProblemConfig, layout: &CoordinateLayout) -> Result<ExtendedError> {
    if layout.d() != config.d() {
        return Err(Error::InvalidLayout(format!("layout has d = {}, config has d = {}", layout.d(), config.d())));
    }
    let (p, n) = (layout.p(), config.n_tgt());
    if target_in_band(p, n) {
        return Ok(ExtendedError::Infinite(Band::Target));
    }
    let delta = match delta_transfer_specific(config, layout)? {
        ExtendedError::Finite(v) => v,
        inf => return Ok(inf),
    };
    let beta = config.beta();
    let b_f = layout.f().norm_sq(beta)?;
    let b_fc = layout.f().complement().norm_sq(beta)?;
    let bracket = b_fc + config.sigma_eps_sq() + delta;
    let (pf, nf) = (p as f64, n as f64);
    Ok(ExtendedError::Finite(if p == 0 {
        bracket
    } else if p + 2 <= n {
        (nf - 1.0) / (nf - pf - 1.0) * bracket
    } else {
        (pf - 1.0) / (pf - nf - 1.0) * bracket + (pf - nf) / pf * b_f
    }))
}

fn check_threshold_layout(config: &ProblemConfig, layout: &CoordinateLayout) -> Result<LayoutScalars> {
    let ls = layout_scalars(config, layout)?;
    if ls.t == 0 {
        return Err(Error::InvalidArgument("threshold needs t > 0".into()));
    }
    if ls.kappa_t <= 0.0 {
        return Err(Error::Degenerate("κ_T = 0, ρ_T is undefined".into()));
    }
    if in_band(ls.p_tilde, config.n_src()) {
        return Err(Error::Band(format!("p̃ = {} is within one of ñ = {}", ls.p_tilde, config.n_src())));
    }
    Ok(ls)
}

/// ρ_T above which transferring this T helps: the root in ρ_T of ΔE^(T,S).
pub fn rho_t_threshold_specific(config: &ProblemConfig, layout: &CoordinateLayout) -> Result<f64> {
    let ls = check_threshold_layout(config, layout)?;
    let energy = expected_transferred_energy(config, layout)?.to_f64();
    let c = shrink(ls.p_tilde, config.n_src());
    Ok(energy / (2.0 * c * ls.kappa_t))
}

/// The same threshold in terms of the source error on T:
/// 1 + ½(E‖θ̂_T − θ_T‖²/κ_T − 1)·(1 or p̃/ñ).
pub fn rho_t_threshold_from_source_error(config: &ProblemConfig, layout: &CoordinateLayout) -> Result<f64> {
    let ls = check_threshold_layout(config, layout)?;
    let err = expected_transferred_source_error(config, layout)?.to_f64();
    let scale = 1.0 / shrink(ls.p_tilde, config.n_src());
    Ok(1.0 + 0.5 * (err / ls.kappa_t - 1.0) * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_beta, BetaShape, RelationOperator};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn config_a() -> ProblemConfig {
        ProblemConfig::reference()
    }

    fn identity_cfg(d: usize, n_src: usize, n_tgt: usize, xi: f64, eps: f64, eta: f64, c: f64) -> ProblemConfig {
        let beta = make_beta(&BetaShape::Linear, d).unwrap();
        ProblemConfig::new(d, n_src, n_tgt, xi, eps, eta, beta, RelationOperator::IdentityScale(c)).unwrap()
    }

    fn fin(e: ExtendedError) -> f64 {
        e.value().expect("finite")
    }

    #[test]
    fn display() {
        assert_eq!(ExtendedError::Finite(1.5).to_string(), "1.5");
        assert_eq!(ExtendedError::Infinite(Band::Target).to_string(), "inf");
        assert_eq!(ExtendedError::Infinite(Band::Source).to_f64(), f64::INFINITY);
    }

    #[test]
    fn source_error_values() {
        let cfg = config_a();
        let expected = 79.0 / 29.0 * 2.0 + 30.0 / 80.0 * 80.0;
        assert_relative_eq!(fin(expected_source_error(&cfg, 80).unwrap()), expected, max_relative = 1e-14);
        assert!((expected - 35.448).abs() < 1e-3);
        // realized θ = β (σ_η = 0), S = everything
        let det = source_error_deterministic_s(&cfg, &Selector::full(80), cfg.beta()).unwrap();
        assert_relative_eq!(fin(det), expected, max_relative = 1e-14);
        for pt in [49, 50, 51] {
            assert_eq!(expected_source_error(&cfg, pt).unwrap(), ExtendedError::Infinite(Band::Source));
        }
        assert!(expected_source_error(&cfg, 0).is_err());
        assert!(expected_source_error(&cfg, 81).is_err());
    }

    #[test]
    fn source_error_full_support_underparameterized() {
        let cfg = identity_cfg(10, 30, 5, 1.5, 1.0, 0.0, 1.0);
        let v = fin(expected_source_error(&cfg, 10).unwrap());
        assert_relative_eq!(v, 29.0 / 19.0 * 1.5, max_relative = 1e-14);
        let det = source_error_deterministic_s(&cfg, &Selector::full(10), cfg.beta()).unwrap();
        assert_relative_eq!(fin(det), 29.0 / 19.0 * 1.5, max_relative = 1e-14);
        assert!(source_error_deterministic_s(&cfg, &Selector::empty(10), cfg.beta()).is_err());
    }

    #[test]
    fn delta_transfer_values() {
        let cfg = config_a();
        let v = fin(delta_transfer_uniform(&cfg, 80).unwrap());
        assert_relative_eq!(v, 50.0 / 80.0 * (1.0 - 2.0 + 2.0 / 29.0), max_relative = 1e-14);
        assert!((v + 0.5819).abs() < 1e-4);
        assert_eq!(delta_transfer_uniform(&cfg, 51).unwrap(), ExtendedError::Infinite(Band::Source));

        // ideal transfer: −κ/d
        let cfg = identity_cfg(10, 30, 5, 0.0, 1.0, 0.0, 1.0);
        assert_relative_eq!(fin(delta_transfer_uniform(&cfg, 10).unwrap()), -1.0, max_relative = 1e-14);
    }

    #[test]
    fn target_error_values() {
        let cfg = config_a();
        assert_relative_eq!(fin(expected_target_error_uniform(&cfg, 80, 0, 0).unwrap()), 84.0, max_relative = 1e-14);
        assert_eq!(expected_target_error_uniform(&cfg, 80, 20, 0).unwrap(), ExtendedError::Infinite(Band::Target));
        let v = fin(expected_target_error_uniform(&cfg, 80, 60, 0).unwrap());
        assert_relative_eq!(v, 59.0 / 39.0 * 24.0 + 40.0, max_relative = 1e-14);
        assert!((v - 76.31).abs() < 5e-3);
        let delta = 50.0 / 80.0 * (-1.0 + 2.0 / 29.0);
        let v = fin(expected_target_error_uniform(&cfg, 80, 60, 16).unwrap());
        assert_relative_eq!(v, 59.0 / 39.0 * (24.0 + 16.0 * delta) + 40.0, max_relative = 1e-14);
        assert!((v - 62.22).abs() < 5e-3);
        // source band only matters when something is transferred
        assert!(expected_target_error_uniform(&cfg, 50, 10, 0).unwrap().is_finite());
        assert_eq!(expected_target_error_uniform(&cfg, 50, 10, 5).unwrap(), ExtendedError::Infinite(Band::Source));
        assert!(expected_target_error_uniform(&cfg, 10, 0, 11).is_err());
        assert!(expected_target_error_uniform(&cfg, 80, 70, 11).is_err());
    }

    #[test]
    fn special_cases() {
        let cfg = config_a();
        assert_relative_eq!(fin(target_error_no_transfer(&cfg, 0).unwrap()), 84.0, max_relative = 1e-14);
        let d = 80.0;
        assert_relative_eq!(
            fin(target_error_no_transfer(&cfg, 80).unwrap()),
            (1.0 + 20.0 / (d - 21.0)) * 4.0 + (d - 20.0) / d * 80.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(fin(target_error_no_learning(&cfg, 80, 0).unwrap()), 84.0, max_relative = 1e-14);
        let v = fin(target_error_no_learning(&cfg, 80, 40).unwrap());
        assert!((v - 60.72).abs() < 5e-3, "{v}");
        assert_eq!(target_error_no_learning(&cfg, 50, 3).unwrap(), ExtendedError::Infinite(Band::Source));
        assert!(target_error_no_learning(&cfg, 5, 6).is_err());
        assert!(target_error_no_transfer(&cfg, 81).is_err());
    }

    #[test]
    fn single_target_sample_has_finite_null_error() {
        let cfg = identity_cfg(10, 30, 1, 1.0, 1.0, 0.0, 1.0);
        assert!(expected_target_error_uniform(&cfg, 10, 0, 3).unwrap().is_finite());
        assert!(!expected_target_error_uniform(&cfg, 10, 1, 3).unwrap().is_finite());
        assert!(expected_target_error_uniform(&cfg, 10, 3, 3).unwrap().is_finite());
    }

    #[test]
    fn threshold_values() {
        let cfg = config_a();
        let e = 79.0 / 29.0 * 2.0 + 30.0;
        let expected = 1.0 + 0.5 * ((e - 2.0) / 80.0 - 1.0) * (80.0 / 50.0);
        let thr = rho_threshold_uniform(&cfg, 80).unwrap();
        assert_relative_eq!(thr, expected, max_relative = 1e-14);
        assert!((thr - 0.5345).abs() < 1e-4);
        assert!(matches!(rho_threshold_uniform(&cfg, 50), Err(Error::Band(_))));
    }

    // H = cI with ‖β‖² = d: κ = c²d + dσ_η², ρ = cd/κ. For fixed κ, c moves ρ
    // without touching the threshold, so we can sit exactly on it (needs ρ² ≤ d/κ).
    #[test]
    fn delta_vanishes_at_the_threshold() {
        let d = 40;
        let kappa = 20.0;
        for (n_src, pt) in [(30, 12), (30, 40), (15, 33)] {
            let probe = identity_cfg(d, n_src, 10, 1.3, 1.0, (kappa - 0.25 * d as f64) / d as f64, 0.5);
            let thr = rho_threshold_uniform(&probe, pt).unwrap();
            let c = thr * kappa / d as f64;
            let eta = (kappa - c * c * d as f64) / d as f64;
            assert!(eta >= 0.0, "threshold {thr} for ({n_src}, {pt})");
            let cfg = identity_cfg(d, n_src, 10, 1.3, 1.0, eta, c);
            let s = task_scalars(&cfg, None).unwrap();
            assert_relative_eq!(s.kappa, kappa, max_relative = 1e-12);
            assert_relative_eq!(s.rho, thr, max_relative = 1e-12);
            assert!(fin(delta_transfer_uniform(&cfg, pt).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn perfect_source_threshold_is_one() {
        // E_src = σ_ξ² + κ makes the bracket vanish. With p̃ = d ≤ ñ − 2 this
        // needs (ñ − 1)/(ñ − d − 1)·σ_ξ² = σ_ξ² + κ.
        let d = 10;
        let n_src = 20;
        let kappa = 10.0;
        let xi = kappa * (n_src as f64 - d as f64 - 1.0) / d as f64;
        let cfg = identity_cfg(d, n_src, 5, xi, 1.0, 0.0, 1.0);
        assert_relative_eq!(rho_threshold_uniform(&cfg, d).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn ranges_for_reference_config() {
        let cfg = config_a();
        let r = ptilde_beneficial_ranges(&cfg).unwrap();
        assert_eq!(r.intervals, vec![(67, 80)]);
        let bound = 50.0 + 1.0 + (80.0 + 2.0 - 50.0 - 1.0) / 2.0;
        assert_eq!(bound, 66.5);
        for pt in 1..=80 {
            if let Some(v) = delta_transfer_uniform(&cfg, pt).unwrap().value() {
                assert_eq!(v < 0.0, r.contains(pt), "p̃ = {pt}");
            }
        }
    }

    #[test]
    fn ranges_extreme_cases() {
        // ρ < 0, ñ small: nothing helps
        let cfg = identity_cfg(80, 50, 20, 2.0, 4.0, 0.0, -1.0);
        assert!(ptilde_beneficial_ranges(&cfg).unwrap().is_empty());
        // ρ ≥ 1, ñ large: everything helps
        let cfg = identity_cfg(80, 150, 20, 2.0, 4.0, 0.0, 1.0);
        assert_eq!(ptilde_beneficial_ranges(&cfg).unwrap().intervals, vec![(1, 80)]);
        // band removed from the interior of a range
        let cfg = identity_cfg(80, 30, 20, 0.5, 4.0, 0.0, 3.0);
        let r = ptilde_beneficial_ranges(&cfg).unwrap();
        assert!(!r.contains(29) && !r.contains(30) && !r.contains(31));
    }

    #[test]
    fn specific_trivial_cases() {
        let cfg = config_a();
        let l = CoordinateLayout::from_sets(80, (1..=80).collect(), vec![], vec![]).unwrap();
        assert_relative_eq!(fin(target_error_specific(&cfg, &l).unwrap()), 84.0, max_relative = 1e-14);
        assert_eq!(fin(delta_transfer_specific(&cfg, &l).unwrap()), 0.0);

        // F = supp(β), p ≤ n − 2: only the noise term survives
        let beta = make_beta(&BetaShape::Sparse(0.1), 80).unwrap();
        let cfg = cfg.with_beta(beta).unwrap();
        let l = CoordinateLayout::from_sets(80, (1..=80).collect(), (1..=8).collect(), vec![]).unwrap();
        assert_relative_eq!(fin(target_error_specific(&cfg, &l).unwrap()), 19.0 / 11.0 * 4.0, max_relative = 1e-14);

        // bands
        let l = CoordinateLayout::from_sets(80, (1..=80).collect(), (1..=20).collect(), vec![]).unwrap();
        assert_eq!(target_error_specific(&cfg, &l).unwrap(), ExtendedError::Infinite(Band::Target));
        let l = CoordinateLayout::from_sets(80, (1..=50).collect(), (51..=60).collect(), vec![1]).unwrap();
        assert_eq!(target_error_specific(&cfg, &l).unwrap(), ExtendedError::Infinite(Band::Source));
    }

    #[test]
    fn specific_ideal_transfer() {
        // d = 4, ñ = 10, S = T = {1, 2}, β on S, no noise: ΔE = −κ_T
        let beta = Vector::from_vec(vec![1.0, 2.0, 0.0, 0.0]);
        let cfg = ProblemConfig::new(4, 10, 5, 0.0, 1.0, 0.0, beta, RelationOperator::IdentityScale(1.0)).unwrap();
        let l = CoordinateLayout::from_sets(4, vec![1, 2], vec![], vec![1, 2]).unwrap();
        assert_relative_eq!(fin(delta_transfer_specific(&cfg, &l).unwrap()), -5.0, max_relative = 1e-14);
    }

    #[test]
    fn specific_zero_energy_transfer() {
        let beta = Vector::from_vec(vec![0.0, 0.0, 3.0, 1.0, 0.0, 0.0]);
        let cfg = ProblemConfig::new(6, 12, 5, 0.7, 1.0, 0.0, beta, RelationOperator::IdentityScale(1.0)).unwrap();
        let l = CoordinateLayout::from_sets(6, vec![1, 2, 3], vec![], vec![1, 2]).unwrap();
        let zeta = 1.0;
        let expected = 2.0 * (zeta + 0.7) / (12.0 - 3.0 - 1.0);
        let v = fin(delta_transfer_specific(&cfg, &l).unwrap());
        assert_relative_eq!(v, expected, max_relative = 1e-14);
        assert!(v >= 0.0);
        assert!(matches!(rho_t_threshold_specific(&cfg, &l), Err(Error::Degenerate(_))));

        // overparameterized source with κ_T = 0 stays finite
        let cfg = cfg.with_n_src(2).unwrap();
        let l = CoordinateLayout::from_sets(6, vec![1, 2, 3, 4, 5, 6], vec![], vec![1, 2]).unwrap();
        assert!(delta_transfer_specific(&cfg, &l).unwrap().value().unwrap().is_finite());
    }

    #[test]
    fn specific_threshold_perfect_source_on_t() {
        // Underparameterized: E‖θ̂_T − θ_T‖² = t(ζ + σ_ξ²)/(ñ − p̃ − 1). Pick σ_ξ² so it equals κ_T.
        let beta = Vector::from_vec(vec![1.0, 2.0, 0.0, 0.0, 0.0]);
        let l = CoordinateLayout::from_sets(5, vec![1, 2], vec![3], vec![1, 2]).unwrap();
        let (t, n_src, pt, kappa_t) = (2.0, 10.0, 2.0, 5.0);
        let xi = kappa_t * (n_src - pt - 1.0) / t;
        let cfg = ProblemConfig::new(5, 10, 5, xi, 1.0, 0.0, beta, RelationOperator::IdentityScale(1.0)).unwrap();
        assert_relative_eq!(rho_t_threshold_specific(&cfg, &l).unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(rho_t_threshold_from_source_error(&cfg, &l).unwrap(), 1.0, max_relative = 1e-12);
    }

    fn random_layout_cfg(seed: u64, n_src: usize, eta: f64) -> (ProblemConfig, CoordinateLayout) {
        use crate::linalg::{sample_gaussian_vector, sample_standard_gaussian, seeded_rng};
        let mut rng = seeded_rng(seed);
        let d = 30;
        let beta = sample_gaussian_vector(d, 1.0, &mut rng);
        let h = sample_standard_gaussian(d, d, &mut rng) * 0.2 + crate::linalg::Matrix::identity(d, d);
        let cfg = ProblemConfig::new(d, n_src, 10, 1.1, 2.0, eta, beta, RelationOperator::Dense(h)).unwrap();
        let pt = rand::Rng::random_range(&mut rng, 3..=d);
        let t = rand::Rng::random_range(&mut rng, 1..=pt.min(12));
        let p = rand::Rng::random_range(&mut rng, 0..=(d - t));
        let l = crate::model::sample_uniform_layout(d, pt, p, t, &mut rng).unwrap();
        (cfg, l)
    }

    proptest! {
        #[test]
        fn eq10_matches_closed_form(pt in 1usize..=80, eta in 0.0f64..3.0, scale in -1.5f64..2.0) {
            let cfg = identity_cfg(80, 50, 20, 2.0, 4.0, eta, scale);
            prop_assume!(task_scalars(&cfg, None).is_ok());
            let a = delta_transfer_uniform(&cfg, pt).unwrap();
            let b = delta_transfer_from_source_error(&cfg, pt, expected_source_error(&cfg, pt).unwrap()).unwrap();
            match (a, b) {
                (ExtendedError::Finite(x), ExtendedError::Finite(y)) => {
                    let k = task_scalars(&cfg, None).unwrap().kappa / 80.0;
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(k));
                }
                (x, y) => prop_assert_eq!(x, y),
            }
        }

        #[test]
        fn specific_threshold_contract(seed in any::<u64>(), n_src in 2usize..40, eta in 0.0f64..1.0) {
            let (cfg, l) = random_layout_cfg(seed, n_src, eta);
            let ls = task_scalars(&cfg, Some(&l)).unwrap().layout.unwrap();
            prop_assume!(!in_band(l.p_tilde(), n_src) && ls.kappa_t > 0.0);
            let thr = rho_t_threshold_specific(&cfg, &l).unwrap();
            let alt = rho_t_threshold_from_source_error(&cfg, &l).unwrap();
            prop_assert!((thr - alt).abs() <= 1e-10 * (1.0 + thr.abs()));
            let delta = fin(delta_transfer_specific(&cfg, &l).unwrap());
            let rho_t = ls.rho_t().unwrap();
            prop_assume!((rho_t - thr).abs() > 1e-9);
            prop_assert_eq!(delta < 0.0, rho_t > thr);
        }

        #[test]
        fn finite_risks_respect_noise_floor(pt in 1usize..=80, p in 0usize..=80, t in 0usize..=80, eta in 0.0f64..3.0) {
            prop_assume!(t <= pt && p + t <= 80);
            let cfg = identity_cfg(80, 50, 20, 2.0, 4.0, eta, 1.0);
            if let Some(v) = expected_target_error_uniform(&cfg, pt, p, t).unwrap().value() {
                prop_assert!(v >= 4.0 - 1e-12);
            }
            if let Some(v) = expected_source_error(&cfg, pt).unwrap().value() {
                prop_assert!(v >= 2.0 - 1e-12);
            }
        }
    }
}
