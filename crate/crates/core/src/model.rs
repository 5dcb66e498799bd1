//! Problem definition: β generators, the task relation θ = Hβ + η,
//! coordinate layouts and the scalar task summaries (κ, ρ, κ_T, ...).

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sample_gaussian_vector, sample_standard_gaussian, Matrix, Selector, Vector};

/// Stand-in levels for the piecewise-constant β: four equal blocks.
pub const DEFAULT_PIECEWISE_LEVELS: [f64; 4] = [1.0, 2.0, 0.5, 1.5];

#[derive(Clone, Debug, PartialEq)]
pub enum BetaShape {
    /// β_i ∝ i − 1.
    Linear,
    /// Equal-magnitude nonzeros on the first ⌈frac·d⌉ coordinates.
    Sparse(f64),
    /// Equal-length blocks holding the given levels.
    PiecewiseConstant(Vec<f64>),
}

/// A β with ‖β‖² = d.
pub fn make_beta(shape: &BetaShape, d: usize) -> Result<Vector> {
    if d < 2 {
        return Err(Error::InvalidConfig(format!("β generators need d ≥ 2, got {d}")));
    }
    let raw = match shape {
        BetaShape::Linear => Vector::from_fn(d, |i, _| i as f64),
        BetaShape::Sparse(frac) => {
            if !(*frac > 0.0 && *frac <= 1.0) {
                return Err(Error::InvalidConfig(format!("sparse fraction must lie in (0, 1], got {frac}")));
            }
            let k = ceil_tolerant(frac * d as f64).clamp(1, d);
            Vector::from_fn(d, |i, _| if i < k { 1.0 } else { 0.0 })
        }
        BetaShape::PiecewiseConstant(levels) => {
            if levels.is_empty() || levels.len() > d {
                return Err(Error::InvalidConfig(format!(
                    "piecewise β needs between 1 and d = {d} levels, got {}",
                    levels.len()
                )));
            }
            let blocks = levels.len();
            Vector::from_fn(d, |i, _| levels[i * blocks / d])
        }
    };
    rescale_to_dim(raw)
}

// ⌈x⌉, except that values within rounding noise of an integer are not bumped up.
fn ceil_tolerant(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

fn rescale_to_dim(raw: Vector) -> Result<Vector> {
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("β pattern has non-finite entries".into()));
    }
    let norm_sq = raw.norm_squared();
    if norm_sq == 0.0 {
        return Err(Error::InvalidConfig("β pattern is all zeros".into()));
    }
    let d = raw.len() as f64;
    Ok(raw * (d / norm_sq).sqrt())
}

/// The deterministic matrix H in θ = Hβ + η.
#[derive(Clone, Debug, PartialEq)]
pub enum RelationOperator {
    IdentityScale(f64),
    /// Periodic moving average over an odd neighbourhood centred on each coordinate.
    LocalAverage(usize),
    /// Periodic forward difference: (Hv)_i = 0.5·(v_{i+1} − v_i).
    DiscreteDerivative,
    Dense(Matrix),
}

impl RelationOperator {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            RelationOperator::IdentityScale(c) if !c.is_finite() => {
                Err(Error::InvalidConfig(format!("identity scale must be finite, got {c}")))
            }
            RelationOperator::LocalAverage(k) if *k == 0 || k % 2 == 0 => {
                Err(Error::InvalidConfig(format!("local average size must be odd, got {k}")))
            }
            RelationOperator::LocalAverage(k) if *k > d => {
                Err(Error::InvalidConfig(format!("local average size {k} exceeds d = {d}")))
            }
            RelationOperator::Dense(m) if m.shape() != (d, d) => Err(Error::InvalidConfig(format!(
                "dense H must be {d}x{d}, got {}x{}",
                m.nrows(),
                m.ncols()
            ))),
            RelationOperator::Dense(m) if m.iter().any(|x| !x.is_finite()) => {
                Err(Error::InvalidConfig("dense H has non-finite entries".into()))
            }
            _ => Ok(()),
        }
    }

    /// H v, without materializing circulant operators. Assumes `validate` passed.
    pub fn apply(&self, v: &Vector) -> Vector {
        let d = v.len();
        match self {
            RelationOperator::IdentityScale(c) => v * *c,
            RelationOperator::LocalAverage(k) => {
                let half = (k / 2) as isize;
                let w = 1.0 / *k as f64;
                Vector::from_fn(d, |i, _| {
                    (-half..=half)
                        .map(|o| v[(i as isize + o).rem_euclid(d as isize) as usize])
                        .sum::<f64>()
                        * w
                })
            }
            RelationOperator::DiscreteDerivative => Vector::from_fn(d, |i, _| 0.5 * (v[(i + 1) % d] - v[i])),
            RelationOperator::Dense(m) => m * v,
        }
    }
}

pub fn build_relation_matrix(rel: &RelationOperator, d: usize) -> Result<Matrix> {
    rel.validate(d)?;
    Ok(match rel {
        RelationOperator::Dense(m) => m.clone(),
        _ => {
            let mut h = Matrix::zeros(d, d);
            for j in 0..d {
                let mut e = Vector::zeros(d);
                e[j] = 1.0;
                h.set_column(j, &rel.apply(&e));
            }
            h
        }
    })
}

/// A fully specified experiment: dimensions, noise levels, β and H.
#[derive(Clone, Debug)]
pub struct ProblemConfig {
    d: usize,
    n_src: usize,
    n_tgt: usize,
    sigma_xi_sq: f64,
    sigma_eps_sq: f64,
    sigma_eta_sq: f64,
    beta: Vector,
    relation: RelationOperator,
    h_beta: Vector,
}

impl ProblemConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        n_src: usize,
        n_tgt: usize,
        sigma_xi_sq: f64,
        sigma_eps_sq: f64,
        sigma_eta_sq: f64,
        beta: Vector,
        relation: RelationOperator,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if n_src == 0 || n_tgt == 0 {
            return Err(Error::InvalidConfig("sample counts must be at least 1".into()));
        }
        for (name, v) in [("sigma_xi_sq", sigma_xi_sq), ("sigma_eps_sq", sigma_eps_sq), ("sigma_eta_sq", sigma_eta_sq)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if beta.len() != d {
            return Err(Error::InvalidConfig(format!("β has length {}, expected d = {d}", beta.len())));
        }
        if beta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("β has non-finite entries".into()));
        }
        if beta.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidConfig("β must be nonzero".into()));
        }
        relation.validate(d)?;
        let h_beta = relation.apply(&beta);
        Ok(Self { d, n_src, n_tgt, sigma_xi_sq, sigma_eps_sq, sigma_eta_sq, beta, relation, h_beta })
    }

    /// d = 80, ñ = 50, n = 20, σ_ξ² = 2, σ_ε² = 4, linear β, H = I, σ_η² = 0.
    pub fn reference() -> Self {
        ConfigFile::default().build().expect("reference configuration is valid")
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn n_src(&self) -> usize {
        self.n_src
    }
    pub fn n_tgt(&self) -> usize {
        self.n_tgt
    }
    pub fn sigma_xi_sq(&self) -> f64 {
        self.sigma_xi_sq
    }
    pub fn sigma_eps_sq(&self) -> f64 {
        self.sigma_eps_sq
    }
    pub fn sigma_eta_sq(&self) -> f64 {
        self.sigma_eta_sq
    }
    pub fn beta(&self) -> &Vector {
        &self.beta
    }
    pub fn relation(&self) -> &RelationOperator {
        &self.relation
    }
    /// Hβ, cached at construction.
    pub fn h_beta(&self) -> &Vector {
        &self.h_beta
    }
    pub fn beta_norm_sq(&self) -> f64 {
        self.beta.norm_squared()
    }

    pub fn with_sigma_eta_sq(&self, sigma_eta_sq: f64) -> Result<Self> {
        self.rebuild(|c| c.sigma_eta_sq = sigma_eta_sq)
    }
    pub fn with_sigma_xi_sq(&self, sigma_xi_sq: f64) -> Result<Self> {
        self.rebuild(|c| c.sigma_xi_sq = sigma_xi_sq)
    }
    pub fn with_sigma_eps_sq(&self, sigma_eps_sq: f64) -> Result<Self> {
        self.rebuild(|c| c.sigma_eps_sq = sigma_eps_sq)
    }
    pub fn with_n_src(&self, n_src: usize) -> Result<Self> {
        self.rebuild(|c| c.n_src = n_src)
    }
    pub fn with_n_tgt(&self, n_tgt: usize) -> Result<Self> {
        self.rebuild(|c| c.n_tgt = n_tgt)
    }
    pub fn with_beta(&self, beta: Vector) -> Result<Self> {
        self.rebuild(|c| c.beta = beta)
    }
    pub fn with_relation(&self, relation: RelationOperator) -> Result<Self> {
        self.rebuild(|c| c.relation = relation)
    }

    fn rebuild(&self, edit: impl FnOnce(&mut Self)) -> Result<Self> {
        let mut c = self.clone();
        edit(&mut c);
        Self::new(c.d, c.n_src, c.n_tgt, c.sigma_xi_sq, c.sigma_eps_sq, c.sigma_eta_sq, c.beta, c.relation)
    }
}

/// β in the JSON config: `{"shape": "...", "params": {...}}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSpec {
    #[default]
    Linear,
    Sparse {
        frac: f64,
    },
    Piecewise {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<Vec<f64>>,
    },
    /// Used verbatim, not rescaled.
    Explicit {
        values: Vec<f64>,
    },
}

impl BetaSpec {
    pub fn to_vector(&self, d: usize) -> Result<Vector> {
        match self {
            BetaSpec::Linear => make_beta(&BetaShape::Linear, d),
            BetaSpec::Sparse { frac } => make_beta(&BetaShape::Sparse(*frac), d),
            BetaSpec::Piecewise { levels } => {
                let levels = levels.clone().unwrap_or_else(|| DEFAULT_PIECEWISE_LEVELS.to_vec());
                make_beta(&BetaShape::PiecewiseConstant(levels), d)
            }
            BetaSpec::Explicit { values } => Ok(Vector::from_vec(values.clone())),
        }
    }
}

/// H in the JSON config: `{"variant": "...", "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelationSpec {
    #[serde(alias = "identity")]
    IdentityScale {
        #[serde(default = "one")]
        c: f64,
    },
    LocalAverage {
        k: usize,
    },
    #[serde(alias = "derivative")]
    DiscreteDerivative,
    /// Row-major rows.
    Dense {
        matrix: Vec<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for RelationSpec {
    fn default() -> Self {
        RelationSpec::IdentityScale { c: 1.0 }
    }
}

impl RelationSpec {
    pub fn to_operator(&self, d: usize) -> Result<RelationOperator> {
        Ok(match self {
            RelationSpec::IdentityScale { c } => RelationOperator::IdentityScale(*c),
            RelationSpec::LocalAverage { k } => RelationOperator::LocalAverage(*k),
            RelationSpec::DiscreteDerivative => RelationOperator::DiscreteDerivative,
            RelationSpec::Dense { matrix } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidConfig(format!("dense H must be {d}x{d}")));
                }
                RelationOperator::Dense(Matrix::from_fn(d, d, |i, j| matrix[i][j]))
            }
        })
    }
}

/// The on-disk configuration. Missing keys take the reference defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub d: usize,
    pub n_src: usize,
    pub n_tgt: usize,
    pub sigma_xi_sq: f64,
    pub sigma_eps_sq: f64,
    pub sigma_eta_sq: f64,
    pub beta: BetaSpec,
    pub relation: RelationSpec,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            d: 80,
            n_src: 50,
            n_tgt: 20,
            sigma_xi_sq: 2.0,
            sigma_eps_sq: 4.0,
            sigma_eta_sq: 0.0,
            beta: BetaSpec::Linear,
            relation: RelationSpec::default(),
        }
    }
}

impl ConfigFile {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<ProblemConfig> {
        ProblemConfig::new(
            self.d,
            self.n_src,
            self.n_tgt,
            self.sigma_xi_sq,
            self.sigma_eps_sq,
            self.sigma_eta_sq,
            self.beta.to_vector(self.d)?,
            self.relation.to_operator(self.d)?,
        )
    }
}

/// L = {S, F, T, Z}: source-free, target-free, transferred and zeroed coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoordinateLayout {
    s: Selector,
    f: Selector,
    t: Selector,
    z: Selector,
}

impl CoordinateLayout {
    pub fn new(s: Selector, f: Selector, t: Selector, z: Selector) -> Result<Self> {
        let d = s.ambient_dim();
        if [&f, &t, &z].iter().any(|x| x.ambient_dim() != d) {
            return Err(Error::InvalidLayout("subsets live in different ambient dimensions".into()));
        }
        if s.is_empty() {
            return Err(Error::InvalidLayout("S must be nonempty".into()));
        }
        if !t.is_subset_of(&s) {
            return Err(Error::InvalidLayout("T must be a subset of S".into()));
        }
        if !f.is_disjoint(&t) || !f.is_disjoint(&z) || !t.is_disjoint(&z) {
            return Err(Error::InvalidLayout("F, T and Z must be pairwise disjoint".into()));
        }
        if f.len() + t.len() + z.len() != d {
            return Err(Error::InvalidLayout("F, T and Z must cover all coordinates".into()));
        }
        Ok(Self { s, f, t, z })
    }

    /// Builds from 1-based coordinate lists; Z is whatever F and T leave over.
    pub fn from_sets(d: usize, s: Vec<usize>, f: Vec<usize>, t: Vec<usize>) -> Result<Self> {
        let s = Selector::from_unsorted(s, d)?;
        let f = Selector::from_unsorted(f, d)?;
        let t = Selector::from_unsorted(t, d)?;
        if !f.is_disjoint(&t) {
            return Err(Error::InvalidLayout("F and T overlap".into()));
        }
        let z = f.union(&t)?.complement();
        Self::new(s, f, t, z)
    }

    pub fn s(&self) -> &Selector {
        &self.s
    }
    pub fn f(&self) -> &Selector {
        &self.f
    }
    pub fn t(&self) -> &Selector {
        &self.t
    }
    pub fn z(&self) -> &Selector {
        &self.z
    }
    pub fn d(&self) -> usize {
        self.s.ambient_dim()
    }
    pub fn p_tilde(&self) -> usize {
        self.s.len()
    }
    pub fn p(&self) -> usize {
        self.f.len()
    }
    pub fn t_count(&self) -> usize {
        self.t.len()
    }
    pub fn ell(&self) -> usize {
        self.z.len()
    }

    /// The same S and F with T moved into Z (no transfer).
    pub fn without_transfer(&self) -> Self {
        let z = self.z.union(&self.t).expect("same ambient dimension");
        Self { s: self.s.clone(), f: self.f.clone(), t: Selector::empty(self.d()), z }
    }
}

pub fn check_feasible(d: usize, p_tilde: usize, p: usize, t: usize) -> Result<()> {
    if p_tilde == 0 || p_tilde > d {
        return Err(Error::Infeasible(format!("p̃ = {p_tilde} outside [1, {d}]")));
    }
    if t > p_tilde {
        return Err(Error::Infeasible(format!("t = {t} exceeds p̃ = {p_tilde}")));
    }
    if p + t > d {
        return Err(Error::Infeasible(format!("p + t = {} exceeds d = {d}", p + t)));
    }
    Ok(())
}

/// S uniform among size-p̃ subsets, T uniform inside S, F uniform inside [d] \ T.
pub fn sample_uniform_layout<R: Rng + ?Sized>(
    d: usize,
    p_tilde: usize,
    p: usize,
    t: usize,
    rng: &mut R,
) -> Result<CoordinateLayout> {
    check_feasible(d, p_tilde, p, t)?;
    let s_idx = index::sample(rng, d, p_tilde).into_vec();
    let t_idx: Vec<usize> = index::sample(rng, p_tilde, t).into_iter().map(|i| s_idx[i]).collect();
    let mut in_t = vec![false; d];
    for &i in &t_idx {
        in_t[i] = true;
    }
    let rest: Vec<usize> = (0..d).filter(|&i| !in_t[i]).collect();
    let f_idx: Vec<usize> = index::sample(rng, rest.len(), p).into_iter().map(|i| rest[i]).collect();
    let mut used = in_t;
    for &i in &f_idx {
        used[i] = true;
    }
    let z_idx: Vec<usize> = (0..d).filter(|&i| !used[i]).collect();
    Ok(CoordinateLayout {
        s: Selector::from_zero_based(s_idx, d),
        f: Selector::from_zero_based(f_idx, d),
        t: Selector::from_zero_based(t_idx, d),
        z: Selector::from_zero_based(z_idx, d),
    })
}

/// Energies of a specific layout. ρ_T is never stored; use [`LayoutScalars::rho_t`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayoutScalars {
    pub p_tilde: usize,
    pub t: usize,
    /// κ_T = ‖(Hβ)_T‖² + tσ_η².
    pub kappa_t: f64,
    /// ⟨(Hβ)_T, β_T⟩.
    pub inner_t: f64,
    /// ζ_{S^c} = ‖(Hβ)_{S^c}‖² + (d − p̃)σ_η².
    pub zeta_sc: f64,
    /// ‖(Hβ)_S‖² + p̃σ_η².
    pub energy_s: f64,
    /// ψ_T = (t/p̃)·energy_s/κ_T, when t > 0 and κ_T > 0.
    pub psi_t: Option<f64>,
}

impl LayoutScalars {
    pub fn rho_t(&self) -> Option<f64> {
        (self.kappa_t > 0.0).then(|| self.inner_t / self.kappa_t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskScalars {
    /// κ = ‖Hβ‖² + dσ_η².
    pub kappa: f64,
    /// ρ = ⟨Hβ, β⟩/κ.
    pub rho: f64,
    /// Γ = κ/σ_ξ² (infinite for a noiseless source).
    pub gamma_src: f64,
    pub layout: Option<LayoutScalars>,
}

pub fn task_scalars(config: &ProblemConfig, layout: Option<&CoordinateLayout>) -> Result<TaskScalars> {
    let hb = config.h_beta();
    let eta = config.sigma_eta_sq();
    let d = config.d();
    let kappa = hb.norm_squared() + d as f64 * eta;
    if kappa <= 0.0 {
        return Err(Error::Degenerate("κ = 0: Hβ vanishes and σ_η² = 0".into()));
    }
    let rho = hb.dot(config.beta()) / kappa;
    let gamma_src = kappa / config.sigma_xi_sq();
    let layout = match layout {
        None => None,
        Some(l) => {
            if l.d() != d {
                return Err(Error::DimensionMismatch(format!("layout over {} coordinates, config has d = {d}", l.d())));
            }
            let (p_tilde, t) = (l.p_tilde(), l.t_count());
            let kappa_t = l.t().norm_sq(hb)? + t as f64 * eta;
            let inner_t = l.t().dot(hb, config.beta())?;
            let energy_s = l.s().norm_sq(hb)? + p_tilde as f64 * eta;
            let zeta_sc = l.s().complement().norm_sq(hb)? + (d - p_tilde) as f64 * eta;
            let psi_t = (t > 0 && kappa_t > 0.0).then(|| (t as f64 / p_tilde as f64) * energy_s / kappa_t);
            Some(LayoutScalars { p_tilde, t, kappa_t, inner_t, zeta_sc, energy_s, psi_t })
        }
    };
    Ok(TaskScalars { kappa, rho, gamma_src, layout })
}

/// One draw of the source data: v = Zθ + ξ, θ = Hβ + η.
#[derive(Clone, Debug)]
pub struct SourceInstance {
    pub z: Matrix,
    pub theta: Vector,
    pub v: Vector,
}

/// One draw of the target data: y = Xβ + ε.
#[derive(Clone, Debug)]
pub struct TargetInstance {
    pub x: Matrix,
    pub y: Vector,
}

/// Draw order: η, Z, ξ.
pub fn sample_source_instance<R: Rng + ?Sized>(config: &ProblemConfig, rng: &mut R) -> SourceInstance {
    let d = config.d();
    let n = config.n_src();
    let theta = config.h_beta() + sample_gaussian_vector(d, config.sigma_eta_sq(), rng);
    let z = sample_standard_gaussian(n, d, rng);
    let v = &z * &theta + sample_gaussian_vector(n, config.sigma_xi_sq(), rng);
    SourceInstance { z, theta, v }
}

/// Draw order: X, ε.
pub fn sample_target_instance<R: Rng + ?Sized>(config: &ProblemConfig, rng: &mut R) -> TargetInstance {
    let x = sample_standard_gaussian(config.n_tgt(), config.d(), rng);
    let y = &x * config.beta() + sample_gaussian_vector(config.n_tgt(), config.sigma_eps_sq(), rng);
    TargetInstance { x, y }
}
