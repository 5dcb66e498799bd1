//! Dense kernel: Gaussian sampling, SVD pseudoinverse, coordinate selectors
//! and the deterministic per-trial seeding scheme.

use nalgebra::{DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular values below `DEFAULT_REL_TOL * sigma_max` are treated as zero.
pub const DEFAULT_REL_TOL: f64 = 1e-12;

const SVD_MAX_ITER: usize = 10_000;

/// Generator owned by a single trial.
pub type TrialRng = ChaCha8Rng;

/// rows x cols matrix of i.i.d. N(0, 1) entries, filled column by column.
pub fn sample_standard_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Vector of i.i.d. N(0, variance) entries. Zero variance still consumes draws,
/// so the stream layout does not depend on noise levels.
pub fn sample_gaussian_vector<R: Rng + ?Sized>(len: usize, variance: f64, rng: &mut R) -> Vector {
    let sd = variance.max(0.0).sqrt();
    Vector::from_fn(len, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Thin SVD of a matrix kept around so that several right-hand sides can be
/// solved in the min-norm least-squares sense without refactorizing.
#[derive(Clone, Debug)]
pub struct MinNormSolver {
    rows: usize,
    cols: usize,
    // None for an empty matrix: every solution is the zero vector.
    factors: Option<(Matrix, Vec<f64>, Matrix)>,
}

impl MinNormSolver {
    pub fn new(m: &Matrix, rel_tol: f64) -> Result<Self> {
        check_tol(rel_tol)?;
        let (rows, cols) = m.shape();
        check_finite(m)?;
        if rows == 0 || cols == 0 {
            return Ok(Self { rows, cols, factors: None });
        }
        let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, SVD_MAX_ITER)
            .ok_or(Error::Numerical { rows, cols })?;
        let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let cutoff = rel_tol * sigma_max;
        let inv = svd
            .singular_values
            .iter()
            .map(|&s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 })
            .collect();
        let u = svd.u.ok_or(Error::Numerical { rows, cols })?;
        let v_t = svd.v_t.ok_or(Error::Numerical { rows, cols })?;
        Ok(Self { rows, cols, factors: Some((u, inv, v_t)) })
    }

    /// Returns M⁺ b.
    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        if b.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has length {}, matrix has {} rows",
                b.len(),
                self.rows
            )));
        }
        let Some((u, inv, v_t)) = &self.factors else {
            return Ok(Vector::zeros(self.cols));
        };
        let mut c = u.tr_mul(b);
        for (ci, si) in c.iter_mut().zip(inv) {
            *ci *= si;
        }
        Ok(v_t.tr_mul(&c))
    }

    /// The full pseudoinverse V Σ⁺ Uᵀ.
    pub fn pseudoinverse(&self) -> Matrix {
        let Some((u, inv, v_t)) = &self.factors else {
            return Matrix::zeros(self.cols, self.rows);
        };
        let mut v = v_t.transpose();
        for (j, s) in inv.iter().enumerate() {
            v.column_mut(j).scale_mut(*s);
        }
        v * u.transpose()
    }
}

/// Moore–Penrose pseudoinverse via SVD, truncating singular values below
/// `rel_tol * sigma_max`.
pub fn pseudoinverse(m: &Matrix, rel_tol: f64) -> Result<Matrix> {
    Ok(MinNormSolver::new(m, rel_tol)?.pseudoinverse())
}

fn check_tol(rel_tol: f64) -> Result<()> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidArgument(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    Ok(())
}

fn check_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("matrix has non-finite entries".into()))
    }
}

/// An ordered set of 1-based coordinates inside [1, d] (the Q operators).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Selector {
    coords: Vec<usize>,
    ambient_dim: usize,
}

impl Selector {
    /// `coords` must be strictly increasing and inside [1, ambient_dim].
    pub fn new(coords: Vec<usize>, ambient_dim: usize) -> Result<Self> {
        if ambient_dim == 0 {
            return Err(Error::InvalidSelector("ambient dimension must be positive".into()));
        }
        if let Some(w) = coords.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSelector(format!(
                "coordinates must be strictly increasing, found {} before {}",
                w[0], w[1]
            )));
        }
        if let Some(&c) = coords.iter().find(|&&c| c == 0 || c > ambient_dim) {
            return Err(Error::InvalidSelector(format!("coordinate {c} outside [1, {ambient_dim}]")));
        }
        Ok(Self { coords, ambient_dim })
    }

    /// Sorts first; duplicates are still rejected.
    pub fn from_unsorted(mut coords: Vec<usize>, ambient_dim: usize) -> Result<Self> {
        coords.sort_unstable();
        Self::new(coords, ambient_dim)
    }

    /// Builds from 0-based indices (internal storage convention of the samplers).
    pub(crate) fn from_zero_based(mut idx: Vec<usize>, ambient_dim: usize) -> Self {
        idx.sort_unstable();
        for i in idx.iter_mut() {
            *i += 1;
        }
        Self { coords: idx, ambient_dim }
    }

    pub fn full(ambient_dim: usize) -> Self {
        Self { coords: (1..=ambient_dim).collect(), ambient_dim }
    }

    pub fn empty(ambient_dim: usize) -> Self {
        Self { coords: Vec::new(), ambient_dim }
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn contains(&self, coord: usize) -> bool {
        self.coords.binary_search(&coord).is_ok()
    }

    pub fn complement(&self) -> Self {
        let coords = (1..=self.ambient_dim).filter(|c| !self.contains(*c)).collect();
        Self { coords, ambient_dim: self.ambient_dim }
    }

    pub fn is_subset_of(&self, other: &Selector) -> bool {
        self.ambient_dim == other.ambient_dim && self.coords.iter().all(|c| other.contains(*c))
    }

    pub fn is_disjoint(&self, other: &Selector) -> bool {
        self.coords.iter().all(|c| !other.contains(*c))
    }

    pub fn union(&self, other: &Selector) -> Result<Self> {
        self.same_ambient(other.ambient_dim)?;
        let mut coords: Vec<usize> = self.coords.iter().chain(&other.coords).copied().collect();
        coords.sort_unstable();
        coords.dedup();
        Ok(Self { coords, ambient_dim: self.ambient_dim })
    }

    /// Q_S v.
    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        self.same_ambient(v.len())?;
        Ok(Vector::from_iterator(self.len(), self.coords.iter().map(|&c| v[c - 1])))
    }

    /// Q_Sᵀ w.
    pub fn embed(&self, w: &Vector) -> Result<Vector> {
        if w.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "embedding {} values into a selector of size {}",
                w.len(),
                self.len()
            )));
        }
        let mut u = Vector::zeros(self.ambient_dim);
        for (&c, &x) in self.coords.iter().zip(w.iter()) {
            u[c - 1] = x;
        }
        Ok(u)
    }

    /// ‖Q_S v‖² without allocating.
    pub fn norm_sq(&self, v: &Vector) -> Result<f64> {
        self.same_ambient(v.len())?;
        Ok(self.coords.iter().map(|&c| v[c - 1] * v[c - 1]).sum())
    }

    /// ⟨Q_S a, Q_S b⟩.
    pub fn dot(&self, a: &Vector, b: &Vector) -> Result<f64> {
        self.same_ambient(a.len())?;
        self.same_ambient(b.len())?;
        Ok(self.coords.iter().map(|&c| a[c - 1] * b[c - 1]).sum())
    }

    /// M Q_Sᵀ: the columns of `m` listed by the selector.
    pub fn select_columns(&self, m: &Matrix) -> Result<Matrix> {
        self.same_ambient(m.ncols())?;
        let rows = m.nrows();
        let mut out = Matrix::zeros(rows, self.len());
        for (j, &c) in self.coords.iter().enumerate() {
            out.column_mut(j).copy_from(&m.column(c - 1));
        }
        Ok(out)
    }

    fn same_ambient(&self, len: usize) -> Result<()> {
        if len == self.ambient_dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "selector over [1, {}] used with dimension {}",
                self.ambient_dim, len
            )))
        }
    }
}

pub fn apply_selector(sel: &Selector, v: &Vector) -> Result<Vector> {
    sel.apply(v)
}

pub fn embed_selector(sel: &Selector, w: &Vector) -> Result<Vector> {
    sel.embed(w)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// seed = h(h(h(master) ^ trial) ^ point), h = splitmix64 finalizer.
/// Every (master, trial, point) triple gets its own stream, independent of
/// evaluation order or thread count.
pub fn derive_seed(master_seed: u64, trial_index: u64, point_index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ trial_index) ^ point_index)
}

pub fn seeded_rng(seed: u64) -> TrialRng {
    TrialRng::seed_from_u64(seed)
}

pub fn trial_rng(master_seed: u64, trial_index: u64, point_index: u64) -> TrialRng {
    seeded_rng(derive_seed(master_seed, trial_index, point_index))
}
