//! Concave random Hamiltonians on the box and the assembled total energy.
//!
//! Every model shipped here is a quadratic form
//!
//! ```text
//! H(σ) = -½ σᵀAσ + hᵀσ + c,   A symmetric positive semi-definite,
//! ```
//!
//! so the Hessian is `-A` everywhere. The random-field model has `A = 0`
//! (separable), the quadratic model a scaled Wishart matrix, and the planted
//! ridge model the Gram matrix of a Gaussian design. A [`DisorderSample`]
//! bundles one model realization with a sampled Poisson perturbation and the
//! seed lineage that produced both, and evaluates the total energy
//! `H(σ) - ε‖σ‖²/2 + H_pert(σ)`.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::perturbation::{
    gaussian_regularization_energy, sample_perturbation, PerturbationState, TruncationPolicy,
};
use crate::rng::{purpose, SeedLineage};

/// A concave Hamiltonian with the hooks the samplers and checks need.
pub trait HamiltonianModel: Send + Sync {
    fn dim(&self) -> usize;

    fn energy(&self, sigma: &[f64]) -> f64;

    fn gradient_into(&self, sigma: &[f64], grad: &mut [f64]);

    fn gradient(&self, sigma: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(sigma, &mut g);
        g
    }

    /// Certified upper bound on the largest Hessian eigenvalue (≤ 0).
    fn hessian_upper_bound(&self) -> f64;

    fn is_separable(&self) -> bool;

    /// `-∂²H/∂σ_i²`.
    fn self_curvature(&self, site: usize) -> f64;

    /// Updates `grad` after `σ_site` moved by `delta`.
    fn shift_gradient(&self, grad: &mut [f64], site: usize, delta: f64);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Zero,
    RandomField,
    Quadratic,
    PlantedRidge,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Zero => "zero",
            ModelKind::RandomField => "random-field",
            ModelKind::Quadratic => "quadratic",
            ModelKind::PlantedRidge => "planted-ridge",
        }
    }
}

/// `-½ σᵀAσ + hᵀσ + c` with lazily certified spectrum.
#[derive(Debug)]
pub struct Hamiltonian {
    kind: ModelKind,
    n: usize,
    /// Row-major `A`; `None` means `A = 0`.
    coupling: Option<Vec<f64>>,
    field: Vec<f64>,
    offset: f64,
    sigma_star: Option<Vec<f64>>,
    bound: OnceLock<f64>,
}

impl Clone for Hamiltonian {
    fn clone(&self) -> Self {
        let bound = OnceLock::new();
        if let Some(&b) = self.bound.get() {
            let _ = bound.set(b);
        }
        Hamiltonian {
            kind: self.kind,
            n: self.n,
            coupling: self.coupling.clone(),
            field: self.field.clone(),
            offset: self.offset,
            sigma_star: self.sigma_star.clone(),
            bound,
        }
    }
}

impl PartialEq for Hamiltonian {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.n == other.n
            && self.coupling == other.coupling
            && self.field == other.field
            && self.offset == other.offset
            && self.sigma_star == other.sigma_star
    }
}

impl Hamiltonian {
    /// Builds a model from explicit parts. `coupling` is row-major, must be
    /// symmetric; positive semi-definiteness is checked when the Hessian bound
    /// is first requested.
    pub fn from_parts(
        kind: ModelKind,
        field: Vec<f64>,
        coupling: Option<Vec<f64>>,
        offset: f64,
        sigma_star: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = field.len();
        if n == 0 {
            return Err(Error::invalid("N must be positive"));
        }
        if let Some(a) = &coupling {
            check_len(n * n, a.len())?;
            for i in 0..n {
                for j in 0..i {
                    if a[i * n + j] != a[j * n + i] {
                        return Err(Error::invalid("coupling matrix is not symmetric"));
                    }
                }
            }
        }
        if let Some(s) = &sigma_star {
            check_len(n, s.len())?;
        }
        if (kind == ModelKind::PlantedRidge) != sigma_star.is_some() {
            return Err(Error::invalid("a planted signal is required exactly for planted models"));
        }
        if field.iter().any(|x| !x.is_finite()) || !offset.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Hamiltonian {
            kind,
            n,
            coupling,
            field,
            offset,
            sigma_star,
            bound: OnceLock::new(),
        })
    }

    pub fn zero(n: usize) -> Result<Self> {
        Hamiltonian::from_parts(ModelKind::Zero, vec![0.0; n], None, 0.0, None)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Same model with every field entry shifted by `delta`.
    pub fn with_field_shift(&self, delta: f64) -> Self {
        let mut m = self.clone();
        for h in m.field.iter_mut() {
            *h += delta;
        }
        m
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    pub fn coupling(&self) -> Option<&[f64]> {
        self.coupling.as_deref()
    }

    pub fn sigma_star(&self) -> Option<&[f64]> {
        self.sigma_star.as_deref()
    }

    /// Smallest eigenvalue of `A` (0 when `A = 0`).
    pub fn min_coupling_eigenvalue(&self) -> f64 {
        match &self.coupling {
            None => 0.0,
            Some(a) => {
                let m = DMatrix::from_row_slice(self.n, self.n, a);
                m.symmetric_eigenvalues().min()
            }
        }
    }

    /// Same model with coordinates relabelled: new site `k` is old site `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_len(self.n, perm.len())?;
        let n = self.n;
        let field = perm.iter().map(|&p| self.field[p]).collect();
        let coupling = self.coupling.as_ref().map(|a| {
            let mut b = vec![0.0; n * n];
            for (k, &p) in perm.iter().enumerate() {
                for (l, &q) in perm.iter().enumerate() {
                    b[k * n + l] = a[p * n + q];
                }
            }
            b
        });
        let star = self
            .sigma_star
            .as_ref()
            .map(|s| perm.iter().map(|&p| s[p]).collect());
        Hamiltonian::from_parts(self.kind, field, coupling, self.offset, star)
    }

    fn row(&self, i: usize) -> Option<&[f64]> {
        self.coupling
            .as_ref()
            .map(|a| &a[i * self.n..(i + 1) * self.n])
    }
}

impl HamiltonianModel for Hamiltonian {
    fn dim(&self) -> usize {
        self.n
    }

    fn energy(&self, sigma: &[f64]) -> f64 {
        let lin: f64 = self.field.iter().zip(sigma).map(|(h, s)| h * s).sum();
        let quad = match &self.coupling {
            None => 0.0,
            Some(_) => (0..self.n)
                .map(|i| {
                    let row = self.row(i).expect("coupling present");
                    sigma[i] * row.iter().zip(sigma).map(|(a, s)| a * s).sum::<f64>()
                })
                .sum::<f64>(),
        };
        self.offset + lin - 0.5 * quad
    }

    fn gradient_into(&self, sigma: &[f64], grad: &mut [f64]) {
        for i in 0..self.n {
            let ai = match self.row(i) {
                Some(row) => row.iter().zip(sigma).map(|(a, s)| a * s).sum::<f64>(),
                None => 0.0,
            };
            grad[i] = self.field[i] - ai;
        }
    }

    fn hessian_upper_bound(&self) -> f64 {
        *self.bound.get_or_init(|| {
            if self.coupling.is_none() {
                return 0.0;
            }
            let lmin = self.min_coupling_eigenvalue();
            let scale = self
                .coupling
                .as_ref()
                .map(|a| a.iter().fold(0.0f64, |m, x| m.max(x.abs())))
                .unwrap_or(0.0);
            let tol = 1e-10 * (1.0 + scale) * self.n as f64;
            -(lmin - tol).max(0.0)
        })
    }

    fn is_separable(&self) -> bool {
        self.coupling.is_none()
    }

    fn self_curvature(&self, site: usize) -> f64 {
        self.row(site).map_or(0.0, |r| r[site])
    }

    fn shift_gradient(&self, grad: &mut [f64], site: usize, delta: f64) {
        if let Some(row) = self.row(site) {
            for (g, a) in grad.iter_mut().zip(row) {
                *g -= a * delta;
            }
        }
    }
}

fn normals<R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `H(σ) = Σ h_i σ_i`, `h_i ~ N(0, field_std²)`.
pub fn random_field_model<R: Rng + ?Sized>(n: usize, field_std: f64, rng: &mut R) -> Result<Hamiltonian> {
    if !(field_std > 0.0) {
        return Err(Error::Domain {
            what: "field_std",
            value: field_std,
            domain: "(0, ∞)",
        });
    }
    Hamiltonian::from_parts(ModelKind::RandomField, normals(rng, n, field_std), None, 0.0, None)
}

/// `H(σ) = -½σᵀAσ + hᵀσ`, `A = (scale/M)·GGᵀ` with `G` an `N×M` standard Gaussian matrix.
pub fn quadratic_model<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    coupling_scale: f64,
    rng: &mut R,
) -> Result<Hamiltonian> {
    if !(coupling_scale > 0.0) {
        return Err(Error::Domain {
            what: "coupling_scale",
            value: coupling_scale,
            domain: "(0, ∞)",
        });
    }
    if n == 0 || m == 0 {
        return Err(Error::invalid("N and M must be positive"));
    }
    let g = DMatrix::from_row_slice(n, m, &normals(rng, n * m, 1.0));
    let h = normals(rng, n, 1.0);
    let a = (&g * g.transpose()) * (coupling_scale / m as f64);
    Hamiltonian::from_parts(ModelKind::Quadratic, h, Some(symmetric_rows(&a)), 0.0, None)
}

/// Bayesian ridge posterior: `H(σ) = -‖y - Xσ‖²/(2·noise_std²)`.
pub fn planted_ridge_model<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<Hamiltonian> {
    if !(noise_std > 0.0) {
        return Err(Error::Domain {
            what: "noise_std",
            value: noise_std,
            domain: "(0, ∞)",
        });
    }
    if n == 0 || m == 0 {
        return Err(Error::invalid("N and M must be positive"));
    }
    let star: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let x = DMatrix::from_row_slice(m, n, &normals(rng, m * n, (1.0 / n as f64).sqrt()));
    let z = nalgebra::DVector::from_vec(normals(rng, m, 1.0));
    let y = &x * nalgebra::DVector::from_column_slice(&star) + z * noise_std;
    let s2 = noise_std * noise_std;
    let a = x.transpose() * &x / s2;
    let h = (x.transpose() * &y / s2).iter().copied().collect();
    let offset = -y.norm_squared() / (2.0 * s2);
    Hamiltonian::from_parts(
        ModelKind::PlantedRidge,
        h,
        Some(symmetric_rows(&a)),
        offset,
        Some(star),
    )
}

/// Row-major copy of a numerically symmetric matrix, symmetrized exactly.
fn symmetric_rows(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    out
}

/// `N^{-1} Σ σ*_i σ_i`.
pub fn planted_overlap(sigma: &[f64], sigma_star: &[f64]) -> Result<f64> {
    check_len(sigma_star.len(), sigma.len())?;
    Ok(sigma.iter().zip(sigma_star).map(|(a, b)| a * b).sum::<f64>() / sigma.len() as f64)
}

/// Serializable model family and parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Zero,
    RandomField {
        #[serde(default = "one")]
        field_std: f64,
    },
    Quadratic {
        /// `M = ⌈m_ratio·N⌉`.
        #[serde(default = "two")]
        m_ratio: f64,
        #[serde(default = "one")]
        coupling_scale: f64,
    },
    PlantedRidge {
        #[serde(default = "two")]
        m_ratio: f64,
        #[serde(default = "one")]
        noise_std: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Zero => ModelKind::Zero,
            ModelSpec::RandomField { .. } => ModelKind::RandomField,
            ModelSpec::Quadratic { .. } => ModelKind::Quadratic,
            ModelSpec::PlantedRidge { .. } => ModelKind::PlantedRidge,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, ModelSpec::Zero | ModelSpec::RandomField { .. })
    }

    pub fn build(&self, n: usize, lineage: &SeedLineage) -> Result<Hamiltonian> {
        let mut rng = lineage.rng();
        let rows = |ratio: f64| -> Result<usize> {
            if !(ratio > 0.0) {
                return Err(Error::invalid("m_ratio must be positive"));
            }
            Ok(((ratio * n as f64).ceil() as usize).max(1))
        };
        match *self {
            ModelSpec::Zero => Hamiltonian::zero(n),
            ModelSpec::RandomField { field_std } => random_field_model(n, field_std, &mut rng),
            ModelSpec::Quadratic {
                m_ratio,
                coupling_scale,
            } => quadratic_model(n, rows(m_ratio)?, coupling_scale, &mut rng),
            ModelSpec::PlantedRidge { m_ratio, noise_std } => {
                planted_ridge_model(n, rows(m_ratio)?, noise_std, &mut rng)
            }
        }
    }
}

/// One disorder realization: model, perturbation and their seed lineage.
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderSample {
    pub spec: Option<ModelSpec>,
    pub model: Arc<Hamiltonian>,
    pub perturbation: PerturbationState,
    pub lineage: SeedLineage,
}

/// Replayable text record of a [`DisorderSample`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderRecord {
    pub spec: ModelSpec,
    pub n: usize,
    pub lineage: SeedLineage,
    pub perturbation: PerturbationState,
}

impl DisorderSample {
    /// Draws the model from `lineage / DISORDER` and the perturbation from
    /// `lineage / PERTURBATION`. The strength `t` does not enter the streams.
    pub fn draw(
        spec: &ModelSpec,
        n: usize,
        s_n: f64,
        t: f64,
        policy: &TruncationPolicy,
        lineage: &SeedLineage,
    ) -> Result<Self> {
        let model = spec.build(n, &lineage.child(purpose::DISORDER))?;
        let perturbation =
            sample_perturbation(n, s_n, t, policy, &lineage.child(purpose::PERTURBATION))?;
        Ok(DisorderSample {
            spec: Some(*spec),
            model: Arc::new(model),
            perturbation,
            lineage: lineage.clone(),
        })
    }

    /// Wraps an explicit model with no perturbation.
    pub fn unperturbed(model: Hamiltonian) -> Self {
        let n = model.dim();
        DisorderSample {
            spec: None,
            model: Arc::new(model),
            perturbation: PerturbationState::empty(n),
            lineage: SeedLineage::new(0),
        }
    }

    pub fn with_perturbation(model: Hamiltonian, perturbation: PerturbationState) -> Result<Self> {
        check_len(model.dim(), perturbation.n())?;
        Ok(DisorderSample {
            spec: None,
            model: Arc::new(model),
            perturbation,
            lineage: SeedLineage::new(0),
        })
    }

    /// Same disorder at a different perturbation strength.
    pub fn with_strength(&self, t: f64) -> Result<Self> {
        Ok(DisorderSample {
            perturbation: self.perturbation.with_strength(t)?,
            ..self.clone()
        })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn is_separable(&self) -> bool {
        self.model.is_separable()
    }

    /// `H(σ) - ε‖σ‖²/2 + H_pert(σ)`.
    pub fn total_energy(&self, sigma: &[f64], eps: f64) -> Result<f64> {
        check_len(self.dim(), sigma.len())?;
        Ok(self.model.energy(sigma)
            + gaussian_regularization_energy(sigma, eps)
            + self.perturbation.energy(sigma)?)
    }

    pub fn total_gradient(&self, sigma: &[f64], eps: f64) -> Result<Vec<f64>> {
        check_len(self.dim(), sigma.len())?;
        let mut g = self.model.gradient(sigma);
        for (gi, s) in g.iter_mut().zip(sigma) {
            *gi -= eps * s;
        }
        self.perturbation.add_gradient(sigma, &mut g)?;
        Ok(g)
    }

    /// Certified Hessian bound of the total energy: model bound minus `ε`
    /// (the perturbation only adds concave terms).
    pub fn total_hessian_bound(&self, eps: f64) -> f64 {
        self.model.hessian_upper_bound() - eps
    }

    /// Site potential `x ↦ h_i x - εx²/2 + H_pert,i(x)` of a separable model.
    pub fn site_potential(&self, site: usize, eps: f64) -> Result<impl Fn(f64) -> f64 + '_> {
        if !self.is_separable() {
            return Err(Error::Unsupported("site potentials need a separable model".into()));
        }
        if site >= self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: site,
            });
        }
        let h = self.model.field()[site];
        Ok(move |x: f64| h * x - 0.5 * eps * x * x + self.perturbation.site_energy(site, x))
    }

    pub fn record(&self) -> Result<DisorderRecord> {
        let spec = self
            .spec
            .ok_or_else(|| Error::Unsupported("disorder built from explicit parts has no replay record".into()))?;
        Ok(DisorderRecord {
            spec,
            n: self.dim(),
            lineage: self.lineage.clone(),
            perturbation: self.perturbation.clone(),
        })
    }

    /// Rebuilds the model from its seed and attaches the recorded perturbation.
    pub fn replay(record: &DisorderRecord) -> Result<Self> {
        check_len(record.n, record.perturbation.n())?;
        let model = record
            .spec
            .build(record.n, &record.lineage.child(purpose::DISORDER))?;
        Ok(DisorderSample {
            spec: Some(record.spec),
            model: Arc::new(model),
            perturbation: record.perturbation.clone(),
            lineage: record.lineage.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_point(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.random_range(-1.0..=1.0)).collect()
    }

    fn all_models(n: usize) -> Vec<Hamiltonian> {
        vec![
            random_field_model(n, 1.0, &mut rng(1)).unwrap(),
            quadratic_model(n, 2 * n, 1.0, &mut rng(2)).unwrap(),
            planted_ridge_model(n, 2 * n, 0.5, &mut rng(3)).unwrap(),
        ]
    }

    #[test]
    fn random_field_examples() {
        let m = Hamiltonian::from_parts(ModelKind::RandomField, vec![1.0; 5], None, 0.0, None).unwrap();
        assert_eq!(m.energy(&[1.0; 5]), 5.0);
        assert_eq!(m.gradient(&[0.3, -0.2, 0.0, 1.0, -1.0]), vec![1.0; 5]);
        assert_eq!(m.hessian_upper_bound(), 0.0);
        assert!(m.is_separable());
        assert!(random_field_model(3, 0.0, &mut rng(0)).is_err());
    }

    #[test]
    fn quadratic_examples() {
        let m = quadratic_model(6, 12, 1.0, &mut rng(4)).unwrap();
        assert_eq!(m.energy(&[0.0; 6]), 0.0);
        assert_eq!(m.gradient(&[0.0; 6]), m.field().to_vec());
        assert!(m.hessian_upper_bound() <= 0.0);
        assert!(!m.is_separable());
        let a = m.coupling().unwrap();
        let mut r = rng(5);
        for _ in 0..100 {
            let v: Vec<f64> = (0..6).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let q: f64 = (0..6)
                .map(|i| v[i] * (0..6).map(|j| a[i * 6 + j] * v[j]).sum::<f64>())
                .sum();
            assert!(-q <= 1e-12);
        }
        assert!(quadratic_model(3, 6, -1.0, &mut rng(0)).is_err());
    }

    #[test]
    fn hessian_bound_matches_spectrum_of_wishart() {
        let n = 40;
        let m = quadratic_model(n, 2 * n, 1.0, &mut rng(6)).unwrap();
        let b = m.hessian_upper_bound();
        // Marchenko–Pastur lower edge (1 - √(1/2))² ≈ 0.086.
        assert!(b < -0.01 && b > -0.3, "bound {b}");
    }

    #[test]
    fn planted_ridge_examples() {
        let n = 5;
        let mut r = rng(7);
        let star: Vec<f64> = random_point(&mut r, n);
        let x: Vec<f64> = (0..10 * n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let xm = DMatrix::from_row_slice(10, n, &x);
        let y = &xm * nalgebra::DVector::from_column_slice(&star);
        let a = symmetric_rows(&(xm.transpose() * &xm));
        let h: Vec<f64> = (xm.transpose() * &y).iter().copied().collect();
        let m = Hamiltonian::from_parts(
            ModelKind::PlantedRidge,
            h,
            Some(a),
            -y.norm_squared() / 2.0,
            Some(star.clone()),
        )
        .unwrap();
        assert!(m.energy(&star).abs() < 1e-10);
        assert!(m.gradient(&star).iter().all(|g| g.abs() < 1e-10));
        let p = random_point(&mut r, n);
        assert!(m.energy(&p) <= 1e-12);
        let q = planted_overlap(&star, &star).unwrap();
        assert!(q <= 1.0 && q > 0.0);
        let neg: Vec<f64> = star.iter().map(|x| -x).collect();
        assert!((planted_overlap(&neg, &star).unwrap() + q).abs() < 1e-15);
    }

    #[test]
    fn planted_overlap_examples() {
        assert_eq!(planted_overlap(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(planted_overlap(&[1.0, -1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(planted_overlap(&[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(8);
        for m in all_models(7) {
            for _ in 0..10 {
                let s = random_point(&mut r, 7);
                let g = m.gradient(&s);
                for i in 0..7 {
                    let h = 1e-5;
                    let (mut a, mut b) = (s.clone(), s.clone());
                    a[i] += h;
                    b[i] -= h;
                    let fd = (m.energy(&a) - m.energy(&b)) / (2.0 * h);
                    assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{:?}", m.kind());
                }
            }
        }
    }

    #[test]
    fn concavity_along_random_directions() {
        let mut r = rng(9);
        for m in all_models(5) {
            for _ in 0..1000 {
                let s = random_point(&mut r, 5);
                let v: Vec<f64> = (0..5).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
                let h = 1e-3;
                let at = |c: f64| -> f64 {
                    let p: Vec<f64> = s.iter().zip(&v).map(|(x, d)| x + c * d).collect();
                    m.energy(&p)
                };
                let second = (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
                let vv: f64 = v.iter().map(|x| x * x).sum();
                assert!(second <= m.hessian_upper_bound() * vv + 1e-4 * (1.0 + vv));
            }
        }
    }

    #[test]
    fn exchangeability_under_joint_permutation() {
        let mut r = rng(10);
        for m in all_models(6) {
            let perm = [3, 0, 5, 1, 4, 2];
            let pm = m.permuted(&perm).unwrap();
            let s = random_point(&mut r, 6);
            let ps: Vec<f64> = perm.iter().map(|&p| s[p]).collect();
            assert!((m.energy(&s) - pm.energy(&ps)).abs() <= 1e-12 * (1.0 + m.energy(&s).abs()));
        }
    }

    #[test]
    fn shift_gradient_tracks_full_recomputation() {
        let m = quadratic_model(5, 10, 1.0, &mut rng(11)).unwrap();
        let mut s = vec![0.1, -0.2, 0.3, 0.0, 0.9];
        let mut g = m.gradient(&s);
        s[2] -= 0.7;
        m.shift_gradient(&mut g, 2, -0.7);
        let fresh = m.gradient(&s);
        assert!(g.iter().zip(&fresh).all(|(a, b)| (a - b).abs() < 1e-14));
        assert!(m.self_curvature(2) > 0.0);
    }

    #[test]
    fn total_energy_examples() {
        let m = random_field_model(4, 1.0, &mut rng(12)).unwrap();
        let d = DisorderSample::unperturbed(m.clone());
        let s = [0.2, -0.1, 0.5, 0.9];
        assert_eq!(d.total_energy(&s, 0.0).unwrap(), m.energy(&s));
        let z = DisorderSample::unperturbed(Hamiltonian::zero(4).unwrap());
        assert!((z.total_energy(&[1.0; 4], 0.2).unwrap() + 0.4).abs() < 1e-15);
        assert!(d.total_energy(&[0.0; 3], 0.0).is_err());
        assert!(d.total_hessian_bound(0.3) <= -0.3);
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let spec = ModelSpec::Quadratic {
            m_ratio: 2.0,
            coupling_scale: 1.0,
        };
        let d = DisorderSample::draw(&spec, 6, 3.0, 1.0, &TruncationPolicy::default(), &SeedLineage::new(13))
            .unwrap();
        let mut r = rng(14);
        for _ in 0..10 {
            let s = random_point(&mut r, 6);
            let g = d.total_gradient(&s, 0.4).unwrap();
            for i in 0..6 {
                let h = 1e-5;
                let (mut a, mut b) = (s.clone(), s.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (d.total_energy(&a, 0.4).unwrap() - d.total_energy(&b, 0.4).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn disorder_record_replays_exactly() {
        let spec = ModelSpec::PlantedRidge {
            m_ratio: 1.5,
            noise_std: 0.7,
        };
        let d = DisorderSample::draw(&spec, 5, 2.0, 1.0, &TruncationPolicy::default(), &SeedLineage::new(15).child(3))
            .unwrap();
        let text = serde_json::to_string(&d.record().unwrap()).unwrap();
        let back = DisorderSample::replay(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, d);
        assert!(back.model.sigma_star().is_some());
    }

    #[test]
    fn strength_does_not_change_disorder() {
        let spec = ModelSpec::RandomField { field_std: 1.0 };
        let lin = SeedLineage::new(16);
        let p = TruncationPolicy::default();
        let a = DisorderSample::draw(&spec, 8, 3.0, 1.0, &p, &lin).unwrap();
        let b = DisorderSample::draw(&spec, 8, 3.0, 0.0, &p, &lin).unwrap();
        assert_eq!(a.with_strength(0.0).unwrap(), b);
    }
}
