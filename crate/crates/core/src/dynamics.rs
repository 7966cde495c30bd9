//! Mode-centred vector AR(1) model of the curve state.
//!
//! `ψ_t = X_t − X*` follows `ψ_{t+1} = μ + A ψ_t + Z_{t+1}` with Gaussian
//! innovations `Z ~ N(0, Σ)`. The model is fitted by least squares, sampled
//! from its stationary law, and stepped forward to produce one-day scenarios.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curve::{DT, N_CMF, STATE_DIM};
use crate::error::{Error, Result};
use crate::StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconomicParams {
    /// Annualised risk-free rate.
    pub r: f64,
    /// Year fraction per trading day.
    pub dt: f64,
}

impl Default for EconomicParams {
    fn default() -> Self {
        EconomicParams { r: 0.0, dt: DT }
    }
}

impl EconomicParams {
    pub fn new(r: f64, dt: f64) -> Result<Self> {
        if !(r >= 0.0) || !(dt > 0.0) {
            return Err(Error::Config(format!(
                "need r >= 0 and dt > 0, got r={r}, dt={dt}"
            )));
        }
        Ok(EconomicParams { r, dt })
    }
}

pub const LYAPUNOV_TOL: f64 = 1e-12;
pub const LYAPUNOV_MAX_ITER: usize = 1_000_000;
pub const STATIONARITY_MARGIN: f64 = 1e-9;
pub const SINGULAR_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Least-squares estimates `(μ̂, Â, Σ̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarFit {
    pub mu: DVector<f64>,
    pub a_matrix: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Transitions that entered the estimate.
    pub transitions: usize,
}

#[derive(Debug, Clone)]
pub struct VarModel {
    pub mode: StateVector,
    pub mu: DVector<f64>,
    pub a_matrix: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// `None` when the transition matrix is not stable.
    pub stationary: Option<StationaryMoments>,
    noise_factor: DMatrix<f64>,
    stationary_factor: Option<DMatrix<f64>>,
}

impl PartialEq for VarModel {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.mu == other.mu
            && self.a_matrix == other.a_matrix
            && self.sigma == other.sigma
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Symmetric square-root factor `L` with `L Lᵀ = cov`, negative eigenvalues
/// clipped to zero.
pub fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Stationary mean `(I − A)⁻¹ μ` and covariance solving `S = A S Aᵀ + Σ` by
/// fixed-point iteration.
pub fn stationary_moments(
    a: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<StationaryMoments> {
    let radius = spectral_radius(a);
    if radius >= 1.0 - STATIONARITY_MARGIN {
        return Err(Error::NonStationary { radius });
    }
    let n = a.nrows();
    let mean = (DMatrix::identity(n, n) - a)
        .lu()
        .solve(mu)
        .ok_or(Error::NonStationary { radius })?;

    let at = a.transpose();
    let mut s = sigma.clone();
    for _ in 0..LYAPUNOV_MAX_ITER {
        let next = a * &s * &at + sigma;
        let change = (&next - &s).norm();
        s = next;
        if change < LYAPUNOV_TOL {
            break;
        }
    }
    Ok(StationaryMoments { mean, cov: s })
}

/// Frobenius residual `‖S − A S Aᵀ − Σ‖`.
pub fn lyapunov_residual(a: &DMatrix<f64>, sigma: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    (s - a * s * a.transpose() - sigma).norm()
}

/// `ψ_t = X_t − X*`.
pub fn center_states(states: &[StateVector], mode: &StateVector) -> Result<Vec<DVector<f64>>> {
    states
        .iter()
        .map(|x| {
            if x.len() != mode.len() {
                Err(Error::DimensionMismatch {
                    expected: mode.len(),
                    got: x.len(),
                })
            } else {
                Ok(x - mode)
            }
        })
        .collect()
}

/// Split a series at the transitions listed in `breaks` (index `t` removes
/// the transition `t → t+1`).
pub fn split_at_breaks<'a>(
    psi: &'a [DVector<f64>],
    breaks: &BTreeSet<usize>,
) -> Vec<&'a [DVector<f64>]> {
    let mut segments = Vec::new();
    let mut start = 0;
    for &b in breaks.iter().filter(|&&b| b + 1 < psi.len()) {
        segments.push(&psi[start..=b]);
        start = b + 1;
    }
    if start < psi.len() {
        segments.push(&psi[start..]);
    }
    segments
}

/// Least-squares fit over the transitions of `psi` not listed in `breaks`.
pub fn fit_var(psi: &[DVector<f64>], breaks: &BTreeSet<usize>) -> Result<VarFit> {
    fit_var_segments(&split_at_breaks(psi, breaks))
}

/// Least-squares fit over the within-segment transitions of several
/// contiguous segments. The centring mean runs over every observation.
pub fn fit_var_segments(segments: &[&[DVector<f64>]]) -> Result<VarFit> {
    let dim = segments
        .iter()
        .find_map(|s| s.first())
        .map(|x| x.len())
        .ok_or(Error::InsufficientHistory { needed: 2, got: 0 })?;
    let mut count = 0usize;
    let mut total = DVector::zeros(dim);
    for x in segments.iter().flat_map(|s| s.iter()) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        total += x;
        count += 1;
    }
    let transitions: usize = segments.iter().map(|s| s.len().saturating_sub(1)).sum();
    if transitions <= dim {
        return Err(Error::InsufficientHistory {
            needed: dim + 1,
            got: transitions,
        });
    }
    let mean = total / count as f64;

    let mut lead_lag = DMatrix::zeros(dim, dim);
    let mut lag_lag = DMatrix::zeros(dim, dim);
    for seg in segments {
        for w in seg.windows(2) {
            let lag = &w[0] - &mean;
            let lead = &w[1] - &mean;
            lead_lag.ger(1.0, &lead, &lag, 1.0);
            lag_lag.ger(1.0, &lag, &lag, 1.0);
        }
    }

    let eig = lag_lag.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let rcond = if max > 0.0 { (min / max).max(0.0) } else { 0.0 };
    if rcond < SINGULAR_RCOND {
        return Err(Error::SingularCovariate { rcond });
    }
    // Â = S₁₀ S₀₀⁻¹, solved as S₀₀ Âᵀ = S₁₀ᵀ.
    let a_t = lag_lag
        .cholesky()
        .ok_or(Error::SingularCovariate { rcond })?
        .solve(&lead_lag.transpose());
    let a_matrix = a_t.transpose();
    let mu = (DMatrix::identity(dim, dim) - &a_matrix) * &mean;

    let mut sigma = DMatrix::zeros(dim, dim);
    for seg in segments {
        for w in seg.windows(2) {
            let z = &w[1] - &mu - &a_matrix * &w[0];
            sigma.ger(1.0, &z, &z, 1.0);
        }
    }
    sigma /= transitions as f64;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(VarFit {
        mu,
        a_matrix,
        sigma,
        transitions,
    })
}

impl VarModel {
    pub fn new(
        mode: StateVector,
        mu: DVector<f64>,
        a_matrix: DMatrix<f64>,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        let n = mode.len();
        for got in [
            mu.len(),
            a_matrix.nrows(),
            a_matrix.ncols(),
            sigma.nrows(),
            sigma.ncols(),
        ] {
            if got != n {
                return Err(Error::DimensionMismatch { expected: n, got });
            }
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let stationary = stationary_moments(&a_matrix, &mu, &sigma).ok();
        let stationary_factor = stationary.as_ref().map(|m| psd_factor(&m.cov));
        Ok(VarModel {
            noise_factor: psd_factor(&sigma),
            mode,
            mu,
            a_matrix,
            sigma,
            stationary,
            stationary_factor,
        })
    }

    pub fn from_fit(mode: StateVector, fit: VarFit) -> Result<Self> {
        Self::new(mode, fit.mu, fit.a_matrix, fit.sigma)
    }

    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    pub fn moments(&self) -> Result<&StationaryMoments> {
        self.stationary
            .as_ref()
            .ok_or_else(|| Error::NonStationary {
                radius: spectral_radius(&self.a_matrix),
            })
    }

    fn standard_normal(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng))
    }

    /// One draw of `X* + mean + L z` from the stationary law.
    pub fn draw_stationary(&self, rng: &mut ChaCha8Rng) -> Result<StateVector> {
        let moments = self.moments()?;
        let factor = self
            .stationary_factor
            .as_ref()
            .expect("factor present with moments");
        let z = self.standard_normal(rng);
        Ok(&self.mode + &moments.mean + factor * z)
    }

    /// One draw of `X_{t+1} = X* + μ + A (x − X*) + Z`.
    pub fn draw_step(&self, x: &StateVector, rng: &mut ChaCha8Rng) -> StateVector {
        let z = self.standard_normal(rng);
        self.expected_step(x) + &self.noise_factor * z
    }

    /// Conditional mean of the next state.
    pub fn expected_step(&self, x: &StateVector) -> StateVector {
        &self.mode + &self.mu + &self.a_matrix * (x - &self.mode)
    }

    fn check_dim(&self, x: &StateVector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VarModelDoc::from(self)).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: VarModelDoc = serde_json::from_str(text)?;
        doc.into_model()
    }

    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        let mut doc = VarModelDoc::from(self);
        doc.config_hash = config_hash.map(str::to_string);
        let text = serde_json::to_string_pretty(&doc)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: VarModelDoc = serde_json::from_str(&text)?;
        let hash = doc.config_hash.clone();
        Ok((doc.into_model()?, hash))
    }
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// On-disk model: row-major arrays plus a schema version.
#[derive(Debug, Serialize, Deserialize)]
struct VarModelDoc {
    schema_version: u32,
    dim: usize,
    mode: Vec<f64>,
    mu: Vec<f64>,
    a_matrix: Vec<f64>,
    sigma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl From<&VarModel> for VarModelDoc {
    fn from(m: &VarModel) -> Self {
        VarModelDoc {
            schema_version: MODEL_SCHEMA_VERSION,
            dim: m.dim(),
            mode: m.mode.as_slice().to_vec(),
            mu: m.mu.as_slice().to_vec(),
            a_matrix: row_major(&m.a_matrix),
            sigma: row_major(&m.sigma),
            config_hash: None,
        }
    }
}

impl VarModelDoc {
    fn into_model(self) -> Result<VarModel> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported model schema version {}",
                self.schema_version
            )));
        }
        let n = self.dim;
        for (name, len, want) in [
            ("mode", self.mode.len(), n),
            ("mu", self.mu.len(), n),
            ("a_matrix", self.a_matrix.len(), n * n),
            ("sigma", self.sigma.len(), n * n),
        ] {
            if len != want {
                return Err(Error::Config(format!(
                    "model field {name} has {len} entries, expected {want}"
                )));
            }
        }
        VarModel::new(
            DVector::from_vec(self.mode),
            DVector::from_vec(self.mu),
            DMatrix::from_row_slice(n, n, &self.a_matrix),
            DMatrix::from_row_slice(n, n, &self.sigma),
        )
    }
}

/// Seeded generator for independent stream `stream` of a run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_stationary(model: &VarModel, n: usize, seed: u64) -> Result<Vec<StateVector>> {
    model.moments()?;
    let mut rng = stream_rng(seed, 0);
    (0..n).map(|_| model.draw_stationary(&mut rng)).collect()
}

pub fn step(model: &VarModel, x: &StateVector, m: usize, seed: u64) -> Result<Vec<StateVector>> {
    model.check_dim(x)?;
    let mut rng = stream_rng(seed, 0);
    Ok((0..m).map(|_| model.draw_step(x, &mut rng)).collect())
}

/// Daily returns of the five rolling strategies implied by two consecutive
/// curve states: `(r + Roll^i_{t+1}) Δt + (e^{x^i_{t+1}} − e^{x^i_t}) / e^{x^i_t}`.
pub fn returns_from_states(
    x_t: &StateVector,
    x_next: &StateVector,
    econ: &EconomicParams,
) -> Result<[f64; N_CMF]> {
    for x in [x_t, x_next] {
        if x.len() != STATE_DIM {
            return Err(Error::DimensionMismatch {
                expected: STATE_DIM,
                got: x.len(),
            });
        }
    }
    let mut out = [0.0; N_CMF];
    for i in 1..=N_CMF {
        out[i - 1] = (econ.r + x_next[N_CMF + i]) * econ.dt + (x_next[i] - x_t[i]).exp_m1();
    }
    Ok(out)
}

/// Maps a simulated transition to the five rolling-strategy returns.
pub trait ScenarioReturns: Sync {
    fn strategy_returns(&self, x_t: &StateVector, x_next: &StateVector) -> [f64; N_CMF];
}

/// The curve-state return map.
#[derive(Debug, Clone, Copy)]
pub struct CurveReturns(pub EconomicParams);

impl ScenarioReturns for CurveReturns {
    fn strategy_returns(&self, x_t: &StateVector, x_next: &StateVector) -> [f64; N_CMF] {
        returns_from_states(x_t, x_next, &self.0).expect("curve states have STATE_DIM entries")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexPaths {
    /// One-month rolling strategy, `horizon + 1` values per path starting at 1.
    pub one_month: Vec<Vec<f64>>,
    /// Five-month rolling strategy.
    pub five_month: Vec<Vec<f64>>,
}

/// Simulated values of the one- and five-month rolling strategies, each path
/// started from an independent stationary draw.
pub fn simulate_index_paths(
    model: &VarModel,
    econ: &EconomicParams,
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Result<IndexPaths> {
    model.moments()?;
    model.check_dim(&model.mode)?;
    if model.dim() != STATE_DIM {
        return Err(Error::DimensionMismatch {
            expected: STATE_DIM,
            got: model.dim(),
        });
    }
    let mut out = IndexPaths {
        one_month: Vec::with_capacity(n_paths),
        five_month: Vec::with_capacity(n_paths),
    };
    for p in 0..n_paths {
        let mut rng = stream_rng(seed, p as u64);
        let mut x = model.draw_stationary(&mut rng)?;
        let mut one = vec![1.0];
        let mut five = vec![1.0];
        for _ in 0..horizon {
            let next = model.draw_step(&x, &mut rng);
            let r = returns_from_states(&x, &next, econ)?;
            one.push(one.last().unwrap() * (1.0 + r[0]));
            five.push(five.last().unwrap() * (1.0 + r[N_CMF - 1]));
            x = next;
        }
        out.one_month.push(one);
        out.five_month.push(five);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_model(a: f64, s2: f64) -> VarModel {
        VarModel::new(
            DVector::zeros(1),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, s2),
        )
        .unwrap()
    }

    #[test]
    fn scalar_stationary_variance() {
        let m = scalar_model(0.5, 1.0);
        assert_relative_eq!(m.moments().unwrap().cov[(0, 0)], 4.0 / 3.0, epsilon = 1e-11);
    }

    #[test]
    fn zero_transition_gives_noise_moments() {
        let mu = DVector::from_vec(vec![0.1, -0.2]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let s = stationary_moments(&DMatrix::zeros(2, 2), &mu, &sigma).unwrap();
        assert_eq!(s.mean, mu);
        assert_eq!(s.cov, sigma);
    }

    #[test]
    fn unit_root_is_rejected() {
        let err = stationary_moments(
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &DMatrix::identity(2, 2),
        );
        assert!(matches!(err, Err(Error::NonStationary { .. })));
        let m = VarModel::new(
            DVector::zeros(2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(m.stationary.is_none());
        assert!(matches!(
            sample_stationary(&m, 3, 1),
            Err(Error::NonStationary { .. })
        ));
    }

    #[test]
    fn centering() {
        let mode = DVector::from_vec(vec![1.0, 2.0]);
        let psi = center_states(&[mode.clone(), mode.clone()], &mode).unwrap();
        assert!(psi.iter().all(|p| p.norm() == 0.0));
        let x = DVector::from_vec(vec![3.0, -1.0]);
        assert_eq!(
            center_states(std::slice::from_ref(&x), &DVector::zeros(2)).unwrap()[0],
            x
        );
        assert!(matches!(
            center_states(&[DVector::zeros(3)], &mode),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 3
            })
        ));
    }

    #[test]
    fn constant_series_is_singular() {
        let psi = vec![DVector::from_vec(vec![0.5, 0.5]); 40];
        assert!(matches!(
            fit_var(&psi, &BTreeSet::new()),
            Err(Error::SingularCovariate { .. })
        ));
    }

    #[test]
    fn too_few_transitions() {
        let psi: Vec<_> = (0..3)
            .map(|i| DVector::from_vec(vec![i as f64, (i * i) as f64]))
            .collect();
        assert!(matches!(
            fit_var(&psi, &BTreeSet::new()),
            Err(Error::InsufficientHistory { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn deterministic_step_without_noise() {
        let mode = DVector::from_vec(vec![1.0, -1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let mu = DVector::from_vec(vec![0.2, 0.0]);
        let m = VarModel::new(mode.clone(), mu.clone(), a.clone(), DMatrix::zeros(2, 2)).unwrap();
        let x = DVector::from_vec(vec![2.0, 0.0]);
        let expect = &mode + &mu + &a * (&x - &mode);
        for draw in step(&m, &x, 5, 9).unwrap() {
            assert_relative_eq!(draw, expect.clone(), epsilon = 1e-15);
        }
        let m = VarModel::new(
            mode.clone(),
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(step(&m, &x, 2, 1).unwrap(), vec![mode.clone(), mode]);
    }

    #[test]
    fn sampling_is_seeded() {
        let m = scalar_model(0.8, 0.5);
        assert!(sample_stationary(&m, 0, 3).unwrap().is_empty());
        assert_eq!(
            sample_stationary(&m, 10, 3).unwrap(),
            sample_stationary(&m, 10, 3).unwrap()
        );
        assert_ne!(
            sample_stationary(&m, 10, 3).unwrap(),
            sample_stationary(&m, 10, 4).unwrap()
        );
    }

    #[test]
    fn returns_examples() {
        let econ = EconomicParams::default();
        let x = DVector::from_fn(STATE_DIM, |i, _| if i <= N_CMF { 3.0 } else { 0.0 });
        assert_eq!(returns_from_states(&x, &x, &econ).unwrap(), [0.0; N_CMF]);

        let mut x_t = x.clone();
        let mut x_next = x.clone();
        x_t[1] = 20f64.ln();
        x_next[1] = 21f64.ln();
        x_next[N_CMF + 1] = -0.68571;
        let r = returns_from_states(&x_t, &x_next, &econ).unwrap();
        assert_relative_eq!(r[0], -0.68571 / 252.0 + 0.05, epsilon = 1e-14);
        assert!((r[0] - 0.047279).abs() < 5e-7);

        let econ = EconomicParams::new(0.02, DT).unwrap();
        let r = returns_from_states(&x, &x, &econ).unwrap();
        assert!(r.iter().all(|&v| (v - 0.02 / 252.0).abs() < 1e-18));
        assert!(returns_from_states(&DVector::zeros(3), &x, &econ).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = VarModel::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![0.01, -0.02]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.05, -0.1, 0.7]),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.01, 0.01, 0.1]),
        )
        .unwrap();
        let back = VarModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.a_matrix[(0, 1)], 0.05);
    }
}
