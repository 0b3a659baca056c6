//! Structural-equation simulators: the linear illustration, models M1-M3
//! and the discrete-anchor variant, with in-sample and perturbed
//! out-of-sample generation, plus a general linear SEM in matrix form used
//! by the worst-case-risk oracle.
//!
//! Determinism: (model, n, seed) fully determines a dataset. Structural
//! coefficients drawn at training time (the anchor loading matrix) are
//! recorded in the spec and reused for out-of-sample draws; only the noise
//! is fresh.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::EnvDataset;
use crate::error::{Error, Result};

fn randn(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// RNG stream for a (master seed, replicate index) pair. Streams for
/// different replicates are independent of scheduling order.
pub fn replicate_rng(master_seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate.wrapping_add(1));
    rng
}

/// The five simulation models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearIllustration,
    M1,
    M2,
    M3,
    M2Discr,
}

impl ModelKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "linear_illustration" => Ok(ModelKind::LinearIllustration),
            "m1" => Ok(ModelKind::M1),
            "m2" => Ok(ModelKind::M2),
            "m3" => Ok(ModelKind::M3),
            "m2_discr" => Ok(ModelKind::M2Discr),
            other => Err(Error::InvalidArgument(format!("unknown model '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::LinearIllustration => "linear_illustration",
            ModelKind::M1 => "m1",
            ModelKind::M2 => "m2",
            ModelKind::M3 => "m3",
            ModelKind::M2Discr => "m2_discr",
        }
    }
}

/// Out-of-sample anchor perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    None,
    /// Per-observation anchor means drawn N(1, 2^2), anchors N(mean, 1).
    ModerateShift,
    /// Per-observation anchor means drawn N(10, 1), anchors N(mean, 1).
    StrongShift,
    /// Anchors scaled by sqrt(10).
    Sqrt10Amplify,
    /// Discrete block anchors amplified to 3 (discrete models only).
    DiscreteAmplify3x,
}

impl PerturbationKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(PerturbationKind::None),
            "moderate_shift" => Ok(PerturbationKind::ModerateShift),
            "strong_shift" => Ok(PerturbationKind::StrongShift),
            "sqrt10_amplify" => Ok(PerturbationKind::Sqrt10Amplify),
            "discrete_amplify_3x" => Ok(PerturbationKind::DiscreteAmplify3x),
            other => Err(Error::InvalidArgument(format!("unknown perturbation '{other}'"))),
        }
    }
}

/// Full description of a drawn simulation model: the model family plus
/// the coefficients sampled at generation time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemSpec {
    pub model: ModelKind,
    /// Anchor loading matrix (r x p) for LinearIllustration and M3;
    /// absent for the fixed-coefficient models.
    pub anchor_loadings: Option<DMatrix<f64>>,
    /// Sign reading of the discrete X-equation: +1 gives 2*A1 - 2*A2.
    pub discr_sign: f64,
}

pub const DIM_P: usize = 10;
pub const DIM_R: usize = 2;

/// Indicator-sum structural function used by M1.
fn f_m1(x2: f64, x3: f64) -> f64 {
    let mut v = 0.0;
    if x2 <= 0.0 {
        v += 1.0;
    }
    if x2 <= -0.5 && x3 <= 1.0 {
        v += 1.0;
    }
    v
}

/// Linear-plus-indicator structural function used by M2, M3 and M2-discr.
fn f_m2(x2: f64, x3: f64) -> f64 {
    x2 + x3 + f_m1(x2, x3)
}

/// Evaluates the model's structural function of (X2, X3).
pub fn structural_f(model: ModelKind, x2: f64, x3: f64) -> f64 {
    match model {
        ModelKind::M1 => f_m1(x2, x3),
        ModelKind::M2 | ModelKind::M2Discr | ModelKind::M3 => f_m2(x2, x3),
        // The linear illustration's response is handled directly.
        ModelKind::LinearIllustration => 3.0 * x2 + 3.0 * x3,
    }
}

/// A dataset draw together with the hidden confounder realization
/// (exposed for structural checks; H is never part of the dataset).
#[derive(Debug, Clone)]
pub struct SimDraw {
    pub data: EnvDataset,
    pub hidden: DVector<f64>,
}

/// Test hook controlling the noise channels of a structural draw.
#[derive(Debug, Clone, Copy)]
pub struct NoiseScale {
    pub hidden: f64,
    pub x_noise: f64,
    pub y_noise: f64,
}

impl Default for NoiseScale {
    fn default() -> Self {
        NoiseScale { hidden: 1.0, x_noise: 1.0, y_noise: 1.0 }
    }
}

/// Draws X, H and Y through the structural equations for given anchors.
fn draw_given_anchors(
    spec: &SemSpec,
    a: &DMatrix<f64>,
    rng: &mut impl Rng,
    noise: NoiseScale,
) -> SimDraw {
    let n = a.nrows();
    let p = DIM_P;
    let h = DVector::from_fn(n, |_, _| noise.hidden * randn(rng));
    let mut x = DMatrix::zeros(n, p);
    match spec.model {
        ModelKind::M1 | ModelKind::M2 => {
            for i in 0..n {
                for j in 0..p {
                    x[(i, j)] =
                        a[(i, 0)] + a[(i, 1)] + 2.0 * h[i] + 0.5 * noise.x_noise * randn(rng);
                }
            }
        }
        ModelKind::M2Discr => {
            let s = spec.discr_sign;
            for i in 0..n {
                let drive = s * (2.0 * a[(i, 0)] - 2.0 * a[(i, 1)]);
                for j in 0..p {
                    x[(i, j)] = drive + 2.0 * h[i] + 0.5 * noise.x_noise * randn(rng);
                }
            }
        }
        ModelKind::M3 | ModelKind::LinearIllustration => {
            let gamma = spec
                .anchor_loadings
                .as_ref()
                .expect("loadings recorded at generation time");
            for i in 0..n {
                for j in 0..p {
                    let drive = a[(i, 0)] * gamma[(0, j)] + a[(i, 1)] * gamma[(1, j)];
                    x[(i, j)] = drive + h[i] + noise.x_noise * randn(rng);
                }
            }
        }
    }
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let (x2, x3) = (x[(i, 1)], x[(i, 2)]);
        y[i] = match spec.model {
            ModelKind::LinearIllustration => {
                3.0 * x2 + 3.0 * x3 + h[i] - 2.0 * a[(i, 0)] + 0.25 * noise.y_noise * randn(rng)
            }
            ModelKind::M1 => {
                f_m1(x2, x3) - 2.0 * a[(i, 0)] + 3.0 * h[i] + 0.25 * noise.y_noise * randn(rng)
            }
            ModelKind::M2 | ModelKind::M2Discr | ModelKind::M3 => {
                f_m2(x2, x3) - 2.0 * a[(i, 0)] + 3.0 * h[i] + 0.25 * noise.y_noise * randn(rng)
            }
        };
    }
    let env_labels = match spec.model {
        ModelKind::M2Discr => Some(
            (0..n)
                .map(|i| if a[(i, 0)] != 0.0 { 1 } else { 2 })
                .collect(),
        ),
        _ => None,
    };
    let data = EnvDataset::new(y, x, a.clone(), env_labels).expect("finite draw");
    SimDraw { data, hidden: h }
}

fn gaussian_anchors(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, DIM_R, |_, _| randn(rng))
}

fn block_anchors(n: usize, level: f64) -> Result<DMatrix<f64>> {
    if n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("n = {n} must be even for m2_discr")));
    }
    let mut a = DMatrix::zeros(n, 2);
    for i in 0..n {
        if i < n / 2 {
            a[(i, 0)] = level;
        } else {
            a[(i, 1)] = level;
        }
    }
    Ok(a)
}

fn spec_for(model: ModelKind, rng: &mut impl Rng) -> SemSpec {
    let anchor_loadings = match model {
        ModelKind::M3 | ModelKind::LinearIllustration => {
            Some(DMatrix::from_fn(DIM_R, DIM_P, |_, _| randn(rng)))
        }
        _ => None,
    };
    SemSpec { model, anchor_loadings, discr_sign: 1.0 }
}

/// Training draw for a model. The loadings of M3 / the linear illustration
/// are redrawn per call and recorded in the spec.
pub fn generate(model: ModelKind, n: usize, seed: u64) -> Result<(EnvDataset, SemSpec)> {
    let (draw, spec) = generate_full(model, n, seed, NoiseScale::default())?;
    Ok((draw.data, spec))
}

/// As [`generate`] but exposing the hidden confounder and noise hooks.
pub fn generate_full(
    model: ModelKind,
    n: usize,
    seed: u64,
    noise: NoiseScale,
) -> Result<(SimDraw, SemSpec)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = spec_for(model, &mut rng);
    let a = match model {
        ModelKind::M2Discr => block_anchors(n, 1.0)?,
        _ => gaussian_anchors(n, &mut rng),
    };
    let draw = draw_given_anchors(&spec, &a, &mut rng, noise);
    Ok((draw, spec))
}

/// Out-of-sample draw: anchors per the perturbation kind, then X, H, Y
/// regenerated through the recorded structural equations with fresh noise.
pub fn gen_out_of_sample(
    spec: &SemSpec,
    kind: PerturbationKind,
    n_out: usize,
    seed: u64,
) -> Result<EnvDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let discrete = spec.model == ModelKind::M2Discr;
    let a = match kind {
        PerturbationKind::None => {
            if discrete {
                block_anchors(n_out, 1.0)?
            } else {
                gaussian_anchors(n_out, &mut rng)
            }
        }
        PerturbationKind::ModerateShift => {
            if discrete {
                return Err(Error::InvalidArgument(
                    "moderate_shift needs continuous anchors".into(),
                ));
            }
            DMatrix::from_fn(n_out, DIM_R, |_, _| {
                let mu = 1.0 + 2.0 * randn(&mut rng);
                mu + randn(&mut rng)
            })
        }
        PerturbationKind::StrongShift => {
            if discrete {
                return Err(Error::InvalidArgument(
                    "strong_shift needs continuous anchors".into(),
                ));
            }
            DMatrix::from_fn(n_out, DIM_R, |_, _| {
                let mu = 10.0 + randn(&mut rng);
                mu + randn(&mut rng)
            })
        }
        PerturbationKind::Sqrt10Amplify => {
            if discrete {
                return Err(Error::InvalidArgument(
                    "sqrt10_amplify needs continuous anchors".into(),
                ));
            }
            DMatrix::from_fn(n_out, DIM_R, |_, _| 10.0f64.sqrt() * randn(&mut rng))
        }
        PerturbationKind::DiscreteAmplify3x => {
            if !discrete {
                return Err(Error::InvalidArgument(
                    "discrete_amplify_3x needs discrete anchors".into(),
                ));
            }
            block_anchors(n_out, 3.0)?
        }
    };
    Ok(draw_given_anchors(spec, &a, &mut rng, NoiseScale::default()).data)
}

/// Out-of-sample draw with noise hooks (used by structural tests).
pub fn gen_out_of_sample_full(
    spec: &SemSpec,
    kind: PerturbationKind,
    n_out: usize,
    seed: u64,
    noise: NoiseScale,
) -> Result<SimDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = match (kind, spec.model) {
        (PerturbationKind::DiscreteAmplify3x, ModelKind::M2Discr) => block_anchors(n_out, 3.0)?,
        (PerturbationKind::None, ModelKind::M2Discr) => block_anchors(n_out, 1.0)?,
        _ => {
            return gen_out_of_sample(spec, kind, n_out, seed)
                .map(|data| SimDraw { hidden: DVector::zeros(n_out), data });
        }
    };
    Ok(draw_given_anchors(spec, &a, &mut rng, noise))
}

/// A linear structural-equation model in matrix form over the stacked
/// variables (X_1..X_p, Y, H_1..H_q): Z = B Z + eps + M A.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearSem {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    /// (p+1+q) x (p+1+q) coefficient matrix; (I - B) must be invertible.
    pub b: DMatrix<f64>,
    /// (p+1+q) x r anchor loading.
    pub m: DMatrix<f64>,
    /// Independent noise standard deviations per equation.
    pub noise_sd: DVector<f64>,
    /// Anchor second-moment matrix E[A A^T].
    pub sigma_a: DMatrix<f64>,
}

impl LinearSem {
    pub fn dim(&self) -> usize {
        self.p + 1 + self.q
    }

    pub fn y_index(&self) -> usize {
        self.p
    }

    pub fn i_minus_b_inverse(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let imb = DMatrix::identity(d, d) - &self.b;
        imb.try_inverse()
            .ok_or_else(|| Error::InvalidArgument("I - B is singular".into()))
    }

    /// The linear functional c with Y - X^T b = c^T (eps + M delta) under a
    /// shift delta: c = (I - B)^{-T} s, where s selects Y minus b on X.
    pub fn residual_functional(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.p {
            return Err(Error::InvalidArgument("beta length != p".into()));
        }
        let d = self.dim();
        let mut s = DVector::zeros(d);
        s[self.y_index()] = 1.0;
        for j in 0..self.p {
            s[j] = -beta[j];
        }
        Ok(self.i_minus_b_inverse()?.transpose() * s)
    }

    /// Random acyclic SEM for tests and verification runs: upper-triangular
    /// dependence in the order (H, Y, X) mapped into the stacked layout.
    pub fn random_acyclic(p: usize, q: usize, r: usize, rng: &mut impl Rng) -> Self {
        let d = p + 1 + q;
        let mut b = DMatrix::zeros(d, d);
        // H are source nodes. Y depends on H and on a random half of X.
        // Each X_j depends on H and possibly on Y (child of Y allowed).
        for j in 0..p {
            for h in 0..q {
                b[(j, p + 1 + h)] = randn(rng);
            }
            if rng.gen::<f64>() < 0.4 {
                b[(p, j)] = randn(rng); // Y <- X_j
            } else if rng.gen::<f64>() < 0.3 {
                b[(j, p)] = randn(rng); // X_j <- Y
            }
        }
        for h in 0..q {
            b[(p, p + 1 + h)] = randn(rng); // Y <- H
        }
        let m = DMatrix::from_fn(d, r, |_, _| randn(rng));
        let noise_sd = DVector::from_fn(d, |_, _| 0.3 + rng.gen::<f64>());
        // Random SPD anchor second moment.
        let g = DMatrix::from_fn(r, r, |_, _| randn(rng));
        let sigma_a = &g * g.transpose() + DMatrix::identity(r, r) * 0.5;
        LinearSem { p, q, r, b, m, noise_sd, sigma_a }
    }

    /// Samples a dataset from the SEM with Gaussian anchors A ~ N(0, Sigma_A).
    pub fn draw(&self, n: usize, rng: &mut impl Rng) -> Result<EnvDataset> {
        let d = self.dim();
        let chol = self
            .sigma_a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("sigma_a not positive definite".into()))?;
        let l = chol.l();
        let inv = self.i_minus_b_inverse()?;
        let mut x = DMatrix::zeros(n, self.p);
        let mut y = DVector::zeros(n);
        let mut a_mat = DMatrix::zeros(n, self.r);
        for i in 0..n {
            let a = &l * DVector::from_fn(self.r, |_, _| randn(rng));
            let eps = DVector::from_fn(d, |k, _| self.noise_sd[k] * randn(rng));
            let z = &inv * (eps + &self.m * &a);
            for j in 0..self.p {
                x[(i, j)] = z[j];
            }
            y[i] = z[self.y_index()];
            for k in 0..self.r {
                a_mat[(i, k)] = a[k];
            }
        }
        EnvDataset::new(y, x, a_mat, None)
    }
}
