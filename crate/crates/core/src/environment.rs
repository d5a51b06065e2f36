//! Decision-dependent populations and the losses evaluated on them.
//!
//! Two population families are supported:
//!
//! * Gaussian mean shift: `Z ~ N(zbar_i + eps_i * theta, sigma² I)`, paired with
//!   the quadratic loss `½‖theta - Z‖²` (`mu = L = 1`).
//! * Strategic feature shift: a base pair `(X, Y)` is drawn uniformly from the
//!   agent's dataset and the user best-responds to a linear utility, which
//!   moves the features to `X + eps_i * theta` and leaves the label alone.
//!   Paired with the L2-regularised logistic loss.
//!
//! Sampling never holds state: callers pass the random stream explicitly.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Labelled examples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl LabeledData {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Shape {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::InvalidSize("labelled dataset is empty".into()));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    /// Concatenates several datasets of equal dimension.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabeledData>) -> Result<Self> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for p in parts {
            if *dim.get_or_insert(p.dim) != p.dim {
                return Err(Error::Shape {
                    expected: dim.unwrap(),
                    got: p.dim,
                });
            }
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        Self::new(dim.unwrap_or(0), features, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, k: usize) -> &[f64] {
        &self.features[k * self.dim..(k + 1) * self.dim]
    }

    pub fn label(&self, k: usize) -> f64 {
        self.labels[k]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Largest squared feature norm.
    pub fn max_sq_norm(&self) -> f64 {
        (0..self.len())
            .map(|k| self.features(k).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// One draw from a population.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    /// Gaussian population outcome.
    Point(DVector<f64>),
    /// Strategic population outcome: shifted features and the untouched label.
    Labeled { x: DVector<f64>, y: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Base {
    Gaussian { zbar: DVector<f64>, sigma2: f64 },
    Strategic { data: Arc<LabeledData> },
}

/// A single agent's decision-dependent population.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    eps: f64,
    base: Base,
}

impl Population {
    pub fn gaussian(eps: f64, zbar: DVector<f64>, sigma2: f64) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::Config(format!("sensitivity must be >= 0, got {eps}")));
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::Config(format!("noise variance must be >= 0, got {sigma2}")));
        }
        Ok(Self {
            eps,
            base: Base::Gaussian { zbar, sigma2 },
        })
    }

    pub fn strategic(eps: f64, data: Arc<LabeledData>) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::Config(format!("sensitivity must be >= 0, got {eps}")));
        }
        Ok(Self {
            eps,
            base: Base::Strategic { data },
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn base(&self) -> &Base {
        &self.base
    }

    fn dim(&self) -> usize {
        match &self.base {
            Base::Gaussian { zbar, .. } => zbar.len(),
            Base::Strategic { data } => data.dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `½‖theta - z‖²`
    Quadratic,
    /// `log(1 + exp⟨x,theta⟩) - y⟨x,theta⟩ + (beta/2)‖theta‖²`
    Logistic { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub dim: usize,
}

/// `log(1 + e^s)` without overflow.
#[inline]
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four independent accumulators, so the additions can
/// pipeline.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, ra) = a.as_chunks::<4>();
    let (cb, rb) = b.as_chunks::<4>();
    for (x, y) in ca.iter().zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `softplus(s) - y*s`, rearranged so large margins do not cancel.
#[inline]
fn logistic_margin_loss(s: f64, y: f64) -> f64 {
    if s > 0.0 {
        (1.0 - y) * s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p() - y * s
    }
}

impl LossSpec {
    pub fn quadratic(dim: usize) -> Self {
        Self {
            kind: LossKind::Quadratic,
            dim,
        }
    }

    pub fn logistic(dim: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Config(format!("logistic regulariser must be > 0, got {beta}")));
        }
        Ok(Self {
            kind: LossKind::Logistic { beta },
            dim,
        })
    }

    fn check(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: theta.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, theta: &DVector<f64>, z: &Sample) -> Result<f64> {
        self.check(theta)?;
        match (self.kind, z) {
            (LossKind::Quadratic, Sample::Point(p)) => {
                self.check(p)?;
                Ok(0.5 * (theta - p).norm_squared())
            }
            (LossKind::Logistic { beta }, Sample::Labeled { x, y }) => {
                self.check(x)?;
                let s = x.dot(theta);
                Ok(logistic_margin_loss(s, *y) + 0.5 * beta * theta.norm_squared())
            }
            _ => Err(Error::UnsupportedKind {
                required: "matching sample/loss",
            }),
        }
    }

    pub fn gradient(&self, theta: &DVector<f64>, z: &Sample) -> Result<DVector<f64>> {
        self.check(theta)?;
        match (self.kind, z) {
            (LossKind::Quadratic, Sample::Point(p)) => {
                self.check(p)?;
                Ok(theta - p)
            }
            (LossKind::Logistic { beta }, Sample::Labeled { x, y }) => {
                self.check(x)?;
                let r = sigmoid(x.dot(theta)) - y;
                Ok(x * r + theta * beta)
            }
            _ => Err(Error::UnsupportedKind {
                required: "matching sample/loss",
            }),
        }
    }

    /// Strong-convexity modulus of the loss in `theta`.
    pub fn mu(&self) -> f64 {
        match self.kind {
            LossKind::Quadratic => 1.0,
            LossKind::Logistic { beta } => beta,
        }
    }
}

/// The sensitivity multipliers `eps_i / eps_avg`, in agent order.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityGrid {
    multipliers: Vec<f64>,
}

/// Placement of sorted sensitivities on agent indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityLayout {
    /// Agent `i` gets the `i`-th smallest sensitivity.
    #[default]
    Sorted,
    /// Even agents take the lower half ascending, odd agents the upper half
    /// descending, so ring neighbours pair low with high sensitivity.
    Interleaved,
}

const CALIBRATION_TOL: f64 = 1e-12;

impl SensitivityGrid {
    /// Evenly spaced multipliers on `[1 - spread, 1 + spread]`.
    pub fn linear(n: usize, spread: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("sensitivity grid needs n >= 1".into()));
        }
        if !(0.0..=1.0).contains(&spread) {
            return Err(Error::Config(format!("spread must lie in [0, 1], got {spread}")));
        }
        let multipliers = if n == 1 {
            vec![1.0]
        } else {
            (0..n)
                .map(|k| 1.0 - spread + 2.0 * spread * k as f64 / (n - 1) as f64)
                .collect()
        };
        Self::from_multipliers(multipliers)
    }

    pub fn homogeneous(n: usize) -> Result<Self> {
        Self::linear(n, 0.0)
    }

    /// Explicit multipliers; their mean must be 1.
    pub fn from_multipliers(multipliers: Vec<f64>) -> Result<Self> {
        if multipliers.is_empty() {
            return Err(Error::InvalidSize("sensitivity grid is empty".into()));
        }
        if multipliers.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::Config("sensitivity multipliers must be >= 0".into()));
        }
        let mean = multipliers.iter().sum::<f64>() / multipliers.len() as f64;
        if (mean - 1.0).abs() > CALIBRATION_TOL {
            return Err(Error::Calibration { mean });
        }
        Ok(Self { multipliers })
    }

    pub fn arranged(&self, layout: SensitivityLayout) -> Self {
        let mut sorted = self.multipliers.clone();
        sorted.sort_by(f64::total_cmp);
        let multipliers = match layout {
            SensitivityLayout::Sorted => sorted,
            SensitivityLayout::Interleaved => {
                let n = sorted.len();
                let split = n.div_ceil(2);
                let (low, high) = sorted.split_at(split);
                let mut out = vec![0.0; n];
                for (k, v) in low.iter().enumerate() {
                    out[2 * k] = *v;
                }
                for (k, v) in high.iter().rev().enumerate() {
                    out[2 * k + 1] = *v;
                }
                out
            }
        };
        Self { multipliers }
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    pub fn sensitivities(&self, eps_avg: f64) -> Vec<f64> {
        self.multipliers.iter().map(|m| m * eps_avg).collect()
    }
}

/// Per-agent base data for [`make_heterogeneous_suite`].
#[derive(Debug, Clone)]
pub enum BaseSpec {
    /// One mean vector per agent (or a single shared one) and a noise variance.
    Gaussian { zbar: Vec<DVector<f64>>, sigma2: f64 },
    /// One dataset per agent, plus the logistic regulariser.
    Strategic {
        shards: Vec<Arc<LabeledData>>,
        beta: f64,
    },
}

/// A network of decision-dependent populations sharing one loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    populations: Vec<Population>,
    loss: LossSpec,
    eps_avg: f64,
    eps_max: f64,
    smoothness: f64,
}

impl Environment {
    pub fn new(populations: Vec<Population>, loss: LossSpec) -> Result<Self> {
        if populations.is_empty() {
            return Err(Error::InvalidSize("environment needs at least one agent".into()));
        }
        let mut max_sq = 0.0_f64;
        for p in &populations {
            if p.dim() != loss.dim {
                return Err(Error::Shape {
                    expected: loss.dim,
                    got: p.dim(),
                });
            }
            match (&p.base, loss.kind) {
                (Base::Gaussian { .. }, LossKind::Quadratic) => {}
                (Base::Strategic { data }, LossKind::Logistic { .. }) => {
                    max_sq = max_sq.max(data.max_sq_norm());
                }
                (Base::Gaussian { .. }, _) => {
                    return Err(Error::UnsupportedKind {
                        required: "quadratic loss for gaussian",
                    })
                }
                (Base::Strategic { .. }, _) => {
                    return Err(Error::UnsupportedKind {
                        required: "logistic loss for strategic",
                    })
                }
            }
        }
        let n = populations.len() as f64;
        let eps_avg = populations.iter().map(|p| p.eps).sum::<f64>() / n;
        let eps_max = populations.iter().map(|p| p.eps).fold(0.0, f64::max);
        let smoothness = match loss.kind {
            LossKind::Quadratic => 1.0,
            LossKind::Logistic { beta } => beta + max_sq / 4.0,
        };
        Ok(Self {
            populations,
            loss,
            eps_avg,
            eps_max,
            smoothness,
        })
    }

    pub fn n(&self) -> usize {
        self.populations.len()
    }

    pub fn dim(&self) -> usize {
        self.loss.dim
    }

    pub fn loss(&self) -> &LossSpec {
        &self.loss
    }

    pub fn populations(&self) -> &[Population] {
        &self.populations
    }

    pub fn population(&self, i: usize) -> &Population {
        &self.populations[i]
    }

    pub fn eps_avg(&self) -> f64 {
        self.eps_avg
    }

    pub fn eps_max(&self) -> f64 {
        self.eps_max
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.loss.kind, LossKind::Quadratic)
    }

    /// Strong-convexity modulus `mu` of the frozen objective.
    pub fn mu(&self) -> f64 {
        self.loss.mu()
    }

    /// Smoothness `L`: exactly 1 for the quadratic loss, `beta + max‖X‖²/4`
    /// over the loaded datasets for the logistic loss.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// Environment restricted to one agent.
    pub fn single_agent(&self, i: usize) -> Result<Self> {
        Self::new(vec![self.populations[i].clone()], self.loss)
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Draws `Z ~ D_i(theta)`.
    pub fn sample<R: RngCore + ?Sized>(
        &self,
        i: usize,
        theta: &DVector<f64>,
        rng: &mut R,
    ) -> Result<Sample> {
        self.check(theta.as_slice())?;
        let pop = &self.populations[i];
        Ok(match &pop.base {
            Base::Gaussian { zbar, sigma2 } => {
                let sd = sigma2.sqrt();
                Sample::Point(DVector::from_iterator(
                    zbar.len(),
                    zbar.iter().zip(theta.iter()).map(|(z, t)| {
                        let xi: f64 = rng.sample(StandardNormal);
                        z + pop.eps * t + sd * xi
                    }),
                ))
            }
            Base::Strategic { data } => {
                let k = rng.random_range(0..data.len());
                let x = DVector::from_iterator(
                    data.dim(),
                    data.features(k).iter().zip(theta.iter()).map(|(x, t)| x + pop.eps * t),
                );
                Sample::Labeled {
                    x,
                    y: data.label(k),
                }
            }
        })
    }

    /// Adds the mean gradient over `batch` fresh samples from `D_i(deployed)`,
    /// evaluated at `theta`, into `out`. Draw order matches repeated calls to
    /// [`Environment::sample`] so both paths consume the stream identically.
    pub fn add_batch_gradient<R: RngCore + ?Sized>(
        &self,
        i: usize,
        theta: &[f64],
        deployed: &[f64],
        batch: usize,
        rng: &mut R,
        out: &mut [f64],
    ) {
        let pop = &self.populations[i];
        let scale = 1.0 / batch as f64;
        match (&pop.base, self.loss.kind) {
            (Base::Gaussian { zbar, sigma2 }, _) => {
                let sd = sigma2.sqrt();
                for _ in 0..batch {
                    for (k, o) in out.iter_mut().enumerate() {
                        let xi: f64 = rng.sample(StandardNormal);
                        let z = zbar[k] + pop.eps * deployed[k] + sd * xi;
                        *o += scale * (theta[k] - z);
                    }
                }
            }
            (Base::Strategic { data }, LossKind::Logistic { beta }) => {
                // With x' = x + eps*d: <x', theta> = <x, theta> + eps<d, theta>
                // and the shift contributes (mean r) * eps * d to the gradient.
                let shift: f64 = pop.eps * deployed.iter().zip(theta).map(|(d, t)| d * t).sum::<f64>();
                let mut r_sum = 0.0;
                for _ in 0..batch {
                    let k = rng.random_range(0..data.len());
                    let x = data.features(k);
                    let s = dot(x, theta) + shift;
                    let r = sigmoid(s) - data.label(k);
                    r_sum += r;
                    let w = scale * r;
                    for (o, x) in out.iter_mut().zip(x) {
                        *o += w * x;
                    }
                }
                let c = scale * r_sum * pop.eps;
                for ((o, d), t) in out.iter_mut().zip(deployed).zip(theta) {
                    *o += c * d + beta * t;
                }
            }
            (Base::Strategic { .. }, LossKind::Quadratic) => {
                unreachable!("environment construction rejects this pairing")
            }
        }
    }

    /// Analytic `∇f_i(theta; deployed) = theta - zbar_i - eps_i * deployed`
    /// for Gaussian populations.
    pub fn decoupled_risk_gradient(
        &self,
        i: usize,
        theta: &DVector<f64>,
        deployed: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check(theta.as_slice())?;
        self.check(deployed.as_slice())?;
        let pop = &self.populations[i];
        match &pop.base {
            Base::Gaussian { zbar, .. } => Ok(theta - zbar - deployed * pop.eps),
            Base::Strategic { .. } => Err(Error::UnsupportedKind {
                required: "gaussian",
            }),
        }
    }

    /// `∇f_i(theta; deployed)` as an exact expectation: analytic for Gaussian
    /// populations, a full pass over the shifted dataset for strategic ones.
    pub fn frozen_gradient(
        &self,
        i: usize,
        theta: &DVector<f64>,
        deployed: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check(theta.as_slice())?;
        self.check(deployed.as_slice())?;
        let pop = &self.populations[i];
        match (&pop.base, self.loss.kind) {
            (Base::Gaussian { .. }, _) => self.decoupled_risk_gradient(i, theta, deployed),
            (Base::Strategic { data }, LossKind::Logistic { beta }) => {
                let d = self.dim();
                let mut g = vec![0.0; d];
                let mut shifted = vec![0.0; d];
                for k in 0..data.len() {
                    for ((s, x), dep) in shifted.iter_mut().zip(data.features(k)).zip(deployed.iter()) {
                        *s = x + pop.eps * dep;
                    }
                    let r = sigmoid(dot(&shifted, theta.as_slice())) - data.label(k);
                    for (gj, s) in g.iter_mut().zip(&shifted) {
                        *gj += r * s;
                    }
                }
                let m = data.len() as f64;
                Ok(DVector::from_iterator(
                    d,
                    g.iter().zip(theta.iter()).map(|(gj, t)| gj / m + beta * t),
                ))
            }
            (Base::Strategic { .. }, LossKind::Quadratic) => unreachable!(),
        }
    }

    /// `∇f(theta; deployed)`: the average of [`Environment::frozen_gradient`]
    /// over agents.
    pub fn frozen_mean_gradient(
        &self,
        theta: &DVector<f64>,
        deployed: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.dim());
        for i in 0..self.n() {
            g += self.frozen_gradient(i, theta, deployed)?;
        }
        Ok(g / self.n() as f64)
    }

    /// `f_i(theta; deployed)` exactly: closed form for Gaussian populations,
    /// full pass over the shifted dataset for strategic ones.
    pub fn frozen_risk(&self, i: usize, theta: &DVector<f64>, deployed: &DVector<f64>) -> Result<f64> {
        self.check(theta.as_slice())?;
        self.check(deployed.as_slice())?;
        let pop = &self.populations[i];
        match (&pop.base, self.loss.kind) {
            (Base::Gaussian { zbar, sigma2 }, _) => {
                let resid = theta - zbar - deployed * pop.eps;
                Ok(0.5 * resid.norm_squared() + 0.5 * sigma2 * self.dim() as f64)
            }
            (Base::Strategic { data }, LossKind::Logistic { beta }) => {
                let mut total = 0.0;
                for k in 0..data.len() {
                    let s: f64 = data
                        .features(k)
                        .iter()
                        .zip(deployed.iter())
                        .zip(theta.iter())
                        .map(|((x, d), t)| (x + pop.eps * d) * t)
                        .sum();
                    total += logistic_margin_loss(s, data.label(k));
                }
                Ok(total / data.len() as f64 + 0.5 * beta * theta.norm_squared())
            }
            (Base::Strategic { .. }, LossKind::Quadratic) => unreachable!(),
        }
    }

    /// Mean of the Gaussian base means, `(1/n) Σ zbar_i`.
    pub fn mean_zbar(&self) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.dim());
        for p in &self.populations {
            match &p.base {
                Base::Gaussian { zbar, .. } => acc += zbar,
                Base::Strategic { .. } => {
                    return Err(Error::UnsupportedKind {
                        required: "gaussian",
                    })
                }
            }
        }
        Ok(acc / self.n() as f64)
    }
}

/// Builds `n` populations with `eps_i = eps_avg * grid[i]`.
///
/// With `homogeneous = true` every agent gets `eps_avg` and all agents share
/// one base: the first Gaussian mean, or the concatenation of all strategic
/// shards.
pub fn make_heterogeneous_suite(
    eps_avg: f64,
    grid: &SensitivityGrid,
    base: BaseSpec,
    homogeneous: bool,
) -> Result<Environment> {
    let n = grid.len();
    if !(eps_avg >= 0.0) {
        return Err(Error::Config(format!("eps_avg must be >= 0, got {eps_avg}")));
    }
    let eps = if homogeneous {
        vec![eps_avg; n]
    } else {
        grid.sensitivities(eps_avg)
    };
    match base {
        BaseSpec::Gaussian { zbar, sigma2 } => {
            let dim = zbar.first().map(|z| z.len()).unwrap_or(0);
            if zbar.len() != 1 && zbar.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    got: zbar.len(),
                });
            }
            let pops = (0..n)
                .map(|i| {
                    let z = if homogeneous || zbar.len() == 1 {
                        zbar[0].clone()
                    } else {
                        zbar[i].clone()
                    };
                    Population::gaussian(eps[i], z, sigma2)
                })
                .collect::<Result<Vec<_>>>()?;
            Environment::new(pops, LossSpec::quadratic(dim))
        }
        BaseSpec::Strategic { shards, beta } => {
            if shards.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    got: shards.len(),
                });
            }
            let dim = shards[0].dim();
            let shared = if homogeneous {
                Some(Arc::new(LabeledData::concat(shards.iter().map(|s| s.as_ref()))?))
            } else {
                None
            };
            let pops = (0..n)
                .map(|i| {
                    let data = shared.clone().unwrap_or_else(|| shards[i].clone());
                    Population::strategic(eps[i], data)
                })
                .collect::<Result<Vec<_>>>()?;
            Environment::new(pops, LossSpec::logistic(dim, beta)?)
        }
    }
}
