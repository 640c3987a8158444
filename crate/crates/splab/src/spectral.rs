//! Scalar and operator quantities attached to a population spectrum and a
//! perturbation: spectral gap, reduced-resolvent congruence transforms, the
//! relative perturbation magnitude, linear perturbation term, relative rank,
//! variance proxies, the limit-law covariance spectrum with its Schatten
//! summaries, and shape-only bound calculators.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::law::KlLaw;
use crate::operator::{eigh, hs_distance_sq, operator_norm, projector, IndexBlock, SymOperator};
use crate::{parallel, rng};

/// Population covariance in its eigenbasis: strictly decreasing positive
/// eigenvalues, eigenvectors fixed to the standard basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    lambdas: Vec<f64>,
}

impl SpectralModel {
    /// Requires a strictly decreasing, positive, finite eigenvalue sequence.
    /// Ties are rejected: the gap and the resolvent weights must stay finite.
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::invalid("eigenvalue sequence is empty"));
        }
        for (i, &l) in lambdas.iter().enumerate() {
            if !l.is_finite() || l <= 0.0 {
                return Err(Error::invalid(format!(
                    "eigenvalue {i} not positive finite"
                )));
            }
            if i > 0 && lambdas[i - 1] <= l {
                return Err(Error::invalid(format!(
                    "eigenvalues must decrease strictly, violated at index {i}"
                )));
            }
        }
        Ok(Self { lambdas })
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// Eigenvalue by 0-based index.
    pub fn lambda(&self, k0: usize) -> f64 {
        self.lambdas[k0]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// The covariance operator itself: `diag(lambda)`.
    pub fn covariance(&self) -> SymOperator {
        SymOperator::from_diagonal(&self.lambdas)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.lambdas.iter().map(|l| c * l).collect())
    }

    pub fn trace(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// Trace restricted to the 0-based indices in `it`.
    pub fn subset_trace(&self, it: impl Iterator<Item = usize>) -> f64 {
        it.map(|k| self.lambdas[k]).sum()
    }

    fn check_block(&self, block: IndexBlock) -> Result<()> {
        block.validate(self.dim())?;
        if block.is_full(self.dim()) {
            return Err(Error::NoComplement);
        }
        Ok(())
    }
}

/// Truncation set `I = {1, ..., i2}` for the truncated linear term and the
/// truncated limit spectrum; `Full` means no truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Full,
    UpTo(usize),
}

impl Truncation {
    /// Does the truncation keep the (1-based) index `k`?
    fn keeps(&self, k: usize) -> bool {
        match self {
            Truncation::Full => true,
            Truncation::UpTo(i2) => k <= *i2,
        }
    }
}

/// Eigenvalue gap between the block and its complement.
pub fn spectral_gap(model: &SpectralModel, block: IndexBlock) -> Result<f64> {
    model.check_block(block)?;
    let d = model.dim();
    let left = if block.j1() > 1 {
        Some(model.lambda(block.j1() - 2) - model.lambda(block.j1() - 1))
    } else {
        None
    };
    let right = if block.j2() < d {
        Some(model.lambda(block.j2() - 1) - model.lambda(block.j2()))
    } else {
        None
    };
    match (left, right) {
        (Some(a), Some(b)) => Ok(a.min(b)),
        (Some(a), None) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Err(Error::NoComplement),
    }
}

/// Diagonal weights of the congruence transform
/// `|R|^{1/2} + gap^{-1/2} P_block`: outside the block the reduced-resolvent
/// square root, `gap^{-1/2}` inside.
pub fn congruence_weights(model: &SpectralModel, block: IndexBlock) -> Result<Vec<f64>> {
    model.check_block(block)?;
    let g = spectral_gap(model, block)?;
    let d = model.dim();
    let mut w = vec![0.0; d];
    for (k0, slot) in w.iter_mut().enumerate() {
        let k = k0 + 1;
        *slot = if k < block.j1() {
            1.0 / (model.lambda(k0) - model.lambda(block.j1() - 1))
                .abs()
                .sqrt()
        } else if k > block.j2() {
            1.0 / (model.lambda(k0) - model.lambda(block.j2() - 1))
                .abs()
                .sqrt()
        } else {
            1.0 / g.sqrt()
        };
    }
    Ok(w)
}

/// Relative perturbation magnitude: operator norm of the perturbation after
/// congruence by the resolvent-weighted transform.
pub fn relative_delta(model: &SpectralModel, block: IndexBlock, e: &SymOperator) -> Result<f64> {
    if e.dim() != model.dim() {
        return Err(Error::DimMismatch(e.dim(), model.dim()));
    }
    let w = congruence_weights(model, block)?;
    let d = model.dim();
    let transformed = SymOperator::from_fn(d, |i, j| w[i] * e.entry(i, j) * w[j])?;
    Ok(operator_norm(&transformed))
}

/// First-order perturbation term: symmetric operator supported on the
/// `(block x complement)` off-diagonal blocks with entries
/// `A[j][k] / (lambda_j - lambda_k)`; the complement side can be truncated.
pub fn linear_term(
    model: &SpectralModel,
    block: IndexBlock,
    a: &SymOperator,
    trunc: Truncation,
) -> Result<SymOperator> {
    if a.dim() != model.dim() {
        return Err(Error::DimMismatch(a.dim(), model.dim()));
    }
    model.check_block(block)?;
    let d = model.dim();
    let mut out = DMatrix::zeros(d, d);
    for j0 in block.indices0() {
        for k0 in block.complement0(d) {
            if !trunc.keeps(k0 + 1) {
                continue;
            }
            let v = a.entry(j0, k0) / (model.lambda(j0) - model.lambda(k0));
            out[(j0, k0)] = v;
            out[(k0, j0)] = v;
        }
    }
    SymOperator::new(out)
}

/// Relative rank: effective dimension weighting each eigenvalue by its
/// inverse distance to the block edges; the block itself is lumped with the
/// gap. Scale invariant.
pub fn relative_rank(model: &SpectralModel, block: IndexBlock) -> Result<f64> {
    model.check_block(block)?;
    let d = model.dim();
    if block.j1() == 1 {
        let edge = model.lambda(block.j2()); // lambda_{j2+1}
        let g = model.lambda(block.j2() - 1) - edge;
        let head: f64 = (0..block.j2())
            .map(|k0| model.lambda(k0) / (model.lambda(k0) - edge))
            .sum();
        let tail: f64 = (block.j2()..d).map(|k0| model.lambda(k0)).sum();
        Ok(head + tail / g)
    } else {
        let g = spectral_gap(model, block)?;
        let lo = model.lambda(block.j1() - 1); // lambda_{j1}
        let hi = model.lambda(block.j2() - 1); // lambda_{j2}
        let left: f64 = (0..block.j1() - 1)
            .map(|k0| model.lambda(k0) / (model.lambda(k0) - lo))
            .sum();
        let right: f64 = (block.j2()..d)
            .map(|k0| model.lambda(k0) / (hi - model.lambda(k0)))
            .sum();
        let inner: f64 = block.indices0().map(|k0| model.lambda(k0)).sum();
        Ok(left + right + inner / g)
    }
}

/// Diagonal weights of the congruence transform entering the variance proxy.
/// For blocks starting at 1 the roles of block and complement swap.
pub fn variance_transform_weights(model: &SpectralModel, block: IndexBlock) -> Result<Vec<f64>> {
    model.check_block(block)?;
    if block.j1() > 1 {
        congruence_weights(model, block)
    } else {
        let d = model.dim();
        let edge = model.lambda(block.j2()); // lambda_{j2+1}
        let g = model.lambda(block.j2() - 1) - edge;
        let mut w = vec![0.0; d];
        for (k0, slot) in w.iter_mut().enumerate() {
            *slot = if k0 < block.j2() {
                1.0 / (model.lambda(k0) - edge).sqrt()
            } else {
                1.0 / g.sqrt()
            };
        }
        Ok(w)
    }
}

/// Transformed eigenvalues `theta_k = w_k^2 lambda_k` of the variance proxy.
pub fn variance_transform_eigenvalues(
    model: &SpectralModel,
    block: IndexBlock,
) -> Result<Vec<f64>> {
    let w = variance_transform_weights(model, block)?;
    Ok(w.iter()
        .zip(model.lambdas())
        .map(|(wi, li)| wi * wi * li)
        .collect())
}

/// Closed-form variance proxy under fourth-order cumulant uncorrelatedness:
/// `sigma^2 = max_j [ theta_j^2 E(eta^2-1)^2 + sum_{k != j} theta_j theta_k alpha_{jk} ]`.
pub fn sigma_analytic(model: &SpectralModel, block: IndexBlock, law: &KlLaw) -> Result<f64> {
    if !law.satisfies_a3(4) {
        return Err(Error::UnsupportedLaw(format!(
            "{law} lacks fourth-order cumulant uncorrelatedness with finite moments"
        )));
    }
    let kappa = law
        .centered_square_variance()
        .ok_or_else(|| Error::UnsupportedLaw(format!("{law} lacks a finite fourth moment")))?;
    let alpha = law.alpha_cross();
    let theta = variance_transform_eigenvalues(model, block)?;
    let total: f64 = theta.iter().sum();
    let mut best = 0.0_f64;
    for &tj in &theta {
        let val = tj * tj * kappa + alpha * tj * (total - tj);
        best = best.max(val);
    }
    Ok(best.sqrt())
}

/// Monte Carlo estimate of the variance proxy from the defining expectation.
pub fn sigma_monte_carlo(
    model: &SpectralModel,
    block: IndexBlock,
    law: &KlLaw,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    if n_draws < 10_000 {
        return Err(Error::invalid(
            "sigma Monte Carlo needs at least 10^4 draws",
        ));
    }
    let w = variance_transform_weights(model, block)?;
    let theta = variance_transform_eigenvalues(model, block)?;
    let d = model.dim();
    // Per draw: y = W X has outer product y y^T, and the centered transformed
    // operator is M = y y^T - diag(theta). The accumulation of M^2 reduces to
    // rank-one updates plus the fixed diag(theta)^2 term.
    let chunks = 256usize;
    let per = n_draws.div_ceil(chunks);
    let partials = parallel::map_indexed(chunks, |c| {
        let lo = c * per;
        let hi = ((c + 1) * per).min(n_draws);
        let mut acc = DMatrix::<f64>::zeros(d, d);
        let mut eta = vec![0.0; d];
        let mut y = vec![0.0; d];
        for i in lo..hi {
            let mut rng = rng::substream(seed, rng::role::SIGMA_MC, i as u64);
            law.sample_into(&mut rng, &mut eta);
            let mut ysq = 0.0;
            for k in 0..d {
                y[k] = w[k] * model.lambda(k).sqrt() * eta[k];
                ysq += y[k] * y[k];
            }
            for a in 0..d {
                for b in 0..d {
                    acc[(a, b)] += (ysq - theta[a] - theta[b]) * y[a] * y[b];
                }
            }
        }
        acc
    });
    let mut sum = DMatrix::<f64>::zeros(d, d);
    for p in partials {
        sum += p;
    }
    let m = n_draws as f64;
    for k in 0..d {
        sum[(k, k)] += m * theta[k] * theta[k];
    }
    let mean = SymOperator::symmetrized(&(sum / m))?;
    Ok(operator_norm(&mean).sqrt())
}

/// Spectrum of the limit covariance operator: one positive value per pair
/// `(j in block, k in complement ∩ truncation)`.
#[derive(Debug, Clone)]
pub struct LimitSpectrum {
    /// `(j, k, value)` with 1-based indices.
    pairs: Vec<(usize, usize, f64)>,
    truncation: Truncation,
}

impl LimitSpectrum {
    pub fn pairs(&self) -> &[(usize, usize, f64)] {
        &self.pairs
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().map(|p| p.2)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn max_value(&self) -> f64 {
        self.values().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values().fold(f64::INFINITY, f64::min)
    }

    /// `sum of sqrt(value)`, the trace of the square root of the truncated
    /// limit covariance.
    pub fn trace_sqrt(&self) -> f64 {
        // `+ 0.0` turns the empty sum's negative zero into plain zero
        self.values().map(f64::sqrt).sum::<f64>() + 0.0
    }
}

/// Eigenvalues `2 alpha_{jk} lambda_j lambda_k / (lambda_k - lambda_j)^2` of
/// the limit covariance, for pairs across the block boundary.
///
/// The cross-moment enters with first power: the Monte Carlo covariance of
/// the linear term is the arbiter for this convention, see the oracle tests.
pub fn limit_spectrum(
    model: &SpectralModel,
    block: IndexBlock,
    law: &KlLaw,
    trunc: Truncation,
) -> Result<LimitSpectrum> {
    if !law.satisfies_a3(4) {
        return Err(Error::UnsupportedLaw(format!(
            "{law} lacks fourth-order cumulant uncorrelatedness with finite moments"
        )));
    }
    model.check_block(block)?;
    let alpha = law.alpha_cross();
    let d = model.dim();
    let mut pairs = Vec::new();
    for j0 in block.indices0() {
        for k0 in block.complement0(d) {
            if !trunc.keeps(k0 + 1) {
                continue;
            }
            let lj = model.lambda(j0);
            let lk = model.lambda(k0);
            let diff = lk - lj;
            pairs.push((j0 + 1, k0 + 1, 2.0 * alpha * lj * lk / (diff * diff)));
        }
    }
    Ok(LimitSpectrum {
        pairs,
        truncation: trunc,
    })
}

/// Schatten summaries of a limit spectrum: mean, spread and skew scale of the
/// squared norm of the Gaussian limit, plus running eigenvalue products.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LimitLawSummary {
    /// Nuclear norm: the mean of the limit statistic.
    pub a: f64,
    /// `sqrt(2)` times the Hilbert-Schmidt norm: its standard deviation.
    pub b: f64,
    /// Twice the Schatten-3 norm: its third-moment scale.
    pub c: f64,
    /// Products of the largest eigenvalues, up to the top six.
    pub lambda_products: Vec<f64>,
}

pub fn limit_summary(spectrum: &LimitSpectrum) -> Result<LimitLawSummary> {
    if spectrum.is_empty() {
        return Err(Error::invalid("empty limit spectrum"));
    }
    let mut values: Vec<f64> = spectrum.values().collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let a: f64 = values.iter().sum();
    let b = 2.0_f64.sqrt() * values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c = 2.0 * values.iter().map(|v| v * v * v).sum::<f64>().cbrt();
    let mut lambda_products = Vec::new();
    let mut prod = 1.0;
    for v in values.iter().take(6) {
        prod *= v;
        lambda_products.push(prod);
    }
    Ok(LimitLawSummary {
        a,
        b,
        c,
        lambda_products,
    })
}

/// Nuclear norm of the part of the limit covariance removed by truncation.
pub fn truncation_remainder(
    model: &SpectralModel,
    block: IndexBlock,
    law: &KlLaw,
    trunc: Truncation,
) -> Result<f64> {
    let full = limit_spectrum(model, block, law, Truncation::Full)?;
    Ok(full
        .pairs()
        .iter()
        .filter(|(_, k, _)| !trunc.keeps(*k))
        .map(|(_, _, v)| v)
        .sum::<f64>()
        + 0.0)
}

/// Polynomial-in-`n` tail rate `n^{1-p/2} (log n)^{p/2} (r/sigma)^p`
/// controlling exceedance of the relative perturbation magnitude.
pub fn delta_tail_rate(n: usize, p: f64, relative_rank: f64, sigma: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("tail rate requires n >= 2"));
    }
    if !(p > 2.0) || relative_rank <= 0.0 || sigma <= 0.0 {
        return Err(Error::invalid(
            "tail rate requires p > 2 and positive scales",
        ));
    }
    let n = n as f64;
    Ok(n.powf(1.0 - p / 2.0) * n.ln().powf(p / 2.0) * (relative_rank / sigma).powf(p))
}

/// Which rate shape to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// Wasserstein distance of the mean-normalized statistic.
    Wasserstein,
    /// Uniform distance to the limit law, direct route.
    UniformDirect,
    /// Uniform distance to the limit law, eigenvalue-product route.
    UniformEigen,
    /// Uniform distance of the standardized statistic to a standard normal.
    Normal,
    /// Bootstrap rate built on the normal-approximation route.
    BootstrapNormal,
    /// Bootstrap rate built on the truncated direct route.
    BootstrapTruncated,
}

impl BoundKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "wasserstein" => Self::Wasserstein,
            "uniform-direct" => Self::UniformDirect,
            "uniform-eigen" => Self::UniformEigen,
            "normal" => Self::Normal,
            "bootstrap-normal" => Self::BootstrapNormal,
            "bootstrap-truncated" => Self::BootstrapTruncated,
            other => return Err(Error::invalid(format!("unknown bound kind `{other}`"))),
        })
    }
}

/// Inputs for [`bound_shape`]. Optional fields are only needed by some kinds.
#[derive(Debug, Clone, Default)]
pub struct BoundInputs {
    pub n: usize,
    pub p: f64,
    pub s: f64,
    /// Moment exponent of the bootstrap route; defaults to `min(p, 3)`.
    pub q: Option<f64>,
    pub block_len: usize,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub lambda_products: Vec<f64>,
    pub relative_rank: f64,
    pub truncation_remainder: Option<f64>,
    pub trace_sqrt_psi: Option<f64>,
}

/// Sum of the displayed terms of the selected rate with every unspecified
/// multiplicative constant set to one and natural logarithms throughout.
/// Shape-only: useful for trend comparison, never an absolute guarantee.
pub fn bound_shape(kind: BoundKind, inp: &BoundInputs) -> Result<f64> {
    if inp.n < 2 {
        return Err(Error::invalid("bound shape requires n >= 2"));
    }
    if inp.block_len == 0 || inp.sigma <= 0.0 || inp.a <= 0.0 || inp.b <= 0.0 || inp.c <= 0.0 {
        return Err(Error::invalid("bound shape requires positive scale inputs"));
    }
    let n = inp.n as f64;
    let ln = n.ln();
    let m = inp.block_len as f64;
    let tail = delta_tail_rate(inp.n, inp.p, inp.relative_rank, inp.sigma)?;
    let sigma_term_over =
        |denom: f64| ln.powf(1.5) / n.sqrt() * inp.sigma.powi(3) * m.powf(1.5) / denom;
    let lambda12 = || -> Result<f64> {
        inp.lambda_products
            .get(1)
            .copied()
            .ok_or_else(|| Error::invalid("need the product of the top two eigenvalues"))
    };
    match kind {
        BoundKind::Wasserstein => {
            let t1 = n.powf(-1.0 / 12.0);
            let t2 = sigma_term_over(inp.a);
            let t3 = n * m / inp.a * tail;
            let t4 = (inp.a / (n * m)).powf(inp.s);
            Ok(t1 + t2 + t3 + t4)
        }
        BoundKind::UniformDirect => {
            let l12 = lambda12()?;
            let t1 = n.powf(-0.2) * (inp.a / l12.sqrt()).powf(0.6);
            let t2 = sigma_term_over(l12.sqrt());
            Ok(t1 + t2 + tail)
        }
        BoundKind::UniformEigen => {
            let l12 = lambda12()?;
            let (l15, l16) = match (inp.lambda_products.get(4), inp.lambda_products.get(5)) {
                (Some(&a), Some(&b)) => (a, b),
                _ => {
                    return Err(Error::invalid(
                        "need the products of the top six eigenvalues",
                    ))
                }
            };
            let lambda6 = l16 / l15;
            let skew = (inp.c / inp.b).powi(3);
            let t1 = (n.powf(-0.5) * (inp.a / lambda6).powi(3) * skew).powf(1.1);
            let t2 = n.powf(-0.5) * inp.a.powi(6) / l16 * skew;
            let t3 = sigma_term_over(l12.sqrt());
            Ok(t1 + t2 + t3 + tail)
        }
        BoundKind::Normal => {
            let t1 = n.powf(0.25 - inp.p.min(3.0) / 8.0) * (inp.a / inp.b).powf(0.75);
            let t2 = (inp.c / inp.b).powi(3);
            let t3 = sigma_term_over(inp.b);
            Ok(t1 + t2 + t3 + tail)
        }
        BoundKind::BootstrapNormal => {
            let q = inp.q.unwrap_or_else(|| inp.p.min(3.0));
            let t1 = n.powf(0.25 - q / 8.0) * (inp.a / inp.b).powf(0.75);
            let t2 = (inp.c / inp.b).powi(3);
            let t3 = ln.sqrt() / n.sqrt() * inp.a / inp.b;
            let t4 = sigma_term_over(inp.b);
            let t5 = tail.powf(inp.s);
            Ok(t1 + t2 + t3 + t4 + t5)
        }
        BoundKind::BootstrapTruncated => {
            let l12 = lambda12()?;
            let rem = inp
                .truncation_remainder
                .ok_or_else(|| Error::invalid("need the truncation remainder"))?;
            let tr_sqrt = inp
                .trace_sqrt_psi
                .ok_or_else(|| Error::invalid("need the trace of the square-root spectrum"))?;
            let t1 = n.powf(-0.2) * (inp.a / l12.sqrt()).powf(0.6);
            let t2 = sigma_term_over(l12.sqrt());
            let t3 = ln.sqrt() / n.sqrt() * inp.a.sqrt() * tr_sqrt / l12.sqrt();
            let t4 = rem * ln / l12.sqrt();
            let t5 = (tail + n.powf(1.0 - inp.p / 6.0)).powf(inp.s);
            Ok(t1 + t2 + t3 + t4 + t5)
        }
    }
}

/// Both sides of the two deterministic perturbation inequalities together
/// with the quadratic comparison that follows from them.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PerturbationCheck {
    /// Relative perturbation magnitude of the instance.
    pub delta: f64,
    /// `||P - P_hat||_2` and its bound `4 sqrt(2) min^{1/2} delta`.
    pub distance_lhs: f64,
    pub distance_rhs: f64,
    /// `||P_hat - P - L E||_2` and its bound `20 sqrt(2) min delta^2`.
    pub remainder_lhs: f64,
    pub remainder_rhs: f64,
    /// `| ||P-P_hat||_2^2 - ||L E||_2^2 |` and the bound with the constants
    /// the proof yields: `80 min^{3/2} delta^3 + 800 min^2 delta^4`.
    pub quadratic_lhs: f64,
    pub quadratic_rhs: f64,
    pub pass: bool,
}

/// Options for [`perturbation_check`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PerturbationOptions {
    /// Replace delta by `min(delta_block, delta_complement)` when the
    /// complement is also an interval starting at the left edge. Off by
    /// default so the checks stay literal.
    pub use_min_delta: bool,
}

/// Evaluate the deterministic perturbation inequalities on one instance.
pub fn perturbation_check(
    model: &SpectralModel,
    block: IndexBlock,
    e: &SymOperator,
    opts: PerturbationOptions,
) -> Result<PerturbationCheck> {
    model.check_block(block)?;
    if e.dim() != model.dim() {
        return Err(Error::DimMismatch(e.dim(), model.dim()));
    }
    let d = model.dim();
    let mut delta = relative_delta(model, block, e)?;
    if opts.use_min_delta && block.j1() == 1 {
        if let Some(comp) = block.complement_block(d) {
            delta = delta.min(relative_delta(model, comp, e)?);
        }
    }
    let perturbed = model.covariance().add(e)?;
    let es_hat = eigh(&perturbed);
    let p_hat = projector(&es_hat, block)?;
    let p = projector(&eigh(&model.covariance()), block)?;
    let lin = linear_term(model, block, e, Truncation::Full)?;

    let min_side = block.min_side(d) as f64;
    let dist_sq = hs_distance_sq(&p, &p_hat)?;
    let distance_lhs = dist_sq.sqrt();
    let distance_rhs = 4.0 * 2.0_f64.sqrt() * min_side.sqrt() * delta;

    let diff = p_hat.sub(&p)?.sub(&lin)?;
    let remainder_lhs = diff.frobenius();
    let remainder_rhs = 20.0 * 2.0_f64.sqrt() * min_side * delta * delta;

    let lin_sq = lin.frobenius().powi(2);
    let quadratic_lhs = (dist_sq - lin_sq).abs();
    let quadratic_rhs =
        80.0 * min_side.powf(1.5) * delta.powi(3) + 800.0 * min_side.powi(2) * delta.powi(4);

    let pass = distance_lhs <= distance_rhs
        && remainder_lhs <= remainder_rhs
        && quadratic_lhs <= quadratic_rhs;
    Ok(PerturbationCheck {
        delta,
        distance_lhs,
        distance_rhs,
        remainder_lhs,
        remainder_rhs,
        quadratic_lhs,
        quadratic_rhs,
        pass,
    })
}

/// Empirical exceedance frequencies of the relative perturbation magnitude at
/// thresholds `C sqrt(sigma^2 log n / n)`, `C in {1, 2, 4}`. Report-only: the
/// matching tail inequality carries an unspecified constant.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DeltaTailCheck {
    pub thresholds: [f64; 3],
    pub exceedance: [f64; 3],
    pub reference_rate: f64,
    pub replicates: usize,
}

pub fn delta_tail_check(
    model: &SpectralModel,
    block: IndexBlock,
    law: &KlLaw,
    n: usize,
    replicates: usize,
    p: f64,
    seed: u64,
) -> Result<DeltaTailCheck> {
    if replicates < 200 {
        return Err(Error::invalid(
            "delta tail check needs at least 200 replicates",
        ));
    }
    let sigma = sigma_analytic(model, block, law)?;
    let rank = relative_rank(model, block)?;
    let base = sigma * ((n as f64).ln() / n as f64).sqrt();
    let thresholds = [base, 2.0 * base, 4.0 * base];
    let deltas = parallel::map_indexed(replicates, |r| {
        let data = crate::sample::sample_dataset(
            model,
            law,
            n,
            rng::mix(seed, &[rng::role::RUN, r as u64]),
        );
        let emp = crate::sample::empirical_covariance(&data);
        let e = emp.sub(&model.covariance()).expect("dims match");
        relative_delta(model, block, &e).expect("valid block")
    });
    let mut exceedance = [0.0; 3];
    for (slot, thr) in exceedance.iter_mut().zip(thresholds) {
        *slot = deltas.iter().filter(|&&x| x > thr).count() as f64 / replicates as f64;
    }
    Ok(DeltaTailCheck {
        thresholds,
        exceedance,
        reference_rate: delta_tail_rate(n, p, rank, sigma)?,
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn model(l: &[f64]) -> SpectralModel {
        SpectralModel::new(l.to_vec()).unwrap()
    }

    fn block(j1: usize, j2: usize) -> IndexBlock {
        IndexBlock::new(j1, j2).unwrap()
    }

    #[test]
    fn model_rejects_ties_and_nonpositive() {
        assert!(SpectralModel::new(vec![2.0, 2.0, 1.0]).is_err());
        assert!(SpectralModel::new(vec![2.0, 1.0, 0.0]).is_err());
        assert!(SpectralModel::new(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn gap_cases() {
        let m = model(&[5.0, 3.0, 2.0, 1.0]);
        assert_eq!(spectral_gap(&m, block(2, 3)).unwrap(), 1.0);
        let m2 = model(&[2.0, 1.0]);
        assert_eq!(spectral_gap(&m2, block(1, 1)).unwrap(), 1.0);
        assert!(matches!(
            spectral_gap(&m2, block(1, 2)),
            Err(Error::NoComplement)
        ));
    }

    #[test]
    fn linear_term_examples() {
        let m = model(&[2.0, 1.0]);
        let a = SymOperator::new(dmatrix![0.0, 1.0; 1.0, 0.0]).unwrap();
        let lt = linear_term(&m, block(1, 1), &a, Truncation::Full).unwrap();
        assert!((lt.matrix() - dmatrix![0.0, 1.0; 1.0, 0.0]).amax() < 1e-15);

        // Annihilation: the linear term of the population covariance is zero.
        let lt0 = linear_term(&m, block(1, 1), &m.covariance(), Truncation::Full).unwrap();
        assert_eq!(lt0.max_abs_entry(), 0.0);

        let m3 = model(&[2.0, 1.0, 0.5]);
        let ones = SymOperator::from_fn(3, |_, _| 1.0).unwrap();
        let lt3 = linear_term(&m3, block(1, 1), &ones, Truncation::UpTo(2)).unwrap();
        let mut expect = DMatrix::zeros(3, 3);
        expect[(0, 1)] = 1.0;
        expect[(1, 0)] = 1.0;
        assert!((lt3.matrix() - expect).amax() < 1e-15);
    }

    #[test]
    fn linear_term_block_support_and_antisymmetry() {
        let m = model(&[4.0, 3.0, 2.0, 1.0]);
        let e = SymOperator::from_fn(4, |i, j| (i + 2 * j) as f64 - 2.5).unwrap();
        let b = block(1, 2);
        let lt = linear_term(&m, b, &e, Truncation::Full).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let cross = b.contains(i + 1) != b.contains(j + 1);
                if !cross {
                    assert_eq!(lt.entry(i, j), 0.0);
                }
            }
        }
        let comp = b.complement_block(4).unwrap();
        let lt_comp = linear_term(&m, comp, &e, Truncation::Full).unwrap();
        let sum = lt.add(&lt_comp).unwrap();
        assert!(sum.max_abs_entry() <= 1e-12);
    }

    #[test]
    fn relative_delta_examples() {
        let m = model(&[2.0, 1.0]);
        let b = block(1, 1);
        assert_eq!(relative_delta(&m, b, &SymOperator::zeros(2)).unwrap(), 0.0);
        let e = SymOperator::new(dmatrix![0.0, 1.0; 1.0, 0.0]).unwrap();
        assert!((relative_delta(&m, b, &e).unwrap() - 1.0).abs() < 1e-12);
        let e2 = SymOperator::from_diagonal(&[0.0, 3.0]);
        assert!((relative_delta(&m, b, &e2).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn delta_bounded_by_operator_norm_over_gap() {
        use rand::Rng;
        for t in 0..200u64 {
            let mut rng = rng::substream(3, rng::role::PERTURBATION, t);
            let d = 2 + (t as usize % 8);
            let lambdas: Vec<f64> = (0..d)
                .map(|k| (d - k) as f64 + rng.random::<f64>() * 0.3)
                .collect();
            let m = model(&lambdas);
            let j1 = 1 + rng.random_range(0..d);
            let j2 = rng.random_range(j1..=d);
            if j1 == 1 && j2 == d {
                continue;
            }
            let b = block(j1, j2);
            let e = SymOperator::from_fn(d, |_, _| rng.random::<f64>() - 0.5).unwrap();
            let delta = relative_delta(&m, b, &e).unwrap();
            let bound = operator_norm(&e) / spectral_gap(&m, b).unwrap();
            assert!(delta <= bound * (1.0 + 1e-10), "t={t}: {delta} > {bound}");
        }
    }

    #[test]
    fn relative_rank_examples() {
        let m = model(&[2.0, 1.0]);
        assert!((relative_rank(&m, block(1, 1)).unwrap() - 3.0).abs() < 1e-12);
        let m3 = model(&[4.0, 2.0, 1.0]);
        assert!((relative_rank(&m3, block(2, 2)).unwrap() - 5.0).abs() < 1e-12);
        // scale invariance
        let scaled = m3.scaled(7.5).unwrap();
        assert!(
            (relative_rank(&m3, block(2, 2)).unwrap()
                - relative_rank(&scaled, block(2, 2)).unwrap())
            .abs()
                < 1e-12
        );
    }

    #[test]
    fn sigma_analytic_gaussian_example() {
        let m = model(&[2.0, 1.0]);
        let s = sigma_analytic(&m, block(1, 1), &KlLaw::Gaussian).unwrap();
        assert!((s - 10.0_f64.sqrt()).abs() < 1e-12);
        // scale invariance
        let s2 = sigma_analytic(&m.scaled(3.0).unwrap(), block(1, 1), &KlLaw::Gaussian).unwrap();
        assert!((s - s2).abs() < 1e-12);
    }

    #[test]
    fn sigma_monte_carlo_two_point_closed_form() {
        // Sign-flip coefficients have E(eta^2-1)^2 = 0 and alpha = 1, so only
        // the cross terms survive: sigma^2 = max_j sum_{k!=j} theta_j theta_k = 2.
        let m = model(&[2.0, 1.0]);
        let s = sigma_monte_carlo(&m, block(1, 1), &KlLaw::TwoPoint, 20_000, 11).unwrap();
        assert!((s - 2.0_f64.sqrt()).abs() < 0.05, "got {s}");
    }

    #[test]
    fn sigma_monte_carlo_matches_analytic_gaussian() {
        let m = model(&[2.0, 1.0]);
        let mc = sigma_monte_carlo(&m, block(1, 1), &KlLaw::Gaussian, 200_000, 5).unwrap();
        let exact = 10.0_f64.sqrt();
        assert!((mc - exact).abs() / exact < 0.05, "mc={mc} exact={exact}");
    }

    #[test]
    fn sigma_monte_carlo_stability_in_draws() {
        let m = model(&[3.0, 2.0, 1.0]);
        let b = block(2, 2);
        let a = sigma_monte_carlo(&m, b, &KlLaw::Gaussian, 50_000, 7).unwrap();
        let bb = sigma_monte_carlo(&m, b, &KlLaw::Gaussian, 100_000, 7).unwrap();
        let exact = sigma_analytic(&m, b, &KlLaw::Gaussian).unwrap();
        assert!((a - exact).abs() / exact < 0.1);
        assert!((bb - exact).abs() / exact < 0.1);
    }

    #[test]
    fn limit_spectrum_examples() {
        let m = model(&[2.0, 1.0]);
        let sp = limit_spectrum(&m, block(1, 1), &KlLaw::Gaussian, Truncation::Full).unwrap();
        assert_eq!(sp.len(), 1);
        assert!((sp.pairs()[0].2 - 4.0).abs() < 1e-12);

        let m41 = model(&[4.0, 1.0]);
        let sp41 = limit_spectrum(&m41, block(1, 1), &KlLaw::Gaussian, Truncation::Full).unwrap();
        assert!((sp41.pairs()[0].2 - 8.0 / 9.0).abs() < 1e-12);

        let m3 = model(&[2.0, 1.0, 0.5]);
        let tr = limit_spectrum(&m3, block(1, 1), &KlLaw::Gaussian, Truncation::UpTo(2)).unwrap();
        assert_eq!(tr.len(), 1);
        assert!((tr.pairs()[0].2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn limit_summary_examples() {
        let single = LimitSpectrum {
            pairs: vec![(1, 2, 4.0)],
            truncation: Truncation::Full,
        };
        let s = limit_summary(&single).unwrap();
        assert!((s.a - 4.0).abs() < 1e-12);
        assert!((s.b - 4.0 * 2.0_f64.sqrt()).abs() < 1e-12);
        assert!((s.c - 8.0).abs() < 1e-12);

        let pair = LimitSpectrum {
            pairs: vec![(1, 2, 1.0), (1, 3, 1.0)],
            truncation: Truncation::Full,
        };
        let s2 = limit_summary(&pair).unwrap();
        assert!((s2.a - 2.0).abs() < 1e-12);
        assert!((s2.b - 2.0).abs() < 1e-12);
        assert!((s2.c - 2.0 * 2.0_f64.cbrt()).abs() < 1e-12);

        // Schatten monotonicity in summary form
        assert!(s2.c / 2.0 <= s2.b / 2.0_f64.sqrt() + 1e-12);
        assert!(s2.b / 2.0_f64.sqrt() <= s2.a + 1e-12);

        let empty = LimitSpectrum {
            pairs: vec![],
            truncation: Truncation::Full,
        };
        assert!(limit_summary(&empty).is_err());
    }

    #[test]
    fn truncation_remainder_examples() {
        let m3 = model(&[2.0, 1.0, 0.5]);
        let b = block(1, 1);
        let law = KlLaw::Gaussian;
        assert_eq!(
            truncation_remainder(&m3, b, &law, Truncation::Full).unwrap(),
            0.0
        );
        let rem = truncation_remainder(&m3, b, &law, Truncation::UpTo(2)).unwrap();
        assert!((rem - 8.0 / 9.0).abs() < 1e-12);
        // decomposition: truncated mass plus remainder equals the full mass
        let full = limit_summary(&limit_spectrum(&m3, b, &law, Truncation::Full).unwrap())
            .unwrap()
            .a;
        let trunc = limit_summary(&limit_spectrum(&m3, b, &law, Truncation::UpTo(2)).unwrap())
            .unwrap()
            .a;
        assert!((trunc + rem - full).abs() < 1e-12);
    }

    #[test]
    fn tail_rate_examples() {
        let v = delta_tail_rate(100, 4.0, 1.0, 1.0).unwrap();
        let expect = 100.0_f64.powf(-1.0) * (100.0_f64.ln()).powi(2);
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.21208).abs() < 1e-4);
        // power scaling in r/sigma
        let v2 = delta_tail_rate(100, 4.0, 2.0, 1.0).unwrap();
        assert!((v2 / v - 16.0).abs() < 1e-9);
        // monotone decrease in p on a grid
        let grid: Vec<f64> = [3.0, 4.0, 6.0, 9.0]
            .iter()
            .map(|&p| delta_tail_rate(100, p, 1.0, 1.0).unwrap())
            .collect();
        assert!(grid.windows(2).all(|w| w[1] < w[0]));
        assert!(delta_tail_rate(1, 4.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn bound_shape_normal_example() {
        // All scale ratios pinned to one: the three surviving terms are
        // 16^{-1/8}, 1, and (ln 16)^{3/2}/4; the tail term is forced to zero
        // by a huge p.
        let inp = BoundInputs {
            n: 16,
            p: 400.0,
            s: 0.5,
            q: None,
            block_len: 1,
            sigma: 1.0,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            lambda_products: vec![1.0, 1.0],
            relative_rank: 1.0,
            ..Default::default()
        };
        let v = bound_shape(BoundKind::Normal, &inp).unwrap();
        let expect = 16.0_f64.powf(-0.125) + 1.0 + 16.0_f64.ln().powf(1.5) / 4.0;
        assert!((v - expect).abs() < 1e-9, "v={v} expect={expect}");
    }

    #[test]
    fn bound_shape_power_scaling_in_n() {
        let mk = |n: usize| BoundInputs {
            n,
            p: 400.0,
            s: 0.5,
            q: Some(3.0),
            block_len: 1,
            sigma: 1.0,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            lambda_products: vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            relative_rank: 1.0,
            truncation_remainder: Some(0.0),
            trace_sqrt_psi: Some(1.0),
        };
        // First term of the Wasserstein shape scales as n^{-1/12}.
        let w1 = bound_shape(BoundKind::Wasserstein, &mk(256)).unwrap();
        let w4 = bound_shape(BoundKind::Wasserstein, &mk(1024)).unwrap();
        assert!(w4 < w1);
        // uniform-direct first term scales as n^{-1/5}
        let n1 = 10_000usize;
        let u1 = bound_shape(BoundKind::UniformDirect, &mk(n1)).unwrap();
        let u4 = bound_shape(BoundKind::UniformDirect, &mk(4 * n1)).unwrap();
        assert!(u4 < u1);
    }

    #[test]
    fn bound_shape_bootstrap_normal_terms() {
        // Audit of the bootstrap-normal shape at q = 3, s = 1/2: five terms,
        // n^{1/4 - q/8} (A/B)^{3/4} + (C/B)^3 + sqrt(ln n / n) A/B
        // + n^{-1/2} (ln n)^{3/2} sigma^3 m^{3/2} / B + tail^s.
        let n = 64usize;
        let inp = BoundInputs {
            n,
            p: 7.0,
            s: 0.5,
            q: Some(3.0),
            block_len: 2,
            sigma: 1.5,
            a: 3.0,
            b: 2.0,
            c: 1.0,
            lambda_products: vec![1.0, 1.0],
            relative_rank: 2.0,
            ..Default::default()
        };
        let nf = n as f64;
        let ln = nf.ln();
        let tail = delta_tail_rate(n, 7.0, 2.0, 1.5).unwrap();
        let expect = nf.powf(0.25 - 3.0 / 8.0) * (3.0_f64 / 2.0).powf(0.75)
            + 0.5_f64.powi(3)
            + ln.sqrt() / nf.sqrt() * 1.5
            + ln.powf(1.5) / nf.sqrt() * 1.5_f64.powi(3) * 2.0_f64.powf(1.5) / 2.0
            + tail.sqrt();
        let v = bound_shape(BoundKind::BootstrapNormal, &inp).unwrap();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn bound_shape_missing_inputs_rejected() {
        let inp = BoundInputs {
            n: 16,
            p: 4.0,
            s: 0.5,
            block_len: 1,
            sigma: 1.0,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            lambda_products: vec![4.0],
            relative_rank: 1.0,
            ..Default::default()
        };
        assert!(bound_shape(BoundKind::UniformDirect, &inp).is_err());
        assert!(bound_shape(BoundKind::UniformEigen, &inp).is_err());
        assert!(bound_shape(BoundKind::BootstrapTruncated, &inp).is_err());
    }

    #[test]
    fn perturbation_check_zero_and_small() {
        let m = model(&[2.0, 1.0]);
        let b = block(1, 1);
        let zero = perturbation_check(&m, b, &SymOperator::zeros(2), Default::default()).unwrap();
        assert!(zero.pass);
        assert_eq!(zero.distance_lhs, 0.0);
        assert_eq!(zero.remainder_lhs, 0.0);

        let e = SymOperator::new(dmatrix![0.0, 0.01; 0.01, 0.0]).unwrap();
        let chk = perturbation_check(&m, b, &e, Default::default()).unwrap();
        assert!(chk.pass);
        assert!(chk.remainder_lhs < 5e-4 && chk.remainder_lhs > 1e-6);
    }

    #[test]
    fn perturbation_check_min_delta_monotone() {
        let m = model(&[3.0, 2.0, 1.0]);
        let b = block(1, 1);
        let e = SymOperator::from_fn(3, |i, j| if i == j { 0.1 } else { 0.05 }).unwrap();
        let plain = perturbation_check(&m, b, &e, Default::default()).unwrap();
        let minned = perturbation_check(
            &m,
            b,
            &e,
            PerturbationOptions {
                use_min_delta: true,
            },
        )
        .unwrap();
        assert!(minned.delta <= plain.delta + 1e-15);
    }

    #[test]
    fn scale_invariance_of_core_quantities() {
        let m = model(&[3.0, 2.0, 1.0, 0.5]);
        let b = block(2, 3);
        let e = SymOperator::from_fn(4, |i, j| 0.01 * ((i * 5 + j) as f64).sin()).unwrap();
        let c = 4.2;
        let ms = m.scaled(c).unwrap();
        let es = e.scaled(c);
        assert!(
            (relative_delta(&m, b, &e).unwrap() - relative_delta(&ms, b, &es).unwrap()).abs()
                < 1e-12
        );
        let law = KlLaw::Gaussian;
        let s1 = limit_summary(&limit_spectrum(&m, b, &law, Truncation::Full).unwrap()).unwrap();
        let s2 = limit_summary(&limit_spectrum(&ms, b, &law, Truncation::Full).unwrap()).unwrap();
        assert!((s1.a - s2.a).abs() < 1e-10);
        assert!((s1.b - s2.b).abs() < 1e-10);
        assert!((s1.c - s2.c).abs() < 1e-10);
    }

    #[test]
    fn delta_tail_check_monotone_in_threshold() {
        let m = crate::model::EigenProfile::ExpDecay { rate: 1.0, dim: 10 }
            .build()
            .unwrap();
        let chk = delta_tail_check(&m, block(1, 1), &KlLaw::Gaussian, 200, 200, 6.0, 123).unwrap();
        assert!(chk.exceedance[0] >= chk.exceedance[1]);
        assert!(chk.exceedance[1] >= chk.exceedance[2]);
    }

    #[test]
    fn delta_tail_check_soft_level_and_trend() {
        let m = crate::model::EigenProfile::ExpDecay { rate: 1.0, dim: 20 }
            .build()
            .unwrap();
        let b = block(1, 1);
        let law = KlLaw::Gaussian;
        let wide = delta_tail_check(&m, b, &law, 1000, 300, 6.0, 17).unwrap();
        // soft: at four sigma-scales the exceedance sits in the far tail
        assert!(
            wide.exceedance[2] < 0.05,
            "exceedance at the widest threshold: {}",
            wide.exceedance[2]
        );
        // quadrupling n leaves the exceedance at fixed scale non-increasing,
        // up to two binomial standard errors
        let narrow = delta_tail_check(&m, b, &law, 250, 300, 6.0, 17).unwrap();
        for c in 0..3 {
            let se = |p: f64| (p.max(0.01) * (1.0 - p.max(0.01)) / 300.0).sqrt();
            let slack = 2.0 * (se(wide.exceedance[c]) + se(narrow.exceedance[c]));
            assert!(
                wide.exceedance[c] <= narrow.exceedance[c] + slack,
                "scale {c}: {} vs {}",
                wide.exceedance[c],
                narrow.exceedance[c]
            );
        }
    }
}
