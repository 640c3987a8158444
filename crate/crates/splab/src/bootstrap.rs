//! Multiplier bootstrap for the squared projector distance: reweighted
//! covariances, bootstrap statistics, empirical quantiles and coverage
//! experiments.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::law::KlLaw;
use crate::metrics::empirical_quantile;
use crate::model::EigenProfile;
use crate::operator::{eigh, hs_distance_sq, projector, IndexBlock, SymOperator};
use crate::sample::{empirical_projector, sample_dataset, Dataset};
use crate::spectral::SpectralModel;
use crate::{parallel, rng};

/// Law of the i.i.d. bootstrap multipliers, normalized to `E w^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierLaw {
    /// Standard normal weights.
    Gaussian,
    /// `w = sqrt(e)` with a standard exponential `e`; nonnegative weights.
    SqrtExponential,
}

impl MultiplierLaw {
    /// `sigma_w^2 = E (w^2 - 1)^2`.
    pub fn variance_of_square(&self) -> f64 {
        match self {
            MultiplierLaw::Gaussian => 2.0,
            MultiplierLaw::SqrtExponential => 1.0,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            MultiplierLaw::Gaussian => rng.sample(StandardNormal),
            MultiplierLaw::SqrtExponential => {
                let e: f64 = rng.sample(Exp1);
                e.sqrt()
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(MultiplierLaw::Gaussian),
            "sqrt-exponential" => Ok(MultiplierLaw::SqrtExponential),
            other => Err(Error::invalid(format!("unknown multiplier law `{other}`"))),
        }
    }
}

/// Reweighted covariance `n^{-1} sum_i w_i^2 X_i X_i^T`, formed directly from
/// the weighted rank-one sums without materializing the reweighted sample.
pub fn reweighted_covariance(data: &Dataset, multipliers: &[f64]) -> Result<SymOperator> {
    if multipliers.len() != data.n() {
        return Err(Error::invalid("one multiplier per observation required"));
    }
    let mut scaled = data.rows().clone();
    for (i, w) in multipliers.iter().enumerate() {
        let w2 = w * w;
        for j in 0..scaled.ncols() {
            scaled[(i, j)] *= w2;
        }
    }
    let gram: DMatrix<f64> = scaled.tr_mul(data.rows()) / data.n() as f64;
    SymOperator::symmetrized(&gram)
}

/// One bootstrap statistic `(n / sigma_w^2) || P_tilde - P_hat ||_2^2` from an
/// explicit multiplier vector; the deterministic core behind
/// [`bootstrap_replicate`], also used directly by tests.
pub fn bootstrap_statistic(
    data: &Dataset,
    p_hat: &SymOperator,
    block: IndexBlock,
    multipliers: &[f64],
    sigma_w_sq: f64,
) -> Result<f64> {
    let cov = reweighted_covariance(data, multipliers)?;
    let p_tilde = projector(&eigh(&cov), block)?;
    Ok(data.n() as f64 / sigma_w_sq * hs_distance_sq(&p_tilde, p_hat)?)
}

fn draw_multipliers(law: MultiplierLaw, n: usize, seed: u64, replicate: u64) -> Vec<f64> {
    let mut rng = rng::substream(seed, rng::role::MULTIPLIER, replicate);
    (0..n).map(|_| law.sample(&mut rng)).collect()
}

/// One bootstrap replicate: draws multipliers from the `(seed, replicate)`
/// substream, reweights, and returns the bootstrap statistic. Conditionally
/// deterministic given `(data, seed)`.
pub fn bootstrap_replicate(
    data: &Dataset,
    model: &SpectralModel,
    block: IndexBlock,
    law: MultiplierLaw,
    seed: u64,
) -> Result<f64> {
    let emp = empirical_projector(data, model, block)?;
    let w = draw_multipliers(law, data.n(), seed, 0);
    bootstrap_statistic(data, &emp.projector, block, &w, law.variance_of_square())
}

/// A full set of bootstrap replicates for one dataset.
#[derive(Debug, Clone)]
pub struct BootstrapRun {
    pub statistics: Vec<f64>,
    pub seed: u64,
}

/// Generate `b` replicates; replicate `t` uses the `(seed, t)` multiplier
/// substream, so the vector is identical for any worker count.
pub fn bootstrap_run(
    data: &Dataset,
    p_hat: &SymOperator,
    block: IndexBlock,
    law: MultiplierLaw,
    b: usize,
    seed: u64,
) -> Result<BootstrapRun> {
    if b == 0 {
        return Err(Error::invalid("need at least one bootstrap replicate"));
    }
    let sigma_w_sq = law.variance_of_square();
    let statistics = parallel::map_indexed(b, |t| {
        let w = draw_multipliers(law, data.n(), seed, t as u64);
        bootstrap_statistic(data, p_hat, block, &w, sigma_w_sq).expect("validated inputs")
    });
    Ok(BootstrapRun { statistics, seed })
}

/// Bootstrap quantile: the `ceil((1-alpha) b)`-th order statistic, the literal
/// infimum of the empirical bootstrap CDF at level `1 - alpha`.
pub fn bootstrap_quantile(statistics: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    empirical_quantile(statistics, 1.0 - alpha)
}

/// One Monte Carlo run of a coverage experiment.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoverageRun {
    pub statistic: f64,
    pub quantile: f64,
    pub reject: bool,
}

/// Outcome of a coverage experiment for the bootstrap confidence procedure.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoverageOutcome {
    pub rejection_rate: f64,
    pub binomial_se: f64,
    pub runs: Vec<CoverageRun>,
}

/// Fraction of Monte Carlo runs where the true statistic
/// `n ||P_hat - P||_2^2` exceeds the bootstrap quantile; nominal level
/// `alpha` under a valid procedure.
#[allow(clippy::too_many_arguments)]
pub fn coverage_experiment(
    profile: &EigenProfile,
    law: &KlLaw,
    multiplier: MultiplierLaw,
    block: IndexBlock,
    n: usize,
    b: usize,
    mc_runs: usize,
    alpha: f64,
    seed: u64,
) -> Result<CoverageOutcome> {
    coverage_experiment_scaled(
        profile, law, multiplier, block, n, b, mc_runs, alpha, seed, 1.0,
    )
}

/// Coverage experiment with the bootstrap statistics multiplied by
/// `stat_scale` before the quantile; `1.0` is the real procedure. The scale
/// hook exists so directional sanity checks can inflate the bootstrap law.
#[allow(clippy::too_many_arguments)]
pub(crate) fn coverage_experiment_scaled(
    profile: &EigenProfile,
    law: &KlLaw,
    multiplier: MultiplierLaw,
    block: IndexBlock,
    n: usize,
    b: usize,
    mc_runs: usize,
    alpha: f64,
    seed: u64,
    stat_scale: f64,
) -> Result<CoverageOutcome> {
    if mc_runs < 50 {
        return Err(Error::invalid("coverage experiment needs at least 50 runs"));
    }
    if n < 2 {
        return Err(Error::invalid("coverage experiment needs n >= 2"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let model = profile.build()?;
    block.validate(model.dim())?;
    let p_pop = projector(&eigh(&model.covariance()), block)?;
    let runs: Vec<CoverageRun> = parallel::map_indexed(mc_runs, |r| {
        let run_seed = rng::mix(seed, &[rng::role::RUN, r as u64]);
        let data = sample_dataset(&model, law, n, run_seed);
        let emp = empirical_projector(&data, &model, block).expect("validated block");
        let statistic = n as f64 * hs_distance_sq(&emp.projector, &p_pop).expect("matching dims");
        let boot = bootstrap_run(&data, &emp.projector, block, multiplier, b, run_seed)
            .expect("validated inputs");
        let scaled: Vec<f64> = boot.statistics.iter().map(|s| s * stat_scale).collect();
        let quantile = bootstrap_quantile(&scaled, alpha).expect("validated alpha");
        CoverageRun {
            statistic,
            quantile,
            reject: statistic > quantile,
        }
    });
    let rejection_rate = runs.iter().filter(|r| r.reject).count() as f64 / mc_runs as f64;
    Ok(CoverageOutcome {
        rejection_rate,
        binomial_se: (alpha * (1.0 - alpha) / mc_runs as f64).sqrt(),
        runs,
    })
}
