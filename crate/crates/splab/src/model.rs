//! Eigenvalue-profile families with controlled decay, matching the model
//! classes of the experiment suite.

use crate::error::{Error, Result};
use crate::spectral::SpectralModel;

/// Stagger applied where a profile would otherwise produce tied eigenvalues.
/// Small enough to leave every block quantity unchanged to nine digits, large
/// enough to keep the eigendecomposition and resolvent weights well posed.
pub const TIE_STAGGER: f64 = 1e-9;

/// Eigenvalue profiles of the covariance models under study.
#[derive(Debug, Clone, PartialEq)]
pub enum EigenProfile {
    /// `lambda_j = exp(-rate * j)`, `rate > 0`.
    ExpDecay { rate: f64, dim: usize },
    /// `lambda_j = j^{-rate}`, `rate > 1`.
    PolyDecay { rate: f64, dim: usize },
    /// `spikes` leading eigenvalues above a flat unit tail:
    /// `lambda_spikes = 1 + gap`, `lambda_1 <= 1 + spread * gap`, tail at 1.
    /// The flat stretches are staggered by [`TIE_STAGGER`] so the sequence
    /// decreases strictly.
    Spiked {
        spikes: usize,
        gap: f64,
        spread: f64,
        dim: usize,
    },
    /// Pervasive-factor profile: `spikes` dominant eigenvalues of comparable
    /// size over a square-summable tail whose total mass stays below
    /// `balance * lambda_1`. `gap_fraction` is the guaranteed relative gap at
    /// the block edge.
    Pervasive {
        spikes: usize,
        gap_fraction: f64,
        balance: f64,
        dim: usize,
    },
}

impl EigenProfile {
    pub fn build(&self) -> Result<SpectralModel> {
        match *self {
            EigenProfile::ExpDecay { rate, dim } => {
                if !(rate > 0.0) || dim == 0 {
                    return Err(Error::invalid("exp-decay needs rate > 0 and dim >= 1"));
                }
                SpectralModel::new((1..=dim).map(|j| (-rate * j as f64).exp()).collect())
            }
            EigenProfile::PolyDecay { rate, dim } => {
                if !(rate > 1.0) || dim == 0 {
                    return Err(Error::invalid("poly-decay needs rate > 1 and dim >= 1"));
                }
                SpectralModel::new((1..=dim).map(|j| (j as f64).powf(-rate)).collect())
            }
            EigenProfile::Spiked {
                spikes,
                gap,
                spread,
                dim,
            } => {
                if dim < 6 || spikes == 0 || spikes > dim - spikes {
                    return Err(Error::invalid(
                        "spiked profile needs dim >= 6 and spikes <= dim - spikes",
                    ));
                }
                if !(gap > 0.0 && gap <= 1.0) || !(spread >= 1.0) {
                    return Err(Error::invalid(
                        "spiked profile needs gap in (0,1] and spread >= 1",
                    ));
                }
                let mut lambdas = Vec::with_capacity(dim);
                for j in 1..=spikes {
                    let frac = if spikes > 1 {
                        (spikes - j) as f64 / (spikes - 1) as f64
                    } else {
                        0.0
                    };
                    let mut v = 1.0 + gap + (spread - 1.0) * gap * frac;
                    if spread == 1.0 {
                        v += TIE_STAGGER * (spikes - j) as f64;
                    }
                    lambdas.push(v);
                }
                let tail = dim - spikes;
                for i in 1..=tail {
                    lambdas.push(1.0 + TIE_STAGGER * (tail - i) as f64);
                }
                SpectralModel::new(lambdas)
            }
            EigenProfile::Pervasive {
                spikes,
                gap_fraction,
                balance,
                dim,
            } => {
                if spikes == 0 || spikes >= dim {
                    return Err(Error::invalid("pervasive profile needs 1 <= spikes < dim"));
                }
                if !(gap_fraction > 0.0 && gap_fraction < 1.0) || !(balance >= 1.0) {
                    return Err(Error::invalid(
                        "pervasive profile needs gap_fraction in (0,1) and balance >= 1",
                    ));
                }
                // Spikes interpolate linearly from `balance` down to 1, so
                // lambda_1 = balance * lambda_spikes.
                let mut lambdas = Vec::with_capacity(dim);
                for j in 1..=spikes {
                    let frac = if spikes > 1 {
                        (spikes - j) as f64 / (spikes - 1) as f64
                    } else {
                        0.0
                    };
                    let mut v = 1.0 + (balance - 1.0) * frac;
                    if balance == 1.0 {
                        v += TIE_STAGGER * (spikes - j) as f64;
                    }
                    lambdas.push(v);
                }
                // Square-summable tail `s (1-gap_fraction) / i^2`, scaled so the
                // complement trace stays below balance * lambda_1.
                let tail_len = dim - spikes;
                let raw_sum: f64 = (1..=tail_len).map(|i| 1.0 / (i as f64 * i as f64)).sum();
                let cap = balance * lambdas[0] / ((1.0 - gap_fraction) * raw_sum);
                let scale = cap.min(1.0);
                for i in 1..=tail_len {
                    lambdas.push(scale * (1.0 - gap_fraction) / (i as f64 * i as f64));
                }
                SpectralModel::new(lambdas)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EigenProfile::ExpDecay { .. } => "exp-decay",
            EigenProfile::PolyDecay { .. } => "poly-decay",
            EigenProfile::Spiked { .. } => "spiked",
            EigenProfile::Pervasive { .. } => "pervasive",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            EigenProfile::ExpDecay { dim, .. }
            | EigenProfile::PolyDecay { dim, .. }
            | EigenProfile::Spiked { dim, .. }
            | EigenProfile::Pervasive { dim, .. } => dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::IndexBlock;

    #[test]
    fn exp_decay_values() {
        let m = EigenProfile::ExpDecay { rate: 1.0, dim: 3 }
            .build()
            .unwrap();
        for (j, l) in m.lambdas().iter().enumerate() {
            assert!((l - (-(j as f64 + 1.0)).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn poly_decay_values() {
        let m = EigenProfile::PolyDecay { rate: 2.0, dim: 4 }
            .build()
            .unwrap();
        let expect = [1.0, 0.25, 1.0 / 9.0, 0.0625];
        for (a, b) in m.lambdas().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn spiked_profile_shape() {
        let m = EigenProfile::Spiked {
            spikes: 1,
            gap: 0.5,
            spread: 1.0,
            dim: 6,
        }
        .build()
        .unwrap();
        assert!((m.lambda(0) - 1.5).abs() < 1e-12);
        for k in 1..6 {
            assert!((m.lambda(k) - 1.0).abs() < 1e-8);
        }
        // block quantities unchanged to nine digits by the stagger
        let g = crate::spectral::spectral_gap(&m, IndexBlock::leading(1).unwrap()).unwrap();
        assert!((g - 0.5).abs() < 1e-8);

        let multi = EigenProfile::Spiked {
            spikes: 3,
            gap: 0.5,
            spread: 2.0,
            dim: 12,
        }
        .build()
        .unwrap();
        assert!((multi.lambda(0) - 2.0).abs() < 1e-12);
        assert!((multi.lambda(2) - 1.5).abs() < 1e-12);
        assert!(multi.lambda(3) < 1.0 + 1e-6);
    }

    #[test]
    fn spiked_rejects_bad_parameters() {
        assert!(EigenProfile::Spiked {
            spikes: 4,
            gap: 0.5,
            spread: 1.0,
            dim: 6
        }
        .build()
        .is_err());
        assert!(EigenProfile::Spiked {
            spikes: 1,
            gap: 1.5,
            spread: 1.0,
            dim: 8
        }
        .build()
        .is_err());
    }

    #[test]
    fn pervasive_constraints_hold() {
        for spikes in [2usize, 4, 8] {
            for dim in [50usize, 100] {
                let p = EigenProfile::Pervasive {
                    spikes,
                    gap_fraction: 0.5,
                    balance: 2.0,
                    dim,
                };
                let m = p.build().unwrap();
                let j = spikes;
                let block = IndexBlock::leading(j).unwrap();
                let tr_comp = m.subset_trace(block.complement0(dim));
                assert!(m.lambda(0) <= 2.0 * m.lambda(j - 1) + 1e-12);
                assert!(m.lambda(j - 1) - m.lambda(j) >= 0.5 * m.lambda(j - 1) - 1e-12);
                assert!(tr_comp / m.lambda(0) <= 2.0 + 1e-12);
            }
        }
    }
}
