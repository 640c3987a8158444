//! Karhunen-Loeve coefficient laws: centered, unit-variance coordinate
//! distributions whose moment structure drives every closed-form limit
//! quantity.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

/// Coefficient law for one data draw. All variants are centered with unit
/// variance per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum KlLaw {
    /// Independent standard normals.
    Gaussian,
    /// Independent standardized Student-t coordinates, `nu > 2`.
    Student { nu: f64 },
    /// `eta_j = epsilon_j * v` with independent signs and one shared
    /// two-point magnitude per draw; `alpha = E v^4` lies in `[1, 2)`.
    /// The cross-moment `E eta_j^2 eta_k^2 = alpha` differs from one, which
    /// makes the limit-spectrum oracle discriminating.
    RademacherProduct { alpha: f64 },
    /// Independent signs, `eta_j = +-1`.
    TwoPoint,
}

impl KlLaw {
    /// Student law with enough moments for Assumption-1-style control at
    /// moment order `p`: the default heavy-tailed choice `nu = 4p + 1`.
    pub fn student_for_moment(p: f64) -> Self {
        KlLaw::Student { nu: 4.0 * p + 1.0 }
    }

    pub fn validate(&self) -> crate::Result<()> {
        match self {
            KlLaw::Student { nu } if !(*nu > 2.0) => Err(crate::Error::invalid(
                "student law needs nu > 2 for unit variance",
            )),
            KlLaw::RademacherProduct { alpha } if !(1.0..2.0).contains(alpha) => Err(
                crate::Error::invalid("rademacher-product law needs alpha in [1, 2)"),
            ),
            _ => Ok(()),
        }
    }

    /// Cross moment `E eta_j^2 eta_k^2` for `j != k`.
    pub fn alpha_cross(&self) -> f64 {
        match self {
            KlLaw::RademacherProduct { alpha } => *alpha,
            _ => 1.0,
        }
    }

    /// `E (eta^2 - 1)^2`, when the fourth moment exists.
    pub fn centered_square_variance(&self) -> Option<f64> {
        match self {
            KlLaw::Gaussian => Some(2.0),
            KlLaw::Student { nu } => {
                if *nu > 4.0 {
                    // standardized t: E eta^4 = 3 (nu-2)/(nu-4)
                    Some(3.0 * (nu - 2.0) / (nu - 4.0) - 1.0)
                } else {
                    None
                }
            }
            KlLaw::RademacherProduct { alpha } => Some(alpha - 1.0),
            KlLaw::TwoPoint => Some(0.0),
        }
    }

    /// Lower bound `c_eta` on the cross moments (nondegeneracy flag).
    pub fn satisfies_a2(&self) -> bool {
        self.alpha_cross() > 0.0
    }

    /// m-th order cumulant uncorrelatedness with the moments it needs.
    /// Independent or sign-randomized coordinates satisfy the vanishing
    /// condition for every order; the binding constraint is moment existence.
    pub fn satisfies_a3(&self, m: u32) -> bool {
        match self {
            KlLaw::Gaussian | KlLaw::TwoPoint | KlLaw::RademacherProduct { .. } => true,
            KlLaw::Student { nu } => *nu > m as f64,
        }
    }

    /// Largest moment order `2p` with `sup_j E |eta_j|^{2p}` finite,
    /// `None` meaning all moments exist.
    pub fn max_moment_exponent(&self) -> Option<f64> {
        match self {
            KlLaw::Student { nu } => Some(*nu),
            _ => None,
        }
    }

    /// Fill `out` with one vector of coefficients.
    pub fn sample_into(&self, rng: &mut impl Rng, out: &mut [f64]) {
        match self {
            KlLaw::Gaussian => {
                for slot in out.iter_mut() {
                    *slot = rng.sample(StandardNormal);
                }
            }
            KlLaw::Student { nu } => {
                let t = StudentT::new(*nu).expect("validated nu");
                let scale = ((nu - 2.0) / nu).sqrt();
                for slot in out.iter_mut() {
                    *slot = scale * t.sample(rng);
                }
            }
            KlLaw::RademacherProduct { alpha } => {
                let t = (alpha - 1.0).sqrt();
                let v = if rng.random::<bool>() {
                    (1.0 + t).sqrt()
                } else {
                    (1.0 - t).sqrt()
                };
                for slot in out.iter_mut() {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    *slot = sign * v;
                }
            }
            KlLaw::TwoPoint => {
                for slot in out.iter_mut() {
                    *slot = if rng.random::<bool>() { 1.0 } else { -1.0 };
                }
            }
        }
    }

    pub fn parse(name: &str, nu: Option<f64>, alpha: Option<f64>) -> crate::Result<Self> {
        let law = match name {
            "gaussian" => KlLaw::Gaussian,
            "student" => KlLaw::Student {
                nu: nu.unwrap_or(25.0),
            },
            "rademacher-product" => KlLaw::RademacherProduct {
                alpha: alpha.unwrap_or(1.5),
            },
            "two-point" => KlLaw::TwoPoint,
            other => {
                return Err(crate::Error::invalid(format!(
                    "unknown coefficient law `{other}`"
                )))
            }
        };
        law.validate()?;
        Ok(law)
    }
}

impl std::fmt::Display for KlLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KlLaw::Gaussian => write!(f, "gaussian"),
            KlLaw::Student { nu } => write!(f, "student(nu={nu})"),
            KlLaw::RademacherProduct { alpha } => write!(f, "rademacher-product(alpha={alpha})"),
            KlLaw::TwoPoint => write!(f, "two-point"),
        }
    }
}
