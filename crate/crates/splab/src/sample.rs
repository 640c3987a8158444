//! Data generation in the model eigenbasis, empirical covariances and
//! projectors, and draws from the limit law.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::law::KlLaw;
use crate::operator::{eigh, projector, IndexBlock, SymOperator};
use crate::spectral::{LimitSpectrum, SpectralModel};
use crate::{parallel, rng};

/// How a dataset came to be; sampled data records its seed and a hash of the
/// eigenvalues used, so downstream reports can audit provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetOrigin {
    Sampled { seed: u64, lambda_hash: u64 },
    Imported,
}

/// `n x d` observations, rows in the model eigenbasis.
#[derive(Debug, Clone)]
pub struct Dataset {
    rows: DMatrix<f64>,
    origin: DatasetOrigin,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn origin(&self) -> DatasetOrigin {
        self.origin
    }

    pub fn from_rows(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::invalid("dataset must be nonempty"));
        }
        Ok(Self {
            rows,
            origin: DatasetOrigin::Imported,
        })
    }

    /// Rows with permuted order; pairs with permuted multiplier vectors in
    /// the exchangeability tests.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n() {
            return Err(Error::invalid("permutation length mismatch"));
        }
        let mut rows = DMatrix::zeros(self.n(), self.dim());
        for (dst, &src) in perm.iter().enumerate() {
            rows.set_row(dst, &self.rows.row(src));
        }
        Ok(Self {
            rows,
            origin: DatasetOrigin::Imported,
        })
    }
}

/// Hash of the eigenvalue bits, recorded in sampled datasets for audit.
pub fn lambda_hash(model: &SpectralModel) -> u64 {
    let mut acc = 0xcbf2_9ce4_8422_2325u64;
    for l in model.lambdas() {
        acc = rng::mix(acc, &[l.to_bits()]);
    }
    acc
}

/// Draw `n` independent rows `X_i = sum_j sqrt(lambda_j) eta_{ij} e_j`.
/// Row `i` comes from the substream `(seed, DATA, i)`, so datasets regenerate
/// bit-identically and rows may be produced concurrently.
pub fn sample_dataset(model: &SpectralModel, law: &KlLaw, n: usize, seed: u64) -> Dataset {
    let d = model.dim();
    let sqrt_l: Vec<f64> = model.lambdas().iter().map(|l| l.sqrt()).collect();
    let rows_vec = parallel::map_indexed(n, |i| {
        let mut rng = rng::substream(seed, rng::role::DATA, i as u64);
        let mut eta = vec![0.0; d];
        law.sample_into(&mut rng, &mut eta);
        for (x, s) in eta.iter_mut().zip(&sqrt_l) {
            *x *= s;
        }
        eta
    });
    let mut rows = DMatrix::zeros(n, d);
    for (i, r) in rows_vec.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            rows[(i, j)] = *v;
        }
    }
    Dataset {
        rows,
        origin: DatasetOrigin::Sampled {
            seed,
            lambda_hash: lambda_hash(model),
        },
    }
}

/// Uncentered empirical covariance `n^{-1} sum_i X_i X_i^T`; the population
/// mean is zero by construction, so no centering is applied.
pub fn empirical_covariance(data: &Dataset) -> SymOperator {
    let n = data.n() as f64;
    let gram = data.rows().tr_mul(data.rows()) / n;
    SymOperator::symmetrized(&gram).expect("gram matrix is square and finite")
}

/// Empirical projector of a block together with the empirical covariance and
/// the perturbation relative to the population model.
#[derive(Debug, Clone)]
pub struct EmpiricalProjector {
    pub projector: SymOperator,
    pub covariance: SymOperator,
    pub perturbation: SymOperator,
}

pub fn empirical_projector(
    data: &Dataset,
    model: &SpectralModel,
    block: IndexBlock,
) -> Result<EmpiricalProjector> {
    block.validate(model.dim())?;
    if data.dim() != model.dim() {
        return Err(Error::DimMismatch(data.dim(), model.dim()));
    }
    let covariance = empirical_covariance(data);
    let es = eigh(&covariance);
    let p = projector(&es, block)?;
    let perturbation = covariance.sub(&model.covariance())?;
    Ok(EmpiricalProjector {
        projector: p,
        covariance,
        perturbation,
    })
}

/// Draws of the limit statistic: each draw is `sum_pairs value * g^2` with
/// independent standard normal `g`, one substream per draw.
pub fn sample_limit_stat(spectrum: &LimitSpectrum, draws: usize, seed: u64) -> Result<Vec<f64>> {
    if spectrum.is_empty() {
        return Err(Error::invalid("empty limit spectrum"));
    }
    let values: Vec<f64> = spectrum.values().collect();
    Ok(parallel::map_indexed(draws, |i| {
        let mut rng = rng::substream(seed, rng::role::LIMIT, i as u64);
        values
            .iter()
            .map(|v| {
                let g: f64 = rand::Rng::sample(&mut rng, StandardNormal);
                v * g * g
            })
            .sum()
    }))
}

/// Write a dataset as CSV with header `x1,...,xd`, one observation per row.
pub fn write_dataset_csv(data: &Dataset, mut out: impl Write) -> Result<()> {
    let header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.n() {
        let row: Vec<String> = (0..data.dim())
            .map(|j| format!("{}", data.rows()[(i, j)]))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv(input: impl BufRead) -> Result<Dataset> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::invalid("empty CSV"))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let d = cols.len();
    for (j, c) in cols.iter().enumerate() {
        if *c != format!("x{}", j + 1) {
            return Err(Error::invalid(format!(
                "unexpected CSV header column `{c}`"
            )));
        }
    }
    let mut values: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != d {
            return Err(Error::invalid(format!(
                "row {} has {} fields, expected {d}",
                n + 1,
                fields.len()
            )));
        }
        for f in fields {
            values.push(
                f.parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad float `{f}`: {e}")))?,
            );
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("CSV contains no data rows"));
    }
    Dataset::from_rows(DMatrix::from_row_slice(n, d, &values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EigenProfile;
    use crate::spectral::{limit_spectrum, Truncation};

    fn model2() -> SpectralModel {
        SpectralModel::new(vec![2.0, 1.0]).unwrap()
    }

    #[test]
    fn two_point_rows_have_unit_entries() {
        let m = SpectralModel::new(vec![1.0]).unwrap();
        let data = sample_dataset(&m, &KlLaw::TwoPoint, 64, 3);
        for i in 0..64 {
            let v = data.rows()[(i, 0)];
            assert!(v == 1.0 || v == -1.0);
        }
    }

    #[test]
    fn column_moments_match_model() {
        let m = model2();
        let n = 100_000;
        let data = sample_dataset(&m, &KlLaw::Gaussian, n, 17);
        for j in 0..2 {
            let col = data.rows().column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let lam = m.lambda(j);
            // mean has SE sqrt(lambda/n); variance has SE lambda sqrt(2/n)
            assert!(mean.abs() <= 4.0 * (lam / n as f64).sqrt(), "mean {mean}");
            assert!(
                (var - lam).abs() <= 4.0 * lam * (2.0 / n as f64).sqrt(),
                "var {var} vs {lam}"
            );
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = model2();
        let a = sample_dataset(&m, &KlLaw::Gaussian, 50, 99);
        let b = sample_dataset(&m, &KlLaw::Gaussian, 50, 99);
        assert_eq!(a.rows(), b.rows());
        assert_eq!(a.origin(), b.origin());
    }

    #[test]
    fn empirical_covariance_small_cases() {
        let x = Dataset::from_rows(DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).unwrap();
        let c = empirical_covariance(&x);
        assert_eq!(c.entry(0, 0), 9.0);
        assert_eq!(c.entry(0, 1), 12.0);
        assert_eq!(c.entry(1, 1), 16.0);

        let e12 = Dataset::from_rows(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let c2 = empirical_covariance(&e12);
        assert!((c2.matrix() - SymOperator::from_diagonal(&[0.5, 0.5]).matrix()).amax() < 1e-15);
    }

    #[test]
    fn empirical_covariance_concentrates() {
        let m = model2();
        let data = sample_dataset(&m, &KlLaw::Gaussian, 100_000, 5);
        let c = empirical_covariance(&data);
        let err = c.sub(&m.covariance()).unwrap().frobenius();
        assert!(err <= 0.1, "err {err}");
    }

    /// Two rows `sqrt(2 l_i) v_i` have empirical covariance exactly
    /// `l_0 v_0 v_0^T + l_1 v_1 v_1^T`.
    fn dataset_with_covariance(cov: &SymOperator) -> Dataset {
        let es = eigh(cov);
        let d = cov.dim();
        let mut rows = DMatrix::zeros(d, d);
        for i in 0..d {
            let scale = (d as f64 * es.eigenvalues()[i]).sqrt();
            for j in 0..d {
                rows[(i, j)] = scale * es.eigenvectors()[(j, i)];
            }
        }
        Dataset::from_rows(rows).unwrap()
    }

    #[test]
    fn empirical_projector_two_by_two_closed_form() {
        // With covariance [[2, t],[t, 1]] the top eigenvector is
        // (cos h, sin h), tan(2h) = 2t / (2 - 1), so the projector distance
        // is sqrt(2) sin h, about sqrt(2) t / gap to first order.
        let t = 0.01f64;
        let m = model2();
        let cov = SymOperator::new(nalgebra::dmatrix![2.0, t; t, 1.0]).unwrap();
        let data = dataset_with_covariance(&cov);
        let emp = empirical_projector(&data, &m, IndexBlock::leading(1).unwrap()).unwrap();
        assert!((emp.covariance.matrix() - cov.matrix()).amax() < 1e-10);

        let h = 0.5 * (2.0 * t).atan();
        let u = [h.cos(), h.sin()];
        let expect = SymOperator::from_fn(2, |i, j| u[i] * u[j]).unwrap();
        assert!((emp.projector.matrix() - expect.matrix()).amax() < 1e-10);

        let dist = crate::operator::hs_distance_sq(
            &emp.projector,
            &SymOperator::from_diagonal(&[1.0, 0.0]),
        )
        .unwrap()
        .sqrt();
        let first_order = 2.0f64.sqrt() * h.sin();
        assert!((dist - first_order).abs() < 1e-10, "dist {dist}");
        assert!(dist < 1.5 * 2.0f64.sqrt() * t);
    }

    #[test]
    fn exact_covariance_gives_population_projector() {
        let m = model2();
        let data = dataset_with_covariance(&m.covariance());
        let c = empirical_covariance(&data);
        assert!((c.matrix() - m.covariance().matrix()).amax() < 1e-12);
        let emp = empirical_projector(&data, &m, IndexBlock::leading(1).unwrap()).unwrap();
        assert!(
            (emp.projector.matrix() - SymOperator::from_diagonal(&[1.0, 0.0]).matrix()).amax()
                < 1e-12
        );
        assert!(emp.perturbation.max_abs_entry() < 1e-12);
    }

    #[test]
    fn covariance_concentrates_relative_to_trace() {
        // moderate dimension: HS error stays below 5% of the trace at n = 1e5
        let m = EigenProfile::ExpDecay { rate: 1.0, dim: 20 }
            .build()
            .unwrap();
        let data = sample_dataset(&m, &KlLaw::Gaussian, 100_000, 13);
        let c = empirical_covariance(&data);
        let err = c.sub(&m.covariance()).unwrap().frobenius();
        assert!(
            err / m.trace() <= 0.05,
            "relative error {}",
            err / m.trace()
        );
    }

    #[test]
    fn limit_stat_single_pair_is_scaled_chi_square() {
        let m = model2();
        let sp = limit_spectrum(
            &m,
            IndexBlock::leading(1).unwrap(),
            &KlLaw::Gaussian,
            Truncation::Full,
        )
        .unwrap();
        let draws = sample_limit_stat(&sp, 100_000, 21).unwrap();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        // 4 chi^2_1: mean 4 (SE sqrt(32/n)), variance 32 (SE ~ 32 sqrt(2+6)/sqrt(n))
        assert!(
            (mean - 4.0).abs() <= 3.0 * (32.0f64 / n).sqrt(),
            "mean {mean}"
        );
        assert!(
            (var - 32.0).abs() <= 3.0 * 32.0 * (8.0f64 / n).sqrt(),
            "var {var}"
        );
    }

    #[test]
    fn limit_stat_matches_chi_square_generator() {
        // Two-sample KS between the spectrum-driven draws and 4 * g^2 draws.
        let m = model2();
        let sp = limit_spectrum(
            &m,
            IndexBlock::leading(1).unwrap(),
            &KlLaw::Gaussian,
            Truncation::Full,
        )
        .unwrap();
        let a = sample_limit_stat(&sp, 40_000, 31).unwrap();
        let b: Vec<f64> = (0..40_000)
            .map(|i| {
                let mut rng = rng::substream(32, rng::role::LIMIT, i as u64);
                let g: f64 = rand::Rng::sample(&mut rng, StandardNormal);
                4.0 * g * g
            })
            .collect();
        let ks = crate::metrics::ks_two_sample(&a, &b).unwrap();
        let floor = crate::metrics::ks_noise_floor(a.len(), Some(b.len()));
        assert!(ks <= 3.0 * floor, "ks {ks} floor {floor}");
    }

    #[test]
    fn empty_truncation_spectrum_rejected() {
        let m = SpectralModel::new(vec![2.0, 1.0, 0.5]).unwrap();
        let sp = limit_spectrum(
            &m,
            IndexBlock::leading(1).unwrap(),
            &KlLaw::Gaussian,
            Truncation::UpTo(1),
        )
        .unwrap();
        assert!(sp.is_empty());
        assert!(sample_limit_stat(&sp, 10, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = EigenProfile::ExpDecay { rate: 1.0, dim: 3 }
            .build()
            .unwrap();
        let data = sample_dataset(&m, &KlLaw::Gaussian, 20, 77);
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let back = read_dataset_csv(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(back.rows(), data.rows());
        assert_eq!(back.origin(), DatasetOrigin::Imported);
    }

    #[test]
    fn csv_rejects_malformed() {
        let bad_header = "y1,y2\n1,2\n";
        assert!(read_dataset_csv(std::io::BufReader::new(bad_header.as_bytes())).is_err());
        let ragged = "x1,x2\n1,2\n3\n";
        assert!(read_dataset_csv(std::io::BufReader::new(ragged.as_bytes())).is_err());
    }
}
