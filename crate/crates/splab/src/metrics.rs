//! Empirical distances between laws on the line: the uniform (Kolmogorov)
//! distance between two samples or against the standard normal, and the
//! 1-Wasserstein distance via exact quantile coupling.

use crate::error::{Error, Result};

fn check_sample(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("sample contains non-finite values"));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s
}

/// Exact sup distance between the empirical CDFs of two samples, evaluated
/// over the merged jump points.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sample(a)?;
    check_sample(b)?;
    let sa = sorted(a);
    let sb = sorted(b);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut sup = 0.0f64;
    while ia < sa.len() || ib < sb.len() {
        let x = match (sa.get(ia), sb.get(ib)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while ia < sa.len() && sa[ia] <= x {
            ia += 1;
        }
        while ib < sb.len() && sb[ib] <= x {
            ib += 1;
        }
        sup = sup.max((ia as f64 / na - ib as f64 / nb).abs());
    }
    Ok(sup)
}

/// Complementary error function, Cody's rational Chebyshev approximation
/// (SPECFUN `calerf`), relative error around 1e-16 in double precision.
/// Coefficients kept verbatim from the published tables.
#[allow(clippy::excessive_precision)]
fn erfc_cody(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    const SQRPI: f64 = 5.6418958354775628695e-1;

    let y = x.abs();
    let result = if y <= 0.46875 {
        let z = if y > 1e-300 { y * y } else { 0.0 };
        let mut xnum = A[4] * z;
        let mut xden = z;
        for i in 0..3 {
            xnum = (xnum + A[i]) * z;
            xden = (xden + B[i]) * z;
        }
        return 1.0 - x * (xnum + A[3]) / (xden + B[3]);
    } else if y <= 4.0 {
        let mut xnum = C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + C[i]) * y;
            xden = (xden + D[i]) * y;
        }
        let r = (xnum + C[7]) / (xden + D[7]);
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else if y < 26.6 {
        let z = 1.0 / (y * y);
        let mut xnum = P[5] * z;
        let mut xden = z;
        for i in 0..4 {
            xnum = (xnum + P[i]) * z;
            xden = (xden + Q[i]) * z;
        }
        let mut r = z * (xnum + P[4]) / (xden + Q[4]);
        r = (SQRPI - r) / y;
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Standard normal CDF through the Cody complementary error function;
/// absolute error well under
/// 1e-12, pinned against 50-digit reference values in the tests.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc_cody(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Sup distance between the empirical CDF of a sample and the standard
/// normal, checking both one-sided limits at every jump.
pub fn ks_vs_normal(a: &[f64]) -> Result<f64> {
    check_sample(a)?;
    let sa = sorted(a);
    let n = sa.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in sa.iter().enumerate() {
        let phi = normal_cdf(x);
        sup = sup.max(((i + 1) as f64 / n - phi).abs());
        sup = sup.max((i as f64 / n - phi).abs());
    }
    Ok(sup)
}

/// Exact 1-Wasserstein distance between two empirical measures: the sorted
/// coupling for equal sizes, otherwise the piecewise-constant quantile
/// integral `int |F_a^{-1}(u) - F_b^{-1}(u)| du`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sample(a)?;
    check_sample(b)?;
    let sa = sorted(a);
    let sb = sorted(b);
    if sa.len() == sb.len() {
        let n = sa.len() as f64;
        return Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n);
    }
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut pos = 0.0f64;
    let mut total = 0.0f64;
    while ia < sa.len() && ib < sb.len() {
        let next_a = (ia + 1) as f64 / na;
        let next_b = (ib + 1) as f64 / nb;
        let next = next_a.min(next_b);
        total += (sa[ia] - sb[ib]).abs() * (next - pos);
        if next_a <= next {
            ia += 1;
        }
        if next_b <= next {
            ib += 1;
        }
        pos = next;
    }
    Ok(total)
}

/// The `ceil(beta * m)`-th order statistic: the smallest value whose
/// empirical CDF reaches `beta`.
pub fn empirical_quantile(a: &[f64], beta: f64) -> Result<f64> {
    check_sample(a)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid("quantile level must lie in (0, 1)"));
    }
    let sa = sorted(a);
    let m = sa.len();
    let k = (beta * m as f64).ceil() as usize;
    Ok(sa[k.clamp(1, m) - 1])
}

/// Two-sample DKW-scale resolution floor `1.36 sqrt(1/m_a + 1/m_b)`; pass
/// `None` for a comparison against an analytic CDF.
pub fn ks_noise_floor(m_a: usize, m_b: Option<usize>) -> f64 {
    let inv = 1.0 / m_a as f64 + m_b.map_or(0.0, |m| 1.0 / m as f64);
    1.36 * inv.sqrt()
}
