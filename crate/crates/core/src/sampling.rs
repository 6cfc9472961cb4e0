//! Deterministic seeded direction and point samplers.
//!
//! Sphere directions come from a Kronecker low-discrepancy sequence (the
//! generalized plastic-constant alphas) pushed through the inverse normal
//! CDF and normalized; identical (dim, count, seed) always produce identical
//! samples, which keeps reports byte-reproducible.

/// Unit directions on the (n-1)-sphere.
pub fn unit_sphere(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(n > 0);
    if n == 1 {
        // only two directions exist; alternate deterministically
        return (0..count).map(|k| vec![if k % 2 == 0 { 1.0 } else { -1.0 }]).collect();
    }
    let alphas = kronecker_alphas(n);
    let offset = (seed as f64 * 0.618_033_988_749_894_9).fract();
    let mut out = Vec::with_capacity(count);
    let mut k = 0u64;
    while out.len() < count {
        k += 1;
        let mut v: Vec<f64> = (0..n)
            .map(|j| {
                let u = (0.5 + offset + (k as f64) * alphas[j]).fract();
                inverse_normal_cdf(u.clamp(1e-12, 1.0 - 1e-12))
            })
            .collect();
        let norm = crate::linalg::norm2(&v);
        if norm < 1e-9 {
            continue;
        }
        for x in &mut v {
            *x /= norm;
        }
        out.push(v);
    }
    out
}

/// Points in the closed ball of the given radius around `center`.
pub fn ball(center: &[f64], radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = center.len();
    let dirs = unit_sphere(n, count, seed);
    let offset = (seed as f64 * 0.324_717_957_244_746_03).fract();
    dirs.into_iter()
        .enumerate()
        .map(|(k, dir)| {
            let u = (0.5 + offset + (k as f64 + 1.0) * 0.618_033_988_749_894_9).fract();
            let r = radius * u.powf(1.0 / n as f64);
            crate::linalg::axpy(center, r, &dir)
        })
        .collect()
}

fn kronecker_alphas(n: usize) -> Vec<f64> {
    // unique positive root of x^(n+1) = x + 1
    let mut phi = 1.5f64;
    for _ in 0..64 {
        phi = (phi + 1.0).powf(1.0 / (n as f64 + 1.0));
    }
    (1..=n).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect()
}

/// Acklam's rational approximation of the standard normal quantile;
/// absolute error below 1.2e-9, ample for direction generation.
fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inverse_normal_cdf(1.0 - p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_samples_are_unit_and_reproducible() {
        let a = unit_sphere(3, 64, 7);
        let b = unit_sphere(3, 64, 7);
        assert_eq!(a, b);
        for v in &a {
            assert!((crate::linalg::norm2(v) - 1.0).abs() < 1e-12);
        }
        let c = unit_sphere(3, 64, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn sphere_covers_orthants_reasonably() {
        let dirs = unit_sphere(2, 256, 1);
        let mut quadrants = [0usize; 4];
        for d in &dirs {
            let q = (d[0] >= 0.0) as usize * 2 + (d[1] >= 0.0) as usize;
            quadrants[q] += 1;
        }
        for q in quadrants {
            assert!(q > 20, "quadrant counts {quadrants:?}");
        }
    }

    #[test]
    fn ball_samples_stay_in_ball() {
        let center = [1.0, -2.0];
        for p in ball(&center, 0.3, 100, 3) {
            let d = crate::linalg::norm2(&crate::linalg::sub(&p, &center));
            assert!(d <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn one_dimensional_directions() {
        let dirs = unit_sphere(1, 4, 0);
        assert_eq!(dirs, vec![vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]]);
    }
}
