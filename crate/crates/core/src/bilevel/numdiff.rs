//! Noise-aware Richardson extrapolation of difference quotients.

/// Extrapolate vector-valued quotients `q(t_k)` to `t -> 0`.
///
/// Builds the Neville tableau under the model `q(t) = q0 + c1 t + c2 t² + …`
/// and returns the diagonal entry whose change from its predecessor is
/// smallest, which guards against the noise floor that dominates the
/// smallest grid points when the quotients come from iteratively solved
/// systems. The second return value is that change (an error estimate).
pub fn extrapolate_quotients(ts: &[f64], qs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    assert_eq!(ts.len(), qs.len());
    assert!(!qs.is_empty());
    let dim = qs[0].len();
    let n = ts.len();
    // tableau[i] holds column entries; diagonal after k sweeps is the
    // degree-k extrapolation of the first k+1 points
    let mut tableau: Vec<Vec<f64>> = qs.to_vec();
    let mut diagonals: Vec<Vec<f64>> = vec![tableau[0].clone()];
    for k in 1..n {
        for i in (k..n).rev() {
            let ti = ts[i];
            let tik = ts[i - k];
            let denom = tik - ti;
            for j in 0..dim {
                let v = tableau[i][j] + (tableau[i][j] - tableau[i - 1][j]) * ti / denom;
                tableau[i][j] = v;
            }
        }
        diagonals.push(tableau[k].clone());
    }
    let mut best = diagonals[0].clone();
    let mut best_err = f64::INFINITY;
    for w in diagonals.windows(2) {
        let change = w[0]
            .iter()
            .zip(&w[1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if change < best_err {
            best_err = change;
            best = w[1].clone();
        }
    }
    (best, best_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extrapolates_linear_error_terms() {
        // q(t) = 3 + 2t + 5t^2
        let ts: Vec<f64> = (4..=12).map(|k| 2f64.powi(-k)).collect();
        let qs: Vec<Vec<f64>> = ts.iter().map(|t| vec![3.0 + 2.0 * t + 5.0 * t * t]).collect();
        let (v, err) = extrapolate_quotients(&ts, &qs);
        assert!((v[0] - 3.0).abs() < 1e-10, "{v:?} err {err}");
    }

    #[test]
    fn tolerates_noise_floor() {
        // exact value 1 with noise ~ 1e-11/t on the small grid points
        let ts: Vec<f64> = (4..=16).map(|k| 2f64.powi(-k)).collect();
        let qs: Vec<Vec<f64>> = ts
            .iter()
            .enumerate()
            .map(|(i, t)| vec![1.0 + 0.5 * t + if i % 2 == 0 { 1e-11 / t } else { -1e-11 / t }])
            .collect();
        let (v, _) = extrapolate_quotients(&ts, &qs);
        assert!((v[0] - 1.0).abs() < 1e-6, "{v:?}");
    }
}
