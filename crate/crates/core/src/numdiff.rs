//! Central finite differences used where a closed form is not registered
//! (weight-function log-gradients, the log-det gradient of Eq.-style
//! determinant fields). Step sizes follow the usual truncation/roundoff
//! balance: eps^(1/3) per coordinate scale for first derivatives,
//! eps^(1/4) for second derivatives.

/// eps^(1/3) relative step for first derivatives.
pub fn grad_step(x: f64) -> f64 {
    f64::EPSILON.powf(1.0 / 3.0) * x.abs().max(1.0)
}

/// eps^(1/4) relative step for second derivatives.
pub fn hess_step(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * x.abs().max(1.0)
}

/// Central-difference gradient with per-coordinate steps.
pub fn central_grad<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = step(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Hessian (symmetrized).
pub fn central_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let f0 = f(x);
    let h: Vec<f64> = x.iter().map(|&v| hess_step(v)).collect();
    let mut out = vec![vec![0.0; n]; n];
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        out[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}
