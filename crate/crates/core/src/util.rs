//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Matrix infinity norm: maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Vector infinity norm.
pub fn inf_norm_vec(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// max(v) - min(v); the disagreement of a state vector.
pub fn spread(v: &DVector<f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v.iter() {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    hi - lo
}

/// `n` evenly spaced points covering `[a, b]`, endpoints included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "linspace needs at least two points");
    let step = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
        .collect()
}

/// Least-squares line fit through `(x, y)` pairs.
///
/// Returns `(slope, intercept, r_squared)`. Used for checking the
/// exponential decay of disagreement: fit `log(spread)` against time and
/// inspect slope and fit quality.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    assert!(n >= 2.0, "need at least two points to fit a line");
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    (slope, intercept, r2)
}

/// Fit `log(y)` against `x` for the strictly positive prefix of `y`,
/// returning `(slope, r_squared)`. Points where `y` has already decayed
/// below `floor` are excluded so the fit covers the converging segment
/// rather than the numerical noise floor.
pub fn log_decay_fit(xs: &[f64], ys: &[f64], floor: f64) -> (f64, f64) {
    let mut fx = Vec::new();
    let mut fy = Vec::new();
    for (&x, &y) in xs.iter().zip(ys) {
        if y > floor {
            fx.push(x);
            fy.push(y.ln());
        }
    }
    let (slope, _, r2) = line_fit(&fx, &fy);
    (slope, r2)
}
