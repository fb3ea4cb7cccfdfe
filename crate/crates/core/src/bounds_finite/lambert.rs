use std::f64::consts::{E, LN_2};

use crate::error::{Error, Result};

const BRANCH_POINT: f64 = -1.0 / E;

/// Principal branch `W₀` of the Lambert W function, `W(x)·e^{W(x)} = x`,
/// by Halley iteration.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if !x.is_finite() && x != f64::INFINITY {
        return Err(Error::Domain(format!("lambert_w0 is undefined at {x}")));
    }
    if x < BRANCH_POINT {
        // the rounded value of -1/e is itself a valid input
        if x < BRANCH_POINT - 4.0 * f64::EPSILON {
            return Err(Error::Domain(format!("lambert_w0 needs x >= -1/e, got {x}")));
        }
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut w = initial_guess(x);
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

fn initial_guess(x: f64) -> f64 {
    let near_branch = 1.0 + E * x;
    if near_branch < 0.3 {
        let p = (2.0 * near_branch).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < E {
        x.ln_1p() * (1.0 - x.ln_1p().ln_1p() / (2.0 + x.ln_1p()))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

/// Fano-type lower bound on the error of any estimator of `U^(k)` from
/// `(W, Z̃^(k))`: `1 − (cmi + log 2)/(n log k)`. Vacuous values are returned
/// unclamped.
pub fn fano_lower_bound(cmi: f64, n: usize, k: usize) -> Result<f64> {
    if !(cmi >= 0.0) {
        return Err(Error::Domain(format!("information must be nonnegative, got {cmi}")));
    }
    if k < 2 || n == 0 {
        return Err(Error::Domain(format!("need k >= 2 and n >= 1, got k = {k}, n = {n}")));
    }
    Ok(1.0 - (cmi + LN_2) / (n as f64 * (k as f64).ln()))
}

/// `(k³ + 7k² − 8k − 16) / (4(k³ − 2k²))`, the second-moment constant of the
/// width-`k` supersample loss difference. Needs `k > 2`.
pub fn improved_constant_coefficient(k: usize) -> Result<f64> {
    if k <= 2 {
        return Err(Error::Domain(format!("improved constant needs k > 2, got {k}")));
    }
    let k = k as f64;
    Ok((k.powi(3) + 7.0 * k * k - 8.0 * k - 16.0) / (4.0 * (k.powi(3) - 2.0 * k * k)))
}

/// `e^x − x − 1` without cancellation near zero.
fn exp_remainder(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let mut term = x * x / 2.0;
        let mut sum = 0.0;
        for j in 3..12 {
            sum += term;
            term *= x / j as f64;
        }
        sum
    } else {
        x.exp_m1() - x
    }
}

/// `(x − 1)e^x + 1 = Σ_{j≥2} (j−1) x^j / j!`, the derivative numerator of
/// `(e^x − x − 1)/x`.
fn derivative_numerator(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let mut fact_term = x; // x^j / j! at j = 1
        let mut sum = 0.0;
        for j in 2..40 {
            fact_term *= x / j as f64;
            let add = (j - 1) as f64 * fact_term;
            sum += add;
            if add.abs() <= f64::EPSILON * sum.abs() {
                break;
            }
        }
        sum
    } else {
        x * x.exp() - x.exp_m1()
    }
}

fn objective_with(c: f64, cmi: f64, n: usize, lambda: f64) -> f64 {
    let x = lambda / n as f64;
    cmi / lambda + c * exp_remainder(x) / x
}

/// `cmi/λ + c_k·(e^{λ/n} − λ/n − 1)/(λ/n)` at a given `λ > 0`.
pub fn improved_constant_objective(cmi: f64, n: usize, k: usize, lambda: f64) -> Result<f64> {
    let c = improved_constant_coefficient(k)?;
    check_inputs(cmi, n)?;
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    Ok(objective_with(c, cmi, n, lambda))
}

fn check_inputs(cmi: f64, n: usize) -> Result<()> {
    if !(cmi >= 0.0) || !cmi.is_finite() {
        return Err(Error::Domain(format!("information must be finite and nonnegative, got {cmi}")));
    }
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    Ok(())
}

/// Stationary point `x = λ*/n` of the objective: the root of
/// `(x − 1)e^x + 1 = cmi/(n c)`, i.e. `x = W₀((cmi/(nc) − 1)/e) + 1`.
fn optimal_ratio(c: f64, cmi: f64, n: usize) -> Result<f64> {
    let r = cmi / (n as f64 * c);
    // close to the branch point the Lambert form loses half the digits, so
    // polish the root of the shifted equation directly
    let mut x = if r < 1e-2 {
        let p = (2.0 * r).sqrt();
        p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        lambert_w0((r - 1.0) / E)? + 1.0
    };
    for _ in 0..32 {
        let ex = x.exp();
        let g = derivative_numerator(x) - r;
        let g1 = x * ex;
        let g2 = (x + 1.0) * ex;
        if g1 == 0.0 {
            break;
        }
        let step = g / (g1 - g * g2 / (2.0 * g1));
        x -= step;
        if step.abs() <= 4.0 * f64::EPSILON * x.abs() {
            break;
        }
    }
    Ok(x)
}

fn bound_with(c: f64, cmi: f64, n: usize) -> Result<f64> {
    check_inputs(cmi, n)?;
    if cmi == 0.0 {
        return Ok(0.0);
    }
    let x = optimal_ratio(c, cmi, n)?;
    Ok(objective_with(c, cmi, n, n as f64 * x))
}

/// The objective minimized in closed form over `λ ≥ 0` via the Lambert W
/// function. Returns 0 when `cmi = 0` (the limit of both terms).
pub fn improved_constant_bound(cmi: f64, n: usize, k: usize) -> Result<f64> {
    bound_with(improved_constant_coefficient(k)?, cmi, n)
}

/// The `k → ∞` form of [`improved_constant_bound`], where the coefficient
/// tends to `1/4`.
pub fn improved_constant_bound_limit(cmi: f64, n: usize) -> Result<f64> {
    bound_with(0.25, cmi, n)
}
