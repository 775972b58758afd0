//! Scaled complementary error function and binomial tails.

use std::f64::consts::PI;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// erfcx(x) = e^{x²}·erfc(x), without overflow for large positive x.
///
/// Uses the power series of e^{x²}·erf(x) below 2 and a continued fraction
/// (modified Lentz) above. Negative arguments go through the reflection
/// erfcx(−x) = 2e^{x²} − erfcx(x), which overflows to +∞ below about −26.6.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 2.0 {
        erfcx_series(x)
    } else {
        erfcx_continued_fraction(x)
    }
}

// e^{x²} − (2/√π) Σ 2ⁿ x^{2n+1} / (2n+1)!!
fn erfcx_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    x2.exp() - FRAC_2_SQRT_PI * sum
}

// erfcx(x) = (1/√π) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
fn erfcx_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for j in 1..5000 {
        let a = j as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / (PI.sqrt() * f)
}

/// Upper binomial tail P[X ≥ n] for X ~ Binomial(m, t), which equals the
/// regularized incomplete beta I_t(n, m − n + 1).
///
/// Terms are summed from k = m downwards. Small m uses exact binomial
/// coefficients, larger m works in log space.
pub fn binomial_tail(t: f64, m: u32, n: u32) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if n > m || t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let q = 1.0 - t;
    let sum = if m <= 60 {
        let mut coef = 1.0f64; // C(m, m)
        let mut sum = 0.0;
        let mut k = m;
        loop {
            sum += coef * t.powi(k as i32) * q.powi((m - k) as i32);
            if k == n {
                break;
            }
            // C(m, k−1) = C(m, k)·k / (m − k + 1)
            coef = (coef * k as f64 / (m - k + 1) as f64).round();
            k -= 1;
        }
        sum
    } else {
        let (lt, lq) = (t.ln(), (-t).ln_1p());
        let mut log_coef = 0.0;
        let mut logs = Vec::with_capacity((m - n + 1) as usize);
        let mut k = m;
        loop {
            logs.push(log_coef + k as f64 * lt + (m - k) as f64 * lq);
            if k == n {
                break;
            }
            log_coef += (k as f64 / (m - k + 1) as f64).ln();
            k -= 1;
        }
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top.exp() * logs.iter().map(|l| (l - top).exp()).sum::<f64>()
    };
    sum.clamp(0.0, 1.0)
}
