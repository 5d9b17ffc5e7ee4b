use crate::{Error, Real, Result};

// Lanczos approximation with r = 10.900511 (Pugh, 2004); about 16 digits.
const LANCZOS_R: f64 = 10.900511;
const LANCZOS_DK: [f64; 11] = [
    2.485_740_891_387_535_5e-5,
    1.051_423_785_817_219_7,
    -3.456_870_972_220_162_5,
    4.512_277_094_668_948,
    -2.982_852_253_235_766_4,
    1.056_397_115_771_267,
    -1.954_287_731_916_458_7e-1,
    1.709_705_434_044_412e-2,
    -5.719_261_174_043_057e-4,
    4.633_994_733_599_057e-6,
    -2.719_949_084_886_077_2e-9,
];
const LN_2_SQRT_E_OVER_PI: f64 = 0.620_782_237_635_245_2;

/// Below this the digamma/trigamma recurrences shift the argument upward
/// before the asymptotic series is applied.
const ASYMPTOTIC_FROM: f64 = 10.0;

/// NaN-propagating variants used inside the differentiation tape, where a
/// domain escape must flow through the graph instead of raising.
pub mod raw {
    use super::*;

    pub fn lgamma<T: Real>(x: T) -> T {
        if !(x > T::zero()) {
            return T::nan();
        }
        if x.is_infinite() {
            return x;
        }
        if x < T::lit(0.5) {
            // Recurrence keeps the Lanczos sum in its accurate region.
            return lanczos_ln_gamma(x + T::one()) - x.ln();
        }
        lanczos_ln_gamma(x)
    }

    pub fn digamma<T: Real>(x: T) -> T {
        if !(x > T::zero()) {
            return T::nan();
        }
        let mut x = x;
        let mut acc = T::zero();
        let from = T::lit(ASYMPTOTIC_FROM);
        while x < from {
            acc = acc - x.recip();
            x = x + T::one();
        }
        let inv = x.recip();
        let inv2 = inv * inv;
        // ln x - 1/(2x) - sum B_2k / (2k x^2k)
        let series = inv2
            * (T::lit(1.0 / 12.0)
                - inv2
                    * (T::lit(1.0 / 120.0)
                        - inv2
                            * (T::lit(1.0 / 252.0)
                                - inv2
                                    * (T::lit(1.0 / 240.0)
                                        - inv2
                                            * (T::lit(1.0 / 132.0)
                                                - inv2
                                                    * (T::lit(691.0 / 32760.0)
                                                        - inv2 * T::lit(1.0 / 12.0)))))));
        acc + x.ln() - T::lit(0.5) * inv - series
    }

    pub fn trigamma<T: Real>(x: T) -> T {
        if !(x > T::zero()) {
            return T::nan();
        }
        let mut x = x;
        let mut acc = T::zero();
        let from = T::lit(ASYMPTOTIC_FROM);
        while x < from {
            acc = acc + (x * x).recip();
            x = x + T::one();
        }
        let inv = x.recip();
        let inv2 = inv * inv;
        // 1/x + 1/(2x^2) + sum B_2k / x^(2k+1)
        let series = inv
            * inv2
            * (T::lit(1.0 / 6.0)
                - inv2
                    * (T::lit(1.0 / 30.0)
                        - inv2
                            * (T::lit(1.0 / 42.0)
                                - inv2
                                    * (T::lit(1.0 / 30.0)
                                        - inv2
                                            * (T::lit(5.0 / 66.0)
                                                - inv2
                                                    * (T::lit(691.0 / 2730.0)
                                                        - inv2 * T::lit(7.0 / 6.0)))))));
        acc + inv + T::lit(0.5) * inv2 + series
    }
}

fn lanczos_ln_gamma<T: Real>(x: T) -> T {
    let mut sum = T::lit(LANCZOS_DK[0]);
    for (k, &d) in LANCZOS_DK.iter().enumerate().skip(1) {
        sum = sum + T::lit(d) / (x + T::lit(k as f64 - 1.0));
    }
    let half = T::lit(0.5);
    sum.ln() + T::lit(LN_2_SQRT_E_OVER_PI) + (x - half) * ((x - half + T::lit(LANCZOS_R)).ln() - T::one())
}

fn check_positive<T: Real>(func: &'static str, x: T) -> Result<()> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            func,
            value: x.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn lgamma<T: Real>(x: T) -> Result<T> {
    check_positive("lgamma", x)?;
    Ok(raw::lgamma(x))
}

/// Digamma `Ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma<T: Real>(x: T) -> Result<T> {
    check_positive("digamma", x)?;
    Ok(raw::digamma(x))
}

/// Trigamma `Ψ'(x)` for `x > 0`.
pub fn trigamma<T: Real>(x: T) -> Result<T> {
    check_positive("trigamma", x)?;
    Ok(raw::trigamma(x))
}

/// Log of the multivariate Beta function, `Σ ln Γ(η_k) − ln Γ(Σ η_k)`.
pub fn log_mv_beta<T: Real>(eta: &[T]) -> Result<T> {
    if eta.is_empty() {
        return Err(Error::Domain {
            func: "log_mv_beta",
            value: f64::NAN,
        });
    }
    let mut acc = T::zero();
    let mut total = T::zero();
    for &e in eta {
        acc = acc + lgamma(e)?;
        total = total + e;
    }
    Ok(acc - lgamma(total)?)
}
