//! Thin wrappers over `libm` so the crate stays `no_std`.

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn acos(x: f64) -> f64 {
    libm::acos(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn ldexp(x: f64, e: i32) -> f64 {
    libm::ldexp(x, e)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Reduces `x` into `[0, period)`.
#[inline]
pub fn wrap(x: f64, period: f64) -> f64 {
    let r = x - period * floor(x / period);
    // floor can leave r == period for tiny negative x
    if r >= period {
        0.0
    } else {
        r
    }
}
