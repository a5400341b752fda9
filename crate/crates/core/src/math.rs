//! Scalar math routed through `std` or `libm` depending on features.
//!
//! Everything numeric in this crate calls these wrappers instead of the
//! `f64` inherent methods so that `--no-default-features --features libm`
//! builds on targets without a float runtime.

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("mindspell-core needs either the `std` or the `libm` feature");

macro_rules! unary {
    ($name:ident) => {
        #[inline(always)]
        pub fn $name(x: f64) -> f64 {
            #[cfg(feature = "std")]
            {
                x.$name()
            }
            #[cfg(all(not(feature = "std"), feature = "libm"))]
            {
                libm::$name(x)
            }
        }
    };
}

unary!(exp);
unary!(sqrt);
unary!(tanh);
unary!(sin);
unary!(cos);
unary!(tan);

#[inline(always)]
pub fn ln(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.ln()
    }
    #[cfg(all(not(feature = "std"), feature = "libm"))]
    {
        libm::log(x)
    }
}

#[inline(always)]
pub fn powf(x: f64, y: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powf(y)
    }
    #[cfg(all(not(feature = "std"), feature = "libm"))]
    {
        libm::pow(x, y)
    }
}

#[inline(always)]
pub fn abs(x: f64) -> f64 {
    // `f64::abs` is not in `core`; sign-bit masking avoids a libm call.
    f64::from_bits(x.to_bits() & (u64::MAX >> 1))
}

#[inline(always)]
pub fn sigmoid(x: f64) -> f64 {
    // Saturates cleanly: exp overflow gives +inf and the quotient collapses
    // to 0 without producing a NaN.
    1.0 / (1.0 + exp(-x))
}
