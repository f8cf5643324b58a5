//! Elementary functions that work with and without `std`.

macro_rules! unary {
    ($($name:ident),*) => {
        $(
            #[inline]
            pub fn $name(x: f64) -> f64 {
                #[cfg(feature = "std")]
                {
                    x.$name()
                }
                #[cfg(not(feature = "std"))]
                {
                    libm::$name(x)
                }
            }
        )*
    };
}

unary!(sin, cos, exp, sqrt);

/// Hyperbolic tangent through `exp`, switching to `expm1` near zero to keep
/// relative accuracy. Cheaper than the libm routine.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a > 20.0 {
        return if x > 0.0 { 1.0 } else { -1.0 };
    }
    if a < 0.25 {
        #[cfg(feature = "std")]
        let e = (2.0 * x).exp_m1();
        #[cfg(not(feature = "std"))]
        let e = libm::expm1(2.0 * x);
        return e / (e + 2.0);
    }
    1.0 - 2.0 / (exp(2.0 * x) + 1.0)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        y.atan2(x)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::atan2(y, x)
    }
}

#[inline]
pub fn powf(x: f64, p: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powf(p)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::pow(x, p)
    }
}

#[inline]
pub fn ln(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.ln()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::log(x)
    }
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powi(n)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::pow(x, n as f64)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

pub const PI: f64 = core::f64::consts::PI;
