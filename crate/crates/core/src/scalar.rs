//! Exact scalars.
//!
//! `Rational` is an arbitrary-precision fraction kept in lowest terms with a
//! positive denominator; `GaussianRational` is an element of ℚ[i].

use num_bigint::BigInt;
use num_complex::Complex;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;
pub type GaussianRational = Complex<Rational>;

/// `n / d` as an exact rational. Panics on `d == 0`.
pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn real(r: Rational) -> GaussianRational {
    Complex::new(r, Rational::zero())
}

pub fn imag(r: Rational) -> GaussianRational {
    Complex::new(Rational::zero(), r)
}

pub fn gzero() -> GaussianRational {
    Complex::new(Rational::zero(), Rational::zero())
}

pub fn gone() -> GaussianRational {
    Complex::new(Rational::one(), Rational::zero())
}

pub fn is_gzero(z: &GaussianRational) -> bool {
    z.re.is_zero() && z.im.is_zero()
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Very large numerators or denominators: scale via bit lengths.
        let n = r.numer();
        let d = r.denom();
        let shift = (n.bits() as i64 - d.bits() as i64).clamp(-1000, 1000);
        let (n2, d2) = if shift > 0 {
            (n.clone(), d.clone() << (shift as usize))
        } else {
            (n.clone() << ((-shift) as usize), d.clone())
        };
        let q = Rational::new(n2, d2).to_f64().unwrap_or(f64::NAN);
        q * 2f64.powi(shift as i32)
    })
}

pub fn gauss_to_c64(z: &GaussianRational) -> Complex<f64> {
    Complex::new(to_f64(&z.re), to_f64(&z.im))
}

/// Exact conversion of a finite `f64` into a rational.
pub fn from_f64(x: f64) -> Option<Rational> {
    Rational::from_float(x)
}

pub fn abs(r: &Rational) -> Rational {
    r.abs()
}

/// `p/q` text form with a bare integer when the denominator is one.
pub fn fmt_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `p/q` or `p`.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                None
            } else {
                Some(Rational::new(n, d))
            }
        }
        None => Some(Rational::from_integer(s.parse().ok()?)),
    }
}
