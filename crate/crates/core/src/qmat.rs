//! Small dense matrices over ℚ.

use crate::error::{invalid, Error, Result};
use crate::scalar::{to_f64, Rational};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};

pub type QMatrix = Vec<Vec<Rational>>;

fn check_square(m: &QMatrix) -> Result<usize> {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return invalid("matrix is not square");
    }
    Ok(n)
}

/// Determinant by Bareiss elimination on the row-scaled integer matrix.
pub fn det_bareiss(m: &QMatrix) -> Result<Rational> {
    let n = check_square(m)?;
    if n == 0 {
        return Ok(Rational::one());
    }
    let mut scale = BigInt::one();
    let mut a: Vec<Vec<BigInt>> = Vec::with_capacity(n);
    for row in m {
        let l = row.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
        scale *= &l;
        a.push(row.iter().map(|x| x.numer() * (&l / x.denom())).collect());
    }
    let mut sign = 1;
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if a[k][k].is_zero() {
            match (k + 1..n).find(|&i| !a[i][k].is_zero()) {
                Some(i) => {
                    a.swap(i, k);
                    sign = -sign;
                }
                None => return Ok(Rational::zero()),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = &a[i][j] * &a[k][k] - &a[i][k] * &a[k][j];
                a[i][j] = v / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    Ok(Rational::new(a[n - 1][n - 1].clone() * sign, scale))
}

/// Determinant by cofactor expansion along the first row.
pub fn det_cofactor(m: &QMatrix) -> Result<Rational> {
    let n = check_square(m)?;
    if n > 10 {
        return invalid("cofactor expansion limited to order 10");
    }
    Ok(cofactor_rec(m))
}

fn cofactor_rec(m: &QMatrix) -> Rational {
    let n = m.len();
    match n {
        0 => Rational::one(),
        1 => m[0][0].clone(),
        _ => {
            let mut acc = Rational::zero();
            for c in 0..n {
                if m[0][c].is_zero() {
                    continue;
                }
                let minor: QMatrix = m[1..]
                    .iter()
                    .map(|r| r.iter().enumerate().filter(|(k, _)| *k != c).map(|(_, x)| x.clone()).collect())
                    .collect();
                let term = &m[0][c] * cofactor_rec(&minor);
                if c % 2 == 0 {
                    acc += term;
                } else {
                    acc -= term;
                }
            }
            acc
        }
    }
}

pub fn transpose(m: &QMatrix) -> QMatrix {
    let n = m.len();
    let k = m.first().map_or(0, |r| r.len());
    (0..k).map(|j| (0..n).map(|i| m[i][j].clone()).collect()).collect()
}

pub fn mat_vec(m: &QMatrix, v: &[Rational]) -> Vec<Rational> {
    m.iter()
        .map(|row| row.iter().zip(v).fold(Rational::zero(), |acc, (a, b)| acc + a * b))
        .collect()
}

pub fn dot(a: &[Rational], b: &[Rational]) -> Rational {
    a.iter().zip(b).fold(Rational::zero(), |acc, (x, y)| acc + x * y)
}

/// Solves `m x = b` by Gauss–Jordan elimination.
pub fn solve(m: &QMatrix, b: &[Rational]) -> Result<Vec<Rational>> {
    let n = check_square(m)?;
    if b.len() != n {
        return invalid("right-hand side length mismatch");
    }
    let mut a: QMatrix = m.iter().zip(b).map(|(r, x)| {
        let mut row = r.clone();
        row.push(x.clone());
        row
    }).collect();
    for k in 0..n {
        let p = (k..n)
            .find(|&i| !a[i][k].is_zero())
            .ok_or_else(|| Error::VanishingDenominator("singular matrix".into()))?;
        a.swap(p, k);
        let piv = a[k][k].clone();
        for x in a[k].iter_mut() {
            *x /= &piv;
        }
        for i in 0..n {
            if i != k && !a[i][k].is_zero() {
                let f = a[i][k].clone();
                for j in k..=n {
                    let v = &f * &a[k][j];
                    a[i][j] -= v;
                }
            }
        }
    }
    Ok(a.into_iter().map(|mut r| r.pop().unwrap()).collect())
}

pub fn inverse(m: &QMatrix) -> Result<QMatrix> {
    let n = check_square(m)?;
    let cols: Vec<Vec<Rational>> = (0..n)
        .map(|j| {
            let e: Vec<Rational> = (0..n).map(|i| if i == j { Rational::one() } else { Rational::zero() }).collect();
            solve(m, &e)
        })
        .collect::<Result<_>>()?;
    Ok(transpose(&cols))
}

pub fn to_f64_matrix(m: &QMatrix) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(to_f64).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{int, rat};
    use proptest::prelude::*;

    #[test]
    fn small_determinants() {
        let m = vec![vec![rat(1, 2), int(3)], vec![int(2), rat(-1, 3)]];
        assert_eq!(det_bareiss(&m).unwrap(), rat(-1, 6) - int(6));
        assert_eq!(det_cofactor(&m).unwrap(), rat(-37, 6));
        let sing = vec![vec![int(1), int(2)], vec![int(2), int(4)]];
        assert!(det_bareiss(&sing).unwrap().is_zero());
        assert!(solve(&sing, &[int(1), int(1)]).is_err());
    }

    proptest! {
        #[test]
        fn determinant_paths_agree(entries in prop::collection::vec((-9i64..10, 1i64..6), 16)) {
            let m: QMatrix = entries.chunks(4).map(|r| r.iter().map(|&(n, d)| rat(n, d)).collect()).collect();
            prop_assert_eq!(det_bareiss(&m).unwrap(), det_cofactor(&m).unwrap());
            let d = det_bareiss(&m).unwrap();
            if !d.is_zero() {
                let b: Vec<Rational> = (0..4).map(|i| int(i + 1)).collect();
                let x = solve(&m, &b).unwrap();
                prop_assert_eq!(mat_vec(&m, &x), b);
            }
        }
    }
}
