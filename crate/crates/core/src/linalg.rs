//! Small dense helpers. Matrices are row-major slices.

use crate::scalar::Real;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// `out = mat · v` for a `rows × cols` matrix.
pub fn mat_vec<T: Real>(mat: &[T], rows: usize, cols: usize, v: &[T], out: &mut [T]) {
    for i in 0..rows {
        out[i] = dot(&mat[i * cols..(i + 1) * cols], &v[..cols]);
    }
}

/// Inverse of an `n × n` matrix by Gauss–Jordan elimination with partial
/// pivoting. `None` when a pivot vanishes.
pub fn invert<T: Real>(mat: &[T], n: usize) -> Option<Vec<T>> {
    let mut a = mat.to_vec();
    let mut inv = vec![T::zero(); n * n];
    for i in 0..n {
        inv[i * n + i] = T::one();
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| {
            a[r * n + col]
                .abs()
                .partial_cmp(&a[s * n + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot * n + col] == T::zero() || !a[pivot * n + col].is_finite() {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(pivot * n + j, col * n + j);
                inv.swap(pivot * n + j, col * n + j);
            }
        }
        let p = a[col * n + col];
        for j in 0..n {
            a[col * n + j] = a[col * n + j] / p;
            inv[col * n + j] = inv[col * n + j] / p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r * n + col];
                if f != T::zero() {
                    for j in 0..n {
                        a[r * n + j] = a[r * n + j] - f * a[col * n + j];
                        inv[r * n + j] = inv[r * n + j] - f * inv[col * n + j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Right inverse `σᵀ(σσᵀ)⁻¹` (`m × d`) of a full-row-rank `d × m` matrix.
pub fn right_inverse<T: Real>(sigma: &[T], d: usize, m: usize) -> Option<Vec<T>> {
    let mut gram = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..d {
            gram[i * d + j] = dot(&sigma[i * m..(i + 1) * m], &sigma[j * m..(j + 1) * m]);
        }
    }
    let g_inv = invert(&gram, d)?;
    let mut out = vec![T::zero(); m * d];
    for k in 0..m {
        for j in 0..d {
            let mut acc = T::zero();
            for i in 0..d {
                acc = acc + sigma[i * m + k] * g_inv[i * d + j];
            }
            out[k * d + j] = acc;
        }
    }
    Some(out)
}
