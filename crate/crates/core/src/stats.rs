//! Small statistics helpers: moments, standard errors, least squares.

use crate::scalar::{count, Real};

/// A Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub se: T,
}

impl<T: Real> Estimate<T> {
    pub fn new(value: T, se: T) -> Self {
        Self { value, se }
    }

    pub fn exact(value: T) -> Self {
        Self { value, se: T::zero() }
    }

    /// `|self − other|` and `sqrt(se₁² + se₂²)`.
    pub fn compare(&self, other: &Self) -> (T, T) {
        ((self.value - other.value).abs(), self.se.hypot(other.se))
    }
}

pub fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / count(xs.len())
}

/// Unbiased sample variance (0 for fewer than two samples).
pub fn variance<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / count(xs.len() - 1)
}

/// Sample mean with standard error `s/√n`.
pub fn mean_estimate<T: Real>(xs: &[T]) -> Estimate<T> {
    Estimate::new(mean(xs), (variance(xs) / count(xs.len())).sqrt())
}

/// Sample variance with the normal-theory standard error `s²·√(2/(n−1))`.
pub fn variance_estimate<T: Real>(xs: &[T]) -> Estimate<T> {
    let v = variance(xs);
    let n = xs.len().max(2);
    Estimate::new(v, v * (T::from_f64(2.0).unwrap() / count(n - 1)).sqrt())
}

/// Fraction with binomial standard error.
pub fn proportion<T: Real>(hits: usize, n: usize) -> Estimate<T> {
    let p = count::<T>(hits) / count(n);
    Estimate::new(p, (p * (T::one() - p) / count(n)).sqrt())
}

/// Mean of a correlated series with batch-means standard error
/// (`⌊√n⌋` batches, at least 2).
pub fn batch_means<T: Real>(xs: &[T]) -> Estimate<T> {
    let n = xs.len();
    let batches = ((n as f64).sqrt().floor() as usize).max(2).min(n.max(1));
    let size = n / batches;
    if size == 0 {
        return mean_estimate(xs);
    }
    let means: Vec<T> = (0..batches).map(|b| mean(&xs[b * size..(b + 1) * size])).collect();
    Estimate::new(mean(xs), (variance(&means) / count(batches)).sqrt())
}

/// Linear-interpolation quantile of sorted data (`q ∈ [0, 1]`).
pub fn quantile_sorted<T: Real>(sorted: &[T], q: T) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * count(n - 1);
    let lo = h.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - count(lo)) * (sorted[hi] - sorted[lo])
}

/// Ordinary or weighted least-squares line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit<T> {
    pub slope: T,
    pub intercept: T,
    /// Standard error of the slope: residual-based for unweighted fits
    /// (NaN with fewer than three points), weight-based for weighted fits.
    pub slope_se: T,
}

pub fn fit_line<T: Real>(xs: &[T], ys: &[T]) -> Option<LineFit<T>> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    if sxx == T::zero() {
        return None;
    }
    let sxy: T = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let rss: T = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        (rss / count(n - 2) / sxx).sqrt()
    } else {
        T::nan()
    };
    Some(LineFit { slope, intercept, slope_se })
}

/// Weighted least squares with weights `1/σ_i²`; the slope error is
/// `sqrt(1 / Σ w (x − x̄_w)²)`.
pub fn fit_line_weighted<T: Real>(xs: &[T], ys: &[T], sigmas: &[T]) -> Option<LineFit<T>> {
    let n = xs.len();
    if n < 2 || ys.len() != n || sigmas.len() != n {
        return None;
    }
    let ws: Vec<T> = sigmas.iter().map(|&s| T::one() / (s * s)).collect();
    let sw: T = ws.iter().copied().sum();
    if !sw.is_finite() || sw == T::zero() {
        return None;
    }
    let mx = xs.iter().zip(&ws).map(|(&x, &w)| w * x).sum::<T>() / sw;
    let my = ys.iter().zip(&ws).map(|(&y, &w)| w * y).sum::<T>() / sw;
    let sxx: T = xs.iter().zip(&ws).map(|(&x, &w)| w * (x - mx) * (x - mx)).sum();
    if sxx == T::zero() {
        return None;
    }
    let sxy: T = xs.iter().zip(ys).zip(&ws).map(|((&x, &y), &w)| w * (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        slope_se: (T::one() / sxx).sqrt(),
    })
}
