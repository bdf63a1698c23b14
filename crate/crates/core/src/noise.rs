//! Discrete two-sided Wiener paths on a uniform grid.
//!
//! Increments are generated by a counter-based generator keyed on the
//! absolute grid index, so a path can be queried at any (possibly negative)
//! index in any order and the θ-shift is an exact index offset.
//!
//! The Gaussian transform is pinned as follows. For a path with seed `s` and
//! noise dimension `m`, the scalar stream index of component `j` at grid
//! index `k` is `i = (k + offset)·m + j`. With `G = 0x9E3779B97F4A7C15` and
//! `key = splitmix64(s ^ 0x6A09E667F3BCC909 ^ m·G)` (wrapping `u64`
//! arithmetic), the uniform at index `i` is
//!
//! ```text
//! u = ((splitmix64(key + i·G) >> 11) + 0.5) · 2^-53      (in (0, 1))
//! ```
//!
//! and the standard normal is `z = Φ⁻¹(u)` computed with Wichura's AS241
//! (PPND16) rational approximation, relative accuracy about 1e−16. The
//! increment is `z · sqrt(dt)`, evaluated in the path's scalar type.

use crate::error::{Error, Result};
use crate::scalar::{count, lit, to_f64, Real};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const KEY_SALT: u64 = 0x6A09_E667_F3BC_C909;

/// SplitMix64 output function (a bijection on `u64`).
#[inline(always)]
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Value of the SplitMix64 stream with state `key` at position `counter`.
#[inline(always)]
pub fn counter_u64(key: u64, counter: u64) -> u64 {
    splitmix64(key.wrapping_add(counter.wrapping_mul(GOLDEN)))
}

/// Uniform in the open interval (0, 1) from a 64-bit word.
#[inline(always)]
pub fn open_unit(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Sequential view over a counter-based stream, for deterministic sampling
/// outside of noise paths (sample boxes, bootstrap indices).
#[derive(Clone, Debug)]
pub struct CounterStream {
    key: u64,
    counter: u64,
}

impl CounterStream {
    pub fn new(seed: u64, salt: u64) -> Self {
        Self {
            key: splitmix64(seed ^ splitmix64(salt.wrapping_add(KEY_SALT))),
            counter: 0,
        }
    }

    /// Positions the stream at an absolute counter.
    pub fn at(mut self, counter: u64) -> Self {
        self.counter = counter;
        self
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        counter_u64(self.key, self.counter)
    }

    /// Uniform in (0, 1).
    pub fn next_f64(&mut self) -> f64 {
        open_unit(self.next_u64())
    }

    /// Uniform index in `0..n` (Lemire's multiply-shift; bias below 2^-40 for
    /// the sizes used here).
    pub fn next_index(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

/// Uniform time grid with a period made of a whole number of steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec<T> {
    period: T,
    steps_per_period: usize,
    dt: T,
}

impl<T: Real> GridSpec<T> {
    /// Grid whose period `period` is split into `steps_per_period` steps.
    pub fn from_period(period: T, steps_per_period: usize) -> Result<Self> {
        if !(period > T::zero()) || !period.is_finite() {
            return Err(Error::InvalidSpec(format!("period must be positive, got {period}")));
        }
        if steps_per_period == 0 {
            return Err(Error::InvalidSpec("steps_per_period must be at least 1".into()));
        }
        Ok(Self {
            period,
            steps_per_period,
            dt: period / count(steps_per_period),
        })
    }

    /// Grid with the step closest to `dt` that divides the period exactly.
    pub fn with_approx_dt(period: T, dt: T) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidSpec(format!("dt must be positive, got {dt}")));
        }
        let n = (period / dt).round().to_usize().unwrap_or(0).max(1);
        Self::from_period(period, n)
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn period(&self) -> T {
        self.period
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps_per_period
    }

    /// Period length in grid steps as a signed index offset.
    pub fn period_steps(&self) -> i64 {
        self.steps_per_period as i64
    }

    /// Absolute time of grid node `k`.
    pub fn time(&self, k: i64) -> T {
        T::from_i64(k).expect("grid index representable") * self.dt
    }

    /// Time of node `k` reduced to `[0, τ)` through its integer phase, so
    /// that `phase_time(k + Nτ) == phase_time(k)` bit-exactly.
    pub fn phase_time(&self, k: i64) -> T {
        count::<T>(k.rem_euclid(self.period_steps()) as usize) * self.dt
    }

    /// Grid index of time `t`; errors when `t` is not on the grid.
    pub fn index_of(&self, t: T) -> Result<i64> {
        let q = t / self.dt;
        let k = q.round();
        let tol = lit::<T>(64.0) * T::epsilon() * k.abs().max(T::one());
        if !q.is_finite() || (q - k).abs() > tol {
            return Err(Error::Alignment {
                time: to_f64(t),
                dt: to_f64(self.dt),
            });
        }
        Ok(k.to_i64().expect("grid index in range"))
    }
}

/// A realization of an `m`-dimensional two-sided Wiener path on a grid.
///
/// Immutable; shifting produces a new value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisePath<T> {
    seed: u64,
    dim: usize,
    grid: GridSpec<T>,
    offset: i64,
    key: u64,
    sqrt_dt: T,
}

impl<T: Real> NoisePath<T> {
    pub fn new(seed: u64, dim: usize, grid: GridSpec<T>) -> Self {
        assert!(dim >= 1, "noise dimension must be positive");
        Self {
            seed,
            dim,
            grid,
            offset: 0,
            key: splitmix64(seed ^ KEY_SALT ^ (dim as u64).wrapping_mul(GOLDEN)),
            sqrt_dt: grid.dt().sqrt(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    /// The path θ_{steps·dt} ω.
    pub fn shift(&self, steps: i64) -> Self {
        Self {
            offset: self.offset + steps,
            ..*self
        }
    }

    /// Standard normal at scalar stream index `i`.
    #[inline(always)]
    fn standard_normal(&self, i: i64) -> f64 {
        inverse_normal_cdf(open_unit(counter_u64(self.key, i as u64)))
    }

    /// W((k+1)dt) − W(k dt).
    pub fn increment(&self, k: i64) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.fill_increments(k, 1, &mut out);
        out
    }

    /// Writes increments for grid indices `k_start..k_start+steps` into `out`
    /// (row-major, `steps × dim`).
    pub fn fill_increments(&self, k_start: i64, steps: usize, out: &mut [T]) {
        let total = steps * self.dim;
        debug_assert!(out.len() >= total);
        let first = (k_start + self.offset) * self.dim as i64;
        for (n, slot) in out.iter_mut().take(total).enumerate() {
            *slot = lit::<T>(self.standard_normal(first + n as i64)) * self.sqrt_dt;
        }
    }

    /// ω(k dt): cumulative sum of increments from index 0 (negated reverse
    /// sum for negative `k`).
    pub fn evaluate(&self, k: i64) -> Vec<T> {
        let mut acc = vec![T::zero(); self.dim];
        let mut inc = vec![T::zero(); self.dim];
        if k >= 0 {
            for i in 0..k {
                self.fill_increments(i, 1, &mut inc);
                acc.iter_mut().zip(&inc).for_each(|(a, &d)| *a = *a + d);
            }
        } else {
            for i in (k..0).rev() {
                self.fill_increments(i, 1, &mut inc);
                acc.iter_mut().zip(&inc).for_each(|(a, &d)| *a = *a + d);
            }
            acc.iter_mut().for_each(|a| *a = -*a);
        }
        acc
    }

    /// Normalized increment component as a plain standard normal, for
    /// distributional checks.
    pub fn standard_normal_at(&self, k: i64, component: usize) -> f64 {
        self.standard_normal((k + self.offset) * self.dim as i64 + component as i64)
    }
}

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0, 1)` (Wichura, AS241).
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        133.141_667_891_784_377_45,
        1_971.590_950_306_551_442_7,
        13_731.693_765_509_461_125,
        45_921.953_931_549_871_457,
        67_265.770_927_008_700_853,
        33_430.575_583_588_128_105,
        2_509.080_928_730_122_672_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_911_252,
        687.187_007_492_057_908_3,
        5_394.196_021_424_751_107_7,
        21_213.794_301_586_595_867,
        39_307.895_800_092_710_61,
        28_729.085_735_721_942_674,
        5_226.495_278_852_545_925,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        0.241_780_725_177_450_611_77,
        0.022_723_844_989_269_184_583_3,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        0.689_767_334_985_100_004_55,
        0.148_103_976_427_480_074_59,
        0.015_198_666_563_616_457_196_6,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        0.296_560_571_828_504_891_23,
        0.026_532_189_526_576_123_093,
        0.001_242_660_947_388_078_438_6,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_937_69,
        0.136_929_880_922_735_805_31,
        0.014_875_361_290_850_614_852_5,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let z = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// Seed of replica `index` derived from `master` (injective in `index`).
pub fn replica_seed(master: u64, index: usize) -> u64 {
    splitmix64(master.wrapping_add(GOLDEN.wrapping_mul(index as u64 + 1)))
}

/// Noise path of replica `index` of the ensemble rooted at `master`.
pub fn replica_path<T: Real>(master: u64, index: usize, dim: usize, grid: GridSpec<T>) -> NoisePath<T> {
    NoisePath::new(replica_seed(master, index), dim, grid)
}

/// `n` independent replicas rooted at `seed`.
pub fn ensemble<T: Real>(seed: u64, n: usize, dim: usize, grid: GridSpec<T>) -> Result<Vec<NoisePath<T>>> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    Ok((0..n).map(|i| replica_path(seed, i, dim, grid)).collect())
}
