//! Square 2D FFT plans and frequency bookkeeping for an `n x n` periodic grid.
//!
//! Spectral arrays are stored row-major with the `k2` index outer and the `k1`
//! index inner, matching the physical layout (`x2` outer, `x1` inner). Index
//! `i` maps to the signed frequency returned by [`freq`]; the Nyquist index
//! `n/2` maps to `+n/2`.
//!
//! Forward transforms are normalized by `1/n^2` so that a coefficient is the
//! continuum Fourier coefficient of the trigonometric interpolant.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub type C64 = Complex64;

/// Signed integer frequency stored at index `i` of a length-`n` transform.
#[inline]
pub fn freq(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Index holding the frequency `-freq(i)`.
#[inline]
pub fn conj_index(i: usize, n: usize) -> usize {
    if i == 0 {
        0
    } else {
        n - i
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>> =
        RefCell::new(HashMap::new());
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANS.with(|cell| {
        cell.borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
            })
            .clone()
    })
}

/// Reusable 2D transform workspace for one grid size.
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let (fwd, inv) = plans(n);
        let len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Fft2 {
            n,
            fwd,
            inv,
            scratch: vec![C64::new(0.0, 0.0); len],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unnormalized forward transform of every row (along `x1`).
    pub fn rows_forward(&mut self, data: &mut [C64]) {
        self.fwd.process_with_scratch(data, &mut self.scratch);
    }

    /// Unnormalized inverse transform of every row (along `x1`).
    pub fn rows_inverse(&mut self, data: &mut [C64]) {
        self.inv.process_with_scratch(data, &mut self.scratch);
    }

    /// Physical -> spectral, normalized by `1/n^2`.
    pub fn forward(&mut self, data: &mut [C64]) {
        let n = self.n;
        self.rows_forward(data);
        transpose(data, n);
        self.rows_forward(data);
        transpose(data, n);
        let scale = 1.0 / (n * n) as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    /// Spectral -> physical.
    pub fn inverse(&mut self, data: &mut [C64]) {
        let n = self.n;
        self.rows_inverse(data);
        transpose(data, n);
        self.rows_inverse(data);
        transpose(data, n);
    }
}

/// In-place transpose of a square row-major array.
pub fn transpose(data: &mut [C64], n: usize) {
    const BLOCK: usize = 32;
    for bi in (0..n).step_by(BLOCK) {
        for bj in (bi..n).step_by(BLOCK) {
            for i in bi..(bi + BLOCK).min(n) {
                let j0 = if bi == bj { i + 1 } else { bj };
                for j in j0..(bj + BLOCK).min(n) {
                    data.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

/// Zero the Nyquist row and column (`k1 = n/2` or `k2 = n/2`).
pub fn zero_nyquist(spec: &mut [C64], n: usize) {
    let h = n / 2;
    let zero = C64::new(0.0, 0.0);
    for v in spec[h * n..(h + 1) * n].iter_mut() {
        *v = zero;
    }
    for row in 0..n {
        spec[row * n + h] = zero;
    }
}

/// Squared Euclidean frequency `|k|^2` at flat index `idx`.
#[inline]
pub fn k_squared(idx: usize, n: usize) -> f64 {
    let k1 = freq(idx % n, n) as f64;
    let k2 = freq(idx / n, n) as f64;
    k1 * k1 + k2 * k2
}

/// Two-thirds rule mask: keep modes with `|k_i| <= n/3` in both directions.
pub fn two_thirds_cutoff(n: usize) -> i64 {
    (n / 3) as i64
}

/// Zero every mode with `|k1|` or `|k2|` above `cutoff`.
pub fn truncate(spec: &mut [C64], n: usize, cutoff: i64) {
    let zero = C64::new(0.0, 0.0);
    for r in 0..n {
        let k2 = freq(r, n).abs();
        let row = &mut spec[r * n..(r + 1) * n];
        if k2 > cutoff {
            row.iter_mut().for_each(|z| *z = zero);
            continue;
        }
        for (c, z) in row.iter_mut().enumerate() {
            if freq(c, n).abs() > cutoff {
                *z = zero;
            }
        }
    }
}

/// Given `F = FFT(a + i b)` for real `a`, `b`, recover the spectra of `a` and `b`.
pub fn split_packed(packed: &[C64], n: usize, a: &mut [C64], b: &mut [C64]) {
    for r in 0..n {
        let rc = conj_index(r, n);
        for c in 0..n {
            let cc = conj_index(c, n);
            let f = packed[r * n + c];
            let g = packed[rc * n + cc].conj();
            a[r * n + c] = (f + g) * 0.5;
            b[r * n + c] = (f - g) * C64::new(0.0, -0.5);
        }
    }
}
