//! Mean-zero periodic scalar fields on the unit torus and their Sobolev norms.
//!
//! A [`ScalarField`] always carries its spectrum; physical values are derived
//! from it on first access and cached. Norms are evaluated from the spectrum
//! only. Frequencies are integer vectors `k` and the homogeneous weight is the
//! Euclidean `|k|`, so `sin(2 pi x1)` has every `H^s` norm equal to `1/sqrt 2`.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::spectral::{conj_index, freq, zero_nyquist, Fft2, C64};

/// Relative tolerance on the zero mode for a field to count as mean-zero.
pub const MEAN_ZERO_TOL: f64 = 1e-12;

/// Uniform `n x n` discretization of the unit torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(MixError::InvalidGrid(n));
        }
        Ok(Grid { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid points, `n^2`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Coordinate of the `i`-th grid line in either direction.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    /// Largest retained frequency in each direction.
    #[inline]
    pub fn max_frequency(&self) -> i64 {
        (self.n / 2) as i64 - 1
    }
}

impl TryFrom<usize> for Grid {
    type Error = MixError;
    fn try_from(n: usize) -> Result<Self> {
        Grid::new(n)
    }
}

impl From<Grid> for usize {
    fn from(g: Grid) -> usize {
        g.n
    }
}

/// Index `s` of a homogeneous Sobolev norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevIndex(f64);

impl SobolevIndex {
    pub const L2: SobolevIndex = SobolevIndex(0.0);
    pub const H1: SobolevIndex = SobolevIndex(1.0);
    pub const H_MINUS_1: SobolevIndex = SobolevIndex(-1.0);

    pub fn new(s: f64) -> Result<Self> {
        if !s.is_finite() || s.abs() > 8.0 {
            return Err(MixError::InvalidSobolevIndex(s));
        }
        Ok(SobolevIndex(s))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// `|k|^{2s}` given `|k|^2`, with fast paths for the indices used in hot loops.
#[inline]
pub(crate) fn sobolev_weight(k2: f64, s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else if s == 1.0 {
        k2
    } else if s == -1.0 {
        1.0 / k2
    } else if s == 2.0 {
        k2 * k2
    } else {
        k2.powf(s)
    }
}

/// Calls `f(|k|^2, c_k)` for every mode but the zero mode.
#[inline]
fn for_nonzero_modes(spec: &[C64], n: usize, mut f: impl FnMut(f64, &C64)) {
    let sq: Vec<f64> = (0..n).map(|i| (freq(i, n) * freq(i, n)) as f64).collect();
    for (r, row) in spec.chunks_exact(n).enumerate() {
        let k2r = sq[r];
        for (c, z) in row.iter().enumerate() {
            if r == 0 && c == 0 {
                continue;
            }
            f(k2r + sq[c], z);
        }
    }
}

/// `sum_{k != 0} |k|^{2s} |c_k|^2` over a raw spectrum.
pub(crate) fn sobolev_sq(spec: &[C64], n: usize, s: f64) -> f64 {
    let mut acc = 0.0;
    for_nonzero_modes(spec, n, |k2, c| acc += sobolev_weight(k2, s) * c.norm_sqr());
    acc
}

/// `(L2^2, H^-1^2, H^1^2)` in one pass; the zero mode counts toward L2 only.
pub(crate) fn norm_triplet_sq(spec: &[C64], n: usize) -> (f64, f64, f64) {
    let mut l2 = spec[0].norm_sqr();
    let mut hm1 = 0.0;
    let mut h1 = 0.0;
    for_nonzero_modes(spec, n, |k2, c| {
        let e = c.norm_sqr();
        l2 += e;
        hm1 += e / k2;
        h1 += e * k2;
    });
    (l2, hm1, h1)
}

/// Periodic scalar sampled on a [`Grid`], with a cached physical view.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Grid,
    spectrum: Arc<[C64]>,
    values: OnceLock<Arc<[f64]>>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::from_spectrum(grid, vec![C64::new(0.0, 0.0); grid.len()])
            .expect("length matches grid")
    }

    /// Build from point samples, row-major with `x2` outer and `x1` inner.
    /// The Nyquist row and column are projected out.
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MixError::Format(format!(
                "expected {} samples for n={}, got {}",
                grid.len(),
                grid.n(),
                values.len()
            )));
        }
        let n = grid.n();
        let mut spec: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
        Fft2::new(n).forward(&mut spec);
        zero_nyquist(&mut spec, n);
        Ok(Self::from_spectrum_unchecked(grid, spec))
    }

    /// Build by sampling `f(x1, x2)` at the grid points.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..n {
            let x2 = grid.coord(j);
            for i in 0..n {
                values.push(f(grid.coord(i), x2));
            }
        }
        Self::from_values(grid, values).expect("length matches grid")
    }

    /// Build from Fourier coefficients in the crate's layout (`k2` outer).
    /// The caller is responsible for Hermitian symmetry.
    pub fn from_spectrum(grid: Grid, spectrum: Vec<C64>) -> Result<Self> {
        if spectrum.len() != grid.len() {
            return Err(MixError::Format(format!(
                "expected {} coefficients for n={}, got {}",
                grid.len(),
                grid.n(),
                spectrum.len()
            )));
        }
        Ok(Self::from_spectrum_unchecked(grid, spectrum))
    }

    pub(crate) fn from_spectrum_unchecked(grid: Grid, spectrum: Vec<C64>) -> Self {
        ScalarField {
            grid,
            spectrum: spectrum.into(),
            values: OnceLock::new(),
        }
    }

    /// `cos(2 pi (k1 x1 + k2 x2))` scaled by `amplitude`.
    pub fn cos_mode(grid: Grid, k1: i64, k2: i64, amplitude: f64) -> Self {
        Self::from_fn(grid, |x1, x2| {
            amplitude * (2.0 * PI * (k1 as f64 * x1 + k2 as f64 * x2)).cos()
        })
    }

    /// `sin(2 pi (k1 x1 + k2 x2))` scaled by `amplitude`.
    pub fn sin_mode(grid: Grid, k1: i64, k2: i64, amplitude: f64) -> Self {
        Self::from_fn(grid, |x1, x2| {
            amplitude * (2.0 * PI * (k1 as f64 * x1 + k2 as f64 * x2)).sin()
        })
    }

    /// Mean-zero field with Gaussian coefficients on `0 < |k|_inf <= band`,
    /// normalized to unit L2 norm. Deterministic in `seed`.
    pub fn random_band_limited(grid: Grid, seed: u64, band: usize) -> Result<Self> {
        let n = grid.n();
        let band = band as i64;
        if band < 1 || band > grid.max_frequency() {
            return Err(MixError::InvalidParameter(format!(
                "band {band} must lie in [1, {}]",
                grid.max_frequency()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = vec![C64::new(0.0, 0.0); grid.len()];
        let idx = |k: i64| -> usize { k.rem_euclid(n as i64) as usize };
        for k2 in -band..=band {
            for k1 in -band..=band {
                // one representative per conjugate pair
                if (k2, k1) <= (0, 0) {
                    continue;
                }
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let c = C64::new(re, im);
                spec[idx(k2) * n + idx(k1)] = c;
                spec[idx(-k2) * n + idx(-k1)] = c.conj();
            }
        }
        let norm = spec.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        spec.iter_mut().for_each(|c| *c /= norm);
        Ok(Self::from_spectrum_unchecked(grid, spec))
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn spectrum(&self) -> &[C64] {
        &self.spectrum
    }

    /// Point values, row-major with `x2` outer and `x1` inner.
    pub fn values(&self) -> &[f64] {
        self.values.get_or_init(|| {
            let mut buf = self.spectrum.to_vec();
            Fft2::new(self.grid.n()).inverse(&mut buf);
            buf.iter().map(|z| z.re).collect::<Vec<_>>().into()
        })
    }

    /// Value at grid point `(i, j)` = `(x1, x2)` indices.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values()[j * self.grid.n() + i]
    }

    /// Fourier coefficient of frequency `(k1, k2)`.
    pub fn coefficient(&self, k1: i64, k2: i64) -> C64 {
        let n = self.grid.n() as i64;
        let r = k2.rem_euclid(n) as usize;
        let c = k1.rem_euclid(n) as usize;
        self.spectrum[r * n as usize + c]
    }

    /// Spatial average (the zero mode).
    pub fn mean(&self) -> f64 {
        self.spectrum[0].re
    }

    pub fn is_mean_zero(&self) -> bool {
        self.spectrum[0].norm() <= MEAN_ZERO_TOL * l2_norm(self)
    }

    /// Largest deviation from Hermitian symmetry, relative to the L2 norm.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid.n();
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                let a = self.spectrum[r * n + c];
                let b = self.spectrum[conj_index(r, n) * n + conj_index(c, n)];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        let l2 = l2_norm(self);
        if l2 > 0.0 {
            worst / l2
        } else {
            worst
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.spectrum.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    fn map_spectrum(&self, f: impl Fn(i64, i64, C64) -> C64) -> ScalarField {
        let n = self.grid.n();
        let spec = self
            .spectrum
            .iter()
            .enumerate()
            .map(|(i, &c)| f(freq(i % n, n), freq(i / n, n), c))
            .collect();
        ScalarField::from_spectrum_unchecked(self.grid, spec)
    }
}

/// Remove the spatial average.
pub fn project_mean_zero(f: &ScalarField) -> ScalarField {
    f.map_spectrum(|k1, k2, c| if k1 == 0 && k2 == 0 { C64::new(0.0, 0.0) } else { c })
}

/// Remove every mode with `k1 = 0`, i.e. the part constant along `x1` streamlines.
pub fn project_zero_x1_average(f: &ScalarField) -> ScalarField {
    f.map_spectrum(|k1, _, c| if k1 == 0 { C64::new(0.0, 0.0) } else { c })
}

/// Remove every mode with `k2 = 0` (the transpose of [`project_zero_x1_average`]).
pub fn project_zero_x2_average(f: &ScalarField) -> ScalarField {
    f.map_spectrum(|_, k2, c| if k2 == 0 { C64::new(0.0, 0.0) } else { c })
}

fn require_mean_zero(f: &ScalarField) -> Result<()> {
    let mean = f.spectrum()[0].norm();
    let l2 = l2_norm(f);
    if mean > MEAN_ZERO_TOL * l2 {
        return Err(MixError::NotMeanZero { mean, l2 });
    }
    Ok(())
}

/// Homogeneous Sobolev norm `( sum_{k != 0} |k|^{2s} |c_k|^2 )^{1/2}`.
pub fn sobolev_norm(f: &ScalarField, s: SobolevIndex) -> Result<f64> {
    require_mean_zero(f)?;
    Ok(sobolev_sq(f.spectrum(), f.grid().n(), s.value()).sqrt())
}

/// L2 norm over the unit torus (the zero mode included).
pub fn l2_norm(f: &ScalarField) -> f64 {
    f.spectrum().iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `||grad f||_{L2}`, which is `2 pi` times the `H^1` norm in integer frequencies.
pub fn grad_l2(f: &ScalarField) -> Result<f64> {
    Ok(2.0 * PI * sobolev_norm(f, SobolevIndex::H1)?)
}
