//! Kernel functions on `[-1, 1]`, their rescaled forms, moments and
//! self-convolution.
//!
//! All variants are symmetric densities with compact support, so kernel
//! weights vanish exactly outside the window `|s_m - s| < h`. Moments
//! `u_r = ∫ tʳ K(t) dt` and `v_r = ∫ tʳ K²(t) dt` are computed once by
//! adaptive quadrature and cached per variant.

use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{MvcmError, Result};

const MAX_CACHED_MOMENT: usize = 8;

/// Symmetric compact-support kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Biweight,
    Triangular,
}

impl Kernel {
    /// Density value `K(t)`; zero outside `[-1, 1]`.
    pub fn evaluate(self, t: f64) -> f64 {
        let a = t.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Epanechnikov => 0.75 * (1.0 - t * t),
            Kernel::Biweight => {
                let u = 1.0 - t * t;
                0.9375 * u * u
            }
            Kernel::Triangular => 1.0 - a,
        }
    }

    /// Rescaled kernel `K_h(t) = h⁻¹ K(t/h)`.
    pub fn evaluate_scaled(self, h: f64, t: f64) -> Result<f64> {
        check_bandwidth(h)?;
        Ok(self.evaluate(t / h) / h)
    }

    /// `u_r(K) = ∫ tʳ K(t) dt`.
    pub fn moment_u(self, r: usize) -> f64 {
        if r <= MAX_CACHED_MOMENT {
            return self.moment_table().u[r];
        }
        adaptive_simpson(|t| t.powi(r as i32) * self.evaluate(t), -1.0, 1.0, 1e-12)
    }

    /// `v_r(K) = ∫ tʳ K²(t) dt`.
    pub fn moment_v(self, r: usize) -> f64 {
        if r <= MAX_CACHED_MOMENT {
            return self.moment_table().v[r];
        }
        adaptive_simpson(
            |t| {
                let k = self.evaluate(t);
                t.powi(r as i32) * k * k
            },
            -1.0,
            1.0,
            1e-12,
        )
    }

    /// Self-convolution `K*(u) = ∫ K(v) K(v + u) dv`; zero for `|u| > 2`.
    pub fn self_convolution(self, u: f64) -> f64 {
        let a = u.abs();
        if a >= 2.0 {
            return 0.0;
        }
        // K(v)K(v+u) is supported on [-1, 1] ∩ [-1-u, 1-u].
        let lo = (-1.0f64).max(-1.0 - u);
        let hi = 1.0f64.min(1.0 - u);
        if lo >= hi {
            return 0.0;
        }
        adaptive_simpson(|v| self.evaluate(v) * self.evaluate(v + u), lo, hi, 1e-12)
    }

    fn moment_table(self) -> &'static MomentTable {
        static EPA: OnceLock<MomentTable> = OnceLock::new();
        static BIW: OnceLock<MomentTable> = OnceLock::new();
        static TRI: OnceLock<MomentTable> = OnceLock::new();
        let cell = match self {
            Kernel::Epanechnikov => &EPA,
            Kernel::Biweight => &BIW,
            Kernel::Triangular => &TRI,
        };
        cell.get_or_init(|| MomentTable::compute(self))
    }
}

impl FromStr for Kernel {
    type Err = MvcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            "biweight" => Ok(Kernel::Biweight),
            "triangular" => Ok(Kernel::Triangular),
            other => Err(MvcmError::InvalidConfig(format!(
                "unknown kernel \"{other}\" (expected epanechnikov | biweight | triangular)"
            ))),
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Biweight => "biweight",
            Kernel::Triangular => "triangular",
        };
        f.write_str(name)
    }
}

struct MomentTable {
    u: [f64; MAX_CACHED_MOMENT + 1],
    v: [f64; MAX_CACHED_MOMENT + 1],
}

impl MomentTable {
    fn compute(kernel: Kernel) -> Self {
        let mut u = [0.0; MAX_CACHED_MOMENT + 1];
        let mut v = [0.0; MAX_CACHED_MOMENT + 1];
        for r in 0..=MAX_CACHED_MOMENT {
            u[r] = adaptive_simpson(
                |t| t.powi(r as i32) * kernel.evaluate(t),
                -1.0,
                1.0,
                1e-13,
            );
            v[r] = adaptive_simpson(
                |t| {
                    let k = kernel.evaluate(t);
                    t.powi(r as i32) * k * k
                },
                -1.0,
                1.0,
                1e-13,
            );
            // Odd moments of a symmetric kernel are exactly zero; snap the
            // quadrature residue away so downstream identities hold sharp.
            if r % 2 == 1 {
                u[r] = 0.0;
                v[r] = 0.0;
            }
        }
        Self { u, v }
    }
}

pub(crate) fn check_bandwidth(h: f64) -> Result<()> {
    if !h.is_finite() || h <= 0.0 {
        return Err(MvcmError::InvalidBandwidth { value: h });
    }
    Ok(())
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }

    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }

    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, whole, m, fm, tol, 40)
}
