//! Fisher information and the position CRLB.
//!
//! The intermediate parameters are χ = [τ; Re α; Im α]. They map to
//! η = [x, y; Re α; Im α] through `T = [[H, 0], [0, I]]`, where column `l`
//! of `H` is the gradient of `τ_l` with respect to the agent's (x, y).

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{simpson, Waveform};
use crate::environment::PropagationPath;
use crate::error::CrlbError;
use crate::SPEED_OF_LIGHT;

const QUAD_INTERVALS: usize = 2048;
/// Relative eigenvalue below which the equilibrated FIM counts as singular.
const SINGULAR_RTOL: f64 = 1e-12;

/// `(R_s(τ), R_s′(τ), R_s″(τ))` of the unit-energy pulse.
///
/// Computed for |τ| and mapped back through evenness so the symmetries hold
/// exactly: R and R″ are even, R′ is odd with R′(0) = 0.
pub fn autocorr_derivs(wf: &Waveform, tau: f64) -> (f64, f64, f64) {
    let t = tau.abs();
    let half = wf.half_support();
    if t >= 2.0 * half {
        return (0.0, 0.0, 0.0);
    }
    let (a, b) = (t - half, half);
    let r = simpson(a, b, QUAD_INTERVALS, |u| wf.pulse(u) * wf.pulse(u - t));
    let r1 = if t == 0.0 {
        0.0
    } else {
        -simpson(a, b, QUAD_INTERVALS, |u| {
            wf.pulse(u) * wf.pulse_derivative(u - t)
        })
    };
    let r2 = -simpson(a, b, QUAD_INTERVALS, |u| {
        wf.pulse_derivative(u) * wf.pulse_derivative(u - t)
    });
    (r, r1 * tau.signum(), r2)
}

/// ζ² recovered from the curvature of the autocorrelation at zero lag.
pub fn curvature_bandwidth_sq(wf: &Waveform) -> f64 {
    let (r0, _, r2) = autocorr_derivs(wf, 0.0);
    -r2 / (4.0 * PI * PI * r0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiVars {
    pub delays: Vec<f64>,
    pub gains_re: Vec<f64>,
    pub gains_im: Vec<f64>,
}

impl ChiVars {
    pub fn new(delays: Vec<f64>, gains: &[Complex64]) -> Result<Self, CrlbError> {
        if delays.len() != gains.len() {
            return Err(CrlbError::Dimension(format!(
                "{} delays for {} gains",
                delays.len(),
                gains.len()
            )));
        }
        if delays.is_empty() {
            return Err(CrlbError::Unobservable);
        }
        Ok(Self {
            delays,
            gains_re: gains.iter().map(|g| g.re).collect(),
            gains_im: gains.iter().map(|g| g.im).collect(),
        })
    }

    pub fn from_paths(paths: &[PropagationPath], gains: &[Complex64]) -> Result<Self, CrlbError> {
        Self::new(
            paths
                .iter()
                .map(|p| p.total_length / SPEED_OF_LIGHT)
                .collect(),
            gains,
        )
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FimSpace {
    /// [τ₁..τ_P, Re α₁..Re α_P, Im α₁..Im α_P]
    Chi,
    /// [x, y, Re α₁..Re α_P, Im α₁..Im α_P]
    Eta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fim {
    pub matrix: DMatrix<f64>,
    pub space: FimSpace,
}

impl Fim {
    pub fn is_symmetric(&self, rtol: f64) -> bool {
        let m = &self.matrix;
        let scale = m.amax().max(f64::MIN_POSITIVE);
        (m - m.transpose()).amax() <= rtol * scale
    }

    /// Smallest eigenvalue of the Jacobi-equilibrated matrix.
    pub fn min_equilibrated_eigenvalue(&self) -> f64 {
        let (eq, _) = equilibrate(&self.matrix);
        SymmetricEigen::new(eq).eigenvalues.min()
    }
}

/// The χ-space FIM with blocks `[[Λ_A, Λ_B^R, Λ_B^I], [·, Λ_C, 0], [·, 0, Λ_C]]`.
pub fn fim_chi(chi: &ChiVars, wf: &Waveform, n0: f64) -> Fim {
    let p = chi.len();
    let k = 2.0 / n0;
    let mut m = DMatrix::zeros(3 * p, 3 * p);
    for l in 0..p {
        for lp in 0..p {
            let (r, r1, r2) = autocorr_derivs(wf, chi.delays[l] - chi.delays[lp]);
            let re_prod = chi.gains_re[l] * chi.gains_re[lp] + chi.gains_im[l] * chi.gains_im[lp];
            m[(l, lp)] = -k * re_prod * r2;
            m[(l, p + lp)] = k * chi.gains_re[l] * r1;
            m[(l, 2 * p + lp)] = k * chi.gains_im[l] * r1;
            m[(p + l, p + lp)] = k * r;
            m[(2 * p + l, 2 * p + lp)] = k * r;
        }
    }
    for l in 0..p {
        for lp in 0..p {
            m[(p + lp, l)] = m[(l, p + lp)];
            m[(2 * p + lp, l)] = m[(l, 2 * p + lp)];
        }
    }
    let fim = Fim {
        matrix: m,
        space: FimSpace::Chi,
    };
    debug_assert!(fim.is_symmetric(1e-12), "asymmetric FIM assembly");
    fim
}

/// `T` of shape (2+2P)×(3P).
pub fn jacobian_t(paths: &[PropagationPath]) -> DMatrix<f64> {
    let p = paths.len();
    let mut t = DMatrix::zeros(2 + 2 * p, 3 * p);
    for (l, path) in paths.iter().enumerate() {
        let g = path.agent_gradient() / SPEED_OF_LIGHT;
        t[(0, l)] = g.x;
        t[(1, l)] = g.y;
    }
    for i in 0..2 * p {
        t[(2 + i, p + i)] = 1.0;
    }
    t
}

/// J(η) = T J(χ) Tᵀ.
pub fn fim_eta(
    paths: &[PropagationPath],
    chi: &ChiVars,
    wf: &Waveform,
    n0: f64,
) -> Result<Fim, CrlbError> {
    if paths.len() != chi.len() {
        return Err(CrlbError::Dimension(format!(
            "{} paths for {} parameter sets",
            paths.len(),
            chi.len()
        )));
    }
    let t = jacobian_t(paths);
    let jc = fim_chi(chi, wf, n0);
    let mut m = &t * jc.matrix * t.transpose();
    // symmetrize away the rounding of the triple product
    m = (&m + m.transpose()) * 0.5;
    Ok(Fim {
        matrix: m,
        space: FimSpace::Eta,
    })
}

fn equilibrate(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let d: Vec<f64> = (0..m.nrows())
        .map(|i| {
            let v = m[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut eq = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            eq[(i, j)] *= d[i] * d[j];
        }
    }
    (eq, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrlbValue {
    /// Trace of the 2×2 position block of J⁻¹, in m².
    pub value: f64,
    /// A ridge of 1e-12·trace was needed to invert.
    pub regularized: bool,
}

fn position_block_trace(fim: &Fim, regularize: bool) -> Result<CrlbValue, CrlbError> {
    if fim.space != FimSpace::Eta || fim.matrix.nrows() < 2 {
        return Err(CrlbError::Dimension(
            "position CRLB needs an η-space FIM".into(),
        ));
    }
    let (mut eq, d) = equilibrate(&fim.matrix);
    let mut eig = SymmetricEigen::new(eq.clone());
    let max = eig.eigenvalues.max();
    let mut regularized = false;
    if !(max > 0.0) || eig.eigenvalues.min() <= SINGULAR_RTOL * max {
        if !regularize {
            return Err(CrlbError::Unobservable);
        }
        let ridge = 1e-12 * eq.trace();
        for i in 0..eq.nrows() {
            eq[(i, i)] += ridge;
        }
        eig = SymmetricEigen::new(eq);
        regularized = true;
    }
    let mut trace = 0.0;
    for r in 0..2 {
        let mut acc = 0.0;
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors[(r, k)];
            acc += v * v / lam;
        }
        trace += acc * d[r] * d[r];
    }
    Ok(CrlbValue {
        value: trace,
        regularized,
    })
}

/// Strict position CRLB; singular information is an error.
pub fn position_crlb(fim: &Fim) -> Result<f64, CrlbError> {
    position_block_trace(fim, false).map(|c| c.value)
}

/// Position CRLB that falls back to ridge regularization, with a flag.
pub fn position_crlb_regularized(fim: &Fim) -> Result<CrlbValue, CrlbError> {
    position_block_trace(fim, true)
}

/// Direction-cosine sums (ν, κ) of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathDirectionSums {
    pub nu: f64,
    pub kappa: f64,
}

impl PathDirectionSums {
    pub fn of(path: &PropagationPath) -> Self {
        let g = path.agent_gradient();
        Self {
            nu: g.x,
            kappa: g.y,
        }
    }
}

/// Position information `(8π²ζ²/c²) Σ |α_i|²/N₀ [ν, κ]ᵀ[ν, κ]`.
pub fn closed_form_information(
    sums: &[PathDirectionSums],
    amplitudes_sq: &[f64],
    zeta_sq: f64,
    n0: f64,
) -> Matrix2<f64> {
    let k = 8.0 * PI * PI * zeta_sq / (SPEED_OF_LIGHT * SPEED_OF_LIGHT * n0);
    let mut info = Matrix2::zeros();
    for (s, &a2) in sums.iter().zip(amplitudes_sq) {
        let w = k * a2;
        info[(0, 0)] += w * s.nu * s.nu;
        info[(0, 1)] += w * s.nu * s.kappa;
        info[(1, 1)] += w * s.kappa * s.kappa;
    }
    info[(1, 0)] = info[(0, 1)];
    info
}

/// Trace of the inverse of a 2×2 information matrix.
pub fn information_trace_inverse(info: &Matrix2<f64>) -> Result<f64, CrlbError> {
    let det = info[(0, 0)] * info[(1, 1)] - info[(0, 1)] * info[(1, 0)];
    let scale = info[(0, 0)] * info[(1, 1)];
    if !(det > SINGULAR_RTOL * scale) || !(scale > 0.0) {
        return Err(CrlbError::Unobservable);
    }
    Ok((info[(0, 0)] + info[(1, 1)]) / det)
}

/// Proposition-style closed form for resolvable paths.
pub fn closed_form_crlb(
    paths: &[PropagationPath],
    gains: &[Complex64],
    zeta_sq: f64,
    n0: f64,
) -> Result<f64, CrlbError> {
    if paths.len() != gains.len() {
        return Err(CrlbError::Dimension(format!(
            "{} paths for {} gains",
            paths.len(),
            gains.len()
        )));
    }
    let sums: Vec<_> = paths.iter().map(PathDirectionSums::of).collect();
    let a2: Vec<f64> = gains.iter().map(|g| g.norm_sqr()).collect();
    information_trace_inverse(&closed_form_information(&sums, &a2, zeta_sq, n0))
}
