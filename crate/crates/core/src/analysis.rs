//! Frequency-domain robustness analysis: H-infinity norms by Hamiltonian
//! bisection, an independent dense frequency sweep used as a cross-check,
//! per-mode norms of the decoupled cubics, and the eigenvector-conditioning
//! upper bound on the worst-case gain.

use crate::plant::{mode_denominator, FeedbackGains};
use crate::topology::{complex_eigenvalues_bounded, SpectralFactorization};
use nalgebra::{Complex, DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("matrix is not Hurwitz (spectral abscissa {0:.6e})")]
    NotHurwitz(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("eigenvalue iteration stalled on a {0}x{0} matrix")]
    EigenIterationStalled(usize),
}

/// Plain state-space triple (A, B, C) with D = 0.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, AnalysisError> {
        if a.nrows() != a.ncols() {
            return Err(AnalysisError::Dimension(format!(
                "A is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(AnalysisError::Dimension(format!(
                "B has {} rows, A has {}",
                b.nrows(),
                a.nrows()
            )));
        }
        if c.ncols() != a.ncols() {
            return Err(AnalysisError::Dimension(format!(
                "C has {} cols, A has {}",
                c.ncols(),
                a.ncols()
            )));
        }
        Ok(Self { a, b, c })
    }
}

impl From<&crate::plant::ClosedLoopSystem> for StateSpace {
    fn from(sys: &crate::plant::ClosedLoopSystem) -> Self {
        Self {
            a: sys.a_c.clone(),
            b: sys.b.clone(),
            c: sys.c_out.clone(),
        }
    }
}

/// Hurwitz test with a numerical margin: every eigenvalue must satisfy
/// Re < -1e-9, so marginally stable matrices are rejected.
pub const HURWITZ_MARGIN: f64 = 1e-9;

/// NaN when the eigenvalue iteration stalls; `is_hurwitz` treats that as not
/// Hurwitz and the norm routines refuse the matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    match complex_eigenvalues_bounded(a) {
        Some(eigs) => eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max),
        None => f64::NAN,
    }
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    spectral_abscissa(a) < -HURWITZ_MARGIN
}

/// How a norm value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HinfMethod {
    Bisection,
    Sweep,
}

#[derive(Debug, Clone)]
pub struct HinfResult {
    pub gamma: f64,
    pub peak_frequency: f64,
    pub method: HinfMethod,
    pub tolerance: f64,
}

/// Largest singular value of G(jw) = C (jwI - A)^-1 B at one frequency.
pub fn sigma_max_at(sys: &StateSpace, omega: f64) -> f64 {
    let n = sys.a.nrows();
    let mut m = DMatrix::<Complex<f64>>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = Complex::new(-sys.a[(i, j)], if i == j { omega } else { 0.0 });
        }
    }
    let b_c = sys.b.map(|x| Complex::new(x, 0.0));
    let lu = m.lu();
    let x = match lu.solve(&b_c) {
        Some(x) => x,
        None => return f64::INFINITY,
    };
    let g = sys.c.map(|x| Complex::new(x, 0.0)) * x;
    sigma_max_complex(&g)
}

// sigma_max of a complex matrix through the real embedding [[Re, -Im],[Im, Re]],
// whose singular values are those of G with doubled multiplicity.
fn sigma_max_complex(g: &DMatrix<Complex<f64>>) -> f64 {
    let (m, n) = g.shape();
    if m == 1 && n == 1 {
        return g[(0, 0)].norm();
    }
    let mut e = DMatrix::<f64>::zeros(2 * m, 2 * n);
    for i in 0..m {
        for j in 0..n {
            let z = g[(i, j)];
            e[(i, j)] = z.re;
            e[(i, j + n)] = -z.im;
            e[(i + m, j)] = z.im;
            e[(i + m, j + n)] = z.re;
        }
    }
    let gram = e.transpose() * &e;
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l))
        .max(0.0)
        .sqrt()
}

/// DC gain sigma_max(C A^-1 B); the H-infinity norm can never be below it.
pub fn dc_gain(sys: &StateSpace) -> f64 {
    sigma_max_at(sys, 0.0)
}

const SWEEP_POINTS: usize = 20_000;
const SWEEP_LO: f64 = 1e-4;
const SWEEP_HI: f64 = 1e4;

/// Dense logarithmic frequency sweep over [1e-4, 1e4] rad/s with local golden-section
/// refinement around the grid peak. Slower than bisection but entirely independent
/// of the Hamiltonian machinery, which is the point.
pub fn hinf_norm_sweep_oracle(sys: &StateSpace) -> Result<HinfResult, AnalysisError> {
    let abscissa = spectral_abscissa(&sys.a);
    // negated form so a NaN abscissa (stalled eigensolve) is rejected too
    if !(abscissa < -HURWITZ_MARGIN) {
        return Err(AnalysisError::NotHurwitz(abscissa));
    }
    let mut best = dc_gain(sys);
    let mut best_w = 0.0;
    let log_lo = SWEEP_LO.ln();
    let log_hi = SWEEP_HI.ln();
    for i in 0..SWEEP_POINTS {
        let t = i as f64 / (SWEEP_POINTS - 1) as f64;
        let w = (log_lo + t * (log_hi - log_lo)).exp();
        let s = sigma_max_at(sys, w);
        if s > best {
            best = s;
            best_w = w;
        }
    }
    if best_w > 0.0 {
        let ratio = (log_hi - log_lo) / (SWEEP_POINTS - 1) as f64;
        let (mut lo, mut hi) = (best_w * (-2.0 * ratio).exp(), best_w * (2.0 * ratio).exp());
        // golden-section on log frequency around the winning grid point
        let phi = 0.5 * (3.0 - 5.0f64.sqrt());
        for _ in 0..60 {
            let a = lo * (hi / lo).powf(phi);
            let b = lo * (hi / lo).powf(1.0 - phi);
            if sigma_max_at(sys, a) < sigma_max_at(sys, b) {
                lo = a;
            } else {
                hi = b;
            }
        }
        let w = (lo * hi).sqrt();
        let s = sigma_max_at(sys, w);
        if s > best {
            best = s;
            best_w = w;
        }
    }
    Ok(HinfResult {
        gamma: best,
        peak_frequency: best_w,
        method: HinfMethod::Sweep,
        tolerance: 1e-6,
    })
}

/// H-infinity norm by bisection on the imaginary-axis eigenvalue test of the
/// Hamiltonian H(g) = [[A, B B^T / g^2], [-C^T C, -A^T]]: H(g) has an eigenvalue
/// on the imaginary axis iff g is at most the norm. The bracket starts at the DC
/// gain (always a lower bound) and twice a coarse sweep maximum (an upper bound
/// once the sweep grid is fine enough to see the peak's order of magnitude).
pub fn hinf_norm(sys: &StateSpace, tol: f64) -> Result<HinfResult, AnalysisError> {
    let abscissa = spectral_abscissa(&sys.a);
    // negated form so a NaN abscissa (stalled eigensolve) is rejected too
    if !(abscissa < -HURWITZ_MARGIN) {
        return Err(AnalysisError::NotHurwitz(abscissa));
    }

    // coarse sweep for the upper bracket; 400 log points suffice for an order of magnitude
    let mut coarse = dc_gain(sys);
    for i in 0..400 {
        let t = i as f64 / 399.0;
        let w = (SWEEP_LO.ln() + t * (SWEEP_HI.ln() - SWEEP_LO.ln())).exp();
        coarse = coarse.max(sigma_max_at(sys, w));
    }
    let mut lo = dc_gain(sys).max(1e-300);
    let mut hi = (2.0 * coarse).max(lo * (1.0 + 1e-6));
    // the coarse sweep can undershoot a narrow resonance; grow until the axis is clear
    for _ in 0..60 {
        if imaginary_axis_crossings(sys, hi)?.is_none() {
            break;
        }
        hi *= 2.0;
    }

    for _ in 0..200 {
        if (hi - lo) <= tol * lo {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match imaginary_axis_crossings(sys, mid)? {
            Some(_) => lo = mid,
            None => hi = mid,
        }
    }
    let gamma = 0.5 * (lo + hi);
    // at the final lower bound the crossing pair brackets the peak frequency
    let peak_frequency = imaginary_axis_crossings(sys, lo)?
        .map(|omegas| {
            omegas
                .into_iter()
                .map(|w| (w, sigma_max_at(sys, w)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(w, _)| w)
                .unwrap_or(0.0)
        })
        .unwrap_or(0.0);
    Ok(HinfResult {
        gamma,
        peak_frequency,
        method: HinfMethod::Bisection,
        tolerance: tol,
    })
}

// Eigenvalues of the Hamiltonian within a band around the imaginary axis,
// returned as their |Im| parts (candidate peak frequencies), or None when the
// axis is clear, meaning g exceeds the norm. A stalled eigensolve must stay
// distinct from a clear axis or the bisection would silently shrink the norm.
fn imaginary_axis_crossings(
    sys: &StateSpace,
    gamma: f64,
) -> Result<Option<Vec<f64>>, AnalysisError> {
    let n = sys.a.nrows();
    let bbt = &sys.b * sys.b.transpose() / (gamma * gamma);
    let ctc = sys.c.transpose() * &sys.c;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    h.view_mut((0, n), (n, n)).copy_from(&bbt);
    h.view_mut((n, 0), (n, n)).copy_from(&(-&ctc));
    h.view_mut((n, n), (n, n)).copy_from(&(-sys.a.transpose()));
    let scale = h.norm().max(1.0);
    let tol = 1e-7 * scale;
    let eigs =
        complex_eigenvalues_bounded(&h).ok_or(AnalysisError::EigenIterationStalled(2 * n))?;
    let crossings: Vec<f64> = eigs
        .iter()
        .filter(|l| l.re.abs() <= tol)
        .map(|l| l.im.abs())
        .collect();
    if crossings.is_empty() {
        Ok(None)
    } else {
        Ok(Some(crossings))
    }
}

/// Norm of one decoupled mode 1/(tau s^3 + (1 + l k_a) s^2 + l k_v s + l k_p).
/// `lambda_i` is the effective mode eigenvalue; fold the coupling strength in
/// before calling when c != 1.
pub fn mode_hinf(lambda_i: f64, gains: &FeedbackGains, tau: f64) -> Result<HinfResult, AnalysisError> {
    let sys = mode_state_space(lambda_i, gains, tau);
    hinf_norm(&sys, 1e-6)
}

/// Companion realization of the mode cubic: C (sI - A)^-1 B = 1/den(s).
pub fn mode_state_space(lambda_i: f64, gains: &FeedbackGains, tau: f64) -> StateSpace {
    let [c3, c2, c1, c0] = mode_denominator(lambda_i, gains, tau);
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[
            0.0,
            1.0,
            0.0,
            0.0,
            0.0,
            1.0,
            -c0 / c3,
            -c1 / c3,
            -c2 / c3,
        ],
    );
    let b = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0 / c3]);
    let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    StateSpace { a, b, c }
}

/// Eigenvector-conditioning bound on the closed-loop gain at c = 1:
/// gamma <= cond_term / (lambda_min * k_p) with
/// cond_term = sqrt(lambda_max(V^T V) / lambda_min(V^T V)).
#[derive(Debug, Clone, Copy)]
pub struct GammaBound {
    pub lambda_min: f64,
    pub cond_term: f64,
    pub bound: f64,
}

pub fn gamma_upper_bound(f: &SpectralFactorization, k_p: f64) -> GammaBound {
    let vtv = f.v.transpose() * &f.v;
    let eig = SymmetricEigen::new(vtv);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let cond_term = (hi / lo).sqrt();
    let lambda_min = f.min_eigenvalue();
    GammaBound {
        lambda_min,
        cond_term,
        bound: cond_term / (lambda_min * k_p),
    }
}
