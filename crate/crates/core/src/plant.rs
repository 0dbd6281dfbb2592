//! Single-vehicle longitudinal dynamics, the distributed feedback law, and the
//! stacked closed-loop platoon system.
//!
//! Each follower tracks the leader in error coordinates x_i = (p, v, a) with
//! inertial lag tau: tau * a' + a = u + w. The feedback u_i couples follower i
//! to its neighbors and (through the pinning gain) to the leader.

use crate::topology::{build_coupling_matrix, CouplingMatrix, DirectedPlatoonGraph};
use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("tau = {0} must be positive")]
pub struct NonPositiveTau(pub f64);

/// State-space matrices of one vehicle in tracking-error coordinates.
#[derive(Debug, Clone)]
pub struct VehicleModel {
    pub tau: f64,
    pub a: Matrix3<f64>,
    pub b1: Vector3<f64>,
    pub b2: Vector3<f64>,
    pub c1: RowVector3<f64>,
}

pub fn vehicle_model(tau: f64) -> Result<VehicleModel, NonPositiveTau> {
    if !(tau > 0.0) {
        return Err(NonPositiveTau(tau));
    }
    let a = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0 / tau);
    let b = Vector3::new(0.0, 0.0, 1.0 / tau);
    Ok(VehicleModel {
        tau,
        a,
        b1: b,
        b2: b,
        c1: RowVector3::new(1.0, 0.0, 0.0),
    })
}

/// Feedback gains k = (k_p, k_v, k_a) and coupling strength c > 0.
#[derive(Debug, Clone, Copy)]
pub struct FeedbackGains {
    pub k_p: f64,
    pub k_v: f64,
    pub k_a: f64,
    pub c: f64,
}

impl FeedbackGains {
    pub fn k(&self) -> Vector3<f64> {
        Vector3::new(self.k_p, self.k_v, self.k_a)
    }
}

/// u_i = -c k^T (g_i x_i + sum_j (d_i x_i - d_ij x_j)) over the neighbor set.
pub fn local_control(
    gains: &FeedbackGains,
    graph: &DirectedPlatoonGraph,
    states: &[Vector3<f64>],
) -> Vec<f64> {
    assert_eq!(
        states.len(),
        graph.n_followers(),
        "one state per follower required"
    );
    let k = gains.k();
    (1..=graph.n_followers())
        .map(|i| {
            let x_i = states[i - 1];
            let mut s = graph.pinning_gain(i) * x_i;
            for (j, d_ij) in graph.neighbors(i) {
                s += graph.self_weight(i) * x_i - d_ij * states[j - 1];
            }
            -gains.c * k.dot(&s)
        })
        .collect()
}

/// Same control written over relative errors e_ij = x_i - x_j with residual
/// self weight d~_i = d_i - d_ij. Algebraically identical to [`local_control`];
/// kept separate so the equivalence is testable.
pub fn local_control_relative(
    gains: &FeedbackGains,
    graph: &DirectedPlatoonGraph,
    states: &[Vector3<f64>],
) -> Vec<f64> {
    assert_eq!(states.len(), graph.n_followers());
    let k = gains.k();
    (1..=graph.n_followers())
        .map(|i| {
            let x_i = states[i - 1];
            let mut s = graph.pinning_gain(i) * x_i;
            for (j, d_ij) in graph.neighbors(i) {
                let e_ij = x_i - states[j - 1];
                s += d_ij * e_ij + (graph.self_weight(i) - d_ij) * x_i;
            }
            -gains.c * k.dot(&s)
        })
        .collect()
}

/// Stacked platoon dynamics X' = A_c X + B W, Y = C X with
/// A_c = I_N (x) A - c M (x) B1 k^T, B = I_N (x) B2, C = I_N (x) C1.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    pub a_c: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_out: DMatrix<f64>,
    pub n_followers: usize,
    pub model: VehicleModel,
    pub gains: FeedbackGains,
    pub coupling: CouplingMatrix,
}

pub fn assemble_closed_loop(
    graph: &DirectedPlatoonGraph,
    model: &VehicleModel,
    gains: &FeedbackGains,
) -> ClosedLoopSystem {
    let n = graph.n_followers();
    let coupling = build_coupling_matrix(graph);
    let b1kt = model.b1 * RowVector3::new(gains.k_p, gains.k_v, gains.k_a);

    let mut a_c = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        a_c.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&model.a);
    }
    for i in 0..n {
        for j in 0..n {
            let w = coupling.m[(i, j)];
            if w != 0.0 {
                let mut block = a_c.view_mut((3 * i, 3 * j), (3, 3));
                block -= gains.c * w * b1kt;
            }
        }
    }

    let mut b = DMatrix::zeros(3 * n, n);
    let mut c_out = DMatrix::zeros(n, 3 * n);
    for i in 0..n {
        b.view_mut((3 * i, i), (3, 1)).copy_from(&model.b2);
        c_out.view_mut((i, 3 * i), (1, 3)).copy_from(&model.c1);
    }

    ClosedLoopSystem {
        a_c,
        b,
        c_out,
        n_followers: n,
        model: model.clone(),
        gains: *gains,
        coupling,
    }
}

impl ClosedLoopSystem {
    /// Row-major full-precision dump of A_c for debugging.
    pub fn dump_a_c(&self) -> String {
        let mut out = String::new();
        for i in 0..self.a_c.nrows() {
            let row: Vec<String> = (0..self.a_c.ncols())
                .map(|j| format!("{:?}", self.a_c[(i, j)]))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Denominator of the decoupled single-mode transfer function
/// G_i(s) = 1 / (tau s^3 + (1 + lambda_i k_a) s^2 + lambda_i k_v s + lambda_i k_p),
/// as coefficients highest degree first. The mode absorbs the coupling strength,
/// so pass lambda_i already scaled by c when c != 1.
pub fn mode_denominator(lambda_i: f64, gains: &FeedbackGains, tau: f64) -> [f64; 4] {
    [
        tau,
        1.0 + lambda_i * gains.k_a,
        lambda_i * gains.k_v,
        lambda_i * gains.k_p,
    ]
}

/// Per-mode closed-loop matrix A - c lambda_i B1 k^T used by the decoupled analysis.
pub fn mode_matrix(model: &VehicleModel, gains: &FeedbackGains, lambda_i: f64) -> Matrix3<f64> {
    model.a - model.b1 * RowVector3::new(gains.k_p, gains.k_v, gains.k_a) * gains.c * lambda_i
}

/// Stacks per-vehicle 3-vectors into the 3N-vector layout used by the closed loop.
pub fn stack_states(states: &[Vector3<f64>]) -> DVector<f64> {
    let mut x = DVector::zeros(3 * states.len());
    for (i, s) in states.iter().enumerate() {
        x.fixed_rows_mut::<3>(3 * i).copy_from(s);
    }
    x
}
