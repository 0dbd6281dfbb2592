//! Shared test oracles. Everything numerical here is implemented from scratch
//! on plain nested Vecs so the checks do not route through the same linear
//! algebra the library uses.

#![allow(dead_code)]

use platoon_core::plant::FeedbackGains;
use platoon_core::topology::{DirectedPlatoonGraph, Edge};
use rand::Rng;
use std::path::PathBuf;

pub type Mat = Vec<Vec<f64>>;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub const TEST_EDGES: [(usize, usize); 9] = [
    (2, 1),
    (8, 1),
    (3, 2),
    (2, 3),
    (4, 3),
    (6, 3),
    (5, 4),
    (6, 7),
    (7, 8),
];

pub fn edges(list: &[(usize, usize)], weight: f64) -> Vec<Edge> {
    list.iter()
        .map(|&(from, to)| Edge { from, to, weight })
        .collect()
}

pub fn test_a_graph() -> DirectedPlatoonGraph {
    DirectedPlatoonGraph::new(
        8,
        &edges(&TEST_EDGES, 1.0),
        &[4.0, 6.0, 1.0, 5.0, 1.0, 1.0, 3.0, 2.0],
        &[0.1, 0.1, 0.1, 0.1, 12.0, 10.0, 0.1, 0.1],
    )
    .unwrap()
}

pub fn test_b_graph() -> DirectedPlatoonGraph {
    DirectedPlatoonGraph::new(
        8,
        &edges(&TEST_EDGES, 1.0),
        &[24.0, 24.0, 12.0, 20.0, 1.0, 1.0, 7.0, 14.0],
        &[0.1, 0.1, 0.1, 0.1, 12.0, 10.0, 0.1, 0.1],
    )
    .unwrap()
}

pub fn paper_gains(c: f64) -> FeedbackGains {
    FeedbackGains {
        k_p: 2.122,
        k_v: 3.425,
        k_a: 2.501,
        c,
    }
}

/// Eigenvalues of M for the Test (a) weights; the coupled pair comes from the
/// characteristic polynomial x^2 - 9.2x + 17.91 of the node {2,3} block.
pub fn frozen_lambda_a() -> [f64; 8] {
    let lo = (9.2 - 13f64.sqrt()) / 2.0;
    let hi = (9.2 + 13f64.sqrt()) / 2.0;
    [2.1, lo, 3.1, 5.1, hi, 8.1, 10.0, 12.0]
}

/// Same for the Test (b) weights; pair from x^2 - 60.2x + 869.01.
pub fn frozen_lambda_b() -> [f64; 8] {
    let lo = 30.1 - 37f64.sqrt();
    let hi = 30.1 + 37f64.sqrt();
    [7.1, 10.0, 12.0, 14.1, 20.1, lo, hi, 48.1]
}

pub fn mat_from_dmatrix(m: &nalgebra::DMatrix<f64>) -> Mat {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            let ail = a[i][l];
            if ail == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i][j] += ail * b[l][j];
            }
        }
    }
    out
}

pub fn frob(a: &Mat) -> f64 {
    a.iter()
        .flat_map(|r| r.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Determinant by partial-pivot Gaussian elimination.
pub fn det(a: &Mat) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut sign = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            sign = -sign;
        }
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for j in col..n {
                m[row][j] -= f * m[col][j];
            }
        }
    }
    (0..n).map(|i| m[i][i]).product::<f64>() * sign
}

/// det(M - xI), the characteristic polynomial up to sign.
pub fn charpoly(m: &Mat, x: f64) -> f64 {
    let n = m.len();
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[i][i] -= x;
    }
    det(&shifted)
}

/// All real eigenvalues of a real-spectrum matrix located by sign changes of the
/// characteristic polynomial on a fine grid over [lo, hi], then bisected. Only
/// reliable for simple real eigenvalues, which is exactly the regime the library
/// promises.
pub fn bisect_real_eigenvalues(m: &Mat, lo: f64, hi: f64, grid: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    let step = (hi - lo) / grid as f64;
    let mut x_prev = lo;
    let mut f_prev = charpoly(m, x_prev);
    for i in 1..=grid {
        let x = lo + i as f64 * step;
        let f = charpoly(m, x);
        if f_prev == 0.0 {
            roots.push(x_prev);
        } else if f_prev.signum() != f.signum() {
            let (mut a, mut b) = (x_prev, x);
            let mut fa = f_prev;
            for _ in 0..100 {
                let mid = 0.5 * (a + b);
                let fm = charpoly(m, mid);
                if fm == 0.0 {
                    a = mid;
                    b = mid;
                    break;
                }
                if fa.signum() == fm.signum() {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        x_prev = x;
        f_prev = f;
    }
    roots
}

/// Cyclic Jacobi eigensolver for symmetric matrices; returns eigenvalues ascending.
pub fn jacobi_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.len();
    let mut m = a.clone();
    let scale = frob(a).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum::<f64>()
            .sqrt();
        if off < 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sgn / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Entrywise Kronecker product, the textbook definition.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ra, ca) = (a.len(), a[0].len());
    let (rb, cb) = (b.len(), b[0].len());
    let mut out = vec![vec![0.0; ca * cb]; ra * rb];
    for i in 0..ra {
        for j in 0..ca {
            for p in 0..rb {
                for q in 0..cb {
                    out[i * rb + p][j * cb + q] = a[i][j] * b[p][q];
                }
            }
        }
    }
    out
}

/// Random graph guaranteed to satisfy the disc-separation condition: centers are
/// placed left to right with gaps exceeding the adjacent radius sums, and the
/// leftmost disc sits right of 2.5 so even the smallest eigenvalue stays above
/// a comfortable floor. All pinning gains end up positive, so reachability holds.
pub fn random_admissible_graph<R: Rng>(rng: &mut R) -> DirectedPlatoonGraph {
    let n = rng.gen_range(2..=8usize);
    let mut edge_list = Vec::new();
    for to in 1..=n {
        for from in 1..=n {
            if from != to && rng.gen_bool(0.3) {
                edge_list.push(Edge {
                    from,
                    to,
                    weight: rng.gen_range(0.05..0.3),
                });
            }
        }
    }
    let self_weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut radii = vec![0.0; n];
    let mut degree = vec![0usize; n];
    for e in &edge_list {
        radii[e.to - 1] += e.weight;
        degree[e.to - 1] += 1;
    }
    let mut pinning = vec![0.0; n];
    let mut prev_center = 0.0;
    let mut prev_radius = 0.0;
    for i in 0..n {
        let needed = if i == 0 {
            2.5 + radii[0]
        } else {
            prev_center + prev_radius + radii[i] + rng.gen_range(0.3..1.0)
        };
        let load = self_weights[i] * degree[i] as f64;
        let center = needed.max(load + 0.01);
        pinning[i] = center - load;
        prev_center = center;
        prev_radius = radii[i];
    }
    DirectedPlatoonGraph::new(n, &edge_list, &self_weights, &pinning).unwrap()
}

/// Random gains that keep every positive-lambda mode cubic Hurwitz at c = 1:
/// all Routh coefficients positive plus (1 + l k_a) k_v > tau k_p, which holds
/// whenever k_v > tau k_p.
pub fn random_stabilizing_gains<R: Rng>(rng: &mut R, tau: f64) -> FeedbackGains {
    let k_p = rng.gen_range(0.5..4.0);
    let k_v = tau * k_p * rng.gen_range(1.1..3.0) + rng.gen_range(0.1..1.0);
    let k_a = rng.gen_range(0.2..3.0);
    FeedbackGains {
        k_p,
        k_v,
        k_a,
        c: 1.0,
    }
}

/// Random gains whose mode responses all peak at dc, the regime where the
/// conditioning bound is provable. For the mode cubic
/// tau s^3 + (1 + l k_a) s^2 + l k_v s + l k_p, |G(jw)|^-2 is a cubic in
/// u = w^2 whose u and u^2 coefficients are nonnegative exactly when
/// l k_v^2 >= 2 k_p (1 + l k_a) and (1 + l k_a)^2 >= 2 tau l k_v; the first
/// is tightest at lambda_min, the second holds for every l > 0 once
/// k_v <= 2 k_a / tau. Merely Routh-stable gains can resonate above the dc
/// value and break the bound.
pub fn random_nonresonant_gains<R: Rng>(rng: &mut R, tau: f64, lambda_min: f64) -> FeedbackGains {
    let k_a = rng.gen_range(1.0..2.5);
    let k_p = rng.gen_range(0.3..1.5);
    let lo = (2.0 * k_p * (1.0 / lambda_min + k_a))
        .sqrt()
        .max(1.05 * tau * k_p);
    let hi = 2.0 * k_a / tau;
    assert!(lo < hi, "no nonresonant k_v window at tau = {tau}");
    FeedbackGains {
        k_p,
        k_v: rng.gen_range(lo..hi),
        k_a,
        c: 1.0,
    }
}
