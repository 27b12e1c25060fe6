//! Dense strictly convex quadratic programs with linear inequality
//! constraints, solved with the Goldfarb–Idnani dual active-set method.
//!
//! ```text
//! minimize   ½ xᵀ H x + gᵀ x
//! subject to aᵢᵀ x ≤ bᵢ
//! ```
//!
//! The method starts from the unconstrained minimizer and adds the most
//! violated constraint at each step, so no feasible starting point is needed.
//! Problem sizes here are tiny (a handful of variables, a few hundred
//! constraints), so the projections are recomputed from scratch instead of
//! maintaining factorization updates.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint, zero for inactive ones.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are inconsistent")]
    Infeasible,
    #[error("active-set iteration limit reached")]
    IterationLimit,
}

/// Constraint satisfaction tolerance, relative to the row scale.
const FEAS_TOL: f64 = 1e-12;

pub fn solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &[DVector<f64>],
    b: &[f64],
) -> Result<QpSolution, QpError> {
    let n = g.len();
    let m = a.len();
    debug_assert_eq!(b.len(), m);

    let chol = h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let h_inv = chol.inverse();

    // Work in the `nᵢᵀx ≥ b'ᵢ` form with nᵢ = -aᵢ, b'ᵢ = -bᵢ.
    let normals: Vec<DVector<f64>> = a.iter().map(|ai| -ai).collect();
    let rhs: Vec<f64> = b.iter().map(|bi| -bi).collect();
    let scale: Vec<f64> = normals
        .iter()
        .zip(&rhs)
        .map(|(ni, bi)| 1.0_f64.max(ni.amax()).max(bi.abs()))
        .collect();

    let mut x = -(&h_inv * g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];

    let max_iter = 10 * (m + n) + 100;
    let mut iter = 0;

    loop {
        // Pick the most violated (scaled) inactive constraint.
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m {
            if is_active[i] {
                continue;
            }
            let s = (normals[i].dot(&x) - rhs[i]) / scale[i];
            if s < -FEAS_TOL && worst.is_none_or(|(_, ws)| s < ws) {
                worst = Some((i, s));
            }
        }
        let Some((p, _)) = worst else {
            let mut multipliers = DVector::zeros(m);
            for (&j, &uj) in active.iter().zip(&u) {
                multipliers[j] = uj;
            }
            return Ok(QpSolution {
                x,
                multipliers,
                active,
            });
        };

        let mut u_p = 0.0;
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(QpError::IterationLimit);
            }
            let np = &normals[p];
            let s_p = np.dot(&x) - rhs[p];
            let hn = &h_inv * np;

            let (z, r) = if active.is_empty() {
                (hn.clone(), DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_columns(
                    &active.iter().map(|&j| normals[j].clone()).collect::<Vec<_>>(),
                );
                let hinv_n = &h_inv * &nmat;
                let mmat = nmat.transpose() * &hinv_n;
                let r = match mmat.clone().cholesky() {
                    Some(c) => c.solve(&(nmat.transpose() * &hn)),
                    None => mmat
                        .pseudo_inverse(1e-14)
                        .map_err(|_| QpError::NotPositiveDefinite)?
                        * (nmat.transpose() * &hn),
                };
                (&hn - hinv_n * &r, r)
            };

            let curvature = z.dot(np);
            let full_step = if curvature > 1e-12 * np.dot(&hn).max(f64::MIN_POSITIVE) {
                Some(-s_p / curvature)
            } else {
                None
            };

            // Largest step keeping active multipliers non-negative.
            let mut partial: Option<(usize, f64)> = None;
            for (k, (&uk, &rk)) in u.iter().zip(r.iter()).enumerate() {
                if rk > 0.0 {
                    let t = uk / rk;
                    if partial.is_none_or(|(_, pt)| t < pt) {
                        partial = Some((k, t));
                    }
                }
            }

            match (full_step, partial) {
                (None, None) => return Err(QpError::Infeasible),
                (Some(t2), part) if part.is_none_or(|(_, t1)| t2 <= t1) => {
                    x += &z * t2;
                    for (uk, rk) in u.iter_mut().zip(r.iter()) {
                        *uk -= t2 * rk;
                    }
                    u.push(u_p + t2);
                    active.push(p);
                    is_active[p] = true;
                    break;
                }
                (full, Some((k, t1))) => {
                    if full.is_some() {
                        x += &z * t1;
                    }
                    for (uk, rk) in u.iter_mut().zip(r.iter()) {
                        *uk -= t1 * rk;
                    }
                    u_p += t1;
                    let dropped = active.remove(k);
                    u.remove(k);
                    is_active[dropped] = false;
                }
                (Some(_), None) => unreachable!("guard accepts a full step when no partial step exists"),
            }
        }
    }
}
