//! Homogeneous self-dual interior-point solver for Hermitian block SDPs.
//!
//! Mehrotra predictor-corrector with Nesterov-Todd scaling, dense real
//! Cholesky on the Schur complement, and infeasibility certificates read
//! off the homogeneous embedding. Problems here are small (total
//! dimension ≤ 400) and dense, so everything is written for robustness
//! rather than asymptotics.

use crate::error::{Error, Result};
use crate::linalg::{C64, ComplexMatrix, ZERO};
use crate::sdp::types::*;

/// Per-block Nesterov-Todd scaling data.
struct NtScaling {
    /// R with R† s R = R⁻¹ x R⁻† = Λ.
    r: ComplexMatrix,
    /// W = R R†.
    w: ComplexMatrix,
    /// Diagonal of Λ.
    lambda: Vec<f64>,
}

struct BlockVec {
    blocks: Vec<ComplexMatrix>,
}

impl BlockVec {
    fn identity(dims: &[usize]) -> Self {
        BlockVec {
            blocks: dims.iter().map(|&d| ComplexMatrix::identity(d)).collect(),
        }
    }

    fn zeros(dims: &[usize]) -> Self {
        BlockVec {
            blocks: dims.iter().map(|&d| ComplexMatrix::zeros(d, d)).collect(),
        }
    }

    fn inner(&self, other: &BlockVec) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| {
                let mut acc = 0.0;
                for r in 0..a.rows {
                    for c in 0..a.cols {
                        acc += (a.at(r, c) * b.at(c, r)).re;
                    }
                }
                acc
            })
            .sum()
    }

    fn axpy(&mut self, alpha: f64, other: &BlockVec) {
        let a = C64::new(alpha, 0.0);
        for (x, d) in self.blocks.iter_mut().zip(&other.blocks) {
            *x = x.add(&d.scale(a));
        }
    }

    fn scale(&self, alpha: f64) -> BlockVec {
        let a = C64::new(alpha, 0.0);
        BlockVec {
            blocks: self.blocks.iter().map(|b| b.scale(a)).collect(),
        }
    }

    fn norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.frobenius().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// ⟨A_i, x⟩ for every constraint.
fn apply_a(p: &SdpProblem, x: &BlockVec) -> Vec<f64> {
    p.constraints
        .iter()
        .map(|con| {
            con.entries
                .iter()
                .map(|&(b, r, c, v)| (v * x.blocks[b].at(c, r)).re)
                .sum()
        })
        .collect()
}

/// Σ_i y_i A_i as dense blocks.
fn apply_at(p: &SdpProblem, y: &[f64]) -> BlockVec {
    let mut out = BlockVec::zeros(&p.block_dims);
    for (con, &yi) in p.constraints.iter().zip(y) {
        if yi == 0.0 {
            continue;
        }
        for &(b, r, c, v) in &con.entries {
            let cur = out.blocks[b].at(r, c);
            out.blocks[b].set(r, c, cur + v * yi);
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cholesky of a Hermitian PSD matrix with escalating ridge.
fn chol_with_ridge(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let scale = m.frobenius().max(1.0);
    let mut ridge = 0.0;
    loop {
        let shifted = if ridge == 0.0 {
            m.clone()
        } else {
            let mut s = m.clone();
            for i in 0..s.rows {
                let v = s.at(i, i) + C64::new(ridge * scale, 0.0);
                s.set(i, i, v);
            }
            s
        };
        match shifted.cholesky(0.0) {
            Ok(l) => return Ok(l),
            Err(_) => {
                ridge = if ridge == 0.0 { 1e-14 } else { ridge * 100.0 };
                if ridge > 1e-6 {
                    return Err(Error::Numerical(
                        "cholesky failed even with ridge".into(),
                    ));
                }
            }
        }
    }
}

fn nt_scaling(x: &ComplexMatrix, s: &ComplexMatrix) -> Result<NtScaling> {
    let lx = chol_with_ridge(x)?;
    let ls = chol_with_ridge(s)?;
    let prod = ls.adjoint().matmul(&lx);
    let (sv, _u, v) = prod.svd()?;
    let n = x.rows;
    let mut r = ComplexMatrix::zeros(n, n);
    // R = L_x V Σ^{-1/2}
    let lxv = lx.matmul(&v);
    for j in 0..n {
        let sc = sv[j].max(1e-300).sqrt();
        for i in 0..n {
            r.set(i, j, lxv.at(i, j) / sc);
        }
    }
    let w = r.matmul(&r.adjoint());
    Ok(NtScaling {
        r,
        w,
        lambda: sv,
    })
}

/// W z W per block.
fn conj_w(scal: &[NtScaling], z: &BlockVec) -> BlockVec {
    BlockVec {
        blocks: scal
            .iter()
            .zip(&z.blocks)
            .map(|(s, b)| s.w.matmul(b).matmul(&s.w))
            .collect(),
    }
}

/// Numerically inside the PSD cone (tiny negative eigenvalues from
/// roundoff are tolerated).
fn in_cone(v: &BlockVec) -> bool {
    v.blocks.iter().all(|b| {
        b.min_eig()
            .map(|e| e >= -1e-9 * (1.0 + b.frobenius()))
            .unwrap_or(false)
    })
}

/// Hermitian part of M.
fn herm_part(m: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(m.rows, m.cols, |r, c| {
        (m.at(r, c) + m.at(c, r).conj()) * 0.5
    })
}

/// Largest step α ≤ cap with Λ + α D ⪰ 0, where D is Hermitian and Λ a
/// positive diagonal. Returns cap if unconstrained.
fn max_step(lambda: &[f64], d: &ComplexMatrix, cap: f64) -> Result<f64> {
    let n = lambda.len();
    let scaled = ComplexMatrix::from_fn(n, n, |r, c| {
        d.at(r, c) / (lambda[r].max(1e-300).sqrt() * lambda[c].max(1e-300).sqrt())
    });
    let sym = herm_part(&scaled);
    let (w, _) = sym.herm_eig()?;
    let min = *w.last().unwrap_or(&0.0);
    if min >= 0.0 {
        Ok(cap)
    } else {
        Ok(cap.min(-1.0 / min))
    }
}

struct Direction {
    dx_bar: BlockVec,
    ds_bar: BlockVec,
    dy: Vec<f64>,
    dtau: f64,
    dkappa: f64,
    /// Unscaled Δx and Δs for updating the iterate.
    dx: BlockVec,
    ds: BlockVec,
}

#[allow(clippy::too_many_arguments)]
fn newton_direction(
    p: &SdpProblem,
    scal: &[NtScaling],
    schur_l: &ComplexMatrix,
    a_wcw: &[f64],
    c_wcw: f64,
    b: &[f64],
    z2: &[f64],
    tau: f64,
    kappa: f64,
    u_p: &[f64],
    u_d: &BlockVec,
    u_g: f64,
    u_c_mat: &[ComplexMatrix],
    u_tk: f64,
) -> Result<Direction> {
    let m = p.constraints.len();
    // g = D(u_c): entrywise divide by (λ_i + λ_j)/2
    let g = BlockVec {
        blocks: scal
            .iter()
            .zip(u_c_mat)
            .map(|(sc, um)| {
                ComplexMatrix::from_fn(um.rows, um.cols, |r, c| {
                    um.at(r, c) / ((sc.lambda[r] + sc.lambda[c]) * 0.5)
                })
            })
            .collect(),
    };
    // E = R g R†
    let e = BlockVec {
        blocks: scal
            .iter()
            .zip(&g.blocks)
            .map(|(sc, gb)| sc.r.matmul(gb).matmul(&sc.r.adjoint()))
            .collect(),
    };
    let wudw = conj_w(scal, u_d);
    let mut h = e.clone_vec();
    h.axpy(1.0, &wudw);
    let ah = apply_a(p, &h);
    let r1: Vec<f64> = (0..m).map(|i| u_p[i] - ah[i]).collect();
    let z1 = solve_schur(schur_l, &r1);
    let c_h = objective_inner(p, &h);
    let denom = dot(b, z2) - dot(a_wcw, z2) + c_wcw + kappa / tau;
    let numer = u_g + c_h + dot(a_wcw, &z1) - dot(b, &z1) + u_tk / tau;
    if denom.abs() < 1e-300 {
        return Err(Error::Numerical("singular Newton system (dtau)".into()));
    }
    let dtau = numer / denom;
    let dy: Vec<f64> = (0..m).map(|i| z1[i] + dtau * z2[i]).collect();
    // Δs = −AᵀΔy + cΔτ − u_d
    let mut ds = apply_at(p, &dy).scale(-1.0);
    for (b_i, (dsb, ob)) in ds.blocks.iter_mut().zip(&p.objective).enumerate() {
        let _ = b_i;
        *dsb = dsb.add(&ob.scale(C64::new(dtau, 0.0)));
    }
    ds.axpy(-1.0, u_d);
    // Δx = E − W Δs W
    let wdsw = conj_w(scal, &ds);
    let mut dx = e.clone_vec();
    dx.axpy(-1.0, &wdsw);
    let dkappa = (u_tk - kappa * dtau) / tau;
    // scaled directions for step-length and corrector use
    let ds_bar = BlockVec {
        blocks: scal
            .iter()
            .zip(&ds.blocks)
            .map(|(sc, d)| herm_part(&sc.r.adjoint().matmul(d).matmul(&sc.r)))
            .collect(),
    };
    let dx_bar = BlockVec {
        blocks: g
            .blocks
            .iter()
            .zip(&ds_bar.blocks)
            .map(|(gb, db)| gb.sub(db))
            .collect(),
    };
    Ok(Direction {
        dx_bar,
        ds_bar,
        dy,
        dtau,
        dkappa,
        dx,
        ds,
    })
}

impl BlockVec {
    fn clone_vec(&self) -> BlockVec {
        BlockVec {
            blocks: self.blocks.clone(),
        }
    }
}

fn objective_inner(p: &SdpProblem, x: &BlockVec) -> f64 {
    p.objective
        .iter()
        .zip(&x.blocks)
        .map(|(c, xb)| {
            let mut acc = 0.0;
            for r in 0..c.rows {
                for cc in 0..c.cols {
                    acc += (c.at(r, cc) * xb.at(cc, r)).re;
                }
            }
            acc
        })
        .sum()
}

fn solve_schur(l: &ComplexMatrix, rhs: &[f64]) -> Vec<f64> {
    if rhs.is_empty() {
        return Vec::new();
    }
    let b = ComplexMatrix::from_fn(rhs.len(), 1, |r, _| C64::new(rhs[r], 0.0));
    let y = l.solve_lower(&b);
    let x = l.solve_lower_adjoint(&y);
    (0..rhs.len()).map(|i| x.at(i, 0).re).collect()
}

/// Assemble the Schur complement M_ij = ⟨A_i, W A_j W⟩ and factor it.
fn schur_factor(p: &SdpProblem, scal: &[NtScaling]) -> Result<ComplexMatrix> {
    let m = p.constraints.len();
    if m == 0 {
        return Ok(ComplexMatrix::zeros(0, 0));
    }
    let mut mat = ComplexMatrix::zeros(m, m);
    // W A_j W via rank-structured accumulation over the sparse entries of A_j
    for j in 0..m {
        let mut wajw = BlockVec::zeros(&p.block_dims);
        for &(b, r, c, v) in &p.constraints[j].entries {
            let w = &scal[b].w;
            let n = w.rows;
            let target = &mut wajw.blocks[b];
            // v · W[:,r] W[c,:]
            for i in 0..n {
                let wir = w.at(i, r) * v;
                if wir == ZERO {
                    continue;
                }
                for k in 0..n {
                    let cur = target.at(i, k);
                    target.set(i, k, cur + wir * w.at(c, k));
                }
            }
        }
        for i in j..m {
            let mut acc = 0.0;
            for &(b, r, c, v) in &p.constraints[i].entries {
                acc += (v * wajw.blocks[b].at(c, r)).re;
            }
            mat.set(i, j, C64::new(acc, 0.0));
            mat.set(j, i, C64::new(acc, 0.0));
        }
    }
    let scale = mat.frobenius().max(1.0);
    let mut ridge = 0.0;
    loop {
        let shifted = if ridge == 0.0 {
            mat.clone()
        } else {
            let mut s = mat.clone();
            for i in 0..m {
                let v = s.at(i, i) + C64::new(ridge * scale, 0.0);
                s.set(i, i, v);
            }
            s
        };
        match shifted.cholesky(0.0) {
            Ok(l) => return Ok(l),
            Err(_) => {
                ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
                if ridge > 1e-6 {
                    return Err(Error::Numerical("Schur complement not PD".into()));
                }
            }
        }
    }
}

/// Solve an SDP to the requested duality-gap tolerance.
pub fn solve_sdp(p: &SdpProblem, sdp_tol: f64) -> Result<SdpSolution> {
    solve_sdp_with(p, sdp_tol, DEFAULT_DIM_LIMIT, DEFAULT_MAX_ITER)
}

pub fn solve_sdp_with(
    p: &SdpProblem,
    sdp_tol: f64,
    dim_limit: usize,
    max_iter: usize,
) -> Result<SdpSolution> {
    if sdp_tol <= 0.0 {
        return Err(Error::Precondition("sdp_tol must be positive".into()));
    }
    p.validate(dim_limit)?;
    let m = p.constraints.len();
    let b: Vec<f64> = p.constraints.iter().map(|c| c.rhs).collect();
    let nu: f64 = p.block_dims.iter().sum::<usize>() as f64;

    let mut x = BlockVec::identity(&p.block_dims);
    let mut s = BlockVec::identity(&p.block_dims);
    let mut y = vec![0.0; m];
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let b_norm = 1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let c_norm = 1.0
        + p.objective
            .iter()
            .map(|c| c.max_abs())
            .fold(0.0, f64::max);

    let mut best: Option<SdpSolution> = None;
    let mut best_merit = f64::INFINITY;
    let mut stall_steps = 0usize;
    for iter in 0..max_iter {
        // residuals of the homogeneous system
        let ax = apply_a(p, &x);
        let r_p: Vec<f64> = (0..m).map(|i| ax[i] - b[i] * tau).collect();
        let aty = apply_at(p, &y);
        let mut r_d = aty.scale(-1.0);
        for (rb, ob) in r_d.blocks.iter_mut().zip(&p.objective) {
            *rb = rb.add(&ob.scale(C64::new(tau, 0.0)));
        }
        r_d.axpy(-1.0, &s);
        let pcost_h = objective_inner(p, &x);
        let r_g = dot(&b, &y) - pcost_h - kappa;

        let pcost = pcost_h / tau;
        let dcost = dot(&b, &y) / tau;
        let gap = x.inner(&s) / (tau * tau);
        let pres = r_p.iter().map(|v| v.abs()).fold(0.0, f64::max) / (tau * b_norm);
        let dres = r_d.norm() / (tau * c_norm);
        let relgap = gap / (1.0f64).max(pcost.abs().min(dcost.abs()));

        let current = SdpSolution {
            status: SdpStatus::MaxIter,
            primal_blocks: x.scale(1.0 / tau).blocks.clone(),
            dual_vector: y.iter().map(|v| v / tau).collect(),
            primal_value: pcost,
            dual_value: dcost,
            gap: gap.max(0.0),
            iterations: iter,
        };

        if pres <= sdp_tol && dres <= sdp_tol && (gap <= sdp_tol || relgap <= sdp_tol) {
            let mut sol = current;
            sol.status = SdpStatus::Optimal;
            return Ok(sol);
        }

        // remember the best sane iterate; near machine precision the
        // residuals can look tiny while the cone membership is already
        // lost to roundoff, so check it before trusting the merit
        let merit = pres.max(dres).max(relgap.min(gap.abs()));
        if merit < best_merit && in_cone(&x) && in_cone(&s) {
            best_merit = merit;
            best = Some(current);
        }


        // certificate checks once the homogeneous variables collapse
        if tau <= 1e-8 * kappa.max(1.0) {
            let by = dot(&b, &y);
            let y_scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if by > 0.0 && y_scale > 0.0 {
                let yhat: Vec<f64> = y.iter().map(|v| v / y_scale).collect();
                let shat = apply_at(p, &yhat).scale(-1.0);
                let neg = shat
                    .blocks
                    .iter()
                    .map(|m| m.min_eig().unwrap_or(f64::NEG_INFINITY))
                    .fold(f64::INFINITY, f64::min);
                if neg >= -sdp_tol && by / y_scale > 10.0 * sdp_tol {
                    return Ok(SdpSolution {
                        status: SdpStatus::Infeasible,
                        primal_blocks: shat.blocks,
                        dual_vector: yhat,
                        primal_value: f64::INFINITY,
                        dual_value: by / y_scale,
                        gap: f64::INFINITY,
                        iterations: iter,
                    });
                }
            }
            let cx = objective_inner(p, &x);
            if cx < 0.0 {
                let x_scale = -cx;
                let xhat = x.scale(1.0 / x_scale);
                let axh = apply_a(p, &xhat);
                let axnorm = axh.iter().map(|v| v.abs()).fold(0.0, f64::max);
                if axnorm <= sdp_tol * 10.0 {
                    return Ok(SdpSolution {
                        status: SdpStatus::Unbounded,
                        primal_blocks: xhat.blocks,
                        dual_vector: y.clone(),
                        primal_value: f64::NEG_INFINITY,
                        dual_value: f64::NEG_INFINITY,
                        gap: f64::INFINITY,
                        iterations: iter,
                    });
                }
            }
        }

        // below this no double-precision progress is possible; only
        // applies while τ is healthy, collapse is certificate territory
        let mu_now = (x.inner(&s) + tau * kappa) / (nu + 1.0);
        if tau > 1e-6 * kappa.max(1.0) && mu_now.abs() <= 1e-15 * (1.0 + pcost.abs()) {
            break;
        }

        // NT scaling and Schur factorization; breakdown this close to
        // the boundary means the iterate will not improve further, so
        // fall back to the best one seen
        let step = (|| -> Result<(Direction, f64)> {
            let scal: Vec<NtScaling> = x
                .blocks
                .iter()
                .zip(&s.blocks)
                .map(|(xb, sb)| nt_scaling(xb, sb))
                .collect::<Result<_>>()?;
            let schur_l = schur_factor(p, &scal)?;
        let c_blocks = BlockVec {
            blocks: p.objective.clone(),
        };
        let wcw = conj_w(&scal, &c_blocks);
        let a_wcw = apply_a(p, &wcw);
        let c_wcw = objective_inner(p, &wcw);
        let rhs2: Vec<f64> = (0..m).map(|i| b[i] + a_wcw[i]).collect();
        let z2 = solve_schur(&schur_l, &rhs2);

        let mu = (x.inner(&s) + tau * kappa) / (nu + 1.0);

        // predictor (affine) direction
        let u_p_aff: Vec<f64> = r_p.iter().map(|v| -v).collect();
        let u_d_aff = r_d.scale(-1.0);
        let u_g_aff = -r_g;
        let u_c_aff: Vec<ComplexMatrix> = scal
            .iter()
            .map(|sc| {
                ComplexMatrix::from_fn(sc.lambda.len(), sc.lambda.len(), |r, c| {
                    if r == c {
                        C64::new(-sc.lambda[r] * sc.lambda[r], 0.0)
                    } else {
                        ZERO
                    }
                })
            })
            .collect();
        let aff = newton_direction(
            p, &scal, &schur_l, &a_wcw, c_wcw, &b, &z2, tau, kappa, &u_p_aff, &u_d_aff,
            u_g_aff, &u_c_aff, -tau * kappa,
        )?;

        // affine step length
        let mut alpha_aff = 1.0f64;
        for (bi, sc) in scal.iter().enumerate() {
            alpha_aff = max_step(&sc.lambda, &aff.dx_bar.blocks[bi], alpha_aff)?;
            alpha_aff = max_step(&sc.lambda, &aff.ds_bar.blocks[bi], alpha_aff)?;
        }
        if aff.dtau < 0.0 {
            alpha_aff = alpha_aff.min(-tau / aff.dtau);
        }
        if aff.dkappa < 0.0 {
            alpha_aff = alpha_aff.min(-kappa / aff.dkappa);
        }

        let gap_now = x.inner(&s) + tau * kappa;
        let mut gap_aff = 0.0;
        {
            // ⟨x + αΔx, s + αΔs⟩ + (τ+αΔτ)(κ+αΔκ) in scaled coordinates
            let a = alpha_aff;
            for (bi, sc) in scal.iter().enumerate() {
                let n = sc.lambda.len();
                for r in 0..n {
                    for c in 0..n {
                        let xe = if r == c {
                            C64::new(sc.lambda[r], 0.0) + aff.dx_bar.blocks[bi].at(r, c) * a
                        } else {
                            aff.dx_bar.blocks[bi].at(r, c) * a
                        };
                        let se = if r == c {
                            C64::new(sc.lambda[r], 0.0) + aff.ds_bar.blocks[bi].at(r, c) * a
                        } else {
                            aff.ds_bar.blocks[bi].at(r, c) * a
                        };
                        gap_aff += (xe.conj() * se).re;
                    }
                }
            }
            gap_aff += (tau + a * aff.dtau) * (kappa + a * aff.dkappa);
        }
        let sigma = (gap_aff / gap_now).clamp(0.0, 1.0).powi(3);

        // combined direction
        let one_minus = 1.0 - sigma;
        let u_p: Vec<f64> = r_p.iter().map(|v| -one_minus * v).collect();
        let u_d = r_d.scale(-one_minus);
        let u_g = -one_minus * r_g;
        let u_c: Vec<ComplexMatrix> = scal
            .iter()
            .enumerate()
            .map(|(bi, sc)| {
                let prod = aff.dx_bar.blocks[bi].matmul(&aff.ds_bar.blocks[bi]);
                let corr = herm_part(&prod);
                ComplexMatrix::from_fn(sc.lambda.len(), sc.lambda.len(), |r, c| {
                    let base = if r == c {
                        C64::new(sigma * mu - sc.lambda[r] * sc.lambda[r], 0.0)
                    } else {
                        ZERO
                    };
                    base - corr.at(r, c)
                })
            })
            .collect();
        let u_tk = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
        let dir = newton_direction(
            p, &scal, &schur_l, &a_wcw, c_wcw, &b, &z2, tau, kappa, &u_p, &u_d, u_g, &u_c,
            u_tk,
        )?;

            let mut alpha = 1.0f64;
            for (bi, sc) in scal.iter().enumerate() {
                alpha = max_step(&sc.lambda, &dir.dx_bar.blocks[bi], alpha)?;
                alpha = max_step(&sc.lambda, &dir.ds_bar.blocks[bi], alpha)?;
            }
            if dir.dtau < 0.0 {
                alpha = alpha.min(-tau / dir.dtau);
            }
            if dir.dkappa < 0.0 {
                alpha = alpha.min(-kappa / dir.dkappa);
            }
            let alpha = (0.99 * alpha).min(1.0);
            Ok((dir, alpha))
        })();
        let (dir, alpha) = match step {
            Ok(v) => v,
            Err(Error::Numerical(_)) => break,
            Err(e) => return Err(e),
        };

        if alpha <= 1e-5 {
            stall_steps += 1;
            if stall_steps >= 2 {
                break;
            }
        } else {
            stall_steps = 0;
        }

        x.axpy(alpha, &dir.dx);
        s.axpy(alpha, &dir.ds);
        for i in 0..m {
            y[i] += alpha * dir.dy[i];
        }
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
        // keep blocks exactly Hermitian against roundoff drift
        for bvec in [&mut x, &mut s] {
            for blk in bvec.blocks.iter_mut() {
                *blk = herm_part(blk);
            }
        }
    }

    Ok(best.unwrap())
}

/// Real symmetric embedding of a Hermitian problem: every complex block
/// X becomes [[Re X, −Im X],[Im X, Re X]], doubling values. Test oracle
/// for the complex path.
pub fn embed_real(p: &SdpProblem) -> SdpProblem {
    let embed = |m: &ComplexMatrix| -> ComplexMatrix {
        let n = m.rows;
        ComplexMatrix::from_fn(2 * n, 2 * n, |r, c| {
            let (ri, ci) = (r % n, c % n);
            let v = m.at(ri, ci);
            match (r / n, c / n) {
                (0, 0) | (1, 1) => C64::new(v.re, 0.0),
                (0, 1) => C64::new(-v.im, 0.0),
                _ => C64::new(v.im, 0.0),
            }
        })
    };
    let mut out = SdpProblem::new(p.block_dims.iter().map(|&d| 2 * d).collect());
    out.objective = p.objective.iter().map(embed).collect();
    for con in &p.constraints {
        let mut newcon = SdpConstraint::new(2.0 * con.rhs);
        for (b, &dim) in p.block_dims.iter().enumerate() {
            let dense = con.block_matrix(b, dim);
            let emb = embed(&dense);
            for r in 0..emb.rows {
                for c in 0..emb.cols {
                    let v = emb.at(r, c);
                    if v != ZERO {
                        newcon.entries.push((b, r, c, v));
                    }
                }
            }
        }
        out.constraints.push(newcon);
    }
    out
}
