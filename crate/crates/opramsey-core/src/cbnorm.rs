//! Completely bounded norms with two-sided certificates, Choi matrices
//! and complete positivity, injective extension of complete
//! contractions, and complete-isometry recognition for tuples.
//!
//! The upper bound comes from the Paulsen off-diagonal characterization:
//! ‖f‖_cb ≤ t iff the block matrix [[C₁, G], [G†, C₂]] admits a PSD
//! completion where G is any Choi matrix agreeing with f on its domain
//! and the partial traces of C₁, C₂ are ⪯ t·I. Minimizing t directly is
//! a single SDP whose optimum is exactly the cb norm; its solution
//! doubles as the extension used by `extend_cc`. Lower bounds come from
//! multi-start alternating ascent over unit balls at a fixed matrix
//! level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, ComplexMatrix};
use crate::sdp::{solve_sdp, SdpConstraint, SdpProblem, SdpSolution, SdpStatus};
use crate::space::{
    delta_defect, random_element, BlockLinearMap, Category, SpaceDescriptor, SpaceElement,
};

pub const DEFAULT_CB_TOL: f64 = 1e-6;
/// delta_defect at or below this counts as a complete isometry.
pub const COMPLETE_ISOMETRY_TOL: f64 = 1e-6;

const ASCENT_STARTS: usize = 10;
const ASCENT_ITERS: usize = 60;
const CB_SDP_TOL: f64 = 1e-9;

/// Square blocks embed as themselves, rectangular ones as corners of
/// M_{q+s}; either way the embedding is completely isometric and the
/// ambient is a full matrix algebra, which is what the extension SDP
/// needs.
pub(crate) fn embedded_side(q: usize, s: usize) -> usize {
    if q == s {
        q
    } else {
        q + s
    }
}

pub(crate) fn embedded_dim(desc: &SpaceDescriptor) -> usize {
    desc.blocks.iter().map(|&(q, s)| embedded_side(q, s)).sum()
}

/// Ambient N×N matrix realizing a block tuple.
pub(crate) fn embed_tuple(desc: &SpaceDescriptor, tuple: &[ComplexMatrix]) -> ComplexMatrix {
    let n = embedded_dim(desc);
    let mut out = ComplexMatrix::zeros(n, n);
    let mut off = 0;
    for (m, &(q, s)) in tuple.iter().zip(&desc.blocks) {
        let col0 = if q == s { off } else { off + q };
        for r in 0..q {
            for c in 0..s {
                out.set(off + r, col0 + c, m.at(r, c));
            }
        }
        off += embedded_side(q, s);
    }
    out
}

pub(crate) fn embed_single(q: usize, s: usize, m: &ComplexMatrix) -> ComplexMatrix {
    let k = embedded_side(q, s);
    let mut out = ComplexMatrix::zeros(k, k);
    let col0 = if q == s { 0 } else { q };
    for r in 0..q {
        for c in 0..s {
            out.set(r, col0 + c, m.at(r, c));
        }
    }
    out
}

pub(crate) fn extract_single(q: usize, s: usize, big: &ComplexMatrix) -> ComplexMatrix {
    let col0 = if q == s { 0 } else { q };
    big.submatrix(0, col0, q, s)
}

/// One codomain coordinate solved to optimality.
struct BlockSolve {
    t: f64,
    solution: SdpSolution,
    ambient_dim: usize,
    codomain_side: usize,
}

/// min t s.t. [[C₁,G],[G†,C₂]] ⪰ 0, G agrees with the target Choi data
/// on the domain span, Tr_N C₁ ⪯ t·I_k, Tr_N C₂ ⪯ t·I_k.
fn min_t_extension_sdp(
    embedded_basis: &[ComplexMatrix],
    targets: &[ComplexMatrix],
    n: usize,
    k: usize,
) -> SdpProblem {
    let nk = n * k;
    // blocks: the Paulsen matrix Z, two partial-trace slacks, and t
    let mut p = SdpProblem::new(vec![2 * nk, k, k, 1]);
    p.objective[3].set(0, 0, C64::new(1.0, 0.0));
    for (bt, target) in embedded_basis.iter().zip(targets) {
        for a in 0..k {
            for b in 0..k {
                // tr over the lower-left block against b^T ⊗ E_ba picks
                // out the extension value at (a,b); the Hermitian split
                // yields one constraint for the real part, one for the
                // imaginary part
                let mut re = SdpConstraint::new(2.0 * target.at(a, b).re);
                let mut im = SdpConstraint::new(-2.0 * target.at(a, b).im);
                for i in 0..n {
                    for j in 0..n {
                        let v = bt.at(j, i);
                        if v == C64::new(0.0, 0.0) {
                            continue;
                        }
                        let row = nk + i * k + b;
                        let col = j * k + a;
                        re.push_herm(0, row, col, v);
                        im.push_herm(0, row, col, C64::new(0.0, 1.0) * v);
                    }
                }
                p.constraints.push(re);
                p.constraints.push(im);
            }
        }
    }
    for (slack, base) in [(1usize, 0usize), (2, nk)] {
        for a in 0..k {
            let mut diag = SdpConstraint::new(0.0);
            for i in 0..n {
                diag.push_herm(0, base + i * k + a, base + i * k + a, C64::new(1.0, 0.0));
            }
            diag.push_herm(slack, a, a, C64::new(1.0, 0.0));
            diag.push_herm(3, 0, 0, C64::new(-1.0, 0.0));
            p.constraints.push(diag);
            for b in a + 1..k {
                let mut re = SdpConstraint::new(0.0);
                let mut im = SdpConstraint::new(0.0);
                for i in 0..n {
                    re.push_herm(0, base + i * k + b, base + i * k + a, C64::new(0.5, 0.0));
                    im.push_herm(0, base + i * k + b, base + i * k + a, C64::new(0.0, 0.5));
                }
                re.push_herm(slack, b, a, C64::new(0.5, 0.0));
                im.push_herm(slack, b, a, C64::new(0.0, 0.5));
                p.constraints.push(re);
                p.constraints.push(im);
            }
        }
    }
    p
}

fn solve_block(f: &BlockLinearMap, block: usize) -> Result<BlockSolve> {
    let n = embedded_dim(&f.domain);
    let (q, s) = f.codomain.blocks[block];
    let k = embedded_side(q, s);
    let basis = f.domain.basis_tuples();
    let embedded_basis: Vec<ComplexMatrix> =
        basis.iter().map(|b| embed_tuple(&f.domain, b)).collect();
    let targets: Vec<ComplexMatrix> = (0..f.domain.dim())
        .map(|beta| embed_single(q, s, &f.image_of_basis(beta)[block]))
        .collect();
    let p = min_t_extension_sdp(&embedded_basis, &targets, n, k);
    let solution = solve_sdp(&p, CB_SDP_TOL)?;
    match solution.status {
        SdpStatus::Optimal => {}
        SdpStatus::MaxIter
            if solution.gap <= 5e-7 && solution.primal_residual(&p) <= 1e-6 => {}
        other => {
            return Err(Error::Numerical(format!(
                "extension SDP ended with status {other:?} (gap {:.3e}, {} iterations)",
                solution.gap, solution.iterations
            )))
        }
    }
    Ok(BlockSolve {
        t: solution.primal_value,
        solution,
        ambient_dim: n,
        codomain_side: k,
    })
}

/// Read the extension off the optimal Paulsen matrix: its upper-right
/// block is the Choi matrix of a cb-optimal extension of the given
/// codomain coordinate, compressed back to the coordinate's corner.
fn extension_from_solve(
    f: &BlockLinearMap,
    block: usize,
    solve: &BlockSolve,
) -> Result<BlockLinearMap> {
    let n = solve.ambient_dim;
    let k = solve.codomain_side;
    let (q, s) = f.codomain.blocks[block];
    let z = &solve.solution.primal_blocks[0];
    let full_domain = SpaceDescriptor::full(f.domain.blocks.clone(), Category::Osp);
    let codomain = SpaceDescriptor::full(vec![(q, s)], Category::Osp);
    let mut action = ComplexMatrix::zeros(q * s, full_domain.ambient_dim());
    let mut col = 0;
    let mut off = 0;
    for &(dq, ds) in &full_domain.blocks {
        let col0 = if dq == ds { off } else { off + dq };
        for r in 0..dq {
            for c in 0..ds {
                // embedded unit has its single entry at (off+r, col0+c)
                let gi = off + r;
                let gj = col0 + c;
                let mut value = ComplexMatrix::zeros(k, k);
                for a in 0..k {
                    for b in 0..k {
                        value.set(a, b, z.at(gi * k + a, n * k + gj * k + b));
                    }
                }
                let small = extract_single(q, s, &value);
                for r2 in 0..q {
                    for c2 in 0..s {
                        action.set(r2 * s + c2, col, small.at(r2, c2));
                    }
                }
                col += 1;
            }
        }
        off += embedded_side(dq, ds);
    }
    BlockLinearMap::new(full_domain, codomain, action)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerWitness {
    pub level: usize,
    pub element: SpaceElement,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CbCertificate {
    pub value: f64,
    pub lower_witness: LowerWitness,
    pub upper_witness: SdpSolution,
}

/// cb norm with a two-sided certificate. The value is the optimum of
/// the extension SDP (max over codomain coordinates); the lower witness
/// is found by ascent at level min(q,s)+1 of the maximizing coordinate.
pub fn cb_norm(f: &BlockLinearMap, tol: f64) -> Result<CbCertificate> {
    if tol <= 0.0 {
        return Err(Error::Precondition("tol must be positive".into()));
    }
    if f.dual_view.is_some() {
        return Err(Error::Precondition(
            "dual-side maps go through their predual (see duality)".into(),
        ));
    }
    if !f.codomain.is_full() {
        return Err(Error::Precondition("cb_norm needs a full codomain".into()));
    }
    let mut best: Option<(usize, BlockSolve)> = None;
    for block in 0..f.codomain.blocks.len() {
        let solve = solve_block(f, block)?;
        if best.as_ref().map(|(_, b)| solve.t > b.t).unwrap_or(true) {
            best = Some((block, solve));
        }
    }
    let (block, solve) = best.expect("codomain has at least one block");
    let (q, s) = f.codomain.blocks[block];
    let level = q.min(s) + 1;
    let coordinate = coordinate_map(f, block)?;
    let (low, element) = sample_level_norm(&coordinate, level, ASCENT_STARTS, ASCENT_ITERS, 7)?;
    Ok(CbCertificate {
        value: solve.t,
        lower_witness: LowerWitness {
            level,
            element,
            value: low,
        },
        upper_witness: solve.solution,
    })
}

/// Convenience: the value alone at the default tolerance.
pub fn cb_norm_value(f: &BlockLinearMap) -> Result<f64> {
    let mut best = 0.0f64;
    for block in 0..f.codomain.blocks.len() {
        best = best.max(solve_block(f, block)?.t);
    }
    Ok(best)
}

/// Restriction of f to one codomain coordinate.
fn coordinate_map(f: &BlockLinearMap, block: usize) -> Result<BlockLinearMap> {
    let offsets = f.codomain.offsets();
    let (q, s) = f.codomain.blocks[block];
    let action = f.action.submatrix(offsets[block], 0, q * s, f.action.cols);
    BlockLinearMap::new(
        f.domain.clone(),
        SpaceDescriptor::full(vec![(q, s)], Category::Osp),
        action,
    )
}

/// Sampled ‖f^{(level)}‖: multi-start alternating ascent over the unit
/// ball of the domain. Each step linearizes the best codomain
/// coordinate at its top singular pair and maximizes the resulting
/// functional exactly over the ball (per-block singular value
/// thresholding), projecting back into subspace domains. Returns the
/// best value found together with the witness element (norm ≤ 1): a
/// certified lower bound for ‖f‖_cb.
pub fn sample_level_norm(
    f: &BlockLinearMap,
    level: usize,
    starts: usize,
    iters: usize,
    seed: u64,
) -> Result<(f64, SpaceElement)> {
    if level == 0 {
        return Err(Error::Precondition("level must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_value = 0.0f64;
    let mut best_element: Option<SpaceElement> = None;
    // images of the domain basis, fetched once
    let images: Vec<Vec<ComplexMatrix>> =
        (0..f.domain.dim()).map(|b| f.image_of_basis(b)).collect();
    for _ in 0..starts.max(1) {
        let mut x = normalized_random(&f.domain, level, &mut rng);
        let mut last = -1.0f64;
        let mut stall = 0;
        for _ in 0..iters {
            let y = f.apply(&x)?;
            let mut blk = 0;
            let mut val = -1.0;
            for (i, m) in y.data.iter().enumerate() {
                let v = m.op_norm()?;
                if v > val {
                    val = v;
                    blk = i;
                }
            }
            if val > best_value {
                best_value = val;
                best_element = Some(x.clone());
            }
            if val <= last + 1e-13 * (1.0 + val) {
                stall += 1;
                if stall >= 3 {
                    break;
                }
            } else {
                stall = 0;
            }
            last = val;
            x = match ascent_step(f, &images, blk, level, &y.data[blk], &x)? {
                Some(next) => next,
                None => break,
            };
        }
    }
    let element = match best_element {
        Some(e) => e,
        None => SpaceElement::new(
            f.domain.clone(),
            level,
            f.domain
                .blocks
                .iter()
                .map(|&(q, s)| ComplexMatrix::zeros(level * q, level * s))
                .collect(),
        )?,
    };
    Ok((best_value, element))
}

fn normalized_random(space: &SpaceDescriptor, level: usize, rng: &mut ChaCha8Rng) -> SpaceElement {
    for _ in 0..16 {
        let x = random_element(space, level, rng);
        let n = x.level_norm().unwrap_or(0.0);
        if n > 1e-9 {
            let inv = C64::new(1.0 / n, 0.0);
            let data = x.data.iter().map(|m| m.scale(inv)).collect();
            return SpaceElement::new(space.clone(), level, data).expect("shape preserved");
        }
    }
    let data = space
        .blocks
        .iter()
        .map(|&(q, s)| ComplexMatrix::zeros(level * q, level * s))
        .collect();
    SpaceElement::new(space.clone(), level, data).expect("shape fine")
}

fn ascent_step(
    f: &BlockLinearMap,
    images: &[Vec<ComplexMatrix>],
    blk: usize,
    m: usize,
    y_blk: &ComplexMatrix,
    current: &SpaceElement,
) -> Result<Option<SpaceElement>> {
    let (vals, u, v) = y_blk.svd()?;
    if vals.is_empty() {
        return Ok(None);
    }
    let (cq, cs) = f.codomain.blocks[blk];
    // rank-one functional x' ↦ Re u† f^{(m)}(x') v
    let mut r = ComplexMatrix::zeros(y_blk.rows, y_blk.cols);
    for a in 0..y_blk.rows {
        for b in 0..y_blk.cols {
            r.set(a, b, u.at(a, 0) * v.at(b, 0).conj());
        }
    }
    // pull back through the map: L_β[a,b] = conj ⟨R_ab, f(b_β)⟩
    let dim = f.domain.dim();
    let mut coeff = vec![ComplexMatrix::zeros(m, m); dim];
    for beta in 0..dim {
        let img = &images[beta][blk];
        if img.max_abs() == 0.0 {
            continue;
        }
        for a in 0..m {
            for b in 0..m {
                let mut t = C64::new(0.0, 0.0);
                for rr in 0..cq {
                    for cc in 0..cs {
                        t += r.at(a * cq + rr, b * cs + cc).conj() * img.at(rr, cc);
                    }
                }
                coeff[beta].set(a, b, t.conj());
            }
        }
    }
    // assemble the functional as a domain-shaped level-m tuple and
    // maximize over the ball blockwise: argmax is U V† of its SVD
    let basis = f.domain.basis_tuples();
    let mut grad: Vec<ComplexMatrix> = f
        .domain
        .blocks
        .iter()
        .map(|&(q, s)| ComplexMatrix::zeros(m * q, m * s))
        .collect();
    for beta in 0..dim {
        if coeff[beta].max_abs() == 0.0 {
            continue;
        }
        for (bi, &(q, s)) in f.domain.blocks.iter().enumerate() {
            let bmat = &basis[beta][bi];
            if bmat.max_abs() == 0.0 {
                continue;
            }
            for a in 0..m {
                for b in 0..m {
                    let c = coeff[beta].at(a, b);
                    if c == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for rr in 0..q {
                        for cc in 0..s {
                            let cur = grad[bi].at(a * q + rr, b * s + cc);
                            grad[bi].set(a * q + rr, b * s + cc, cur + c * bmat.at(rr, cc));
                        }
                    }
                }
            }
        }
    }
    let mut data = Vec::with_capacity(grad.len());
    for g in &grad {
        if g.max_abs() < 1e-14 {
            data.push(ComplexMatrix::zeros(g.rows, g.cols));
            continue;
        }
        let (_, gu, gv) = g.svd()?;
        data.push(gu.matmul(&gv.adjoint()));
    }
    let candidate = SpaceElement::new(current.space.clone(), m, data)?;
    if f.domain.is_full() {
        return Ok(Some(candidate));
    }
    // subspace domain: project onto M_m(span) and renormalize
    let (_, coeffs) = candidate.span_coefficients();
    let mut projected: Vec<ComplexMatrix> = f
        .domain
        .blocks
        .iter()
        .map(|&(q, s)| ComplexMatrix::zeros(m * q, m * s))
        .collect();
    for (beta, cmat) in coeffs.iter().enumerate() {
        if cmat.max_abs() == 0.0 {
            continue;
        }
        for (bi, bmat) in basis[beta].iter().enumerate() {
            if bmat.max_abs() == 0.0 {
                continue;
            }
            projected[bi] = projected[bi].add(&cmat.kron(bmat));
        }
    }
    let e = SpaceElement::new(current.space.clone(), m, projected)?;
    let n = e.level_norm()?;
    if n < 1e-10 {
        return Ok(None);
    }
    let inv = C64::new(1.0 / n, 0.0);
    let data = e.data.iter().map(|mm| mm.scale(inv)).collect();
    Ok(Some(SpaceElement::new(current.space.clone(), m, data)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiMatrix {
    pub matrix: ComplexMatrix,
    pub domain_dim: usize,
    pub codomain_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiAnalysis {
    pub choi: ChoiMatrix,
    pub is_cp: bool,
    pub min_eig: f64,
}

/// Choi matrix C = Σ E_ij ⊗ φ(E_ij) over the block-diagonal domain
/// algebra, and the PSD test for complete positivity.
pub fn choi_and_cp(f: &BlockLinearMap) -> Result<ChoiAnalysis> {
    if !f.domain.is_full() || !f.codomain.is_full() {
        return Err(Error::Precondition(
            "Choi analysis needs full domain and codomain".into(),
        ));
    }
    if !f.domain.all_square() || !f.codomain.all_square() {
        return Err(Error::Dimension(
            "Choi analysis needs square block algebras".into(),
        ));
    }
    let n: usize = f.domain.blocks.iter().map(|&(q, _)| q).sum();
    let k: usize = f.codomain.blocks.iter().map(|&(q, _)| q).sum();
    let mut c = ComplexMatrix::zeros(n * k, n * k);
    let mut beta = 0;
    let mut row_off = 0;
    for &(q, _) in &f.domain.blocks {
        for r in 0..q {
            for col in 0..q {
                let img = f.image_of_basis(beta);
                let y = block_diag_embed(&img);
                for a in 0..k {
                    for b in 0..k {
                        let v = y.at(a, b);
                        if v != C64::new(0.0, 0.0) {
                            c.set((row_off + r) * k + a, (row_off + col) * k + b, v);
                        }
                    }
                }
                beta += 1;
            }
        }
        row_off += q;
    }
    let herm_dev = c.herm_deviation();
    let herm = c.add(&c.adjoint()).scale(C64::new(0.5, 0.0));
    let min_eig = herm.min_eig()?;
    let is_cp = herm_dev <= 1e-9 * (1.0 + c.max_abs()) && min_eig >= -1e-9;
    Ok(ChoiAnalysis {
        choi: ChoiMatrix {
            matrix: c,
            domain_dim: n,
            codomain_dim: k,
        },
        is_cp,
        min_eig,
    })
}

fn block_diag_embed(tuple: &[ComplexMatrix]) -> ComplexMatrix {
    let mut out = tuple[0].clone();
    for m in &tuple[1..] {
        out = out.direct_sum(m);
    }
    out
}

/// Reconstruct the action of the map encoded by a Choi matrix on one
/// input; used to validate the linear-reconstruction invariant.
pub fn choi_apply(choi: &ChoiMatrix, x: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = choi.domain_dim;
    let k = choi.codomain_dim;
    if x.rows != n || x.cols != n {
        return Err(Error::Dimension("input must be N×N".into()));
    }
    let mut out = ComplexMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let mut v = C64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    v += x.at(i, j) * choi.matrix.at(i * k + a, j * k + b);
                }
            }
            out.set(a, b, v);
        }
    }
    Ok(out)
}

/// Extend a complete contraction f: X → ⊕ M_{q_i,s_i} from a subspace X
/// of its ambient ∞-sum to the whole ambient, keeping ‖g‖_cb ≤
/// 1 + budget_tol. Injectivity of the codomain makes this always
/// feasible.
pub fn extend_cc(f: &BlockLinearMap, budget_tol: f64) -> Result<BlockLinearMap> {
    if budget_tol <= 0.0 {
        return Err(Error::Precondition("budget_tol must be positive".into()));
    }
    if !f.codomain.is_full() {
        return Err(Error::Precondition("extension needs a full codomain".into()));
    }
    let mut coordinate_maps = Vec::with_capacity(f.codomain.blocks.len());
    let mut worst_t = 0.0f64;
    for block in 0..f.codomain.blocks.len() {
        let solve = solve_block(f, block)?;
        worst_t = worst_t.max(solve.t);
        coordinate_maps.push(extension_from_solve(f, block, &solve)?);
    }
    if worst_t > 1.0 + 1e-8 {
        return Err(Error::Precondition(format!(
            "map is not completely contractive (‖f‖_cb ≈ {worst_t:.9})"
        )));
    }
    if worst_t > 1.0 + budget_tol {
        return Err(Error::Internal(format!(
            "extension exceeded the budget: t = {worst_t:.12}"
        )));
    }
    let g = crate::space::tuple_map(&coordinate_maps)?;
    // agreement residual on the domain basis
    let basis = f.domain.basis_tuples();
    let full = &g.domain;
    let mut worst = 0.0f64;
    for (beta, b) in basis.iter().enumerate() {
        let vec_b = full.vectorize(b);
        for r in 0..g.action.rows {
            let mut got = C64::new(0.0, 0.0);
            for (cidx, vb) in vec_b.iter().enumerate() {
                got += g.action.at(r, cidx) * vb;
            }
            let want = f.action.at(r, beta);
            worst = worst.max((got - want).norm());
        }
    }
    if worst > 1e-8 {
        return Err(Error::Internal(format!(
            "extension/restriction disagreement {worst:.3e} exceeds 1e-8"
        )));
    }
    Ok(g)
}

/// delta_defect wired to the SDP-backed cb norm.
pub fn delta_defect_cb(f: &BlockLinearMap) -> Result<f64> {
    delta_defect(f, cb_norm_value)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectiveCheck {
    pub is_complete_isometry: bool,
    pub witness_index: Option<usize>,
    pub defects: Vec<f64>,
}

/// A tuple of complete contractions into matrix blocks is a complete
/// isometry exactly when one of its components already is; decided by
/// computing the embedding defect per component.
pub fn lemma_injective_check(components: &[BlockLinearMap]) -> Result<InjectiveCheck> {
    if components.is_empty() {
        return Err(Error::Precondition("need at least one component".into()));
    }
    for (i, f) in components.iter().enumerate() {
        let v = cb_norm_value(f)?;
        if v > 1.0 + 1e-7 {
            return Err(Error::Precondition(format!(
                "component {i} is not completely contractive (‖·‖_cb ≈ {v:.9})"
            )));
        }
    }
    let mut defects = Vec::with_capacity(components.len());
    for f in components {
        defects.push(delta_defect_cb(f)?);
    }
    let witness_index = defects.iter().position(|&d| d <= COMPLETE_ISOMETRY_TOL);
    Ok(InjectiveCheck {
        is_complete_isometry: witness_index.is_some(),
        witness_index,
        defects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::tuple_map;

    fn transpose_m2() -> BlockLinearMap {
        let x = SpaceDescriptor::matrix_block(2, 2);
        let images = vec![
            vec![ComplexMatrix::unit(2, 2, 0, 0)],
            vec![ComplexMatrix::unit(2, 2, 1, 0)],
            vec![ComplexMatrix::unit(2, 2, 0, 1)],
            vec![ComplexMatrix::unit(2, 2, 1, 1)],
        ];
        BlockLinearMap::from_images(&x, &x, &images).unwrap()
    }

    #[test]
    fn cb_identity_m2_is_one() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        let f = BlockLinearMap::identity(&x);
        let cert = cb_norm(&f, 1e-6).unwrap();
        assert!((cert.value - 1.0).abs() < 1e-6, "value {}", cert.value);
        assert!(cert.lower_witness.value <= cert.value + 1e-6);
        assert!(cert.lower_witness.value >= cert.value - 1e-6);
        assert!(cert.lower_witness.element.level_norm().unwrap() <= 1.0 + 1e-9);
    }

    #[test]
    fn cb_transpose_m2_is_two() {
        let cert = cb_norm(&transpose_m2(), 1e-6).unwrap();
        assert!((cert.value - 2.0).abs() < 1e-6, "value {}", cert.value);
        assert!(
            cert.lower_witness.value >= cert.value - 1e-6,
            "lower {} vs value {}",
            cert.lower_witness.value,
            cert.value
        );
    }

    #[test]
    fn cb_row_to_column_is_sqrt2() {
        let dom = SpaceDescriptor::matrix_block(1, 2);
        let cod = SpaceDescriptor::matrix_block(2, 1);
        let f = BlockLinearMap::new(dom, cod, ComplexMatrix::identity(2)).unwrap();
        let cert = cb_norm(&f, 1e-6).unwrap();
        let target = 2.0f64.sqrt();
        assert!((cert.value - target).abs() < 1e-6, "value {}", cert.value);
        assert!(cert.lower_witness.value >= target - 1e-6);
    }

    #[test]
    fn cb_scaled_identity_scales() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        let f = BlockLinearMap::identity(&x).scale(C64::new(2.0, 0.0));
        let cert = cb_norm(&f, 1e-6).unwrap();
        assert!((cert.value - 2.0).abs() < 1e-6);
    }

    #[test]
    fn cb_scalar_blocks_match_operator_norm() {
        // maps ℓ∞³ → ℓ∞²: norm = max row ℓ¹ norm of the action
        let dom = SpaceDescriptor::l_inf(3, 1, 1, Category::Osp);
        let cod = SpaceDescriptor::l_inf(2, 1, 1, Category::Osp);
        let action = ComplexMatrix {
            rows: 2,
            cols: 3,
            entries: vec![
                C64::new(0.3, 0.4),
                C64::new(-1.0, 0.0),
                C64::new(0.0, 0.25),
                C64::new(0.2, 0.0),
                C64::new(0.0, -0.6),
                C64::new(1.1, 0.0),
            ],
        };
        let expect = (0..2)
            .map(|r| (0..3).map(|c| action.at(r, c).norm()).sum::<f64>())
            .fold(0.0f64, f64::max);
        let f = BlockLinearMap::new(dom, cod, action).unwrap();
        let v = cb_norm_value(&f).unwrap();
        assert!((v - expect).abs() < 1e-8, "cb {v} vs row-l1 {expect}");
    }

    #[test]
    fn choi_of_transpose_is_swap() {
        let out = choi_and_cp(&transpose_m2()).unwrap();
        assert!(!out.is_cp);
        assert!((out.min_eig + 1.0).abs() < 1e-9);
        // reconstruction
        let x = ComplexMatrix {
            rows: 2,
            cols: 2,
            entries: vec![
                C64::new(0.5, 0.1),
                C64::new(-0.2, 0.6),
                C64::new(0.9, 0.0),
                C64::new(0.0, -0.3),
            ],
        };
        let got = choi_apply(&out.choi, &x).unwrap();
        assert!(got.sub(&x.transpose()).max_abs() < 1e-10);
    }

    #[test]
    fn choi_of_trace_map_is_cp() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        // x ↦ tr(x)/2 · I
        let mut action = ComplexMatrix::zeros(4, 4);
        for unit in [0usize, 3] {
            action.set(0, unit, C64::new(0.5, 0.0));
            action.set(3, unit, C64::new(0.5, 0.0));
        }
        let f = BlockLinearMap::new(x.clone(), x, action).unwrap();
        let out = choi_and_cp(&f).unwrap();
        assert!(out.is_cp);
        assert!(out.min_eig >= -1e-9);
        let id = choi_and_cp(&BlockLinearMap::identity(&SpaceDescriptor::matrix_block(2, 2))).unwrap();
        assert!(id.is_cp);
    }

    #[test]
    fn choi_rejects_rectangular() {
        let dom = SpaceDescriptor::matrix_block(1, 2);
        let cod = SpaceDescriptor::matrix_block(2, 1);
        let f = BlockLinearMap::new(dom, cod, ComplexMatrix::identity(2)).unwrap();
        assert!(matches!(choi_and_cp(&f), Err(Error::Dimension(_))));
    }

    #[test]
    fn extend_coordinate_functional() {
        // x₁ ↦ x₁ on span{(1,0)} ⊆ ℓ∞²
        let amb = SpaceDescriptor::l_inf(2, 1, 1, Category::Osp);
        let sub = amb
            .with_basis(vec![vec![
                ComplexMatrix::diag(&[1.0]),
                ComplexMatrix::diag(&[0.0]),
            ]])
            .unwrap();
        let cod = SpaceDescriptor::l_inf(1, 1, 1, Category::Osp);
        let f = BlockLinearMap::new(sub, cod, ComplexMatrix::identity(1)).unwrap();
        let g = extend_cc(&f, 1e-6).unwrap();
        assert_eq!(g.domain.ambient_dim(), 2);
        assert!(cb_norm_value(&g).unwrap() <= 1.0 + 1e-6);
        // g agrees with f on the basis vector (1,0)
        assert!((g.action.at(0, 0).re - 1.0).abs() < 1e-8);
        assert!(g.action.at(0, 0).im.abs() < 1e-8);
    }

    #[test]
    fn extend_full_domain_returns_map_itself() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        let f = BlockLinearMap::identity(&x).scale(C64::new(0.8, 0.0));
        let g = extend_cc(&f, 1e-6).unwrap();
        assert!(g.action.sub(&f.action).max_abs() < 1e-7);
    }

    #[test]
    fn extend_subspace_into_m3() {
        // a contraction on a 2-dim subspace of M₂ into M₃
        let amb = SpaceDescriptor::matrix_block(2, 2);
        let sub = amb
            .with_basis(vec![
                vec![ComplexMatrix::unit(2, 2, 0, 0)],
                vec![ComplexMatrix::unit(2, 2, 0, 1)],
            ])
            .unwrap();
        let cod = SpaceDescriptor::matrix_block(3, 3);
        let mut action = ComplexMatrix::zeros(9, 2);
        action.set(0, 0, C64::new(0.5, 0.0));
        action.set(1, 1, C64::new(0.5, 0.0));
        let f = BlockLinearMap::new(sub, cod, action).unwrap();
        assert!(cb_norm_value(&f).unwrap() <= 1.0 + 1e-9);
        let g = extend_cc(&f, 1e-6).unwrap();
        assert!(cb_norm_value(&g).unwrap() <= 1.0 + 1e-6);
    }

    #[test]
    fn extend_rejects_expansive_maps() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        let f = BlockLinearMap::identity(&x).scale(C64::new(1.5, 0.0));
        assert!(matches!(extend_cc(&f, 1e-6), Err(Error::Precondition(_))));
    }

    #[test]
    fn defects_of_basic_maps() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        let id = BlockLinearMap::identity(&x);
        assert!(delta_defect_cb(&id).unwrap() < 1e-7);
        let half = BlockLinearMap::identity(&SpaceDescriptor::l_inf(1, 1, 1, Category::Osp))
            .scale(C64::new(0.5, 0.0));
        let d = delta_defect_cb(&half).unwrap();
        assert!((d - 1.0).abs() < 1e-6, "defect {d}");
        // coordinate inclusion ℓ∞¹ → ℓ∞²
        let dom = SpaceDescriptor::l_inf(1, 1, 1, Category::Osp);
        let cod = SpaceDescriptor::l_inf(2, 1, 1, Category::Osp);
        let mut action = ComplexMatrix::zeros(2, 1);
        action.set(0, 0, C64::new(1.0, 0.0));
        let incl = BlockLinearMap::new(dom, cod, action).unwrap();
        assert!(delta_defect_cb(&incl).unwrap() < 1e-7);
    }

    #[test]
    fn injective_tuple_detection() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        let id = BlockLinearMap::identity(&x);
        let half = id.scale(C64::new(0.5, 0.0));
        let out = lemma_injective_check(&[id.clone(), half.clone()]).unwrap();
        assert!(out.is_complete_isometry);
        assert_eq!(out.witness_index, Some(0));
        let out2 = lemma_injective_check(&[half.clone(), half.clone()]).unwrap();
        assert!(!out2.is_complete_isometry);
        let zero = id.scale(C64::new(0.0, 0.0));
        let out3 = lemma_injective_check(&[zero]).unwrap();
        assert!(!out3.is_complete_isometry);
        let expansive = id.scale(C64::new(1.2, 0.0));
        assert!(lemma_injective_check(&[expansive]).is_err());
    }

    #[test]
    fn tuple_defect_matches_component_rule() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        let id = BlockLinearMap::identity(&x);
        let half = id.scale(C64::new(0.5, 0.0));
        let tuple = tuple_map(&[half.clone(), id.clone()]).unwrap();
        let d = delta_defect_cb(&tuple).unwrap();
        assert!(d < 1e-6, "tuple with an isometric component, defect {d}");
        let weak = tuple_map(&[half.clone(), half]).unwrap();
        let dw = delta_defect_cb(&weak).unwrap();
        assert!((dw - 1.0).abs() < 1e-5, "all-contractive tuple, defect {dw}");
    }

    #[test]
    fn smith_level_stabilization_for_transpose() {
        let t = transpose_m2();
        let mut values = Vec::new();
        for m in 1..=3 {
            let (v, _) = sample_level_norm(&t, m, 8, 60, 3).unwrap();
            values.push(v);
        }
        assert!(values[0] <= values[1] + 1e-9);
        assert!(values[1] <= values[2] + 1e-9);
        assert!((values[1] - 2.0).abs() < 1e-6, "level 2 gives {}", values[1]);
        assert!((values[2] - values[1]).abs() < 1e-6);
    }

    #[test]
    fn cb_submultiplicative_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = SpaceDescriptor::matrix_block(2, 2);
        for _ in 0..3 {
            let a = crate::space::random_scalar_matrix(4, 4, &mut rng);
            let b = crate::space::random_scalar_matrix(4, 4, &mut rng);
            let f = BlockLinearMap::new(x.clone(), x.clone(), a).unwrap();
            let g = BlockLinearMap::new(x.clone(), x.clone(), b).unwrap();
            let gf = f.then(&g).unwrap();
            let vf = cb_norm_value(&f).unwrap();
            let vg = cb_norm_value(&g).unwrap();
            let vgf = cb_norm_value(&gf).unwrap();
            assert!(vgf <= vf * vg + 1e-6, "{vgf} > {vf} * {vg}");
        }
    }

    #[test]
    fn sandwich_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = SpaceDescriptor::matrix_block(2, 2);
        for _ in 0..3 {
            let a = crate::space::random_scalar_matrix(4, 4, &mut rng);
            let f = BlockLinearMap::new(x.clone(), x.clone(), a).unwrap();
            let cert = cb_norm(&f, 1e-6).unwrap();
            assert!(cert.lower_witness.value <= cert.value + 1e-6);
            assert!(
                cert.value - cert.lower_witness.value <= 2e-6,
                "gap {} for value {}",
                cert.value - cert.lower_witness.value,
                cert.value
            );
        }
    }
}
