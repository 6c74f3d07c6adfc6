//! Approximate amalgamation over the injective classes (plain, pointed
//! and multi-space), distance estimation between finite-dimensional
//! spaces, finite nets of embeddings, and the oscillation / partition
//! search built on top of them.
//!
//! The workhorse is a coupled SDP: for δ-embeddings φ: X → Y and
//! ψ: X → Z it finds the completely contractive (or unital completely
//! positive) cross map Ψ: Y → Z minimizing ‖Ψ∘φ − ψ‖_cb. The map is
//! carried by one Paulsen certificate (or a Choi block per coordinate),
//! the difference by a second certificate whose pinned entries are
//! linear in the first, so optimality and the norm bound come out of a
//! single solve. Gluing two cross maps across Y ⊕_∞ Z realizes the
//! stable-amalgamation moduli.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbnorm::{
    cb_norm_value, delta_defect_cb, embed_single, embed_tuple, embedded_dim, embedded_side,
    extract_single,
};
use crate::duality::{random_ucp, PointedSpace};
use crate::error::{Error, Result};
use crate::linalg::{C64, ComplexMatrix};
use crate::ramsey::{fnv1a, ColoringSpec, DiscreteBackend};
use crate::sdp::{solve_sdp, SdpConstraint, SdpProblem, SdpSolution, SdpStatus};
use crate::space::{
    random_scalar_matrix, random_unitary, stability_modulus, BlockLinearMap, Category,
    SpaceDescriptor, SpaceElement,
};

const CROSS_SDP_TOL: f64 = 1e-9;
const ISOMETRY_TOL: f64 = 1e-6;
const MULTI_SAMPLE_CAP: usize = 64;
const ARP_NET_EPS: f64 = 0.5;
const EMB_MEMBER_CAP: usize = 2500;
const EMB_PATTERN_CAP: usize = 120;
const EMB_DENSITY_SAMPLES: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassConfig {
    pub category: Category,
    /// additive slack ε carried into every reported modulus bound
    pub epsilon: f64,
}

impl ClassConfig {
    pub fn new(category: Category) -> Self {
        ClassConfig {
            category,
            epsilon: 0.01,
        }
    }

    pub fn modulus_bound(&self, delta: f64) -> f64 {
        stability_modulus(self.category, false, delta) + self.epsilon
    }
}

/// Contribute w·X[c,r] to a linear form S, where the paired constraints
/// encode 2·Re S and −2·Im S. Diagonal hits need the doubled real
/// coefficient because the Hermitian pairing counts them once.
fn push_value(re: &mut SdpConstraint, im: &mut SdpConstraint, blk: usize, r: usize, c: usize, w: C64) {
    if r == c {
        re.entries.push((blk, r, r, C64::new(2.0 * w.re, 0.0)));
        im.entries.push((blk, r, r, C64::new(-2.0 * w.im, 0.0)));
    } else {
        re.push_herm(blk, r, c, w);
        im.push_herm(blk, r, c, C64::new(0.0, 1.0) * w);
    }
}

/// Tr_N C₁ ⪯ bound and Tr_N C₂ ⪯ bound on a 2NK Paulsen block; the
/// bound is the constant 1 (t_block None) or the t variable.
fn trace_bounds(
    p: &mut SdpProblem,
    cert: usize,
    n: usize,
    k: usize,
    slack1: usize,
    slack2: usize,
    t_block: Option<usize>,
) {
    let nk = n * k;
    for (slack, base) in [(slack1, 0usize), (slack2, nk)] {
        for a in 0..k {
            let mut diag = SdpConstraint::new(if t_block.is_none() { 1.0 } else { 0.0 });
            for i in 0..n {
                diag.push_herm(cert, base + i * k + a, base + i * k + a, C64::new(1.0, 0.0));
            }
            diag.push_herm(slack, a, a, C64::new(1.0, 0.0));
            if let Some(tb) = t_block {
                diag.push_herm(tb, 0, 0, C64::new(-1.0, 0.0));
            }
            p.constraints.push(diag);
            for b in a + 1..k {
                let mut re = SdpConstraint::new(0.0);
                let mut im = SdpConstraint::new(0.0);
                for i in 0..n {
                    re.push_herm(cert, base + i * k + b, base + i * k + a, C64::new(0.5, 0.0));
                    im.push_herm(cert, base + i * k + b, base + i * k + a, C64::new(0.0, 0.5));
                }
                re.push_herm(slack, b, a, C64::new(0.5, 0.0));
                im.push_herm(slack, b, a, C64::new(0.0, 0.5));
                p.constraints.push(re);
                p.constraints.push(im);
            }
        }
    }
}

fn solve_cross(p: &SdpProblem) -> Result<SdpSolution> {
    let solution = solve_sdp(p, CROSS_SDP_TOL)?;
    match solution.status {
        SdpStatus::Optimal => {}
        SdpStatus::MaxIter if solution.gap <= 5e-7 && solution.primal_residual(p) <= 1e-6 => {}
        other => {
            return Err(Error::Numerical(format!(
                "cross-map SDP ended with status {other:?} (gap {:.3e})",
                solution.gap
            )))
        }
    }
    Ok(solution)
}

/// One codomain coordinate of the optimal cross map: its action matrix
/// on the full domain Y and the achieved defect for that coordinate.
fn cross_block_solve(
    phi: &BlockLinearMap,
    psi: &BlockLinearMap,
    block: usize,
    ucp: bool,
) -> Result<(ComplexMatrix, f64)> {
    let x_desc = &phi.domain;
    let y_desc = &phi.codomain;
    let (zq, zs) = psi.codomain.blocks[block];
    let k = embedded_side(zq, zs);
    let nx = embedded_dim(x_desc);
    let nxk = nx * k;
    let dim_x = x_desc.dim();
    let x_basis = x_desc.basis_tuples();
    let x_embedded: Vec<ComplexMatrix> = x_basis.iter().map(|b| embed_tuple(x_desc, b)).collect();
    let psi_targets: Vec<ComplexMatrix> = (0..dim_x)
        .map(|beta| embed_single(zq, zs, &psi.image_of_basis(beta)[block]))
        .collect();
    let phi_images: Vec<Vec<ComplexMatrix>> = (0..dim_x).map(|beta| phi.image_of_basis(beta)).collect();
    let zero = C64::new(0.0, 0.0);

    if !ucp {
        let ny = embedded_dim(y_desc);
        let nyk = ny * k;
        let mut p = SdpProblem::new(vec![2 * nyk, k, k, 2 * nxk, k, k, 1]);
        p.objective[6].set(0, 0, C64::new(1.0, 0.0));
        trace_bounds(&mut p, 0, ny, k, 1, 2, None);
        trace_bounds(&mut p, 3, nx, k, 4, 5, Some(6));
        for beta in 0..dim_x {
            let bt = &x_embedded[beta];
            let yimg = embed_tuple(y_desc, &phi_images[beta]);
            for a in 0..k {
                for b in 0..k {
                    let t = psi_targets[beta].at(a, b);
                    let mut re = SdpConstraint::new(-2.0 * t.re);
                    let mut im = SdpConstraint::new(2.0 * t.im);
                    for ii in 0..nx {
                        for jj in 0..nx {
                            let v = bt.at(jj, ii);
                            if v != zero {
                                push_value(&mut re, &mut im, 3, nxk + ii * k + b, jj * k + a, v);
                            }
                        }
                    }
                    for ii in 0..ny {
                        for jj in 0..ny {
                            let w = yimg.at(jj, ii);
                            if w != zero {
                                push_value(&mut re, &mut im, 0, nyk + ii * k + b, jj * k + a, -w);
                            }
                        }
                    }
                    p.constraints.push(re);
                    p.constraints.push(im);
                }
            }
        }
        let solution = solve_cross(&p)?;
        let z = &solution.primal_blocks[0];
        let mut action = ComplexMatrix::zeros(zq * zs, y_desc.dim());
        let mut col = 0;
        let mut off = 0;
        for &(bq, bs) in &y_desc.blocks {
            let col0 = if bq == bs { off } else { off + bq };
            for r in 0..bq {
                for c in 0..bs {
                    let gi = off + r;
                    let gj = col0 + c;
                    let mut value = ComplexMatrix::zeros(k, k);
                    for a in 0..k {
                        for b in 0..k {
                            value.set(a, b, z.at(gi * k + a, nyk + gj * k + b));
                        }
                    }
                    let small = extract_single(zq, zs, &value);
                    for r2 in 0..zq {
                        for c2 in 0..zs {
                            action.set(r2 * zs + c2, col, small.at(r2, c2));
                        }
                    }
                    col += 1;
                }
            }
            off += embedded_side(bq, bs);
        }
        return Ok((action, solution.primal_value));
    }

    // unital completely positive variant: one Choi block per Y
    // coordinate (PSD = CP), summed partial traces pinned to 1
    let a_blocks = y_desc.blocks.len();
    let mut dims: Vec<usize> = y_desc.blocks.iter().map(|&(p_a, _)| p_a * k).collect();
    let zd = a_blocks;
    dims.push(2 * nxk);
    dims.push(k);
    dims.push(k);
    dims.push(1);
    let tb = a_blocks + 3;
    let mut p = SdpProblem::new(dims);
    p.objective[tb].set(0, 0, C64::new(1.0, 0.0));
    trace_bounds(&mut p, zd, nx, k, a_blocks + 1, a_blocks + 2, Some(tb));
    for x in 0..k {
        for y in x..k {
            let mut re = SdpConstraint::new(if x == y { 2.0 } else { 0.0 });
            let mut im = SdpConstraint::new(0.0);
            for (a, &(p_a, _)) in y_desc.blocks.iter().enumerate() {
                for u in 0..p_a {
                    push_value(&mut re, &mut im, a, u * k + y, u * k + x, C64::new(1.0, 0.0));
                }
            }
            p.constraints.push(re);
            if x != y {
                p.constraints.push(im);
            }
        }
    }
    for beta in 0..dim_x {
        let bt = &x_embedded[beta];
        for aa in 0..k {
            for bb in 0..k {
                let t = psi_targets[beta].at(aa, bb);
                let mut re = SdpConstraint::new(-2.0 * t.re);
                let mut im = SdpConstraint::new(2.0 * t.im);
                for ii in 0..nx {
                    for jj in 0..nx {
                        let v = bt.at(jj, ii);
                        if v != zero {
                            push_value(&mut re, &mut im, zd, nxk + ii * k + bb, jj * k + aa, v);
                        }
                    }
                }
                for (a, &(p_a, _)) in y_desc.blocks.iter().enumerate() {
                    let img = &phi_images[beta][a];
                    for u in 0..p_a {
                        for vv in 0..p_a {
                            let w = img.at(u, vv);
                            if w != zero {
                                push_value(&mut re, &mut im, a, vv * k + bb, u * k + aa, -w);
                            }
                        }
                    }
                }
                p.constraints.push(re);
                p.constraints.push(im);
            }
        }
    }
    let solution = solve_cross(&p)?;
    let mut action = ComplexMatrix::zeros(zq * zs, y_desc.dim());
    let mut col = 0;
    for (a, &(p_a, _)) in y_desc.blocks.iter().enumerate() {
        let g = &solution.primal_blocks[a];
        for r in 0..p_a {
            for c in 0..p_a {
                for x in 0..zq {
                    for y in 0..zs {
                        action.set(x * zs + y, col, g.at(r * k + x, c * k + y));
                    }
                }
                col += 1;
            }
        }
    }
    Ok((action, solution.primal_value))
}

/// Optimal cross map Ψ: Y → Z minimizing ‖Ψ∘φ − ψ‖_cb over completely
/// contractive Ψ (ucp = false) or unital completely positive Ψ.
/// Returns Ψ and the worst per-coordinate defect.
pub fn best_cross_map(
    phi: &BlockLinearMap,
    psi: &BlockLinearMap,
    ucp: bool,
) -> Result<(BlockLinearMap, f64)> {
    if phi.domain != psi.domain {
        return Err(Error::Dimension("φ and ψ must share their domain".into()));
    }
    if !phi.codomain.is_full() || !psi.codomain.is_full() {
        return Err(Error::Precondition(
            "cross maps need full class members as codomains".into(),
        ));
    }
    if ucp && (!phi.codomain.all_square() || !psi.codomain.all_square()) {
        return Err(Error::Precondition(
            "unital cross maps need square block algebras".into(),
        ));
    }
    let mut t_worst = 0.0f64;
    let mut action = ComplexMatrix::zeros(psi.codomain.dim(), phi.codomain.dim());
    let offsets = psi.codomain.offsets();
    for block in 0..psi.codomain.blocks.len() {
        let (coord_action, t) = cross_block_solve(phi, psi, block, ucp)?;
        t_worst = t_worst.max(t);
        for r in 0..coord_action.rows {
            for c in 0..coord_action.cols {
                action.set(offsets[block] + r, c, coord_action.at(r, c));
            }
        }
    }
    let mut map = BlockLinearMap::new(phi.codomain.clone(), psi.codomain.clone(), action)?;
    if !ucp {
        // certificate feasibility can leave the norm a hair over 1;
        // squeeze back into the contractive ball so downstream isometry
        // defects stay finite
        let n = cb_norm_value(&map)?;
        if n > 1.0 {
            map = map.scale(C64::new(1.0 / n, 0.0));
        }
    }
    Ok((map, t_worst))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmalgamationWitness {
    pub v: SpaceDescriptor,
    pub i: BlockLinearMap,
    pub j: BlockLinearMap,
    pub defect: f64,
    pub delta: f64,
    pub modulus_bound: f64,
}

fn require_class_member(desc: &SpaceDescriptor, category: Category) -> Result<()> {
    if !desc.is_full() {
        return Err(Error::Precondition(
            "amalgamation applies to full ∞-sums of matrix blocks".into(),
        ));
    }
    if desc.category != category {
        return Err(Error::Precondition(
            "space is not in the requested class".into(),
        ));
    }
    if category == Category::Osy && desc.unit.is_none() {
        return Err(Error::Precondition("operator systems carry units".into()));
    }
    Ok(())
}

fn unit_image_deviation(f: &BlockLinearMap) -> Result<f64> {
    let unit_in = SpaceElement::from_tuple(f.domain.clone(), f.domain.unit_tuple()?)?;
    let img = f.apply(&unit_in)?;
    let want = f.codomain.unit_tuple()?;
    let mut dev = 0.0f64;
    for (got, w) in img.data.iter().zip(&want) {
        dev = dev.max(got.sub(w).max_abs());
    }
    Ok(dev)
}

fn stack_maps(
    top: &BlockLinearMap,
    bottom: &BlockLinearMap,
    v: &SpaceDescriptor,
) -> Result<BlockLinearMap> {
    if bottom.action.cols != top.action.cols {
        return Err(Error::Dimension("stacked maps must share a domain".into()));
    }
    let mut action = ComplexMatrix::zeros(top.action.rows + bottom.action.rows, top.action.cols);
    for r in 0..top.action.rows {
        for c in 0..top.action.cols {
            action.set(r, c, top.action.at(r, c));
        }
    }
    for r in 0..bottom.action.rows {
        for c in 0..bottom.action.cols {
            action.set(top.action.rows + r, c, bottom.action.at(r, c));
        }
    }
    BlockLinearMap::new(top.domain.clone(), v.clone(), action)
}

/// Stable amalgamation of φ: X → Y and ψ: X → Z over V = Y ⊕_∞ Z with
/// i = (id, Ψ) and j = (Φ, id), the cross maps solved to optimality.
pub fn amalgamate(
    phi: &BlockLinearMap,
    psi: &BlockLinearMap,
    cfg: &ClassConfig,
) -> Result<AmalgamationWitness> {
    if phi.domain != psi.domain {
        return Err(Error::Dimension("φ and ψ must share their domain".into()));
    }
    require_class_member(&phi.domain, cfg.category)?;
    require_class_member(&phi.codomain, cfg.category)?;
    require_class_member(&psi.codomain, cfg.category)?;
    let delta = delta_defect_cb(phi)?.max(delta_defect_cb(psi)?);
    if !delta.is_finite() {
        return Err(Error::Precondition(
            "inputs must be δ-embeddings with finite defect".into(),
        ));
    }
    let ucp = cfg.category == Category::Osy;
    if ucp {
        for (name, f) in [("φ", phi), ("ψ", psi)] {
            if unit_image_deviation(f)? > 1e-7 {
                return Err(Error::Precondition(format!(
                    "{name} must be unital in the operator-system class"
                )));
            }
        }
    }
    let (psi_cross, _) = best_cross_map(phi, psi, ucp)?;
    let (phi_cross, _) = best_cross_map(psi, phi, ucp)?;
    let y = &phi.codomain;
    let z = &psi.codomain;
    let mut blocks = y.blocks.clone();
    blocks.extend_from_slice(&z.blocks);
    let v = SpaceDescriptor::full(blocks, cfg.category);
    let i = stack_maps(&BlockLinearMap::identity(y), &psi_cross, &v)?;
    let j = stack_maps(&phi_cross, &BlockLinearMap::identity(z), &v)?;
    let defect = cb_norm_value(&phi.then(&i)?.sub(&psi.then(&j)?)?)?;
    let modulus_bound = cfg.modulus_bound(delta);
    let d_i = delta_defect_cb(&i)?;
    let d_j = delta_defect_cb(&j)?;
    if d_i > ISOMETRY_TOL || d_j > ISOMETRY_TOL {
        return Err(Error::Internal(format!(
            "coordinate maps failed to be complete isometries (defects {d_i:.3e}, {d_j:.3e})"
        )));
    }
    if defect > modulus_bound + 1e-6 {
        return Err(Error::Internal(format!(
            "amalgamation defect {defect:.6} exceeds the modulus bound {modulus_bound:.6}"
        )));
    }
    Ok(AmalgamationWitness {
        v,
        i,
        j,
        defect,
        delta,
        modulus_bound,
    })
}

/// θ∘s where θ may live on a subspace of s's codomain; images of s are
/// expressed in θ's domain basis first. Failure to lie in the span is
/// the θ-domain error.
fn compose_via_span(s: &BlockLinearMap, theta: &BlockLinearMap) -> Result<BlockLinearMap> {
    if theta.domain.blocks != s.codomain.blocks {
        return Err(Error::Dimension("θ must act on the reference space".into()));
    }
    if theta.domain.is_full() {
        return s.then(theta);
    }
    let full = SpaceDescriptor::full(theta.domain.blocks.clone(), Category::Osp);
    let amb = full.ambient_dim();
    let t_dim = theta.domain.dim();
    let basis = theta.domain.basis_tuples();
    let mut bmat = ComplexMatrix::zeros(amb, t_dim);
    for (bidx, tuple) in basis.iter().enumerate() {
        for (r, v) in full.vectorize(tuple).iter().enumerate() {
            bmat.set(r, bidx, *v);
        }
    }
    let gram = bmat.adjoint().matmul(&bmat);
    let mut coords = ComplexMatrix::zeros(t_dim, s.action.cols);
    for colx in 0..s.action.cols {
        let ycol = ComplexMatrix::from_fn(amb, 1, |r, _| s.action.at(r, colx));
        let rhs = bmat.adjoint().matmul(&ycol);
        let c = gram.lu_solve(&rhs)?;
        let resid = bmat.matmul(&c).sub(&ycol).max_abs();
        if resid > 1e-8 * (1.0 + ycol.max_abs()) {
            return Err(Error::Precondition(
                "θ is not defined on the span generated by the distinguished maps".into(),
            ));
        }
        for r in 0..t_dim {
            coords.set(r, colx, c.at(r, 0));
        }
    }
    let action = theta.action.matmul(&coords);
    BlockLinearMap::new(s.domain.clone(), theta.codomain.clone(), action)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointedWitness {
    pub base: AmalgamationWitness,
    pub w: SpaceDescriptor,
    pub i: BlockLinearMap,
    pub j: BlockLinearMap,
    pub s_w: BlockLinearMap,
    pub defect: f64,
    pub delta: f64,
    pub modulus_bound: f64,
    pub i_residual: f64,
    pub j_residual: f64,
}

/// Pointed amalgamation: W = V ⊕_∞ R0 with the appended-block
/// projection distinguished, I = (i, θ∘s_Y) and J = (j, θ∘s_Z).
pub fn amalgamate_pointed(
    x: &PointedSpace,
    y: &PointedSpace,
    z: &PointedSpace,
    phi: &BlockLinearMap,
    psi: &BlockLinearMap,
    r0: &SpaceDescriptor,
    theta: &BlockLinearMap,
    cfg: &ClassConfig,
) -> Result<PointedWitness> {
    if phi.domain.blocks != x.space.blocks
        || phi.codomain.blocks != y.space.blocks
        || psi.domain.blocks != x.space.blocks
        || psi.codomain.blocks != z.space.blocks
    {
        return Err(Error::Dimension("maps must connect the pointed spaces".into()));
    }
    if x.s_map.codomain.blocks != y.s_map.codomain.blocks
        || y.s_map.codomain.blocks != z.s_map.codomain.blocks
    {
        return Err(Error::Precondition(
            "pointed spaces must share their reference space".into(),
        ));
    }
    if !r0.is_full() {
        return Err(Error::Precondition("R0 must be a full class member".into()));
    }
    if theta.codomain.blocks != r0.blocks {
        return Err(Error::Dimension("θ must land in R0".into()));
    }
    let base = amalgamate(phi, psi, cfg)?;
    let ty = compose_via_span(&y.s_map, theta)?;
    let tz = compose_via_span(&z.s_map, theta)?;
    let d_sy = cb_norm_value(&phi.then(&y.s_map)?.sub(&x.s_map)?)?;
    let d_sz = cb_norm_value(&psi.then(&z.s_map)?.sub(&x.s_map)?)?;
    let delta = base.delta.max(d_sy).max(d_sz);
    let mut blocks = base.v.blocks.clone();
    blocks.extend_from_slice(&r0.blocks);
    let w = SpaceDescriptor::full(blocks, cfg.category);
    let i_cap = stack_maps(&base.i, &ty, &w)?;
    let j_cap = stack_maps(&base.j, &tz, &w)?;
    let mut s_action = ComplexMatrix::zeros(r0.dim(), w.dim());
    for r in 0..r0.dim() {
        s_action.set(r, base.v.dim() + r, C64::new(1.0, 0.0));
    }
    let s_w = BlockLinearMap::new(w.clone(), r0.clone(), s_action)?;
    let i_residual = cb_norm_value(&i_cap.then(&s_w)?.sub(&ty)?)?;
    let j_residual = cb_norm_value(&j_cap.then(&s_w)?.sub(&tz)?)?;
    if i_residual > 1e-8 || j_residual > 1e-8 {
        return Err(Error::Internal(format!(
            "pointed-embedding residuals {i_residual:.3e}, {j_residual:.3e} exceed 1e-8"
        )));
    }
    let defect = cb_norm_value(&phi.then(&i_cap)?.sub(&psi.then(&j_cap)?)?)?;
    let modulus_bound = stability_modulus(cfg.category, true, delta) + cfg.epsilon;
    if defect > modulus_bound + 1e-6 {
        return Err(Error::Internal(format!(
            "pointed defect {defect:.6} exceeds the modulus bound {modulus_bound:.6}"
        )));
    }
    Ok(PointedWitness {
        base,
        w,
        i: i_cap,
        j: j_cap,
        s_w,
        defect,
        delta,
        modulus_bound,
        i_residual,
        j_residual,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoveringSample {
    pub y_index: usize,
    pub z_index: usize,
    pub residual: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiAmalgam {
    pub v: SpaceDescriptor,
    pub embeddings: Vec<BlockLinearMap>,
    pub covering: Vec<CoveringSample>,
    pub partial: bool,
}

/// Embed one space into a target member: its blocks land on the first
/// shape-matching coordinates; remaining coordinates are zero (Osp) or
/// state-filled (Osy, keeping the inclusion unital).
fn member_inclusion(
    x: &SpaceDescriptor,
    target: &SpaceDescriptor,
    category: Category,
) -> Result<BlockLinearMap> {
    let mut action = ComplexMatrix::zeros(target.dim(), x.dim());
    let t_offsets = target.offsets();
    let x_offsets = x.offsets();
    let mut used = vec![false; target.blocks.len()];
    let mut placed = Vec::with_capacity(x.blocks.len());
    for (xb, &shape) in x.blocks.iter().enumerate() {
        let slot = target
            .blocks
            .iter()
            .enumerate()
            .position(|(ti, &ts)| !used[ti] && ts == shape)
            .ok_or_else(|| {
                Error::Dimension("target has no free coordinate of the required shape".into())
            })?;
        used[slot] = true;
        placed.push(slot);
        let (q, s) = shape;
        for e in 0..q * s {
            action.set(t_offsets[slot] + e, x_offsets[xb] + e, C64::new(1.0, 0.0));
        }
    }
    if category == Category::Osy {
        // unfilled coordinates receive s(x)·1 with s the leading vector
        // state, so the inclusion stays unital
        for (ti, &(tq, ts)) in target.blocks.iter().enumerate() {
            if used[ti] {
                continue;
            }
            if tq != ts {
                return Err(Error::Precondition(
                    "operator-system members need square blocks".into(),
                ));
            }
            for r in 0..tq {
                action.set(t_offsets[ti] + r * ts + r, 0, C64::new(1.0, 0.0));
            }
        }
    }
    BlockLinearMap::new(x.clone(), target.clone(), action)
}

fn uniform_square(desc: &SpaceDescriptor) -> Option<usize> {
    let (q, s) = desc.blocks[0];
    if q == s && desc.blocks.iter().all(|&b| b == (q, s)) {
        Some(q)
    } else {
        None
    }
}

/// base + δ·E with E random, renormalized into the contractive ball.
pub fn perturbed_cc_embedding(
    base: &BlockLinearMap,
    delta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BlockLinearMap> {
    if delta == 0.0 {
        return Ok(base.clone());
    }
    let raw = random_scalar_matrix(base.action.rows, base.action.cols, rng);
    let e = BlockLinearMap::new(base.domain.clone(), base.codomain.clone(), raw)?;
    let en = cb_norm_value(&e)?;
    if en < 1e-12 {
        return Ok(base.clone());
    }
    let scaled = e.scale(C64::new(delta / en, 0.0));
    let sum = base.sub(&scaled.scale(C64::new(-1.0, 0.0)))?;
    let n = cb_norm_value(&sum)?;
    if n > 1.0 {
        Ok(sum.scale(C64::new(1.0 / n, 0.0)))
    } else {
        Ok(sum)
    }
}

/// Convex mix (1−λ)·base + λ·(random ucp): stays unital completely
/// positive exactly. Needs uniform square blocks on both sides.
pub fn mixed_ucp_embedding(
    base: &BlockLinearMap,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BlockLinearMap> {
    if lambda == 0.0 {
        return Ok(base.clone());
    }
    let qd = uniform_square(&base.domain)
        .ok_or_else(|| Error::Precondition("mixing needs uniform square blocks".into()))?;
    let qc = uniform_square(&base.codomain)
        .ok_or_else(|| Error::Precondition("mixing needs uniform square blocks".into()))?;
    if qd != qc {
        return Err(Error::Precondition("mixing needs a common block size".into()));
    }
    let u = random_ucp(base.domain.blocks.len(), base.codomain.blocks.len(), qd, rng)?;
    let action = base
        .action
        .scale(C64::new(1.0 - lambda, 0.0))
        .add(&u.action.scale(C64::new(lambda, 0.0)));
    BlockLinearMap::new(base.domain.clone(), base.codomain.clone(), action)
}

/// Joint embedding of a family into V = ⊕_∞ F with the covering
/// property of the amalgamation order spot-checked on sampled pairs.
pub fn multi_amalgamate(
    family: &[SpaceDescriptor],
    cfg: &ClassConfig,
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<MultiAmalgam> {
    if family.is_empty() || family.len() > 5 {
        return Err(Error::Precondition("family size must be between 1 and 5".into()));
    }
    for d in family {
        require_class_member(d, cfg.category)?;
    }
    if family.len() == 1 {
        return Ok(MultiAmalgam {
            v: family[0].clone(),
            embeddings: vec![BlockLinearMap::identity(&family[0])],
            covering: Vec::new(),
            partial: false,
        });
    }
    let ucp = cfg.category == Category::Osy;
    let mut blocks = Vec::new();
    for d in family {
        blocks.extend_from_slice(&d.blocks);
    }
    let v = SpaceDescriptor::full(blocks, cfg.category);
    let mut embeddings = Vec::new();
    for d in family {
        let i_t = member_inclusion(d, &v, cfg.category)?;
        let d_t = delta_defect_cb(&i_t)?;
        if d_t > ISOMETRY_TOL {
            return Err(Error::Internal(format!(
                "family inclusion is not a complete isometry (defect {d_t:.3e})"
            )));
        }
        embeddings.push(i_t);
    }
    let todo = samples.min(MULTI_SAMPLE_CAP);
    let partial = samples > MULTI_SAMPLE_CAP;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covering = Vec::new();
    for _ in 0..todo {
        let yi = rng.gen_range(0..family.len());
        let zi = rng.gen_range(0..family.len());
        let (y_d, z_d) = (&family[yi], &family[zi]);
        // common small space: the leading block when both share it,
        // scalars otherwise
        let x_desc = if y_d.blocks[0] == z_d.blocks[0] && y_d.blocks[0].0 == y_d.blocks[0].1 {
            SpaceDescriptor::full(vec![y_d.blocks[0]], cfg.category)
        } else {
            SpaceDescriptor::full(vec![(1, 1)], cfg.category)
        };
        let gamma0 = member_inclusion(&x_desc, y_d, cfg.category)?;
        let eta = member_inclusion(&x_desc, z_d, cfg.category)?;
        let gamma = if ucp {
            if uniform_square(&x_desc).is_some() && uniform_square(y_d) == uniform_square(&x_desc) {
                mixed_ucp_embedding(&gamma0, delta, &mut rng)?
            } else {
                gamma0
            }
        } else {
            perturbed_cc_embedding(&gamma0, delta, &mut rng)?
        };
        let target = gamma.then(&embeddings[yi])?;
        let (jmap, _) = best_cross_map(&eta, &target, ucp)?;
        let residual = cb_norm_value(&eta.then(&jmap)?.sub(&target)?)?;
        let measured = delta_defect_cb(&gamma)?.max(delta_defect_cb(&eta)?);
        covering.push(CoveringSample {
            y_index: yi,
            z_index: zi,
            residual,
            bound: stability_modulus(cfg.category, false, measured) + cfg.epsilon,
        });
    }
    Ok(MultiAmalgam {
        v,
        embeddings,
        covering,
        partial,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchBudget {
    pub starts: usize,
    pub iters: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetReport {
    pub starts: usize,
    pub iters: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GhWitness {
    pub f: BlockLinearMap,
    pub g: BlockLinearMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BmWitness {
    pub action: ComplexMatrix,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub gh_upper: f64,
    pub bm_upper: Option<f64>,
    pub gh_witness: Option<GhWitness>,
    pub bm_witness: Option<BmWitness>,
    pub budget: BudgetReport,
}

fn subrng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((index + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Random completely contractive map, normalized just inside the ball.
pub fn random_cc_map(
    x: &SpaceDescriptor,
    y: &SpaceDescriptor,
    rng: &mut ChaCha8Rng,
) -> Result<BlockLinearMap> {
    let raw = random_scalar_matrix(y.dim(), x.dim(), rng);
    let f = BlockLinearMap::new(x.clone(), y.clone(), raw)?;
    let n = cb_norm_value(&f)?;
    if n < 1e-12 {
        return Ok(f);
    }
    Ok(f.scale(C64::new(0.98 / n, 0.0)))
}

fn gh_score(f: &BlockLinearMap, g: &BlockLinearMap) -> Result<f64> {
    let idx = BlockLinearMap::identity(&f.domain);
    let idy = BlockLinearMap::identity(&g.domain);
    let a = cb_norm_value(&f.then(g)?.sub(&idx)?)?;
    let b = cb_norm_value(&g.then(f)?.sub(&idy)?)?;
    let c = (cb_norm_value(f)? - 1.0).max(0.0);
    let d = (cb_norm_value(g)? - 1.0).max(0.0);
    Ok(a.max(b).max(c).max(d))
}

/// Upper bound on the embedding pseudodistance by alternating
/// minimization over pairs (f: X→Y, g: Y→X): each half-step is the
/// optimal cross map against the identity. Best-so-far over a
/// prefix-stable candidate stream, so larger budgets never worsen it.
pub fn gh_estimate(
    x: &SpaceDescriptor,
    y: &SpaceDescriptor,
    budget: &SearchBudget,
    seed: u64,
) -> Result<DistanceEstimate> {
    if !x.is_full() || !y.is_full() {
        return Err(Error::Precondition("distance search needs full spaces".into()));
    }
    let mut evals = 0usize;
    let mut best: Option<(f64, GhWitness)> = None;
    let consider = |f: &BlockLinearMap,
                        g: &BlockLinearMap,
                        best: &mut Option<(f64, GhWitness)>,
                        evals: &mut usize|
     -> Result<f64> {
        let score = gh_score(f, g)?;
        *evals += 1;
        if best.as_ref().map(|(s, _)| score < s - 1e-15).unwrap_or(true) {
            *best = Some((
                score,
                GhWitness {
                    f: f.clone(),
                    g: g.clone(),
                },
            ));
        }
        Ok(score)
    };
    if x.blocks == y.blocks {
        let f = BlockLinearMap::new(x.clone(), y.clone(), ComplexMatrix::identity(x.dim()))?;
        let g = BlockLinearMap::new(y.clone(), x.clone(), ComplexMatrix::identity(x.dim()))?;
        consider(&f, &g, &mut best, &mut evals)?;
    }
    'outer: for s in 0..budget.starts {
        let mut rng = subrng(seed, s as u64);
        let mut f = random_cc_map(x, y, &mut rng)?;
        for _ in 0..budget.iters {
            let (g, _) = best_cross_map(&f, &BlockLinearMap::identity(x), false)?;
            let sc = consider(&f, &g, &mut best, &mut evals)?;
            if sc <= 1e-8 {
                break 'outer;
            }
            let (f2, _) = best_cross_map(&g, &BlockLinearMap::identity(y), false)?;
            f = f2;
            let sc = consider(&f, &g, &mut best, &mut evals)?;
            if sc <= 1e-8 {
                break 'outer;
            }
        }
    }
    let (gh_upper, gh_witness) = match best {
        Some((v, w)) => (v, Some(w)),
        None => (f64::INFINITY, None),
    };
    Ok(DistanceEstimate {
        gh_upper,
        bm_upper: None,
        gh_witness,
        bm_witness: None,
        budget: BudgetReport {
            starts: budget.starts,
            iters: budget.iters,
            evaluations: evals,
        },
    })
}

fn invert(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    m.lu_solve(&ComplexMatrix::identity(m.rows))
}

fn bm_search(
    x: &SpaceDescriptor,
    y: &SpaceDescriptor,
    budget: &SearchBudget,
    seed: u64,
) -> Result<(f64, Option<BmWitness>, usize)> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension(
            "the Banach-Mazur search needs equal dimensions".into(),
        ));
    }
    if !x.is_full() || !y.is_full() {
        return Err(Error::Precondition("distance search needs full spaces".into()));
    }
    let d = x.dim();
    let mut evals = 0usize;
    let mut best: Option<(f64, ComplexMatrix)> = None;
    let eval = |action: &ComplexMatrix, evals: &mut usize| -> Result<Option<f64>> {
        let inv = match invert(action) {
            Ok(m) => m,
            Err(_) => return Ok(None),
        };
        let t = BlockLinearMap::new(x.clone(), y.clone(), action.clone())?;
        let tinv = BlockLinearMap::new(y.clone(), x.clone(), inv)?;
        let v = (cb_norm_value(&t)? * cb_norm_value(&tinv)?).ln();
        *evals += 1;
        Ok(Some(v))
    };
    let id = ComplexMatrix::identity(d);
    if let Some(v) = eval(&id, &mut evals)? {
        best = Some((v, id));
    }
    for s in 0..budget.starts {
        let mut rng = subrng(seed, 0x424d ^ (s as u64));
        let mut cur = random_scalar_matrix(d, d, &mut rng);
        let mut cur_v = match eval(&cur, &mut evals)? {
            Some(v) => v,
            None => continue,
        };
        if best.as_ref().map(|(b, _)| cur_v < *b).unwrap_or(true) {
            best = Some((cur_v, cur.clone()));
        }
        for it in 0..budget.iters {
            let sigma = 0.5 * 0.75f64.powi(it as i32);
            let step = random_scalar_matrix(d, d, &mut rng).scale(C64::new(sigma, 0.0));
            let cand = cur.add(&step);
            if let Some(v) = eval(&cand, &mut evals)? {
                if v < cur_v {
                    cur = cand;
                    cur_v = v;
                    if best.as_ref().map(|(b, _)| cur_v < *b).unwrap_or(true) {
                        best = Some((cur_v, cur.clone()));
                    }
                }
            }
        }
    }
    match best {
        Some((v, action)) => Ok((v, Some(BmWitness { action, value: v }), evals)),
        None => Ok((f64::INFINITY, None, evals)),
    }
}

/// Both distance upper bounds side by side. The Banach-Mazur part
/// requires equal dimensions; use `gh_estimate` alone otherwise.
pub fn distance_estimate(
    x: &SpaceDescriptor,
    y: &SpaceDescriptor,
    budget: &SearchBudget,
    seed: u64,
) -> Result<DistanceEstimate> {
    let mut est = gh_estimate(x, y, budget, seed)?;
    let (bm, bm_witness, e2) = bm_search(x, y, budget, seed)?;
    est.bm_upper = Some(bm);
    est.bm_witness = bm_witness;
    est.budget.evaluations += e2;
    Ok(est)
}

/// Σ over the domain basis of the operator norms of the difference's
/// images: a valid upper bound on the cb norm of a map into one matrix
/// block (coordinate functionals have cb norm 1), exact for scalar
/// domains.
fn row_dist_upper(shape: (usize, usize), diff: &ComplexMatrix) -> Result<f64> {
    let (qr, sr) = shape;
    let mut total = 0.0;
    for c in 0..diff.cols {
        let img = ComplexMatrix::from_fn(qr, sr, |a, b| diff.at(a * sr + b, c));
        if img.max_abs() == 0.0 {
            continue;
        }
        total += img.op_norm()?;
    }
    Ok(total)
}

fn emb_dist_upper(z: &SpaceDescriptor, a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    let offsets = z.offsets();
    let mut worst = 0.0f64;
    for (bi, &shape) in z.blocks.iter().enumerate() {
        let rows = shape.0 * shape.1;
        let diff = ComplexMatrix::from_fn(rows, a.cols, |r, c| {
            a.at(offsets[bi] + r, c) - b.at(offsets[bi] + r, c)
        });
        worst = worst.max(row_dist_upper(shape, &diff)?);
    }
    Ok(worst)
}

struct EmbGenerators {
    /// Some(x_coord) rows carry automorphisms, None rows are free.
    patterns: Vec<Vec<Option<usize>>>,
    /// per Z-row automorphism entries (u, v), identity first
    autos: Vec<Vec<(ComplexMatrix, ComplexMatrix)>>,
    /// per Z-row free-row actions (cc, or ucp in the system class)
    free: Vec<Vec<ComplexMatrix>>,
}

fn collect_injections_into(
    xs: &[usize],
    zs: &[usize],
    pos: usize,
    current: &mut Vec<(usize, usize)>,
    out: &mut Vec<Vec<(usize, usize)>>,
) {
    if pos == xs.len() {
        out.push(current.clone());
        return;
    }
    for &row in zs {
        if !current.iter().any(|&(_, r)| r == row) {
            current.push((xs[pos], row));
            collect_injections_into(xs, zs, pos + 1, current, out);
            current.pop();
        }
    }
}

fn sample_free_row(
    x: &SpaceDescriptor,
    shape: (usize, usize),
    ucp: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ComplexMatrix> {
    let (qr, sr) = shape;
    if ucp {
        let q = uniform_square(x).ok_or_else(|| {
            Error::Precondition("system embedding nets need uniform square blocks".into())
        })?;
        if (qr, sr) != (q, q) {
            return Err(Error::Precondition("system rows must match the block size".into()));
        }
        return Ok(random_ucp(x.blocks.len(), 1, q, rng)?.action);
    }
    let raw = random_scalar_matrix(qr * sr, x.dim(), rng);
    let bound = row_dist_upper(shape, &raw)?;
    if bound < 1e-12 {
        return Ok(raw);
    }
    let t: f64 = rng.gen::<f64>().powf(1.0 / (2.0 * x.dim() as f64));
    Ok(raw.scale(C64::new(t / bound, 0.0)))
}

fn free_row_net(
    x: &SpaceDescriptor,
    shape: (usize, usize),
    ucp: bool,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ComplexMatrix>> {
    let mut members: Vec<ComplexMatrix> = Vec::new();
    if !ucp {
        members.push(ComplexMatrix::zeros(shape.0 * shape.1, x.dim()));
    }
    for round in 0..24 {
        let mut added = 0usize;
        for _ in 0..30 {
            let cand = sample_free_row(x, shape, ucp, rng)?;
            let mut covered = false;
            for m in &members {
                if row_dist_upper(shape, &m.sub(&cand))? <= radius {
                    covered = true;
                    break;
                }
            }
            if !covered {
                members.push(cand);
                added += 1;
            }
        }
        if (added == 0 && round >= 1) || members.len() > 80 {
            break;
        }
    }
    Ok(members)
}

fn auto_entries(
    shape: (usize, usize),
    ucp: bool,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(ComplexMatrix, ComplexMatrix)> {
    let (q, s) = shape;
    let mut out = vec![(ComplexMatrix::identity(q), ComplexMatrix::identity(s))];
    if q * s == 1 {
        if ucp {
            return out; // conjugation is trivial on scalars
        }
        let count = (std::f64::consts::TAU / (0.7 * eps)).ceil() as usize;
        for k in 1..count {
            let th = std::f64::consts::TAU * k as f64 / count as f64;
            out.push((
                ComplexMatrix {
                    rows: 1,
                    cols: 1,
                    entries: vec![C64::from_polar(1.0, th)],
                },
                ComplexMatrix::identity(1),
            ));
        }
        return out;
    }
    let count = ((std::f64::consts::TAU / (0.7 * eps)).ceil() as usize).min(24);
    for _ in 1..count {
        if ucp {
            let u = random_unitary(q, rng);
            let ustar = u.adjoint();
            out.push((u, ustar));
        } else {
            out.push((random_unitary(q, rng), random_unitary(s, rng)));
        }
    }
    out
}

fn assemble_embedding(
    x: &SpaceDescriptor,
    z: &SpaceDescriptor,
    pattern: &[Option<usize>],
    auto_pick: &[(ComplexMatrix, ComplexMatrix)],
    free_pick: &[Option<ComplexMatrix>],
) -> Result<BlockLinearMap> {
    let z_offsets = z.offsets();
    let x_offsets = x.offsets();
    let mut action = ComplexMatrix::zeros(z.dim(), x.dim());
    for (row, slot) in pattern.iter().enumerate() {
        let (zq, zs) = z.blocks[row];
        match slot {
            Some(xc) => {
                let (u, v) = &auto_pick[row];
                let (xq, xs) = x.blocks[*xc];
                for rr in 0..xq {
                    for cc in 0..xs {
                        // image of E_{rr,cc} is u E v = u[:,rr] v[cc,:]
                        for a in 0..zq {
                            for b in 0..zs {
                                action.set(
                                    z_offsets[row] + a * zs + b,
                                    x_offsets[*xc] + rr * xs + cc,
                                    u.at(a, rr) * v.at(cc, b),
                                );
                            }
                        }
                    }
                }
            }
            None => {
                let free = free_pick[row]
                    .as_ref()
                    .ok_or_else(|| Error::Internal("free row without an entry".into()))?;
                for r in 0..zq * zs {
                    for c in 0..x.dim() {
                        action.set(z_offsets[row] + r, c, free.at(r, c));
                    }
                }
            }
        }
    }
    BlockLinearMap::new(x.clone(), z.clone(), action)
}

fn build_emb_generators(
    x: &SpaceDescriptor,
    z: &SpaceDescriptor,
    eps: f64,
    ucp: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Option<EmbGenerators>> {
    // shape classes: X coordinates must inject into same-shape Z rows
    let mut shapes: Vec<(usize, usize)> = Vec::new();
    for &b in x.blocks.iter().chain(z.blocks.iter()) {
        if !shapes.contains(&b) {
            shapes.push(b);
        }
    }
    let mut per_shape: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for &shape in &shapes {
        let xs: Vec<usize> = x
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == shape)
            .map(|(i, _)| i)
            .collect();
        let zs: Vec<usize> = z
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == shape)
            .map(|(i, _)| i)
            .collect();
        if xs.len() > zs.len() {
            return Ok(None); // no embeddings at all
        }
        per_shape.push((xs, zs));
    }
    // patterns: cartesian product of per-shape injections
    let mut patterns: Vec<Vec<Option<usize>>> = vec![vec![None; z.blocks.len()]];
    for (xs, zs) in &per_shape {
        if xs.is_empty() {
            continue;
        }
        let mut injections = Vec::new();
        let mut current = Vec::new();
        collect_injections_into(xs, zs, 0, &mut current, &mut injections);
        let mut next = Vec::new();
        for base in &patterns {
            for inj in &injections {
                let mut pat = base.clone();
                for &(xc, row) in inj {
                    pat[row] = Some(xc);
                }
                next.push(pat);
            }
        }
        patterns = next;
        if patterns.len() > EMB_PATTERN_CAP * 8 {
            break;
        }
    }
    if patterns.len() > EMB_PATTERN_CAP {
        // deterministic thinning keeps the first block plus a seeded
        // sample of the rest
        let mut kept: Vec<Vec<Option<usize>>> = patterns[..EMB_PATTERN_CAP / 2].to_vec();
        while kept.len() < EMB_PATTERN_CAP {
            let pick = rng.gen_range(0..patterns.len());
            if !kept.contains(&patterns[pick]) {
                kept.push(patterns[pick].clone());
            }
        }
        patterns = kept;
    }
    let mut autos = Vec::with_capacity(z.blocks.len());
    let mut free = Vec::with_capacity(z.blocks.len());
    for &shape in &z.blocks {
        autos.push(auto_entries(shape, ucp, eps, rng));
        free.push(free_row_net(x, shape, ucp, 0.7 * eps, rng)?);
    }
    Ok(Some(EmbGenerators {
        patterns,
        autos,
        free,
    }))
}

fn action_bytes(action: &ComplexMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(action.entries.len() * 16);
    for z in &action.entries {
        out.extend_from_slice(&(((z.re * 1e9).round()) as i64).to_be_bytes());
        out.extend_from_slice(&(((z.im * 1e9).round()) as i64).to_be_bytes());
    }
    out
}

/// Finite net of class embeddings X → Z generated through row patterns,
/// discrete automorphism entries and a free-row net, with a sampled
/// density audit against the same generator family run at continuous
/// parameters. Returns the empty set when no embedding exists.
pub fn emb_net(
    x: &SpaceDescriptor,
    z: &SpaceDescriptor,
    eps: f64,
    seed: u64,
) -> Result<Vec<BlockLinearMap>> {
    if eps <= 0.0 {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    if !x.is_full() || !z.is_full() {
        return Err(Error::Precondition("embedding nets need full spaces".into()));
    }
    if x.category != z.category {
        return Err(Error::Precondition("spaces must share their class".into()));
    }
    let ucp = x.category == Category::Osy;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gens = match build_emb_generators(x, z, eps, ucp, &mut rng)? {
        Some(g) => g,
        None => return Ok(Vec::new()),
    };
    let mut members: Vec<BlockLinearMap> = Vec::new();
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let push_member = |m: BlockLinearMap,
                           members: &mut Vec<BlockLinearMap>,
                           seen: &mut HashSet<Vec<u8>>| {
        let key = action_bytes(&m.action);
        if seen.insert(key) {
            members.push(m);
        }
    };
    if x.blocks == z.blocks {
        let id = BlockLinearMap::new(x.clone(), z.clone(), ComplexMatrix::identity(x.dim()))?;
        push_member(id, &mut members, &mut seen);
    }
    // full product if it fits the cap, else a seeded sample of choices
    let mut total: u128 = 0;
    for pat in &gens.patterns {
        let mut count: u128 = 1;
        for (row, slot) in pat.iter().enumerate() {
            count = count.saturating_mul(match slot {
                Some(_) => gens.autos[row].len() as u128,
                None => gens.free[row].len().max(1) as u128,
            });
        }
        total = total.saturating_add(count);
    }
    if total <= EMB_MEMBER_CAP as u128 {
        for pat in &gens.patterns {
            let mut choice: Vec<usize> = vec![0; pat.len()];
            loop {
                let auto_pick: Vec<(ComplexMatrix, ComplexMatrix)> = (0..pat.len())
                    .map(|row| match pat[row] {
                        Some(_) => gens.autos[row][choice[row]].clone(),
                        None => (
                            ComplexMatrix::identity(z.blocks[row].0),
                            ComplexMatrix::identity(z.blocks[row].1),
                        ),
                    })
                    .collect();
                let free_pick: Vec<Option<ComplexMatrix>> = (0..pat.len())
                    .map(|row| match pat[row] {
                        Some(_) => None,
                        None => Some(gens.free[row][choice[row]].clone()),
                    })
                    .collect();
                push_member(
                    assemble_embedding(x, z, pat, &auto_pick, &free_pick)?,
                    &mut members,
                    &mut seen,
                );
                // odometer
                let mut row = pat.len();
                let mut done = true;
                while row > 0 {
                    row -= 1;
                    let limit = match pat[row] {
                        Some(_) => gens.autos[row].len(),
                        None => gens.free[row].len().max(1),
                    };
                    choice[row] += 1;
                    if choice[row] < limit {
                        done = false;
                        break;
                    }
                    choice[row] = 0;
                }
                if done {
                    break;
                }
            }
        }
    } else {
        while members.len() < EMB_MEMBER_CAP {
            let pat = &gens.patterns[rng.gen_range(0..gens.patterns.len())];
            let auto_pick: Vec<(ComplexMatrix, ComplexMatrix)> = (0..pat.len())
                .map(|row| match pat[row] {
                    Some(_) => gens.autos[row][rng.gen_range(0..gens.autos[row].len())].clone(),
                    None => (
                        ComplexMatrix::identity(z.blocks[row].0),
                        ComplexMatrix::identity(z.blocks[row].1),
                    ),
                })
                .collect();
            let free_pick: Vec<Option<ComplexMatrix>> = (0..pat.len())
                .map(|row| match pat[row] {
                    Some(_) => None,
                    None => Some(gens.free[row][rng.gen_range(0..gens.free[row].len())].clone()),
                })
                .collect();
            push_member(
                assemble_embedding(x, z, pat, &auto_pick, &free_pick)?,
                &mut members,
                &mut seen,
            );
        }
    }
    // density audit: continuous-parameter samples from the same family
    for _ in 0..EMB_DENSITY_SAMPLES {
        let pat = &gens.patterns[rng.gen_range(0..gens.patterns.len())];
        let auto_pick: Vec<(ComplexMatrix, ComplexMatrix)> = (0..pat.len())
            .map(|row| {
                let (zq, zs) = z.blocks[row];
                match pat[row] {
                    Some(_) => {
                        if zq * zs == 1 {
                            let th = rng.gen::<f64>() * std::f64::consts::TAU;
                            if ucp {
                                (ComplexMatrix::identity(1), ComplexMatrix::identity(1))
                            } else {
                                (
                                    ComplexMatrix {
                                        rows: 1,
                                        cols: 1,
                                        entries: vec![C64::from_polar(1.0, th)],
                                    },
                                    ComplexMatrix::identity(1),
                                )
                            }
                        } else if ucp {
                            let u = random_unitary(zq, &mut rng);
                            let ustar = u.adjoint();
                            (u, ustar)
                        } else {
                            (random_unitary(zq, &mut rng), random_unitary(zs, &mut rng))
                        }
                    }
                    None => (ComplexMatrix::identity(zq), ComplexMatrix::identity(zs)),
                }
            })
            .collect();
        let mut free_pick: Vec<Option<ComplexMatrix>> = Vec::with_capacity(pat.len());
        for (row, slot) in pat.iter().enumerate() {
            free_pick.push(match slot {
                Some(_) => None,
                None => Some(sample_free_row(x, z.blocks[row], ucp, &mut rng)?),
            });
        }
        let sample = assemble_embedding(x, z, pat, &auto_pick, &free_pick)?;
        let mut covered = false;
        for m in &members {
            if emb_dist_upper(z, &m.action, &sample.action)? <= eps {
                covered = true;
                break;
            }
        }
        if !covered {
            return Err(Error::Net(format!(
                "embedding-net density failed at eps = {eps}: uncovered sample {}",
                serde_json::to_string(&sample.action).unwrap_or_default()
            )));
        }
    }
    Ok(members)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscillationReport {
    pub set: String,
    pub osc: f64,
    pub epsilon: f64,
}

/// cb distance between two maps with matching shapes; exact max-row-ℓ¹
/// formula for scalar spaces, the certificate SDP otherwise.
pub fn map_cb_distance(f: &BlockLinearMap, g: &BlockLinearMap) -> Result<f64> {
    let diff = f.sub(g)?;
    let scalar = f.domain.is_full()
        && f.domain.blocks.iter().all(|&b| b == (1, 1))
        && f.codomain.blocks.iter().all(|&b| b == (1, 1));
    if scalar {
        let mut worst = 0.0f64;
        for r in 0..diff.action.rows {
            let mut row = 0.0;
            for c in 0..diff.action.cols {
                row += diff.action.at(r, c).norm();
            }
            worst = worst.max(row);
        }
        return Ok(worst);
    }
    cb_norm_value(&diff)
}

/// Evaluate a coloring on a finite set of embeddings. Lipschitz
/// colorings measure distance to members of `refs`.
pub fn color_embeddings(
    spec: &ColoringSpec,
    set: &[BlockLinearMap],
    refs: &[BlockLinearMap],
) -> Result<Vec<f64>> {
    match spec {
        ColoringSpec::Discrete { r, backend, seed } => {
            if *r == 0 {
                return Err(Error::Precondition("coloring needs r ≥ 1".into()));
            }
            match backend {
                DiscreteBackend::PreimageCount { .. } => Err(Error::Precondition(
                    "preimage-count colorings apply to rigid surjections, not embeddings".into(),
                )),
                DiscreteBackend::Table { values } => {
                    if values.len() < set.len() {
                        return Err(Error::Precondition(
                            "coloring table shorter than the set".into(),
                        ));
                    }
                    Ok(set
                        .iter()
                        .enumerate()
                        .map(|(i, _)| (values[i] % r) as f64)
                        .collect())
                }
                DiscreteBackend::Hashed => Ok(set
                    .iter()
                    .map(|f| (fnv1a(&action_bytes(&f.action), *seed) % *r as u64) as f64)
                    .collect()),
            }
        }
        ColoringSpec::Lipschitz {
            reference_indices, ..
        } => {
            if reference_indices.is_empty() {
                return Err(Error::Precondition(
                    "Lipschitz coloring needs at least one reference".into(),
                ));
            }
            for &i in reference_indices {
                if i >= refs.len() {
                    return Err(Error::Precondition(format!(
                        "reference index {i} outside the net of {} members",
                        refs.len()
                    )));
                }
            }
            set.iter()
                .map(|f| {
                    let mut best = f64::INFINITY;
                    for &ri in reference_indices {
                        best = best.min(map_cb_distance(f, &refs[ri])?);
                    }
                    Ok(best.min(1.0))
                })
                .collect()
        }
    }
}

/// Literal max pairwise difference of the supplied color values.
pub fn oscillation_value(colors: &[f64]) -> f64 {
    if colors.len() < 2 {
        return 0.0;
    }
    let max = colors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = colors.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

pub fn oscillation(
    spec: &ColoringSpec,
    set: &[BlockLinearMap],
    epsilon: f64,
) -> Result<OscillationReport> {
    let colors = color_embeddings(spec, set, set)?;
    Ok(OscillationReport {
        set: format!("{} supplied embeddings", set.len()),
        osc: oscillation_value(&colors),
        epsilon,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArpOutcome {
    pub gamma_index: Option<usize>,
    pub gamma: Option<BlockLinearMap>,
    pub report: OscillationReport,
}

/// Search for γ ∈ Emb(Y,Z) whose composites γ∘Emb(X,Y) the coloring
/// ε-stabilizes on: first success within budget, otherwise the
/// best-found oscillation with no γ claimed.
pub fn arp_search(
    x: &SpaceDescriptor,
    y: &SpaceDescriptor,
    z: &SpaceDescriptor,
    coloring: &ColoringSpec,
    eps: f64,
    seed: u64,
    budget: usize,
) -> Result<ArpOutcome> {
    let net_yz = emb_net(y, z, ARP_NET_EPS, seed ^ 0x11)?;
    let net_xy = emb_net(x, y, ARP_NET_EPS, seed ^ 0x22)?;
    if net_yz.is_empty() || net_xy.is_empty() {
        return Err(Error::Precondition(
            "no embeddings available between the requested spaces".into(),
        ));
    }
    let refs: Vec<BlockLinearMap> = match coloring {
        ColoringSpec::Lipschitz { .. } => emb_net(x, z, ARP_NET_EPS, seed ^ 0x33)?,
        _ => Vec::new(),
    };
    let mut best: Option<(usize, f64)> = None;
    let examined = budget.max(1).min(net_yz.len());
    for (gi, gamma) in net_yz.iter().enumerate().take(examined) {
        let mut composed = Vec::with_capacity(net_xy.len());
        for p in &net_xy {
            composed.push(p.then(gamma)?);
        }
        let colors = color_embeddings(coloring, &composed, &refs)?;
        let osc = oscillation_value(&colors);
        if best.map(|(_, b)| osc < b - 1e-15).unwrap_or(true) {
            best = Some((gi, osc));
        }
        if osc <= eps {
            return Ok(ArpOutcome {
                gamma_index: Some(gi),
                gamma: Some(gamma.clone()),
                report: OscillationReport {
                    set: format!(
                        "coloring of {} composites through candidate {gi}",
                        composed.len()
                    ),
                    osc,
                    epsilon: eps,
                },
            });
        }
    }
    let (gi, osc) = best.expect("at least one candidate was evaluated");
    Ok(ArpOutcome {
        gamma_index: None,
        gamma: None,
        report: OscillationReport {
            set: format!("best of {examined} candidates (index {gi})"),
            osc,
            epsilon: eps,
        },
    })
}

/// x ↦ (x, …, x): the diagonal complete isometry into `copies` copies;
/// unital, so it serves both classes.
pub fn diagonal_embedding(x: &SpaceDescriptor, copies: usize) -> Result<BlockLinearMap> {
    if copies == 0 {
        return Err(Error::Precondition("need at least one copy".into()));
    }
    let mut blocks = Vec::new();
    for _ in 0..copies {
        blocks.extend_from_slice(&x.blocks);
    }
    let cod = SpaceDescriptor::full(blocks, x.category);
    let mut action = ComplexMatrix::zeros(cod.dim(), x.dim());
    for k in 0..copies {
        for c in 0..x.dim() {
            action.set(k * x.dim() + c, c, C64::new(1.0, 0.0));
        }
    }
    BlockLinearMap::new(x.clone(), cod, action)
}
