//! Operator-system calculus on the trace pairing: states, ucp tests,
//! duality between unital maps and trace-preserving maps, structure
//! checking for quotient-type block matrices, and the unital
//! perturbation trick.
//!
//! Dual-side objects live on T-blocks (trace-class duals of matrix
//! blocks) under the pairing ⟨a, x⟩ = Σ_i Tr(a_i x_i) with Tr the
//! normalized trace. All cb data for dual maps is computed on the
//! predual side through the entrywise pairing adjoint.

use serde::{Deserialize, Serialize};

use crate::cbnorm::{cb_norm_value, choi_and_cp, delta_defect_cb};
use crate::error::{Error, Result};
use crate::linalg::{C64, ComplexMatrix};
use crate::space::{BlockLinearMap, Category, DualView, SpaceDescriptor};

/// State on ℓ_∞^d: nonnegative weights summing to one. The raw input is
/// renormalized exactly and the drift recorded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateVector {
    pub weights: Vec<f64>,
    pub drift: f64,
}

impl StateVector {
    pub fn new(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Precondition("state needs at least one weight".into()));
        }
        if raw.iter().any(|&w| w < -1e-12) {
            return Err(Error::Precondition("state weights must be nonnegative".into()));
        }
        let sum: f64 = raw.iter().map(|w| w.max(0.0)).sum();
        if sum <= 0.0 {
            return Err(Error::Precondition("state weights sum to zero".into()));
        }
        Ok(StateVector {
            weights: raw.iter().map(|w| w.max(0.0) / sum).collect(),
            drift: (sum - 1.0).abs(),
        })
    }

    pub fn vertex(d: usize, i: usize) -> Self {
        let mut w = vec![0.0; d];
        w[i] = 1.0;
        StateVector { weights: w, drift: 0.0 }
    }

    /// Tr_λ(a) = Σ λ_i Tr(a_i) with Tr the normalized block trace.
    pub fn trace(&self, tuple: &[ComplexMatrix]) -> Result<C64> {
        if tuple.len() != self.weights.len() {
            return Err(Error::Dimension("state/block count mismatch".into()));
        }
        let mut acc = C64::new(0.0, 0.0);
        for (l, a) in self.weights.iter().zip(tuple) {
            acc += a.trace() * (l / a.rows as f64);
        }
        Ok(acc)
    }
}

/// Normalized trace Σ_i Tr(a_i) of a dual-side tuple.
pub fn plain_trace(tuple: &[ComplexMatrix]) -> C64 {
    tuple
        .iter()
        .map(|a| a.trace() / C64::new(a.rows as f64, 0.0))
        .sum()
}

/// The distinguished M_q-state on ℓ_∞^d(M_q): (x_1,…,x_d) ↦ x_d.
pub fn distinguished_state(d: usize, q: usize) -> Result<BlockLinearMap> {
    if d == 0 || q == 0 {
        return Err(Error::Precondition("d and q must be positive".into()));
    }
    let dom = SpaceDescriptor::l_inf(d, q, q, Category::Osy);
    let cod = SpaceDescriptor::full(vec![(q, q)], Category::Osy);
    let mut action = ComplexMatrix::zeros(q * q, d * q * q);
    for e in 0..q * q {
        action.set(e, (d - 1) * q * q + e, C64::new(1.0, 0.0));
    }
    BlockLinearMap::new(dom, cod, action)
}

/// Unital complete positivity: f(1) = 1 within 1e-9 and Choi PSD.
pub fn is_ucp(f: &BlockLinearMap) -> Result<bool> {
    if f.domain.category != Category::Osy || f.codomain.category != Category::Osy {
        return Err(Error::Precondition(
            "ucp test needs operator-system descriptors".into(),
        ));
    }
    if f.domain.unit.is_none() || f.codomain.unit.is_none() {
        return Err(Error::Precondition("ucp test needs units".into()));
    }
    let unit_in = crate::space::SpaceElement::from_tuple(
        f.domain.clone(),
        f.domain.unit_tuple()?,
    )?;
    let img = f.apply(&unit_in)?;
    let want = f.codomain.unit_tuple()?;
    let mut dev = 0.0f64;
    for (got, w) in img.data.iter().zip(&want) {
        dev = dev.max(got.sub(w).max_abs());
    }
    if dev > 1e-9 {
        return Ok(false);
    }
    Ok(choi_and_cp(f)?.is_cp)
}

/// Pairing adjoint of one dual-block entry. For φ: T_{s,q} → T_{s,q}
/// with matrix `p` on vectorized s×q inputs, returns the matrix of
/// φ*: M_{q,s} → M_{q,s} with tr(φ(a)·x) = tr(a·φ*(x)).
pub fn pairing_adjoint(q: usize, s: usize, p: &ComplexMatrix) -> Result<ComplexMatrix> {
    if p.rows != s * q || p.cols != s * q {
        return Err(Error::Dimension(format!(
            "entry must be {0}×{0} on vec(T)",
            s * q
        )));
    }
    Ok(ComplexMatrix::from_fn(q * s, q * s, |row, col| {
        // row = k·s + i (index of x-side unit), col = k'·s + i'
        let (k, i) = (row / s, row % s);
        let (kp, ip) = (col / s, col % s);
        p.at(ip * q + kp, i * q + k)
    }))
}

/// Dual of a map between full ∞-sums of a common square block M_q: the
/// trace-pairing adjoint ℓ_1^n(T_q) → ℓ_1^d(T_q), carried with its
/// explicit entry matrix.
pub fn dualize(eta: &BlockLinearMap) -> Result<BlockLinearMap> {
    if !eta.domain.is_full() || !eta.codomain.is_full() {
        return Err(Error::Precondition("dualize needs full ∞-sums".into()));
    }
    let q = common_square(&eta.domain, &eta.codomain)?;
    if eta.dual_view.is_some() {
        // dual of a dual map: transpose the stored entries back
        return predual_map(eta);
    }
    let d = eta.domain.blocks.len();
    let n = eta.codomain.blocks.len();
    let e = q * q;
    let mut entries = Vec::with_capacity(d * n);
    for i in 0..d {
        for j in 0..n {
            let block = eta.action.submatrix(j * e, i * e, e, e);
            entries.push(pairing_adjoint(q, q, &block)?);
        }
    }
    let base_dom = SpaceDescriptor::full(vec![(q, q); n], Category::Osp);
    let base_cod = SpaceDescriptor::full(vec![(q, q); d], Category::Osp);
    let mut action = ComplexMatrix::zeros(d * e, n * e);
    for i in 0..d {
        for j in 0..n {
            let ent = &entries[i * n + j];
            for r in 0..e {
                for c in 0..e {
                    action.set(i * e + r, j * e + c, ent.at(r, c));
                }
            }
        }
    }
    let mut out = BlockLinearMap::new(base_dom, base_cod, action)?;
    out.dual_view = Some(DualView {
        rows: d,
        cols: n,
        entries,
    });
    Ok(out)
}

/// Predual of a dual-side map: the same entrywise adjoint in reverse.
pub fn predual_map(phi: &BlockLinearMap) -> Result<BlockLinearMap> {
    let view = phi
        .dual_view
        .as_ref()
        .ok_or_else(|| Error::Precondition("map carries no dual view".into()))?;
    let q = common_square(&phi.domain, &phi.codomain)?;
    let e = q * q;
    let (d, n) = (view.rows, view.cols);
    let dom = SpaceDescriptor::full(vec![(q, q); d], Category::Osp);
    let cod = SpaceDescriptor::full(vec![(q, q); n], Category::Osp);
    let mut action = ComplexMatrix::zeros(n * e, d * e);
    for i in 0..d {
        for j in 0..n {
            let back = pairing_adjoint(q, q, &view.entries[i * n + j])?;
            for r in 0..e {
                for c in 0..e {
                    action.set(j * e + r, i * e + c, back.at(r, c));
                }
            }
        }
    }
    BlockLinearMap::new(dom, cod, action)
}

fn common_square(a: &SpaceDescriptor, b: &SpaceDescriptor) -> Result<usize> {
    let q = a.blocks[0].0;
    for desc in [a, b] {
        if desc.blocks.iter().any(|&(r, c)| r != q || c != q) {
            return Err(Error::Dimension(
                "maps here need a common square block size".into(),
            ));
        }
    }
    Ok(q)
}

/// cb norm of a dual-side map, computed on the predual.
pub fn dual_cb_norm(phi: &BlockLinearMap) -> Result<f64> {
    cb_norm_value(&predual_map(phi)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceConvention {
    Plain,
    PerState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceCheck {
    pub ok: bool,
    pub residual: f64,
}

/// Trace preservation of a dual-side map. `Plain` asks Tr(φ(a)) = Tr(a)
/// on a basis; `PerState` asks the stronger vertex-state condition
/// Tr_{e_i}(φ(a)) = Tr(a) for every output coordinate i.
pub fn trace_preservation_check(
    phi: &BlockLinearMap,
    convention: TraceConvention,
) -> Result<TraceCheck> {
    let view = phi
        .dual_view
        .as_ref()
        .ok_or_else(|| Error::Precondition("trace check needs a dual-side map".into()))?;
    let q = common_square(&phi.domain, &phi.codomain)?;
    let e = q * q;
    let (d, n) = (view.rows, view.cols);
    let mut residual = 0.0f64;
    for j in 0..n {
        for r in 0..q {
            for c in 0..q {
                let a_unit = ComplexMatrix::unit(q, q, r, c);
                let tr_in = if r == c { 1.0 / q as f64 } else { 0.0 };
                // φ(e_j ⊗ E_rc) coordinatewise
                let mut coords = Vec::with_capacity(d);
                for i in 0..d {
                    let ent = &view.entries[i * n + j];
                    let mut out = ComplexMatrix::zeros(q, q);
                    for rr in 0..q {
                        for cc in 0..q {
                            let mut acc = C64::new(0.0, 0.0);
                            for idx in 0..e {
                                acc += ent.at(rr * q + cc, idx) * a_unit.entries[idx];
                            }
                            out.set(rr, cc, acc);
                        }
                    }
                    coords.push(out);
                }
                match convention {
                    TraceConvention::Plain => {
                        let got = plain_trace(&coords);
                        residual = residual.max((got - C64::new(tr_in, 0.0)).norm());
                    }
                    TraceConvention::PerState => {
                        // vertex state e_i applied to both sides: the
                        // input e_j ⊗ E_rc has Tr_{e_i} = δ_ij Tr(E_rc)
                        for (i, co) in coords.iter().enumerate() {
                            let got = co.trace() / C64::new(q as f64, 0.0);
                            let want = if i == j { tr_in } else { 0.0 };
                            residual = residual.max((got - C64::new(want, 0.0)).norm());
                        }
                    }
                }
            }
        }
    }
    Ok(TraceCheck {
        ok: residual <= 1e-9,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassTag {
    Cq,
    Tpcq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Class grammar for quotient-type block matrices [φ_ij] of maps T→T:
/// each row carries a surjective complete isometry entry whose column is
/// otherwise exactly zero; each column is completely contractive (CQ) or
/// trace-preserving CP (TPCQ); TPCQ pins the last column to (0,…,0,Id).
pub fn structure_check(phi: &BlockLinearMap, class_tag: ClassTag) -> Result<StructureReport> {
    let view = phi
        .dual_view
        .as_ref()
        .ok_or_else(|| Error::Precondition("structure check needs a dual-side map".into()))?;
    let q = common_square(&phi.domain, &phi.codomain)?;
    let e = q * q;
    let (rows, cols) = (view.rows, view.cols);
    let mut violations = Vec::new();
    let entry = |i: usize, j: usize| &view.entries[i * cols + j];
    let is_zero = |m: &ComplexMatrix| m.max_abs() == 0.0;

    // row condition: a surjective complete isometry somewhere
    let mut iso_cols: Vec<Option<usize>> = vec![None; rows];
    for i in 0..rows {
        for j in 0..cols {
            if is_zero(entry(i, j)) {
                continue;
            }
            if entry_is_isometry(q, entry(i, j))? {
                iso_cols[i] = Some(j);
                break;
            }
        }
        if iso_cols[i].is_none() {
            violations.push(format!("row {i}: no surjective complete isometry entry"));
        }
    }
    // isometry-bearing columns otherwise zero
    for (i, jopt) in iso_cols.iter().enumerate() {
        if let Some(j) = jopt {
            for i2 in 0..rows {
                if i2 != i && !is_zero(entry(i2, *j)) {
                    violations.push(format!(
                        "column {j}: extra nonzero entry in row {i2} beside the isometry"
                    ));
                }
            }
        }
    }
    for j in 0..cols {
        match class_tag {
            ClassTag::Cq => {
                let v = column_predual_cb(phi, j)?;
                if v > 1.0 + 1e-8 {
                    violations.push(format!("column {j}: not completely contractive ({v:.9})"));
                }
            }
            ClassTag::Tpcq => {
                // trace preservation of the column
                for r in 0..q {
                    for c in 0..q {
                        let mut acc = C64::new(0.0, 0.0);
                        for i in 0..rows {
                            let ent = entry(i, j);
                            for rc in 0..q {
                                acc += ent.at(rc * q + rc, r * q + c);
                            }
                        }
                        let want = if r == c { 1.0 } else { 0.0 };
                        if (acc - C64::new(want, 0.0)).norm() > 1e-9 {
                            violations.push(format!("column {j}: trace not preserved"));
                        }
                    }
                }
                for i in 0..rows {
                    if !is_zero(entry(i, j)) && !entry_is_cp(q, entry(i, j))? {
                        violations.push(format!("entry ({i},{j}): not completely positive"));
                    }
                }
            }
        }
    }
    if class_tag == ClassTag::Tpcq {
        let j = cols - 1;
        for i in 0..rows {
            let want_id = i == rows - 1;
            let ent = entry(i, j);
            let ok = if want_id {
                ent.sub(&ComplexMatrix::identity(e)).max_abs() == 0.0
            } else {
                is_zero(ent)
            };
            if !ok {
                violations.push(format!("last column not pinned to (0,…,0,Id) at row {i}"));
            }
        }
    }
    // deduplicate repeated column messages
    violations.dedup();
    Ok(StructureReport {
        ok: violations.is_empty(),
        violations,
    })
}

/// Is one T→T entry a surjective complete isometry?
fn entry_is_isometry(q: usize, p: &ComplexMatrix) -> Result<bool> {
    if q == 1 {
        return Ok((p.at(0, 0).norm() - 1.0).abs() <= 1e-6);
    }
    let sv = p.singular_values()?;
    if sv.last().copied().unwrap_or(0.0) <= 1e-8 {
        return Ok(false);
    }
    let block = SpaceDescriptor::full(vec![(q, q)], Category::Osp);
    let f = BlockLinearMap::new(block.clone(), block, pairing_adjoint(q, q, p)?)?;
    Ok(delta_defect_cb(&f)? <= 1e-6)
}

fn entry_is_cp(q: usize, p: &ComplexMatrix) -> Result<bool> {
    if q == 1 {
        let z = p.at(0, 0);
        return Ok(z.im.abs() <= 1e-9 && z.re >= -1e-9);
    }
    let block = SpaceDescriptor::full(vec![(q, q)], Category::Osp);
    // CP is preserved under the pairing adjoint, so test the entry as a
    // plain M_q → M_q map
    let f = BlockLinearMap::new(block.clone(), block, p.clone())?;
    Ok(choi_and_cp(&f)?.is_cp)
}

/// cb norm of the j-th column of a dual matrix, via its predual row map.
fn column_predual_cb(phi: &BlockLinearMap, j: usize) -> Result<f64> {
    let view = phi.dual_view.as_ref().expect("checked by caller");
    let q = common_square(&phi.domain, &phi.codomain)?;
    let e = q * q;
    let rows = view.rows;
    if q == 1 {
        let mut acc = 0.0;
        for i in 0..rows {
            acc += view.entries[i * view.cols + j].at(0, 0).norm();
        }
        return Ok(acc);
    }
    let dom = SpaceDescriptor::full(vec![(q, q); rows], Category::Osp);
    let cod = SpaceDescriptor::full(vec![(q, q)], Category::Osp);
    let mut action = ComplexMatrix::zeros(e, rows * e);
    for i in 0..rows {
        let back = pairing_adjoint(q, q, &view.entries[i * view.cols + j])?;
        for r in 0..e {
            for c in 0..e {
                action.set(r, i * e + c, back.at(r, c));
            }
        }
    }
    cb_norm_value(&BlockLinearMap::new(dom, cod, action)?)
}

/// Space pointed toward a reference space R by a distinguished map s_X.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointedSpace {
    pub space: SpaceDescriptor,
    pub s_map: BlockLinearMap,
}

impl PointedSpace {
    pub fn new(space: SpaceDescriptor, s_map: BlockLinearMap) -> Result<Self> {
        if s_map.domain.blocks != space.blocks {
            return Err(Error::Dimension(
                "distinguished map must act on the space".into(),
            ));
        }
        let v = cb_norm_value(&s_map)?;
        if v > 1.0 + 1e-8 {
            return Err(Error::Precondition(format!(
                "distinguished map must be completely contractive (‖s‖_cb ≈ {v:.9})"
            )));
        }
        Ok(PointedSpace { space, s_map })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbOutcome {
    pub psi_d: BlockLinearMap,
    pub one_minus_y_psd: bool,
    pub cp_certified: bool,
    pub unitality_residual: f64,
    pub change_norm: f64,
}

/// Complete a family of CP maps to a unital one: given ψ_1,…,ψ_{d−1},
/// a candidate φ_d and a state s on M_q, return
/// ψ_d(x) = φ_d(x) + s(x)(1 − y) with y = Σψ_i(1) + φ_d(1).
/// Unitality of the completed family is exact by construction; complete
/// positivity of ψ_d is certified when 1 − y ⪰ 0 and flagged otherwise.
pub fn perturb_ucp(
    psi_list: &[BlockLinearMap],
    phi_d: &BlockLinearMap,
    s_density: &ComplexMatrix,
    eps: f64,
) -> Result<PerturbOutcome> {
    if eps <= 0.0 {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    let q = phi_d.domain.blocks[0].0;
    for f in psi_list.iter().chain([phi_d]) {
        if f.domain.blocks != vec![(q, q)] || f.codomain.blocks != vec![(q, q)] {
            return Err(Error::Dimension("maps must share one square block M_q".into()));
        }
    }
    if s_density.rows != q || s_density.cols != q {
        return Err(Error::Dimension("state density must be q×q".into()));
    }
    let tr = s_density.trace();
    if (tr - C64::new(tr.re, 0.0)).norm() > 1e-9 || tr.re <= 0.0 {
        return Err(Error::Precondition("state density needs positive real trace".into()));
    }
    if s_density.min_eig()? < -1e-9 * (1.0 + s_density.max_abs()) {
        return Err(Error::Precondition("state density must be PSD".into()));
    }
    let rho = s_density.scale(C64::new(1.0 / tr.re, 0.0));
    // y = Σψ_i(1) + φ_d(1)
    let id_q = ComplexMatrix::identity(q);
    let apply_to_unit = |f: &BlockLinearMap| -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(q, q);
        for r in 0..q {
            for c in 0..q {
                let mut v = C64::new(0.0, 0.0);
                for idx in 0..q * q {
                    v += f.action.at(r * q + c, idx) * id_q.entries[idx];
                }
                out.set(r, c, v);
            }
        }
        out
    };
    let mut y = apply_to_unit(phi_d);
    for psi in psi_list {
        y = y.add(&apply_to_unit(psi));
    }
    let one_minus_y = id_q.sub(&y);
    let gap = one_minus_y.op_norm()?;
    if gap >= eps {
        return Err(Error::Precondition(format!(
            "‖y − 1‖ = {gap:.6} is not below eps = {eps}"
        )));
    }
    // ψ_d = φ_d + s(·)(1 − y); s(E_rc) = tr(ρ E_rc) = ρ[c,r]
    let mut action = phi_d.action.clone();
    for r in 0..q {
        for c in 0..q {
            let weight = rho.at(c, r);
            if weight == C64::new(0.0, 0.0) {
                continue;
            }
            let col = r * q + c;
            for out_idx in 0..q * q {
                let cur = action.at(out_idx, col);
                action.set(out_idx, col, cur + weight * one_minus_y.entries[out_idx]);
            }
        }
    }
    let psi_d = BlockLinearMap::new(phi_d.domain.clone(), phi_d.codomain.clone(), action)?;
    // exact unitality audit
    let mut total = apply_to_unit(&psi_d);
    for psi in psi_list {
        total = total.add(&apply_to_unit(psi));
    }
    let unitality_residual = total.sub(&id_q).max_abs();
    let one_minus_y_psd = one_minus_y.min_eig()? >= -1e-12 * (1.0 + one_minus_y.max_abs());
    let cp_certified = if one_minus_y_psd {
        choi_and_cp(&psi_d)?.is_cp
    } else {
        false
    };
    Ok(PerturbOutcome {
        psi_d,
        one_minus_y_psd,
        cp_certified,
        unitality_residual,
        change_norm: gap,
    })
}

/// Random ucp map ℓ_∞^d(M_q) → ℓ_∞^n(M_q): per output coordinate a
/// Kraus family over the input coordinates, normalized exactly.
pub fn random_ucp(
    d: usize,
    n: usize,
    q: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<BlockLinearMap> {
    let dom = SpaceDescriptor::l_inf(d, q, q, Category::Osy);
    let cod = SpaceDescriptor::l_inf(n, q, q, Category::Osy);
    let e = q * q;
    let mut action = ComplexMatrix::zeros(n * e, d * e);
    for j in 0..n {
        // one Kraus operator per input coordinate, plus a fixed
        // well-conditioning term on coordinate 0 so S stays invertible
        let mut kraus: Vec<(usize, ComplexMatrix)> = (0..d)
            .map(|i| (i, crate::space::random_scalar_matrix(q, q, rng)))
            .collect();
        kraus.push((0, ComplexMatrix::identity(q).scale(C64::new(0.6, 0.0))));
        // S = Σ A†A, normalize A ← A S^{-1/2} so the row is exactly unital
        let mut s = ComplexMatrix::zeros(q, q);
        for (_, a) in &kraus {
            s = s.add(&a.adjoint().matmul(a));
        }
        let (w, v) = s.herm_eig()?;
        let mut s_inv_half = ComplexMatrix::zeros(q, q);
        for (k, &wk) in w.iter().enumerate() {
            let f = C64::new(1.0 / wk.max(1e-12).sqrt(), 0.0);
            for r in 0..q {
                for c in 0..q {
                    let cur = s_inv_half.at(r, c);
                    s_inv_half.set(r, c, cur + v.at(r, k) * f * v.at(c, k).conj());
                }
            }
        }
        for (i, a) in &kraus {
            let i = *i;
            let an = a.matmul(&s_inv_half);
            // η_j(x)_i-term = A† x A on coordinate i
            for rr in 0..q {
                for cc in 0..q {
                    for xr in 0..q {
                        for xc in 0..q {
                            // (A† E_{xr,xc} A)[rr,cc] = conj(A[xr,rr]) A[xc,cc]
                            let coeff = an.at(xr, rr).conj() * an.at(xc, cc);
                            let row = j * e + rr * q + cc;
                            let col = i * e + xr * q + xc;
                            let cur = action.at(row, col);
                            action.set(row, col, cur + coeff);
                        }
                    }
                }
            }
        }
    }
    BlockLinearMap::new(dom, cod, action)
}
