//! Concrete finite-dimensional operator spaces: ∞-sums of rectangular
//! matrix blocks ⊕_∞ M_{q_i,s_i}, their subspaces given by explicit
//! bases, matrix levels, amplification, and the Ruan-identity sampler.
//!
//! Elements always carry ambient per-block data; subspace membership is a
//! checkable residual, and maps whose domain is a subspace act through
//! basis coordinates.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, ComplexMatrix, ZERO};

/// Operator-space vs operator-system category tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    Osp,
    Osy,
}

/// Stability modulus ϖ(δ) of the amalgamation classes: δ for operator
/// spaces, 2δ for operator systems, and an extra +δ for pointed classes.
pub fn stability_modulus(category: Category, pointed: bool, delta: f64) -> f64 {
    let base = match category {
        Category::Osp => delta,
        Category::Osy => 2.0 * delta,
    };
    if pointed {
        base + delta
    } else {
        base
    }
}

/// One element of an ∞-sum written blockwise: a q_i×s_i matrix per block.
pub type BlockTuple = Vec<ComplexMatrix>;

/// Descriptor of a space ⊕_∞ M_{q_i,s_i}, optionally restricted to the
/// span of an explicit basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceJson", into = "SpaceJson")]
pub struct SpaceDescriptor {
    pub blocks: Vec<(usize, usize)>,
    pub subspace_basis: Option<Vec<BlockTuple>>,
    pub category: Category,
    pub unit: Option<BlockTuple>,
}

#[derive(Serialize, Deserialize)]
struct SpaceJson {
    blocks: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    basis: Option<Vec<Vec<ComplexMatrix>>>,
    category: Category,
    #[serde(skip_serializing_if = "Option::is_none")]
    unit: Option<Vec<ComplexMatrix>>,
}

impl TryFrom<SpaceJson> for SpaceDescriptor {
    type Error = Error;
    fn try_from(j: SpaceJson) -> Result<Self> {
        let d = SpaceDescriptor {
            blocks: j.blocks.iter().map(|b| (b[0], b[1])).collect(),
            subspace_basis: j.basis,
            category: j.category,
            unit: j.unit,
        };
        d.validate()?;
        Ok(d)
    }
}

impl From<SpaceDescriptor> for SpaceJson {
    fn from(d: SpaceDescriptor) -> Self {
        SpaceJson {
            blocks: d.blocks.iter().map(|&(q, s)| [q, s]).collect(),
            basis: d.subspace_basis,
            category: d.category,
            unit: d.unit,
        }
    }
}

impl SpaceDescriptor {
    /// Full ∞-sum with the given blocks.
    pub fn full(blocks: Vec<(usize, usize)>, category: Category) -> Self {
        let unit = (category == Category::Osy).then(|| {
            blocks
                .iter()
                .map(|&(q, _)| ComplexMatrix::identity(q))
                .collect()
        });
        SpaceDescriptor {
            blocks,
            subspace_basis: None,
            category,
            unit,
        }
    }

    /// Single full rectangular block M_{q,s}.
    pub fn matrix_block(q: usize, s: usize) -> Self {
        Self::full(vec![(q, s)], Category::Osp)
    }

    /// ℓ_∞ⁿ(M_{q,s}): n equal blocks.
    pub fn l_inf(n: usize, q: usize, s: usize, category: Category) -> Self {
        Self::full(vec![(q, s); n], category)
    }

    pub fn with_basis(mut self, basis: Vec<BlockTuple>) -> Result<Self> {
        self.subspace_basis = Some(basis);
        self.validate()?;
        Ok(self)
    }

    /// Vector-space dimension of the ambient ∞-sum.
    pub fn ambient_dim(&self) -> usize {
        self.blocks.iter().map(|&(q, s)| q * s).sum()
    }

    /// Dimension of the represented space (basis length, or ambient).
    pub fn dim(&self) -> usize {
        self.subspace_basis
            .as_ref()
            .map(|b| b.len())
            .unwrap_or_else(|| self.ambient_dim())
    }

    pub fn is_full(&self) -> bool {
        self.subspace_basis.is_none()
    }

    pub fn all_square(&self) -> bool {
        self.blocks.iter().all(|&(q, s)| q == s)
    }

    /// Offsets of each block in the concatenated vec ordering.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut acc = 0;
        for &(q, s) in &self.blocks {
            out.push(acc);
            acc += q * s;
        }
        out
    }

    pub fn zero_tuple(&self) -> BlockTuple {
        self.blocks
            .iter()
            .map(|&(q, s)| ComplexMatrix::zeros(q, s))
            .collect()
    }

    pub fn unit_tuple(&self) -> Result<BlockTuple> {
        if !self.all_square() {
            return Err(Error::Precondition(
                "unit requires all blocks square".into(),
            ));
        }
        Ok(self
            .blocks
            .iter()
            .map(|&(q, _)| ComplexMatrix::identity(q))
            .collect())
    }

    /// Flatten a block tuple into the concatenated vec ordering.
    pub fn vectorize(&self, tuple: &[ComplexMatrix]) -> Vec<C64> {
        let mut v = Vec::with_capacity(self.ambient_dim());
        for m in tuple {
            v.extend_from_slice(&m.entries);
        }
        v
    }

    pub fn unvectorize(&self, v: &[C64]) -> BlockTuple {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut at = 0;
        for &(q, s) in &self.blocks {
            out.push(ComplexMatrix {
                rows: q,
                cols: s,
                entries: v[at..at + q * s].to_vec(),
            });
            at += q * s;
        }
        out
    }

    /// Ambient basis tuples: the matrix units of every block in vec order.
    pub fn ambient_basis(&self) -> Vec<BlockTuple> {
        let mut out = Vec::with_capacity(self.ambient_dim());
        for (bi, &(q, s)) in self.blocks.iter().enumerate() {
            for r in 0..q {
                for c in 0..s {
                    let mut t = self.zero_tuple();
                    t[bi] = ComplexMatrix::unit(q, s, r, c);
                    out.push(t);
                }
            }
        }
        out
    }

    /// Basis of the represented space: the declared subspace basis, or
    /// the ambient matrix units.
    pub fn basis_tuples(&self) -> Vec<BlockTuple> {
        match &self.subspace_basis {
            Some(b) => b.clone(),
            None => self.ambient_basis(),
        }
    }

    /// Basis vectors as columns of an (ambient_dim × dim) matrix.
    pub fn basis_matrix(&self) -> ComplexMatrix {
        let basis = self.basis_tuples();
        let d = self.ambient_dim();
        ComplexMatrix::from_fn(d, basis.len(), |r, c| self.vectorize(&basis[c])[r])
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.iter().any(|&(q, s)| q == 0 || s == 0) {
            return Err(Error::Dimension("blocks must be nonempty".into()));
        }
        if let Some(basis) = &self.subspace_basis {
            if basis.is_empty() {
                return Err(Error::Precondition("subspace basis must be nonempty".into()));
            }
            for (i, t) in basis.iter().enumerate() {
                self.check_tuple_shape(t).map_err(|e| {
                    Error::Dimension(format!("basis element {i}: {e}"))
                })?;
            }
            let b = self.basis_matrix();
            let gram = b.adjoint().matmul(&b);
            let det = gram_det(&gram)?;
            if det <= 1e-12 {
                return Err(Error::Precondition(format!(
                    "subspace basis is numerically dependent (Gram determinant {det:e})"
                )));
            }
        }
        if self.category == Category::Osy {
            if !self.all_square() {
                return Err(Error::Precondition(
                    "operator systems need square blocks".into(),
                ));
            }
            let unit = self
                .unit
                .as_ref()
                .ok_or_else(|| Error::Precondition("operator systems need a unit".into()))?;
            let expect = self.unit_tuple()?;
            for (u, e) in unit.iter().zip(&expect) {
                if u.rows != e.rows || u.cols != e.cols || u.sub(e).max_abs() > 1e-12 {
                    return Err(Error::Precondition(
                        "unit must be the all-identity element".into(),
                    ));
                }
            }
            if self.subspace_basis.is_some() {
                let (res, _) = self.project_to_span(&expect);
                if res > 1e-10 {
                    return Err(Error::Precondition(format!(
                        "unit lies outside the subspace span (residual {res:e})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_tuple_shape(&self, t: &[ComplexMatrix]) -> Result<()> {
        if t.len() != self.blocks.len() {
            return Err(Error::Dimension(format!(
                "expected {} blocks, got {}",
                self.blocks.len(),
                t.len()
            )));
        }
        for (m, &(q, s)) in t.iter().zip(&self.blocks) {
            if m.rows != q || m.cols != s {
                return Err(Error::Dimension(format!(
                    "block is {}x{}, expected {q}x{s}",
                    m.rows, m.cols
                )));
            }
        }
        Ok(())
    }

    /// Distance of a tuple to the represented span together with its
    /// basis coefficients (least squares through the Gram matrix).
    pub fn project_to_span(&self, t: &[ComplexMatrix]) -> (f64, Vec<C64>) {
        let b = self.basis_matrix();
        let v = self.vectorize(t);
        let vm = ComplexMatrix {
            rows: v.len(),
            cols: 1,
            entries: v.clone(),
        };
        let gram = b.adjoint().matmul(&b);
        let rhs = b.adjoint().matmul(&vm);
        let coeff = gram.lu_solve(&rhs).expect("independent basis");
        let recon = b.matmul(&coeff);
        let res: f64 = recon
            .entries
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        (res, coeff.entries)
    }
}

fn gram_det(gram: &ComplexMatrix) -> Result<f64> {
    // Hermitian PSD: determinant from the spectrum
    let (w, _) = gram.herm_eig()?;
    Ok(w.iter().product())
}

/// Element of M_m(X) for a descriptor X: per block a (m·q)×(m·s) matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceElement {
    pub space: SpaceDescriptor,
    pub level: usize,
    pub data: Vec<ComplexMatrix>,
}

impl SpaceElement {
    pub fn new(space: SpaceDescriptor, level: usize, data: Vec<ComplexMatrix>) -> Result<Self> {
        if level == 0 {
            return Err(Error::Precondition("level must be ≥ 1".into()));
        }
        if data.len() != space.blocks.len() {
            return Err(Error::Dimension("one data matrix per block required".into()));
        }
        for (m, &(q, s)) in data.iter().zip(&space.blocks) {
            if m.rows != level * q || m.cols != level * s {
                return Err(Error::Dimension(format!(
                    "level-{level} block must be {}x{}, got {}x{}",
                    level * q,
                    level * s,
                    m.rows,
                    m.cols
                )));
            }
        }
        Ok(SpaceElement { space, level, data })
    }

    /// Level-1 element from a block tuple.
    pub fn from_tuple(space: SpaceDescriptor, t: BlockTuple) -> Result<Self> {
        Self::new(space, 1, t)
    }

    /// ∞-sum norm: max over blocks of the operator norm.
    pub fn level_norm(&self) -> Result<f64> {
        let mut best = 0.0f64;
        for m in &self.data {
            best = best.max(m.op_norm()?);
        }
        Ok(best)
    }

    /// Residual distance of the element to M_m(span); 0 for full spaces.
    pub fn membership_residual(&self) -> f64 {
        if self.space.is_full() {
            return 0.0;
        }
        let (res, _) = self.span_coefficients();
        res
    }

    /// Write the element as Σ_β C_β ⊗ b_β: returns the total residual and
    /// the m×m coefficient matrices C_β.
    pub fn span_coefficients(&self) -> (f64, Vec<ComplexMatrix>) {
        let m = self.level;
        let dim = self.space.dim();
        let mut coeffs = vec![ComplexMatrix::zeros(m, m); dim];
        let mut res_sq = 0.0f64;
        for a in 0..m {
            for b in 0..m {
                // the (a,b) entry of the M_m-matrix over X is itself a tuple
                let tuple: BlockTuple = self
                    .data
                    .iter()
                    .zip(&self.space.blocks)
                    .map(|(blk, &(q, s))| blk.submatrix(a * q, b * s, q, s))
                    .collect();
                let (res, c) = self.space.project_to_span(&tuple);
                res_sq += res * res;
                for (beta, v) in c.iter().enumerate() {
                    coeffs[beta].set(a, b, *v);
                }
            }
        }
        (res_sq.sqrt(), coeffs)
    }
}

/// Linear map between spaces, stored as a (dim codomain)×(dim domain)
/// matrix over the chosen bases (subspace basis when present, ambient
/// matrix units otherwise).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockLinearMap {
    pub domain: SpaceDescriptor,
    pub codomain: SpaceDescriptor,
    pub action: ComplexMatrix,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dual_view: Option<DualView>,
}

/// Explicit d×n block matrix [φ_{ij}] of maps T_{s,q} → T_{s,q} carried
/// by maps between ℓ_1-type duals. Entry (i,j) acts on the j-th domain
/// coordinate and lands in the i-th codomain coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualView {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries, each (s·q)×(s·q) on vectorized s×q matrices.
    pub entries: Vec<ComplexMatrix>,
}

impl BlockLinearMap {
    pub fn new(
        domain: SpaceDescriptor,
        codomain: SpaceDescriptor,
        action: ComplexMatrix,
    ) -> Result<Self> {
        if action.rows != codomain.dim() || action.cols != domain.dim() {
            return Err(Error::Dimension(format!(
                "action is {}x{}, expected {}x{}",
                action.rows,
                action.cols,
                codomain.dim(),
                domain.dim()
            )));
        }
        Ok(BlockLinearMap {
            domain,
            codomain,
            action,
            dual_view: None,
        })
    }

    pub fn identity(space: &SpaceDescriptor) -> Self {
        BlockLinearMap {
            domain: space.clone(),
            codomain: space.clone(),
            action: ComplexMatrix::identity(space.dim()),
            dual_view: None,
        }
    }

    /// Build a map between full spaces from its values on the ambient
    /// matrix units.
    pub fn from_images(
        domain: &SpaceDescriptor,
        codomain: &SpaceDescriptor,
        images: &[BlockTuple],
    ) -> Result<Self> {
        if images.len() != domain.dim() {
            return Err(Error::Dimension("one image per basis vector required".into()));
        }
        let action = ComplexMatrix::from_fn(codomain.ambient_dim(), images.len(), |r, c| {
            codomain.vectorize(&images[c])[r]
        });
        if codomain.dim() != codomain.ambient_dim() {
            return Err(Error::Precondition(
                "map images must land in a full codomain".into(),
            ));
        }
        BlockLinearMap::new(domain.clone(), codomain.clone(), action)
    }

    pub fn scale(&self, s: C64) -> Self {
        BlockLinearMap {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            action: self.action.scale(s),
            dual_view: None,
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.action.rows != other.action.rows || self.action.cols != other.action.cols {
            return Err(Error::Dimension("map difference shape mismatch".into()));
        }
        Ok(BlockLinearMap {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            action: self.action.sub(&other.action),
            dual_view: None,
        })
    }

    /// g ∘ self (self applied first). Requires self's codomain basis to
    /// coincide with g's domain coordinates.
    pub fn then(&self, g: &Self) -> Result<Self> {
        if g.action.cols != self.action.rows {
            return Err(Error::Dimension("composition shape mismatch".into()));
        }
        Ok(BlockLinearMap {
            domain: self.domain.clone(),
            codomain: g.codomain.clone(),
            action: g.action.matmul(&self.action),
            dual_view: None,
        })
    }

    /// Image of one basis vector as a codomain tuple.
    pub fn image_of_basis(&self, idx: usize) -> BlockTuple {
        let col: Vec<C64> = (0..self.action.rows).map(|r| self.action.at(r, idx)).collect();
        self.codomain.unvectorize(&col)
    }

    /// Apply at level m. The element must belong to the domain (checked
    /// through span coordinates for subspace domains).
    pub fn apply(&self, x: &SpaceElement) -> Result<SpaceElement> {
        if x.space.blocks != self.domain.blocks {
            return Err(Error::Dimension("element does not live in the domain".into()));
        }
        let m = x.level;
        let coeffs: Vec<ComplexMatrix> = if self.domain.is_full() {
            // ambient coordinates directly
            let mut out = Vec::with_capacity(self.domain.ambient_dim());
            for (bi, &(q, s)) in self.domain.blocks.iter().enumerate() {
                for r in 0..q {
                    for c in 0..s {
                        out.push(ComplexMatrix::from_fn(m, m, |a, b| {
                            x.data[bi].at(a * q + r, b * s + c)
                        }));
                    }
                }
            }
            out
        } else {
            let (res, coeffs) = x.span_coefficients();
            if res > 1e-8 * (1.0 + x.data.iter().map(|d| d.max_abs()).fold(0.0, f64::max)) {
                return Err(Error::Precondition(format!(
                    "element lies outside the subspace domain (residual {res:e})"
                )));
            }
            coeffs
        };
        // y = Σ_β C_β ⊗ f(b_β)
        let mut data: Vec<ComplexMatrix> = self
            .codomain
            .blocks
            .iter()
            .map(|&(q, s)| ComplexMatrix::zeros(m * q, m * s))
            .collect();
        for (beta, cmat) in coeffs.iter().enumerate() {
            if cmat.max_abs() == 0.0 {
                continue;
            }
            let img = self.image_of_basis(beta);
            for (bi, &(q, s)) in self.codomain.blocks.iter().enumerate() {
                let blk = &img[bi];
                if blk.max_abs() == 0.0 {
                    continue;
                }
                for a in 0..m {
                    for b in 0..m {
                        let c = cmat.at(a, b);
                        if c == ZERO {
                            continue;
                        }
                        for r in 0..q {
                            for cc in 0..s {
                                let cur = data[bi].at(a * q + r, b * s + cc);
                                data[bi].set(a * q + r, b * s + cc, cur + c * blk.at(r, cc));
                            }
                        }
                    }
                }
            }
        }
        SpaceElement::new(self.codomain.clone(), m, data)
    }

    /// The amplification f^{(m)} as an explicit map between level-m
    /// realizations (blocks scaled by m).
    pub fn amplify(&self, m: usize) -> Result<BlockLinearMap> {
        if m == 0 {
            return Err(Error::Precondition("amplification level must be ≥ 1".into()));
        }
        if m == 1 {
            return Ok(self.clone());
        }
        if !self.domain.is_full() {
            return Err(Error::Precondition(
                "explicit amplification requires a full domain".into(),
            ));
        }
        let dom = SpaceDescriptor::full(
            self.domain.blocks.iter().map(|&(q, s)| (m * q, m * s)).collect(),
            Category::Osp,
        );
        let cod = SpaceDescriptor::full(
            self.codomain.blocks.iter().map(|&(q, s)| (m * q, m * s)).collect(),
            Category::Osp,
        );
        let mut action = ComplexMatrix::zeros(cod.ambient_dim(), dom.ambient_dim());
        let dom_offsets = dom.offsets();
        let cod_offsets = cod.offsets();
        for (bj, &(q, s)) in self.domain.blocks.iter().enumerate() {
            for r in 0..m * q {
                for c in 0..m * s {
                    let (a, rr) = (r / q, r % q);
                    let (b, cc) = (c / s, c % s);
                    // basis unit E_{r,c} of the amplified block = E_{a,b} ⊗ E_{rr,cc}
                    let dom_col = dom_offsets[bj] + r * (m * s) + c;
                    let base_idx = self.domain.offsets()[bj] + rr * s + cc;
                    for (bi, &(qi, si)) in self.codomain.blocks.iter().enumerate() {
                        for ri in 0..qi {
                            for ci in 0..si {
                                let v = self
                                    .action
                                    .at(self.codomain.offsets()[bi] + ri * si + ci, base_idx);
                                if v != ZERO {
                                    let cod_row = cod_offsets[bi]
                                        + (a * qi + ri) * (m * si)
                                        + (b * si + ci);
                                    action.set(cod_row, dom_col, v);
                                }
                            }
                        }
                    }
                }
            }
        }
        BlockLinearMap::new(dom, cod, action)
    }
}

/// Stack maps with a common domain into one map into the ∞-sum of their
/// codomains.
pub fn tuple_map(components: &[BlockLinearMap]) -> Result<BlockLinearMap> {
    let first = components
        .first()
        .ok_or_else(|| Error::Precondition("tuple of maps must be nonempty".into()))?;
    let mut blocks = Vec::new();
    let mut rows = Vec::new();
    for f in components {
        if f.domain != first.domain {
            return Err(Error::Dimension("tuple components must share a domain".into()));
        }
        if !f.codomain.is_full() {
            return Err(Error::Precondition(
                "tuple components must have full codomains".into(),
            ));
        }
        blocks.extend_from_slice(&f.codomain.blocks);
        rows.push(&f.action);
    }
    let total: usize = rows.iter().map(|a| a.rows).sum();
    let cols = first.action.cols;
    let mut action = ComplexMatrix::zeros(total, cols);
    let mut at = 0;
    for a in rows {
        for r in 0..a.rows {
            for c in 0..cols {
                action.set(at + r, c, a.at(r, c));
            }
        }
        at += a.rows;
    }
    BlockLinearMap::new(
        first.domain.clone(),
        SpaceDescriptor::full(blocks, Category::Osp),
        action,
    )
}

/// δ-embedding defect of f: 0 for complete isometries, +∞ for
/// non-injective maps or maps that are not complete contractions, and
/// otherwise ‖f⁻¹ on the image‖_cb − 1. The cb norm itself is supplied
/// as an oracle so this stays independent of the solver stack.
pub fn delta_defect(
    f: &BlockLinearMap,
    cb: impl Fn(&BlockLinearMap) -> Result<f64>,
) -> Result<f64> {
    let cb_f = cb(f)?;
    if cb_f > 1.0 + 1e-7 {
        return Ok(f64::INFINITY);
    }
    let dim = f.domain.dim();
    let picked = f.action.independent_columns(1e-10);
    if picked.len() < dim {
        return Ok(f64::INFINITY);
    }
    // image basis by column reduction of the action; normalized so the
    // Gram conditioning test measures angles, not scales
    let mut image_basis = Vec::with_capacity(dim);
    let mut scales = Vec::with_capacity(dim);
    for beta in 0..dim {
        let img = f.image_of_basis(beta);
        let norm: f64 = img.iter().map(|m| m.frobenius().powi(2)).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Ok(f64::INFINITY);
        }
        let inv = C64::new(1.0 / norm, 0.0);
        image_basis.push(img.iter().map(|m| m.scale(inv)).collect::<BlockTuple>());
        scales.push(norm);
    }
    let image_ambient = SpaceDescriptor {
        blocks: f.codomain.blocks.clone(),
        subspace_basis: None,
        category: Category::Osp,
        unit: None,
    };
    let image_space = match image_ambient.with_basis(image_basis) {
        Ok(s) => s,
        // numerically dependent images: the inverse is unboundedly large
        Err(Error::Precondition(_)) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    let full_domain = SpaceDescriptor::full(f.domain.blocks.clone(), Category::Osp);
    let basis = f.domain.basis_tuples();
    let mut inverse_action = ComplexMatrix::zeros(full_domain.ambient_dim(), dim);
    for beta in 0..dim {
        let v = full_domain.vectorize(&basis[beta]);
        for (r, z) in v.iter().enumerate() {
            inverse_action.set(r, beta, z / scales[beta]);
        }
    }
    let inverse = BlockLinearMap::new(image_space, full_domain, inverse_action)?;
    Ok((cb(&inverse)? - 1.0).max(0.0))
}

/// Norm oracle used by the Ruan sampler; production code uses the real
/// level norms, tests may inject corrupted tables.
pub trait NormOracle {
    fn norm(&self, x: &SpaceElement) -> Result<f64>;
}

pub struct LevelNormOracle;

impl NormOracle for LevelNormOracle {
    fn norm(&self, x: &SpaceElement) -> Result<f64> {
        x.level_norm()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuanViolation {
    pub trial: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub levels: Vec<usize>,
    pub target_level: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuanReport {
    pub trials: usize,
    pub violations: Vec<RuanViolation>,
}

/// Sample the Ruan identity ‖Σ α_i* x_i β_i‖ ≤ ‖Σ α_i*α_i‖^{1/2} ·
/// max ‖x_i‖ · ‖Σ β_i*β_i‖^{1/2} with up to three summands and mixed
/// levels.
pub fn ruan_check(
    space: &SpaceDescriptor,
    trials: usize,
    seed: u64,
    oracle: &dyn NormOracle,
) -> Result<RuanReport> {
    if trials == 0 {
        return Err(Error::Precondition("trials must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    for trial in 0..trials {
        let ell = rng.gen_range(1..=3usize);
        let n = rng.gen_range(1..=3usize);
        let mut xs = Vec::with_capacity(ell);
        let mut alphas = Vec::with_capacity(ell);
        let mut betas = Vec::with_capacity(ell);
        for _ in 0..ell {
            let ni = rng.gen_range(1..=3usize);
            xs.push(random_element(space, ni, &mut rng));
            alphas.push(random_scalar_matrix(ni, n, &mut rng));
            betas.push(random_scalar_matrix(ni, n, &mut rng));
        }
        if let Some(v) = ruan_trial(space, trial, &xs, &alphas, &betas, n, oracle)? {
            violations.push(v);
        }
    }
    Ok(RuanReport { trials, violations })
}

/// One explicit Ruan comparison; exposed so tests can replay frozen
/// witnesses against corrupted oracles.
pub fn ruan_trial(
    space: &SpaceDescriptor,
    trial: usize,
    xs: &[SpaceElement],
    alphas: &[ComplexMatrix],
    betas: &[ComplexMatrix],
    n: usize,
    oracle: &dyn NormOracle,
) -> Result<Option<RuanViolation>> {
    // Σ α_i* x_i β_i blockwise: (α* ⊗ I_q) x_blk (β ⊗ I_s)
    let mut sum: Vec<ComplexMatrix> = space
        .blocks
        .iter()
        .map(|&(q, s)| ComplexMatrix::zeros(n * q, n * s))
        .collect();
    let mut alpha_gram = ComplexMatrix::zeros(n, n);
    let mut beta_gram = ComplexMatrix::zeros(n, n);
    let mut max_x = 0.0f64;
    for ((x, alpha), beta) in xs.iter().zip(alphas).zip(betas) {
        max_x = max_x.max(oracle.norm(x)?);
        alpha_gram = alpha_gram.add(&alpha.adjoint().matmul(alpha));
        beta_gram = beta_gram.add(&beta.adjoint().matmul(beta));
        for (bi, &(q, s)) in space.blocks.iter().enumerate() {
            let left = alpha.adjoint().kron(&ComplexMatrix::identity(q));
            let right = beta.kron(&ComplexMatrix::identity(s));
            let term = left.matmul(&x.data[bi]).matmul(&right);
            sum[bi] = sum[bi].add(&term);
        }
    }
    let combined = SpaceElement::new(space.clone(), n, sum)?;
    let lhs = oracle.norm(&combined)?;
    // matrix Cauchy-Schwarz: the Gram factors enter through square roots
    let rhs = alpha_gram.op_norm()?.sqrt() * max_x * beta_gram.op_norm()?.sqrt();
    if lhs > rhs + 1e-8 {
        Ok(Some(RuanViolation {
            trial,
            lhs,
            rhs,
            levels: xs.iter().map(|x| x.level).collect(),
            target_level: n,
        }))
    } else {
        Ok(None)
    }
}

pub fn random_scalar_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m.set(
                r,
                c,
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * 0.7,
            );
        }
    }
    m
}

/// Random level-m element of the represented space (span-respecting).
pub fn random_element(space: &SpaceDescriptor, m: usize, rng: &mut ChaCha8Rng) -> SpaceElement {
    let basis = space.basis_tuples();
    let mut data: Vec<ComplexMatrix> = space
        .blocks
        .iter()
        .map(|&(q, s)| ComplexMatrix::zeros(m * q, m * s))
        .collect();
    for b in &basis {
        let coeff = random_scalar_matrix(m, m, rng);
        for (bi, _) in space.blocks.iter().enumerate() {
            if b[bi].max_abs() == 0.0 {
                continue;
            }
            let term = coeff.kron(&b[bi]);
            data[bi] = data[bi].add(&term);
        }
    }
    SpaceElement::new(space.clone(), m, data).expect("shapes by construction")
}

/// Random unitary via Gram-Schmidt on a Gaussian matrix.
pub fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    loop {
        let g = random_scalar_matrix(n, n, rng);
        let mut cols: Vec<Vec<C64>> = (0..n)
            .map(|j| (0..n).map(|i| g.at(i, j)).collect())
            .collect();
        let mut ok = true;
        for j in 0..n {
            for k in 0..j {
                let inner: C64 = (0..n).map(|i| cols[k][i].conj() * cols[j][i]).sum();
                for i in 0..n {
                    let v = cols[j][i] - inner * cols[k][i];
                    cols[j][i] = v;
                }
            }
            let norm: f64 = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for i in 0..n {
                cols[j][i] /= norm;
            }
        }
        if ok {
            return ComplexMatrix::from_fn(n, n, |r, c| cols[c][r]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ONE;

    #[test]
    fn level_norm_unit_of_l_inf2() {
        let x = SpaceDescriptor::l_inf(2, 1, 1, Category::Osy);
        let e = SpaceElement::from_tuple(x.clone(), x.unit_tuple().unwrap()).unwrap();
        assert!((e.level_norm().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn level_norm_is_max_over_blocks() {
        let x = SpaceDescriptor::l_inf(2, 1, 1, Category::Osp);
        let e = SpaceElement::from_tuple(
            x,
            vec![
                ComplexMatrix::diag(&[2.0]),
                ComplexMatrix::diag(&[1.0]),
            ],
        )
        .unwrap();
        assert!((e.level_norm().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn level_norm_level2_nilpotent() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        let small = ComplexMatrix {
            rows: 2,
            cols: 2,
            entries: vec![ZERO, C64::new(2.0, 0.0), ZERO, ZERO],
        };
        let e = SpaceElement::new(x, 2, vec![ComplexMatrix::identity(2).kron(&small)]).unwrap();
        assert!((e.level_norm().unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn amplify_identity_is_identity() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        let f = BlockLinearMap::identity(&x);
        let f3 = f.amplify(3).unwrap();
        assert_eq!(f3.action, ComplexMatrix::identity(36));
    }

    #[test]
    fn amplified_transpose_acts_entrywise() {
        let x = SpaceDescriptor::matrix_block(2, 2);
        // transpose on M₂ in ambient coordinates
        let images = vec![
            vec![ComplexMatrix::unit(2, 2, 0, 0)],
            vec![ComplexMatrix::unit(2, 2, 1, 0)],
            vec![ComplexMatrix::unit(2, 2, 0, 1)],
            vec![ComplexMatrix::unit(2, 2, 1, 1)],
        ];
        let t = BlockLinearMap::from_images(&x, &x, &images).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let e = random_element(&x, 2, &mut rng);
        let via_amplified = {
            let t2 = t.amplify(2).unwrap();
            let amb = SpaceDescriptor::matrix_block(4, 4);
            let lifted = SpaceElement::from_tuple(amb, vec![e.data[0].clone()]).unwrap();
            t2.apply(&lifted).unwrap()
        };
        let via_apply = t.apply(&e).unwrap();
        assert!(via_amplified.data[0].sub(&via_apply.data[0]).max_abs() < 1e-12);
    }

    #[test]
    fn subspace_membership_and_apply() {
        let amb = SpaceDescriptor::l_inf(2, 1, 1, Category::Osp);
        let basis = vec![vec![
            ComplexMatrix::diag(&[1.0]),
            ComplexMatrix::diag(&[1.0]),
        ]];
        let sub = amb.clone().with_basis(basis).unwrap();
        let inside = SpaceElement::from_tuple(
            sub.clone(),
            vec![ComplexMatrix::diag(&[2.0]), ComplexMatrix::diag(&[2.0])],
        )
        .unwrap();
        assert!(inside.membership_residual() < 1e-12);
        let outside = SpaceElement::from_tuple(
            sub.clone(),
            vec![ComplexMatrix::diag(&[1.0]), ComplexMatrix::diag(&[0.0])],
        )
        .unwrap();
        assert!(outside.membership_residual() > 0.5);
        // the coordinate functional on the diagonal subspace
        let cod = SpaceDescriptor::l_inf(1, 1, 1, Category::Osp);
        let f = BlockLinearMap::new(sub, cod, ComplexMatrix::identity(1)).unwrap();
        let y = f.apply(&inside).unwrap();
        assert!((y.data[0].at(0, 0).re - 2.0).abs() < 1e-12);
        assert!(f.apply(&outside).is_err());
    }

    #[test]
    fn dependent_basis_rejected() {
        let amb = SpaceDescriptor::l_inf(2, 1, 1, Category::Osp);
        let b1 = vec![ComplexMatrix::diag(&[1.0]), ComplexMatrix::diag(&[1.0])];
        let b2 = vec![ComplexMatrix::diag(&[2.0]), ComplexMatrix::diag(&[2.0])];
        assert!(amb.with_basis(vec![b1, b2]).is_err());
    }

    #[test]
    fn osy_requires_square_and_unit() {
        let bad = SpaceDescriptor {
            blocks: vec![(1, 2)],
            subspace_basis: None,
            category: Category::Osy,
            unit: None,
        };
        assert!(bad.validate().is_err());
        let good = SpaceDescriptor::full(vec![(2, 2)], Category::Osy);
        assert!(good.validate().is_ok());
    }

    #[test]
    fn ruan_holds_on_l_inf3() {
        let x = SpaceDescriptor::l_inf(3, 1, 1, Category::Osp);
        let report = ruan_check(&x, 100, 11, &LevelNormOracle).unwrap();
        assert!(report.violations.is_empty());
    }

    #[test]
    fn ruan_holds_on_mixed_blocks() {
        let x = SpaceDescriptor::full(vec![(2, 2), (2, 1)], Category::Osp);
        let report = ruan_check(&x, 100, 13, &LevelNormOracle).unwrap();
        assert!(report.violations.is_empty());
    }

    /// Oracle scaling level-2 norms by 0.5: mixing a level-2 element down
    /// into level 1 then violates the Ruan bound.
    struct CorruptedOracle;
    impl NormOracle for CorruptedOracle {
        fn norm(&self, x: &SpaceElement) -> Result<f64> {
            let v = x.level_norm()?;
            Ok(if x.level == 2 { 0.5 * v } else { v })
        }
    }

    #[test]
    fn corrupted_norm_table_caught() {
        let space = SpaceDescriptor::matrix_block(1, 1);
        // x = I₂ ⊗ (1) at level 2, compressed to level 1 by α = β = e₁
        let x = SpaceElement::new(
            space.clone(),
            2,
            vec![ComplexMatrix::identity(2)],
        )
        .unwrap();
        let alpha = ComplexMatrix::from_fn(2, 1, |r, _| if r == 0 { ONE } else { ZERO });
        let beta = alpha.clone();
        let v = ruan_trial(
            &space,
            0,
            &[x],
            std::slice::from_ref(&alpha),
            std::slice::from_ref(&beta),
            1,
            &CorruptedOracle,
        )
        .unwrap();
        let v = v.expect("corrupted oracle must violate the Ruan bound");
        assert!(v.lhs > v.rhs + 1e-8);
        // sampled search also trips over corrupted tables
        let report = ruan_check(&space, 300, 5, &CorruptedOracle).unwrap();
        assert!(!report.violations.is_empty());
    }

    #[test]
    fn moduli_config() {
        assert_eq!(stability_modulus(Category::Osp, false, 0.1), 0.1);
        assert_eq!(stability_modulus(Category::Osy, false, 0.1), 0.2);
        assert!((stability_modulus(Category::Osp, true, 0.1) - 0.2).abs() < 1e-15);
        assert!((stability_modulus(Category::Osy, true, 0.1) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn space_json_round_trip() {
        let x = SpaceDescriptor::full(vec![(2, 2), (1, 2)], Category::Osp);
        let s = serde_json::to_string(&x).unwrap();
        let back: SpaceDescriptor = serde_json::from_str(&s).unwrap();
        assert_eq!(back, x);
    }
}
