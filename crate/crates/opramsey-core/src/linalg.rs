//! Dense complex matrices and the spectral primitives everything else
//! leans on: operator norms, Hermitian eigendecompositions, Cholesky and
//! LU factorizations.
//!
//! All routines are written for the small dense sizes this crate actually
//! meets (a few hundred rows at the very most). Jacobi-type iterations are
//! used for both the SVD and the Hermitian eigenproblem: at these sizes
//! they are simple, deterministic, and deliver high relative accuracy,
//! which the downstream norm certificates depend on.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = Complex64::new(0.0, 0.0);
pub const ONE: C64 = Complex64::new(1.0, 0.0);

/// Relative accuracy target for singular values.
pub const TOL_LINALG: f64 = 1e-11;
/// Hermitian-symmetry tolerance on inputs to the eigensolver.
pub const TOL_HERM: f64 = 1e-10;

const MAX_SWEEPS: usize = 64;

/// Dense complex matrix, row-major. Immutable in spirit: operations
/// return fresh values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<C64>,
}

/// Wire format: `{"rows": r, "cols": c, "data": [[re, im], ...]}` row-major.
#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl TryFrom<MatrixJson> for ComplexMatrix {
    type Error = Error;
    fn try_from(j: MatrixJson) -> Result<Self> {
        if j.rows == 0 || j.cols == 0 {
            return Err(Error::Dimension("matrix must be nonempty".into()));
        }
        if j.data.len() != j.rows * j.cols {
            return Err(Error::Dimension(format!(
                "data length {} does not match {}x{}",
                j.data.len(),
                j.rows,
                j.cols
            )));
        }
        Ok(ComplexMatrix {
            rows: j.rows,
            cols: j.cols,
            entries: j.data.iter().map(|p| C64::new(p[0], p[1])).collect(),
        })
    }
}

impl From<ComplexMatrix> for MatrixJson {
    fn from(m: ComplexMatrix) -> Self {
        MatrixJson {
            rows: m.rows,
            cols: m.cols,
            data: m.entries.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix {
            rows,
            cols,
            entries: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, ONE);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                entries.push(f(r, c));
            }
        }
        ComplexMatrix { rows, cols, entries }
    }

    /// Real diagonal matrix.
    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        Self::from_fn(n, n, |r, c| {
            if r == c {
                C64::new(d[r], 0.0)
            } else {
                ZERO
            }
        })
    }

    /// Elementary matrix unit E_{r,c}.
    pub fn unit(rows: usize, cols: usize, r: usize, c: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.set(r, c, ONE);
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> C64 {
        self.entries[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.entries[r * self.cols + c] = v;
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|a| a * s).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(r, k);
                if a == ZERO {
                    continue;
                }
                for c in 0..other.cols {
                    let v = out.at(r, c) + a * other.at(k, c);
                    out.set(r, c, v);
                }
            }
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.at(c, r).conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.at(c, r))
    }

    pub fn conj(&self) -> Self {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self.at(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Hilbert-Schmidt inner product tr(A† B).
    pub fn hs_inner(&self, other: &Self) -> C64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn kron(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.at(i, j);
                if a == ZERO {
                    continue;
                }
                for p in 0..other.rows {
                    for q in 0..other.cols {
                        out.set(i * other.rows + p, j * other.cols + q, a * other.at(p, q));
                    }
                }
            }
        }
        out
    }

    pub fn direct_sum(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.rows + other.rows, self.cols + other.cols);
        out.paste(0, 0, self);
        out.paste(self.rows, self.cols, other);
        out
    }

    /// Copy `block` into self with upper-left corner at (r0, c0).
    pub fn paste(&mut self, r0: usize, c0: usize, block: &Self) {
        for r in 0..block.rows {
            for c in 0..block.cols {
                self.set(r0 + r, c0 + c, block.at(r, c));
            }
        }
    }

    pub fn submatrix(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |r, c| self.at(r0 + r, c0 + c))
    }

    /// Partial trace over the left tensor factor: self is (da*db)x(da*db)
    /// indexed (i,a),(j,b); returns the db x db matrix Σ_i M[(i,a),(i,b)].
    pub fn partial_trace_left(&self, da: usize, db: usize) -> Self {
        assert_eq!(self.rows, da * db);
        assert_eq!(self.cols, da * db);
        Self::from_fn(db, db, |a, b| {
            (0..da).map(|i| self.at(i * db + a, i * db + b)).sum()
        })
    }

    pub fn herm_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut dev = 0.0f64;
        for r in 0..self.rows {
            for c in 0..self.cols {
                dev = dev.max((self.at(r, c) - self.at(c, r).conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.herm_deviation() <= tol * (1.0 + self.max_abs())
    }

    /// Largest singular value to ~1e-11 relative accuracy.
    pub fn op_norm(&self) -> Result<f64> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Dimension("op_norm of empty matrix".into()));
        }
        Ok(self.singular_values()?.first().copied().unwrap_or(0.0))
    }

    /// Singular values, descending, via one-sided Jacobi on the thinner side.
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        let (mut sv, _, _) = self.svd_internal(false)?;
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Ok(sv)
    }

    /// Full SVD: returns (singular values descending, U, V) with
    /// self = U diag(s) V†, U of shape rows x k, V of shape cols x k,
    /// k = min(rows, cols).
    pub fn svd(&self) -> Result<(Vec<f64>, ComplexMatrix, ComplexMatrix)> {
        let transposed = self.rows < self.cols;
        let work = if transposed { self.adjoint() } else { self.clone() };
        let (sv, u, v) = work.svd_internal(true)?;
        // sort descending, permuting columns of U and V alike
        let mut idx: Vec<usize> = (0..sv.len()).collect();
        idx.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap());
        let k = sv.len();
        let sorted: Vec<f64> = idx.iter().map(|&i| sv[i]).collect();
        let u = u.expect("svd_internal returned no U");
        let v = v.expect("svd_internal returned no V");
        let pick = |m: &ComplexMatrix| {
            ComplexMatrix::from_fn(m.rows, k, |r, c| m.at(r, idx[c]))
        };
        let (u, v) = (pick(&u), pick(&v));
        if transposed {
            Ok((sorted, v, u))
        } else {
            Ok((sorted, u, v))
        }
    }

    /// One-sided Jacobi (Hestenes) on columns. Operates on the matrix with
    /// rows >= cols for op_norm-style calls; `svd` handles orientation.
    fn svd_internal(
        &self,
        want_vectors: bool,
    ) -> Result<(Vec<f64>, Option<ComplexMatrix>, Option<ComplexMatrix>)> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Dimension("svd of empty matrix".into()));
        }
        let work = if self.rows < self.cols && !want_vectors {
            self.adjoint()
        } else {
            self.clone()
        };
        let m = work.rows;
        let n = work.cols;
        // columns as contiguous vectors
        let mut cols: Vec<Vec<C64>> = (0..n)
            .map(|j| (0..m).map(|i| work.at(i, j)).collect())
            .collect();
        let mut v = if want_vectors {
            Some(ComplexMatrix::identity(n))
        } else {
            None
        };
        let scale = work.frobenius();
        if scale == 0.0 {
            let u = want_vectors.then(|| {
                ComplexMatrix::from_fn(m, n, |r, c| if r == c { ONE } else { ZERO })
            });
            return Ok((vec![0.0; n], u, v));
        }
        let tol = 1e-15;
        for _sweep in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let mut alpha = 0.0f64;
                    let mut beta = 0.0f64;
                    let mut gamma = ZERO;
                    for i in 0..m {
                        alpha += cols[p][i].norm_sqr();
                        beta += cols[q][i].norm_sqr();
                        gamma += cols[p][i].conj() * cols[q][i];
                    }
                    let g = gamma.norm();
                    if g <= tol * (alpha * beta).sqrt() || g == 0.0 {
                        continue;
                    }
                    rotated = true;
                    let phase = gamma / g;
                    // rotation angle zeroing the off-diagonal of the 2x2 Gram
                    let tau = (alpha - beta) / (2.0 * g);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let se = phase * s;
                    for i in 0..m {
                        let cp = cols[p][i];
                        let cq = cols[q][i];
                        cols[p][i] = cp * c + cq * se.conj();
                        cols[q][i] = cq * c - cp * se;
                    }
                    if let Some(vm) = v.as_mut() {
                        for i in 0..n {
                            let vp = vm.at(i, p);
                            let vq = vm.at(i, q);
                            vm.set(i, p, vp * c + vq * se.conj());
                            vm.set(i, q, vq * c - vp * se);
                        }
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let sv: Vec<f64> = (0..n)
            .map(|j| cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect();
        let u = if want_vectors {
            let mut u = ComplexMatrix::zeros(m, n);
            for j in 0..n {
                let s = sv[j];
                if s > scale * 1e-300 {
                    for i in 0..m {
                        u.set(i, j, cols[j][i] / s);
                    }
                }
            }
            Some(u)
        } else {
            None
        };
        Ok((sv, u, v))
    }

    /// Eigenvalues (descending) of a Hermitian matrix together with a
    /// unitary V satisfying M = V diag(w) V† up to ~1e-9·‖M‖.
    pub fn herm_eig(&self) -> Result<(Vec<f64>, ComplexMatrix)> {
        if !self.is_square() {
            return Err(Error::Dimension("herm_eig of non-square matrix".into()));
        }
        if !self.is_hermitian(TOL_HERM) {
            return Err(Error::Symmetry(format!(
                "matrix is not Hermitian within {:e} (deviation {:e})",
                TOL_HERM,
                self.herm_deviation()
            )));
        }
        let n = self.rows;
        // work on the exact Hermitian part so roundoff in the input cannot
        // leak into the iteration
        let mut a = Self::from_fn(n, n, |r, c| (self.at(r, c) + self.at(c, r).conj()) * 0.5);
        let mut v = Self::identity(n);
        let frob = a.frobenius();
        if frob == 0.0 {
            return Ok((vec![0.0; n], v));
        }
        for _sweep in 0..MAX_SWEEPS {
            let mut off = 0.0f64;
            for r in 0..n {
                for c in (r + 1)..n {
                    off += a.at(r, c).norm_sqr();
                }
            }
            if (2.0 * off).sqrt() <= 1e-14 * frob {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let z = a.at(p, q);
                    let g = z.norm();
                    if g <= 1e-300 {
                        continue;
                    }
                    let app = a.at(p, p).re;
                    let aqq = a.at(q, q).re;
                    let phase = z / g;
                    let tau = (app - aqq) / (2.0 * g);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let se = phase * s;
                    // columns: A <- A U with U mixing columns p,q
                    for i in 0..n {
                        let aip = a.at(i, p);
                        let aiq = a.at(i, q);
                        a.set(i, p, aip * c + aiq * se.conj());
                        a.set(i, q, aiq * c - aip * se);
                    }
                    // rows: A <- U† A
                    for i in 0..n {
                        let api = a.at(p, i);
                        let aqi = a.at(q, i);
                        a.set(p, i, api * c + aqi * se);
                        a.set(q, i, aqi * c - api * se.conj());
                    }
                    a.set(p, q, ZERO);
                    a.set(q, p, ZERO);
                    for i in 0..n {
                        let vip = v.at(i, p);
                        let viq = v.at(i, q);
                        v.set(i, p, vip * c + viq * se.conj());
                        v.set(i, q, viq * c - vip * se);
                    }
                }
            }
        }
        let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (a.at(i, i).re, i)).collect();
        pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        let w: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let vs = Self::from_fn(n, n, |r, c| v.at(r, pairs[c].1));
        Ok((w, vs))
    }

    /// Smallest eigenvalue of a Hermitian matrix.
    pub fn min_eig(&self) -> Result<f64> {
        let (w, _) = self.herm_eig()?;
        Ok(*w.last().unwrap())
    }

    /// Cholesky factor L (lower triangular, positive real diagonal) with
    /// self = L L†. Fails if a pivot drops below `min_pivot`.
    pub fn cholesky(&self, min_pivot: f64) -> Result<ComplexMatrix> {
        if !self.is_square() {
            return Err(Error::Dimension("cholesky of non-square matrix".into()));
        }
        let n = self.rows;
        let mut l = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = self.at(j, j).re;
            for k in 0..j {
                d -= l.at(j, k).norm_sqr();
            }
            if d <= min_pivot {
                return Err(Error::Numerical(format!(
                    "cholesky pivot {} at row {} below {:e}",
                    d, j, min_pivot
                )));
            }
            let dj = d.sqrt();
            l.set(j, j, C64::new(dj, 0.0));
            for i in (j + 1)..n {
                let mut v = self.at(i, j);
                for k in 0..j {
                    v -= l.at(i, k) * l.at(j, k).conj();
                }
                l.set(i, j, v / dj);
            }
        }
        Ok(l)
    }

    /// Solve L x = b for lower-triangular L (forward substitution),
    /// column by column.
    pub fn solve_lower(&self, b: &ComplexMatrix) -> ComplexMatrix {
        let n = self.rows;
        let mut x = b.clone();
        for col in 0..b.cols {
            for i in 0..n {
                let mut v = x.at(i, col);
                for k in 0..i {
                    v -= self.at(i, k) * x.at(k, col);
                }
                x.set(i, col, v / self.at(i, i));
            }
        }
        x
    }

    /// Solve L† x = b for lower-triangular L (back substitution on the
    /// conjugate transpose).
    pub fn solve_lower_adjoint(&self, b: &ComplexMatrix) -> ComplexMatrix {
        let n = self.rows;
        let mut x = b.clone();
        for col in 0..b.cols {
            for ii in 0..n {
                let i = n - 1 - ii;
                let mut v = x.at(i, col);
                for k in (i + 1)..n {
                    v -= self.at(k, i).conj() * x.at(k, col);
                }
                x.set(i, col, v / self.at(i, i).conj());
            }
        }
        x
    }

    /// Solve self · X = B by LU with partial pivoting.
    pub fn lu_solve(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        if !self.is_square() || self.rows != b.rows {
            return Err(Error::Dimension("lu_solve shape mismatch".into()));
        }
        let n = self.rows;
        let mut lu = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (mut pmax, mut vmax) = (k, lu.at(k, k).norm());
            for i in (k + 1)..n {
                let v = lu.at(i, k).norm();
                if v > vmax {
                    pmax = i;
                    vmax = v;
                }
            }
            if vmax < 1e-300 {
                return Err(Error::Numerical("lu_solve: singular matrix".into()));
            }
            if pmax != k {
                for c in 0..n {
                    let t = lu.at(k, c);
                    lu.set(k, c, lu.at(pmax, c));
                    lu.set(pmax, c, t);
                }
                perm.swap(k, pmax);
            }
            let piv = lu.at(k, k);
            for i in (k + 1)..n {
                let f = lu.at(i, k) / piv;
                lu.set(i, k, f);
                for c in (k + 1)..n {
                    let v = lu.at(i, c) - f * lu.at(k, c);
                    lu.set(i, c, v);
                }
            }
        }
        let mut x = ComplexMatrix::from_fn(n, b.cols, |r, c| b.at(perm[r], c));
        for col in 0..b.cols {
            for i in 0..n {
                let mut v = x.at(i, col);
                for k in 0..i {
                    v -= lu.at(i, k) * x.at(k, col);
                }
                x.set(i, col, v);
            }
            for ii in 0..n {
                let i = n - 1 - ii;
                let mut v = x.at(i, col);
                for k in (i + 1)..n {
                    v -= lu.at(i, k) * x.at(k, col);
                }
                x.set(i, col, v / lu.at(i, i));
            }
        }
        Ok(x)
    }

    /// Column space basis by Gaussian elimination with column pivoting:
    /// returns indices of a maximal independent column set, judged against
    /// `rank_tol` relative to the largest column norm.
    pub fn independent_columns(&self, rank_tol: f64) -> Vec<usize> {
        let mut work = self.clone();
        let mut picked = Vec::new();
        let scale = self
            .entries
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        for j in 0..self.cols {
            let norm_j: f64 = (0..self.rows)
                .map(|i| work.at(i, j).norm_sqr())
                .sum::<f64>()
                .sqrt();
            if norm_j <= rank_tol * scale {
                continue;
            }
            picked.push(j);
            // orthogonalize remaining columns against column j
            let col: Vec<C64> = (0..self.rows).map(|i| work.at(i, j)).collect();
            let nsq: f64 = col.iter().map(|z| z.norm_sqr()).sum();
            for jj in (j + 1)..self.cols {
                let mut inner = ZERO;
                for i in 0..self.rows {
                    inner += col[i].conj() * work.at(i, jj);
                }
                let f = inner / nsq;
                for i in 0..self.rows {
                    let v = work.at(i, jj) - f * col[i];
                    work.set(i, jj, v);
                }
            }
        }
        picked
    }
}

/// Dispatch used by the CLI `assemble`-style plumbing and tests.
pub fn assemble(kind: &str, a: &ComplexMatrix, b: Option<&ComplexMatrix>) -> Result<ComplexMatrix> {
    match kind {
        "adjoint" => Ok(a.adjoint()),
        "kron" => {
            let b = b.ok_or_else(|| Error::Precondition("kron needs two operands".into()))?;
            Ok(a.kron(b))
        }
        "direct_sum" => {
            let b = b.ok_or_else(|| Error::Precondition("direct_sum needs two operands".into()))?;
            Ok(a.direct_sum(b))
        }
        other => Err(Error::Precondition(format!("unknown assemble kind {other:?}"))),
    }
}
