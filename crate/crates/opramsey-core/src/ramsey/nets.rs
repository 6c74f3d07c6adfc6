//! Column nets P, structured matrix nets Q, the α encodings, and the
//! rigid surjection τ built from a quotient map between ∞-sums.
//!
//! Everything here lives on the dual (trace-class) side: a column is a
//! tuple of maps T_{s,q} → T_{s,q}, one per output coordinate, and all
//! norms are cb norms computed through the predual.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbnorm::cb_norm_value;
use crate::duality::{ClassTag, pairing_adjoint, structure_check};
use crate::error::{Error, Result};
use crate::linalg::{C64, ComplexMatrix};
use crate::space::{BlockLinearMap, Category, DualView, SpaceDescriptor};

const MAX_NET_MEMBERS: usize = 200_000;
const BUILD_ROUNDS: usize = 4096;
const STALL_ROUNDS: usize = 4;
const DENSITY_SAMPLES: usize = 1000;

/// One column map T_{s,q} → ℓ_1^d(T_{s,q}): a component matrix per
/// output coordinate, acting on vectorized s×q inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetColumn {
    pub components: Vec<ComplexMatrix>,
    /// cb norm of the whole column (CQ) or of its first d−1 coordinates
    /// (TPCQ); the net order refines this.
    pub comparison_norm: f64,
}

impl NetColumn {
    fn serial_key(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for c in &self.components {
            for z in &c.entries {
                out.extend_from_slice(&z.re.to_bits().to_be_bytes());
                out.extend_from_slice(&z.im.to_bits().to_be_bytes());
            }
        }
        out
    }
}

/// Finite eps-net of admissible columns, ordered by comparison norm with
/// a lexicographic tie-break on serialized entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetP {
    pub class_tag: ClassTag,
    pub d: usize,
    pub q: usize,
    pub s: usize,
    pub eps: f64,
    pub maps: Vec<NetColumn>,
    /// largest distance over which a density sample was covered by a
    /// comparison-norm-zero member (the snap to zero / pinned form)
    pub snap_report: f64,
}

/// One structured m×d matrix: every column exactly one nonzero entry
/// drawn from the automorphism net, every row at most one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QMember {
    /// row index of the nonzero entry of each column
    pub rows_of_columns: Vec<usize>,
    /// automorphism index of each column's entry
    pub entries: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetQ {
    pub class_tag: ClassTag,
    pub d: usize,
    pub m: usize,
    pub q: usize,
    pub s: usize,
    pub eps0: f64,
    /// automorphisms a ↦ u a v of T_{s,q} as (u, v) pairs; index 0 is
    /// the identity
    pub unitary_net: Vec<(ComplexMatrix, ComplexMatrix)>,
    pub members: Vec<QMember>,
}

impl NetQ {
    /// Matrix of the automorphism a ↦ u a v on vectorized s×q inputs.
    pub fn automorphism_matrix(&self, idx: usize) -> ComplexMatrix {
        let (u, v) = &self.unitary_net[idx];
        let (s, q) = (self.s, self.q);
        ComplexMatrix::from_fn(s * q, s * q, |rc, rpcp| {
            let (r, c) = (rc / q, rc % q);
            let (rp, cp) = (rpcp / q, rpcp % q);
            u.at(r, rp) * v.at(cp, c)
        })
    }

    /// Entry matrix of member `b` as an m×d grid (zeros elsewhere).
    pub fn member_entries(&self, b: usize) -> Vec<Vec<Option<ComplexMatrix>>> {
        let mem = &self.members[b];
        let mut grid = vec![vec![None; self.d]; self.m];
        for (col, (&row, &e)) in mem
            .rows_of_columns
            .iter()
            .zip(&mem.entries)
            .enumerate()
            .map(|(c, re)| (c, re))
        {
            grid[row][col] = Some(self.automorphism_matrix(e));
        }
        grid
    }
}

pub struct Nets {
    pub p: NetP,
    pub q: NetQ,
}

/// cb norm of a dual-side column (tuple of T→T components) through its
/// predual row map. Scalar blocks short-circuit to the ℓ¹ formula.
pub fn column_cb(components: &[ComplexMatrix], q: usize, s: usize) -> Result<f64> {
    if components.is_empty() {
        return Ok(0.0);
    }
    if q * s == 1 {
        return Ok(components.iter().map(|c| c.at(0, 0).norm()).sum());
    }
    let d = components.len();
    let e = q * s;
    let dom = SpaceDescriptor::l_inf(d, q, s, Category::Osp);
    let cod = SpaceDescriptor::full(vec![(q, s)], Category::Osp);
    let mut action = ComplexMatrix::zeros(e, d * e);
    for (i, comp) in components.iter().enumerate() {
        let back = pairing_adjoint(q, s, comp)?;
        for r in 0..e {
            for c in 0..e {
                action.set(r, i * e + c, back.at(r, c));
            }
        }
    }
    cb_norm_value(&BlockLinearMap::new(dom, cod, action)?)
}

fn column_distance(a: &[ComplexMatrix], b: &[ComplexMatrix], q: usize, s: usize) -> Result<f64> {
    if q * s == 1 {
        return Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| (x.entries[0] - y.entries[0]).norm())
            .sum());
    }
    let diff: Vec<ComplexMatrix> = a.iter().zip(b).map(|(x, y)| x.sub(y)).collect();
    column_cb(&diff, q, s)
}

fn comparison_norm(class_tag: ClassTag, components: &[ComplexMatrix], q: usize, s: usize) -> Result<f64> {
    match class_tag {
        ClassTag::Cq => column_cb(components, q, s),
        ClassTag::Tpcq => {
            let head = &components[..components.len().saturating_sub(1)];
            column_cb(head, q, s)
        }
    }
}

fn zero_column(d: usize, e: usize) -> Vec<ComplexMatrix> {
    (0..d).map(|_| ComplexMatrix::zeros(e, e)).collect()
}

fn embedding_column(d: usize, e: usize, i: usize) -> Vec<ComplexMatrix> {
    let mut c = zero_column(d, e);
    c[i] = ComplexMatrix::identity(e);
    c
}

/// Sample an admissible column for the class: completely contractive
/// (CQ), or trace-preserving completely positive (TPCQ).
fn sample_column(
    class_tag: ClassTag,
    d: usize,
    q: usize,
    s: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ComplexMatrix>> {
    let e = q * s;
    match class_tag {
        ClassTag::Cq => {
            if e == 1 {
                // shell-weighted radius in real dimension 2d, Dirichlet
                // magnitudes, uniform phases
                let t: f64 = rng.gen::<f64>().powf(1.0 / (2.0 * d as f64));
                let mags: Vec<f64> = (0..d).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
                let total: f64 = mags.iter().sum();
                Ok((0..d)
                    .map(|i| {
                        let th = rng.gen::<f64>() * std::f64::consts::TAU;
                        ComplexMatrix {
                            rows: 1,
                            cols: 1,
                            entries: vec![C64::from_polar(t * mags[i] / total, th)],
                        }
                    })
                    .collect())
            } else {
                let raw: Vec<ComplexMatrix> = (0..d)
                    .map(|_| crate::space::random_scalar_matrix(e, e, rng))
                    .collect();
                let norm = column_cb(&raw, q, s)?;
                if norm <= 1e-12 {
                    return sample_column(class_tag, d, q, s, rng);
                }
                let t: f64 = rng.gen::<f64>().powf(0.25);
                let f = C64::new(t / norm, 0.0);
                Ok(raw.iter().map(|m| m.scale(f)).collect())
            }
        }
        ClassTag::Tpcq => {
            if e == 1 {
                let mags: Vec<f64> = (0..d).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
                let total: f64 = mags.iter().sum();
                Ok(mags
                    .iter()
                    .map(|m| ComplexMatrix::diag(&[m / total]))
                    .collect())
            } else {
                // Kraus family normalized on the left: Σ V_i V_i† = 1
                let q_side = q; // s == q for TPCQ columns
                let vs: Vec<ComplexMatrix> = (0..d)
                    .map(|_| crate::space::random_scalar_matrix(q_side, q_side, rng))
                    .collect();
                let mut sum = ComplexMatrix::zeros(q_side, q_side);
                for v in &vs {
                    sum = sum.add(&v.matmul(&v.adjoint()));
                }
                for i in 0..q_side {
                    let c = sum.at(i, i) + C64::new(1e-9, 0.0);
                    sum.set(i, i, c);
                }
                let (w, vec) = sum.herm_eig()?;
                let mut inv_half = ComplexMatrix::zeros(q_side, q_side);
                for (k, &wk) in w.iter().enumerate() {
                    let f = C64::new(1.0 / wk.max(1e-12).sqrt(), 0.0);
                    for r in 0..q_side {
                        for c in 0..q_side {
                            let cur = inv_half.at(r, c);
                            inv_half.set(r, c, cur + vec.at(r, k) * f * vec.at(c, k).conj());
                        }
                    }
                }
                Ok(vs
                    .iter()
                    .map(|v| {
                        let k = inv_half.matmul(v);
                        // a ↦ k† a k on vec coordinates
                        ComplexMatrix::from_fn(e, e, |rc, rpcp| {
                            let (r, c) = (rc / q_side, rc % q_side);
                            let (rp, cp) = (rpcp / q_side, rpcp % q_side);
                            k.at(rp, r).conj() * k.at(cp, c)
                        })
                    })
                    .collect())
            }
        }
    }
}

/// Norm-shrunk copy of a sampled column: strictly smaller comparison
/// norm, within eps/2 of the original.
fn shrink_column(
    class_tag: ClassTag,
    components: &[ComplexMatrix],
    comp_norm: f64,
    eps: f64,
) -> Vec<ComplexMatrix> {
    match class_tag {
        ClassTag::Cq => {
            let eta = (0.45 * eps / comp_norm.max(1e-12)).min(0.45);
            let f = C64::new(1.0 - eta, 0.0);
            components.iter().map(|m| m.scale(f)).collect()
        }
        ClassTag::Tpcq => {
            // scale the leading coordinates, push the lost trace into
            // the pinned coordinate to stay trace-preserving
            let eta = (0.225 * eps / comp_norm.max(1e-12)).min(0.45);
            let d = components.len();
            let f = C64::new(1.0 - eta, 0.0);
            let mut out: Vec<ComplexMatrix> = components[..d - 1].iter().map(|m| m.scale(f)).collect();
            let e = components[0].rows;
            // absorbed trace: η·(Σ_{i<d} w_i) is TP-deficit; add η times
            // the leading coordinates' sum into the pinned slot
            let mut pinned = components[d - 1].clone();
            for m in &components[..d - 1] {
                pinned = pinned.add(&m.scale(C64::new(eta, 0.0)));
            }
            let _ = e;
            out.push(pinned);
            out
        }
    }
}

struct CoverQuery {
    covered: bool,
    by_zero_norm: Option<f64>,
}

/// `net` must be sorted ascending by comparison norm. A covering member
/// needs strictly smaller norm, and the norm is 1-Lipschitz under the
/// column distance, so only the window [comp − radius, comp) can cover.
/// `full_norm` is the distance from the query to an all-zero member;
/// only nets with a zero member consult it (for those the comparison
/// norm is the full column norm, so callers pass it through). The
/// shortcut matters in the matrix case where each distance is an SDP.
fn covered_strictly(
    net: &[NetColumn],
    components: &[ComplexMatrix],
    comp_norm: f64,
    full_norm: f64,
    radius: f64,
    q: usize,
    s: usize,
) -> Result<CoverQuery> {
    let mut by_zero_norm = None;
    let lo = net.partition_point(|m| m.comparison_norm < comp_norm - radius - 1e-12);
    let hi = net.partition_point(|m| m.comparison_norm < comp_norm - 1e-12);
    for member in &net[lo..hi] {
        let is_zero_member = member.comparison_norm == 0.0
            && member.components.iter().all(|m| m.max_abs() == 0.0);
        let dist = if is_zero_member {
            full_norm
        } else {
            column_distance(&member.components, components, q, s)?
        };
        if dist <= radius {
            if member.comparison_norm == 0.0 {
                by_zero_norm = Some(dist);
            }
            return Ok(CoverQuery {
                covered: true,
                by_zero_norm,
            });
        }
    }
    Ok(CoverQuery {
        covered: false,
        by_zero_norm: None,
    })
}

fn build_net_p(
    class_tag: ClassTag,
    d: usize,
    q: usize,
    s: usize,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<NetP> {
    if eps <= 0.0 {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    if class_tag == ClassTag::Tpcq && q != s {
        return Err(Error::Precondition(
            "trace-preserving columns need square blocks".into(),
        ));
    }
    let e = q * s;
    let mut maps: Vec<NetColumn> = Vec::new();
    let push = |maps: &mut Vec<NetColumn>, comps: Vec<ComplexMatrix>| -> Result<()> {
        let cn = comparison_norm(class_tag, &comps, q, s)?;
        maps.push(NetColumn {
            components: comps,
            comparison_norm: cn,
        });
        Ok(())
    };
    match class_tag {
        ClassTag::Cq => {
            push(&mut maps, zero_column(d, e))?;
            for i in 0..d {
                push(&mut maps, embedding_column(d, e, i))?;
            }
        }
        ClassTag::Tpcq => {
            for i in 0..d {
                push(&mut maps, embedding_column(d, e, i))?;
            }
        }
    }
    maps.sort_by(|a, b| a.comparison_norm.partial_cmp(&b.comparison_norm).unwrap());
    // greedy: sample admissible columns, add a norm-shrunk copy of each
    // uncovered one, keeping the net sorted by comparison norm so the
    // cover query stays windowed. Additions trickle long after the bulk
    // is covered, so stop once the addition rate drops below 2% for a
    // few rounds running; the density audit below is the real gate.
    let margin = 0.85;
    let batch = if e == 1 { 400 * d } else { 24 };
    let stall_limit = if e == 1 { STALL_ROUNDS } else { 2 };
    let mut stall = 0usize;
    for round in 0..BUILD_ROUNDS {
        let mut added = 0usize;
        for _ in 0..batch {
            let v = sample_column(class_tag, d, q, s, rng)?;
            let cn = comparison_norm(class_tag, &v, q, s)?;
            if cn <= 1e-12 {
                continue;
            }
            let cover = covered_strictly(&maps, &v, cn, cn, margin * eps, q, s)?;
            if !cover.covered {
                let w = shrink_column(class_tag, &v, cn, eps);
                let wn = comparison_norm(class_tag, &w, q, s)?;
                let at = maps.partition_point(|m| m.comparison_norm < wn);
                maps.insert(
                    at,
                    NetColumn {
                        components: w,
                        comparison_norm: wn,
                    },
                );
                added += 1;
                if maps.len() > MAX_NET_MEMBERS {
                    return Err(Error::Net(format!(
                        "net exceeded {MAX_NET_MEMBERS} members before reaching density {eps}"
                    )));
                }
            }
        }
        if round >= 1 && added * 50 < batch {
            stall += 1;
            if stall >= stall_limit {
                break;
            }
        } else {
            stall = 0;
        }
    }
    maps.sort_by(|a, b| {
        a.comparison_norm
            .partial_cmp(&b.comparison_norm)
            .unwrap()
            .then_with(|| a.serial_key().cmp(&b.serial_key()))
    });
    maps.dedup_by(|a, b| a.serial_key() == b.serial_key());
    // final density audit at the full radius
    let mut snap_report = 0.0f64;
    let audit_samples = if e == 1 { DENSITY_SAMPLES } else { 100 };
    for _ in 0..audit_samples {
        let v = sample_column(class_tag, d, q, s, rng)?;
        let cn = comparison_norm(class_tag, &v, q, s)?;
        if cn <= 1e-12 {
            continue;
        }
        let cover = covered_strictly(&maps, &v, cn, cn, eps, q, s)?;
        if !cover.covered {
            return Err(Error::Net(format!(
                "density verification failed at eps = {eps}: uncovered column {}",
                serde_json::to_string(&v).unwrap_or_default()
            )));
        }
        if let Some(dist) = cover.by_zero_norm {
            snap_report = snap_report.max(dist);
        }
    }
    Ok(NetP {
        class_tag,
        d,
        q,
        s,
        eps,
        maps,
        snap_report,
    })
}

/// Finite net of automorphisms a ↦ u a v of T_{s,q}, identity first.
/// Scalar blocks get the full phase grid at mesh eps0; larger blocks a
/// seeded sample alongside the identity.
fn automorphism_net(
    q: usize,
    s: usize,
    eps0: f64,
    tpcq: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<(ComplexMatrix, ComplexMatrix)> {
    let mut out = Vec::new();
    out.push((ComplexMatrix::identity(s), ComplexMatrix::identity(q)));
    if tpcq && q == 1 {
        // conjugation by a phase is trivial on T₁
        return out;
    }
    if q * s == 1 {
        let count = (std::f64::consts::TAU / eps0).ceil() as usize;
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
    let count = ((std::f64::consts::TAU / eps0).ceil() as usize).min(60);
    for _ in 1..count {
        if tpcq {
            let u = crate::space::random_unitary(q, rng);
            out.push((u.adjoint(), u));
        } else {
            out.push((
                crate::space::random_unitary(s, rng),
                crate::space::random_unitary(q, rng),
            ));
        }
    }
    out
}

fn build_net_q(
    class_tag: ClassTag,
    d: usize,
    m: usize,
    q: usize,
    s: usize,
    eps0: f64,
    rng: &mut ChaCha8Rng,
) -> Result<NetQ> {
    if eps0 <= 0.0 {
        return Err(Error::Precondition("eps0 must be positive".into()));
    }
    if m < d {
        return Err(Error::Precondition("structured matrices need m ≥ d".into()));
    }
    let unitary_net = automorphism_net(q, s, eps0, class_tag == ClassTag::Tpcq, rng);
    // column-to-row assignments: injective [d] → [m]; TPCQ pins the last
    // column to the last row with the identity entry
    let mut patterns: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::with_capacity(d);
    collect_injections(d, m, &mut current, &mut patterns);
    if class_tag == ClassTag::Tpcq {
        patterns.retain(|p| p[d - 1] == m - 1);
    }
    let free_cols = if class_tag == ClassTag::Tpcq { d - 1 } else { d };
    let per_pattern = (unitary_net.len() as u128).pow(free_cols as u32);
    let total = per_pattern * patterns.len() as u128;
    if total > 5_000_000 {
        return Err(Error::Budget(format!(
            "structured net would have {total} members"
        )));
    }
    let mut members = Vec::with_capacity(total as usize);
    for pat in &patterns {
        let mut odo = vec![0usize; free_cols];
        loop {
            let mut entries = odo.clone();
            if class_tag == ClassTag::Tpcq {
                entries.push(0); // pinned identity
            }
            members.push(QMember {
                rows_of_columns: pat.clone(),
                entries,
            });
            // odometer over the automorphism net
            let mut i = free_cols;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                odo[i] += 1;
                if odo[i] < unitary_net.len() {
                    break;
                }
                odo[i] = 0;
                if i == 0 {
                    break;
                }
            }
            if odo.iter().all(|&x| x == 0) {
                break;
            }
            if free_cols == 0 {
                break;
            }
        }
    }
    Ok(NetQ {
        class_tag,
        d,
        m,
        q,
        s,
        eps0,
        unitary_net,
        members,
    })
}

fn collect_injections(d: usize, m: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == d {
        out.push(current.clone());
        return;
    }
    for r in 0..m {
        if !current.contains(&r) {
            current.push(r);
            collect_injections(d, m, current, out);
            current.pop();
        }
    }
}

/// Build the column net P and the structured net Q for one class.
pub fn build_nets(
    class_tag: ClassTag,
    d: usize,
    m: usize,
    q: usize,
    s: usize,
    eps: f64,
    eps0: f64,
    seed: u64,
) -> Result<Nets> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qnet = build_net_q(class_tag, d, m, q, s, eps0, &mut rng)?;
    let p = build_net_p(class_tag, d, q, s, eps, &mut rng)?;
    Ok(Nets { p, q: qnet })
}

/// Tuple feeding an α encoding: column indices into P, or (Q, P) index
/// pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaTuple {
    Columns(Vec<usize>),
    Pairs(Vec<(usize, usize)>),
}

/// First-occurrence rigidity of a tuple with respect to the net order:
/// the distinct entries must first appear in increasing order (P-order
/// for columns; antilexicographic (P, then Q) order for pairs).
fn check_tuple_rigidity(keys: &[(usize, usize)]) -> Result<()> {
    let mut seen: Vec<(usize, usize)> = Vec::new();
    for (pos, k) in keys.iter().enumerate() {
        if seen.contains(k) {
            continue;
        }
        if let Some(last) = seen.last() {
            let before = (k.1, k.0) < (last.1, last.0);
            if before {
                return Err(Error::Precondition(format!(
                    "tuple is not rigid: entry at position {pos} first appears after a later net member"
                )));
            }
        }
        seen.push(*k);
    }
    Ok(())
}

/// Assemble the block matrix α from a tuple over the nets: column i is
/// v_i (columns over P) or B_i w_i (pairs over Q×P); TPCQ appends the
/// pinned last column (0,…,0,Id).
pub fn encode_alpha(tuple: &AlphaTuple, nets: &Nets) -> Result<BlockLinearMap> {
    let p = &nets.p;
    let qn = &nets.q;
    if p.q != p.s {
        return Err(Error::Precondition(
            "α assembly needs square blocks T_q".into(),
        ));
    }
    let e = p.q * p.s;
    let (rows, cols): (usize, usize);
    let mut entry_cols: Vec<Vec<ComplexMatrix>> = Vec::new();
    match tuple {
        AlphaTuple::Columns(idxs) => {
            if idxs.is_empty() {
                return Err(Error::Precondition("empty tuple".into()));
            }
            for &i in idxs {
                if i >= p.maps.len() {
                    return Err(Error::Precondition(format!("P index {i} out of range")));
                }
            }
            check_tuple_rigidity(&idxs.iter().map(|&i| (0usize, i)).collect::<Vec<_>>())?;
            rows = p.d;
            cols = idxs.len();
            for &i in idxs {
                entry_cols.push(p.maps[i].components.clone());
            }
        }
        AlphaTuple::Pairs(pairs) => {
            if pairs.is_empty() {
                return Err(Error::Precondition("empty tuple".into()));
            }
            for &(b, w) in pairs {
                if b >= qn.members.len() || w >= p.maps.len() {
                    return Err(Error::Precondition(format!(
                        "pair index ({b},{w}) out of range"
                    )));
                }
            }
            check_tuple_rigidity(pairs)?;
            rows = qn.m;
            cols = pairs.len();
            for &(b, w) in pairs {
                let grid = qn.member_entries(b);
                let wcol = &p.maps[w].components;
                let mut col = vec![ComplexMatrix::zeros(e, e); qn.m];
                for (r, row_entries) in grid.iter().enumerate() {
                    for (ci, ent) in row_entries.iter().enumerate() {
                        if let Some(auto) = ent {
                            col[r] = col[r].add(&auto.matmul(&wcol[ci]));
                        }
                    }
                }
                entry_cols.push(col);
            }
        }
    }
    let mut total_cols = cols;
    if p.class_tag == ClassTag::Tpcq {
        let mut pinned = vec![ComplexMatrix::zeros(e, e); rows];
        pinned[rows - 1] = ComplexMatrix::identity(e);
        entry_cols.push(pinned);
        total_cols += 1;
    }
    // dual-side map ℓ_1^{cols}(T_q) → ℓ_1^{rows}(T_q)
    let dom = SpaceDescriptor::l_inf(total_cols, p.q, p.q, Category::Osp);
    let cod = SpaceDescriptor::l_inf(rows, p.q, p.q, Category::Osp);
    let mut action = ComplexMatrix::zeros(rows * e, total_cols * e);
    let mut entries = Vec::with_capacity(rows * total_cols);
    for r in 0..rows {
        for c in 0..total_cols {
            let ent = &entry_cols[c][r];
            entries.push(ent.clone());
            for rr in 0..e {
                for cc in 0..e {
                    action.set(r * e + rr, c * e + cc, ent.at(rr, cc));
                }
            }
        }
    }
    let mut out = BlockLinearMap::new(dom, cod, action)?;
    out.dual_view = Some(DualView {
        rows,
        cols: total_cols,
        entries,
    });
    Ok(out)
}

/// Random α-tuple that contains every coordinate embedding (so the
/// structure check can succeed) plus random extras, in rigid order.
pub fn random_alpha_tuple(nets: &Nets, extras: usize, rng: &mut ChaCha8Rng) -> Result<AlphaTuple> {
    let p = &nets.p;
    let e = p.q * p.s;
    // locate the coordinate embeddings in the sorted net
    let mut embed_idx = Vec::new();
    for i in 0..p.d {
        let target = embedding_column(p.d, e, i);
        let pos = p
            .maps
            .iter()
            .position(|mcol| {
                mcol.components
                    .iter()
                    .zip(&target)
                    .all(|(a, b)| a.sub(b).max_abs() == 0.0)
            })
            .ok_or_else(|| Error::Internal("net lost a coordinate embedding".into()))?;
        embed_idx.push(pos);
    }
    let mut chosen: Vec<usize> = embed_idx;
    for _ in 0..extras {
        chosen.push(rng.gen_range(0..p.maps.len()));
    }
    chosen.sort_unstable();
    chosen.dedup();
    // rigid order: first occurrences ascending; then repeat a random
    // prefix member at the end to exercise repetition
    let mut cols = chosen.clone();
    if !chosen.is_empty() {
        cols.push(chosen[rng.gen_range(0..chosen.len())]);
    }
    Ok(AlphaTuple::Columns(cols))
}

/// The rigid surjection τ : Q×P → P determined by a quotient map ρ with
/// entry matrix A: τ(B,w) = 0 if w = 0 (or the pinned column for TPCQ),
/// τ(A†,w) = w, and otherwise the first net member of strictly smaller
/// comparison norm within eps of ABw.
pub struct TauMap<'a> {
    pub p: &'a NetP,
    pub q: &'a NetQ,
    /// ρ's entries as a d×m grid
    a_entries: Vec<Vec<ComplexMatrix>>,
    pub a_dagger_index: usize,
    pub a_dagger_residual: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TauConstruction {
    pub a_dagger_index: usize,
    pub a_dagger_residual: f64,
    /// max over the exact A†-branch scan and the sampled else-branch of
    /// ‖τ(B,w) − ABw‖_cb; every evaluation is additionally audited
    /// against eps at call time
    pub defect: f64,
    pub evidence: RigidityEvidence,
}

/// What backs the preimage-minimum property: the A†-branch is
/// definitional, every else-branch output strictly drops the comparison
/// norm (audited per evaluation), and the net order refines the norm.
/// Together these force min τ⁻¹(w) = (A†, w) in the antilex order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityEvidence {
    pub order_refines_norm: bool,
    pub strict_decrease_checked: usize,
    pub full_scan: Option<bool>,
}

impl<'a> TauMap<'a> {
    fn apply_a(&self, column: &[ComplexMatrix]) -> Vec<ComplexMatrix> {
        let e = self.p.q * self.p.s;
        let d = self.a_entries.len();
        let mut out = vec![ComplexMatrix::zeros(e, e); d];
        for (i, row) in self.a_entries.iter().enumerate() {
            for (j, ent) in row.iter().enumerate() {
                if ent.max_abs() != 0.0 {
                    out[i] = out[i].add(&ent.matmul(&column[j]));
                }
            }
        }
        out
    }

    fn apply_b(&self, b: usize, w: &[ComplexMatrix]) -> Vec<ComplexMatrix> {
        let e = self.p.q * self.p.s;
        let mem = &self.q.members[b];
        let mut out = vec![ComplexMatrix::zeros(e, e); self.q.m];
        for (col, (&row, &ei)) in mem.rows_of_columns.iter().zip(&mem.entries).enumerate() {
            let auto = self.q.automorphism_matrix(ei);
            out[row] = out[row].add(&auto.matmul(&w[col]));
        }
        out
    }

    /// τ(B, w) as an index into P. Every else-branch call audits the
    /// strict norm decrease and the eps bound.
    pub fn eval(&self, b_idx: usize, w_idx: usize) -> Result<usize> {
        let w = &self.p.maps[w_idx];
        if w.comparison_norm == 0.0 {
            return Ok(w_idx);
        }
        if b_idx == self.a_dagger_index {
            return Ok(w_idx);
        }
        let v = self.apply_a(&self.apply_b(b_idx, &w.components));
        for (idx, cand) in self.p.maps.iter().enumerate() {
            if cand.comparison_norm >= w.comparison_norm - 1e-12 {
                break; // sorted by comparison norm: nothing smaller past here
            }
            let dist = column_distance(&cand.components, &v, self.p.q, self.p.s)?;
            if dist <= self.eps {
                return Ok(idx);
            }
        }
        Err(Error::Net(format!(
            "net resolution: no strictly smaller member within {} of ABw for pair ({b_idx},{w_idx})",
            self.eps
        )))
    }

    /// ‖τ(B,w) − ABw‖_cb for one pair.
    pub fn pair_defect(&self, b_idx: usize, w_idx: usize) -> Result<f64> {
        let t = self.eval(b_idx, w_idx)?;
        let v = self.apply_a(&self.apply_b(b_idx, &self.p.maps[w_idx].components));
        column_distance(&self.p.maps[t].components, &v, self.p.q, self.p.s)
    }

    /// Exhaustive preimage-minimum check over all of Q×P; budget-guarded.
    pub fn full_rigidity_scan(&self, cap: usize) -> Result<bool> {
        let total = self.q.members.len().saturating_mul(self.p.maps.len());
        if total > cap {
            return Err(Error::Budget(format!(
                "full scan over {total} pairs exceeds the cap {cap}"
            )));
        }
        let mut first_preimage: Vec<Option<(usize, usize)>> = vec![None; self.p.maps.len()];
        // antilex: P-coordinate dominates, Q breaks ties
        for w_idx in 0..self.p.maps.len() {
            for b_idx in 0..self.q.members.len() {
                let t = self.eval(b_idx, w_idx)?;
                if first_preimage[t].is_none() {
                    first_preimage[t] = Some((b_idx, w_idx));
                }
            }
        }
        for (t, pre) in first_preimage.iter().enumerate() {
            if self.p.maps[t].comparison_norm == 0.0 {
                continue;
            }
            match pre {
                Some((b, w)) if *b == self.a_dagger_index && *w == t => {}
                Some(_) => return Ok(false),
                None => {
                    return Err(Error::Internal(format!(
                        "τ misses net member {t}; surjectivity broken"
                    )));
                }
            }
        }
        Ok(true)
    }
}

pub fn construct_tau<'a>(
    rho: &BlockLinearMap,
    p: &'a NetP,
    q: &'a NetQ,
    eps: f64,
) -> Result<(TauMap<'a>, TauConstruction)> {
    if eps <= 0.0 {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    let report = structure_check(rho, p.class_tag)?;
    if !report.ok {
        return Err(Error::Precondition(format!(
            "ρ fails the {:?} structure check: {}",
            p.class_tag,
            report.violations.join("; ")
        )));
    }
    let view = rho.dual_view.as_ref().expect("structure check guarantees a dual view");
    if view.rows != q.d || view.cols != q.m {
        return Err(Error::Dimension(format!(
            "ρ is {}×{}, nets expect {}×{}",
            view.rows, view.cols, q.d, q.m
        )));
    }
    let a_entries: Vec<Vec<ComplexMatrix>> = (0..view.rows)
        .map(|i| (0..view.cols).map(|j| view.entries[i * view.cols + j].clone()).collect())
        .collect();
    // find A†: first member of Q with ‖AB − Id‖_cb ≤ eps
    let e = p.q * p.s;
    let mut best = (usize::MAX, f64::INFINITY);
    let mut a_dagger = None;
    for (b_idx, _) in q.members.iter().enumerate() {
        let tau_probe = TauMap {
            p,
            q,
            a_entries: a_entries.clone(),
            a_dagger_index: usize::MAX,
            a_dagger_residual: 0.0,
            eps,
        };
        // AB columnwise against the identity
        let mut resid = 0.0f64;
        for col in 0..q.d {
            let mut unit_col = vec![ComplexMatrix::zeros(e, e); q.d];
            unit_col[col] = ComplexMatrix::identity(e);
            let ab = tau_probe.apply_a(&tau_probe.apply_b(b_idx, &unit_col));
            let mut diff = ab;
            diff[col] = diff[col].sub(&ComplexMatrix::identity(e));
            resid = resid.max(column_cb(&diff, p.q, p.s)?);
        }
        if resid < best.1 {
            best = (b_idx, resid);
        }
        if resid <= eps {
            a_dagger = Some((b_idx, resid));
            break;
        }
    }
    let (a_dagger_index, a_dagger_residual) = a_dagger.ok_or_else(|| {
        Error::Net(format!(
            "no A† within eps = {eps}; best residual {:.6} at member {}",
            best.1, best.0
        ))
    })?;
    let tau = TauMap {
        p,
        q,
        a_entries,
        a_dagger_index,
        a_dagger_residual,
        eps,
    };
    // defect: exact scan over the A†-branch, sampled over the rest
    let mut defect = 0.0f64;
    for w_idx in 0..p.maps.len() {
        defect = defect.max(tau.pair_defect(a_dagger_index, w_idx)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a75);
    let sample_pairs = 2000.min(q.members.len() * p.maps.len());
    let mut strict_checked = 0usize;
    for _ in 0..sample_pairs {
        let b_idx = rng.gen_range(0..q.members.len());
        let w_idx = rng.gen_range(0..p.maps.len());
        let t = tau.eval(b_idx, w_idx)?;
        defect = defect.max(tau.pair_defect(b_idx, w_idx)?);
        if b_idx != tau.a_dagger_index && p.maps[w_idx].comparison_norm > 0.0 {
            if p.maps[t].comparison_norm >= p.maps[w_idx].comparison_norm {
                return Err(Error::Internal(
                    "else-branch failed to decrease the comparison norm".into(),
                ));
            }
            strict_checked += 1;
        }
    }
    let order_refines_norm = p
        .maps
        .windows(2)
        .all(|w| w[0].comparison_norm <= w[1].comparison_norm + 1e-15);
    if defect > eps {
        return Err(Error::Internal(format!(
            "defect {defect:.6} exceeded eps = {eps}"
        )));
    }
    let construction = TauConstruction {
        a_dagger_index,
        a_dagger_residual,
        defect,
        evidence: RigidityEvidence {
            order_refines_norm,
            strict_decrease_checked: strict_checked,
            full_scan: None,
        },
    };
    Ok((tau, construction))
}

/// Random valid CQ quotient map ℓ_1^m → ℓ_1^d at q = s = 1: a
/// permutation-placed set of unimodular entries (free phases, not from
/// the net) padded with small contractions in the remaining columns.
pub fn random_cq_rho(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<BlockLinearMap> {
    assert!(m >= d);
    // choose d distinct columns to carry the isometries
    let mut cols: Vec<usize> = (0..m).collect();
    for i in (1..cols.len()).rev() {
        let j = rng.gen_range(0..=i);
        cols.swap(i, j);
    }
    let iso_cols = &cols[..d];
    let mut entries = vec![C64::new(0.0, 0.0); d * m];
    for (row, &col) in iso_cols.iter().enumerate() {
        let th = rng.gen::<f64>() * std::f64::consts::TAU;
        entries[row * m + col] = C64::from_polar(1.0, th);
    }
    for col in 0..m {
        if iso_cols.contains(&col) {
            continue;
        }
        // a strict contraction spread over the rows
        let mut weights: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = weights.iter().sum::<f64>().max(1e-9);
        let budget = 0.9 * rng.gen::<f64>();
        for w in weights.iter_mut() {
            *w = *w / total * budget;
        }
        for row in 0..d {
            let th = rng.gen::<f64>() * std::f64::consts::TAU;
            entries[row * m + col] = C64::from_polar(weights[row], th);
        }
    }
    scalar_dual_map(d, m, &entries)
}

/// Random valid TPCQ quotient map at q = s = 1: pinned last column,
/// forced 1-entries alone in their columns, stochastic elsewhere.
pub fn random_tpcq_rho(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<BlockLinearMap> {
    assert!(m >= d && d >= 1);
    let mut entries = vec![C64::new(0.0, 0.0); d * m];
    // last column pinned to (0,…,0,1)
    entries[(d - 1) * m + (m - 1)] = C64::new(1.0, 0.0);
    // rows 0..d−1 need a 1-entry alone in its column
    let mut free_cols: Vec<usize> = (0..m - 1).collect();
    for i in (1..free_cols.len()).rev() {
        let j = rng.gen_range(0..=i);
        free_cols.swap(i, j);
    }
    if free_cols.len() < d - 1 {
        return Err(Error::Precondition("need m ≥ d".into()));
    }
    let iso_cols = &free_cols[..d - 1];
    for (row, &col) in iso_cols.iter().enumerate() {
        entries[row * m + col] = C64::new(1.0, 0.0);
    }
    for col in 0..m - 1 {
        if iso_cols.contains(&col) {
            continue;
        }
        // stochastic column
        let weights: Vec<f64> = (0..d).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
        let total: f64 = weights.iter().sum();
        for row in 0..d {
            entries[row * m + col] = C64::new(weights[row] / total, 0.0);
        }
    }
    scalar_dual_map(d, m, &entries)
}

fn scalar_dual_map(d: usize, m: usize, entries: &[C64]) -> Result<BlockLinearMap> {
    let dom = SpaceDescriptor::l_inf(m, 1, 1, Category::Osp);
    let cod = SpaceDescriptor::l_inf(d, 1, 1, Category::Osp);
    let mut action = ComplexMatrix::zeros(d, m);
    let mut view_entries = Vec::with_capacity(d * m);
    for i in 0..d {
        for j in 0..m {
            action.set(i, j, entries[i * m + j]);
            view_entries.push(ComplexMatrix {
                rows: 1,
                cols: 1,
                entries: vec![entries[i * m + j]],
            });
        }
    }
    let mut f = BlockLinearMap::new(dom, cod, action)?;
    f.dual_view = Some(DualView {
        rows: d,
        cols: m,
        entries: view_entries,
    });
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse_cq_nets() -> Nets {
        build_nets(ClassTag::Cq, 2, 2, 1, 1, 0.5, 1.0, 99).unwrap()
    }

    #[test]
    fn cq_net_contains_zero_and_embeddings() {
        let nets = coarse_cq_nets();
        let p = &nets.p;
        assert_eq!(p.maps[0].comparison_norm, 0.0);
        assert!(p.maps[0].components.iter().all(|c| c.max_abs() == 0.0));
        for i in 0..2 {
            let target = embedding_column(2, 1, i);
            assert!(
                p.maps.iter().any(|m| m
                    .components
                    .iter()
                    .zip(&target)
                    .all(|(a, b)| a.sub(b).max_abs() == 0.0)),
                "embedding {i} missing"
            );
        }
        // order refines the comparison norm
        for w in p.maps.windows(2) {
            assert!(w[0].comparison_norm <= w[1].comparison_norm + 1e-15);
        }
    }

    #[test]
    fn tpcq_net_members_are_stochastic() {
        let nets = build_nets(ClassTag::Tpcq, 2, 2, 1, 1, 0.4, 1.0, 7).unwrap();
        for m in &nets.p.maps {
            let mut total = 0.0;
            for c in &m.components {
                let z = c.at(0, 0);
                assert!(z.im.abs() < 1e-12 && z.re >= -1e-12);
                total += z.re;
            }
            assert!((total - 1.0).abs() < 1e-9, "column not stochastic");
        }
        // the pinned form is the unique comparison-norm-zero member
        assert_eq!(nets.p.maps[0].comparison_norm, 0.0);
        assert!((nets.p.maps[0].components[1].at(0, 0).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn q_net_structure() {
        let nets = coarse_cq_nets();
        let qn = &nets.q;
        // identity automorphism first
        assert!(qn.unitary_net[0].0.sub(&ComplexMatrix::identity(1)).max_abs() == 0.0);
        for mem in &qn.members {
            // columns injective into rows = every row at most one entry
            let mut seen = vec![false; qn.m];
            for &r in &mem.rows_of_columns {
                assert!(!seen[r], "row reused");
                seen[r] = true;
            }
            for &e in &mem.entries {
                assert!(e < qn.unitary_net.len());
            }
        }
        // eps0 = 1.0 phase grid: ⌈2π⌉ = 7 phases, 2 patterns
        assert_eq!(qn.unitary_net.len(), 7);
        assert_eq!(qn.members.len(), 2 * 7 * 7);
    }

    #[test]
    fn tpcq_q_net_pins_last_row() {
        let nets = build_nets(ClassTag::Tpcq, 2, 2, 1, 1, 0.4, 1.0, 7).unwrap();
        assert_eq!(nets.q.members.len(), 1);
        let mem = &nets.q.members[0];
        assert_eq!(mem.rows_of_columns, vec![0, 1]);
        assert_eq!(mem.entries, vec![0, 0]);
    }

    #[test]
    fn alpha_summation_map() {
        // d = 1: every column the single coordinate embedding gives the
        // row of ones
        let nets = build_nets(ClassTag::Cq, 1, 1, 1, 1, 0.9, 1.0, 3).unwrap();
        let one_idx = nets
            .p
            .maps
            .iter()
            .position(|m| (m.components[0].at(0, 0) - C64::new(1.0, 0.0)).norm() == 0.0)
            .unwrap();
        let alpha = encode_alpha(&AlphaTuple::Columns(vec![one_idx; 4]), &nets).unwrap();
        for j in 0..4 {
            assert_eq!(alpha.action.at(0, j), C64::new(1.0, 0.0));
        }
        let rep = structure_check(&alpha, ClassTag::Cq).unwrap();
        assert!(rep.ok, "{:?}", rep.violations);
    }

    #[test]
    fn alpha_pairs_with_identity_pattern() {
        let nets = coarse_cq_nets();
        // B with identity pattern and identity phases stacks the columns
        let id_b = nets
            .q
            .members
            .iter()
            .position(|m| m.rows_of_columns == vec![0, 1] && m.entries.iter().all(|&e| e == 0))
            .unwrap();
        let (w1, w2) = (1usize, 2usize);
        let tuple = AlphaTuple::Pairs(vec![(id_b, w1), (id_b, w2)]);
        let alpha = encode_alpha(&tuple, &nets).unwrap();
        let view = alpha.dual_view.as_ref().unwrap();
        for (t, &w) in [w1, w2].iter().enumerate() {
            for r in 0..2 {
                let want = nets.p.maps[w].components[r].at(0, 0);
                assert!((view.entries[r * view.cols + t].at(0, 0) - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn alpha_rigidity_violation_rejected() {
        let nets = coarse_cq_nets();
        // later member first → not rigid
        let bad = AlphaTuple::Columns(vec![3, 1]);
        assert!(matches!(
            encode_alpha(&bad, &nets),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn alpha_tpcq_appends_pinned_column() {
        let nets = build_nets(ClassTag::Tpcq, 2, 2, 1, 1, 0.4, 1.0, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tuple = random_alpha_tuple(&nets, 2, &mut rng).unwrap();
        let alpha = encode_alpha(&tuple, &nets).unwrap();
        let view = alpha.dual_view.as_ref().unwrap();
        let last = view.cols - 1;
        assert!(view.entries[0 * view.cols + last].max_abs() == 0.0);
        assert!((view.entries[1 * view.cols + last].at(0, 0) - C64::new(1.0, 0.0)).norm() == 0.0);
        let rep = structure_check(&alpha, ClassTag::Tpcq).unwrap();
        assert!(rep.ok, "{:?}", rep.violations);
    }

    #[test]
    fn random_alpha_tuples_pass_structure() {
        let nets = coarse_cq_nets();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let tuple = random_alpha_tuple(&nets, 3, &mut rng).unwrap();
            let alpha = encode_alpha(&tuple, &nets).unwrap();
            let rep = structure_check(&alpha, ClassTag::Cq).unwrap();
            assert!(rep.ok, "{:?}", rep.violations);
        }
    }

    #[test]
    fn tau_on_coarse_cq_nets() {
        let nets = coarse_cq_nets();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rho = random_cq_rho(2, 2, &mut rng).unwrap();
        let (tau, cons) = construct_tau(&rho, &nets.p, &nets.q, 0.5).unwrap();
        // τ(A†, w) = w and τ(B, 0) = 0
        for w_idx in 0..nets.p.maps.len() {
            assert_eq!(tau.eval(cons.a_dagger_index, w_idx).unwrap(), w_idx);
        }
        for b_idx in 0..nets.q.members.len() {
            assert_eq!(tau.eval(b_idx, 0).unwrap(), 0);
        }
        assert!(cons.defect <= 0.5 + 1e-12);
        assert!(cons.evidence.order_refines_norm);
        // small nets: the preimage-minimum property by direct scan
        assert!(tau.full_rigidity_scan(5_000_000).unwrap());
    }

    #[test]
    fn tau_tpcq_degenerate_and_nondegenerate() {
        // d = m = 2 forces A = Id and a single structured member
        let nets = build_nets(ClassTag::Tpcq, 2, 2, 1, 1, 0.4, 1.0, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rho = random_tpcq_rho(2, 2, &mut rng).unwrap();
        let (tau, cons) = construct_tau(&rho, &nets.p, &nets.q, 0.4).unwrap();
        assert_eq!(cons.a_dagger_index, 0);
        assert!(cons.a_dagger_residual <= 1e-12);
        assert!(tau.full_rigidity_scan(5_000_000).unwrap());
        // m = 3 gives honest non-identity instances
        let nets = build_nets(ClassTag::Tpcq, 2, 3, 1, 1, 0.4, 1.0, 13).unwrap();
        let rho = random_tpcq_rho(2, 3, &mut rng).unwrap();
        let (tau, cons) = construct_tau(&rho, &nets.p, &nets.q, 0.4).unwrap();
        assert!(cons.defect <= 0.4);
        assert!(tau.full_rigidity_scan(5_000_000).unwrap());
    }

    #[test]
    fn tau_rejects_invalid_rho() {
        let nets = coarse_cq_nets();
        // all-zero map: no isometry rows
        let zero = scalar_dual_map(2, 2, &[C64::new(0.0, 0.0); 4]).unwrap();
        assert!(matches!(
            construct_tau(&zero, &nets.p, &nets.q, 0.5),
            Err(Error::Precondition(_))
        ));
    }
}
