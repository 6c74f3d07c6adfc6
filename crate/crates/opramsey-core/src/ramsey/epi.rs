//! Rigid surjections between finite linear orders, their enumeration
//! and composition, and exhaustive Dual-Ramsey instance search.

use serde::{Deserialize, Serialize};

use super::{ColoringSpec, DiscreteBackend, fnv1a};
use crate::error::{Error, Result};

pub const DEFAULT_DRT_CAP: u128 = 5_000_000;

/// Surjection n → k whose preimage minima are increasing; equivalently
/// values[0] = 0 and each prefix maximum grows by at most one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RigidSurjection {
    pub domain_size: usize,
    pub codomain_size: usize,
    pub values: Vec<usize>,
}

impl RigidSurjection {
    pub fn new(codomain_size: usize, values: Vec<usize>) -> Result<Self> {
        let r = RigidSurjection {
            domain_size: values.len(),
            codomain_size,
            values,
        };
        if !r.is_rigid() {
            return Err(Error::Precondition(format!(
                "values {:?} are not a rigid surjection onto {}",
                r.values, r.codomain_size
            )));
        }
        Ok(r)
    }

    pub fn identity(n: usize) -> Self {
        RigidSurjection {
            domain_size: n,
            codomain_size: n,
            values: (0..n).collect(),
        }
    }

    pub fn is_rigid(&self) -> bool {
        if self.values.len() != self.domain_size || self.domain_size < self.codomain_size {
            return false;
        }
        if self.domain_size == 0 {
            return self.codomain_size == 0;
        }
        let mut max_so_far = 0usize;
        for (i, &v) in self.values.iter().enumerate() {
            if i == 0 {
                if v != 0 {
                    return false;
                }
            } else if v > max_so_far + 1 {
                return false;
            }
            max_so_far = max_so_far.max(v);
        }
        max_so_far + 1 == self.codomain_size
    }

    pub fn preimage_size(&self, class: usize) -> usize {
        self.values.iter().filter(|&&v| v == class).count()
    }
}

/// Stirling partition number S(n,k) by the standard recurrence
/// S(n,k) = k·S(n−1,k) + S(n−1,k−1).
pub fn stirling2(n: usize, k: usize) -> u128 {
    if n == 0 && k == 0 {
        return 1;
    }
    if n == 0 || k == 0 || k > n {
        return 0;
    }
    let mut row = vec![0u128; k + 1];
    row[0] = 1; // S(0,0)
    for _m in 1..=n {
        // update in place right-to-left: row[j] = j·row[j] + row[j−1]
        for j in (1..=k).rev() {
            row[j] = (j as u128) * row[j] + row[j - 1];
        }
        row[0] = 0;
    }
    row[k]
}

/// All rigid surjections n → k in lexicographic order of their value
/// sequences. Empty when n < k.
pub fn enumerate_epi(n: usize, k: usize) -> Vec<RigidSurjection> {
    let mut out = Vec::new();
    if k == 0 {
        if n == 0 {
            out.push(RigidSurjection {
                domain_size: 0,
                codomain_size: 0,
                values: vec![],
            });
        }
        return out;
    }
    if n < k {
        return out;
    }
    let mut values = vec![0usize; n];
    fill_epi(&mut values, 1, 0, k, &mut |vals| {
        out.push(RigidSurjection {
            domain_size: n,
            codomain_size: k,
            values: vals.to_vec(),
        })
    });
    out
}

/// Streaming enumeration for searches that must not materialize the
/// whole list.
pub fn for_each_epi(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == 0 || n < k {
        if n == 0 && k == 0 {
            f(&[]);
        }
        return;
    }
    let mut values = vec![0usize; n];
    fill_epi(&mut values, 1, 0, k, f);
}

fn fill_epi(
    values: &mut Vec<usize>,
    pos: usize,
    max_used: usize,
    k: usize,
    f: &mut impl FnMut(&[usize]),
) {
    let n = values.len();
    if pos == n {
        if max_used + 1 == k {
            f(values);
        }
        return;
    }
    // all of 0..k must still be reachable: the maximum has to climb to
    // k−1 within the remaining positions
    let remaining = n - pos;
    for v in 0..=(max_used + 1).min(k - 1) {
        let new_max = max_used.max(v);
        if k - 1 - new_max <= remaining - 1 {
            values[pos] = v;
            fill_epi(values, pos + 1, new_max, k, f);
        }
    }
}

/// Pointwise composition (outer ∘ inner).
pub fn compose_epi(outer: &RigidSurjection, inner: &RigidSurjection) -> Result<RigidSurjection> {
    if inner.codomain_size != outer.domain_size {
        return Err(Error::Dimension(format!(
            "inner codomain {} does not match outer domain {}",
            inner.codomain_size, outer.domain_size
        )));
    }
    let values: Vec<usize> = inner.values.iter().map(|&v| outer.values[v]).collect();
    RigidSurjection::new(outer.codomain_size, values)
}

/// Evaluate a discrete coloring on a member of Epi(n, r_size).
pub fn color_epi(coloring: &ColoringSpec, f: &RigidSurjection, index: usize) -> Result<u32> {
    match coloring {
        ColoringSpec::Discrete { r, backend, seed } => {
            if *r == 0 {
                return Err(Error::Precondition("discrete coloring needs r ≥ 1".into()));
            }
            let c = match backend {
                DiscreteBackend::PreimageCount { class } => {
                    (f.preimage_size(*class as usize) as u32) % r
                }
                DiscreteBackend::Table { values } => *values.get(index).ok_or_else(|| {
                    Error::Precondition(format!("coloring table too short for index {index}"))
                })?,
                DiscreteBackend::Hashed => {
                    let bytes: Vec<u8> = f.values.iter().map(|&v| v as u8).collect();
                    (fnv1a(&bytes, *seed) % *r as u64) as u32
                }
            };
            Ok(c % r)
        }
        ColoringSpec::Lipschitz { .. } => Err(Error::Precondition(
            "this search needs a discrete coloring".into(),
        )),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrtOutcome {
    pub gamma: Option<RigidSurjection>,
    pub color: Option<u32>,
    pub candidates_tested: u64,
}

/// Exhaustive Dual-Ramsey instance check: search γ ∈ Epi(n, S) such that
/// {σ∘γ : σ ∈ Epi(S, R)} is monochromatic. First witness in enumeration
/// order, or none after exhaustion.
pub fn drt_search(
    n: usize,
    r_size: usize,
    s_size: usize,
    coloring: &ColoringSpec,
    cap: Option<u128>,
) -> Result<DrtOutcome> {
    let cap = cap.unwrap_or(DEFAULT_DRT_CAP);
    let total = stirling2(n, s_size);
    if total > cap {
        return Err(Error::Budget(format!(
            "|Epi({n},{s_size})| = {total} exceeds the cap {cap}"
        )));
    }
    let sigmas = enumerate_epi(s_size, r_size);
    if sigmas.is_empty() {
        return Err(Error::Precondition(format!(
            "Epi({s_size},{r_size}) is empty; nothing to color"
        )));
    }
    // index the target space once so table colorings are well defined
    let target: std::collections::HashMap<Vec<usize>, usize> = enumerate_epi(n, r_size)
        .into_iter()
        .enumerate()
        .map(|(i, f)| (f.values, i))
        .collect();
    let mut found: Option<(RigidSurjection, u32)> = None;
    let mut tested = 0u64;
    let mut err: Option<Error> = None;
    for_each_epi(n, s_size, &mut |vals| {
        if found.is_some() || err.is_some() {
            return;
        }
        tested += 1;
        let gamma = RigidSurjection {
            domain_size: n,
            codomain_size: s_size,
            values: vals.to_vec(),
        };
        let mut color0 = None;
        let mut mono = true;
        for sigma in &sigmas {
            let comp = match compose_epi(sigma, &gamma) {
                Ok(c) => c,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            };
            let idx = *target.get(&comp.values).expect("composition lands in Epi(n,R)");
            match color_epi(coloring, &comp, idx) {
                Ok(c) => match color0 {
                    None => color0 = Some(c),
                    Some(c0) if c0 != c => {
                        mono = false;
                        break;
                    }
                    _ => {}
                },
                Err(e) => {
                    err = Some(e);
                    return;
                }
            }
        }
        if mono {
            found = Some((gamma, color0.unwrap_or(0)));
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(match found {
        Some((g, c)) => DrtOutcome {
            gamma: Some(g),
            color: Some(c),
            candidates_tested: tested,
        },
        None => DrtOutcome {
            gamma: None,
            color: None,
            candidates_tested: tested,
        },
    })
}
