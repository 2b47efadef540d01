//! Vertex enumeration for the supported structure families.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest part dimension we are willing to materialize.
pub const MAX_DIM: usize = 64;
/// Largest vertex count we are willing to materialize.
pub const MAX_VERTICES: usize = 100_000;

/// Family identifier and size parameters, as written in config documents:
/// `{"family":"categorical","K":4}`, `{"family":"ksubset","K":6,"k":3}`,
/// `{"family":"arborescence","L":3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum FamilyKind {
    Categorical {
        #[serde(rename = "K")]
        k: usize,
    },
    #[serde(rename = "ksubset")]
    KSubset {
        #[serde(rename = "K")]
        k: usize,
        #[serde(rename = "k")]
        size: usize,
    },
    Arborescence {
        #[serde(rename = "L")]
        len: usize,
    },
}

impl FamilyKind {
    /// Length of each indicator vector.
    pub fn dim(&self) -> usize {
        match *self {
            FamilyKind::Categorical { k } | FamilyKind::KSubset { k, .. } => k,
            FamilyKind::Arborescence { len } => len * len,
        }
    }

    /// Number of vertices, saturating at `u128::MAX`.
    pub fn vertex_count(&self) -> u128 {
        match *self {
            FamilyKind::Categorical { k } => k as u128,
            FamilyKind::KSubset { k, size } => binomial(k, size),
            FamilyKind::Arborescence { len } => {
                // Cayley: rooted spanning arborescences on L+1 labelled nodes.
                if len == 0 {
                    return 0;
                }
                let mut count: u128 = 1;
                for _ in 0..len - 1 {
                    count = count.saturating_mul(len as u128 + 1);
                }
                count
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            FamilyKind::Categorical { k } => k >= 1,
            FamilyKind::KSubset { k, size } => size >= 1 && size <= k,
            FamilyKind::Arborescence { len } => len >= 1,
        };
        if !ok {
            return Err(Error::Config(format!("degenerate structure family {self:?}")));
        }
        if self.dim() > MAX_DIM {
            return Err(Error::CapExceeded(format!("{self:?} has dimension {} > {MAX_DIM}", self.dim())));
        }
        let count = self.vertex_count();
        if count > MAX_VERTICES as u128 {
            return Err(Error::CapExceeded(format!("{self:?} has {count} vertices > {MAX_VERTICES}")));
        }
        Ok(())
    }
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            FamilyKind::Categorical { k } => write!(f, "categorical(K={k})"),
            FamilyKind::KSubset { k, size } => write!(f, "ksubset(K={k},k={size})"),
            FamilyKind::Arborescence { len } => write!(f, "arborescence(L={len})"),
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Part index of arc `head → modifier` in an `Arborescence(len)` vertex.
///
/// Arcs are laid out head-major (`head` ascending, then `modifier`
/// ascending) with the self-loops `h → h` skipped, so the `len²` valid arcs
/// occupy indices `0..len²` exactly. Heads range over `0..=len` (0 is the
/// root); modifiers over `1..=len`.
pub fn arc_index(len: usize, head: usize, modifier: usize) -> usize {
    assert!(head <= len && (1..=len).contains(&modifier) && head != modifier);
    if head == 0 {
        return modifier - 1;
    }
    let start = len + (head - 1) * (len - 1);
    let offset = if modifier < head { modifier - 1 } else { modifier - 2 };
    start + offset
}

/// Inverse of [`arc_index`].
pub fn arc_of_index(len: usize, index: usize) -> (usize, usize) {
    assert!(index < len * len);
    if index < len {
        return (0, index + 1);
    }
    let rest = index - len;
    let head = rest / (len - 1) + 1;
    let offset = rest % (len - 1);
    let modifier = if offset + 1 < head { offset + 1 } else { offset + 2 };
    (head, modifier)
}

/// Materializes the vertex list of a family, as sorted part-index lists
/// (the positions of the ones).
pub(crate) fn enumerate_supports(kind: &FamilyKind) -> Result<Vec<Vec<usize>>> {
    kind.validate()?;
    let out = match *kind {
        FamilyKind::Categorical { k } => (0..k).map(|i| vec![i]).collect(),
        FamilyKind::KSubset { k, size } => combinations(k, size),
        FamilyKind::Arborescence { len } => arborescences(len),
    };
    Ok(out)
}

/// Dense 0/1 vertex vectors in canonical order.
pub fn enumerate_vertices(kind: &FamilyKind) -> Result<Vec<Vec<f64>>> {
    let dim = kind.dim();
    Ok(enumerate_supports(kind)?
        .into_iter()
        .map(|ones| {
            let mut z = vec![0.0; dim];
            for i in ones {
                z[i] = 1.0;
            }
            z
        })
        .collect())
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // Advance to the next combination in lexicographic order.
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// All parent maps (modifier 1 most significant, heads ascending) that
/// reach the root without cycles.
fn arborescences(len: usize) -> Vec<Vec<usize>> {
    let choices: Vec<Vec<usize>> = (1..=len).map(|m| (0..=len).filter(|&h| h != m).collect()).collect();
    let mut out = Vec::new();
    let mut digits = vec![0usize; len];
    let mut parent = vec![0usize; len + 1];
    loop {
        for m in 1..=len {
            parent[m] = choices[m - 1][digits[m - 1]];
        }
        if reaches_root(&parent, len) {
            let mut ones: Vec<usize> = (1..=len).map(|m| arc_index(len, parent[m], m)).collect();
            ones.sort_unstable();
            out.push(ones);
        }
        // Odometer increment, least significant digit last.
        let mut pos = len;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < len {
                break;
            }
            digits[pos] = 0;
        }
    }
}

fn reaches_root(parent: &[usize], len: usize) -> bool {
    (1..=len).all(|start| {
        let mut node = start;
        for _ in 0..len {
            node = parent[node];
            if node == 0 {
                return true;
            }
        }
        false
    })
}
