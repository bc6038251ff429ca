//! Closed forms for sums over tuples of unary sets constrained by
//! disjointness and containment.

use super::EvalError;
use crate::formula::Algebra;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetAtom {
    /// `T_i ∩ T_j = ∅`
    Disjoint(usize, usize),
    /// `T_i ⊆ T_j`
    Subset(usize, usize),
}

/// A conjunction of set atoms over `T_0 .. T_{k-1}`.
#[derive(Clone, Debug)]
pub struct SetPredicate {
    pub k: usize,
    pub atoms: Vec<SetAtom>,
}

impl SetPredicate {
    pub fn new(k: usize, atoms: Vec<SetAtom>) -> Result<SetPredicate, EvalError> {
        if k > 20 {
            return Err(EvalError::SetPredicate(format!("{k} sets")));
        }
        for a in &atoms {
            let (i, j) = match *a {
                SetAtom::Disjoint(i, j) | SetAtom::Subset(i, j) => (i, j),
            };
            if i >= k || j >= k {
                return Err(EvalError::SetPredicate(format!(
                    "{a:?} out of range for k={k}"
                )));
            }
        }
        Ok(SetPredicate { k, atoms })
    }

    /// Parses atoms like `T1&T2=0` and `T4<=T2` (1-based, comma separated).
    pub fn parse(k: usize, text: &str) -> Result<SetPredicate, EvalError> {
        let idx = |s: &str| -> Result<usize, EvalError> {
            s.trim()
                .strip_prefix('T')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(|n| n - 1)
                .ok_or_else(|| EvalError::SetPredicate(s.to_string()))
        };
        let mut atoms = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if let Some(l) = part.strip_suffix("=0") {
                let (a, b) = l
                    .split_once('&')
                    .ok_or_else(|| EvalError::SetPredicate(part.to_string()))?;
                atoms.push(SetAtom::Disjoint(idx(a)?, idx(b)?));
            } else if let Some((a, b)) = part.split_once("<=") {
                atoms.push(SetAtom::Subset(idx(a)?, idx(b)?));
            } else {
                return Err(EvalError::SetPredicate(part.to_string()));
            }
        }
        SetPredicate::new(k, atoms)
    }

    /// Whether an element lying in exactly the sets of `sigma` is allowed.
    pub fn allows(&self, sigma: u64) -> bool {
        self.atoms.iter().all(|a| match *a {
            SetAtom::Disjoint(i, j) => sigma & (1 << i) == 0 || sigma & (1 << j) == 0,
            SetAtom::Subset(i, j) => sigma & (1 << i) == 0 || sigma & (1 << j) != 0,
        })
    }

    /// `S_φ`: the allowed membership patterns of a single element.
    pub fn s_phi(&self) -> Vec<u64> {
        (0u64..(1u64 << self.k))
            .filter(|&s| self.allows(s))
            .collect()
    }

    /// Whether the predicate forces `T_i ∩ T_j = ∅` on every domain.
    pub fn entails_disjoint(&self, i: usize, j: usize) -> bool {
        self.s_phi()
            .iter()
            .all(|s| s & (1 << i) == 0 || s & (1 << j) == 0)
    }

    /// Whether the predicate forces `T_i ⊆ T_j` on every domain.
    pub fn entails_subset(&self, i: usize, j: usize) -> bool {
        self.s_phi()
            .iter()
            .all(|s| s & (1 << i) == 0 || s & (1 << j) != 0)
    }
}

/// `Σ_{T̄ ⊨ φ} ∏_i ∏_{a ∈ T_i} g_i(a) = ∏_a Σ_{σ ∈ S_φ} ∏_{i ∈ σ} g_i(a)`.
/// `g[i][a]` is the weight of element `a` in set `i`.
pub fn closed_sum<A: Algebra>(alg: &A, phi: &SetPredicate, g: &[Vec<A::V>]) -> A::V {
    let n = g.first().map_or(0, Vec::len);
    let sphi = phi.s_phi();
    let per_a: Vec<A::V> = (0..n)
        .map(|a| {
            let terms: Vec<A::V> = sphi
                .iter()
                .map(|&s| {
                    let f: Vec<A::V> = (0..phi.k)
                        .filter(|i| s & (1 << i) != 0)
                        .map(|i| g[i][a].clone())
                        .collect();
                    alg.product(&f)
                })
                .collect();
            alg.sum(&terms)
        })
        .collect();
    alg.product(&per_a)
}

/// The same sum restricted to tuples with every `T_i` nonempty, by
/// inclusion-exclusion over which sets are allowed to be nonempty.
pub fn closed_sum_plus<A: Algebra>(alg: &A, phi: &SetPredicate, g: &[Vec<A::V>]) -> A::V {
    let k = phi.k;
    let mut acc = Vec::with_capacity(1 << k);
    for sigma in 0u64..(1u64 << k) {
        let gs: Vec<Vec<A::V>> = (0..k)
            .map(|i| {
                if sigma & (1 << i) != 0 {
                    g[i].clone()
                } else {
                    vec![alg.zero(); g[i].len()]
                }
            })
            .collect();
        let v = closed_sum(alg, phi, &gs);
        acc.push(if (k as u32 - sigma.count_ones()).is_multiple_of(2) {
            v
        } else {
            alg.neg(&v)
        });
    }
    alg.sum(&acc)
}

/// Size of the closed-form expression for domain size `n`:
/// `n · Σ_{σ ∈ S_φ} max(1, |σ|)`.
pub fn closed_sum_size(phi: &SetPredicate, n: usize) -> usize {
    n * phi
        .s_phi()
        .iter()
        .map(|s| (s.count_ones() as usize).max(1))
        .sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::Exact;
    use num::{BigRational, One, Zero};

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    /// Direct sum over all set tuples.
    fn brute(phi: &SetPredicate, g: &[Vec<BigRational>], nonempty: bool) -> BigRational {
        let n = g[0].len();
        let k = phi.k;
        let mut total = BigRational::zero();
        for code in 0u64..(1u64 << (n * k)) {
            let sets: Vec<u64> = (0..k).map(|i| (code >> (i * n)) & ((1 << n) - 1)).collect();
            if nonempty && sets.contains(&0) {
                continue;
            }
            let ok = phi.atoms.iter().all(|a| match *a {
                SetAtom::Disjoint(i, j) => sets[i] & sets[j] == 0,
                SetAtom::Subset(i, j) => sets[i] & !sets[j] == 0,
            });
            if !ok {
                continue;
            }
            let mut w = BigRational::one();
            for (set, gi) in sets.iter().zip(g) {
                for (a, x) in gi.iter().enumerate() {
                    if set & (1 << a) != 0 {
                        w *= x;
                    }
                }
            }
            total += w;
        }
        total
    }

    #[test]
    fn example_sphi_and_size() {
        let phi = SetPredicate::parse(4, "T1&T2=0, T2&T3=0, T4<=T2").unwrap();
        let got: Vec<Vec<usize>> = phi
            .s_phi()
            .iter()
            .map(|s| {
                (0..4)
                    .filter(|i| s & (1 << i) != 0)
                    .map(|i| i + 1)
                    .collect()
            })
            .collect();
        let mut want = vec![vec![], vec![1], vec![2], vec![2, 4], vec![3], vec![1, 3]];
        let mut got_sorted = got.clone();
        got_sorted.sort();
        want.sort();
        assert_eq!(got_sorted, want);
        assert_eq!(closed_sum_size(&phi, 10), 80);
    }

    #[test]
    fn constant_weight_binomial() {
        let phi = SetPredicate::new(1, vec![]).unwrap();
        let g = vec![vec![r(2, 3); 5]];
        assert_eq!(closed_sum(&Exact, &phi, &g), num::pow(r(5, 3), 5));
    }

    #[test]
    fn matches_brute_force() {
        let shapes = [
            (2, "T1&T2=0"),
            (2, "T1<=T2"),
            (3, "T1&T2=0, T3<=T1"),
            (3, "T1<=T2, T2<=T3"),
            (3, "T1&T2=0, T2&T3=0, T1&T3=0"),
        ];
        for (k, text) in shapes {
            let phi = SetPredicate::parse(k, text).unwrap();
            for n in 1..=3 {
                let g: Vec<Vec<BigRational>> = (0..k)
                    .map(|i| (0..n).map(|a| r((i * 3 + a) as i64 - 2, 5)).collect())
                    .collect();
                assert_eq!(
                    closed_sum(&Exact, &phi, &g),
                    brute(&phi, &g, false),
                    "{text} n={n}"
                );
                assert_eq!(
                    closed_sum_plus(&Exact, &phi, &g),
                    brute(&phi, &g, true),
                    "{text} n={n} nonempty"
                );
            }
        }
    }

    #[test]
    fn rejects_unknown_atoms() {
        assert!(SetPredicate::parse(2, "T1|T2").is_err());
        assert!(SetPredicate::parse(2, "T3<=T1").is_err());
    }
}
