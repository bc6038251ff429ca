//! Hierarchy trees, the change of basis for expansion sums, and
//! bootstrapped sums over set families.

use std::collections::{BTreeMap, BTreeSet};

use num::{BigRational, One, Zero};

use super::{property::eval_property, EvalError};
use crate::hiercov::{hierarchy, is_hierarchical};
use crate::pstruct::{ProbStructure, Property, Tuple};
use crate::qcore::{intern_rel, Query, Term};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HierNode {
    /// The equivalence class (variables with the same subgoal set).
    pub vars: Vec<u32>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// `⌈x⌉`: variables whose subgoal sets contain this class's.
    pub up: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct HierTree {
    pub nodes: Vec<HierNode>,
    pub root: usize,
}

impl HierTree {
    /// The node holding variable `v`.
    pub fn node_of(&self, v: u32) -> Option<usize> {
        self.nodes.iter().position(|n| n.vars.contains(&v))
    }
}

/// The tree of `≡`-classes of a connected hierarchical query, ordered by `⊑`.
pub fn hierarchy_tree(f: &Query) -> Result<HierTree, EvalError> {
    if !is_hierarchical(f) {
        return Err(EvalError::NotHierarchical);
    }
    if !f.is_connected() || f.is_ground() {
        return Err(EvalError::NotConnected(f.to_string()));
    }
    let h = hierarchy(f);
    let mut classes: BTreeMap<BTreeSet<usize>, Vec<u32>> = BTreeMap::new();
    for v in 0..f.nvars() as u32 {
        classes.entry(h.sg[v as usize].clone()).or_default().push(v);
    }
    let keys: Vec<BTreeSet<usize>> = classes.keys().cloned().collect();
    let mut nodes: Vec<HierNode> = keys
        .iter()
        .map(|k| {
            let up = (0..f.nvars() as u32)
                .filter(|&v| h.sg[v as usize].is_superset(k))
                .collect();
            HierNode {
                vars: classes[k].clone(),
                parent: None,
                children: vec![],
                up,
            }
        })
        .collect();
    for (i, k) in keys.iter().enumerate() {
        // the smallest strictly larger subgoal set is the parent
        let parent = keys
            .iter()
            .enumerate()
            .filter(|(_, o)| o.len() > k.len() && o.is_superset(k))
            .min_by_key(|(_, o)| o.len())
            .map(|(j, _)| j);
        nodes[i].parent = parent;
        if let Some(p) = parent {
            nodes[p].children.push(i);
        }
    }
    let roots: Vec<usize> = (0..nodes.len())
        .filter(|&i| nodes[i].parent.is_none())
        .collect();
    debug_assert_eq!(
        roots.len(),
        1,
        "connected hierarchical query has one top class"
    );
    Ok(HierTree {
        nodes,
        root: roots[0],
    })
}

fn assignments(n: usize, dom: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                dom.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

fn ground_atoms(
    f: &Query,
    vars: &[u32],
    t: &[u32],
    filter: impl Fn(&BTreeSet<u32>) -> bool,
) -> Vec<Tuple> {
    f.positive_atoms()
        .filter(|a| filter(&a.vars().collect()))
        .map(|a| Tuple {
            rel: a.rel,
            args: a
                .args
                .iter()
                .map(|x| match x {
                    Term::Const(c) => *c,
                    Term::Var(v) => t[vars.iter().position(|w| w == v).expect("variable in scope")],
                })
                .collect(),
        })
        .collect()
}

fn prob_of(s: &ProbStructure, tuples: &BTreeSet<Tuple>) -> BigRational {
    tuples
        .iter()
        .map(|t| s.prob(t))
        .fold(BigRational::one(), |a, b| a * b)
}

/// Both sides of the change of basis for a connected hierarchical `f`
/// without self-joins, by enumeration over `dom`:
/// `Σ_T (-1)^|T| p(f(T))` over sets `T` of full assignments, and
/// `Σ_{S̄ linked} ∏_{[x]} ∏_{t ∈ S^{[x]}} G(t)` with
/// `G(t) = (-1)^{c+1} ∏_{Vars(g) = ⌈x⌉} p(g(t))`, `c` the number of children.
pub fn change_of_basis_sides(
    f: &Query,
    s: &ProbStructure,
    dom: &[u32],
) -> Result<(BigRational, BigRational), EvalError> {
    let tree = hierarchy_tree(f)?;
    let all: Vec<u32> = (0..f.nvars() as u32).collect();
    let full = assignments(all.len(), dom);
    assert!(full.len() <= 12, "change of basis enumeration too large");
    let mut lhs = BigRational::zero();
    for mask in 0u64..(1u64 << full.len()) {
        let mut tuples = BTreeSet::new();
        for (k, t) in full.iter().enumerate() {
            if mask & (1 << k) != 0 {
                tuples.extend(ground_atoms(f, &all, t, |_| true));
            }
        }
        let p = prob_of(s, &tuples);
        if mask.count_ones() % 2 == 0 {
            lhs += p;
        } else {
            lhs -= p;
        }
    }

    // per node: candidate tuples over ⌈x⌉ and their weights G
    let nn = tree.nodes.len();
    let node_tuples: Vec<Vec<Vec<u32>>> = tree
        .nodes
        .iter()
        .map(|n| assignments(n.up.len(), dom))
        .collect();
    let weights: Vec<Vec<BigRational>> = tree
        .nodes
        .iter()
        .zip(&node_tuples)
        .map(|(n, ts)| {
            let upset: BTreeSet<u32> = n.up.iter().copied().collect();
            let sign = if n.children.len() % 2 == 0 {
                -BigRational::one()
            } else {
                BigRational::one()
            };
            ts.iter()
                .map(|t| {
                    let atoms: BTreeSet<Tuple> = ground_atoms(f, &n.up, t, |vs| *vs == upset)
                        .into_iter()
                        .collect();
                    &sign * prob_of(s, &atoms)
                })
                .collect()
        })
        .collect();
    let total_bits: usize = node_tuples.iter().map(Vec::len).sum();
    assert!(total_bits <= 24, "change of basis enumeration too large");
    let mut rhs = BigRational::zero();
    for code in 0u64..(1u64 << total_bits) {
        let mut off = 0;
        let mut sets: Vec<u64> = Vec::with_capacity(nn);
        for ts in &node_tuples {
            sets.push((code >> off) & ((1u64 << ts.len()) - 1));
            off += ts.len();
        }
        // link predicates: each parent set is the projection of each child set
        let linked = (0..nn).all(|c| match tree.nodes[c].parent {
            None => true,
            Some(p) => {
                let pu = &tree.nodes[p].up;
                let cu = &tree.nodes[c].up;
                let idx: Vec<usize> = pu
                    .iter()
                    .map(|v| cu.iter().position(|w| w == v).expect("⌈parent⌉ ⊆ ⌈child⌉"))
                    .collect();
                let mut proj = 0u64;
                for (k, t) in node_tuples[c].iter().enumerate() {
                    if sets[c] & (1 << k) != 0 {
                        let pt: Vec<u32> = idx.iter().map(|&i| t[i]).collect();
                        let pk = node_tuples[p]
                            .iter()
                            .position(|x| *x == pt)
                            .expect("projection in range");
                        proj |= 1 << pk;
                    }
                }
                proj == sets[p]
            }
        });
        if !linked {
            continue;
        }
        let mut w = BigRational::one();
        for c in 0..nn {
            for (k, g) in weights[c].iter().enumerate() {
                if sets[c] & (1 << k) != 0 {
                    w *= g;
                }
            }
        }
        rhs += w;
    }
    Ok((lhs, rhs))
}

/// Relations of an auxiliary set vocabulary with their arities.
#[derive(Clone, Debug, Default)]
pub struct SVocab {
    pub relations: Vec<(String, usize)>,
}

impl SVocab {
    pub fn new(relations: &[(&str, usize)]) -> SVocab {
        SVocab {
            relations: relations.iter().map(|(r, a)| (r.to_string(), *a)).collect(),
        }
    }

    /// Every tuple over `dom`.
    pub fn tuples(&self, dom: &[u32]) -> Vec<Tuple> {
        self.relations
            .iter()
            .flat_map(|(r, a)| {
                let rel = intern_rel(r);
                assignments(*a, dom)
                    .into_iter()
                    .map(move |args| Tuple { rel, args })
            })
            .collect()
    }
}

/// `Σ_{W ⊨ φ} ∏_{t ∈ W} g(t)` over all instances `W` of the vocabulary on
/// `dom`, computed as `p(φ) · ∏_t (1 + g(t))` on the instance with
/// `p(t) = g(t) / (1 + g(t))`. Tuples with `g(t) = -1` are split by hand:
/// their contribution is (sum without `t`) − (sum with `t` forced in).
pub fn bootstrap_sum(
    vocab: &SVocab,
    dom: &[u32],
    g: &dyn Fn(&Tuple) -> BigRational,
    phi: &Property,
) -> Result<BigRational, EvalError> {
    let mut base = ProbStructure::new();
    for &c in dom {
        base.add_const(c);
    }
    let mut scale = BigRational::one();
    let mut poles = Vec::new();
    let minus_one = -BigRational::one();
    for t in vocab.tuples(dom) {
        let w = g(&t);
        if w.is_zero() {
            continue;
        }
        if w == minus_one {
            poles.push(t);
            continue;
        }
        let one_plus = BigRational::one() + &w;
        base.insert(t, &w / &one_plus);
        scale *= one_plus;
    }
    fn split(
        base: &ProbStructure,
        poles: &[Tuple],
        phi: &Property,
    ) -> Result<BigRational, EvalError> {
        match poles.split_first() {
            None => eval_property(phi, base),
            Some((t, rest)) => {
                let without = split(base, rest, phi)?;
                let mut with = base.clone();
                with.insert(t.clone(), BigRational::one());
                Ok(without - split(&with, rest, phi)?)
            }
        }
    }
    Ok(split(&base, &poles, phi)? * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalptime::closed::{closed_sum, SetPredicate};
    use crate::formula::Exact;
    use crate::qcore::{intern_const, parse_query};

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn tree_of_two_atom_chain() {
        let f = parse_query("R1(x,y),R2(y,z)").unwrap();
        let t = hierarchy_tree(&f).unwrap();
        assert_eq!(t.nodes[t.root].vars, vec![1]);
        assert_eq!(t.nodes[t.root].children.len(), 2);
        let x = t.node_of(0).unwrap();
        assert_eq!(t.nodes[x].up, vec![0, 1]);
        assert_eq!(
            hierarchy_tree(&parse_query("R(x)").unwrap())
                .unwrap()
                .nodes
                .len(),
            1
        );
        let one = hierarchy_tree(&parse_query("S(x,y)").unwrap()).unwrap();
        assert_eq!(one.nodes.len(), 1);
        assert_eq!(one.nodes[0].vars, vec![0, 1]);
    }

    #[test]
    fn change_of_basis_on_two_elements() {
        let s = ProbStructure::parse(
            "R1\ta,a\t1/2\nR1\ta,b\t1/3\nR1\tb,b\t2/5\nR2\ta,a\t1/4\nR2\tb,a\t3/4\nR2\tb,b\t1/5\nR1\tb,a\t1/7",
        )
        .unwrap();
        let dom = [intern_const("a"), intern_const("b")];
        for q in ["R1(x,y),R2(y,z)", "R(x),S(x,y)"] {
            let (l, r) = change_of_basis_sides(&parse_query(q).unwrap(), &s, &dom).unwrap();
            assert_eq!(l, r, "{q}");
        }
    }

    #[test]
    fn bootstrap_counts_nonempty_sets() {
        let dom: Vec<u32> = ["a", "b", "c"].iter().map(|c| intern_const(c)).collect();
        let v = SVocab::new(&[("S", 1)]);
        let phi = Property::Query(parse_query("S(x)").unwrap());
        let got = bootstrap_sum(&v, &dom, &|_| BigRational::one(), &phi).unwrap();
        assert_eq!(got, BigRational::from_integer(7.into()));
    }

    #[test]
    fn bootstrap_matches_closed_sum_with_pole() {
        let dom: Vec<u32> = ["a", "b", "c"].iter().map(|c| intern_const(c)).collect();
        let v = SVocab::new(&[("T1", 1), ("T2", 1)]);
        let phi = Property::Not(Box::new(Property::Query(
            parse_query("T1(x),T2(x)").unwrap(),
        )));
        let table = [[r(1, 2), r(-1, 1), r(3, 1)], [r(2, 3), r(1, 4), r(-1, 1)]];
        let t1 = intern_rel("T1");
        let g = |t: &Tuple| {
            let i = dom.iter().position(|&c| c == t.args[0]).unwrap();
            table[usize::from(t.rel != t1)][i].clone()
        };
        let got = bootstrap_sum(&v, &dom, &g, &phi).unwrap();
        let sp = SetPredicate::parse(2, "T1&T2=0").unwrap();
        let gs: Vec<Vec<BigRational>> = table.iter().map(|row| row.to_vec()).collect();
        assert_eq!(got, closed_sum(&Exact, &sp, &gs));
    }

    #[test]
    fn bootstrap_binary_disjointness_brute_force() {
        let dom: Vec<u32> = ["a", "b"].iter().map(|c| intern_const(c)).collect();
        let v = SVocab::new(&[("U1", 2), ("U2", 2)]);
        let phi = Property::Not(Box::new(Property::Query(
            parse_query("U1(x,y),U2(x,y)").unwrap(),
        )));
        let tuples = v.tuples(&dom);
        let g = |t: &Tuple| {
            r(
                t.args.iter().map(|&c| c as i64).sum::<i64>() % 3 + 1,
                (t.rel % 2 + 2) as i64,
            )
        };
        let mut want = BigRational::zero();
        for m in 0u32..(1 << tuples.len()) {
            let present: Vec<&Tuple> = (0..tuples.len())
                .filter(|i| m & (1 << i) != 0)
                .map(|i| &tuples[i])
                .collect();
            let clash = present
                .iter()
                .any(|a| present.iter().any(|b| a.rel != b.rel && a.args == b.args));
            if !clash {
                want += present
                    .iter()
                    .map(|t| g(t))
                    .fold(BigRational::one(), |a, b| a * b);
            }
        }
        assert_eq!(bootstrap_sum(&v, &dom, &g, &phi).unwrap(), want);
    }
}
