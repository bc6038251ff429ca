//! The expansion evaluator for queries with self-joins.
//!
//! A strict unary coverage assigns every non-ground factor a root variable
//! such that every factor unifier identifies roots. Groundings at different
//! root values are then independent, and the expansion over the factors
//! turns into closed sums: for each set `τ` of non-ground factors,
//! `P_τ = ∏_a Σ_{S ∈ S_φ, S ⊆ τ} (-1)^|S| p(∧_{h ∈ S} h[a])`.
//! `S_φ` holds the factor sets allowed together on one element: a pair whose
//! join at the root carries an inversion is never allowed, and when the query
//! is PTIME an eraser makes the dropped terms cancel. Every other conjunction
//! is evaluated recursively with the root bound, which lowers the number of
//! variables per subgoal.
//!
//! With `M` the superset Möbius transform of `N` over non-ground factors,
//! `1 - p(q) = Σ_{σG ⊆ ground} (-1)^|σG| ∏_{g ∈ σG} p(g) Σ_τ M(σG, τ) P_τ`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use super::{ground_tuple, safeplan, EvalError, Evaluator};
use crate::formula::Algebra;
use crate::hiercov::{all_mgus, conjoin_all, n_table, unary_roots};
use crate::invclass::{find_inversion, join_on};
use crate::par;
use crate::qcore::{intern_const, minimize, Atom, Pred, Query, Term};

const SLOTS: usize = 64;

/// Evaluation plan for one query shape (constants abstracted).
#[derive(Debug)]
pub(super) struct Plan {
    /// Non-ground factors with their roots.
    pub members: Vec<(Query, u32)>,
    /// Ground factors (single atoms).
    pub ground: Vec<Query>,
    /// Member sets allowed on a single element.
    pub sphi: Vec<u64>,
    /// Per ground signature: nonzero `(τ, M(τ))`.
    pub terms: Vec<(u64, Vec<(u64, i64)>)>,
}

fn slots() -> &'static [u32] {
    static S: OnceLock<Vec<u32>> = OnceLock::new();
    S.get_or_init(|| {
        (0..SLOTS)
            .map(|i| intern_const(&format!("\u{3}slot{i:02}")))
            .collect()
    })
}

fn plan_cache() -> &'static Mutex<HashMap<String, Arc<Plan>>> {
    static C: OnceLock<Mutex<HashMap<String, Arc<Plan>>>> = OnceLock::new();
    C.get_or_init(|| Mutex::new(HashMap::new()))
}

fn rename_consts(q: &Query, map: &BTreeMap<u32, u32>) -> Query {
    let t = |x: Term| match x {
        Term::Const(c) => Term::Const(*map.get(&c).unwrap_or(&c)),
        v => v,
    };
    Query {
        atoms: q
            .atoms
            .iter()
            .map(|a| Atom {
                rel: a.rel,
                args: a.args.iter().map(|&x| t(x)).collect(),
                neg: a.neg,
            })
            .collect(),
        preds: q
            .preds
            .iter()
            .map(|p| Pred {
                op: p.op,
                l: t(p.l),
                r: t(p.r),
            })
            .collect(),
        names: q.names.clone(),
    }
}

/// Builds (or fetches) the plan for `q`'s shape, instantiated with `q`'s constants.
fn plan_for(q: &Query) -> Result<Plan, EvalError> {
    let consts: Vec<u32> = q.consts().into_iter().collect();
    if consts.len() > SLOTS {
        return build_plan(q);
    }
    let to_slot: BTreeMap<u32, u32> = consts
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, slots()[i]))
        .collect();
    let back: BTreeMap<u32, u32> = to_slot.iter().map(|(&c, &s)| (s, c)).collect();
    let abs = rename_consts(q, &to_slot);
    let key = abs.canonical_text();
    let cached = plan_cache().lock().expect("plan cache").get(&key).cloned();
    let plan = match cached {
        Some(p) => p,
        None => {
            let p = Arc::new(build_plan(&abs)?);
            plan_cache()
                .lock()
                .expect("plan cache")
                .insert(key, p.clone());
            p
        }
    };
    Ok(Plan {
        members: plan
            .members
            .iter()
            .map(|(m, r)| (rename_consts(m, &back), *r))
            .collect(),
        ground: plan
            .ground
            .iter()
            .map(|g| rename_consts(g, &back))
            .collect(),
        sphi: plan.sphi.clone(),
        terms: plan.terms.clone(),
    })
}

pub(super) fn build_plan(q: &Query) -> Result<Plan, EvalError> {
    let cov = unary_roots(q)?;
    let nf = cov.factors.len();
    if nf > 24 {
        return Err(EvalError::MemberCap(24));
    }
    // non-ground factors take the low bits, ground ones the high bits
    let order: Vec<usize> = (0..nf)
        .filter(|&i| cov.root(i).is_some())
        .chain((0..nf).filter(|&i| cov.root(i).is_none()))
        .collect();
    let members: Vec<(Query, u32)> = order
        .iter()
        .filter_map(|&i| cov.root(i).map(|r| (cov.factors[i].clone(), r)))
        .collect();
    let ground: Vec<Query> = order[members.len()..]
        .iter()
        .map(|&i| cov.factors[i].clone())
        .collect();
    let nm = members.len();
    let ng = ground.len();

    let mut forbidden: Vec<u64> = vec![0; nm];
    for i in 0..nm {
        for j in (i + 1)..nm {
            let (mi, ri) = &members[i];
            let (mj, rj) = &members[j];
            if all_mgus(mi, mj).is_empty() {
                continue;
            }
            let Some(jq) = join_on(mi, mj, &[(*ri, *rj)]) else {
                continue;
            };
            if find_inversion(&minimize(&jq))?.is_some() {
                forbidden[i] |= 1 << j;
                forbidden[j] |= 1 << i;
            }
        }
    }
    let sphi: Vec<u64> = (0u64..(1u64 << nm))
        .filter(|&s| (0..nm).all(|h| s & (1 << h) == 0 || forbidden[h] & s == 0))
        .collect();

    // N with factors renumbered to the bit layout above
    let nt_orig = n_table(&cov);
    let remap = |m: u64| -> usize {
        order
            .iter()
            .enumerate()
            .filter(|(b, _)| m & (1 << b) != 0)
            .fold(0usize, |acc, (_, &f)| acc | 1 << f)
    };
    let mmask = (1u64 << nm) - 1;
    let mut terms = Vec::new();
    for sg in 0u64..(1u64 << ng) {
        let mut m: Vec<i64> = (0..=mmask)
            .map(|sn| nt_orig[remap(sn | (sg << nm))])
            .collect();
        for b in 0..nm {
            for x in 0..=mmask {
                if x & (1 << b) == 0 {
                    m[x as usize] -= m[(x | (1 << b)) as usize];
                }
            }
        }
        let nz: Vec<(u64, i64)> = m
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(t, &c)| (t as u64, c))
            .collect();
        if !nz.is_empty() {
            terms.push((sg, nz));
        }
    }
    Ok(Plan {
        members,
        ground,
        sphi,
        terms,
    })
}

pub(super) fn eval<A: Algebra>(ev: &Evaluator<'_, A>, q: &Query) -> Result<A::V, EvalError> {
    let plan = plan_for(q)?;
    let alg = ev.algebra();
    let v_q = q.max_vars_per_atom();
    let mut values: BTreeSet<u32> = BTreeSet::new();
    for (m, r) in &plan.members {
        values.extend(safeplan::root_values(ev, m, *r));
    }
    let values: Vec<u32> = values.into_iter().collect();

    let taus: Vec<u64> = {
        let set: BTreeSet<u64> = plan
            .terms
            .iter()
            .flat_map(|(_, ts)| ts.iter().map(|t| t.0))
            .collect();
        set.into_iter().collect()
    };

    // L_τ(a) for every needed τ and candidate a
    let per_a = par::map(&values, |&a| -> Result<Vec<A::V>, EvalError> {
        let mut bound: Vec<Option<Query>> =
            plan.members.iter().map(|(m, r)| m.bind(*r, a)).collect();
        // a factor with probability 0 at `a` zeroes every set containing it
        for b in bound.iter_mut() {
            if let Some(m) = b {
                if alg.is_zero(&ev.prob(m)?) {
                    *b = None;
                }
            }
        }
        let mut sterm: Vec<(u64, A::V)> = Vec::with_capacity(plan.sphi.len());
        for &s in &plan.sphi {
            let parts: Option<Vec<&Query>> = (0..plan.members.len())
                .filter(|h| s & (1 << h) != 0)
                .map(|h| bound[h].as_ref())
                .collect();
            let Some(parts) = parts else { continue };
            let conj = conjoin_all(parts);
            debug_assert!(
                conj.max_vars_per_atom() < v_q.max(1),
                "recursion must lower V"
            );
            let p = ev.prob(&conj)?;
            if alg.is_zero(&p) {
                continue;
            }
            sterm.push((
                s,
                if s.count_ones() % 2 == 0 {
                    p
                } else {
                    alg.neg(&p)
                },
            ));
        }
        Ok(taus
            .iter()
            .map(|&t| {
                let parts: Vec<A::V> = sterm
                    .iter()
                    .filter(|(s, _)| s & !t == 0)
                    .map(|(_, v)| v.clone())
                    .collect();
                alg.sum(&parts)
            })
            .collect())
    });
    let mut rows = Vec::with_capacity(per_a.len());
    for r in per_a {
        rows.push(r?);
    }
    let p_tau: HashMap<u64, A::V> = taus
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let col: Vec<A::V> = rows.iter().map(|row| row[k].clone()).collect();
            (t, alg.product(&col))
        })
        .collect();

    let gp: Vec<A::V> = plan
        .ground
        .iter()
        .map(|g| ev.tuple(&ground_tuple(&g.atoms[0])))
        .collect();
    let mut outer = Vec::with_capacity(plan.terms.len());
    for (sg, ts) in &plan.terms {
        let inner: Vec<A::V> = ts.iter().map(|(t, c)| alg.scale(*c, &p_tau[t])).collect();
        let inner = alg.sum(&inner);
        let gs: Vec<A::V> = (0..plan.ground.len())
            .filter(|g| sg & (1 << g) != 0)
            .map(|g| gp[g].clone())
            .collect();
        let mut term = alg.mul(&alg.product(&gs), &inner);
        if sg.count_ones() % 2 == 1 {
            term = alg.neg(&term);
        }
        outer.push(term);
    }
    Ok(alg.one_minus(&alg.sum(&outer)))
}
