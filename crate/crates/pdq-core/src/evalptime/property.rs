//! Boolean combinations of conjunctive queries.

use std::collections::BTreeMap;

use num::{BigRational, One, Zero};

use super::{EvalError, Evaluator};
use crate::formula::Exact;
use crate::hiercov::conjoin_all;
use crate::invclass::{classify, Complexity};
use crate::pstruct::{ProbStructure, Property};
use crate::qcore::Query;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Literal {
    Pos(Query),
    Neg(Query),
}

/// Splits a leaf into its positive part and its negated ground atoms.
fn split_leaf(q: &Query) -> Result<(Query, Vec<Query>), EvalError> {
    let mut pos = q.clone();
    pos.atoms.retain(|a| !a.neg);
    let mut negs = Vec::new();
    for a in q.atoms.iter().filter(|a| a.neg) {
        if !a.is_ground() {
            return Err(EvalError::UnsupportedNegation(q.to_string()));
        }
        let mut g = a.clone();
        g.neg = false;
        negs.push(Query {
            atoms: vec![g],
            preds: vec![],
            names: vec![],
        });
    }
    Ok((pos, negs))
}

/// Disjunctive normal form over query literals.
pub fn to_dnf(phi: &Property) -> Result<Vec<Vec<Literal>>, EvalError> {
    fn go(p: &Property, positive: bool) -> Result<Vec<Vec<Literal>>, EvalError> {
        match (p, positive) {
            (Property::Query(q), true) => {
                let (pos, negs) = split_leaf(q)?;
                let mut c = vec![Literal::Pos(pos)];
                c.extend(negs.into_iter().map(Literal::Neg));
                Ok(vec![c])
            }
            (Property::Query(q), false) => {
                if !q.has_negation() {
                    return Ok(vec![vec![Literal::Neg(q.clone())]]);
                }
                // not(P and not g1 and ...) = not P or g1 or ...
                let (pos, negs) = split_leaf(q)?;
                let mut out = vec![vec![Literal::Neg(pos)]];
                out.extend(negs.into_iter().map(|g| vec![Literal::Pos(g)]));
                Ok(out)
            }
            (Property::Not(inner), s) => go(inner, !s),
            (Property::And(ps), true) | (Property::Or(ps), false) => {
                let mut acc: Vec<Vec<Literal>> = vec![vec![]];
                for p in ps {
                    let d = go(p, positive)?;
                    let mut next = Vec::with_capacity(acc.len() * d.len());
                    for a in &acc {
                        for b in &d {
                            let mut c = a.clone();
                            c.extend(b.iter().cloned());
                            next.push(c);
                        }
                    }
                    acc = next;
                }
                Ok(acc)
            }
            (Property::Or(ps), true) | (Property::And(ps), false) => {
                let mut acc = Vec::new();
                for p in ps {
                    acc.extend(go(p, positive)?);
                }
                Ok(acc)
            }
        }
    }
    go(phi, true)
}

/// Exact probability of a Boolean combination whose positive parts jointly
/// form a PTIME query.
pub fn eval_property(phi: &Property, s: &ProbStructure) -> Result<BigRational, EvalError> {
    let dnf = to_dnf(phi)?;
    let leaves: Vec<Query> = dnf
        .iter()
        .flatten()
        .map(|l| match l {
            Literal::Pos(q) | Literal::Neg(q) => q.clone(),
        })
        .filter(|q| !q.atoms.is_empty())
        .collect();
    if !leaves.is_empty() {
        let all = conjoin_all(&leaves);
        let v = classify(&all)?;
        if v.complexity == Complexity::SharpPHard {
            return Err(EvalError::Hard(v.reason));
        }
    }
    let ev = Evaluator::new(&Exact, s);
    let mut total = BigRational::zero();
    let n = dnf.len();
    assert!(n < 20, "too many DNF clauses");
    for j in 1u32..(1u32 << n) {
        let lits: Vec<&Literal> = (0..n)
            .filter(|i| j & (1 << i) != 0)
            .flat_map(|i| dnf[i].iter())
            .collect();
        let v = conjunction(&ev, &lits)?;
        if j.count_ones() % 2 == 1 {
            total += v;
        } else {
            total -= v;
        }
    }
    Ok(total)
}

/// `p(P ∧ ¬N_1 ∧ … ∧ ¬N_m) = Σ_{K ⊆ [m]} (-1)^|K| p(P ∧ N_K)`.
fn conjunction(ev: &Evaluator<'_, Exact>, lits: &[&Literal]) -> Result<BigRational, EvalError> {
    let pos: Vec<&Query> = lits
        .iter()
        .filter_map(|l| {
            if let Literal::Pos(q) = l {
                Some(q)
            } else {
                None
            }
        })
        .collect();
    let mut negs: BTreeMap<String, &Query> = BTreeMap::new();
    for l in lits {
        if let Literal::Neg(q) = l {
            negs.insert(q.canonical_text(), q);
        }
    }
    let negs: Vec<&Query> = negs.into_values().collect();
    let base = conjoin_all(pos.iter().copied());
    let mut total = BigRational::zero();
    for k in 0u32..(1u32 << negs.len()) {
        let extra: Vec<&Query> = (0..negs.len())
            .filter(|i| k & (1 << i) != 0)
            .map(|i| negs[i])
            .collect();
        let q = conjoin_all(std::iter::once(&base).chain(extra));
        let v = if q.atoms.is_empty() {
            BigRational::one()
        } else {
            ev.prob(&q)?
        };
        if k.count_ones() % 2 == 0 {
            total += v;
        } else {
            total -= v;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pstruct::oracle_eval_property;
    use crate::qcore::parse_query;

    fn leaf(s: &str) -> Property {
        Property::Query(parse_query(s).unwrap())
    }

    #[test]
    fn complement_of_ground_atom() {
        let s = ProbStructure::parse("R\ta\t1/3").unwrap();
        let phi = Property::Not(Box::new(leaf("R('a')")));
        assert_eq!(
            eval_property(&phi, &s).unwrap(),
            BigRational::new(2.into(), 3.into())
        );
    }

    #[test]
    fn disjunction_and_negation_match_oracle() {
        let s = ProbStructure::parse("R\ta\t1/2\nS\ta,b\t1/3\nS\tb,b\t1/4\nT\tb\t2/5\nR\tb\t3/7")
            .unwrap();
        let cases = vec![
            Property::Or(vec![leaf("R(x),S(x,y)"), leaf("T(z)")]),
            Property::And(vec![
                leaf("R(x)"),
                Property::Not(Box::new(leaf("T(y),S(y,u)"))),
            ]),
            Property::Not(Box::new(Property::Or(vec![
                leaf("R(x),S(x,y)"),
                Property::Not(Box::new(leaf("T('b')"))),
            ]))),
        ];
        for phi in cases {
            let want = oracle_eval_property(&phi, &s, 24).unwrap();
            assert_eq!(eval_property(&phi, &s).unwrap(), want, "{phi}");
        }
    }
}
