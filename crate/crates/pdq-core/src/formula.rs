//! Value domains for the evaluators: exact rationals, a hash-consed formula
//! DAG (for size measurements and emission) and plain floats.

use std::collections::HashMap;
use std::sync::Mutex;

use num::{BigRational, One, ToPrimitive, Zero};
use serde::Serialize;

use crate::pstruct::{ProbStructure, Tuple};

/// Arithmetic over tuple probabilities.
pub trait Algebra: Sync {
    type V: Clone + Send + Sync;

    fn constant(&self, r: &BigRational) -> Self::V;
    /// The probability of a tuple (0 when absent).
    fn tuple(&self, s: &ProbStructure, t: &Tuple) -> Self::V;
    fn add(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn neg(&self, a: &Self::V) -> Self::V;
    /// Known to be exactly zero.
    fn is_zero(&self, a: &Self::V) -> bool;

    fn zero(&self) -> Self::V {
        self.constant(&BigRational::zero())
    }
    fn one(&self) -> Self::V {
        self.constant(&BigRational::one())
    }
    fn int(&self, n: i64) -> Self::V {
        self.constant(&BigRational::from_integer(n.into()))
    }
    fn sub(&self, a: &Self::V, b: &Self::V) -> Self::V {
        self.add(a, &self.neg(b))
    }
    fn one_minus(&self, a: &Self::V) -> Self::V {
        self.sub(&self.one(), a)
    }
    fn scale(&self, k: i64, a: &Self::V) -> Self::V {
        match k {
            0 => self.zero(),
            1 => a.clone(),
            -1 => self.neg(a),
            _ => self.mul(&self.int(k), a),
        }
    }
    fn sum<'a>(&self, it: impl IntoIterator<Item = &'a Self::V>) -> Self::V
    where
        Self::V: 'a,
    {
        it.into_iter().fold(self.zero(), |acc, v| self.add(&acc, v))
    }
    fn product<'a>(&self, it: impl IntoIterator<Item = &'a Self::V>) -> Self::V
    where
        Self::V: 'a,
    {
        let mut acc = self.one();
        for v in it {
            if self.is_zero(v) {
                return self.zero();
            }
            acc = self.mul(&acc, v);
        }
        acc
    }
}

/// Exact rational arithmetic.
#[derive(Clone, Copy, Debug, Default)]
pub struct Exact;

impl Algebra for Exact {
    type V = BigRational;
    fn constant(&self, r: &BigRational) -> BigRational {
        r.clone()
    }
    fn tuple(&self, s: &ProbStructure, t: &Tuple) -> BigRational {
        s.prob(t)
    }
    fn add(&self, a: &BigRational, b: &BigRational) -> BigRational {
        a + b
    }
    fn mul(&self, a: &BigRational, b: &BigRational) -> BigRational {
        a * b
    }
    fn neg(&self, a: &BigRational) -> BigRational {
        -a
    }
    fn is_zero(&self, a: &BigRational) -> bool {
        a.is_zero()
    }
}

/// Double-precision arithmetic.
#[derive(Clone, Copy, Debug, Default)]
pub struct Float;

impl Algebra for Float {
    type V = f64;
    fn constant(&self, r: &BigRational) -> f64 {
        r.to_f64().unwrap_or(f64::NAN)
    }
    fn tuple(&self, s: &ProbStructure, t: &Tuple) -> f64 {
        s.prob(t).to_f64().unwrap_or(f64::NAN)
    }
    fn add(&self, a: &f64, b: &f64) -> f64 {
        a + b
    }
    fn mul(&self, a: &f64, b: &f64) -> f64 {
        a * b
    }
    fn neg(&self, a: &f64) -> f64 {
        -a
    }
    fn is_zero(&self, a: &f64) -> bool {
        *a == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Const(BigRational),
    Tuple(Tuple),
    Add(u32, u32),
    Mul(u32, u32),
    Neg(u32),
}

#[derive(Default)]
struct DagInner {
    nodes: Vec<Node>,
    ids: HashMap<Node, u32>,
}

/// A hash-consed arithmetic circuit over tuple probabilities. Constant
/// subterms are folded, so absent tuples vanish from the result.
#[derive(Default)]
pub struct Dag {
    inner: Mutex<DagInner>,
}

#[derive(Serialize)]
struct NodeJson {
    id: u32,
    op: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    args: Vec<u32>,
}

impl Dag {
    pub fn new() -> Dag {
        Dag::default()
    }

    fn intern(&self, n: Node) -> u32 {
        let mut g = self.inner.lock().expect("dag lock");
        if let Some(&id) = g.ids.get(&n) {
            return id;
        }
        let id = g.nodes.len() as u32;
        g.nodes.push(n.clone());
        g.ids.insert(n, id);
        id
    }

    fn node(&self, id: u32) -> Node {
        self.inner.lock().expect("dag lock").nodes[id as usize].clone()
    }

    fn as_const(&self, id: u32) -> Option<BigRational> {
        match self.node(id) {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Ids reachable from `root`, children before parents.
    fn reachable(&self, root: u32) -> Vec<u32> {
        let g = self.inner.lock().expect("dag lock");
        let mut seen = vec![false; g.nodes.len()];
        let mut order = Vec::new();
        let mut stack = vec![(root, false)];
        while let Some((id, done)) = stack.pop() {
            if done {
                order.push(id);
                continue;
            }
            if seen[id as usize] {
                continue;
            }
            seen[id as usize] = true;
            stack.push((id, true));
            match &g.nodes[id as usize] {
                Node::Add(a, b) | Node::Mul(a, b) => {
                    stack.push((*b, false));
                    stack.push((*a, false));
                }
                Node::Neg(a) => stack.push((*a, false)),
                _ => {}
            }
        }
        order
    }

    /// Number of distinct nodes of the formula rooted at `root`.
    pub fn size(&self, root: u32) -> usize {
        self.reachable(root).len()
    }

    /// Total number of nodes built so far.
    pub fn total_nodes(&self) -> usize {
        self.inner.lock().expect("dag lock").nodes.len()
    }

    /// Evaluates the formula under the structure's probabilities.
    pub fn eval(&self, root: u32, s: &ProbStructure) -> BigRational {
        let order = self.reachable(root);
        let mut val: HashMap<u32, BigRational> = HashMap::new();
        for id in order {
            let v = match self.node(id) {
                Node::Const(c) => c,
                Node::Tuple(t) => s.prob(&t),
                Node::Add(a, b) => &val[&a] + &val[&b],
                Node::Mul(a, b) => &val[&a] * &val[&b],
                Node::Neg(a) => -&val[&a],
            };
            val.insert(id, v);
        }
        val.remove(&root).expect("root evaluated")
    }

    /// The formula as a JSON node list (children first) with the root id.
    pub fn to_json(&self, root: u32) -> serde_json::Value {
        let nodes: Vec<NodeJson> = self
            .reachable(root)
            .into_iter()
            .map(|id| {
                let (op, value, args) = match self.node(id) {
                    Node::Const(c) => ("const", Some(c.to_string()), vec![]),
                    Node::Tuple(t) => ("tuple-prob", Some(t.to_string()), vec![]),
                    Node::Add(a, b) => ("add", None, vec![a, b]),
                    Node::Mul(a, b) => ("mul", None, vec![a, b]),
                    Node::Neg(a) => ("neg", None, vec![a]),
                };
                NodeJson {
                    id,
                    op,
                    value,
                    args,
                }
            })
            .collect();
        serde_json::json!({ "root": root, "size": nodes.len(), "nodes": nodes })
    }
}

impl Algebra for Dag {
    type V = u32;

    fn constant(&self, r: &BigRational) -> u32 {
        self.intern(Node::Const(r.clone()))
    }

    fn tuple(&self, s: &ProbStructure, t: &Tuple) -> u32 {
        match s.tuple_index(t) {
            Some(_) => self.intern(Node::Tuple(t.clone())),
            None => self.constant(&BigRational::zero()),
        }
    }

    fn add(&self, a: &u32, b: &u32) -> u32 {
        match (self.as_const(*a), self.as_const(*b)) {
            (Some(x), Some(y)) => self.constant(&(x + y)),
            (Some(x), _) if x.is_zero() => *b,
            (_, Some(y)) if y.is_zero() => *a,
            _ => {
                let (l, r) = if a <= b { (*a, *b) } else { (*b, *a) };
                self.intern(Node::Add(l, r))
            }
        }
    }

    fn mul(&self, a: &u32, b: &u32) -> u32 {
        match (self.as_const(*a), self.as_const(*b)) {
            (Some(x), Some(y)) => self.constant(&(x * y)),
            (Some(x), _) if x.is_zero() => *a,
            (_, Some(y)) if y.is_zero() => *b,
            (Some(x), _) if x.is_one() => *b,
            (_, Some(y)) if y.is_one() => *a,
            _ => {
                let (l, r) = if a <= b { (*a, *b) } else { (*b, *a) };
                self.intern(Node::Mul(l, r))
            }
        }
    }

    fn neg(&self, a: &u32) -> u32 {
        match self.node(*a) {
            Node::Const(c) => self.constant(&-c),
            Node::Neg(inner) => inner,
            _ => self.intern(Node::Neg(*a)),
        }
    }

    fn is_zero(&self, a: &u32) -> bool {
        self.as_const(*a).is_some_and(|c| c.is_zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dag_folds_and_shares() {
        let s = ProbStructure::parse("R\ta\t1/2\nR\tb\t1/3").unwrap();
        let d = Dag::new();
        let ra = d.tuple(&s, &Tuple::new("R", &["a"]));
        let rb = d.tuple(&s, &Tuple::new("R", &["b"]));
        let missing = d.tuple(&s, &Tuple::new("R", &["c"]));
        assert!(d.is_zero(&missing));
        let x = d.mul(&d.one_minus(&ra), &d.one_minus(&rb));
        let y = d.mul(&d.one_minus(&rb), &d.one_minus(&ra));
        assert_eq!(x, y);
        let f = d.one_minus(&x);
        assert_eq!(d.eval(f, &s), BigRational::new(2.into(), 3.into()));
        assert_eq!(d.add(&f, &d.mul(&missing, &ra)), f);
        let j = d.to_json(f);
        assert_eq!(j["size"].as_u64().unwrap() as usize, d.size(f));
    }

    #[test]
    fn exact_and_float_agree() {
        let s = ProbStructure::parse("R\ta\t1/4").unwrap();
        let t = Tuple::new("R", &["a"]);
        let e = Exact.one_minus(&Exact.tuple(&s, &t));
        let f = Float.one_minus(&Float.tuple(&s, &t));
        assert_eq!(e.to_f64().unwrap(), f);
    }
}
