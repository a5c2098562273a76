//! Append-only tape of jet-valued operations with a reverse sweep.
//!
//! Every recorded node is locally linear in its operands' jets:
//! `delta_out = sum_i L_i * delta_in_i` (truncated products), where the
//! partial jets `L_i` are stored with the node. The reverse sweep therefore
//! carries one adjoint per Taylor coefficient and applies the transpose of
//! truncated multiplication at every node.
//!
//! Parameters enter as constant jets, so the gradient of an output
//! coefficient with respect to a parameter is channel 0 of that parameter's
//! adjoint.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{jet_fn_with_derivative, AdError, Jet, JetFn, MAX_ORDER};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Input,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Unary(usize, JetFn),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Jet,
    partials: Vec<(usize, Jet)>,
}

/// Single-writer recording of one jet-valued forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    order: usize,
    nodes: Vec<Node>,
    inputs: Vec<usize>,
}

/// Per-node adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Adjoints {
    tape: u64,
    order: usize,
    adj: Vec<[f64; MAX_ORDER + 1]>,
}

impl Adjoints {
    /// Adjoint channel for every Taylor coefficient of `node`.
    pub fn of(&self, node: NodeId) -> Result<&[f64], AdError> {
        if node.tape != self.tape || node.index >= self.adj.len() {
            return Err(AdError::ForeignNode);
        }
        Ok(&self.adj[node.index][..=self.order])
    }

    /// Derivative with respect to a constant input (its coefficient 0).
    pub fn wrt_value(&self, node: NodeId) -> Result<f64, AdError> {
        Ok(self.of(node)?[0])
    }
}

impl Tape {
    pub fn new(order: usize) -> Result<Self, AdError> {
        Jet::zero(order)?;
        Ok(Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            order,
            nodes: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.inputs.iter().map(|&index| NodeId { tape: self.id, index })
    }

    fn id_of(&self, index: usize) -> NodeId {
        NodeId { tape: self.id, index }
    }

    fn check(&self, n: NodeId) -> Result<usize, AdError> {
        if n.tape == self.id && n.index < self.nodes.len() {
            Ok(n.index)
        } else {
            Err(AdError::ForeignNode)
        }
    }

    pub fn value(&self, n: NodeId) -> Result<&Jet, AdError> {
        let i = self.check(n)?;
        Ok(&self.nodes[i].value)
    }

    fn push(&mut self, op: Op, value: Jet, partials: Vec<(usize, Jet)>) -> NodeId {
        self.nodes.push(Node { op, value, partials });
        self.id_of(self.nodes.len() - 1)
    }

    /// Independent variable holding an arbitrary jet.
    pub fn input(&mut self, value: Jet) -> Result<NodeId, AdError> {
        if value.order() != self.order {
            return Err(AdError::OrderMismatch(value.order(), self.order));
        }
        let id = self.push(Op::Input, value, Vec::new());
        self.inputs.push(id.index);
        Ok(id)
    }

    /// Independent scalar (a parameter): constant jet `[value, 0, ...]`.
    pub fn param(&mut self, value: f64) -> Result<NodeId, AdError> {
        self.input(Jet::constant(value, self.order)?)
    }

    /// Independent coordinate lifted as `value + tangent t`.
    pub fn lifted(&mut self, value: f64, tangent: f64) -> Result<NodeId, AdError> {
        self.input(Jet::lift(value, tangent, self.order)?)
    }

    fn one(&self) -> Jet {
        Jet::constant(1.0, self.order).expect("order validated at construction")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[ia].value.add(&self.nodes[ib].value)?;
        let one = self.one();
        Ok(self.push(Op::Add(ia, ib), v, vec![(ia, one), (ib, one)]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let v = self.nodes[ia].value.sub(&self.nodes[ib].value)?;
        let one = self.one();
        Ok(self.push(Op::Sub(ia, ib), v, vec![(ia, one), (ib, one.neg())]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (self.nodes[ia].value, self.nodes[ib].value);
        let v = va.mul(&vb)?;
        Ok(self.push(Op::Mul(ia, ib), v, vec![(ia, vb), (ib, va)]))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (self.nodes[ia].value, self.nodes[ib].value);
        let v = va.div(&vb)?;
        let rb = vb.recip()?;
        let db = v.mul(&rb)?.neg();
        Ok(self.push(Op::Div(ia, ib), v, vec![(ia, rb), (ib, db)]))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, AdError> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.neg();
        let m = self.one().neg();
        Ok(self.push(Op::Neg(ia), v, vec![(ia, m)]))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId, AdError> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.scale(s);
        let l = self.one().scale(s);
        Ok(self.push(Op::Scale(ia, s), v, vec![(ia, l)]))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> Result<NodeId, AdError> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.add_scalar(s);
        let one = self.one();
        Ok(self.push(Op::AddScalar(ia, s), v, vec![(ia, one)]))
    }

    pub fn apply(&mut self, kind: JetFn, a: NodeId) -> Result<NodeId, AdError> {
        let ia = self.check(a)?;
        let (v, d) = jet_fn_with_derivative(kind, &self.nodes[ia].value)?;
        Ok(self.push(Op::Unary(ia, kind), v, vec![(ia, d)]))
    }

    /// Sum of several nodes (left fold of [`Tape::add`]).
    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId, AdError> {
        let (first, rest) = terms.split_first().ok_or(AdError::ForeignNode)?;
        let mut acc = *first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from `output` seeded with `seed` (one weight per
    /// Taylor coefficient of the output).
    pub fn backward(&self, output: NodeId, seed: &[f64]) -> Result<Adjoints, AdError> {
        let out = self.check(output)?;
        if seed.len() != self.order + 1 {
            return Err(AdError::OrderMismatch(seed.len().saturating_sub(1), self.order));
        }
        let mut adj = vec![[0.0; MAX_ORDER + 1]; out + 1];
        adj[out][..seed.len()].copy_from_slice(seed);
        for i in (0..=out).rev() {
            let a = adj[i];
            if a.iter().all(|&x| x == 0.0) {
                continue;
            }
            for (operand, partial) in &self.nodes[i].partials {
                partial.transpose_mul(&a, &mut adj[*operand]);
            }
        }
        adj.resize(self.nodes.len(), [0.0; MAX_ORDER + 1]);
        Ok(Adjoints { tape: self.id, order: self.order, adj })
    }

    /// Gradient of `coeffs[n]` of `output` with respect to the constant
    /// inputs `wrt`.
    pub fn grad_of_coefficient(
        &self,
        output: NodeId,
        n: usize,
        wrt: &[NodeId],
    ) -> Result<Vec<f64>, AdError> {
        if n > self.order {
            return Err(AdError::CoefficientOutOfRange { n, order: self.order });
        }
        let mut seed = vec![0.0; self.order + 1];
        seed[n] = 1.0;
        let adj = self.backward(output, &seed)?;
        wrt.iter().map(|&w| adj.wrt_value(w)).collect()
    }

    /// Re-executes the recorded operations from the stored input values.
    pub fn replay(&self) -> Result<Vec<Jet>, AdError> {
        self.replay_with(&[])
    }

    /// Re-executes the tape with some inputs replaced.
    pub fn replay_with(&self, overrides: &[(NodeId, Jet)]) -> Result<Vec<Jet>, AdError> {
        let mut replaced: Vec<Option<Jet>> = vec![None; self.nodes.len()];
        for (id, jet) in overrides {
            let i = self.check(*id)?;
            if self.nodes[i].op != Op::Input {
                return Err(AdError::ForeignNode);
            }
            replaced[i] = Some(*jet);
        }
        let mut vals: Vec<Jet> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match node.op {
                Op::Input => replaced[i].unwrap_or(node.value),
                Op::Add(a, b) => vals[a].add(&vals[b])?,
                Op::Sub(a, b) => vals[a].sub(&vals[b])?,
                Op::Mul(a, b) => vals[a].mul(&vals[b])?,
                Op::Div(a, b) => vals[a].div(&vals[b])?,
                Op::Neg(a) => vals[a].neg(),
                Op::Scale(a, s) => vals[a].scale(s),
                Op::AddScalar(a, s) => vals[a].add_scalar(s),
                Op::Unary(a, kind) => super::jet_fn(kind, &vals[a])?,
            };
            vals.push(v);
        }
        Ok(vals)
    }
}
