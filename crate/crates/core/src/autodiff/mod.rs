//! Taylor-mode (jet) arithmetic and reverse-mode differentiation over jets.

mod jet;
mod tape;

pub use jet::{factorial, Jet, MAX_ORDER};
pub use tape::{Adjoints, NodeId, Tape};

pub(crate) use jet::softplus;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("truncation order {0} out of range 1..={max}", max = MAX_ORDER)]
    OrderOutOfRange(usize),
    #[error("jet orders differ: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("division by a jet with zero constant term")]
    SingularJet,
    #[error("{func} undefined at {value}")]
    Domain { func: &'static str, value: f64 },
    #[error("coefficient {n} requested from a jet of order {order}")]
    CoefficientOutOfRange { n: usize, order: usize },
    #[error("node does not belong to this tape")]
    ForeignNode,
}

/// Binary (or jet-by-scalar) arithmetic operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Elementary functions with Taylor recurrences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JetFn {
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Softplus,
    Sqrt,
    PowInt(i32),
}

pub fn jet_arith(op: ArithOp, a: &Jet, b: &Jet) -> Result<Jet, AdError> {
    match op {
        ArithOp::Add => a.add(b),
        ArithOp::Sub => a.sub(b),
        ArithOp::Mul => a.mul(b),
        ArithOp::Div => a.div(b),
    }
}

pub fn jet_fn(kind: JetFn, a: &Jet) -> Result<Jet, AdError> {
    Ok(match kind {
        JetFn::Exp => a.exp(),
        JetFn::Log => a.ln()?,
        JetFn::Sin => a.sin(),
        JetFn::Cos => a.cos(),
        JetFn::Tanh => a.tanh(),
        JetFn::Softplus => a.softplus(),
        JetFn::Sqrt => a.sqrt()?,
        JetFn::PowInt(n) => a.powi(n)?,
    })
}

/// Value of `kind(a)` together with the jet of `kind'(a)`, the local
/// linearization used by the reverse sweep.
pub(crate) fn jet_fn_with_derivative(kind: JetFn, a: &Jet) -> Result<(Jet, Jet), AdError> {
    let order = a.order();
    Ok(match kind {
        JetFn::Exp => {
            let v = a.exp();
            (v, v)
        }
        JetFn::Log => (a.ln()?, a.recip()?),
        JetFn::Sin => {
            let (s, c) = a.sin_cos();
            (s, c)
        }
        JetFn::Cos => {
            let (s, c) = a.sin_cos();
            (c, s.neg())
        }
        JetFn::Tanh => {
            let v = a.tanh();
            let d = Jet::constant(1.0, order)?.sub(&v.mul(&v)?)?;
            (v, d)
        }
        JetFn::Softplus => (a.softplus(), a.sigmoid()),
        JetFn::Sqrt => {
            let v = a.sqrt()?;
            let d = v.recip()?.scale(0.5);
            (v, d)
        }
        JetFn::PowInt(n) => {
            let v = a.powi(n)?;
            let d = if n == 0 {
                Jet::zero(order)?
            } else {
                a.powi(n - 1)?.scale(n as f64)
            };
            (v, d)
        }
    })
}
