//! Truncated univariate Taylor series ("jets").
//!
//! A [`Jet`] of order `K` holds the coefficients `g_0, ..., g_K` of
//! `g(t) = f(x + t u)` expanded at `t = 0`. The n-th directional derivative
//! of `f` along `u` is `n! * g_n`; see [`Jet::derivative`].
//!
//! All elementary functions below use the standard first-order ODE
//! recurrences, e.g. `b = exp(a)` satisfies `b' = a' b`, which gives
//! `k b_k = sum_{j=1..k} j a_j b_{k-j}`.

use super::AdError;

/// Largest supported truncation order.
pub const MAX_ORDER: usize = 8;

/// `n!` for `n <= 170` as `f64`.
pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Truncated Taylor expansion of a scalar along one input direction.
#[derive(Clone, Copy, PartialEq)]
pub struct Jet {
    c: [f64; MAX_ORDER + 1],
    order: usize,
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("Jet").field(&self.coeffs()).finish()
    }
}

fn check_order(order: usize) -> Result<(), AdError> {
    if (1..=MAX_ORDER).contains(&order) {
        Ok(())
    } else {
        Err(AdError::OrderOutOfRange(order))
    }
}

impl Jet {
    /// The zero jet of the given order.
    pub fn zero(order: usize) -> Result<Self, AdError> {
        check_order(order)?;
        Ok(Self { c: [0.0; MAX_ORDER + 1], order })
    }

    /// Lifts `value + tangent * t`.
    pub fn lift(value: f64, tangent: f64, order: usize) -> Result<Self, AdError> {
        let mut j = Self::zero(order)?;
        j.c[0] = value;
        j.c[1] = tangent;
        Ok(j)
    }

    /// A constant (zero tangent).
    pub fn constant(value: f64, order: usize) -> Result<Self, AdError> {
        Self::lift(value, 0.0, order)
    }

    /// Builds a jet from explicit coefficients; the order is `coeffs.len() - 1`.
    pub fn from_coeffs(coeffs: &[f64]) -> Result<Self, AdError> {
        let order = coeffs.len().wrapping_sub(1);
        let mut j = Self::zero(order)?;
        j.c[..coeffs.len()].copy_from_slice(coeffs);
        Ok(j)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c[..=self.order]
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// `n! * coeffs[n]`, the n-th derivative of `g` at `t = 0`.
    pub fn derivative(&self, n: usize) -> Result<f64, AdError> {
        if n > self.order {
            return Err(AdError::CoefficientOutOfRange { n, order: self.order });
        }
        Ok(factorial(n) * self.c[n])
    }

    /// A jet of the same order with the given constant value.
    fn same_order(&self, value: f64) -> Self {
        let mut j = Self { c: [0.0; MAX_ORDER + 1], order: self.order };
        j.c[0] = value;
        j
    }

    fn check_same(&self, other: &Jet) -> Result<(), AdError> {
        if self.order == other.order {
            Ok(())
        } else {
            Err(AdError::OrderMismatch(self.order, other.order))
        }
    }

    pub fn add(&self, other: &Jet) -> Result<Jet, AdError> {
        self.check_same(other)?;
        let mut out = *self;
        for k in 0..=self.order {
            out.c[k] += other.c[k];
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Jet) -> Result<Jet, AdError> {
        self.check_same(other)?;
        let mut out = *self;
        for k in 0..=self.order {
            out.c[k] -= other.c[k];
        }
        Ok(out)
    }

    pub fn neg(&self) -> Jet {
        self.scale(-1.0)
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut out = *self;
        for k in 0..=self.order {
            out.c[k] *= s;
        }
        out
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut out = *self;
        out.c[0] += s;
        out
    }

    /// Truncated Cauchy product.
    pub fn mul(&self, other: &Jet) -> Result<Jet, AdError> {
        self.check_same(other)?;
        let mut out = self.same_order(0.0);
        for k in 0..=self.order {
            out.c[k] = (0..=k).map(|i| self.c[i] * other.c[k - i]).sum();
        }
        Ok(out)
    }

    pub fn div(&self, other: &Jet) -> Result<Jet, AdError> {
        self.check_same(other)?;
        let b0 = other.c[0];
        if b0 == 0.0 {
            return Err(AdError::SingularJet);
        }
        let mut q = self.same_order(0.0);
        for k in 0..=self.order {
            let acc: f64 = (1..=k).map(|j| other.c[j] * q.c[k - j]).sum();
            q.c[k] = (self.c[k] - acc) / b0;
        }
        Ok(q)
    }

    pub fn recip(&self) -> Result<Jet, AdError> {
        self.same_order(1.0).div(self)
    }

    pub fn exp(&self) -> Jet {
        let mut b = self.same_order(self.c[0].exp());
        for k in 1..=self.order {
            let s: f64 = (1..=k).map(|j| j as f64 * self.c[j] * b.c[k - j]).sum();
            b.c[k] = s / k as f64;
        }
        b
    }

    pub fn ln(&self) -> Result<Jet, AdError> {
        let a0 = self.c[0];
        if a0 <= 0.0 {
            return Err(AdError::Domain { func: "log", value: a0 });
        }
        let mut b = self.same_order(a0.ln());
        for k in 1..=self.order {
            let s: f64 = (1..k).map(|j| j as f64 * b.c[j] * self.c[k - j]).sum();
            b.c[k] = (self.c[k] - s / k as f64) / a0;
        }
        Ok(b)
    }

    /// Returns `(sin a, cos a)`, computed with the coupled recurrence.
    pub fn sin_cos(&self) -> (Jet, Jet) {
        let mut s = self.same_order(self.c[0].sin());
        let mut c = self.same_order(self.c[0].cos());
        for k in 1..=self.order {
            let mut ss = 0.0;
            let mut cc = 0.0;
            for j in 1..=k {
                let ja = j as f64 * self.c[j];
                ss += ja * c.c[k - j];
                cc += ja * s.c[k - j];
            }
            s.c[k] = ss / k as f64;
            c.c[k] = -cc / k as f64;
        }
        (s, c)
    }

    pub fn sin(&self) -> Jet {
        self.sin_cos().0
    }

    pub fn cos(&self) -> Jet {
        self.sin_cos().1
    }

    /// `tanh`, via `tanh' = 1 - tanh^2`.
    pub fn tanh(&self) -> Jet {
        let mut b = self.same_order(self.c[0].tanh());
        // d = 1 - b^2, filled lazily: d_m only needs b_0..b_m.
        let mut d = [0.0; MAX_ORDER + 1];
        d[0] = 1.0 - b.c[0] * b.c[0];
        for k in 1..=self.order {
            let s: f64 = (1..=k).map(|j| j as f64 * self.c[j] * d[k - j]).sum();
            b.c[k] = s / k as f64;
            d[k] = -(0..=k).map(|i| b.c[i] * b.c[k - i]).sum::<f64>();
        }
        b
    }

    /// Logistic sigmoid, via `s' = s (1 - s)`.
    pub fn sigmoid(&self) -> Jet {
        let mut s = self.same_order(sigmoid(self.c[0]));
        let mut e = [0.0; MAX_ORDER + 1];
        e[0] = s.c[0] * (1.0 - s.c[0]);
        for k in 1..=self.order {
            let acc: f64 = (1..=k).map(|j| j as f64 * self.c[j] * e[k - j]).sum();
            s.c[k] = acc / k as f64;
            e[k] = s.c[k] - (0..=k).map(|i| s.c[i] * s.c[k - i]).sum::<f64>();
        }
        s
    }

    /// `log(1 + e^a)`, via `softplus' = sigmoid`.
    pub fn softplus(&self) -> Jet {
        let sg = self.sigmoid();
        let mut b = self.same_order(softplus(self.c[0]));
        for k in 1..=self.order {
            let acc: f64 = (1..=k).map(|j| j as f64 * self.c[j] * sg.c[k - j]).sum();
            b.c[k] = acc / k as f64;
        }
        b
    }

    pub fn sqrt(&self) -> Result<Jet, AdError> {
        let a0 = self.c[0];
        if a0 <= 0.0 {
            return Err(AdError::Domain { func: "sqrt", value: a0 });
        }
        let mut b = self.same_order(a0.sqrt());
        for k in 1..=self.order {
            let s: f64 = (1..k).map(|j| b.c[j] * b.c[k - j]).sum();
            b.c[k] = (self.c[k] - s) / (2.0 * b.c[0]);
        }
        Ok(b)
    }

    /// Integer power by repeated squaring; negative exponents go through [`Jet::recip`].
    pub fn powi(&self, n: i32) -> Result<Jet, AdError> {
        let base = if n < 0 { self.recip()? } else { *self };
        let mut e = n.unsigned_abs();
        let mut acc = self.same_order(1.0);
        let mut sq = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&sq)?;
            }
            sq = sq.mul(&sq)?;
            e >>= 1;
        }
        Ok(acc)
    }

    /// Multiplies by the transpose of truncated multiplication by `self`:
    /// `out_j = sum_{k >= j} adj_k * self_{k-j}`. This is the reverse-mode
    /// rule for any node whose linearization is `delta_out = self * delta_in`.
    pub fn transpose_mul(&self, adj: &[f64], out: &mut [f64]) {
        let k_max = self.order;
        for j in 0..=k_max {
            let mut s = 0.0;
            for k in j..=k_max {
                s += adj[k] * self.c[k - j];
            }
            out[j] += s;
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn j(c: &[f64]) -> Jet {
        Jet::from_coeffs(c).unwrap()
    }

    #[test]
    fn lift_and_zero() {
        assert_eq!(Jet::lift(3.0, 1.0, 2).unwrap().coeffs(), &[3.0, 1.0, 0.0]);
        assert_eq!(Jet::lift(0.0, 0.0, 4).unwrap(), Jet::zero(4).unwrap());
        assert!(matches!(Jet::lift(1.0, 1.0, 0), Err(AdError::OrderOutOfRange(0))));
        assert!(matches!(Jet::lift(1.0, 1.0, 9), Err(AdError::OrderOutOfRange(9))));
    }

    #[test]
    fn square_and_geometric_series() {
        let a = j(&[1.0, 1.0, 0.0]);
        assert_eq!(a.mul(&a).unwrap().coeffs(), &[1.0, 2.0, 1.0]);
        let one = j(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let den = j(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(one.div(&den).unwrap().coeffs(), &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn singular_division() {
        let a = j(&[1.0, 0.0]);
        let b = j(&[0.0, 1.0]);
        assert!(matches!(a.div(&b), Err(AdError::SingularJet)));
    }

    #[test]
    fn domain_errors() {
        let neg = j(&[-1.0, 1.0, 0.0]);
        assert!(matches!(neg.ln(), Err(AdError::Domain { func: "log", .. })));
        assert!(matches!(neg.sqrt(), Err(AdError::Domain { func: "sqrt", .. })));
        let zero = j(&[0.0, 1.0, 0.0]);
        assert!(zero.sqrt().is_err());
    }

    #[test]
    fn mismatched_orders() {
        let a = j(&[1.0, 1.0]);
        let b = j(&[1.0, 1.0, 0.0]);
        assert!(matches!(a.mul(&b), Err(AdError::OrderMismatch(1, 2))));
    }

    #[test]
    fn tanh_and_exp_series() {
        let t = Jet::lift(0.0, 1.0, 4).unwrap();
        let th = t.tanh();
        let want = [0.0, 1.0, 0.0, -1.0 / 3.0, 0.0];
        for (g, w) in th.coeffs().iter().zip(want) {
            assert_relative_eq!(*g, w, epsilon = 1e-15);
        }
        let t = Jet::lift(0.0, 1.0, 3).unwrap();
        let e = t.exp();
        let want = [1.0, 1.0, 0.5, 1.0 / 6.0];
        for (g, w) in e.coeffs().iter().zip(want) {
            assert_relative_eq!(*g, w, epsilon = 1e-15);
        }
    }

    #[test]
    fn softplus_matches_log_one_plus_exp() {
        let a = j(&[0.3, 0.7, -0.2, 0.1, 0.05]);
        let direct = a.exp().add_scalar(1.0).ln().unwrap();
        let sp = a.softplus();
        for (x, y) in sp.coeffs().iter().zip(direct.coeffs()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-13);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let a = j(&[2.0, 0.5, -0.3, 0.2, 0.1]);
        let r = a.sqrt().unwrap();
        let back = r.mul(&r).unwrap();
        for (x, y) in back.coeffs().iter().zip(a.coeffs()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-14);
        }
    }

    #[test]
    fn powi_matches_repeated_mul() {
        let a = j(&[1.5, 0.5, -0.3, 0.2, 0.1]);
        let cube = a.mul(&a).unwrap().mul(&a).unwrap();
        let p = a.powi(3).unwrap();
        for (x, y) in p.coeffs().iter().zip(cube.coeffs()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-14);
        }
        let inv2 = a.powi(-2).unwrap().mul(&a.powi(2).unwrap()).unwrap();
        assert_relative_eq!(inv2.coeffs()[0], 1.0, epsilon = 1e-14);
        for c in &inv2.coeffs()[1..] {
            assert!(c.abs() < 1e-13);
        }
        assert_eq!(a.powi(0).unwrap().coeffs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn derivative_applies_factorial() {
        let e = Jet::lift(0.0, 1.0, 5).unwrap().exp();
        for n in 0..=5 {
            assert_relative_eq!(e.derivative(n).unwrap(), 1.0, epsilon = 1e-14);
        }
        assert!(e.derivative(6).is_err());
    }
}
