//! Truncated second-order Taylor carriers and the tree evaluator.

use super::{BinOp, Func, Node};
use crate::error::{Error, Result};

/// Value, gradient and row-major Hessian with respect to `n` seeds.
#[derive(Clone, Debug)]
pub(crate) struct Jet {
    pub v: f64,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl Jet {
    pub fn constant(v: f64, n: usize) -> Self {
        Jet { v, g: vec![0.0; n], h: vec![0.0; n * n] }
    }

    pub fn seed(v: f64, idx: usize, n: usize) -> Self {
        let mut j = Jet::constant(v, n);
        j.g[idx] = 1.0;
        j
    }

    fn n(&self) -> usize {
        self.g.len()
    }

    pub fn is_const(&self) -> bool {
        self.g.iter().all(|&x| x == 0.0) && self.h.iter().all(|&x| x == 0.0)
    }

    fn is_finite(&self) -> bool {
        self.v.is_finite() && self.g.iter().all(|x| x.is_finite()) && self.h.iter().all(|x| x.is_finite())
    }

    fn add(mut self, o: &Jet, sign: f64) -> Jet {
        self.v += sign * o.v;
        for (a, b) in self.g.iter_mut().zip(&o.g) {
            *a += sign * b;
        }
        for (a, b) in self.h.iter_mut().zip(&o.h) {
            *a += sign * b;
        }
        self
    }

    fn neg(mut self) -> Jet {
        self.v = -self.v;
        self.g.iter_mut().for_each(|x| *x = -*x);
        self.h.iter_mut().for_each(|x| *x = -*x);
        self
    }

    fn mul(&self, o: &Jet) -> Jet {
        let n = self.n();
        let mut r = Jet::constant(self.v * o.v, n);
        for i in 0..n {
            r.g[i] = self.v * o.g[i] + o.v * self.g[i];
        }
        for i in 0..n {
            for j in i..n {
                let k = i * n + j;
                let val = self.v * o.h[k]
                    + o.v * self.h[k]
                    + self.g[i] * o.g[j]
                    + o.g[i] * self.g[j];
                r.h[k] = val;
                r.h[j * n + i] = val;
            }
        }
        r
    }

    /// Compose with a scalar function given its value and first two
    /// derivatives at `self.v`.
    fn chain(&self, f0: f64, f1: f64, f2: f64) -> Jet {
        let n = self.n();
        if self.is_const() {
            return Jet::constant(f0, n);
        }
        let mut r = Jet::constant(f0, n);
        for i in 0..n {
            r.g[i] = f1 * self.g[i];
        }
        for i in 0..n {
            for j in i..n {
                let k = i * n + j;
                let val = f1 * self.h[k] + f2 * self.g[i] * self.g[j];
                r.h[k] = val;
                r.h[j * n + i] = val;
            }
        }
        r
    }
}

/// Leaf binding for a free variable: its value and optional seed slot.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Leaf {
    pub value: f64,
    pub seed: Option<usize>,
}

pub(crate) struct Evaluator<'a> {
    pub names: &'a [String],
    pub leaves: &'a [Leaf],
    pub nseed: usize,
}

impl Evaluator<'_> {
    fn domain(&self, node: &Node, message: &str) -> Error {
        Error::Domain { subexpr: super::node_to_string(node, self.names), message: message.to_string() }
    }

    fn check(&self, node: &Node, j: Jet) -> Result<Jet> {
        if j.is_finite() {
            Ok(j)
        } else {
            Err(self.domain(node, "non-finite result"))
        }
    }

    pub fn jet(&self, node: &Node) -> Result<Jet> {
        let n = self.nseed;
        let out = match node {
            Node::Num(v) => Jet::constant(*v, n),
            Node::Var(i) => {
                let leaf = self.leaves[*i];
                match leaf.seed {
                    Some(s) => Jet::seed(leaf.value, s, n),
                    None => Jet::constant(leaf.value, n),
                }
            }
            Node::Neg(a) => self.jet(a)?.neg(),
            Node::Bin(op, a, b) => {
                let ja = self.jet(a)?;
                let jb = self.jet(b)?;
                match op {
                    BinOp::Add => ja.add(&jb, 1.0),
                    BinOp::Sub => ja.add(&jb, -1.0),
                    BinOp::Mul => ja.mul(&jb),
                    BinOp::Div => {
                        if jb.v == 0.0 {
                            return Err(self.domain(node, "division by zero"));
                        }
                        let inv = 1.0 / jb.v;
                        let recip = jb.chain(inv, -inv * inv, 2.0 * inv * inv * inv);
                        ja.mul(&recip)
                    }
                    BinOp::Pow => self.pow(node, &ja, &jb)?,
                }
            }
            Node::Call(f, a) => {
                let ja = self.jet(a)?;
                let x = ja.v;
                match f {
                    Func::Sin => ja.chain(x.sin(), x.cos(), -x.sin()),
                    Func::Cos => ja.chain(x.cos(), -x.sin(), -x.cos()),
                    Func::Tan => {
                        let t = x.tan();
                        let s = 1.0 + t * t;
                        ja.chain(t, s, 2.0 * t * s)
                    }
                    Func::Exp => {
                        let e = x.exp();
                        ja.chain(e, e, e)
                    }
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(self.domain(node, "logarithm of non-positive value"));
                        }
                        ja.chain(x.ln(), 1.0 / x, -1.0 / (x * x))
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(self.domain(node, "square root of negative value"));
                        }
                        if x == 0.0 {
                            if !ja.is_const() {
                                return Err(self.domain(node, "square root not differentiable at 0"));
                            }
                            Jet::constant(0.0, n)
                        } else {
                            let s = x.sqrt();
                            ja.chain(s, 0.5 / s, -0.25 / (s * x))
                        }
                    }
                    Func::Abs => {
                        let sign = if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        ja.chain(x.abs(), sign, 0.0)
                    }
                }
            }
        };
        self.check(node, out)
    }

    fn pow(&self, node: &Node, a: &Jet, b: &Jet) -> Result<Jet> {
        let n = self.nseed;
        let x = a.v;
        if b.is_const() {
            let p = b.v;
            if p.fract() == 0.0 && p.abs() < 2.0e9 {
                let k = p as i32;
                if x == 0.0 && k < 0 {
                    return Err(self.domain(node, "division by zero"));
                }
                if k == 0 {
                    return Ok(Jet::constant(1.0, n));
                }
                let f0 = x.powi(k);
                let f1 = f64::from(k) * x.powi(k - 1);
                let f2 = if k == 1 { 0.0 } else { f64::from(k) * f64::from(k - 1) * x.powi(k - 2) };
                return Ok(a.chain(f0, f1, f2));
            }
            if x < 0.0 {
                return Err(self.domain(node, "fractional power of negative value"));
            }
            if a.is_const() {
                return Ok(Jet::constant(x.powf(p), n));
            }
            if x == 0.0 && p < 1.0 {
                return Err(self.domain(node, "power not differentiable at 0"));
            }
            let f0 = x.powf(p);
            let f1 = p * x.powf(p - 1.0);
            let f2 = p * (p - 1.0) * x.powf(p - 2.0);
            return Ok(a.chain(f0, f1, f2));
        }
        if x <= 0.0 {
            return Err(self.domain(node, "variable exponent requires a positive base"));
        }
        let ln_a = a.chain(x.ln(), 1.0 / x, -1.0 / (x * x));
        let prod = b.mul(&ln_a);
        let e = prod.v.exp();
        Ok(prod.chain(e, e, e))
    }

    /// Value-only evaluation with the same domain rules as [`Evaluator::jet`].
    pub fn value(&self, node: &Node) -> Result<f64> {
        let v = match node {
            Node::Num(v) => *v,
            Node::Var(i) => self.leaves[*i].value,
            Node::Neg(a) => -self.value(a)?,
            Node::Bin(op, a, b) => {
                let x = self.value(a)?;
                let y = self.value(b)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(self.domain(node, "division by zero"));
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        if y.fract() == 0.0 && y.abs() < 2.0e9 {
                            if x == 0.0 && y < 0.0 {
                                return Err(self.domain(node, "division by zero"));
                            }
                            x.powi(y as i32)
                        } else {
                            if x < 0.0 {
                                return Err(self.domain(node, "fractional power of negative value"));
                            }
                            x.powf(y)
                        }
                    }
                }
            }
            Node::Call(f, a) => {
                let x = self.value(a)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(self.domain(node, "logarithm of non-positive value"));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(self.domain(node, "square root of negative value"));
                        }
                        x.sqrt()
                    }
                    Func::Abs => x.abs(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.domain(node, "non-finite result"))
        }
    }
}
