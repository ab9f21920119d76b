//! Scalar expressions over named variables with exact first and second
//! derivatives by forward-mode automatic differentiation.
//!
//! Expressions are parsed from text (`"0.5*y1^2 - cos(x1)"`), are immutable
//! once built and cheap to clone. Evaluation either goes through an
//! [`EvalContext`] (name-based, convenient) or through a [`BoundExpr`], which
//! resolves every free variable once against a [`VarSpace`] and is what the
//! solvers use in their inner loops.

mod jet;
mod parse;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use jet::{Evaluator, Leaf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Node {
    Num(f64),
    /// Index into the owning expression's `free_vars`.
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

fn write_node(node: &Node, names: &[String], out: &mut String) {
    use std::fmt::Write;
    match node {
        Node::Num(v) => {
            if v.is_sign_negative() {
                let _ = write!(out, "({v:?})");
            } else {
                let _ = write!(out, "{v:?}");
            }
        }
        Node::Var(i) => out.push_str(&names[*i]),
        Node::Neg(a) => {
            out.push_str("(-");
            write_node(a, names, out);
            out.push(')');
        }
        Node::Bin(op, a, b) => {
            out.push('(');
            write_node(a, names, out);
            out.push(op.symbol());
            write_node(b, names, out);
            out.push(')');
        }
        Node::Call(f, a) => {
            out.push_str(f.name());
            out.push('(');
            write_node(a, names, out);
            out.push(')');
        }
    }
}

pub(crate) fn node_to_string(node: &Node, names: &[String]) -> String {
    let mut s = String::new();
    write_node(node, names, &mut s);
    s
}

/// A parsed scalar expression.
///
/// `free_vars` lists every identifier in order of first appearance, each
/// exactly once.
#[derive(Clone, Debug)]
pub struct Expr {
    root: Arc<Node>,
    free_vars: Arc<[String]>,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesised form; parsing it back yields an equivalent
    /// expression.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&node_to_string(&self.root, &self.free_vars))
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

/// Re-interns variables while combining trees from different expressions.
struct Builder {
    names: Vec<String>,
}

impl Builder {
    fn new() -> Self {
        Builder { names: Vec::new() }
    }

    fn intern(&mut self, name: &str) -> usize {
        match self.names.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                self.names.push(name.to_string());
                self.names.len() - 1
            }
        }
    }

    fn import(&mut self, node: &Node, names: &[String], subs: &HashMap<&str, &Expr>) -> Node {
        match node {
            Node::Num(v) => Node::Num(*v),
            Node::Var(i) => match subs.get(names[*i].as_str()) {
                Some(rep) => self.import(&rep.root, &rep.free_vars, &HashMap::new()),
                None => Node::Var(self.intern(&names[*i])),
            },
            Node::Neg(a) => Node::Neg(Box::new(self.import(a, names, subs))),
            Node::Bin(op, a, b) => Node::Bin(
                *op,
                Box::new(self.import(a, names, subs)),
                Box::new(self.import(b, names, subs)),
            ),
            Node::Call(f, a) => Node::Call(*f, Box::new(self.import(a, names, subs))),
        }
    }

    fn finish(self, root: Node) -> Expr {
        Expr { root: Arc::new(root), free_vars: self.names.into() }
    }
}

impl Expr {
    /// Parse an expression.
    ///
    /// ```
    /// use algebroid_mech::Expr;
    /// let e = Expr::parse("y1*y1/2").unwrap();
    /// assert_eq!(e.free_vars(), ["y1".to_string()]);
    /// ```
    pub fn parse(source: &str) -> Result<Expr> {
        let mut p = parse::Parser::new(source);
        let root = p.parse_all()?;
        Ok(Expr { root: Arc::new(root), free_vars: p.names.into() })
    }

    pub fn constant(v: f64) -> Expr {
        Expr { root: Arc::new(Node::Num(v)), free_vars: Arc::from(Vec::<String>::new()) }
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn var(name: &str) -> Expr {
        Expr { root: Arc::new(Node::Var(0)), free_vars: Arc::from(vec![name.to_string()]) }
    }

    pub fn free_vars(&self) -> &[String] {
        &self.free_vars
    }

    /// `Some(v)` when the expression is a bare numeric literal.
    pub fn as_literal(&self) -> Option<f64> {
        match *self.root {
            Node::Num(v) => Some(v),
            Node::Neg(ref a) => match **a {
                Node::Num(v) => Some(-v),
                _ => None,
            },
            _ => None,
        }
    }

    /// True when the expression is literally the number zero.
    pub fn is_zero(&self) -> bool {
        self.as_literal() == Some(0.0)
    }

    fn binary(op: BinOp, a: &Expr, b: &Expr) -> Expr {
        let mut bld = Builder::new();
        let none = HashMap::new();
        let l = bld.import(&a.root, &a.free_vars, &none);
        let r = bld.import(&b.root, &b.free_vars, &none);
        bld.finish(Node::Bin(op, Box::new(l), Box::new(r)))
    }

    pub fn add(&self, other: &Expr) -> Expr {
        match (self.as_literal(), other.as_literal()) {
            (Some(0.0), _) => other.clone(),
            (_, Some(0.0)) => self.clone(),
            (Some(a), Some(b)) => Expr::constant(a + b),
            _ => Expr::binary(BinOp::Add, self, other),
        }
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        match (self.as_literal(), other.as_literal()) {
            (_, Some(0.0)) => self.clone(),
            (Some(0.0), _) => other.neg(),
            (Some(a), Some(b)) => Expr::constant(a - b),
            _ => Expr::binary(BinOp::Sub, self, other),
        }
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        match (self.as_literal(), other.as_literal()) {
            (Some(a), _) if a == 0.0 => Expr::zero(),
            (_, Some(b)) if b == 0.0 => Expr::zero(),
            (Some(a), _) if a == 1.0 => other.clone(),
            (_, Some(b)) if b == 1.0 => self.clone(),
            (Some(a), Some(b)) => Expr::constant(a * b),
            _ => Expr::binary(BinOp::Mul, self, other),
        }
    }

    pub fn div(&self, other: &Expr) -> Expr {
        Expr::binary(BinOp::Div, self, other)
    }

    pub fn neg(&self) -> Expr {
        if let Some(v) = self.as_literal() {
            return Expr::constant(-v);
        }
        Expr { root: Arc::new(Node::Neg(Box::new((*self.root).clone()))), free_vars: self.free_vars.clone() }
    }

    pub fn scale(&self, k: f64) -> Expr {
        Expr::constant(k).mul(self)
    }

    /// `Σ k_i e_i`, skipping zero coefficients and zero literals.
    pub fn scaled_sum(terms: &[(f64, &Expr)]) -> Expr {
        let mut acc = Expr::zero();
        for (k, e) in terms {
            if *k == 0.0 || e.is_zero() {
                continue;
            }
            acc = acc.add(&e.scale(*k));
        }
        acc
    }

    /// Replace variables by expressions.
    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Expr {
        let subs: HashMap<&str, &Expr> = map.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let mut bld = Builder::new();
        let root = bld.import(&self.root, &self.free_vars, &subs);
        bld.finish(root)
    }

    /// Replace variables by fixed values.
    pub fn substitute_values(&self, values: &BTreeMap<String, f64>) -> Expr {
        let map: HashMap<String, Expr> =
            values.iter().filter(|(k, _)| self.free_vars.contains(k)).map(|(k, v)| (k.clone(), Expr::constant(*v))).collect();
        if map.is_empty() {
            return self.clone();
        }
        self.substitute(&map)
    }

    fn leaves(&self, ctx: &EvalContext) -> Result<Vec<Leaf>> {
        self.free_vars
            .iter()
            .map(|name| {
                let value = *ctx.bindings.get(name).ok_or_else(|| Error::UnboundVariable(name.clone()))?;
                let seed = ctx.seed_vars.iter().position(|s| s == name);
                Ok(Leaf { value, seed })
            })
            .collect()
    }

    /// Pointwise value.
    pub fn eval(&self, ctx: &EvalContext) -> Result<f64> {
        let leaves = self.leaves(ctx)?;
        Evaluator { names: &self.free_vars, leaves: &leaves, nseed: 0 }.value(&self.root)
    }

    /// Value, gradient and Hessian with respect to `ctx.seed_vars`.
    pub fn eval_jet(&self, ctx: &EvalContext) -> Result<SecondOrderJet> {
        for s in &ctx.seed_vars {
            if !ctx.bindings.contains_key(s) {
                return Err(Error::UnboundVariable(s.clone()));
            }
        }
        let leaves = self.leaves(ctx)?;
        let n = ctx.seed_vars.len();
        let j = Evaluator { names: &self.free_vars, leaves: &leaves, nseed: n }.jet(&self.root)?;
        Ok(SecondOrderJet::from_parts(j.v, j.g, j.h))
    }

    /// Resolve free variables against a coordinate space; names not in the
    /// space are looked up in `params` and frozen as constants.
    pub fn bind(&self, space: &VarSpace, params: &BTreeMap<String, f64>) -> Result<BoundExpr> {
        let slots = self
            .free_vars
            .iter()
            .map(|name| {
                if let Some(&i) = space.index.get(name) {
                    Ok(Slot::Coord(i))
                } else if let Some(&v) = params.get(name) {
                    Ok(Slot::Const(v))
                } else {
                    Err(Error::UnboundVariable(name.clone()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundExpr { expr: self.clone(), slots })
    }
}

/// Variable bindings plus the variables to differentiate against.
#[derive(Clone, Debug, Default)]
pub struct EvalContext {
    pub bindings: BTreeMap<String, f64>,
    pub seed_vars: Vec<String>,
}

impl EvalContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, name: &str, value: f64) -> Self {
        self.bindings.insert(name.to_string(), value);
        self
    }

    pub fn seed(mut self, name: &str) -> Self {
        self.seed_vars.push(name.to_string());
        self
    }

    pub fn with_seeds(mut self, names: &[&str]) -> Self {
        self.seed_vars = names.iter().map(|s| s.to_string()).collect();
        self
    }
}

/// Value, gradient and (symmetric) Hessian of an expression at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrderJet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

impl SecondOrderJet {
    fn from_parts(value: f64, grad: Vec<f64>, hess: Vec<f64>) -> Self {
        let n = grad.len();
        let hess = DMatrix::from_row_slice(n, n, &hess);
        debug_assert!((0..n).all(|i| (0..n).all(|j| hess[(i, j)] == hess[(j, i)])));
        SecondOrderJet { value, grad, hess }
    }
}

/// Ordered list of coordinate names, e.g. `x1..xn, y1..ym, t`.
#[derive(Clone, Debug)]
pub struct VarSpace {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl VarSpace {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        VarSpace { names, index }
    }

    /// `x1..xn, y1..ym` followed by `extra` names.
    pub fn coordinates(n: usize, m: usize, extra: &[&str]) -> Self {
        let mut names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        names.extend((1..=m).map(|i| format!("y{i}")));
        names.extend(extra.iter().map(|s| s.to_string()));
        Self::new(&names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slot {
    Coord(usize),
    Const(f64),
}

/// An expression whose free variables have been resolved to coordinate
/// slots (or constants).
#[derive(Clone, Debug)]
pub struct BoundExpr {
    expr: Expr,
    slots: Vec<Slot>,
}

impl BoundExpr {
    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// True when no coordinate enters the expression.
    pub fn is_constant(&self) -> bool {
        self.slots.iter().all(|s| matches!(s, Slot::Const(_)))
    }

    /// True when coordinate `c` appears in the expression.
    pub fn depends_on(&self, c: usize) -> bool {
        self.slots.contains(&Slot::Coord(c))
    }

    fn leaves(&self, z: &[f64], seeds: &[usize]) -> Vec<Leaf> {
        self.slots
            .iter()
            .map(|s| match *s {
                Slot::Coord(c) => Leaf { value: z[c], seed: seeds.iter().position(|&k| k == c) },
                Slot::Const(v) => Leaf { value: v, seed: None },
            })
            .collect()
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        let leaves = self.leaves(z, &[]);
        Evaluator { names: &self.expr.free_vars, leaves: &leaves, nseed: 0 }.value(&self.expr.root)
    }

    /// Jet with respect to the coordinates listed in `seeds`.
    pub fn jet(&self, z: &[f64], seeds: &[usize]) -> Result<SecondOrderJet> {
        let leaves = self.leaves(z, seeds);
        let j = Evaluator { names: &self.expr.free_vars, leaves: &leaves, nseed: seeds.len() }.jet(&self.expr.root)?;
        Ok(SecondOrderJet::from_parts(j.v, j.g, j.h))
    }

    /// Value and gradient with respect to `seeds`.
    pub fn gradient(&self, z: &[f64], seeds: &[usize]) -> Result<(f64, Vec<f64>)> {
        if self.is_constant() {
            return Ok((self.value(z)?, vec![0.0; seeds.len()]));
        }
        let j = self.jet(z, seeds)?;
        Ok((j.value, j.grad))
    }
}

/// Central finite-difference derivative of order 1 or 2 in `var`
/// (test oracle).
pub fn fd_derivative(e: &Expr, ctx: &EvalContext, var: &str, order: u8, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {h}")));
    }
    let x0 = *ctx.bindings.get(var).ok_or_else(|| Error::UnboundVariable(var.to_string()))?;
    let at = |x: f64| {
        let mut c = ctx.clone();
        c.bindings.insert(var.to_string(), x);
        e.eval(&c)
    };
    match order {
        1 => Ok((at(x0 + h)? - at(x0 - h)?) / (2.0 * h)),
        2 => Ok((at(x0 + h)? - 2.0 * at(x0)? + at(x0 - h)?) / (h * h)),
        _ => Err(Error::InvalidInput(format!("finite-difference order must be 1 or 2, got {order}"))),
    }
}

/// Central finite-difference mixed partial ∂²e/∂a∂b (test oracle).
pub fn fd_mixed(e: &Expr, ctx: &EvalContext, a: &str, b: &str, h: f64) -> Result<f64> {
    if a == b {
        return fd_derivative(e, ctx, a, 2, h);
    }
    let a0 = *ctx.bindings.get(a).ok_or_else(|| Error::UnboundVariable(a.to_string()))?;
    let b0 = *ctx.bindings.get(b).ok_or_else(|| Error::UnboundVariable(b.to_string()))?;
    let at = |da: f64, db: f64| {
        let mut c = ctx.clone();
        c.bindings.insert(a.to_string(), a0 + da);
        c.bindings.insert(b.to_string(), b0 + db);
        e.eval(&c)
    };
    Ok((at(h, h)? - at(h, -h)? - at(-h, h)? + at(-h, -h)?) / (4.0 * h * h))
}

#[cfg(test)]
mod tests;
