//! Quantifier-free first-order formulas over environment predicates and task
//! variables.
//!
//! Formulas are written in a small textual language (see `docs/formula-dsl.md`)
//! and evaluated against a [`Valuation`] of the environment state together
//! with the [`TaskBinding`] of the current task. Evaluation is integer-only and
//! total: missing objects carry the sentinel `-1` (scalars) or `(-1, -1)`
//! (positions).

mod parser;

use std::fmt;

use crate::schema::{Color, EnvSchema};

pub use parser::{parse_formula, ParseError, ParseErrorKind};

/// Sentinel value for missing or occluded objects.
pub const ABSENT: i64 = -1;

/// Door state encoding shared by the environments and the formula language.
pub const DOOR_OPEN: i64 = 0;
pub const DOOR_CLOSED: i64 = 1;
pub const DOOR_LOCKED: i64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn apply<T: Ord>(self, a: T, b: T) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Builtin {
    /// `manhattan(p, q)`: L1 distance between two positions.
    Manhattan,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::Manhattan => "manhattan",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        match name {
            "manhattan" => Some(Builtin::Manhattan),
            _ => None,
        }
    }
}

/// Symbolic integer constants of the language.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NamedConst {
    Open,
    Closed,
    Locked,
    Color(Color),
}

impl NamedConst {
    pub fn value(self) -> i64 {
        match self {
            NamedConst::Open => DOOR_OPEN,
            NamedConst::Closed => DOOR_CLOSED,
            NamedConst::Locked => DOOR_LOCKED,
            NamedConst::Color(c) => c.index() as i64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NamedConst::Open => "OPEN",
            NamedConst::Closed => "CLOSED",
            NamedConst::Locked => "LOCKED",
            NamedConst::Color(c) => c.name(),
        }
    }

    pub fn from_name(name: &str) -> Option<NamedConst> {
        match name {
            "OPEN" => Some(NamedConst::Open),
            "CLOSED" => Some(NamedConst::Closed),
            "LOCKED" => Some(NamedConst::Locked),
            _ => Color::from_name(name).map(NamedConst::Color),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Bool(bool),
    Int(i64),
    Named(NamedConst),
    Coord(i64, i64),
    /// Predicate reference; `id` indexes the schema the formula was parsed against.
    Pred {
        name: String,
        id: usize,
        index: Option<Box<Expr>>,
    },
    TaskVar(String),
    Call(Builtin, Vec<Expr>),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
}

/// Static type of an expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ty {
    Bool,
    Int,
    Coord,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::Bool => "boolean",
            Ty::Int => "integer",
            Ty::Coord => "position",
        })
    }
}

/// Runtime value produced while evaluating a formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Coord(i64, i64),
}

impl Value {
    pub const ABSENT_COORD: Value = Value::Coord(ABSENT, ABSENT);

    fn as_bool(self) -> bool {
        match self {
            Value::Bool(b) => b,
            // Unreachable for type-checked formulas.
            _ => false,
        }
    }

    fn as_int(self) -> i64 {
        match self {
            Value::Int(i) => i,
            Value::Bool(b) => b as i64,
            Value::Coord(..) => ABSENT,
        }
    }

    fn as_coord(self) -> (i64, i64) {
        match self {
            Value::Coord(x, y) => (x, y),
            Value::Int(i) => (i, i),
            Value::Bool(_) => (ABSENT, ABSENT),
        }
    }
}

/// Source of predicate values for one environment state.
pub trait Valuation {
    /// Value of predicate `id` (schema order), optionally indexed by a color
    /// index. Out-of-domain indices must yield the absent sentinel.
    fn predicate(&self, id: usize, index: Option<i64>) -> Value;
}

/// Values of the task variables of one task.
pub trait TaskBinding {
    fn task_var(&self, name: &str) -> Option<i64>;
}

impl TaskBinding for [(String, i64)] {
    fn task_var(&self, name: &str) -> Option<i64> {
        self.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

impl TaskBinding for Vec<(String, i64)> {
    fn task_var(&self, name: &str) -> Option<i64> {
        self.as_slice().task_var(name)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("task variable `{0}` is not bound by the task")]
    UnboundTaskVar(String),
}

/// A parsed, type-checked boolean formula.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Formula {
    expr: Expr,
}

impl Formula {
    pub const TRUE: Formula = Formula {
        expr: Expr::Bool(true),
    };
    pub const FALSE: Formula = Formula {
        expr: Expr::Bool(false),
    };

    pub fn parse(text: &str, schema: &EnvSchema, task_vars: &[&str]) -> Result<Self, ParseError> {
        parse_formula(text, schema, task_vars)
    }

    /// Wraps an expression after checking that it is boolean and that its
    /// predicate references agree with `schema`.
    pub fn from_expr(expr: Expr, schema: &EnvSchema, task_vars: &[&str]) -> Result<Self, ParseError> {
        // Re-parsing the printed form applies exactly the parser's checks.
        let f = parse_formula(&expr.to_string(), schema, task_vars)?;
        if f.expr != expr {
            return Err(ParseError::new(
                ParseErrorKind::TypeMismatch("expression does not match its printed form".into()),
                1,
                1,
            ));
        }
        Ok(f)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn is_const(&self) -> Option<bool> {
        match self.expr {
            Expr::Bool(b) => Some(b),
            _ => None,
        }
    }

    /// Evaluates the formula; fails only if a task variable is unbound.
    pub fn eval<V, T>(&self, state: &V, task: &T) -> Result<bool, EvalError>
    where
        V: Valuation + ?Sized,
        T: TaskBinding + ?Sized,
    {
        eval_expr(&self.expr, state, task).map(Value::as_bool)
    }

    /// True when every predicate reference resolves to the same name in `schema`.
    pub fn agrees_with(&self, schema: &EnvSchema) -> bool {
        fn walk(e: &Expr, schema: &EnvSchema) -> bool {
            match e {
                Expr::Pred { name, id, index } => {
                    schema.predicates().get(*id).is_some_and(|d| d.name == *name)
                        && index.as_deref().is_none_or(|i| walk(i, schema))
                }
                Expr::Call(_, args) => args.iter().all(|a| walk(a, schema)),
                Expr::Not(a) => walk(a, schema),
                Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) | Expr::Cmp(_, a, b) => {
                    walk(a, schema) && walk(b, schema)
                }
                _ => true,
            }
        }
        walk(&self.expr, schema)
    }

    /// Task variables referenced anywhere in the formula.
    pub fn task_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        collect_vars(&self.expr, &mut out);
        out
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

fn collect_vars(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::TaskVar(v) => {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        Expr::Pred { index: Some(i), .. } => collect_vars(i, out),
        Expr::Call(_, args) => args.iter().for_each(|a| collect_vars(a, out)),
        Expr::Not(a) => collect_vars(a, out),
        Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) | Expr::Cmp(_, a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
        _ => {}
    }
}

fn eval_expr<V, T>(e: &Expr, s: &V, m: &T) -> Result<Value, EvalError>
where
    V: Valuation + ?Sized,
    T: TaskBinding + ?Sized,
{
    Ok(match e {
        Expr::Bool(b) => Value::Bool(*b),
        Expr::Int(i) => Value::Int(*i),
        Expr::Named(c) => Value::Int(c.value()),
        Expr::Coord(x, y) => Value::Coord(*x, *y),
        Expr::Pred { id, index, .. } => {
            let idx = match index {
                Some(i) => Some(eval_expr(i, s, m)?.as_int()),
                None => None,
            };
            s.predicate(*id, idx)
        }
        Expr::TaskVar(name) => Value::Int(
            m.task_var(name)
                .ok_or_else(|| EvalError::UnboundTaskVar(name.clone()))?,
        ),
        Expr::Call(Builtin::Manhattan, args) => {
            let (ax, ay) = eval_expr(&args[0], s, m)?.as_coord();
            let (bx, by) = eval_expr(&args[1], s, m)?.as_coord();
            Value::Int((ax - bx).abs() + (ay - by).abs())
        }
        Expr::Not(a) => Value::Bool(!eval_expr(a, s, m)?.as_bool()),
        Expr::And(a, b) => Value::Bool(eval_expr(a, s, m)?.as_bool() && eval_expr(b, s, m)?.as_bool()),
        Expr::Or(a, b) => Value::Bool(eval_expr(a, s, m)?.as_bool() || eval_expr(b, s, m)?.as_bool()),
        Expr::Implies(a, b) => {
            Value::Bool(!eval_expr(a, s, m)?.as_bool() || eval_expr(b, s, m)?.as_bool())
        }
        Expr::Cmp(op, a, b) => {
            let va = eval_expr(a, s, m)?;
            let vb = eval_expr(b, s, m)?;
            Value::Bool(match (va, vb) {
                (Value::Int(x), Value::Int(y)) => op.apply(x, y),
                (Value::Bool(x), Value::Bool(y)) => op.apply(x, y),
                // Position compared with the scalar sentinel, or two positions.
                (a, b) => op.apply(a.as_coord(), b.as_coord()),
            })
        }
    })
}

/// Binding strength used by the printer; larger binds tighter.
fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Implies(..) => 1,
        Expr::Or(..) => 2,
        Expr::And(..) => 3,
        Expr::Not(..) => 4,
        Expr::Cmp(..) => 5,
        _ => 6,
    }
}

struct Paren<'a>(&'a Expr, bool);

impl fmt::Display for Paren<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Int(i) => write!(f, "{i}"),
            Expr::Named(c) => f.write_str(c.name()),
            Expr::Coord(x, y) => write!(f, "({x}, {y})"),
            Expr::Pred { name, index, .. } => match index {
                Some(i) => write!(f, "{name}[{i}]"),
                None => f.write_str(name),
            },
            Expr::TaskVar(v) => f.write_str(v),
            Expr::Call(b, args) => {
                write!(f, "{}(", b.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Not(a) => write!(f, "!{}", Paren(a, precedence(a) < 6)),
            // `&&` and `||` associate to the left, `=>` to the right.
            Expr::And(a, b) => write!(
                f,
                "{} && {}",
                Paren(a, precedence(a) < 3),
                Paren(b, precedence(b) <= 3)
            ),
            Expr::Or(a, b) => write!(
                f,
                "{} || {}",
                Paren(a, precedence(a) < 2),
                Paren(b, precedence(b) <= 2)
            ),
            Expr::Implies(a, b) => write!(
                f,
                "{} => {}",
                Paren(a, precedence(a) <= 1),
                Paren(b, precedence(b) < 1)
            ),
            Expr::Cmp(op, a, b) => write!(
                f,
                "{} {} {}",
                Paren(a, precedence(a) < 6),
                op.symbol(),
                Paren(b, precedence(b) < 6)
            ),
        }
    }
}

#[cfg(test)]
mod tests;
