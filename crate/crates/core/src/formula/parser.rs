use thiserror::Error;

use super::{Builtin, CmpOp, Expr, Formula, NamedConst, Ty};
use crate::schema::{EnvSchema, PredicateKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownPredicate(String),
    UnknownTaskVariable(String),
    TypeMismatch(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{line}:{column}: {}", describe(.kind))]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
}

fn describe(kind: &ParseErrorKind) -> String {
    match kind {
        ParseErrorKind::Syntax(m) => format!("syntax error: {m}"),
        ParseErrorKind::UnknownPredicate(n) => format!("unknown predicate `{n}`"),
        ParseErrorKind::UnknownTaskVariable(n) => format!("unknown task variable `{n}`"),
        ParseErrorKind::TypeMismatch(m) => format!("type mismatch: {m}"),
    }
}

impl ParseError {
    pub fn new(kind: ParseErrorKind, line: usize, column: usize) -> Self {
        Self { kind, line, column }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Not,
    And,
    Or,
    Implies,
    Cmp(CmpOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Not => "`!`".into(),
            Tok::And => "`&&`".into(),
            Tok::Or => "`||`".into(),
            Tok::Implies => "`=>`".into(),
            Tok::Cmp(op) => format!("`{}`", op.symbol()),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let two = |n: char| chars.get(i + 1) == Some(&n);
        let mut advance = 1;
        let tok = match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
                continue;
            }
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            '&' if two('&') => {
                advance = 2;
                Tok::And
            }
            '|' if two('|') => {
                advance = 2;
                Tok::Or
            }
            '=' if two('>') => {
                advance = 2;
                Tok::Implies
            }
            '=' if two('=') => {
                advance = 2;
                Tok::Cmp(CmpOp::Eq)
            }
            '!' if two('=') => {
                advance = 2;
                Tok::Cmp(CmpOp::Ne)
            }
            '!' => Tok::Not,
            '<' if two('=') => {
                advance = 2;
                Tok::Cmp(CmpOp::Le)
            }
            '<' => Tok::Cmp(CmpOp::Lt),
            '>' if two('=') => {
                advance = 2;
                Tok::Cmp(CmpOp::Ge)
            }
            '>' => Tok::Cmp(CmpOp::Gt),
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let s: String = chars[start..j].iter().collect();
                advance = j - i;
                Tok::Int(s.parse().map_err(|_| {
                    ParseError::new(ParseErrorKind::Syntax(format!("integer `{s}` out of range")), l0, c0)
                })?)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                advance = j - i;
                Tok::Ident(chars[i..j].iter().collect())
            }
            other => {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax(format!("unexpected character `{other}`")),
                    l0,
                    c0,
                ))
            }
        };
        out.push(Spanned {
            tok,
            line: l0,
            column: c0,
        });
        i += advance;
        col += advance;
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    schema: &'a EnvSchema,
    task_vars: &'a [&'a str],
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, kind: ParseErrorKind) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError::new(kind, t.line, t.column)
    }

    fn err_at(&self, at: &Spanned, kind: ParseErrorKind) -> ParseError {
        ParseError::new(kind, at.line, at.column)
    }

    fn expect(&mut self, want: Tok) -> PResult<Spanned> {
        if *self.peek() == want {
            Ok(self.bump())
        } else {
            Err(self.err_here(ParseErrorKind::Syntax(format!(
                "expected {}, found {}",
                want.describe(),
                self.peek().describe()
            ))))
        }
    }

    fn bool_operand(&self, at: &Spanned, e: Expr, ty: Ty, op: &str) -> PResult<Expr> {
        if ty != Ty::Bool {
            return Err(self.err_at(
                at,
                ParseErrorKind::TypeMismatch(format!("operand of `{op}` must be boolean, found {ty}")),
            ));
        }
        Ok(e)
    }

    fn formula(&mut self) -> PResult<(Expr, Ty)> {
        self.implies()
    }

    fn implies(&mut self) -> PResult<(Expr, Ty)> {
        let start = self.toks[self.pos].clone();
        let (lhs, lty) = self.or()?;
        if *self.peek() == Tok::Implies {
            self.bump();
            let rstart = self.toks[self.pos].clone();
            let (rhs, rty) = self.implies()?;
            let lhs = self.bool_operand(&start, lhs, lty, "=>")?;
            let rhs = self.bool_operand(&rstart, rhs, rty, "=>")?;
            return Ok((Expr::Implies(Box::new(lhs), Box::new(rhs)), Ty::Bool));
        }
        Ok((lhs, lty))
    }

    fn or(&mut self) -> PResult<(Expr, Ty)> {
        let start = self.toks[self.pos].clone();
        let (mut lhs, mut lty) = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rstart = self.toks[self.pos].clone();
            let (rhs, rty) = self.and()?;
            let l = self.bool_operand(&start, lhs, lty, "||")?;
            let r = self.bool_operand(&rstart, rhs, rty, "||")?;
            lhs = Expr::Or(Box::new(l), Box::new(r));
            lty = Ty::Bool;
        }
        Ok((lhs, lty))
    }

    fn and(&mut self) -> PResult<(Expr, Ty)> {
        let start = self.toks[self.pos].clone();
        let (mut lhs, mut lty) = self.unary()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rstart = self.toks[self.pos].clone();
            let (rhs, rty) = self.unary()?;
            let l = self.bool_operand(&start, lhs, lty, "&&")?;
            let r = self.bool_operand(&rstart, rhs, rty, "&&")?;
            lhs = Expr::And(Box::new(l), Box::new(r));
            lty = Ty::Bool;
        }
        Ok((lhs, lty))
    }

    fn unary(&mut self) -> PResult<(Expr, Ty)> {
        if *self.peek() == Tok::Not {
            self.bump();
            let start = self.toks[self.pos].clone();
            let (e, ty) = self.unary()?;
            let e = self.bool_operand(&start, e, ty, "!")?;
            return Ok((Expr::Not(Box::new(e)), Ty::Bool));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<(Expr, Ty)> {
        let (lhs, lty) = self.operand()?;
        let op = match self.peek() {
            Tok::Cmp(op) => *op,
            _ => return Ok((lhs, lty)),
        };
        let op_tok = self.bump();
        let (rhs, rty) = self.operand()?;
        let ok = match (lty, rty) {
            (Ty::Int, Ty::Int) => true,
            (Ty::Bool, Ty::Bool) | (Ty::Coord, Ty::Coord) => matches!(op, CmpOp::Eq | CmpOp::Ne),
            // A position may be compared with the absent sentinel `-1`.
            (Ty::Coord, Ty::Int) => matches!(op, CmpOp::Eq | CmpOp::Ne) && rhs == Expr::Int(-1),
            (Ty::Int, Ty::Coord) => matches!(op, CmpOp::Eq | CmpOp::Ne) && lhs == Expr::Int(-1),
            _ => false,
        };
        if !ok {
            return Err(self.err_at(
                &op_tok,
                ParseErrorKind::TypeMismatch(format!(
                    "cannot compare {lty} with {rty} using `{}`",
                    op.symbol()
                )),
            ));
        }
        Ok((Expr::Cmp(op, Box::new(lhs), Box::new(rhs)), Ty::Bool))
    }

    fn operand(&mut self) -> PResult<(Expr, Ty)> {
        let t = self.toks[self.pos].clone();
        match &t.tok {
            Tok::LParen => {
                if let (Tok::Int(x), Tok::Comma) = (self.peek_at(1).clone(), self.peek_at(2)) {
                    self.bump();
                    self.bump();
                    self.bump();
                    let y = match self.bump().tok {
                        Tok::Int(y) => y,
                        other => {
                            return Err(self.err_at(
                                &t,
                                ParseErrorKind::Syntax(format!(
                                    "expected integer in position literal, found {}",
                                    other.describe()
                                )),
                            ))
                        }
                    };
                    self.expect(Tok::RParen)?;
                    return Ok((Expr::Coord(x, y), Ty::Coord));
                }
                self.bump();
                let inner = self.formula()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Int(i) => {
                self.bump();
                Ok((Expr::Int(*i), Ty::Int))
            }
            Tok::Ident(name) => {
                let name = name.clone();
                self.bump();
                self.ident(&t, name)
            }
            other => Err(self.err_at(
                &t,
                ParseErrorKind::Syntax(format!("expected an operand, found {}", other.describe())),
            )),
        }
    }

    fn ident(&mut self, at: &Spanned, name: String) -> PResult<(Expr, Ty)> {
        match name.as_str() {
            "true" => return Ok((Expr::Bool(true), Ty::Bool)),
            "false" => return Ok((Expr::Bool(false), Ty::Bool)),
            _ => {}
        }
        if *self.peek() == Tok::LParen {
            let f = Builtin::from_name(&name).ok_or_else(|| {
                self.err_at(at, ParseErrorKind::Syntax(format!("unknown function `{name}`")))
            })?;
            return self.call(at, f);
        }
        if let Some(id) = self.schema.predicate_id(&name) {
            let decl = &self.schema.predicates()[id];
            let ty = match decl.kind {
                PredicateKind::Scalar => Ty::Int,
                PredicateKind::Coord2 => Ty::Coord,
            };
            let index = if *self.peek() == Tok::LBracket {
                if !decl.color_indexed {
                    return Err(self.err_here(ParseErrorKind::TypeMismatch(format!(
                        "predicate `{name}` is not indexed"
                    ))));
                }
                self.bump();
                let idx = self.index_expr()?;
                self.expect(Tok::RBracket)?;
                Some(Box::new(idx))
            } else {
                if decl.color_indexed {
                    return Err(self.err_here(ParseErrorKind::TypeMismatch(format!(
                        "predicate `{name}` requires a color index"
                    ))));
                }
                None
            };
            return Ok((Expr::Pred { name, id, index }, ty));
        }
        if self.task_vars.contains(&name.as_str()) {
            return Ok((Expr::TaskVar(name), Ty::Int));
        }
        if let Some(c) = NamedConst::from_name(&name) {
            return Ok((Expr::Named(c), Ty::Int));
        }
        Err(self.err_at(at, ParseErrorKind::UnknownPredicate(name)))
    }

    fn index_expr(&mut self) -> PResult<Expr> {
        let t = self.bump();
        match t.tok.clone() {
            Tok::Int(i) => Ok(Expr::Int(i)),
            Tok::Ident(name) => {
                if self.task_vars.contains(&name.as_str()) {
                    Ok(Expr::TaskVar(name))
                } else if let Some(c @ NamedConst::Color(_)) = NamedConst::from_name(&name) {
                    Ok(Expr::Named(c))
                } else {
                    Err(self.err_at(&t, ParseErrorKind::UnknownTaskVariable(name)))
                }
            }
            other => Err(self.err_at(
                &t,
                ParseErrorKind::Syntax(format!(
                    "expected a task variable or color as index, found {}",
                    other.describe()
                )),
            )),
        }
    }

    fn call(&mut self, at: &Spanned, f: Builtin) -> PResult<(Expr, Ty)> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        loop {
            let (e, ty) = self.formula()?;
            args.push((e, ty));
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        match f {
            Builtin::Manhattan => {
                if args.len() != 2 || args.iter().any(|(_, t)| *t != Ty::Coord) {
                    return Err(self.err_at(
                        at,
                        ParseErrorKind::TypeMismatch("`manhattan` takes two positions".into()),
                    ));
                }
            }
        }
        Ok((Expr::Call(f, args.into_iter().map(|(e, _)| e).collect()), Ty::Int))
    }
}

/// Parses and type-checks `text` against the schema's predicates and the
/// given task-variable names.
pub fn parse_formula(text: &str, schema: &EnvSchema, task_vars: &[&str]) -> Result<Formula, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        schema,
        task_vars,
    };
    if *p.peek() == Tok::Eof {
        return Err(p.err_here(ParseErrorKind::Syntax("empty formula".into())));
    }
    let start = p.toks[0].clone();
    let (expr, ty) = p.formula()?;
    if *p.peek() != Tok::Eof {
        return Err(p.err_here(ParseErrorKind::Syntax(format!(
            "unexpected {} after formula",
            p.peek().describe()
        ))));
    }
    if ty != Ty::Bool {
        return Err(p.err_at(
            &start,
            ParseErrorKind::TypeMismatch(format!("a formula must be boolean, found {ty}")),
        ));
    }
    Ok(Formula { expr })
}
