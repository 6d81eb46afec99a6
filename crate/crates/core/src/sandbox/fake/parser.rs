//! Recursive-descent parser producing the fake worker's statement tree.

use std::sync::Arc;

use super::lexer::{LexError, Tok, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    In,
    NotIn,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FPart {
    Text(String),
    Expr(Expr, Option<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    FStr(Vec<FPart>),
    Name(String),
    List(Vec<Expr>),
    Dict(Vec<(Expr, Expr)>),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Bin(Box<Expr>, BinOp, Box<Expr>),
    Cmp(Box<Expr>, CmpOp, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Call {
        func: Box<Expr>,
        args: Vec<Expr>,
        kwargs: Vec<(String, Expr)>,
    },
    Attr(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Slice(Box<Expr>, Option<Box<Expr>>, Option<Box<Expr>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuncDef {
    pub name: String,
    pub params: Vec<(String, Option<Expr>)>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Expr(Expr),
    Assign(Vec<String>, Expr),
    IndexAssign(Expr, Expr, Expr),
    AugAssign(String, BinOp, Expr),
    Def(Arc<FuncDef>),
    Return(Option<Expr>),
    If(Vec<(Expr, Vec<Stmt>)>, Option<Vec<Stmt>>),
    For(Vec<String>, Expr, Vec<Stmt>),
    With(Expr, Option<String>, Vec<Stmt>),
    While(Expr, Vec<Stmt>),
    Import(Vec<(String, String)>),
    Raise(Option<Expr>),
    Break,
    Continue,
    Pass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub line: usize,
    pub kind: StmtKind,
}

pub type ParseError = LexError;

pub fn parse(mut tokens: Vec<Token>) -> Result<Vec<Stmt>, ParseError> {
    if tokens.last().map(|t| &t.tok) != Some(&Tok::Eof) {
        let line = tokens.last().map_or(1, |t| t.line);
        tokens.push(Token {
            tok: Tok::Eof,
            line,
        });
    }
    let mut p = Parser {
        toks: tokens,
        pos: 0,
    };
    let mut out = Vec::new();
    while !p.at(&Tok::Eof) {
        if p.eat(&Tok::Newline) {
            continue;
        }
        out.push(p.statement()?);
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

const KEYWORDS: &[&str] = &[
    "def", "return", "if", "elif", "else", "for", "while", "in", "not", "and", "or", "import",
    "from", "as", "raise", "pass", "break", "continue", "True", "False", "None", "lambda", "class",
    "with", "try", "except", "finally", "global", "yield",
];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn line(&self) -> usize {
        self.toks[self.pos].line
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        LexError {
            kind: "SyntaxError",
            line: self.line(),
            msg: msg.into(),
        }
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ParseError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{op}'")))
        }
    }

    fn name(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Name(n) if !KEYWORDS.contains(&n.as_str()) => {
                self.advance();
                Ok(n)
            }
            _ => Err(self.error("invalid syntax")),
        }
    }

    fn dotted_name(&mut self) -> Result<String, ParseError> {
        let mut n = self.name()?;
        while self.eat_op(".") {
            n.push('.');
            n.push_str(&self.name()?);
        }
        Ok(n)
    }

    fn end_simple(&mut self) -> Result<(), ParseError> {
        if self.eat(&Tok::Newline) || self.at(&Tok::Eof) || self.at(&Tok::Dedent) {
            Ok(())
        } else {
            Err(self.error("invalid syntax"))
        }
    }

    fn suite(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect_op(":")?;
        if self.eat(&Tok::Newline) {
            if !self.eat(&Tok::Indent) {
                return Err(LexError {
                    kind: "IndentationError",
                    line: self.line(),
                    msg: "expected an indented block".into(),
                });
            }
            let mut body = Vec::new();
            while !self.eat(&Tok::Dedent) && !self.at(&Tok::Eof) {
                if self.eat(&Tok::Newline) {
                    continue;
                }
                body.push(self.statement()?);
            }
            Ok(body)
        } else {
            Ok(vec![self.simple_statement()?])
        }
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let line = self.line();
        if self.eat_kw("def") {
            let name = self.name()?;
            self.expect_op("(")?;
            let mut params = Vec::new();
            while !self.eat_op(")") {
                let p = self.name()?;
                let default = if self.eat_op("=") {
                    Some(self.expr()?)
                } else {
                    None
                };
                params.push((p, default));
                if !self.eat_op(",") {
                    self.expect_op(")")?;
                    break;
                }
            }
            let body = self.suite()?;
            return Ok(Stmt {
                line,
                kind: StmtKind::Def(Arc::new(FuncDef { name, params, body })),
            });
        }
        if self.eat_kw("if") {
            let mut branches = vec![(self.expr()?, self.suite()?)];
            let mut otherwise = None;
            loop {
                if self.eat_kw("elif") {
                    branches.push((self.expr()?, self.suite()?));
                } else if self.eat_kw("else") {
                    otherwise = Some(self.suite()?);
                    break;
                } else {
                    break;
                }
            }
            return Ok(Stmt {
                line,
                kind: StmtKind::If(branches, otherwise),
            });
        }
        if self.eat_kw("for") {
            let mut var = vec![self.name()?];
            while self.eat_op(",") {
                var.push(self.name()?);
            }
            if !self.eat_kw("in") {
                return Err(self.error("expected 'in'"));
            }
            let iter = self.expr()?;
            let body = self.suite()?;
            return Ok(Stmt {
                line,
                kind: StmtKind::For(var, iter, body),
            });
        }
        if self.eat_kw("while") {
            let cond = self.expr()?;
            let body = self.suite()?;
            return Ok(Stmt {
                line,
                kind: StmtKind::While(cond, body),
            });
        }
        if self.eat_kw("with") {
            let ctx = self.expr()?;
            let alias = if self.eat_kw("as") {
                Some(self.name()?)
            } else {
                None
            };
            let body = self.suite()?;
            return Ok(Stmt {
                line,
                kind: StmtKind::With(ctx, alias, body),
            });
        }
        for kw in ["class", "try", "lambda", "global", "yield"] {
            if self.at_kw(kw) {
                return Err(self.error(format!("'{kw}' is not supported by this worker")));
            }
        }
        self.simple_statement()
    }

    fn simple_statement(&mut self) -> Result<Stmt, ParseError> {
        let line = self.line();
        let kind = if self.eat_kw("pass") {
            StmtKind::Pass
        } else if self.eat_kw("break") {
            StmtKind::Break
        } else if self.eat_kw("continue") {
            StmtKind::Continue
        } else if self.eat_kw("return") {
            if matches!(self.peek(), Tok::Newline | Tok::Eof | Tok::Dedent) {
                StmtKind::Return(None)
            } else {
                StmtKind::Return(Some(self.expr()?))
            }
        } else if self.eat_kw("raise") {
            if matches!(self.peek(), Tok::Newline | Tok::Eof | Tok::Dedent) {
                StmtKind::Raise(None)
            } else {
                StmtKind::Raise(Some(self.expr()?))
            }
        } else if self.eat_kw("import") {
            let mut mods = Vec::new();
            loop {
                let m = self.dotted_name()?;
                let alias = if self.eat_kw("as") {
                    self.name()?
                } else {
                    m.split('.').next().unwrap_or_default().to_string()
                };
                mods.push((m, alias));
                if !self.eat_op(",") {
                    break;
                }
            }
            StmtKind::Import(mods)
        } else if self.eat_kw("from") {
            let base = self.dotted_name()?;
            if !self.eat_kw("import") {
                return Err(self.error("expected 'import'"));
            }
            let mut mods = Vec::new();
            loop {
                let n = self.name()?;
                let alias = if self.eat_kw("as") {
                    self.name()?
                } else {
                    n.clone()
                };
                mods.push((format!("{base}.{n}"), alias));
                if !self.eat_op(",") {
                    break;
                }
            }
            StmtKind::Import(mods)
        } else {
            let first = self.expr()?;
            if self.at_op("=") {
                let mut targets = vec![first];
                let mut value = None;
                while self.eat_op("=") {
                    let e = self.expr()?;
                    if self.at_op("=") {
                        targets.push(e);
                    } else {
                        value = Some(e);
                    }
                }
                let value = value.ok_or_else(|| self.error("invalid syntax"))?;
                if let [Expr::Index(obj, idx)] = targets.as_slice() {
                    StmtKind::IndexAssign((**obj).clone(), (**idx).clone(), value)
                } else {
                    let names = targets
                        .into_iter()
                        .map(|t| match t {
                            Expr::Name(n) => Ok(n),
                            _ => Err(self.error("cannot assign to expression")),
                        })
                        .collect::<Result<_, _>>()?;
                    StmtKind::Assign(names, value)
                }
            } else if let Some(op) = self.aug_op() {
                let Expr::Name(target) = first else {
                    return Err(self.error("cannot assign to expression"));
                };
                StmtKind::AugAssign(target, op, self.expr()?)
            } else {
                StmtKind::Expr(first)
            }
        };
        self.end_simple()?;
        Ok(Stmt { line, kind })
    }

    fn aug_op(&mut self) -> Option<BinOp> {
        let op = match self.peek() {
            Tok::Op("+=") => BinOp::Add,
            Tok::Op("-=") => BinOp::Sub,
            Tok::Op("*=") => BinOp::Mul,
            Tok::Op("/=") => BinOp::Div,
            Tok::Op("//=") => BinOp::FloorDiv,
            Tok::Op("%=") => BinOp::Mod,
            Tok::Op("**=") => BinOp::Pow,
            _ => return None,
        };
        self.advance();
        Some(op)
    }

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.and_expr()?;
        while self.eat_kw("or") {
            left = Expr::Or(Box::new(left), Box::new(self.and_expr()?));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.not_expr()?;
        while self.eat_kw("and") {
            left = Expr::And(Box::new(left), Box::new(self.not_expr()?));
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat_kw("not") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let left = self.arith()?;
        let op = match self.peek() {
            Tok::Op("==") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::Ne,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">=") => CmpOp::Ge,
            Tok::Name(n) if n == "in" => CmpOp::In,
            Tok::Name(n) if n == "not" => {
                let next = self.toks.get(self.pos + 1).map(|t| &t.tok);
                if matches!(next, Some(Tok::Name(n)) if n == "in") {
                    self.advance();
                    CmpOp::NotIn
                } else {
                    return Ok(left);
                }
            }
            _ => return Ok(left),
        };
        self.advance();
        let right = self.arith()?;
        Ok(Expr::Cmp(Box::new(left), op, Box::new(right)))
    }

    fn arith(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.term()?;
        loop {
            let op = if self.eat_op("+") {
                BinOp::Add
            } else if self.eat_op("-") {
                BinOp::Sub
            } else {
                return Ok(left);
            };
            left = Expr::Bin(Box::new(left), op, Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.unary()?;
        loop {
            let op = if self.eat_op("*") {
                BinOp::Mul
            } else if self.eat_op("/") {
                BinOp::Div
            } else if self.eat_op("//") {
                BinOp::FloorDiv
            } else if self.eat_op("%") {
                BinOp::Mod
            } else {
                return Ok(left);
            };
            left = Expr::Bin(Box::new(left), op, Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op("+") {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.postfix()?;
        if self.eat_op("**") {
            return Ok(Expr::Bin(
                Box::new(base),
                BinOp::Pow,
                Box::new(self.unary()?),
            ));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.atom()?;
        loop {
            if self.eat_op("(") {
                let mut args = Vec::new();
                let mut kwargs = Vec::new();
                while !self.eat_op(")") {
                    let is_kw = matches!(self.peek(), Tok::Name(_))
                        && matches!(
                            self.toks.get(self.pos + 1).map(|t| &t.tok),
                            Some(Tok::Op("="))
                        );
                    if is_kw {
                        let k = self.name()?;
                        self.expect_op("=")?;
                        kwargs.push((k, self.expr()?));
                    } else {
                        if !kwargs.is_empty() {
                            return Err(self.error("positional argument follows keyword argument"));
                        }
                        args.push(self.expr()?);
                    }
                    if !self.eat_op(",") {
                        self.expect_op(")")?;
                        break;
                    }
                }
                e = Expr::Call {
                    func: Box::new(e),
                    args,
                    kwargs,
                };
            } else if self.eat_op(".") {
                let attr = match self.advance() {
                    Tok::Name(n) => n,
                    _ => return Err(self.error("invalid syntax")),
                };
                e = Expr::Attr(Box::new(e), attr);
            } else if self.eat_op("[") {
                let lo = if self.at_op(":") {
                    None
                } else {
                    Some(Box::new(self.expr()?))
                };
                if self.eat_op(":") {
                    let hi = if self.at_op("]") {
                        None
                    } else {
                        Some(Box::new(self.expr()?))
                    };
                    self.expect_op("]")?;
                    e = Expr::Slice(Box::new(e), lo, hi);
                } else {
                    self.expect_op("]")?;
                    let idx = lo.ok_or_else(|| self.error("invalid syntax"))?;
                    e = Expr::Index(Box::new(e), idx);
                }
            } else {
                return Ok(e);
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let line = self.line();
        match self.advance() {
            Tok::Int(i) => Ok(Expr::Int(i)),
            Tok::Float(f) => Ok(Expr::Float(f)),
            Tok::Str { text, fmt } => {
                let mut parts = vec![(text, fmt)];
                while let Tok::Str { .. } = self.peek() {
                    if let Tok::Str { text, fmt } = self.advance() {
                        parts.push((text, fmt));
                    }
                }
                if parts.iter().all(|(_, f)| !f) {
                    return Ok(Expr::Str(parts.into_iter().map(|(t, _)| t).collect()));
                }
                let mut out = Vec::new();
                for (text, fmt) in parts {
                    if fmt {
                        out.extend(parse_fstring(&text, line)?);
                    } else {
                        out.push(FPart::Text(text));
                    }
                }
                Ok(Expr::FStr(out))
            }
            Tok::Name(n) => match n.as_str() {
                "True" => Ok(Expr::Bool(true)),
                "False" => Ok(Expr::Bool(false)),
                "None" => Ok(Expr::None),
                _ if KEYWORDS.contains(&n.as_str()) => {
                    self.pos -= 1;
                    Err(self.error("invalid syntax"))
                }
                _ => Ok(Expr::Name(n)),
            },
            Tok::Op("(") => {
                let e = self.expr()?;
                self.expect_op(")")?;
                Ok(e)
            }
            Tok::Op("[") => {
                let mut items = Vec::new();
                while !self.eat_op("]") {
                    items.push(self.expr()?);
                    if !self.eat_op(",") {
                        self.expect_op("]")?;
                        break;
                    }
                }
                Ok(Expr::List(items))
            }
            Tok::Op("{") => {
                let mut items = Vec::new();
                while !self.eat_op("}") {
                    let k = self.expr()?;
                    self.expect_op(":")?;
                    items.push((k, self.expr()?));
                    if !self.eat_op(",") {
                        self.expect_op("}")?;
                        break;
                    }
                }
                Ok(Expr::Dict(items))
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.error("invalid syntax"))
            }
        }
    }
}

fn parse_fstring(text: &str, line: usize) -> Result<Vec<FPart>, ParseError> {
    let mut parts = Vec::new();
    let mut buf = String::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let err = |msg: &str| LexError {
        kind: "SyntaxError",
        line,
        msg: msg.into(),
    };
    while i < chars.len() {
        match chars[i] {
            '{' if chars.get(i + 1) == Some(&'{') => {
                buf.push('{');
                i += 2;
            }
            '}' if chars.get(i + 1) == Some(&'}') => {
                buf.push('}');
                i += 2;
            }
            '{' => {
                let close = chars[i..]
                    .iter()
                    .position(|&c| c == '}')
                    .ok_or_else(|| err("f-string: expecting '}'"))?;
                let inner: String = chars[i + 1..i + close].iter().collect();
                let (expr_src, spec) = match inner.rfind(':') {
                    Some(p) if !inner[p..].contains(']') && !inner[p..].contains(')') => {
                        (inner[..p].to_string(), Some(inner[p + 1..].to_string()))
                    }
                    _ => (inner.clone(), None),
                };
                let tokens = super::lexer::tokenize(&expr_src)?;
                let mut p = Parser {
                    toks: tokens,
                    pos: 0,
                };
                let e = p.expr()?;
                if !buf.is_empty() {
                    parts.push(FPart::Text(std::mem::take(&mut buf)));
                }
                parts.push(FPart::Expr(e, spec));
                i += close + 1;
            }
            c => {
                buf.push(c);
                i += 1;
            }
        }
    }
    if !buf.is_empty() {
        parts.push(FPart::Text(buf));
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::super::lexer::tokenize;
    use super::*;

    fn p(src: &str) -> Vec<Stmt> {
        parse(tokenize(src).unwrap()).unwrap()
    }

    #[test]
    fn precedence() {
        let s = p("1 + 2 * 3");
        assert_eq!(
            s[0].kind,
            StmtKind::Expr(Expr::Bin(
                Box::new(Expr::Int(1)),
                BinOp::Add,
                Box::new(Expr::Bin(
                    Box::new(Expr::Int(2)),
                    BinOp::Mul,
                    Box::new(Expr::Int(3))
                ))
            ))
        );
    }

    #[test]
    fn def_and_call_with_kwargs() {
        let s = p("def f(a, b=2):\n    return a + b\nf(1, b=3)\n");
        assert!(matches!(s[0].kind, StmtKind::Def(_)));
        assert!(
            matches!(&s[1].kind, StmtKind::Expr(Expr::Call { kwargs, .. }) if kwargs.len() == 1)
        );
    }

    #[test]
    fn fstring_with_spec() {
        let s = p("f'{x:.2f} and {y}'");
        let StmtKind::Expr(Expr::FStr(parts)) = &s[0].kind else {
            panic!()
        };
        assert_eq!(parts.len(), 3);
        assert_eq!(
            parts[0],
            FPart::Expr(Expr::Name("x".into()), Some(".2f".into()))
        );
    }

    #[test]
    fn slices_with_and_for_targets() {
        let s = p("with open('a') as f:\n    t = f.read()[1:]\nfor i, x in y:\n    pass\n");
        assert!(matches!(&s[0].kind, StmtKind::With(_, Some(a), b) if a == "f" && b.len() == 1));
        assert!(matches!(&s[1].kind, StmtKind::For(v, _, _) if v.len() == 2));
    }

    #[test]
    fn syntax_errors() {
        assert!(parse(tokenize("x = = 1").unwrap()).is_err());
        assert!(tokenize("def f(:\n  pass")
            .map(parse)
            .map_or(true, |r| r.is_err()));
        assert!(parse(tokenize("1 = x").unwrap()).is_err());
    }
}
