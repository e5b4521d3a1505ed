//! The mini expression language: the variable `x`, single-digit literals,
//! `+ - *` and parentheses. `*` binds tighter than `+`/`-`; all operators are
//! left-associative.

use serde::{Deserialize, Serialize};

use super::vocab::{self, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul => 2,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
        }
    }

    pub fn apply(self, lhs: i64, rhs: i64) -> Option<i64> {
        match self {
            BinOp::Add => lhs.checked_add(rhs),
            BinOp::Sub => lhs.checked_sub(rhs),
            BinOp::Mul => lhs.checked_mul(rhs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    X,
    Lit(u8),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    /// Evaluates at `x`; `None` on i64 overflow.
    pub fn eval(&self, x: i64) -> Option<i64> {
        match self {
            Expr::X => Some(x),
            Expr::Lit(d) => Some(i64::from(*d)),
            Expr::Bin(op, l, r) => op.apply(l.eval(x)?, r.eval(x)?),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            _ => 3,
        }
    }

    /// Renders with the minimal parentheses that preserve the tree shape.
    pub fn tokens(&self) -> Vec<TokenId> {
        let mut out = Vec::new();
        self.write_tokens(&mut out);
        out
    }

    fn write_tokens(&self, out: &mut Vec<TokenId>) {
        match self {
            Expr::X => out.push(vocab::tok("x")),
            Expr::Lit(d) => out.push(vocab::digit(*d)),
            Expr::Bin(op, l, r) => {
                let p = op.precedence();
                write_operand(l, l.precedence() < p, out);
                out.push(vocab::tok(op.symbol()));
                write_operand(r, r.precedence() <= p, out);
            }
        }
    }

    pub fn to_text(&self) -> String {
        vocab::render(&self.tokens()).replace(' ', "")
    }
}

fn write_operand(e: &Expr, parens: bool, out: &mut Vec<TokenId>) {
    if parens {
        out.push(vocab::tok("("));
        e.write_tokens(out);
        out.push(vocab::tok(")"));
    } else {
        e.write_tokens(out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lexeme {
    X,
    Digit(u8),
    Op(BinOp),
    Open,
    Close,
}

fn lex(tokens: &[TokenId]) -> Option<Vec<Lexeme>> {
    tokens
        .iter()
        .map(|&t| {
            let s = vocab::text(t)?;
            Some(match s {
                "x" => Lexeme::X,
                "+" => Lexeme::Op(BinOp::Add),
                "-" => Lexeme::Op(BinOp::Sub),
                "*" => Lexeme::Op(BinOp::Mul),
                "(" => Lexeme::Open,
                ")" => Lexeme::Close,
                _ if s.len() == 1 && s.as_bytes()[0].is_ascii_digit() => {
                    Lexeme::Digit(s.as_bytes()[0] - b'0')
                }
                _ => return None,
            })
        })
        .collect()
}

struct Parser {
    lexemes: Vec<Lexeme>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<Lexeme> {
        self.lexemes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Option<Expr> {
        let mut lhs = self.term()?;
        while let Some(Lexeme::Op(op @ (BinOp::Add | BinOp::Sub))) = self.peek() {
            self.pos += 1;
            lhs = Expr::bin(op, lhs, self.term()?);
        }
        Some(lhs)
    }

    fn term(&mut self) -> Option<Expr> {
        let mut lhs = self.factor()?;
        while let Some(Lexeme::Op(BinOp::Mul)) = self.peek() {
            self.pos += 1;
            lhs = Expr::bin(BinOp::Mul, lhs, self.factor()?);
        }
        Some(lhs)
    }

    fn factor(&mut self) -> Option<Expr> {
        let lexeme = self.peek()?;
        self.pos += 1;
        match lexeme {
            Lexeme::X => Some(Expr::X),
            Lexeme::Digit(d) => Some(Expr::Lit(d)),
            Lexeme::Open => {
                let inner = self.expr()?;
                (self.peek() == Some(Lexeme::Close)).then(|| {
                    self.pos += 1;
                    inner
                })
            }
            Lexeme::Op(_) | Lexeme::Close => None,
        }
    }
}

/// Parses a full token sequence as one expression. `None` on any syntax error.
pub fn parse(tokens: &[TokenId]) -> Option<Expr> {
    let mut parser = Parser {
        lexemes: lex(tokens)?,
        pos: 0,
    };
    let expr = parser.expr()?;
    (parser.pos == parser.lexemes.len()).then_some(expr)
}
