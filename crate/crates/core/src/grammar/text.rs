//! Infix text form of expression trees, e.g. `LIN0 + ((SE0 * PER0) + SE0)`.
//!
//! Every non-leaf operand is parenthesized, so printing and parsing round-trip
//! exactly. The parser also accepts unparenthesized chains, with `*` binding
//! tighter than `+` and left associativity.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::tree::{BaseKernel, ExprTree, KernelFamily, Operator};
use crate::error::{Error, Result};

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn operand(t: &ExprTree, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match t {
                ExprTree::Leaf(b) => write!(f, "{b}"),
                ExprTree::Node(_) => write!(f, "({t})"),
            }
        }
        match self {
            ExprTree::Leaf(b) => write!(f, "{b}"),
            ExprTree::Node(n) => {
                operand(n.left(), f)?;
                write!(f, " {} ", n.op().symbol())?;
                operand(n.right(), f)
            }
        }
    }
}

impl FromStr for ExprTree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = Parser { input: s, pos: 0 };
        let tree = p.sum()?;
        p.skip_ws();
        if p.pos != s.len() {
            return Err(p.error(format!("unexpected trailing input at byte {}", p.pos)));
        }
        Ok(tree)
    }
}

struct Parser<'a> {
    input: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, reason: String) -> Error {
        Error::Parse { input: self.input.to_string(), reason }
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.input[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<ExprTree> {
        let mut acc = self.product()?;
        while self.eat(Operator::Add.symbol()) {
            acc = ExprTree::add(acc, self.product()?);
        }
        Ok(acc)
    }

    fn product(&mut self) -> Result<ExprTree> {
        let mut acc = self.atom()?;
        while self.eat(Operator::Mult.symbol()) {
            acc = ExprTree::mult(acc, self.atom()?);
        }
        Ok(acc)
    }

    fn atom(&mut self) -> Result<ExprTree> {
        if self.eat('(') {
            let t = self.sum()?;
            if !self.eat(')') {
                return Err(self.error(format!("expected ')' at byte {}", self.pos)));
            }
            return Ok(t);
        }
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_uppercase()) {
            self.pos += 1;
        }
        let name = &self.input[start..self.pos];
        let family = KernelFamily::from_name(name)
            .ok_or_else(|| self.error(format!("unknown base kernel {name:?} at byte {start}")))?;
        let dstart = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let digits = &self.input[dstart..self.pos];
        let dim = digits
            .parse::<usize>()
            .map_err(|_| self.error(format!("base kernel {name} needs a dimension suffix at byte {dstart}")))?;
        Ok(ExprTree::leaf(BaseKernel::new(family, dim)))
    }
}

impl Serialize for ExprTree {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExprTree {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}
