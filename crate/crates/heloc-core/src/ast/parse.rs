//! Recursive-descent parser for the demo language.
//!
//! Grammar:
//! ```text
//! program    := fn_decl+
//! fn_decl    := 'fn' IDENT '(' (IDENT (',' IDENT)*)? ')' block
//! block      := '{' statement* '}'
//! statement  := assign | if | while | call | return
//! assign     := IDENT '=' expr ';'
//! if         := 'if' '(' expr ')' block
//! while      := 'while' '(' expr ')' block
//! call       := IDENT '(' (expr (',' expr)*)? ')' ';'
//! return     := 'return' expr? ';'
//! expr       := additive (('<' | '==') additive)?
//! additive   := term (('+' | '-') term)*
//! term       := factor ('*' factor)*
//! factor     := IDENT | INT
//! ```
//!
//! Node ids are assigned in depth-first preorder, so parsing the same input
//! always yields the same graph.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{AstError, AstGraph, AstNode, Caps};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Fn,
    If,
    While,
    Return,
    Ident(String),
    Int(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Assign,
    Plus,
    Minus,
    Star,
    Lt,
    EqEq,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(s) => format!("integer `{s}`"),
            Tok::Eof => "end of input".to_string(),
            Tok::Fn => "`fn`".to_string(),
            Tok::If => "`if`".to_string(),
            Tok::While => "`while`".to_string(),
            Tok::Return => "`return`".to_string(),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
            Tok::LBrace => "`{`".to_string(),
            Tok::RBrace => "`}`".to_string(),
            Tok::Comma => "`,`".to_string(),
            Tok::Semi => "`;`".to_string(),
            Tok::Assign => "`=`".to_string(),
            Tok::Plus => "`+`".to_string(),
            Tok::Minus => "`-`".to_string(),
            Tok::Star => "`*`".to_string(),
            Tok::Lt => "`<`".to_string(),
            Tok::EqEq => "`==`".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
    start: usize,
    end: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, AstError> {
    let mut tokens = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let bytes = src.as_bytes();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            col += 1;
            i += 1;
            continue;
        }
        if c == '/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let (tok, len) = match c {
            '(' => (Tok::LParen, 1),
            ')' => (Tok::RParen, 1),
            '{' => (Tok::LBrace, 1),
            '}' => (Tok::RBrace, 1),
            ',' => (Tok::Comma, 1),
            ';' => (Tok::Semi, 1),
            '+' => (Tok::Plus, 1),
            '-' => (Tok::Minus, 1),
            '*' => (Tok::Star, 1),
            '<' => (Tok::Lt, 1),
            '=' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    (Tok::EqEq, 2)
                } else {
                    (Tok::Assign, 1)
                }
            }
            _ if c.is_ascii_digit() => {
                let mut j = i;
                while j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    j += 1;
                }
                (Tok::Int(src[i..j].to_string()), j - i)
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < bytes.len()
                    && ((bytes[j] as char).is_ascii_alphanumeric() || bytes[j] == b'_')
                {
                    j += 1;
                }
                let word = &src[i..j];
                let tok = match word {
                    "fn" => Tok::Fn,
                    "if" => Tok::If,
                    "while" => Tok::While,
                    "return" => Tok::Return,
                    _ => Tok::Ident(word.to_string()),
                };
                (tok, j - i)
            }
            _ => {
                return Err(AstError::Syntax {
                    line,
                    col,
                    message: format!("unexpected character `{c}`"),
                })
            }
        };
        tokens.push(Token {
            tok,
            line,
            col,
            start,
            end: start + len,
        });
        col += len;
        i += len;
    }
    tokens.push(Token {
        tok: Tok::Eof,
        line,
        col,
        start: bytes.len(),
        end: bytes.len(),
    });
    Ok(tokens)
}

/// Parse-time tree; flattened to preorder ids once parsing succeeds.
struct TempNode {
    node_type: &'static str,
    start: usize,
    end: usize,
    start_line: usize,
    end_line: usize,
    children: Vec<Box<TempNode>>,
}

impl TempNode {
    fn leaf(node_type: &'static str, tok: &Token) -> Box<Self> {
        Box::new(Self {
            node_type,
            start: tok.start,
            end: tok.end,
            start_line: tok.line,
            end_line: tok.line,
            children: Vec::new(),
        })
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek2(&self) -> &Token {
        &self.tokens[(self.pos + 1).min(self.tokens.len() - 1)]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: String) -> AstError {
        let t = self.peek();
        AstError::Syntax {
            line: t.line,
            col: t.col,
            message,
        }
    }

    fn expect(&mut self, want: Tok) -> Result<Token, AstError> {
        if self.peek().tok == want {
            Ok(self.advance())
        } else {
            Err(self.error(format!(
                "expected {}, found {}",
                want.describe(),
                self.peek().tok.describe()
            )))
        }
    }

    fn program(&mut self) -> Result<Box<TempNode>, AstError> {
        if !matches!(self.peek().tok, Tok::Fn) {
            return Err(self.error(format!(
                "expected `fn` to start a compilation unit, found {}",
                self.peek().tok.describe()
            )));
        }
        let first = self.peek().clone();
        let mut unit = TempNode::leaf("CompilationUnit", &first);
        while matches!(self.peek().tok, Tok::Fn) {
            let decl = self.fn_decl()?;
            unit.end = decl.end;
            unit.end_line = decl.end_line;
            unit.children.push(decl);
        }
        if !matches!(self.peek().tok, Tok::Eof) {
            return Err(self.error(format!(
                "expected `fn` or end of input, found {}",
                self.peek().tok.describe()
            )));
        }
        Ok(unit)
    }

    fn fn_decl(&mut self) -> Result<Box<TempNode>, AstError> {
        let kw = self.expect(Tok::Fn)?;
        let mut node = TempNode::leaf("FunctionDecl", &kw);
        self.expect_ident("function name")?;
        self.expect(Tok::LParen)?;
        if !matches!(self.peek().tok, Tok::RParen) {
            loop {
                let name = self.expect_ident("parameter name")?;
                node.children.push(TempNode::leaf("Parameter", &name));
                if matches!(self.peek().tok, Tok::Comma) {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        let block = self.block()?;
        node.end = block.end;
        node.end_line = block.end_line;
        node.children.push(block);
        Ok(node)
    }

    fn expect_ident(&mut self, what: &str) -> Result<Token, AstError> {
        if matches!(self.peek().tok, Tok::Ident(_)) {
            Ok(self.advance())
        } else {
            Err(self.error(format!(
                "expected {what}, found {}",
                self.peek().tok.describe()
            )))
        }
    }

    fn block(&mut self) -> Result<Box<TempNode>, AstError> {
        let open = self.expect(Tok::LBrace)?;
        let mut node = TempNode::leaf("Block", &open);
        while !matches!(self.peek().tok, Tok::RBrace) {
            node.children.push(self.statement()?);
        }
        let close = self.expect(Tok::RBrace)?;
        node.end = close.end;
        node.end_line = close.line;
        Ok(node)
    }

    fn statement(&mut self) -> Result<Box<TempNode>, AstError> {
        match self.peek().tok.clone() {
            Tok::If => self.if_stmt(),
            Tok::While => self.while_stmt(),
            Tok::Return => self.return_stmt(),
            Tok::Ident(_) => match self.peek2().tok {
                Tok::Assign => self.assign_stmt(),
                Tok::LParen => self.call_stmt(),
                _ => Err(self.error(format!(
                    "expected `=` or `(` after identifier, found {}",
                    self.peek2().tok.describe()
                ))),
            },
            other => Err(self.error(format!("expected a statement, found {}", other.describe()))),
        }
    }

    fn assign_stmt(&mut self) -> Result<Box<TempNode>, AstError> {
        let name = self.advance();
        let mut node = TempNode::leaf("Assign", &name);
        node.children.push(TempNode::leaf("Identifier", &name));
        self.expect(Tok::Assign)?;
        node.children.push(self.expr()?);
        let semi = self.expect(Tok::Semi)?;
        node.end = semi.end;
        node.end_line = semi.line;
        Ok(node)
    }

    fn call_stmt(&mut self) -> Result<Box<TempNode>, AstError> {
        let name = self.advance();
        let mut node = TempNode::leaf("Call", &name);
        node.children.push(TempNode::leaf("Identifier", &name));
        self.expect(Tok::LParen)?;
        if !matches!(self.peek().tok, Tok::RParen) {
            loop {
                node.children.push(self.expr()?);
                if matches!(self.peek().tok, Tok::Comma) {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        let semi = self.expect(Tok::Semi)?;
        node.end = semi.end;
        node.end_line = semi.line;
        Ok(node)
    }

    fn if_stmt(&mut self) -> Result<Box<TempNode>, AstError> {
        let kw = self.advance();
        let mut node = TempNode::leaf("If", &kw);
        self.expect(Tok::LParen)?;
        node.children.push(self.expr()?);
        self.expect(Tok::RParen)?;
        let block = self.block()?;
        node.end = block.end;
        node.end_line = block.end_line;
        node.children.push(block);
        Ok(node)
    }

    fn while_stmt(&mut self) -> Result<Box<TempNode>, AstError> {
        let kw = self.advance();
        let mut node = TempNode::leaf("While", &kw);
        self.expect(Tok::LParen)?;
        node.children.push(self.expr()?);
        self.expect(Tok::RParen)?;
        let block = self.block()?;
        node.end = block.end;
        node.end_line = block.end_line;
        node.children.push(block);
        Ok(node)
    }

    fn return_stmt(&mut self) -> Result<Box<TempNode>, AstError> {
        let kw = self.advance();
        let mut node = TempNode::leaf("Return", &kw);
        if !matches!(self.peek().tok, Tok::Semi) {
            node.children.push(self.expr()?);
        }
        let semi = self.expect(Tok::Semi)?;
        node.end = semi.end;
        node.end_line = semi.line;
        Ok(node)
    }

    fn expr(&mut self) -> Result<Box<TempNode>, AstError> {
        let lhs = self.additive()?;
        if matches!(self.peek().tok, Tok::Lt | Tok::EqEq) {
            self.advance();
            let rhs = self.additive()?;
            return Ok(binary(lhs, rhs));
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Box<TempNode>, AstError> {
        let mut lhs = self.term()?;
        while matches!(self.peek().tok, Tok::Plus | Tok::Minus) {
            self.advance();
            let rhs = self.term()?;
            lhs = binary(lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Box<TempNode>, AstError> {
        let mut lhs = self.factor()?;
        while matches!(self.peek().tok, Tok::Star) {
            self.advance();
            let rhs = self.factor()?;
            lhs = binary(lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Box<TempNode>, AstError> {
        match self.peek().tok.clone() {
            Tok::Ident(_) => {
                let t = self.advance();
                Ok(TempNode::leaf("Identifier", &t))
            }
            Tok::Int(_) => {
                let t = self.advance();
                Ok(TempNode::leaf("IntLiteral", &t))
            }
            other => Err(self.error(format!(
                "expected an identifier or integer literal, found {}",
                other.describe()
            ))),
        }
    }
}

fn binary(lhs: Box<TempNode>, rhs: Box<TempNode>) -> Box<TempNode> {
    Box::new(TempNode {
        node_type: "BinaryOp",
        start: lhs.start,
        end: rhs.end,
        start_line: lhs.start_line,
        end_line: rhs.end_line,
        children: vec![lhs, rhs],
    })
}

fn flatten(src: &str, root: Box<TempNode>) -> Vec<AstNode> {
    let mut out = Vec::new();
    fn walk(src: &str, node: &TempNode, parent: Option<usize>, out: &mut Vec<AstNode>) {
        let id = out.len();
        out.push(AstNode {
            id,
            node_type: String::from(node.node_type),
            text: String::from(&src[node.start..node.end]),
            start_line: node.start_line,
            end_line: node.end_line,
            parent,
            children: Vec::new(),
        });
        for child in &node.children {
            walk(src, child, Some(id), out);
        }
    }
    walk(src, &root, None, &mut out);
    out
}

/// Parse demo-language source into a validated [`AstGraph`].
pub fn parse_demo_source(text: &str, caps: &Caps) -> Result<AstGraph, AstError> {
    let tokens = lex(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    let tree = parser.program()?;
    let records = flatten(text, tree);
    AstGraph::from_records(records, caps)
}
