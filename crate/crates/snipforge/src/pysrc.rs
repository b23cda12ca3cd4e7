//! Python source analysis on the error-tolerant tree-sitter grammar.
//!
//! Methods are addressed by module-relative dotted path (`ClassA.method_b`,
//! nested functions included). A method's code is the exact byte range of its
//! `function_definition` node, so decorators are excluded and the body keeps
//! its original indentation.

use std::cell::RefCell;
use tree_sitter::{Node, Parser, Tree};

thread_local! {
    static PARSER: RefCell<Parser> = RefCell::new(new_parser());
}

fn new_parser() -> Parser {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .expect("python grammar loads");
    parser
}

/// Parse Python source. Error recovery means every input yields a tree.
pub fn parse(source: &str) -> Tree {
    PARSER.with(|p| {
        p.borrow_mut()
            .parse(source, None)
            .expect("parser without cancellation always returns a tree")
    })
}

/// One function or method definition found in a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyMethod {
    /// Module-relative dotted path, e.g. `ClassA.method_b` or `outer.inner`.
    pub qualified_name: String,
    /// Bare identifier from the signature.
    pub name: String,
    /// Exact source of the definition, signature through body.
    pub code: String,
    /// Header from `def` through the colon, trailing whitespace trimmed.
    pub signature: String,
    /// Last physical line of the header, 1-based within `code`.
    pub signature_end_line: u32,
    /// 1-based line of the `def` keyword in the containing file.
    pub start_line: u32,
    /// 1-based last line of the definition in the containing file.
    pub end_line: u32,
    /// Leading string literal of the body, quote-stripped and dedented.
    pub docstring: Option<String>,
}

/// Collect every function/method definition in a file, in source order.
pub fn list_methods(source: &str) -> Vec<PyMethod> {
    let tree = parse(source);
    let mut out = Vec::new();
    walk_definitions(tree.root_node(), source, &mut Vec::new(), &mut out);
    out
}

fn walk_definitions(
    node: Node,
    source: &str,
    scope: &mut Vec<String>,
    out: &mut Vec<PyMethod>,
) {
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        match child.kind() {
            "function_definition" => {
                if let Some(method) = method_from_node(child, source, scope) {
                    let name = method.name.clone();
                    out.push(method);
                    scope.push(name);
                    walk_definitions(child, source, scope, out);
                    scope.pop();
                } else {
                    walk_definitions(child, source, scope, out);
                }
            }
            "class_definition" => {
                let name = child
                    .child_by_field_name("name")
                    .map(|n| node_text(n, source).to_string());
                match name {
                    Some(name) => {
                        scope.push(name);
                        walk_definitions(child, source, scope, out);
                        scope.pop();
                    }
                    None => walk_definitions(child, source, scope, out),
                }
            }
            _ => walk_definitions(child, source, scope, out),
        }
    }
}

fn method_from_node(node: Node, source: &str, scope: &[String]) -> Option<PyMethod> {
    let name_node = node.child_by_field_name("name")?;
    if name_node.is_missing() {
        return None;
    }
    let name = node_text(name_node, source).to_string();
    let code = node_text(node, source).to_string();
    let qualified_name = if scope.is_empty() {
        name.clone()
    } else {
        format!("{}.{}", scope.join("."), name)
    };

    let (signature, signature_end_line) = split_signature(node, source)?;

    Some(PyMethod {
        qualified_name,
        name,
        docstring: docstring_of(node, source),
        signature,
        signature_end_line,
        start_line: node.start_position().row as u32 + 1,
        end_line: node.end_position().row as u32 + 1,
        code,
    })
}

/// The header runs from `def` through the colon that introduces the body.
/// Works for multi-line parameter lists; comments between header and body are
/// not part of the signature.
fn split_signature(node: Node, source: &str) -> Option<(String, u32)> {
    let mut colon_end = None;
    let body_start = node.child_by_field_name("body").map(|b| b.start_byte());
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        if child.kind() == ":" {
            if let Some(bs) = body_start {
                if child.start_byte() >= bs {
                    continue;
                }
            }
            colon_end = Some(child.end_byte());
        }
    }
    let colon_end = colon_end?;
    let header = &source[node.start_byte()..colon_end];
    let end_line = header.matches('\n').count() as u32 + 1;
    Some((header.to_string(), end_line))
}

/// Extract the docstring of a single method definition given as source text.
pub fn extract_docstring(method_source: &str) -> Option<String> {
    let tree = parse(method_source);
    let root = tree.root_node();
    let mut cursor = root.walk();
    let def = root
        .named_children(&mut cursor)
        .find(|n| n.kind() == "function_definition")?;
    docstring_of(def, method_source)
}

fn docstring_of(def: Node, source: &str) -> Option<String> {
    let body = def.child_by_field_name("body")?;
    let mut cursor = body.walk();
    // Comments are tree extras; the docstring must be the first statement.
    let first_stmt = body
        .named_children(&mut cursor)
        .find(|n| n.kind() != "comment")?;
    if first_stmt.kind() != "expression_statement" {
        return None;
    }
    let expr = first_stmt.named_child(0)?;
    if expr.kind() != "string" {
        return None;
    }
    // Quote-stripped only: the text between the opening and closing quote
    // tokens, escapes and interpolations left verbatim.
    let mut cursor = expr.walk();
    let children: Vec<Node> = expr.children(&mut cursor).collect();
    let start = children.iter().find(|n| n.kind() == "string_start")?;
    let end = children.iter().rev().find(|n| n.kind() == "string_end")?;
    let raw = &source[start.end_byte()..end.start_byte()];
    Some(dedent(raw))
}

/// Docstring cleanup in the style of `inspect.cleandoc`: the first line loses
/// its leading whitespace, later lines lose their common indentation, and
/// leading/trailing blank lines go away.
fn dedent(raw: &str) -> String {
    let lines: Vec<&str> = raw.split('\n').collect();
    let margin = lines[1..]
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let mut cleaned: Vec<String> = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if i == 0 {
            cleaned.push(line.trim_start().to_string());
        } else {
            let cut = margin.min(line.len() - line.trim_start().len());
            cleaned.push(line[cut..].trim_end().to_string());
        }
    }
    while cleaned.first().is_some_and(|l| l.is_empty()) {
        cleaned.remove(0);
    }
    while cleaned.last().is_some_and(|l| l.is_empty()) {
        cleaned.pop();
    }
    cleaned.join("\n")
}

pub fn node_text<'a>(node: Node, source: &'a str) -> &'a str {
    &source[node.start_byte()..node.end_byte()]
}
