//! Text formats: matrix sequence files, graph files and result CSVs.
//!
//! Sequence file:
//! ```text
//! DYNTRACE-SEQ 1
//! n <n> steps <m>
//! MATRIX 0            followed by n rows of n floats
//! SPARSE 1 <k>        followed by k lines `i j value`, added symmetrically
//! ```
//! Graph file:
//! ```text
//! DYNTRACE-GRAPH 1
//! nodes <n>
//! E <u> <v>           initial edges
//! CLIQUE <u1> ... <uk> one per step
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;

use super::graph::{GraphStream, MAX_CLIQUE};
use crate::error::{Result, TraceError};
use crate::oracle::{DenseSymmetricOperator, Operator};
use crate::stream::StreamSource;

pub const SEQ_HEADER: &str = "DYNTRACE-SEQ 1";
pub const GRAPH_HEADER: &str = "DYNTRACE-GRAPH 1";
pub const CSV_HEADER: &str = "step,estimator,estimate,true_value,abs_error,rel_error,queries_cumulative,trial_seed";

/// A sequence of dense symmetric matrices read from or written to a file.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub matrices: Vec<DenseSymmetricOperator>,
}

impl Sequence {
    pub fn dim(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.matrix().nrows())
    }

    pub fn to_stream(&self) -> Result<StreamSource> {
        let ops: Vec<Operator> = self
            .matrices
            .iter()
            .map(|m| Arc::new(m.clone()) as Operator)
            .collect();
        StreamSource::new(ops)
    }
}

struct Lines<'a> {
    path: &'a Path,
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Self { path, lines, pos: 0 }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> TraceError {
        TraceError::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    /// Line number of the end of input, for truncation errors.
    fn eof_line(&self) -> usize {
        self.lines.last().map_or(1, |&(n, _)| n + 1)
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let item = self.lines.get(self.pos).copied();
        self.pos += 1;
        item.ok_or_else(|| self.err(self.eof_line(), format!("unexpected end of file, expected {what}")))
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.lines.get(self.pos).copied()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_num<T: std::str::FromStr>(lines: &Lines, line: usize, token: &str, what: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| lines.err(line, format!("invalid {what} `{token}`")))
}

fn parse_float(lines: &Lines, line: usize, token: &str) -> Result<f64> {
    let v: f64 = parse_num(lines, line, token, "number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(lines.err(line, format!("non-finite value `{token}`")))
    }
}

fn expect_header(lines: &mut Lines, header: &str) -> Result<()> {
    let (no, text) = lines.next("a header")?;
    if text != header {
        return Err(lines.err(no, format!("malformed header `{text}`, expected `{header}`")));
    }
    Ok(())
}

pub fn read_sequence_file(path: &Path) -> Result<Sequence> {
    let text = read_text(path)?;
    parse_sequence(path, &text)
}

pub fn parse_sequence(path: &Path, text: &str) -> Result<Sequence> {
    let mut lines = Lines::new(path, text);
    expect_header(&mut lines, SEQ_HEADER)?;
    let (no, dims) = lines.next("`n <n> steps <m>`")?;
    let tokens: Vec<&str> = dims.split_whitespace().collect();
    if tokens.len() != 4 || tokens[0] != "n" || tokens[2] != "steps" {
        return Err(lines.err(no, format!("expected `n <n> steps <m>`, found `{dims}`")));
    }
    let n: usize = parse_num(&lines, no, tokens[1], "dimension")?;
    let steps: usize = parse_num(&lines, no, tokens[3], "step count")?;
    if n == 0 || steps == 0 {
        return Err(lines.err(no, "dimension and step count must be positive"));
    }

    let mut matrices: Vec<DenseSymmetricOperator> = Vec::with_capacity(steps);
    for t in 0..steps {
        let (no, block) = lines.next(&format!("block {t}"))?;
        let tokens: Vec<&str> = block.split_whitespace().collect();
        let index: usize = match tokens.get(1) {
            Some(tok) => parse_num(&lines, no, tok, "block index")?,
            None => return Err(lines.err(no, format!("malformed block header `{block}`"))),
        };
        if index != t {
            return Err(lines.err(no, format!("block index {index} out of order, expected {t}")));
        }
        let m = match tokens[0] {
            "MATRIX" if tokens.len() == 2 => {
                let mut m = DMatrix::zeros(n, n);
                for i in 0..n {
                    let (rno, row) = match lines.peek() {
                        Some(l) if !is_block_header(l.1) => lines.next("a row")?,
                        _ => {
                            let line = lines.peek().map_or(lines.eof_line(), |l| l.0);
                            return Err(lines.err(line, format!("MATRIX {t} has {i} rows, expected {n} rows")));
                        }
                    };
                    let vals: Vec<&str> = row.split_whitespace().collect();
                    if vals.len() != n {
                        return Err(lines.err(rno, format!("row has {} entries, expected {n}", vals.len())));
                    }
                    for (j, tok) in vals.iter().enumerate() {
                        m[(i, j)] = parse_float(&lines, rno, tok)?;
                    }
                }
                m
            }
            "SPARSE" if tokens.len() == 3 => {
                let Some(prev) = matrices.last() else {
                    return Err(lines.err(no, "block 0 must be MATRIX"));
                };
                let k: usize = parse_num(&lines, no, tokens[2], "entry count")?;
                let mut m = prev.matrix().clone();
                for e in 0..k {
                    let (eno, entry) = match lines.peek() {
                        Some(l) if !is_block_header(l.1) => lines.next("an entry")?,
                        _ => {
                            let line = lines.peek().map_or(lines.eof_line(), |l| l.0);
                            return Err(lines.err(line, format!("SPARSE {t} has {e} entries, expected {k}")));
                        }
                    };
                    let parts: Vec<&str> = entry.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(lines.err(eno, format!("expected `i j value`, found `{entry}`")));
                    }
                    let i: usize = parse_num(&lines, eno, parts[0], "row index")?;
                    let j: usize = parse_num(&lines, eno, parts[1], "column index")?;
                    if i >= n || j >= n {
                        return Err(lines.err(eno, format!("index ({i}, {j}) outside a {n}x{n} matrix")));
                    }
                    let v = parse_float(&lines, eno, parts[2])?;
                    m[(i, j)] += v;
                    if i != j {
                        m[(j, i)] += v;
                    }
                }
                m
            }
            _ => return Err(lines.err(no, format!("malformed block header `{block}`"))),
        };
        matrices.push(DenseSymmetricOperator::new(m)?);
    }
    if let Some((no, extra)) = lines.peek() {
        return Err(lines.err(no, format!("unexpected content after {steps} blocks: `{extra}`")));
    }
    Ok(Sequence { matrices })
}

fn is_block_header(line: &str) -> bool {
    line.starts_with("MATRIX") || line.starts_with("SPARSE")
}

/// Writes every step as a dense `MATRIX` block. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_sequence<W: Write>(seq: &Sequence, out: &mut W) -> std::io::Result<()> {
    let n = seq.dim();
    writeln!(out, "{SEQ_HEADER}")?;
    writeln!(out, "n {n} steps {}", seq.matrices.len())?;
    for (t, m) in seq.matrices.iter().enumerate() {
        writeln!(out, "MATRIX {t}")?;
        let m = m.matrix();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{:?}", m[(i, j)])).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

pub fn write_sequence_file(path: &Path, seq: &Sequence) -> Result<()> {
    let mut buf = Vec::new();
    write_sequence(seq, &mut buf).expect("writing to memory");
    write_file(path, &buf)
}

pub fn read_graph_file(path: &Path) -> Result<GraphStream> {
    let text = read_text(path)?;
    parse_graph(path, &text)
}

pub fn parse_graph(path: &Path, text: &str) -> Result<GraphStream> {
    let mut lines = Lines::new(path, text);
    expect_header(&mut lines, GRAPH_HEADER)?;
    let (no, nodes_line) = lines.next("`nodes <n>`")?;
    let node_count: usize = match nodes_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["nodes", n] => parse_num(&lines, no, n, "node count")?,
        _ => return Err(lines.err(no, format!("expected `nodes <n>`, found `{nodes_line}`"))),
    };
    let vertex = |lines: &Lines, line: usize, tok: &str| -> Result<usize> {
        let v: usize = parse_num(lines, line, tok, "vertex")?;
        if v >= node_count {
            return Err(lines.err(line, format!("vertex {v} out of range for {node_count} nodes")));
        }
        Ok(v)
    };
    let mut initial_edges = Vec::new();
    let mut events = Vec::new();
    while let Some((no, line)) = lines.peek() {
        lines.pos += 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "E" if tokens.len() == 3 => {
                if !events.is_empty() {
                    return Err(lines.err(no, "edge line after the first CLIQUE"));
                }
                initial_edges.push((vertex(&lines, no, tokens[1])?, vertex(&lines, no, tokens[2])?));
            }
            "CLIQUE" => {
                let vs = tokens[1..]
                    .iter()
                    .map(|t| vertex(&lines, no, t))
                    .collect::<Result<Vec<_>>>()?;
                if !(2..=MAX_CLIQUE).contains(&vs.len()) {
                    return Err(lines.err(no, format!("clique has {} vertices, expected 2 to {MAX_CLIQUE}", vs.len())));
                }
                events.push(vs);
            }
            _ => return Err(lines.err(no, format!("unrecognized line `{line}`"))),
        }
    }
    Ok(GraphStream {
        node_count,
        initial_edges,
        events,
    })
}

pub fn write_graph<W: Write>(g: &GraphStream, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{GRAPH_HEADER}")?;
    writeln!(out, "nodes {}", g.node_count)?;
    for (u, v) in &g.initial_edges {
        writeln!(out, "E {u} {v}")?;
    }
    for c in &g.events {
        let vs: Vec<String> = c.iter().map(ToString::to_string).collect();
        writeln!(out, "CLIQUE {}", vs.join(" "))?;
    }
    Ok(())
}

pub fn write_graph_file(path: &Path, g: &GraphStream) -> Result<()> {
    let mut buf = Vec::new();
    write_graph(g, &mut buf).expect("writing to memory");
    write_file(path, &buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| TraceError::Io {
        path: PathBuf::from(path),
        source,
    })
}
