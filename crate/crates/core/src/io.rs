//! Plain-text trace and matrix formats.
//!
//! Trace: a `sigma=<int>` header, then one state per line. Matrix: an
//! `M=<int>` header, then `M` rows of `M` whitespace-separated numbers.
//! States are 1-based in files. Blank lines and lines starting with `#` are
//! skipped.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::markov::{StateTrace, TransitionMatrix};

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn header(line: Option<(usize, &str)>, key: &str) -> Result<(usize, usize)> {
    let (no, text) = line.ok_or(Error::Parse {
        line: 1,
        msg: format!("missing `{key}=<int>` header"),
    })?;
    let value = text
        .strip_prefix(key)
        .and_then(|r| r.trim_start().strip_prefix('='))
        .ok_or_else(|| Error::Parse {
            line: no,
            msg: format!("expected `{key}=<int>` header, found `{text}`"),
        })?;
    let v = value.trim().parse::<usize>().map_err(|e| Error::Parse {
        line: no,
        msg: format!("bad {key} value `{}`: {e}", value.trim()),
    })?;
    Ok((no, v))
}

fn state_index(no: usize, text: &str) -> Result<usize> {
    let v = text.parse::<usize>().map_err(|e| Error::Parse {
        line: no,
        msg: format!("bad state `{text}`: {e}"),
    })?;
    if v == 0 {
        return Err(Error::Parse {
            line: no,
            msg: "states are numbered from 1".into(),
        });
    }
    Ok(v - 1)
}

pub fn parse_trace(text: &str) -> Result<StateTrace> {
    let mut lines = content_lines(text);
    let (no, sigma) = header(lines.next(), "sigma")?;
    if sigma == 0 {
        return Err(Error::Parse {
            line: no,
            msg: "states are numbered from 1".into(),
        });
    }
    let states = lines.map(|(no, l)| state_index(no, l)).collect::<Result<Vec<_>>>()?;
    if states.is_empty() {
        return Err(Error::Parse {
            line: no,
            msg: "trace has no states after the header".into(),
        });
    }
    StateTrace::new(sigma - 1, states)
}

pub fn format_trace(trace: &StateTrace) -> String {
    let mut out = String::with_capacity(4 * trace.len() + 16);
    writeln!(out, "sigma={}", trace.initial_state + 1).unwrap();
    for &s in &trace.states {
        writeln!(out, "{}", s + 1).unwrap();
    }
    out
}

/// Parses a square matrix without checking stochasticity.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = content_lines(text);
    let (hno, m) = header(lines.next(), "M")?;
    if m == 0 {
        return Err(Error::Parse {
            line: hno,
            msg: "M must be at least 1".into(),
        });
    }
    let mut data = DMatrix::zeros(m, m);
    let mut rows = 0;
    let mut last = hno;
    for (no, l) in lines {
        if rows == m {
            return Err(Error::Parse {
                line: no,
                msg: format!("more than {m} rows"),
            });
        }
        let vals = l
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|e| Error::Parse {
                    line: no,
                    msg: format!("bad number `{t}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != m {
            return Err(Error::Parse {
                line: no,
                msg: format!("expected {m} entries, found {}", vals.len()),
            });
        }
        for (j, v) in vals.into_iter().enumerate() {
            data[(rows, j)] = v;
        }
        rows += 1;
        last = no;
    }
    if rows < m {
        return Err(Error::Parse {
            line: last + 1,
            msg: format!("expected {m} rows, found {rows}"),
        });
    }
    Ok(data)
}

pub fn parse_transition_matrix(text: &str) -> Result<TransitionMatrix> {
    TransitionMatrix::new(parse_matrix(text)?)
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_matrix(a: &DMatrix<f64>) -> String {
    let mut out = format!("M={}\n", a.nrows());
    for i in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).map(|j| format!("{}", a[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_trace(path: &Path) -> Result<StateTrace> {
    parse_trace(&std::fs::read_to_string(path)?)
}

pub fn read_transition_matrix(path: &Path) -> Result<TransitionMatrix> {
    parse_transition_matrix(&std::fs::read_to_string(path)?)
}

pub fn write_trace(path: &Path, trace: &StateTrace) -> Result<()> {
    Ok(std::fs::write(path, format_trace(trace))?)
}

pub fn write_matrix(path: &Path, a: &DMatrix<f64>) -> Result<()> {
    Ok(std::fs::write(path, format_matrix(a))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip() {
        let t = parse_trace("sigma=1\n2\n1\n\n# note\n2\n").unwrap();
        assert_eq!(t.initial_state, 0);
        assert_eq!(t.states, vec![1, 0, 1]);
        assert_eq!(parse_trace(&format_trace(&t)).unwrap(), t);
    }

    #[test]
    fn trace_errors_carry_lines() {
        assert!(matches!(parse_trace("1\n2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_trace("sigma=1\n2\nx\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(parse_trace("sigma=1\n0\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_trace("sigma=1\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.9, 1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(parse_matrix(&format_matrix(&a)).unwrap(), a);
    }

    #[test]
    fn matrix_errors() {
        assert!(matches!(
            parse_matrix("M=2\n0.5 0.5\n0.5\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_matrix("M=2\n0.5 0.5\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(parse_matrix("N=2\n"), Err(Error::Parse { line: 1, .. })));
    }
}
