//! Golden corpus: each `NAME.sfl` program may have a `NAME.expect` file with lines
//!
//! ```text
//! check --system pc --pc Pub => 1 PcTooHigh
//! ```
//!
//! The left side is a command line for the `ifcfx` front end; the right side is the expected
//! exit code followed by text that must occur in the output. `@` stands for the program
//! itself and `@OTHER.sfl` for another corpus file; without any `@` the program is appended.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::harness::Report;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Malformed { path: String, line: usize, msg: String },
}

/// One expectation line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expectation {
    pub program: PathBuf,
    pub line: usize,
    pub args: Vec<String>,
    pub exit: i32,
    pub needle: String,
}

/// The corpus shipped with the crate.
pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("programs")
}

pub fn parse_expect(program: &Path, text: &str, path: &str) -> Result<Vec<Expectation>, CorpusError> {
    let dir = program.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| CorpusError::Malformed { path: path.to_string(), line: i + 1, msg: msg.to_string() };
        let (lhs, rhs) = line.split_once("=>").ok_or_else(|| bad("missing `=>`"))?;
        let words = shlex::split(lhs).ok_or_else(|| bad("unbalanced quotes"))?;
        let rhs = rhs.trim();
        let (code, needle) = rhs.split_once(' ').unwrap_or((rhs, ""));
        let exit = code.parse().map_err(|_| bad("expected an exit code after `=>`"))?;
        let mut args = vec!["ifcfx".to_string()];
        let mut placed = false;
        for w in words {
            if let Some(rest) = w.strip_prefix('@') {
                placed = true;
                let p = if rest.is_empty() { program.to_path_buf() } else { dir.join(rest) };
                args.push(p.display().to_string());
            } else {
                args.push(w);
            }
        }
        if !placed {
            args.push(program.display().to_string());
        }
        out.push(Expectation { program: program.to_path_buf(), line: i + 1, args, exit, needle: needle.trim().to_string() });
    }
    Ok(out)
}

/// All expectations in `dir`, in file-name order.
pub fn load_corpus(dir: &Path) -> Result<Vec<Expectation>, CorpusError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| io_error(dir, source))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "expect"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|source| io_error(&f, source))?;
        out.extend(parse_expect(&f.with_extension("sfl"), &text, &f.display().to_string())?);
    }
    Ok(out)
}

fn io_error(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io { path: path.display().to_string(), source }
}

/// Run every expectation through the command-line front end.
pub fn run_corpus(dir: &Path) -> Result<Report, CorpusError> {
    let mut report = Report::new();
    for ex in load_corpus(dir)? {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = crate::cli::run(&ex.args, &mut out, &mut err);
        let stdout = String::from_utf8_lossy(&out);
        let passed = code == ex.exit && stdout.contains(&ex.needle);
        let name = ex.program.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let detail = if passed {
            format!("{} => {code}", ex.args[1..ex.args.len()].join(" "))
        } else {
            format!(
                "{} => exit {code}, expected {} with `{}`; output: {} {}",
                ex.args[1..].join(" "),
                ex.exit,
                ex.needle,
                stdout.trim(),
                String::from_utf8_lossy(&err).trim()
            )
        };
        report.push("golden", format!("{name}:{}", ex.line), passed, detail);
    }
    Ok(report)
}
