//! On-disk cache of induced program sets, one file per (problem, config).
//!
//! File layout:
//! ```text
//! caps_hit 0
//! stuck_at -
//! program -0.5 0
//! OUTPUT Id("Let")
//! ...
//! end
//! ```

use super::beam::{induce_programs, InducedProgram, InducedProgramSet, UniformScorer};
use super::InductionConfig;
use crate::corpus::Problem;
use crate::dsl::{AnswerOptions, Program};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Stable hex digest of a problem and the search settings.
pub fn problem_key(p: &Problem, cfg: &InductionConfig) -> String {
    let mut h = Sha256::new();
    h.update(p.to_json_line().as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(cfg).expect("config serializes").as_bytes());
    hex::encode(h.finalize())
}

#[derive(Clone, Debug)]
pub struct InductionCache {
    dir: PathBuf,
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub(crate) fn render(set: &InducedProgramSet) -> String {
    let mut s = String::new();
    writeln!(s, "caps_hit {}", set.caps_hit).unwrap();
    match set.stuck_at {
        Some(k) => writeln!(s, "stuck_at {k}").unwrap(),
        None => writeln!(s, "stuck_at -").unwrap(),
    }
    for p in &set.programs {
        writeln!(s, "program {} {}", p.score, p.fallbacks).unwrap();
        s.push_str(&p.program.to_string());
        s.push_str("end\n");
    }
    s
}

pub(crate) fn parse(text: &str) -> io::Result<InducedProgramSet> {
    let mut lines = text.lines();
    let mut field = |name: &str| -> io::Result<String> {
        let l = lines.next().ok_or_else(|| bad(format!("missing {name}")))?;
        l.strip_prefix(name)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected {name}, got {l:?}")))
    };
    let caps_hit = field("caps_hit")?.parse().map_err(|_| bad("caps_hit"))?;
    let stuck_at = match field("stuck_at")?.as_str() {
        "-" => None,
        k => Some(k.parse().map_err(|_| bad("stuck_at"))?),
    };
    let mut programs = Vec::new();
    while let Some(header) = lines.next() {
        let rest = header.strip_prefix("program ").ok_or_else(|| bad(format!("expected program, got {header:?}")))?;
        let (score, fallbacks) = rest.split_once(' ').ok_or_else(|| bad("program header"))?;
        let score: f64 = score.parse().map_err(|_| bad("score"))?;
        let fallbacks: usize = fallbacks.parse().map_err(|_| bad("fallbacks"))?;
        let mut body = String::new();
        loop {
            let l = lines.next().ok_or_else(|| bad("unterminated program"))?;
            if l == "end" {
                break;
            }
            body.push_str(l);
            body.push('\n');
        }
        let program: Program = body.parse().map_err(|e| bad(format!("{e}")))?;
        programs.push(InducedProgram { program, score, fallbacks, token_scores: Vec::new() });
    }
    Ok(InducedProgramSet { programs, caps_hit, stuck_at, filled: 0 })
}

impl InductionCache {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(InductionCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.prog"))
    }

    pub fn load(&self, key: &str) -> io::Result<Option<InducedProgramSet>> {
        match fs::read_to_string(self.path(key)) {
            Ok(text) => parse(&text).map(Some),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Writes through a temporary file so readers never see partial entries.
    pub fn store(&self, key: &str, set: &InducedProgramSet) -> io::Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(render(set).as_bytes())?;
        tmp.persist(self.path(key)).map_err(|e| e.error)?;
        Ok(())
    }

    /// Cached result for `p`, inducing (with the uniform scorer) on a miss.
    pub fn get_or_induce(&self, p: &Problem, cfg: &InductionConfig) -> io::Result<InducedProgramSet> {
        let key = problem_key(p, cfg);
        if let Some(set) = self.load(&key)? {
            return Ok(set);
        }
        let set = induce_programs(&p.source(), &p.target(), &AnswerOptions::new(&p.options), cfg, &UniformScorer);
        self.store(&key, &set)?;
        Ok(set)
    }
}
