//! Answerers turn a caption and a question into an answer string for the
//! consistency metric. The builtin one parses the caption templates
//! directly; `ProtoAnswerer` delegates to an external process over a
//! line-based pipe protocol.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use super::MetricError;
use crate::text::normalize;

pub trait Answerer {
    fn answer(&mut self, caption: &str, question: &str) -> Result<String, MetricError>;
}

/// Recovers the ordered action labels from a generated caption by dropping
/// template glue words and the third-person -s on each verb.
pub fn caption_action_labels(caption: &str) -> Vec<String> {
    normalize(caption)
        .into_iter()
        .filter(|w| !matches!(w.as_str(), "the" | "user" | "then" | "and" | "finally"))
        .map(|w| {
            if w.len() > 1 && w.ends_with('s') {
                w[..w.len() - 1].to_string()
            } else {
                w
            }
        })
        .collect()
}

/// Rule-based answerer for the caption templates. Unanswerable questions
/// return an empty string, which never matches a ground-truth answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinAnswerer;

impl Answerer for BuiltinAnswerer {
    fn answer(&mut self, caption: &str, question: &str) -> Result<String, MetricError> {
        let labels = caption_action_labels(caption);
        let q = normalize(question);
        let has = |w: &str| q.iter().any(|t| t == w);
        let answer = if has("many") {
            labels.len().to_string()
        } else if has("first") {
            labels.first().cloned().unwrap_or_default()
        } else if has("last") {
            labels.last().cloned().unwrap_or_default()
        } else if let Some(pos) = q.iter().position(|t| t == "number") {
            match q.get(pos + 1).and_then(|t| t.parse::<usize>().ok()) {
                Some(k) if k >= 1 => labels.get(k - 1).cloned().unwrap_or_default(),
                _ => String::new(),
            }
        } else {
            String::new()
        };
        Ok(answer)
    }
}

fn one_line(s: &str) -> String {
    s.chars()
        .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
        .collect()
}

/// External answerer process. Each request is one line
/// `CAPTION \t QUESTION`, each response one line with the answer. The
/// process is spawned once and kept alive across questions.
pub struct ProtoAnswerer {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ProtoAnswerer {
    /// `command` is split on whitespace into program and arguments.
    pub fn spawn(command: &str) -> Result<Self, MetricError> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| MetricError::Answerer("empty answerer command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| MetricError::Answerer(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout was piped"));
        Ok(Self {
            child,
            stdin,
            stdout,
        })
    }
}

impl Answerer for ProtoAnswerer {
    fn answer(&mut self, caption: &str, question: &str) -> Result<String, MetricError> {
        writeln!(self.stdin, "{}\t{}", one_line(caption), one_line(question))
            .and_then(|_| self.stdin.flush())
            .map_err(|e| MetricError::Answerer(format!("write request: {e}")))?;
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| MetricError::Answerer(format!("read response: {e}")))?;
        if n == 0 {
            return Err(MetricError::Answerer(
                "answerer process closed its output".into(),
            ));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    }
}

impl Drop for ProtoAnswerer {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
