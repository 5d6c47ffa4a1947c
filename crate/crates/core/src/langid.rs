//! Fusion of several language detectors into a single language per text.
//!
//! Detectors are adapters behind [`LanguageDetector`]; the engine never links
//! a concrete detector. Fusion: drop languages with fewer than
//! `min_vote_count` votes, average the normalized scores of the rest, drop
//! averages under `min_avg_score`, take the arg-max (ties to the smallest code).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Codes accepted for posts and claims. `ur` occurs only among posts.
pub const LANGUAGE_REGISTRY: [&str; 47] = [
    "af", "ar", "as", "az", "bg", "bn", "bs", "ca", "cs", "da", "de", "el", "en", "es", "fa", "fi",
    "fr", "hi", "hr", "hu", "id", "it", "kk", "ko", "mk", "ml", "ms", "my", "ne", "nl", "no", "pa",
    "pl", "pt", "ro", "ru", "si", "sk", "sl", "sr", "te", "th", "tl", "tr", "uk", "ur", "zh",
];

pub fn is_registered(code: &str) -> bool {
    LANGUAGE_REGISTRY.binary_search(&code).is_ok()
}

/// Name of the normalization applied by [`normalize_votes`], recorded in outputs.
pub const NORMALIZER: &str = "per-detector-max";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawVote {
    pub detector: String,
    pub language: String,
    pub raw_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorVote {
    pub detector: String,
    pub language: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub min_avg_score: f64,
    pub min_vote_count: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            min_avg_score: 0.5,
            min_vote_count: 2,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_avg_score) {
            return Err(Error::Config(format!(
                "min_avg_score must lie in [0, 1], got {}",
                self.min_avg_score
            )));
        }
        if self.min_vote_count == 0 {
            return Err(Error::Config("min_vote_count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Brings each detector's scores into [0, 1].
///
/// A detector whose scores already fit in [0, 1] passes through unchanged;
/// otherwise its scores are divided by its maximum. A detector whose scores
/// are all zero contributes no votes. Repeated `(detector, language)` entries
/// keep the highest score.
pub fn normalize_votes(raw: &[RawVote]) -> Result<Vec<DetectorVote>> {
    let mut by_detector: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for v in raw {
        if !v.raw_score.is_finite() || v.raw_score < 0.0 {
            return Err(Error::Config(format!(
                "detector `{}` returned invalid score {} for `{}`",
                v.detector, v.raw_score, v.language
            )));
        }
        let slot = by_detector
            .entry(v.detector.as_str())
            .or_default()
            .entry(v.language.as_str())
            .or_insert(0.0);
        *slot = slot.max(v.raw_score);
    }

    let mut out = Vec::new();
    for (detector, scores) in by_detector {
        let max = scores.values().copied().fold(0.0_f64, f64::max);
        if max <= 0.0 {
            continue;
        }
        let divisor = if max <= 1.0 { 1.0 } else { max };
        for (language, score) in scores {
            out.push(DetectorVote {
                detector: detector.to_string(),
                language: language.to_string(),
                score: score / divisor,
            });
        }
    }
    Ok(out)
}

/// Per-language statistics that [`fuse`] decides on.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageTally {
    pub language: String,
    pub votes: usize,
    pub average: f64,
}

/// Vote count and average score for each language, ordered by code. Scores are
/// summed in detector-name order so the result does not depend on vote order.
pub fn tally(votes: &[DetectorVote]) -> Vec<LanguageTally> {
    let mut grouped: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for v in votes {
        let slot = grouped
            .entry(v.language.as_str())
            .or_default()
            .entry(v.detector.as_str())
            .or_insert(f64::NEG_INFINITY);
        *slot = slot.max(v.score);
    }
    grouped
        .into_iter()
        .map(|(language, per_detector)| {
            let sum: f64 = per_detector.values().sum();
            LanguageTally {
                language: language.to_string(),
                votes: per_detector.len(),
                average: sum / per_detector.len() as f64,
            }
        })
        .collect()
}

/// Fused language, or `None` when no language survives the filters.
pub fn fuse(votes: &[DetectorVote], cfg: &FusionConfig) -> Option<String> {
    tally(votes)
        .into_iter()
        .filter(|t| t.votes >= cfg.min_vote_count)
        .filter(|t| t.average >= cfg.min_avg_score)
        // tallies arrive in ascending code order; the earlier code wins ties
        .fold(None::<LanguageTally>, |best, t| match best {
            Some(b) if b.average >= t.average => Some(b),
            _ => Some(t),
        })
        .map(|t| t.language)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierResolution {
    pub assignments: BTreeMap<String, String>,
    /// Languages seen fewer than `rare_threshold` times, with the ids carrying them.
    pub rare_languages: BTreeMap<String, Vec<String>>,
    /// Overrides that changed a language.
    pub applied: Vec<(String, String, String)>,
}

/// Lists rare languages for manual review and applies the reviewer's overrides.
pub fn resolve_outliers(
    assignments: &BTreeMap<String, String>,
    rare_threshold: usize,
    overrides: &BTreeMap<String, String>,
) -> Result<OutlierResolution> {
    let mut freq: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (id, lang) in assignments {
        freq.entry(lang.as_str()).or_default().push(id.clone());
    }
    let rare_languages = freq
        .into_iter()
        .filter(|(_, ids)| ids.len() < rare_threshold)
        .map(|(l, ids)| (l.to_string(), ids))
        .collect();

    let mut out = assignments.clone();
    let mut applied = Vec::new();
    for (id, lang) in overrides {
        if !is_registered(lang) {
            return Err(Error::UnknownLanguage(lang.clone()));
        }
        let Some(current) = out.get_mut(id) else {
            return Err(Error::UnknownId {
                kind: "override target",
                id: id.clone(),
            });
        };
        if current != lang {
            applied.push((id.clone(), current.clone(), lang.clone()));
            *current = lang.clone();
        }
    }
    Ok(OutlierResolution {
        assignments: out,
        rare_languages,
        applied,
    })
}

/// `(language, raw_score)` as returned by one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageScore {
    pub language: String,
    pub raw_score: f64,
}

/// A language detector: text in, raw scored guesses out.
pub trait LanguageDetector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, text: &str) -> Result<Vec<LanguageScore>>;
}

/// In-process detector backed by a closure.
pub struct FnDetector<F> {
    name: String,
    f: F,
}

impl<F> FnDetector<F>
where
    F: Fn(&str) -> Result<Vec<LanguageScore>> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnDetector { name: name.into(), f }
    }
}

impl<F> LanguageDetector for FnDetector<F>
where
    F: Fn(&str) -> Result<Vec<LanguageScore>> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn detect(&self, text: &str) -> Result<Vec<LanguageScore>> {
        (self.f)(text)
    }
}

/// Long-running child process speaking a line protocol: one JSON string per
/// line on stdin, one JSON array of `{"language", "raw_score"}` per line on stdout.
pub struct CommandDetector {
    name: String,
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl CommandDetector {
    pub fn spawn(name: impl Into<String>, command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(command, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(CommandDetector {
            name: name.into(),
            io: Mutex::new((child, stdin, stdout)),
        })
    }
}

impl LanguageDetector for CommandDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn detect(&self, text: &str) -> Result<Vec<LanguageScore>> {
        let mut guard = self.io.lock().unwrap_or_else(|p| p.into_inner());
        let (_, stdin, stdout) = &mut *guard;
        let request = serde_json::to_string(text)?;
        writeln!(stdin, "{request}")
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::io(&self.name, e))?;
        let mut line = String::new();
        let n = stdout
            .read_line(&mut line)
            .map_err(|e| Error::io(&self.name, e))?;
        if n == 0 {
            return Err(Error::Provider(format!("detector `{}` closed its output", self.name)));
        }
        serde_json::from_str(line.trim()).map_err(|e| {
            Error::Provider(format!("detector `{}` sent unparsable line: {e}", self.name))
        })
    }
}

impl Drop for CommandDetector {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.io.lock() {
            let _ = guard.0.kill();
            let _ = guard.0.wait();
        }
    }
}

/// Runs every detector on `text` and returns their raw votes.
pub fn collect_votes(text: &str, detectors: &[Box<dyn LanguageDetector>]) -> Result<Vec<RawVote>> {
    let mut raw = Vec::new();
    for d in detectors {
        for s in d.detect(text)? {
            raw.push(RawVote {
                detector: d.name().to_string(),
                language: s.language.trim().to_ascii_lowercase(),
                raw_score: s.raw_score,
            });
        }
    }
    Ok(raw)
}

/// Normalizes and fuses raw votes for one text.
pub fn detect_language(raw: &[RawVote], cfg: &FusionConfig) -> Result<Option<String>> {
    Ok(fuse(&normalize_votes(raw)?, cfg))
}

/// Distinct languages among fused outputs, useful for reports.
pub fn languages_of(assignments: &BTreeMap<String, String>) -> BTreeSet<&str> {
    assignments.values().map(String::as_str).collect()
}
