use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_TEMPLATE: &str = "\
You will receive a social media post and {num} fact-checked claims, each labelled with a number in square brackets.

Post: {query}

{passages}

Order the {num} claims from the one that best fact-checks the post to the one that fits it least. \
Reply with the labels only, in the form [2] > [1] > [3], and nothing else.";

/// Listwise prompt with `{query}`, `{passages}` and optional `{num}` slots.
/// `{passages}` expands to one `[i] text` line per candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        for slot in ["{query}", "{passages}"] {
            if !text.contains(slot) {
                return Err(Error::Config(format!("prompt template lacks the `{slot}` slot")));
            }
        }
        Ok(PromptTemplate { text })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text)
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn render(&self, query: &str, passages: &[&str]) -> String {
        let listing = passages
            .iter()
            .enumerate()
            .map(|(i, p)| format!("[{}] {}", i + 1, p.replace('\n', " ")))
            .collect::<Vec<_>>()
            .join("\n");
        // substitute passages last so candidate text cannot inject slots
        self.text
            .replace("{num}", &passages.len().to_string())
            .replace("{query}", &query.replace("{passages}", "{ passages }"))
            .replace("{passages}", &listing)
    }
}
