use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};

/// A text cut into a prompt prefix and the held-out suffix.
/// `prefix + separator + suffix` is the original text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub prefix: String,
    pub separator: String,
    pub suffix: String,
    /// Set when the text has no interior whitespace and was cut mid-token.
    pub no_whitespace: bool,
}

impl Split {
    pub fn rejoin(&self) -> String {
        format!("{}{}{}", self.prefix, self.separator, self.suffix)
    }
}

/// Splits at the whitespace run closest to `fraction * chars(text)`.
/// Ties go to the earlier run. Without interior whitespace the text is cut at
/// the rounded character index instead.
pub fn split_text(text: &str, fraction: f64) -> Result<Split> {
    if text.is_empty() {
        return Err(ProbeError::Config("cannot split empty text".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ProbeError::Config(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let target = fraction * n as f64;

    // maximal whitespace runs strictly inside the text, as [start, end) char indices
    let mut runs = Vec::new();
    let mut i = 0;
    while i < n {
        if chars[i].1.is_whitespace() {
            let start = i;
            while i < n && chars[i].1.is_whitespace() {
                i += 1;
            }
            if start > 0 && i < n {
                runs.push((start, i));
            }
        } else {
            i += 1;
        }
    }
    let byte = |c: usize| if c == n { text.len() } else { chars[c].0 };

    let best = runs.iter().min_by(|a, b| {
        let da = (a.0 as f64 - target).abs();
        let db = (b.0 as f64 - target).abs();
        da.total_cmp(&db)
    });
    Ok(match best {
        Some(&(start, end)) => Split {
            prefix: text[..byte(start)].to_string(),
            separator: text[byte(start)..byte(end)].to_string(),
            suffix: text[byte(end)..].to_string(),
            no_whitespace: false,
        },
        None => {
            let cut = (target.round() as usize).clamp(1, n.saturating_sub(1).max(1));
            Split {
                prefix: text[..byte(cut)].to_string(),
                separator: String::new(),
                suffix: text[byte(cut)..].to_string(),
                no_whitespace: true,
            }
        }
    })
}

/// Outer-whitespace-trimmed, case-sensitive equality.
pub fn exact_match(generated: &str, truth: &str) -> bool {
    generated.trim() == truth.trim()
}
