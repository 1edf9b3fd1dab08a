//! Plan grammar.
//!
//! ```text
//! plan      = fragment { ("," | ";" | newline) fragment } ;
//! fragment  = [ numbering ] action [ "." ] ;
//! numbering = digit { digit } ( "." | ")" ) | "-" | "*" ;
//! action    = "go to" entity
//!           | "look at" entity
//!           | "pick up" entity
//!           | "place" entity "on" entity ;
//! ```
//!
//! Verbs match case-insensitively. Entities are trimmed, lowercased and have
//! runs of whitespace collapsed. At most [`MAX_PLAN_LEN`] parsed actions are
//! kept.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_PLAN_LEN: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "verb", content = "args", rename_all = "snake_case")]
pub enum HighLevelAction {
    GoTo(String),
    LookAt(String),
    PickUp(String),
    Place(String, String),
}

impl fmt::Display for HighLevelAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HighLevelAction::GoTo(e) => write!(f, "go to {e}"),
            HighLevelAction::LookAt(e) => write!(f, "look at {e}"),
            HighLevelAction::PickUp(o) => write!(f, "pick up {o}"),
            HighLevelAction::Place(o, r) => write!(f, "place {o} on {r}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub actions: Vec<HighLevelAction>,
    pub source_text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub fragment: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedPlan {
    pub plan: Plan,
    /// Unparseable fragments that appeared before the truncation point.
    pub skipped: Vec<Skipped>,
}

impl ParsedPlan {
    /// High-level actions the response generated, counting unparseable
    /// fragments as generated but not executable.
    pub fn generated(&self) -> usize {
        self.plan.actions.len() + self.skipped.len()
    }
}

fn normalize_entity(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn strip_numbering(s: &str) -> &str {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix(['-', '*', '•']) {
        return rest.trim_start();
    }
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = s[digits..].strip_prefix(['.', ')']) {
            return rest.trim_start();
        }
    }
    s
}

/// Strips `prefix` case-insensitively when followed by whitespace.
fn strip_verb<'a>(s: &'a str, verb: &str) -> Option<&'a str> {
    let head = s.get(..verb.len())?;
    if !head.eq_ignore_ascii_case(verb) {
        return None;
    }
    let rest = &s[verb.len()..];
    rest.starts_with(char::is_whitespace)
        .then(|| rest.trim_start())
}

fn entity(raw: &str) -> std::result::Result<String, &'static str> {
    let e = normalize_entity(raw);
    if e.is_empty() {
        Err("missing entity")
    } else {
        Ok(e)
    }
}

fn parse_fragment(fragment: &str) -> std::result::Result<HighLevelAction, &'static str> {
    let body = strip_numbering(fragment);
    let body = body.trim_end_matches(['.', '!']).trim();
    let words: Vec<&str> = body.splitn(3, char::is_whitespace).collect();
    let two = |a: &str, b: &str| {
        words.len() >= 2 && words[0].eq_ignore_ascii_case(a) && words[1].eq_ignore_ascii_case(b)
    };
    let tail = || words.get(2).copied().unwrap_or("");
    if two("go", "to") {
        return entity(tail()).map(HighLevelAction::GoTo);
    }
    if two("look", "at") {
        return entity(tail()).map(HighLevelAction::LookAt);
    }
    if two("pick", "up") {
        return entity(tail()).map(HighLevelAction::PickUp);
    }
    if let Some(rest) = strip_verb(body, "place") {
        // The first " on " delimits object and receptacle; names never
        // contain it. The delimiter is ASCII so byte matches are char
        // boundaries.
        let split = rest
            .as_bytes()
            .windows(4)
            .position(|w| w.eq_ignore_ascii_case(b" on "));
        return match split {
            Some(i) => Ok(HighLevelAction::Place(
                entity(&rest[..i])?,
                entity(&rest[i + 4..])?,
            )),
            None => Err("unrecognized verb form"),
        };
    }
    Err("unrecognized verb form")
}

/// Parses planner text into a plan of at most [`MAX_PLAN_LEN`] actions.
/// Returns [`Error::EmptyPlan`] when nothing parses.
pub fn parse_plan(text: &str) -> Result<ParsedPlan> {
    let mut actions = Vec::new();
    let mut skipped = Vec::new();
    for fragment in text.split([',', ';', '\n', '\r']) {
        if actions.len() == MAX_PLAN_LEN {
            break;
        }
        if strip_numbering(fragment)
            .trim_matches(['.', '!', ' ', '\t'])
            .is_empty()
        {
            continue;
        }
        match parse_fragment(fragment) {
            Ok(a) => actions.push(a),
            Err(reason) => skipped.push(Skipped {
                fragment: fragment.trim().to_string(),
                reason: reason.to_string(),
            }),
        }
    }
    if actions.is_empty() {
        return Err(Error::EmptyPlan {
            skipped: skipped.len(),
        });
    }
    Ok(ParsedPlan {
        plan: Plan {
            actions,
            source_text: text.to_string(),
        },
        skipped,
    })
}

/// Parses like [`parse_plan`] but reports an empty plan instead of failing,
/// so callers can still count the skipped fragments.
pub fn parse_plan_lossy(text: &str) -> ParsedPlan {
    parse_plan(text).unwrap_or_else(|_| {
        let skipped = text
            .split([',', ';', '\n', '\r'])
            .filter(|f| {
                !strip_numbering(f)
                    .trim_matches(['.', '!', ' ', '\t'])
                    .is_empty()
            })
            .map(|f| Skipped {
                fragment: f.trim().to_string(),
                reason: "unrecognized verb form".to_string(),
            })
            .collect();
        ParsedPlan {
            plan: Plan {
                actions: Vec::new(),
                source_text: text.to_string(),
            },
            skipped,
        }
    })
}

pub fn render_actions(actions: &[HighLevelAction]) -> String {
    actions
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Canonical lowercase comma-separated text.
pub fn render_plan(plan: &Plan) -> String {
    render_actions(&plan.actions)
}

impl Plan {
    pub fn from_actions(actions: Vec<HighLevelAction>) -> Plan {
        let source_text = render_actions(&actions);
        Plan {
            actions,
            source_text,
        }
    }
}
