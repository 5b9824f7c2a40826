//! Content packs: the TOML document holding every student-facing string,
//! the coach scripts, quiz banks and survey statements.
//!
//! The schema is documented in `content/README.md`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::progress::Stage;
use super::quiz::{Category, QuizQuestion, QUIZ_LEN};
use super::readability;
use crate::coach::CoachContent;
use crate::crypto::Message;
use crate::scenario::{Lab, ModuleId, Narrative, StudentInput};

pub const DEFAULT_READABILITY_BOUND: f64 = 8.0;

const BUILTIN: &str = include_str!("../../content/default-pack.toml");

fn default_bound() -> f64 {
    DEFAULT_READABILITY_BOUND
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentPack {
    #[serde(default = "default_bound")]
    pub readability_bound: f64,
    pub modules: Vec<ModulePack>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Video {
    pub url: String,
    pub transcript: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionText {
    pub option: u8,
    pub label: String,
    pub explanation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulePack {
    pub id: ModuleId,
    pub title: String,
    pub story: String,
    pub attacker_text: Message,
    pub default_input: StudentInput,
    /// Short introduction shown when each stage opens.
    pub stages: BTreeMap<Stage, String>,
    pub videos: Vec<Video>,
    pub options: Vec<OptionText>,
    pub coach: CoachContent,
    pub quiz: Vec<QuizQuestion>,
    #[serde(default)]
    pub survey: Vec<String>,
}

#[derive(Debug, Error)]
pub enum PackError {
    #[error("cannot read content pack: {0}")]
    Io(#[from] std::io::Error),
    #[error("content pack does not parse: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MissingStage,
    QuizCardinality,
    Readability,
    UnresolvedReference,
    Structure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub module: Option<ModuleId>,
    pub location: String,
    pub kind: ViolationKind,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.module {
            Some(m) => write!(f, "{m}/{}: {}", self.location, self.message),
            None => write!(f, "{}: {}", self.location, self.message),
        }
    }
}

impl ContentPack {
    pub fn from_toml(text: &str) -> Result<Self, PackError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, PackError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The pack bundled with the crate.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN).expect("bundled pack parses")
    }

    pub fn module(&self, id: ModuleId) -> Option<&ModulePack> {
        self.modules.iter().find(|m| m.id == id)
    }

    pub fn narrative(&self, id: ModuleId) -> Option<Narrative> {
        self.module(id).map(|m| Narrative {
            attacker_text: m.attacker_text.clone(),
            story: m.story.clone(),
            video_url: m.videos.first().map(|v| v.url.clone()),
        })
    }

    /// A scenario runner using this pack's narratives.
    pub fn lab(&self) -> Lab {
        Lab::new(ModuleId::ALL.into_iter().filter_map(|m| Some((m, self.narrative(m)?))).collect())
    }
}

/// Drops `{placeholders}` and URLs before grading text.
pub fn gradeable(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0;
    for c in text.chars() {
        match c {
            '{' => depth += 1,
            '}' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out.split_whitespace()
        .filter(|w| !(w.starts_with("http://") || w.starts_with("https://")))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Joins short strings into one passage, ending each with a period if it
/// has no terminator of its own.
fn passage<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    parts
        .into_iter()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            if p.ends_with(['.', '!', '?']) {
                p.to_owned()
            } else {
                format!("{p}.")
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Every student-facing passage in a module, with where it lives.
pub fn passages(m: &ModulePack) -> Vec<(String, String)> {
    let mut out = vec![
        ("story".to_owned(), passage([m.title.as_str(), m.story.as_str()])),
        ("attacker_text".to_owned(), m.attacker_text.as_str().to_owned()),
    ];
    for (stage, text) in &m.stages {
        out.push((format!("stages.{}", stage.as_str()), text.clone()));
    }
    for (i, v) in m.videos.iter().enumerate() {
        out.push((format!("videos[{i}].transcript"), v.transcript.clone()));
    }
    for o in &m.options {
        out.push((
            format!("options[{}]", o.option),
            passage([o.label.as_str(), o.explanation.as_str()]),
        ));
    }
    let p = &m.coach.profile;
    out.push(("coach.profile.system_prompt".into(), p.system_prompt.clone()));
    out.push(("coach.profile.opening_question_template".into(), p.opening_question_template.clone()));
    out.push(("coach.script.reprompt".into(), m.coach.script.reprompt.clone()));
    for n in &m.coach.script.nodes {
        out.push((format!("coach.script.nodes.{}", n.id), n.text.clone()));
    }
    for q in &m.quiz {
        let parts = std::iter::once(q.text.as_str()).chain(q.choices.iter().map(String::as_str));
        out.push((format!("quiz.{}", q.id), passage(parts)));
    }
    for (i, s) in m.survey.iter().enumerate() {
        out.push((format!("survey[{i}]"), s.clone()));
    }
    out
}

/// Checks stage coverage, quiz shape, readability and references. An empty
/// list means the pack is usable.
pub fn validate_content_pack(pack: &ContentPack) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |module: Option<ModuleId>, location: &str, kind, message: String| {
        out.push(Violation {
            module,
            location: location.to_owned(),
            kind,
            message,
        })
    };

    if !(pack.readability_bound.is_finite()) {
        push(None, "readability_bound", ViolationKind::Structure, "must be a number".into());
    }
    for id in ModuleId::ALL {
        let n = pack.modules.iter().filter(|m| m.id == id).count();
        if n != 1 {
            push(Some(id), "modules", ViolationKind::Structure, format!("expected one module, found {n}"));
        }
    }

    for m in &pack.modules {
        let here = Some(m.id);
        for stage in Stage::ORDER {
            if m.stages.get(&stage).is_none_or(|t| t.trim().is_empty()) {
                push(
                    here,
                    &format!("stages.{}", stage.as_str()),
                    ViolationKind::MissingStage,
                    format!("no introduction for the {} stage", stage.as_str()),
                );
            }
        }
        if m.videos.is_empty() {
            push(here, "videos", ViolationKind::MissingStage, "the experience stage needs a video".into());
        }
        if m.coach.script.nodes.is_empty() {
            push(here, "coach.script", ViolationKind::MissingStage, "the reflection stage needs a script".into());
        }

        // quiz shape
        if m.quiz.len() != QUIZ_LEN {
            push(
                here,
                "quiz",
                ViolationKind::QuizCardinality,
                format!("expected {QUIZ_LEN} questions, found {}", m.quiz.len()),
            );
        }
        for cat in Category::ALL {
            let n = m.quiz.iter().filter(|q| q.category == cat).count();
            if n != cat.quota() {
                push(
                    here,
                    "quiz",
                    ViolationKind::QuizCardinality,
                    format!("expected {} {cat:?} questions, found {n}", cat.quota()),
                );
            }
        }
        for q in &m.quiz {
            if !(2..=6).contains(&q.choices.len()) {
                push(
                    here,
                    &format!("quiz.{}", q.id),
                    ViolationKind::Structure,
                    format!("needs 2 to 6 choices, has {}", q.choices.len()),
                );
            }
            if q.correct_index >= q.choices.len() {
                push(
                    here,
                    &format!("quiz.{}", q.id),
                    ViolationKind::UnresolvedReference,
                    format!("correct_index {} is not a choice", q.correct_index),
                );
            }
        }
        let mut ids: Vec<&str> = m.quiz.iter().map(|q| q.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            push(here, "quiz", ViolationKind::Structure, "question ids repeat".into());
        }

        // references
        let mut opts: Vec<u8> = m.options.iter().map(|o| o.option).collect();
        opts.sort_unstable();
        if opts != [1, 2, 3] {
            push(
                here,
                "options",
                ViolationKind::UnresolvedReference,
                format!("options must be exactly 1, 2 and 3, found {opts:?}"),
            );
        }
        for (i, v) in m.videos.iter().enumerate() {
            if !(v.url.starts_with("https://") || v.url.starts_with("http://")) {
                push(
                    here,
                    &format!("videos[{i}].url"),
                    ViolationKind::UnresolvedReference,
                    format!("{:?} is not an http(s) URL", v.url),
                );
            }
        }
        let input_ok = matches!(
            (&m.default_input, m.id.takes_credentials()),
            (StudentInput::Credentials(_), true) | (StudentInput::Message(_), false)
        );
        if !input_ok {
            push(
                here,
                "default_input",
                ViolationKind::UnresolvedReference,
                "default input does not fit this module".into(),
            );
        }
        for p in m.coach.script.problems() {
            push(here, "coach.script", ViolationKind::UnresolvedReference, p);
        }
        let tpl = &m.coach.profile.opening_question_template;
        if !tpl.contains("{attack}") {
            push(
                here,
                "coach.profile.opening_question_template",
                ViolationKind::UnresolvedReference,
                "must mention {attack}".into(),
            );
        }
        if !tpl.trim_end().ends_with('?') {
            push(
                here,
                "coach.profile.opening_question_template",
                ViolationKind::Structure,
                "must end with a question".into(),
            );
        }
        if m.coach.profile.max_reply_sentences == 0 {
            push(here, "coach.profile.max_reply_sentences", ViolationKind::Structure, "must be at least 1".into());
        }

        for (location, text) in passages(m) {
            match readability::readability_grade(&gradeable(&text)) {
                Ok(g) if g > pack.readability_bound => push(
                    here,
                    &location,
                    ViolationKind::Readability,
                    format!("grade {g:.2} is above {:.1}", pack.readability_bound),
                ),
                Ok(_) => {}
                Err(_) => push(here, &location, ViolationKind::Structure, "text is empty".into()),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_pack_is_clean() {
        let v = validate_content_pack(&ContentPack::builtin());
        assert!(v.is_empty(), "{}", v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"));
    }

    #[test]
    fn missing_security_question() {
        let mut pack = ContentPack::builtin();
        let m = &mut pack.modules[0];
        let i = m.quiz.iter().position(|q| q.category == Category::Security).unwrap();
        m.quiz.remove(i);
        let v = validate_content_pack(&pack);
        assert!(v
            .iter()
            .any(|v| v.kind == ViolationKind::QuizCardinality && v.message.contains("Security")));
    }

    #[test]
    fn dense_paragraph_fails_readability() {
        let dense = "Cryptographic authentication mechanisms fundamentally necessitate \
                     computationally infeasible preimage resistance characteristics, \
                     guaranteeing unforgeability against adaptively chosen adversarial manipulation.";
        assert!(readability::readability_grade(dense).unwrap() > 12.0);
        let mut pack = ContentPack::builtin();
        pack.modules[1].story = dense.into();
        let v = validate_content_pack(&pack);
        assert!(v
            .iter()
            .any(|v| v.kind == ViolationKind::Readability && v.location == "story"));
    }

    #[test]
    fn missing_stage_and_bad_option() {
        let mut pack = ContentPack::builtin();
        pack.modules[2].stages.remove(&Stage::Experimentation);
        pack.modules[2].options.pop();
        let v = validate_content_pack(&pack);
        assert!(v.iter().any(|v| v.kind == ViolationKind::MissingStage));
        assert!(v.iter().any(|v| v.kind == ViolationKind::UnresolvedReference && v.location == "options"));
    }

    #[test]
    fn placeholders_and_urls_are_not_graded() {
        assert_eq!(gradeable("See {attack} at https://example.org/x now."), "See at now.");
    }

    #[test]
    fn pack_round_trips_through_toml() {
        let pack = ContentPack::builtin();
        let text = toml::to_string(&pack).unwrap();
        assert_eq!(ContentPack::from_toml(&text).unwrap(), pack);
    }
}
