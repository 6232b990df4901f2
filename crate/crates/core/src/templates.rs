//! Versioned prompt templates. Runs record the versions they used.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub name: &'static str,
    pub version: u32,
    pub text: &'static str,
}

impl Template {
    /// Substitutes `{key}` placeholders.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.text.trim_end().to_string();
        for (key, value) in vars {
            out = out.replace(&format!("{{{key}}}"), value);
        }
        out
    }
}

pub const CHIEF_PROMPT: Template = Template {
    name: "chief_prompt",
    version: 1,
    text: include_str!("../resources/chief_prompt.v1.txt"),
};

pub const SCORER_RUBRIC: Template = Template {
    name: "scorer_rubric",
    version: 1,
    text: include_str!("../resources/scorer_rubric.v1.txt"),
};

pub const SCORER_REPROMPT: Template = Template {
    name: "scorer_reprompt",
    version: 1,
    text: include_str!("../resources/scorer_reprompt.v1.txt"),
};

pub const ANCHOR_PERSONA: Template = Template {
    name: "anchor_persona",
    version: 1,
    text: include_str!("../resources/anchor_persona.v1.txt"),
};

pub const JUDGE_SIMILARITY: Template = Template {
    name: "judge_similarity",
    version: 1,
    text: include_str!("../resources/judge_similarity.v1.txt"),
};

pub const JUDGE_REPROMPT: Template = Template {
    name: "judge_reprompt",
    version: 1,
    text: include_str!("../resources/judge_reprompt.v1.txt"),
};

pub fn versions(templates: &[Template]) -> BTreeMap<String, u32> {
    templates
        .iter()
        .map(|t| (t.name.to_string(), t.version))
        .collect()
}
