//! Prompt templates. Built-in copies of `prompts/*.txt` are compiled in; a
//! directory of same-named files can override any of them.
//!
//! Placeholders are written `{{name}}`. Every template opens with a
//! `### ROLE: <name>` line, which scripted providers match on.

use std::collections::BTreeMap;
use std::path::Path;

use crate::llm::ChatMessage;

const BUILTIN: &[(&str, &str)] = &[
    ("system", include_str!("../prompts/system.txt")),
    ("reasoning", include_str!("../prompts/reasoning.txt")),
    ("enhance", include_str!("../prompts/enhance.txt")),
    ("repair", include_str!("../prompts/repair.txt")),
    ("equivalence", include_str!("../prompts/equivalence.txt")),
    ("decision", include_str!("../prompts/decision.txt")),
    ("hints", include_str!("../prompts/hints.txt")),
    ("consensus", include_str!("../prompts/consensus.txt")),
    ("vote", include_str!("../prompts/vote.txt")),
    ("summarize", include_str!("../prompts/summarize.txt")),
    ("confirm", include_str!("../prompts/confirm.txt")),
    ("classify", include_str!("../prompts/classify.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    templates: BTreeMap<String, String>,
}

impl Default for Prompts {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Prompts {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Built-ins overridden by any `<name>.txt` found in `dir`.
    pub fn with_dir(dir: &Path) -> std::io::Result<Self> {
        let mut p = Self::builtin();
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            if path.is_file() {
                p.templates.insert(name.to_string(), std::fs::read_to_string(path)?);
            }
        }
        Ok(p)
    }

    pub fn raw(&self, name: &str) -> &str {
        self.templates
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unknown prompt template {name}"))
    }

    /// Fills `{{key}}` placeholders. Unknown placeholders are left in place.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        let mut out = self.raw(name).to_string();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }

    /// System message plus the filled template as the user message.
    pub fn messages(&self, name: &str, vars: &[(&str, &str)]) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(self.raw("system").trim()),
            ChatMessage::user(self.render(name, vars)),
        ]
    }
}

/// Names of the placeholders a template uses.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let Some(len) = rest[start + 2..].find("}}") else { break };
        let name = rest[start + 2..start + 2 + len].to_string();
        if !out.contains(&name) {
            out.push(name);
        }
        rest = &rest[start + 2 + len + 2..];
    }
    out
}
