//! Versioned prompt templates with `{slot}` placeholders.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use super::client::Agent;

pub const TEMPLATE_VERSION: &str = "v1";

const SOURCES: [(Agent, &str); 7] = [
    (Agent::Classify, include_str!("../../templates/v1/classify.txt")),
    (Agent::Split, include_str!("../../templates/v1/split.txt")),
    (Agent::Formulate, include_str!("../../templates/v1/formulate.txt")),
    (Agent::Summarize, include_str!("../../templates/v1/summarize.txt")),
    (
        Agent::CreateAtomic,
        include_str!("../../templates/v1/create_atomic.txt"),
    ),
    (
        Agent::CreateCoupled,
        include_str!("../../templates/v1/create_coupled.txt"),
    ),
    (
        Agent::CreateController,
        include_str!("../../templates/v1/create_controller.txt"),
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub system: String,
    pub schema: String,
    pub prompt: String,
}

/// Rendered system text, schema hint and user prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub system: String,
    pub schema: String,
    pub prompt: String,
}

fn slot_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("slot regex"))
}

impl Template {
    /// Splits `=== system ===`, `=== schema ===` and `=== prompt ===` sections.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut current = None;
        for line in text.lines() {
            let header = line.strip_prefix("=== ").and_then(|l| l.strip_suffix(" ==="));
            match header {
                Some(name) => {
                    if sections.insert(name, Vec::new()).is_some() {
                        return Err(format!("section {name} repeated"));
                    }
                    current = Some(name);
                }
                None => match current {
                    Some(name) => sections.get_mut(name).expect("open section").push(line),
                    None if line.trim().is_empty() => {}
                    None => return Err("text before the first section".into()),
                },
            }
        }
        let mut take = |name: &str| {
            sections
                .remove(name)
                .map(|lines| lines.join("\n").trim().to_string())
                .ok_or_else(|| format!("missing section {name}"))
        };
        let template = Self {
            system: take("system")?,
            schema: take("schema")?,
            prompt: take("prompt")?,
        };
        if let Some(extra) = sections.keys().next() {
            return Err(format!("unknown section {extra}"));
        }
        Ok(template)
    }

    /// Slot names used by the prompt, in first-use order.
    pub fn slots(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for cap in slot_pattern().captures_iter(&self.prompt) {
            let name = cap.get(1).expect("group").as_str();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    /// Fills every slot in one pass; slot values are not re-expanded.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<Rendered, String> {
        if let Some(missing) = self.slots().into_iter().find(|s| !values.iter().any(|(k, _)| k == s)) {
            return Err(format!("no value for slot {{{missing}}}"));
        }
        let prompt = slot_pattern().replace_all(&self.prompt, |cap: &regex::Captures<'_>| {
            let name = &cap[1];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| v.to_string())
                .unwrap_or_default()
        });
        Ok(Rendered {
            system: self.system.clone(),
            schema: self.schema.clone(),
            prompt: prompt.trim_end().to_string(),
        })
    }
}

/// The bundled template set for [`TEMPLATE_VERSION`].
pub fn template(agent: Agent) -> &'static Template {
    static SET: OnceLock<BTreeMap<Agent, Template>> = OnceLock::new();
    SET.get_or_init(|| {
        SOURCES
            .iter()
            .map(|(agent, text)| {
                let t = Template::parse(text).unwrap_or_else(|e| panic!("template {agent}: {e}"));
                (*agent, t)
            })
            .collect()
    })
    .get(&agent)
    .expect("every agent has a template")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_templates_parse_and_take_feedback() {
        for agent in Agent::ALL {
            let t = template(agent);
            assert!(!t.system.is_empty(), "{agent}");
            assert!(t.slots().contains(&"name"), "{agent}");
            assert!(t.slots().contains(&"feedback"), "{agent}");
            assert_eq!(t.schema.is_empty(), !agent.wants_json(), "{agent}");
        }
        assert_eq!(
            template(Agent::Classify).slots(),
            ["name", "req", "context_str", "feedback"]
        );
    }

    #[test]
    fn render_fills_slots_once_and_rejects_missing() {
        let t = Template::parse("=== system ===\ns\n=== schema ===\n=== prompt ===\n{a} and {b} {\"k\": 1}\n").unwrap();
        let r = t.render(&[("a", "{b}"), ("b", "B")]).unwrap();
        assert_eq!(r.prompt, "{b} and B {\"k\": 1}");
        assert!(t.render(&[("a", "x")]).unwrap_err().contains("{b}"));
    }

    #[test]
    fn malformed_templates_are_rejected() {
        assert!(Template::parse("=== system ===\nx\n=== prompt ===\ny").is_err());
        assert!(Template::parse("preamble\n=== system ===").is_err());
    }
}
