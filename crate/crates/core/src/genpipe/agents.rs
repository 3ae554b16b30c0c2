//! Single-purpose agents over a [`ChatClient`], each with local validation
//! and bounded retries that feed the rejection reason back to the model.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::artifacts::CodeArtifact;
use super::client::{Agent, ChatClient, ChatRequest};
use super::runtime::{check_source, ScriptRole};
use super::schema::{CouplingPlan, ModelSpecification, NodeKind, PlanNode};
use super::templates::template;
use super::PipelineError;
use crate::kernel::is_identifier;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Atomic,
    Coupled(Vec<String>),
    NotSure(Vec<String>),
}

#[derive(Debug, Deserialize)]
struct VerdictReply {
    verdict: String,
    #[serde(default)]
    submodels: Vec<String>,
}

/// One child as drafted by the splitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildDraft {
    pub class_name: String,
    pub function: String,
    #[serde(default)]
    pub ports: String,
    #[serde(default)]
    pub logging: String,
}

impl ChildDraft {
    pub fn requirements(&self) -> String {
        let mut text = self.function.trim().to_string();
        for (title, body) in [("Ports and protocols", &self.ports), ("Logging", &self.logging)] {
            if !body.trim().is_empty() {
                text.push_str(&format!("\n\n{title}:\n{}", body.trim()));
            }
        }
        text
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Split {
    pub interface: ModelSpecification,
    pub children: Vec<ChildDraft>,
    pub coupling: String,
}

/// Pulls one JSON object out of a reply, tolerating code fences and chatter.
pub fn extract_json(reply: &str) -> Result<Value, String> {
    let trimmed = reply.trim();
    let candidates = [
        Some(trimmed),
        fenced(trimmed),
        trimmed
            .find('{')
            .zip(trimmed.rfind('}'))
            .and_then(|(a, b)| trimmed.get(a..=b)),
    ];
    let mut last = "empty reply".to_string();
    for candidate in candidates.into_iter().flatten() {
        match serde_json::from_str::<Value>(candidate) {
            Ok(v @ Value::Object(_)) => return Ok(v),
            Ok(_) => last = "reply is not a JSON object".into(),
            Err(e) => last = format!("reply is not valid JSON: {e}"),
        }
    }
    Err(last)
}

fn fenced(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let body = &text[start + 3..];
    let body = &body[body.find('\n')? + 1..];
    let end = body.find("```")?;
    Some(&body[..end])
}

/// The first fenced block if any, else the whole reply; newline-terminated.
pub fn extract_code(reply: &str) -> String {
    let code = fenced(reply).unwrap_or(reply).trim_matches('\n');
    format!("{}\n", code.trim_end())
}

fn parse<T: for<'de> Deserialize<'de>>(reply: &str) -> Result<T, String> {
    serde_json::from_value(extract_json(reply)?).map_err(|e| format!("reply does not match the schema: {e}"))
}

fn or_none(text: &str) -> &str {
    if text.trim().is_empty() {
        "(none)"
    } else {
        text
    }
}

fn summaries_json(children: &[CodeArtifact]) -> String {
    if children.is_empty() {
        return "(none)".into();
    }
    let list: Vec<Value> = children
        .iter()
        .map(|c| json!({"class_name": c.class_name, "kind": c.kind.as_str(), "interface": c.summary}))
        .collect();
    serde_json::to_string_pretty(&list).expect("serializable")
}

fn spec_problems(spec: &ModelSpecification) -> Result<(), String> {
    let problems = spec.problems();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems.join("; "))
    }
}

pub struct Agents<'a> {
    client: &'a dyn ChatClient,
    max_attempts: usize,
}

impl<'a> Agents<'a> {
    pub fn new(client: &'a dyn ChatClient, max_attempts: usize) -> Self {
        Self {
            client,
            max_attempts: max_attempts.max(1),
        }
    }

    /// Renders, sends and validates, retrying with feedback on rejection.
    fn ask<T>(
        &self,
        agent: Agent,
        path: &str,
        slots: &[(&str, &str)],
        preface: &str,
        mut accept: impl FnMut(&str) -> Result<T, String>,
    ) -> Result<T, PipelineError> {
        let t = template(agent);
        let mut problem = String::new();
        for attempt in 0..self.max_attempts {
            let mut feedback = preface.to_string();
            if attempt > 0 {
                feedback.push_str(&format!(
                    "\nYour previous reply was rejected: {problem}\nSend a corrected reply."
                ));
            }
            let mut values = slots.to_vec();
            values.push(("feedback", &feedback));
            let rendered = t.render(&values).map_err(|message| PipelineError::Template {
                path: path.to_string(),
                message,
            })?;
            let request = ChatRequest {
                agent,
                node: path.to_string(),
                system: rendered.system,
                schema_hint: rendered.schema,
                prompt: rendered.prompt,
            };
            let reply = self.client.send(&request).map_err(|source| PipelineError::Client {
                path: path.to_string(),
                agent,
                source,
            })?;
            match accept(&reply) {
                Ok(value) => return Ok(value),
                Err(e) => problem = e,
            }
        }
        Err(PipelineError::Rejected {
            path: path.to_string(),
            agent,
            attempts: self.max_attempts,
            problem,
        })
    }

    fn classify_once(&self, path: &str, name: &str, req: &str, context: &str) -> Result<Verdict, PipelineError> {
        self.ask(
            Agent::Classify,
            path,
            &[("name", name), ("req", req), ("context_str", or_none(context))],
            "",
            |reply| {
                let r: VerdictReply = parse(reply)?;
                let key: String = r
                    .verdict
                    .to_lowercase()
                    .chars()
                    .filter(char::is_ascii_alphabetic)
                    .collect();
                match key.as_str() {
                    "atomic" => Ok(Verdict::Atomic),
                    "coupled" => Ok(Verdict::Coupled(r.submodels)),
                    "notsure" => Ok(Verdict::NotSure(r.submodels)),
                    _ => Err(format!("verdict {:?} is not atomic, coupled or notsure", r.verdict)),
                }
            },
        )
    }

    /// Atomic or coupled; an undecided answer is asked once more with the
    /// hint added to the context and then treated as coupled.
    pub fn classify(&self, path: &str, name: &str, req: &str, context: &str) -> Result<Verdict, PipelineError> {
        if req.trim().is_empty() {
            return Err(PipelineError::EmptyInput {
                path: path.to_string(),
                what: "requirements",
            });
        }
        let hint = match self.classify_once(path, name, req, context)? {
            Verdict::NotSure(hint) => hint,
            decided => return Ok(decided),
        };
        let augmented = format!(
            "{}\n\nAn earlier assessment of {name} was undecided. Candidate parts: {}. Choose atomic or coupled.",
            context.trim(),
            or_none(&hint.join(", "))
        );
        Ok(match self.classify_once(path, name, req, augmented.trim())? {
            Verdict::NotSure(again) => Verdict::Coupled(if again.is_empty() { hint } else { again }),
            decided => decided,
        })
    }

    pub fn split(
        &self,
        path: &str,
        name: &str,
        req: &str,
        context: &str,
        hint: &[String],
        preface: &str,
    ) -> Result<Split, PipelineError> {
        let hint = hint.join(", ");
        self.ask(
            Agent::Split,
            path,
            &[
                ("name", name),
                ("req", req),
                ("submodels", or_none(&hint)),
                ("context_str", or_none(context)),
            ],
            preface,
            |reply| {
                let split: Split = parse(reply)?;
                validate_split(name, &split)?;
                Ok(split)
            },
        )
    }

    pub fn formulate(
        &self,
        path: &str,
        name: &str,
        req: &str,
        context: &str,
    ) -> Result<ModelSpecification, PipelineError> {
        self.ask(
            Agent::Formulate,
            path,
            &[("name", name), ("req", req), ("context_str", or_none(context))],
            "",
            |reply| {
                let spec: ModelSpecification = parse(reply)?;
                spec_problems(&spec)?;
                Ok(spec)
            },
        )
    }

    /// Interface actually implemented by `source`.
    pub fn summarize(
        &self,
        path: &str,
        name: &str,
        kind: NodeKind,
        source: &str,
        children: &[CodeArtifact],
    ) -> Result<ModelSpecification, PipelineError> {
        if source.trim().is_empty() {
            return Err(PipelineError::EmptyInput {
                path: path.to_string(),
                what: "source",
            });
        }
        let children = summaries_json(children);
        self.ask(
            Agent::Summarize,
            path,
            &[
                ("name", name),
                ("kind", kind.as_str()),
                ("code", source),
                ("children_summaries", &children),
            ],
            "",
            |reply| {
                let spec: ModelSpecification = parse(reply)?;
                spec_problems(&spec)?;
                let missing: Vec<&str> = spec.port_names().filter(|p| !source.contains(p)).collect();
                if !missing.is_empty() {
                    return Err(format!("ports {missing:?} do not appear in the source"));
                }
                Ok(spec)
            },
        )
    }

    /// Script for `node`, conditioned on its children's extracted summaries.
    pub fn create_code(
        &self,
        path: &str,
        node: &PlanNode,
        children: &[CodeArtifact],
        contract: &str,
    ) -> Result<String, PipelineError> {
        let spec = serde_json::to_string_pretty(&node.spec).expect("serializable");
        let accept = |reply: &str| {
            let code = extract_code(reply);
            check_source(node.kind.into(), &code)?;
            if let Some(child) = children.iter().find(|c| !code.contains(&c.class_name)) {
                return Err(format!("child class {} is not used", child.class_name));
            }
            Ok(code)
        };
        match node.kind {
            NodeKind::Atomic => self.ask(
                Agent::CreateAtomic,
                path,
                &[("name", &node.class_name), ("spec_json", &spec), ("contract", contract)],
                "",
                accept,
            ),
            NodeKind::Coupled => {
                let coupling = node.coupling_specification.clone().unwrap_or_default();
                let summaries = summaries_json(children);
                self.ask(
                    Agent::CreateCoupled,
                    path,
                    &[
                        ("name", &node.class_name),
                        ("spec_json", &spec),
                        ("coupling", &coupling),
                        ("children_summaries", &summaries),
                        ("contract", contract),
                    ],
                    "",
                    accept,
                )
            }
        }
    }

    pub fn create_controller(
        &self,
        path: &str,
        root: &str,
        summary: &ModelSpecification,
        contract: &str,
    ) -> Result<String, PipelineError> {
        let summary = serde_json::to_string_pretty(summary).expect("serializable");
        self.ask(
            Agent::CreateController,
            path,
            &[("name", root), ("root_summary", &summary), ("contract", contract)],
            "",
            |reply| {
                let code = extract_code(reply);
                check_source(ScriptRole::Controller, &code)?;
                if !code.contains(root) {
                    return Err(format!("controller never names the top model {root}"));
                }
                Ok(code)
            },
        )
    }
}

fn validate_split(parent: &str, split: &Split) -> Result<(), String> {
    if split.children.len() < 2 {
        return Err(format!(
            "a coupled model needs at least 2 children, got {}",
            split.children.len()
        ));
    }
    let mut seen: Vec<&str> = vec![parent];
    for child in &split.children {
        if !is_identifier(&child.class_name) {
            return Err(format!("class name {:?} is not an identifier", child.class_name));
        }
        if seen.contains(&child.class_name.as_str()) {
            return Err(format!("class name {} is used twice", child.class_name));
        }
        seen.push(&child.class_name);
        if child.function.trim().is_empty() {
            return Err(format!("child {} has no function", child.class_name));
        }
    }
    spec_problems(&split.interface)?;
    let plan = CouplingPlan::parse(&split.coupling)?;
    for inst in &plan.instances {
        if !split.children.iter().any(|c| c.class_name == inst.class) {
            return Err(format!("instance {} names unknown class {}", inst.name, inst.class));
        }
    }
    if let Some(unused) = split
        .children
        .iter()
        .find(|c| !plan.instances.iter().any(|i| i.class == c.class_name))
    {
        return Err(format!("child {} is never instantiated", unused.class_name));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::genpipe::client::{ClientError, ScriptedClient};

    fn scripted(reply: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> ScriptedClient {
        ScriptedClient::new(move |r| Ok(reply(r)))
    }

    const QUEUE_SPEC: &str = r#"{
        "function": "Holds jobs and releases each one a fixed delay after it arrives, first in first out.",
        "logging": {"detailed": [{"event": "released", "fields": {"id": "job id"}}], "general": ""},
        "model_init_args": [{"name": "delay", "type": "float", "structure": "seconds"}],
        "input_ports": [{"name": "in_job", "type": "dict", "structure": "keys: id (int), size (float)"}],
        "output_ports": [{"name": "out_job", "type": "dict", "structure": "same keys as in_job"}]
    }"#;

    #[test]
    fn fixed_delay_queue_is_atomic() {
        let client = scripted(|_| r#"{"verdict": "atomic", "reason": "one FIFO with a timer"}"#.into());
        let v = Agents::new(&client, 3)
            .classify("Q", "Queue", "fixed-delay FIFO queue", "")
            .unwrap();
        assert_eq!(v, Verdict::Atomic);
    }

    #[test]
    fn four_part_system_is_coupled() {
        let client = scripted(|_| {
            "```json\n{\"verdict\": \"coupled\", \"submodels\": [\"Sender\", \"Receiver\", \"ForwardChannel\", \"BackwardChannel\"]}\n```".into()
        });
        let v = Agents::new(&client, 3)
            .classify("S", "System", "system with Sender, Receiver, two channels", "")
            .unwrap();
        match v {
            Verdict::Coupled(parts) => assert_eq!(parts.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_requirements_are_a_precondition_error() {
        let client = scripted(|_| unreachable!("no request expected"));
        let err = Agents::new(&client, 3).classify("Root/X", "X", "  ", "").unwrap_err();
        assert!(matches!(err, PipelineError::EmptyInput { .. }));
        assert_eq!(err.path(), "Root/X");
    }

    #[test]
    fn notsure_is_asked_again_then_becomes_coupled() {
        let calls = Arc::new(AtomicUsize::new(0));
        let seen = calls.clone();
        let client = ScriptedClient::new(move |r| {
            let n = seen.fetch_add(1, Ordering::SeqCst);
            if n == 1 {
                assert!(r.prompt.contains("undecided"), "second ask carries the hint");
            }
            Ok(r#"{"verdict": "notsure", "submodels": ["A", "B"]}"#.into())
        });
        let v = Agents::new(&client, 3).classify("N", "N", "something", "").unwrap();
        assert_eq!(v, Verdict::Coupled(vec!["A".into(), "B".into()]));
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn formulated_queue_has_structured_dict_port() {
        let client = scripted(|_| QUEUE_SPEC.into());
        let spec = Agents::new(&client, 3)
            .formulate("Q", "Queue", "fixed-delay FIFO queue", "")
            .unwrap();
        let port = &spec.input_ports[0];
        assert_eq!(port.name, "in_job");
        assert!(port.kind.is_container() && port.structure.contains("id"));
    }

    #[test]
    fn rejected_replies_are_retried_with_feedback_up_to_the_bound() {
        let prompts = Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = prompts.clone();
        let client = ScriptedClient::new(move |r| {
            log.lock().unwrap().push(r.prompt.clone());
            Ok(QUEUE_SPEC.replace("\"dict\"", "\"tuple\""))
        });
        let err = Agents::new(&client, 3)
            .formulate("Q", "Queue", "queue", "")
            .unwrap_err();
        assert!(matches!(err, PipelineError::Rejected { attempts: 3, .. }), "{err}");
        let prompts = prompts.lock().unwrap();
        assert_eq!(prompts.len(), 3);
        assert!(!prompts[0].contains("rejected"));
        assert!(prompts[1].contains("rejected") && prompts[1].contains("tuple"));
    }

    #[test]
    fn missing_logging_is_a_schema_error() {
        let client = scripted(|_| r#"{"function": "f", "input_ports": []}"#.into());
        let err = Agents::new(&client, 1)
            .formulate("Q", "Queue", "queue", "")
            .unwrap_err();
        match err {
            PipelineError::Rejected { problem, .. } => assert!(problem.contains("logging"), "{problem}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn client_failures_carry_the_node_path() {
        let client = ScriptedClient::new(|_| Err(ClientError::Transport("down".into())));
        let err = Agents::new(&client, 3)
            .classify("Root/Leaf", "Leaf", "x", "")
            .unwrap_err();
        assert_eq!(err.path(), "Root/Leaf");
        assert!(err.to_string().contains("down"));
    }

    fn split_reply(children: &[&str], coupling: &str) -> String {
        let children: Vec<Value> = children
            .iter()
            .map(|c| json!({"class_name": c, "function": format!("{c} part")}))
            .collect();
        json!({
            "interface": {"function": "whole", "logging": {"detailed": [], "general": ""}},
            "children": children,
            "coupling": coupling,
        })
        .to_string()
    }

    #[test]
    fn split_rejects_single_and_colliding_children() {
        for bad in [
            split_reply(&["Only"], "instance o: Only"),
            split_reply(&["Same", "Same"], "instance a: Same\ninstance b: Same"),
            split_reply(&["A", "B"], "instance a: A\ninstance r: Router"),
        ] {
            let client = scripted(move |_| bad.clone());
            let err = Agents::new(&client, 2).split("P", "P", "req", "", &[], "").unwrap_err();
            assert!(matches!(err, PipelineError::Rejected { attempts: 2, .. }), "{err}");
        }
        let good = split_reply(
            &["A", "B"],
            "instance a: A\ninstance b1: B\ninstance b2: B\nwire a.out -> b1.in",
        );
        let client = scripted(move |_| good.clone());
        let split = Agents::new(&client, 1).split("P", "P", "req", "", &[], "").unwrap();
        assert_eq!(split.children.len(), 2);
    }

    const ACK_SOURCE: &str = r#"
        // Inputs: in_ack (dict: {bit: int}) acknowledgement from the channel.
        fn ports() { #{ inputs: ["in_ack"], outputs: [] } }
    "#;

    #[test]
    fn summary_echoes_ports_present_in_source() {
        let client = scripted(|r| {
            assert!(r.prompt.contains("in_ack (dict"));
            json!({
                "function": "consumes acknowledgements",
                "logging": {"detailed": [], "general": ""},
                "input_ports": [{"name": "in_ack", "type": "dict", "structure": "{bit: int}"}],
            })
            .to_string()
        });
        let s = Agents::new(&client, 1)
            .summarize("S", "S", NodeKind::Atomic, ACK_SOURCE, &[])
            .unwrap();
        assert_eq!(s.input_ports[0].name, "in_ack");
        assert_eq!(s.input_ports[0].structure, "{bit: int}");
    }

    #[test]
    fn summary_of_portless_source_and_invented_ports() {
        let empty = r#"{"function": "nothing", "logging": {"detailed": [], "general": ""}}"#;
        let client = scripted(move |_| empty.into());
        let s = Agents::new(&client, 1)
            .summarize("S", "S", NodeKind::Atomic, "fn x() {}", &[])
            .unwrap();
        assert!(s.input_ports.is_empty() && s.output_ports.is_empty());

        let invented = r#"{"function": "f", "logging": {"detailed": [], "general": ""},
            "output_ports": [{"name": "out_ghost", "type": "int"}]}"#;
        let client = scripted(move |_| invented.into());
        let err = Agents::new(&client, 2)
            .summarize("S", "S", NodeKind::Atomic, ACK_SOURCE, &[])
            .unwrap_err();
        assert!(err.to_string().contains("out_ghost"), "{err}");

        let client = scripted(|_| "no json here".into());
        assert!(Agents::new(&client, 1)
            .summarize("S", "S", NodeKind::Atomic, ACK_SOURCE, &[])
            .is_err());
    }

    #[test]
    fn extraction_tolerates_fences_and_chatter() {
        assert_eq!(extract_json("Sure!\n```json\n{\"a\": 1}\n```\nDone").unwrap()["a"], 1);
        assert_eq!(extract_json("here: {\"a\": {\"b\": 2}} ok").unwrap()["a"]["b"], 2);
        assert!(extract_json("[1, 2]").is_err());
        assert_eq!(extract_code("text\n```rhai\nfn f() {}\n```\nmore"), "fn f() {}\n");
        assert_eq!(extract_code("fn f() {}"), "fn f() {}\n");
    }
}
