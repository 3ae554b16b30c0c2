//! Plan tree types, their local checks and the whole-tree `validate_plan`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kernel::is_identifier;

/// Init-arg names the runtime keeps for itself.
pub const RESERVED_ARGS: &[&str] = &["this", "self", "phase", "next", "now"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Int,
    Float,
    Bool,
    Str,
    Dict,
    List,
}

impl EntityType {
    pub fn is_container(self) -> bool {
        matches!(self, EntityType::Dict | EntityType::List)
    }
}

/// An init argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedEntity {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: EntityType,
    #[serde(default)]
    pub structure: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub initial_state: String,
    #[serde(default)]
    pub initial_signal: String,
}

/// An input or output port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortEntity {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: EntityType,
    #[serde(default)]
    pub structure: String,
    #[serde(default)]
    pub protocol: Protocol,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub event: String,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
    #[serde(default)]
    pub extra_info: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogContent {
    #[serde(default)]
    pub detailed: Vec<LogEntry>,
    #[serde(default)]
    pub general: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpecification {
    pub function: String,
    pub logging: LogContent,
    #[serde(default)]
    pub model_init_args: Vec<TypedEntity>,
    #[serde(default)]
    pub input_ports: Vec<PortEntity>,
    #[serde(default)]
    pub output_ports: Vec<PortEntity>,
}

impl ModelSpecification {
    pub fn port_names(&self) -> impl Iterator<Item = &str> {
        self.input_ports
            .iter()
            .chain(&self.output_ports)
            .map(|p| p.name.as_str())
    }

    /// Local invariant violations, empty when the spec is well formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.function.trim().is_empty() {
            out.push("function is empty".to_string());
        }
        let mut seen = BTreeSet::new();
        for arg in &self.model_init_args {
            check_entity(&mut out, "init arg", &arg.name, arg.kind, &arg.structure);
            if RESERVED_ARGS.contains(&arg.name.as_str()) {
                out.push(format!("init arg {:?} is reserved", arg.name));
            }
            if !seen.insert(arg.name.as_str()) {
                out.push(format!("init arg {:?} declared twice", arg.name));
            }
        }
        for (direction, ports) in [("input", &self.input_ports), ("output", &self.output_ports)] {
            let mut seen = BTreeSet::new();
            for port in ports {
                check_entity(
                    &mut out,
                    &format!("{direction} port"),
                    &port.name,
                    port.kind,
                    &port.structure,
                );
                if !seen.insert(port.name.as_str()) {
                    out.push(format!("{direction} port {:?} declared twice", port.name));
                }
            }
        }
        for entry in &self.logging.detailed {
            if entry.event.trim().is_empty() {
                out.push("log entry without an event name".to_string());
            }
            if entry.fields.keys().any(|k| k.trim().is_empty()) {
                out.push(format!("log entry {:?} has an empty key", entry.event));
            }
        }
        out
    }
}

fn check_entity(out: &mut Vec<String>, what: &str, name: &str, kind: EntityType, structure: &str) {
    if !is_identifier(name) {
        out.push(format!("{what} {name:?} is not an identifier"));
    }
    if kind.is_container() && structure.trim().is_empty() {
        out.push(format!("{what} {name:?} is a {kind:?} without a structure"));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Atomic,
    Coupled,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Atomic => "atomic",
            NodeKind::Coupled => "coupled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub class_name: String,
    pub kind: NodeKind,
    pub spec: ModelSpecification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_specification: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    pub fn atomic(class_name: impl Into<String>, spec: ModelSpecification) -> Self {
        Self {
            class_name: class_name.into(),
            kind: NodeKind::Atomic,
            spec,
            coupling_specification: None,
            children: Vec::new(),
        }
    }

    pub fn coupled(
        class_name: impl Into<String>,
        spec: ModelSpecification,
        coupling: impl Into<String>,
        children: Vec<PlanNode>,
    ) -> Self {
        Self {
            class_name: class_name.into(),
            kind: NodeKind::Coupled,
            spec,
            coupling_specification: Some(coupling.into()),
            children,
        }
    }

    /// Levels from this node down to its deepest leaf; a lone node has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(PlanNode::depth).max().unwrap_or(0)
    }

    pub fn leaf_count(&self) -> usize {
        if self.children.is_empty() {
            1
        } else {
            self.children.iter().map(PlanNode::leaf_count).sum()
        }
    }

    /// Pre-order walk with slash-separated paths.
    pub fn walk(&self) -> Vec<(String, &PlanNode)> {
        fn go<'a>(node: &'a PlanNode, path: String, out: &mut Vec<(String, &'a PlanNode)>) {
            out.push((path.clone(), node));
            for child in &node.children {
                go(child, format!("{path}/{}", child.class_name), out);
            }
        }
        let mut out = Vec::new();
        go(self, self.class_name.clone(), &mut out);
        out
    }
}

/// Parsed coupling text.
///
/// ```text
/// instance fwd: Channel
/// wire sender.out -> fwd.in
/// wire start -> sender.in_start
/// ```
/// Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CouplingPlan {
    pub instances: Vec<Instance>,
    pub wires: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub class: String,
    pub entity: Option<String>,
}

impl CouplingPlan {
    /// `instance <name>: <Class> [as <entity>]` and `wire <src> -> <dst>` lines.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut plan = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || format!("coupling line {}: cannot parse {line:?}", n + 1);
            if let Some(rest) = line.strip_prefix("instance ") {
                let (name, rest) = rest.split_once(':').ok_or_else(bad)?;
                let mut words = rest.split_whitespace();
                let class = words.next().ok_or_else(bad)?;
                let entity = match (words.next(), words.next(), words.next()) {
                    (None, _, _) => None,
                    (Some("as"), Some(e), None) => Some(e.to_string()),
                    _ => return Err(bad()),
                };
                let name = name.trim();
                if !is_identifier(name) || !is_identifier(class) {
                    return Err(bad());
                }
                if plan.instances.iter().any(|i| i.name == name) {
                    return Err(format!("coupling line {}: instance {name:?} declared twice", n + 1));
                }
                plan.instances.push(Instance {
                    name: name.to_string(),
                    class: class.to_string(),
                    entity,
                });
            } else if let Some(rest) = line.strip_prefix("wire ") {
                let (src, dst) = rest.split_once("->").ok_or_else(bad)?;
                plan.wires.push((src.trim().to_string(), dst.trim().to_string()));
            } else {
                return Err(bad());
            }
        }
        Ok(plan)
    }

    /// Instance part of a wire endpoint, `None` for the parent's own ports.
    pub fn endpoint_instance(endpoint: &str) -> Option<&str> {
        endpoint.split_once('.').map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingKind {
    AtomicWithChildren,
    TooFewChildren,
    DuplicateName,
    VagueStructure,
    InvalidSpec,
    MalformedCoupling,
    UnknownClass,
    UnusedChild,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub path: String,
    pub kind: FindingKind,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Structural findings for a whole tree; empty when it can be constructed.
pub fn validate_plan(tree: &PlanNode) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut names: BTreeMap<&str, &str> = BTreeMap::new();
    let nodes = tree.walk();
    for (path, node) in &nodes {
        let mut push = |kind, message: String| {
            findings.push(Finding {
                path: path.clone(),
                kind,
                message,
            })
        };
        if let Some(first) = names.insert(node.class_name.as_str(), path.as_str()) {
            push(
                FindingKind::DuplicateName,
                format!("class {} also defined at {first}", node.class_name),
            );
        }
        if !is_identifier(&node.class_name) {
            push(
                FindingKind::InvalidSpec,
                format!("class name {:?} is not an identifier", node.class_name),
            );
        }
        for problem in node.spec.problems() {
            let kind = if problem.contains("without a structure") {
                FindingKind::VagueStructure
            } else {
                FindingKind::InvalidSpec
            };
            push(kind, problem);
        }
        match node.kind {
            NodeKind::Atomic => {
                if !node.children.is_empty() {
                    push(
                        FindingKind::AtomicWithChildren,
                        format!("atomic node has {} children", node.children.len()),
                    );
                }
            }
            NodeKind::Coupled => {
                if node.children.len() < 2 {
                    push(
                        FindingKind::TooFewChildren,
                        format!("coupled node has {} children, needs at least 2", node.children.len()),
                    );
                }
                let text = node.coupling_specification.as_deref().unwrap_or("");
                match CouplingPlan::parse(text) {
                    Err(e) => push(FindingKind::MalformedCoupling, e),
                    Ok(plan) => {
                        let classes: BTreeSet<&str> = node.children.iter().map(|c| c.class_name.as_str()).collect();
                        for inst in &plan.instances {
                            if !classes.contains(inst.class.as_str()) {
                                push(
                                    FindingKind::UnknownClass,
                                    format!("instance {} names unknown class {}", inst.name, inst.class),
                                );
                            }
                        }
                        for class in &classes {
                            if !plan.instances.iter().any(|i| i.class == *class) {
                                push(FindingKind::UnusedChild, format!("child {class} is never instantiated"));
                            }
                        }
                        for (src, dst) in &plan.wires {
                            for end in [src, dst] {
                                if let Some(inst) = CouplingPlan::endpoint_instance(end) {
                                    if !plan.instances.iter().any(|i| i.name == inst) {
                                        push(
                                            FindingKind::MalformedCoupling,
                                            format!("wire {src} -> {dst} uses undeclared instance {inst}"),
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    findings
}
