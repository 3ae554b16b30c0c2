//! Staged generation of DEVS simulators from a natural-language spec.
//!
//! [`plan`] grows a [`PlanNode`] tree top-down (classify, then formulate a
//! leaf or split into children). [`construct`] writes code bottom-up, each
//! parent conditioned on the interfaces extracted from its children's code,
//! and finishes with a controller script. Siblings run concurrently; results
//! merge into class-keyed maps so output does not depend on scheduling.

pub mod agents;
pub mod artifacts;
pub mod client;
pub mod runtime;
pub mod schema;
pub mod templates;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

pub use agents::{Agents, Verdict};
pub use artifacts::{ArtifactSet, CodeArtifact, Manifest};
pub use client::{
    Agent, ChatClient, ChatRequest, ClientError, HttpClient, RecordingClient, ReplayClient, ReplayMode, ScriptedClient,
};
pub use runtime::{Program, RuntimeError};
pub use schema::{validate_plan, Finding, ModelSpecification, NodeKind, PlanNode};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Class name given to the top model.
    pub root_name: String,
    /// Concurrent sibling tasks.
    pub workers: usize,
    /// Client calls per agent step.
    pub max_attempts: usize,
    /// Re-splits of a coupled node whose subtree failed.
    pub plan_retries: usize,
    pub max_depth: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            root_name: "System".into(),
            workers: 4,
            max_attempts: 3,
            plan_retries: 3,
            max_depth: 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {what} is empty")]
    EmptyInput { path: String, what: &'static str },
    #[error("{path}: {agent} request failed: {source}")]
    Client {
        path: String,
        agent: Agent,
        #[source]
        source: ClientError,
    },
    #[error("{path}: no acceptable {agent} reply after {attempts} attempts: {problem}")]
    Rejected {
        path: String,
        agent: Agent,
        attempts: usize,
        problem: String,
    },
    #[error("{path}: decomposition deeper than {limit} levels")]
    TooDeep { path: String, limit: usize },
    #[error("{path}: plan has structural findings: {}", .findings.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPlan { path: String, findings: Vec<Finding> },
    #[error("{path}: template: {message}")]
    Template { path: String, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl PipelineError {
    /// Plan path of the node the error belongs to.
    pub fn path(&self) -> &str {
        match self {
            PipelineError::EmptyInput { path, .. }
            | PipelineError::Client { path, .. }
            | PipelineError::Rejected { path, .. }
            | PipelineError::TooDeep { path, .. }
            | PipelineError::InvalidPlan { path, .. }
            | PipelineError::Template { path, .. } => path,
            PipelineError::Pool(_) => "",
        }
    }

    fn depth(&self) -> usize {
        self.path().matches('/').count()
    }
}

/// A construction failure with whatever artifacts were finished.
#[derive(Debug)]
pub struct ConstructError {
    pub error: PipelineError,
    pub partial: BTreeMap<String, CodeArtifact>,
}

impl fmt::Display for ConstructError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} artifacts finished)", self.error, self.partial.len())
    }
}

impl std::error::Error for ConstructError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<PipelineError> for ConstructError {
    fn from(error: PipelineError) -> Self {
        Self {
            error,
            partial: BTreeMap::new(),
        }
    }
}

fn pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))
}

fn deeper(a: Option<PipelineError>, b: PipelineError) -> PipelineError {
    match a {
        Some(a) if a.depth() >= b.depth() => a,
        _ => b,
    }
}

/// Root requirements as handed to the first agent.
pub fn root_requirements(spec: &str, contract: &str) -> String {
    format!("{}\n\nInterface contract:\n{}", spec.trim(), contract.trim())
}

/// Builds the plan tree for a spec and interface contract.
pub fn plan(
    spec: &str,
    contract: &str,
    client: &dyn ChatClient,
    cfg: &PipelineConfig,
) -> Result<PlanNode, PipelineError> {
    let root = cfg.root_name.as_str();
    for (text, what) in [(spec, "specification"), (contract, "interface contract")] {
        if text.trim().is_empty() {
            return Err(PipelineError::EmptyInput {
                path: root.to_string(),
                what,
            });
        }
    }
    let agents = Agents::new(client, cfg.max_attempts);
    let req = root_requirements(spec, contract);
    let tree = pool(cfg)?.install(|| plan_node(&agents, cfg, root, root, &req, "", 1))?;
    let findings = validate_plan(&tree);
    if findings.is_empty() {
        Ok(tree)
    } else {
        Err(PipelineError::InvalidPlan {
            path: root.to_string(),
            findings,
        })
    }
}

fn plan_node(
    agents: &Agents<'_>,
    cfg: &PipelineConfig,
    path: &str,
    name: &str,
    req: &str,
    context: &str,
    depth: usize,
) -> Result<PlanNode, PipelineError> {
    let hint = match agents.classify(path, name, req, context)? {
        Verdict::Atomic => return Ok(PlanNode::atomic(name, agents.formulate(path, name, req, context)?)),
        Verdict::Coupled(hint) | Verdict::NotSure(hint) => hint,
    };
    if depth >= cfg.max_depth {
        return Err(PipelineError::TooDeep {
            path: path.to_string(),
            limit: cfg.max_depth,
        });
    }
    let child_context = format!("{}\n\n[{name}]\n{req}", context.trim()).trim().to_string();
    let mut preface = String::new();
    let mut failure: Option<PipelineError> = None;
    for _ in 0..cfg.plan_retries.max(1) {
        let split = match agents.split(path, name, req, context, &hint, &preface) {
            Ok(split) => split,
            Err(e) => return Err(deeper(failure, e)),
        };
        let results: Vec<Result<PlanNode, PipelineError>> = split
            .children
            .par_iter()
            .map(|child| {
                let child_path = format!("{path}/{}", child.class_name);
                plan_node(
                    agents,
                    cfg,
                    &child_path,
                    &child.class_name,
                    &child.requirements(),
                    &child_context,
                    depth + 1,
                )
            })
            .collect();
        let mut children = Vec::new();
        let mut worst: Option<PipelineError> = None;
        for result in results {
            match result {
                Ok(child) => children.push(child),
                Err(e) => worst = Some(deeper(worst, e)),
            }
        }
        match worst {
            None => return Ok(PlanNode::coupled(name, split.interface, split.coupling, children)),
            Some(e) => {
                preface = format!("\nAn earlier decomposition failed below {}: {e}", e.path());
                failure = Some(deeper(failure, e));
            }
        }
    }
    Err(failure.expect("at least one round ran"))
}

/// Generates code for every node bottom-up, then the controller.
pub fn construct(
    tree: &PlanNode,
    contract: &str,
    client: &dyn ChatClient,
    cfg: &PipelineConfig,
) -> Result<ArtifactSet, ConstructError> {
    let findings = validate_plan(tree);
    if !findings.is_empty() {
        return Err(PipelineError::InvalidPlan {
            path: tree.class_name.clone(),
            findings,
        }
        .into());
    }
    let agents = Agents::new(client, cfg.max_attempts);
    let (models, failure) = pool(cfg)?.install(|| build(&agents, tree, &tree.class_name, contract));
    if let Some(error) = failure {
        return Err(ConstructError { error, partial: models });
    }
    let summary = &models[&tree.class_name].summary;
    match agents.create_controller(&tree.class_name, &tree.class_name, summary, contract) {
        Ok(controller) => Ok(ArtifactSet {
            root: tree.class_name.clone(),
            plan: tree.clone(),
            models,
            controller,
        }),
        Err(error) => Err(ConstructError { error, partial: models }),
    }
}

fn build(
    agents: &Agents<'_>,
    node: &PlanNode,
    path: &str,
    contract: &str,
) -> (BTreeMap<String, CodeArtifact>, Option<PipelineError>) {
    let results: Vec<_> = node
        .children
        .par_iter()
        .map(|child| build(agents, child, &format!("{path}/{}", child.class_name), contract))
        .collect();
    let mut models = BTreeMap::new();
    let mut failure = None;
    for (done, error) in results {
        models.extend(done);
        if failure.is_none() {
            failure = error;
        }
    }
    if failure.is_some() {
        return (models, failure);
    }
    let children: Vec<CodeArtifact> = node.children.iter().map(|c| models[&c.class_name].clone()).collect();
    let result = agents.create_code(path, node, &children, contract).and_then(|source| {
        let summary = agents.summarize(path, &node.class_name, node.kind, &source, &children)?;
        Ok(CodeArtifact {
            class_name: node.class_name.clone(),
            kind: node.kind,
            source,
            summary,
        })
    });
    match result {
        Ok(artifact) => {
            models.insert(artifact.class_name.clone(), artifact);
        }
        Err(e) => failure = Some(e),
    }
    (models, failure)
}

/// [`plan`] followed by [`construct`].
pub fn generate(
    spec: &str,
    contract: &str,
    client: &dyn ChatClient,
    cfg: &PipelineConfig,
) -> Result<ArtifactSet, ConstructError> {
    let tree = plan(spec, contract, client, cfg)?;
    construct(&tree, contract, client, cfg)
}
