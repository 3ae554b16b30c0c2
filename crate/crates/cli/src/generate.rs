use std::path::{Path, PathBuf};

use clap::Args;
use devsgen_core::genpipe::client::{MockEntry, MockScript, MOCK_VERSION};
use devsgen_core::genpipe::{
    construct, plan, ChatClient, CodeArtifact, HttpClient, PipelineConfig, RecordingClient, ReplayClient, ReplayMode,
};

use crate::{Failure, Outcome};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Natural-language specification.
    #[arg(long, value_name = "PATH")]
    pub spec: PathBuf,
    /// Interface contract (flags and trace events).
    #[arg(long, value_name = "PATH")]
    pub contract: PathBuf,
    /// Output artifact directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Replay a mock script instead of calling a chat endpoint.
    #[arg(long, value_name = "PATH")]
    pub mock: Option<PathBuf>,
    /// Match mock entries by agent and node path instead of request digest.
    #[arg(long, requires = "mock")]
    pub by_node: bool,
    /// Save every exchange as a digest-keyed mock script.
    #[arg(long, value_name = "PATH")]
    pub record: Option<PathBuf>,
    /// Class name of the top model.
    #[arg(long, default_value = "System")]
    pub root_name: String,
    /// Concurrent sibling tasks.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    /// Client calls allowed per agent step.
    #[arg(long, default_value_t = 3)]
    pub max_attempts: usize,
}

fn read(path: &Path, what: &str) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn backend(args: &GenerateArgs) -> Result<Box<dyn ChatClient>, Failure> {
    let client: Box<dyn ChatClient> = match &args.mock {
        Some(path) => {
            let mode = if args.by_node {
                ReplayMode::ByNode
            } else {
                ReplayMode::Digest
            };
            Box::new(ReplayClient::load(path, mode).map_err(|e| Failure::Usage(e.to_string()))?)
        }
        None => Box::new(HttpClient::from_env().map_err(|e| Failure::Usage(e.to_string()))?),
    };
    Ok(client)
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Failed(format!("cannot write {}: {e}", path.display()))
}

fn write_partial(out: &Path, partial: &std::collections::BTreeMap<String, CodeArtifact>) -> std::io::Result<()> {
    let dir = out.join("partial");
    std::fs::create_dir_all(&dir)?;
    for artifact in partial.values() {
        std::fs::write(dir.join(format!("{}.rhai", artifact.class_name)), &artifact.source)?;
        let summary = serde_json::to_string_pretty(&artifact.summary).expect("summaries serialize");
        std::fs::write(dir.join(format!("{}.json", artifact.class_name)), summary + "\n")?;
    }
    Ok(())
}

fn save_recording(path: &Path, recorder: &RecordingClient<Box<dyn ChatClient>>) -> Outcome {
    let entries = recorder
        .exchanges()
        .into_iter()
        .filter_map(|exchange| {
            let reply = exchange.reply.ok()?;
            Some(MockEntry {
                agent: exchange.request.agent,
                node: exchange.request.node.clone(),
                digest: exchange.request.digest(),
                response: Some(serde_json::Value::String(reply)),
                response_file: None,
            })
        })
        .collect();
    let script = MockScript {
        version: MOCK_VERSION,
        entries,
    };
    let text = serde_json::to_string_pretty(&script).expect("mock scripts serialize") + "\n";
    std::fs::write(path, text).map_err(io_failure(path))
}

pub fn run(args: GenerateArgs) -> Outcome {
    let spec = read(&args.spec, "spec")?;
    let contract = read(&args.contract, "contract")?;
    let cfg = PipelineConfig {
        root_name: args.root_name.clone(),
        workers: args.workers,
        max_attempts: args.max_attempts,
        ..PipelineConfig::default()
    };
    let recorder = RecordingClient::new(backend(&args)?);
    let result = generate(&spec, &contract, &recorder, &cfg, &args.out);
    if let Some(path) = &args.record {
        save_recording(path, &recorder)?;
    }
    result
}

fn generate(spec: &str, contract: &str, client: &dyn ChatClient, cfg: &PipelineConfig, out: &Path) -> Outcome {
    let tree = plan(spec, contract, client, cfg)
        .map_err(|e| Failure::Failed(format!("planning failed at node {}: {e}", e.path())))?;
    std::fs::create_dir_all(out).map_err(io_failure(out))?;
    let plan_path = out.join("plan.json");
    let plan_json = serde_json::to_string_pretty(&tree).expect("plans serialize") + "\n";
    std::fs::write(&plan_path, plan_json).map_err(io_failure(&plan_path))?;
    eprintln!(
        "plan: {} nodes, {} leaves, depth {}",
        tree.walk().len(),
        tree.leaf_count(),
        tree.depth()
    );
    match construct(&tree, contract, client, cfg) {
        Ok(set) => {
            set.write(out).map_err(io_failure(out))?;
            eprintln!(
                "wrote {} models and a controller to {}",
                set.models.len(),
                out.display()
            );
            Ok(())
        }
        Err(failure) => {
            write_partial(out, &failure.partial).map_err(io_failure(out))?;
            Err(Failure::Failed(format!(
                "construction failed at node {}: {} ({} finished artifacts kept in {})",
                failure.error.path(),
                failure.error,
                failure.partial.len(),
                out.join("partial").display()
            )))
        }
    }
}
