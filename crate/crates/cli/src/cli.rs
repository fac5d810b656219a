//! Command-line entry points.

use std::io::{self, Write};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use clap::{Parser, Subcommand};
use neuroscope_core::aggregate::RowKey;
use neuroscope_core::{
    assemble_view, draw_sample, load_bundle, project_node, sort_columns, Bundle, SampleSpec,
    SubsetRegistry,
};
use serde_json::{json, Value};

use crate::api::{router, App};
use crate::error::ApiError;
use crate::format::{fmt9, round_floats};
use crate::jobs::{coords_json, ConfigRequest};
use crate::session::{self, Session};

#[derive(Debug, Parser)]
#[command(name = "neuroscope", version, about = "Inspect neuron activations of a trained classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a bundle directory and print a summary.
    Ingest { dir: PathBuf },
    /// Print the subset-average activation matrix of a node as CSV.
    Aggregate {
        dir: PathBuf,
        #[arg(long)]
        node: String,
        /// Order columns by this row (`subset:<id>` or `instance:<index>`).
        #[arg(long)]
        sort_by: Option<String>,
        /// Append an instance row; repeatable.
        #[arg(long = "instance")]
        instances: Vec<usize>,
        /// Add a user-defined subset row from a predicate; repeatable.
        #[arg(long = "subset")]
        subsets: Vec<String>,
    },
    /// Print a t-SNE projection of the default sample at a node as CSV.
    Project {
        dir: PathBuf,
        #[arg(long)]
        node: String,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Sample budget.
        #[arg(long, default_value_t = neuroscope_core::sampler::DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
    },
    /// Serve the HTTP/JSON API for a bundle.
    Serve {
        dir: PathBuf,
        /// Port to listen on; 0 picks a free one.
        #[arg(long, env = "NEUROSCOPE_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = Ipv4Addr::LOCALHOST)]
        host: Ipv4Addr,
    },
    /// Write a static JSON snapshot of the graph and default views.
    Export {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also compute a projection of the default sample for every node.
        #[arg(long)]
        with_projections: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Run a parsed command. Errors are printed to stderr as a JSON object.
pub fn run(cli: Cli) -> i32 {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Ingest { dir } => ingest(&dir, &mut out),
        Command::Aggregate { dir, node, sort_by, instances, subsets } => {
            aggregate(&dir, &node, sort_by.as_deref(), &instances, &subsets, &mut out)
        }
        Command::Project { dir, node, perplexity, seed, iterations, budget, sample_seed } => {
            let cfg = ConfigRequest { perplexity, seed, iterations, ..Default::default() };
            project(&dir, &node, &cfg, budget, sample_seed, &mut out)
        }
        Command::Serve { dir, port, host } => serve_blocking(&dir, SocketAddr::from((host, port))),
        Command::Export { dir, out: path, with_projections, seed } => {
            export(&dir, &path, with_projections, seed)
        }
    };
    match result.and_then(|()| out.flush().map_err(io_error)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.body());
            1
        }
    }
}

fn io_error(e: io::Error) -> ApiError {
    ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, "IoError", e.to_string())
}

fn load(dir: &Path) -> Result<Bundle, ApiError> {
    Ok(load_bundle(dir)?)
}

pub fn ingest(dir: &Path, out: &mut impl Write) -> Result<(), ApiError> {
    let b = load(dir)?;
    let g = b.graph();
    let w = |out: &mut dyn Write, line: String| writeln!(out, "{line}").map_err(io_error);
    w(out, format!("graph: {} nodes, {} edges", g.nodes().len(), g.edges().len()))?;
    w(out, format!("instances: {}", b.n_instances()))?;
    w(out, format!("classes: {}", b.classes().join(", ")))?;
    let correct = b.instances().iter().filter(|r| r.is_correct()).count();
    w(out, format!("correct: {correct}"))?;
    for n in g.inspectable_nodes() {
        match b.matrix(n.id.as_str()) {
            Ok(m) => w(out, format!("node {}: {} neurons", n.id, m.n_neurons()))?,
            Err(_) => w(out, format!("node {}: no dump", n.id))?,
        }
    }
    Ok(())
}

pub fn aggregate(
    dir: &Path,
    node: &str,
    sort_by: Option<&str>,
    instances: &[usize],
    predicates: &[String],
    out: &mut impl Write,
) -> Result<(), ApiError> {
    let b = load(dir)?;
    let mut registry = SubsetRegistry::with_defaults(&b);
    for p in predicates {
        registry.add_user_defined(p, p, &b)?;
    }
    let subsets = registry.membership().subsets().to_vec();
    let view = assemble_view(&b, registry.membership(), node, &subsets, instances)?;
    let order: Vec<usize> = match sort_by {
        Some(key) => {
            let key: RowKey = key.parse().map_err(|m: String| ApiError::bad_request(m))?;
            sort_columns(&view, &key)?.permutation
        }
        None => (0..view.n_neurons).collect(),
    };
    let mut text = String::from("row_key,n_members");
    for j in &order {
        text.push_str(&format!(",n{j}"));
    }
    text.push('\n');
    for (r, key) in view.row_keys.iter().enumerate() {
        let members = match key {
            RowKey::Subset(id) => registry.members(id)?.len(),
            RowKey::Instance(_) => 1,
        };
        text.push_str(&format!("{key},{members}"));
        let empty = view.is_empty_row(r);
        let row = view.row(r);
        for &j in &order {
            text.push(',');
            if !empty {
                text.push_str(&fmt9(row[j]));
            }
        }
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(io_error)
}

pub fn project(
    dir: &Path,
    node: &str,
    cfg: &ConfigRequest,
    budget: usize,
    sample_seed: u64,
    out: &mut impl Write,
) -> Result<(), ApiError> {
    let b = load(dir)?;
    let cfg = cfg.build()?;
    let spec = SampleSpec { budget, seed: sample_seed, ..Default::default() };
    let sample = draw_sample(&b, &spec)?;
    let res = project_node(&b, node, &sample, &cfg, &AtomicBool::new(false))?;
    let mut text = String::from("index,x,y\n");
    for (i, p) in res.point_ids.iter().zip(res.coords.chunks_exact(2)) {
        text.push_str(&format!("{i},{},{}\n", fmt9(p[0]), fmt9(p[1])));
    }
    out.write_all(text.as_bytes()).map_err(io_error)
}

/// Snapshot of everything the UI shows for the default session.
pub fn snapshot(b: &Bundle, with_projections: bool, seed: u64) -> Result<Value, ApiError> {
    let s = Session::new(b)?;
    let mut matrices = serde_json::Map::new();
    let mut projections = serde_json::Map::new();
    for n in b.graph().inspectable_nodes() {
        let id = n.id.as_str();
        if b.matrix(id).is_err() {
            continue;
        }
        matrices.insert(id.to_owned(), s.matrix_json(b, id, None)?);
        if with_projections {
            let cfg = ConfigRequest { seed: Some(seed), ..Default::default() }.build()?;
            let r = project_node(b, id, &s.sample, &cfg, &AtomicBool::new(false))?;
            projections.insert(
                id.to_owned(),
                json!({ "point_ids": r.point_ids, "coords": coords_json(&r), "kl_final": r.kl_final() }),
            );
        }
    }
    let instances: Vec<Value> = (0..b.n_instances())
        .map(|i| session::instance_json(b, i))
        .collect::<Result<_, _>>()?;
    let mut v = json!({
        "graph": session::graph_json(b),
        "nodes": session::nodes_json(b),
        "classes": b.classes(),
        "subsets": s.subsets_json(),
        "members": s.registry.membership().subsets().iter()
            .map(|id| (id.clone(), json!(s.registry.members(id).unwrap_or_default())))
            .collect::<serde_json::Map<_, _>>(),
        "sample": s.sample_json(),
        "panel": s.panel_json(b)?,
        "instances": instances,
        "matrices": matrices,
    });
    if with_projections {
        v["projections"] = projections.into();
    }
    round_floats(&mut v);
    Ok(v)
}

pub fn export(dir: &Path, path: &Path, with_projections: bool, seed: u64) -> Result<(), ApiError> {
    let b = load(dir)?;
    let v = snapshot(&b, with_projections, seed)?;
    std::fs::write(path, format!("{v}\n")).map_err(io_error)
}

fn serve_blocking(dir: &Path, addr: SocketAddr) -> Result<(), ApiError> {
    let b = load(dir)?;
    let runtime = tokio::runtime::Runtime::new().map_err(io_error)?;
    runtime.block_on(serve(b, addr))
}

/// Bind, print `listening on http://<addr>` and serve until Ctrl-C.
pub async fn serve(bundle: Bundle, addr: SocketAddr) -> Result<(), ApiError> {
    let app = App::new(bundle)?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, "PortInUse", format!("{addr}: {e}"))
    })?;
    let local = listener.local_addr().map_err(io_error)?;
    println!("listening on http://{local}");
    io::stdout().flush().map_err(io_error)?;
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(io_error)
}
