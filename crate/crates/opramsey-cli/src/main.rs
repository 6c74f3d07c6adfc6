//! Command-line front door. Every subcommand resolves its flags into a
//! single JSON config, runs one deterministic operation, and emits a
//! canonical report embedding its RunManifest; `replay` re-executes a
//! report's manifest and compares payload bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use opramsey_core::cbnorm::{cb_norm, choi_and_cp};
use opramsey_core::duality::{dualize, is_ucp, perturb_ucp, ClassTag, PointedSpace};
use opramsey_core::fraisse::{
    amalgamate, amalgamate_pointed, arp_search, distance_estimate, emb_net, gh_estimate,
    ClassConfig, SearchBudget,
};
use opramsey_core::linalg::ComplexMatrix;
use opramsey_core::ramsey::epi::{drt_search, enumerate_epi, stirling2};
use opramsey_core::ramsey::nets::{
    build_nets, construct_tau, encode_alpha, random_cq_rho, random_tpcq_rho, AlphaTuple,
};
use opramsey_core::ramsey::ColoringSpec;
use opramsey_core::report::{canonical_json, config_hash, value_matrix_csv, Report};
use opramsey_core::sdp::{solve_sdp, SdpProblem};
use opramsey_core::space::{BlockLinearMap, Category, SpaceDescriptor};
use opramsey_core::{duality, Error, Result};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "opramsey",
    version,
    about = "finite-dimensional operator spaces, cb norms, and dual-Ramsey machinery"
)]
struct Cli {
    /// write the report here instead of stdout (atomic replace)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// report format; csv flattens the first complex matrix in the payload
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Cq,
    Tpcq,
}

#[derive(Clone, Copy, ValueEnum)]
enum CategoryArg {
    Osp,
    Osy,
}

impl CategoryArg {
    fn name(self) -> &'static str {
        match self {
            CategoryArg::Osp => "Osp",
            CategoryArg::Osy => "Osy",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// semidefinite programs
    Sdp {
        #[command(subcommand)]
        verb: SdpVerb,
    },
    /// completely bounded norm with a two-sided certificate
    Cbnorm(CbnormArgs),
    /// Choi matrix and complete-positivity analysis
    Choi(MapArgs),
    /// trace-pairing dual of a block map
    Dualize(MapArgs),
    /// operator-system morphism checks
    Ucp {
        #[command(subcommand)]
        verb: UcpVerb,
    },
    /// complete a CP family to a unital one
    Perturb(PerturbArgs),
    /// rigid surjections between finite ordinals
    Epi {
        #[command(subcommand)]
        verb: EpiVerb,
    },
    /// exhaustive dual-Ramsey instance searches
    Drt {
        #[command(subcommand)]
        verb: DrtVerb,
    },
    /// finite nets of admissible columns (P) and structured matrices (Q)
    Nets {
        #[command(subcommand)]
        verb: NetsVerb,
    },
    /// α encodings of net tuples as class embeddings
    Alpha {
        #[command(subcommand)]
        verb: AlphaVerb,
    },
    /// rigid surjection τ induced by a quotient-class map
    Tau {
        #[command(subcommand)]
        verb: TauVerb,
    },
    /// stable amalgamation of two δ-embeddings
    Amalgamate(AmalgamateArgs),
    /// pointed amalgamation with distinguished states
    AmalgamatePointed(PointedArgs),
    /// distance upper bounds between two spaces
    Ghdist(GhdistArgs),
    /// finite net of embeddings between two spaces
    Embnet(EmbnetArgs),
    /// approximate-Ramsey oscillation search
    Arp {
        #[command(subcommand)]
        verb: ArpVerb,
    },
    /// re-run a report's manifest and compare payload bytes
    Replay(ReplayArgs),
}

#[derive(Subcommand)]
enum SdpVerb {
    /// solve one SDP in the canonical block form
    Solve {
        /// problem JSON (inline or @file)
        #[arg(long = "in")]
        input: String,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

#[derive(Args)]
struct MapArgs {
    /// block map JSON (inline or @file)
    #[arg(long)]
    map: String,
}

#[derive(Args)]
struct CbnormArgs {
    /// block map JSON (inline or @file)
    #[arg(long)]
    map: String,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Subcommand)]
enum UcpVerb {
    /// unital complete positivity of a map
    Check(MapArgs),
}

#[derive(Args)]
struct PerturbArgs {
    /// JSON array of the CP maps ψ_1..ψ_{d−1} (inline or @file)
    #[arg(long)]
    psi_list: String,
    /// candidate last map φ_d
    #[arg(long)]
    phi_d: String,
    /// density matrix of the state s on the block
    #[arg(long)]
    state: String,
    #[arg(long)]
    eps: f64,
}

#[derive(Subcommand)]
enum EpiVerb {
    /// |Epi(n, k)| (a Stirling number of the second kind)
    Count { n: usize, k: usize },
    /// enumerate Epi(n, k) in lexicographic order
    List {
        n: usize,
        k: usize,
        #[arg(long, default_value_t = 100)]
        limit: usize,
    },
}

#[derive(Subcommand)]
enum DrtVerb {
    /// search γ ∈ Epi(n, s) making the induced coloring monochromatic
    Search {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        s: usize,
        /// coloring spec JSON (inline or @file)
        #[arg(long)]
        coloring: String,
        #[arg(long)]
        cap: Option<u64>,
    },
}

#[derive(Args)]
struct NetParams {
    #[arg(long, value_enum)]
    class: ClassArg,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    q: usize,
    #[arg(long)]
    s: usize,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.05)]
    eps0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl NetParams {
    fn config(&self) -> Value {
        json!({
            "class": match self.class { ClassArg::Cq => "CQ", ClassArg::Tpcq => "TPCQ" },
            "d": self.d, "m": self.m, "q": self.q, "s": self.s,
            "eps": self.eps, "eps0": self.eps0, "seed": self.seed,
        })
    }
}

#[derive(Subcommand)]
enum NetsVerb {
    /// build the nets and summarize them (--full embeds both nets)
    Build {
        #[command(flatten)]
        params: NetParams,
        #[arg(long)]
        full: bool,
    },
}

#[derive(Subcommand)]
enum AlphaVerb {
    /// encode a tuple of net indices as a class embedding
    Encode {
        #[command(flatten)]
        params: NetParams,
        /// column indices [i, ...] or pairs [[b, i], ...] (inline or @file)
        #[arg(long)]
        tuple: String,
    },
}

#[derive(Subcommand)]
enum TauVerb {
    /// construct τ for a random class map ρ and report its rigidity evidence
    Demo {
        #[command(flatten)]
        params: NetParams,
    },
}

#[derive(Args)]
struct AmalgamateArgs {
    #[arg(long)]
    phi: String,
    #[arg(long)]
    psi: String,
    #[arg(long, value_enum)]
    category: CategoryArg,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
}

#[derive(Args)]
struct PointedArgs {
    /// bundle JSON with x/y/z spaces and states, phi, psi, r0, theta
    #[arg(long = "in")]
    input: String,
}

#[derive(Args)]
struct GhdistArgs {
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    #[arg(long, default_value_t = 2)]
    starts: usize,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EmbnetArgs {
    #[arg(long)]
    x: String,
    #[arg(long)]
    z: String,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// how many member actions to embed in the report
    #[arg(long, default_value_t = 5)]
    limit: usize,
}

#[derive(Subcommand)]
enum ArpVerb {
    /// scan a net of Y→Z embeddings for an ε-stabilizing composite set
    Search {
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        z: String,
        #[arg(long)]
        coloring: String,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        budget: usize,
    },
}

#[derive(Args)]
struct ReplayArgs {
    /// report JSON (inline or @file)
    #[arg(long)]
    report: String,
}

fn load_json(spec: &str) -> Result<Value> {
    let text = if let Some(path) = spec.strip_prefix('@') {
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{path}: {e}")))?
    } else {
        spec.to_string()
    };
    serde_json::from_str(&text).map_err(|e| Error::Json(format!("invalid JSON argument: {e}")))
}

enum Invocation {
    Run { command: String, config: Value },
    Replay { report: Value },
}

impl Command {
    fn invocation(&self) -> Result<Invocation> {
        let run = |command: &str, config: Value| {
            Ok(Invocation::Run {
                command: command.to_string(),
                config,
            })
        };
        match self {
            Command::Sdp {
                verb: SdpVerb::Solve { input, tol },
            } => run("sdp solve", json!({"problem": load_json(input)?, "tol": tol})),
            Command::Cbnorm(a) => run("cbnorm", json!({"map": load_json(&a.map)?, "tol": a.tol})),
            Command::Choi(a) => run("choi", json!({"map": load_json(&a.map)?})),
            Command::Dualize(a) => run("dualize", json!({"map": load_json(&a.map)?})),
            Command::Ucp {
                verb: UcpVerb::Check(a),
            } => run("ucp check", json!({"map": load_json(&a.map)?})),
            Command::Perturb(a) => run(
                "perturb",
                json!({
                    "psi_list": load_json(&a.psi_list)?,
                    "phi_d": load_json(&a.phi_d)?,
                    "state": load_json(&a.state)?,
                    "eps": a.eps,
                }),
            ),
            Command::Epi { verb } => match verb {
                EpiVerb::Count { n, k } => run("epi count", json!({"n": n, "k": k})),
                EpiVerb::List { n, k, limit } => {
                    run("epi list", json!({"n": n, "k": k, "limit": limit}))
                }
            },
            Command::Drt {
                verb:
                    DrtVerb::Search {
                        n,
                        r,
                        s,
                        coloring,
                        cap,
                    },
            } => run(
                "drt search",
                json!({"n": n, "r": r, "s": s, "coloring": load_json(coloring)?, "cap": cap}),
            ),
            Command::Nets {
                verb: NetsVerb::Build { params, full },
            } => {
                let mut cfg = params.config();
                cfg["full"] = json!(full);
                run("nets build", cfg)
            }
            Command::Alpha {
                verb: AlphaVerb::Encode { params, tuple },
            } => {
                let mut cfg = params.config();
                cfg["tuple"] = load_json(tuple)?;
                run("alpha encode", cfg)
            }
            Command::Tau {
                verb: TauVerb::Demo { params },
            } => run("tau demo", params.config()),
            Command::Amalgamate(a) => run(
                "amalgamate",
                json!({
                    "phi": load_json(&a.phi)?,
                    "psi": load_json(&a.psi)?,
                    "category": a.category.name(),
                    "epsilon": a.epsilon,
                }),
            ),
            Command::AmalgamatePointed(a) => run("amalgamate-pointed", load_json(&a.input)?),
            Command::Ghdist(a) => run(
                "ghdist",
                json!({
                    "x": load_json(&a.x)?, "y": load_json(&a.y)?,
                    "starts": a.starts, "iters": a.iters, "seed": a.seed,
                }),
            ),
            Command::Embnet(a) => run(
                "embnet",
                json!({
                    "x": load_json(&a.x)?, "z": load_json(&a.z)?,
                    "eps": a.eps, "seed": a.seed, "limit": a.limit,
                }),
            ),
            Command::Arp {
                verb:
                    ArpVerb::Search {
                        x,
                        y,
                        z,
                        coloring,
                        eps,
                        seed,
                        budget,
                    },
            } => run(
                "arp search",
                json!({
                    "x": load_json(x)?, "y": load_json(y)?, "z": load_json(z)?,
                    "coloring": load_json(coloring)?,
                    "eps": eps, "seed": seed, "budget": budget,
                }),
            ),
            Command::Replay(a) => Ok(Invocation::Replay {
                report: load_json(&a.report)?,
            }),
        }
    }
}

fn field<'a>(config: &'a Value, key: &str) -> Result<&'a Value> {
    config
        .get(key)
        .ok_or_else(|| Error::Precondition(format!("config is missing '{key}'")))
}

fn parse_field<T: DeserializeOwned>(config: &Value, key: &str) -> Result<T> {
    serde_json::from_value(field(config, key)?.clone())
        .map_err(|e| Error::Json(format!("config field '{key}': {e}")))
}

fn f64_field(config: &Value, key: &str, default: f64) -> f64 {
    config.get(key).and_then(Value::as_f64).unwrap_or(default)
}

fn u64_field(config: &Value, key: &str, default: u64) -> u64 {
    config.get(key).and_then(Value::as_u64).unwrap_or(default)
}

fn usize_field(config: &Value, key: &str) -> Result<usize> {
    field(config, key)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::Precondition(format!("config field '{key}' must be an integer")))
}

fn category_field(config: &Value) -> Result<Category> {
    match field(config, "category")?.as_str() {
        Some("Osp") | Some("osp") => Ok(Category::Osp),
        Some("Osy") | Some("osy") => Ok(Category::Osy),
        other => Err(Error::Precondition(format!(
            "unknown category {other:?}; expected Osp or Osy"
        ))),
    }
}

fn class_field(config: &Value) -> Result<ClassTag> {
    match field(config, "class")?.as_str() {
        Some("CQ") | Some("cq") => Ok(ClassTag::Cq),
        Some("TPCQ") | Some("tpcq") => Ok(ClassTag::Tpcq),
        other => Err(Error::Precondition(format!(
            "unknown class {other:?}; expected CQ or TPCQ"
        ))),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Json(format!("payload not serializable: {e}")))
}

/// One deterministic operation per command string. This is the single
/// entry point both for fresh runs and for manifest replay.
fn dispatch(command: &str, config: &Value) -> Result<Value> {
    match command {
        "sdp solve" => {
            let p: SdpProblem = parse_field(config, "problem")?;
            let sol = solve_sdp(&p, f64_field(config, "tol", 1e-9))?;
            Ok(json!({
                "status": to_value(&sol.status)?,
                "primal_value": sol.primal_value,
                "dual_value": sol.dual_value,
                "gap": sol.gap,
                "iterations": sol.iterations,
                "primal_residual": sol.primal_residual(&p),
            }))
        }
        "cbnorm" => {
            let f: BlockLinearMap = parse_field(config, "map")?;
            let cert = cb_norm(&f, f64_field(config, "tol", 1e-9))?;
            Ok(json!({"value": cert.value, "certificate": to_value(&cert)?}))
        }
        "choi" => {
            let f: BlockLinearMap = parse_field(config, "map")?;
            let analysis = choi_and_cp(&f)?;
            Ok(json!({
                "analysis": to_value(&analysis)?,
                "matrix": to_value(&analysis.choi.matrix)?,
            }))
        }
        "dualize" => {
            let f: BlockLinearMap = parse_field(config, "map")?;
            Ok(json!({"dual": to_value(&dualize(&f)?)?}))
        }
        "ucp check" => {
            let f: BlockLinearMap = parse_field(config, "map")?;
            Ok(json!({"ucp": is_ucp(&f)?}))
        }
        "perturb" => {
            let psi_list: Vec<BlockLinearMap> = parse_field(config, "psi_list")?;
            let phi_d: BlockLinearMap = parse_field(config, "phi_d")?;
            let state: ComplexMatrix = parse_field(config, "state")?;
            let out = perturb_ucp(&psi_list, &phi_d, &state, f64_field(config, "eps", 1e-3))?;
            to_value(&out)
        }
        "epi count" => {
            let n = usize_field(config, "n")?;
            let k = usize_field(config, "k")?;
            let count = stirling2(n, k);
            if count <= u64::MAX as u128 {
                Ok(json!({"count": count as u64}))
            } else {
                Ok(json!({"count": count.to_string()}))
            }
        }
        "epi list" => {
            let n = usize_field(config, "n")?;
            let k = usize_field(config, "k")?;
            let limit = usize_field(config, "limit").unwrap_or(100);
            let members = enumerate_epi(n, k);
            let total = members.len();
            let shown: Vec<Value> = members
                .iter()
                .take(if limit == 0 { total } else { limit })
                .map(|m| to_value(m))
                .collect::<Result<_>>()?;
            Ok(json!({"count": total, "members": shown, "truncated": shown.len() < total}))
        }
        "drt search" => {
            let coloring: ColoringSpec = parse_field(config, "coloring")?;
            let cap = config.get("cap").and_then(Value::as_u64).map(u128::from);
            let out = drt_search(
                usize_field(config, "n")?,
                usize_field(config, "r")?,
                usize_field(config, "s")?,
                &coloring,
                cap,
            )?;
            to_value(&out)
        }
        "nets build" => {
            let nets = build_nets_from(config)?;
            let mut payload = json!({
                "p_size": nets.p.maps.len(),
                "q_size": nets.q.members.len(),
                "unitary_net_size": nets.q.unitary_net.len(),
                "snap_report": nets.p.snap_report,
            });
            if config.get("full").and_then(Value::as_bool).unwrap_or(false) {
                payload["p"] = to_value(&nets.p)?;
                payload["q"] = to_value(&nets.q)?;
            }
            Ok(payload)
        }
        "alpha encode" => {
            let nets = build_nets_from(config)?;
            let tuple: AlphaTuple = parse_field(config, "tuple")?;
            let emb = encode_alpha(&tuple, &nets)?;
            let structure = duality::structure_check(&emb, nets.p.class_tag)?;
            Ok(json!({"action": to_value(&emb.action)?, "structure": to_value(&structure)?}))
        }
        "tau demo" => {
            let nets = build_nets_from(config)?;
            let eps = f64_field(config, "eps", 0.15);
            let seed = u64_field(config, "seed", 0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a75);
            let rho = match nets.p.class_tag {
                ClassTag::Cq => random_cq_rho(nets.q.d, nets.q.m, &mut rng)?,
                ClassTag::Tpcq => random_tpcq_rho(nets.q.d, nets.q.m, &mut rng)?,
            };
            let (_, construction) = construct_tau(&rho, &nets.p, &nets.q, eps)?;
            Ok(json!({
                "construction": to_value(&construction)?,
                "rho_action": to_value(&rho.action)?,
            }))
        }
        "amalgamate" => {
            let phi: BlockLinearMap = parse_field(config, "phi")?;
            let psi: BlockLinearMap = parse_field(config, "psi")?;
            let cfg = ClassConfig {
                category: category_field(config)?,
                epsilon: f64_field(config, "epsilon", 0.01),
            };
            to_value(&amalgamate(&phi, &psi, &cfg)?)
        }
        "amalgamate-pointed" => {
            let x = PointedSpace::new(
                parse_field(config, "x_space")?,
                parse_field(config, "x_state")?,
            )?;
            let y = PointedSpace::new(
                parse_field(config, "y_space")?,
                parse_field(config, "y_state")?,
            )?;
            let z = PointedSpace::new(
                parse_field(config, "z_space")?,
                parse_field(config, "z_state")?,
            )?;
            let phi: BlockLinearMap = parse_field(config, "phi")?;
            let psi: BlockLinearMap = parse_field(config, "psi")?;
            let r0: SpaceDescriptor = parse_field(config, "r0")?;
            let theta: BlockLinearMap = parse_field(config, "theta")?;
            let cfg = ClassConfig {
                category: category_field(config)?,
                epsilon: f64_field(config, "epsilon", 0.01),
            };
            to_value(&amalgamate_pointed(&x, &y, &z, &phi, &psi, &r0, &theta, &cfg)?)
        }
        "ghdist" => {
            let x: SpaceDescriptor = parse_field(config, "x")?;
            let y: SpaceDescriptor = parse_field(config, "y")?;
            let budget = SearchBudget {
                starts: usize_field(config, "starts").unwrap_or(2),
                iters: usize_field(config, "iters").unwrap_or(3),
            };
            let seed = u64_field(config, "seed", 0);
            let est = if x.dim() == y.dim() {
                distance_estimate(&x, &y, &budget, seed)?
            } else {
                gh_estimate(&x, &y, &budget, seed)?
            };
            to_value(&est)
        }
        "embnet" => {
            let x: SpaceDescriptor = parse_field(config, "x")?;
            let z: SpaceDescriptor = parse_field(config, "z")?;
            let net = emb_net(&x, &z, f64_field(config, "eps", 0.5), u64_field(config, "seed", 0))?;
            let limit = usize_field(config, "limit").unwrap_or(5);
            let shown: Vec<Value> = net
                .iter()
                .take(limit)
                .map(|m| to_value(&m.action))
                .collect::<Result<_>>()?;
            Ok(json!({"count": net.len(), "members": shown, "truncated": shown.len() < net.len()}))
        }
        "arp search" => {
            let x: SpaceDescriptor = parse_field(config, "x")?;
            let y: SpaceDescriptor = parse_field(config, "y")?;
            let z: SpaceDescriptor = parse_field(config, "z")?;
            let coloring: ColoringSpec = parse_field(config, "coloring")?;
            let out = arp_search(
                &x,
                &y,
                &z,
                &coloring,
                f64_field(config, "eps", 0.1),
                u64_field(config, "seed", 0),
                usize_field(config, "budget").unwrap_or(16),
            )?;
            to_value(&out)
        }
        other => Err(Error::Precondition(format!("unknown command '{other}'"))),
    }
}

fn build_nets_from(config: &Value) -> Result<opramsey_core::ramsey::nets::Nets> {
    build_nets(
        class_field(config)?,
        usize_field(config, "d")?,
        usize_field(config, "m")?,
        usize_field(config, "q")?,
        usize_field(config, "s")?,
        f64_field(config, "eps", 0.15),
        f64_field(config, "eps0", 0.05),
        u64_field(config, "seed", 0),
    )
}

fn write_output(out: &Option<PathBuf>, bytes: &str) -> Result<()> {
    match out {
        None => {
            print!("{bytes}");
            Ok(())
        }
        Some(path) => {
            let tmp = tmp_path(path);
            fs::write(&tmp, bytes).map_err(|e| Error::Io(format!("{}: {e}", tmp.display())))?;
            fs::rename(&tmp, path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
        }
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

fn emit(cli_out: &Option<PathBuf>, format: Format, report: &Report) -> Result<()> {
    let bytes = match format {
        Format::Json => {
            let mut s = report.render()?;
            s.push('\n');
            s
        }
        Format::Csv => value_matrix_csv(&report.payload)?,
    };
    write_output(cli_out, &bytes)
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Precondition(_) | Error::Dimension(_) | Error::Symmetry(_) => 2,
        Error::Budget(_) => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> std::result::Result<(), (Error, u8)> {
    match cli.command.invocation().map_err(|e| {
        let code = exit_for(&e);
        (e, code)
    })? {
        Invocation::Run { command, config } => {
            let started = Instant::now();
            let payload = dispatch(&command, &config).map_err(|e| {
                let code = exit_for(&e);
                (e, code)
            })?;
            let seed = u64_field(&config, "seed", 0);
            let report = Report::new(
                &command,
                config,
                seed,
                TOOL_VERSION,
                started.elapsed().as_millis() as u64,
                payload,
            );
            emit(&cli.out, cli.format, &report).map_err(|e| (e, 1))
        }
        Invocation::Replay { report } => {
            let original: Report = serde_json::from_value(report)
                .map_err(|e| (Error::Json(format!("not a report: {e}")), 2))?;
            let hash_ok = config_hash(&original.config) == original.manifest.config_hash;
            let started = Instant::now();
            let fresh = dispatch(&original.manifest.command, &original.config).map_err(|e| {
                let code = exit_for(&e);
                (e, code)
            })?;
            let matched = hash_ok && canonical_json(&fresh) == original.payload_bytes();
            let payload = json!({
                "match": matched,
                "config_hash_ok": hash_ok,
                "command": original.manifest.command,
            });
            let config = json!({
                "command": original.manifest.command,
                "config_hash": original.manifest.config_hash,
                "seed": original.manifest.seed,
            });
            let report = Report::new(
                "replay",
                config,
                original.manifest.seed,
                TOOL_VERSION,
                started.elapsed().as_millis() as u64,
                payload,
            );
            emit(&cli.out, cli.format, &report).map_err(|e| (e, 1))?;
            if matched {
                Ok(())
            } else {
                Err((Error::Internal("replay diverged from the recorded payload".into()), 1))
            }
        }
    }
}

fn main() -> ExitCode {
    // the toolkit runs sequentially; the env var is validated so batch
    // scripts fail fast on typos rather than silently ignoring the cap
    if let Ok(v) = std::env::var("OPRAMSEY_THREADS") {
        if v.parse::<usize>().map(|n| n >= 1) != Ok(true) {
            eprintln!("invalid OPRAMSEY_THREADS value '{v}' (need an integer ≥ 1)");
            return ExitCode::from(64);
        }
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(64),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, code)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
