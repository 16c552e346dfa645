//! Command-line front end.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::materials::{Attribute, MaterialDatabase, MaterialError};
use crate::optimizer::{brute_force_material_search, optimize, DesignMode, OptimizationReport, OptimizeError, ProblemSpec};
use crate::scenario::{self, ScenarioComparison, ScenarioError, SubsetComparison};
use crate::truss::{Truss, TrussError};
use crate::vae::{self, ReconstructionReport, TrainConfig, VaeError, VaeModel};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INPUT: u8 = 2;
    pub const INFEASIBLE: u8 = 3;
    pub const NUMERIC: u8 = 4;
    pub const VERIFICATION: u8 = 5;
}

const TABLE1: &str = "materials_table1";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => exit::INPUT,
            CliError::Infeasible(_) => exit::INFEASIBLE,
            CliError::Numeric(_) => exit::NUMERIC,
            CliError::Verification(_) => exit::VERIFICATION,
        }
    }
}

impl From<MaterialError> for CliError {
    fn from(e: MaterialError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TrussError> for CliError {
    fn from(e: TrussError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<VaeError> for CliError {
    fn from(e: VaeError) -> Self {
        match e {
            VaeError::Divergence { .. } | VaeError::Autodiff(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Analysis { .. } | OptimizeError::Divergence { .. } | OptimizeError::Autodiff(_) => CliError::Numeric(e.to_string()),
            OptimizeError::NoFeasibleMaterial(_) => CliError::Infeasible(e.to_string()),
            OptimizeError::Vae(v) => v.into(),
            OptimizeError::Spec(_) | OptimizeError::Truss(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Optimize(e) => e.into(),
            ScenarioError::Vae(e) => e.into(),
            ScenarioError::Materials(e) => e.into(),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "vaetruss", version, about = "Truss sizing and material selection through a VAE latent space")]
pub struct Cli {
    /// Directory for all output files.
    #[arg(long, global = true, env = "VAETRUSS_OUT_DIR", default_value = "vaetruss-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train the material VAE and report reconstruction errors.
    Train(TrainCmd),
    /// Export the latent scatter, distance matrix and attribute grids.
    Inspect(InspectCmd),
    /// Optimize areas and material, snap and re-optimize.
    Optimize(OptimizeCmd),
    /// Compare material-only, area-only and simultaneous optimization.
    Scenario(ScenarioCmd),
    /// Compare a full-database run against a class-subset model.
    Subset(SubsetCmd),
    /// Evaluate every database material at fixed areas.
    BruteForce(BruteForceCmd),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Inspect(_) => "inspect",
            Command::Optimize(_) => "optimize",
            Command::Scenario(_) => "scenario",
            Command::Subset(_) => "subset",
            Command::BruteForce(_) => "brute-force",
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Command::Train(c) => c.seed,
            Command::Inspect(_) => 0,
            Command::Optimize(c) => c.problem.seed,
            Command::Scenario(c) => c.problem.seed,
            Command::Subset(c) => c.problem.seed,
            Command::BruteForce(_) => 0,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DbArgs {
    /// Material CSV, or `materials_table1` for the bundled database.
    #[arg(long, default_value = TABLE1)]
    pub db: String,
}

impl DbArgs {
    fn load(&self) -> Result<MaterialDatabase, CliError> {
        if self.db == TABLE1 {
            Ok(MaterialDatabase::table1())
        } else {
            Ok(MaterialDatabase::load(&self.db)?)
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub db: DbArgs,
    #[arg(long, default_value_t = 50_000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.002)]
    pub lr: f64,
    #[arg(long, default_value_t = 5e-5)]
    pub beta: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Where the decoder comes from: a saved model, or a fresh training run.
#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Saved model; trained from the database when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 50_000)]
    pub vae_epochs: usize,
    #[arg(long, default_value_t = 0.002)]
    pub vae_lr: f64,
    #[arg(long, default_value_t = 5e-5)]
    pub beta: f64,
    #[arg(long, default_value_t = 7)]
    pub vae_seed: u64,
}

impl ModelArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            beta: self.beta,
            lr: self.vae_lr,
            epochs: self.vae_epochs,
            seed: self.vae_seed,
        }
    }

    fn load(&self, db: &MaterialDatabase) -> Result<VaeModel, CliError> {
        let model = match &self.model {
            Some(path) => VaeModel::load(path)?,
            None => vae::train(db, &self.train_config())?.model,
        };
        model.check_database(db)?;
        Ok(model)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ProblemArgs {
    /// Bundled truss name (`midcant6`, `tower47`) or a TOML file.
    #[arg(long, default_value = "midcant6")]
    pub truss: String,
    /// Cost limit C* in $.
    #[arg(long)]
    pub cost_limit: Option<f64>,
    /// Mass limit M* in kg.
    #[arg(long)]
    pub mass_limit: Option<f64>,
    #[arg(long, default_value_t = 4.0)]
    pub fs: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub amin: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub amax: f64,
    /// Starting area, also the fixed area of material-only runs.
    #[arg(long, default_value_t = 2e-3)]
    pub ainit: f64,
    #[arg(long, default_value_t = 6)]
    pub p: u32,
    #[arg(long, default_value_t = 3.0)]
    pub t0: f64,
    #[arg(long, default_value_t = 1.01)]
    pub mu: f64,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 20)]
    pub hidden: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

impl ProblemArgs {
    fn spec(&self) -> Result<ProblemSpec, CliError> {
        let spec = ProblemSpec {
            cost_limit: self.cost_limit,
            mass_limit: self.mass_limit,
            safety_factor: self.fs,
            a_min: self.amin,
            a_max: self.amax,
            a_init: self.ainit,
            p: self.p,
            t0: self.t0,
            mu: self.mu,
            lr: self.lr,
            max_iters: self.max_iters,
            eps_star: self.eps,
            tol: self.tol,
            hidden: self.hidden,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn truss(&self) -> Result<Truss, CliError> {
        match Truss::bundled(&self.truss) {
            Some(t) => Ok(t),
            None => Ok(Truss::load(&self.truss)?),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct InspectCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub db: DbArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Grid points per latent axis.
    #[arg(long, default_value_t = 61)]
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Simultaneous,
    MaterialOnly,
    AreaOnly,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimizeCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_enum, default_value = "simultaneous")]
    pub mode: ModeArg,
    /// Database material for area-only runs.
    #[arg(long, required_if_eq("mode", "area-only"))]
    pub material: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScenarioCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: ProblemArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SubsetCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: ProblemArgs,
    /// Material classes kept in the subset.
    #[arg(long, value_delimiter = ',', required = true)]
    pub classes: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct BruteForceCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub db: DbArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: ProblemArgs,
    /// Comma-separated member areas; all members at `--ainit` when omitted.
    #[arg(long, value_delimiter = ',')]
    pub areas: Option<Vec<f64>>,
}

/// Provenance written next to, and embedded in, every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub inputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &Command) -> Self {
        let config = serde_json::to_value(command).expect("arguments serialize");
        let hash = Sha256::digest(serde_json::to_string(&config).expect("json").as_bytes());
        let mut inputs = Vec::new();
        collect_inputs(&config, &mut inputs);
        Self {
            tool: "vaetruss".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.name().into(),
            seed: command.seed(),
            config,
            config_hash: hex::encode(hash),
            inputs,
        }
    }
}

fn collect_inputs(v: &serde_json::Value, out: &mut Vec<String>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                match (k.as_str(), v) {
                    ("db" | "truss" | "model", serde_json::Value::String(s)) => out.push(s.clone()),
                    _ => collect_inputs(v, out),
                }
            }
        }
        serde_json::Value::Array(items) => items.iter().for_each(|i| collect_inputs(i, out)),
        _ => {}
    }
}

/// Writes files into the output directory, stamping each with the manifest.
struct Output {
    dir: PathBuf,
    manifest: RunManifest,
    written: Vec<PathBuf>,
}

impl Output {
    fn create(dir: &Path, manifest: RunManifest) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut out = Self {
            dir: dir.to_path_buf(),
            manifest,
            written: Vec::new(),
        };
        let text = serde_json::to_string_pretty(&out.manifest).expect("manifest serializes");
        out.write("manifest.json", &text)?;
        Ok(out)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// JSON document `{"manifest": …, "<key>": value}`.
    fn json<T: Serialize>(&mut self, name: &str, key: &str, value: &T) -> Result<(), CliError> {
        let doc = serde_json::json!({ "manifest": self.manifest, key: value });
        self.write(name, &serde_json::to_string_pretty(&doc).expect("output serializes"))
    }

    /// CSV with `#` comment lines carrying the manifest.
    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        writeln!(
            buf,
            "# vaetruss {} seed={} config_hash={}",
            self.manifest.command, self.manifest.seed, self.manifest.config_hash
        )
        .expect("write to vec");
        writeln!(buf, "# manifest: {}", serde_json::to_string(&self.manifest).expect("json")).expect("write to vec");
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header).map_err(|e| CliError::Input(e.to_string()))?;
            for r in rows {
                w.write_record(&r).map_err(|e| CliError::Input(e.to_string()))?;
            }
            w.flush().map_err(|e| CliError::Input(e.to_string()))?;
        }
        self.write(name, &String::from_utf8(buf).expect("utf-8"))
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let manifest = RunManifest::new(&cli.command);
    let mut out = Output::create(&cli.out, manifest)?;
    match &cli.command {
        Command::Train(c) => train(c, &mut out),
        Command::Inspect(c) => inspect(c, &mut out),
        Command::Optimize(c) => optimize_cmd(c, &mut out),
        Command::Scenario(c) => scenario_cmd(c, &mut out),
        Command::Subset(c) => subset_cmd(c, &mut out),
        Command::BruteForce(c) => brute_force_cmd(c, &mut out),
    }
}

fn print_reconstruction(report: &ReconstructionReport) {
    println!("{:<20} {:<9} {:>8} {:>8} {:>8} {:>8}", "material", "class", "E %", "C %", "rho %", "Y %");
    for r in &report.rows {
        println!(
            "{:<20} {:<9} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            r.name, r.class, r.errors[0], r.errors[1], r.errors[2], r.errors[3]
        );
    }
    let m = report.max;
    println!("{:<20} {:<9} {:>8.3} {:>8.3} {:>8.3} {:>8.3}", "max", "", m[0], m[1], m[2], m[3]);
}

fn reconstruction_rows(report: &ReconstructionReport) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.name.clone(), r.class.clone()];
            row.extend(r.errors.iter().map(|e| num(*e)));
            row
        })
        .collect();
    let mut max = vec!["max".to_string(), String::new()];
    max.extend(report.max.iter().map(|e| num(*e)));
    rows.push(max);
    rows
}

const RECON_HEADER: [&str; 6] = ["material", "class", "E_err_pct", "C_err_pct", "rho_err_pct", "Y_err_pct"];

fn model_json(model: &VaeModel, manifest: &RunManifest) -> String {
    let mut doc: serde_json::Value = serde_json::from_str(&model.to_json()).expect("model json");
    doc["manifest"] = serde_json::to_value(manifest).expect("manifest");
    serde_json::to_string_pretty(&doc).expect("json")
}

fn train(c: &TrainCmd, out: &mut Output) -> Result<(), CliError> {
    let db = c.db.load()?;
    let cfg = TrainConfig {
        beta: c.beta,
        lr: c.lr,
        epochs: c.epochs,
        seed: c.seed,
    };
    let trained = vae::train(&db, &cfg)?;
    let text = model_json(&trained.model, &out.manifest);
    out.write("model.json", &text)?;
    out.csv(
        "loss_history.csv",
        &["epoch", "loss"],
        trained.loss_history.iter().enumerate().map(|(i, l)| vec![i.to_string(), num(*l)]),
    )?;
    let report = vae::reconstruction_report(&trained.model, &db);
    out.csv("reconstruction.csv", &RECON_HEADER, reconstruction_rows(&report))?;
    print_reconstruction(&report);
    println!("wrote {}", out.dir.join("model.json").display());
    Ok(())
}

fn inspect(c: &InspectCmd, out: &mut Output) -> Result<(), CliError> {
    let db = c.db.load()?;
    let model = VaeModel::load(&c.model)?;
    model.check_database(&db)?;
    let names = model.material_names();
    out.csv(
        "latent_scatter.csv",
        &["material", "class", "z0", "z1"],
        names
            .iter()
            .zip(model.material_classes())
            .zip(model.embeddings())
            .map(|((n, cl), z)| vec![n.clone(), cl.clone(), num(z[0]), num(z[1])]),
    )?;
    let d = model.distance_matrix();
    let mut header = vec!["material"];
    header.extend(names.iter().map(String::as_str));
    out.csv(
        "distance_matrix.csv",
        &header,
        d.iter().zip(names).map(|(row, n)| std::iter::once(n.clone()).chain(row.iter().map(|x| num(*x))).collect()),
    )?;
    for attr in Attribute::ALL {
        let grid = model.latent_grid(attr.short_name(), c.resolution)?;
        let n = grid.resolution();
        let rows = (0..n * n).map(|k| {
            let (i, j) = (k / n, k % n);
            vec![num(grid.axis[j]), num(grid.axis[i]), num(grid.at(i, j))]
        });
        out.csv(&format!("latent_grid_{}.csv", attr.short_name()), &["z0", "z1", "value"], rows)?;
    }
    let stats = vae::cluster_stats(&model);
    println!("intra-class mean distance {:.4}", stats.intra_class_mean);
    println!("inter-class mean distance {:.4}", stats.inter_class_mean);
    println!("intra < inter: {}", stats.intra_class_mean < stats.inter_class_mean);
    Ok(())
}

fn report_files(out: &mut Output, prefix: &str, report: &OptimizationReport) -> Result<(), CliError> {
    out.json(&format!("{prefix}report.json"), "report", report)?;
    let limit_cols = |c: &crate::optimizer::ConstraintValues| {
        vec![
            c.cost.map(num).unwrap_or_default(),
            c.mass.map(num).unwrap_or_default(),
            num(c.buckling),
            num(c.yield_),
        ]
    };
    out.csv(
        &format!("{prefix}history.csv"),
        &["iteration", "t", "loss", "J", "g_cost", "g_mass", "g_buckling", "g_yield", "z0", "z1", "step_norm"],
        report.history.iter().map(|h| {
            let mut row = vec![h.iteration.to_string(), num(h.t), num(h.loss), num(h.compliance)];
            row.extend(limit_cols(&h.constraints));
            match h.z {
                Some(z) => row.extend([num(z[0]), num(z[1])]),
                None => row.extend([String::new(), String::new()]),
            }
            row.push(num(h.step_norm));
            row
        }),
    )?;
    out.csv(
        &format!("{prefix}ranking.csv"),
        &["rank", "material", "class", "distance", "confidence"],
        report
            .ranking
            .iter()
            .enumerate()
            .map(|(k, r)| vec![(k + 1).to_string(), r.name.clone(), r.class.clone(), num(r.distance), num(r.confidence)]),
    )?;
    out.csv(
        &format!("{prefix}areas.csv"),
        &["member", "area_raw", "area_star"],
        report
            .areas_raw
            .iter()
            .zip(&report.a_star)
            .enumerate()
            .map(|(k, (a, b))| vec![k.to_string(), num(*a), num(*b)]),
    )
}

fn print_report(report: &OptimizationReport) {
    println!("mode          {}", report.mode);
    println!("iterations    {} (converged: {})", report.iterations, report.converged);
    if let Some(z) = report.z_star {
        println!("z*            ({:.4}, {:.4})", z[0], z[1]);
    }
    println!("J_raw         {:.6}", report.j_raw);
    println!("snapped       {} ({})", report.snapped, report.snapped_class);
    if let Some(g) = report.snapped_confidence() {
        println!("confidence    {g:.4}");
    }
    println!("J*            {:.6}", report.j_star);
    println!("worst g       {:.3e}", report.constraints_star.worst());
    println!("feasible      {}", report.feasible);
}

fn infeasible(report: &OptimizationReport) -> CliError {
    CliError::Infeasible(format!(
        "final design violates {} beyond tolerance {}",
        report.violated.join(", "),
        report.spec.tol
    ))
}

fn optimize_cmd(c: &OptimizeCmd, out: &mut Output) -> Result<(), CliError> {
    let db = c.db.load()?;
    let truss = c.problem.truss()?;
    let spec = c.problem.spec()?;
    let (mode, model) = match c.mode {
        ModeArg::Simultaneous => (DesignMode::Simultaneous, Some(c.model.load(&db)?)),
        ModeArg::MaterialOnly => (
            DesignMode::MaterialOnly {
                areas: vec![spec.a_init; truss.num_members()],
            },
            Some(c.model.load(&db)?),
        ),
        ModeArg::AreaOnly => {
            let name = c.material.as_deref().unwrap_or_default();
            let (_, m) = db.find(name).ok_or_else(|| CliError::Input(format!("unknown material `{name}`")))?;
            (DesignMode::AreaOnly { material: m.clone() }, None)
        }
    };
    let report = optimize(&truss, model.as_ref(), &db, &spec, mode, c.problem.seed)?;
    report_files(out, "", &report)?;
    print_report(&report);
    if report.feasible {
        Ok(())
    } else {
        Err(infeasible(&report))
    }
}

fn scenario_rows(cmp: &ScenarioComparison) -> Vec<Vec<String>> {
    cmp.rows
        .iter()
        .map(|r| {
            vec![
                r.scenario.clone(),
                r.material.clone(),
                r.class.clone(),
                num(r.report.j_raw),
                num(r.compliance),
                r.feasible.to_string(),
                r.areas.iter().map(|a| num(*a)).collect::<Vec<_>>().join(" "),
            ]
        })
        .collect()
}

fn scenario_cmd(c: &ScenarioCmd, out: &mut Output) -> Result<(), CliError> {
    let db = c.db.load()?;
    let truss = c.problem.truss()?;
    let spec = c.problem.spec()?;
    let model = c.model.load(&db)?;
    let cmp = scenario::compare_scenarios(&truss, &model, &db, &spec, c.problem.seed)?;
    out.csv(
        "scenarios.csv",
        &["scenario", "material", "class", "J_raw", "J", "feasible", "areas"],
        scenario_rows(&cmp),
    )?;
    out.csv(
        "brute_force.csv",
        &["material", "class", "J", "worst_g", "feasible"],
        cmp.brute_force_evaluations
            .iter()
            .map(|e| vec![e.name.clone(), e.class.clone(), num(e.compliance), num(e.constraints.worst()), e.feasible.to_string()]),
    )?;
    out.json("scenarios.json", "comparison", &cmp)?;

    println!("{:<14} {:<20} {:<9} {:>10} {:>10} feasible", "scenario", "material", "class", "J_raw", "J");
    for r in &cmp.rows {
        println!(
            "{:<14} {:<20} {:<9} {:>10.4} {:>10.4} {}",
            r.scenario, r.material, r.class, r.report.j_raw, r.compliance, r.feasible
        );
    }
    match &cmp.brute_force {
        Some(b) => println!("brute force: {} (J {:.4}), agrees: {}", b.name, b.compliance, cmp.brute_force_agrees()),
        None => println!("brute force: no material is feasible at the fixed areas"),
    }
    for chk in &cmp.ordering {
        println!("{}: {:.4} vs {:.4} -> {}", chk.relation, chk.lhs, chk.rhs, if chk.holds { "holds" } else { "FAILS" });
    }
    if cmp.ordering_holds() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("ordering violated: {}", cmp.failed_relations().join("; "))))
    }
}

fn subset_rows(cmp: &SubsetComparison) -> Vec<Vec<String>> {
    [("full", &cmp.full, &cmp.full_reconstruction), ("subset", &cmp.subset, &cmp.subset_reconstruction)]
        .into_iter()
        .map(|(label, r, rec)| {
            let mut row = vec![
                label.to_string(),
                num(r.j_raw),
                r.snapped.clone(),
                r.snapped_class.clone(),
                r.snapped_confidence().map(num).unwrap_or_default(),
                num(r.j_star),
                r.feasible.to_string(),
                r.a_star.iter().map(|a| num(*a)).collect::<Vec<_>>().join(" "),
            ];
            row.extend(rec.max.iter().map(|e| num(*e)));
            row
        })
        .collect()
}

fn subset_cmd(c: &SubsetCmd, out: &mut Output) -> Result<(), CliError> {
    let db = c.db.load()?;
    let truss = c.problem.truss()?;
    let spec = c.problem.spec()?;
    let model = c.model.load(&db)?;
    let train = c.model.train_config();
    let (cmp, sub_model) = scenario::refine_subset(&truss, &model, &db, &c.classes, &train, &spec, c.problem.seed)?;
    let text = model_json(&sub_model, &out.manifest);
    out.write("subset_model.json", &text)?;
    out.csv(
        "subset.csv",
        &[
            "run", "J_raw", "material", "class", "confidence", "J_star", "feasible", "areas", "E_max_err", "C_max_err", "rho_max_err", "Y_max_err",
        ],
        subset_rows(&cmp),
    )?;
    out.json("subset.json", "comparison", &cmp)?;
    for (label, r) in [("full", &cmp.full), ("subset", &cmp.subset)] {
        println!(
            "{label:<7} J_raw {:>10.4}  {:<20} ({})  J* {:>10.4}  feasible {}",
            r.j_raw, r.snapped, r.snapped_class, r.j_star, r.feasible
        );
    }
    println!("full max error   {:?}", cmp.full_reconstruction.max);
    println!("subset max error {:?}", cmp.subset_reconstruction.max);
    if cmp.subset.feasible {
        Ok(())
    } else {
        Err(infeasible(&cmp.subset))
    }
}

fn brute_force_cmd(c: &BruteForceCmd, out: &mut Output) -> Result<(), CliError> {
    let db = c.db.load()?;
    let truss = c.problem.truss()?;
    let spec = c.problem.spec()?;
    let areas = c.areas.clone().unwrap_or_else(|| vec![spec.a_init; truss.num_members()]);
    if areas.len() != truss.num_members() {
        return Err(TrussError::AreaCount {
            expected: truss.num_members(),
            found: areas.len(),
        }
        .into());
    }
    let (best, evaluations) = match brute_force_material_search(&truss, &db, &spec, &areas) {
        Ok(r) => (Some(r.best), r.evaluations),
        Err(OptimizeError::NoFeasibleMaterial(evals)) => (None, evals),
        Err(e) => return Err(e.into()),
    };
    out.csv(
        "brute_force.csv",
        &["material", "class", "J", "g_cost", "g_mass", "g_buckling", "g_yield", "feasible"],
        evaluations.iter().map(|e| {
            let g = &e.constraints;
            vec![
                e.name.clone(),
                e.class.clone(),
                num(e.compliance),
                g.cost.map(num).unwrap_or_default(),
                g.mass.map(num).unwrap_or_default(),
                num(g.buckling),
                num(g.yield_),
                e.feasible.to_string(),
            ]
        }),
    )?;
    for e in &evaluations {
        println!("{:<20} J {:>10.4}  worst g {:>+10.3e}  {}", e.name, e.compliance, e.constraints.worst(), if e.feasible { "feasible" } else { "infeasible" });
    }
    match best {
        Some(b) => {
            println!("best: {} (J {:.4})", b.name, b.compliance);
            Ok(())
        }
        None => {
            let violations: Vec<String> = evaluations.iter().map(|e| format!("{}: {}", e.name, e.constraints.violated(spec.tol).join("+"))).collect();
            Err(CliError::Infeasible(format!("no feasible material ({})", violations.join("; "))))
        }
    }
}
