//! `floodwatch`: generate synthetic sequences, run scenarios and the
//! ablation matrix, replay stored runs and print tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use floodwatch_core::evalkit::{
    ablation, canonical, default_baselines, generate_all, matrix, read_sequence, run_matrix, write_sequence,
    MatrixReport, MatrixSpec, MetricOptions, NamedSequence, RunMetrics, SensorVariant,
};
use floodwatch_core::fusion::DiurnalBaselines;
use floodwatch_core::provenance::{
    relative_path, replay, write_log, ReplayVerdict, RunArtifact, StorageLayout, INVOCATION_FILE, METRICS_FILE,
};
use floodwatch_core::scenario::Scenario;
use floodwatch_core::simnet::{CostModel, SimConfig};

const MATRIX_JSON: &str = "matrix.json";
const MATRIX_CSV: &str = "matrix.csv";
const MATRIX_TXT: &str = "matrix.txt";

#[derive(Debug, Parser)]
#[command(name = "floodwatch", version, about = "Edge flood-detection control plane simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic sequences, baselines and example scenarios.
    Gen(Common),
    /// Run one scenario end to end.
    Run(Common),
    /// Run the ablation matrix and write tables.
    Matrix(Common),
    /// Re-execute a stored run and compare its decision log byte for byte.
    Replay {
        /// Run directory containing config.toml and decisions.jsonl.
        run_dir: PathBuf,
    },
    /// Re-render tables from stored metrics.
    Report {
        /// Matrix output directory or single run directory.
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
struct Common {
    #[arg(long, env = "FLOODWATCH_SEED", default_value_t = 7)]
    seed: u64,
    /// Ablation id or name (comma separated for matrix), or a scenario file.
    #[arg(long, env = "FLOODWATCH_CONFIG")]
    config: Option<String>,
    /// Sequence file (run) or directory of sequence files (matrix).
    #[arg(long, env = "FLOODWATCH_SEQUENCE")]
    sequence: Option<PathBuf>,
    /// Sensor variant (comma separated for matrix).
    #[arg(long, env = "FLOODWATCH_VARIANT")]
    variant: Option<String>,
    /// Storage root holding data/ and data_results/.
    #[arg(long, env = "FLOODWATCH_OUT", default_value = "storage")]
    out: PathBuf,
    #[arg(long = "timeout-ms", env = "FLOODWATCH_TIMEOUT_MS")]
    timeout_ms: Option<u64>,
    /// TOML file overriding cost-model fields.
    #[arg(long = "cost-model", env = "FLOODWATCH_COST_MODEL")]
    cost_model: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Invocation<'a> {
    subcommand: &'a str,
    argv: Vec<String>,
    resolved: &'a Common,
}

/// Failures that map to a specific exit status.
#[derive(Debug)]
struct Divergence(String);

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Divergence {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Divergence>() => {
            eprintln!("replay divergent: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen(c) => gen(&c),
        Command::Run(c) => run(&c),
        Command::Matrix(c) => run_matrix_cmd(&c),
        Command::Replay { run_dir } => replay_cmd(&run_dir),
        Command::Report { dir } => report(&dir),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn record_invocation(dir: &Path, subcommand: &str, common: &Common) -> Result<()> {
    let inv = Invocation {
        subcommand,
        argv: std::env::args().collect(),
        resolved: common,
    };
    write(
        &dir.join(INVOCATION_FILE),
        &(serde_json::to_string_pretty(&inv)? + "\n"),
    )
}

fn gen(c: &Common) -> Result<()> {
    let layout = StorageLayout::new(&c.out);
    for (name, frames) in generate_all(c.seed)? {
        let path = layout.sequences_dir().join(format!("{name}.jsonl"));
        write_sequence(&path, &frames)?;
        let mut scenario = Scenario::new(
            PathBuf::from("../sequences").join(format!("{name}.jsonl")),
            "production",
            c.seed,
        );
        scenario.baselines = Some(PathBuf::from("../baselines.toml"));
        write(
            &layout.scenarios_dir().join(format!("{name}.toml")),
            &scenario.to_toml()?,
        )?;
        println!("wrote {}", path.display());
    }
    default_baselines().save(&layout.baselines_path())?;
    println!("wrote {}", layout.baselines_path().display());
    Ok(())
}

fn load_cost(path: &Option<PathBuf>) -> Result<Option<CostModel>> {
    path.as_ref()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let model: CostModel = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            model.validate()?;
            Ok(model)
        })
        .transpose()
}

fn parse_variants(s: &Option<String>, default: &[SensorVariant]) -> Result<Vec<SensorVariant>> {
    match s {
        None => Ok(default.to_vec()),
        Some(s) => s.split(',').map(|v| Ok(v.trim().parse()?)).collect(),
    }
}

/// Scenario file path plus the directory its relative paths resolve from.
fn scenario_from_flags(c: &Common) -> Result<(Scenario, PathBuf)> {
    let config = c.config.clone().unwrap_or_else(|| "production".to_string());
    let as_path = Path::new(&config);
    let (mut scenario, base) = if as_path.is_file() {
        let base = as_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut s = Scenario::load(as_path)?;
        if std::env::args().any(|a| a == "--seed") || std::env::var_os("FLOODWATCH_SEED").is_some() {
            s.seed = c.seed;
        }
        (s, base)
    } else {
        ablation::by_id(&config)?;
        let sequence = c
            .sequence
            .clone()
            .ok_or_else(|| anyhow!("--sequence is required unless --config names a scenario file"))?;
        let mut s = Scenario::new(sequence, &config, c.seed);
        let baselines = StorageLayout::new(&c.out).baselines_path();
        if baselines.is_file() {
            s.baselines = Some(baselines);
        }
        (s, PathBuf::new())
    };
    if as_path.is_file() {
        if let Some(seq) = &c.sequence {
            scenario.sequence = std::env::current_dir()?.join(seq);
        }
    }
    if let Some(v) = &c.variant {
        scenario.variant = v.parse()?;
    }
    if let Some(t) = c.timeout_ms {
        scenario.timeout_ms = Some(t);
    }
    if let Some(m) = load_cost(&c.cost_model)? {
        scenario.cost_model = Some(m);
    }
    Ok((scenario, base))
}

fn metrics_table(rows: &[(String, &RunMetrics)]) -> String {
    let headers = [
        "Run",
        "Frames",
        "Total Energy (J)",
        "Macro F1 (2-class)",
        "Balanced Accuracy",
        "Flood R.",
        "Watch R.",
        "p99 Lat. (ms)",
        "Temporal Coverage",
        "Offloads",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, m)| {
            vec![
                name.clone(),
                m.counts.decided.to_string(),
                format!("{:.1}", m.total_energy_j),
                format!("{:.3}", m.classification.macro_f1),
                format!("{:.3}", m.classification.balanced_accuracy),
                format!("{:.3}", m.classification.flood_recall),
                format!("{:.3}", m.classification.watch_recall),
                format!("{:.1}", m.p99_latency_ms as f64),
                format!("{:.3}", m.temporal_coverage),
                m.offload_jobs.to_string(),
            ]
        })
        .collect();
    matrix::render_text(&headers, &body)
}

fn run(c: &Common) -> Result<()> {
    let (scenario, base) = scenario_from_flags(c)?;
    let resolved = scenario.resolve(&base)?;
    let run_id = format!(
        "{}__{}__{}__s{}",
        resolved.ablation.name, resolved.sequence.name, scenario.variant, scenario.seed
    );
    let run_dir = StorageLayout::new(&c.out).run_dir(&run_id);
    let (_, metrics) = resolved.execute(&run_dir)?;
    record_invocation(&run_dir, "run", c)?;
    print!("{}", metrics_table(&[(run_id, &metrics)]));
    println!("artifacts in {}", run_dir.display());
    Ok(())
}

fn sequence_files(c: &Common) -> Result<Vec<PathBuf>> {
    let src = c
        .sequence
        .clone()
        .unwrap_or_else(|| StorageLayout::new(&c.out).sequences_dir());
    if src.is_file() {
        return Ok(vec![src]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&src)
        .with_context(|| format!("reading sequence directory {}", src.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .jsonl sequences in {} (run `floodwatch gen` first)", src.display());
    }
    Ok(files)
}

fn run_matrix_cmd(c: &Common) -> Result<()> {
    let layout = StorageLayout::new(&c.out);
    let configs = match &c.config {
        None => canonical(),
        Some(list) => list
            .split(',')
            .map(|k| Ok(ablation::by_id(k.trim())?))
            .collect::<Result<_>>()?,
    };
    let files = sequence_files(c)?;
    let mut sequences = Vec::new();
    for f in &files {
        let frames = read_sequence(f)?;
        sequences.push(NamedSequence::new(frames[0].frame.sequence_id.clone(), frames));
    }
    let baselines_path = layout.baselines_path();
    let baselines = if baselines_path.is_file() {
        DiurnalBaselines::load(&baselines_path)?
    } else {
        default_baselines()
    };
    let defaults = SimConfig::default();
    let base = SimConfig {
        offload_timeout_ms: c.timeout_ms.unwrap_or(defaults.offload_timeout_ms),
        cost: load_cost(&c.cost_model)?.unwrap_or_else(|| defaults.cost.clone()),
        ..defaults
    };
    base.validate()?;
    let spec = MatrixSpec {
        configs,
        sequences,
        variants: parse_variants(&c.variant, &SensorVariant::ALL)?,
        base: base.clone(),
        baselines,
        seed: c.seed,
        metrics: MetricOptions::default(),
    };
    let result = run_matrix(&spec);
    let out_dir = layout.run_dir(&format!("matrix__s{}", c.seed));
    for cell in &result.cells {
        let k = &cell.key;
        let dir = out_dir
            .join("cells")
            .join(format!("{}__{}__{}", k.config_name, k.sequence, k.variant));
        let seq_path = files
            .iter()
            .zip(&spec.sequences)
            .find(|(_, s)| s.name == k.sequence)
            .map(|(f, _)| std::env::current_dir().map(|d| d.join(f)))
            .transpose()?
            .expect("every cell comes from a loaded sequence");
        let baselines_rel = baselines_path
            .is_file()
            .then(|| std::env::current_dir().map(|d| relative_path(&d.join(&baselines_path), &d.join(&dir))))
            .transpose()?;
        let snapshot = Scenario::explicit(
            relative_path(&seq_path, &std::env::current_dir()?.join(&dir)),
            baselines_rel,
            &k.config_id,
            k.variant,
            c.seed,
            &base,
        );
        let artifact = RunArtifact::new(&dir);
        write(&artifact.decisions_path(), &write_log(&cell.log)?)?;
        write(
            &artifact.metrics_path(),
            &(serde_json::to_string_pretty(&cell.metrics)? + "\n"),
        )?;
        write(&artifact.config_path(), &snapshot.to_toml()?)?;
    }
    let report = result.report(c.seed, &spec.metrics)?;
    write(
        &out_dir.join(MATRIX_JSON),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    let overall: Vec<_> = report
        .aggregates
        .iter()
        .filter(|r| r.variant == SensorVariant::Neutral)
        .cloned()
        .collect();
    write(
        &out_dir.join(MATRIX_CSV),
        &matrix::render_csv(&matrix::OVERALL_HEADERS, &matrix::overall_rows(&overall))?,
    )?;
    let tables = render_report(&report);
    write(&out_dir.join(MATRIX_TXT), &tables)?;
    record_invocation(&out_dir, "matrix", c)?;
    print!("{tables}");
    for f in &report.failures {
        eprintln!("cell failed: {:?}: {}", f.key, f.error);
    }
    println!("artifacts in {}", out_dir.display());
    if !report.failures.is_empty() {
        bail!("{} matrix cells failed", report.failures.len());
    }
    Ok(())
}

fn render_report(report: &MatrixReport) -> String {
    let mut out = String::new();
    let variants: Vec<SensorVariant> = {
        let mut v: Vec<_> = report.aggregates.iter().map(|r| r.variant).collect();
        v.sort();
        v.dedup();
        v
    };
    for v in variants {
        let rows: Vec<_> = report.aggregates.iter().filter(|r| r.variant == v).cloned().collect();
        out += &format!("Overall performance ({v}, seed {})\n", report.seed);
        out += &matrix::render_text(&matrix::OVERALL_HEADERS, &matrix::overall_rows(&rows));
        out += "\n";
    }
    let fusion = matrix::fusion_rows(&report.cells, "4", "slow_creeping");
    if !fusion.is_empty() {
        out += "Sensor fusion effect (production, slow_creeping)\n";
        out += &matrix::render_text(&matrix::FUSION_HEADERS, &fusion);
    }
    out
}

fn replay_cmd(run_dir: &Path) -> Result<()> {
    match replay(&RunArtifact::new(run_dir))? {
        ReplayVerdict::Identical { lines } => {
            println!("identical: {lines} lines");
            Ok(())
        }
        ReplayVerdict::Divergent {
            line,
            frame_id,
            stored,
            regenerated,
        } => {
            let frame = frame_id.map_or("unknown".to_string(), |f| f.to_string());
            println!("divergent at line {line}, frame_id {frame}");
            println!("stored:      {}", stored.unwrap_or_default());
            println!("regenerated: {}", regenerated.unwrap_or_default());
            Err(Divergence(format!("line {line}, frame_id {frame}")).into())
        }
    }
}

fn report(dir: &Path) -> Result<()> {
    let matrix_json = dir.join(MATRIX_JSON);
    if matrix_json.is_file() {
        let text = fs::read_to_string(&matrix_json)?;
        let report: MatrixReport = serde_json::from_str(&text).context("parsing matrix.json")?;
        print!("{}", render_report(&report));
        return Ok(());
    }
    let metrics = dir.join(METRICS_FILE);
    if metrics.is_file() {
        let m: RunMetrics = serde_json::from_str(&fs::read_to_string(&metrics)?).context("parsing metrics.json")?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        print!("{}", metrics_table(&[(name, &m)]));
        return Ok(());
    }
    bail!("{} holds neither {MATRIX_JSON} nor {METRICS_FILE}", dir.display())
}
