use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use embsizer::analysis::{consistency_eval, stability_eval};
use embsizer::config::{DatasetSource, RunConfig};
use embsizer::data::{DatasetSplit, SchemaConfig};
use embsizer::error::{Error, Result};
use embsizer::retrain::{read_json, retrain, write_json, SizeAssignment};
use embsizer::rng::RngStream;
use embsizer::sampling::{Sampler, SamplerKind};
use embsizer::search::{expected_param_count, run_search, write_history_csv, write_matrix_csv, Mode};
use embsizer::supernet::{load_net, save_net, train_supernet, CandidateSet, EmbeddingNet, Scheme};

const BUILD_ID: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("EMBSIZER_GIT"));

#[derive(Parser)]
#[command(name = "embsizer", version = BUILD_ID, about = "One-shot embedding-size search")]
struct Cli {
    #[command(flatten)]
    global: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    scheme: Option<Scheme>,
    #[arg(long, global = true)]
    sampler: Option<SamplerKind>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    #[arg(long = "lambda-r", global = true)]
    lambda_r: Option<f64>,
    #[arg(long = "lambda-c", global = true)]
    lambda_c: Option<f64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset.
    Synth,
    /// Load and split a CSV dataset.
    Prep {
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Column schema JSON.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    TrainSupernet {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    Search {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        supernet: PathBuf,
    },
    Retrain {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        assignment: PathBuf,
        /// Start from the supernet's weights instead of a fresh initialization.
        #[arg(long)]
        inherit: Option<PathBuf>,
    },
    /// Train a uniform-size model.
    Baseline {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ues: usize,
    },
    Consistency {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        supernet: PathBuf,
    },
    Stability {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        supernet: PathBuf,
    },
    /// Merge stage outputs from one or more run directories.
    Report {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMBSIZER_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(p) = &o.out {
        cfg.out = p.clone();
    }
    if let Some(s) = o.scheme {
        cfg.scheme = s;
    }
    if let Some(k) = o.sampler {
        cfg.sampler.kind = k;
    }
    if let Some(m) = o.mode {
        cfg.mode = Some(m);
    }
    if let Some(w) = o.workers {
        cfg.workers = Some(w);
    }
    let mut cfg = cfg.resolve()?;
    // explicit weights win over the mode preset
    if let Some(r) = o.lambda_r {
        cfg.search.lambda_r = r;
    }
    if let Some(c) = o.lambda_c {
        cfg.search.lambda_c = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Tracks stage inputs so that the run record can list them and the stage
/// can confirm it left them untouched.
struct Stage {
    name: &'static str,
    cfg: RunConfig,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<PathBuf>,
}

impl Stage {
    fn new(name: &'static str, cfg: RunConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        Ok(Self { name, cfg, inputs: Vec::new(), outputs: Vec::new() })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.inputs.push((path.to_path_buf(), digest));
        Ok(())
    }

    fn path(&mut self, file: &str) -> PathBuf {
        let p = self.cfg.out.join(file);
        self.outputs.push(p.clone());
        p
    }

    fn data(&mut self, explicit: &Option<PathBuf>) -> Result<DatasetSplit> {
        let data = match explicit {
            Some(p) => {
                self.input(p)?;
                DatasetSplit::load(p)?
            }
            None => {
                if let DatasetSource::Prepared { path } | DatasetSource::Csv { path, .. } = &self.cfg.dataset {
                    self.input(&path.clone())?;
                }
                self.cfg.dataset.load()?
            }
        };
        log::info!(
            "dataset: {} fields, {}/{}/{} samples, schema {}",
            data.num_fields(),
            data.train.len(),
            data.validation.len(),
            data.test.len(),
            data.schema_hash()
        );
        Ok(data)
    }

    fn net(&mut self, path: &Path, data: &DatasetSplit) -> Result<EmbeddingNet> {
        self.input(path)?;
        Ok(load_net(path, &data.schemas)?.0)
    }

    fn finish(mut self, summary: Value) -> Result<()> {
        for (p, digest) in &self.inputs {
            if &file_digest(p)? != digest {
                return Err(Error::data(format!("stage {} modified its input {}", self.name, p.display())));
            }
        }
        let record_path = self.path(&format!("run_{}.json", self.name.replace('-', "_")));
        let record = json!({
            "stage": self.name,
            "build": BUILD_ID,
            "seed": self.cfg.seed,
            "config": self.cfg,
            "inputs": self.inputs.iter().map(|(p, d)| json!({ "path": p, "sha256": d })).collect::<Vec<_>>(),
            "outputs": self.outputs,
            "summary": summary,
        });
        write_json(&record, &record_path)?;
        println!("{}", serde_json::to_string(&summary)?);
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    if let Some(w) = cfg.workers {
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match cli.command {
        Command::Synth => {
            let DatasetSource::Synthetic { spec } = &cfg.dataset else {
                return Err(Error::config("synth needs a synthetic dataset source"));
            };
            let spec = embsizer::data::SyntheticSpec { seed: cfg.seed, ..spec.clone() };
            let mut stage = Stage::new("synth", cfg)?;
            let data = embsizer::data::generate_synthetic(&spec)?;
            let out = stage.path("data.adss");
            data.save(&out)?;
            write_json(&spec, stage.path("synthetic_spec.json"))?;
            stage.finish(json!({ "data": out, "schema_hash": data.schema_hash(), "samples": spec.n_samples }))
        }
        Command::Prep { csv, schema } => {
            let (path, schema) = match (csv, schema, &cfg.dataset) {
                (Some(c), Some(s), _) => {
                    let text = std::fs::read_to_string(&s).map_err(|e| Error::io(&s, e))?;
                    (c, SchemaConfig::from_json(&text)?)
                }
                (None, None, DatasetSource::Csv { path, schema }) => (path.clone(), schema.clone()),
                _ => return Err(Error::config("prep needs --csv and --schema, or a csv dataset source")),
            };
            let mut stage = Stage::new("prep", cfg)?;
            stage.input(&path)?;
            let data = embsizer::data::load_csv(&path, &schema)?;
            let out = stage.path("data.adss");
            data.save(&out)?;
            stage.finish(json!({ "data": out, "schema_hash": data.schema_hash(), "samples": data.train.len() + data.validation.len() + data.test.len() }))
        }
        Command::TrainSupernet { data } => {
            let mut stage = Stage::new("train-supernet", cfg.clone())?;
            let data = stage.data(&data)?;
            let rng = RngStream::new(cfg.seed);
            let mut net = EmbeddingNet::supernet(&data.schemas, &cfg.candidates, cfg.scheme, &cfg.model, &rng)?;
            let mut sampler = Sampler::new(&cfg.sampler, &data.cardinalities(), cfg.candidates.sizes())?;
            let log = train_supernet(&mut net, &data, &mut sampler, &cfg.supernet_train, &rng)?;
            let out = stage.path("supernet.adss");
            save_net(&net, &data.schemas, &[], &out)?;
            write_json(&log, stage.path("supernet_log.json"))?;
            if let Some(rates) = sampler.rates() {
                let names: Vec<String> = data.schemas.iter().map(|s| s.name.clone()).collect();
                write_matrix_csv(&rates.pe, cfg.candidates.sizes(), &names, stage.path("sampler_pe.csv"))?;
                write_json(&json!({ "fields": names, "pf": rates.pf }), stage.path("sampler_pf.json"))?;
            }
            stage.finish(json!({
                "supernet": out,
                "steps": log.losses.len(),
                "final_loss": log.losses.last(),
                "checksum": format!("{:016x}", net.checksum()),
            }))
        }
        Command::Search { data, supernet } => {
            let mut stage = Stage::new("search", cfg.clone())?;
            let data = stage.data(&data)?;
            let net = stage.net(&supernet, &data)?;
            let before = net.checksum();
            let out = run_search(&net, &data, &cfg.search, &RngStream::new(cfg.seed))?;
            if net.checksum() != before {
                return Err(Error::data("search modified the supernet"));
            }
            let assignment = SizeAssignment::new(&data.schemas, out.sizes.clone())?;
            let path = stage.path("assignment.json");
            assignment.save(&path)?;
            let names: Vec<String> = data.schemas.iter().map(|s| s.name.clone()).collect();
            write_matrix_csv(&out.p, net.candidates().sizes(), &names, stage.path("search_p.csv"))?;
            write_history_csv(&out.history, stage.path("search_history.csv"))?;
            let summary = json!({
                "assignment": assignment.to_map(),
                "steps": out.history.len(),
                "converged": out.converged,
                "expected_params": expected_param_count(&out.p, net.candidates().sizes(), &data.cardinalities()),
                "lambda_r": cfg.search.lambda_r,
                "lambda_c": cfg.search.lambda_c,
            });
            write_json(&summary, stage.path("search.json"))?;
            stage.finish(summary)
        }
        Command::Retrain { data, assignment, inherit } => {
            let mut stage = Stage::new("retrain", cfg.clone())?;
            let data = stage.data(&data)?;
            stage.input(&assignment)?;
            let a = SizeAssignment::load(&assignment, &data.schemas)?;
            let sup = match &inherit {
                Some(p) => Some(stage.net(p, &data)?),
                None => None,
            };
            let candidates = match &sup {
                Some(n) => n.candidates().clone(),
                None => cfg.candidates.clone(),
            };
            let out = retrain(&data, &candidates, &a, &cfg.model, &cfg.retrain, cfg.seed, sup.as_ref())?;
            save_net(&out.net, &data.schemas, &[], stage.path("model.adss"))?;
            write_json(&out.log, stage.path("retrain_log.json"))?;
            write_json(&out.report, stage.path("retrain_report.json"))?;
            stage.finish(serde_json::to_value(&out.report)?)
        }
        Command::Baseline { data, ues } => {
            let mut stage = Stage::new("baseline", cfg.clone())?;
            let data = stage.data(&data)?;
            let a = SizeAssignment::uniform(&data.schemas, ues);
            let out = retrain(&data, &CandidateSet::new(vec![ues])?, &a, &cfg.model, &cfg.retrain, cfg.seed, None)?;
            write_json(&out.report, stage.path(&format!("baseline_ues{ues}.json")))?;
            stage.finish(serde_json::to_value(&out.report)?)
        }
        Command::Consistency { data, supernet } => {
            let mut stage = Stage::new("consistency", cfg.clone())?;
            let data = stage.data(&data)?;
            let net = stage.net(&supernet, &data)?;
            let ccfg = embsizer::analysis::ConsistencyConfig { seed: cfg.seed, ..cfg.consistency.clone() };
            let report = consistency_eval(&net, &data, &ccfg)?;
            write_json(&report, stage.path("consistency.json"))?;
            stage.finish(json!({ "K": report.k, "tau_auc": report.tau_auc, "tau_logloss": report.tau_logloss }))
        }
        Command::Stability { data, supernet } => {
            let mut stage = Stage::new("stability", cfg.clone())?;
            let data = stage.data(&data)?;
            let net = stage.net(&supernet, &data)?;
            let seeds: Vec<u64> = (0..cfg.stability_runs as u64).map(|r| cfg.seed + r).collect();
            let report = stability_eval(&net, &data, &cfg.search, &seeds)?;
            write_json(&report, stage.path("stability.json"))?;
            report.write_csv(stage.path("stability.csv"))?;
            stage.finish(json!({ "modal_size": report.modal_size, "mode_frequency": report.mode_frequency }))
        }
        Command::Report { inputs } => {
            let mut stage = Stage::new("report", cfg)?;
            let (merged, rows) = merge_reports(&inputs, &mut stage)?;
            write_json(&merged, stage.path("report.json"))?;
            let csv_path = stage.path("report.csv");
            let mut w = csv::Writer::from_path(&csv_path)?;
            w.write_record(["source", "kind", "assignment", "auc", "logloss", "p_r", "flops"])?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush().map_err(|e| Error::io(&csv_path, e))?;
            stage.finish(json!({ "entries": merged.as_object().map_or(0, |m| m.len()) }))
        }
    }
}

/// Collects every known stage output under the given directories, keyed by
/// `<dir>/<file>`. Model reports also become CSV rows.
fn merge_reports(dirs: &[PathBuf], stage: &mut Stage) -> Result<(Value, Vec<Vec<String>>)> {
    let mut merged = serde_json::Map::new();
    let mut rows = Vec::new();
    for dir in dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                matches!(name, "retrain_report.json" | "search.json" | "consistency.json" | "stability.json")
                    || (name.starts_with("baseline_ues") && name.ends_with(".json"))
            })
            .collect();
        files.sort();
        for f in files {
            stage.input(&f)?;
            let v = read_json(&f)?;
            let name = f.file_stem().and_then(|n| n.to_str()).unwrap_or("").to_string();
            if v.get("auc").is_some() && v.get("p_r").is_some() {
                let num = |k: &str| v.get(k).map(|x| x.to_string()).unwrap_or_default();
                rows.push(vec![
                    dir.display().to_string(),
                    name.clone(),
                    v.get("assignment").map(|a| a.to_string()).unwrap_or_default(),
                    num("auc"),
                    num("logloss"),
                    num("p_r"),
                    v.pointer("/flops/total").map(|x| x.to_string()).unwrap_or_default(),
                ]);
            }
            merged.insert(format!("{}/{}", dir.display(), name), v);
        }
    }
    if merged.is_empty() {
        return Err(Error::config("no stage outputs found in the given directories"));
    }
    Ok((Value::Object(merged), rows))
}
