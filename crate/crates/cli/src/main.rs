mod settings;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use scalelab::decoder::WindowConfig;
use scalelab::graph::{EnsembleSpec, Termination};
use scalelab::laws::{NpdModel, UnlimitedVariant};
use scalelab::params::ScalingParams;
use scalelab::pipeline::{run_pipeline, PipelineConfig, Section};
use scalelab::predict::{predict_curves, write_predicted_csv, Law};
use scalelab::race::{adjusted_window, build_problem, combine_window_law, em_simulate, fp_solve, FpOptions};
use scalelab::sim::{simulate_fer, write_fer_csv, DecoderKind, SimConfig};
use scalelab::Error;

use settings::Settings;

/// Finite-length scaling laws and simulation of SC-LDPC codes on the BEC.
#[derive(Parser)]
#[command(name = "scalelab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Threshold and density-evolution phase table.
    De(Flags),
    /// Monte-Carlo estimation of the scaling parameters.
    Estimate(Flags),
    /// Predicted FER curves from a parameter table.
    Predict(Flags),
    /// Simulated FER curves.
    Simulate(Flags),
    /// Overtaking probability of the sliding-window race model.
    Fp(Flags),
}

/// Every flag overrides the config key of the same name.
#[derive(Args, Default)]
struct Flags {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dv: Option<String>,
    #[arg(long)]
    dc: Option<String>,
    /// Chain length.
    #[arg(short = 'L', long = "l")]
    l: Option<String>,
    /// Lifting factor.
    #[arg(short = 'N', long = "n")]
    n: Option<String>,
    /// `lo:hi:step` or a comma-separated list.
    #[arg(long)]
    eps_grid: Option<String>,
    /// Single erasure probability (fp).
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Parameter table (default `<out>/params.json`).
    #[arg(long)]
    params: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    frames: Option<String>,
    #[arg(long)]
    max_frame_errors: Option<String>,
    /// `unlimited`, `bp` or `window`.
    #[arg(long)]
    decoder: Option<String>,
    /// Reuse one graph for every frame.
    #[arg(long)]
    fixed_graph: bool,
    /// Comma-separated: unlimited, const, iterative, gaussian, shifted, window, all.
    #[arg(long)]
    models: Option<String>,
    /// Comma-separated pipeline sections: de, peeling, cov, cf, sigma2.
    #[arg(long)]
    only: Option<String>,
    /// Full-BP iteration budget.
    #[arg(long)]
    i: Option<String>,
    /// Window size.
    #[arg(long)]
    w: Option<String>,
    #[arg(long)]
    i_in: Option<String>,
    #[arg(long)]
    i_s: Option<String>,
    /// Peeling trials per ensemble (estimate).
    #[arg(long)]
    trials: Option<String>,
    /// Also run the SDE oracle with this many paths (fp).
    #[arg(long)]
    em_paths: Option<String>,
    /// Write the DE history at this ε (de).
    #[arg(long)]
    history_eps: Option<String>,
}

impl Flags {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let pairs: [(&str, &Option<String>); 22] = [
            ("dv", &self.dv),
            ("dc", &self.dc),
            ("l", &self.l),
            ("n", &self.n),
            ("eps_grid", &self.eps_grid),
            ("epsilon", &self.epsilon),
            ("seed", &self.seed),
            ("params", &self.params),
            ("out", &self.out),
            ("workers", &self.workers),
            ("frames", &self.frames),
            ("max_frame_errors", &self.max_frame_errors),
            ("decoder", &self.decoder),
            ("models", &self.models),
            ("only", &self.only),
            ("i", &self.i),
            ("w", &self.w),
            ("i_in", &self.i_in),
            ("i_s", &self.i_s),
            ("trials", &self.trials),
            ("em_paths", &self.em_paths),
            ("history_eps", &self.history_eps),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                s.set(k, v.clone());
            }
        }
        if self.fixed_graph {
            s.set("fixed_graph", "true");
        }
        Ok(s)
    }
}

fn out_dir(s: &Settings) -> Result<PathBuf> {
    let dir = PathBuf::from(s.raw("out").unwrap_or("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn params_path(s: &Settings) -> Result<PathBuf> {
    Ok(match s.raw("params") {
        Some(p) => PathBuf::from(p),
        None => out_dir(s)?.join("params.json"),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("writing {}", path.display()))?,
    ))
}

fn pipeline_config(s: &Settings) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::standard();
    cfg.dv = s.get_or("dv", cfg.dv)?;
    cfg.dc = s.get_or("dc", cfg.dc)?;
    cfg.l = s.get_or("l", cfg.l)?;
    cfg.n_peeling = s.get_or("n", cfg.n_peeling)?;
    cfg.seed = s.get_or("seed", cfg.seed)?;
    cfg.peeling_trials = s.get_or("trials", cfg.peeling_trials)?;
    if let Some(g) = s.grid("eps_grid")? {
        cfg.grid = g;
    }
    Ok(cfg)
}

fn load_existing(path: &Path) -> Result<Option<ScalingParams>> {
    if path.exists() {
        Ok(Some(ScalingParams::load(path)?))
    } else {
        Ok(None)
    }
}

fn cmd_de(s: &Settings) -> Result<()> {
    let cfg = pipeline_config(s)?;
    let path = params_path(s)?;
    let existing = load_existing(&path)?;
    let (table, _) = run_pipeline(&cfg, existing, &[Section::De])?;
    table.save(&path)?;
    println!("epsilon_star {:.7}", table.epsilon_star);
    if let Some(eps) = s.get::<f64>("history_eps")? {
        let spec = EnsembleSpec::new(cfg.dv, cfg.dc, cfg.l, cfg.dc, Termination::Terminated)?;
        let run = scalelab::de::run_de(&spec, eps, scalelab::de::MAX_ITERS, false);
        let file = out_dir(s)?.join("de_history.csv");
        scalelab::de::write_history(&run, create(&file)?)?;
        log::info!("wrote {}", file.display());
    }
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_estimate(s: &Settings) -> Result<()> {
    let cfg = pipeline_config(s)?;
    let only = s
        .list("only")
        .iter()
        .map(|x| Section::parse(x))
        .collect::<scalelab::Result<Vec<_>>>()?;
    let path = params_path(s)?;
    let existing = load_existing(&path)?;
    let (table, report) = run_pipeline(&cfg, existing, &only)?;
    table.save(&path)?;
    for (section, outcome) in report {
        println!("{} {:?}", section.name(), outcome);
    }
    log::info!("wrote {}", path.display());
    Ok(())
}

fn window_config(s: &Settings) -> Result<WindowConfig> {
    Ok(WindowConfig {
        w: s.get_or("w", 20)?,
        i_in: s.get_or("i_in", 60)?,
        i_s: s.get_or("i_s", 10)?,
    })
}

fn laws(s: &Settings, l: usize) -> Result<Vec<Law>> {
    let i = s.get_or("i", 175usize)?;
    let mut names = s.list("models");
    if names.is_empty() {
        names.push("unlimited".into());
    }
    if names.iter().any(|n| n == "all") {
        names = ["unlimited", "const", "iterative", "gaussian", "shifted"]
            .map(String::from)
            .to_vec();
    }
    names
        .iter()
        .map(|n| {
            Ok(match n.as_str() {
                "unlimited" => Law::Unlimited(UnlimitedVariant::Terminated),
                "unlimited_window" => Law::Unlimited(UnlimitedVariant::SlidingWindow { l, w: window_config(s)?.w }),
                "const" => Law::ConstPropagation(i),
                "iterative" => Law::Randomized(i, NpdModel::IterativeOu),
                "gaussian" => Law::Randomized(i, NpdModel::Gaussian),
                "shifted" => Law::Randomized(i, NpdModel::ShiftedGaussian),
                "window" => Law::SlidingWindow(window_config(s)?),
                other => bail!("unknown model `{other}`"),
            })
        })
        .collect()
}

fn cmd_predict(s: &Settings) -> Result<()> {
    let table = ScalingParams::load(&params_path(s)?)?;
    let n = s.get_or("n", 1000usize)?;
    let l = s.get_or("l", table.meta.l)?;
    let grid = s.grid("eps_grid")?.unwrap_or_else(|| table.meta.grid.clone());
    let laws = laws(s, l)?;
    let points = predict_curves(&table, &laws, &grid, n, l, s.get_or("seed", 0u64)?)?;
    let file = out_dir(s)?.join("curves_predict.csv");
    write_predicted_csv(&points, create(&file)?)?;
    write_predicted_csv(&points, std::io::stdout().lock())?;
    log::info!("wrote {}", file.display());
    Ok(())
}

fn cmd_simulate(s: &Settings) -> Result<()> {
    let spec = EnsembleSpec::new(
        s.get_or("dv", 5)?,
        s.get_or("dc", 10)?,
        s.get_or("l", 50)?,
        s.get_or("n", 1000)?,
        Termination::Terminated,
    )?;
    let decoder = match s.raw("decoder").unwrap_or("unlimited") {
        "unlimited" => DecoderKind::Unlimited,
        "bp" => DecoderKind::FullBp(s.get_or("i", 175)?),
        "window" => DecoderKind::SlidingWindow(window_config(s)?),
        other => bail!("unknown decoder `{other}` (expected unlimited, bp or window)"),
    };
    let cfg = SimConfig {
        spec,
        decoder,
        frames: s.get_or("frames", 10_000)?,
        max_frame_errors: s.get_or("max_frame_errors", 0)?,
        seed: s.get_or("seed", 1)?,
        fixed_graph: s.flag("fixed_graph")?,
    };
    if cfg.frames == 0 {
        bail!("frames must be positive");
    }
    let grid = s.grid("eps_grid")?.ok_or_else(|| anyhow!("missing setting `eps_grid`"))?;
    let mut points = Vec::new();
    for eps in grid {
        let p = simulate_fer(&cfg, eps)?;
        log::info!("ε = {eps}: {} errors in {} frames", p.errors, p.frames);
        points.push(p);
    }
    let file = out_dir(s)?.join("curves_simulate.csv");
    write_fer_csv(&points, create(&file)?)?;
    write_fer_csv(&points, std::io::stdout().lock())?;
    log::info!("wrote {}", file.display());
    Ok(())
}

fn cmd_fp(s: &Settings) -> Result<()> {
    let table = ScalingParams::load(&params_path(s)?)?;
    let eps: f64 = s.require("epsilon")?;
    let n = s.get_or("n", 1000usize)?;
    let l = s.get_or("l", table.meta.l)?;
    let cfg = window_config(s)?;
    let p = table.at(eps)?;
    let problem = build_problem(&p, n, l, &cfg)?;
    let sol = fp_solve(&problem, &FpOptions::standard(cfg.w))?;
    let w_prime = adjusted_window(&p, cfg.w, cfg.i_s);
    let law = combine_window_law(&p, n, l, w_prime, sol.pr_overtake);
    println!("pr_overtake {}", sol.pr_overtake);
    println!("w_prime {}", law.w_prime);
    println!("fer {}", law.fer);
    if let Some(paths) = s.get::<usize>("em_paths")? {
        println!("pr_overtake_em {}", em_simulate(&problem, paths, 0.1, s.get_or("seed", 0u64)?)?);
    }
    let file = out_dir(s)?.join("fp_position.csv");
    let mut out = create(&file)?;
    use std::io::Write;
    writeln!(out, "p_left,mass")?;
    let f = &sol.field;
    let h = (f.pl_range.1 - f.pl_range.0) / f.n_pl as f64;
    for (j, m) in f.position_marginal().iter().enumerate() {
        writeln!(out, "{},{m}", f.pl_range.0 + (j as f64 + 0.5) * h)?;
    }
    log::info!("wrote {}", file.display());
    Ok(())
}

/// 2 for configuration errors, 3 for estimation failures, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(core) = e.downcast_ref::<Error>() {
        return match core {
            Error::Spec(_) | Error::Range { .. } | Error::Schema { .. } => 2,
            Error::Io(_) | Error::Json(_) => 1,
            _ => 3,
        };
    }
    if e.chain().any(|c| c.is::<std::io::Error>()) {
        return 1;
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (run, flags): (fn(&Settings) -> Result<()>, &Flags) = match &cli.command {
        Command::De(f) => (cmd_de, f),
        Command::Estimate(f) => (cmd_estimate, f),
        Command::Predict(f) => (cmd_predict, f),
        Command::Simulate(f) => (cmd_simulate, f),
        Command::Fp(f) => (cmd_fp, f),
    };
    let result = flags.settings().and_then(|s| {
        if let Some(w) = s.get::<usize>("workers")? {
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build_global()
                .map_err(|e| anyhow!("worker pool: {e}"))?;
        }
        run(&s)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
