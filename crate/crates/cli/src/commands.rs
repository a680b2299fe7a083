use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use kerple::analysis::{cumulative_curve_with, write_curve_csv, write_effective_lengths_csv};
use kerple::corpus::{bundled_test_text, bundled_train_text, encode_bytes};
use kerple::eval::{
    build_report, write_positions_csv, write_report_csv, write_summary_csv, write_ttest_csv, EvalOptions,
};
use kerple::kernel::{kernel_curves, write_kernel_curves_csv, Catalog};
use kerple::model::{train_with_progress, write_loss_trace_csv, Model, ModelConfig};
use kerple::plot::LineChart;
use kerple::verify::{check_cpd, check_pd_fn, integer_grid, shift_search};
use kerple::{KernelSpec, KerpleError, Variant};

use crate::{AnalyzeArgs, Cli, Command, CurvesArgs, EvalArgs, SpecSource, TrainArgs, VerifyArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(KerpleError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Failed(e) => write!(f, "{e}"),
        }
    }
}

impl From<KerpleError> for CliError {
    fn from(e: KerpleError) -> Self {
        CliError::Failed(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<ExitCode> {
    fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Verify(args) => verify(args, &cli.out_dir),
        Command::Train(args) => train(args, &cli.out_dir),
        Command::Eval(args) => eval(args, &cli.out_dir),
        Command::Analyze(args) => analyze(args, &cli.out_dir),
        Command::Curves(args) => curves(args, &cli.out_dir),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn read_tokens(path: Option<&PathBuf>, bundled: &'static str) -> Result<Vec<usize>> {
    Ok(match path {
        Some(p) => encode_bytes(&fs::read(p)?),
        None => encode_bytes(bundled.as_bytes()),
    })
}

fn load_specs(source: &SpecSource) -> Result<Vec<KernelSpec>> {
    if let Some(path) = &source.checkpoint {
        return Ok(Model::load(path, None)?.kernel_specs()?);
    }
    if let Some(path) = &source.catalog {
        return Ok(Catalog::parse(&fs::read_to_string(path)?)?.specs()?);
    }
    if source.variant.is_empty() {
        return Err(CliError::Usage("give one of --checkpoint, --catalog or --variant".into()));
    }
    if !source.params.is_empty() {
        if source.variant.len() != 1 {
            return Err(CliError::Usage("--params needs exactly one --variant".into()));
        }
        let v = source.variant[0];
        if v == Variant::Alibi {
            return Err(CliError::Usage("ALiBi slopes are fixed; use --heads instead of --params".into()));
        }
        return Ok(vec![KernelSpec::relaxed(v, source.params.clone())?]);
    }
    if source.heads == 0 {
        return Err(CliError::Usage("--heads must be at least 1".into()));
    }
    let mut specs = Vec::new();
    for &v in &source.variant {
        for h in 0..source.heads {
            specs.push(KernelSpec::initial(v, h, source.heads)?);
        }
    }
    Ok(specs)
}

fn verify(args: &VerifyArgs, out_dir: &Path) -> Result<ExitCode> {
    if args.points < 2 || args.trials == 0 {
        return Err(CliError::Usage("--points must be at least 2 and --trials at least 1".into()));
    }
    let specs = load_specs(&args.source)?;
    let points = integer_grid(args.points);
    let path = out_dir.join("verify.csv");
    let mut w = create(&path)?;
    writeln!(w, "variant,head,check,worst_value,detail,result")?;
    let mut failures = 0;
    let mut record = |w: &mut BufWriter<File>, spec: &KernelSpec, check: &str, value: f64, detail: String, ok: bool| {
        if !ok {
            failures += 1;
        }
        let result = if ok { "pass" } else { "fail" };
        println!("{:<16} head {:<2} {check:<10} {value:>14.6e} {result}", spec.variant().name(), spec.head_index());
        writeln!(w, "{},{},{check},{value},{detail},{result}", spec.variant(), spec.head_index())
    };
    for spec in &specs {
        let v = spec.variant();
        if v != Variant::T5Bucket && !matches!(v, Variant::GaussWeight1 | Variant::GaussWeight2) {
            let c = check_cpd(spec, &points, args.trials, args.seed)?;
            let witness: Vec<String> = c.witness.iter().map(|x| format!("{x:.6}")).collect();
            let detail = if c.passed { String::new() } else { format!("witness={}", witness.join(" ")) };
            record(&mut w, spec, "cpd", c.worst_value, detail, c.passed)?;
        }
        if v.is_cpd() {
            match shift_search(spec, &points) {
                Ok(s) => record(&mut w, spec, "shift", s.final_min_eigenvalue(), format!("c={}", s.constant), true)?,
                Err(KerpleError::ShiftSearchExhausted {
                    last_constant,
                    min_eigenvalue,
                }) => record(&mut w, spec, "shift", min_eigenvalue, format!("c={last_constant}"), false)?,
                Err(e) => return Err(e.into()),
            }
        }
        if v.has_weight() {
            let c = check_pd_fn(|x| spec.weight_at(x).expect("weight variant"), &points, args.trials, args.seed)?;
            record(&mut w, spec, "weight_pd", c.worst_value, String::new(), c.passed)?;
        }
    }
    w.flush()?;
    eprintln!("wrote {}", path.display());
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failures} check(s) failed");
        ExitCode::from(1)
    })
}

fn train(args: &TrainArgs, out_dir: &Path) -> Result<ExitCode> {
    let d = ModelConfig::default();
    let flags = ModelConfig {
        variant: args.variant.unwrap_or(d.variant),
        seed: args.seed.unwrap_or(d.seed),
        steps: args.steps.unwrap_or(d.steps),
        learning_rate: args.learning_rate.unwrap_or(d.learning_rate),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        train_len: args.train_len.unwrap_or(d.train_len),
        layers: args.layers.unwrap_or(d.layers),
        heads: args.heads.unwrap_or(d.heads),
        head_dim: args.head_dim.unwrap_or(d.head_dim),
        mlp_hidden: args.mlp_hidden.unwrap_or(d.mlp_hidden),
        log_every: args.log_every.unwrap_or(d.log_every),
        ..d
    };
    let config = match &args.config {
        Some(path) => flags.with_overrides(&fs::read_to_string(path)?)?,
        None => {
            flags.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            flags
        }
    };
    let corpus = read_tokens(args.corpus.as_ref(), bundled_train_text())?;
    let ckpt = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir.join(format!("{}-seed{}.ckpt", config.variant, config.seed)));
    let trace_path = args.trace.clone().unwrap_or_else(|| ckpt.with_extension("loss.csv"));

    eprintln!(
        "training {} seed {} for {} steps on {} tokens",
        config.variant,
        config.seed,
        config.steps,
        corpus.len()
    );
    let start = Instant::now();
    let outcome = train_with_progress(&config, &corpus, config.steps, |r| {
        eprintln!("step {:>6}  loss {:.4}  ({:.1}s)", r.step, r.loss, start.elapsed().as_secs_f64());
    })?;
    outcome.model.save(&ckpt)?;
    let mut w = create(&trace_path)?;
    write_loss_trace_csv(&mut w, &outcome.trace)?;
    w.flush()?;
    eprintln!("wrote {} and {}", ckpt.display(), trace_path.display());
    Ok(ExitCode::SUCCESS)
}

fn eval(args: &EvalArgs, out_dir: &Path) -> Result<ExitCode> {
    let models = args
        .checkpoints
        .iter()
        .map(|p| Model::load(p, None).map_err(|e| KerpleError::Format(format!("{}: {e}", p.display()))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut variants: Vec<Variant> = Vec::new();
    let mut found_seeds: Vec<u64> = Vec::new();
    for m in &models {
        if !variants.contains(&m.config().variant) {
            variants.push(m.config().variant);
        }
        if !found_seeds.contains(&m.config().seed) {
            found_seeds.push(m.config().seed);
        }
    }
    found_seeds.sort_unstable();
    let seeds = if args.seeds.is_empty() { found_seeds } else { args.seeds.clone() };
    let lengths = if args.lengths.is_empty() {
        let l = models[0].config().train_len;
        vec![l, 2 * l, 4 * l]
    } else {
        args.lengths.clone()
    };
    if lengths.contains(&0) {
        return Err(CliError::Usage("evaluation lengths must be positive".into()));
    }
    if args.windows.contains(&0) {
        return Err(CliError::Usage("windows must be positive".into()));
    }
    let reference = if variants.contains(&args.reference) { args.reference } else { variants[0] };
    let corpus = read_tokens(args.corpus.as_ref(), bundled_test_text())?;
    let opts = EvalOptions {
        reference,
        alpha: args.alpha,
        windows: args.windows.clone(),
        ..EvalOptions::new(lengths.clone())
    };
    let report = build_report(&variants, &seeds, &models, &corpus, &opts)?;

    write_report_csv(create(&out_dir.join("report.csv"))?, &report)?;
    write_positions_csv(create(&out_dir.join("positions.csv"))?, &report)?;
    write_ttest_csv(create(&out_dir.join("ttest.csv"))?, &report)?;
    write_summary_csv(create(&out_dir.join("summary.csv"))?, &report)?;
    let json = serde_json::to_string_pretty(&report).expect("report is always serializable");
    fs::write(out_dir.join("report.json"), json)?;
    if args.svg {
        for &l in &lengths {
            fs::write(out_dir.join(format!("positions_{l}.svg")), report.positions_svg(l))?;
        }
    }
    println!("config {}  seeds {:?}  reference {}", report.config_hash, report.seeds, report.reference);
    print!("{}", report.render_table());
    println!("† = {} is significantly better (paired two-sided t-test, alpha {})", report.reference, report.alpha);
    eprintln!("wrote report files to {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn analyze(args: &AnalyzeArgs, out_dir: &Path) -> Result<ExitCode> {
    let specs = match args.alibi_heads {
        Some(0) => return Err(CliError::Usage("--alibi-heads must be at least 1".into())),
        Some(h) => (0..h).map(|i| KernelSpec::alibi(i, h)).collect::<kerple::Result<Vec<_>>>()?,
        None => load_specs(&args.source)?,
    };
    if !(args.threshold < 0.0) {
        return Err(CliError::Usage("--threshold must be negative".into()));
    }
    let grid: Vec<usize> = (0..=args.max_distance).collect();
    let curve = cumulative_curve_with(&specs, &grid, args.threshold)?;
    write_effective_lengths_csv(create(&out_dir.join("effective_lengths.csv"))?, &specs, &curve)?;
    write_curve_csv(create(&out_dir.join("effective_curve.csv"))?, &curve)?;
    if args.svg {
        let mut chart = LineChart::new(
            format!("heads with effective length <= distance ({} heads)", specs.len()),
            "distance",
            "heads",
        );
        chart.add_series(
            "count",
            curve.grid.iter().zip(&curve.counts).map(|(&d, &c)| (d as f64, c as f64)).collect(),
        );
        fs::write(out_dir.join("effective_curve.svg"), chart.to_svg())?;
    }
    println!("# {} heads, threshold {}", specs.len(), args.threshold);
    for (s, e) in specs.iter().zip(&curve.effective) {
        let e = e.map_or("none".to_string(), |e| e.to_string());
        println!("head {:<3} {:<16} {e}", s.head_index(), s.variant().name());
    }
    Ok(ExitCode::SUCCESS)
}

fn curves(args: &CurvesArgs, out_dir: &Path) -> Result<ExitCode> {
    let specs = load_specs(&args.source)?;
    let points = kernel_curves(&specs, args.max_distance);
    write_kernel_curves_csv(create(&out_dir.join("kernel_curves.csv"))?, &points)?;
    if args.svg {
        let mut chart = LineChart::new("bias against distance", "distance", "bias");
        for (i, s) in specs.iter().enumerate() {
            let series = points[i * (args.max_distance + 1)..(i + 1) * (args.max_distance + 1)]
                .iter()
                .map(|p| (p.distance as f64, p.value))
                .collect();
            chart.add_series(&format!("{} h{}", s.variant(), s.head_index()), series);
        }
        fs::write(out_dir.join("kernel_curves.svg"), chart.to_svg())?;
    }
    eprintln!("wrote {} curve points for {} heads", points.len(), specs.len());
    Ok(ExitCode::SUCCESS)
}
