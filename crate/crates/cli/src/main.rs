use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use threshold_choice::io::{self, RunManifest};
use threshold_choice::modelcompare::{self, HorowitzVariant, TestReport};
use threshold_choice::synthetic::{self, SimConfig};
use threshold_choice::wtp::{self, CiMethod, CiRequest};
use threshold_choice::{
    fit, Error, FitOptions, FitResult, TransformKind, TransformSpec, UtilitySpec,
};

#[derive(Parser)]
#[command(name = "tchoice", version, about = "Threshold logit simulation, estimation and VTTS analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic choice dataset.
    #[command(allow_negative_numbers = true)]
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        /// Dataset CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to a dataset.
    #[command(allow_negative_numbers = true)]
    Estimate(EstimateArgs),
    /// Repeat simulation and estimation and summarize the estimates.
    #[command(allow_negative_numbers = true)]
    Replicate {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 500)]
        runs: usize,
        /// Transforms to fit, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = ["linear".to_string(), "htf".into(), "stf1".into(), "stf2".into(), "power".into()])]
        specs: Vec<String>,
        /// Summary CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// VTTS curve, asymptotic VTTS and its confidence interval from a fit.
    Vtts {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long, value_enum, default_value_t = CiArg::Sim)]
        ci_method: CiArg,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Curve CSV to write.
        #[arg(long)]
        curve: PathBuf,
        /// Summary JSON to write.
        #[arg(long)]
        summary: PathBuf,
        /// Optional SVG plot of the curve.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Compare two fits on the same data.
    Compare {
        /// Restricted model (LR) or the lower-fit model A (Horowitz).
        first: PathBuf,
        /// Full model (LR) or model B (Horowitz).
        second: PathBuf,
        #[arg(long, value_enum, default_value_t = TestArg::Lr)]
        test: TestArg,
        #[arg(long, value_enum, default_value_t = VariantArg::Original)]
        variant: VariantArg,
        /// Report JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CiArg {
    Sim,
    Fieller,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Lr,
    Horowitz,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Original,
    Bal,
}

#[derive(Args, Serialize)]
struct SimArgs {
    #[arg(long)]
    n_obs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from the stated-choice style generator (all covariates, two scale groups).
    #[arg(long)]
    stated_choice: bool,
    #[arg(long, value_parser = parse_kind)]
    dgp_transform: Option<TransformKind>,
    #[arg(long)]
    dgp_alpha: Option<f64>,
    #[arg(long)]
    beta_t: Option<f64>,
    #[arg(long)]
    beta_c: Option<f64>,
    /// Half-width of the symmetric time-difference range, minutes.
    #[arg(long)]
    time_range: Option<f64>,
    /// Half-width of the symmetric cost-difference range.
    #[arg(long)]
    cost_range: Option<f64>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_kind, default_value = "linear")]
    transform: TransformKind,
    #[arg(long, default_value_t = 1.0)]
    alpha_start: f64,
    #[arg(long)]
    headway: bool,
    #[arg(long)]
    changes: bool,
    #[arg(long)]
    income_elasticity: bool,
    #[arg(long)]
    time_elasticity: bool,
    /// Number of error-scale groups.
    #[arg(long, default_value_t = 1)]
    groups: usize,
    #[arg(long)]
    income_mean: Option<f64>,
    #[arg(long)]
    time_mean: Option<f64>,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long)]
    target_beta_t: Option<f64>,
    #[arg(long)]
    target_beta_c: Option<f64>,
    #[arg(long)]
    target_alpha: Option<f64>,
    #[arg(long)]
    target_beta_h: Option<f64>,
    #[arg(long)]
    target_beta_k: Option<f64>,
    #[arg(long)]
    target_lambda_i: Option<f64>,
    #[arg(long)]
    target_lambda_t: Option<f64>,
    /// Fit JSON to write.
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<TransformKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A fit as stored on disk, with optional Wald tests against target values.
#[derive(Serialize, Deserialize)]
struct FitDocument {
    #[serde(flatten)]
    fit: FitResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    wald_tests: Vec<WaldEntry>,
}

#[derive(Serialize, Deserialize)]
struct WaldEntry {
    parameter: String,
    target: f64,
    p_value: f64,
}

enum Failure {
    Validation(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) | Error::NotPositiveDefinite => Failure::Numerical(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

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
    let outcome = match cli.command {
        Command::Simulate { sim, out } => simulate(&sim, &out),
        Command::Estimate(args) => estimate(&args),
        Command::Replicate {
            sim,
            runs,
            specs,
            out,
        } => replicate(&sim, runs, &specs, &out),
        Command::Vtts {
            fit,
            ci_method,
            draws,
            level,
            seed,
            curve,
            summary,
            svg,
        } => vtts(
            &fit,
            CiRequest {
                method: match ci_method {
                    CiArg::Sim => CiMethod::MvnSimulation,
                    CiArg::Fieller => CiMethod::Fieller,
                },
                level,
                draws,
                seed,
            },
            &curve,
            &summary,
            svg.as_deref(),
        ),
        Command::Compare {
            first,
            second,
            test,
            variant,
            out,
        } => compare(&first, &second, test, variant, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn write_manifest(command: &str, config: serde_json::Value, outputs: &[&Path]) -> CmdResult {
    let manifest = RunManifest {
        tool: "tchoice".into(),
        tool_version: io::TOOL_VERSION.into(),
        command: command.into(),
        args: std::env::args().skip(1).collect(),
        config,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    io::write_json(&manifest_path(outputs[0]), &manifest)?;
    Ok(())
}

fn sim_config(args: &SimArgs) -> Result<SimConfig, Failure> {
    let mut cfg = if args.stated_choice {
        SimConfig::stated_choice(50_000, 1)
    } else {
        SimConfig::default()
    };
    if let Some(n) = args.n_obs {
        cfg.n_obs = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let kind = args.dgp_transform.unwrap_or(cfg.dgp_transform.kind());
    let alpha = args.dgp_alpha.or(cfg.dgp_transform.alpha()).unwrap_or(1.0);
    cfg.dgp_transform = TransformSpec::new(kind, alpha)?;
    if let Some(b) = args.beta_t {
        cfg.beta_t = b;
    }
    if let Some(b) = args.beta_c {
        cfg.beta_c = b;
    }
    if let Some(r) = args.time_range {
        cfg.time_range = (-r, r);
    }
    if let Some(r) = args.cost_range {
        cfg.cost_range = (-r, r);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(args: &SimArgs, out: &Path) -> CmdResult {
    let cfg = sim_config(args)?;
    let data = synthetic::generate_dataset(&cfg)?;
    io::write_dataset(out, &data)?;
    write_manifest("simulate", json!(cfg), &[out])?;
    println!("wrote {} records to {}", data.len(), out.display());
    Ok(())
}

fn estimate(args: &EstimateArgs) -> CmdResult {
    let data = io::read_dataset(&args.data)?;
    let spec = UtilitySpec {
        transform: TransformSpec::new(args.transform, args.alpha_start)?,
        use_headway: args.headway,
        use_changes: args.changes,
        use_income_elasticity: args.income_elasticity,
        use_time_elasticity: args.time_elasticity,
        n_groups: args.groups,
        income_mean: args.income_mean,
        time_mean: args.time_mean,
    };
    let options = FitOptions {
        max_iterations: args.max_iterations,
        ..FitOptions::default()
    };
    let result = fit(&data, &spec, &options)?;

    let targets = [
        ("beta_t", args.target_beta_t),
        ("beta_c", args.target_beta_c),
        ("alpha", args.target_alpha),
        ("beta_h", args.target_beta_h),
        ("beta_k", args.target_beta_k),
        ("lambda_i", args.target_lambda_i),
        ("lambda_t", args.target_lambda_t),
    ];
    let mut wald_tests = Vec::new();
    for (name, target) in targets {
        if let Some(target) = target {
            if result.estimate(name).is_none() {
                return Err(Failure::Validation(format!(
                    "--target-{} given but the model has no {name} parameter",
                    name.replace('_', "-")
                )));
            }
            wald_tests.push(WaldEntry {
                parameter: name.into(),
                target,
                p_value: result.wald(name, target)?,
            });
        }
    }

    for (i, name) in result.parameter_names.iter().enumerate() {
        let est = result.estimate(name).unwrap_or(f64::NAN);
        match &result.std_errors {
            Some(se) => println!("{name:>10} {est:>12.6} ({:.6})", se[i]),
            None => println!("{name:>10} {est:>12.6}"),
        }
    }
    println!("null LL {:.3}  final LL {:.3}", result.null_ll, result.final_ll);
    for note in &result.notes {
        eprintln!("note: {note}");
    }

    let converged = result.converged;
    let doc = FitDocument {
        fit: result,
        wald_tests,
    };
    io::write_json(&args.out, &doc)?;
    write_manifest(
        "estimate",
        json!({ "data": args.data, "spec": spec, "options": options }),
        &[&args.out],
    )?;
    if !converged {
        return Err(Failure::Numerical(format!(
            "estimation did not converge; result written to {}",
            args.out.display()
        )));
    }
    Ok(())
}

fn replicate(sim: &SimArgs, runs: usize, specs: &[String], out: &Path) -> CmdResult {
    let cfg = sim_config(sim)?;
    let fit_specs = specs
        .iter()
        .map(|s| {
            let kind = parse_kind(s).map_err(Failure::Validation)?;
            Ok(cfg.matching_spec(TransformSpec::new(kind, 1.0)?))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let options = FitOptions::default();
    let study = synthetic::replicate_study(&cfg, &fit_specs, runs, &options)?;
    io::write_replication_csv(out, &study.summaries)?;
    write_manifest(
        "replicate",
        json!({ "config": cfg, "runs": runs, "specs": fit_specs, "options": options }),
        &[out],
    )?;
    for s in &study.summaries {
        println!("{} ({} runs, {} excluded)", s.spec.kind(), s.runs, s.excluded);
        for p in &s.parameters {
            let se = p.mean_std_error.map(|v| format!("[{v:.4}]")).unwrap_or_default();
            println!("  {:>10} {:>10.4} ({:.4}) {se}", p.name, p.mean, p.empirical_sd);
        }
    }
    if study.summaries.iter().any(|s| s.runs == 0) {
        return Err(Failure::Numerical("a spec produced no usable fit".into()));
    }
    Ok(())
}

fn vtts(
    fit_path: &Path,
    request: CiRequest,
    curve_path: &Path,
    summary_path: &Path,
    svg: Option<&Path>,
) -> CmdResult {
    let doc: FitDocument = io::read_json(fit_path)?;
    let fit = doc.fit;
    let transform = fit.estimates.transform(fit.spec.kind())?;
    let moments = fit.time_cost_moments();
    let summary = wtp::summarize(
        &fit.estimates,
        &transform,
        moments,
        &request,
        &wtp::default_curve_grid(),
    )?;
    io::write_curve_csv(curve_path, &summary.curve)?;
    io::write_json(summary_path, &summary)?;
    let mut outputs = vec![summary_path, curve_path];
    if let Some(svg) = svg {
        let plot = io::curves_svg(
            "VTTS per hour",
            &[(fit.spec.kind().to_string(), summary.curve.clone())],
        );
        std::fs::write(svg, plot).map_err(Error::from)?;
        outputs.push(svg);
    }
    write_manifest(
        "vtts",
        json!({ "fit": fit_path, "method": request.method, "level": request.level,
                "draws": request.draws, "seed": request.seed }),
        &outputs,
    )?;

    match (summary.asymptotic_vtts, summary.ci_low, summary.ci_high) {
        (Some(v), Some(lo), Some(hi)) => println!("asymptotic VTTS {v:.2} [{lo:.2}, {hi:.2}]"),
        (Some(v), _, _) if summary.unbounded => println!("asymptotic VTTS {v:.2}, interval unbounded"),
        (Some(v), _, _) => println!("asymptotic VTTS {v:.2}"),
        (None, _, _) => println!(
            "asymptotic VTTS undefined for {}; beta ratio would be {:.2}",
            fit.spec.kind(),
            summary.diagnostic_ratio.unwrap_or(f64::NAN)
        ),
    }
    if summary.asymptotic_vtts.is_some() && moments.is_none() {
        return Err(Failure::Numerical(
            "the fit has no covariance; no confidence interval".into(),
        ));
    }
    Ok(())
}

fn compare(first: &Path, second: &Path, test: TestArg, variant: VariantArg, out: &Path) -> CmdResult {
    let a: FitDocument = io::read_json(first)?;
    let b: FitDocument = io::read_json(second)?;
    let (a, b) = (a.fit, b.fit);
    if a.n_obs != b.n_obs || (a.null_ll - b.null_ll).abs() > 1e-6 * a.null_ll.abs().max(1.0) {
        return Err(Failure::Validation(
            "the fits were not estimated on the same data".into(),
        ));
    }
    let report: TestReport = match test {
        TestArg::Lr => {
            let df = modelcompare::nesting_df(&a.spec, &b.spec)?;
            modelcompare::lr_test(a.final_ll, b.final_ll, df)?
        }
        TestArg::Horowitz => modelcompare::horowitz_test(
            a.final_ll,
            a.n_free_params,
            b.final_ll,
            b.n_free_params,
            a.null_ll,
            match variant {
                VariantArg::Original => HorowitzVariant::Original,
                VariantArg::Bal => HorowitzVariant::BenAkivaLerman,
            },
        )?,
    };
    io::write_json(out, &report)?;
    write_manifest("compare", json!({
            "first": first,
            "second": second,
            "test": match test { TestArg::Lr => "lr", TestArg::Horowitz => "horowitz" },
            "variant": match variant { VariantArg::Original => "original", VariantArg::Bal => "bal" },
        }), &[out])?;
    println!(
        "statistic {:.4}  p {:.4}  df {}",
        report.statistic, report.p_value, report.df
    );
    Ok(())
}
