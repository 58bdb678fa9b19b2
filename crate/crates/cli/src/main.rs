//! `ndd`: fit, search, simulate and diagnose nested Dirichlet models from the
//! command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nested_dirichlet::diagnostics::unit_grid;
use nested_dirichlet::io::{fit_report, text_artifact, trace_artifact, write_artifact, Cell, Table};
use nested_dirichlet::{
    exhaustive_search, influence, ingest, ks_statistic, marginal_fit_table, ndd_mle, ndd_moments, ndd_sample,
    parse_model, pseudo_residuals, qq_table, search, seeded_rng, Criterion, Dataset, IngestOptions, MleOptions,
    NddModel, RunConfig, SearchOptions, Tree, VERSION,
};

#[derive(Parser)]
#[command(name = "ndd", version = VERSION, about = "Nested Dirichlet models for compositional data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Greedy (or exhaustive) search for the tree structure.
    Search {
        /// Score every tree instead of the greedy search (at most 5 components).
        #[arg(long)]
        exhaustive: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Maximum likelihood fit of a given tree.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Draw from a fully parameterized tree.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Analytic mean, standard deviation and correlation of every component.
    Moments {
        #[command(flatten)]
        common: Common,
    },
    /// Pseudo-residuals, QQ tables, influence measures and marginal fits.
    Diagnose {
        /// Number of grid points for the marginal fit tables.
        #[arg(long, default_value_t = 99)]
        grid: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// CSV file with a header row of component names.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Tree text, or @FILE to read it from a file.
    #[arg(long)]
    tree: Option<String>,
    #[arg(long, default_value = "loglik", value_parser = parse_criterion)]
    criterion: Criterion,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of draws for `simulate`.
    #[arg(long)]
    n: Option<usize>,
    /// Renormalize rows to sum to 1.
    #[arg(long)]
    close: bool,
    /// Replace zeros by this value and re-close the row.
    #[arg(long, value_name = "FLOAT")]
    zero_replace: Option<f64>,
    #[arg(long, default_value_t = 1e-9)]
    grad_tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Worker threads for refits and candidate fits.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Directory for the output files; the main result goes to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse().map_err(|e: nested_dirichlet::Error| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(nested_dirichlet::Error),
}

impl From<nested_dirichlet::Error> for Failure {
    fn from(e: nested_dirichlet::Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> CmdResult {
    let (name, common) = match &command {
        Command::Search { common, .. } => ("search", common),
        Command::Fit { common } => ("fit", common),
        Command::Simulate { common } => ("simulate", common),
        Command::Moments { common } => ("moments", common),
        Command::Diagnose { common, .. } => ("diagnose", common),
    };
    if common.threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let mut ctx = Context::new(name, common)?;
    match command {
        Command::Search { exhaustive, .. } => cmd_search(&mut ctx, exhaustive),
        Command::Fit { .. } => cmd_fit(&mut ctx),
        Command::Simulate { .. } => cmd_simulate(&ctx),
        Command::Moments { .. } => cmd_moments(&ctx),
        Command::Diagnose { grid, .. } => cmd_diagnose(&mut ctx, grid),
    }
}

/// Parsed flags plus the run configuration echoed into the outputs.
struct Context<'a> {
    common: &'a Common,
    tree_text: Option<String>,
    config: RunConfig,
}

impl<'a> Context<'a> {
    fn new(command: &str, common: &'a Common) -> Result<Self, Failure> {
        let tree_text = match common.tree.as_deref() {
            Some(t) => Some(match t.strip_prefix('@') {
                // Tree artifacts carry `#` header lines.
                Some(file) => fs::read_to_string(file)
                    .map_err(|e| Failure::Usage(format!("{file}: {e}")))?
                    .lines()
                    .filter(|l| !l.trim_start().starts_with('#'))
                    .collect::<String>()
                    .trim()
                    .to_string(),
                None => t.to_string(),
            }),
            None => None,
        };
        if let Some(eps) = common.zero_replace {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Failure::Usage(format!("--zero-replace must lie in (0, 1), got {eps}")));
            }
        }
        let config = RunConfig {
            command: command.to_string(),
            data: common.data.as_ref().map(|p| p.display().to_string()),
            tree: tree_text.clone(),
            criterion: common.criterion,
            seed: common.seed,
            n: common.n,
            grad_tol: common.grad_tol,
            max_iter: common.max_iter,
            close: common.close,
            zero_replace: common.zero_replace,
            threads: common.threads,
            out: common.out.as_ref().map(|p| p.display().to_string()),
            actions: Vec::new(),
        };
        Ok(Self {
            common,
            tree_text,
            config,
        })
    }

    fn mle(&self) -> MleOptions {
        MleOptions {
            grad_tol: self.common.grad_tol,
            max_iter: self.common.max_iter,
            ..Default::default()
        }
    }

    fn tree_text(&self) -> Result<&str, Failure> {
        self.tree_text
            .as_deref()
            .ok_or_else(|| Failure::Usage(format!("`{}` requires --tree", self.config.command)))
    }

    fn model(&self) -> Result<NddModel, Failure> {
        Ok(NddModel::parse(self.tree_text()?)?)
    }

    fn tree(&self) -> Result<Tree, Failure> {
        Ok(parse_model(self.tree_text()?)?.0)
    }

    fn dataset(&mut self) -> Result<Dataset, Failure> {
        let path = self
            .common
            .data
            .as_deref()
            .ok_or_else(|| Failure::Usage(format!("`{}` requires --data", self.config.command)))?;
        let opts = IngestOptions {
            close: self.common.close,
            zero_replace: self.common.zero_replace,
        };
        let d = ingest(path, &opts)?;
        self.config.actions = d.actions.clone();
        Ok(d)
    }

    /// Writes each artifact under `--out`, or prints the first to stdout.
    fn emit(&self, artifacts: &[(String, String)]) -> CmdResult {
        match &self.common.out {
            Some(dir) => {
                for (name, contents) in artifacts {
                    write_artifact(dir, name, contents)?;
                }
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(artifacts[0].1.as_bytes())?;
                stdout.flush()?;
            }
        }
        Ok(())
    }
}

fn cmd_search(ctx: &mut Context, exhaustive: bool) -> CmdResult {
    let d = ctx.dataset()?;
    let opts = SearchOptions {
        criterion: ctx.common.criterion,
        mle: ctx.mle(),
    };
    let mut artifacts = Vec::new();
    if exhaustive {
        let best = exhaustive_search(&d.data, &opts)?;
        artifacts.push(("fit.json".into(), fit_report(&best.fit, opts.criterion, &ctx.config)?));
        artifacts.push(("tree.txt".into(), text_artifact(&best.fit.model.to_text(), &ctx.config)));
        let mut ranking = Table::new(["tree", opts.criterion.as_str()]);
        for (tree, value) in &best.ranking {
            ranking.push(vec![tree.as_str().into(), (*value).into()]);
        }
        artifacts.push(("ranking.csv".into(), ranking.to_csv_string(&ctx.config)));
    } else {
        let result = search(&d.data, &opts)?;
        artifacts.push(("fit.json".into(), fit_report(&result.fit, opts.criterion, &ctx.config)?));
        artifacts.push((
            "tree.txt".into(),
            text_artifact(&result.fit.model.to_text(), &ctx.config),
        ));
        artifacts.push(("trace.txt".into(), trace_artifact(&result.trace, &ctx.config)));
    }
    ctx.emit(&artifacts)
}

fn cmd_fit(ctx: &mut Context) -> CmdResult {
    let tree = ctx.tree()?;
    let d = ctx.dataset()?;
    let fit = ndd_mle(&tree, &d.data, &ctx.mle())?;
    ctx.emit(&[
        ("fit.json".into(), fit_report(&fit, ctx.common.criterion, &ctx.config)?),
        ("tree.txt".into(), text_artifact(&fit.model.to_text(), &ctx.config)),
    ])
}

fn cmd_simulate(ctx: &Context) -> CmdResult {
    let model = ctx.model()?;
    let n = ctx
        .common
        .n
        .ok_or_else(|| Failure::Usage("`simulate` requires --n".into()))?;
    let x = ndd_sample(&model, n, &mut seeded_rng(ctx.common.seed));
    ctx.emit(&[("simulate.csv".into(), Table::from_matrix(&x).to_csv_string(&ctx.config))])
}

fn cmd_moments(ctx: &Context) -> CmdResult {
    let m = ndd_moments(&ctx.model()?);
    let p = m.names.len();
    let mut summary = Table::new(
        ["component", "mean", "sd"]
            .into_iter()
            .map(String::from)
            .chain(m.names.iter().map(|s| format!("corr_{s}"))),
    );
    let mut cov = Table::new(std::iter::once("component".to_string()).chain(m.names.iter().cloned()));
    for i in 0..p {
        let mut row: Vec<Cell> = vec![m.names[i].as_str().into(), m.mean[i].into(), m.sd[i].into()];
        row.extend((0..p).map(|j| Cell::from(m.corr[[i, j]])));
        summary.push(row);
        let mut row: Vec<Cell> = vec![m.names[i].as_str().into()];
        row.extend((0..p).map(|j| Cell::from(m.cov[[i, j]])));
        cov.push(row);
    }
    ctx.emit(&[
        ("moments.csv".into(), summary.to_csv_string(&ctx.config)),
        ("cov.csv".into(), cov.to_csv_string(&ctx.config)),
    ])
}

fn cmd_diagnose(ctx: &mut Context, grid: usize) -> CmdResult {
    if grid == 0 {
        return Err(Failure::Usage("--grid must be at least 1".into()));
    }
    let tree = ctx.tree()?;
    let d = ctx.dataset()?;
    let report = influence(&tree, &d.data, &ctx.mle())?;
    let model = &report.fit.model;
    let res = pseudo_residuals(model, &d.data)?;

    let mut residuals = Table::new(res.names.iter().cloned());
    for row in res.r.rows() {
        residuals.push(row.iter().map(|&v| Cell::from(v)).collect());
    }
    let mut qq = Table::new(["component", "theoretical", "sample"]);
    let mut summary = Table::new(["component", "ks", "clamped"]);
    for (j, name) in res.names.iter().enumerate() {
        let col = res.r.column(j).to_vec();
        for (t, s) in qq_table(&col) {
            qq.push(vec![name.as_str().into(), t.into(), s.into()]);
        }
        let clamped = res.clamped.column(j).iter().filter(|&&c| c).count();
        summary.push(vec![name.as_str().into(), ks_statistic(&col).into(), clamped.into()]);
    }
    let mut ld = Table::new(["row", "ld", "converged", "iterations"]);
    let mut aitchison = Table::new(["row", "aitchison"]);
    for (i, (v, refit)) in report.ld.iter().zip(&report.refits).enumerate() {
        ld.push(vec![
            (i + 1).into(),
            (*v).into(),
            refit.converged.into(),
            refit.iterations.into(),
        ]);
        aitchison.push(vec![(i + 1).into(), report.aitchison[i].into()]);
    }

    let mut artifacts = vec![
        ("summary.csv".to_string(), summary.to_csv_string(&ctx.config)),
        (
            "fit.json".into(),
            fit_report(&report.fit, ctx.common.criterion, &ctx.config)?,
        ),
        ("residuals.csv".into(), residuals.to_csv_string(&ctx.config)),
        ("qq.csv".into(), qq.to_csv_string(&ctx.config)),
        ("ld.csv".into(), ld.to_csv_string(&ctx.config)),
        ("aitchison.csv".into(), aitchison.to_csv_string(&ctx.config)),
    ];
    if ctx.common.out.is_some() {
        let points = unit_grid(grid);
        for name in model.tree().component_names() {
            let mut t = Table::new(["x", "pdf", "cdf"]);
            for p in marginal_fit_table(model, name, &points)? {
                t.push(vec![p.x.into(), p.pdf.into(), p.cdf.into()]);
            }
            artifacts.push((
                format!("marginal_{}.csv", file_stem(name)),
                t.to_csv_string(&ctx.config),
            ));
        }
    }
    ctx.emit(&artifacts)
}

/// Component label made safe for use in a file name.
fn file_stem(name: &str) -> String {
    let stem: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if Path::new(&stem).file_name().is_some() {
        stem
    } else {
        "_".into()
    }
}
