//! Command-line front end: load, evaluate, render.
//!
//! Exit status is 0 on success, 1 when inputs fail validation (every
//! violation is listed on stderr) and 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::grouping::{evaluate_groups, GroupKey};
use crate::ingest::{load_project, Project};
use crate::metrics::evaluate;
use crate::model::{AlignMode, EnsembleSpec};
use crate::report::{emit, Format, FuseResult, Payload, Provenance, ReportDocument, ReportError};
use crate::sweep::{individual_table, sweep_all, sweep_size};
use crate::voting::{fuse, TiePolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ensemble-vote",
    version,
    about = "Majority-voting ensemble evaluation over classifier prediction runs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Path to the manifest JSON file.
    #[arg(long, short = 'm')]
    pub manifest: PathBuf,
    /// How tied votes are resolved.
    #[arg(long, default_value = "lowest-label")]
    pub tie_policy: TiePolicy,
    /// `strict` rejects runs that do not cover the truth exactly;
    /// `intersect` keeps only samples every run covers.
    #[arg(long = "align", default_value = "strict", value_parser = parse_align)]
    pub align: AlignMode,
    /// json, csv or plot.
    #[arg(long, default_value = "json")]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record generation time and host name in JSON reports.
    #[arg(long)]
    pub provenance: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every input file and print a summary.
    Validate(Common),
    /// Accuracy of each run on its own.
    Table(Common),
    /// Fuse one ensemble.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// `all` or a comma-separated list of run ids.
        #[arg(long, default_value = "all")]
        runs: String,
    },
    /// Rank every ensemble of one size.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Rank every ensemble for a range of sizes and report the best per size.
    SweepAll {
        #[command(flatten)]
        common: Common,
        /// `a..b`, `a..=b`, `a-b` or a single size. Defaults to every size.
        #[arg(long, value_parser = parse_sizes)]
        sizes: Option<RangeInclusive<usize>>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Fuse every group of runs sharing a tag.
    Groups {
        #[command(flatten)]
        common: Common,
        #[arg(long = "by", default_value = "representation")]
        key: GroupKey,
    },
    /// Write the full result set into a directory: the individual table,
    /// per-size top-N plot data, best-per-size data and both group reports.
    Reproduce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
        /// Ensemble sizes to sweep. Defaults to 2 through the run count.
        #[arg(long, value_parser = parse_sizes)]
        sizes: Option<RangeInclusive<usize>>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Validate(c) | Command::Table(c) => c,
            Command::Fuse { common, .. }
            | Command::Sweep { common, .. }
            | Command::SweepAll { common, .. }
            | Command::Groups { common, .. }
            | Command::Reproduce { common, .. } => common,
        }
    }
}

fn parse_align(s: &str) -> Result<AlignMode, String> {
    match s {
        "strict" => Ok(AlignMode::Strict),
        "intersect" => Ok(AlignMode::Intersect),
        _ => Err(format!("unknown alignment mode {s:?}")),
    }
}

fn parse_sizes(s: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    let range = if let Some((a, b)) = s.split_once("..=") {
        num(a)?..=num(b)?
    } else if let Some((a, b)) = s.split_once("..") {
        num(a)?..=num(b)?
    } else if let Some((a, b)) = s.split_once('-') {
        num(a)?..=num(b)?
    } else {
        let k = num(s)?;
        k..=k
    };
    if range.is_empty() || *range.start() == 0 {
        return Err(format!("invalid size range {s:?}"));
    }
    Ok(range)
}

enum Failure {
    Usage(String),
    Invalid(Vec<String>),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(vec![e.to_string()])
    }
}

/// Runs one invocation. `args` includes the program name.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(rendered.as_bytes())
            } else {
                stdout.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Invalid(violations)) => {
            let _ = writeln!(
                stderr,
                "error: {} violation{} found",
                violations.len(),
                if violations.len() == 1 { "" } else { "s" }
            );
            for v in violations {
                let _ = writeln!(stderr, "  - {v}");
            }
            EXIT_INVALID
        }
    }
}

fn load(common: &Common) -> Result<Project, Failure> {
    load_project(&common.manifest, common.align)
        .map_err(|errors| Failure::Invalid(errors.iter().map(ToString::to_string).collect()))
}

fn document(project: &Project, common: &Common, payload: Payload) -> ReportDocument {
    let doc = ReportDocument::new(
        project.manifest_path.display().to_string(),
        &project.runs,
        &project.labels,
        common.align,
        common.tie_policy,
        payload,
    );
    if common.provenance {
        doc.with_provenance(Provenance::current())
    } else {
        doc
    }
}

fn check_sizes(range: &RangeInclusive<usize>, runs: usize) -> Result<(), Failure> {
    if *range.end() > runs {
        return Err(Failure::Usage(format!(
            "ensemble size {} exceeds the {runs} available runs",
            range.end()
        )));
    }
    Ok(())
}

fn check_top(top: usize) -> Result<(), Failure> {
    if top == 0 {
        return Err(Failure::Usage("--top must be at least 1".into()));
    }
    Ok(())
}

fn select(project: &Project, runs: &str) -> Result<EnsembleSpec, Failure> {
    let n = project.runs.len();
    if runs == "all" {
        return Ok(EnsembleSpec::all(n)?);
    }
    let mut indices = Vec::new();
    for id in runs.split(',').map(str::trim) {
        match project.runs.index_of(id) {
            Some(i) => indices.push(i),
            None => return Err(Failure::Usage(format!("unknown run id {id:?}"))),
        }
    }
    Ok(EnsembleSpec::from_indices(indices, n)?)
}

fn execute(command: &Command, stdout: &mut dyn Write) -> Result<(), Failure> {
    let common = command.common();
    let project = load(common)?;
    let runs = &project.runs;
    let policy = common.tie_policy;

    let payload = match command {
        Command::Validate(_) => {
            let mut summary = format!(
                "{} runs, {} samples, {} labels",
                runs.len(),
                runs.samples(),
                project.labels.len()
            );
            if runs.dropped() > 0 {
                summary.push_str(&format!(", {} samples dropped", runs.dropped()));
            }
            summary.push('\n');
            return write_output(common.out.as_deref(), summary.as_bytes(), stdout);
        }
        Command::Table(_) => Payload::IndividualTable(individual_table(runs)),
        Command::Fuse {
            runs: selection, ..
        } => {
            let ensemble = select(&project, selection)?;
            let fusion = fuse(ensemble, runs, policy)?;
            let metrics = evaluate(&fusion, runs.truth().labels(), runs.classes())?;
            Payload::Fuse(FuseResult { ensemble, metrics })
        }
        Command::Sweep { size, top, .. } => {
            check_sizes(&(1..=*size), runs.len())?;
            check_top(*top)?;
            if *size == 0 {
                return Err(Failure::Usage("--size must be at least 1".into()));
            }
            Payload::Sweep(sweep_size(runs, *size, policy, *top)?)
        }
        Command::SweepAll { sizes, top, .. } => {
            let sizes = sizes.clone().unwrap_or(1..=runs.len());
            check_sizes(&sizes, runs.len())?;
            check_top(*top)?;
            Payload::BestPerSize(sweep_all(runs, sizes, policy, *top)?)
        }
        Command::Groups { key, .. } => Payload::Groups(evaluate_groups(runs, *key, policy)?),
        Command::Reproduce {
            out_dir,
            sizes,
            top,
            ..
        } => return reproduce(&project, common, out_dir, sizes.clone(), *top, stdout),
    };

    let doc = document(&project, common, payload);
    let bytes = emit(&doc, common.format).map_err(|e| match e {
        ReportError::UnsupportedKindFormat { .. } => Failure::Usage(e.to_string()),
        e => e.into(),
    })?;
    write_output(common.out.as_deref(), &bytes, stdout)
}

fn reproduce(
    project: &Project,
    common: &Common,
    out_dir: &Path,
    sizes: Option<RangeInclusive<usize>>,
    top: usize,
    stdout: &mut dyn Write,
) -> Result<(), Failure> {
    let runs = &project.runs;
    let policy = common.tie_policy;
    let sizes = sizes.unwrap_or(2.min(runs.len())..=runs.len());
    check_sizes(&sizes, runs.len())?;
    check_top(top)?;
    fs::create_dir_all(out_dir)?;

    let all = sweep_all(runs, sizes, policy, top)?;
    let width = runs.len().to_string().len();
    let mut files: Vec<(String, ReportDocument, Format)> = vec![(
        "individual_table.csv".into(),
        document(
            project,
            common,
            Payload::IndividualTable(individual_table(runs)),
        ),
        Format::Csv,
    )];
    for report in &all.reports {
        files.push((
            format!("top_k{:0width$}.csv", report.size),
            document(project, common, Payload::Sweep(report.clone())),
            Format::Plot,
        ));
    }
    files.push((
        "best_per_size.csv".into(),
        document(project, common, Payload::BestPerSize(all)),
        Format::Plot,
    ));
    for key in [GroupKey::Representation, GroupKey::Family] {
        files.push((
            format!("groups_{key}.csv"),
            document(
                project,
                common,
                Payload::Groups(evaluate_groups(runs, key, policy)?),
            ),
            Format::Plot,
        ));
    }

    let mut listing = String::new();
    for (name, doc, format) in &files {
        let path = out_dir.join(name);
        write_atomic(&path, &emit(doc, *format)?)?;
        listing.push_str(&path.display().to_string());
        listing.push('\n');
    }
    stdout.write_all(listing.as_bytes())?;
    Ok(())
}

fn write_output(out: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), Failure> {
    match out {
        Some(path) => write_atomic(path, bytes),
        None => Ok(stdout.write_all(bytes)?),
    }
}

/// Write-then-rename so readers never see a partial report.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
