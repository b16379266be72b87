//! Batch driver for nonlocal cylindrical panel studies.
//!
//! Subcommands read a JSON configuration, run the requested study and emit
//! CSV tables plus a JSON metadata sidecar into the output directory
//! (`--out`, or the `FRACPANEL_OUT` environment variable, or `./out`).
//! Exit code 0 on success; failures print a machine-readable
//! `{"category": ..., "message": ...}` line to stderr and exit nonzero.

use clap::{Args, Parser, Subcommand};
use fracpanel_core::assembly::LoadDirection;
use fracpanel_core::error::{Error, Result};
use fracpanel_core::study::{self, run_case, CaseConfig, CaseOutcome, ResultRecord};
use serde::Deserialize;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "fracpanel", version, about = "Nonlocal shallow-panel solver and study driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: $FRACPANEL_OUT or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Increase log verbosity (-v: steps, -vv: iterations).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single case.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also dump the assembled stiffness in Matrix Market format.
        #[arg(long)]
        dump_matrix: bool,
    },
    /// Cartesian sweep over fractional parameters.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Mesh-convergence study over dynamic rates.
    Converge {
        #[command(flatten)]
        common: Common,
    },
    /// Curvature / load-direction study (paired local and nonlocal paths).
    Curvature {
        #[command(flatten)]
        common: Common,
    },
    /// Dump the weights of one nodal RC-derivative stencil as CSV.
    StencilDump {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    base: CaseConfig,
    alphas: Vec<f64>,
    l_fs: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvergeConfig {
    base: CaseConfig,
    rates: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CurvatureConfig {
    base: CaseConfig,
    radii: Vec<f64>,
    directions: Vec<LoadDirection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StencilConfig {
    length: f64,
    n_elements: usize,
    node_index: usize,
    alpha: f64,
    l_f: f64,
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({
                    "category": e.category().tag(),
                    "message": e.to_string(),
                })
            );
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, dump_matrix } => {
            let out = setup(&common)?;
            let config: CaseConfig = read_config(&common.config)?;
            if dump_matrix {
                dump_stiffness(&config, &out)?;
            }
            let record = run_case(&config)?;
            log::info!("case {} done: w_center={:e}", record.case_id, record.w_center);
            let outcome = CaseOutcome {
                alpha: record.config.fractional.alpha,
                l_f: record.config.fractional.l_f,
                result: Ok(record),
            };
            let record = outcome.result.as_ref().ok().unwrap();
            study::write_results_csv(fs::File::create(out.join("results.csv"))?, std::slice::from_ref(&outcome))?;
            study::write_path_csv(fs::File::create(out.join("path.csv"))?, &[record])?;
            study::write_meta_json(fs::File::create(out.join("meta.json"))?, &[record])?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Sweep { common } => {
            let out = setup(&common)?;
            let sc: SweepConfig = read_config(&common.config)?;
            let outcomes = study::sweep(&sc.base, &sc.alphas, &sc.l_fs)?;
            let records: Vec<&ResultRecord> =
                outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
            study::write_results_csv(fs::File::create(out.join("results.csv"))?, &outcomes)?;
            study::write_path_csv(fs::File::create(out.join("path.csv"))?, &records)?;
            study::write_meta_json(fs::File::create(out.join("meta.json"))?, &records)?;
            let failed = outcomes.len() - records.len();
            println!(
                "wrote {} ({} cases, {} failed)",
                out.display(),
                outcomes.len(),
                failed
            );
            Ok(())
        }
        Command::Converge { common } => {
            let out = setup(&common)?;
            let cc: ConvergeConfig = read_config(&common.config)?;
            let rows = study::convergence_study(&cc.base, &cc.rates)?;
            study::write_convergence_csv(fs::File::create(out.join("convergence.csv"))?, &rows)?;
            serde_json::to_writer_pretty(fs::File::create(out.join("meta.json"))?, &rows)
                .map_err(Error::from)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Curvature { common } => {
            let out = setup(&common)?;
            let cc: CurvatureConfig = read_config(&common.config)?;
            let rows = study::curvature_study(&cc.base, &cc.radii, &cc.directions)?;
            study::write_curvature_csv(fs::File::create(out.join("curvature.csv"))?, &rows)?;
            serde_json::to_writer_pretty(fs::File::create(out.join("meta.json"))?, &rows)
                .map_err(Error::from)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::StencilDump { common } => {
            let out = setup(&common)?;
            let sc: StencilConfig = read_config(&common.config)?;
            let rows = study::stencil_dump(sc.length, sc.n_elements, sc.node_index, sc.alpha, sc.l_f)?;
            let mut wtr = csv::Writer::from_writer(fs::File::create(out.join("stencil.csv"))?);
            wtr.write_record(["node", "coord", "weight"]).map_err(Error::from)?;
            for r in &rows {
                wtr.write_record([r.node.to_string(), format!("{:e}", r.coord), format!("{:e}", r.weight)])
                    .map_err(Error::from)?;
            }
            wtr.flush()?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn setup(common: &Common) -> Result<PathBuf> {
    let level = match common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = common
        .out
        .clone()
        .or_else(|| std::env::var_os("FRACPANEL_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)?;
    Ok(out)
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Assembles the (reduced) stiffness of the case and writes it in Matrix
/// Market coordinate format, plus a quick linear solve as a sanity check in
/// the log.
fn dump_stiffness(config: &CaseConfig, out: &Path) -> Result<()> {
    use fracpanel_core::assembly::{BoundarySpec, GlobalSystem};
    use fracpanel_core::mesh::build_mesh;

    let rc = study::resolve(config)?;
    let mesh = build_mesh(rc.geometry, rc.n1, rc.n2)?;
    let sys = GlobalSystem::build(
        mesh,
        rc.material,
        BoundarySpec::new(rc.bc),
        rc.load,
        rc.frac,
        rc.quadrature,
    )?;
    let k = sys.assemble_linear();
    k.write_matrix_market(fs::File::create(out.join("stiffness.mtx"))?)?;
    log::info!("stiffness dumped: n={} nnz={}", k.n(), k.nnz_upper());
    Ok(())
}
