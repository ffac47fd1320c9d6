use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metrise3d_cli::commands::{self, parse_box, parse_point, Axis, DEFAULT_POINT};
use metrise3d_cli::{CliError, InputDocument, SigmaDocument};
use metrise3d_core::solver::Options;

#[derive(Parser)]
#[command(name = "metrise3d", version, about = "Decide local metrisability of a 3-D projective structure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full decision at one point.
    Analyze {
        file: PathBuf,
        /// Base point X,Y,Z; defaults to the document's point, else 1,1,1.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: Option<[f64; 3]>,
        /// Jet order of the connection (3 or 4).
        #[arg(long, default_value_t = 3)]
        order: usize,
        /// Base tolerance; overrides METRISE3D_TOL.
        #[arg(long)]
        tol: Option<f64>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check a candidate solution of the metrisability equation.
    Verify {
        file: PathBuf,
        #[arg(long)]
        sigma: PathBuf,
        /// Number of sample points.
        #[arg(long, default_value_t = 10)]
        points: usize,
        /// Centre of the sample box.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: Option<[f64; 3]>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the decision over a grid and write CSV.
    Scan {
        file: PathBuf,
        /// Grid as xmin:xmax:n,ymin:ymax:n,zmin:zmax:n.
        #[arg(long = "box", value_parser = parse_box, allow_hyphen_values = true)]
        grid: [Axis; 3],
        /// Output CSV; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(create(path)?, value).map_err(|source| CliError::Json {
        path: path.to_owned(),
        source,
    })
}

fn options(order: usize, tol: Option<f64>) -> Result<Options, CliError> {
    Ok(Options {
        order,
        tol: commands::resolve_tol(tol)?,
        ..Options::default()
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze {
            file,
            point,
            order,
            tol,
            json,
        } => {
            let doc = InputDocument::load(&file)?;
            let spec = doc.connection()?;
            let p = point.or(doc.point).unwrap_or(DEFAULT_POINT);
            let report = commands::analyze(&spec, doc.name.clone(), p, &options(order, tol)?)?;
            print!("{}", report.render_text());
            if let Some(path) = json {
                write_json(&path, &report)?;
            }
        }
        Command::Verify {
            file,
            sigma,
            points,
            point,
            tol,
            json,
        } => {
            let doc = InputDocument::load(&file)?;
            let spec = doc.connection()?;
            let sigma = SigmaDocument::load(&sigma)?.components()?;
            let center = point.or(doc.point).unwrap_or(DEFAULT_POINT);
            let report = commands::verify(&spec, &sigma, center, points, commands::resolve_tol(tol)?)?;
            if report.warning.is_some() {
                eprint!("{}", report.render_text());
            } else {
                print!("{}", report.render_text());
            }
            if let Some(path) = json {
                write_json(&path, &report)?;
            }
        }
        Command::Scan {
            file,
            grid,
            out,
            order,
            tol,
        } => {
            let doc = InputDocument::load(&file)?;
            let spec = doc.connection()?;
            let results = commands::scan_reports(&spec, doc.name.clone(), &grid, &options(order, tol)?);
            let rows = commands::scan_rows(&results);
            match out {
                Some(path) => commands::write_csv(&rows, create(&path)?)?,
                None => commands::write_csv(&rows, io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
