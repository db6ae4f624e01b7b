//! Argument parsing and dispatch for the `trimabs` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{
    cmd_build, cmd_check, cmd_params, parse_input_spec, parse_point, run_simulation, ModelFormat, SimulateArgs,
};
use crate::{CliError, Config, Outcome, Overrides};

#[derive(Parser, Debug)]
#[command(name = "trimabs", version, about = "Symbolic models of input-bounded linear systems")]
struct Cli {
    #[arg(long, global = true, default_value = "trimabs.toml")]
    config: PathBuf,
    /// Output file (build, simulate) or directory (check).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use this time quantization instead of synthesizing one.
    #[arg(long, global = true)]
    tau_override: Option<f64>,
    /// Require eta < epsilon/2 instead of eta < epsilon.
    #[arg(long, global = true)]
    strict_eta_half: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Dot,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print abstraction parameters and stability facts.
    Params,
    /// Write the symbolic model.
    Build {
        /// Keep a minimal set of inputs per state reaching the same successors.
        #[arg(long)]
        reduce: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Simulate reference, supervisory and quantized supervisory runs.
    Simulate {
        /// Plant start, e.g. "0.23,-0.24".
        #[arg(long, allow_hyphen_values = true)]
        y0: String,
        /// Reference start.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        /// Constant input "1.1" or one value per segment "1.1;1.0;0.9".
        #[arg(long, allow_hyphen_values = true)]
        input: String,
        /// Horizon; defaults to the abstraction's tau.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
    /// Run every sampled verification and write the reports.
    Check,
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = Config::load(&cli.config)?;
    let ov = Overrides {
        seed: cli.seed,
        tau: cli.tau_override,
        strict_eta_half: cli.strict_eta_half,
    };
    match &cli.command {
        Command::Params => cmd_params(&cfg, &ov),
        Command::Build { reduce, format } => {
            let format = match format {
                Format::Text => ModelFormat::Text,
                Format::Dot => ModelFormat::Dot,
            };
            let mut outcome = cmd_build(&cfg, &ov, *reduce, format)?;
            if let Some(path) = &cli.out {
                write_file(path, &outcome.stdout)?;
                outcome.stdout = format!("wrote {}\n", path.display());
            }
            Ok(outcome)
        }
        Command::Simulate { y0, x0, input, tau, dt } => {
            let args = SimulateArgs {
                y0: parse_point(y0)?,
                x0: parse_point(x0)?,
                input: parse_input_spec(input)?,
                tau: *tau,
                dt: *dt,
            };
            let sim = run_simulation(&cfg, &ov, &args)?;
            if let Some(path) = &cli.out {
                write_file(path, &sim.csv)?;
            }
            Ok(Outcome {
                stdout: sim.summary,
                notes: Vec::new(),
                verdict: true,
            })
        }
        Command::Check => cmd_check(&cfg, &ov, cli.out.as_deref()),
    }
}

/// Runs the command line `args` (program name first) and returns the exit
/// code: 0 on success, 1 for a failed verdict, 2 for bad configuration or
/// arguments, 3 for computation or output failures.
pub fn run<I, S>(args: I, stdout: &mut impl Write, stderr: &mut impl Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code.clamp(0, 2) as u8;
        }
    };
    match dispatch(&cli) {
        Ok(outcome) => {
            for note in &outcome.notes {
                let _ = writeln!(stderr, "warning: {note}");
            }
            let _ = stdout.write_all(outcome.stdout.as_bytes());
            u8::from(!outcome.verdict)
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
