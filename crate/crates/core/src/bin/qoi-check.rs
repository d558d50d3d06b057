use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qoi_check::calibration::UniformityReport;
use qoi_check::harness::{emit_ecdf_plot, exit_code, run_self_sbc, run_study, StudyConfig};

#[derive(Parser)]
#[command(name = "qoi-check", version, about = "Calibration checks for derived quantities of Bayesian models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a JSON config.
    Run { config: PathBuf },
    /// Run parameter-wise SBC for the config's model.
    Sbc { config: PathBuf },
    /// Render one report (or the first of a report array) as SVG.
    Plot { report: PathBuf, out: PathBuf },
}

fn plot(report: &PathBuf, out: &PathBuf) -> Result<(), String> {
    let text = std::fs::read_to_string(report).map_err(|e| format!("{}: {e}", report.display()))?;
    let rep: UniformityReport = match serde_json::from_str::<Vec<UniformityReport>>(&text) {
        Ok(v) => v.into_iter().next().ok_or("report array is empty")?,
        Err(_) => serde_json::from_str(&text).map_err(|e| e.to_string())?,
    };
    emit_ecdf_plot(&rep, out).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plot { report, out } => {
            return match plot(report, out) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Run { config } => run_study(config),
        Command::Sbc { config } => StudyConfig::load(config).and_then(|c| run_self_sbc(&c)),
    };
    match &result {
        Ok(o) => {
            for c in &o.summary.cells {
                println!("{:<14} {:<14} {}  chi2 p={:.4}", c.prior_label, c.posterior_label, if c.pass { "pass" } else { "FAIL" }, c.chi2_p);
            }
            for n in &o.summary.notes {
                println!("note: {n}");
            }
            if let Some(r) = &o.summary.band_refused {
                println!("band not computed: {r}");
            }
            if let Some(e) = &o.failure {
                eprintln!("error: {e}");
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result))
}
