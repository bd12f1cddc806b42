use std::path::PathBuf;

use geodistill::harness::{run_experiment, ExperimentConfig};

use crate::error::{CliError, CliResult};
use crate::output::Staged;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving metrics.csv and summary.txt.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: Args) -> CliResult {
    let text =
        std::fs::read_to_string(&args.config).map_err(|e| CliError::input(&args.config, e))?;
    let cfg = ExperimentConfig::from_toml(&text).map_err(|e| CliError::input(&args.config, e))?;

    let report = run_experiment(&cfg).map_err(|e| CliError::Semantic(e.to_string()))?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let mut summary = format!(
        "iterations {}\nconverged {}\n",
        report.rows.len(),
        report.converged
    );
    if let (Some(init), Some(min), Some(fin)) = (
        report.initial_loss(),
        report.min_loss(),
        report.final_relation_error(),
    ) {
        summary.push_str(&format!(
            "initial_l_grs {init}\nmin_l_grs {min}\nfinal_mean_relation_error {fin}\n"
        ));
    }
    summary.push_str("\n# effective configuration\n");
    summary.push_str(&cfg.to_toml());

    let mut staged = Staged::default();
    staged.add(&args.out.join("metrics.csv"), report.to_csv().as_bytes())?;
    staged.add(&args.out.join("summary.txt"), summary.as_bytes())?;
    staged.commit()?;
    print!("{}", summary.split("\n#").next().unwrap_or_default());
    Ok(())
}
