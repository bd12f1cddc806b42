use std::fmt::Write as _;
use std::path::PathBuf;

use geodistill::augment::{
    augment_scene_with, AugmentConfig, AugmentMode, AugmentReport, Execution,
};
use geodistill::geometry::GridShape;
use geodistill::io::{decode_cloud, encode_cloud, parse_labels};

use crate::error::{CliError, CliResult};
use crate::output::Staged;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Input cloud file.
    #[arg(long)]
    input: PathBuf,
    /// Box label file.
    #[arg(long)]
    labels: PathBuf,
    /// Output cloud file.
    #[arg(long)]
    output: PathBuf,
    /// Voxels per box as LxWxH.
    #[arg(long, default_value = "4x2x1")]
    grid: String,
    #[arg(long, default_value_t = 0.05)]
    c_decay: f64,
    #[arg(long, default_value_t = 100.0)]
    d_range: f64,
    #[arg(long, default_value_t = 0.7)]
    tau_aug: f64,
    #[arg(long, default_value_t = 5)]
    np_min: usize,
    /// sparsify, dropout or both.
    #[arg(long, default_value = "both")]
    mode: String,
    #[arg(long, default_value_t = 0.5)]
    keep_ratio: f64,
    /// Treat labels as ground truth: every box is eligible.
    #[arg(long)]
    labeled: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-box report file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Worker threads for the per-box point scans; 1 runs sequentially.
    #[arg(long)]
    threads: Option<usize>,
}

impl Args {
    fn config(&self) -> CliResult<AugmentConfig> {
        let grid: GridShape = self.grid.parse().map_err(|e| CliError::flag("--grid", e))?;
        let mode: AugmentMode = self.mode.parse().map_err(|e| CliError::flag("--mode", e))?;
        let cfg = AugmentConfig {
            grid,
            c_decay: self.c_decay,
            d_range: self.d_range,
            n_p_min: self.np_min,
            tau_aug: self.tau_aug,
            mode,
            sparsify_keep_ratio: self.keep_ratio,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| CliError::Flags(e.to_string()))?;
        Ok(cfg)
    }

    /// Report header echoing every setting that affects the output.
    fn header(&self, cfg: &AugmentConfig) -> String {
        format!(
            "# augment input={} labels={} grid={} c_decay={} d_range={} tau_aug={} np_min={} mode={} keep_ratio={} labeled={} seed={}\n",
            self.input.display(),
            self.labels.display(),
            cfg.grid,
            cfg.c_decay,
            cfg.d_range,
            cfg.tau_aug,
            cfg.n_p_min,
            cfg.mode.as_str(),
            cfg.sparsify_keep_ratio,
            self.labeled,
            cfg.seed,
        )
    }
}

pub fn format_report(header: &str, report: &AugmentReport) -> String {
    let mut out = String::from(header);
    out.push_str("# index p applied points_before points_after\n");
    for b in &report.boxes {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            b.index,
            b.p,
            u8::from(b.applied),
            b.points_before,
            b.points_after
        );
    }
    out
}

pub fn run(args: Args) -> CliResult {
    let cfg = args.config()?;
    let execution = match args.threads {
        Some(0) => return Err(CliError::flag("--threads", "must be at least 1")),
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    let bytes = std::fs::read(&args.input).map_err(|e| CliError::input(&args.input, e))?;
    let cloud = decode_cloud(&bytes).map_err(|e| CliError::input(&args.input, e))?;
    let text =
        std::fs::read_to_string(&args.labels).map_err(|e| CliError::input(&args.labels, e))?;
    let labels = parse_labels(&text).map_err(|e| CliError::input(&args.labels, e))?;

    let work = || augment_scene_with(&cloud, &labels, args.labeled, &cfg, execution);
    let result = match args.threads {
        Some(n) if n > 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Semantic(e.to_string()))?
            .install(work),
        _ => work(),
    };
    let (out, report) = result.map_err(|e| CliError::Semantic(e.to_string()))?;

    let mut staged = Staged::default();
    staged.add(&args.output, &encode_cloud(&out))?;
    if let Some(path) = &args.report {
        staged.add(path, format_report(&args.header(&cfg), &report).as_bytes())?;
    }
    staged.commit()
}
