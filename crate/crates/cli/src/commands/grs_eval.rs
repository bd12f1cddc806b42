use std::fmt::Write as _;
use std::path::PathBuf;

use geodistill::grs::{evaluate_feature_maps, GrsConfig, RelationPairing};
use geodistill::io::{decode_feature_map, parse_labels};

use crate::error::{CliError, CliResult};
use crate::output::Staged;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    teacher_features: PathBuf,
    #[arg(long)]
    student_features: PathBuf,
    /// Label file whose boxes seed the keypoints.
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.3)]
    score_threshold: f64,
    /// student-teacher or student-student.
    #[arg(long, default_value = "student-teacher")]
    pairing: String,
    #[arg(long)]
    out: PathBuf,
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn run(args: Args) -> CliResult {
    let pairing = match args.pairing.as_str() {
        "student-teacher" => RelationPairing::StudentTeacher,
        "student-student" => RelationPairing::StudentStudent,
        other => {
            return Err(CliError::flag(
                "--pairing",
                format!("unknown pairing {other:?}"),
            ))
        }
    };
    let cfg = GrsConfig {
        lambda_1: args.lambda1,
        score_threshold: args.score_threshold,
        pairing,
        ..GrsConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Flags(e.to_string()))?;

    let read_map = |path: &PathBuf| {
        let bytes = std::fs::read(path).map_err(|e| CliError::input(path, e))?;
        decode_feature_map(&bytes).map_err(|e| CliError::input(path, e))
    };
    let teacher = read_map(&args.teacher_features)?;
    let student = read_map(&args.student_features)?;
    let text = std::fs::read_to_string(&args.boxes).map_err(|e| CliError::input(&args.boxes, e))?;
    let labels = parse_labels(&text).map_err(|e| CliError::input(&args.boxes, e))?;

    // disjoint extents and channel mismatches land here
    let eval = evaluate_feature_maps(&teacher, &student, &labels, &cfg)
        .map_err(|e| CliError::Semantic(e.to_string()))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "l_grs {}", eval.l_grs);
    let _ = writeln!(summary, "lambda1 {}", cfg.lambda_1);
    let _ = writeln!(
        summary,
        "weighted_contribution {}",
        cfg.lambda_1 * eval.l_grs
    );
    for (k, o) in eval.objects.iter().enumerate() {
        let _ = writeln!(
            summary,
            "object {k} score {} included {} l_delta {}",
            o.score,
            u8::from(o.included),
            o.l_delta
        );
    }
    print!("{summary}");

    let mut file = format!(
        "# grs-eval teacher={} student={} boxes={} lambda1={} score_threshold={} pairing={}\n",
        args.teacher_features.display(),
        args.student_features.display(),
        args.boxes.display(),
        cfg.lambda_1,
        cfg.score_threshold,
        args.pairing,
    );
    file.push_str(&summary);
    for (k, o) in eval.objects.iter().enumerate() {
        let _ = writeln!(file, "m_s {k} {}", join(o.student.values()));
        let _ = writeln!(file, "m_t {k} {}", join(o.teacher.values()));
    }
    let mut staged = Staged::default();
    staged.add(&args.out, file.as_bytes())?;
    staged.commit()
}
