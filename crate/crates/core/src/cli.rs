//! The `reward-curve`, `simulate` and `annotate` commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::annotate::{self, AnnotateError, DifficultyReport, GroupStats};
use crate::config::{ConfigError, RunConfig};
use crate::label::DifficultyLabel;
use crate::reward::{adaptive_length_reward, adaptive_length_reward_thresholded, DifficultyScore, RolloutSample};
use crate::sim::{parse_bank, question_bank, SimError};
use crate::train::{run_simulation, Summary, TrainError};

/// Points per unit of normalized length in the reward curve.
pub const CURVE_GRID: usize = 512;
pub const CURVE_GAMMAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Numeric { .. } | TrainError::Difficulty(_) => Self::Numeric(e.to_string()),
            TrainError::Sim(SimError::Difficulty(_)) => Self::Numeric(e.to_string()),
            TrainError::EmptyBank => Self::Data(e.to_string()),
            TrainError::Reward(_) | TrainError::Sim(_) | TrainError::Config(_) => {
                Self::Config(ConfigError::Invalid(e.to_string()))
            }
        }
    }
}

impl From<AnnotateError> for CliError {
    fn from(e: AnnotateError) -> Self {
        match e {
            AnnotateError::BadCutoffs { .. } | AnnotateError::CutoffExceedsEvaluators { .. } => {
                Self::Config(ConfigError::Invalid(e.to_string()))
            }
            _ => Self::Data(e.to_string()),
        }
    }
}

/// Formats a float with 12 significant digits, in the shortest form that
/// reads back to the rounded value. Magnitudes below 1e-4 or from 1e15 up use
/// exponent notation.
pub fn fmt_float(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_float)
}

/// Command output: files written plus a human-readable report.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    pub report: String,
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("cannot write `{}`: {e}", path.display()))
}

fn out_file(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| write_err(&path, e))?;
    Ok((path, BufWriter::new(f)))
}

fn csv_file(dir: &Path, name: &str) -> Result<(PathBuf, csv::Writer<BufWriter<File>>), CliError> {
    let (path, f) = out_file(dir, name)?;
    Ok((path, csv::Writer::from_writer(f)))
}

fn write_rows<W: Write>(
    path: &Path,
    w: &mut csv::Writer<W>,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    for row in rows {
        w.write_record(&row).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}

/// Normalized lengths of the curve: the `1/CURVE_GRID` grid plus `l_min`.
pub fn curve_lengths(l_min: f64) -> Vec<f64> {
    let mut ls: Vec<f64> = (0..=CURVE_GRID).map(|i| i as f64 / CURVE_GRID as f64).collect();
    if !ls.contains(&l_min) {
        ls.push(l_min);
        ls.sort_by(f64::total_cmp);
    }
    ls
}

/// Writes `reward_curve.csv` with columns
/// `form,gamma,norm_length,reward_correct,reward_incorrect`, where `form` is
/// `plain` or `thresholded`.
pub fn cmd_reward_curve(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    cfg.validate()?;
    let r = &cfg.reward;
    let mut rows =
        vec![["form", "gamma", "norm_length", "reward_correct", "reward_incorrect"].map(String::from).to_vec()];
    let numeric = |e: crate::reward::RewardError| CliError::Numeric(e.to_string());
    for thresholded in [false, true] {
        for &g in &CURVE_GAMMAS {
            let gamma = DifficultyScore::new(g).map_err(numeric)?;
            for l in curve_lengths(r.l_min) {
                let eval = |correct| -> Result<f64, CliError> {
                    let s = RolloutSample::from_norm_length(correct, l).map_err(numeric)?;
                    if thresholded {
                        adaptive_length_reward_thresholded(&s, gamma, r).map_err(numeric)
                    } else {
                        Ok(adaptive_length_reward(&s, gamma, r))
                    }
                };
                rows.push(vec![
                    if thresholded { "thresholded" } else { "plain" }.to_string(),
                    fmt_float(g),
                    fmt_float(l),
                    fmt_float(eval(true)?),
                    fmt_float(eval(false)?),
                ]);
            }
        }
    }
    let (path, mut w) = csv_file(&cfg.out, "reward_curve.csv")?;
    let n = rows.len() - 1;
    write_rows(&path, &mut w, rows)?;
    let report = format!(
        "reward curve: {n} rows (k_easy={}, k_hard={}, l_min={}) -> {}\n",
        fmt_float(r.k_easy),
        fmt_float(r.k_hard),
        fmt_float(r.l_min),
        path.display()
    );
    Ok(CommandOutput { files: vec![path], report })
}

fn summary_rows(initial: &Summary, fin: &Summary) -> Vec<Vec<String>> {
    let mut rows = vec![["class", "questions", "initial_mean_length", "initial_accuracy", "mean_length", "accuracy"]
        .map(String::from)
        .to_vec()];
    for c in DifficultyLabel::ALL {
        if let (Some(a), Some(b)) = (initial.class(c), fin.class(c)) {
            rows.push(vec![
                c.to_string(),
                b.questions.to_string(),
                fmt_float(a.mean_length),
                fmt_float(a.accuracy),
                fmt_float(b.mean_length),
                fmt_float(b.accuracy),
            ]);
        }
    }
    let n: usize = fin.per_class.iter().flatten().map(|c| c.questions).sum();
    rows.push(vec![
        "overall".into(),
        n.to_string(),
        fmt_float(initial.overall_mean_length),
        fmt_float(initial.overall_accuracy),
        fmt_float(fin.overall_mean_length),
        fmt_float(fin.overall_accuracy),
    ]);
    rows
}

/// Runs the seeded GRPO simulation. Writes `training_log.csv`
/// (`step,objective,mean_reward,mean_len_easy,mean_len_medium,mean_len_hard,kl_mean`)
/// and `summary.csv`
/// (`class,questions,initial_mean_length,initial_accuracy,mean_length,accuracy`).
pub fn cmd_simulate(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    cfg.validate()?;
    let bank = match &cfg.env.bank {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Data(format!("cannot read bank `{}`: {e}", p.display())))?;
            parse_bank(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => question_bank(cfg.env.per_class, cfg.grpo.seed, &cfg.env.profile)
            .map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?,
    };
    let stack = cfg.simulate.stack;
    let out = run_simulation(&bank, stack, &cfg.reward, &cfg.grpo, &cfg.sim)?;

    let mut log =
        vec![["step", "objective", "mean_reward", "mean_len_easy", "mean_len_medium", "mean_len_hard", "kl_mean"]
            .map(String::from)
            .to_vec()];
    for row in &out.log {
        log.push(vec![
            row.step.to_string(),
            fmt_float(row.objective),
            fmt_float(row.mean_reward),
            opt_float(row.mean_length[0]),
            opt_float(row.mean_length[1]),
            opt_float(row.mean_length[2]),
            fmt_float(row.kl_mean),
        ]);
    }
    let (log_path, mut w) = csv_file(&cfg.out, "training_log.csv")?;
    write_rows(&log_path, &mut w, log)?;
    let (sum_path, mut w) = csv_file(&cfg.out, "summary.csv")?;
    write_rows(&sum_path, &mut w, summary_rows(&out.initial, &out.summary))?;

    let mut report = format!(
        "simulate: stack={} seed={} steps={} questions={}\n",
        stack.as_str(),
        cfg.grpo.seed,
        cfg.grpo.steps,
        bank.len()
    );
    report.push_str(&format!("{:<8} {:>9} {:>12} {:>10}\n", "class", "questions", "mean_length", "accuracy"));
    for c in DifficultyLabel::ALL {
        if let Some(s) = out.summary.class(c) {
            report.push_str(&format!(
                "{:<8} {:>9} {:>12.4} {:>10.4}\n",
                c.as_str(),
                s.questions,
                s.mean_length,
                s.accuracy
            ));
        }
    }
    report.push_str(&format!(
        "{:<8} {:>9} {:>12.4} {:>10.4}\n",
        "overall",
        bank.len(),
        out.summary.overall_mean_length,
        out.summary.overall_accuracy
    ));
    Ok(CommandOutput { files: vec![log_path, sum_path], report })
}

fn report_rows(rep: &DifficultyReport) -> Vec<Vec<String>> {
    let mut rows =
        vec![["grouping", "label", "count", "accuracy", "mean_length", "log_mean_length"].map(String::from).to_vec()];
    for (grouping, groups) in [("original", &rep.by_original), ("model", &rep.by_model)] {
        for c in DifficultyLabel::ALL {
            if let Some(GroupStats { count, accuracy, mean_length, log_mean_length }) = groups[c.index()] {
                rows.push(vec![
                    grouping.to_string(),
                    c.to_string(),
                    count.to_string(),
                    fmt_float(accuracy),
                    fmt_float(mean_length),
                    fmt_float(log_mean_length),
                ]);
            }
        }
    }
    rows
}

/// Relabels an evaluation log by vote count. Writes `labels.csv`
/// (`question_id,original_difficulty,correct_votes,model_difficulty`),
/// `transitions.csv`, and, when outcomes are configured, `report.csv`
/// (`grouping,label,count,accuracy,mean_length,log_mean_length`).
pub fn cmd_annotate(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    cfg.validate()?;
    let a = &cfg.annotate;
    let log_path = a
        .eval_log
        .as_ref()
        .ok_or_else(|| CliError::Config(ConfigError::Invalid("annotate.eval_log is not set".into())))?;
    let open = |p: &Path| File::open(p).map_err(|e| CliError::Data(format!("cannot read `{}`: {e}", p.display())));
    let in_file = |p: &Path, e: AnnotateError| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", p.display())),
        other => other,
    };

    let records = annotate::parse_eval_log(open(log_path)?).map_err(|e| in_file(log_path, e))?;
    let evaluators = annotate::check_evaluators(&records).map_err(|e| in_file(log_path, e))?;
    let cutoffs = a.cutoffs();
    cutoffs.check(evaluators)?;
    let labels: Vec<DifficultyLabel> = records.iter().map(|r| cutoffs.label(r.correct_votes())).collect();
    let table = annotate::transition_table(&records, &labels)?;

    let mut rows =
        vec![["question_id", "original_difficulty", "correct_votes", "model_difficulty"].map(String::from).to_vec()];
    for (r, l) in records.iter().zip(&labels) {
        rows.push(vec![
            r.question_id.clone(),
            r.original_difficulty.to_string(),
            r.correct_votes().to_string(),
            l.to_string(),
        ]);
    }
    let (labels_path, mut w) = csv_file(&cfg.out, "labels.csv")?;
    write_rows(&labels_path, &mut w, rows)?;

    let (t_path, w) = out_file(&cfg.out, "transitions.csv")?;
    table.write_csv(w).map_err(|e| write_err(&t_path, e))?;
    let mut files = vec![labels_path, t_path];

    let mut report = format!(
        "annotate: {} records, {evaluators} evaluators, cutoffs easy>={} medium>={}\n",
        records.len(),
        cutoffs.easy_min,
        cutoffs.medium_min
    );
    let (ot, nt, un, ch) = (table.orig_totals(), table.new_totals(), table.unchanged(), table.changed());
    report.push_str(&format!("{:<8} {:>6} {:>6} {:>7} {:>7}\n", "label", "orig", "new", "un-chg", "chg"));
    for c in DifficultyLabel::ALL {
        let i = c.index();
        report.push_str(&format!("{:<8} {:>6} {:>6} {:>7} {:>7}\n", c.as_str(), ot[i], nt[i], un[i], ch[i]));
    }

    if let Some(p) = &a.outcomes {
        let outcomes = annotate::parse_outcomes(open(p)?, &records).map_err(|e| in_file(p, e))?;
        let rep = annotate::difficulty_report(&records, &labels, &outcomes)?;
        let (r_path, mut w) = csv_file(&cfg.out, "report.csv")?;
        write_rows(&r_path, &mut w, report_rows(&rep))?;
        files.push(r_path);
    }
    Ok(CommandOutput { files, report })
}
