//! `lagselect`: per-subject VAR order selection.
//!
//! Writes `<out>/lagselect.csv` with one row per subject, criterion and
//! order, and `<out>/lagselect.json` with each subject's selections and the
//! modal order per criterion.

use mespec_core::var::{select_lag, Criterion, LagEstimator, LassoPenalty};
use serde::Serialize;

use crate::args::{Cli, LagselectArgs};
use crate::error::{CliError, CoreContext, Result};
use crate::io;

#[derive(Debug, Serialize)]
struct Summary {
    p_max: usize,
    criterion: Criterion,
    estimator: String,
    outlier_k: f64,
    modal: ModalOrders,
    selected_modal: Option<usize>,
    subjects: Vec<SubjectSummary>,
}

#[derive(Debug, Serialize)]
struct ModalOrders {
    aic: Option<usize>,
    bic: Option<usize>,
    hq: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SubjectSummary {
    subject: String,
    aic: Option<usize>,
    bic: Option<usize>,
    hq: Option<usize>,
    error: Option<String>,
}

pub fn parse_estimator(text: &str) -> Result<LagEstimator> {
    match text {
        "ols" => Ok(LagEstimator::Ols),
        "lassle" => Ok(LagEstimator::Lassle(LassoPenalty::default())),
        _ => match text.strip_prefix("lassle:").map(str::parse::<f64>) {
            Some(Ok(lambda)) if lambda >= 0.0 => Ok(LagEstimator::Lassle(LassoPenalty::Fixed(lambda))),
            _ => Err(CliError::Usage(format!(
                "unknown estimator `{text}`; use ols, lassle or lassle:<lambda>"
            ))),
        },
    }
}

pub fn run(cli: &Cli, args: &LagselectArgs) -> Result<()> {
    let criterion = Criterion::parse(&args.criterion)
        .ok_or_else(|| CliError::Usage(format!("unknown criterion `{}`; use aic, bic or hq", args.criterion)))?;
    let estimator = parse_estimator(&args.estimator)?;
    if args.pmax == 0 {
        return Err(CliError::Usage("--pmax must be at least 1".into()));
    }
    let ds = super::preprocess(&super::load_dataset(cli)?, args.outlier_k)?;
    let report = select_lag(&ds, args.pmax, criterion, estimator).context(|| "lag selection".into())?;

    let mut table = String::from("subject,criterion,p,value\n");
    let mut subjects = Vec::with_capacity(report.rows.len());
    for row in &report.rows {
        match &row.criteria {
            Ok(ics) => {
                for c in Criterion::ALL {
                    for (i, ic) in ics.iter().enumerate() {
                        table.push_str(&format!("{},{},{},{}\n", row.subject_id, c.name(), i + 1, io::fmt_f64(ic.get(c))));
                    }
                }
            }
            Err(e) => log::warn!("subject {}: {e}", row.subject_id),
        }
        subjects.push(SubjectSummary {
            subject: row.subject_id.clone(),
            aic: row.selected(Criterion::Aic),
            bic: row.selected(Criterion::Bic),
            hq: row.selected(Criterion::Hq),
            error: row.criteria.as_ref().err().cloned(),
        });
    }
    let summary = Summary {
        p_max: report.p_max,
        criterion,
        estimator: args.estimator.clone(),
        outlier_k: args.outlier_k,
        modal: ModalOrders {
            aic: report.modal(Criterion::Aic),
            bic: report.modal(Criterion::Bic),
            hq: report.modal(Criterion::Hq),
        },
        selected_modal: report.selected_modal(),
        subjects,
    };
    io::write_text(&cli.out.join("lagselect.csv"), &table)?;
    io::write_json(&cli.out.join("lagselect.json"), &summary)?;
    Ok(())
}
