//! Metrics, the visit-split evaluation protocol and ablation reports.

mod harness;
pub mod metrics;
mod report;

pub use harness::{
    build_eval_cases, run_ablation, AblationConfig, AblationReport, AblationRow, CaseFailure, CaseScore, EvalCase,
    LeakageAudit, MetricReport, PlanningMethod, Prediction,
};
pub use metrics::{bertscore_f1, bleu, meteor, rouge_l, rouge_n, score_all, MetricScores, Prf};
pub use report::{assessment_table_csv, plan_table_csv, report_json, write_report, ASSESSMENT_TABLE_HEADER, PLAN_TABLE_HEADER};
