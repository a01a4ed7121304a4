//! Cox proportional-hazards fitting and survival summaries.

mod concordance;
mod cox;
mod km;

pub use concordance::concordance_index;
pub use cox::{
    baseline_hazard, fit_cox, fit_cox_data, partial_log_likelihood, BaselinePoint, CoxData, CoxFit, CoxOptions,
    CoxSummary, Ties,
};
pub use km::{kaplan_meier, logrank_test, risk_groups, LogRank, RiskSplit, SurvCurve};

#[cfg(test)]
mod tests;
