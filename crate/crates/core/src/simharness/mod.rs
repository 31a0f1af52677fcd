//! Monte Carlo campaign: random scenarios, noisy snapshot estimates,
//! UL→DL conversion and error statistics written as CSV.

mod config;
mod harness;
mod output;

pub use config::{parse_grid, parse_methods, CampaignConfig, MethodTag, NOISY_TRUNCATION};
pub use harness::{
    trial_seed, worker_count, Campaign, CampaignResult, MethodRecord, TrialDiagnostics, TrialFailure, TrialRecord,
};
pub use output::{
    cdf_csv, diagnostics_csv, failures_csv, quantile, sorted_errors, summary_csv, trials_csv, write_outputs, Metric,
    TRIALS_HEADER,
};

use crate::error::Result;

/// Runs a campaign and writes its CSV files to `cfg.out_dir`.
pub fn run_campaign(cfg: CampaignConfig) -> Result<CampaignResult> {
    let campaign = Campaign::new(cfg)?;
    let result = campaign.run()?;
    write_outputs(&campaign.config().out_dir, &result, &campaign.config().methods)?;
    Ok(result)
}
