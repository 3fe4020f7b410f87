//! `simulate`: the Monte Carlo consistency study.
//!
//! Writes `<out>/simulation/report.json` (config, generator and every
//! entrywise summary), `<out>/simulation/summary.csv` with one row per
//! time-length regime, and `<out>/simulation/regime_T<T>.csv` with the
//! entrywise truth, mean, bias, MSE and SD of both estimated quantities.

use mespec_core::sim::{run_replicates, ErrorSummary, SimulationConfig};

use crate::args::{Cli, SimulateArgs};
use crate::error::{CliError, CoreContext, Result};
use crate::io::{self, fmt_f64};

/// Parses a config, insisting on an explicit seed.
pub fn parse_config(text: &str, origin: &str) -> Result<SimulationConfig> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Data(format!("{origin}: invalid JSON: {e}")))?;
    if value.get("seed").is_none_or(|s| s.is_null()) {
        return Err(CliError::Usage(format!("{origin}: `seed` is required")));
    }
    serde_json::from_value(value).map_err(|e| CliError::Data(format!("{origin}: invalid simulation config: {e}")))
}

fn push_rows(out: &mut String, quantity: &str, s: &ErrorSummary) {
    for (i, row) in s.truth.iter().enumerate() {
        for j in 0..row.len() {
            out.push_str(&format!(
                "{quantity},{},{},{},{},{},{},{}\n",
                i + 1,
                j + 1,
                fmt_f64(s.truth[i][j]),
                fmt_f64(s.mean[i][j]),
                fmt_f64(s.bias[i][j]),
                fmt_f64(s.mse[i][j]),
                fmt_f64(s.sd[i][j])
            ));
        }
    }
}

pub fn run(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut config = parse_config(&text, &args.config.display().to_string())?;
    if let Some(n) = args.replicates {
        if n == 0 {
            return Err(CliError::Usage("--replicates must be at least 1".into()));
        }
        config.replicates = n;
    }
    log::info!(
        "simulating {} replicates at T = {:?}, seed {}",
        config.replicates,
        config.time_points,
        config.seed
    );
    let report = run_replicates(&config).context(|| "simulation".into())?;
    let dir = cli.out.join("simulation");
    io::write_json(&dir.join("report.json"), &report)?;

    let mut summary = String::from(
        "time_points,replicates,failures,phi_mean_mse,phi_mean_abs_bias,phi_mean_sd,tau_mean_mse,tau_mean_abs_bias,tau_mean_sd\n",
    );
    for regime in &report.regimes {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            regime.time_points,
            regime.replicates,
            regime.failures,
            fmt_f64(regime.phi.mean_mse),
            fmt_f64(regime.phi.mean_abs_bias),
            fmt_f64(regime.phi.mean_sd),
            fmt_f64(regime.tau.mean_mse),
            fmt_f64(regime.tau.mean_abs_bias),
            fmt_f64(regime.tau.mean_sd)
        ));
        let mut rows = String::from("quantity,target,source,truth,mean,bias,mse,sd\n");
        push_rows(&mut rows, "phi", &regime.phi);
        push_rows(&mut rows, "tau", &regime.tau);
        io::write_text(&dir.join(format!("regime_T{}.csv", regime.time_points)), &rows)?;
    }
    io::write_text(&dir.join("summary.csv"), &summary)
}
