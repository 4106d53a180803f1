//! `bound verify` and `bound regimes`.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Subcommand};
use serde::Serialize;
use statelens::bound::{corner_rows, sweep_regimes, verify_random_joints, Corner, RegimeGrid, RegimeTable};

use crate::error::{fail, Category, CategoryExt};
use crate::output::OutputDir;

#[derive(Debug, Subcommand)]
pub enum BoundCommand {
    /// Check the mutual-information lower bound on random discrete joints.
    #[command(args_override_self = true)]
    Verify(VerifyArgs),
    /// Tabulate the closed-form regime mutual information.
    #[command(args_override_self = true)]
    Regimes(RegimeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Largest support size drawn for each variable (at least 2).
    #[arg(long, default_value_t = 4)]
    pub max_support: usize,
    /// Optional directory for `verify.json` and the manifest.
    #[arg(long, env = "STATELENS_OUT_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RegimeArgs {
    /// `all`, `none`, or one corner name.
    #[arg(long, default_value = "all")]
    pub corner: String,
    /// Points per axis of a uniform grid appended after the corners; 0 for none.
    #[arg(long, default_value_t = 0)]
    pub grid: usize,
    /// Optional directory for `regimes.csv` and the manifest.
    #[arg(long, env = "STATELENS_OUT_DIR")]
    pub out: Option<PathBuf>,
}

pub fn run(cmd: BoundCommand) -> anyhow::Result<()> {
    match cmd {
        BoundCommand::Verify(a) => verify(a),
        BoundCommand::Regimes(a) => regimes(a),
    }
}

fn verify(a: VerifyArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    if a.max_support < 2 {
        return Err(fail(Category::Config, "--max-support must be at least 2"));
    }
    let result = verify_random_joints(a.trials, a.seed, a.max_support);
    if let Some(dir) = &a.out {
        let mut out = OutputDir::create(dir)?;
        out.write("verify.json", serde_json::to_string_pretty(&result).category(Category::Io)? + "\n")?;
        out.write_timing(started.elapsed().as_secs_f64(), serde_json::Value::Null)?;
        out.finish("bound verify", Some(a.seed), &a)?;
    }
    println!("trials {} seed {} violations {} min slack {:e}", result.trials, result.seed, result.violations, result.min_slack);
    if result.violations > 0 {
        return Err(fail(
            Category::Verification,
            format!("{} of {} trials violate the bound, first at trial {}", result.violations, result.trials, result.first_violation.unwrap_or(0)),
        ));
    }
    Ok(())
}

fn regimes(a: RegimeArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let mut table = if a.grid > 0 { sweep_regimes(&RegimeGrid::uniform(a.grid)).category(Category::Config)? } else { corner_rows() };
    match a.corner.as_str() {
        "all" => {}
        "none" => table.rows.retain(|r| r.corner.is_none()),
        name => {
            let corner = Corner::ALL.into_iter().find(|c| c.name() == name).ok_or_else(|| {
                let names: Vec<_> = Corner::ALL.iter().map(|c| c.name()).collect();
                fail(Category::Config, format!("unknown corner {name:?}; expected all, none or one of {}", names.join(", ")))
            })?;
            table.rows.retain(|r| r.corner.is_none_or(|c| c == corner));
        }
    }
    let csv = RegimeTable::to_csv(&table);
    if let Some(dir) = &a.out {
        let mut out = OutputDir::create(dir)?;
        out.write("regimes.csv", &csv)?;
        out.write_timing(started.elapsed().as_secs_f64(), serde_json::Value::Null)?;
        out.finish("bound regimes", None, &a)?;
    }
    print!("{csv}");
    Ok(())
}
