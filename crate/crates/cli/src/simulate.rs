use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use poolsel::io::{write_dataset, write_truth};
use poolsel::simulation::{simulate_dataset, DgpConfig};
use poolsel::Coefficients;
use serde::Serialize;

use crate::manifest::{beside, RunManifest};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Number of covariates; defaults to the length of --theta minus one.
    #[arg(long)]
    pub p: Option<usize>,
    /// Intercept then slopes, comma separated; missing slopes are zero.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-5,2,1,1,0,0,0,0,0,0,0")]
    pub theta: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub pool_size: usize,
    #[arg(long, default_value_t = 0.95)]
    pub se: f64,
    #[arg(long, default_value_t = 0.97)]
    pub sp: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Dataset CSV path; the truth file is written beside it as `<stem>.truth.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn config(args: &Args) -> CliResult<DgpConfig> {
    let (&alpha, slopes) = args.theta.split_first().ok_or_else(|| CliError::usage("--theta needs an intercept"))?;
    let p = args.p.unwrap_or(slopes.len());
    if p == 0 {
        return Err(CliError::usage("at least one covariate is required"));
    }
    if slopes.len() > p {
        return Err(CliError::usage(format!("--theta has {} slopes but --p is {p}", slopes.len())));
    }
    let mut beta = slopes.to_vec();
    beta.resize(p, 0.0);
    Ok(DgpConfig {
        n: args.n,
        p,
        theta_true: Coefficients::new(alpha, beta)?,
        pool_size: args.pool_size,
        se: args.se,
        sp: args.sp,
        seed: args.seed,
    })
}

pub fn run(args: &Args) -> CliResult<()> {
    let cfg = config(args)?;
    let sim = simulate_dataset(&cfg)?;
    let truth_path = beside(&args.out, "truth.csv");
    let create = |path: &PathBuf| File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e));
    write_dataset(create(&args.out)?, &sim.dataset).map_err(|e| CliError::io(&args.out, e))?;
    write_truth(create(&truth_path)?, &sim.y_true).map_err(|e| CliError::io(&truth_path, e))?;

    let mut manifest = RunManifest::new("simulate", Some(args.seed), args);
    manifest.output(&args.out)?;
    manifest.output(&truth_path)?;
    manifest.write_beside(&args.out)?;
    println!(
        "wrote {} ({} individuals, {} pools, {} positive) and {}",
        args.out.display(),
        sim.dataset.n(),
        sim.dataset.num_pools(),
        sim.dataset.z().iter().filter(|&&z| z).count(),
        truth_path.display()
    );
    Ok(())
}
