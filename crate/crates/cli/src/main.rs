use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kobalab_cli::{cmd_params, cmd_sweep, cmd_verify, Perturb, Plan, RunConfig, Which};

#[derive(Parser)]
#[command(name = "kobalab", version, about = "Certified Kobayashi-metric upper bounds on the cusp counterexample domains")]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Largest index n.
    #[arg(long, global = true, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    n_max: u64,
    /// Mantissa bits of the wide scalar.
    #[arg(long, global = true, default_value_t = 512, value_parser = clap::value_parser!(u64).range(64..))]
    bits: u64,
    /// Quadrature nodes per axis (radial and angular).
    #[arg(long, global = true, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    quad: u64,
    /// Nodes per axis of the Levi-constant grid.
    #[arg(long, global = true, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    grid: u64,
    /// Directions per sample point in the plurisubharmonicity check.
    #[arg(long, global = true, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    dirs: u64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Growth rule for a_n: exp:<offset>, const:e<ln a>, table:<ln a_1>,<ln a_2>,...
    #[arg(long, global = true, default_value = "exp:10")]
    a_rule: String,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, hide = true)]
    perturb: Option<Perturb>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the parameter table and write params.json.
    Params,
    /// Run the certification suites; writes params.json, report.json, blowup.csv.
    Verify {
        #[arg(value_enum, default_value = "all")]
        which: Which,
    },
    /// Certified bounds for the listed indices; writes decay.csv and decay.svg.
    Sweep {
        /// Comma-separated indices (default 1..=n_max).
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let r = cli.run;
    let cfg = RunConfig {
        n_max: r.n_max as usize,
        precision_bits: r.bits as usize,
        quad: r.quad as usize,
        grid: r.grid as usize,
        directions: r.dirs as usize,
        seed: r.seed,
        a_rule: r.a_rule,
        out: r.out,
        perturb: r.perturb,
    };
    let result = match cli.cmd {
        Cmd::Params => cmd_params(&cfg),
        Cmd::Verify { which } => cmd_verify(&cfg, which, Plan::default()),
        Cmd::Sweep { n } => {
            let list: Vec<usize> = if n.is_empty() { (1..=cfg.n_max).collect() } else { n };
            cmd_sweep(&cfg, &list)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
