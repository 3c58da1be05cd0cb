use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mlo_vr_sim::engine::ScenarioConfig;
use mlo_vr_sim::experiments::{
    self, capacity_sweep, evaluate_point, link_split_compare, min_mcs_map, offered_trace, LinkSplit, SweepOptions,
};
use mlo_vr_sim::mld::Mode;
use mlo_vr_sim::traffic::Direction;
use mlo_vr_sim::{Result, SimError};

#[derive(Parser, Debug)]
#[command(name = "mlo-vr-sim", version, about = "Wi-Fi 7 SLO/MLO simulator for split-rendering VR traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario file over a seed ensemble.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Number of seeds (0..N); defaults to the scenario's value.
        #[arg(long)]
        seeds: Option<u32>,
        /// Simulated seconds per seed; defaults to the scenario's value.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Bin the offered traffic of one station by kind.
    Trace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        bin_ms: f64,
        #[arg(long)]
        out: PathBuf,
        /// Seed selecting the station's traffic phase.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand, Debug)]
enum SweepCommand {
    /// Lowest passing MCS per bandwidth, one user.
    MinMcs {
        #[arg(long)]
        mode: ModeArg,
        #[arg(long, value_delimiter = ',', default_value = "20,40,80,160,320")]
        bandwidths: Vec<u32>,
        #[arg(long)]
        direction: DirectionArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        budget: Budget,
    },
    /// Delay curves and capacity for 1..=max-users users.
    Capacity {
        #[arg(long)]
        mode: ModeArg,
        #[arg(long)]
        links: LinkSplit,
        #[arg(long, default_value_t = 11)]
        mcs: u8,
        #[arg(long, default_value_t = 16)]
        max_users: u32,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        budget: Budget,
    },
    /// MLO capacity for several splits of the same total bandwidth.
    LinkSplit {
        #[arg(long, default_value_t = 160)]
        total_bw: u32,
        #[arg(long, value_delimiter = ',', default_value = "2x80,4x40,8x20")]
        splits: Vec<LinkSplit>,
        #[arg(long, default_value_t = 11)]
        mcs: u8,
        #[arg(long, default_value_t = 16)]
        max_users: u32,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        budget: Budget,
    },
}

#[derive(Args, Debug, Clone, Copy)]
struct Budget {
    #[arg(long, default_value_t = 100)]
    seeds: u32,
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Run every seed on the calling thread.
    #[arg(long)]
    sequential: bool,
}

impl Budget {
    fn options(self) -> SweepOptions {
        SweepOptions {
            seeds: self.seeds,
            duration_s: self.duration,
            parallel: !self.sequential,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Slo,
    Mlo,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Slo => Mode::Slo,
            ModeArg::Mlo => Mode::MloStr,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DirectionArg {
    Dl,
    Ul,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Direction {
        match d {
            DirectionArg::Dl => Direction::Dl,
            DirectionArg::Ul => Direction::Ul,
        }
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
}

fn run(cli: Cli, command_line: &str) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            duration,
            out,
        } => {
            let mut cfg = ScenarioConfig::from_file(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(d) = duration {
                cfg.duration_s = d;
            }
            cfg.validate()?;
            let opts = SweepOptions {
                seeds: cfg.seeds,
                duration_s: cfg.duration_s,
                parallel: true,
            };
            let point = evaluate_point(&cfg, &opts)?;
            if !point.conserved {
                return Err(SimError::internal("packet conservation violated"));
            }
            experiments::write_points(std::slice::from_ref(&point), command_line, &out)?;
            println!("{}: pass_all={}", point.scenario_id, point.pass_all());
        }
        Command::Sweep(sweep) => run_sweep(sweep, command_line)?,
        Command::Trace {
            config,
            bin_ms,
            out,
            seed,
        } => {
            let cfg = ScenarioConfig::from_file(&config)?;
            let hist = offered_trace(&cfg, seed, bin_ms * 1e-3)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            experiments::write_trace_csv(&hist, create(&out)?)?;
        }
    }
    Ok(())
}

fn run_sweep(sweep: SweepCommand, command_line: &str) -> Result<()> {
    match sweep {
        SweepCommand::MinMcs {
            mode,
            bandwidths,
            direction,
            out,
            budget,
        } => {
            let (mode, direction) = (Mode::from(mode), Direction::from(direction));
            let result = min_mcs_map(mode, &bandwidths, &budget.options())?;
            experiments::write_points(&result.points, command_line, &out)?;
            let entries = result.min_mcs(direction);
            experiments::write_min_mcs_csv(mode, direction, &entries, create(&out.join("min_mcs.csv"))?)?;
            for e in entries {
                let m = e.min_mcs.map_or_else(|| "none".into(), |m| m.to_string());
                println!("{mode} {direction} {} MHz: min MCS {m}", e.bandwidth_mhz);
            }
        }
        SweepCommand::Capacity {
            mode,
            links,
            mcs,
            max_users,
            out,
            budget,
        } => {
            let mode = Mode::from(mode);
            let result = capacity_sweep(mode, links, mcs, max_users, &budget.options())?;
            experiments::write_points(&result.points, command_line, &out)?;
            let caps = result.capacities();
            experiments::write_capacity_csv(|_| mode, &caps, create(&out.join("capacity.csv"))?)?;
            for c in caps {
                println!("{mode} {} MCS {}: capacity {}", c.split, c.mcs, c.capacity);
            }
        }
        SweepCommand::LinkSplit {
            total_bw,
            splits,
            mcs,
            max_users,
            out,
            budget,
        } => {
            let result = link_split_compare(total_bw, &splits, mcs, max_users, &budget.options())?;
            experiments::write_points(&result.points, command_line, &out)?;
            let caps = result.capacities();
            experiments::write_capacity_csv(|_| Mode::MloStr, &caps, create(&out.join("capacity.csv"))?)?;
            experiments::write_crossover_csv(&result.crossover(), create(&out.join("crossover.csv"))?)?;
            for c in caps {
                println!("mlo {} MCS {}: capacity {}", c.split, c.mcs, c.capacity);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    let cli = Cli::parse();
    match run(cli, &command_line) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
