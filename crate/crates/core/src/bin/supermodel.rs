use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use supermodel::experiment::run::{
    cfl_experiment, experiment_ground_truth, prediction_stage, prepare, read_coupling, run_experiment, training_stage,
};
use supermodel::experiment::ExperimentConfig;
use supermodel::ground_truth::save_archive;
use supermodel::io::{fmt_f64, CsvTable};
use supermodel::Result;

#[derive(Parser)]
#[command(name = "supermodel", version, about = "Supermodel training and prediction on a 3-D tumor growth model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file (`[section]` headers, `key = value` lines).
    config_file: Option<PathBuf>,
    /// Override one setting, e.g. `--config supermodel.k=2.0`. Repeatable.
    #[arg(long = "config", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config_file {
            Some(p) => ExperimentConfig::read(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground truth from the reference parameters.
    GenerateGt(Common),
    /// Train the coupling coefficients.
    Train(Common),
    /// Run the supermodel in prediction mode.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Trained coefficients (`coupling_final.txt` from `train`); the
        /// configured initial coefficients when omitted.
        #[arg(long)]
        coupling: Option<PathBuf>,
    },
    /// Sweep time steps of the free model and flag unstable ones.
    CflSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2])]
        dt: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 10.0)]
        factor: f64,
    },
    /// Train, predict and write every artifact.
    Experiment(Common),
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenerateGt(c) => {
            let cfg = c.load()?;
            let gt = experiment_ground_truth(&cfg)?;
            save_archive(&gt, &cfg.out)?;
            cfg.to_doc().write(&cfg.out.join("config.txt"))?;
            println!("ground truth: {} steps -> {}", gt.final_step(), cfg.out.display());
            Ok(true)
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let stage = training_stage(&cfg)?;
            cfg.to_doc().write(&cfg.out.join("config.txt"))?;
            let c_final: Vec<String> = stage.final_coupling.off_diagonal().map(|(_, _, v)| fmt_f64(v)).collect();
            println!(
                "epochs {} converged {} C = [{}]",
                stage.report.iterations_used,
                stage.report.converged,
                c_final.join(", ")
            );
            if let Some(b) = &stage.blow_up {
                eprintln!("training blew up: {b}");
                return Ok(false);
            }
            Ok(true)
        }
        Command::Simulate { common, coupling } => {
            let cfg = common.load()?;
            let (gt, _, mut ens, cm0) = prepare(&cfg)?;
            let trained = match coupling {
                Some(p) => read_coupling(&p)?,
                None => cm0.clone(),
            };
            let p = prediction_stage(&cfg, &gt, &mut ens, &cm0, &trained)?;
            cfg.to_doc().write(&cfg.out.join("config.txt"))?;
            println!(
                "mean |volume error|: untrained {} trained {}",
                fmt_f64(p.mean_volume_error_before),
                fmt_f64(p.mean_volume_error_after)
            );
            Ok(true)
        }
        Command::CflSweep {
            common,
            dt,
            steps,
            factor,
        } => {
            let cfg = common.load()?;
            let (threshold, rows) = cfl_experiment(&cfg, &dt, steps, factor, &cfg.out)?;
            let mut t = CsvTable::new(["dt", "status"]);
            for r in &rows {
                t.push_cells(&[fmt_f64(r.dt), format!("{:?}", r.status).to_lowercase()]);
            }
            print!("{}", t.render());
            match threshold {
                Some(v) => println!("threshold dt* = {}", fmt_f64(v)),
                None => println!("no stable dt in the sweep"),
            }
            Ok(true)
        }
        Command::Experiment(c) => {
            let cfg = c.load()?;
            let o = run_experiment(&cfg)?;
            let c_final: Vec<String> = o.final_coupling.off_diagonal().map(|(_, _, v)| fmt_f64(v)).collect();
            println!("epochs {} converged {} last |dC| {}", o.epochs_used, o.converged, fmt_f64(o.last_delta));
            println!("C = [{}]", c_final.join(", "));
            println!(
                "mean |volume error|: untrained {} trained {}; sign changes {}",
                fmt_f64(o.mean_volume_error_before),
                fmt_f64(o.mean_volume_error_after),
                o.sign_changes
            );
            if let Some(b) = &o.blow_up {
                eprintln!("blow-up: {b}");
                return Ok(false);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
