use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use tivasim::controllers::{tune_pid, ControllerKind};
use tivasim::population::{sample_cohort, SampledPatient};
use tivasim::sim::output::{format_summary_table, summary_json, write_metrics_csv, write_trace_csv};
use tivasim::sim::{compute_metrics, run_closed_loop, run_monte_carlo, TargetBand};
use tivasim::{Result, SimConfig};

#[derive(Parser)]
#[command(name = "tivasim", version, about = "Closed-loop propofol/remifentanil induction simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults are used for anything missing.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one patient and write its trace CSV.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "mmpc")]
        controller: ControllerKind,
        /// Index of the patient within the cohort drawn from `--seed`.
        #[arg(long, default_value_t = 0)]
        patient: usize,
        /// Use the nominal reference patient instead of a sampled one.
        #[arg(long)]
        nominal: bool,
    },
    /// Run a cohort under one or more controllers and summarize.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Repeat to select several; all three when omitted.
        #[arg(long)]
        controller: Vec<ControllerKind>,
        #[arg(long, default_value_t = 500)]
        n_patients: usize,
        #[arg(long, default_value_t = default_parallelism())]
        parallelism: usize,
        #[arg(long)]
        emit_traces: bool,
    },
    /// Random-search the PID gains on a sampled cohort.
    TunePid {
        #[command(flatten)]
        common: Common,
        /// Cohort size; the `[tuning]` value when omitted.
        #[arg(long)]
        n_patients: Option<usize>,
    },
    /// Write the sampled cohort's parameters to `patients.csv`.
    Cohort {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        n_patients: usize,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load_config(path: &Option<PathBuf>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::load(p),
        None => Ok(SimConfig::default()),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            common,
            controller,
            patient,
            nominal,
        } => {
            let config = load_config(&common.config)?;
            let subject = if nominal {
                SampledPatient::nominal()
            } else {
                sample_cohort(patient + 1, &config.population, common.seed).remove(patient)
            };
            let trace = run_closed_loop(&subject, &config, controller, subject.seed)?;
            let name = format!("trace_{}_{}.csv", controller, subject.index);
            write_trace_csv(&trace, create(&common.out_dir, &name)?)?;
            let target = config.scenario.bis_target;
            let m = compute_metrics(
                &trace,
                TargetBand {
                    low: target - 5.0,
                    high: target + 5.0,
                },
            );
            println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
            println!("trace written to {}", common.out_dir.join(name).display());
        }
        Command::Montecarlo {
            common,
            controller,
            n_patients,
            parallelism,
            emit_traces,
        } => {
            let config = load_config(&common.config)?;
            let kinds = if controller.is_empty() {
                ControllerKind::ALL.to_vec()
            } else {
                controller
            };
            let started = Instant::now();
            let result = run_monte_carlo(n_patients, &kinds, &config, common.seed, parallelism, emit_traces)?;
            let elapsed = started.elapsed().as_secs_f64();
            write_metrics_csv(&result.records, create(&common.out_dir, "metrics.csv")?)?;
            let table = format_summary_table(&result.summaries);
            fs::write(common.out_dir.join("summary.txt"), &table)?;
            fs::write(common.out_dir.join("summary.json"), summary_json(&result.summaries))?;
            if let Some(traces) = &result.traces {
                let dir = common.out_dir.join("traces");
                for (record, trace) in result.records.iter().zip(traces) {
                    let name = format!("trace_{}_{}.csv", record.controller, record.patient_id);
                    write_trace_csv(trace, create(&dir, &name)?)?;
                }
            }
            let max_solve = result
                .records
                .iter()
                .flat_map(|r| r.solve_times_ms.iter().copied())
                .fold(0.0, f64::max);
            print!("{table}");
            println!(
                "{} runs in {:.1} s; max MPC solve {:.2} ms; output in {}",
                result.records.len(),
                elapsed,
                max_solve,
                common.out_dir.display()
            );
        }
        Command::TunePid { common, n_patients } => {
            let config = load_config(&common.config)?;
            let mut tune = config.tuning.clone();
            tune.seed = common.seed;
            let n = n_patients.unwrap_or(tune.cohort_size);
            let cohort = sample_cohort(n, &config.population, common.seed);
            let result = tune_pid(&cohort, &config, &tune)?;
            let mut tuned = config.clone();
            tuned.pid = result.config;
            fs::create_dir_all(&common.out_dir)?;
            let path = common.out_dir.join("tuned.toml");
            fs::write(&path, tuned.to_toml_string())?;
            println!(
                "kp = {}, ti = {}, td = {}; objective {:.3} (initial {:.3}, {} candidates)",
                result.config.kp,
                result.config.ti,
                result.config.td,
                result.objective,
                result.initial_objective,
                result.evaluated
            );
            println!("tuned configuration written to {}", path.display());
        }
        Command::Cohort { common, n_patients } => {
            let config = load_config(&common.config)?;
            let cohort = sample_cohort(n_patients, &config.population, common.seed);
            let mut w = csv::Writer::from_writer(create(&common.out_dir, "patients.csv")?);
            let mut header = vec!["patient_id".to_string(), "age".into(), "height".into(), "weight".into(), "sex".into()];
            for drug in ["p", "r"] {
                for k in ["v1", "v2", "v3", "cl1", "cl2", "cl3", "ke"] {
                    header.push(format!("{k}_{drug}"));
                }
            }
            header.extend(["c50p", "c50r", "gamma", "e0"].map(String::from));
            w.write_record(&header)?;
            for p in &cohort {
                let d = &p.demographics;
                let mut row = vec![p.index.to_string(), d.age.to_string(), d.height.to_string(), d.weight.to_string()];
                row.push(format!("{:?}", d.sex).to_lowercase());
                for pk in [&p.pk_p, &p.pk_r] {
                    row.extend([pk.v1, pk.v2, pk.v3, pk.cl1, pk.cl2, pk.cl3, pk.ke].map(|v| v.to_string()));
                }
                let th = &p.pd.theta;
                row.extend([th.c50p, th.c50r, th.gamma, p.pd.e0].map(|v| v.to_string()));
                w.write_record(&row)?;
            }
            w.flush()?;
            println!("{} patients written to {}", cohort.len(), common.out_dir.join("patients.csv").display());
        }
        Command::DefaultConfig => print!("{}", SimConfig::default().to_toml_string()),
    }
    Ok(())
}
