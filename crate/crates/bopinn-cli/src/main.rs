//! `bopinn` — estimate the wave speed of a 1D medium from a single noisy
//! displacement snapshot.
//!
//! Exit codes: 0 on success, 1 for configuration errors, 2 for runtime
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, Command};

use bopinn::wave::{make_snapshot, WaveSpeed};
use bopinn::Error;
use bopinn_cli::config::{self, ExperimentConfig};
use bopinn_cli::experiment;

fn cli() -> Command {
    let mut run = Command::new("run")
        .about("Run the configured cases: repeated BO runs, traces, and summary tables")
        .arg(Arg::new("config").long("config").value_name("FILE").required(true))
        .arg(Arg::new("case").long("case").value_name("C").help("Restrict to a single case value"))
        .arg(Arg::new("runs-short").long("runs").value_name("K").help("Repeat count per case"))
        .arg(Arg::new("scale-short").long("scale").value_name("desk|paper"))
        .arg(Arg::new("forward-short").long("forward").value_name("pinn|analytic"))
        .arg(Arg::new("seed").long("seed").value_name("N").help("Base seed"))
        .arg(Arg::new("out").long("out").value_name("DIR").help("Output directory"));
    // Every config key doubles as a long flag of the same name.
    for key in ExperimentConfig::KEYS {
        if matches!(*key, "runs" | "scale" | "forward") {
            continue; // already present under their short spellings
        }
        run = run.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help("Override the config key of the same name")
                .action(ArgAction::Set),
        );
    }

    let snapshot = Command::new("snapshot")
        .about("Generate a synthetic observation file")
        .arg(Arg::new("c").long("c").value_name("SCALED").required(true))
        .arg(Arg::new("t-obs").long("t-obs").value_name("T").default_value("0.25"))
        .arg(Arg::new("n-sensors").long("n-sensors").value_name("N").default_value("256"))
        .arg(Arg::new("snr-db").long("snr-db").value_name("DB").default_value("36.34"))
        .arg(Arg::new("seed").long("seed").value_name("N").default_value("0"))
        .arg(Arg::new("scale").long("scale").value_name("desk|paper").default_value("desk"))
        .arg(Arg::new("out").long("out").value_name("FILE").required(true));

    let field = Command::new("field")
        .about("Train one field at a fixed speed and export plot-ready grids")
        .arg(Arg::new("c").long("c").value_name("SCALED").required(true))
        .arg(Arg::new("scale").long("scale").value_name("desk|paper").default_value("desk"))
        .arg(Arg::new("seed").long("seed").value_name("N").default_value("0"))
        .arg(Arg::new("nx").long("nx").value_name("N").default_value("101"))
        .arg(Arg::new("nt").long("nt").value_name("N").default_value("101"))
        .arg(Arg::new("out").long("out").value_name("DIR").required(true));

    Command::new("bopinn")
        .about("Wave-velocity estimation from a single displacement snapshot")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(run)
        .subcommand(snapshot)
        .subcommand(field)
}

fn run_command(matches: &clap::ArgMatches) -> Result<(), Error> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut push = |key: &str, value: Option<&String>| {
        if let Some(v) = value {
            overrides.push((key.to_string(), v.clone()));
        }
    };
    push("scale", matches.get_one::<String>("scale-short"));
    push("runs", matches.get_one::<String>("runs-short"));
    push("forward", matches.get_one::<String>("forward-short"));
    push("seed_base", matches.get_one::<String>("seed"));
    push("out_dir", matches.get_one::<String>("out"));
    push("cases", matches.get_one::<String>("case"));
    for key in ExperimentConfig::KEYS {
        if matches!(*key, "runs" | "scale" | "forward") {
            continue;
        }
        push(key, matches.get_one::<String>(key));
    }

    let config_path = matches.get_one::<String>("config").map(PathBuf::from);
    let cfg = config::load_config(config_path.as_deref(), &overrides)?;
    let (_, table) = experiment::run_all(&cfg)?;
    print!("{table}");
    println!("results written to {}", cfg.out_dir.display());
    Ok(())
}

fn snapshot_command(matches: &clap::ArgMatches) -> Result<(), Error> {
    let get = |name: &str| matches.get_one::<String>(name).expect("defaulted");
    let parse_f = |name: &str| -> Result<f64, Error> {
        let raw = get(name);
        match raw.as_str() {
            "inf" => Ok(f64::INFINITY),
            s => s
                .parse()
                .map_err(|_| Error::Config(format!("bad value {raw:?} for --{name}"))),
        }
    };
    let parse_u = |name: &str| -> Result<u64, Error> {
        get(name)
            .parse()
            .map_err(|_| Error::Config(format!("bad value {:?} for --{name}", get(name))))
    };

    let scale = config::Scale::from_name(get("scale"))?;
    let domain = ExperimentConfig::for_scale(scale).domain;
    let c = WaveSpeed::from_scaled(parse_f("c")?).map_err(|e| Error::Config(e.to_string()))?;
    let snap = make_snapshot(
        c,
        parse_f("t-obs")?,
        parse_u("n-sensors")? as usize,
        parse_f("snr-db")?,
        parse_u("seed")?,
        &domain,
    )?;
    let out = PathBuf::from(get("out"));
    snap.write_csv(&out)?;
    println!("snapshot written to {}", out.display());
    Ok(())
}

fn field_command(matches: &clap::ArgMatches) -> Result<(), Error> {
    let get = |name: &str| matches.get_one::<String>(name).expect("defaulted");
    let scale = config::Scale::from_name(get("scale"))?;
    let cfg = ExperimentConfig::for_scale(scale);
    let c: f64 = get("c")
        .parse()
        .map_err(|_| Error::Config(format!("bad value {:?} for --c", get("c"))))?;
    let seed: u64 = get("seed")
        .parse()
        .map_err(|_| Error::Config(format!("bad value {:?} for --seed", get("seed"))))?;
    let parse_grid = |name: &str| -> Result<usize, Error> {
        get(name)
            .parse()
            .map_err(|_| Error::Config(format!("bad value {:?} for --{name}", get(name))))
    };
    let grid = (parse_grid("nx")?, parse_grid("nt")?);

    WaveSpeed::from_scaled(c).map_err(|e| Error::Config(e.to_string()))?;
    let field = experiment::train_case_field(&cfg, c, seed)?;
    let out = PathBuf::from(get("out"));
    experiment::export_field(&field, grid, &cfg.domain, Path::new(&out))?;
    println!(
        "field trained at c = {c} (loss {:.3e}); exports in {}",
        field.final_loss.j_total,
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            // Help/version requests are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };

    let result = match matches.subcommand() {
        Some(("run", sub)) => run_command(sub),
        Some(("snapshot", sub)) => snapshot_command(sub),
        Some(("field", sub)) => field_command(sub),
        _ => unreachable!("subcommand is required"),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Parse { .. })) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
