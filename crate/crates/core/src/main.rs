#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use anchored_inversion::engine::{
    self, output, read_mixture, truth, Posterior, ScenarioConfig, ScenarioKind, Scenario, Truth,
};
use anchored_inversion::forward::ForwardSpec;
use anchored_inversion::{Error, Result};

#[derive(Parser)]
#[command(name = "anchored", version, about = "Anchored inversion of 1-D random fields")]
struct Cli {
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic truth, its data files and a starter config.
    Truth {
        #[arg(long)]
        out: PathBuf,
        /// Natural-unit profile, one value per line. Defaults to the bundled one.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value = "AB")]
        scenario: String,
        #[arg(long, default_value_t = 20100719)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        sample_size: usize,
    },
    /// Run a scenario: sample, condition, draw posterior fields.
    Invert {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Draw posterior fields from a finished run.
    Fields {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Tabulate a 1-D or 2-D marginal density of the posterior mixture.
    Density {
        #[arg(long)]
        run: PathBuf,
        /// One or two parameter names, comma-separated (see mixture.txt).
        #[arg(long, value_delimiter = ',')]
        coords: Vec<String>,
        /// Grid points per axis.
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Axis ranges `lo:hi`, one per coordinate; default mean ± 4 sd.
        #[arg(long, value_delimiter = ',')]
        range: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproduction quantiles and coverage of the type-B data.
    Stats {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reproductions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn load_scenario(path: &Path) -> Result<(ScenarioConfig, Scenario)> {
    let config = ScenarioConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let scenario = Scenario::from_config(&config, base)?;
    Ok((config, scenario))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Truth {
            out,
            profile,
            scenario,
            seed,
            sample_size,
        } => {
            let kind = match scenario.as_str() {
                "A" => ScenarioKind::A,
                "AB" => ScenarioKind::AB,
                "B" => ScenarioKind::B,
                other => return Err(Error::Config(format!("unknown scenario {other:?}"))),
            };
            let natural = match profile {
                Some(p) => truth::parse_profile(&std::fs::read_to_string(&p)?)?,
                None => truth::bundled_profile(),
            };
            let g = natural.len();
            let (measured, inverted) = truth::default_locations(g);
            let transforms = engine::Transforms::default();
            let t = Truth::new(natural, &transforms.field, measured, inverted.clone(), &ForwardSpec::synthetic_pair(g)?)?;
            t.write(&out)?;
            let mut config = ScenarioConfig {
                seed,
                scenario: kind,
                sample_size,
                neighbors: None,
                bandwidth: 1.0,
                posterior_draws: 1000,
                workers: None,
                grid: engine::config::GridConfig { size: g },
                prior: Default::default(),
                transforms,
                data: engine::config::DataConfig {
                    type_a: (kind != ScenarioKind::B).then(|| "type_a.txt".into()),
                    type_b: (kind != ScenarioKind::A).then(|| "type_b.txt".into()),
                },
                anchors: engine::config::AnchorConfig { inverted },
                forward: engine::ForwardConfig::Synthetic,
            };
            if kind == ScenarioKind::B {
                config.prior.beta_range = Some([-8.0, 8.0]);
                config.prior.log_eta2_range = Some([-4.0, 3.0]);
            }
            std::fs::write(out.join("config.toml"), config.to_toml())?;
            log::info!("wrote truth and config to {}", out.display());
            Ok(())
        }
        Command::Invert { config, out, workers } => {
            let (cfg, scenario) = load_scenario(&config)?;
            engine::with_workers(workers.or(cfg.workers), || -> Result<()> {
                let artifacts = engine::run_inversion(&scenario)?;
                artifacts.write(&out)?;
                let draws = engine::draw_posterior_fields(&scenario, &artifacts.posterior, scenario.posterior_draws)?;
                draws.write(&out, &artifacts.layout, &scenario)?;
                if !scenario.type_b.is_empty() && !draws.outputs.is_empty() {
                    let rows = engine::reproduction_stats(&draws.outputs, &scenario.type_b.indices, &scenario.type_b.z)?;
                    engine::write_stats(&out.join("stats.csv"), &rows)?;
                }
                let mut log = artifacts.log_text(scenario.seed, scenario.forward_calls());
                log.push_str(&format!("posterior_draws = {}\n", draws.params.len()));
                std::fs::write(out.join("run.log"), log)?;
                Ok(())
            })?
        }
        Command::Fields {
            config,
            run,
            count,
            out,
            workers,
        } => {
            let (cfg, scenario) = load_scenario(&config)?;
            let out = out.unwrap_or_else(|| run.clone());
            let posterior = match scenario.kind {
                ScenarioKind::A => Posterior::TypeA,
                _ => Posterior::Mixture(read_mixture(&run.join(engine::MIXTURE_FILE))?.1),
            };
            let count = count.unwrap_or(scenario.posterior_draws);
            engine::with_workers(workers.or(cfg.workers), || -> Result<()> {
                let draws = engine::draw_posterior_fields(&scenario, &posterior, count)?;
                draws.write(&out, &engine::ParamLayout::new(&scenario), &scenario)
            })?
        }
        Command::Density {
            run,
            coords,
            points,
            range,
            out,
        } => {
            let (names, mix) = read_mixture(&run.join(engine::MIXTURE_FILE))?;
            if coords.is_empty() || coords.len() > 2 {
                return Err(Error::Config("density takes one or two coordinates".into()));
            }
            if points < 2 {
                return Err(Error::Config("density needs at least two points per axis".into()));
            }
            let idx = coords
                .iter()
                .map(|c| {
                    names
                        .iter()
                        .position(|n| n == c)
                        .ok_or_else(|| Error::Config(format!("unknown coordinate {c:?}; have {}", names.join(", "))))
                })
                .collect::<Result<Vec<_>>>()?;
            let marginal = mix.marginal(&idx)?;
            let (mean, cov) = (marginal.mean(), marginal.covariance());
            let axes = (0..idx.len())
                .map(|a| {
                    let (lo, hi) = match range.get(a) {
                        Some(r) => parse_range(r)?,
                        None => {
                            let sd = cov[(a, a)].sqrt();
                            (mean[a] - 4.0 * sd, mean[a] + 4.0 * sd)
                        }
                    };
                    Ok((0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let grid: Vec<DVector<f64>> = if axes.len() == 1 {
                axes[0].iter().map(|&x| DVector::from_element(1, x)).collect()
            } else {
                axes[0]
                    .iter()
                    .flat_map(|&x| axes[1].iter().map(move |&y| DVector::from_vec(vec![x, y])))
                    .collect()
            };
            let dens = marginal.log_densities(&grid)?;
            let mut header: Vec<String> = coords.clone();
            header.push("density".into());
            let rows = grid.iter().zip(dens).map(|(p, d)| {
                let mut r: Vec<f64> = p.iter().copied().collect();
                r.push(d.exp());
                r
            });
            output::write_csv(&out, &header, rows)
        }
        Command::Stats {
            config,
            reproductions,
            out,
        } => {
            let (_, scenario) = load_scenario(&config)?;
            let (header, rows) = output::read_csv(&reproductions)?;
            let cols = scenario
                .type_b
                .indices
                .iter()
                .map(|j| {
                    let name = format!("out_{j}");
                    header
                        .iter()
                        .position(|h| *h == name)
                        .ok_or_else(|| Error::Config(format!("{} lacks column {name}", reproductions.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            let reps: Vec<Vec<f64>> = rows.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect();
            let local: Vec<usize> = (0..cols.len()).collect();
            let mut stats = engine::reproduction_stats(&reps, &local, &scenario.type_b.z)?;
            for (row, &j) in stats.iter_mut().zip(&scenario.type_b.indices) {
                row.index = j;
            }
            engine::write_stats(&out, &stats)
        }
    }
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("range {s:?} is not lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let (lo, hi): (f64, f64) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
    if !(lo < hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}
