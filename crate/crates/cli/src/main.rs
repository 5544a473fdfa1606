use gplac::config::{Config, KEY_HELP};
use gplac::{checkpoint, dataset, experiment, train, viz, Error, Result};
use gplac_core::model::build_model;
use std::path::PathBuf;

const USAGE: &str = "gplac — multitask visuomotor policy learner on a 2D push-world

usage: gplac <command> [--config FILE] [--KEY VALUE]...

commands:
  gen-data       generate the dataset (demos, weak images, env specs)
  train          train the configured variant on a generated dataset
  eval           evaluate a checkpoint on the unseen environments
  experiment     run the variant suite + weak-data sweep, emit the table
  viz-features   overlay attention feature points on probe images
  gradcheck      run the layer gradient suite (exit 0 iff all < 1e-4)
  describe       print layer shapes and parameter counts

Any config key can be overridden on the command line, e.g.
  gplac train --config run.cfg --seed 7 --total_steps 1000
";

fn parse_args(args: &[String]) -> Result<(Option<PathBuf>, Vec<(String, String)>)> {
    let mut config = None;
    let mut overrides = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(key) = arg.strip_prefix("--") else {
            return Err(Error::Usage(format!(
                "unexpected argument {arg:?}\n\n{USAGE}"
            )));
        };
        let (key, value) = if let Some((k, v)) = key.split_once('=') {
            (k.to_string(), v.to_string())
        } else {
            let v = args.get(i + 1).ok_or_else(|| {
                Error::Usage(format!("flag --{key} needs a value\n\n{}", KEY_HELP))
            })?;
            i += 1;
            (key.to_string(), v.clone())
        };
        if key == "config" {
            config = Some(PathBuf::from(value));
        } else {
            overrides.push((key, value));
        }
        i += 1;
    }
    Ok((config, overrides))
}

fn load_config(args: &[String]) -> Result<Config> {
    let (path, overrides) = parse_args(args)?;
    Config::load(path.as_deref(), &overrides)
}

fn require_checkpoint(cfg: &Config) -> Result<PathBuf> {
    cfg.checkpoint.clone().ok_or_else(|| {
        Error::Usage("this command needs --checkpoint pointing at a .gplc file".into())
    })
}

fn run(command: &str, args: &[String]) -> Result<()> {
    match command {
        "gen-data" => {
            let cfg = load_config(args)?;
            let summary = dataset::generate(&cfg)?;
            println!(
                "dataset written to {} ({} demo steps, {} multi-env demo steps, {} weak examples, {} expert discards)",
                cfg.data_dir.display(),
                summary.demo_steps,
                summary.demo_multi_steps,
                summary.weak_examples,
                summary.expert_discards
            );
            Ok(())
        }
        "train" => {
            let cfg = load_config(args)?;
            cfg.validate()?;
            let data = dataset::load(&cfg.data_dir, &cfg)?;
            let run_dir = cfg.out_dir.join(format!("{}_seed{}", cfg.variant.name(), cfg.seed));
            let outcome = train::train(&cfg, &data, &run_dir)?;
            println!(
                "trained {} for {} steps; final success {} %; checkpoint {}",
                cfg.variant.name(),
                outcome.optimizer_steps,
                outcome
                    .final_success
                    .map(|v| format!("{v:.2}"))
                    .unwrap_or_else(|| "n/a".into()),
                outcome.final_checkpoint.display()
            );
            if let Some(acc) = outcome.final_weak_acc {
                println!("held-out weak accuracy {acc:.2} %");
            }
            println!("metrics: {}", run_dir.join("metrics.csv").display());
            Ok(())
        }
        "eval" => {
            let cfg = load_config(args)?;
            let ckpt = require_checkpoint(&cfg)?;
            let data = dataset::load(&cfg.data_dir, &cfg)?;
            let entries = checkpoint::read(&ckpt)?;
            let mut model = train::load_model(cfg.variant, &cfg, &entries)?;
            let sim = cfg.sim();
            let mut rng = gplac_core::rng::Rng::new(0);
            let report = gplac_core::sim::evaluate_policy(
                |image, state| {
                    let img = train::image_batch(&[image], sim.image_h, sim.image_w);
                    match model.policy_forward(&img, state, gplac_core::tape::Mode::Eval, &mut rng)
                    {
                        Ok(a) => [a.data()[0], a.data()[1]],
                        Err(_) => [f32::NAN, f32::NAN],
                    }
                },
                &data.envs.test,
                &sim,
                cfg.eval_trials,
                gplac_core::rng::stream_seed(cfg.seed, "eval_final"),
            );
            for (env, pct) in &report.per_spec {
                println!("env {env}: {pct:.1} %");
            }
            println!("overall: {:.2} %", report.overall_pct);
            if report.nonfinite_actions > 0 {
                println!(
                    "warning: {} trials aborted on non-finite actions",
                    report.nonfinite_actions
                );
            }
            Ok(())
        }
        "experiment" => {
            let cfg = load_config(args)?;
            let data = dataset::load(&cfg.data_dir, &cfg)?;
            let results = experiment::run_experiment(&cfg, &data, &cfg.out_dir)?;
            println!("{:<16} {:>10} {:>8} {:>8}", "row", "fraction", "mean", "stddev");
            for row in &results.rows {
                println!(
                    "{:<16} {:>10.4} {:>8} {:>8}{}",
                    row.label,
                    row.weak_fraction,
                    row.mean.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                    row.stddev.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                    if row.failed > 0 {
                        format!("  [{} failed]", row.failed)
                    } else {
                        String::new()
                    }
                );
            }
            println!(
                "table: {}",
                cfg.out_dir.join("results_table.csv").display()
            );
            Ok(())
        }
        "viz-features" => {
            let cfg = load_config(args)?;
            let ckpt = require_checkpoint(&cfg)?;
            let data = dataset::load(&cfg.data_dir, &cfg)?;
            let entries = checkpoint::read(&ckpt)?;
            let mut model = train::load_model(cfg.variant, &cfg, &entries)?;
            let out = cfg.out_dir.join("viz");
            let summary = viz::viz_features(&mut model, &data.envs.test, &cfg, &out)?;
            println!(
                "{} overlays in {}; mean feature-point-to-object distance {:.2} px",
                summary.images,
                out.display(),
                summary.mean_point_to_object_px
            );
            Ok(())
        }
        "gradcheck" => {
            let report = gplac_core::gradcheck::layer_suite(2024, 20).map_err(Error::from)?;
            let mut ok = true;
            for check in &report {
                println!(
                    "{:<18} trials {:>2}  max_rel_err {:.3e}",
                    check.name, check.trials, check.max_rel_err
                );
                ok &= check.max_rel_err < 1e-4;
            }
            if ok {
                println!("all layers within 1e-4");
                Ok(())
            } else {
                Err(Error::Numeric("gradient check over tolerance".into()))
            }
        }
        "describe" => {
            let cfg = load_config(args)?;
            let arch = cfg.arch_for(cfg.variant);
            let model = build_model::<f32>(cfg.variant, &arch, cfg.seed)?;
            print!("{}", model.describe());
            Ok(())
        }
        "--help" | "-h" | "help" => {
            print!("{USAGE}\n{KEY_HELP}\n");
            Ok(())
        }
        other => Err(Error::Usage(format!(
            "unknown command {other:?}\n\n{USAGE}"
        ))),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        std::process::exit(1);
    };
    match run(command, &args[1..]) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
