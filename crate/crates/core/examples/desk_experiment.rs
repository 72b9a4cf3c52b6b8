//! Runs every method of the desk-scale experiment for a few seeds and
//! prints the comparison table per seed.
//!
//! cargo run --release -p fcu-core --example desk_experiment -- configs/desk.toml 0 1 2

use std::time::Duration;

use fcu_core::eval::{attach_reference, render_table};
use fcu_core::{Experiment, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "configs/desk.toml".into());
    let base = RunConfig::load(&path)?;
    let seeds: Vec<u64> = args.map(|s| s.parse()).collect::<Result<_, _>>()?;
    for seed in if seeds.is_empty() { vec![0, 1, 2] } else { seeds } {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let exp = Experiment::build(cfg.clone())?;
        let origin = exp.train_origin()?;
        let trained = &origin.model.params;
        let mut reports = vec![exp.evaluate("origin", trained, origin.elapsed)?];

        let retrain = exp.retrain()?;
        reports.push(exp.evaluate("retrain", &retrain.outcome.model.params, retrain.outcome.elapsed)?);
        let finetune = exp.finetune(trained)?;
        reports.push(exp.evaluate("finetune", &finetune.outcome.model.params, finetune.outcome.elapsed)?);

        for fgmp in [true, false] {
            let mut c = cfg.clone();
            c.fgmp_enabled = fgmp;
            let e = Experiment::build(c)?;
            let mut curve = Vec::new();
            let run = e.unlearn_observed(trained, |i, m| {
                if i % 20 == 0 {
                    let acc = fcu_core::eval::accuracy(m, e.test_set()).unwrap();
                    curve.push(format!("{i}:{acc:.2}"));
                }
            })?;
            println!("seed {seed} fgmp={fgmp} local curve {}", curve.join(" "));
            let name = e.config().method_name();
            reports.push(e.evaluate(name, run.final_params(), run.elapsed())?);
            reports.push(e.evaluate(&format!("{name}/local"), &run.unlearned, Duration::ZERO)?);
        }
        attach_reference(&mut reports);
        println!("seed {seed}\n{}", render_table(&reports));
    }
    Ok(())
}
