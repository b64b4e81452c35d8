//! Runs the three-method comparison on a stock task and prints per-seed accuracies.
//!
//! `cargo run --release -p jda-core --example calibrate -- <task|task.json> <seeds> [lambda] [max_outer]`

use std::time::Instant;

use jda_core::datagen::{make_transfer_task, TransferTask};
use jda_core::eval::{prepare, run_methods, Method, RunSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map_or("severity-shift", String::as_str);
    let task = if name.ends_with(".json") {
        serde_json::from_str(&std::fs::read_to_string(name)?)?
    } else {
        TransferTask::stock(name, 0)?
    };
    let seeds: Vec<u64> = args
        .get(2)
        .map_or("1", String::as_str)
        .split(',')
        .map(|s| s.parse().expect("seed"))
        .collect();
    let mut settings = RunSettings::default();
    if let Some(l) = args.get(3) {
        settings.train.lambda = l.parse()?;
    }
    if let Some(m) = args.get(4) {
        settings.train.max_outer_iterations = m.parse()?;
    }
    if let Ok(e) = std::env::var("EPOCHS") {
        settings.train.pretrain_epochs = e.parse()?;
    }
    for seed in seeds {
        let start = Instant::now();
        let data = prepare(&make_transfer_task(&task.reseeded(seed))?, settings.preprocessing)?;
        let outcome = run_methods(&data, &Method::ALL, &settings, seed)?;
        let src_acc = outcome.pretrain_history.last().map_or(0.0, |r| r.accuracy);
        let mut line = format!("{} seed {seed}: src={:.1}", task.name, 100.0 * src_acc);
        for r in &outcome.results {
            line += &format!(" {}={:.1}", r.method.as_str(), 100.0 * r.evaluation.accuracy);
            if let Some(h) = &r.history {
                line += &format!("({} {})", h.records.len(), h.stop.as_str());
            }
        }
        println!("{line} [{:.1}s]", start.elapsed().as_secs_f64());
        for r in &outcome.results {
            println!("  {:8} {:?}", r.method.as_str(), r.evaluation.confusion.counts());
            if let Some(h) = &r.history {
                let traj: Vec<String> = h
                    .records
                    .iter()
                    .map(|r| format!("{:.0}", 100.0 * r.test_accuracy.unwrap_or(0.0)))
                    .collect();
                println!("           acc {}", traj.join(" "));
                let pen: Vec<String> = h.records.iter().step_by(5).map(|r| format!("{:.3}/{:.3}", r.ce_loss, r.penalty)).collect();
                println!("           ce/pen {}", pen.join(" "));
            }
        }
    }
    Ok(())
}
