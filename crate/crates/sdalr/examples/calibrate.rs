//! Generator calibration probe: trains the source model once per setting
//! and prints source/target accuracies for a grid of shift severities.

use sdalr::config::RunConfig;
use sdalr::dataset::synth::{synth_benchmark, DomainShift};
use sdalr::train::{evaluate, train_source};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("grid");

    match mode {
        "grid" => grid(),
        other => panic!("unknown mode {other}"),
    }
}

fn grid() {
    let base = RunConfig::synth_default();
    let shifts = [
        ("noise only", DomainShift { speed_factor: 1.0, noise_scale: 3.0 }),
        ("speed only", DomainShift { speed_factor: 1.35, noise_scale: 1.0 }),
        ("full shift", DomainShift { speed_factor: 1.35, noise_scale: 3.0 }),
    ];
    for (name, shift) in shifts {
        let mut cfg = base.clone();
        cfg.synth_shift = shift;
        let (source, target) = synth_benchmark(&cfg.synth, &cfg.synth_shift, 0).unwrap();
        let (model, rec) = train_source(&source, &cfg, None).unwrap();
        let src_acc = evaluate(&model, &source, 256).unwrap().accuracy;
        let tgt_acc = evaluate(&model, &target, 256).unwrap().accuracy;
        println!(
            "{name}: val {:.3} source {:.3} target {:.3}",
            rec.final_val_accuracy.unwrap_or(f64::NAN),
            src_acc,
            tgt_acc
        );
    }
}
