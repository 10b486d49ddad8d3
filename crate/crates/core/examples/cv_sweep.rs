//! Hybrid vs PureNN cross-validation on the default synthetic dataset, one
//! line per training seed and window.
//!
//! `cargo run --release -p neurocep --example cv_sweep -- [seed...]`

use neurocep::dataio::{synth_generate, synth_ruleset, SynthConfig};
use neurocep::purenn::purenn_cross_validate;
use neurocep::training::{all_folds, cross_validate, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: Vec<u64> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let seeds = if seeds.is_empty() { vec![1, 2, 3] } else { seeds };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let data = synth_generate(&SynthConfig::default())?;
    for seed in seeds {
        for window in 2..=5 {
            let rs = synth_ruleset(10, 5, window);
            let cfg = TrainConfig { window, seed, ..TrainConfig::default() };
            let t = std::time::Instant::now();
            let (hybrid, _) = cross_validate(&data, &rs, &cfg, &all_folds(), threads)?;
            let (base, _) = purenn_cross_validate(&data, &rs, &cfg, &all_folds(), threads)?;
            println!(
                "seed {seed} w={window}: hybrid sound {:.4} pattern {:.4} | purenn sound {:.4} pattern {:.4} ({:.1?})",
                hybrid.mean_sound_acc,
                hybrid.mean_pattern_acc,
                base.mean_sound_acc,
                base.mean_pattern_acc,
                t.elapsed()
            );
        }
    }
    Ok(())
}
