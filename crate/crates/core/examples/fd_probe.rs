// Scan (config seed, sample seed) pairs for a well-conditioned grad-check fixture.
use ehrgpt::model::{check_batch, grad_check, ModelConfig};

fn main() {
    for config_seed in [7u64, 11, 42, 123] {
        let mut config = ModelConfig::tiny(11);
        config.seed = config_seed;
        for sample_seed in [0u64, 1, 2] {
            let report = grad_check(&config, &check_batch(11), 64, 1e-5, sample_seed).unwrap();
            let worst = report.worst_offenders(1)[0];
            println!(
                "cfg {config_seed} smp {sample_seed}: max {:.3e} ({}, ana {:.2e})  pass={}",
                report.max_rel_err(),
                worst.name,
                worst.worst.1,
                report.passed()
            );
        }
    }
}
