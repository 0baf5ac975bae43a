use rayon::prelude::*;

use tempcredit::config::desk_experiment;
use tempcredit::envs::EnvSpec;
use tempcredit::trainer::train;

/// Reaching the goal pays 1, so the optimal return on the chain is 1.
const OPTIMAL_RETURN: f64 = 1.0;

#[test]
fn chain_return_closes_half_the_gap_to_optimal() {
    let mut cfg = desk_experiment("chain", EnvSpec::ChainMdp { n_states: 6, horizon: 10 }, 200);
    cfg.overrides.batch_steps = Some(256);
    let curves: Vec<Vec<f64>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (_, rows) = train(cfg.train_config(seed).unwrap(), None).unwrap();
            rows.iter().map(|r| r.return_mean).collect()
        })
        .collect();
    let n = curves.len() as f64;
    let start = curves.iter().map(|c| c[0]).sum::<f64>() / n;
    let window = cfg.iterations / 10;
    let end = curves
        .iter()
        .map(|c| c[c.len() - window..].iter().sum::<f64>() / window as f64)
        .sum::<f64>()
        / n;
    assert!(
        end - start >= 0.5 * (OPTIMAL_RETURN - start),
        "start {start:.3}, end {end:.3}"
    );
}
