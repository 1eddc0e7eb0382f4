//! Observation dependence from the closed forms against simulated pairs.

use molcomm::channel::{BitSequence, DegradationMode, SignalModel};
use molcomm::env::{Environment, TransmissionSpec};
use molcomm::mutual_info::{conditional_count_dist, SamplePairSpec};
use molcomm::sim::Simulator;
use molcomm::SimConfig;

#[test]
fn conditional_count_matches_simulated_pairs() {
    let (t1, t2, n_a) = (10e-6, 12e-6, 50);
    let env = Environment::base_case();
    let mut tx = TransmissionSpec::uniform(n_a, t2, 1, 2);
    tx.sample_offsets = vec![t1, t2];
    let sim = Simulator::new(&env, &tx, &SimConfig { master_seed: 3, ..SimConfig::default() }).unwrap();
    let model = SignalModel::new(env, tx, DegradationMode::StrictBound).unwrap();
    let spec = SamplePairSpec::new(t1, t2, n_a).unwrap();

    let runs = 100_000u64;
    let one = BitSequence::ones(1);
    // histogram of s2 for each s1
    let mut hist: Vec<Vec<u64>> = Vec::new();
    for i in 0..runs {
        let obs = sim.run_realization(&one, i).unwrap();
        let (s1, s2) = (obs.get(0, 0) as usize, obs.get(0, 1) as usize);
        if hist.len() <= s1 {
            hist.resize(s1 + 1, Vec::new());
        }
        if hist[s1].len() <= s2 {
            hist[s1].resize(s2 + 1, 0);
        }
        hist[s1][s2] += 1;
    }

    let mut checked = 0;
    for (s1, row) in hist.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total < 1000 {
            continue;
        }
        let model_dist = conditional_count_dist(&spec, &model, s1 as u64).unwrap();
        let hi = (row.len() as u64).max(model_dist.max_count() + 1);
        let tv = 0.5
            * (0..hi)
                .map(|k| {
                    let emp = row.get(k as usize).map_or(0.0, |&c| c as f64 / total as f64);
                    (emp - model_dist.pmf(k)).abs()
                })
                .sum::<f64>();
        assert!(tv < 0.02, "s1 = {s1}: total variation {tv:.4} over {total} pairs");
        checked += 1;
    }
    assert!(checked >= 1);
}
