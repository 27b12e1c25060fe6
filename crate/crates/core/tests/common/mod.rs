#![allow(dead_code)]

use peduncle_core::simulator::{generate_corpus, SimConfig, SimTrialRecord};
use peduncle_core::Trial;

pub fn config(noise_sigma: f64, seed: u64) -> SimConfig {
    SimConfig {
        noise_sigma,
        seed,
        ..Default::default()
    }
}

pub fn rigid_corpus(config: &SimConfig, n: usize) -> Vec<SimTrialRecord> {
    generate_corpus(config, n, 0.0).expect("corpus generates")
}

pub fn trials(records: Vec<SimTrialRecord>) -> Vec<Trial> {
    records.into_iter().map(|r| r.trial).collect()
}

pub fn median(values: &[f64]) -> f64 {
    peduncle_core::evaluation::summarize(values).unwrap().median
}
