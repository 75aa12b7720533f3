#![allow(dead_code)]

use std::path::PathBuf;

use ldte::{ExperimentSample, NuisanceFit, ThresholdGrid};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub struct Golden {
    pub sample: ExperimentSample,
    pub fit: NuisanceFit,
    pub grid: ThresholdGrid,
    pub level: f64,
    pub expected: Value,
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

pub fn nested(v: &Value) -> Vec<Vec<f64>> {
    v.as_array().unwrap().iter().map(floats).collect()
}

pub fn flat(v: &Value) -> Vec<f64> {
    floats(v)
}

pub fn golden() -> Golden {
    let text = std::fs::read_to_string(fixture_path("golden_six_rows.json")).unwrap();
    let expected: Value = serde_json::from_str(&text).unwrap();
    let rows = expected["rows"].as_array().unwrap();
    let y = rows.iter().map(|r| r["y"].as_f64().unwrap()).collect();
    let d = rows.iter().map(|r| r["d"].as_u64().unwrap() as u8).collect();
    let z = rows.iter().map(|r| r["z"].as_u64().unwrap() as u8).collect();
    let s: Vec<String> = rows.iter().map(|r| r["stratum"].as_str().unwrap().to_string()).collect();
    let sample = ExperimentSample::new(y, d, z, &s, vec![]).unwrap();
    let mu = expected["mu"].as_array().unwrap();
    let eta = expected["eta"].as_array().unwrap();
    let fit = NuisanceFit::from_predictions([nested(&mu[0]), nested(&mu[1])], [flat(&eta[0]), flat(&eta[1])]).unwrap();
    let grid = ThresholdGrid::new(flat(&expected["thresholds"])).unwrap();
    let level = expected["level"].as_f64().unwrap();
    Golden {
        sample,
        fit,
        grid,
        level,
        expected,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Small dataset with every (arm, stratum) cell holding at least two units and
/// a first stage comfortably away from zero.
pub fn random_small_sample(seed: u64) -> ExperimentSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n_strata = rng.random_range(2..=4usize);
        let n = rng.random_range((4 * n_strata).max(12)..=50usize);
        let mut strata: Vec<usize> = (0..n).map(|i| i % n_strata).collect();
        strata.shuffle(&mut rng);
        let mut z = vec![0u8; n];
        for s in 0..n_strata {
            let mut members: Vec<usize> = (0..n).filter(|&i| strata[i] == s).collect();
            members.shuffle(&mut rng);
            let treated = rng.random_range(2..=members.len() - 2);
            for &i in &members[..treated] {
                z[i] = 1;
            }
        }
        let d: Vec<u8> = z
            .iter()
            .map(|&zi| u8::from(if zi == 1 { rng.random_bool(0.85) } else { rng.random_bool(0.15) }))
            .collect();
        // discrete outcomes so that ties and thresholds on the support occur
        let y: Vec<f64> = d.iter().map(|&di| f64::from(rng.random_range(0..6u8) + di)).collect();
        let labels: Vec<String> = strata.iter().map(|s| format!("s{s}")).collect();
        let sample = ExperimentSample::new(y, d, z, &labels, vec![]).unwrap();
        let stats = ldte::compute_stratum_stats(&sample);
        let grid = ThresholdGrid::new(vec![0.0]).unwrap();
        if ldte::estimate_unadjusted(&sample, &stats, &grid, &Default::default()).is_ok() {
            return sample;
        }
    }
}
