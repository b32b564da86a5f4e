//! Writes a seeded 12-run fixture (3 families x 4 representations, 7 labels).
//!
//! ```text
//! cargo run -p ensemble-vote --example gen_fixture -- crates/core/tests/fixtures/grid12
//! ```

use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const LABELS: [&str; 7] = [
    "Internal Medicine",
    "Orthopedics",
    "Neurosurgery",
    "Dermatology",
    "Obstetrics and Gynecology",
    "Ophthalmology",
    "Otolaryngology",
];
const FAMILIES: [&str; 3] = ["camelbert", "arabert", "asafayabert"];
const REPRESENTATIONS: [&str; 4] = ["post", "refined", "ner", "summarized"];
// Target single-run accuracies, family-major.
const SKILL: [f64; 12] = [
    0.705, 0.756, 0.746, 0.649, 0.718, 0.724, 0.690, 0.659, 0.749, 0.752, 0.737, 0.749,
];
const SAMPLES: usize = 319;
const SEED: u64 = 20_250_806;

fn confidence(rng: &mut ChaCha8Rng, label: usize) -> Vec<f64> {
    loop {
        let top: f64 = rng.gen_range(0.35..0.95);
        let weights: Vec<f64> = (0..LABELS.len() - 1).map(|_| rng.gen::<f64>()).collect();
        let sum: f64 = weights.iter().sum();
        let rest: Vec<f64> = weights.iter().map(|w| w / sum * (1.0 - top)).collect();
        if rest.iter().all(|&r| r < top) {
            let mut out = rest;
            out.insert(label, top);
            return out;
        }
    }
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).expect("usage: gen_fixture <dir>"));
    fs::create_dir_all(dir.join("runs")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    // Skewed class prior: the first class dominates.
    let prior = [0.34, 0.16, 0.13, 0.11, 0.10, 0.09, 0.07];
    let mut truth = Vec::with_capacity(SAMPLES);
    let mut difficulty = Vec::with_capacity(SAMPLES);
    let mut confuser = Vec::with_capacity(SAMPLES);
    for _ in 0..SAMPLES {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let label = prior
            .iter()
            .position(|p| {
                acc += p;
                u < acc
            })
            .unwrap_or(0);
        truth.push(label);
        difficulty.push(rng.gen::<f64>());
        let mut other = rng.gen_range(0..LABELS.len() - 1);
        if other >= label {
            other += 1;
        }
        confuser.push(other);
    }

    let mut order: Vec<usize> = (0..SAMPLES).collect();
    let mut csv = String::from("sample_id,label\n");
    for (i, &label) in truth.iter().enumerate() {
        csv.push_str(&format!("post-{i:04},{}\n", LABELS[label]));
    }
    fs::write(dir.join("truth.csv"), csv).unwrap();

    let mut entries = Vec::new();
    for (f, family) in FAMILIES.iter().enumerate() {
        for (r, repr) in REPRESENTATIONS.iter().enumerate() {
            let id = format!("{family}_{repr}");
            let skill = SKILL[f * 4 + r];
            // Run files list samples in their own order.
            order.shuffle(&mut rng);
            let predictions: Vec<_> = order
                .iter()
                .map(|&i| {
                    let p_correct = (skill + 0.08 + (0.5 - difficulty[i]) * 1.2).clamp(0.01, 0.995);
                    let label = if rng.gen::<f64>() < p_correct {
                        truth[i]
                    } else if rng.gen::<f64>() < 0.85 {
                        confuser[i]
                    } else {
                        let mut l = rng.gen_range(0..LABELS.len() - 1);
                        if l >= truth[i] {
                            l += 1;
                        }
                        l
                    };
                    json!({
                        "sample_id": format!("post-{i:04}"),
                        "label": LABELS[label],
                        "confidence": confidence(&mut rng, label),
                    })
                })
                .collect();
            let file = format!("runs/{id}.json");
            let body = json!({
                "run_id": id,
                "metadata": {"generator": "gen_fixture", "seed": SEED},
                "predictions": predictions,
            });
            fs::write(dir.join(&file), serde_json::to_vec_pretty(&body).unwrap()).unwrap();
            entries.push(json!({
                "id": id,
                "family": family,
                "representation": repr,
                "file": file,
            }));
        }
    }

    let manifest = json!({
        "version": 1,
        "labels": LABELS,
        "truth": "truth.csv",
        "runs": entries,
    });
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest).unwrap(),
    )
    .unwrap();
}
