//! Writes the bundled example data sets.
//!
//! * `toy_internal.csv`, `toy_external.csv`: a small two-covariate trial
//!   and one external source, for smoke runs.
//! * `gastric_internal.csv`: a 110-patient two-arm trial, 25 of them with
//!   recurrent disease.
//! * `gastric_control.csv`: a single-arm control study in recurrent disease.
//! * `gastric_retro.csv`: a retrospective treated cohort in recurrent disease.
//!
//! `gastric_external_1000.csv` is not written here; it is the output of
//! `borrowkit --config configs/gastric.toml --seed 3 synthesize-external`.
//!
//! Usage: `cargo run -p borrowkit-core --example generate_data -- <dir>`

use std::path::PathBuf;
use std::sync::Arc;

use borrowkit::dataset::{write_dataset, CovValue, CovariateRole, CovariateSpec, PatientRecord, Schema, TrialDataset};
use borrowkit::rng::{substream, StreamRng};
use borrowkit::stats::inv_logit;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const SEED: u64 = 9;

fn bern(rng: &mut StreamRng, p: f64) -> f64 {
    f64::from(u8::from(rng.random::<f64>() < p))
}

fn write(dir: &PathBuf, name: &str, data: &TrialDataset) {
    let file = std::fs::File::create(dir.join(name)).expect("create output file");
    write_dataset(file, data, b',').expect("write data");
}

fn toy(dir: &PathBuf) {
    let schema = Arc::new(
        Schema::new(vec![
            CovariateSpec::continuous("age"),
            CovariateSpec::binary("high_risk").with_role(CovariateRole::Both),
        ])
        .expect("schema"),
    );
    let make = |rng: &mut StreamRng, n: usize, age_mean: f64, arm: Option<u8>| {
        let age = Normal::new(age_mean, 8.0).expect("normal");
        (0..n)
            .map(|i| {
                let a = arm.unwrap_or(u8::from(i % 2 == 1));
                let x = age.sample(rng);
                let hr = bern(rng, 0.4);
                let eta = -0.2 + 0.03 * (x - 60.0) - 0.5 * hr + f64::from(a) * (0.4 + 0.6 * hr);
                PatientRecord {
                    outcome: u8::from(rng.random::<f64>() < inv_logit(eta)),
                    arm: a,
                    covariates: vec![Some(CovValue::Num((x * 10.0).round() / 10.0)), Some(CovValue::Num(hr))],
                }
            })
            .collect::<Vec<_>>()
    };
    let mut rng = substream(SEED, "toy", 0);
    let internal = TrialDataset::new("toy_internal", schema.clone(), make(&mut rng, 60, 60.0, None)).expect("data");
    let external = TrialDataset::new("toy_external", schema, make(&mut rng, 40, 64.0, Some(0))).expect("data");
    write(dir, "toy_internal.csv", &internal);
    write(dir, "toy_external.csv", &external);
}

/// Covariate law of one gastric-cancer population.
struct Population {
    male: f64,
    age_mean: f64,
    age_sd: f64,
    lymph: f64,
    peritoneum: f64,
    liver: f64,
    ps1: f64,
}

/// Outcome model: tumor response. The analysis model keeps only disease
/// status; the other covariates shift the response rate.
fn response_probability(recurrent: f64, arm: f64, cov: &[f64; 6]) -> f64 {
    let [_, age, _, peritoneum, liver, ps] = *cov;
    let eta = -0.3 - 0.4 * recurrent
        + arm * (0.1 + 0.5 * recurrent)
        - 0.02 * (age - 64.0)
        - 0.4 * peritoneum
        - 0.2 * liver
        - 0.5 * ps;
    inv_logit(eta)
}

fn gastric_patient(rng: &mut StreamRng, pop: &Population, recurrent: f64, arm: u8) -> PatientRecord {
    let age = Normal::new(pop.age_mean, pop.age_sd).expect("normal").sample(rng).clamp(30.0, 85.0).round();
    let cov = [
        bern(rng, pop.male),
        age,
        bern(rng, pop.lymph),
        bern(rng, pop.peritoneum),
        bern(rng, pop.liver),
        bern(rng, pop.ps1),
    ];
    let p = response_probability(recurrent, f64::from(arm), &cov);
    let mut covariates: Vec<Option<CovValue>> = cov.iter().map(|&v| Some(CovValue::Num(v))).collect();
    covariates.push(Some(CovValue::Num(recurrent)));
    PatientRecord {
        outcome: u8::from(rng.random::<f64>() < p),
        arm,
        covariates,
    }
}

fn gastric(dir: &PathBuf) {
    let schema = Arc::new(
        Schema::new(vec![
            CovariateSpec::binary("male"),
            CovariateSpec::continuous("age"),
            CovariateSpec::binary("lymph"),
            CovariateSpec::binary("peritoneum"),
            CovariateSpec::binary("liver"),
            CovariateSpec::binary("ps1"),
            CovariateSpec::binary("recurrent").with_role(CovariateRole::Both),
        ])
        .expect("schema"),
    );
    let trial = Population {
        male: 0.72,
        age_mean: 64.0,
        age_sd: 9.0,
        lymph: 0.55,
        peritoneum: 0.35,
        liver: 0.3,
        ps1: 0.35,
    };
    let control = Population {
        male: 0.7,
        age_mean: 66.0,
        age_sd: 9.0,
        lymph: 0.6,
        peritoneum: 0.3,
        liver: 0.25,
        ps1: 0.3,
    };
    let retro = Population {
        male: 0.65,
        age_mean: 69.0,
        age_sd: 10.0,
        lymph: 0.5,
        peritoneum: 0.45,
        liver: 0.2,
        ps1: 0.5,
    };

    let mut rng = substream(SEED, "gastric-internal", 0);
    let mut status: Vec<f64> = (0..110).map(|i| if i < 25 { 1.0 } else { 0.0 }).collect();
    status.shuffle(&mut rng);
    let mut arms: Vec<u8> = (0..110).map(|i| u8::from(i % 2 == 1)).collect();
    arms.shuffle(&mut rng);
    let internal: Vec<PatientRecord> = status
        .iter()
        .zip(&arms)
        .map(|(&r, &a)| gastric_patient(&mut rng, &trial, r, a))
        .collect();

    let mut rng = substream(SEED, "gastric-control", 0);
    let ctrl: Vec<PatientRecord> = (0..55).map(|_| gastric_patient(&mut rng, &control, 1.0, 0)).collect();
    let mut rng = substream(SEED, "gastric-retro", 0);
    let treated: Vec<PatientRecord> = (0..70).map(|_| gastric_patient(&mut rng, &retro, 1.0, 1)).collect();

    write(dir, "gastric_internal.csv", &TrialDataset::new("internal", schema.clone(), internal).expect("data"));
    write(dir, "gastric_control.csv", &TrialDataset::new("control", schema.clone(), ctrl).expect("data"));
    write(dir, "gastric_retro.csv", &TrialDataset::new("retro", schema, treated).expect("data"));
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    std::fs::create_dir_all(&dir).expect("create data directory");
    toy(&dir);
    gastric(&dir);
    println!("wrote data sets to {}", dir.display());
}
