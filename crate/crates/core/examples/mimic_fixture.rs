//! Writes a synthetic emergency-department extract shaped like the columns
//! of the feature dictionary in `fixtures/mimic_feature_dictionary.json`.
//! No real patient data is involved.
//!
//! Usage: cargo run --example mimic_fixture -- <n> <seed> > fixtures/mimic_shaped.csv

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const COMPLAINTS: [&str; 12] = [
    "chest pain",
    "abdominal pain",
    "headache",
    "shortness of breath",
    "back pain",
    "cough",
    "nausea/vomiting",
    "fever/chills",
    "syncope",
    "dizziness",
    "fall",
    "laceration",
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(3000, |a| a.parse().expect("n"));
    let seed: u64 = args.next().map_or(7, |a| a.parse().expect("seed"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();

    println!("# synthetic extract for pipeline tests; ed/hospital dispositions: 0 = discharge, 2 = hospital, 3 = ICU");
    println!("stay_id,ed_disposition,hospital_disposition,death,temperature,heartrate,resprate,o2sat,sbp,dbp,pain,chiefcomplaint,age,acuity,gender");
    for i in 0..n {
        let z = |rng: &mut ChaCha8Rng| -> f64 { noise.sample(rng) };
        let (zt, zh, zr, zo, zs, zd, za) = (z(&mut rng), z(&mut rng), z(&mut rng), z(&mut rng), z(&mut rng), z(&mut rng), z(&mut rng));
        let temperature = 98.4 + 1.1 * zt;
        let heartrate = 86.0 + 17.0 * zh;
        let resprate = 18.0 + 3.0 * zr;
        let o2sat = (97.5 + 2.0 * zo).min(100.0);
        let sbp = 134.0 + 22.0 * zs;
        let dbp = 77.0 + 14.0 * zd;
        let age = (58.0 + 18.0 * za).clamp(18.0, 100.0);
        let pain: f64 = rng.gen_range(0..=10) as f64;
        let complaint = COMPLAINTS[rng.gen_range(0..COMPLAINTS.len())];
        let male = rng.gen_bool(0.48);

        let complaint_effect = match complaint {
            "shortness of breath" => 0.8,
            "chest pain" | "syncope" => 0.4,
            "back pain" | "headache" => -0.3,
            _ => 0.0,
        };
        let triage = -3.2 + 0.5 * zh + 0.4 * zr - 0.6 * zo + 0.3 * zt * zt + complaint_effect + 0.3 * z(&mut rng);
        let full = triage + 0.7 * za;
        let p_death = sigmoid(full);

        let ed = if triage + 0.8 * z(&mut rng) > -1.5 {
            3
        } else if triage + 0.8 * z(&mut rng) > -3.0 {
            2
        } else {
            0
        };
        let hospital = match ed {
            2 if full + 0.8 * z(&mut rng) > -1.8 => "3",
            2 => "0",
            _ => "",
        };
        let death = if ed == 0 {
            String::new()
        } else {
            u8::from(rng.gen_bool(p_death)).to_string()
        };
        let acuity = (3.6 - 6.0 * sigmoid(triage + 2.0) + if male { 0.0 } else { 0.05 } + 0.5 * z(&mut rng))
            .round()
            .clamp(1.0, 5.0);

        // messy raw values the pipeline must repair
        let fmt = |x: f64, rng: &mut ChaCha8Rng| {
            if rng.gen_bool(0.02) {
                String::new()
            } else {
                format!("{x:.1}")
            }
        };
        let temperature = if rng.gen_bool(0.003) { 999.0 } else { temperature };
        let o2sat = if rng.gen_bool(0.003) { 105.0 } else { o2sat };
        let pain = if rng.gen_bool(0.005) { 15.0 } else { pain };
        let age = if ed == 0 { String::new() } else { format!("{age:.0}") };
        println!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            30_000_000 + i,
            ed,
            hospital,
            death,
            fmt(temperature, &mut rng),
            fmt(heartrate, &mut rng),
            fmt(resprate, &mut rng),
            fmt(o2sat, &mut rng),
            fmt(sbp, &mut rng),
            fmt(dbp, &mut rng),
            fmt(pain, &mut rng),
            complaint,
            age,
            acuity,
            if male { "M" } else { "F" },
        );
    }
}
