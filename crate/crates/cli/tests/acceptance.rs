//! Acceptance checks, one per criterion. Every check prints a single
//! `PASS`/`FAIL` line with its measured values; the process fails if any
//! check fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ssal::config::{AttackConfig, ExperimentConfig, ExperimentMode, FitData};
use ssal::experiment::run_experiment;
use ssal_core::attack::{
    calibrate_black_box, craft_black_box, craft_white_box, prepare_basis, SigmoidSource,
};
use ssal_core::calibration::{fit_sigmoid, sigmoid_inverse_checked, SigmoidParams};
use ssal_core::metrics::compute_imr;
use ssal_core::ofs::{generate_ofs, gradient_check, OfsConfig, OfsObjective};
use ssal_core::sphere::{angular_distance, project_to_subsphere, sample_uniform_sphere};
use ssal_core::stats::BetaDistribution;
use ssal_core::world::{build_world, embed, sample_population, WorldConfig};
use ssal_core::{rng, SubsphereBasis};

type Check = fn() -> (bool, String);

fn main() {
    let checks: [(u32, Check); 8] = [
        (1, criterion_1_projection_law),
        (
            2,
            criterion_2_black_box_with_correction_collapses_to_white_box,
        ),
        (3, criterion_3_universal_basis),
        (4, criterion_4_correction_matrix_benefit),
        (5, criterion_5_black_box_beats_transfer),
        (6, criterion_6_orthogonal_face_set),
        (7, criterion_7_sigmoid_calibration),
        (8, criterion_8_property_substitutes),
    ];
    let mut failed = 0;
    for (id, check) in checks {
        let (ok, detail) = std::panic::catch_unwind(check)
            .unwrap_or_else(|e| (false, format!("panicked: {}", panic_message(&e))));
        println!(
            "{} criterion {id}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        failed += !ok as usize;
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn ssal(args: &[&str]) -> (String, Duration) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_ssal"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    (String::from_utf8(out.stdout).unwrap(), start.elapsed())
}

fn csv_rows(text: &str) -> Vec<BTreeMap<String, String>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| {
            header
                .iter()
                .map(|h| h.to_string())
                .zip(l.split(',').map(String::from))
                .collect()
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

fn criterion_1_projection_law() -> (bool, String) {
    let n = 100_000;
    let mut ok = true;
    let mut parts = vec![];
    for (d, k) in [(512, 128), (512, 256), (64, 16), (8, 2)] {
        let (out, took) = ssal(&[
            "validate-prop",
            "--d",
            &d.to_string(),
            "--k",
            &k.to_string(),
            "--n",
            "100000",
            "--seed",
            "0",
        ]);
        let row = &csv_rows(&out)[0];
        let mean = num(row, "empirical_mean");
        let var = BetaDistribution::projection_law(d, k).unwrap().variance();
        let bound = 3.0 * (var / n as f64).sqrt();
        let dev = (mean - k as f64 / d as f64).abs();
        let ks = num(row, "ks_statistic");
        let pair_ok = dev <= bound && ks <= 0.01 && took <= Duration::from_secs(60);
        ok &= pair_ok;
        parts.push(format!(
            "(d={d},k={k}) mean={mean:.5} |dev|={dev:.2e}<= {bound:.2e} ks={ks:.4} t={:.1}s",
            took.as_secs_f64()
        ));
    }
    (ok, parts.join("; "))
}

fn criterion_2_black_box_with_correction_collapses_to_white_box() -> (bool, String) {
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let d = 8 + (i as usize * 7) % 57;
        let k = 2 + (i as usize * 5) % (d / 2).min(32 - 1);
        let w = build_world(&WorldConfig::new(d, 2 * d, k, 0.3, 0.0, 1000 + i)).unwrap();
        let pop =
            sample_population(&w, Some("f"), 4 * k + 20, 1, &mut rng::stream(i, "c2/pop")).unwrap();
        let basis = prepare_basis(&w, &w.target.model, "f", &pop, k).unwrap();
        let cal = calibrate_black_box(
            &w,
            &basis,
            &w.target,
            SigmoidSource::Known(w.target.sigmoid),
        )
        .unwrap();
        let target =
            &sample_population(&w, None, 1, 1, &mut rng::stream(i, "c2/target")).unwrap()[0];
        let wb = craft_white_box(&w, &basis, &target.image).unwrap();
        let (bb, _, _) = craft_black_box(
            &w,
            &basis,
            &w.target,
            &cal.sigmoid,
            Some(&cal.correction),
            &target.image,
        )
        .unwrap();
        let fw = embed(&w.target.model, &w, &wb).unwrap();
        let fb = embed(&w.target.model, &w, &bb.unwrap()).unwrap();
        worst = worst.max(angular_distance(&fw, &fb).unwrap());
    }
    let ok = worst <= 1e-8;
    (
        ok,
        format!("100 instances, worst feature-space angle {worst:.3e} (<= 1e-8)"),
    )
}

fn criterion_3_universal_basis() -> (bool, String) {
    let (out, took) = ssal(&[
        "validate-basis",
        "--d",
        "64",
        "--k",
        "24",
        "--eta",
        "0.05",
        "--n",
        "10000",
        "--threshold",
        "0.3420",
        "--seed",
        "0",
    ]);
    let rows = csv_rows(&out);
    let frac = |name: &str| {
        num(
            rows.iter().find(|r| r["variant"] == name).unwrap(),
            "fraction_within",
        )
    };
    let (att, rnd) = (frac("attributed"), frac("random_vectors"));
    let ok = att >= 0.95 && rnd < att && took <= Duration::from_secs(300);
    (
        ok,
        format!(
            "attributed {att:.4} (>= 0.95), random_vectors {rnd:.4}, random_faces {:.4}, t={:.1}s",
            frac("random_faces"),
            took.as_secs_f64()
        ),
    )
}

fn attack_config(eta: f64, mode: ExperimentMode, use_correction: bool) -> ExperimentConfig {
    ExperimentConfig {
        seed: 1,
        output_dir: PathBuf::new(),
        world: WorldConfig::new(64, 128, 24, 0.3, eta, 0),
        attack: AttackConfig {
            mode,
            use_correction,
            k: 24,
            attribute: "f".into(),
            n_targets: 500,
            population: 1000,
            local_model: 0,
            fit_data: FitData::BasisPairs,
            held_out_pairs: 400,
            centered_pca: true,
        },
        thresholds: ssal::config::default_thresholds(),
        calibration_pairs: 1000,
        store_images: false,
    }
}

fn imr(cfg: &ExperimentConfig) -> f64 {
    compute_imr(&run_experiment(cfg).unwrap().results, "best_accuracy").unwrap()
}

fn criterion_4_correction_matrix_benefit() -> (bool, String) {
    let with_r = imr(&attack_config(0.08, ExperimentMode::BlackBox, true));
    let without_r = imr(&attack_config(0.08, ExperimentMode::BlackBox, false));
    let ok = with_r - without_r >= 0.0;
    (ok, format!("eta=0.08, 500 targets, best_accuracy: IMR with R {with_r:.3}, without R {without_r:.3}, delta {:+.3}", with_r - without_r))
}

fn criterion_5_black_box_beats_transfer() -> (bool, String) {
    let mut ok = true;
    let mut parts = vec![];
    for eta in [0.05, 0.1] {
        let bb = imr(&attack_config(eta, ExperimentMode::BlackBox, true));
        let tr = imr(&attack_config(eta, ExperimentMode::Transfer, true));
        ok &= bb >= tr;
        parts.push(format!("eta={eta}: black-box {bb:.3} vs transfer {tr:.3}"));
    }
    (ok, parts.join("; "))
}

fn criterion_6_orthogonal_face_set() -> (bool, String) {
    let w = build_world(&WorldConfig::new(64, 128, 24, 0.3, 0.0, 6)).unwrap();
    let mut conv_ok = true;
    let mut parts = vec![];
    for k in [2, 8, 16, 32] {
        let res = generate_ofs(&w, &w.models[0], &OfsConfig::new(k, 0)).unwrap();
        conv_ok &= res.gram_offdiag_max <= 1e-3 && res.iterations <= 100;
        parts.push(format!(
            "k={k}: offdiag {:.2e} after {} iters",
            res.gram_offdiag_max, res.iterations
        ));
    }

    let mut worst = 0.0f64;
    for (i, eta) in [(0u64, 0.0), (1, 0.1)] {
        let small = build_world(&WorldConfig::new(16, 32, 4, 0.3, eta, 60 + i)).unwrap();
        let objective = OfsObjective::new(&small, &small.models[0]).unwrap();
        let mut r = rng::stream(i, "c6/points");
        for _ in 0..10 {
            let pts = sample_uniform_sphere(16, 6, &mut r).unwrap();
            let z = DMatrix::from_fn(6, 16, |a, b| pts[a].as_slice()[b]);
            worst = worst.max(gradient_check(&objective, &z, 1e-6).unwrap());
        }
    }
    let grad_ok = worst <= 1e-4;
    let ok = conv_ok && grad_ok;
    (
        ok,
        format!(
            "d=64 eta=0: {}; gradient rel err {worst:.2e} (<= 1e-4) at d=16",
            parts.join(", ")
        ),
    )
}

fn criterion_7_sigmoid_calibration() -> (bool, String) {
    let truth = SigmoidParams::new(1.0, 12.0, 0.3, 0.0).unwrap();
    let pairs: Vec<(f64, f64)> = (0..201)
        .map(|i| {
            let s = -1.0 + i as f64 * 0.01;
            (s, truth.eval(s))
        })
        .collect();
    let fit = fit_sigmoid(&pairs, 0).unwrap();
    let sup = (0..=1000)
        .map(|i| -1.0 + i as f64 * 0.002)
        .map(|s| (fit.params.eval(s) - truth.eval(s)).abs())
        .fold(0.0, f64::max);
    let round_trip = (0..=198)
        .map(|i| -0.99 + i as f64 * 0.01)
        .map(|s| (truth.inverse(truth.eval(s)) - s).abs())
        .fold(0.0, f64::max);
    let total = [
        f64::NEG_INFINITY,
        -1.0,
        0.0,
        1.0,
        2.0,
        f64::INFINITY,
        f64::NAN,
    ]
    .iter()
    .all(|&c| {
        let (s, _) = sigmoid_inverse_checked(&fit.params, c);
        s.is_finite() && (-1.0..=1.0).contains(&s)
    });
    let ok = sup <= 1e-3 && round_trip <= 1e-6 && total;
    (ok, format!("fit sup error {sup:.2e} (<= 1e-3), round trip {round_trip:.2e} (<= 1e-6), inverse total: {total}"))
}

fn criterion_8_property_substitutes() -> (bool, String) {
    let mut r = rng::stream(8, "c8");
    let basis = SubsphereBasis::random(32, 8, &mut r).unwrap();
    let idempotent = sample_uniform_sphere(32, 200, &mut r)
        .unwrap()
        .iter()
        .all(|x| {
            let p = project_to_subsphere(x, &basis).unwrap();
            let pp = project_to_subsphere(&p, &basis).unwrap();
            (p.as_vector() - pp.as_vector()).amax() <= 1e-12
        });

    let mut cfg = attack_config(0.05, ExperimentMode::BlackBox, true);
    cfg.world = WorldConfig::new(32, 64, 8, 0.3, 0.05, 0);
    cfg.attack.k = 8;
    cfg.attack.n_targets = 50;
    cfg.attack.population = 300;
    cfg.store_images = true;
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    let deterministic = a.results == b.results && a.summaries == b.summaries;
    let consistent = a.summaries.iter().all(|s| s.asr <= s.imr);
    let ok = idempotent && deterministic && consistent;
    (ok, format!(
            "headline numbers need real networks; substitutes: projection idempotent {idempotent}, full run deterministic {deterministic}, ASR <= IMR {consistent}"
        ))
}
