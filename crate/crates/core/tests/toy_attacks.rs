use std::path::Path;

use serde::{Deserialize, Serialize};

use imprint_core::attacks::{boundary_attack, run_attack, AttackSpec};
use imprint_core::harness::{prepare, ExperimentConfig, Workspace};

#[derive(Debug, Serialize, Deserialize)]
struct Baseline {
    fgsm_success: f64,
    pgd_success: f64,
    boundary_min_reduction: f64,
}

fn workspace() -> Workspace {
    let config: ExperimentConfig = "
dataset.id = blobs-2
dataset.train = 600
dataset.val = 200
dataset.test = 300
model.spec = task=classification;input=8;dense(8,16);relu;dense(16,2)
train.epochs = 20
train.optimizer = sgd
train.lr = 0.1
seeds.data = 11
seeds.train = 11
"
    .parse()
    .unwrap();
    prepare(&config, None).unwrap()
}

fn success_rate(ws: &Workspace, attack: &AttackSpec) -> f64 {
    let sources = ws.correct_test_examples().unwrap();
    let set = &ws.checkpoints;
    let hits = sources
        .iter()
        .take(200)
        .filter(|ex| {
            run_attack(set.spec(), set.target_params(), &ex.x, &ex.target, &attack.clone().with_seed(ex.id as u64))
                .unwrap()
                .success
        })
        .count();
    hits as f64 / sources.len().min(200) as f64
}

fn compare(name: &str, measured: Baseline) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/baselines").join(name);
    let Ok(text) = std::fs::read_to_string(&path) else {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&measured).unwrap() + "\n").unwrap();
        return;
    };
    let base: Baseline = serde_json::from_str(&text).unwrap();
    assert!((measured.fgsm_success - base.fgsm_success).abs() <= 0.02, "{measured:?} vs {base:?}");
    assert!((measured.pgd_success - base.pgd_success).abs() <= 0.02, "{measured:?} vs {base:?}");
    assert!(measured.boundary_min_reduction >= base.boundary_min_reduction - 0.02, "{measured:?} vs {base:?}");
}

#[test]
fn iterative_attacks_beat_one_step_and_boundary_closes_in() {
    let ws = workspace();
    let eps = 0.1;
    let fgsm = success_rate(&ws, &AttackSpec::fgsm(eps));
    let pgd = success_rate(&ws, &AttackSpec::pgd(eps, 10));
    assert!(pgd > fgsm, "pgd {pgd} vs fgsm {fgsm}");

    let set = &ws.checkpoints;
    let mut min_reduction = f64::INFINITY;
    for ex in ws.correct_test_examples().unwrap().iter().take(10) {
        let out = boundary_attack(set.spec(), set.target_params(), &ex.x, &ex.target, 2000, ex.id as u64).unwrap();
        assert!(out.outcome.success);
        let (first, last) = (out.distances[0], *out.distances.last().unwrap());
        min_reduction = min_reduction.min(1.0 - last / first);
    }
    assert!(min_reduction >= 0.5, "boundary reduction {min_reduction}");

    compare(
        "toy_attacks.json",
        Baseline {
            fgsm_success: fgsm,
            pgd_success: pgd,
            boundary_min_reduction: min_reduction,
        },
    );
}
