//! Oracles shared by the integration tests and the acceptance harness.

#![allow(dead_code)]

use fairbatch::dataset::{gen_synthetic, Dataset, GroupIndex};
use fairbatch::fairbatch::{
    draw_epoch, init_lambda, sampling_distribution, CriterionKind, FairnessCriterion, LambdaState,
};
use fairbatch::metrics::{dp_from_predictions, ed_from_predictions, eo_from_predictions};
use fairbatch::model::{batch_gradient, example_gradient, Loss, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BATCH: usize = 4;

/// Per-example probabilities computed directly from the set probabilities.
fn reference_probs(d: &Dataset, set_prob: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut size = [[0usize; 2]; 2];
    for i in 0..d.len() {
        size[d.label(i)][d.sensitive(i)] += 1;
    }
    (0..d.len()).map(|i| set_prob(d.label(i), d.sensitive(i)) / size[d.label(i)][d.sensitive(i)] as f64).collect()
}

fn random_lambda(kind: CriterionKind, gi: &GroupIndex, rng: &mut ChaCha8Rng) -> (LambdaState, [[f64; 2]; 2]) {
    let mut ls = init_lambda(&FairnessCriterion::new(kind), gi, 0.01).unwrap();
    let m = gi.total() as f64;
    let share = |y: usize, z: usize| gi.count(y, z) as f64 / m;
    let mut p = [[share(0, 0), share(0, 1)], [share(1, 0), share(1, 1)]];
    match kind {
        CriterionKind::EqualOpportunity => {
            let cap = gi.label_count(1) as f64 / m;
            let l = rng.random::<f64>() * cap;
            ls.lambda = vec![l];
            p[1] = [l, cap - l];
        }
        CriterionKind::EqualizedOdds => {
            let caps = [gi.label_count(0) as f64 / m, gi.label_count(1) as f64 / m];
            let l: Vec<f64> = caps.iter().map(|c| rng.random::<f64>() * c).collect();
            p = [[l[0], caps[0] - l[0]], [l[1], caps[1] - l[1]]];
            ls.lambda = l;
        }
        CriterionKind::DemographicParity => {
            let caps = [gi.group_count(0) as f64 / m, gi.group_count(1) as f64 / m];
            let l: Vec<f64> = caps.iter().map(|c| rng.random::<f64>() * c).collect();
            p = [[l[0], l[1]], [caps[0] - l[0], caps[1] - l[1]]];
            ls.lambda = l;
        }
    }
    (ls, p)
}

/// Draws `draws` batches for each of `settings` random λ and compares the
/// mean batch gradient with `Σ p_i ∇ℓ_i` coordinate by coordinate. Returns
/// the largest deviation in standard errors.
pub fn unbiasedness(seed: u64, settings: usize, draws: usize) -> Result<f64, String> {
    let d = gen_synthetic(120, 5).map_err(|e| e.to_string())?;
    let gi = GroupIndex::build(&d);
    let params = ModelParams::binary(vec![0.4, -0.3], 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [CriterionKind::EqualOpportunity, CriterionKind::EqualizedOdds, CriterionKind::DemographicParity];
    let mut worst: f64 = 0.0;

    for setting in 0..settings {
        let kind = kinds[setting % 3];
        let (ls, p) = random_lambda(kind, &gi, &mut rng);
        let sd = sampling_distribution(&ls, &FairnessCriterion::new(kind), &gi).map_err(|e| e.to_string())?;
        let probs = reference_probs(&d, |y, z| p[y][z]);
        for (a, b) in sd.example_probs().iter().zip(&probs) {
            if (a - b).abs() > 1e-12 {
                return Err(format!("{kind} setting {setting}: example probability {a} vs {b}"));
            }
        }

        let mut expected = [0.0; 3];
        for (i, &pi) in probs.iter().enumerate() {
            let g = example_gradient(&params, d.row(i), d.label(i), Loss::CrossEntropy).unwrap();
            for (e, v) in expected.iter_mut().zip(g.values()) {
                *e += pi * v;
            }
        }

        let plan = draw_epoch(&sd, BATCH, draws, &mut rng).map_err(|e| e.to_string())?;
        let (mut sum, mut sum_sq) = ([0.0; 3], [0.0; 3]);
        for batch in &plan.batches {
            let g = batch_gradient(&params, batch, &d, Loss::CrossEntropy).unwrap();
            for (j, v) in g.values().enumerate() {
                sum[j] += v;
                sum_sq[j] += v * v;
            }
        }
        let n = draws as f64;
        for j in 0..3 {
            let mean = sum[j] / n;
            let var = (sum_sq[j] / n - mean * mean) * n / (n - 1.0);
            let z = (mean - expected[j]).abs() / (var / n).sqrt();
            if z > 3.0 {
                return Err(format!(
                    "{kind} setting {setting} coordinate {j}: mean {mean}, expected {}, {z:.2} standard errors",
                    expected[j]
                ));
            }
            worst = worst.max(z);
        }
    }
    Ok(worst)
}

struct Case {
    labels: Vec<usize>,
    groups: Vec<usize>,
    preds: Vec<usize>,
    n_z: usize,
}

/// `Pr(ŷ = class | rows selected by keep)`, or `None` when nothing is selected.
fn rate(c: &Case, class: usize, keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for i in 0..c.labels.len() {
        if keep(i) {
            total += 1;
            if c.preds[i] == class {
                hit += 1;
            }
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

fn oracle_eo(c: &Case) -> Option<f64> {
    let overall = rate(c, 1, |i| c.labels[i] == 1)?;
    let mut worst = 0.0f64;
    for z in 0..c.n_z {
        worst = worst.max((rate(c, 1, |i| c.labels[i] == 1 && c.groups[i] == z)? - overall).abs());
    }
    Some(worst)
}

fn oracle_ed(c: &Case) -> Option<f64> {
    let mut worst = 0.0f64;
    for y in 0..2 {
        for class in 0..2 {
            let overall = rate(c, class, |i| c.labels[i] == y)?;
            for z in 0..c.n_z {
                worst = worst.max((rate(c, class, |i| c.labels[i] == y && c.groups[i] == z)? - overall).abs());
            }
        }
    }
    Some(worst)
}

fn oracle_dp(c: &Case) -> Option<f64> {
    let overall = rate(c, 1, |_| true)?;
    let mut worst = 0.0f64;
    for z in 0..c.n_z {
        worst = worst.max((rate(c, 1, |i| c.groups[i] == z)? - overall).abs());
    }
    Some(worst)
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(1..=50);
    let n_z = rng.random_range(2..=3);
    let positive_rate: f64 = rng.random();
    Case {
        labels: (0..n).map(|_| usize::from(rng.random_bool(positive_rate))).collect(),
        groups: (0..n).map(|_| rng.random_range(0..n_z)).collect(),
        preds: (0..n).map(|_| rng.random_range(0..2)).collect(),
        n_z,
    }
}

/// Compares the three disparity functions with the oracles on `cases`
/// random datasets. Returns how many cases had every disparity defined.
pub fn metric_oracle_agreement(seed: u64, cases: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fully_defined = 0;
    for case in 0..cases {
        let c = random_case(&mut rng);
        let n = c.labels.len();
        let d = Dataset::new(vec!["x".into()], vec![0.0; n], c.labels.clone(), c.groups.clone(), 2, c.n_z)
            .map_err(|e| e.to_string())?;
        let gi = GroupIndex::build(&d);
        let results = [
            ("eo", eo_from_predictions(&c.preds, &gi).ok(), oracle_eo(&c)),
            ("ed", ed_from_predictions(&c.preds, &gi).ok(), oracle_ed(&c)),
            ("dp", dp_from_predictions(&c.preds, &gi).ok(), oracle_dp(&c)),
        ];
        for (name, got, want) in results {
            match (got, want) {
                (Some(g), Some(w)) if (g - w).abs() <= 1e-12 => {}
                (None, None) => {}
                _ => return Err(format!("{name} case {case}: got {got:?}, oracle {want:?}")),
            }
        }
        fully_defined += usize::from(results.iter().all(|r| r.2.is_some()));
    }
    Ok(fully_defined)
}
