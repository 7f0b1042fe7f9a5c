//! Analytic gradients of the full transformer against central differences.

use complab::distill::{forward_logits, grad_check, Example, ModelObjective, LossSpec, Objective, Params};
use complab::model::{Model, ModelConfig};

fn tiny() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size: 11,
        context_len: 6,
    }
}

/// Init weights are too small to exercise the nonlinearities, so every
/// parameter gets a seeded nudge.
fn perturbed(seed: u64) -> Params {
    let p = Params::from_model(&Model::init(tiny(), seed).unwrap());
    let mut s = seed ^ 0x9e37_79b9_7f4a_7c15;
    let flat: Vec<f64> = p
        .flatten()
        .into_iter()
        .map(|v| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            v * 10.0 + ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.6
        })
        .collect();
    p.with_flat(&flat).unwrap()
}

fn batch(teacher: Option<&Params>) -> Vec<Example> {
    [[1u32, 4, 9, 2, 7, 3], [10, 0, 5, 5, 8, 6]]
        .iter()
        .map(|seq| Example {
            tokens: seq[..5].to_vec(),
            targets: seq[1..].to_vec(),
            teacher_logits: teacher.map(|t| forward_logits(t, &seq[..5]).unwrap()),
        })
        .collect()
}

fn check(params: &Params, batch: &[Example], spec: LossSpec) {
    let obj = ModelObjective { params, batch, spec };
    let report = grad_check(&obj, 1e-5, 40, 17).unwrap();
    assert_eq!(report.classes.len(), 4);
    for c in &report.classes {
        assert!(c.max_rel_error < 1e-4, "{spec:?} {}: {}", c.class, c.max_rel_error);
    }
}

#[test]
fn cross_entropy_gradient() {
    check(&perturbed(1), &batch(None), LossSpec::cross_entropy());
}

#[test]
fn forward_kld_gradient_with_mix() {
    let teacher = perturbed(9);
    let spec = LossSpec {
        objective: Objective::ForwardKld { temperature: 2.0 },
        ce_mix_lambda: 0.3,
    };
    check(&perturbed(2), &batch(Some(&teacher)), spec);
}

#[test]
fn reverse_kld_gradient() {
    let teacher = perturbed(9);
    let spec = LossSpec {
        objective: Objective::ReverseKld { temperature: 1.5 },
        ce_mix_lambda: 0.0,
    };
    check(&perturbed(3), &batch(Some(&teacher)), spec);
}

#[test]
fn gradient_with_masked_head() {
    let mut p = perturbed(4);
    p.head_mask[0][1] = true;
    check(&p, &batch(None), LossSpec::cross_entropy());
}
