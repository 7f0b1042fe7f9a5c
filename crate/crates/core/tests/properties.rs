use complab::compress::{prune_2_4, quantize_tensor, HeadConcentrationReport, QuantBits, THRESHOLD_80, THRESHOLD_90};
use complab::distill::kld_grad;
use complab::meter::counter_delta;
use complab::model::{Matrix, Model, ModelConfig};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-50.0f32..50.0, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

proptest! {
    #[test]
    fn quantization_error_within_half_step(m in matrix(5, 12), four in any::<bool>(), zero_row in 0usize..5) {
        let mut m = m;
        for c in 0..m.cols {
            m.data[zero_row * m.cols + c] = 0.0;
        }
        let bits = if four { QuantBits::Four } else { QuantBits::Eight };
        let q = quantize_tensor(&m, bits).unwrap();
        let back = q.dequantize();
        for r in 0..m.rows {
            let s = q.scales[r] as f64;
            for c in 0..m.cols {
                let err = (back.get(r, c) as f64 - m.get(r, c) as f64).abs();
                // f32 storage of the dequantized value adds a few ulps.
                prop_assert!(err <= s / 2.0 * (1.0 + 1e-6) + 1e-5, "row {r}: {err} vs scale {s}");
            }
        }
        prop_assert!(back.row(zero_row).iter().all(|&v| v == 0.0));
        prop_assert!(q.codes.iter().all(|&c| c.abs() <= bits.qmax()));
    }

    #[test]
    fn two_four_keeps_the_heaviest_pair(m in matrix(3, 8)) {
        let p = prune_2_4(&m).unwrap();
        for (orig, got) in m.data.chunks(4).zip(p.data.chunks(4)) {
            let nonzero = got.iter().filter(|v| **v != 0.0).count();
            prop_assert!(nonzero <= 2);
            for i in 0..4 {
                prop_assert!(got[i] == 0.0 || got[i] == orig[i]);
            }
            let best = (0..4)
                .flat_map(|a| (a + 1..4).map(move |b| (a, b)))
                .map(|(a, b)| orig[a].abs() + orig[b].abs())
                .fold(0.0f32, f32::max);
            let retained: f32 = got.iter().map(|v| v.abs()).sum();
            prop_assert_eq!(retained, best, "{:?} -> {:?}", orig, got);
        }
        prop_assert_eq!(prune_2_4(&p).unwrap(), p);
    }

    #[test]
    fn kld_is_nonnegative_and_shift_invariant(
        t in prop::collection::vec(-6.0f64..6.0, 12),
        s in prop::collection::vec(-6.0f64..6.0, 12),
        shift in -20.0f64..20.0,
        temp in 0.5f64..4.0,
        reverse in any::<bool>(),
    ) {
        let (loss, _) = kld_grad(&t, &s, 4, temp, reverse).unwrap();
        prop_assert!(loss >= -1e-12);
        let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
        let (again, _) = kld_grad(&t, &shifted, 4, temp, reverse).unwrap();
        prop_assert!((loss - again).abs() <= 1e-9 * loss.max(1.0));
        let (same, grad) = kld_grad(&t, &t, 4, temp, reverse).unwrap();
        prop_assert!(same.abs() < 1e-12);
        prop_assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn counter_wrap(wrap in 2u64..u64::MAX / 2, a in any::<u64>(), b in any::<u64>()) {
        let (prev, cur) = (a % wrap, b % wrap);
        let d = counter_delta(prev, cur, wrap).unwrap();
        prop_assert!(d < wrap);
        prop_assert_eq!((prev + d) % wrap, cur);
    }

    #[test]
    fn attention_rows_are_causal_distributions(seed in 0u64..1000, len in 1usize..=12) {
        let cfg = ModelConfig { n_layers: 2, n_heads: 2, d_model: 8, d_ff: 16, vocab_size: 20, context_len: 12 };
        let m = Model::init(cfg, seed).unwrap();
        let tokens: Vec<u32> = (0..len as u32).map(|i| (i * 7 + seed as u32) % 20).collect();
        let trace = m.forward(&tokens).unwrap().attention;
        for l in 0..2 {
            for h in 0..2 {
                let a = trace.head(l, h);
                for i in 0..len {
                    let row = a.row(i);
                    prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
                    prop_assert!(row[i + 1..].iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn stricter_threshold_selects_a_subset(scores in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 4), 1..4)) {
        let r = HeadConcentrationReport::from_scores(&scores, 1).unwrap();
        let strict = r.selected(THRESHOLD_90);
        let loose = r.selected(THRESHOLD_80);
        prop_assert!(strict.iter().all(|h| loose.contains(h)));
    }
}

#[test]
fn reverse_kld_prefers_a_single_mode() {
    // Teacher splits its mass over two modes; the student commits to one.
    let teacher: Vec<f64> = [0.49f64, 0.02, 0.49].iter().map(|p| p.ln()).collect();
    let student: Vec<f64> = [0.96f64, 0.02, 0.02].iter().map(|p| p.ln()).collect();
    let (fwd, _) = kld_grad(&teacher, &student, 3, 1.0, false).unwrap();
    let (rev, _) = kld_grad(&teacher, &student, 3, 1.0, true).unwrap();
    assert!(rev < fwd, "reverse {rev} forward {fwd}");
    let p = [0.49f64, 0.02, 0.49];
    let q = [0.96f64, 0.02, 0.02];
    let oracle_fwd: f64 = p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum();
    let oracle_rev: f64 = p.iter().zip(&q).map(|(p, q)| q * (q / p).ln()).sum();
    assert!((fwd - oracle_fwd).abs() < 1e-12 && (rev - oracle_rev).abs() < 1e-12);
}
