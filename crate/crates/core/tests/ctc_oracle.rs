mod common;

use common::*;
use proptest::prelude::*;
use ssl_ensemble::ctc::{ctc_brute_force, ctc_loss_grad, log_softmax};
use ssl_ensemble::tensor::Mat;

#[test]
fn matches_path_enumeration() {
    crit_ctc_oracle().unwrap();
}

#[test]
fn probabilities_normalize() {
    crit_ctc_normalization().unwrap();
}

#[test]
fn library_brute_force_agrees_with_oracle() {
    let mut s = stream(40);
    for _ in 0..30 {
        let logits = randn(&mut s, 4, 3, 1.0);
        let probs = log_softmax(&logits).map(f64::exp);
        let a = ctc_brute_force(&probs, &[1, 2]).unwrap();
        assert!((a - ctc_paths_prob(&logits, &[1, 2])).abs() < 1e-12);
    }
}

fn case() -> impl Strategy<Value = (usize, usize, Vec<usize>, Vec<f64>)> {
    (1usize..=6, 2usize..=4).prop_flat_map(|(t, v)| {
        (
            Just(t),
            Just(v),
            prop::collection::vec(1..v, 0..=3usize),
            prop::collection::vec(-4.0f64..4.0, t * v),
        )
    })
}

proptest! {
    #[test]
    fn loss_is_nonnegative_and_gradient_rows_sum_to_zero((t, v, target, data) in case()) {
        let logits = Mat::from_vec(t, v, data).unwrap();
        match ctc_loss_grad(&logits, &target) {
            Ok(r) => {
                prop_assert!(r.loss >= -1e-12);
                for row in 0..t {
                    let sum: f64 = r.grad_logits.row(row).iter().sum();
                    prop_assert!(sum.abs() < 1e-9);
                }
            }
            Err(_) => {
                let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
                prop_assert!(target.len() + repeats > t);
            }
        }
    }

    #[test]
    fn loss_is_shift_invariant_per_frame((t, v, target, data) in case(), shift in -50.0f64..50.0) {
        let logits = Mat::from_vec(t, v, data).unwrap();
        if let Ok(a) = ctc_loss_grad(&logits, &target) {
            let b = ctc_loss_grad(&logits.map(|x| x + shift), &target).unwrap();
            prop_assert!((a.loss - b.loss).abs() < 1e-9 * (1.0 + a.loss.abs()));
        }
    }
}
