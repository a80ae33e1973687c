//! Softmax attention over hidden states with one learned scoring vector.

/// Max-subtracted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Scores `s_t = w . h_t + b`, weights `softmax(s)`, context `sum_t a_t h_t`.
///
/// Returns `(context, weights)`. `hidden` must be nonempty.
pub fn attention_pool(hidden: &[&[f64]], w: &[f64], b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(!hidden.is_empty(), "attention over an empty sequence");
    let scores: Vec<f64> = hidden
        .iter()
        .map(|h| b + h.iter().zip(w).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    let weights = softmax(&scores);
    let mut context = vec![0.0; hidden[0].len()];
    for (h, a) in hidden.iter().zip(&weights) {
        for (c, x) in context.iter_mut().zip(h.iter()) {
            *c += a * x;
        }
    }
    (context, weights)
}

pub(crate) struct AttentionBackward {
    pub d_hidden: Vec<Vec<f64>>,
    pub d_w: Vec<f64>,
    pub d_b: f64,
}

pub(crate) fn attention_backward(
    hidden: &[&[f64]],
    w: &[f64],
    weights: &[f64],
    d_context: &[f64],
) -> AttentionBackward {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let d_alpha: Vec<f64> = hidden.iter().map(|h| dot(h, d_context)).collect();
    let mean = dot(weights, &d_alpha);
    let mut d_w = vec![0.0; w.len()];
    let mut d_b = 0.0;
    let d_hidden = hidden
        .iter()
        .zip(weights)
        .zip(&d_alpha)
        .map(|((h, &a), &da)| {
            let ds = a * (da - mean);
            d_b += ds;
            for (g, x) in d_w.iter_mut().zip(h.iter()) {
                *g += ds * x;
            }
            d_context
                .iter()
                .zip(w)
                .map(|(dc, wj)| a * dc + ds * wj)
                .collect()
        })
        .collect();
    AttentionBackward { d_hidden, d_w, d_b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_states_get_uniform_weights() {
        let h = [0.2, -0.4, 0.9];
        let seq: Vec<&[f64]> = vec![&h; 4];
        let (ctx, a) = attention_pool(&seq, &[1.0, 2.0, 3.0], 0.7);
        for v in &a {
            assert!((v - 0.25).abs() < 1e-15);
        }
        for (c, x) in ctx.iter().zip(&h) {
            assert!((c - x).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_is_identity() {
        let h = [0.3, -0.1];
        let (ctx, a) = attention_pool(&[&h], &[5.0, -2.0], 1.0);
        assert_eq!(a, vec![1.0]);
        assert_eq!(ctx, h.to_vec());
    }

    #[test]
    fn log_scores_by_hand() {
        let a = softmax(&[1f64.ln(), 3f64.ln()]);
        assert!((a[0] - 0.25).abs() < 1e-15);
        assert!((a[1] - 0.75).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn weights_are_a_distribution(scores in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let a = softmax(&scores);
            prop_assert!(a.iter().all(|&v| v >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn raising_a_score_shifts_weight_to_it(
            scores in prop::collection::vec(-5.0f64..5.0, 2..8),
            pick in any::<prop::sample::Index>(),
            bump in 0.01f64..5.0,
        ) {
            let k = pick.index(scores.len());
            let before = softmax(&scores);
            let mut raised = scores.clone();
            raised[k] += bump;
            let after = softmax(&raised);
            prop_assert!(after[k] > before[k]);
            for j in (0..scores.len()).filter(|&j| j != k) {
                prop_assert!(after[j] < before[j]);
            }
        }
    }
}
