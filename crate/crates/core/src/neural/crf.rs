//! Linear-chain conditional random field: sequence scoring, log-partition,
//! Viterbi decoding, and the marginal-minus-gold gradients used in training.
//!
//! For `K` labels the transition table is `(K+2) x (K+2)`; two synthetic
//! states are appended: `START = K` (its row scores beginning on a label)
//! and `STOP = K + 1` (its column scores ending on a label). Transitions
//! *into* START and *out of* STOP are structurally impossible: those entries
//! are never read, never written, and receive zero gradient, so they stay
//! at whatever value the table was initialized with (zero in this crate).
//!
//! All recurrences run in log space with the usual max-shifted
//! log-sum-exp, so moderately large scores cannot overflow.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Index of the synthetic start state given `num_labels` real labels.
pub fn start_state(num_labels: usize) -> usize {
    num_labels
}

/// Index of the synthetic stop state given `num_labels` real labels.
pub fn stop_state(num_labels: usize) -> usize {
    num_labels + 1
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Validates shapes and returns the label count `K`.
fn check_inputs(emissions: &Array2<f64>, transitions: &Array2<f64>) -> Result<usize> {
    let (n, k) = (emissions.nrows(), emissions.ncols());
    if n == 0 || k == 0 {
        return Err(Error::Argument(
            "emission matrix must have at least one position and one label".into(),
        ));
    }
    if transitions.nrows() != k + 2 || transitions.ncols() != k + 2 {
        return Err(Error::Argument(format!(
            "transition table must be {}x{} for {} labels, got {}x{}",
            k + 2,
            k + 2,
            k,
            transitions.nrows(),
            transitions.ncols()
        )));
    }
    Ok(k)
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "label path has length {}, sequence has {} positions",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Argument(format!(
            "label index {bad} out of range for {k} labels"
        )));
    }
    Ok(())
}

/// Unnormalized log score of one label path:
/// `T[START][y1] + sum_t e_t[y_t] + sum_t T[y_(t-1)][y_t] + T[y_n][STOP]`.
pub fn path_score(
    emissions: &Array2<f64>,
    transitions: &Array2<f64>,
    labels: &[usize],
) -> Result<f64> {
    let k = check_inputs(emissions, transitions)?;
    check_labels(labels, emissions.nrows(), k)?;
    let (start, stop) = (start_state(k), stop_state(k));
    let mut score = transitions[[start, labels[0]]];
    for (t, &label) in labels.iter().enumerate() {
        score += emissions[[t, label]];
        if t > 0 {
            score += transitions[[labels[t - 1], label]];
        }
    }
    score += transitions[[labels[labels.len() - 1], stop]];
    Ok(score)
}

/// Forward table: `alpha[t][j]` = log sum of scores of all prefixes ending
/// in label `j` at position `t` (emission at `t` included).
fn forward_table(emissions: &Array2<f64>, transitions: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = emissions.nrows();
    let start = start_state(k);
    let mut alpha = Array2::zeros((n, k));
    for j in 0..k {
        alpha[[0, j]] = transitions[[start, j]] + emissions[[0, j]];
    }
    let mut scratch = vec![0.0; k];
    for t in 1..n {
        for j in 0..k {
            for (i, slot) in scratch.iter_mut().enumerate() {
                *slot = alpha[[t - 1, i]] + transitions[[i, j]];
            }
            alpha[[t, j]] = emissions[[t, j]] + log_sum_exp(&scratch);
        }
    }
    alpha
}

/// Backward table: `beta[t][i]` = log sum of scores of all suffixes starting
/// after position `t` in label `i` (emission at `t` excluded, final STOP
/// transition included).
fn backward_table(emissions: &Array2<f64>, transitions: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = emissions.nrows();
    let stop = stop_state(k);
    let mut beta = Array2::zeros((n, k));
    for i in 0..k {
        beta[[n - 1, i]] = transitions[[i, stop]];
    }
    let mut scratch = vec![0.0; k];
    for t in (0..n - 1).rev() {
        for i in 0..k {
            for (j, slot) in scratch.iter_mut().enumerate() {
                *slot = transitions[[i, j]] + emissions[[t + 1, j]] + beta[[t + 1, j]];
            }
            beta[[t, i]] = log_sum_exp(&scratch);
        }
    }
    beta
}

/// Log of the partition function (sum over all `K^n` label paths).
pub fn log_partition(emissions: &Array2<f64>, transitions: &Array2<f64>) -> Result<f64> {
    let k = check_inputs(emissions, transitions)?;
    let alpha = forward_table(emissions, transitions, k);
    let n = emissions.nrows();
    let stop = stop_state(k);
    let finals: Vec<f64> = (0..k).map(|j| alpha[[n - 1, j]] + transitions[[j, stop]]).collect();
    Ok(log_sum_exp(&finals))
}

/// Log-likelihood of a label path: `path_score - log_partition`. Always
/// non-positive up to rounding.
pub fn log_likelihood(
    emissions: &Array2<f64>,
    transitions: &Array2<f64>,
    labels: &[usize],
) -> Result<f64> {
    Ok(path_score(emissions, transitions, labels)? - log_partition(emissions, transitions)?)
}

/// Highest-scoring label path. Exact ties are broken toward the lowest
/// label index, at every step and at the final position.
pub fn viterbi(emissions: &Array2<f64>, transitions: &Array2<f64>) -> Result<Vec<usize>> {
    let k = check_inputs(emissions, transitions)?;
    let n = emissions.nrows();
    let (start, stop) = (start_state(k), stop_state(k));

    let mut score = Array2::zeros((n, k));
    let mut back = vec![vec![0usize; k]; n];
    for j in 0..k {
        score[[0, j]] = transitions[[start, j]] + emissions[[0, j]];
    }
    for t in 1..n {
        for j in 0..k {
            let mut best_i = 0;
            let mut best = score[[t - 1, 0]] + transitions[[0, j]];
            for i in 1..k {
                let candidate = score[[t - 1, i]] + transitions[[i, j]];
                if candidate > best {
                    best = candidate;
                    best_i = i;
                }
            }
            score[[t, j]] = best + emissions[[t, j]];
            back[t][j] = best_i;
        }
    }

    let mut best_j = 0;
    let mut best = score[[n - 1, 0]] + transitions[[0, stop]];
    for j in 1..k {
        let candidate = score[[n - 1, j]] + transitions[[j, stop]];
        if candidate > best {
            best = candidate;
            best_j = j;
        }
    }

    let mut path = vec![0usize; n];
    path[n - 1] = best_j;
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok(path)
}

/// Gradients of the negative log-likelihood with respect to the emission
/// and transition scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradients {
    /// Same shape as the emissions: `P_t[j] - 1[gold_t = j]`.
    pub d_emissions: Array2<f64>,
    /// Same shape as the transition table: pairwise marginals minus gold
    /// transition counts. Entries into START and out of STOP stay zero.
    pub d_transitions: Array2<f64>,
}

/// Negative log-likelihood of `gold` and its gradients, from one
/// forward-backward sweep.
pub fn posterior_gradients(
    emissions: &Array2<f64>,
    transitions: &Array2<f64>,
    gold: &[usize],
) -> Result<(f64, CrfGradients)> {
    let k = check_inputs(emissions, transitions)?;
    let n = emissions.nrows();
    check_labels(gold, n, k)?;
    let (start, stop) = (start_state(k), stop_state(k));

    let alpha = forward_table(emissions, transitions, k);
    let beta = backward_table(emissions, transitions, k);
    let finals: Vec<f64> = (0..k).map(|j| alpha[[n - 1, j]] + transitions[[j, stop]]).collect();
    let log_z = log_sum_exp(&finals);
    let score = path_score(emissions, transitions, gold)?;
    let nll = log_z - score;

    let mut d_emissions = Array2::zeros((n, k));
    for t in 0..n {
        for j in 0..k {
            let marginal = (alpha[[t, j]] + beta[[t, j]] - log_z).exp();
            d_emissions[[t, j]] = marginal - f64::from(u8::from(gold[t] == j));
        }
    }

    let mut d_transitions = Array2::zeros((k + 2, k + 2));
    for j in 0..k {
        let first = (alpha[[0, j]] + beta[[0, j]] - log_z).exp();
        d_transitions[[start, j]] = first - f64::from(u8::from(gold[0] == j));
        let last = (alpha[[n - 1, j]] + beta[[n - 1, j]] - log_z).exp();
        d_transitions[[j, stop]] = last - f64::from(u8::from(gold[n - 1] == j));
    }
    for t in 1..n {
        for i in 0..k {
            for j in 0..k {
                let pair = (alpha[[t - 1, i]]
                    + transitions[[i, j]]
                    + emissions[[t, j]]
                    + beta[[t, j]]
                    - log_z)
                    .exp();
                d_transitions[[i, j]] += pair;
            }
        }
        d_transitions[[gold[t - 1], gold[t]]] -= 1.0;
    }

    Ok((
        nll,
        CrfGradients {
            d_emissions,
            d_transitions,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// All `K^n` label paths, in ascending lexicographic order.
    fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut paths = vec![Vec::new()];
        for _ in 0..n {
            paths = paths
                .into_iter()
                .flat_map(|p| {
                    (0..k).map(move |label| {
                        let mut q = p.clone();
                        q.push(label);
                        q
                    })
                })
                .collect();
        }
        paths
    }

    /// Brute-force log partition: log-sum-exp over every path score.
    fn enumerated_log_partition(emissions: &Array2<f64>, transitions: &Array2<f64>) -> f64 {
        let scores: Vec<f64> = all_paths(emissions.nrows(), emissions.ncols())
            .iter()
            .map(|p| path_score(emissions, transitions, p).unwrap())
            .collect();
        log_sum_exp(&scores)
    }

    /// Brute-force argmax path; first maximum in lexicographic order wins.
    fn enumerated_best_path(emissions: &Array2<f64>, transitions: &Array2<f64>) -> Vec<usize> {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for p in all_paths(emissions.nrows(), emissions.ncols()) {
            let s = path_score(emissions, transitions, &p).unwrap();
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, p));
            }
        }
        best.unwrap().1
    }

    /// Random instance. Entries of the transition table that the math must
    /// never touch (the START column and the STOP row) are filled with a
    /// huge poison value: if any code path read them, the enumeration
    /// comparisons below would explode.
    fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Array2<f64>, Array2<f64>) {
        let emissions = Array2::from_shape_fn((n, k), |_| rng.random_range(-2.0..2.0));
        let mut transitions = Array2::from_shape_fn((k + 2, k + 2), |_| rng.random_range(-2.0..2.0));
        let (start, stop) = (start_state(k), stop_state(k));
        for r in 0..k + 2 {
            transitions[[r, start]] = 1.0e9;
        }
        for c in 0..k + 2 {
            transitions[[stop, c]] = 1.0e9;
        }
        (emissions, transitions)
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let n = rng.random_range(1..=5);
            let k = rng.random_range(1..=4);
            let (e, t) = random_instance(&mut rng, n, k);
            let fast = log_partition(&e, &t).unwrap();
            let slow = enumerated_log_partition(&e, &t);
            assert!(
                (fast - slow).abs() <= 1e-9,
                "trial {trial}: n={n} k={k} fast={fast} slow={slow}"
            );
        }
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..200 {
            let n = rng.random_range(1..=5);
            let k = rng.random_range(1..=4);
            let (e, t) = random_instance(&mut rng, n, k);
            assert_eq!(
                viterbi(&e, &t).unwrap(),
                enumerated_best_path(&e, &t),
                "trial {trial}: n={n} k={k}"
            );
        }
    }

    #[test]
    fn path_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.random_range(1..=4);
            let k = rng.random_range(1..=4);
            let (e, t) = random_instance(&mut rng, n, k);
            let total: f64 = all_paths(n, k)
                .iter()
                .map(|p| log_likelihood(&e, &t, p).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() <= 1e-9, "total probability {total}");
        }
    }

    #[test]
    fn single_label_path_has_probability_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (e, t) = random_instance(&mut rng, 4, 1);
        let ll = log_likelihood(&e, &t, &[0, 0, 0, 0]).unwrap();
        assert!(ll.abs() <= 1e-12, "only path must have likelihood 1, got ln p = {ll}");
    }

    #[test]
    fn viterbi_breaks_exact_ties_toward_lowest_index() {
        // Every path scores identically, so the decode must be all zeros.
        let e = Array2::zeros((3, 4));
        let t = Array2::zeros((6, 6));
        assert_eq!(viterbi(&e, &t).unwrap(), vec![0, 0, 0]);

        // Two-way tie at the last position only.
        let mut e = Array2::zeros((2, 3));
        e[[1, 1]] = 5.0;
        e[[1, 2]] = 5.0;
        assert_eq!(viterbi(&e, &Array2::zeros((5, 5))).unwrap(), vec![0, 1]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let h = 1e-5;
        for _ in 0..20 {
            let n = rng.random_range(1..=4);
            let k = rng.random_range(1..=3);
            let (e, t) = random_instance(&mut rng, n, k);
            let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let (_, grads) = posterior_gradients(&e, &t, &gold).unwrap();

            let nll = |e: &Array2<f64>, t: &Array2<f64>| {
                log_partition(e, t).unwrap() - path_score(e, t, &gold).unwrap()
            };
            for t_idx in 0..n {
                for j in 0..k {
                    let mut ep = e.clone();
                    ep[[t_idx, j]] += h;
                    let mut em = e.clone();
                    em[[t_idx, j]] -= h;
                    let numeric = (nll(&ep, &t) - nll(&em, &t)) / (2.0 * h);
                    assert!(
                        (grads.d_emissions[[t_idx, j]] - numeric).abs() <= 1e-7,
                        "emission ({t_idx},{j})"
                    );
                }
            }
            for i in 0..k + 2 {
                for j in 0..k + 2 {
                    let mut tp = t.clone();
                    tp[[i, j]] += h;
                    let mut tm = t.clone();
                    tm[[i, j]] -= h;
                    let numeric = (nll(&e, &tp) - nll(&e, &tm)) / (2.0 * h);
                    assert!(
                        (grads.d_transitions[[i, j]] - numeric).abs() <= 1e-7,
                        "transition ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn forbidden_transitions_get_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (e, t) = random_instance(&mut rng, 3, 3);
        let (_, grads) = posterior_gradients(&e, &t, &[0, 1, 2]).unwrap();
        let (start, stop) = (start_state(3), stop_state(3));
        for r in 0..5 {
            assert_eq!(grads.d_transitions[[r, start]], 0.0);
        }
        for c in 0..5 {
            assert_eq!(grads.d_transitions[[stop, c]], 0.0);
        }
    }

    #[test]
    fn emission_gradient_rows_sum_to_zero() {
        // Each row of the emission gradient is a probability distribution
        // minus a one-hot vector, so it must sum to zero.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (e, t) = random_instance(&mut rng, 4, 3);
        let (_, grads) = posterior_gradients(&e, &t, &[2, 0, 1, 1]).unwrap();
        for t_idx in 0..4 {
            let row_sum: f64 = grads.d_emissions.row(t_idx).sum();
            assert!(row_sum.abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_malformed_inputs() {
        let e = Array2::zeros((2, 3));
        let t = Array2::zeros((5, 5));
        assert!(matches!(log_partition(&e, &Array2::zeros((4, 4))), Err(Error::Argument(_))));
        assert!(matches!(log_partition(&Array2::zeros((0, 3)), &t), Err(Error::Argument(_))));
        assert!(matches!(path_score(&e, &t, &[0]), Err(Error::Argument(_))));
        assert!(matches!(path_score(&e, &t, &[0, 3]), Err(Error::Argument(_))));
        assert!(matches!(posterior_gradients(&e, &t, &[0, 3]), Err(Error::Argument(_))));
    }

    #[test]
    fn nll_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..30 {
            let n = rng.random_range(1..=4);
            let k = rng.random_range(1..=4);
            let (e, t) = random_instance(&mut rng, n, k);
            let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let (nll, _) = posterior_gradients(&e, &t, &gold).unwrap();
            assert!(nll >= -1e-12, "nll={nll}");
        }
    }
}
