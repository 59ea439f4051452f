//! Exhaustive enumeration over all K^T state paths of a finite HMM.
//! Feasible for the tiny instances the oracle suites use.

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn path_log_prob(
    path: &[usize],
    initial: &[f64],
    transition: &[Vec<f64>],
    emission_log: &[Vec<f64>],
) -> f64 {
    let mut lp = initial[path[0]].ln() + emission_log[0][path[0]];
    for t in 1..path.len() {
        lp += transition[path[t - 1]][path[t]].ln() + emission_log[t][path[t]];
    }
    lp
}

fn for_each_path(k: usize, t_len: usize, mut visit: impl FnMut(&[usize])) {
    let mut path = vec![0usize; t_len];
    loop {
        visit(&path);
        // Odometer increment, most significant digit first so paths come
        // out in lexicographic order.
        let mut pos = t_len;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < k {
                break;
            }
            path[pos] = 0;
        }
    }
}

/// `log Σ_paths p(path, y)`: the forward likelihood by brute force.
/// `emission_log[t][s]` is the per-step emission log density (zero for a
/// gap).
pub fn forward_by_enumeration(
    initial: &[f64],
    transition: &[Vec<f64>],
    emission_log: &[Vec<f64>],
) -> f64 {
    let k = initial.len();
    let t_len = emission_log.len();
    let mut terms = Vec::with_capacity(k.pow(t_len as u32));
    for_each_path(k, t_len, |path| {
        terms.push(path_log_prob(path, initial, transition, emission_log));
    });
    logsumexp(&terms)
}

/// Best path and score by brute force; the lexicographically first path
/// wins ties (strict improvement required to replace the incumbent).
pub fn viterbi_by_enumeration(
    initial: &[f64],
    transition: &[Vec<f64>],
    emission_log: &[Vec<f64>],
) -> (Vec<usize>, f64) {
    let k = initial.len();
    let t_len = emission_log.len();
    let mut best_path = vec![0usize; t_len];
    let mut best = f64::NEG_INFINITY;
    for_each_path(k, t_len, |path| {
        let lp = path_log_prob(path, initial, transition, emission_log);
        if lp > best {
            best = lp;
            best_path = path.to_vec();
        }
    });
    (best_path, best)
}
