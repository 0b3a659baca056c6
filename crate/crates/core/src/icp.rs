//! Invariant Causal Prediction: intersect all covariate subsets whose
//! invariance hypothesis is not rejected at level alpha. Candidates are
//! pre-screened by Lasso path entry order on the pooled data; subsets are
//! enumerated in deterministic order (by size, then lexicographically).

use serde::{Deserialize, Serialize};

use crate::data::{EnvDataset, EnvironmentPartition, SubsetS};
use crate::error::{Error, Result};
use crate::invariance::{test_invariance, TestMode};
use crate::numerics::lasso_path_order;

const ENUMERATION_BUDGET: u128 = 1 << 20;

/// Result of the ICP search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcpResult {
    /// Intersection of all accepted subsets (1-based variable indices).
    pub s_hat: Vec<usize>,
    /// Accepted subsets with their combined p-values.
    pub accepted: Vec<(Vec<usize>, f64)>,
    /// Screened candidate variables, in Lasso path entry order.
    pub screened: Vec<usize>,
    /// True iff no subset was accepted (the model itself is rejected).
    pub model_rejected: bool,
    pub alpha: f64,
}

/// Search configuration. `screen_k` caps the candidate pool, and
/// `max_subset_size` the enumerated subset size.
#[derive(Debug, Clone)]
pub struct IcpConfig {
    pub alpha: f64,
    pub screen_k: usize,
    pub max_subset_size: usize,
    pub mode: TestMode,
}

impl IcpConfig {
    pub fn new(alpha: f64, p: usize) -> Self {
        let screen_k = p.min(10);
        IcpConfig {
            alpha,
            screen_k,
            max_subset_size: screen_k,
            mode: TestMode::Combined,
        }
    }
}

fn count_subsets(k: usize, max_size: usize) -> u128 {
    let mut total: u128 = 1; // empty set
    let mut binom: u128 = 1;
    for s in 1..=max_size.min(k) {
        binom = binom * (k - s + 1) as u128 / s as u128;
        total = total.saturating_add(binom);
        if total > ENUMERATION_BUDGET {
            break;
        }
    }
    total
}

/// All size-`size` index combinations of `candidates`, lexicographic in
/// candidate order.
fn combinations(candidates: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..size).collect();
    if size == 0 {
        out.push(Vec::new());
        return out;
    }
    if size > candidates.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| candidates[i]).collect());
        // advance
        let mut i = size;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + candidates.len() - size {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Runs the ICP search over all subsets (including the empty set) of the
/// screened candidates.
pub fn icp_search(
    data: &EnvDataset,
    part: &EnvironmentPartition,
    config: &IcpConfig,
) -> Result<IcpResult> {
    let p = data.p();
    if config.screen_k > p {
        return Err(Error::InvalidArgument(format!(
            "screen_k = {} exceeds p = {p}",
            config.screen_k
        )));
    }
    if config.max_subset_size > config.screen_k {
        return Err(Error::InvalidArgument(
            "max_subset_size exceeds screen_k".into(),
        ));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidArgument("alpha outside (0,1)".into()));
    }
    let subsets = count_subsets(config.screen_k, config.max_subset_size);
    if subsets > ENUMERATION_BUDGET {
        return Err(Error::EnumerationBudget { subsets, budget: ENUMERATION_BUDGET });
    }

    // Screening on pooled data (1-based indices out).
    let order = lasso_path_order(&data.x, &data.y, config.screen_k)?;
    let mut candidates: Vec<usize> = order.iter().map(|&j| j + 1).collect();
    candidates.sort_unstable();

    let mut accepted: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut s_hat: Option<SubsetS> = None;
    for size in 0..=config.max_subset_size {
        for combo in combinations(&candidates, size) {
            let s = SubsetS::new(combo.clone(), p)?;
            let res = test_invariance(data, &s, part, config.mode)?;
            if res.accepted_at(config.alpha) {
                s_hat = Some(match s_hat {
                    None => s.clone(),
                    Some(cur) => cur.intersect(&s),
                });
                accepted.push((combo, res.p_value));
            }
        }
    }

    let model_rejected = accepted.is_empty();
    let s_hat_vec = s_hat.map(|s| s.indices().to_vec()).unwrap_or_default();
    Ok(IcpResult {
        s_hat: s_hat_vec,
        accepted,
        screened: order.iter().map(|&j| j + 1).collect(),
        model_rejected,
        alpha: config.alpha,
    })
}

/// Per-variable membership summary derived from an ICP result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipSummary {
    pub variable: usize,
    pub in_s_hat: bool,
    /// Largest p-value among accepted subsets NOT containing the variable;
    /// None when every accepted subset contains it.
    pub max_p_excluding: Option<f64>,
}

pub fn icp_confidence_statement(result: &IcpResult, p: usize) -> Vec<MembershipSummary> {
    (1..=p)
        .map(|j| {
            let in_s_hat = !result.model_rejected && result.s_hat.contains(&j);
            let max_p_excluding = result
                .accepted
                .iter()
                .filter(|(s, _)| !s.contains(&j))
                .map(|&(_, p)| p)
                .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))));
            MembershipSummary { variable: j, in_s_hat, max_p_excluding }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut impl Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    /// Linear SEM with pa(Y) = {2,3} and two environments where the second
    /// shifts every X by a mean offset.
    fn shifted_sem(rng: &mut impl Rng, n_per: usize, shift: f64) -> (EnvDataset, EnvironmentPartition) {
        let p = 4;
        let n = 2 * n_per;
        let mut x = DMatrix::zeros(n, p);
        let mut y = DVector::zeros(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let env2 = i >= n_per;
            let mu = if env2 { shift } else { 0.0 };
            for j in 0..p {
                x[(i, j)] = mu * (1.0 + j as f64 * 0.3) + randn(rng);
            }
            y[i] = 1.5 * x[(i, 1)] - 2.0 * x[(i, 2)] + 0.5 * randn(rng);
            // X4 is a child of Y: invariance for sets containing 4 breaks
            // under the environment shift.
            x[(i, 3)] = 0.8 * y[i] + 0.5 * randn(rng);
            labels.push(if env2 { 2 } else { 1 });
        }
        let a = DMatrix::zeros(n, 1);
        let data = EnvDataset::new(y, x, a, Some(labels.clone())).unwrap();
        let part = EnvironmentPartition::from_labels(&labels, 2).unwrap();
        (data, part)
    }

    #[test]
    fn combinations_are_lexicographic() {
        let c = combinations(&[1, 2, 3], 2);
        assert_eq!(c, vec![vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(combinations(&[5, 7], 0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn intersection_of_accepted_sets() {
        let a = SubsetS::new(vec![2, 3], 5).unwrap();
        let b = SubsetS::new(vec![2, 3, 5], 5).unwrap();
        assert_eq!(a.intersect(&b).indices(), &[2, 3]);
    }

    #[test]
    fn budget_guard_triggers() {
        assert!(count_subsets(30, 30) > ENUMERATION_BUDGET);
        assert!(count_subsets(10, 10) <= ENUMERATION_BUDGET);
    }

    #[test]
    fn recovers_subset_of_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (data, part) = shifted_sem(&mut rng, 300, 2.5);
        let config = IcpConfig::new(0.05, data.p());
        let res = icp_search(&data, &part, &config).unwrap();
        // Theorem-style containment: s_hat must be inside pa(Y) = {2,3}.
        assert!(res.s_hat.iter().all(|&j| j == 2 || j == 3), "{:?}", res.s_hat);
    }

    #[test]
    fn coverage_over_replicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let reps = 100;
        let mut covered = 0;
        for _ in 0..reps {
            let (data, part) = shifted_sem(&mut rng, 200, 2.0);
            let config = IcpConfig::new(0.05, data.p());
            let res = icp_search(&data, &part, &config).unwrap();
            if res.s_hat.iter().all(|&j| j == 2 || j == 3) {
                covered += 1;
            }
        }
        let rate = covered as f64 / reps as f64;
        // 0.95 minus 3 binomial SEs at n = 100.
        assert!(rate >= 0.95 - 3.0 * (0.95f64 * 0.05 / reps as f64).sqrt(), "coverage {rate}");
    }

    #[test]
    fn uninformative_environments_give_empty_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let reps = 60;
        let mut empty = 0;
        for _ in 0..reps {
            let (data, part) = shifted_sem(&mut rng, 150, 0.0);
            let config = IcpConfig::new(0.05, data.p());
            let res = icp_search(&data, &part, &config).unwrap();
            if res.s_hat.is_empty() {
                empty += 1;
            }
        }
        assert!(empty as f64 / reps as f64 >= 0.9, "empty rate {}", empty as f64 / reps as f64);
    }

    #[test]
    fn alpha_monotonicity_of_accepted_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (data, part) = shifted_sem(&mut rng, 200, 2.0);
        let lo = icp_search(&data, &part, &IcpConfig::new(0.01, data.p())).unwrap();
        let hi = icp_search(&data, &part, &IcpConfig::new(0.10, data.p())).unwrap();
        // Accepted family at the larger alpha is a subfamily of the smaller.
        for (s, _) in &hi.accepted {
            assert!(lo.accepted.iter().any(|(t, _)| t == s));
        }
        if !lo.accepted.is_empty() && !hi.accepted.is_empty() {
            for j in &lo.s_hat {
                assert!(hi.s_hat.contains(j) || !hi.accepted.iter().any(|(t, _)| t.contains(j)));
            }
        }
    }

    #[test]
    fn membership_summary_flags() {
        let res = IcpResult {
            s_hat: vec![2],
            accepted: vec![(vec![2], 0.4), (vec![2, 3], 0.2)],
            screened: vec![1, 2, 3],
            model_rejected: false,
            alpha: 0.05,
        };
        let summary = icp_confidence_statement(&res, 3);
        assert!(summary[1].in_s_hat);
        assert!(!summary[2].in_s_hat);
        // Variable 3 is excluded from {2} (p = 0.4) only.
        assert_eq!(summary[2].max_p_excluding, Some(0.4));
        // Variable 2 is in every accepted set.
        assert_eq!(summary[1].max_p_excluding, None);

        let rejected = IcpResult {
            s_hat: vec![],
            accepted: vec![],
            screened: vec![1, 2, 3],
            model_rejected: true,
            alpha: 0.05,
        };
        let summary = icp_confidence_statement(&rejected, 3);
        assert!(summary.iter().all(|m| !m.in_s_hat));
    }
}
