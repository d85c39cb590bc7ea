use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ExplainError, ExplanationResult};

/// Agreement between two explanations of the same sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Jaccard index of the top-k token sets.
    pub top_k_overlap: f64,
    /// Spearman correlation over tokens present in both explanations.
    pub rank_correlation: f64,
    /// Fraction of shared tokens whose importances have the same sign.
    pub sign_agreement: f64,
    pub k: usize,
    pub shared_tokens: Vec<String>,
}

/// Lowercased token -> importance; repeated words keep their strongest entry.
fn importance_by_token(r: &ExplanationResult) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for a in &r.attributions {
        out.entry(a.token.to_lowercase()).or_insert(a.importance);
    }
    out
}

fn top_k_tokens(r: &ExplanationResult, k: usize) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    for a in &r.attributions {
        if seen.len() == k {
            break;
        }
        seen.insert(a.token.to_lowercase());
    }
    seen
}

/// Average ranks (1-based), ties share the mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = rank;
        }
        i = j + 1;
    }
    out
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    match a.len() {
        0 => return 0.0,
        1 => return 1.0,
        _ => {}
    }
    let ra = ranks(a);
    let rb = ranks(b);
    if ra == rb {
        return 1.0;
    }
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    match (va == 0.0, vb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0),
    }
}

/// Compare two explanations of the same sample. Tokens match case-insensitively.
pub fn compare_methods(
    a: &ExplanationResult,
    b: &ExplanationResult,
    k: usize,
) -> Result<AgreementReport, ExplainError> {
    if a.sample_id != b.sample_id {
        return Err(ExplainError::SampleMismatch(a.sample_id.clone(), b.sample_id.clone()));
    }
    if k == 0 {
        return Err(ExplainError::InvalidParameter("k must be at least 1".into()));
    }

    let top_a = top_k_tokens(a, k);
    let top_b = top_k_tokens(b, k);
    let union = top_a.union(&top_b).count();
    let top_k_overlap = if union == 0 {
        0.0
    } else {
        top_a.intersection(&top_b).count() as f64 / union as f64
    };

    let imp_a = importance_by_token(a);
    let imp_b = importance_by_token(b);
    let shared: Vec<String> = imp_a.keys().filter(|t| imp_b.contains_key(*t)).cloned().collect();
    let va: Vec<f64> = shared.iter().map(|t| imp_a[t]).collect();
    let vb: Vec<f64> = shared.iter().map(|t| imp_b[t]).collect();

    let sign_agreement = if shared.is_empty() {
        0.0
    } else {
        let same = va
            .iter()
            .zip(&vb)
            .filter(|(x, y)| x.signum() == y.signum() || (**x == 0.0 && **y == 0.0))
            .count();
        same as f64 / shared.len() as f64
    };

    Ok(AgreementReport {
        top_k_overlap,
        rank_correlation: spearman(&va, &vb),
        sign_agreement,
        k,
        shared_tokens: shared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{Attribution, Method};

    fn result(method: Method, sample: &str, attrs: &[(&str, f64)]) -> ExplanationResult {
        ExplanationResult {
            sample_id: sample.into(),
            method,
            target_class: "positive".into(),
            baseline_confidence: 0.9,
            attributions: attrs
                .iter()
                .enumerate()
                .map(|(i, (t, v))| Attribution { token: t.to_string(), position: i, importance: *v })
                .collect(),
            params: Default::default(),
            model_id: "m".into(),
            created_at: "2024-01-01T00:00:00.000Z".into(),
        }
    }

    #[test]
    fn self_comparison_is_perfect() {
        let r = result(Method::Occlusion, "s", &[("strong", 0.3), ("growth", 0.2), ("in", -0.01)]);
        let rep = compare_methods(&r, &r, 2).unwrap();
        assert_eq!(rep.top_k_overlap, 1.0);
        assert_eq!(rep.rank_correlation, 1.0);
        assert_eq!(rep.sign_agreement, 1.0);
    }

    #[test]
    fn self_comparison_all_zero_importances() {
        let r = result(Method::Occlusion, "s", &[("a", 0.0), ("b", 0.0)]);
        let rep = compare_methods(&r, &r, 1).unwrap();
        assert_eq!((rep.top_k_overlap, rep.rank_correlation, rep.sign_agreement), (1.0, 1.0, 1.0));
    }

    #[test]
    fn headline_token_sets_give_one_third() {
        let occ = result(Method::Occlusion, "s", &[("strong", 0.312), ("growth", 0.287), ("forecasts", 0.05)]);
        let lime = result(Method::Lime, "s", &[("growth", 0.289), ("forecasts", 0.201), ("strong", 0.195)]);
        let rep = compare_methods(&occ, &lime, 2).unwrap();
        assert_eq!(rep.top_k_overlap, 1.0 / 3.0);
        assert_eq!(rep.sign_agreement, 1.0);
    }

    #[test]
    fn disjoint_and_case_insensitive() {
        let a = result(Method::Occlusion, "s", &[("Alpha", 0.5), ("beta", 0.1)]);
        let b = result(Method::Lime, "s", &[("gamma", 0.5), ("delta", 0.1)]);
        let rep = compare_methods(&a, &b, 2).unwrap();
        assert_eq!(rep.top_k_overlap, 0.0);
        assert_eq!(rep.sign_agreement, 0.0);
        let c = result(Method::Lime, "s", &[("alpha", 0.5), ("BETA", 0.1)]);
        assert_eq!(compare_methods(&a, &c, 2).unwrap().top_k_overlap, 1.0);
    }

    #[test]
    fn reversed_ranking_is_minus_one() {
        let a = result(Method::Occlusion, "s", &[("x", 0.3), ("y", 0.2), ("z", 0.1)]);
        let b = result(Method::Lime, "s", &[("z", 0.3), ("y", 0.2), ("x", 0.1)]);
        let rep = compare_methods(&a, &b, 3).unwrap();
        assert!((rep.rank_correlation + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_mismatch_is_rejected() {
        let a = result(Method::Occlusion, "s1", &[("x", 0.1)]);
        let b = result(Method::Lime, "s2", &[("x", 0.1)]);
        assert!(matches!(compare_methods(&a, &b, 1), Err(ExplainError::SampleMismatch(_, _))));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[0.5, 0.1, 0.5]), vec![2.5, 1.0, 2.5]);
    }
}
