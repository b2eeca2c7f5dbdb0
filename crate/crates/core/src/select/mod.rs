//! Quality ranking by score margin and diversity subsetting by clusters.
//!
//! Quality: each prompt group contributes its best-vs-worst response pair on
//! a chosen axis, and pairs are ranked by the score margin between the two.
//! Diversity: prompt embeddings are clustered and the selection quota is
//! spread as evenly as possible across clusters, taking top-margin pairs
//! within each.

mod kmeans;

pub use kmeans::{kmeans_fit, ClusterModel, DEFAULT_K, DEFAULT_MAX_ITERS, DEFAULT_TOL};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::PromptWithResponses;
use crate::error::{Error, Result};
use crate::unify::{Polarity, PreferencePair, Source};

/// Margin between two scalar response scores.
pub fn score_margin(score_a: f64, score_b: f64) -> f64 {
    (score_a - score_b).abs()
}

/// Pairs a group's extremal responses on `axis`: the extreme on the
/// preferred side becomes chosen, the opposite extreme rejected, margin is
/// their absolute score difference. Groups with a single response yield
/// `None` (no comparison possible), as do groups whose two extremes carry
/// identical text. Score ties resolve to the earliest response.
pub fn best_worst_pair(
    group: &PromptWithResponses,
    axis: &str,
    polarity: Polarity,
) -> Result<Option<PreferencePair>> {
    if group.responses.len() < 2 {
        return Ok(None);
    }
    let scores: Vec<f64> = group
        .responses
        .iter()
        .map(|r| {
            r.labels.get(axis).copied().ok_or_else(|| {
                Error::data(format!("response '{}' missing axis '{axis}'", r.id))
            })
        })
        .collect::<Result<_>>()?;

    let higher_better = polarity == Polarity::HigherIsPositive;
    let best = extremal_index(&scores, higher_better, None);
    let worst = extremal_index(&scores, !higher_better, Some(best));

    let chosen = &group.responses[best];
    let rejected = &group.responses[worst];
    if chosen.text == rejected.text {
        return Ok(None);
    }
    Ok(Some(PreferencePair {
        prompt: group.prompt_text.clone(),
        chosen: chosen.text.clone(),
        rejected: rejected.text.clone(),
        margin: score_margin(scores[best], scores[worst]),
        source: Source::Multilabel,
        axis: Some(axis.to_owned()),
        prompt_id: group.prompt_id.clone(),
    }))
}

fn extremal_index(scores: &[f64], take_max: bool, exclude: Option<usize>) -> usize {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) => {
                let better = if take_max { s > scores[b] } else { s < scores[b] };
                if better {
                    best = Some(i);
                }
            }
        }
    }
    best.expect("at least two responses")
}

/// Total order for margin-ranked selection: margin descending, then
/// prompt_id / axis / chosen ascending so equal margins break the same way
/// everywhere.
fn margin_rank(a: &PreferencePair, b: &PreferencePair) -> std::cmp::Ordering {
    b.margin
        .total_cmp(&a.margin)
        .then_with(|| a.prompt_id.cmp(&b.prompt_id))
        .then_with(|| a.axis.cmp(&b.axis))
        .then_with(|| a.chosen.cmp(&b.chosen))
}

/// The `ceil(p * n)` largest-margin pairs, sorted by margin descending.
pub fn select_top_fraction(pairs: &[PreferencePair], p: f64) -> Result<Vec<PreferencePair>> {
    if !(p.is_finite() && p > 0.0 && p <= 1.0) {
        return Err(Error::config(format!("fraction must be in (0, 1], got {p}")));
    }
    let mut sorted: Vec<PreferencePair> = pairs.to_vec();
    sorted.sort_by(margin_rank);
    let take = ((p * pairs.len() as f64).ceil() as usize).min(pairs.len());
    sorted.truncate(take);
    Ok(sorted)
}

/// Audit record of one selection pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub requested_fraction: f64,
    pub selected_count: usize,
    pub per_cluster_counts: Vec<usize>,
    pub per_source_counts: BTreeMap<Source, usize>,
    pub discarded_single_response: usize,
}

/// Splits `total` into `k` quotas differing by at most one, larger quotas
/// at the lower indices.
pub fn even_quotas(total: usize, k: usize) -> Vec<usize> {
    let base = total / k;
    let remainder = total % k;
    (0..k).map(|c| base + usize::from(c < remainder)).collect()
}

/// Largest-remainder apportionment of `quota` over the given ratios; every
/// allocation is within one unit of its exact proportional share.
pub fn apportion_by_ratio(
    quota: usize,
    ratios: &BTreeMap<Source, f64>,
) -> Result<BTreeMap<Source, usize>> {
    let total_ratio: f64 = ratios.values().sum();
    if ratios.is_empty() || !(total_ratio.is_finite() && total_ratio > 0.0) {
        return Err(Error::config("source ratios must be positive"));
    }
    let mut allocation = BTreeMap::new();
    let mut remainders: Vec<(Source, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (&source, &ratio) in ratios {
        let ideal = quota as f64 * ratio / total_ratio;
        let floor = ideal.floor() as usize;
        allocation.insert(source, floor);
        assigned += floor;
        remainders.push((source, ideal - floor as f64));
    }
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (source, _) in remainders.iter().take(quota - assigned) {
        *allocation.get_mut(source).expect("source present") += 1;
    }
    Ok(allocation)
}

/// Takes `ceil(fraction * n)` pairs spread evenly over the model's clusters,
/// top-margin first within each cluster. Clusters short of their quota
/// donate the surplus round-robin to clusters that still have pairs. With
/// `per_source_ratio`, each cluster quota is further apportioned across
/// sources to preserve the given dataset ratio within one pair per cell.
pub fn diversity_sample(
    pairs: &[PreferencePair],
    model: &ClusterModel,
    fraction: f64,
    per_source_ratio: Option<&BTreeMap<Source, f64>>,
) -> Result<(Vec<PreferencePair>, SelectionReport)> {
    if !(fraction.is_finite() && fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let k = model.k;
    let mut by_cluster: Vec<Vec<&PreferencePair>> = vec![Vec::new(); k];
    for pair in pairs {
        let cluster = *model.assignments.get(&pair.prompt_id).ok_or_else(|| {
            Error::data(format!("prompt_id '{}' has no cluster assignment", pair.prompt_id))
        })?;
        if cluster >= k {
            return Err(Error::data(format!(
                "prompt_id '{}' assigned to cluster {cluster} >= k={k}",
                pair.prompt_id
            )));
        }
        by_cluster[cluster].push(pair);
    }
    for cluster in by_cluster.iter_mut() {
        cluster.sort_by(|a, b| margin_rank(a, b));
    }

    let target = ((fraction * pairs.len() as f64).ceil() as usize).min(pairs.len());
    let quotas = capped_quotas(target, &by_cluster.iter().map(Vec::len).collect::<Vec<_>>());

    let mut selected: Vec<PreferencePair> = Vec::with_capacity(target);
    let mut per_cluster_counts = vec![0usize; k];
    for (c, cluster_pairs) in by_cluster.iter().enumerate() {
        let quota = quotas[c];
        let chosen: Vec<&PreferencePair> = match per_source_ratio {
            None => cluster_pairs.iter().take(quota).copied().collect(),
            Some(ratios) => take_by_source(cluster_pairs, quota, ratios)?,
        };
        per_cluster_counts[c] = chosen.len();
        selected.extend(chosen.into_iter().cloned());
    }

    let mut per_source_counts = BTreeMap::new();
    for pair in &selected {
        *per_source_counts.entry(pair.source).or_insert(0) += 1;
    }
    let report = SelectionReport {
        requested_fraction: fraction,
        selected_count: selected.len(),
        per_cluster_counts,
        per_source_counts,
        discarded_single_response: 0,
    };
    Ok((selected, report))
}

/// Even quotas capped at per-cluster availability, with the shortfall
/// donated one pair at a time round-robin over clusters that can absorb it.
fn capped_quotas(target: usize, avail: &[usize]) -> Vec<usize> {
    let k = avail.len();
    let mut quotas = even_quotas(target, k);
    let mut deficit = 0usize;
    for (quota, &have) in quotas.iter_mut().zip(avail) {
        if *quota > have {
            deficit += *quota - have;
            *quota = have;
        }
    }
    while deficit > 0 {
        let mut progressed = false;
        for c in 0..k {
            if deficit == 0 {
                break;
            }
            if quotas[c] < avail[c] {
                quotas[c] += 1;
                deficit -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    quotas
}

/// Apportions one cluster's quota over sources, then fills each source cell
/// top-margin first. Cells short of their share pass the slack to the other
/// sources in the same cluster.
fn take_by_source<'a>(
    cluster_pairs: &[&'a PreferencePair],
    quota: usize,
    ratios: &BTreeMap<Source, f64>,
) -> Result<Vec<&'a PreferencePair>> {
    let mut by_source: BTreeMap<Source, Vec<&PreferencePair>> = BTreeMap::new();
    for pair in cluster_pairs {
        if !ratios.contains_key(&pair.source) {
            return Err(Error::config(format!(
                "per-source ratio missing source {:?}",
                pair.source
            )));
        }
        by_source.entry(pair.source).or_default().push(pair);
    }

    let mut cell_quota = apportion_by_ratio(quota, ratios)?;
    // Cap at availability and redistribute inside the cluster; the cluster
    // quota never exceeds the cluster's total pairs, so this always lands.
    let sources: Vec<Source> = ratios.keys().copied().collect();
    let avail =
        |s: Source, by: &BTreeMap<Source, Vec<&PreferencePair>>| by.get(&s).map_or(0, Vec::len);
    let mut deficit = 0usize;
    for &s in &sources {
        let have = avail(s, &by_source);
        let q = cell_quota.entry(s).or_insert(0);
        if *q > have {
            deficit += *q - have;
            *q = have;
        }
    }
    while deficit > 0 {
        let mut progressed = false;
        for &s in &sources {
            if deficit == 0 {
                break;
            }
            let have = avail(s, &by_source);
            let q = cell_quota.entry(s).or_insert(0);
            if *q < have {
                *q += 1;
                deficit -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    // Preserve the cluster's margin order in the final take.
    let mut taken_per_source: BTreeMap<Source, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for pair in cluster_pairs {
        let taken = taken_per_source.entry(pair.source).or_insert(0);
        if *taken < cell_quota[&pair.source] {
            *taken += 1;
            out.push(*pair);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ResponseEntry;
    use crate::embed::{EmbeddingMap, EmbeddingVector};

    fn group(scores: &[f64]) -> PromptWithResponses {
        PromptWithResponses {
            prompt_id: "p".into(),
            prompt_text: "the prompt".into(),
            responses: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| ResponseEntry {
                    id: format!("r{i}"),
                    text: format!("response {i}"),
                    labels: BTreeMap::from([("toxicity".to_owned(), s)]),
                })
                .collect(),
        }
    }

    fn pair(id: &str, margin: f64) -> PreferencePair {
        PreferencePair {
            prompt: format!("prompt {id}"),
            chosen: "good".into(),
            rejected: "bad".into(),
            margin,
            source: Source::Multilabel,
            axis: Some("toxicity".into()),
            prompt_id: id.into(),
        }
    }

    #[test]
    fn pairs_least_and_most_toxic() {
        let g = group(&[0.05, 0.3, 0.8]);
        let p = best_worst_pair(&g, "toxicity", Polarity::LowerIsPositive)
            .unwrap()
            .unwrap();
        assert_eq!(p.chosen, "response 0");
        assert_eq!(p.rejected, "response 2");
        assert!((p.margin - 0.75).abs() < 1e-15);
    }

    #[test]
    fn single_response_group_is_discarded() {
        let g = group(&[0.4]);
        assert!(best_worst_pair(&g, "toxicity", Polarity::LowerIsPositive)
            .unwrap()
            .is_none());
    }

    #[test]
    fn equal_scores_tie_to_first_response() {
        let g = group(&[0.5, 0.5]);
        let p = best_worst_pair(&g, "toxicity", Polarity::HigherIsPositive)
            .unwrap()
            .unwrap();
        assert_eq!(p.margin, 0.0);
        assert_eq!(p.chosen, "response 0");
        assert_eq!(p.rejected, "response 1");
    }

    #[test]
    fn missing_axis_score_is_an_error() {
        let mut g = group(&[0.1, 0.9]);
        g.responses[1].labels.clear();
        let err = best_worst_pair(&g, "toxicity", Polarity::LowerIsPositive).unwrap_err();
        assert!(err.to_string().contains("r1"), "{err}");
    }

    #[test]
    fn margin_is_absolute_difference() {
        assert_eq!(score_margin(0.9, 0.1), 0.8);
        assert_eq!(score_margin(0.1, 0.9), 0.8);
        assert_eq!(score_margin(0.4, 0.4), 0.0);
    }

    #[test]
    fn top_fraction_counts_and_dominance() {
        let pairs: Vec<PreferencePair> = (0..10).map(|i| pair(&format!("p{i}"), i as f64 / 10.0)).collect();
        let top = select_top_fraction(&pairs, 0.2).unwrap();
        assert_eq!(top.len(), 2);
        let min_selected = top.iter().map(|p| p.margin).fold(f64::INFINITY, f64::min);
        for p in &pairs {
            if !top.iter().any(|t| t.prompt_id == p.prompt_id) {
                assert!(p.margin <= min_selected);
            }
        }
        assert_eq!(select_top_fraction(&pairs, 1.0).unwrap().len(), 10);
    }

    #[test]
    fn top_fraction_breaks_ties_by_prompt_id() {
        let pairs = vec![pair("d", 0.5), pair("a", 0.1), pair("b", 0.9), pair("c", 0.5)];
        let top = select_top_fraction(&pairs, 0.5).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].prompt_id, "b");
        assert_eq!(top[1].prompt_id, "c"); // margin tie 0.5: "c" < "d"
    }

    #[test]
    fn fraction_out_of_range_is_an_error() {
        let pairs = vec![pair("a", 0.1)];
        assert!(select_top_fraction(&pairs, 0.0).is_err());
        assert!(select_top_fraction(&pairs, 1.2).is_err());
        assert!(select_top_fraction(&pairs, f64::NAN).is_err());
    }

    #[test]
    fn even_quotas_differ_by_at_most_one() {
        assert_eq!(even_quotas(5, 2), vec![3, 2]);
        assert_eq!(even_quotas(10, 10), vec![1; 10]);
        assert_eq!(even_quotas(7, 3), vec![3, 2, 2]);
        for total in 0..50 {
            for k in 1..12 {
                let q = even_quotas(total, k);
                assert_eq!(q.iter().sum::<usize>(), total);
                assert!(q.iter().max().unwrap() - q.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn apportionment_is_within_one_of_ideal() {
        let ratios = BTreeMap::from([(Source::Multilabel, 0.75), (Source::Choice, 0.25)]);
        for quota in 0..40 {
            let alloc = apportion_by_ratio(quota, &ratios).unwrap();
            let total: usize = alloc.values().sum();
            assert_eq!(total, quota);
            for (&source, &count) in &alloc {
                let ideal = quota as f64 * ratios[&source];
                assert!((count as f64 - ideal).abs() <= 1.0);
            }
        }
    }

    fn model_with_clusters(assignments: &[(&str, usize)], k: usize) -> ClusterModel {
        ClusterModel {
            k,
            seed: 0,
            centroids: vec![vec![0.0]; k],
            assignments: assignments
                .iter()
                .map(|(id, c)| (id.to_string(), *c))
                .collect(),
            inertia: 0.0,
        }
    }

    #[test]
    fn even_split_across_two_clusters() {
        let mut pairs = Vec::new();
        let mut assignments = Vec::new();
        let mut names = Vec::new();
        for i in 0..20 {
            let id = format!("p{i:02}");
            pairs.push(pair(&id, i as f64 / 20.0));
            names.push(id);
        }
        for (i, id) in names.iter().enumerate() {
            assignments.push((id.as_str(), i % 2));
        }
        let model = model_with_clusters(&assignments, 2);
        let (selected, report) = diversity_sample(&pairs, &model, 0.5, None).unwrap();
        assert_eq!(selected.len(), 10);
        assert_eq!(report.per_cluster_counts, vec![5, 5]);
    }

    #[test]
    fn small_cluster_donates_surplus() {
        // Cluster sizes [8, 2], target ceil(0.5 * 10) = 5 -> quotas [3, 2].
        let mut pairs = Vec::new();
        let mut assignments = Vec::new();
        for i in 0..10 {
            let id = format!("p{i}");
            pairs.push(pair(&id, i as f64 / 10.0));
            assignments.push((id, if i < 8 { 0 } else { 1 }));
        }
        let refs: Vec<(&str, usize)> = assignments.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        let model = model_with_clusters(&refs, 2);
        let (selected, report) = diversity_sample(&pairs, &model, 0.5, None).unwrap();
        assert_eq!(selected.len(), 5);
        assert_eq!(report.per_cluster_counts, vec![3, 2]);
    }

    #[test]
    fn single_cluster_takes_top_margins() {
        let pairs: Vec<PreferencePair> =
            (0..10).map(|i| pair(&format!("p{i}"), i as f64 / 10.0)).collect();
        let assignments: Vec<(String, usize)> =
            (0..10).map(|i| (format!("p{i}"), 0usize)).collect();
        let refs: Vec<(&str, usize)> = assignments.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        let model = model_with_clusters(&refs, 1);
        let (selected, _) = diversity_sample(&pairs, &model, 0.3, None).unwrap();
        assert_eq!(selected.len(), 3);
        let margins: Vec<f64> = selected.iter().map(|p| p.margin).collect();
        assert_eq!(margins, vec![0.9, 0.8, 0.7]);
    }

    #[test]
    fn full_fraction_returns_everything() {
        let pairs: Vec<PreferencePair> =
            (0..7).map(|i| pair(&format!("p{i}"), i as f64 / 7.0)).collect();
        let assignments: Vec<(String, usize)> =
            (0..7).map(|i| (format!("p{i}"), i % 3)).collect();
        let refs: Vec<(&str, usize)> = assignments.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        let model = model_with_clusters(&refs, 3);
        let (selected, _) = diversity_sample(&pairs, &model, 1.0, None).unwrap();
        assert_eq!(selected.len(), 7);
        let mut ids: Vec<&str> = selected.iter().map(|p| p.prompt_id.as_str()).collect();
        ids.sort_unstable();
        assert_eq!(ids, vec!["p0", "p1", "p2", "p3", "p4", "p5", "p6"]);
    }

    #[test]
    fn unassigned_prompt_is_an_error() {
        let pairs = vec![pair("mystery", 0.5)];
        let model = model_with_clusters(&[("other", 0)], 1);
        let err = diversity_sample(&pairs, &model, 0.5, None).unwrap_err();
        assert!(err.to_string().contains("mystery"), "{err}");
    }

    #[test]
    fn source_ratio_is_respected_per_cluster() {
        // One cluster, 8 multilabel + 8 choice pairs, ratio 3:1, quota 8
        // -> 6 multilabel, 2 choice.
        let mut pairs = Vec::new();
        let mut assignments = Vec::new();
        for i in 0..16 {
            let id = format!("p{i:02}");
            let mut p = pair(&id, i as f64 / 16.0);
            if i % 2 == 0 {
                p.source = Source::Choice;
                p.axis = None;
            }
            pairs.push(p);
            assignments.push((id, 0usize));
        }
        let refs: Vec<(&str, usize)> = assignments.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        let model = model_with_clusters(&refs, 1);
        let ratios = BTreeMap::from([(Source::Multilabel, 0.75), (Source::Choice, 0.25)]);
        let (selected, report) = diversity_sample(&pairs, &model, 0.5, Some(&ratios)).unwrap();
        assert_eq!(selected.len(), 8);
        assert_eq!(report.per_source_counts[&Source::Multilabel], 6);
        assert_eq!(report.per_source_counts[&Source::Choice], 2);
    }

    #[test]
    fn kmeans_feeds_diversity_end_to_end() {
        let mut embeddings = EmbeddingMap::new();
        let mut pairs = Vec::new();
        for i in 0..12 {
            let id = format!("p{i:02}");
            let offset = if i < 6 { 0.0 } else { 100.0 };
            embeddings.insert(
                id.clone(),
                EmbeddingVector::new(vec![offset + i as f64, offset]).unwrap(),
            );
            pairs.push(pair(&id, i as f64 / 12.0));
        }
        let model = kmeans_fit(&embeddings, 2, 17, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let (selected, report) = diversity_sample(&pairs, &model, 0.5, None).unwrap();
        assert_eq!(selected.len(), 6);
        assert_eq!(report.per_cluster_counts, vec![3, 3]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn selected_margins_dominate_complement(
                margins in proptest::collection::vec(0.0f64..1.0, 1..40),
                p in 0.05f64..1.0,
            ) {
                let pairs: Vec<PreferencePair> = margins
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| pair(&format!("p{i:03}"), m))
                    .collect();
                let top = select_top_fraction(&pairs, p).unwrap();
                prop_assert_eq!(top.len(), (p * pairs.len() as f64).ceil() as usize);
                let floor = top.last().map(|t| t.margin).unwrap_or(f64::INFINITY);
                let selected: std::collections::BTreeSet<&str> =
                    top.iter().map(|t| t.prompt_id.as_str()).collect();
                for pr in &pairs {
                    if !selected.contains(pr.prompt_id.as_str()) {
                        prop_assert!(pr.margin <= floor);
                    }
                }
            }

            #[test]
            fn quota_capping_conserves_target(
                sizes in proptest::collection::vec(0usize..15, 1..10),
                frac_permille in 1usize..=1000,
            ) {
                let n: usize = sizes.iter().sum();
                prop_assume!(n > 0);
                let fraction = frac_permille as f64 / 1000.0;
                let target = ((fraction * n as f64).ceil() as usize).min(n);
                let quotas = capped_quotas(target, &sizes);
                prop_assert_eq!(quotas.iter().sum::<usize>(), target);
                for (q, s) in quotas.iter().zip(&sizes) {
                    prop_assert!(q <= s);
                }
            }
        }
    }
}
