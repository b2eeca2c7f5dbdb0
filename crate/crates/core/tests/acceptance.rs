//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Oracles here are written independently of the
//! library code they check (sort-based cutoffs, exhaustive partitions,
//! finite differences, high-precision constants).

use std::collections::BTreeMap;
use std::time::Instant;

use unifeed_core::corpus::{PromptWithResponses, ResponseEntry};
use unifeed_core::embed::{EmbeddingMap, EmbeddingVector};
use unifeed_core::evaluate::{generative_accuracy, pair_bias_entropy, BiasEvalItem, GenEvalItem};
use unifeed_core::probe::{
    loss_gradient, pairwise_accuracy, pairwise_loss, synthetic_separable_pairs, train_reward,
    EmbeddedPair, LinearRewardModel, TrainParams,
};
use unifeed_core::rng::SplitMix64;
use unifeed_core::select::{
    apportion_by_ratio, diversity_sample, even_quotas, kmeans_fit, select_top_fraction,
    ClusterModel,
};
use unifeed_core::unify::{
    binarize, choice_to_preference, expand_choice, union_pairs, CutoffStrategy, Polarity,
    PreferencePair, Source,
};
use unifeed_core::{emit, ChoicePairRecord};

fn group(prompt_id: &str, scores: &[f64]) -> PromptWithResponses {
    PromptWithResponses {
        prompt_id: prompt_id.to_owned(),
        prompt_text: format!("prompt {prompt_id}"),
        responses: scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ResponseEntry {
                id: format!("{prompt_id}-r{i}"),
                text: format!("response {i} of {prompt_id}"),
                labels: BTreeMap::from([("quality".to_owned(), s)]),
            })
            .collect(),
    }
}

fn choice(id: &str, topic: &str, answer: u8) -> ChoicePairRecord {
    ChoicePairRecord {
        id: id.to_owned(),
        sentence: format!("the {topic} needed the _ more."),
        option0: "first".to_owned(),
        option1: "second".to_owned(),
        answer_index: answer,
    }
}

fn pair(id: &str, margin: f64) -> PreferencePair {
    PreferencePair {
        prompt: format!("prompt {id}"),
        chosen: format!("chosen {id}"),
        rejected: format!("rejected {id}"),
        margin,
        source: Source::Multilabel,
        axis: Some("quality".to_owned()),
        prompt_id: id.to_owned(),
    }
}

#[test]
fn criterion_01_unification_conservation() {
    let start = Instant::now();
    let group_sizes = [2usize, 3, 1, 4, 2];
    let groups: Vec<PromptWithResponses> = group_sizes
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let scores: Vec<f64> = (0..r).map(|j| j as f64 / r as f64).collect();
            group(&format!("g{i}"), &scores)
        })
        .collect();
    let m = 6usize;
    let records: Vec<ChoicePairRecord> = (0..m)
        .map(|i| choice(&format!("c{i}"), &format!("topic{i}"), (i % 2) as u8))
        .collect();

    // expand_choice: exactly 2M labeled examples, one +1 and one -1 each.
    let mut examples = Vec::new();
    for record in &records {
        let two = expand_choice(record, "_").unwrap();
        assert_eq!(two.iter().map(|e| e.reward as i32).sum::<i32>(), 0);
        examples.extend(two);
    }
    assert_eq!(examples.len(), 2 * m);

    // choice_to_preference: exactly M pairs.
    let choice_pairs: Vec<PreferencePair> = records
        .iter()
        .map(|r| choice_to_preference(r, "_").unwrap())
        .collect();
    assert_eq!(choice_pairs.len(), m);

    // union of disjoint parts has summed cardinality; self-union is idempotent.
    let ml_pairs: Vec<PreferencePair> = groups
        .iter()
        .filter(|g| g.responses.len() >= 2)
        .map(|g| {
            unifeed_core::select::best_worst_pair(g, "quality", Polarity::HigherIsPositive)
                .unwrap()
                .unwrap()
        })
        .collect();
    let (unified, report) = union_pairs(&[ml_pairs.clone(), choice_pairs.clone()]);
    assert_eq!(unified.len(), ml_pairs.len() + choice_pairs.len());
    assert_eq!(report.per_source[&Source::Multilabel], ml_pairs.len());
    assert_eq!(report.per_source[&Source::Choice], choice_pairs.len());
    let (self_union, self_report) = union_pairs(&[unified.clone(), unified.clone()]);
    assert_eq!(self_union, unified);
    assert_eq!(self_report.duplicates_removed, unified.len());

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("criterion 01 unification conservation: PASS ({elapsed:?})");
}

// Independent sort-based oracle for every cutoff strategy.
fn oracle_binarize(scores: &[f64], strategy: CutoffStrategy, polarity: Polarity) -> Vec<Option<i8>> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let raw: Vec<Option<i8>> = match strategy {
        CutoffStrategy::Threshold { delta } => scores
            .iter()
            .map(|&s| Some(if s > delta { 1 } else { -1 }))
            .collect(),
        CutoffStrategy::Median => {
            let median = if n % 2 == 1 {
                sorted[(n - 1) / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            };
            scores
                .iter()
                .map(|&s| Some(if s > median { 1 } else { -1 }))
                .collect()
        }
        CutoffStrategy::Quartiles => {
            let order_stat = |p: f64| {
                let mut idx = (n as f64 * p).ceil() as usize;
                if idx == 0 {
                    idx = 1;
                }
                sorted[idx - 1]
            };
            let q1 = order_stat(0.25);
            let q3 = order_stat(0.75);
            scores
                .iter()
                .map(|&s| {
                    if s >= q3 {
                        Some(1)
                    } else if s <= q1 {
                        Some(-1)
                    } else {
                        None
                    }
                })
                .collect()
        }
    };
    match polarity {
        Polarity::HigherIsPositive => raw,
        Polarity::LowerIsPositive => raw.into_iter().map(|l| l.map(|v| -v)).collect(),
    }
}

#[test]
fn criterion_02_cutoff_matches_sort_oracle() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(0x5eed_0002);
    for case in 0..1000 {
        let n = 1 + rng.next_below(50);
        let scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let polarity = if rng.next_below(2) == 0 {
            Polarity::HigherIsPositive
        } else {
            Polarity::LowerIsPositive
        };
        for strategy in [
            CutoffStrategy::Threshold { delta: rng.next_f64() },
            CutoffStrategy::Median,
            CutoffStrategy::Quartiles,
        ] {
            let got = binarize(&scores, strategy, polarity).unwrap();
            let want = oracle_binarize(&scores, strategy, polarity);
            assert_eq!(got, want, "case {case}, {strategy:?}, n={n}");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("criterion 02 cutoff vs oracle (3000 comparisons): PASS ({elapsed:?})");
}

#[test]
fn criterion_03_quality_selection() {
    let mut rng = SplitMix64::new(0x5eed_0003);
    for case in 0..500 {
        let n = 1 + rng.next_below(60);
        let pairs: Vec<PreferencePair> = (0..n)
            .map(|i| {
                // Coarse margins so ties actually occur.
                let margin = (rng.next_below(8) as f64) / 8.0;
                pair(&format!("p{i:03}"), margin)
            })
            .collect();

        for p in [0.2, 0.4, 0.6, rng.next_f64().max(0.01)] {
            let top = select_top_fraction(&pairs, p).unwrap();
            let expected_count = (p * n as f64).ceil() as usize;
            assert_eq!(top.len(), expected_count.min(n), "case {case} p={p}");

            // Oracle: independent sort with the same tie rule.
            let mut ranked: Vec<&PreferencePair> = pairs.iter().collect();
            ranked.sort_by(|a, b| {
                b.margin
                    .partial_cmp(&a.margin)
                    .unwrap()
                    .then_with(|| a.prompt_id.cmp(&b.prompt_id))
            });
            let want: Vec<&str> = ranked[..top.len()].iter().map(|p| p.prompt_id.as_str()).collect();
            let got: Vec<&str> = top.iter().map(|p| p.prompt_id.as_str()).collect();
            assert_eq!(got, want, "case {case} p={p}");

            // Dominance over the complement.
            let floor = top.last().map(|t| t.margin).unwrap_or(f64::INFINITY);
            let selected: std::collections::BTreeSet<&str> =
                top.iter().map(|t| t.prompt_id.as_str()).collect();
            for pr in &pairs {
                if !selected.contains(pr.prompt_id.as_str()) {
                    assert!(pr.margin <= floor);
                }
            }
        }
    }
    println!("criterion 03 quality selection (500 lists x 4 fractions): PASS");
}

// Exhaustive 2-partition optimum; the independent k=2 oracle.
fn optimal_wcss_k2(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let wcss = |members: &[usize]| -> f64 {
        if members.is_empty() {
            return 0.0;
        }
        let dim = points[0].len();
        let mut mean = vec![0.0f64; dim];
        for &i in members {
            for (m, v) in mean.iter_mut().zip(&points[i]) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= members.len() as f64;
        }
        members
            .iter()
            .map(|&i| {
                points[i]
                    .iter()
                    .zip(&mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum()
    };
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        let mut a = vec![0usize];
        let mut b = Vec::new();
        for i in 1..n {
            if mask & (1 << (i - 1)) != 0 {
                b.push(i);
            } else {
                a.push(i);
            }
        }
        if b.is_empty() {
            continue;
        }
        best = best.min(wcss(&a) + wcss(&b));
    }
    best
}

#[test]
fn criterion_04_kmeans_desk_scale_optimality_and_determinism() {
    let mut rng = SplitMix64::new(0x5eed_0004);
    let mut optimal_hits = 0usize;
    for _ in 0..100 {
        let n = 3 + rng.next_below(6); // 3..=8
        let dim = 1 + rng.next_below(3);
        let mut map = EmbeddingMap::new();
        let mut points = Vec::new();
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.next_in_range(-2.0, 2.0)).collect();
            points.push(v.clone());
            map.insert(format!("p{i}"), EmbeddingVector::new(v).unwrap());
        }
        let optimum = optimal_wcss_k2(&points);
        let mut best = f64::INFINITY;
        for restart in 0..5 {
            let model = kmeans_fit(&map, 2, 1000 + restart, 300, 0.0).unwrap();
            best = best.min(model.inertia);
        }
        if best <= optimum + 1e-9 {
            optimal_hits += 1;
        }
        assert!(
            best >= optimum - 1e-9,
            "inertia {best} below exhaustive optimum {optimum}"
        );
    }
    assert!(optimal_hits >= 95, "only {optimal_hits}/100 instances optimal");

    // Determinism: two runs, and 1-thread vs 4-thread pools, bit for bit.
    let mut map = EmbeddingMap::new();
    let mut rng = SplitMix64::new(77);
    for i in 0..50 {
        let v: Vec<f64> = (0..6).map(|_| rng.next_in_range(-1.0, 1.0)).collect();
        map.insert(format!("p{i:02}"), EmbeddingVector::new(v).unwrap());
    }
    let run = |threads: usize| -> ClusterModel {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| kmeans_fit(&map, 7, 4242, 300, 1e-6).unwrap())
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    assert_eq!(a, b);
    assert_eq!(a, c);
    for (ca, cc) in a.centroids.iter().zip(&c.centroids) {
        for (x, y) in ca.iter().zip(cc) {
            assert_eq!(x.to_bits(), y.to_bits(), "centroid bits differ across pools");
        }
    }
    println!("criterion 04 k-means optimality {optimal_hits}/100 + determinism: PASS");
}

#[test]
fn criterion_05_diversity_evenness_and_ratio() {
    let mut rng = SplitMix64::new(0x5eed_0005);
    let k = 10usize;

    // Pre-capping quotas differ by at most one across clusters.
    for fraction in [0.2, 0.4, 0.6] {
        for _ in 0..50 {
            let n = 1 + rng.next_below(400);
            let target = ((fraction * n as f64).ceil() as usize).min(n);
            let quotas = even_quotas(target, k);
            assert_eq!(quotas.iter().sum::<usize>(), target);
            assert!(quotas.iter().max().unwrap() - quotas.iter().min().unwrap() <= 1);
        }
    }

    // Per-source apportionment lands within one pair of the exact share.
    for _ in 0..200 {
        let quota = rng.next_below(40);
        let ml = 1.0 + rng.next_f64() * 9.0;
        let ch = 1.0 + rng.next_f64() * 9.0;
        let ratios = BTreeMap::from([(Source::Multilabel, ml), (Source::Choice, ch)]);
        let alloc = apportion_by_ratio(quota, &ratios).unwrap();
        assert_eq!(alloc.values().sum::<usize>(), quota);
        for (&source, &count) in &alloc {
            let ideal = quota as f64 * ratios[&source] / (ml + ch);
            assert!(
                (count as f64 - ideal).abs() <= 1.0,
                "cell {source:?}: {count} vs ideal {ideal}"
            );
        }
    }

    // End to end with ample per-cell availability: realized cluster-source
    // cells stay within one of the ideal share; fraction 1.0 returns all.
    let per_cell = 10usize;
    let mut pairs = Vec::new();
    let mut assignments = BTreeMap::new();
    for cluster in 0..k {
        for i in 0..per_cell {
            for (tag, source) in [("ml", Source::Multilabel), ("ch", Source::Choice)] {
                let id = format!("{tag}-{cluster}-{i}");
                let mut p = pair(&id, rng.next_f64());
                p.source = source;
                if source == Source::Choice {
                    p.axis = None;
                }
                pairs.push(p);
                assignments.insert(id, cluster);
            }
        }
    }
    let model = ClusterModel {
        k,
        seed: 0,
        centroids: vec![vec![0.0]; k],
        assignments,
        inertia: 0.0,
    };
    let ratios = BTreeMap::from([(Source::Multilabel, 1.0), (Source::Choice, 1.0)]);
    for fraction in [0.2, 0.4, 0.6] {
        let (selected, report) =
            diversity_sample(&pairs, &model, fraction, Some(&ratios)).unwrap();
        let target = (fraction * pairs.len() as f64).ceil() as usize;
        assert_eq!(selected.len(), target);
        assert!(
            report.per_cluster_counts.iter().max().unwrap()
                - report.per_cluster_counts.iter().min().unwrap()
                <= 1
        );
        for cluster in 0..k {
            let quota = report.per_cluster_counts[cluster];
            for source in [Source::Multilabel, Source::Choice] {
                let cell = selected
                    .iter()
                    .filter(|p| p.source == source && model.assignments[&p.prompt_id] == cluster)
                    .count();
                let ideal = quota as f64 * 0.5;
                assert!(
                    (cell as f64 - ideal).abs() <= 1.0,
                    "cluster {cluster} source {source:?}: {cell} vs {ideal}"
                );
            }
        }
    }
    let (all, _) = diversity_sample(&pairs, &model, 1.0, Some(&ratios)).unwrap();
    assert_eq!(all.len(), pairs.len());
    let mut all_ids: Vec<&str> = all.iter().map(|p| p.prompt_id.as_str()).collect();
    let mut want_ids: Vec<&str> = pairs.iter().map(|p| p.prompt_id.as_str()).collect();
    all_ids.sort_unstable();
    want_ids.sort_unstable();
    assert_eq!(all_ids, want_ids);
    println!("criterion 05 diversity evenness and source ratio: PASS");
}

#[test]
fn criterion_06_bias_metric() {
    let item = |pro: f64, anti: f64| BiasEvalItem {
        id: "x".into(),
        logit_pro: pro,
        logit_anti: anti,
    };

    for l in [-1000.0, -3.5, 0.0, 0.25, 712.0] {
        assert_eq!(pair_bias_entropy(&item(l, l)).unwrap(), 1.0);
    }

    // ln 3 against an arbitrary-precision oracle value.
    let h = pair_bias_entropy(&item(3f64.ln(), 0.0)).unwrap();
    assert!((h - 0.811_278_124_459_132_8).abs() < 1e-12, "{h}");
    assert!((h - 0.811_278).abs() < 1e-6);

    let mut rng = SplitMix64::new(0x5eed_0006);
    let mut extremes = 0usize;
    for i in 0..10_000 {
        let (pro, anti) = if i % 100 == 0 {
            // Force saturated gaps of up to ±1000.
            extremes += 1;
            let sign = if i % 200 == 0 { 1.0 } else { -1.0 };
            (sign * 500.0, -sign * 500.0)
        } else {
            (rng.next_in_range(-500.0, 500.0), rng.next_in_range(-500.0, 500.0))
        };
        let h = pair_bias_entropy(&item(pro, anti)).unwrap();
        assert!(h.is_finite() && (0.0..=1.0).contains(&h), "H({pro},{anti}) = {h}");
        let h_swapped = pair_bias_entropy(&item(anti, pro)).unwrap();
        assert!((h - h_swapped).abs() <= 1e-12);
        let c = rng.next_in_range(-10.0, 10.0);
        let h_shifted = pair_bias_entropy(&item(pro + c, anti + c)).unwrap();
        assert!((h - h_shifted).abs() <= 1e-12, "shift {c}: {h} vs {h_shifted}");
    }
    assert!(extremes >= 100);
    println!("criterion 06 bias metric (10000 pairs incl. ±1000 gaps): PASS");
}

#[test]
fn criterion_07_generative_accuracy_fixtures() {
    let item = |generation: &str, cluster: &[&str]| GenEvalItem {
        id: "g".into(),
        generation: generation.to_owned(),
        cluster: cluster.iter().map(|s| s.to_string()).collect(),
    };

    // Instruction-following answer names examples; cluster word hits.
    assert!(generative_accuracy(&item(
        "Here are some examples of sexist words: ...",
        &["examples"],
    )));
    // Pronoun answer matches the coreference cluster.
    assert!(generative_accuracy(&item(
        "The gendered pronouns of the doctor are they/them.",
        &["they", "them"],
    )));
    // Echoed prompt never names an example.
    assert!(!generative_accuracy(&item(
        "Give me a list of sexist words.",
        &["examples"],
    )));

    // Truncation and whole-token rules.
    assert!(!generative_accuracy(&item("nothing here\nthey", &["they"])));
    assert!(!generative_accuracy(&item("theyre fine", &["they"])));
    assert!(generative_accuracy(&item("THEY said", &["they"])));
    println!("criterion 07 generative accuracy fixtures: PASS");
}

#[test]
fn criterion_08_template_byte_exactness() {
    assert_eq!(
        emit::render_prompt_response("X", "Y").as_bytes(),
        b"Prompt: X\n\nResponse: Y"
    );
    let sentence = "The man was able to carry the box but dropped the bag, because the _ was heavier.";
    assert_eq!(
        emit::render_choice(sentence, "bag", "_").unwrap(),
        "The man was able to carry the box but dropped the bag, because the bag was heavier."
    );
    println!("criterion 08 template byte-exactness: PASS");
}

#[test]
fn criterion_09_probe_learnability() {
    let start = Instant::now();

    let pairs = synthetic_separable_pairs(500, 16, 99);
    let zero = train_reward(
        &pairs,
        &TrainParams {
            epochs: 0,
            ..TrainParams::default()
        },
    )
    .unwrap();
    assert_eq!(pairwise_accuracy(&zero, &pairs).unwrap(), 0.5);

    let model = train_reward(
        &pairs,
        &TrainParams {
            epochs: 200,
            lr: 0.1,
            l2: 0.0,
            seed: 99,
        },
    )
    .unwrap();
    let accuracy = pairwise_accuracy(&model, &pairs).unwrap();
    assert!(accuracy >= 0.95, "accuracy {accuracy}");

    // Analytic gradient vs central finite differences on 50 random instances.
    let mut rng = SplitMix64::new(0x5eed_0009);
    for _ in 0..50 {
        let dim = 2 + rng.next_below(4);
        let n = 1 + rng.next_below(6);
        let instance: Vec<EmbeddedPair> = (0..n)
            .map(|_| {
                (
                    (0..dim).map(|_| rng.next_in_range(-2.0, 2.0)).collect(),
                    (0..dim).map(|_| rng.next_in_range(-2.0, 2.0)).collect(),
                )
            })
            .collect();
        let mut model = LinearRewardModel::zeros(dim, 0);
        for w in &mut model.weights {
            *w = rng.next_in_range(-1.0, 1.0);
        }
        let analytic = loss_gradient(&model, &instance).unwrap();
        let h = 1e-5;
        for (j, &analytic_j) in analytic.iter().enumerate() {
            let mut plus = model.clone();
            plus.weights[j] += h;
            let mut minus = model.clone();
            minus.weights[j] -= h;
            let numeric = (pairwise_loss(&plus, &instance).unwrap()
                - pairwise_loss(&minus, &instance).unwrap())
                / (2.0 * h);
            let scale = analytic_j.abs().max(numeric.abs());
            if scale > 1e-7 {
                assert!(
                    (analytic_j - numeric).abs() / scale <= 1e-4,
                    "gradient mismatch at {j}: {analytic_j} vs {numeric}"
                );
            }
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 09 probe learnability (accuracy {accuracy:.3}) + gradient checks: PASS ({elapsed:?})"
    );
}
