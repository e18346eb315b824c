use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use layoutpref::align::{alignment_report, procrustes_similarity, SimilarityAlignment};
use layoutpref::graph::{parse_graph, write_edge_list, Graph, GraphFormat};
use layoutpref::labels::{LabelRecord, LabelStore};
use layoutpref::layout::{display_permutation, is_permutation, layout, normalize, Algorithm, LayoutParams};
use layoutpref::llm::parse_choice;
use layoutpref::model::{
    entropy, inverse_permutation, raster_feature_dim, raster_features, soft_ce_loss, softmax, CandidateSample,
};

fn points(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-10.0f64..10.0), n)
}

fn two_configs() -> impl Strategy<Value = (Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    (3usize..12).prop_flat_map(|n| (points(n..=n), points(n..=n)))
}

fn spread(x: &[[f64; 2]]) -> f64 {
    let n = x.len() as f64;
    let cx = x.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = x.iter().map(|p| p[1]).sum::<f64>() / n;
    x.iter().map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>()
}

fn simplex() -> impl Strategy<Value = [f64; 8]> {
    prop::array::uniform8(0.0f64..1.0).prop_filter_map("nonzero mass", |x| {
        let s: f64 = x.iter().sum();
        (s > 1e-6).then(|| x.map(|v| v / s))
    })
}

fn permutation() -> impl Strategy<Value = [usize; 8]> {
    any::<u64>().prop_map(display_permutation)
}

fn connected_graph() -> impl Strategy<Value = Graph> {
    (3usize..14)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(any::<prop::sample::Index>(), n - 1),
                prop::collection::vec((0..n, 0..n), 0..n),
            )
        })
        .prop_map(|(n, parents, extra)| {
            let mut edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(i, p)| (p.index(i + 1), i + 1)).collect();
            edges.extend(extra.into_iter().filter(|(u, v)| u != v));
            let mut seen = std::collections::HashSet::new();
            edges.retain(|&(u, v)| seen.insert((u.min(v), u.max(v))));
            Graph::new("g", n, &edges).unwrap()
        })
}

fn record(graph: usize, annotator: usize, choice: usize) -> LabelRecord {
    LabelRecord {
        graph_id: format!("g{graph}"),
        annotator_id: format!("a{annotator}"),
        choice: Algorithm::ALL[choice],
        display_order: display_permutation((graph * 31 + annotator) as u64),
        duration_ms: 100 + graph as u64,
        hard: (graph + annotator) % 3 == 0,
        timestamp: Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap(),
    }
}

fn label_sets() -> impl Strategy<Value = Vec<LabelRecord>> {
    prop::collection::btree_map((0usize..12, 0usize..5), 0usize..8, 0..60)
        .prop_map(|m| m.into_iter().map(|((g, a), c)| record(g, a, c)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn procrustes_is_a_symmetric_similarity((x, y) in two_configs(), refl in any::<bool>()) {
        prop_assume!(spread(&x) > 1e-3 && spread(&y) > 1e-3);
        let s = procrustes_similarity(&x, &y, refl).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
        let t = procrustes_similarity(&y, &x, refl).unwrap();
        prop_assert!((s - t).abs() < 1e-9);
        // Allowing reflections can only help.
        prop_assert!(procrustes_similarity(&x, &y, true).unwrap() >= procrustes_similarity(&x, &y, false).unwrap() - 1e-12);
    }

    #[test]
    fn alignment_stays_in_range_and_ignores_labeler_order(recs in label_sets()) {
        let store = LabelStore::from_records(recs);
        let mut names: Vec<String> = store.annotators().map(str::to_string).collect();
        let a = alignment_report(&store, &names);
        names.reverse();
        let b = alignment_report(&store, &names);
        prop_assert_eq!(&a, &b);
        for v in [a.micro, a.macro_].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let m = a.matrix();
        for i in 0..m.len() {
            for j in 0..m.len() {
                prop_assert_eq!(m[i][j], m[j][i]);
            }
        }
    }

    #[test]
    fn label_files_round_trip(recs in label_sets()) {
        let store = LabelStore::from_records(recs);
        let text = store.to_jsonl();
        let (back, dups) = LabelStore::ingest(text.as_bytes()).unwrap();
        prop_assert!(dups.is_empty());
        prop_assert_eq!(back.records(), store.records());
        for r in store.records() {
            prop_assert_eq!(r.display_order[r.chosen_position()], r.choice.index());
        }
    }

    #[test]
    fn soft_targets_are_distributions(recs in label_sets()) {
        let store = LabelStore::from_records(recs);
        let ids: Vec<String> = store.graph_ids().map(str::to_string).collect();
        for id in ids {
            let t = store.soft_target(&id).unwrap();
            prop_assert!((t.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert_eq!(t.is_one_hot(), store.distinct_choices(&id) == 1);
        }
    }

    #[test]
    fn cross_entropy_bounds_entropy(p in simplex(), q in simplex()) {
        prop_assert!(soft_ce_loss(&p, &q) - entropy(&q) >= -1e-9);
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(logits in prop::array::uniform8(-50.0f64..50.0), c in -100.0f64..100.0) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted = softmax(&logits.map(|x| x + c));
        for k in 0..8 {
            prop_assert!((p[k] - shifted[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_a_sample_is_undone_by_the_inverse(perm in permutation(), order in permutation(), q in simplex()) {
        let s = CandidateSample {
            graph_id: "s".into(),
            features: (0..8).map(|k| vec![k as f64, -(k as f64)]).collect(),
            target: q,
            display_order: order,
        };
        prop_assert!(is_permutation(&perm));
        let back = s.permuted(&perm).permuted(&inverse_permutation(&perm));
        prop_assert_eq!(back, s);
    }

    #[test]
    fn edge_lists_round_trip(g in connected_graph()) {
        let back = parse_graph(&write_edge_list(&g), GraphFormat::EdgeList).unwrap();
        prop_assert_eq!(back.node_count(), g.node_count());
        prop_assert_eq!(back.edge_count(), g.edge_count());
        let mut a: Vec<usize> = (0..g.node_count()).map(|v| g.degree(v)).collect();
        let mut b: Vec<usize> = (0..back.node_count()).map(|v| back.degree(v)).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn parsed_choice_is_the_last_anchor(k in 1usize..=8, j in 1usize..=8, noise in "[a-z ,.]{0,40}") {
        let text = format!("{noise} In conclusion, I will pick layout {j}. {noise}\nResult: layout {k}");
        prop_assert_eq!(parse_choice(&text).unwrap().position, k);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn layouts_are_deterministic_and_normalize(g in connected_graph(), seed in any::<u64>(), a in 0usize..8) {
        let alg = Algorithm::ALL[a];
        let p = LayoutParams { max_iter_force: 200, ..LayoutParams::default() };
        let l1 = layout(&g, alg, &p, seed).unwrap();
        let l2 = layout(&g, alg, &p, seed).unwrap();
        prop_assert_eq!(&l1, &l2);
        prop_assert!(l1.coords.iter().all(|c| c[0].is_finite() && c[1].is_finite()));
        if let Ok(n) = normalize(&l1) {
            prop_assert!(n.coords.iter().all(|c| (0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1])));
        }
    }

    #[test]
    fn raster_features_have_fixed_length_and_range(g in connected_graph(), seed in any::<u64>(), levels in 1u32..4) {
        let l = layout(&g, Algorithm::Pmds, &LayoutParams::default(), seed).unwrap();
        let img = layoutpref::layout::render(
            &g,
            &layoutpref::layout::normalize_or_center(&l),
            &layoutpref::layout::RenderParams { size: 32, node_radius: 1, edge_width: 1 },
        )
        .unwrap();
        let f = raster_features(&img, levels).unwrap();
        prop_assert_eq!(f.len(), raster_feature_dim(levels));
        prop_assert!(f.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn similarity_alignment_is_monotone_in_alpha(recs in label_sets(), seed in any::<u64>()) {
        let store = LabelStore::from_records(recs);
        let ids: Vec<String> = store.graph_ids().map(str::to_string).collect();
        let mut sets = std::collections::HashMap::new();
        for (i, id) in ids.iter().enumerate() {
            let g = Graph::new(id.clone(), 5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]).unwrap();
            sets.insert(id.clone(), layoutpref::layout::layout_all(&g, seed.wrapping_add(i as u64)).unwrap());
        }
        let names: Vec<String> = store.annotators().map(str::to_string).collect();
        let mut sim = SimilarityAlignment::new(&sets, false);
        let mut prev = f64::INFINITY;
        for alpha in [0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0] {
            let Ok(v) = sim.micro(&store, &names, alpha) else { return Ok(()) };
            prop_assert!(v <= prev);
            if alpha == 0.0 {
                prop_assert_eq!(v, 1.0);
            }
            prev = v;
        }
    }
}
