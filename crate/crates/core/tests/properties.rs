use proptest::collection::{btree_set, vec};
use proptest::prelude::*;

use recpoison::attack::{parse_profiles, profiles_to_text, wmw, FakeUserProfile};
use recpoison::dataset::parse;
use recpoison::detect::extract_features;
use recpoison::eval::hit_ratio;
use recpoison::graph::{build_transition, stationary};
use recpoison::influence::{greedy_select, select_top, set_influence};
use recpoison::{partial_view, train, Rating, RatingDataset, Scorer, TrainConfig};

/// Random rating matrices as (n_users, n_items, edges).
fn ratings() -> impl Strategy<Value = RatingDataset> {
    (1usize..8, 1usize..8).prop_flat_map(|(nu, ni)| {
        btree_set((0..nu, 0..ni), 1..=nu * ni).prop_flat_map(move |cells| {
            let cells: Vec<(usize, usize)> = cells.into_iter().collect();
            vec(1u8..=5, cells.len()).prop_map(move |vals| {
                let r = cells.iter().zip(&vals).map(|(&(user, item), &value)| Rating { user, item, value });
                RatingDataset::from_ratings(nu, ni, 5, r).unwrap()
            })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_round_trip(ds in ratings()) {
        let text = ds.to_text();
        let back = parse(&text, 5, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.n_edges(), ds.n_edges());
    }

    #[test]
    fn wmw_is_a_symmetric_sigmoid(x in -50.0f64..50.0, b in 0.01f64..5.0) {
        let g = wmw(x, b);
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert!((g + wmw(-x, b) - 1.0).abs() <= 1e-12);
        prop_assert!(wmw(x + 0.1, b) >= g);
    }

    #[test]
    fn set_influence_is_modular(pi in vec(0.0f64..10.0, 1..30), seed in any::<u64>()) {
        let n = pi.len();
        let a: Vec<usize> = (0..n).filter(|u| (seed >> (u % 64)) & 1 == 1).collect();
        let c: Vec<usize> = (0..n).filter(|u| (seed >> (u % 64)) & 1 == 0).collect();
        let all: Vec<usize> = (0..n).collect();
        let total = set_influence(&pi, &all);
        prop_assert!((set_influence(&pi, &a) + set_influence(&pi, &c) - total).abs() <= 1e-9 * (1.0 + total));
        prop_assert!(set_influence(&pi, &a) <= total + 1e-12);
    }

    #[test]
    fn greedy_equals_top_delta(pi in vec(0.0f64..10.0, 1..20), k in 1usize..20) {
        let delta = k.min(pi.len());
        let universe: Vec<usize> = (0..pi.len()).collect();
        let g = greedy_select(&universe, delta, |s| set_influence(&pi, s)).unwrap();
        let t = select_top(&pi, delta).unwrap();
        prop_assert!((set_influence(&pi, &g) - set_influence(&pi, &t)).abs() <= 1e-9);
    }

    #[test]
    fn top_n_skips_rated_and_is_sorted(ds in ratings(), n in 1usize..6) {
        let m = train(&ds, &TrainConfig { d: 2, sweeps: 5, ..Default::default() }).unwrap();
        for u in 0..ds.n_users() {
            let list = m.top_n(&ds, u, n);
            prop_assert!(list.items.len() <= n);
            prop_assert!(list.items.iter().all(|&i| !ds.has_rated(u, i)));
            prop_assert!(list.scores.windows(2).all(|w| w[0] >= w[1]));
        }
        let hr = hit_ratio(&m, &ds, 0, n, ds.n_users());
        prop_assert!((0.0..=1.0).contains(&hr));
    }

    #[test]
    fn walk_scores_are_a_distribution(ds in ratings(), alpha in 0.05f64..0.95) {
        let q = build_transition(&ds, alpha).unwrap();
        for u in 0..ds.n_users() {
            let s = stationary(&q, u).unwrap();
            prop_assert!(s.p.iter().all(|&v| v >= -1e-15));
            prop_assert!((s.p.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn knowledge_view_is_a_growing_subset(ds in ratings(), t in 0usize..8, f in 0.05f64..1.0) {
        let t = t % ds.n_items();
        let small = partial_view(&ds, t, f / 2.0).unwrap();
        let big = partial_view(&ds, t, f).unwrap();
        prop_assert!(small.visible_edges.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(small.visible_edges.iter().all(|e| big.visible_edges.binary_search(e).is_ok()));
        prop_assert!(big.visible_edges.len() as f64 >= f * ds.n_edges() as f64 - 1e-9);
        let full = partial_view(&ds, t, 1.0).unwrap();
        prop_assert_eq!(full.visible_edges.len(), ds.n_edges());
    }

    #[test]
    fn features_are_finite_and_nonnegative(ds in ratings()) {
        for f in extract_features(&ds) {
            prop_assert!(f.to_array().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn profile_text_round_trip(ds in ratings(), picks in vec((0usize..8, 0u8..=5), 1..6)) {
        let target = 0;
        let mut ratings: Vec<(usize, u8)> = picks.iter().map(|&(i, r)| (i % ds.n_items(), r)).collect();
        ratings.retain(|&(i, _)| i != target);
        ratings.push((target, 5));
        ratings.sort_unstable();
        ratings.dedup_by_key(|r| r.0);
        let p = FakeUserProfile {
            id: ds.n_users(),
            name: "fake0".into(),
            target,
            fillers: ratings.iter().map(|r| r.0).filter(|&i| i != target).collect(),
            ratings,
            global_fallback: false,
        };
        let text = profiles_to_text(&ds, std::slice::from_ref(&p));
        let back = parse_profiles(&text, &ds, Some(target)).unwrap();
        prop_assert_eq!(&back[0].ratings, &p.ratings);
        prop_assert_eq!(&back[0].fillers, &p.fillers);
    }
}
