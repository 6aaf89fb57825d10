use igmseg_core::mws::{edge_order, mutex_watershed_clusters, Edge, EdgeKind};
use proptest::prelude::*;

/// Naive replay: explicit cluster ids per node and a table of constrained node pairs.
fn replay(n: usize, edges: &[Edge]) -> Vec<u32> {
    let mut sorted = edges.to_vec();
    sorted.sort_by(edge_order);
    let mut cluster: Vec<usize> = (0..n).collect();
    let mut constraints: Vec<(usize, usize)> = Vec::new();
    for e in sorted.iter().filter(|e| e.weight > 0.0) {
        let (cu, cv) = (cluster[e.u], cluster[e.v]);
        if cu == cv {
            continue;
        }
        let blocked = constraints.iter().any(|&(a, b)| {
            let (ca, cb) = (cluster[a], cluster[b]);
            (ca == cu && cb == cv) || (ca == cv && cb == cu)
        });
        match e.kind {
            EdgeKind::Attractive if !blocked => {
                for c in cluster.iter_mut() {
                    if *c == cv {
                        *c = cu;
                    }
                }
            }
            EdgeKind::Attractive => {}
            EdgeKind::Mutex => constraints.push((e.u, e.v)),
        }
    }
    let mut first: Vec<(usize, u32)> = Vec::new();
    cluster
        .iter()
        .map(|c| match first.iter().find(|(k, _)| k == c) {
            Some(&(_, l)) => l,
            None => {
                let l = first.len() as u32 + 1;
                first.push((*c, l));
                l
            }
        })
        .collect()
}

fn graph() -> impl Strategy<Value = (usize, Vec<Edge>)> {
    (2usize..=8).prop_flat_map(|n| {
        let edge = (0..n, 0..n, 0u8..=10, any::<bool>()).prop_filter_map("self loop", |(a, b, w, att)| {
            (a != b).then(|| Edge {
                u: a.min(b),
                v: a.max(b),
                // coarse weights force plenty of ties
                weight: w as f64 / 10.0,
                kind: if att { EdgeKind::Attractive } else { EdgeKind::Mutex },
            })
        });
        (Just(n), proptest::collection::vec(edge, 0..=20))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_naive_replay((n, edges) in graph()) {
        prop_assert_eq!(mutex_watershed_clusters(n, &edges).unwrap(), replay(n, &edges));
    }

    #[test]
    fn storage_order_is_irrelevant((n, edges) in graph(), rot in 0usize..20) {
        let mut shuffled = edges.clone();
        shuffled.reverse();
        if !shuffled.is_empty() {
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
        }
        prop_assert_eq!(
            mutex_watershed_clusters(n, &edges).unwrap(),
            mutex_watershed_clusters(n, &shuffled).unwrap()
        );
    }

    #[test]
    fn attractive_only_gives_components((n, edges) in graph()) {
        let attractive: Vec<Edge> = edges.into_iter().filter(|e| e.kind == EdgeKind::Attractive).collect();
        let labels = mutex_watershed_clusters(n, &attractive).unwrap();
        for e in attractive.iter().filter(|e| e.weight > 0.0) {
            prop_assert_eq!(labels[e.u], labels[e.v]);
        }
        // no two clusters are joined by a positive edge, so the count equals the component count
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x { let r = find(p, p[x]); p[x] = r; }
            p[x]
        }
        for e in attractive.iter().filter(|e| e.weight > 0.0) {
            let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
            parent[a] = b;
        }
        let roots: std::collections::HashSet<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        prop_assert_eq!(*labels.iter().max().unwrap() as usize, roots.len());
    }
}
