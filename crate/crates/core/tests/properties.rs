use morpher_core::eval::{argmax, predict_from_embeddings};
use morpher_core::gnn::{gcn_forward, init_gnn_random, normalize_adjacency, readout_mean};
use morpher_core::graph::{induce_ego_graph, Graph};
use morpher_core::prompt::{build_prompted, init_graph_prompt, improved_structure, GraphPrompt, PromptStyle};
use morpher_core::text::{prompted_text_embedding, TextEmbeddingStore, TextPrompt};
use morpher_core::train::contrastive_loss;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn graph_strategy(max_nodes: usize, d: usize) -> impl Strategy<Value = Graph> {
    (1..=max_nodes).prop_flat_map(move |n| {
        let pairs = if n > 1 { n * (n - 1) / 2 } else { 0 };
        (
            proptest::collection::vec(any::<bool>(), pairs),
            proptest::collection::vec(-2.0f64..2.0, n * d),
        )
            .prop_map(move |(mask, x)| {
                let mut edges = Vec::new();
                let mut k = 0;
                for u in 0..n {
                    for v in u + 1..n {
                        if mask[k] {
                            edges.push((u, v));
                        }
                        k += 1;
                    }
                }
                Graph::new(n, &edges, Array2::from_shape_vec((n, d), x).unwrap()).unwrap()
            })
    })
}

fn permuted(g: &Graph, perm: &[usize]) -> Graph {
    // Node i of `g` becomes node perm[i].
    let mut x = Array2::zeros(g.features().dim());
    for (i, &p) in perm.iter().enumerate() {
        x.row_mut(p).assign(&g.features().row(i));
    }
    let edges: Vec<(usize, usize)> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    Graph::new(g.num_nodes(), &edges, x).unwrap()
}

fn perm_strategy(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn close(a: &Array1<f64>, b: &Array1<f64>, tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn improved_cross_edges_never_exceed_cap(g in graph_strategy(12, 4), n_g in 1usize..8, seed in any::<u64>(), mult in 0.1f64..5.0) {
        let prompt = init_graph_prompt(n_g, 4, seed, mult).unwrap().with_thresholds(0.5, 0.1).unwrap();
        let s = improved_structure(&g, &prompt).unwrap();
        prop_assert!(s.cross.len() <= g.num_nodes().max(g.num_edges()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prompted_readout_invariant_under_node_permutation(
        (g, perm) in graph_strategy(8, 3).prop_flat_map(|g| { let n = g.num_nodes(); (Just(g), perm_strategy(n)) }),
        seed in any::<u64>(),
        aio in any::<bool>(),
    ) {
        let style = if aio { PromptStyle::Aio } else { PromptStyle::Improved };
        let prompt = init_graph_prompt(3, 3, seed, 1.0).unwrap().with_thresholds(0.5, style.default_delta_cross()).unwrap();
        let gnn = init_gnn_random(3, 5, 4, seed ^ 1).unwrap();
        let readout = |g: &Graph| {
            let pg = build_prompted(g, &prompt, style).unwrap();
            let adj = normalize_adjacency(pg.num_nodes(), pg.edges()).unwrap();
            let (h, _) = gcn_forward(&adj, pg.features(), &gnn).unwrap();
            (readout_mean(&h).unwrap(), pg.inner_edge_count(), pg.cross_edge_count())
        };
        let (r1, i1, c1) = readout(&g);
        let (r2, i2, c2) = readout(&permuted(&g, &perm));
        prop_assert_eq!((i1, c1), (i2, c2));
        prop_assert!(close(&r1, &r2, 1e-10));
    }

    #[test]
    fn gcn_is_permutation_equivariant(
        (g, perm) in graph_strategy(8, 3).prop_flat_map(|g| { let n = g.num_nodes(); (Just(g), perm_strategy(n)) }),
        seed in any::<u64>(),
    ) {
        let gnn = init_gnn_random(3, 6, 4, seed).unwrap();
        let out = |g: &Graph| {
            let adj = normalize_adjacency(g.num_nodes(), g.edges()).unwrap();
            gcn_forward(&adj, g.features(), &gnn).unwrap().0
        };
        let h = out(&g);
        let hp = out(&permuted(&g, &perm));
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!(close(&h.row(i).to_owned(), &hp.row(p).to_owned(), 1e-10));
        }
    }

    #[test]
    fn gcn_is_positively_homogeneous(g in graph_strategy(8, 3), alpha in 0.01f64..100.0, seed in any::<u64>()) {
        let gnn = init_gnn_random(3, 6, 4, seed).unwrap();
        let adj = normalize_adjacency(g.num_nodes(), g.edges()).unwrap();
        let (h, _) = gcn_forward(&adj, g.features(), &gnn).unwrap();
        let (hs, _) = gcn_forward(&adj, &(g.features() * alpha), &gnn).unwrap();
        for (a, b) in h.iter().zip(hs.iter()) {
            prop_assert!((a * alpha - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn ego_graphs_grow_with_hops_and_reach_a_fixpoint(g in graph_strategy(10, 1), c in 0usize..10, hops in 0usize..4) {
        let c = c % g.num_nodes();
        let small = induce_ego_graph(&g, &[c], hops).unwrap();
        let large = induce_ego_graph(&g, &[c], hops + 1).unwrap();
        let ids = |e: &Graph| e.node_ids().unwrap().to_vec();
        let (s, l) = (ids(&small), ids(&large));
        prop_assert!(s.iter().all(|v| l.contains(v)));
        prop_assert!(small.num_edges() <= large.num_edges());
        let full = induce_ego_graph(&g, &[c], g.num_nodes()).unwrap();
        let beyond = induce_ego_graph(&g, &[c], g.num_nodes() + 3).unwrap();
        prop_assert_eq!(ids(&full), ids(&beyond));
        prop_assert_eq!(full.num_edges(), beyond.num_edges());
    }

    #[test]
    fn contrastive_loss_ignores_batch_order(
        (rows, perm) in (2usize..6).prop_flat_map(|b| (proptest::collection::vec(-1.0f64..1.0, b * 8), perm_strategy(b))),
        tau in 0.05f64..2.0,
    ) {
        let b = perm.len();
        let vecs: Vec<Array1<f64>> = rows.chunks(4).map(|c| Array1::from(c.to_vec())).collect();
        let (zg, zt) = vecs.split_at(b);
        let l = contrastive_loss(zg, zt, tau).unwrap();
        let zg_p: Vec<_> = perm.iter().map(|&i| zg[i].clone()).collect();
        let zt_p: Vec<_> = perm.iter().map(|&i| zt[i].clone()).collect();
        let lp = contrastive_loss(&zg_p, &zt_p, tau).unwrap();
        prop_assert!((l - lp).abs() <= 1e-12 * (1.0 + l.abs()));
        prop_assert!(l >= 0.0);
    }

    #[test]
    fn argmax_ignores_positive_scaling_of_labels(
        zg in proptest::collection::vec(-1.0f64..1.0, 5),
        labels in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 5), 2..6),
        scale in 1e-3f64..1e3,
    ) {
        let zg = Array1::from(zg);
        let zt: Vec<Array1<f64>> = labels.into_iter().map(Array1::from).collect();
        let scaled: Vec<Array1<f64>> = zt.iter().map(|z| z * scale).collect();
        let scores: Array1<f64> = zt.iter().map(|z| zg.dot(z)).collect();
        let best = predict_from_embeddings(&zg, &zt);
        let scaled_best = predict_from_embeddings(&zg, &scaled);
        // Rounding may reorder near-ties; only distinct maxima must agree.
        let top = scores[best];
        let runner_up = scores.iter().enumerate().filter(|&(i, _)| i != best).map(|(_, &s)| s).fold(f64::NEG_INFINITY, f64::max);
        if top - runner_up > 1e-9 {
            prop_assert_eq!(best, scaled_best);
        }
        prop_assert_eq!(best, argmax(scores.view()));
    }

    #[test]
    fn text_readout_is_affine_in_the_prompt(
        p1 in proptest::collection::vec(-1.0f64..1.0, 6),
        p2 in proptest::collection::vec(-1.0f64..1.0, 6),
        tokens in proptest::collection::vec(-1.0f64..1.0, 9),
    ) {
        let store = TextEmbeddingStore::new(vec![("label".into(), Array2::from_shape_vec((3, 3), tokens).unwrap())]).unwrap();
        let prompt = |v: Vec<f64>| TextPrompt::new(Array2::from_shape_vec((2, 3), v).unwrap()).unwrap();
        let h = |p: &TextPrompt| prompted_text_embedding("label", p, &store).unwrap();
        let sum: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a + b).collect();
        let lhs = h(&prompt(sum));
        let rhs = h(&prompt(p1)) + h(&prompt(p2)) - h(&prompt(vec![0.0; 6]));
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }
}

#[test]
fn near_zero_aio_prompt_wires_every_node_to_every_token() {
    let g = Graph::new(4, &[(0, 1), (1, 2), (2, 3)], Array2::eye(4)).unwrap();
    let prompt = GraphPrompt::new(Array2::from_elem((5, 4), 1e-3), 0.5, 0.3).unwrap();
    let pg = build_prompted(&g, &prompt, PromptStyle::Aio).unwrap();
    assert_eq!(pg.cross_edge_count(), 20);
}
