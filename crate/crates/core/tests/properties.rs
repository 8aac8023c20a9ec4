//! Property tests for the parser grammar, attention distributions, matching
//! and mask algebra.

use proptest::prelude::*;
use tailor_core::alignment::{hungarian, CostMatrix};
use tailor_core::attention::{attention_map, js_divergence, AttentionMap, TAU_ATTENTION};
use tailor_core::grid::{BinaryMask, LatentGrid, LATENT_PIXELS};
use tailor_core::prompt::{parse, APTree, Lexicon};
use tailor_core::world::World;

fn adjective_pool() -> Vec<&'static str> {
    vec!["red", "blue", "green", "yellow", "purple", "navy", "long", "short", "striped", "plain", "classic"]
}

fn part_pool() -> Vec<&'static str> {
    vec!["body", "sleeves", "collar", "hood", "pockets", "buttons", "belt"]
}

fn category_pool() -> Vec<&'static str> {
    vec!["jacket", "sweater", "shirt", "dress"]
}

/// A prompt drawn from the lexicon grammar: adjective* noun phrases joined by
/// conjunctions, with the first phrase headed by a category noun.
fn grammar_prompt() -> impl Strategy<Value = String> {
    let phrase = |head: Vec<&'static str>| {
        (
            proptest::collection::vec(proptest::sample::select(adjective_pool()), 0..3),
            proptest::sample::select(head),
        )
            .prop_map(|(adjs, noun)| {
                let mut words = adjs.into_iter().map(str::to_string).collect::<Vec<_>>();
                words.push(noun.to_string());
                words.join(" ")
            })
    };
    let first = phrase(category_pool());
    let rest = proptest::collection::vec(phrase(part_pool()), 0..3);
    (first, rest, proptest::sample::select(vec![" and ", " with "])).prop_map(
        |(first, rest, joiner)| {
            let mut phrases = vec![first];
            phrases.extend(rest);
            phrases.join(joiner)
        },
    )
}

fn structure(tree: &APTree) -> (String, Vec<Vec<String>>) {
    (
        tree.category.name().to_string(),
        tree.aps
            .iter()
            .map(|ap| ap.token_texts().iter().map(|s| s.to_string()).collect())
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grammar_prompts_parse_and_round_trip(prompt in grammar_prompt()) {
        let lexicon = Lexicon::standard();
        let tree = parse(&prompt, &lexicon).expect("grammar prompts always parse");
        // Parsing is deterministic.
        prop_assert_eq!(&tree, &parse(&prompt, &lexicon).unwrap());
        // No conjunction leaks into a phrase and every noun is known.
        for ap in &tree.aps {
            for text in ap.token_texts() {
                prop_assert!(!lexicon.is_conjunction(text));
            }
            prop_assert!(
                lexicon.part_noun(&ap.noun.text).is_some()
                    || lexicon.category_noun(&ap.noun.text).is_some()
            );
        }
        // Regenerated text reparses to the identical structure.
        let again = parse(&tree.regenerate(), &lexicon).expect("regenerated prompt parses");
        prop_assert_eq!(structure(&tree), structure(&again));
    }

    #[test]
    fn attention_maps_are_distributions(values in proptest::collection::vec(-5.0f64..5.0, LATENT_PIXELS * 3)) {
        let world = World::standard();
        let tree = parse("red jacket with blue collar", &world.lexicon).unwrap();
        let z = LatentGrid::from_raw(values).unwrap();
        for token in tree.tokens() {
            let map = attention_map(&z, token, &tree, &world, TAU_ATTENTION).unwrap();
            let sum: f64 = map.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(map.probs().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn js_divergence_is_symmetric_and_bounded(
        a in proptest::collection::vec(1e-6f64..1.0, LATENT_PIXELS),
        b in proptest::collection::vec(1e-6f64..1.0, LATENT_PIXELS),
    ) {
        let normalize = |v: Vec<f64>| {
            let z: f64 = v.iter().sum();
            AttentionMap::from_probs(v.into_iter().map(|x| x / z).collect()).unwrap()
        };
        let p = normalize(a);
        let q = normalize(b);
        let pq = js_divergence(&p, &q).unwrap();
        let qp = js_divergence(&q, &p).unwrap();
        prop_assert!((pq - qp).abs() < 1e-12);
        prop_assert!((0.0..=2.0f64.ln() + 1e-12).contains(&pq));
        prop_assert!(js_divergence(&p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn hungarian_is_shift_invariant_and_optimal(
        n in 2usize..=5,
        raw in proptest::collection::vec(-10.0f64..10.0, 25),
        shift in -5.0f64..5.0,
    ) {
        let costs: Vec<f64> = raw[..n * n].to_vec();
        let shifted: Vec<f64> = costs.iter().map(|c| c + shift).collect();
        let a = hungarian(&CostMatrix::from_costs(n, n, &costs).unwrap()).unwrap();
        let b = hungarian(&CostMatrix::from_costs(n, n, &shifted).unwrap()).unwrap();
        prop_assert_eq!(&a.perm, &b.perm);
        // Exhaustive optimality for these small sizes.
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        loop {
            let total: f64 = perm.iter().enumerate().map(|(r, &c)| costs[r * n + c]).sum();
            best = best.min(total);
            if !next_permutation(&mut perm) {
                break;
            }
        }
        prop_assert!((a.total_cost - best).abs() <= 1e-9);
    }

    #[test]
    fn mask_union_is_commutative_and_associative(
        xs in proptest::collection::vec(any::<bool>(), LATENT_PIXELS),
        ys in proptest::collection::vec(any::<bool>(), LATENT_PIXELS),
        zs in proptest::collection::vec(any::<bool>(), LATENT_PIXELS),
    ) {
        let a = BinaryMask::from_bits(xs).unwrap();
        let b = BinaryMask::from_bits(ys).unwrap();
        let c = BinaryMask::from_bits(zs).unwrap();
        prop_assert_eq!(a.or(&b).unwrap(), b.or(&a).unwrap());
        prop_assert_eq!(
            a.or(&b).unwrap().or(&c).unwrap(),
            a.or(&b.or(&c).unwrap()).unwrap()
        );
    }
}

/// Lexicographic next permutation; false when wrapped around.
fn next_permutation(perm: &mut [usize]) -> bool {
    if perm.len() < 2 {
        return false;
    }
    let mut i = perm.len() - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = perm.len() - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}
