//! Property tests across states, protocols, criteria and search.

use locc::criteria::{classify_2x2, theorem2_check, Theorem2Verdict};
use locc::ensemble::{canned_example, random_ensemble, Ensemble, RandomKind, EXAMPLE_NAMES};
use locc::linalg::{haar_unitary, max_abs, random_gaussian_matrix, CMatrix};
use locc::protocol::{
    canned_protocol, completeness_check, enumerate_branches, random_protocol_tree, run_protocol, verify_protocol,
    ProjectiveMeasurement, ProtocolTree,
};
use locc::search::{search_protocol, surviving_states, valid_measurement, SearchConfig, SearchOutcome};
use locc::states::{apply_local_unitary, inner_product, BipartiteState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(da: usize, db: usize, rank: usize, seed: u64) -> BipartiteState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = rank.clamp(1, da.min(db));
    let a = random_gaussian_matrix(da, rank, &mut rng);
    let b = random_gaussian_matrix(rank, db, &mut rng);
    BipartiteState::new(da, db, a * b, None).unwrap()
}

fn random_kind(rng: &mut impl Rng) -> RandomKind {
    if rng.random_bool(0.5) {
        RandomKind::ProductBasis
    } else {
        RandomKind::HaarOrthogonal
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn schmidt_decomposition_invariants(da in 1usize..6, db in 1usize..6, rank in 1usize..6, seed in any::<u64>()) {
        let s = random_state(da, db, rank, seed);
        let d = s.schmidt().unwrap();
        let total: f64 = d.weights.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-8);
        prop_assert!(max_abs(&(d.reconstruct() - s.amplitudes())) <= 1e-8);
        prop_assert!(d.weights.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(d.schmidt_number, rank.min(da).min(db));
        for (i, u) in d.alice_vectors.iter().enumerate() {
            for (j, v) in d.alice_vectors.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((u.dotc(v).norm() - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inner_product_is_conjugate_symmetric(da in 1usize..5, db in 1usize..5, s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = random_state(da, db, 4, s1);
        let b = random_state(da, db, 4, s2);
        let ab = inner_product(&a, &b).unwrap();
        let ba = inner_product(&b, &a).unwrap();
        prop_assert!((ab - ba.conj()).norm() < 1e-12);
        prop_assert!((inner_product(&a, &a).unwrap().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schmidt_number_is_local_unitary_invariant(da in 1usize..5, db in 1usize..5, rank in 1usize..5, seed in any::<u64>()) {
        let s = random_state(da, db, rank, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let ua = haar_unitary(da, &mut rng);
        let ub = haar_unitary(db, &mut rng);
        let t = apply_local_unitary(&s, &ua, &ub).unwrap();
        prop_assert_eq!(s.schmidt_number().unwrap(), t.schmidt_number().unwrap());
        let (ws, wt) = (s.schmidt().unwrap().weights, t.schmidt().unwrap().weights);
        for (x, y) in ws.iter().zip(&wt) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn theorem2_is_invariant_under_local_unitaries_and_reordering(
        da in 1usize..4, db in 1usize..4, m in 1usize..6, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = m.min(da * db);
        let e = random_ensemble(da, db, m, seed, random_kind(&mut rng)).unwrap();
        let base = theorem2_check(&e);
        let ua = haar_unitary(da, &mut rng);
        let ub = haar_unitary(db, &mut rng);
        let moved: Vec<BipartiteState> = e.states().iter().map(|s| apply_local_unitary(s, &ua, &ub).unwrap()).collect();
        let moved = Ensemble::new(moved).unwrap();
        prop_assert_eq!(theorem2_check(&moved).verdict, base.verdict);
        prop_assert_eq!(theorem2_check(&moved).sum, base.sum);
        let reversed: Vec<usize> = (0..m).rev().collect();
        let r = theorem2_check(&e.subset(&reversed).unwrap());
        prop_assert_eq!(r.verdict, base.verdict);
        prop_assert_eq!(r.sum, base.sum);
    }

    #[test]
    fn theorem2_is_monotone(da in 1usize..4, db in 1usize..4, seed in any::<u64>()) {
        let capacity = da * db;
        let e = random_ensemble(da, db, capacity, seed, RandomKind::HaarOrthogonal).unwrap();
        let mut violated = false;
        for k in 1..=capacity {
            let idx: Vec<usize> = (0..k).collect();
            let v = theorem2_check(&e.subset(&idx).unwrap()).verdict == Theorem2Verdict::ViolatesNecessary;
            prop_assert!(v || !violated);
            violated = v;
        }
    }

    #[test]
    fn random_trees_resolve_the_identity(da in 1usize..4, db in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_ensemble(da, db, (da * db).min(3), seed, random_kind(&mut rng)).unwrap();
        let t = random_protocol_tree((da, db), 3, e.labels(), &mut rng);
        let branches = enumerate_branches(&t, (da, db)).unwrap();
        prop_assert!(completeness_check(&branches) <= 1e-9);
        let records = run_protocol(&t, &e, 0.0).unwrap();
        for i in 0..e.len() {
            let total: f64 = records.iter().map(|r| r.probabilities[i]).sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn sibling_permutation_preserves_verification(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = canned_example("six4x4").unwrap();
        let t = canned_protocol("six4x4").unwrap();
        let permuted = permute_siblings(&t, &mut rng);
        let a = verify_protocol(&t, &e, 1e-9).unwrap();
        let b = verify_protocol(&permuted, &e, 1e-9).unwrap();
        prop_assert_eq!(a.success, b.success);
        for (x, y) in a.identification.iter().zip(&b.identification) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn valid_measurements_leave_orthogonal_survivors(da in 2usize..4, db in 2usize..4, m in 2usize..5, seed in any::<u64>()) {
        let m = m.min(da * db);
        let e = random_ensemble(da, db, m, seed, RandomKind::ProductBasis).unwrap();
        let cfg = SearchConfig::default();
        for party in [locc::protocol::Party::Alice, locc::protocol::Party::Bob] {
            for meas in locc::search::candidate_bases(&e, party, &cfg) {
                if !valid_measurement(&e, &meas, 1e-9).unwrap() {
                    continue;
                }
                for cols in meas.outcomes() {
                    match surviving_states(&e, party, cols) {
                        Ok(s) => prop_assert!(s.max_overlap() <= 1e-9),
                        Err(err) => prop_assert_eq!(err, locc::Error::EmptyOutcome),
                    }
                }
            }
        }
    }
}

fn permute_siblings(t: &ProtocolTree, rng: &mut impl Rng) -> ProtocolTree {
    use rand::seq::SliceRandom;
    match t {
        ProtocolTree::Leaf(_) => t.clone(),
        ProtocolTree::Measure { measurement, children } => {
            let mut order: Vec<usize> = (0..children.len()).collect();
            order.shuffle(rng);
            let outcomes: Vec<CMatrix> = order.iter().map(|&k| measurement.outcomes()[k].clone()).collect();
            let kids = order.iter().map(|&k| permute_siblings(&children[k], rng)).collect();
            let m = ProjectiveMeasurement::new(measurement.party(), outcomes, 1e-9).unwrap();
            ProtocolTree::measure(m, kids)
        }
    }
}

fn random_cases(count: u64, seed_base: u64) -> Vec<Ensemble> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_base + i);
            let da = rng.random_range(2..=3);
            let db = rng.random_range(2..=3);
            let m = rng.random_range(2..=(da * db).min(5));
            random_ensemble(da, db, m, seed_base + i, random_kind(&mut rng)).unwrap()
        })
        .collect()
}

#[test]
fn verified_protocols_never_meet_a_violated_necessary_condition() {
    let mut cases: Vec<Ensemble> = EXAMPLE_NAMES.iter().map(|n| canned_example(n).unwrap()).collect();
    cases.extend(random_cases(200, 1000));
    let cfg = SearchConfig {
        node_budget: 5_000,
        ..SearchConfig::default()
    };
    let mut verified = 0;
    for e in &cases {
        let t2 = theorem2_check(e);
        if let SearchOutcome::Yes(t) = search_protocol(e, &cfg).unwrap().outcome {
            assert!(verify_protocol(&t, e, 1e-9).unwrap().success);
            assert_eq!(t2.verdict, Theorem2Verdict::Inconclusive);
            verified += 1;
        }
    }
    let six = canned_example("six4x4").unwrap();
    assert!(verify_protocol(&canned_protocol("six4x4").unwrap(), &six, 1e-9).unwrap().success);
    assert_eq!(theorem2_check(&six).verdict, Theorem2Verdict::Inconclusive);
    assert!(verified > 50, "only {verified} protocols found");
}

fn two_by_two_cases() -> Vec<Ensemble> {
    let bell4 = canned_example("bell4").unwrap();
    let mut cases = vec![
        canned_example("bell2").unwrap(),
        canned_example("bell3").unwrap(),
        bell4.clone(),
        bell4.subset(&[0, 2]).unwrap(),
        bell4.subset(&[1, 2, 3]).unwrap(),
    ];
    for i in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + i);
        let m = rng.random_range(2..=4);
        let kind = random_kind(&mut rng);
        cases.push(random_ensemble(2, 2, m, 7000 + i, kind).unwrap());
    }
    cases
}

#[test]
fn exhaustive_search_agrees_with_2x2_classification() {
    let cfg = SearchConfig::exhaustive_2d();
    for (i, e) in two_by_two_cases().iter().enumerate() {
        let c = classify_2x2(e).unwrap();
        let s = search_protocol(e, &cfg).unwrap().outcome;
        match (&s, c.is_distinguishable()) {
            (SearchOutcome::Yes(_), true) | (SearchOutcome::ProvedNo(_), false) => {}
            (other, d) => panic!("case {i}: search {other:?}, classification distinguishable = {d}"),
        }
        if c.is_distinguishable() {
            assert_ne!(theorem2_check(e).verdict, Theorem2Verdict::ViolatesNecessary);
        }
    }
}

#[test]
fn search_is_deterministic() {
    for e in random_cases(20, 42) {
        let a = search_protocol(&e, &SearchConfig::default()).unwrap();
        let b = search_protocol(&e, &SearchConfig::default()).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.outcome.protocol(), b.outcome.protocol());
    }
}
