//! The configuration search against exhaustive enumeration on random models.

mod common;

use std::collections::BTreeSet;

use admit_core::model::{Configuration, SystemModel};
use admit_core::negotiate::{negotiate, validate, Answer, Options};
use admit_core::store::ConstraintStore;
use admit_core::timing::InterferenceModel;
use common::random;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random models with at least one well-formed configuration.
fn models(seed: u64, count: usize, max_threads: usize) -> Vec<random::Generated> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let Some(m) = random::model(&mut rng, max_threads) else { continue };
        let mut any = false;
        random::enumerate(&m.software, &m.platform, |_| {
            any = true;
            false
        });
        if any {
            out.push(m);
        }
    }
    out
}

#[test]
fn store_enumerates_exactly_the_well_formed_space() {
    for (i, m) in models(7, 50, 5).iter().enumerate() {
        let mut expected = BTreeSet::new();
        random::enumerate(&m.software, &m.platform, |c| {
            expected.insert(c.clone());
            true
        });
        let mut store = ConstraintStore::init_space(&m.software, &m.platform, &m.software.roots()).unwrap();
        let mut got = BTreeSet::new();
        while let Some(c) = store.next_candidate() {
            assert!(got.insert(c.clone()), "model {i}: {c} emitted twice");
        }
        assert_eq!(got, expected, "model {i}:\n{}", m.contracts.join("\n"));
    }
}

#[test]
fn negotiation_has_no_false_negatives() {
    let mut feasible_models = 0;
    for (i, m) in models(11, 60, 6).iter().enumerate() {
        let model = if i % 2 == 0 {
            InterferenceModel::BusyWindow
        } else {
            InterferenceModel::SingleBlocking
        };
        let sys = SystemModel {
            software: m.software.clone(),
            platform: m.platform.clone(),
            config: Configuration::default(),
        };
        let (answer, _) = negotiate(&sys, &[], Options { model, ..Options::default() }).unwrap();
        let mut witness = None;
        random::enumerate(&m.software, &m.platform, |c| {
            if validate(&m.software, &m.platform, c, model).is_ok() {
                witness = Some(c.clone());
                return false;
            }
            true
        });
        let ctx = || format!("model {i} ({model}):\n{}", m.contracts.join("\n"));
        match (&answer, &witness) {
            (Answer::Yes { config, .. }, _) => {
                assert!(witness.is_some(), "accepted a configuration brute force rejects: {}", ctx());
                assert!(validate(&m.software, &m.platform, config, model).is_ok(), "{}", ctx());
                feasible_models += 1;
            }
            (Answer::No { .. }, Some(w)) => panic!("missed feasible {w}\n{}", ctx()),
            (Answer::No { .. }, None) => {}
        }
    }
    // The generator must exercise both outcomes.
    assert!((10..50).contains(&feasible_models), "{feasible_models} feasible");
}
