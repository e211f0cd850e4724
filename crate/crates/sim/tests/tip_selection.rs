//! Statistical checks on uniform tip sampling and tip-set maintenance.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use tanglesim::protocol::{Node, ProtocolParams, TipManager, WeightVector};
use tanglesim::tangle::{Message, MessageId, NodeId};

#[test]
fn pair_sampling_is_uniform_chi_square() {
    // 3 tips -> 3 unordered pairs; 30k draws; reject only below p = 0.001
    let mut tips = TipManager::new();
    for id in 1..=3u64 {
        tips.insert(MessageId(id), 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts = [0u64; 3];
    let draws = 30_000;
    for _ in 0..draws {
        let mut pair = tips.sample_unique(2, &mut rng);
        pair.sort();
        let idx = match (pair[0].0, pair[1].0) {
            (1, 2) => 0,
            (1, 3) => 1,
            (2, 3) => 2,
            other => panic!("unexpected pair {other:?}"),
        };
        counts[idx] += 1;
    }
    let expected = draws as f64 / 3.0;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.999);
    assert!(
        stat < critical,
        "chi-square {stat:.3} exceeds critical {critical:.3}; counts {counts:?}"
    );
}

#[test]
fn single_tip_sampling_is_uniform_chi_square() {
    let mut tips = TipManager::new();
    let n = 10u64;
    for id in 1..=n {
        tips.insert(MessageId(id), 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = vec![0u64; n as usize];
    let draws = 30_000;
    for _ in 0..draws {
        let picked = tips.sample_unique(1, &mut rng);
        counts[(picked[0].0 - 1) as usize] += 1;
    }
    let expected = draws as f64 / n as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let critical = ChiSquared::new((n - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat:.3}, counts {counts:?}");
}

/// After an arbitrary delivery sequence, the maintained tip set must equal
/// the recomputed definition: solid messages with no solid children, minus
/// anything older than ζ.
#[test]
fn tip_set_equals_recomputed_definition() {
    let params = ProtocolParams {
        k: 2,
        zeta: 20.0,
        theta: 0.5,
    };
    let weights = WeightVector::snapshot(7, 1);
    let mut node = Node::new(NodeId(0));
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    // interleave receptions of foreign messages with own issuance
    let mut issued: Vec<Message> = vec![Message::genesis()];
    let mut next_id = 1u64;
    let mut now = 0.0;
    for step in 0..400 {
        now += 0.25;
        if step % 3 == 0 {
            let (m, _) = node.create_message(MessageId(next_id), now, &params, &weights, &mut rng);
            issued.push(m);
        } else {
            // a foreign message referencing two recent known messages
            let a = issued[issued.len() - 1].id;
            let b = issued[issued.len().saturating_sub(2).max(0)].id;
            let mut parents = vec![a];
            if b != a {
                parents.push(b);
            }
            let m = Message {
                id: MessageId(next_id),
                issuer: NodeId(1),
                issued_at: now,
                parents,
            };
            node.on_receive(m.clone(), now, &params, &weights);
            issued.push(m);
        }
        next_id += 1;
    }

    node.tips.expire(now, params.zeta);
    let maintained: HashSet<MessageId> = node.tips.ids().collect();
    let mut recomputed = HashSet::new();
    for (m, s) in node.store.iter() {
        if !s.solid {
            continue;
        }
        if now - m.issued_at > params.zeta {
            continue;
        }
        let has_solid_child = node
            .store
            .children(m.id)
            .any(|c| node.store.status(c).map(|cs| cs.solid).unwrap_or(false));
        if !has_solid_child {
            recomputed.insert(m.id);
        }
    }
    assert_eq!(maintained, recomputed);
}
