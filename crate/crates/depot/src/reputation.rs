//! Per-node reputation derived from ledger history: hosts are rated on
//! their ratio of succeeded to submitted proofs, clients on their
//! litigation count. The incremental counters the ledger maintains are a
//! pure function of chain state; [`recompute`] rebuilds them from scratch
//! and must always agree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arbitration::CaseVerdict;
use crate::ledger::{Ledger, NodeId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationRecord {
    pub host_proofs_submitted: u64,
    pub host_proofs_succeeded: u64,
    /// Disputes the node was party to as client, counting one extra for
    /// each dispute it was convicted in.
    pub client_litigations: u64,
}

impl ReputationRecord {
    /// Succeeded over submitted; a host with no history scores 1.0.
    pub fn host_score(&self) -> f64 {
        if self.host_proofs_submitted == 0 {
            return 1.0;
        }
        self.host_proofs_succeeded as f64 / self.host_proofs_submitted as f64
    }
}

pub fn host_score(ledger: &Ledger, node: NodeId) -> f64 {
    ledger.reputation(node).host_score()
}

/// Litigation count; lower is better.
pub fn client_score(ledger: &Ledger, node: NodeId) -> u64 {
    ledger.reputation(node).client_litigations
}

/// The best-rated host among the requesters: highest proof-success score,
/// ties broken by the lower node id. Empty input yields `None`.
pub fn best_host(ledger: &Ledger, requesters: &[NodeId]) -> Option<NodeId> {
    let mut sorted = requesters.to_vec();
    sorted.sort_unstable();
    sorted.into_iter().fold(None, |best: Option<(NodeId, f64)>, node| {
        let score = host_score(ledger, node);
        match best {
            Some((_, best_score)) if best_score >= score => best,
            _ => Some((node, score)),
        }
    }).map(|(node, _)| node)
}

/// Rebuilds every reputation record from the contracts and cases on the
/// ledger. Equals the incrementally maintained state for any reachable
/// ledger.
pub fn recompute(ledger: &Ledger) -> BTreeMap<NodeId, ReputationRecord> {
    let mut records: BTreeMap<NodeId, ReputationRecord> = BTreeMap::new();
    for contract in ledger.contracts() {
        let Some(host) = contract.host else { continue };
        let entry = records.entry(host).or_default();
        for epoch in &contract.epoch_log {
            if epoch.proof_hash.is_some() {
                entry.host_proofs_submitted += 1;
            }
            if epoch.verdict == Some(crate::contract::ProofVerdict::Ok) {
                entry.host_proofs_succeeded += 1;
            }
        }
    }
    for case in ledger.cases() {
        let client = ledger
            .contract(case.contract)
            .expect("case references a contract")
            .client;
        let entry = records.entry(client).or_default();
        entry.client_litigations += 1;
        if case.verdict == Some(CaseVerdict::ClientDishonest) {
            entry.client_litigations += 1;
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{LedgerConfig, NodeKind, TokenAmount};

    #[test]
    fn fresh_host_scores_one() {
        assert_eq!(ReputationRecord::default().host_score(), 1.0);
    }

    #[test]
    fn nine_of_ten_scores_point_nine() {
        let r = ReputationRecord {
            host_proofs_submitted: 10,
            host_proofs_succeeded: 9,
            client_litigations: 0,
        };
        assert!((r.host_score() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn best_host_picks_score_then_lower_id() {
        let mut ledger = Ledger::new(LedgerConfig::default());
        let a = ledger
            .register_node(NodeKind::Host { capacity: 1 }, TokenAmount(0))
            .unwrap();
        let b = ledger
            .register_node(NodeKind::Host { capacity: 1 }, TokenAmount(0))
            .unwrap();
        let c = ledger
            .register_node(NodeKind::Host { capacity: 1 }, TokenAmount(0))
            .unwrap();

        // Single requester wins outright.
        assert_eq!(best_host(&ledger, &[b]), Some(b));

        // 0.9 beats 0.8 regardless of list order.
        ledger.reputation.insert(
            a,
            ReputationRecord {
                host_proofs_submitted: 10,
                host_proofs_succeeded: 9,
                client_litigations: 0,
            },
        );
        ledger.reputation.insert(
            b,
            ReputationRecord {
                host_proofs_submitted: 10,
                host_proofs_succeeded: 8,
                client_litigations: 0,
            },
        );
        assert_eq!(best_host(&ledger, &[b, a]), Some(a));

        // Equal scores break toward the lower node id: c is fresh (1.0)
        // and so is an unrated newcomer d.
        let d = ledger
            .register_node(NodeKind::Host { capacity: 1 }, TokenAmount(0))
            .unwrap();
        assert_eq!(best_host(&ledger, &[d, c]), Some(c));
        assert_eq!(best_host(&ledger, &[]), None);
    }
}
