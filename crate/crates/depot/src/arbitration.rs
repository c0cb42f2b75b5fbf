//! Dispute resolution: random auditor selection keyed on chain state, vote
//! collection, majority verdicts, reward distribution out of the dishonest
//! party's auditors sequestration, and banning.
//!
//! A dispute exists because the final download happens off-chain: the rest
//! of the network cannot tell whether the client could not fetch the file
//! or is lying to capture the file sequestration. A committee of auditors
//! checks availability and votes; the majority decides, majority voters
//! split the loser's auditors sequestration (integer shares, remainder to
//! the burn account), and the loser is banned.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contract::{
    Beneficiary, ContractId, ContractState, EscrowComponent, SettlementKind, SettlementOutcome,
};
use crate::error::{Error, Result};
use crate::hash::Hasher;
use crate::ledger::{Ledger, NodeId, TokenAmount, TxOutcome, TxPayload};
use crate::por;
use crate::rng;
use crate::trace::TraceEvent;

#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize,
)]
pub struct CaseId(pub u64);

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// What an auditor reports after checking the host.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    FileAvailable = 0,
    FileUnavailable = 1,
}

/// Outcome of the vote tally. `file available` convicts the client,
/// `file unavailable` convicts the host, an even split escalates.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseVerdict {
    ClientDishonest,
    HostDishonest,
    Tied,
}

impl CaseVerdict {
    pub fn settlement_kind(self) -> SettlementKind {
        match self {
            CaseVerdict::ClientDishonest => SettlementKind::DisputeClientDishonest,
            CaseVerdict::HostDishonest => SettlementKind::DisputeHostDishonest,
            CaseVerdict::Tied => SettlementKind::Escalated,
        }
    }
}

/// One dispute over one contract.
#[derive(Clone, Debug)]
pub struct AuditCase {
    pub id: CaseId,
    pub contract: ContractId,
    /// Selected committee, ascending by node id. Never includes the
    /// contract's client or host.
    pub auditors: Vec<NodeId>,
    pub votes: BTreeMap<NodeId, Vote>,
    pub opened_at: u64,
    /// Abstentions past this point are dropped and the cast votes decide.
    pub vote_deadline: u64,
    pub auto_opened: bool,
    pub verdict: Option<CaseVerdict>,
    pub rewards: BTreeMap<NodeId, TokenAmount>,
}

/// Majority tally over the cast votes. Returns the verdict and the
/// majority-side voters (sorted ascending); a tie has no majority.
pub fn tally(votes: &BTreeMap<NodeId, Vote>) -> (CaseVerdict, Vec<NodeId>) {
    let available: Vec<NodeId> = votes
        .iter()
        .filter(|(_, v)| **v == Vote::FileAvailable)
        .map(|(n, _)| *n)
        .collect();
    let unavailable: Vec<NodeId> = votes
        .iter()
        .filter(|(_, v)| **v == Vote::FileUnavailable)
        .map(|(n, _)| *n)
        .collect();
    match available.len().cmp(&unavailable.len()) {
        std::cmp::Ordering::Greater => (CaseVerdict::ClientDishonest, available),
        std::cmp::Ordering::Less => (CaseVerdict::HostDishonest, unavailable),
        std::cmp::Ordering::Equal => (CaseVerdict::Tied, Vec::new()),
    }
}

/// The deterministic seed-to-committee mapping: `n` distinct positions in
/// an eligible roster of the given size, sorted ascending.
pub(crate) fn committee_from_seed(seed: &por::Seed, eligible_count: u32, n: u32) -> Vec<u32> {
    let mut h = Hasher::new("depot.committee");
    h.digest(&seed.0);
    let mut generator = rng::rng_from_digest(&h.finish());
    rng::sample_distinct(&mut generator, eligible_count, n)
}

/// Draws `n` distinct eligible nodes — auditor-capable, not banned, not a
/// party to the contract — from the deterministic generator keyed on the
/// contract's dispute-epoch seed. Reproducible from ledger state alone.
pub fn select_auditors(ledger: &Ledger, contract: ContractId, n: u32) -> Result<Vec<NodeId>> {
    let c = ledger.contract(contract)?;
    let eligible: Vec<NodeId> = ledger
        .nodes()
        .filter(|(id, info)| {
            info.kind.is_auditor()
                && !ledger.is_banned(*id)
                && *id != c.client
                && Some(*id) != c.host
        })
        .map(|(id, _)| id)
        .collect();
    if (eligible.len() as u32) < n {
        return Err(Error::InsufficientAuditors {
            needed: n,
            available: eligible.len() as u32,
        });
    }
    let dispute_epoch = c.terms.epochs();
    let seed = por::derive_seed(ledger, contract, dispute_epoch)?;
    let picks = committee_from_seed(&seed, eligible.len() as u32, n);
    Ok(picks.into_iter().map(|i| eligible[i as usize]).collect())
}

/// Committee size that keeps the dishonest-majority probability under
/// `target` when each auditor answers correctly with probability `p`.
pub fn required_auditors(p: f64, target: f64) -> Result<u32> {
    crate::analysis::min_auditors(p, target)
}

impl Ledger {
    pub(crate) fn handle_dispute_open(
        &mut self,
        sender: NodeId,
        contract: ContractId,
    ) -> Result<CaseId> {
        let c = self.contract(contract)?;
        if sender != c.client {
            return Err(Error::WrongRole {
                node: sender,
                role: "contract client",
            });
        }
        self.open_case(contract, false)
    }

    /// Creates the audit case for a contract awaiting its final ack.
    pub(crate) fn open_case(&mut self, contract: ContractId, auto: bool) -> Result<CaseId> {
        let c = self.contract(contract)?;
        if c.state != ContractState::AwaitingFinalAck {
            return Err(Error::InvalidState {
                contract,
                actual: c.state.name(),
                required: "awaiting_final_ack",
            });
        }
        if c.dispute.is_some() {
            return Err(Error::DisputePending(contract));
        }
        let client = c.client;
        let vote_deadline = self.clock + c.terms.proof_period;
        let auditors = select_auditors(self, contract, self.config.auditors_per_case)?;

        let id = self.next_case_id();
        self.cases.insert(
            id,
            AuditCase {
                id,
                contract,
                auditors: auditors.clone(),
                votes: BTreeMap::new(),
                opened_at: self.clock,
                vote_deadline,
                auto_opened: auto,
                verdict: None,
                rewards: BTreeMap::new(),
            },
        );
        self.contracts.get_mut(&contract).expect("checked").dispute = Some(id);
        self.reputation.entry(client).or_default().client_litigations += 1;
        self.record(TraceEvent::DisputeOpened {
            time: self.clock,
            case: id,
            contract,
            auditors,
            auto,
        });
        Ok(id)
    }

    pub(crate) fn handle_vote(
        &mut self,
        sender: NodeId,
        case: CaseId,
        vote: Vote,
    ) -> Result<Option<SettlementOutcome>> {
        let record = self.case(case)?;
        if record.verdict.is_some() {
            return Err(Error::CaseAlreadyResolved(case));
        }
        if !record.auditors.contains(&sender) {
            return Err(Error::NotCaseAuditor { case, node: sender });
        }
        if record.votes.contains_key(&sender) {
            return Err(Error::AlreadyVoted { case, node: sender });
        }
        let record = self.cases.get_mut(&case).expect("checked");
        record.votes.insert(sender, vote);
        let complete = record.votes.len() == record.auditors.len();
        self.record(TraceEvent::VoteCast {
            time: self.clock,
            case,
            auditor: sender,
            vote,
        });
        if complete {
            return Ok(Some(self.resolve_case_internal(case)?));
        }
        Ok(None)
    }

    /// Resolves a case once every vote is in or the deadline has passed.
    pub fn resolve_case(&mut self, case: CaseId) -> Result<SettlementOutcome> {
        let record = self.case(case)?;
        if record.verdict.is_some() {
            return Err(Error::CaseAlreadyResolved(case));
        }
        let ready =
            record.votes.len() == record.auditors.len() || self.clock > record.vote_deadline;
        if !ready {
            return Err(Error::CaseNotReady(case));
        }
        self.resolve_case_internal(case)
    }

    pub(crate) fn resolve_case_internal(&mut self, case: CaseId) -> Result<SettlementOutcome> {
        let record = self.case(case)?;
        let contract = record.contract;
        let (verdict, majority) = tally(&record.votes);
        let kind = verdict.settlement_kind();
        let outcome = self.settle_contract(contract, kind, &majority)?;

        let reward_component = match verdict {
            CaseVerdict::ClientDishonest => Some(EscrowComponent::ClientAuditorsSeq),
            CaseVerdict::HostDishonest => Some(EscrowComponent::HostAuditorsSeq),
            CaseVerdict::Tied => None,
        };
        let mut rewards = BTreeMap::new();
        if let Some(component) = reward_component {
            for t in &outcome.transfers {
                if t.from == component {
                    if let Beneficiary::Node(node) = t.to {
                        if majority.binary_search(&node).is_ok() {
                            rewards.insert(node, t.amount);
                        }
                    }
                }
            }
        }
        if verdict == CaseVerdict::ClientDishonest {
            // A dispute the client opened and lost counts twice against it.
            let client = self.contract(contract)?.client;
            self.reputation.entry(client).or_default().client_litigations += 1;
        }

        let record = self.cases.get_mut(&case).expect("checked");
        record.verdict = Some(verdict);
        record.rewards = rewards.clone();
        self.record(TraceEvent::CaseResolved {
            time: self.clock,
            case,
            contract,
            verdict,
            rewards: rewards.into_iter().collect(),
        });
        Ok(outcome)
    }

    /// Typed convenience op for a committee member's vote.
    pub fn cast_vote(
        &mut self,
        auditor: NodeId,
        case: CaseId,
        vote: Vote,
    ) -> Result<Option<SettlementOutcome>> {
        let tx = self.make_tx(auditor, TxPayload::AuditorVote { case, vote })?;
        match self.submit(tx)?.outcome {
            TxOutcome::VoteRecorded(outcome) => Ok(outcome),
            _ => unreachable!("vote yields a vote record"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::EscrowAccount;
    use crate::hash::sha256;
    use crate::testutil::{activate, parties, run_honest_epochs, terms, LiveContract, Parties};

    /// A contract driven through all epochs into the final-ack window.
    fn disputed_setup(auditor_count: u32) -> (Parties, LiveContract) {
        let mut p = parties(auditor_count);
        let live = activate(&mut p, terms(2, 3600));
        run_honest_epochs(&mut p, &live, 0, 2);
        let state = p.ledger.contract(live.id).unwrap().state;
        assert_eq!(state, crate::contract::ContractState::AwaitingFinalAck);
        (p, live)
    }

    #[test]
    fn selection_takes_whole_set_when_n_equals_eligible() {
        let (p, live) = disputed_setup(5);
        let selected = select_auditors(&p.ledger, live.id, 5).unwrap();
        assert_eq!(selected, p.auditors);
    }

    #[test]
    fn parties_never_selected() {
        let (p, live) = disputed_setup(9);
        let selected = select_auditors(&p.ledger, live.id, 9).unwrap();
        assert!(!selected.contains(&p.client));
        assert!(!selected.contains(&p.host));
    }

    #[test]
    fn selection_needs_enough_eligible_nodes() {
        let (p, live) = disputed_setup(3);
        assert!(matches!(
            select_auditors(&p.ledger, live.id, 4).unwrap_err(),
            Error::InsufficientAuditors {
                needed: 4,
                available: 3
            }
        ));
    }

    #[test]
    fn banned_nodes_never_selected() {
        let (mut p, live) = disputed_setup(6);
        let marked = p.auditors[2];
        p.ledger.banned.insert(marked);
        let selected = select_auditors(&p.ledger, live.id, 5).unwrap();
        assert!(!selected.contains(&marked));
    }

    #[test]
    fn committee_selection_is_uniform() {
        // 1e4 committees of 5 from 50 eligible: each node's inclusion count
        // within 4 sigma of 1000 (sigma = sqrt(1e4 · 0.1 · 0.9) = 30).
        let mut counts = [0u32; 50];
        for i in 0..10_000u32 {
            let seed = por::Seed(sha256("committee-uniform", &i.to_be_bytes()));
            for pick in committee_from_seed(&seed, 50, 5) {
                counts[pick as usize] += 1;
            }
        }
        for (node, &count) in counts.iter().enumerate() {
            let deviation = (f64::from(count) - 1000.0).abs();
            assert!(
                deviation < 120.0,
                "eligible node {node} selected {count} times, outside 1000 ± 120"
            );
        }
    }

    #[test]
    fn vote_mechanics() {
        let (mut p, live) = disputed_setup(5);
        let case = p.ledger.open_dispute(p.client, live.id).unwrap();

        // Outsiders cannot vote.
        let non_auditor = p.client;
        assert!(matches!(
            p.ledger
                .handle_vote(non_auditor, case, Vote::FileAvailable)
                .unwrap_err(),
            Error::NotCaseAuditor { .. }
        ));

        let voters = p.ledger.case(case).unwrap().auditors.clone();
        assert!(p
            .ledger
            .cast_vote(voters[0], case, Vote::FileAvailable)
            .unwrap()
            .is_none());
        // Double voting is rejected.
        assert!(matches!(
            p.ledger
                .cast_vote(voters[0], case, Vote::FileAvailable)
                .unwrap_err(),
            Error::AlreadyVoted { .. }
        ));
        // Resolution refuses to run before all votes or the timeout.
        assert!(matches!(
            p.ledger.resolve_case(case).unwrap_err(),
            Error::CaseNotReady(_)
        ));
    }

    #[test]
    fn four_of_five_unavailable_convicts_host() {
        let (mut p, live) = disputed_setup(5);
        let client_before = p.ledger.balance(p.client);
        let host_before = p.ledger.balance(p.host);
        let case = p.ledger.open_dispute(p.client, live.id).unwrap();
        let voters = p.ledger.case(case).unwrap().auditors.clone();
        let mut outcome = None;
        for (i, auditor) in voters.iter().enumerate() {
            let vote = if i == 0 {
                Vote::FileAvailable
            } else {
                Vote::FileUnavailable
            };
            outcome = p.ledger.cast_vote(*auditor, case, vote).unwrap();
        }
        let outcome = outcome.expect("last vote resolves");
        assert_eq!(outcome.kind, SettlementKind::DisputeHostDishonest);

        // Client recovers pool (0 here: fully paid out), own auditors seq
        // and the host's file sequestration.
        assert_eq!(
            p.ledger.balance(p.client),
            TokenAmount(client_before.0 + 200 + 500)
        );
        // Each of the 4 majority voters earns floor(200/4) = 50.
        let case_record = p.ledger.case(case).unwrap();
        assert_eq!(case_record.verdict, Some(CaseVerdict::HostDishonest));
        assert_eq!(case_record.rewards.len(), 4);
        for auditor in &voters[1..] {
            assert_eq!(case_record.rewards[auditor], TokenAmount(50));
            assert_eq!(p.ledger.balance(*auditor), TokenAmount(150));
        }
        // The lone minority voter earns nothing.
        assert_eq!(p.ledger.balance(voters[0]), TokenAmount(100));
        assert_eq!(p.ledger.balance(p.host), host_before);
        assert!(p.ledger.is_banned(p.host));
        assert_eq!(p.ledger.accounts().burned(), TokenAmount::ZERO);
        p.ledger.check_conservation().unwrap();
    }

    #[test]
    fn unanimous_available_convicts_client() {
        let (mut p, live) = disputed_setup(5);
        let host_before = p.ledger.balance(p.host);
        let case = p.ledger.open_dispute(p.client, live.id).unwrap();
        let voters = p.ledger.case(case).unwrap().auditors.clone();
        let mut outcome = None;
        for auditor in &voters {
            outcome = p.ledger.cast_vote(*auditor, case, Vote::FileAvailable).unwrap();
        }
        assert_eq!(
            outcome.unwrap().kind,
            SettlementKind::DisputeClientDishonest
        );
        assert!(p.ledger.is_banned(p.client));
        assert!(!p.ledger.is_banned(p.host));
        // Client's auditors sequestration (200) splits 40 apiece.
        for auditor in &voters {
            assert_eq!(p.ledger.balance(*auditor), TokenAmount(140));
        }
        // Host gets its sequestrations back.
        assert_eq!(p.ledger.balance(p.host), TokenAmount(host_before.0 + 700));
        // A lost dispute counts twice against the client.
        assert_eq!(p.ledger.reputation(p.client).client_litigations, 2);
    }

    #[test]
    fn even_split_escalates_without_bans() {
        let (mut p, live) = {
            let mut p = parties(4);
            p.ledger.config.auditors_per_case = 4;
            let live = activate(&mut p, terms(2, 3600));
            run_honest_epochs(&mut p, &live, 0, 2);
            (p, live)
        };
        let case = p.ledger.open_dispute(p.client, live.id).unwrap();
        let voters = p.ledger.case(case).unwrap().auditors.clone();
        let mut outcome = None;
        for (i, auditor) in voters.iter().enumerate() {
            let vote = if i % 2 == 0 {
                Vote::FileAvailable
            } else {
                Vote::FileUnavailable
            };
            outcome = p.ledger.cast_vote(*auditor, case, vote).unwrap();
        }
        let outcome = outcome.unwrap();
        assert_eq!(outcome.kind, SettlementKind::Escalated);
        assert!(!p.ledger.is_banned(p.client));
        assert!(!p.ledger.is_banned(p.host));
        // Both auditors sequestrations returned to their owners; no rewards.
        assert!(p.ledger.case(case).unwrap().rewards.is_empty());
        p.ledger.check_conservation().unwrap();
    }

    #[test]
    fn timeout_resolves_on_cast_votes() {
        let (mut p, live) = disputed_setup(5);
        let case = p.ledger.open_dispute(p.client, live.id).unwrap();
        let voters = p.ledger.case(case).unwrap().auditors.clone();
        // Only three of five vote; two abstain past the deadline.
        for auditor in &voters[..3] {
            p.ledger
                .cast_vote(*auditor, case, Vote::FileUnavailable)
                .unwrap();
        }
        let deadline = p.ledger.case(case).unwrap().vote_deadline;
        p.ledger.advance_clock(deadline - p.ledger.clock() + 1).unwrap();
        let record = p.ledger.case(case).unwrap();
        assert_eq!(record.verdict, Some(CaseVerdict::HostDishonest));
        // Majority of the cast votes earns the split: floor(200/3) = 66,
        // remainder 2 burned.
        assert_eq!(record.rewards.len(), 3);
        assert_eq!(record.rewards[&voters[0]], TokenAmount(66));
        assert_eq!(p.ledger.accounts().burned(), TokenAmount(2));
        // Abstainers get nothing.
        assert_eq!(p.ledger.balance(voters[3]), TokenAmount(100));
        p.ledger.check_conservation().unwrap();
    }

    #[test]
    fn reward_split_conserves_sequestration() {
        // Σ shares + burn remainder = the dishonest party's sequestration,
        // exactly, over a spread of pool sizes and majority sizes.
        for seq in [0u64, 1, 7, 199, 200, 201, 1000] {
            for m in 1usize..=7 {
                let majority: Vec<NodeId> = (0..m as u32).map(NodeId).collect();
                let escrow = EscrowAccount {
                    payment_pool: TokenAmount(50),
                    client_auditors_seq: TokenAmount(seq),
                    host_auditors_seq: TokenAmount(30),
                    host_file_seq: TokenAmount(40),
                    pending_requests: Default::default(),
                };
                let transfers = crate::contract::settlement_transfers(
                    SettlementKind::DisputeClientDishonest,
                    NodeId(100),
                    NodeId(101),
                    &escrow,
                    &majority,
                );
                let from_seq: u64 = transfers
                    .iter()
                    .filter(|t| t.from == EscrowComponent::ClientAuditorsSeq)
                    .map(|t| t.amount.0)
                    .sum();
                assert_eq!(from_seq, seq, "seq {seq} majority {m}");
                let total: u64 = transfers.iter().map(|t| t.amount.0).sum();
                assert_eq!(u128::from(total), escrow.total());
            }
        }
    }

    #[test]
    fn required_auditors_matches_analysis() {
        assert_eq!(required_auditors(0.8, 1e-6).unwrap(), 41);
        assert!(required_auditors(0.5, 1e-6).is_err());
    }

    #[test]
    fn tally_rules() {
        use std::collections::BTreeMap;
        let mut votes = BTreeMap::new();
        votes.insert(NodeId(1), Vote::FileAvailable);
        votes.insert(NodeId(2), Vote::FileUnavailable);
        let (verdict, majority) = tally(&votes);
        assert_eq!(verdict, CaseVerdict::Tied);
        assert!(majority.is_empty());
        votes.insert(NodeId(3), Vote::FileUnavailable);
        let (verdict, majority) = tally(&votes);
        assert_eq!(verdict, CaseVerdict::HostDishonest);
        assert_eq!(majority, vec![NodeId(2), NodeId(3)]);
        let (verdict, majority) = tally(&BTreeMap::new());
        assert_eq!(verdict, CaseVerdict::Tied);
        assert!(majority.is_empty());
    }

    #[test]
    fn banned_auditor_cannot_vote() {
        let (mut p, live) = disputed_setup(6);
        let case = p.ledger.open_dispute(p.client, live.id).unwrap();
        let voters = p.ledger.case(case).unwrap().auditors.clone();
        p.ledger.banned.insert(voters[0]);
        assert!(matches!(
            p.ledger.cast_vote(voters[0], case, Vote::FileAvailable).unwrap_err(),
            Error::BannedNode(_)
        ));
    }

    #[test]
    fn dispute_from_non_client_rejected() {
        let (mut p, live) = disputed_setup(5);
        assert!(matches!(
            p.ledger.open_dispute(p.host, live.id).unwrap_err(),
            Error::WrongRole { .. }
        ));
        // Unknown auditor kinds can't be drafted: a second dispute on the
        // same contract is also rejected.
        p.ledger.open_dispute(p.client, live.id).unwrap();
        assert!(matches!(
            p.ledger.open_dispute(p.client, live.id).unwrap_err(),
            Error::DisputePending(_)
        ));
    }
}
