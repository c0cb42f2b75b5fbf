//! The storage smart contract: lifecycle state machine, escrow management,
//! per-epoch proof verification and payment, and the settlement matrix for
//! every way a contract can end.
//!
//! Lifecycle: `Proposed` (client advertises terms) → `Requested` (one or
//! more hosts deposit both sequestrations) → `Active` (client picks a host,
//! escrows the full price and its auditors sequestration, metadata goes
//! on-chain) → `AwaitingFinalAck` (every epoch has a verdict) →
//! `Settled(outcome)`. Termination, proof failure and disputes short-cut to
//! `Settled` through the matrix in [`settlement_transfers`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arbitration::CaseId;
use crate::codec::Writer;
use crate::error::{Error, Result};
use crate::hash::Digest;
use crate::ledger::{Ledger, NodeId, TokenAmount, TxOutcome, TxPayload};
use crate::por::{self, FileMetadata, Proof};
use crate::trace::TraceEvent;

#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize,
)]
pub struct ContractId(pub u64);

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// What the client advertises and both parties commit to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractTerms {
    pub data_size: u64,
    /// Total storage duration in seconds; an exact multiple of
    /// `proof_period`.
    pub duration: u64,
    pub proof_period: u64,
    pub total_price: TokenAmount,
    pub file_sequestration: TokenAmount,
    pub auditors_sequestration: TokenAmount,
    /// Cumulative bad-or-missed proof count that terminates the contract.
    pub missed_or_bad_proof_limit: u32,
}

impl ContractTerms {
    pub fn validate(&self) -> Result<()> {
        if self.data_size == 0 {
            return Err(Error::InvalidTerms("data_size must be positive".into()));
        }
        if self.proof_period == 0 {
            return Err(Error::InvalidTerms("proof_period must be positive".into()));
        }
        if self.duration == 0 || !self.duration.is_multiple_of(self.proof_period) {
            return Err(Error::InvalidTerms(format!(
                "duration {} must be a positive multiple of proof_period {}",
                self.duration, self.proof_period
            )));
        }
        if self.missed_or_bad_proof_limit == 0 {
            return Err(Error::InvalidTerms(
                "missed_or_bad_proof_limit must be positive".into(),
            ));
        }
        // Every sum the lifecycle forms (client prepayment, host deposit,
        // full escrow) must fit the token width.
        let monetary = self
            .total_price
            .0
            .checked_add(self.file_sequestration.0)
            .and_then(|s| s.checked_add(self.auditors_sequestration.0))
            .and_then(|s| s.checked_add(self.auditors_sequestration.0));
        if monetary.is_none() {
            return Err(Error::InvalidTerms("monetary terms overflow".into()));
        }
        if self.duration.checked_add(2 * self.proof_period).is_none() {
            return Err(Error::InvalidTerms("duration overflows the clock".into()));
        }
        Ok(())
    }

    /// Number of proof epochs K.
    pub fn epochs(&self) -> u32 {
        (self.duration / self.proof_period) as u32
    }

    /// Payment released for a valid proof: floor(total/K), with the
    /// division remainder attached to the final epoch.
    pub fn epoch_payment(&self, epoch: u32) -> TokenAmount {
        let k = u64::from(self.epochs());
        let floor = self.total_price.0 / k;
        if u64::from(epoch) == k - 1 {
            TokenAmount(floor + self.total_price.0 - floor * k)
        } else {
            TokenAmount(floor)
        }
    }

    pub(crate) fn write_canonical(&self, w: &mut Writer) {
        w.u64(self.data_size)
            .u64(self.duration)
            .u64(self.proof_period)
            .u64(self.total_price.0)
            .u64(self.file_sequestration.0)
            .u64(self.auditors_sequestration.0)
            .u32(self.missed_or_bad_proof_limit);
    }
}

/// A host's deposits held between its request and the client's decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingDeposit {
    pub file_seq: TokenAmount,
    pub auditors_seq: TokenAmount,
}

/// Tokens a contract holds in custody. Every component is released exactly
/// once at settlement; requester deposits that lose the bid are refunded
/// at acceptance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EscrowAccount {
    pub payment_pool: TokenAmount,
    pub client_auditors_seq: TokenAmount,
    pub host_auditors_seq: TokenAmount,
    pub host_file_seq: TokenAmount,
    pub pending_requests: BTreeMap<NodeId, PendingDeposit>,
}

impl EscrowAccount {
    /// Total custody, wide enough that many pending requester deposits
    /// cannot overflow.
    pub fn total(&self) -> u128 {
        let pending: u128 = self
            .pending_requests
            .values()
            .map(|p| u128::from(p.file_seq.0) + u128::from(p.auditors_seq.0))
            .sum();
        u128::from(self.payment_pool.0)
            + u128::from(self.client_auditors_seq.0)
            + u128::from(self.host_auditors_seq.0)
            + u128::from(self.host_file_seq.0)
            + pending
    }

    fn component_mut(&mut self, c: EscrowComponent) -> &mut TokenAmount {
        match c {
            EscrowComponent::PaymentPool => &mut self.payment_pool,
            EscrowComponent::ClientAuditorsSeq => &mut self.client_auditors_seq,
            EscrowComponent::HostAuditorsSeq => &mut self.host_auditors_seq,
            EscrowComponent::HostFileSeq => &mut self.host_file_seq,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscrowComponent {
    PaymentPool,
    ClientAuditorsSeq,
    HostAuditorsSeq,
    HostFileSeq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofVerdict {
    Ok,
    Bad,
    Missed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub due_time: u64,
    pub proof_hash: Option<Digest>,
    pub verdict: Option<ProofVerdict>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractState {
    Proposed,
    Requested,
    Active,
    AwaitingFinalAck,
    Settled(SettlementKind),
}

impl ContractState {
    pub fn name(&self) -> &'static str {
        match self {
            ContractState::Proposed => "proposed",
            ContractState::Requested => "requested",
            ContractState::Active => "active",
            ContractState::AwaitingFinalAck => "awaiting_final_ack",
            ContractState::Settled(_) => "settled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettlementKind {
    NormalEnd,
    EarlyClient,
    EarlyHost,
    ProofFailure,
    DisputeClientDishonest,
    DisputeHostDishonest,
    /// A dispute vote tied; sequestrations return to their owners and
    /// nobody is banned.
    Escalated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beneficiary {
    Node(NodeId),
    Burn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: EscrowComponent,
    pub to: Beneficiary,
    pub amount: TokenAmount,
}

/// The terminal escrow distribution of a contract. Transfers drain the
/// escrow to exactly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettlementOutcome {
    pub contract: ContractId,
    pub kind: SettlementKind,
    pub transfers: Vec<Transfer>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentResult {
    pub epoch: u32,
    pub verdict: ProofVerdict,
    pub paid: TokenAmount,
}

/// Full lifecycle record of one storage agreement.
#[derive(Clone, Debug)]
pub struct StorageContract {
    pub id: ContractId,
    pub client: NodeId,
    pub host: Option<NodeId>,
    pub requesters: Vec<NodeId>,
    pub terms: ContractTerms,
    pub metadata: Option<FileMetadata>,
    pub state: ContractState,
    pub accept_time: Option<u64>,
    pub epoch_log: Vec<EpochRecord>,
    pub dispute: Option<CaseId>,
    pub settlement: Option<SettlementOutcome>,
}

impl StorageContract {
    /// Proof for epoch `e` is due at `accept_time + (e+1)·proof_period`.
    /// Also defined for `e == K`, which is the ack deadline and the
    /// dispute-selection epoch.
    pub fn epoch_due_time(&self, epoch: u32) -> u64 {
        let accept = self.accept_time.expect("contract not yet accepted");
        accept + (u64::from(epoch) + 1) * self.terms.proof_period
    }

    pub fn end_time(&self) -> u64 {
        self.accept_time.expect("contract not yet accepted") + self.terms.duration
    }

    /// The client must ack or dispute by one proof period past the end.
    pub fn ack_deadline(&self) -> u64 {
        self.end_time() + self.terms.proof_period
    }

    pub fn bad_or_missed(&self) -> u32 {
        self.epoch_log
            .iter()
            .filter(|e| matches!(e.verdict, Some(ProofVerdict::Bad | ProofVerdict::Missed)))
            .count() as u32
    }

    pub fn all_epochs_resolved(&self) -> bool {
        self.epoch_log.iter().all(|e| e.verdict.is_some())
    }

    pub fn valid_epochs(&self) -> u32 {
        self.epoch_log
            .iter()
            .filter(|e| e.verdict == Some(ProofVerdict::Ok))
            .count() as u32
    }

    fn require_state(&self, required: ContractState) -> Result<()> {
        if self.state != required {
            return Err(Error::InvalidState {
                contract: self.id,
                actual: self.state.name(),
                required: required.name(),
            });
        }
        Ok(())
    }
}

/// The transfer set for a settlement, in a fixed order. Zero-amount
/// transfers are omitted. `majority` is the reward-earning auditor set for
/// the two dispute outcomes and must be empty otherwise.
pub fn settlement_transfers(
    kind: SettlementKind,
    client: NodeId,
    host: NodeId,
    escrow: &EscrowAccount,
    majority: &[NodeId],
) -> Vec<Transfer> {
    use Beneficiary::{Burn, Node};
    use EscrowComponent::*;

    let mut transfers: Vec<Transfer> = Vec::new();
    let mut push = |from: EscrowComponent, to: Beneficiary, amount: TokenAmount| {
        if !amount.is_zero() {
            transfers.push(Transfer { from, to, amount });
        }
    };
    let split = |component: EscrowComponent,
                     pool: TokenAmount,
                     push: &mut dyn FnMut(EscrowComponent, Beneficiary, TokenAmount)| {
        let m = majority.len() as u64;
        debug_assert!(m > 0, "dispute settlement without majority voters");
        let share = TokenAmount(pool.0 / m);
        for &auditor in majority {
            push(component, Node(auditor), share);
        }
        push(component, Burn, TokenAmount(pool.0 - share.0 * m));
    };

    match kind {
        SettlementKind::NormalEnd | SettlementKind::EarlyClient => {
            push(PaymentPool, Node(host), escrow.payment_pool);
            push(ClientAuditorsSeq, Node(client), escrow.client_auditors_seq);
            push(HostAuditorsSeq, Node(host), escrow.host_auditors_seq);
            push(HostFileSeq, Node(host), escrow.host_file_seq);
        }
        SettlementKind::EarlyHost | SettlementKind::ProofFailure => {
            push(PaymentPool, Node(client), escrow.payment_pool);
            push(ClientAuditorsSeq, Node(client), escrow.client_auditors_seq);
            push(HostAuditorsSeq, Node(host), escrow.host_auditors_seq);
            push(HostFileSeq, Node(client), escrow.host_file_seq);
        }
        SettlementKind::DisputeClientDishonest => {
            push(PaymentPool, Node(host), escrow.payment_pool);
            split(ClientAuditorsSeq, escrow.client_auditors_seq, &mut push);
            push(HostAuditorsSeq, Node(host), escrow.host_auditors_seq);
            push(HostFileSeq, Node(host), escrow.host_file_seq);
        }
        SettlementKind::DisputeHostDishonest => {
            push(PaymentPool, Node(client), escrow.payment_pool);
            push(ClientAuditorsSeq, Node(client), escrow.client_auditors_seq);
            split(HostAuditorsSeq, escrow.host_auditors_seq, &mut push);
            push(HostFileSeq, Node(client), escrow.host_file_seq);
        }
        SettlementKind::Escalated => {
            push(PaymentPool, Node(client), escrow.payment_pool);
            push(ClientAuditorsSeq, Node(client), escrow.client_auditors_seq);
            push(HostAuditorsSeq, Node(host), escrow.host_auditors_seq);
            push(HostFileSeq, Node(host), escrow.host_file_seq);
        }
    }
    transfers
}

impl Ledger {
    pub(crate) fn handle_propose(
        &mut self,
        sender: NodeId,
        terms: ContractTerms,
    ) -> Result<ContractId> {
        if !self.node_info(sender)?.kind.is_client() {
            return Err(Error::WrongRole {
                node: sender,
                role: "client",
            });
        }
        terms.validate()?;
        let id = self.next_contract_id();
        self.contracts.insert(
            id,
            StorageContract {
                id,
                client: sender,
                host: None,
                requesters: Vec::new(),
                terms: terms.clone(),
                metadata: None,
                state: ContractState::Proposed,
                accept_time: None,
                epoch_log: Vec::new(),
                dispute: None,
                settlement: None,
            },
        );
        self.accounts.escrows.insert(id, EscrowAccount::default());
        self.record(TraceEvent::ContractProposed {
            time: self.clock,
            contract: id,
            client: sender,
            terms,
        });
        Ok(id)
    }

    pub(crate) fn handle_request(&mut self, sender: NodeId, contract: ContractId) -> Result<()> {
        let info = self.node_info(sender)?;
        if !info.kind.is_host() {
            return Err(Error::WrongRole {
                node: sender,
                role: "host",
            });
        }
        let free_capacity = info.free_capacity;
        let c = self.contract(contract)?;
        if !matches!(c.state, ContractState::Proposed | ContractState::Requested) {
            return Err(Error::InvalidState {
                contract,
                actual: c.state.name(),
                required: "proposed",
            });
        }
        if c.requesters.contains(&sender) {
            return Err(Error::AlreadyRequested {
                contract,
                host: sender,
            });
        }
        let deposit = PendingDeposit {
            file_seq: c.terms.file_sequestration,
            auditors_seq: c.terms.auditors_sequestration,
        };
        let needed = TokenAmount(deposit.file_seq.0 + deposit.auditors_seq.0);
        let data_size = c.terms.data_size;
        self.accounts.require_available(sender, needed)?;
        if free_capacity < data_size {
            return Err(Error::InsufficientCapacity {
                node: sender,
                available: free_capacity,
                required: data_size,
            });
        }

        // All checks passed; commit.
        self.accounts.debit(sender, needed);
        self.accounts
            .escrows
            .get_mut(&contract)
            .expect("escrow exists for contract")
            .pending_requests
            .insert(sender, deposit);
        self.node_info_mut(sender)?.free_capacity -= data_size;
        let c = self.contracts.get_mut(&contract).expect("checked");
        c.requesters.push(sender);
        c.state = ContractState::Requested;
        self.record(TraceEvent::HostRequested {
            time: self.clock,
            contract,
            host: sender,
        });
        Ok(())
    }

    pub(crate) fn handle_accept(
        &mut self,
        sender: NodeId,
        contract: ContractId,
        host: NodeId,
        metadata: FileMetadata,
    ) -> Result<()> {
        let c = self.contract(contract)?;
        if sender != c.client {
            return Err(Error::WrongRole {
                node: sender,
                role: "contract client",
            });
        }
        c.require_state(ContractState::Requested)?;
        if !c.requesters.contains(&host) {
            return Err(Error::HostNotRequester { contract, host });
        }
        if self.is_banned(host) {
            return Err(Error::BannedNode(host));
        }
        if metadata.file_len != c.terms.data_size {
            return Err(Error::MetadataMismatch {
                metadata_len: metadata.file_len,
                data_size: c.terms.data_size,
            });
        }
        let expected_chunks = c.terms.data_size.div_ceil(u64::from(metadata.chunk_size.max(1)));
        if metadata.chunk_size == 0 || u64::from(metadata.chunk_count) != expected_chunks {
            return Err(Error::Decode(format!(
                "metadata geometry inconsistent: {} chunks of {} bytes for {} bytes",
                metadata.chunk_count, metadata.chunk_size, c.terms.data_size
            )));
        }
        let client_needs =
            TokenAmount(c.terms.total_price.0 + c.terms.auditors_sequestration.0);
        self.accounts.require_available(sender, client_needs)?;

        // Commit: client escrow in, chosen host's deposits promoted, the
        // other requesters refunded with their capacity released.
        let terms = c.terms.clone();
        let losers: Vec<NodeId> = c
            .requesters
            .iter()
            .copied()
            .filter(|r| *r != host)
            .collect();
        self.accounts.debit(sender, client_needs);
        let escrow = self
            .accounts
            .escrows
            .get_mut(&contract)
            .expect("escrow exists");
        escrow.payment_pool = terms.total_price;
        escrow.client_auditors_seq = terms.auditors_sequestration;
        let chosen = escrow
            .pending_requests
            .remove(&host)
            .expect("host is a requester");
        escrow.host_file_seq = chosen.file_seq;
        escrow.host_auditors_seq = chosen.auditors_seq;
        let refunds: Vec<(NodeId, PendingDeposit)> = losers
            .iter()
            .map(|r| (*r, escrow.pending_requests.remove(r).expect("requester deposit")))
            .collect();
        for (loser, deposit) in refunds {
            self.accounts
                .credit(loser, TokenAmount(deposit.file_seq.0 + deposit.auditors_seq.0));
            self.node_info_mut(loser)?.free_capacity += terms.data_size;
        }

        let accept_time = self.clock;
        let epochs = terms.epochs();
        let metadata_root = metadata.merkle_root;
        let c = self.contracts.get_mut(&contract).expect("checked");
        c.host = Some(host);
        c.metadata = Some(metadata);
        c.accept_time = Some(accept_time);
        c.state = ContractState::Active;
        c.epoch_log = (0..epochs)
            .map(|e| EpochRecord {
                due_time: accept_time + (u64::from(e) + 1) * terms.proof_period,
                proof_hash: None,
                verdict: None,
            })
            .collect();
        self.record(TraceEvent::ContractAccepted {
            time: accept_time,
            contract,
            host,
            metadata_root,
        });
        Ok(())
    }

    pub(crate) fn handle_proof(
        &mut self,
        sender: NodeId,
        contract: ContractId,
        epoch: u32,
        proof: &Proof,
        timestamp: u64,
    ) -> Result<PaymentResult> {
        let c = self.contract(contract)?;
        c.require_state(ContractState::Active)?;
        if c.host != Some(sender) {
            return Err(Error::WrongRole {
                node: sender,
                role: "contract host",
            });
        }
        let record = c
            .epoch_log
            .get(epoch as usize)
            .copied()
            .ok_or(Error::UnknownEpoch { contract, epoch })?;
        if record.verdict.is_some() {
            return Err(Error::EpochAlreadyResolved { contract, epoch });
        }
        let window = self.config.max_skew;
        if timestamp.abs_diff(record.due_time) > window {
            return Err(Error::OutsideProofWindow {
                epoch,
                timestamp,
                window_start: record.due_time.saturating_sub(window),
                window_end: record.due_time + window,
            });
        }
        let metadata = *c.metadata.as_ref().expect("active contract has metadata");
        let challenge_count = self.config.challenge_count;

        let seed = por::derive_seed(self, contract, epoch)?;
        let challenge = por::derive_challenge(&seed, metadata.chunk_count, challenge_count);
        let valid = por::verify_proof(&metadata, &challenge, proof);
        let verdict = if valid {
            ProofVerdict::Ok
        } else {
            ProofVerdict::Bad
        };
        let paid = if valid {
            self.contract(contract)?.terms.epoch_payment(epoch)
        } else {
            TokenAmount::ZERO
        };

        // Commit.
        let proof_hash = proof.digest();
        let c = self.contracts.get_mut(&contract).expect("checked");
        let entry = &mut c.epoch_log[epoch as usize];
        entry.proof_hash = Some(proof_hash);
        entry.verdict = Some(verdict);
        if !paid.is_zero() {
            let escrow = self
                .accounts
                .escrows
                .get_mut(&contract)
                .expect("escrow exists");
            escrow.payment_pool = escrow
                .payment_pool
                .checked_sub(paid)
                .expect("payment pool covers scheduled payments");
            self.accounts.credit(sender, paid);
        }
        let rep = self.reputation.entry(sender).or_default();
        rep.host_proofs_submitted += 1;
        if valid {
            rep.host_proofs_succeeded += 1;
        }
        self.record(TraceEvent::ProofVerdict {
            time: self.clock,
            contract,
            epoch,
            verdict,
            paid,
        });
        self.after_epoch_update(contract)?;
        Ok(PaymentResult {
            epoch,
            verdict,
            paid,
        })
    }

    /// Proof-failure termination and the transition into the final-ack
    /// window, evaluated after any epoch verdict lands.
    fn after_epoch_update(&mut self, contract: ContractId) -> Result<()> {
        let c = self.contract(contract)?;
        if c.state != ContractState::Active {
            return Ok(());
        }
        if c.bad_or_missed() >= c.terms.missed_or_bad_proof_limit {
            self.settle_contract(contract, SettlementKind::ProofFailure, &[])?;
        } else if c.all_epochs_resolved() {
            let c = self.contracts.get_mut(&contract).expect("checked");
            c.state = ContractState::AwaitingFinalAck;
            self.record(TraceEvent::AwaitingAck {
                time: self.clock,
                contract,
            });
        }
        Ok(())
    }

    pub(crate) fn handle_termination(
        &mut self,
        sender: NodeId,
        contract: ContractId,
    ) -> Result<SettlementOutcome> {
        let c = self.contract(contract)?;
        c.require_state(ContractState::Active)?;
        let kind = if sender == c.client {
            SettlementKind::EarlyClient
        } else if c.host == Some(sender) {
            SettlementKind::EarlyHost
        } else {
            return Err(Error::WrongRole {
                node: sender,
                role: "contract party",
            });
        };
        self.settle_contract(contract, kind, &[])
    }

    pub(crate) fn handle_finalize(
        &mut self,
        sender: NodeId,
        contract: ContractId,
        timestamp: u64,
    ) -> Result<SettlementOutcome> {
        let c = self.contract(contract)?;
        if sender != c.client {
            return Err(Error::WrongRole {
                node: sender,
                role: "contract client",
            });
        }
        c.require_state(ContractState::AwaitingFinalAck)?;
        if c.dispute.is_some() {
            return Err(Error::DisputePending(contract));
        }
        if timestamp > c.ack_deadline() {
            return Err(Error::AckOutOfWindow {
                contract,
                timestamp,
                reason: "past the acknowledgement deadline",
            });
        }
        if timestamp + self.config.max_skew < c.end_time().saturating_sub(c.terms.proof_period) {
            return Err(Error::AckOutOfWindow {
                contract,
                timestamp,
                reason: "before the final download window",
            });
        }
        self.settle_contract(contract, SettlementKind::NormalEnd, &[])
    }

    /// Sweeps every deadline the current clock has passed: unsubmitted
    /// proofs become `Missed`, proof failures and expired final-ack windows
    /// settle or escalate, and timed-out votes resolve. Returns the events
    /// generated by this sweep.
    pub fn check_deadlines(&mut self) -> Result<Vec<TraceEvent>> {
        let events_start = self.events.len();
        let now = self.clock;
        let window = self.config.max_skew;

        let contract_ids: Vec<ContractId> = self.contracts.keys().copied().collect();
        for id in contract_ids {
            let c = self.contracts.get_mut(&id).expect("listed");
            if c.state == ContractState::Active {
                let mut missed = Vec::new();
                for (e, entry) in c.epoch_log.iter_mut().enumerate() {
                    if entry.verdict.is_none() && now > entry.due_time + window {
                        entry.verdict = Some(ProofVerdict::Missed);
                        missed.push(e as u32);
                    }
                }
                for epoch in missed {
                    self.record(TraceEvent::ProofMissed {
                        time: now,
                        contract: id,
                        epoch,
                    });
                }
                self.after_epoch_update(id)?;
            }
            let c = self.contract(id)?;
            if c.state == ContractState::AwaitingFinalAck
                && c.dispute.is_none()
                && now > c.ack_deadline()
            {
                // The client went silent: escrow must not strand, so a
                // dispute opens on its behalf. If the network cannot field
                // a committee the case escalates immediately.
                match self.open_case(id, true) {
                    Ok(_) => {}
                    Err(Error::InsufficientAuditors { .. }) => {
                        self.settle_contract(id, SettlementKind::Escalated, &[])?;
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let case_ids: Vec<CaseId> = self.cases.keys().copied().collect();
        for id in case_ids {
            let case = self.case(id)?;
            if case.verdict.is_none() && now > case.vote_deadline {
                self.resolve_case_internal(id)?;
            }
        }
        Ok(self.events[events_start..].to_vec())
    }

    /// Applies a settlement: moves every escrow component to its
    /// destination, asserts the escrow drained to zero, releases the host's
    /// capacity, records the outcome and marks the contract settled.
    pub(crate) fn settle_contract(
        &mut self,
        contract: ContractId,
        kind: SettlementKind,
        majority: &[NodeId],
    ) -> Result<SettlementOutcome> {
        let c = self.contract(contract)?;
        let client = c.client;
        let host = c.host.expect("settlement requires an accepted contract");
        let data_size = c.terms.data_size;
        let mut escrow = self
            .accounts
            .escrows
            .remove(&contract)
            .expect("escrow exists until settlement");
        assert!(
            escrow.pending_requests.is_empty(),
            "pending requester deposits survive past acceptance"
        );

        let transfers = settlement_transfers(kind, client, host, &escrow, majority);
        for t in &transfers {
            let component = escrow.component_mut(t.from);
            *component = component
                .checked_sub(t.amount)
                .expect("transfer within component balance");
            match t.to {
                Beneficiary::Node(node) => self.accounts.credit(node, t.amount),
                Beneficiary::Burn => self.accounts.burn(t.amount),
            }
        }
        assert!(
            escrow.total() == 0,
            "settlement must drain the escrow exactly"
        );

        self.node_info_mut(host)?.free_capacity += data_size;
        let banned = match kind {
            SettlementKind::DisputeClientDishonest => Some(client),
            SettlementKind::DisputeHostDishonest => Some(host),
            _ => None,
        };
        if let Some(node) = banned {
            self.banned.insert(node);
        }

        let outcome = SettlementOutcome {
            contract,
            kind,
            transfers,
        };
        let c = self.contracts.get_mut(&contract).expect("checked");
        c.state = ContractState::Settled(kind);
        c.settlement = Some(outcome.clone());
        self.record(TraceEvent::Settled {
            time: self.clock,
            contract,
            kind,
            banned,
            transfers: outcome.transfers.clone(),
        });
        Ok(outcome)
    }

    // ── typed convenience ops, stamped with the sender's local clock ──

    pub fn propose(&mut self, client: NodeId, terms: ContractTerms) -> Result<ContractId> {
        let tx = self.make_tx(client, TxPayload::Proposal { terms })?;
        match self.submit(tx)?.outcome {
            TxOutcome::Proposed(id) => Ok(id),
            _ => unreachable!("proposal yields a contract id"),
        }
    }

    pub fn request(&mut self, host: NodeId, contract: ContractId) -> Result<()> {
        let tx = self.make_tx(host, TxPayload::HostRequest { contract })?;
        self.submit(tx).map(|_| ())
    }

    pub fn accept(
        &mut self,
        client: NodeId,
        contract: ContractId,
        host: NodeId,
        metadata: FileMetadata,
    ) -> Result<()> {
        let tx = self.make_tx(
            client,
            TxPayload::Agreement {
                contract,
                host,
                metadata,
            },
        )?;
        self.submit(tx).map(|_| ())
    }

    pub fn submit_proof(
        &mut self,
        host: NodeId,
        contract: ContractId,
        epoch: u32,
        proof: Proof,
    ) -> Result<PaymentResult> {
        let tx = self.make_tx(
            host,
            TxPayload::ProofSubmission {
                contract,
                epoch,
                proof,
            },
        )?;
        match self.submit(tx)?.outcome {
            TxOutcome::ProofProcessed(result) => Ok(result),
            _ => unreachable!("proof submission yields a payment result"),
        }
    }

    pub fn client_terminate(
        &mut self,
        client: NodeId,
        contract: ContractId,
    ) -> Result<SettlementOutcome> {
        let c = self.contract(contract)?;
        if client != c.client {
            return Err(Error::WrongRole {
                node: client,
                role: "contract client",
            });
        }
        let tx = self.make_tx(client, TxPayload::Termination { contract })?;
        match self.submit(tx)?.outcome {
            TxOutcome::Terminated(outcome) => Ok(outcome),
            _ => unreachable!("termination yields a settlement"),
        }
    }

    pub fn host_terminate(
        &mut self,
        host: NodeId,
        contract: ContractId,
    ) -> Result<SettlementOutcome> {
        let c = self.contract(contract)?;
        if c.host != Some(host) {
            return Err(Error::WrongRole {
                node: host,
                role: "contract host",
            });
        }
        let tx = self.make_tx(host, TxPayload::Termination { contract })?;
        match self.submit(tx)?.outcome {
            TxOutcome::Terminated(outcome) => Ok(outcome),
            _ => unreachable!("termination yields a settlement"),
        }
    }

    /// The client acknowledges a correct final download.
    pub fn finalize(&mut self, client: NodeId, contract: ContractId) -> Result<SettlementOutcome> {
        let tx = self.make_tx(client, TxPayload::CompletionAck { contract })?;
        match self.submit(tx)?.outcome {
            TxOutcome::Finalized(outcome) => Ok(outcome),
            _ => unreachable!("completion ack yields a settlement"),
        }
    }

    pub fn open_dispute(&mut self, client: NodeId, contract: ContractId) -> Result<CaseId> {
        let tx = self.make_tx(client, TxPayload::DisputeOpen { contract })?;
        match self.submit(tx)?.outcome {
            TxOutcome::DisputeOpened(case) => Ok(case),
            _ => unreachable!("dispute open yields a case id"),
        }
    }
}
