//! Simulated private blockchain: identified accounts, token balances, a
//! transaction log grouped into blocks, and a global clock with bounded
//! per-node skew.
//!
//! The ledger is the single authoritative sequencer. Every protocol action
//! enters through [`Ledger::submit`], which validates the sender and
//! timestamp, dispatches the payload to the contract or arbitration logic,
//! and appends a block on success. Rejected transactions leave no trace on
//! the chain and no side effects in the state.
//!
//! The economy is closed: tokens are minted only by node registration
//! (forbidden once the simulation has started) and from then on the sum of
//! balances, escrow holdings and the burn account is constant.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arbitration::{AuditCase, CaseId, Vote};
use crate::codec::Writer;
use crate::contract::{
    ContractId, ContractTerms, EscrowAccount, PaymentResult, SettlementOutcome, StorageContract,
};
use crate::error::{Error, Result};
use crate::hash::{Digest, Hasher};
use crate::por::{FileMetadata, Proof};
use crate::reputation::ReputationRecord;
use crate::trace::TraceEvent;

/// Identifier of a registered node. Ordering is the registration order and
/// doubles as the deterministic tie-breaker wherever one is needed.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize,
)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum NodeKind {
    Client,
    Host { capacity: u64 },
    Auditor,
}

impl NodeKind {
    pub fn is_client(&self) -> bool {
        matches!(self, NodeKind::Client)
    }

    pub fn is_host(&self) -> bool {
        matches!(self, NodeKind::Host { .. })
    }

    pub fn is_auditor(&self) -> bool {
        matches!(self, NodeKind::Auditor)
    }
}

#[derive(Clone, Debug)]
pub struct NodeInfo {
    pub kind: NodeKind,
    pub skew: i64,
    pub free_capacity: u64,
}

/// Token balance in the smallest currency unit. No fractional units, no
/// fees; arithmetic that would go negative is rejected at the call site.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct TokenAmount(pub u64);

impl TokenAmount {
    pub const ZERO: TokenAmount = TokenAmount(0);

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: TokenAmount) -> Option<TokenAmount> {
        self.0.checked_add(other.0).map(TokenAmount)
    }

    pub fn checked_sub(self, other: TokenAmount) -> Option<TokenAmount> {
        self.0.checked_sub(other.0).map(TokenAmount)
    }
}

impl fmt::Display for TokenAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for TokenAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Everything a transaction can carry. The variant determines which
/// contract or arbitration handler validates and applies it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TxPayload {
    Proposal {
        terms: ContractTerms,
    },
    HostRequest {
        contract: ContractId,
    },
    Agreement {
        contract: ContractId,
        host: NodeId,
        metadata: FileMetadata,
    },
    ProofSubmission {
        contract: ContractId,
        epoch: u32,
        proof: Proof,
    },
    CompletionAck {
        contract: ContractId,
    },
    Termination {
        contract: ContractId,
    },
    DisputeOpen {
        contract: ContractId,
    },
    AuditorVote {
        case: CaseId,
        vote: Vote,
    },
}

impl TxPayload {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TxPayload::Proposal { .. } => "proposal",
            TxPayload::HostRequest { .. } => "host_request",
            TxPayload::Agreement { .. } => "agreement",
            TxPayload::ProofSubmission { .. } => "proof_submission",
            TxPayload::CompletionAck { .. } => "completion_ack",
            TxPayload::Termination { .. } => "termination",
            TxPayload::DisputeOpen { .. } => "dispute_open",
            TxPayload::AuditorVote { .. } => "auditor_vote",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            TxPayload::Proposal { .. } => 1,
            TxPayload::HostRequest { .. } => 2,
            TxPayload::Agreement { .. } => 3,
            TxPayload::ProofSubmission { .. } => 4,
            TxPayload::CompletionAck { .. } => 5,
            TxPayload::Termination { .. } => 6,
            TxPayload::DisputeOpen { .. } => 7,
            TxPayload::AuditorVote { .. } => 8,
        }
    }

    fn write_canonical(&self, w: &mut Writer) {
        w.u8(self.tag());
        match self {
            TxPayload::Proposal { terms } => terms.write_canonical(w),
            TxPayload::HostRequest { contract } => {
                w.u64(contract.0);
            }
            TxPayload::Agreement {
                contract,
                host,
                metadata,
            } => {
                w.u64(contract.0).u32(host.0);
                metadata.write_canonical(w);
            }
            TxPayload::ProofSubmission {
                contract,
                epoch,
                proof,
            } => {
                w.u64(contract.0).u32(*epoch);
                proof.write_canonical(w);
            }
            TxPayload::CompletionAck { contract }
            | TxPayload::Termination { contract }
            | TxPayload::DisputeOpen { contract } => {
                w.u64(contract.0);
            }
            TxPayload::AuditorVote { case, vote } => {
                w.u64(case.0).u8(*vote as u8);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: NodeId,
    pub payload: TxPayload,
    /// Simulated seconds on the sender's clock.
    pub timestamp: u64,
}

impl Transaction {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.sender.0).u64(self.timestamp);
        self.payload.write_canonical(&mut w);
        w.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    pub parent_hash: Digest,
    pub transactions: Vec<Transaction>,
    pub timestamp: u64,
    pub hash: Digest,
}

impl Block {
    pub fn compute_hash(
        index: u64,
        parent_hash: &Digest,
        transactions: &[Transaction],
        timestamp: u64,
    ) -> Digest {
        let mut h = Hasher::new("depot.block");
        h.u64(index).digest(parent_hash).u64(timestamp);
        h.u32(transactions.len() as u32);
        for tx in transactions {
            h.bytes(&tx.canonical_bytes());
        }
        h.finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRef {
    pub index: u64,
    pub hash: Digest,
}

/// Result of a successfully applied transaction: where it landed and what
/// the handler produced.
#[derive(Clone, Debug)]
pub struct Applied {
    pub block: BlockRef,
    pub outcome: TxOutcome,
}

#[derive(Clone, Debug)]
pub enum TxOutcome {
    Proposed(ContractId),
    Requested,
    Accepted,
    ProofProcessed(PaymentResult),
    Finalized(SettlementOutcome),
    Terminated(SettlementOutcome),
    DisputeOpened(CaseId),
    /// Carries the settlement if this vote completed the case.
    VoteRecorded(Option<SettlementOutcome>),
}

#[derive(Clone, Copy, Debug)]
pub struct LedgerConfig {
    /// Maximum tolerated difference between any node clock (and any
    /// transaction timestamp) and the ledger clock, in seconds.
    pub max_skew: u64,
    /// Chunks challenged per proof epoch.
    pub challenge_count: u32,
    /// Auditors drawn per dispute. Odd by default so a full vote cannot tie.
    pub auditors_per_case: u32,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            max_skew: 900,
            challenge_count: 16,
            auditors_per_case: 5,
        }
    }
}

/// Balances, per-contract escrow accounts, and the burn account that
/// absorbs integer-division remainders from auditor reward splits.
#[derive(Clone, Debug, Default)]
pub struct Accounts {
    pub(crate) balances: BTreeMap<NodeId, TokenAmount>,
    pub(crate) escrows: BTreeMap<ContractId, EscrowAccount>,
    pub(crate) burned: TokenAmount,
}

impl Accounts {
    pub fn balance(&self, node: NodeId) -> TokenAmount {
        self.balances.get(&node).copied().unwrap_or(TokenAmount::ZERO)
    }

    pub fn escrow(&self, contract: ContractId) -> Option<&EscrowAccount> {
        self.escrows.get(&contract)
    }

    pub fn burned(&self) -> TokenAmount {
        self.burned
    }

    /// Total tokens anywhere in the system.
    pub fn total(&self) -> u128 {
        let balances: u128 = self.balances.values().map(|b| u128::from(b.0)).sum();
        let escrows: u128 = self.escrows.values().map(|e| e.total()).sum();
        balances + escrows + u128::from(self.burned.0)
    }

    pub(crate) fn require_available(&self, node: NodeId, amount: TokenAmount) -> Result<()> {
        let available = self.balance(node);
        if available < amount {
            return Err(Error::InsufficientBalance {
                node,
                available: available.0,
                required: amount.0,
            });
        }
        Ok(())
    }

    /// Removes tokens from a balance. The caller must have checked
    /// availability; a shortfall here is a logic error.
    pub(crate) fn debit(&mut self, node: NodeId, amount: TokenAmount) {
        let balance = self.balances.get_mut(&node).expect("debit of unregistered node");
        *balance = balance.checked_sub(amount).expect("debit exceeds checked balance");
    }

    pub(crate) fn credit(&mut self, node: NodeId, amount: TokenAmount) {
        let balance = self.balances.entry(node).or_insert(TokenAmount::ZERO);
        *balance = balance.checked_add(amount).expect("balance overflow");
    }

    pub(crate) fn burn(&mut self, amount: TokenAmount) {
        self.burned = self.burned.checked_add(amount).expect("burn overflow");
    }
}

/// The full simulated chain state. See the module docs for the mutation
/// discipline.
pub struct Ledger {
    pub(crate) config: LedgerConfig,
    pub(crate) blocks: Vec<Block>,
    pub(crate) clock: u64,
    pub(crate) started: bool,
    pub(crate) nodes: BTreeMap<NodeId, NodeInfo>,
    pub(crate) banned: BTreeSet<NodeId>,
    pub(crate) accounts: Accounts,
    pub(crate) contracts: BTreeMap<ContractId, StorageContract>,
    pub(crate) cases: BTreeMap<CaseId, AuditCase>,
    pub(crate) reputation: BTreeMap<NodeId, ReputationRecord>,
    pub(crate) events: Vec<TraceEvent>,
    pub(crate) initial_supply: u128,
    next_node: u32,
    next_contract: u64,
    next_case: u64,
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Ledger {
        Ledger {
            config,
            blocks: Vec::new(),
            clock: 0,
            started: false,
            nodes: BTreeMap::new(),
            banned: BTreeSet::new(),
            accounts: Accounts::default(),
            contracts: BTreeMap::new(),
            cases: BTreeMap::new(),
            reputation: BTreeMap::new(),
            events: Vec::new(),
            initial_supply: 0,
            next_node: 0,
            next_contract: 0,
            next_case: 0,
        }
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    /// Mints `initial_balance` for a fresh node. The only operation that
    /// creates tokens; rejected once the simulation has started.
    pub fn register_node(&mut self, kind: NodeKind, initial_balance: TokenAmount) -> Result<NodeId> {
        if self.started {
            return Err(Error::RegistrationClosed);
        }
        let id = NodeId(self.next_node);
        self.next_node += 1;
        let free_capacity = match kind {
            NodeKind::Host { capacity } => capacity,
            _ => 0,
        };
        self.nodes.insert(
            id,
            NodeInfo {
                kind,
                skew: 0,
                free_capacity,
            },
        );
        self.accounts.credit(id, initial_balance);
        self.initial_supply += u128::from(initial_balance.0);
        self.events.push(TraceEvent::NodeRegistered {
            time: self.clock,
            node: id,
            kind,
            balance: initial_balance,
        });
        Ok(id)
    }

    pub fn set_node_skew(&mut self, node: NodeId, skew: i64) -> Result<()> {
        if skew.unsigned_abs() > self.config.max_skew {
            return Err(Error::SkewTooLarge {
                skew,
                max_skew: self.config.max_skew,
            });
        }
        let info = self.node_info_mut(node)?;
        info.skew = skew;
        Ok(())
    }

    pub fn node_kind(&self, node: NodeId) -> Result<NodeKind> {
        Ok(self.node_info(node)?.kind)
    }

    pub fn free_capacity(&self, node: NodeId) -> Result<u64> {
        Ok(self.node_info(node)?.free_capacity)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &NodeInfo)> {
        self.nodes.iter().map(|(id, info)| (*id, info))
    }

    pub(crate) fn node_info(&self, node: NodeId) -> Result<&NodeInfo> {
        self.nodes.get(&node).ok_or(Error::UnknownNode(node))
    }

    pub(crate) fn node_info_mut(&mut self, node: NodeId) -> Result<&mut NodeInfo> {
        self.nodes.get_mut(&node).ok_or(Error::UnknownNode(node))
    }

    pub fn is_banned(&self, node: NodeId) -> bool {
        self.banned.contains(&node)
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// The sender-side timestamp for a node: ledger clock plus its skew.
    pub fn local_time(&self, node: NodeId) -> Result<u64> {
        let info = self.node_info(node)?;
        Ok(self.clock.saturating_add_signed(info.skew))
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn block(&self, index: u64) -> Result<&Block> {
        self.blocks
            .get(index as usize)
            .ok_or(Error::BlockOutOfRange(index))
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_hash(&self, index: u64) -> Result<Digest> {
        Ok(self.block(index)?.hash)
    }

    pub fn balance(&self, node: NodeId) -> TokenAmount {
        self.accounts.balance(node)
    }

    pub fn accounts(&self) -> &Accounts {
        &self.accounts
    }

    pub fn contract(&self, id: ContractId) -> Result<&StorageContract> {
        self.contracts.get(&id).ok_or(Error::UnknownContract(id))
    }

    pub fn contracts(&self) -> impl Iterator<Item = &StorageContract> {
        self.contracts.values()
    }

    pub fn case(&self, id: CaseId) -> Result<&AuditCase> {
        self.cases.get(&id).ok_or(Error::UnknownCase(id))
    }

    pub fn cases(&self) -> impl Iterator<Item = &AuditCase> {
        self.cases.values()
    }

    pub fn reputation(&self, node: NodeId) -> ReputationRecord {
        self.reputation.get(&node).copied().unwrap_or_default()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub(crate) fn record(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn started(&self) -> bool {
        self.started
    }

    pub fn initial_supply(&self) -> u128 {
        self.initial_supply
    }

    pub fn total_supply(&self) -> u128 {
        self.accounts.total()
    }

    /// The closed-economy invariant: balances + escrows + burn account must
    /// always equal the minted total.
    pub fn check_conservation(&self) -> Result<()> {
        let total = self.total_supply();
        if total != self.initial_supply {
            return Err(Error::Scenario(format!(
                "token conservation violated: supply {total}, minted {}",
                self.initial_supply
            )));
        }
        Ok(())
    }

    /// Moves the global clock forward and re-evaluates every deadline that
    /// the new time may have passed (missed proofs, proof-failure
    /// termination, final-ack expiry, vote timeouts).
    pub fn advance_clock(&mut self, delta: u64) -> Result<()> {
        if delta == 0 {
            return Err(Error::ZeroClockAdvance);
        }
        self.started = true;
        self.clock += delta;
        self.check_deadlines()?;
        debug_assert!(self.check_conservation().is_ok());
        Ok(())
    }

    /// Builds a transaction stamped with the sender's local clock.
    pub fn make_tx(&self, sender: NodeId, payload: TxPayload) -> Result<Transaction> {
        Ok(Transaction {
            sender,
            timestamp: self.local_time(sender)?,
            payload,
        })
    }

    /// Validates and applies a transaction, appending it to a fresh block on
    /// success. Rejected transactions have no side effects.
    pub fn submit(&mut self, tx: Transaction) -> Result<Applied> {
        self.started = true;
        self.node_info(tx.sender)?;
        if self.banned.contains(&tx.sender) {
            return Err(Error::BannedNode(tx.sender));
        }
        if tx.timestamp.abs_diff(self.clock) > self.config.max_skew {
            return Err(Error::TimestampOutOfSkew {
                timestamp: tx.timestamp,
                clock: self.clock,
                max_skew: self.config.max_skew,
            });
        }
        let outcome = self.apply_payload(&tx)?;
        let amounts = self.tx_amounts(&tx, &outcome);
        let block = self.append_block(tx.clone());
        self.record(TraceEvent::BlockCommitted {
            time: self.clock,
            block: block.index,
            hash: block.hash,
            sender: tx.sender,
            payload: tx.payload.kind_name().to_string(),
            amounts,
        });
        debug_assert!(self.check_conservation().is_ok());
        Ok(Applied { block, outcome })
    }

    /// [`Ledger::submit`] reduced to the chain-level result.
    pub fn submit_transaction(&mut self, tx: Transaction) -> Result<BlockRef> {
        Ok(self.submit(tx)?.block)
    }

    fn apply_payload(&mut self, tx: &Transaction) -> Result<TxOutcome> {
        match &tx.payload {
            TxPayload::Proposal { terms } => self
                .handle_propose(tx.sender, terms.clone())
                .map(TxOutcome::Proposed),
            TxPayload::HostRequest { contract } => self
                .handle_request(tx.sender, *contract)
                .map(|()| TxOutcome::Requested),
            TxPayload::Agreement {
                contract,
                host,
                metadata,
            } => self
                .handle_accept(tx.sender, *contract, *host, *metadata)
                .map(|()| TxOutcome::Accepted),
            TxPayload::ProofSubmission {
                contract,
                epoch,
                proof,
            } => self
                .handle_proof(tx.sender, *contract, *epoch, proof, tx.timestamp)
                .map(TxOutcome::ProofProcessed),
            TxPayload::CompletionAck { contract } => self
                .handle_finalize(tx.sender, *contract, tx.timestamp)
                .map(TxOutcome::Finalized),
            TxPayload::Termination { contract } => self
                .handle_termination(tx.sender, *contract)
                .map(TxOutcome::Terminated),
            TxPayload::DisputeOpen { contract } => self
                .handle_dispute_open(tx.sender, *contract)
                .map(TxOutcome::DisputeOpened),
            TxPayload::AuditorVote { case, vote } => self
                .handle_vote(tx.sender, *case, *vote)
                .map(TxOutcome::VoteRecorded),
        }
    }

    /// Principal token amounts of a transaction, for the per-transaction
    /// trace record.
    fn tx_amounts(&self, tx: &Transaction, outcome: &TxOutcome) -> Vec<TokenAmount> {
        match (&tx.payload, outcome) {
            (TxPayload::Proposal { terms }, _) => vec![
                terms.total_price,
                terms.file_sequestration,
                terms.auditors_sequestration,
            ],
            (TxPayload::HostRequest { contract }, _) => self
                .contracts
                .get(contract)
                .map(|c| vec![c.terms.file_sequestration, c.terms.auditors_sequestration])
                .unwrap_or_default(),
            (TxPayload::Agreement { contract, .. }, _) => self
                .contracts
                .get(contract)
                .map(|c| vec![c.terms.total_price, c.terms.auditors_sequestration])
                .unwrap_or_default(),
            (_, TxOutcome::ProofProcessed(result)) => vec![result.paid],
            _ => Vec::new(),
        }
    }

    fn append_block(&mut self, tx: Transaction) -> BlockRef {
        let index = self.blocks.len() as u64;
        let parent_hash = self
            .blocks
            .last()
            .map(|b| b.hash)
            .unwrap_or(Digest::ZERO);
        let transactions = vec![tx];
        let hash = Block::compute_hash(index, &parent_hash, &transactions, self.clock);
        self.blocks.push(Block {
            index,
            parent_hash,
            transactions,
            timestamp: self.clock,
            hash,
        });
        BlockRef { index, hash }
    }

    pub(crate) fn next_contract_id(&mut self) -> ContractId {
        let id = ContractId(self.next_contract);
        self.next_contract += 1;
        id
    }

    pub(crate) fn next_case_id(&mut self) -> CaseId {
        let id = CaseId(self.next_case);
        self.next_case += 1;
        id
    }

    /// Serializes every block to line-delimited structured text: one record
    /// per transaction with block index, time, sender, payload kind and the
    /// principal amounts.
    pub fn export_chain_log(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            if let TraceEvent::BlockCommitted { .. } = event {
                out.push_str(&serde_json::to_string(event).expect("trace event serializes"));
                out.push('\n');
            }
        }
        out
    }
}
