//! Crate-wide error type.

use crate::arbitration::CaseId;
use crate::contract::ContractId;
use crate::ledger::NodeId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ledger
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is banned")]
    BannedNode(NodeId),
    #[error("node registration is closed once the first transaction has been processed")]
    RegistrationClosed,
    #[error("clock can only advance by a positive delta")]
    ZeroClockAdvance,
    #[error("transaction timestamp {timestamp} is more than {max_skew}s away from ledger clock {clock}")]
    TimestampOutOfSkew {
        timestamp: u64,
        clock: u64,
        max_skew: u64,
    },
    #[error("node clock skew {skew}s exceeds the configured bound of {max_skew}s")]
    SkewTooLarge { skew: i64, max_skew: u64 },
    #[error("block {0} does not exist")]
    BlockOutOfRange(u64),
    #[error("node {node} holds {available} tokens, operation requires {required}")]
    InsufficientBalance {
        node: NodeId,
        available: u64,
        required: u64,
    },
    #[error("host {node} has {available} bytes free, contract requires {required}")]
    InsufficientCapacity {
        node: NodeId,
        available: u64,
        required: u64,
    },
    #[error("node {node} cannot act as {role} here")]
    WrongRole { node: NodeId, role: &'static str },

    // contract
    #[error("unknown contract {0}")]
    UnknownContract(ContractId),
    #[error("contract {contract} is in state {actual}, operation requires {required}")]
    InvalidState {
        contract: ContractId,
        actual: &'static str,
        required: &'static str,
    },
    #[error("invalid contract terms: {0}")]
    InvalidTerms(String),
    #[error("host {host} has not requested contract {contract}")]
    HostNotRequester { contract: ContractId, host: NodeId },
    #[error("host {host} already requested contract {contract}")]
    AlreadyRequested { contract: ContractId, host: NodeId },
    #[error("contract {contract} has no epoch {epoch}")]
    UnknownEpoch { contract: ContractId, epoch: u32 },
    #[error("epoch {epoch} of contract {contract} already has a verdict")]
    EpochAlreadyResolved { contract: ContractId, epoch: u32 },
    #[error("epoch {epoch} proof at {timestamp} is outside the window [{window_start}, {window_end}]")]
    OutsideProofWindow {
        epoch: u32,
        timestamp: u64,
        window_start: u64,
        window_end: u64,
    },
    #[error("metadata length {metadata_len} does not match contract data size {data_size}")]
    MetadataMismatch { metadata_len: u64, data_size: u64 },
    #[error("contract {0} has a dispute pending")]
    DisputePending(ContractId),
    #[error("final acknowledgement for contract {contract} not accepted at {timestamp}: {reason}")]
    AckOutOfWindow {
        contract: ContractId,
        timestamp: u64,
        reason: &'static str,
    },

    // por
    #[error("cannot build metadata for an empty file")]
    EmptyFile,
    #[error("chunk size must be positive")]
    ZeroChunkSize,
    #[error("no block exists before time {0} to seed the challenge from")]
    NoSeedBlock(u64),

    // arbitration
    #[error("unknown audit case {0}")]
    UnknownCase(CaseId),
    #[error("node {node} is not an auditor on case {case}")]
    NotCaseAuditor { case: CaseId, node: NodeId },
    #[error("auditor {node} already voted on case {case}")]
    AlreadyVoted { case: CaseId, node: NodeId },
    #[error("case {0} cannot be resolved before all votes are in or the timeout passes")]
    CaseNotReady(CaseId),
    #[error("case {0} is already resolved")]
    CaseAlreadyResolved(CaseId),
    #[error("auditor selection needs {needed} eligible nodes, only {available} available")]
    InsufficientAuditors { needed: u32, available: u32 },

    // analysis
    #[error("probability {value} must lie strictly between {lo} and {hi}")]
    InvalidProbability { value: f64, lo: f64, hi: f64 },

    // serialization / scenario
    #[error("decode error: {0}")]
    Decode(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
