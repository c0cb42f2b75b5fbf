//! Structured trace records. Every on-chain action, deadline consequence
//! and off-chain transfer lands here in order, so a run can be audited —
//! and disputes judged — from the trace alone. Serialized as one JSON
//! object per line.

use serde::{Deserialize, Serialize};

use crate::arbitration::{CaseId, CaseVerdict, Vote};
use crate::contract::{ContractId, ContractTerms, ProofVerdict, SettlementKind, Transfer};
use crate::hash::Digest;
use crate::ledger::{NodeId, NodeKind, TokenAmount};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    NodeRegistered {
        time: u64,
        node: NodeId,
        kind: NodeKind,
        balance: TokenAmount,
    },
    /// One record per transaction: block index, time, sender, payload kind
    /// and the principal amounts it moves or references.
    BlockCommitted {
        time: u64,
        block: u64,
        hash: Digest,
        sender: NodeId,
        payload: String,
        amounts: Vec<TokenAmount>,
    },
    ContractProposed {
        time: u64,
        contract: ContractId,
        client: NodeId,
        terms: ContractTerms,
    },
    HostRequested {
        time: u64,
        contract: ContractId,
        host: NodeId,
    },
    ContractAccepted {
        time: u64,
        contract: ContractId,
        host: NodeId,
        metadata_root: Digest,
    },
    ProofVerdict {
        time: u64,
        contract: ContractId,
        epoch: u32,
        verdict: ProofVerdict,
        paid: TokenAmount,
    },
    ProofMissed {
        time: u64,
        contract: ContractId,
        epoch: u32,
    },
    AwaitingAck {
        time: u64,
        contract: ContractId,
    },
    Settled {
        time: u64,
        contract: ContractId,
        kind: SettlementKind,
        banned: Option<NodeId>,
        transfers: Vec<Transfer>,
    },
    DisputeOpened {
        time: u64,
        case: CaseId,
        contract: ContractId,
        auditors: Vec<NodeId>,
        auto: bool,
    },
    VoteCast {
        time: u64,
        case: CaseId,
        auditor: NodeId,
        vote: Vote,
    },
    CaseResolved {
        time: u64,
        case: CaseId,
        contract: ContractId,
        verdict: CaseVerdict,
        rewards: Vec<(NodeId, TokenAmount)>,
    },
    /// Off-chain file transfer from client to host after acceptance. No
    /// tokens move, but disputes must be auditable from the trace.
    OffchainUpload {
        time: u64,
        contract: ContractId,
        bytes: u64,
    },
    /// The client's final download attempt.
    OffchainDownload {
        time: u64,
        contract: ContractId,
        served: bool,
        correct: bool,
    },
}

impl TraceEvent {
    pub fn time(&self) -> u64 {
        match self {
            TraceEvent::NodeRegistered { time, .. }
            | TraceEvent::BlockCommitted { time, .. }
            | TraceEvent::ContractProposed { time, .. }
            | TraceEvent::HostRequested { time, .. }
            | TraceEvent::ContractAccepted { time, .. }
            | TraceEvent::ProofVerdict { time, .. }
            | TraceEvent::ProofMissed { time, .. }
            | TraceEvent::AwaitingAck { time, .. }
            | TraceEvent::Settled { time, .. }
            | TraceEvent::DisputeOpened { time, .. }
            | TraceEvent::VoteCast { time, .. }
            | TraceEvent::CaseResolved { time, .. }
            | TraceEvent::OffchainUpload { time, .. }
            | TraceEvent::OffchainDownload { time, .. } => *time,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace event serializes")
    }
}
