//! Shared helpers for unit tests: a ledger with standard parties and a
//! contract driven to any lifecycle stage.

use crate::contract::{ContractId, ContractTerms};
use crate::ledger::{Ledger, LedgerConfig, NodeId, NodeKind, TokenAmount};
use crate::por::{self, HostedFile, Proof};

pub const CLIENT_START: u64 = 10_000;
pub const HOST_START: u64 = 5_000;

pub fn terms(epochs: u64, period: u64) -> ContractTerms {
    ContractTerms {
        data_size: 2000,
        duration: epochs * period,
        proof_period: period,
        total_price: TokenAmount(1000),
        file_sequestration: TokenAmount(500),
        auditors_sequestration: TokenAmount(200),
        missed_or_bad_proof_limit: 3,
    }
}

pub struct Parties {
    pub ledger: Ledger,
    pub client: NodeId,
    pub host: NodeId,
    pub auditors: Vec<NodeId>,
}

pub fn parties(auditor_count: u32) -> Parties {
    let mut ledger = Ledger::new(LedgerConfig::default());
    let client = ledger
        .register_node(NodeKind::Client, TokenAmount(CLIENT_START))
        .unwrap();
    let host = ledger
        .register_node(NodeKind::Host { capacity: 1 << 20 }, TokenAmount(HOST_START))
        .unwrap();
    let auditors = (0..auditor_count)
        .map(|_| {
            ledger
                .register_node(NodeKind::Auditor, TokenAmount(100))
                .unwrap()
        })
        .collect();
    Parties {
        ledger,
        client,
        host,
        auditors,
    }
}

pub struct LiveContract {
    pub id: ContractId,
    pub hosted: HostedFile,
}

/// Propose → request → accept with a deterministic file; leaves the
/// contract `Active` at clock 0 (or the current clock).
pub fn activate(p: &mut Parties, terms: ContractTerms) -> LiveContract {
    let file: Vec<u8> = (0..terms.data_size).map(|i| (i * 31 % 251) as u8).collect();
    let chunk_size = 256;
    let id = p.ledger.propose(p.client, terms).unwrap();
    p.ledger.request(p.host, id).unwrap();
    let metadata = por::gen_metadata(&file, chunk_size).unwrap();
    p.ledger.accept(p.client, id, p.host, metadata).unwrap();
    let hosted = HostedFile::ingest(&file, chunk_size).unwrap();
    LiveContract { id, hosted }
}

pub fn honest_proof(ledger: &Ledger, live: &LiveContract, epoch: u32) -> Proof {
    let meta = ledger.contract(live.id).unwrap().metadata.unwrap();
    let seed = por::derive_seed(ledger, live.id, epoch).unwrap();
    let challenge =
        por::derive_challenge(&seed, meta.chunk_count, ledger.config().challenge_count);
    live.hosted.prove(&challenge)
}

/// Advances to each due time and submits a valid proof, for `epochs`
/// consecutive epochs starting at `first`.
pub fn run_honest_epochs(p: &mut Parties, live: &LiveContract, first: u32, epochs: u32) {
    for epoch in first..first + epochs {
        let due = p.ledger.contract(live.id).unwrap().epoch_due_time(epoch);
        let now = p.ledger.clock();
        if due > now {
            p.ledger.advance_clock(due - now).unwrap();
        }
        let proof = honest_proof(&p.ledger, live, epoch);
        p.ledger.submit_proof(p.host, live.id, epoch, proof).unwrap();
    }
}
