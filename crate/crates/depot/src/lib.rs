//! Deterministic simulator and library for a blockchain-backed storage
//! rental protocol.
//!
//! A client rents storage from a host through a smart contract on a
//! simulated private ledger. Both parties escrow deposits — the host's
//! *file sequestration* backs restitution of the file, and both sides'
//! *auditors sequestration* funds third-party arbitration. The host earns
//! the prepaid price one installment per epoch by submitting Merkle
//! proofs of retrievability whose challenges are derived from chain state,
//! so no party picks them. End-of-contract download disputes go to a
//! randomly selected auditor committee; the majority decides, is rewarded
//! from the loser's deposit, and the loser is banned.
//!
//! Modules:
//! - [`ledger`] — the simulated chain: accounts, balances, blocks, clock.
//! - [`por`] — chunking, Merkle metadata, challenges, proofs.
//! - [`contract`] — contract lifecycle, escrow, settlement matrix.
//! - [`arbitration`] — auditor selection, voting, rewards, bans.
//! - [`reputation`] — proof-success and litigation scores from chain state.
//! - [`analysis`] — dishonest-majority probabilities and committee sizing.
//! - [`sim`] — scenario engine producing replayable traces.
//!
//! ```
//! use depot::analysis;
//! use depot::por::{derive_challenge, gen_metadata, verify_proof, HostedFile, Seed};
//!
//! // A host proves it still holds a file from nothing but the client's
//! // 100-odd bytes of metadata.
//! let file = vec![7u8; 10_000];
//! let metadata = gen_metadata(&file, 4096).unwrap();
//! let hosted = HostedFile::ingest(&file, 4096).unwrap();
//! let seed = Seed(depot::hash::sha256("example", b"epoch-0"));
//! let challenge = derive_challenge(&seed, metadata.chunk_count, 2);
//! assert!(verify_proof(&metadata, &challenge, &hosted.prove(&challenge)));
//!
//! // Committee size for a one-in-a-million dishonest-majority bound when
//! // four of five auditors answer correctly.
//! assert_eq!(analysis::min_auditors(0.8, 1e-6).unwrap(), 41);
//! ```

pub mod analysis;
pub mod arbitration;
pub mod codec;
pub mod contract;
pub mod error;
pub mod hash;
pub mod ledger;
pub mod por;
pub mod reputation;
mod rng;
pub mod sim;
#[cfg(test)]
pub(crate) mod testutil;
pub mod trace;

pub use arbitration::{AuditCase, CaseId, CaseVerdict, Vote};
pub use contract::{
    ContractId, ContractState, ContractTerms, EscrowAccount, SettlementKind, SettlementOutcome,
    StorageContract,
};
pub use error::{Error, Result};
pub use hash::Digest;
pub use ledger::{Ledger, LedgerConfig, NodeId, NodeKind, TokenAmount, Transaction, TxPayload};
pub use por::{Challenge, FileMetadata, HostedFile, Proof, Seed};
pub use sim::{Scenario, Trace};
pub use trace::TraceEvent;
