//! Proof of retrievability: chunking, Merkle metadata, seed-derived
//! challenges, proof generation and verification.
//!
//! The scheme is a Merkle challenge-response. The client commits to a file
//! by the root of a Merkle tree over chunk digests; each epoch the chain
//! state deterministically selects a set of chunk indices, and the host
//! answers with the leaf digests plus authentication paths. Verification
//! needs only the small [`FileMetadata`], never the file. The number of
//! distinct challenges is unbounded because the seed changes every epoch.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::contract::ContractId;
use crate::error::{Error, Result};
use crate::hash::{Digest, Hasher};
use crate::ledger::Ledger;
use crate::rng;

/// Default chunk size in bytes.
pub const DEFAULT_CHUNK_SIZE: u32 = 4096;
/// Default number of chunks challenged per epoch. Detects a host missing
/// 35% of a 100-chunk file with probability above 99.9%.
pub const DEFAULT_CHALLENGE_COUNT: u32 = 16;

const LEAF_DOMAIN: &str = "depot.leaf";
const NODE_DOMAIN: &str = "depot.node";
const FILE_DOMAIN: &str = "depot.file";
const SEED_DOMAIN: &str = "depot.seed";
const PROOF_DOMAIN: &str = "depot.proof";

/// The client-held verification data: Merkle root plus chunk geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMetadata {
    pub merkle_root: Digest,
    pub chunk_count: u32,
    pub chunk_size: u32,
    /// Original byte length, so restitution compares true bytes rather
    /// than the zero-padded final chunk.
    pub file_len: u64,
    pub file_id: Digest,
}

impl FileMetadata {
    pub fn write_canonical(&self, w: &mut Writer) {
        w.digest(&self.merkle_root)
            .u32(self.chunk_count)
            .u32(self.chunk_size)
            .u64(self.file_len);
        w.digest(&self.file_id);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_canonical(&mut w);
        w.finish()
    }

    pub fn read_canonical(r: &mut Reader<'_>) -> Result<FileMetadata> {
        Ok(FileMetadata {
            merkle_root: r.digest()?,
            chunk_count: r.u32()?,
            chunk_size: r.u32()?,
            file_len: r.u64()?,
            file_id: r.digest()?,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FileMetadata> {
        let mut r = Reader::new(bytes);
        let meta = Self::read_canonical(&mut r)?;
        r.finish()?;
        Ok(meta)
    }
}

/// Challenge seed, a pure function of chain state: block hash, contract
/// id, epoch, both party ids, and the previous proof hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed(pub Digest);

/// The explicit seed preimage, exposed so tests can enumerate components.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedInputs {
    pub block_hash: Digest,
    pub contract: ContractId,
    pub epoch: u32,
    pub client: u32,
    pub host: u32,
    pub prev_proof: Digest,
}

impl SeedInputs {
    pub fn derive(&self) -> Seed {
        let mut h = Hasher::new(SEED_DOMAIN);
        h.digest(&self.block_hash)
            .u64(self.contract.0)
            .u32(self.epoch)
            .u32(self.client)
            .u32(self.host)
            .digest(&self.prev_proof);
        Seed(h.finish())
    }
}

/// Derives the seed for one epoch of a contract from the ledger. The block
/// component is the last block strictly before the epoch's due time; the
/// previous-proof component is the hash recorded for the prior epoch, or
/// zero for the first epoch.
pub fn derive_seed(ledger: &Ledger, contract: ContractId, epoch: u32) -> Result<Seed> {
    let c = ledger.contract(contract)?;
    let due = c.epoch_due_time(epoch);
    let blocks = ledger.blocks();
    let before = blocks.partition_point(|b| b.timestamp < due);
    if before == 0 {
        return Err(Error::NoSeedBlock(due));
    }
    let block_hash = blocks[before - 1].hash;
    let prev_proof = if epoch == 0 {
        Digest::ZERO
    } else {
        c.epoch_log
            .get(epoch as usize - 1)
            .and_then(|e| e.proof_hash)
            .unwrap_or(Digest::ZERO)
    };
    let host = c.host.ok_or(Error::InvalidState {
        contract,
        actual: c.state.name(),
        required: "active",
    })?;
    Ok(SeedInputs {
        block_hash,
        contract,
        epoch,
        client: c.client.0,
        host: host.0,
        prev_proof,
    }
    .derive())
}

/// A seed-derived set of distinct chunk indices, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub indices: Vec<u32>,
}

/// Draws `count` distinct indices in `[0, chunk_count)` from a generator
/// keyed on the seed. `count` is clamped to `chunk_count`.
pub fn derive_challenge(seed: &Seed, chunk_count: u32, count: u32) -> Challenge {
    debug_assert!(chunk_count >= 1);
    let mut generator: ChaCha20Rng = rng::rng_from_digest(&seed.0);
    Challenge {
        indices: rng::sample_distinct(&mut generator, chunk_count, count),
    }
}

/// One sibling on an authentication path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathElem {
    pub hash: Digest,
    /// Whether the sibling sits to the right of the running node.
    pub sibling_right: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofEntry {
    pub index: u32,
    /// Digest of the challenged chunk (the Merkle leaf).
    pub leaf: Digest,
    pub path: Vec<PathElem>,
}

/// The host's answer to a challenge: per challenged index, the chunk
/// digest and its Merkle authentication path. Size is
/// O(count · log(chunk_count) · digest), independent of the file size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proof {
    pub entries: Vec<ProofEntry>,
}

impl Proof {
    pub fn write_canonical(&self, w: &mut Writer) {
        w.u32(self.entries.len() as u32);
        for entry in &self.entries {
            w.u32(entry.index);
            w.digest(&entry.leaf);
            w.u16(entry.path.len() as u16);
            for elem in &entry.path {
                w.u8(elem.sibling_right as u8);
                w.digest(&elem.hash);
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_canonical(&mut w);
        w.finish()
    }

    pub fn read_canonical(r: &mut Reader<'_>) -> Result<Proof> {
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
        for _ in 0..count {
            let index = r.u32()?;
            let leaf = r.digest()?;
            let path_len = r.u16()?;
            let mut path = Vec::with_capacity(path_len as usize);
            for _ in 0..path_len {
                let side = r.u8()?;
                if side > 1 {
                    return Err(Error::Decode(format!("bad path side byte {side}")));
                }
                path.push(PathElem {
                    sibling_right: side == 1,
                    hash: r.digest()?,
                });
            }
            entries.push(ProofEntry { index, leaf, path });
        }
        Ok(Proof { entries })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Proof> {
        let mut r = Reader::new(bytes);
        let proof = Self::read_canonical(&mut r)?;
        r.finish()?;
        Ok(proof)
    }

    /// Digest of the canonical encoding; recorded on-chain per epoch and
    /// mixed into the next epoch's seed.
    pub fn digest(&self) -> Digest {
        crate::hash::sha256(PROOF_DOMAIN, &self.to_bytes())
    }
}

fn leaf_digest(chunk: &[u8], chunk_size: u32) -> Digest {
    // Last partial chunk is zero-padded for hashing only.
    let mut h = Hasher::new(LEAF_DOMAIN);
    h.bytes(chunk);
    let pad = chunk_size as usize - chunk.len();
    if pad > 0 {
        h.bytes(&vec![0u8; pad]);
    }
    h.finish()
}

fn node_digest(left: &Digest, right: &Digest) -> Digest {
    let mut h = Hasher::new(NODE_DOMAIN);
    h.digest(left).digest(right);
    h.finish()
}

/// Merkle tree over chunk digests. An odd node at any level is promoted
/// unpaired to the next level; a single leaf is its own root.
#[derive(Clone, Debug)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn from_leaves(leaves: Vec<Digest>) -> MerkleTree {
        assert!(!leaves.is_empty(), "merkle tree needs at least one leaf");
        let mut levels = vec![leaves];
        while levels.last().unwrap().len() > 1 {
            let prev = levels.last().unwrap();
            let mut next = Vec::with_capacity(prev.len().div_ceil(2));
            for pair in prev.chunks(2) {
                match pair {
                    [left, right] => next.push(node_digest(left, right)),
                    [odd] => next.push(*odd),
                    _ => unreachable!(),
                }
            }
            levels.push(next);
        }
        MerkleTree { levels }
    }

    pub fn root(&self) -> Digest {
        self.levels.last().unwrap()[0]
    }

    pub fn leaf(&self, index: usize) -> Digest {
        self.levels[0][index]
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    /// Authentication path from leaf `index` to the root. Levels where the
    /// node is promoted unpaired contribute no element.
    pub fn path(&self, index: usize) -> Vec<PathElem> {
        let mut path = Vec::new();
        let mut pos = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let sibling = pos ^ 1;
            if sibling < level.len() {
                path.push(PathElem {
                    hash: level[sibling],
                    sibling_right: sibling > pos,
                });
            }
            pos /= 2;
        }
        path
    }
}

/// Folds a leaf digest up an authentication path.
pub fn fold_path(leaf: Digest, path: &[PathElem]) -> Digest {
    let mut acc = leaf;
    for elem in path {
        acc = if elem.sibling_right {
            node_digest(&acc, &elem.hash)
        } else {
            node_digest(&elem.hash, &acc)
        };
    }
    acc
}

fn split_chunks(file: &[u8], chunk_size: u32) -> Vec<&[u8]> {
    file.chunks(chunk_size as usize).collect()
}

/// Computes the verification metadata for a file: the Merkle root over
/// chunk digests plus the geometry needed to re-derive challenges.
pub fn gen_metadata(file: &[u8], chunk_size: u32) -> Result<FileMetadata> {
    if file.is_empty() {
        return Err(Error::EmptyFile);
    }
    if chunk_size == 0 {
        return Err(Error::ZeroChunkSize);
    }
    let chunks = split_chunks(file, chunk_size);
    let leaves: Vec<Digest> = chunks.iter().map(|c| leaf_digest(c, chunk_size)).collect();
    let tree = MerkleTree::from_leaves(leaves);
    Ok(FileMetadata {
        merkle_root: tree.root(),
        chunk_count: chunks.len() as u32,
        chunk_size,
        file_len: file.len() as u64,
        file_id: crate::hash::sha256(FILE_DOMAIN, file),
    })
}

/// The host-side store: the chunks it claims to hold plus the tree it
/// built at ingest. Simulated dishonest hosts drop or corrupt chunks; a
/// proof entry for a damaged chunk carries a digest that cannot fold to
/// the committed root.
#[derive(Clone, Debug)]
pub struct HostedFile {
    chunk_size: u32,
    file_len: u64,
    file_id: Digest,
    chunks: Vec<Option<Vec<u8>>>,
    tree: MerkleTree,
}

impl HostedFile {
    pub fn ingest(file: &[u8], chunk_size: u32) -> Result<HostedFile> {
        let metadata = gen_metadata(file, chunk_size)?;
        let chunks: Vec<Option<Vec<u8>>> = split_chunks(file, chunk_size)
            .into_iter()
            .map(|c| Some(c.to_vec()))
            .collect();
        let leaves: Vec<Digest> = chunks
            .iter()
            .map(|c| leaf_digest(c.as_ref().unwrap(), chunk_size))
            .collect();
        Ok(HostedFile {
            chunk_size,
            file_len: metadata.file_len,
            file_id: metadata.file_id,
            chunks,
            tree: MerkleTree::from_leaves(leaves),
        })
    }

    pub fn metadata(&self) -> FileMetadata {
        FileMetadata {
            merkle_root: self.tree.root(),
            chunk_count: self.chunks.len() as u32,
            chunk_size: self.chunk_size,
            file_len: self.file_len,
            file_id: self.file_id,
        }
    }

    pub fn chunk_count(&self) -> u32 {
        self.chunks.len() as u32
    }

    pub fn drop_chunk(&mut self, index: u32) {
        self.chunks[index as usize] = None;
    }

    pub fn corrupt_chunk(&mut self, index: u32) {
        if let Some(chunk) = &mut self.chunks[index as usize] {
            chunk[0] ^= 0xff;
        }
    }

    pub fn missing_chunks(&self) -> u32 {
        self.chunks.iter().filter(|c| c.is_none()).count() as u32
    }

    pub fn is_intact(&self) -> bool {
        self.chunks.iter().all(|c| c.is_some())
    }

    /// The original bytes, if every chunk is still held and uncorrupted.
    pub fn reassemble(&self) -> Option<Vec<u8>> {
        let mut out = Vec::with_capacity(self.file_len as usize);
        for chunk in &self.chunks {
            out.extend_from_slice(chunk.as_deref()?);
        }
        out.truncate(self.file_len as usize);
        let reassembled_id = crate::hash::sha256(FILE_DOMAIN, &out);
        (reassembled_id == self.file_id).then_some(out)
    }

    /// Answers a challenge. Entries for chunks the host no longer holds
    /// carry a zero leaf digest, which verification rejects.
    pub fn prove(&self, challenge: &Challenge) -> Proof {
        let entries = challenge
            .indices
            .iter()
            .map(|&index| {
                let leaf = match self.chunks.get(index as usize) {
                    Some(Some(chunk)) => leaf_digest(chunk, self.chunk_size),
                    _ => Digest::ZERO,
                };
                ProofEntry {
                    index,
                    leaf,
                    path: self.tree.path(index as usize),
                }
            })
            .collect();
        Proof { entries }
    }
}

/// Generates a proof for a challenge against a hosted file.
pub fn gen_proof(stored: &HostedFile, challenge: &Challenge) -> Proof {
    stored.prove(challenge)
}

/// Checks a proof against the metadata: exactly the challenged indices, in
/// order, each folding to the committed root. Pure; malformed input is
/// simply false.
pub fn verify_proof(meta: &FileMetadata, challenge: &Challenge, proof: &Proof) -> bool {
    if proof.entries.len() != challenge.indices.len() {
        return false;
    }
    for (entry, &expected_index) in proof.entries.iter().zip(&challenge.indices) {
        if entry.index != expected_index || entry.index >= meta.chunk_count {
            return false;
        }
        if fold_path(entry.leaf, &entry.path) != meta.merkle_root {
            return false;
        }
    }
    true
}
