//! Deterministic scenario engine. A [`Scenario`] fully determines a run:
//! node roster with behavior strategies, contract terms, and the seed that
//! drives file contents, damage patterns, probe challenges and auditor
//! honesty draws. The engine advances the ledger clock from event to
//! event, performs the off-chain transfers (upload, final download,
//! auditor probes) that the chain cannot see, and reacts to chain state —
//! clients acknowledge or dispute, auditors vote. Identical scenarios
//! produce bit-identical [`Trace`]s.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::arbitration::{CaseId, Vote};
use crate::contract::{ContractId, ContractState, ContractTerms, SettlementKind};
use crate::error::{Error, Result};
use crate::hash::Hasher;
use crate::ledger::{Ledger, LedgerConfig, NodeId, NodeKind, TokenAmount};
use crate::por::{self, HostedFile};
use crate::reputation::{self, ReputationRecord};
use crate::rng;
use crate::trace::TraceEvent;

use rand_chacha::rand_core::RngCore;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Client,
    Host,
    Auditor,
}

/// What a node does over the run. Hosts and clients default to the honest
/// variants; auditor behavior is governed by the node's `honesty`
/// probability instead.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    HonestHost,
    /// Silently loses a fraction of its chunks at a point in time; keeps
    /// submitting proofs, which then fail when the challenge hits a hole.
    DroppingHost { fraction: f64, at_time: u64 },
    /// Goes dark: no more proofs, no off-chain serving.
    VanishingHost { at_time: u64 },
    /// Performs on-chain flawlessly but never serves the final download
    /// nor auditor probes.
    WithholdingHost,
    /// Terminates its contracts early through the proper transaction.
    EarlyTerminatingHost { at_time: u64 },
    HonestClient,
    /// Downloads fine and opens a dispute anyway, gambling for the file
    /// sequestration.
    LyingClient,
    EarlyTerminatingClient { at_time: u64 },
}

fn default_balance_one() -> f64 {
    1.0
}

fn default_count() -> u32 {
    1
}

fn default_capacity() -> u64 {
    1 << 40
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub role: NodeRole,
    pub balance: u64,
    #[serde(default = "default_capacity")]
    pub capacity: u64,
    /// Probability an auditor reports what it actually observed.
    #[serde(default = "default_balance_one")]
    pub honesty: f64,
    /// Shorthand: expands to `name-0 … name-(count-1)`.
    #[serde(default = "default_count")]
    pub count: u32,
    #[serde(default)]
    pub clock_skew: i64,
    #[serde(default)]
    pub strategy: Option<Strategy>,
}

fn default_chunk_size() -> u32 {
    por::DEFAULT_CHUNK_SIZE
}

fn default_proof_limit() -> u32 {
    3
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSpec {
    pub client: String,
    /// Hosts that request the contract, in order; the client accepts the
    /// best-rated one.
    pub hosts: Vec<String>,
    pub file_size: u64,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: u32,
    pub duration: u64,
    pub proof_period: u64,
    pub total_price: u64,
    pub file_sequestration: u64,
    pub auditors_sequestration: u64,
    #[serde(default = "default_proof_limit")]
    pub missed_or_bad_proof_limit: u32,
    #[serde(default)]
    pub start_time: u64,
}

impl ContractSpec {
    pub fn terms(&self) -> ContractTerms {
        ContractTerms {
            data_size: self.file_size,
            duration: self.duration,
            proof_period: self.proof_period,
            total_price: TokenAmount(self.total_price),
            file_sequestration: TokenAmount(self.file_sequestration),
            auditors_sequestration: TokenAmount(self.auditors_sequestration),
            missed_or_bad_proof_limit: self.missed_or_bad_proof_limit,
        }
    }
}

/// Pass/fail checks evaluated against the finished trace. The `contract`
/// index refers to the scenario's contract list.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case")]
pub enum ScenarioAssertion {
    Outcome {
        contract: usize,
        outcome: SettlementKind,
    },
    BalanceDelta {
        node: String,
        delta: i64,
    },
    Banned {
        node: String,
        banned: bool,
    },
}

fn default_max_skew() -> u64 {
    900
}

fn default_challenge_count() -> u32 {
    por::DEFAULT_CHALLENGE_COUNT
}

fn default_auditors_per_case() -> u32 {
    5
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub rng_seed: u64,
    #[serde(default = "default_max_skew")]
    pub max_skew: u64,
    #[serde(default = "default_challenge_count")]
    pub challenge_count: u32,
    #[serde(default = "default_auditors_per_case")]
    pub auditors_per_case: u32,
    /// Minimum host reputation the client accepts.
    #[serde(default)]
    pub min_host_score: f64,
    pub nodes: Vec<NodeSpec>,
    pub contracts: Vec<ContractSpec>,
    #[serde(default)]
    pub assertions: Vec<ScenarioAssertion>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario> {
        toml::from_str(text).map_err(|e| Error::Scenario(format!("toml parse: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario> {
        Scenario::from_toml(&std::fs::read_to_string(path)?)
    }

    fn ledger_config(&self) -> LedgerConfig {
        LedgerConfig {
            max_skew: self.max_skew,
            challenge_count: self.challenge_count,
            auditors_per_case: self.auditors_per_case,
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct BalanceRecord {
    pub node: NodeId,
    pub name: String,
    pub balance: TokenAmount,
}

/// How one scenario contract ended. A contract whose client was already
/// banned, or that no live host answered, never starts and is recorded as
/// such rather than failing the run.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ContractOutcome {
    Settled {
        contract: ContractId,
        kind: SettlementKind,
    },
    NotStarted {
        reason: String,
    },
}

impl ContractOutcome {
    pub fn kind(&self) -> Option<SettlementKind> {
        match self {
            ContractOutcome::Settled { kind, .. } => Some(*kind),
            ContractOutcome::NotStarted { .. } => None,
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ReputationLine {
    pub node: NodeId,
    pub name: String,
    #[serde(flatten)]
    pub record: ReputationRecord,
}

/// Everything a run produces: the ordered event log, final balances,
/// settlement outcomes (in scenario contract order) and the reputation
/// table, together with the scenario that generated it.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Trace {
    pub scenario: Scenario,
    pub events: Vec<TraceEvent>,
    pub final_balances: Vec<BalanceRecord>,
    /// One entry per scenario contract, in scenario order.
    pub outcomes: Vec<ContractOutcome>,
    pub reputation: Vec<ReputationLine>,
    pub burned: TokenAmount,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum TraceLine {
    Scenario { value: Scenario },
    Event { value: TraceEvent },
    FinalBalance { value: BalanceRecord },
    Outcome { value: ContractOutcome },
    Reputation { value: ReputationLine },
    Burned { value: TokenAmount },
}

impl Trace {
    /// Line-delimited structured text: the scenario, then one record per
    /// event, then the summary sections.
    pub fn to_jsonl(&self) -> String {
        let mut lines: Vec<TraceLine> = Vec::new();
        lines.push(TraceLine::Scenario {
            value: self.scenario.clone(),
        });
        lines.extend(self.events.iter().map(|e| TraceLine::Event { value: e.clone() }));
        lines.extend(self.final_balances.iter().map(|b| TraceLine::FinalBalance {
            value: b.clone(),
        }));
        lines.extend(self.outcomes.iter().map(|o| TraceLine::Outcome { value: o.clone() }));
        lines.extend(self.reputation.iter().map(|r| TraceLine::Reputation {
            value: r.clone(),
        }));
        lines.push(TraceLine::Burned { value: self.burned });
        let mut out = String::new();
        for line in lines {
            out.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace> {
        let mut scenario = None;
        let mut events = Vec::new();
        let mut final_balances = Vec::new();
        let mut outcomes = Vec::new();
        let mut reputation = Vec::new();
        let mut burned = TokenAmount::ZERO;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let parsed: TraceLine = serde_json::from_str(line)
                .map_err(|e| Error::Decode(format!("trace line: {e}")))?;
            match parsed {
                TraceLine::Scenario { value } => scenario = Some(value),
                TraceLine::Event { value } => events.push(value),
                TraceLine::FinalBalance { value } => final_balances.push(value),
                TraceLine::Outcome { value } => outcomes.push(value),
                TraceLine::Reputation { value } => reputation.push(value),
                TraceLine::Burned { value } => burned = value,
            }
        }
        Ok(Trace {
            scenario: scenario.ok_or_else(|| Error::Decode("trace has no scenario record".into()))?,
            events,
            final_balances,
            outcomes,
            reputation,
            burned,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssertionReport {
    pub description: String,
    pub passed: bool,
}

/// Engine-internal view of one expanded node.
#[derive(Clone, Debug)]
struct SimNode {
    name: String,
    role: NodeRole,
    balance: u64,
    capacity: u64,
    honesty: f64,
    clock_skew: i64,
    strategy: Strategy,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EngineAction {
    StartContract(usize),
    SubmitProof { contract_idx: usize, epoch: u32 },
    DropChunks { node: NodeId },
    Vanish { node: NodeId },
    HostTerminate { node: NodeId },
    ClientTerminate { node: NodeId },
    Sweep,
}

struct Engine {
    scenario: Scenario,
    ledger: Ledger,
    nodes: BTreeMap<NodeId, SimNode>,
    names: BTreeMap<String, NodeId>,
    contract_ids: Vec<Option<ContractId>>,
    aborted: Vec<Option<String>>,
    files: Vec<Vec<u8>>,
    hosted: BTreeMap<ContractId, HostedFile>,
    queue: BTreeMap<(u64, u64), EngineAction>,
    next_seq: u64,
    client_acted: BTreeSet<ContractId>,
    votes_done: BTreeSet<CaseId>,
    vanished: BTreeSet<NodeId>,
}

/// Expands `count` shorthand into individual nodes.
fn expand_nodes(spec_nodes: &[NodeSpec]) -> Result<Vec<SimNode>> {
    let mut out = Vec::new();
    for spec in spec_nodes {
        if spec.count == 0 {
            return Err(Error::Scenario(format!("node {} has count 0", spec.name)));
        }
        if !(0.0..=1.0).contains(&spec.honesty) {
            return Err(Error::Scenario(format!(
                "node {} honesty {} outside [0,1]",
                spec.name, spec.honesty
            )));
        }
        let default_strategy = match spec.role {
            NodeRole::Client => Strategy::HonestClient,
            _ => Strategy::HonestHost,
        };
        let strategy = spec.strategy.unwrap_or(default_strategy);
        if let Strategy::DroppingHost { fraction, .. } = strategy {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::Scenario(format!(
                    "node {} drop fraction {fraction} outside [0,1]",
                    spec.name
                )));
            }
        }
        for i in 0..spec.count {
            let name = if spec.count == 1 {
                spec.name.clone()
            } else {
                format!("{}-{i}", spec.name)
            };
            out.push(SimNode {
                name,
                role: spec.role,
                balance: spec.balance,
                capacity: spec.capacity,
                honesty: spec.honesty,
                clock_skew: spec.clock_skew,
                strategy,
            });
        }
    }
    let mut seen = BTreeSet::new();
    for node in &out {
        if !seen.insert(node.name.clone()) {
            return Err(Error::Scenario(format!("duplicate node name {}", node.name)));
        }
    }
    Ok(out)
}

fn file_bytes(rng_seed: u64, contract_idx: usize, len: u64) -> Vec<u8> {
    let mut h = Hasher::new("depot.simfile");
    h.u64(rng_seed).u64(contract_idx as u64);
    let mut generator = rng::rng_from_digest(&h.finish());
    let mut out = vec![0u8; len as usize];
    generator.fill_bytes(&mut out);
    out
}

impl Engine {
    fn new(scenario: &Scenario) -> Result<Engine> {
        if scenario.contracts.is_empty() {
            return Err(Error::Scenario("scenario has no contracts".into()));
        }
        if scenario.challenge_count == 0 {
            return Err(Error::Scenario(
                "challenge_count must be positive or every proof is vacuously valid".into(),
            ));
        }
        if scenario.auditors_per_case == 0 {
            return Err(Error::Scenario(
                "auditors_per_case must be positive or every dispute ties".into(),
            ));
        }
        let expanded = expand_nodes(&scenario.nodes)?;
        let mut ledger = Ledger::new(scenario.ledger_config());
        let mut nodes = BTreeMap::new();
        let mut names = BTreeMap::new();
        for node in expanded {
            let kind = match node.role {
                NodeRole::Client => NodeKind::Client,
                NodeRole::Host => NodeKind::Host {
                    capacity: node.capacity,
                },
                NodeRole::Auditor => NodeKind::Auditor,
            };
            let id = ledger.register_node(kind, TokenAmount(node.balance))?;
            ledger.set_node_skew(id, node.clock_skew)?;
            names.insert(node.name.clone(), id);
            nodes.insert(id, node);
        }
        let mut engine = Engine {
            scenario: scenario.clone(),
            ledger,
            nodes,
            names,
            contract_ids: vec![None; scenario.contracts.len()],
            aborted: vec![None; scenario.contracts.len()],
            files: Vec::new(),
            hosted: BTreeMap::new(),
            queue: BTreeMap::new(),
            next_seq: 0,
            client_acted: BTreeSet::new(),
            votes_done: BTreeSet::new(),
            vanished: BTreeSet::new(),
        };
        for (idx, spec) in scenario.contracts.iter().enumerate() {
            engine.files.push(file_bytes(scenario.rng_seed, idx, spec.file_size));
            engine.lookup(&spec.client)?;
            for host in &spec.hosts {
                engine.lookup(host)?;
            }
            if spec.hosts.is_empty() {
                return Err(Error::Scenario(format!("contract {idx} lists no hosts")));
            }
            engine.schedule(spec.start_time, EngineAction::StartContract(idx));
        }
        // Strategy trigger points.
        let ids: Vec<NodeId> = engine.nodes.keys().copied().collect();
        for id in ids {
            match engine.nodes[&id].strategy {
                Strategy::DroppingHost { at_time, .. } => {
                    engine.schedule(at_time, EngineAction::DropChunks { node: id });
                }
                Strategy::VanishingHost { at_time } => {
                    engine.schedule(at_time, EngineAction::Vanish { node: id });
                }
                Strategy::EarlyTerminatingHost { at_time } => {
                    engine.schedule(at_time, EngineAction::HostTerminate { node: id });
                }
                Strategy::EarlyTerminatingClient { at_time } => {
                    engine.schedule(at_time, EngineAction::ClientTerminate { node: id });
                }
                _ => {}
            }
        }
        Ok(engine)
    }

    fn lookup(&self, name: &str) -> Result<NodeId> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| Error::Scenario(format!("unknown node name {name}")))
    }

    fn schedule(&mut self, time: u64, action: EngineAction) {
        self.queue.insert((time, self.next_seq), action);
        self.next_seq += 1;
    }

    fn strategy(&self, node: NodeId) -> Strategy {
        self.nodes[&node].strategy
    }

    fn honesty(&self, node: NodeId) -> f64 {
        self.nodes[&node].honesty
    }

    /// Whether the host answers off-chain requests (download, probes) for
    /// this contract right now.
    fn host_serves(&self, host: NodeId, contract: ContractId) -> bool {
        !self.vanished.contains(&host)
            && self.strategy(host) != Strategy::WithholdingHost
            && self.hosted.contains_key(&contract)
    }

    fn run(mut self) -> Result<Trace> {
        while let Some((&(time, seq), _)) = self.queue.iter().next() {
            let action = self.queue.remove(&(time, seq)).expect("just observed");
            if time > self.ledger.clock() {
                self.ledger.advance_clock(time - self.ledger.clock())?;
                self.react()?;
            }
            self.perform(action)?;
            self.react()?;
            self.ledger.check_conservation()?;
        }
        for (idx, id) in self.contract_ids.iter().enumerate() {
            if self.aborted[idx].is_some() {
                continue;
            }
            let id = id.ok_or_else(|| {
                Error::Scenario(format!("contract {idx} was never started"))
            })?;
            let c = self.ledger.contract(id)?;
            if !matches!(c.state, ContractState::Settled(_)) {
                return Err(Error::Scenario(format!(
                    "contract {idx} stalled in state {}",
                    c.state.name()
                )));
            }
        }
        Ok(self.into_trace())
    }

    fn perform(&mut self, action: EngineAction) -> Result<()> {
        match action {
            EngineAction::StartContract(idx) => self.start_contract(idx),
            EngineAction::SubmitProof {
                contract_idx,
                epoch,
            } => self.submit_proof(contract_idx, epoch),
            EngineAction::DropChunks { node } => self.drop_chunks(node),
            EngineAction::Vanish { node } => {
                self.vanished.insert(node);
                Ok(())
            }
            EngineAction::HostTerminate { node } => self.terminate_all(node, true),
            EngineAction::ClientTerminate { node } => self.terminate_all(node, false),
            EngineAction::Sweep => Ok(()),
        }
    }

    fn start_contract(&mut self, idx: usize) -> Result<()> {
        let spec = self.scenario.contracts[idx].clone();
        let client = self.lookup(&spec.client)?;
        if self.ledger.is_banned(client) {
            self.aborted[idx] = Some("client is banned".into());
            return Ok(());
        }
        let contract = self.ledger.propose(client, spec.terms())?;
        self.contract_ids[idx] = Some(contract);

        for host_name in &spec.hosts {
            let host = self.lookup(host_name)?;
            if self.vanished.contains(&host) || self.ledger.is_banned(host) {
                continue;
            }
            self.ledger.request(host, contract)?;
        }
        let requesters = self.ledger.contract(contract)?.requesters.clone();
        let Some(best) = reputation::best_host(&self.ledger, &requesters) else {
            // The proposal stays on the chain unanswered; nothing was
            // escrowed, so nothing needs settling.
            self.aborted[idx] = Some("no host requested the proposal".into());
            return Ok(());
        };
        if reputation::host_score(&self.ledger, best) < self.scenario.min_host_score {
            self.aborted[idx] = Some(format!(
                "best host scores below the required {}",
                self.scenario.min_host_score
            ));
            return Ok(());
        }

        let file = &self.files[idx];
        let metadata = por::gen_metadata(file, spec.chunk_size)?;
        self.ledger.accept(client, contract, best, metadata)?;

        // Off-chain upload: the chosen host ingests the file.
        self.hosted
            .insert(contract, HostedFile::ingest(file, spec.chunk_size)?);
        self.ledger.record(TraceEvent::OffchainUpload {
            time: self.ledger.clock(),
            contract,
            bytes: spec.file_size,
        });

        let c = self.ledger.contract(contract)?;
        let epochs = c.terms.epochs();
        let due_times: Vec<u64> = (0..epochs).map(|e| c.epoch_due_time(e)).collect();
        let ack_deadline = c.ack_deadline();
        let max_skew = self.scenario.max_skew;
        for (e, due) in due_times.iter().enumerate() {
            self.schedule(
                *due,
                EngineAction::SubmitProof {
                    contract_idx: idx,
                    epoch: e as u32,
                },
            );
            self.schedule(due + max_skew + 1, EngineAction::Sweep);
        }
        self.schedule(ack_deadline + 1, EngineAction::Sweep);
        Ok(())
    }

    fn submit_proof(&mut self, contract_idx: usize, epoch: u32) -> Result<()> {
        let Some(contract) = self.contract_ids[contract_idx] else {
            return Ok(());
        };
        let c = self.ledger.contract(contract)?;
        if c.state != ContractState::Active {
            return Ok(());
        }
        let host = c.host.expect("active contract has a host");
        if self.vanished.contains(&host) || self.ledger.is_banned(host) {
            return Ok(());
        }
        if c.epoch_log[epoch as usize].verdict.is_some() {
            return Ok(());
        }
        let chunk_count = c.metadata.expect("active contract has metadata").chunk_count;
        let seed = por::derive_seed(&self.ledger, contract, epoch)?;
        let challenge = por::derive_challenge(&seed, chunk_count, self.scenario.challenge_count);
        let proof = self.hosted[&contract].prove(&challenge);
        self.ledger.submit_proof(host, contract, epoch, proof)?;
        Ok(())
    }

    fn drop_chunks(&mut self, node: NodeId) -> Result<()> {
        let Strategy::DroppingHost { fraction, .. } = self.strategy(node) else {
            return Ok(());
        };
        let contracts: Vec<ContractId> = self
            .hosted
            .keys()
            .copied()
            .filter(|id| {
                self.ledger
                    .contract(*id)
                    .map(|c| c.host == Some(node))
                    .unwrap_or(false)
            })
            .collect();
        for contract in contracts {
            let hosted = self.hosted.get_mut(&contract).expect("listed");
            let chunk_count = hosted.chunk_count();
            let to_drop = ((fraction * f64::from(chunk_count)).ceil() as u32).min(chunk_count);
            if to_drop == 0 {
                continue;
            }
            let mut h = Hasher::new("depot.drop");
            h.u64(self.scenario.rng_seed).u64(contract.0).u32(node.0);
            let mut generator = rng::rng_from_digest(&h.finish());
            for index in rng::sample_distinct(&mut generator, chunk_count, to_drop) {
                hosted.drop_chunk(index);
            }
        }
        Ok(())
    }

    fn terminate_all(&mut self, node: NodeId, as_host: bool) -> Result<()> {
        if self.ledger.is_banned(node) {
            return Ok(());
        }
        let targets: Vec<ContractId> = self
            .contract_ids
            .iter()
            .flatten()
            .copied()
            .filter(|id| {
                self.ledger
                    .contract(*id)
                    .map(|c| {
                        c.state == ContractState::Active
                            && if as_host {
                                c.host == Some(node)
                            } else {
                                c.client == node
                            }
                    })
                    .unwrap_or(false)
            })
            .collect();
        for contract in targets {
            if as_host {
                self.ledger.host_terminate(node, contract)?;
            } else {
                self.ledger.client_terminate(node, contract)?;
            }
        }
        Ok(())
    }

    /// Reacts to chain state until a fixpoint: clients finish contracts in
    /// the final-ack window, auditors vote on open cases.
    fn react(&mut self) -> Result<()> {
        loop {
            let mut progressed = false;
            let ids: Vec<ContractId> = self.contract_ids.iter().flatten().copied().collect();
            for contract in ids {
                let c = self.ledger.contract(contract)?;
                if c.state == ContractState::AwaitingFinalAck
                    && c.dispute.is_none()
                    && !self.client_acted.contains(&contract)
                {
                    self.client_acted.insert(contract);
                    self.client_final_action(contract)?;
                    progressed = true;
                }
            }
            let open_cases: Vec<CaseId> = self
                .ledger
                .cases()
                .filter(|case| case.verdict.is_none() && !self.votes_done.contains(&case.id))
                .map(|case| case.id)
                .collect();
            for case in open_cases {
                self.votes_done.insert(case);
                self.cast_all_votes(case)?;
                progressed = true;
            }
            if !progressed {
                return Ok(());
            }
        }
    }

    fn client_final_action(&mut self, contract: ContractId) -> Result<()> {
        let c = self.ledger.contract(contract)?;
        let client = c.client;
        let host = c.host.expect("awaiting ack implies accepted");
        if self.ledger.is_banned(client) {
            // A banned client cannot transact; the deadline sweep will
            // open the dispute on its behalf.
            return Ok(());
        }
        let idx = self
            .contract_ids
            .iter()
            .position(|id| *id == Some(contract))
            .expect("engine-started contract");
        let served = self.host_serves(host, contract);
        let correct = served
            && self.hosted[&contract]
                .reassemble()
                .map(|bytes| bytes == self.files[idx])
                .unwrap_or(false);
        self.ledger.record(TraceEvent::OffchainDownload {
            time: self.ledger.clock(),
            contract,
            served,
            correct,
        });
        let lies = self.strategy(client) == Strategy::LyingClient;
        if correct && !lies {
            self.ledger.finalize(client, contract)?;
            // The host deletes the file once the contract closes cleanly.
            self.hosted.remove(&contract);
        } else {
            match self.ledger.open_dispute(client, contract) {
                Ok(_) => {}
                // Without a committee the deadline sweep escalates later.
                Err(Error::InsufficientAuditors { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn cast_all_votes(&mut self, case: CaseId) -> Result<()> {
        let record = self.ledger.case(case)?;
        let contract = record.contract;
        let auditors = record.auditors.clone();
        let already: BTreeSet<NodeId> = record.votes.keys().copied().collect();
        let host = self
            .ledger
            .contract(contract)?
            .host
            .expect("disputed contract has a host");
        for auditor in auditors {
            if already.contains(&auditor) {
                continue;
            }
            let observed_available = self.probe(auditor, case, contract, host);
            let mut h = Hasher::new("depot.honesty");
            h.u64(self.scenario.rng_seed).u64(case.0).u32(auditor.0);
            let mut generator = rng::rng_from_digest(&h.finish());
            let truthful = rng::bernoulli(&mut generator, self.honesty(auditor));
            let says_available = if truthful {
                observed_available
            } else {
                !observed_available
            };
            let vote = if says_available {
                Vote::FileAvailable
            } else {
                Vote::FileUnavailable
            };
            self.ledger.cast_vote(auditor, case, vote)?;
        }
        Ok(())
    }

    /// One challenge-response attempt against the host. Refusal to serve
    /// counts as unavailable.
    fn probe(&self, auditor: NodeId, case: CaseId, contract: ContractId, host: NodeId) -> bool {
        if !self.host_serves(host, contract) {
            return false;
        }
        let metadata = self
            .ledger
            .contract(contract)
            .expect("case contract exists")
            .metadata
            .expect("accepted contract has metadata");
        let mut h = Hasher::new("depot.probe");
        h.u64(self.scenario.rng_seed).u64(case.0).u32(auditor.0);
        let seed = por::Seed(h.finish());
        let challenge =
            por::derive_challenge(&seed, metadata.chunk_count, self.scenario.challenge_count);
        let proof = self.hosted[&contract].prove(&challenge);
        por::verify_proof(&metadata, &challenge, &proof)
    }

    fn into_trace(self) -> Trace {
        let final_balances = self
            .nodes
            .iter()
            .map(|(id, node)| BalanceRecord {
                node: *id,
                name: node.name.clone(),
                balance: self.ledger.balance(*id),
            })
            .collect();
        let outcomes = self
            .contract_ids
            .iter()
            .zip(&self.aborted)
            .map(|(id, aborted)| {
                if let Some(reason) = aborted {
                    return ContractOutcome::NotStarted {
                        reason: reason.clone(),
                    };
                }
                let id = id.expect("all non-aborted contracts started");
                let state = self.ledger.contract(id).expect("contract exists").state;
                let ContractState::Settled(kind) = state else {
                    unreachable!("run() checked settlement");
                };
                ContractOutcome::Settled { contract: id, kind }
            })
            .collect();
        let reputation = self
            .nodes
            .iter()
            .filter_map(|(id, node)| {
                let record = self.ledger.reputation(*id);
                (record != ReputationRecord::default()).then(|| ReputationLine {
                    node: *id,
                    name: node.name.clone(),
                    record,
                })
            })
            .collect();
        Trace {
            scenario: self.scenario,
            events: self.ledger.events().to_vec(),
            final_balances,
            outcomes,
            reputation,
            burned: self.ledger.accounts().burned(),
        }
    }
}

/// Executes the full three-phase protocol for every configured contract.
pub fn run(scenario: &Scenario) -> Result<Trace> {
    Engine::new(scenario)?.run()
}

/// Re-runs the embedded scenario and compares bit-exactly.
pub fn replay(trace: &Trace) -> Result<bool> {
    let rerun = run(&trace.scenario)?;
    Ok(rerun == *trace && rerun.to_jsonl() == trace.to_jsonl())
}

/// Evaluates the scenario's configured assertions against a finished run.
pub fn check_assertions(trace: &Trace) -> Vec<AssertionReport> {
    let mut reports = Vec::new();
    for assertion in &trace.scenario.assertions {
        let (description, passed) = match assertion {
            ScenarioAssertion::Outcome { contract, outcome } => {
                let actual = trace.outcomes.get(*contract).and_then(|o| o.kind());
                (
                    format!("contract {contract} settles as {outcome:?} (actual {actual:?})"),
                    actual == Some(*outcome),
                )
            }
            ScenarioAssertion::BalanceDelta { node, delta } => {
                let final_balance = trace
                    .final_balances
                    .iter()
                    .find(|b| &b.name == node)
                    .map(|b| b.balance.0 as i64);
                let initial = initial_balance(&trace.scenario, node);
                let actual = match (final_balance, initial) {
                    (Some(f), Some(i)) => Some(f - i),
                    _ => None,
                };
                (
                    format!("node {node} balance delta {delta} (actual {actual:?})"),
                    actual == Some(*delta),
                )
            }
            ScenarioAssertion::Banned { node, banned } => {
                let was_banned = trace.events.iter().any(|e| {
                    matches!(e, TraceEvent::Settled { banned: Some(b), .. }
                        if trace.final_balances.iter().any(|rec| rec.node == *b && &rec.name == node))
                });
                (
                    format!("node {node} banned = {banned} (actual {was_banned})"),
                    was_banned == *banned,
                )
            }
        };
        reports.push(AssertionReport {
            description,
            passed,
        });
    }
    reports
}

fn initial_balance(scenario: &Scenario, name: &str) -> Option<i64> {
    for spec in &scenario.nodes {
        if spec.count == 1 && spec.name == name {
            return Some(spec.balance as i64);
        }
        for i in 0..spec.count {
            if spec.count > 1 && format!("{}-{i}", spec.name) == name {
                return Some(spec.balance as i64);
            }
        }
    }
    None
}

/// A structurally valid pseudo-random scenario: ample balances and
/// capacity, a committee that can always be seated, strategies drawn from
/// the full set. Used for determinism and conservation fuzzing.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut h = Hasher::new("depot.fuzz");
    h.u64(seed);
    let mut generator = rng::rng_from_digest(&h.finish());
    let mut pick = |bound: u32| rng::uniform_u32(&mut generator, bound);

    let n_clients = 1 + pick(2);
    let n_hosts = 1 + pick(3);
    let n_auditors = 5 + 2 * pick(3); // 5, 7 or 9
    let n_contracts = 1 + pick(3) as usize;

    let mut nodes = Vec::new();
    for i in 0..n_clients {
        let strategy = match pick(5) {
            0 => Strategy::LyingClient,
            1 => Strategy::EarlyTerminatingClient {
                at_time: 1 + pick(20_000) as u64,
            },
            _ => Strategy::HonestClient,
        };
        nodes.push(NodeSpec {
            name: format!("client{i}"),
            role: NodeRole::Client,
            balance: 0, // filled below
            capacity: 0,
            honesty: 1.0,
            count: 1,
            clock_skew: i64::from(pick(601)) - 300,
            strategy: Some(strategy),
        });
    }
    for i in 0..n_hosts {
        // host0 is on every contract's list and must stay available —
        // never banned, vanished or terminated — so every contract finds
        // at least one willing host.
        let roll = pick(8);
        let roll = if i == 0 && (1..=3).contains(&roll) { 7 } else { roll };
        let strategy = match roll {
            0 => Strategy::DroppingHost {
                fraction: f64::from(1 + pick(10)) / 10.0,
                at_time: 1 + pick(20_000) as u64,
            },
            1 => Strategy::VanishingHost {
                at_time: 1 + pick(20_000) as u64,
            },
            2 => Strategy::WithholdingHost,
            3 => Strategy::EarlyTerminatingHost {
                at_time: 1 + pick(20_000) as u64,
            },
            _ => Strategy::HonestHost,
        };
        nodes.push(NodeSpec {
            name: format!("host{i}"),
            role: NodeRole::Host,
            balance: 0,
            capacity: 0,
            honesty: 1.0,
            count: 1,
            clock_skew: i64::from(pick(601)) - 300,
            strategy: Some(strategy),
        });
    }
    nodes.push(NodeSpec {
        name: "auditor".into(),
        role: NodeRole::Auditor,
        balance: 10,
        capacity: 0,
        honesty: f64::from(70 + pick(31)) / 100.0,
        count: n_auditors,
        clock_skew: 0,
        strategy: None,
    });

    let mut contracts = Vec::new();
    let mut client_needs = vec![0u64; n_clients as usize];
    let mut host_needs = vec![0u64; n_hosts as usize];
    let mut host_capacity = vec![0u64; n_hosts as usize];
    for _ in 0..n_contracts {
        let client = pick(n_clients) as usize;
        let mut hosts = vec![0usize];
        if n_hosts > 1 && pick(2) == 1 {
            let extra = pick(n_hosts) as usize;
            if extra != 0 {
                hosts.push(extra);
            }
        }
        let file_size = 200 + pick(8000) as u64;
        let chunk_size = 64 + pick(449);
        let epochs = 2 + pick(4) as u64;
        let proof_period = 2000 + pick(5200) as u64;
        let total_price = pick(501) as u64;
        let file_sequestration = pick(301) as u64;
        let auditors_sequestration = pick(301) as u64;
        client_needs[client] += total_price + auditors_sequestration;
        for &h in &hosts {
            host_needs[h] += file_sequestration + auditors_sequestration;
            host_capacity[h] += file_size;
        }
        contracts.push(ContractSpec {
            client: format!("client{client}"),
            hosts: hosts.iter().map(|h| format!("host{h}")).collect(),
            file_size,
            chunk_size,
            duration: epochs * proof_period,
            proof_period,
            total_price,
            file_sequestration,
            auditors_sequestration,
            missed_or_bad_proof_limit: 1 + pick(4),
            start_time: (pick(5) as u64) * 500,
        });
    }
    for (i, node) in nodes.iter_mut().enumerate() {
        match node.role {
            NodeRole::Client => node.balance = client_needs[i] + 1000,
            NodeRole::Host => {
                let host_index: usize = i - n_clients as usize;
                node.balance = host_needs[host_index] + 1000;
                node.capacity = host_capacity[host_index] + 1;
            }
            NodeRole::Auditor => {}
        }
    }

    Scenario {
        name: format!("fuzz-{seed}"),
        rng_seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1),
        max_skew: 900,
        challenge_count: 8,
        auditors_per_case: 5,
        min_host_score: 0.0,
        nodes,
        contracts,
        assertions: Vec::new(),
    }
}
