//! Simulated proof-of-stake executions.
//!
//! A trace records, per epoch `j`: the sync committee `S^j`, the handover
//! proof `Σ^j` by which `S^{j-1}` inaugurated it (empty for genesis), the
//! state commitment at the start of the epoch and the committee's signatures
//! on that commitment.

use std::sync::Arc;

use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::state::{apply_all, commit, AccountState, StateCommitment, Transaction};
use crate::crypto::{
    hash_parts, keygen, sign_prepared, verify_prepared, EpochKeyRegistry, KeyPair, PreparedMessage, PublicKey,
    SecretKey, Signature,
};
use crate::merkle::leaf_hash;
use crate::Digest;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("horizon must be at least one epoch")]
    EmptyHorizon,
    #[error("committee size must be at least 1")]
    EmptyCommittee,
    #[error("{signers} signers out of {committee} is not a strict majority")]
    Threshold { signers: usize, committee: usize },
    #[error("validator pool of {pool} cannot fill a committee of {committee}")]
    PoolTooSmall { pool: usize, committee: usize },
    #[error("epoch {at} outside 1..{horizon}")]
    EpochOutOfRange { at: u64, horizon: u64 },
    #[error("traces disagree on {0}")]
    Incompatible(&'static str),
}

/// Smallest strict majority of a committee of `m`: `⌊m/2⌋ + 1`.
pub fn majority(m: usize) -> usize {
    m / 2 + 1
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncCommittee {
    pub epoch: u64,
    pub members: Vec<PublicKey>,
}

impl SyncCommittee {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Leaf encoding: `epoch (8B BE) || member keys`.
    pub fn leaf_bytes(&self) -> Vec<u8> {
        encode_committee(self.epoch, &self.members)
    }

    pub fn leaf_digest(&self) -> Digest {
        leaf_hash(&self.leaf_bytes())
    }
}

fn encode_committee(epoch: u64, members: &[PublicKey]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 32 * members.len());
    out.extend_from_slice(&epoch.to_be_bytes());
    for k in members {
        out.extend_from_slice(&k.0);
    }
    out
}

/// The bytes every handover signature for epoch `epoch` signs.
pub fn handover_message(epoch: u64, next: &SyncCommittee) -> Vec<u8> {
    encode_committee(epoch, &next.members)
}

/// The bytes a committee member signs to endorse a state commitment.
pub fn commitment_message(epoch: u64, commitment: &StateCommitment) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 + 32);
    out.extend_from_slice(b"STCM");
    out.extend_from_slice(&epoch.to_be_bytes());
    out.extend_from_slice(commitment.0.as_bytes());
    out
}

/// `(member index, signature)` pairs by members of one committee.
pub type SignatureList = Vec<(u32, Signature)>;

/// Σ^j: signatures by members of `S^{j-1}` on `(j, S^j)`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct HandoverProof {
    pub epoch: u64,
    pub signatures: SignatureList,
}

/// Outcome of checking a signature list, with the work performed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignatureCheck {
    pub valid: bool,
    pub verifications: u64,
}

/// Strict majority check: every index is unique and in range, every
/// signature verifies, and there are at least `⌊m/2⌋ + 1` of them.
pub fn check_signatures(signers: &SyncCommittee, message: &[u8], sigs: &[(u32, Signature)]) -> SignatureCheck {
    let m = signers.len();
    let mut check = SignatureCheck { valid: false, verifications: 0 };
    if m == 0 || sigs.len() < majority(m) {
        return check;
    }
    let mut seen = vec![false; m];
    for (idx, _) in sigs {
        let i = *idx as usize;
        if i >= m || seen[i] {
            return check;
        }
        seen[i] = true;
    }
    let prepared = PreparedMessage::new(message);
    for (idx, sig) in sigs {
        check.verifications += 1;
        if !verify_prepared(&signers.members[*idx as usize], &prepared, sig) {
            return check;
        }
    }
    check.valid = true;
    check
}

pub fn check_handover(prev: &SyncCommittee, epoch: u64, next: &SyncCommittee, proof: &HandoverProof) -> SignatureCheck {
    if next.len() != prev.len() || next.epoch != epoch || epoch == 0 {
        return SignatureCheck { valid: false, verifications: 0 };
    }
    check_signatures(prev, &handover_message(epoch, next), &proof.signatures)
}

/// True iff `proof` carries a strict majority of valid, unique signatures
/// by members of `prev` on `(epoch, next)`.
pub fn verify_handover(prev: &SyncCommittee, epoch: u64, next: &SyncCommittee, proof: &HandoverProof) -> bool {
    check_handover(prev, epoch, next, proof).valid
}

pub fn check_commitment_signatures(
    committee: &SyncCommittee,
    commitment: &StateCommitment,
    sigs: &[(u32, Signature)],
) -> SignatureCheck {
    check_signatures(committee, &commitment_message(committee.epoch, commitment), sigs)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochRecord {
    pub committee: SyncCommittee,
    pub handover: HandoverProof,
    pub commitment: StateCommitment,
    pub commitment_signatures: SignatureList,
}

/// Genesis state plus the transfers applied during each epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ledger {
    pub genesis: AccountState,
    /// `batches[e]` is applied during epoch `e`; `batches[0]` is empty.
    pub batches: Vec<Vec<Transaction>>,
}

impl Ledger {
    /// State at the beginning of `epoch`: genesis plus the batches of epochs `1..=epoch`.
    pub fn state_at(&self, epoch: u64) -> AccountState {
        let txs: Vec<Transaction> = self.batches[..=epoch as usize].iter().flatten().copied().collect();
        apply_all(&self.genesis, &txs).expect("ledger batches are valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceOrigin {
    Generated {
        seed: u64,
    },
    /// One side of an equivocating committee fixture.
    Equivocation {
        at: u64,
    },
    Spliced {
        at: u64,
        degenerate: bool,
    },
    Loaded,
}

#[derive(Clone, Debug)]
pub struct ExecutionTrace {
    committee_size: usize,
    epochs: Vec<Arc<EpochRecord>>,
    ledger: Option<Arc<Ledger>>,
    origin: TraceOrigin,
}

/// Where a trace fails well-formedness.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum TraceDefect {
    #[error("epoch 0 committee is not the genesis committee")]
    Genesis,
    #[error("epoch {0}: committee is malformed")]
    Committee(u64),
    #[error("epoch {0}: handover proof does not verify")]
    Handover(u64),
    #[error("epoch {0}: state commitment lacks a majority of signatures")]
    CommitmentSignatures(u64),
}

impl ExecutionTrace {
    pub fn from_records(committee_size: usize, epochs: Vec<EpochRecord>, origin: TraceOrigin) -> Self {
        ExecutionTrace { committee_size, epochs: epochs.into_iter().map(Arc::new).collect(), ledger: None, origin }
    }

    pub fn horizon(&self) -> u64 {
        self.epochs.len() as u64
    }

    pub fn committee_size(&self) -> usize {
        self.committee_size
    }

    pub fn origin(&self) -> TraceOrigin {
        self.origin
    }

    pub fn is_honest(&self) -> bool {
        matches!(self.origin, TraceOrigin::Generated { .. })
    }

    pub fn ledger(&self) -> Option<&Ledger> {
        self.ledger.as_deref()
    }

    pub fn record(&self, epoch: u64) -> Option<&EpochRecord> {
        self.epochs.get(epoch as usize).map(Arc::as_ref)
    }

    pub fn records(&self) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().map(Arc::as_ref)
    }

    pub fn committee(&self, epoch: u64) -> Option<&SyncCommittee> {
        self.record(epoch).map(|r| &r.committee)
    }

    pub fn genesis(&self) -> &SyncCommittee {
        &self.epochs[0].committee
    }

    pub fn latest(&self) -> &EpochRecord {
        self.epochs.last().expect("traces are non-empty")
    }

    pub fn latest_commitment(&self) -> StateCommitment {
        self.latest().commitment
    }

    pub fn leaf_digests(&self) -> Vec<Digest> {
        self.records().map(|r| r.committee.leaf_digest()).collect()
    }

    /// The first `horizon` epochs of this trace. Records are shared, not copied.
    pub fn truncate(&self, horizon: u64) -> ExecutionTrace {
        let n = (horizon as usize).clamp(1, self.epochs.len());
        ExecutionTrace {
            committee_size: self.committee_size,
            epochs: self.epochs[..n].to_vec(),
            ledger: self
                .ledger
                .as_ref()
                .map(|l| Arc::new(Ledger { genesis: l.genesis.clone(), batches: l.batches[..n].to_vec() })),
            origin: self.origin,
        }
    }

    /// Full well-formedness pass against a known genesis committee.
    pub fn revalidate(&self, genesis: &SyncCommittee) -> Result<(), TraceDefect> {
        if self.genesis() != genesis {
            return Err(TraceDefect::Genesis);
        }
        let m = self.committee_size;
        for (j, rec) in self.records().enumerate() {
            let j = j as u64;
            if rec.committee.len() != m || rec.committee.epoch != j {
                return Err(TraceDefect::Committee(j));
            }
            if j > 0 {
                let prev = &self.epochs[j as usize - 1].committee;
                if !verify_handover(prev, j, &rec.committee, &rec.handover) {
                    return Err(TraceDefect::Handover(j));
                }
            }
            if !check_commitment_signatures(&rec.committee, &rec.commitment, &rec.commitment_signatures).valid {
                return Err(TraceDefect::CommitmentSignatures(j));
            }
        }
        Ok(())
    }
}

/// Parameters of a generated execution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceParams {
    pub epochs: u64,
    pub committee_size: usize,
    pub signers: usize,
    pub seed: u64,
    /// Validators committees are sampled from; defaults to `2m`.
    pub validators: Option<usize>,
    pub accounts: u64,
    pub initial_balance: u64,
    pub txs_per_epoch: usize,
    /// Draws signer subsets from a separate seed, so that honest provers can
    /// hold different successions over identical committees.
    pub succession_seed: Option<u64>,
}

impl TraceParams {
    pub fn new(epochs: u64, committee_size: usize, signers: usize, seed: u64) -> Self {
        TraceParams {
            epochs,
            committee_size,
            signers,
            seed,
            validators: None,
            accounts: 16,
            initial_balance: 1_000,
            txs_per_epoch: 8,
            succession_seed: None,
        }
    }

    /// Minimal signer count for the committee size.
    pub fn with_majority(epochs: u64, committee_size: usize, seed: u64) -> Self {
        Self::new(epochs, committee_size, majority(committee_size), seed)
    }

    fn pool_size(&self) -> usize {
        self.validators.unwrap_or(2 * self.committee_size)
    }

    fn validate(&self) -> Result<(), ChainError> {
        if self.epochs == 0 {
            return Err(ChainError::EmptyHorizon);
        }
        if self.committee_size == 0 {
            return Err(ChainError::EmptyCommittee);
        }
        if self.signers < majority(self.committee_size) || self.signers > self.committee_size {
            return Err(ChainError::Threshold { signers: self.signers, committee: self.committee_size });
        }
        if self.pool_size() < self.committee_size {
            return Err(ChainError::PoolTooSmall { pool: self.pool_size(), committee: self.committee_size });
        }
        Ok(())
    }
}

fn epoch_rng(label: &[u8], seed: u64, epoch: u64) -> ChaCha20Rng {
    let d = hash_parts([label, &seed.to_be_bytes()[..], &epoch.to_be_bytes()[..]]);
    ChaCha20Rng::from_seed(d.0)
}

struct Fork {
    at: u64,
    seed: u64,
}

pub fn gen_trace(params: &TraceParams) -> Result<ExecutionTrace, ChainError> {
    generate(params, None)
}

/// Two executions sharing `S^0..S^{at-1}` whose committee `S^{at-1}` signed
/// two different epoch-`at` committees. Both traces are internally well-formed.
pub fn equivocating_committee_trace(
    params: &TraceParams,
    at: u64,
) -> Result<(ExecutionTrace, ExecutionTrace), ChainError> {
    params.validate()?;
    if at == 0 || at >= params.epochs {
        return Err(ChainError::EpochOutOfRange { at, horizon: params.epochs });
    }
    let fork_seed = params.seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut a = generate(params, None)?;
    let mut b = generate(params, Some(Fork { at, seed: fork_seed }))?;
    a.origin = TraceOrigin::Equivocation { at };
    b.origin = TraceOrigin::Equivocation { at };
    Ok((a, b))
}

fn generate(params: &TraceParams, fork: Option<Fork>) -> Result<ExecutionTrace, ChainError> {
    params.validate()?;
    let m = params.committee_size;
    let n = params.epochs;
    let seed_for = |epoch: u64| match &fork {
        Some(f) if epoch >= f.at => f.seed,
        _ => params.seed,
    };

    let pool: Vec<KeyPair> = (0..params.pool_size() as u64)
        .map(|v| keygen(hash_parts([&b"popos/validator"[..], &params.seed.to_be_bytes(), &v.to_be_bytes()]).0))
        .collect();

    let members: Vec<Vec<usize>> = (0..n)
        .map(|e| {
            let mut rng = epoch_rng(b"popos/committee", seed_for(e), e);
            sample(&mut rng, pool.len(), m).into_vec()
        })
        .collect();
    let committees: Vec<SyncCommittee> = members
        .iter()
        .enumerate()
        .map(|(e, idx)| SyncCommittee { epoch: e as u64, members: idx.iter().map(|&v| pool[v].public).collect() })
        .collect();

    let ledger = generate_ledger(params, &seed_for);
    let mut state = ledger.genesis.clone();

    let signer_seed = |epoch: u64| params.succession_seed.unwrap_or(seed_for(epoch));
    let signers_of = |label: &[u8], epoch: u64| -> Vec<u32> {
        let mut rng = epoch_rng(label, signer_seed(epoch), epoch);
        let mut s: Vec<u32> = sample(&mut rng, m, params.signers).into_iter().map(|i| i as u32).collect();
        s.sort_unstable();
        s
    };

    let mut registry = EpochKeyRegistry::new();
    let mut records = Vec::with_capacity(n as usize);
    let mut pending_handover = HandoverProof::default();
    for e in 0..n {
        for (i, &v) in members[e as usize].iter().enumerate() {
            registry.insert(e, i as u32, pool[v].secret.clone());
        }
        if e > 0 {
            state = super::state::apply_all(&state, &ledger.batches[e as usize]).expect("generated batch is valid");
        }
        let commitment = commit(&state);
        let committee = &committees[e as usize];
        let commitment_signatures =
            sign_all(&registry, e, &signers_of(b"popos/commitment-signers", e), &commitment_message(e, &commitment));

        let handover = std::mem::take(&mut pending_handover);
        if e + 1 < n {
            let next = &committees[e as usize + 1];
            pending_handover = HandoverProof {
                epoch: e + 1,
                signatures: sign_all(
                    &registry,
                    e,
                    &signers_of(b"popos/handover-signers", e + 1),
                    &handover_message(e + 1, next),
                ),
            };
        }
        records.push(EpochRecord { committee: committee.clone(), handover, commitment, commitment_signatures });
        registry.advance(e + 1).expect("epochs increase");
    }

    Ok(ExecutionTrace {
        committee_size: m,
        epochs: records.into_iter().map(Arc::new).collect(),
        ledger: Some(Arc::new(ledger)),
        origin: TraceOrigin::Generated { seed: params.seed },
    })
}

fn sign_all(registry: &EpochKeyRegistry, epoch: u64, signers: &[u32], message: &[u8]) -> SignatureList {
    let prepared = PreparedMessage::new(message);
    signers
        .iter()
        .map(|&i| {
            let sk: &SecretKey = registry.get(epoch, i).expect("signer key is live during its epoch");
            (i, sign_prepared(sk, &prepared))
        })
        .collect()
}

fn generate_ledger(params: &TraceParams, seed_for: &dyn Fn(u64) -> u64) -> Ledger {
    let genesis = AccountState::from_balances((0..params.accounts).map(|a| (a, params.initial_balance)));
    let mut state = genesis.clone();
    let mut batches = vec![Vec::new()];
    for e in 1..params.epochs {
        let mut rng = epoch_rng(b"popos/workload", seed_for(e), e);
        let mut batch = Vec::with_capacity(params.txs_per_epoch);
        for _ in 0..params.txs_per_epoch {
            if params.accounts == 0 {
                break;
            }
            let from = rng.gen_range(0..params.accounts);
            let to = rng.gen_range(0..params.accounts);
            let balance = state.balance(from).unwrap_or(0);
            let tx = Transaction { from, to, amount: rng.gen_range(0..=balance) };
            state.apply(&tx).expect("amount bounded by balance");
            batch.push(tx);
        }
        batches.push(batch);
    }
    Ledger { genesis, batches }
}

/// `honest` up to epoch `at - 1`, `alt` from `at` on, keeping `alt`'s
/// handover proofs as they are. The handover at `at` is therefore signed by
/// `alt`'s committee, not by the honest `S^{at-1}`.
pub fn splice(honest: &ExecutionTrace, alt: &ExecutionTrace, at: u64) -> Result<ExecutionTrace, ChainError> {
    if honest.horizon() != alt.horizon() {
        return Err(ChainError::Incompatible("horizon"));
    }
    if honest.committee_size != alt.committee_size {
        return Err(ChainError::Incompatible("committee size"));
    }
    if at == 0 || at >= honest.horizon() {
        return Err(ChainError::EpochOutOfRange { at, horizon: honest.horizon() });
    }
    let cut = at as usize;
    let degenerate = honest.epochs[cut..]
        .iter()
        .zip(&alt.epochs[cut..])
        .all(|(h, a)| h.committee == a.committee && h.commitment == a.commitment);
    if degenerate {
        warn!("splice at epoch {at} is degenerate: both traces agree from there on");
    }
    let mut epochs = honest.epochs[..cut].to_vec();
    epochs.extend_from_slice(&alt.epochs[cut..]);
    Ok(ExecutionTrace {
        committee_size: honest.committee_size,
        epochs,
        ledger: alt.ledger.clone(),
        origin: TraceOrigin::Spliced { at, degenerate },
    })
}

/// First epoch whose committee differs between the traces (linear scan).
pub fn first_disagreement(a: &ExecutionTrace, b: &ExecutionTrace) -> Option<u64> {
    a.records().zip(b.records()).position(|(x, y)| x.committee != y.committee).map(|j| j as u64)
}
