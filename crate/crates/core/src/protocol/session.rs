//! Prover endpoints.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::chainsim::{prove_balance, AccountState, ExecutionTrace, SyncCommittee};
use crate::crypto::Digest;
use crate::merkle::{MerkleError, MerkleProof, MountainRange};
use crate::transport::{Reply, Responder};

use super::wire::{BatchKind, Claim, ClaimMode, LeafKind, Message};

/// Everything a prover derives from its trace, computed once and shared by
/// all sessions over that trace.
#[derive(Debug)]
pub struct ProverData {
    trace: Arc<ExecutionTrace>,
    leaves: OnceLock<Vec<Digest>>,
    ranges: Mutex<HashMap<usize, Arc<MountainRange>>>,
    state: OnceLock<Option<AccountState>>,
}

impl ProverData {
    pub fn new(trace: Arc<ExecutionTrace>) -> Arc<Self> {
        Arc::new(ProverData {
            trace,
            leaves: OnceLock::new(),
            ranges: Mutex::new(HashMap::new()),
            state: OnceLock::new(),
        })
    }

    pub fn trace(&self) -> &ExecutionTrace {
        &self.trace
    }

    pub fn leaf_digests(&self) -> &[Digest] {
        self.leaves.get_or_init(|| self.trace.leaf_digests())
    }

    pub fn range(&self, degree: usize) -> Result<Arc<MountainRange>, MerkleError> {
        let mut ranges = self.ranges.lock().expect("range cache lock");
        if let Some(r) = ranges.get(&degree) {
            return Ok(r.clone());
        }
        let r = Arc::new(MountainRange::from_leaf_digests(self.leaf_digests().to_vec(), degree)?);
        ranges.insert(degree, r.clone());
        Ok(r)
    }

    pub fn claim(&self, mode: ClaimMode, degree: usize) -> Result<Claim, MerkleError> {
        let latest = self.trace.latest();
        let (peaks, latest_proof) = match mode {
            ClaimMode::Linear => (None, None),
            ClaimMode::Succinct => {
                let range = self.range(degree)?;
                let (_, proof) = range.prove(range.size() - 1)?;
                (Some(range.peaks()), Some(proof))
            }
        };
        Ok(Claim {
            commitment: latest.commitment,
            latest: latest.committee.clone(),
            signatures: latest.commitment_signatures.clone(),
            peaks,
            latest_proof,
        })
    }

    /// `S^j` with its proof inside the tree holding global leaf `j`.
    pub fn leaf_with_proof(&self, degree: usize, j: u64) -> Result<(SyncCommittee, MerkleProof), MerkleError> {
        let committee =
            self.trace.committee(j).ok_or(MerkleError::IndexOutOfRange { index: j, size: self.trace.horizon() })?;
        let (_, proof) = self.range(degree)?.prove(j)?;
        Ok((committee.clone(), proof))
    }

    fn final_state(&self) -> Option<&AccountState> {
        self.state.get_or_init(|| self.trace.ledger().map(|l| l.state_at(self.trace.horizon() - 1))).as_ref()
    }
}

/// Last leaf of tree `tree_index - 1`, proven against that tree's peak. This
/// is the previous leaf when a game ends at local leaf 0 of `tree_index`.
pub fn cross_tree_prev_leaf(
    data: &ProverData,
    degree: usize,
    tree_index: usize,
) -> Option<(SyncCommittee, MerkleProof)> {
    if tree_index == 0 {
        return None;
    }
    let range = data.range(degree).ok()?;
    let prev = range.tree(tree_index - 1)?;
    let global = range.offsets()[tree_index - 1] + prev.size() - 1;
    data.leaf_with_proof(degree, global).ok()
}

/// Honest prover session for one connection.
pub struct ProverSession {
    data: Arc<ProverData>,
    degree: Option<usize>,
}

impl ProverSession {
    pub fn new(data: Arc<ProverData>) -> Self {
        ProverSession { data, degree: None }
    }

    pub fn from_trace(trace: ExecutionTrace) -> Self {
        Self::new(ProverData::new(Arc::new(trace)))
    }

    pub fn data(&self) -> &Arc<ProverData> {
        &self.data
    }

    pub fn answer(&mut self, request: &Message) -> Option<Message> {
        let trace = self.data.trace();
        let n = trace.horizon();
        let msg = match request {
            Message::ClaimRequest { mode, degree } => {
                let d = *degree as usize;
                let claim = self.data.claim(*mode, d).ok()?;
                self.degree = Some(d);
                Message::ClaimResponse(claim)
            }
            Message::Open { tree, path } => {
                let range = self.data.range(self.degree?).ok()?;
                let path: Vec<usize> = path.iter().map(|&p| p as usize).collect();
                Message::Children(range.tree(*tree as usize)?.children(&path).ok()?.to_vec())
            }
            Message::LeafRequest { kind: LeafKind::Leaf, index } => {
                Message::LeafReveal(trace.committee(*index)?.clone())
            }
            Message::LeafRequest { kind: LeafKind::WithProof, index } => {
                let (s, p) = self.data.leaf_with_proof(self.degree?, *index).ok()?;
                Message::PrevLeafReveal(s, p)
            }
            Message::LeafRequest { kind: LeafKind::Handover, index } => {
                if *index == 0 {
                    return None;
                }
                Message::HandoverReveal(trace.record(*index)?.handover.clone())
            }
            Message::BatchRequest { kind, start, count } => {
                let lo = (*start).min(n);
                let hi = start.saturating_add(*count as u64).min(n);
                match kind {
                    BatchKind::Committees => Message::CommitteeBatch(
                        (lo..hi)
                            .map(|j| {
                                let r = trace.record(j).expect("in range");
                                (r.committee.clone(), r.handover.clone())
                            })
                            .collect(),
                    ),
                    BatchKind::Hashes => Message::HashBatch {
                        start: lo,
                        digests: self.data.leaf_digests()[lo as usize..hi as usize].to_vec(),
                    },
                }
            }
            Message::BalanceRequest { account } => {
                Message::BalanceResponse(prove_balance(self.data.final_state()?, *account))
            }
            _ => return None,
        };
        Some(msg)
    }
}

impl Responder for ProverSession {
    fn respond(&mut self, request: &Message) -> Reply {
        if matches!(request, Message::Verdict { .. }) {
            return Reply::Nothing;
        }
        match self.answer(request) {
            Some(m) => Reply::Send(m),
            None => Reply::Send(Message::Refused),
        }
    }
}

/// Deviations from the honest prover beyond holding a bad trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    /// Stops answering after this many requests.
    SilentAfter(u64),
    /// Closes the connection after this many requests.
    HangupAfter(u64),
    /// Children responses with the last digest altered.
    MalformedChildren,
    /// Keeps descending: answers leaf requests with another level of children.
    DeepTree,
    /// Reveals its leaves correctly but a tampered handover proof.
    BadHandover,
    /// Answers balance queries with an inflated balance.
    InflatedBalance,
}

pub struct AdversarialSession {
    inner: ProverSession,
    behavior: Behavior,
    seen: u64,
}

impl AdversarialSession {
    pub fn new(inner: ProverSession, behavior: Behavior) -> Self {
        AdversarialSession { inner, behavior, seen: 0 }
    }
}

impl Responder for AdversarialSession {
    fn respond(&mut self, request: &Message) -> Reply {
        self.seen += 1;
        match self.behavior {
            Behavior::SilentAfter(n) if self.seen > n => return Reply::Nothing,
            Behavior::HangupAfter(n) if self.seen > n => return Reply::Hangup,
            Behavior::DeepTree => {
                if let Message::LeafRequest { index, .. } = request {
                    let mut fake = vec![Digest::ZERO; self.inner.degree.unwrap_or(2)];
                    fake[0] = Digest(index.to_be_bytes().repeat(4).try_into().expect("32 bytes"));
                    return Reply::Send(Message::Children(fake));
                }
            }
            _ => {}
        }
        let reply = self.inner.respond(request);
        match (self.behavior, reply) {
            (Behavior::MalformedChildren, Reply::Send(Message::Children(mut ds))) => {
                if let Some(last) = ds.last_mut() {
                    last.0[0] ^= 1;
                }
                Reply::Send(Message::Children(ds))
            }
            (Behavior::BadHandover, Reply::Send(Message::HandoverReveal(mut h))) => {
                if let Some((_, sig)) = h.signatures.first_mut() {
                    sig.0[7] ^= 0x80;
                }
                Reply::Send(Message::HandoverReveal(h))
            }
            (Behavior::InflatedBalance, Reply::Send(Message::BalanceResponse(mut b))) => {
                if let crate::chainsim::BalanceProof::Present(p) = &mut b {
                    p.balance += 1_000;
                }
                Reply::Send(Message::BalanceResponse(b))
            }
            (_, r) => r,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainsim::{gen_trace, TraceParams};
    use crate::merkle::node_hash;

    fn session(n: u64) -> ProverSession {
        ProverSession::from_trace(gen_trace(&TraceParams::new(n, 4, 3, 1)).unwrap())
    }

    fn walk(
        s: &mut ProverSession,
        tree: u32,
        path: &mut Vec<u32>,
        node: Digest,
        depth: usize,
        leaves: &mut Vec<Digest>,
    ) {
        if path.len() == depth {
            leaves.push(node);
            return;
        }
        let Some(Message::Children(ds)) = s.answer(&Message::Open { tree, path: path.clone() }) else {
            panic!("honest session refused an internal node");
        };
        assert_eq!(node_hash(&ds), node);
        for (i, c) in ds.into_iter().enumerate() {
            path.push(i as u32);
            walk(s, tree, path, c, depth, leaves);
            path.pop();
        }
    }

    #[test]
    fn children_rehash_to_queried_nodes() {
        for d in [2usize, 3, 4] {
            let mut s = session(13);
            let Some(Message::ClaimResponse(claim)) =
                s.answer(&Message::ClaimRequest { mode: ClaimMode::Succinct, degree: d as u32 })
            else {
                panic!()
            };
            let range = s.data().range(d).unwrap();
            let mut leaves = Vec::new();
            for (t, peak) in claim.peaks.unwrap().into_iter().enumerate() {
                let depth = range.tree(t).unwrap().depth();
                walk(&mut s, t as u32, &mut Vec::new(), peak, depth, &mut leaves);
            }
            let real: Vec<Digest> = leaves.into_iter().filter(|l| *l != crate::merkle::SENTINEL).collect();
            assert_eq!(real, s.data().leaf_digests());
        }
    }

    #[test]
    fn leaf_reveals_match_the_tree() {
        let mut s = session(6);
        s.answer(&Message::ClaimRequest { mode: ClaimMode::Succinct, degree: 2 }).unwrap();
        for j in 0..6 {
            let Some(Message::LeafReveal(c)) = s.answer(&Message::LeafRequest { kind: LeafKind::Leaf, index: j })
            else {
                panic!()
            };
            assert_eq!(c.leaf_digest(), s.data().leaf_digests()[j as usize]);
        }
        assert!(s.answer(&Message::LeafRequest { kind: LeafKind::Leaf, index: 6 }).is_none());
        assert!(s.answer(&Message::LeafRequest { kind: LeafKind::Handover, index: 0 }).is_none());
    }

    #[test]
    fn cross_tree_previous_leaf_for_six_epochs() {
        let s = session(6);
        let range = s.data().range(2).unwrap();
        let (committee, proof) = cross_tree_prev_leaf(s.data(), 2, 1).unwrap();
        assert_eq!(committee.epoch, 3);
        assert_eq!(proof.index, 3);
        assert!(proof.verify(range.peaks()[0], 4, 3, &committee.leaf_bytes(), 2));
        assert!(cross_tree_prev_leaf(s.data(), 2, 0).is_none());

        let mut forged = committee.clone();
        forged.members.swap(0, 1);
        assert!(!proof.verify(range.peaks()[0], 4, 3, &forged.leaf_bytes(), 2));
    }

    #[test]
    fn sessions_are_deterministic() {
        let data = session(9).data().clone();
        let reqs = [
            Message::ClaimRequest { mode: ClaimMode::Succinct, degree: 3 },
            Message::Open { tree: 0, path: vec![1] },
            Message::LeafRequest { kind: LeafKind::WithProof, index: 8 },
            Message::BatchRequest { kind: BatchKind::Hashes, start: 7, count: 10 },
            Message::BalanceRequest { account: 2 },
            Message::Open { tree: 5, path: vec![] },
        ];
        let mut a = ProverSession::new(data.clone());
        let mut b = ProverSession::new(data);
        for r in &reqs {
            assert_eq!(a.respond(r), b.respond(r));
        }
        assert_eq!(a.respond(&reqs[5]), Reply::Send(Message::Refused));
    }

    #[test]
    fn batches_clamp_to_horizon() {
        let mut s = session(5);
        let Some(Message::CommitteeBatch(b)) =
            s.answer(&Message::BatchRequest { kind: BatchKind::Committees, start: 3, count: 10 })
        else {
            panic!()
        };
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].0.epoch, 3);
    }
}
