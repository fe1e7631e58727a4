//! Account balances, the transfer transition function and its succinct form.
//!
//! Accounts are kept in a binary Merkle tree sorted by id, each leaf encoded
//! as `account (8B BE) || balance (8B BE)`. The state commitment binds the
//! account count to the root, `H(0x03 || count (8B BE) || root)`, so exclusion
//! proofs cannot hide trailing accounts. Accounts exist from genesis on;
//! transfers never create new ones.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::crypto::{hash_parts, Digest};
use crate::merkle::{leaf_hash, node_hash, MerkleProof, MerkleTree};

pub type AccountId = u64;

const STATE_DEGREE: usize = 2;
const STATE_PREFIX: u8 = 0x03;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("account {account} holds {balance}, cannot send {amount}")]
    InsufficientBalance { account: AccountId, balance: u64, amount: u64 },
    #[error("balance overflow on account {0}")]
    Overflow(AccountId),
    #[error("transaction {index} rejected: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<StateError>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub from: AccountId,
    pub to: AccountId,
    pub amount: u64,
}

/// Commitment to an [`AccountState`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StateCommitment(pub Digest);

impl fmt::Debug for StateCommitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateCommitment({})", &self.0.to_hex()[..16])
    }
}

impl fmt::Display for StateCommitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

pub fn account_leaf(account: AccountId, balance: u64) -> [u8; 16] {
    let mut leaf = [0u8; 16];
    leaf[..8].copy_from_slice(&account.to_be_bytes());
    leaf[8..].copy_from_slice(&balance.to_be_bytes());
    leaf
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccountState {
    balances: BTreeMap<AccountId, u64>,
}

impl AccountState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_balances(balances: impl IntoIterator<Item = (AccountId, u64)>) -> Self {
        AccountState { balances: balances.into_iter().collect() }
    }

    pub fn balance(&self, account: AccountId) -> Option<u64> {
        self.balances.get(&account).copied()
    }

    pub fn len(&self) -> usize {
        self.balances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balances.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (AccountId, u64)> + '_ {
        self.balances.iter().map(|(&a, &b)| (a, b))
    }

    pub fn total_supply(&self) -> u128 {
        self.balances.values().map(|&b| b as u128).sum()
    }

    /// Applies `tx` in place; on error the state is left untouched.
    pub fn apply(&mut self, tx: &Transaction) -> Result<(), StateError> {
        let from_balance = self.balance(tx.from).ok_or(StateError::UnknownAccount(tx.from))?;
        let to_balance = self.balance(tx.to).ok_or(StateError::UnknownAccount(tx.to))?;
        if from_balance < tx.amount {
            return Err(StateError::InsufficientBalance { account: tx.from, balance: from_balance, amount: tx.amount });
        }
        if tx.from == tx.to {
            return Ok(());
        }
        let credited = to_balance.checked_add(tx.amount).ok_or(StateError::Overflow(tx.to))?;
        self.balances.insert(tx.from, from_balance - tx.amount);
        self.balances.insert(tx.to, credited);
        Ok(())
    }

    fn index_of(&self, account: AccountId) -> Option<usize> {
        self.balances.contains_key(&account).then(|| self.balances.range(..account).count())
    }

    fn tree(&self) -> Option<MerkleTree> {
        let leaves: Vec<Digest> = self.iter().map(|(a, b)| leaf_hash(&account_leaf(a, b))).collect();
        MerkleTree::from_leaf_digests(leaves, STATE_DEGREE).ok()
    }

    fn account_proof(&self, tree: &MerkleTree, account: AccountId) -> Option<AccountProof> {
        let balance = self.balance(account)?;
        let index = self.index_of(account)? as u64;
        Some(AccountProof { account, balance, proof: tree.prove(index).expect("index within state") })
    }
}

/// δ: a single transfer.
pub fn apply_tx(st: &AccountState, tx: &Transaction) -> Result<AccountState, StateError> {
    let mut next = st.clone();
    next.apply(tx)?;
    Ok(next)
}

/// δ*: left fold of [`apply_tx`]; reports the index of the first rejected transaction.
pub fn apply_all(st0: &AccountState, txs: &[Transaction]) -> Result<AccountState, StateError> {
    let mut st = st0.clone();
    for (index, tx) in txs.iter().enumerate() {
        st.apply(tx).map_err(|e| StateError::AtIndex { index, source: Box::new(e) })?;
    }
    Ok(st)
}

fn bind(size: u64, root: Digest) -> StateCommitment {
    StateCommitment(hash_parts([&[STATE_PREFIX][..], &size.to_be_bytes(), root.as_bytes()]))
}

/// The empty state commits to the all-zero digest.
pub fn commit(st: &AccountState) -> StateCommitment {
    match st.tree() {
        Some(t) => bind(t.size(), t.root()),
        None => StateCommitment(Digest::ZERO),
    }
}

/// An account leaf together with its inclusion proof.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccountProof {
    pub account: AccountId,
    pub balance: u64,
    pub proof: MerkleProof,
}

impl AccountProof {
    pub fn leaf_digest(&self) -> Digest {
        leaf_hash(&account_leaf(self.account, self.balance))
    }

    pub fn verify(&self, commitment: StateCommitment) -> bool {
        self.proof
            .implied_root(self.leaf_digest(), STATE_DEGREE)
            .is_some_and(|root| bind(self.proof.size, root) == commitment)
    }
}

/// Auxiliary data π for [`succinct_apply`]: proofs for the touched accounts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuxProof {
    pub sender: AccountProof,
    /// `None` for a self-transfer.
    pub receiver: Option<AccountProof>,
}

pub fn gen_aux(st: &AccountState, tx: &Transaction) -> Result<AuxProof, StateError> {
    let tree = st.tree().ok_or(StateError::UnknownAccount(tx.from))?;
    let sender = st.account_proof(&tree, tx.from).ok_or(StateError::UnknownAccount(tx.from))?;
    let receiver = if tx.to == tx.from {
        None
    } else {
        Some(st.account_proof(&tree, tx.to).ok_or(StateError::UnknownAccount(tx.to))?)
    };
    Ok(AuxProof { sender, receiver })
}

/// ⟨δ⟩: computes the commitment of `δ(st, tx)` from `⟨st⟩` and π alone.
/// `None` plays the role of ⊥.
pub fn succinct_apply(commitment: StateCommitment, tx: &Transaction, aux: &AuxProof) -> Option<StateCommitment> {
    let sender = &aux.sender;
    if sender.account != tx.from || !sender.verify(commitment) || sender.balance < tx.amount {
        return None;
    }
    let Some(receiver) = &aux.receiver else {
        return (tx.to == tx.from).then_some(commitment);
    };
    if receiver.account != tx.to
        || tx.to == tx.from
        || receiver.proof.size != sender.proof.size
        || receiver.proof.index == sender.proof.index
        || !receiver.verify(commitment)
    {
        return None;
    }
    let credited = receiver.balance.checked_add(tx.amount)?;
    let new_sender = leaf_hash(&account_leaf(sender.account, sender.balance - tx.amount));
    let new_receiver = leaf_hash(&account_leaf(receiver.account, credited));
    updated_root(sender, new_sender, receiver, new_receiver).map(|root| bind(sender.proof.size, root))
}

/// Root after replacing two distinct leaves, each given with a valid proof
/// against the same root.
fn updated_root(a: &AccountProof, a_new: Digest, b: &AccountProof, b_new: Digest) -> Option<Digest> {
    let d = STATE_DEGREE as u64;
    let (mut ia, mut ib) = (a.proof.index, b.proof.index);
    let mut old_b = b.leaf_digest();
    let (mut new_a, mut new_b) = (a_new, b_new);
    let mut merged = false;

    let splice = |group: &[Digest], pos: usize, value: Digest| -> Vec<Digest> {
        let mut kids = Vec::with_capacity(group.len() + 1);
        kids.extend_from_slice(&group[..pos]);
        kids.push(value);
        kids.extend_from_slice(&group[pos..]);
        kids
    };

    for (ga, gb) in a.proof.siblings.iter().zip(&b.proof.siblings) {
        let pos_a = (ia % d) as usize;
        if merged {
            new_a = node_hash(&splice(ga, pos_a, new_a));
        } else if ia / d == ib / d {
            let pos_b = (ib % d) as usize;
            let mut kids = splice(ga, pos_a, new_a);
            // The sibling slot must hold exactly b's old subtree.
            if kids[pos_b] != old_b {
                return None;
            }
            kids[pos_b] = new_b;
            new_a = node_hash(&kids);
            merged = true;
        } else {
            new_a = node_hash(&splice(ga, pos_a, new_a));
            let pos_b = (ib % d) as usize;
            old_b = node_hash(&splice(gb, pos_b, old_b));
            new_b = node_hash(&splice(gb, pos_b, new_b));
        }
        ia /= d;
        ib /= d;
    }
    merged.then_some(new_a)
}

/// Balance query answer: inclusion, or exclusion via sorted neighbours.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BalanceProof {
    Present(AccountProof),
    Absent { size: u64, left: Option<AccountProof>, right: Option<AccountProof> },
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("balance proof does not verify against the commitment")]
pub struct BalanceProofRejected;

pub fn prove_balance(st: &AccountState, account: AccountId) -> BalanceProof {
    let Some(tree) = st.tree() else {
        return BalanceProof::Absent { size: 0, left: None, right: None };
    };
    if let Some(p) = st.account_proof(&tree, account) {
        return BalanceProof::Present(p);
    }
    let left = st.balances.range(..account).next_back().and_then(|(&a, _)| st.account_proof(&tree, a));
    let right = st.balances.range(account..).next().and_then(|(&a, _)| st.account_proof(&tree, a));
    BalanceProof::Absent { size: st.len() as u64, left, right }
}

impl BalanceProof {
    /// `Ok(Some(balance))` for a proven account, `Ok(None)` for proven absence.
    pub fn verify(&self, commitment: StateCommitment, account: AccountId) -> Result<Option<u64>, BalanceProofRejected> {
        match self {
            BalanceProof::Present(p) => {
                if p.account == account && p.verify(commitment) {
                    Ok(Some(p.balance))
                } else {
                    Err(BalanceProofRejected)
                }
            }
            BalanceProof::Absent { size, left, right } => {
                let size = *size;
                if size == 0 {
                    let empty = left.is_none() && right.is_none() && commitment.0 == Digest::ZERO;
                    return if empty { Ok(None) } else { Err(BalanceProofRejected) };
                }
                let ok_neighbour = |p: &AccountProof| p.proof.size == size && p.verify(commitment);
                let valid = match (left, right) {
                    (Some(l), Some(r)) => {
                        ok_neighbour(l)
                            && ok_neighbour(r)
                            && l.account < account
                            && account < r.account
                            && r.proof.index == l.proof.index + 1
                    }
                    (None, Some(r)) => ok_neighbour(r) && account < r.account && r.proof.index == 0,
                    (Some(l), None) => ok_neighbour(l) && l.account < account && l.proof.index == size - 1,
                    (None, None) => false,
                };
                if valid {
                    Ok(None)
                } else {
                    Err(BalanceProofRejected)
                }
            }
        }
    }
}
