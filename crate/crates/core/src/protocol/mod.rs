//! The bootstrapping protocol: wire messages, prover sessions, the bisection
//! game and the tournament.

pub mod game;
pub mod session;
pub mod wire;

pub use game::{
    bisection_game, check_claim, check_claim_counted, peaks_first_disagreement, tournament,
    verify_outcome_state_security, ClaimCheck, Contender, Fault, GameOutcome, MatchRecord, PeakCountMismatch,
    TournamentError, TournamentResult, VerifierContext,
};
pub use session::{cross_tree_prev_leaf, AdversarialSession, Behavior, ProverData, ProverSession};
pub use wire::{BatchKind, Claim, ClaimMode, GameVerdict, LeafKind, Message};
