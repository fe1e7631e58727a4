//! Simulated proof-of-stake executions: account state, committees, traces.

pub mod file;
pub mod state;
pub mod trace;

pub use file::{read_trace, read_trace_file, write_trace, write_trace_file, TraceFileError};
pub use state::{
    apply_all, apply_tx, commit, gen_aux, prove_balance, succinct_apply, AccountId, AccountProof, AccountState,
    AuxProof, BalanceProof, BalanceProofRejected, StateCommitment, StateError, Transaction,
};
pub use trace::{
    check_signatures, commitment_message, equivocating_committee_trace, first_disagreement, gen_trace,
    handover_message, majority, splice, verify_handover, ChainError, EpochRecord, ExecutionTrace, HandoverProof,
    Ledger, SignatureCheck, SignatureList, SyncCommittee, TraceDefect, TraceOrigin, TraceParams,
};
