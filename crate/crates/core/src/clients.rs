//! The three bootstrapping clients and post-sync balance queries.
//!
//! * TLC downloads every committee with its handover proof from one prover
//!   and checks the whole chain, moving to the next prover on failure.
//! * OLC downloads committee hash sequences from every prover, and for each
//!   conflict checks a single handover at the first differing hash.
//! * SLC asks for mountain range peaks and settles conflicts with bisection games.

use std::fmt;
use std::str::FromStr;

use log::{debug, info, warn};
use thiserror::Error;

use crate::chainsim::trace::{check_commitment_signatures, check_handover};
use crate::chainsim::{AccountId, BalanceProofRejected, StateCommitment, SyncCommittee};
use crate::crypto::Digest;
use crate::protocol::{
    check_claim_counted, tournament, BatchKind, Claim, ClaimMode, GameVerdict, LeafKind, Message, TournamentError,
    VerifierContext,
};
use crate::transport::{LinkConfig, Meter, ProverLink, Responder, SimLink};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Flavor {
    Tlc,
    Olc,
    Slc,
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flavor::Tlc => "tlc",
            Flavor::Olc => "olc",
            Flavor::Slc => "slc",
        })
    }
}

impl FromStr for Flavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tlc" => Ok(Flavor::Tlc),
            "olc" => Ok(Flavor::Olc),
            "slc" => Ok(Flavor::Slc),
            other => Err(format!("unknown client flavor {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClientConfig {
    pub flavor: Flavor,
    /// Batch size `b` for TLC and OLC, tree degree `d` for SLC.
    pub param: u32,
}

impl ClientConfig {
    pub const DEFAULT_TLC_BATCH: u32 = 200;
    pub const DEFAULT_OLC_BATCH: u32 = 500;
    pub const DEFAULT_SLC_DEGREE: u32 = 100;

    pub fn new(flavor: Flavor) -> Self {
        let param = match flavor {
            Flavor::Tlc => Self::DEFAULT_TLC_BATCH,
            Flavor::Olc => Self::DEFAULT_OLC_BATCH,
            Flavor::Slc => Self::DEFAULT_SLC_DEGREE,
        };
        ClientConfig { flavor, param }
    }

    pub fn with_param(mut self, param: u32) -> Self {
        self.param = param;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncReport {
    pub flavor: Flavor,
    pub horizon: u64,
    pub committee_size: usize,
    pub param: u32,
    pub bytes_down: u64,
    pub bytes_up: u64,
    /// Request/response exchanges over all links.
    pub interaction_rounds: u64,
    pub signature_verifications: u64,
    /// Model time: latency plus serialization delay of every frame, in microseconds.
    pub simulated_elapsed_us: u64,
    pub commitment: StateCommitment,
    /// Index of the prover whose commitment was adopted.
    pub prover: usize,
    pub games: usize,
}

impl SyncReport {
    pub const CSV_HEADER: [&'static str; 10] =
        ["flavor", "N", "m", "param", "bytes_down", "bytes_up", "rounds", "sig_verifs", "elapsed_ms", "result_hex"];

    pub fn total_bytes(&self) -> u64 {
        self.bytes_down + self.bytes_up
    }

    pub fn csv_row(&self) -> [String; 10] {
        [
            self.flavor.to_string(),
            self.horizon.to_string(),
            self.committee_size.to_string(),
            self.param.to_string(),
            self.bytes_down.to_string(),
            self.bytes_up.to_string(),
            self.interaction_rounds.to_string(),
            self.signature_verifications.to_string(),
            format!("{}.{:03}", self.simulated_elapsed_us / 1000, self.simulated_elapsed_us % 1000),
            self.commitment.0.to_hex(),
        ]
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("no provers given")]
    NoProvers,
    #[error("horizon must be at least one epoch")]
    EmptyHorizon,
    #[error("invalid client parameter {0}")]
    BadParam(u32),
    #[error("every prover failed verification")]
    Exhausted,
    #[error(transparent)]
    Tournament(#[from] TournamentError),
}

/// Known to the client before syncing.
#[derive(Clone, Debug)]
pub struct Bootstrap {
    pub genesis: SyncCommittee,
    pub horizon: u64,
}

pub type Links<'a> = [Box<dyn ProverLink + 'a>];

pub fn sync(cfg: &ClientConfig, boot: &Bootstrap, provers: &mut Links<'_>) -> Result<SyncReport, SyncError> {
    match cfg.flavor {
        Flavor::Tlc => tlc_sync(cfg, boot, provers),
        Flavor::Olc => olc_sync(cfg, boot, provers),
        Flavor::Slc => slc_sync(cfg, boot, provers),
    }
}

/// Simulated links to the given endpoints, all with the same configuration.
pub fn simulated_links(endpoints: Vec<Box<dyn Responder>>, config: LinkConfig) -> Vec<Box<dyn ProverLink>> {
    endpoints.into_iter().map(|r| Box::new(SimLink::new(r, config)) as Box<dyn ProverLink>).collect()
}

struct Run {
    start: Vec<Meter>,
    verifications: u64,
}

impl Run {
    fn begin(cfg: &ClientConfig, boot: &Bootstrap, provers: &Links<'_>) -> Result<Self, SyncError> {
        if provers.is_empty() {
            return Err(SyncError::NoProvers);
        }
        if boot.horizon == 0 {
            return Err(SyncError::EmptyHorizon);
        }
        let min = if cfg.flavor == Flavor::Slc { 2 } else { 1 };
        if cfg.param < min {
            return Err(SyncError::BadParam(cfg.param));
        }
        Ok(Run { start: provers.iter().map(|p| p.meter()).collect(), verifications: 0 })
    }

    fn finish(
        self,
        cfg: &ClientConfig,
        boot: &Bootstrap,
        provers: &Links<'_>,
        commitment: StateCommitment,
        prover: usize,
        games: usize,
    ) -> SyncReport {
        let mut total = Meter::default();
        for (p, s) in provers.iter().zip(&self.start) {
            let m = p.meter();
            total.add(&Meter {
                bytes_up: m.bytes_up - s.bytes_up,
                bytes_down: m.bytes_down - s.bytes_down,
                frames_up: m.frames_up - s.frames_up,
                frames_down: m.frames_down - s.frames_down,
                exchanges: m.exchanges - s.exchanges,
                clock_us: m.clock_us - s.clock_us,
            });
        }
        SyncReport {
            flavor: cfg.flavor,
            horizon: boot.horizon,
            committee_size: boot.genesis.len(),
            param: cfg.param,
            bytes_down: total.bytes_down,
            bytes_up: total.bytes_up,
            interaction_rounds: total.exchanges,
            signature_verifications: self.verifications,
            simulated_elapsed_us: total.clock_us,
            commitment,
            prover,
            games,
        }
    }
}

fn request_claim(link: &mut dyn ProverLink, mode: ClaimMode, degree: u32) -> Option<Claim> {
    match link.exchange(&Message::ClaimRequest { mode, degree }) {
        Ok(Message::ClaimResponse(c)) => Some(c),
        _ => None,
    }
}

pub fn tlc_sync(cfg: &ClientConfig, boot: &Bootstrap, provers: &mut Links<'_>) -> Result<SyncReport, SyncError> {
    let mut run = Run::begin(cfg, boot, provers)?;
    let ctx = VerifierContext::new(boot.horizon, boot.genesis.clone(), 2);
    for (i, link) in provers.iter_mut().enumerate() {
        match tlc_chain(cfg, &ctx, link.as_mut(), &mut run.verifications) {
            Some(commitment) => {
                info!("tlc: prover {i} verified over {} epochs", boot.horizon);
                return Ok(run.finish(cfg, boot, provers, commitment, i, 0));
            }
            None => warn!("tlc: prover {i} failed verification, trying the next one"),
        }
    }
    Err(SyncError::Exhausted)
}

fn tlc_chain(
    cfg: &ClientConfig,
    ctx: &VerifierContext,
    link: &mut dyn ProverLink,
    verifs: &mut u64,
) -> Option<StateCommitment> {
    let claim = request_claim(link, ClaimMode::Linear, 0)?;
    let n = ctx.horizon;
    let mut current = ctx.genesis.clone();
    let mut j = 1;
    while j < n {
        let count = (cfg.param as u64).min(n - j) as u32;
        let Ok(Message::CommitteeBatch(entries)) =
            link.exchange(&Message::BatchRequest { kind: BatchKind::Committees, start: j, count })
        else {
            return None;
        };
        if entries.len() != count as usize {
            return None;
        }
        for (next, proof) in entries {
            let check = check_handover(&current, j, &next, &proof);
            *verifs += check.verifications;
            if !check.valid || next.len() != ctx.committee_size() {
                debug!("tlc: handover into epoch {j} rejected");
                return None;
            }
            current = next;
            j += 1;
        }
    }
    if claim.latest != current {
        return None;
    }
    let check = check_commitment_signatures(&current, &claim.commitment, &claim.signatures);
    *verifs += check.verifications;
    check.valid.then_some(claim.commitment)
}

/// Downloads and sanity-checks one prover's committee hash sequence.
fn olc_hashes(cfg: &ClientConfig, boot: &Bootstrap, link: &mut dyn ProverLink, claim: &Claim) -> Option<Vec<Digest>> {
    let n = boot.horizon;
    let mut hashes = Vec::with_capacity(n as usize);
    while (hashes.len() as u64) < n {
        let start = hashes.len() as u64;
        let count = (cfg.param as u64).min(n - start) as u32;
        let Ok(Message::HashBatch { start: s, digests }) =
            link.exchange(&Message::BatchRequest { kind: BatchKind::Hashes, start, count })
        else {
            return None;
        };
        if s != start || digests.len() != count as usize {
            return None;
        }
        hashes.extend(digests);
    }
    let ends_ok = hashes[0] == boot.genesis.leaf_digest() && hashes[n as usize - 1] == claim.latest.leaf_digest();
    ends_ok.then_some(hashes)
}

pub fn olc_sync(cfg: &ClientConfig, boot: &Bootstrap, provers: &mut Links<'_>) -> Result<SyncReport, SyncError> {
    let mut run = Run::begin(cfg, boot, provers)?;
    let ctx = VerifierContext::new(boot.horizon, boot.genesis.clone(), 2);
    let mut claims: Vec<Option<Claim>> = Vec::with_capacity(provers.len());
    for link in provers.iter_mut() {
        let claim = request_claim(link.as_mut(), ClaimMode::Linear, 0).filter(|c| {
            let check = check_claim_counted(c, &ctx, ClaimMode::Linear);
            run.verifications += check.verifications;
            check.valid
        });
        claims.push(claim);
    }
    let mut hashes: Vec<Option<Vec<Digest>>> = Vec::with_capacity(provers.len());
    for (link, claim) in provers.iter_mut().zip(&claims) {
        hashes.push(claim.as_ref().and_then(|c| olc_hashes(cfg, boot, link.as_mut(), c)));
    }

    let mut games = 0;
    loop {
        let Some(front) = hashes.iter().position(Option::is_some) else {
            return Err(SyncError::Tournament(TournamentError::NoSurvivor));
        };
        let commitment = claims[front].as_ref().expect("alive").commitment;
        let challenger = (front + 1..provers.len())
            .find(|&i| hashes[i].is_some() && claims[i].as_ref().expect("alive").commitment != commitment);
        let Some(ch) = challenger else {
            return Ok(run.finish(cfg, boot, provers, commitment, front, games));
        };
        let (ha, hb) = (hashes[front].as_ref().expect("alive"), hashes[ch].as_ref().expect("alive"));
        let verdict = match ha.iter().zip(hb).position(|(x, y)| x != y) {
            None => GameVerdict::BothLose,
            Some(j) => {
                games += 1;
                let expected = [[ha[j - 1], ha[j]], [hb[j - 1], hb[j]]];
                let (lo, hi) = provers.split_at_mut(ch);
                let pair = [shorten(lo[front].as_mut()), shorten(hi[0].as_mut())];
                olc_conflict(&ctx, pair, j as u64, expected, &mut run.verifications)
            }
        };
        debug!("olc: prover {front} vs {ch}: {verdict:?}");
        if verdict != GameVerdict::WinA {
            hashes[front] = None;
        }
        if verdict != GameVerdict::WinB {
            hashes[ch] = None;
        }
    }
}

fn shorten<'s>(link: &'s mut (dyn ProverLink + '_)) -> &'s mut (dyn ProverLink + 's) {
    link
}

/// Reveal-and-handover check at the first differing hash `j >= 1`.
/// `expected[s] = [h_{j-1}, h_j]` as claimed by side `s`.
fn olc_conflict(
    ctx: &VerifierContext,
    pair: [&mut dyn ProverLink; 2],
    j: u64,
    expected: [[Digest; 2]; 2],
    verifs: &mut u64,
) -> GameVerdict {
    let settle = |ok: [bool; 2]| match ok {
        [true, true] => None,
        [true, false] => Some(GameVerdict::WinA),
        [false, true] => Some(GameVerdict::WinB),
        [false, false] => Some(GameVerdict::BothLose),
    };
    let mut committees: [[Option<SyncCommittee>; 2]; 2] = Default::default();
    for (slot, index) in [(1usize, j), (0, j - 1)] {
        let mut ok = [false; 2];
        for s in 0..2 {
            if let Ok(Message::LeafReveal(c)) = pair[s].exchange(&Message::LeafRequest { kind: LeafKind::Leaf, index })
            {
                ok[s] = c.epoch == index && c.len() == ctx.committee_size() && c.leaf_digest() == expected[s][slot];
                committees[s][slot] = Some(c);
            }
        }
        if let Some(v) = settle(ok) {
            return v;
        }
    }
    let mut ok = [false; 2];
    for s in 0..2 {
        if let Ok(Message::HandoverReveal(h)) =
            pair[s].exchange(&Message::LeafRequest { kind: LeafKind::Handover, index: j })
        {
            let [Some(prev), Some(next)] = &committees[s] else { unreachable!("revealed above") };
            let check = check_handover(prev, j, next, &h);
            *verifs += check.verifications;
            ok[s] = check.valid;
        }
    }
    settle(ok).unwrap_or(GameVerdict::BothLose)
}

pub fn slc_sync(cfg: &ClientConfig, boot: &Bootstrap, provers: &mut Links<'_>) -> Result<SyncReport, SyncError> {
    let mut run = Run::begin(cfg, boot, provers)?;
    let ctx = VerifierContext::new(boot.horizon, boot.genesis.clone(), cfg.param as usize);
    let mut claims = Vec::with_capacity(provers.len());
    for link in provers.iter_mut() {
        let claim = request_claim(link.as_mut(), ClaimMode::Succinct, cfg.param).filter(|c| {
            let check = check_claim_counted(c, &ctx, ClaimMode::Succinct);
            run.verifications += check.verifications;
            check.valid
        });
        claims.push(claim);
    }
    let result = tournament(&ctx, provers, &claims)?;
    run.verifications += result.signature_verifications;
    let games = result.games();
    Ok(run.finish(cfg, boot, provers, result.commitment, result.winner, games))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BalanceError {
    #[error("prover did not answer the balance query")]
    NoAnswer,
    #[error(transparent)]
    Rejected(#[from] BalanceProofRejected),
}

/// Balance of `account` under an accepted commitment. `Ok(None)` is a
/// verified absence.
pub fn query_balance(
    commitment: StateCommitment,
    account: AccountId,
    prover: &mut dyn ProverLink,
) -> Result<Option<u64>, BalanceError> {
    match prover.exchange(&Message::BalanceRequest { account }) {
        Ok(Message::BalanceResponse(proof)) => Ok(proof.verify(commitment, account)?),
        _ => Err(BalanceError::NoAnswer),
    }
}
