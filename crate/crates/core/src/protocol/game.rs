//! Verifier side: claim checks, the bisection game and the tournament.

use log::{debug, info};
use thiserror::Error;

use crate::chainsim::trace::{check_commitment_signatures, check_handover};
use crate::chainsim::{ExecutionTrace, StateCommitment, SyncCommittee};
use crate::crypto::Digest;
use crate::merkle::{mmr_sizes, node_hash, padding_digest, tree_depth};
use crate::transport::ProverLink;

use super::wire::{Claim, ClaimMode, GameVerdict, LeafKind, Message};

/// What the verifier knows before talking to anyone.
#[derive(Clone, Debug)]
pub struct VerifierContext {
    /// Number of epochs so far, from the local clock.
    pub horizon: u64,
    pub genesis: SyncCommittee,
    pub degree: usize,
}

impl VerifierContext {
    pub fn new(horizon: u64, genesis: SyncCommittee, degree: usize) -> Self {
        VerifierContext { horizon, genesis, degree }
    }

    pub fn committee_size(&self) -> usize {
        self.genesis.len()
    }

    pub fn tree_sizes(&self) -> Vec<u64> {
        mmr_sizes(self.horizon)
    }

    /// Open rounds needed to reach a leaf of tree `tree`.
    pub fn step_budget(&self, tree: usize) -> usize {
        self.tree_sizes().get(tree).map_or(0, |&s| tree_depth(s, self.degree))
    }

    fn well_shaped(&self, s: &SyncCommittee, epoch: u64) -> bool {
        s.epoch == epoch && s.len() == self.committee_size()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClaimCheck {
    pub valid: bool,
    pub verifications: u64,
}

/// Checks a claim in the given mode: latest committee shape, for succinct
/// claims the peak count and the latest committee's proof against the last
/// peak, then a strict majority of that committee's signatures on the commitment.
pub fn check_claim_counted(claim: &Claim, ctx: &VerifierContext, mode: ClaimMode) -> ClaimCheck {
    let reject = ClaimCheck { valid: false, verifications: 0 };
    if ctx.horizon == 0 || !ctx.well_shaped(&claim.latest, ctx.horizon - 1) {
        return reject;
    }
    if mode == ClaimMode::Succinct {
        let (Some(peaks), Some(proof)) = (&claim.peaks, &claim.latest_proof) else {
            return reject;
        };
        let sizes = ctx.tree_sizes();
        if peaks.len() != sizes.len() {
            return reject;
        }
        let last = *sizes.last().expect("horizon > 0");
        let peak = *peaks.last().expect("same length");
        if !proof.verify(peak, last, last - 1, &claim.latest.leaf_bytes(), ctx.degree) {
            return reject;
        }
    }
    let sigs = check_commitment_signatures(&claim.latest, &claim.commitment, &claim.signatures);
    ClaimCheck { valid: sigs.valid, verifications: sigs.verifications }
}

pub fn check_claim(claim: &Claim, ctx: &VerifierContext) -> bool {
    check_claim_counted(claim, ctx, ClaimMode::Succinct).valid
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("peak lists differ in length ({0} vs {1})")]
pub struct PeakCountMismatch(pub usize, pub usize);

/// Index of the first differing peak, `None` if the lists are identical.
pub fn peaks_first_disagreement(a: &[Digest], b: &[Digest]) -> Result<Option<usize>, PeakCountMismatch> {
    if a.len() != b.len() {
        return Err(PeakCountMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).position(|(x, y)| x != y))
}

/// Why a prover lost.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// No answer, closed connection or undecodable frame.
    Timeout,
    /// Answer of the wrong kind or shape.
    Malformed,
    /// Children do not hash to the node they open.
    ChildrenMismatch,
    /// Non-canonical digest where only padding can be.
    Padding,
    /// Revealed committee does not match the committed leaf.
    LeafMismatch,
    Genesis,
    PrevLeafProof,
    Handover,
    /// Tried to continue past the leaf level.
    StepBudget,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GameOutcome {
    pub verdict: GameVerdict,
    /// Global leaf index where the game reached its leaf phase.
    pub disagreement: Option<u64>,
    pub open_rounds: usize,
    pub faults: [Option<Fault>; 2],
    /// Previous leaves `S^{j-1}` as revealed and proven by each side.
    pub prev_leaves: [Option<SyncCommittee>; 2],
    pub signature_verifications: u64,
}

/// One side of a game: the link and the claim it made.
pub struct Contender<'a> {
    pub link: &'a mut dyn ProverLink,
    pub claim: &'a Claim,
}

struct Game<'a, 'b> {
    ctx: &'a VerifierContext,
    sides: [Contender<'b>; 2],
    outcome: GameOutcome,
}

enum Step {
    Continue,
    Over,
}

impl Game<'_, '_> {
    fn ask(&mut self, request: &Message) -> [Option<Message>; 2] {
        let a = self.sides[0].link.exchange(request).ok();
        let b = self.sides[1].link.exchange(request).ok();
        [a, b]
    }

    /// Settles the game if anyone faulted in this step.
    fn resolve(&mut self, faults: [Option<Fault>; 2]) -> Step {
        self.outcome.faults = faults;
        self.outcome.verdict = match faults {
            [None, None] => return Step::Continue,
            [Some(_), Some(_)] => GameVerdict::BothLose,
            [Some(_), None] => GameVerdict::WinB,
            [None, Some(_)] => GameVerdict::WinA,
        };
        Step::Over
    }

    fn peak(&self, side: usize, tree: usize) -> Digest {
        self.sides[side].claim.peaks.as_ref().expect("checked claim")[tree]
    }

    fn run(&mut self, tree: usize) -> Step {
        let d = self.ctx.degree;
        let sizes = self.ctx.tree_sizes();
        let size = sizes[tree];
        let depth = tree_depth(size, d);
        let offset: u64 = sizes[..tree].iter().sum();

        let mut node = [self.peak(0, tree), self.peak(1, tree)];
        let mut path: Vec<u32> = Vec::with_capacity(depth);
        let mut local: u64 = 0;
        for level in 0..depth {
            let replies = self.ask(&Message::Open { tree: tree as u32, path: path.clone() });
            self.outcome.open_rounds += 1;
            let children: [Option<Vec<Digest>>; 2] = [0, 1].map(|s| match &replies[s] {
                Some(Message::Children(ds)) if ds.len() == d && node_hash(ds) == node[s] => Some(ds.clone()),
                _ => None,
            });
            let faults = [0, 1].map(|s| match (&replies[s], &children[s]) {
                (None, _) => Some(Fault::Timeout),
                (Some(Message::Children(_)), None) => Some(Fault::ChildrenMismatch),
                (Some(_), None) => Some(Fault::Malformed),
                _ => None,
            });
            if let Step::Over = self.resolve(faults) {
                return Step::Over;
            }
            let [Some(ca), Some(cb)] = children else { unreachable!("both validated") };
            let Some(i) = ca.iter().zip(&cb).position(|(x, y)| x != y) else {
                // Both children lists hash to the parents, which differ.
                return self.resolve([Some(Fault::ChildrenMismatch); 2]);
            };
            let height = depth - level - 1;
            let child = local * d as u64 + i as u64;
            let first_leaf = child * (d as u64).pow(height as u32);
            if first_leaf >= size {
                let canonical = padding_digest(d, height);
                let faults = [&ca, &cb].map(|c| (c[i] != canonical).then_some(Fault::Padding));
                return self.resolve(faults);
            }
            path.push(i as u32);
            local = child;
            node = [ca[i], cb[i]];
        }
        self.leaf_phase(tree, offset, local, node)
    }

    fn leaf_phase(&mut self, tree: usize, offset: u64, local: u64, node: [Digest; 2]) -> Step {
        let j = offset + local;
        self.outcome.disagreement = Some(j);
        let replies = self.ask(&Message::LeafRequest { kind: LeafKind::Leaf, index: j });
        let mut leaves: [Option<SyncCommittee>; 2] = [None, None];
        let mut faults = [None, None];
        for s in 0..2 {
            faults[s] = match &replies[s] {
                None => Some(Fault::Timeout),
                Some(Message::LeafReveal(c)) if self.ctx.well_shaped(c, j) && c.leaf_digest() == node[s] => {
                    leaves[s] = Some(c.clone());
                    None
                }
                Some(Message::LeafReveal(_)) => Some(Fault::LeafMismatch),
                Some(Message::Children(_)) => Some(Fault::StepBudget),
                Some(_) => Some(Fault::Malformed),
            };
        }
        if let Step::Over = self.resolve(faults) {
            return Step::Over;
        }
        let [Some(sa), Some(sb)] = leaves else { unreachable!("both revealed") };

        if j == 0 {
            let faults = [&sa, &sb].map(|c| (*c != self.ctx.genesis).then_some(Fault::Genesis));
            if let Step::Over = self.resolve(faults) {
                return Step::Over;
            }
            return self.resolve([Some(Fault::Genesis); 2]);
        }

        let sizes = self.ctx.tree_sizes();
        let replies = self.ask(&Message::LeafRequest { kind: LeafKind::WithProof, index: j - 1 });
        let mut prev: [Option<SyncCommittee>; 2] = [None, None];
        for s in 0..2 {
            // Inside the same tree the proof goes to this side's own peak; at
            // local leaf 0 it goes to the previous, agreed, peak.
            let (root, size, index) = if local > 0 {
                (self.peak(s, tree), sizes[tree], local - 1)
            } else {
                (self.peak(s, tree - 1), sizes[tree - 1], sizes[tree - 1] - 1)
            };
            faults[s] = match &replies[s] {
                None => Some(Fault::Timeout),
                Some(Message::PrevLeafReveal(c, proof))
                    if self.ctx.well_shaped(c, j - 1)
                        && proof.verify(root, size, index, &c.leaf_bytes(), self.ctx.degree) =>
                {
                    prev[s] = Some(c.clone());
                    None
                }
                Some(Message::PrevLeafReveal(..)) => Some(Fault::PrevLeafProof),
                Some(_) => Some(Fault::Malformed),
            };
        }
        self.outcome.prev_leaves = prev.clone();
        if let Step::Over = self.resolve(faults) {
            return Step::Over;
        }
        let next = [sa, sb];
        self.handover_phase(j, prev.map(|p| p.expect("both proven")), next)
    }

    fn handover_phase(&mut self, j: u64, prev: [SyncCommittee; 2], next: [SyncCommittee; 2]) -> Step {
        let replies = self.ask(&Message::LeafRequest { kind: LeafKind::Handover, index: j });
        let mut faults = [None, None];
        for s in 0..2 {
            faults[s] = match &replies[s] {
                None => Some(Fault::Timeout),
                Some(Message::HandoverReveal(h)) => {
                    let check = check_handover(&prev[s], j, &next[s], h);
                    self.outcome.signature_verifications += check.verifications;
                    (!check.valid).then_some(Fault::Handover)
                }
                Some(_) => Some(Fault::Malformed),
            };
        }
        if let Step::Over = self.resolve(faults) {
            return Step::Over;
        }
        // Two valid, conflicting handovers: S^{j-1} equivocated.
        self.outcome.faults = [None, None];
        self.outcome.verdict = GameVerdict::BothLose;
        Step::Over
    }
}

/// Plays one bisection game on tree `tree`, where the two claims' peaks differ.
/// Both claims must have passed [`check_claim`]. The verdict is sent to both
/// sides afterwards.
pub fn bisection_game(ctx: &VerifierContext, a: Contender<'_>, b: Contender<'_>, tree: usize) -> GameOutcome {
    let (la, lb): (&mut dyn ProverLink, &mut dyn ProverLink) = (a.link, b.link);
    let mut game = Game {
        ctx,
        sides: [Contender { link: la, claim: a.claim }, Contender { link: lb, claim: b.claim }],
        outcome: GameOutcome {
            verdict: GameVerdict::BothLose,
            disagreement: None,
            open_rounds: 0,
            faults: [None, None],
            prev_leaves: [None, None],
            signature_verifications: 0,
        },
    };
    game.run(tree);
    let verdict = Message::Verdict { verdict: game.outcome.verdict, disagreement: game.outcome.disagreement };
    for side in game.sides.iter_mut() {
        let _ = side.link.send(&verdict);
    }
    debug!(
        "game on tree {tree}: {:?} at {:?} after {} opens, faults {:?}",
        game.outcome.verdict, game.outcome.disagreement, game.outcome.open_rounds, game.outcome.faults
    );
    game.outcome
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchRecord {
    pub a: usize,
    pub b: usize,
    /// `None` when the claims had identical peaks, so no game was possible.
    pub outcome: Option<GameOutcome>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TournamentResult {
    pub commitment: StateCommitment,
    pub winner: usize,
    pub survivors: Vec<usize>,
    pub matches: Vec<MatchRecord>,
    pub signature_verifications: u64,
}

impl TournamentResult {
    pub fn games(&self) -> usize {
        self.matches.iter().filter(|m| m.outcome.is_some()).count()
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum TournamentError {
    #[error("no prover survived; the verifier is eclipsed")]
    NoSurvivor,
}

fn pair_mut<T>(xs: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert!(i < j);
    let (lo, hi) = xs.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}

/// Runs bisection games until every surviving prover backs the same
/// commitment. `claims[i]` is `None` for provers already eliminated;
/// the others must have passed [`check_claim`].
pub fn tournament(
    ctx: &VerifierContext,
    links: &mut [Box<dyn ProverLink + '_>],
    claims: &[Option<Claim>],
) -> Result<TournamentResult, TournamentError> {
    assert_eq!(links.len(), claims.len());
    let mut alive: Vec<bool> = claims.iter().map(Option::is_some).collect();
    let mut matches = Vec::new();
    let mut verifications = 0;
    loop {
        let Some(front) = alive.iter().position(|&x| x) else {
            return Err(TournamentError::NoSurvivor);
        };
        let front_claim = claims[front].as_ref().expect("alive");
        let challenger = (front + 1..claims.len())
            .find(|&i| alive[i] && claims[i].as_ref().expect("alive").commitment != front_claim.commitment);
        let Some(ch) = challenger else {
            let survivors: Vec<usize> = (0..alive.len()).filter(|&i| alive[i]).collect();
            info!("tournament settled after {} matches, {} survivors", matches.len(), survivors.len());
            return Ok(TournamentResult {
                commitment: front_claim.commitment,
                winner: front,
                survivors,
                matches,
                signature_verifications: verifications,
            });
        };
        let ch_claim = claims[ch].as_ref().expect("alive");
        let peaks = |c: &Claim| c.peaks.clone().unwrap_or_default();
        let first = peaks_first_disagreement(&peaks(front_claim), &peaks(ch_claim)).ok().flatten();
        let Some(tree) = first else {
            // Same committees, different commitments, both signed by the latest committee.
            alive[front] = false;
            alive[ch] = false;
            matches.push(MatchRecord { a: front, b: ch, outcome: None });
            continue;
        };
        let (la, lb) = pair_mut(links, front, ch);
        let outcome = bisection_game(
            ctx,
            Contender { link: la.as_mut(), claim: front_claim },
            Contender { link: lb.as_mut(), claim: ch_claim },
            tree,
        );
        verifications += outcome.signature_verifications;
        match outcome.verdict {
            GameVerdict::WinA => alive[ch] = false,
            GameVerdict::WinB => alive[front] = false,
            GameVerdict::BothLose => {
                alive[front] = false;
                alive[ch] = false;
            }
        }
        matches.push(MatchRecord { a: front, b: ch, outcome: Some(outcome) });
    }
}

/// Safety check against an honest oracle: `result` must commit to the state
/// reached by the honest ledger at the start of the latest epoch.
pub fn verify_outcome_state_security(result: StateCommitment, honest: &ExecutionTrace) -> bool {
    honest.ledger().is_some_and(|l| crate::chainsim::commit(&l.state_at(honest.horizon() - 1)) == result)
}
