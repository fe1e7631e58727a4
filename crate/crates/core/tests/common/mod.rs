#![allow(dead_code)]

use std::sync::Arc;

use popos::chainsim::{gen_trace, splice, ExecutionTrace, TraceParams};
use popos::clients::Bootstrap;
use popos::protocol::{ProverData, ProverSession};
use popos::transport::{LinkConfig, ProverLink, Responder, SimLink};

pub fn trace(n: u64, m: usize, seed: u64) -> ExecutionTrace {
    gen_trace(&TraceParams::with_majority(n, m, seed)).expect("valid parameters")
}

pub fn spliced(honest: &ExecutionTrace, alt: &ExecutionTrace, at: u64) -> ExecutionTrace {
    splice(honest, alt, at).expect("splice point in range")
}

pub fn data(t: ExecutionTrace) -> Arc<ProverData> {
    ProverData::new(Arc::new(t))
}

pub fn boot(honest: &ExecutionTrace) -> Bootstrap {
    Bootstrap { genesis: honest.genesis().clone(), horizon: honest.horizon() }
}

pub fn session(d: &Arc<ProverData>) -> Box<dyn Responder> {
    Box::new(ProverSession::new(d.clone()))
}

pub fn link(r: Box<dyn Responder>) -> Box<dyn ProverLink> {
    Box::new(SimLink::new(r, LinkConfig::default()))
}

pub fn links(provers: &[Arc<ProverData>]) -> Vec<Box<dyn ProverLink>> {
    provers.iter().map(|d| link(session(d))).collect()
}

use popos::protocol::{
    bisection_game, check_claim, peaks_first_disagreement, Claim, ClaimMode, Contender, GameOutcome, Message,
    VerifierContext,
};

fn fetch_claim(link: &mut dyn ProverLink, degree: usize) -> Claim {
    match link.exchange(&Message::ClaimRequest { mode: ClaimMode::Succinct, degree: degree as u32 }) {
        Ok(Message::ClaimResponse(c)) => c,
        other => panic!("no claim: {other:?}"),
    }
}

/// Claims from both sides, both checked, then one game on the first differing peak.
pub fn play(ctx: &VerifierContext, a: Box<dyn Responder>, b: Box<dyn Responder>) -> (usize, GameOutcome) {
    let (mut la, mut lb) = (link(a), link(b));
    let (ca, cb) = (fetch_claim(la.as_mut(), ctx.degree), fetch_claim(lb.as_mut(), ctx.degree));
    assert!(check_claim(&ca, ctx) && check_claim(&cb, ctx), "both claims must be valid");
    let tree = peaks_first_disagreement(ca.peaks.as_ref().unwrap(), cb.peaks.as_ref().unwrap())
        .unwrap()
        .expect("peaks differ");
    let outcome = bisection_game(
        ctx,
        Contender { link: la.as_mut(), claim: &ca },
        Contender { link: lb.as_mut(), claim: &cb },
        tree,
    );
    (tree, outcome)
}

pub fn ctx(honest: &ExecutionTrace, degree: usize) -> VerifierContext {
    VerifierContext::new(honest.horizon(), honest.genesis().clone(), degree)
}
