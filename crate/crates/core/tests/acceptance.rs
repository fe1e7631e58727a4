//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed. Criterion
//! numbers can be passed as arguments to run a subset. A FAIL line only turns
//! into a nonzero exit status when `POPOS_ACCEPTANCE_STRICT` is set.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::*;
use popos::chainsim::{
    apply_all, apply_tx, commit, first_disagreement, gen_aux, succinct_apply, AccountState, ExecutionTrace, Transaction,
};
use popos::clients::{sync, ClientConfig, Flavor, SyncReport};
use popos::crypto::hash;
use popos::merkle::{leaf_hash, mmr_sizes, tree_depth, MerkleTree, MountainRange};
use popos::protocol::{
    verify_outcome_state_security, AdversarialSession, Behavior, ClaimMode, Fault, GameVerdict, Message, ProverData,
    ProverSession,
};
use popos::transport::{LinkConfig, ProverLink, Server, SimLink, TcpLink, Transcript};

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (u32, &'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn main() -> ExitCode {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 8] = [
        (1, "pinpointing oracle equivalence", pinpointing),
        (2, "tournament completeness and soundness", tournaments),
        (3, "succinctness scaling", scaling),
        (4, "headline communication ratio", headline),
        (5, "data-structure laws", data_structures),
        (6, "state-transition commutation", commutation),
        (7, "step budget", step_budget),
        (8, "transport equivalence", transport_equivalence),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} [{status}] {name}: {} ({:.1}s)", v.detail, t.elapsed().as_secs_f64());
        failed += usize::from(!v.pass);
    }
    if failed == 0 {
        return ExitCode::SUCCESS;
    }
    println!("{failed} criteria failed");
    if std::env::var_os("POPOS_ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn pinpointing() -> Verdict {
    let start = Instant::now();
    let (mut games, mut matched) = (0u64, 0u64);
    let mut first_miss = None;
    for e in 1..=8u32 {
        let n = 1u64 << e;
        let honest = trace(n, 8, 100 + e as u64);
        let alt = trace(n, 8, 200 + e as u64);
        let ctx = ctx(&honest, 2);
        let hd = data(honest.clone());
        for j in 1..n {
            let adv = data(spliced(&honest, &alt, j));
            let oracle = first_disagreement(&honest, adv.trace());
            let honest_first = j % 2 == 0;
            let (a, b) = if honest_first { (session(&hd), session(&adv)) } else { (session(&adv), session(&hd)) };
            let (_, out) = play(&ctx, a, b);
            let want = if honest_first { GameVerdict::WinA } else { GameVerdict::WinB };
            let honest_prev = honest.committee(j - 1).cloned();
            let ok = out.disagreement == oracle
                && oracle == Some(j)
                && out.verdict == want
                && out.prev_leaves.iter().all(|p| *p == honest_prev);
            games += 1;
            matched += u64::from(ok);
            if !ok && first_miss.is_none() {
                first_miss = Some((n, j));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        matched == games && secs < 120.0,
        format!("{matched}/{games} games matched the linear-scan oracle, N=2..256, m=8; first miss {first_miss:?}"),
    )
}

fn tournaments() -> Verdict {
    struct Pool {
        honest: ExecutionTrace,
        honest_data: Arc<ProverData>,
        alts: Vec<ExecutionTrace>,
    }
    let pools: Vec<Pool> = [16u64, 37, 64, 100]
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let honest = trace(n, 8, 1_000 + i as u64);
            let alts = (0..7).map(|a| trace(n, 8, 2_000 + 10 * i as u64 + a)).collect();
            Pool { honest_data: data(honest.clone()), honest, alts }
        })
        .collect();

    let (mut ok_runs, mut max_excess) = (0, i64::MIN);
    for seed in 0..500u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let pool = &pools[rng.gen_range(0..pools.len())];
        let n = pool.honest.horizon();
        let k = 1 + (seed % 7) as usize;
        let mut provers: Vec<Arc<ProverData>> = (0..k)
            .map(|_| {
                let alt = pool.alts.choose(&mut rng).unwrap();
                data(spliced(&pool.honest, alt, rng.gen_range(1..n)))
            })
            .collect();
        provers.insert(rng.gen_range(0..=k), pool.honest_data.clone());
        let d = [2u32, 3, 4][rng.gen_range(0..3)];
        let cfg = ClientConfig::new(Flavor::Slc).with_param(d);
        let mut l = links(&provers);
        let Ok(r) = sync(&cfg, &boot(&pool.honest), &mut l) else {
            continue;
        };
        max_excess = max_excess.max(r.games as i64 - k as i64);
        let ok = r.commitment == pool.honest.latest_commitment()
            && r.games <= k
            && verify_outcome_state_security(r.commitment, &pool.honest);
        ok_runs += usize::from(ok);
    }
    verdict(
        ok_runs == 500,
        format!("{ok_runs}/500 tournaments (1 honest + k in 1..7 splicers) returned the honest commitment within k games; max games - k = {max_excess}"),
    )
}

/// Bytes of every prover's claim frame, the part excluded from the growth ratio.
fn claim_bytes(provers: &[Arc<ProverData>], mode: ClaimMode, degree: u32) -> u64 {
    provers
        .iter()
        .map(|d| {
            let reply = ProverSession::new(d.clone()).answer(&Message::ClaimRequest { mode, degree });
            reply.expect("claim").frame_len() as u64
        })
        .sum()
}

fn contested_run(n: u64, m: usize, flavor: Flavor, param: u32) -> (SyncReport, u64) {
    let honest = trace(n, m, 31);
    let alt = trace(n, m, 32);
    let provers = vec![data(honest.clone()), data(spliced(&honest, &alt, n / 2 + 1))];
    let mode = if flavor == Flavor::Slc { ClaimMode::Succinct } else { ClaimMode::Linear };
    let overhead = claim_bytes(&provers, mode, param);
    let r = sync(&ClientConfig::new(flavor).with_param(param), &boot(&honest), &mut links(&provers)).unwrap();
    assert_eq!(r.commitment, honest.latest_commitment());
    (r, overhead)
}

fn scaling() -> Verdict {
    let horizons: Vec<u64> = (7..=14).map(|e| 1u64 << e).collect();
    let net = |flavor, param| -> Vec<u64> {
        horizons
            .iter()
            .map(|&n| {
                let (r, overhead) = contested_run(n, 32, flavor, param);
                r.bytes_down - overhead
            })
            .collect()
    };
    let ratios = |v: Vec<u64>| -> Vec<f64> { v.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect() };
    let slc = ratios(net(Flavor::Slc, 2));
    let olc = ratios(net(Flavor::Olc, ClientConfig::DEFAULT_OLC_BATCH));
    let slc_ok = slc.iter().all(|&r| r <= 1.2);
    let olc_ok = olc.iter().all(|&r| (1.8..=2.2).contains(&r));
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ");
    verdict(
        slc_ok && olc_ok,
        format!(
            "1 honest + 1 splicer, d=2, m=32, N=2^7..2^14, bytes_down net of claims per doubling: slc [{}] (<= 1.2: {}), olc [{}] (2.0 +- 10%: {})",
            fmt(&slc),
            if slc_ok { "ok" } else { "no" },
            fmt(&olc),
            if olc_ok { "ok" } else { "no" },
        ),
    )
}

fn headline() -> Verdict {
    const N: u64 = 3246;
    const M: usize = 512;
    let honest = trace(N, M, 41);
    let alt = trace(N, M, 42);
    let mut rng = ChaCha20Rng::seed_from_u64(43);
    let mut provers = vec![data(honest.clone())];
    for _ in 0..7 {
        provers.push(data(spliced(&honest, &alt, rng.gen_range(1..N))));
    }
    let b = boot(&honest);
    let run = |flavor: Flavor, param: u32| {
        let r = sync(&ClientConfig::new(flavor).with_param(param), &b, &mut links(&provers)).unwrap();
        assert_eq!(r.commitment, honest.latest_commitment());
        r
    };
    let tlc = run(Flavor::Tlc, ClientConfig::DEFAULT_TLC_BATCH);
    let olc = run(Flavor::Olc, ClientConfig::DEFAULT_OLC_BATCH);
    let slc2 = run(Flavor::Slc, 2);
    let slc100 = run(Flavor::Slc, ClientConfig::DEFAULT_SLC_DEGREE);
    let best = slc2.total_bytes().min(slc100.total_bytes());
    let tlc_ratio = tlc.total_bytes() as f64 / best as f64;
    let olc_ratio = olc.total_bytes() as f64 / best as f64;
    verdict(
        tlc_ratio >= 50.0 && olc_ratio >= 2.0,
        format!(
            "N=3246, m=512, 1 honest + 7 splicers: tlc {} B, olc {} B, slc {} B (d=2) / {} B (d=100); tlc/slc {tlc_ratio:.1}x (>= 50), olc/slc {olc_ratio:.2}x (>= 2)",
            tlc.total_bytes(),
            olc.total_bytes(),
            slc2.total_bytes(),
            slc100.total_bytes(),
        ),
    )
}

fn data_structures() -> Verdict {
    let peak_law = (1..=4096u64).all(|n| {
        let sizes = mmr_sizes(n);
        sizes.len() == n.count_ones() as usize && sizes.iter().sum::<u64>() == n
    });

    let mut roundtrip = true;
    for d in [2usize, 4] {
        for size in 1..=64u64 {
            let leaves: Vec<Vec<u8>> = (0..size).map(|i| format!("leaf {size} {i}").into_bytes()).collect();
            let tree = MerkleTree::from_leaves(&leaves, d).unwrap();
            for i in 0..size {
                let p = tree.prove(i).unwrap();
                roundtrip &=
                    p.siblings.len() == tree_depth(size, d) && p.verify(tree.root(), size, i, &leaves[i as usize], d);
            }
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut false_accepts = 0;
    for _ in 0..10_000 {
        let d = rng.gen_range(2..=4usize);
        let size = rng.gen_range(1..=64u64);
        let leaves: Vec<[u8; 16]> = (0..size).map(|_| rng.gen()).collect();
        let tree = MerkleTree::from_leaves(&leaves, d).unwrap();
        let i = rng.gen_range(0..size);
        let mut proof = tree.prove(i).unwrap();
        let mut leaf = leaves[i as usize].to_vec();
        let (mut index, mut claimed_size) = (i, size);
        match rng.gen_range(0..5) {
            0 => leaf[rng.gen_range(0..16)] ^= 1 << rng.gen_range(0..8),
            1 if !proof.siblings.is_empty() => {
                let g = rng.gen_range(0..proof.siblings.len());
                let s = rng.gen_range(0..d - 1);
                proof.siblings[g][s].0[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8);
            }
            2 if size > 1 => index = (i + rng.gen_range(1..size)) % size,
            3 => {
                if proof.siblings.pop().is_none() {
                    proof.siblings.push(vec![hash(b"extra"); d - 1]);
                }
            }
            _ => {
                let other = (i + 1 + rng.gen_range(0..size)) % size;
                if other == i {
                    leaf.push(0);
                } else {
                    leaf = leaves[other as usize].to_vec();
                }
                claimed_size = if rng.gen() { size } else { size + 1 };
            }
        }
        if proof.verify(tree.root(), claimed_size, index, &leaf, d) {
            false_accepts += 1;
        }
    }

    // Range root reacts to any change in the leaf sequence.
    let leaves: Vec<_> = (0..13u8).map(|i| leaf_hash(&[i])).collect();
    let base = MountainRange::from_leaf_digests(leaves.clone(), 2).unwrap().root();
    let range_binding = (0..13).all(|i| {
        let mut l = leaves.clone();
        l[i] = leaf_hash(b"x");
        MountainRange::from_leaf_digests(l, 2).unwrap().root() != base
    });

    verdict(
        peak_law && roundtrip && false_accepts == 0 && range_binding,
        format!(
            "popcount law N<=4096: {peak_law}; roundtrip sizes<=64, d in {{2,4}}: {roundtrip}; false accepts in 10^4 perturbations: {false_accepts}; range binding: {range_binding}"
        ),
    )
}

fn commutation() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut agree = 0;
    for _ in 0..1000 {
        let accounts = rng.gen_range(1..40usize);
        let ids: Vec<u64> = (0..accounts).map(|_| rng.gen_range(0..1_000)).collect();
        let st = AccountState::from_balances(ids.iter().map(|&a| (a, rng.gen_range(0..500))));
        let from = *ids.choose(&mut rng).unwrap();
        let to = *ids.choose(&mut rng).unwrap();
        let amount = rng.gen_range(0..=st.balance(from).unwrap());
        let tx = Transaction { from, to, amount };
        let direct = commit(&apply_tx(&st, &tx).unwrap());
        let succinct = succinct_apply(commit(&st), &tx, &gen_aux(&st, &tx).unwrap());
        agree += usize::from(succinct == Some(direct));
    }

    let st0 = AccountState::from_balances((0..50u64).map(|a| (a, 10_000)));
    let supply = st0.total_supply();
    let mut st = st0.clone();
    let mut txs = Vec::with_capacity(10_000);
    for _ in 0..10_000 {
        let from = rng.gen_range(0..50);
        let tx = Transaction { from, to: rng.gen_range(0..50), amount: rng.gen_range(0..=st.balance(from).unwrap()) };
        st.apply(&tx).unwrap();
        txs.push(tx);
    }
    let folded = apply_all(&st0, &txs).unwrap();
    let conserved = folded.total_supply() == supply && folded == st;

    verdict(
        agree == 1000 && conserved,
        format!("{agree}/1000 commitments equal; supply conserved over 10^4 transfers: {conserved}"),
    )
}

fn step_budget() -> Verdict {
    let (mut games, mut exact, mut aborted) = (0, 0, 0);
    let mut deep_games = 0;
    for (n, d) in [(16u64, 2usize), (37, 2), (100, 3), (64, 4), (256, 2), (200, 5)] {
        let honest = trace(n, 8, 70 + n);
        let alt = trace(n, 8, 80 + n);
        let ctx = ctx(&honest, d);
        let hd = data(honest.clone());
        let sizes = mmr_sizes(n);
        for j in 1..n {
            let adv = data(spliced(&honest, &alt, j));
            let (tree, out) = play(&ctx, session(&hd), session(&adv));
            games += 1;
            exact += usize::from(out.open_rounds == tree_depth(sizes[tree], d) && out.verdict == GameVerdict::WinA);

            if j % 5 == 1 {
                let deep = Box::new(AdversarialSession::new(ProverSession::new(adv.clone()), Behavior::DeepTree));
                let (tree, out) = play(&ctx, session(&hd), deep);
                deep_games += 1;
                aborted += usize::from(
                    out.verdict == GameVerdict::WinA
                        && out.faults[1] == Some(Fault::StepBudget)
                        && out.open_rounds == tree_depth(sizes[tree], d),
                );
            }
        }
    }
    verdict(
        exact == games && aborted == deep_games,
        format!(
            "{exact}/{games} honest-vs-splicer games used exactly ceil(log_d size) opens; {aborted}/{deep_games} over-deep sessions aborted and lost"
        ),
    )
}

fn transport_equivalence() -> Verdict {
    let honest = trace(64, 8, 90);
    let alts: Vec<ExecutionTrace> = (0..3).map(|i| trace(64, 8, 91 + i)).collect();
    let mut provers: Vec<Arc<ProverData>> =
        alts.iter().zip([9u64, 30, 51]).map(|(a, j)| data(spliced(&honest, a, j))).collect();
    provers.insert(1, data(honest.clone()));
    let cfg = ClientConfig::new(Flavor::Slc).with_param(2);
    let link_cfg = LinkConfig { latency_us: 5_000, ..LinkConfig::default() };

    let sim_t = Transcript::new();
    let mut sim: Vec<Box<dyn ProverLink>> = provers
        .iter()
        .enumerate()
        .map(|(i, d)| Box::new(SimLink::new(session(d), link_cfg).with_transcript(sim_t.clone(), i as u32)) as _)
        .collect();
    let sim_report = sync(&cfg, &boot(&honest), &mut sim);

    let servers: Vec<_> = provers
        .iter()
        .map(|d| {
            let d = d.clone();
            Server::bind("127.0.0.1:0", move || session(&d)).unwrap().spawn().unwrap()
        })
        .collect();
    let tcp_t = Transcript::new();
    let mut tcp: Vec<Box<dyn ProverLink>> = servers
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Box::new(TcpLink::connect(s.addr(), link_cfg).unwrap().with_transcript(tcp_t.clone(), i as u32)) as _
        })
        .collect();
    let tcp_report = sync(&cfg, &boot(&honest), &mut tcp);

    let (st, tt) = (sim_t.entries(), tcp_t.entries());
    let same_transcript = st == tt;
    let same_outcome = sim_report == tcp_report;
    let honest_won = sim_report.as_ref().is_ok_and(|r| r.commitment == honest.latest_commitment());
    let bytes: usize = st.iter().map(|e| e.frame.len()).sum();
    verdict(
        same_transcript && same_outcome && honest_won,
        format!(
            "{} frames / {bytes} bytes, transcripts identical: {same_transcript}; reports identical: {same_outcome}; honest commitment: {honest_won}",
            st.len()
        ),
    )
}
