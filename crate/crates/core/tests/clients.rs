mod common;

use std::sync::Arc;

use common::*;
use popos::chainsim::{majority, BalanceProofRejected};
use popos::clients::{query_balance, sync, BalanceError, Bootstrap, ClientConfig, Flavor, SyncError};
use popos::protocol::{AdversarialSession, Behavior, ProverData, ProverSession};

fn cfg(flavor: Flavor, param: u32) -> ClientConfig {
    ClientConfig::new(flavor).with_param(param)
}

#[test]
fn flavors_agree_on_the_honest_commitment() {
    let honest = trace(50, 6, 1);
    let alt = trace(50, 6, 2);
    let mut provers: Vec<Arc<ProverData>> = [7u64, 30, 49].iter().map(|&j| data(spliced(&honest, &alt, j))).collect();
    provers.push(data(honest.clone()));
    for c in [cfg(Flavor::Tlc, 7), cfg(Flavor::Olc, 9), cfg(Flavor::Slc, 2), cfg(Flavor::Slc, 5)] {
        let r = sync(&c, &boot(&honest), &mut links(&provers)).unwrap();
        assert_eq!(r.commitment, honest.latest_commitment(), "{c:?}");
        assert_eq!(r.prover, 3, "{c:?}");
        assert_eq!((r.horizon, r.committee_size, r.param), (50, 6, c.param));
        assert!(r.bytes_down > 0 && r.bytes_up > 0 && r.simulated_elapsed_us > 0);
    }
}

#[test]
fn tlc_counts_one_verification_per_signature() {
    let honest = trace(21, 5, 3);
    let r = sync(&cfg(Flavor::Tlc, 4), &boot(&honest), &mut links(&[data(honest.clone())])).unwrap();
    // 20 handovers plus the commitment, each signed by a bare majority.
    assert_eq!(r.signature_verifications, 21 * majority(5) as u64);
    // claim + ceil(20 / 4) batches
    assert_eq!(r.interaction_rounds, 6);
    assert_eq!(r.games, 0);
}

#[test]
fn tlc_fails_over_past_bad_provers() {
    let honest = trace(15, 4, 4);
    let hd = data(honest.clone());
    let adv = data(spliced(&honest, &trace(15, 4, 5), 8));
    let mut l = vec![
        link(session(&adv)),
        link(Box::new(AdversarialSession::new(ProverSession::new(hd.clone()), Behavior::SilentAfter(2)))),
        link(session(&hd)),
    ];
    let r = sync(&cfg(Flavor::Tlc, 3), &boot(&honest), &mut l).unwrap();
    assert_eq!(r.prover, 2);
    assert_eq!(r.commitment, honest.latest_commitment());

    let mut only_bad = links(&[adv]);
    assert_eq!(sync(&cfg(Flavor::Tlc, 3), &boot(&honest), &mut only_bad), Err(SyncError::Exhausted));
}

#[test]
fn olc_resolves_each_conflict_at_the_first_differing_hash() {
    let honest = trace(40, 4, 6);
    let hd = data(honest.clone());
    for j in [1u64, 2, 19, 39] {
        let adv = data(spliced(&honest, &trace(40, 4, 7), j));
        for provers in [vec![adv.clone(), hd.clone()], vec![hd.clone(), adv.clone()]] {
            let r = sync(&cfg(Flavor::Olc, 16), &boot(&honest), &mut links(&provers)).unwrap();
            assert_eq!(r.commitment, honest.latest_commitment(), "j={j}");
            assert_eq!(r.games, 1);
        }
    }
}

#[test]
fn bad_configurations_are_refused() {
    let honest = trace(4, 4, 8);
    let hd = data(honest.clone());
    assert_eq!(
        sync(&cfg(Flavor::Slc, 1), &boot(&honest), &mut links(std::slice::from_ref(&hd))),
        Err(SyncError::BadParam(1))
    );
    assert_eq!(
        sync(&cfg(Flavor::Tlc, 0), &boot(&honest), &mut links(std::slice::from_ref(&hd))),
        Err(SyncError::BadParam(0))
    );
    assert_eq!(sync(&cfg(Flavor::Olc, 5), &boot(&honest), &mut links(&[])), Err(SyncError::NoProvers));
    let empty = Bootstrap { genesis: honest.genesis().clone(), horizon: 0 };
    assert_eq!(sync(&cfg(Flavor::Olc, 5), &empty, &mut links(&[hd])), Err(SyncError::EmptyHorizon));
}

#[test]
fn single_epoch_horizon_syncs() {
    let honest = trace(1, 4, 9);
    for c in [cfg(Flavor::Tlc, 1), cfg(Flavor::Olc, 1), cfg(Flavor::Slc, 2)] {
        let r = sync(&c, &boot(&honest), &mut links(&[data(honest.clone())])).unwrap();
        assert_eq!(r.commitment, honest.latest_commitment());
    }
}

#[test]
fn balances_verify_against_the_synced_commitment() {
    let honest = trace(12, 4, 10);
    let hd = data(honest.clone());
    let r = sync(&cfg(Flavor::Slc, 2), &boot(&honest), &mut links(std::slice::from_ref(&hd))).unwrap();
    let state = honest.ledger().unwrap().state_at(11);

    let mut l = link(session(&hd));
    for (account, balance) in state.iter() {
        assert_eq!(query_balance(r.commitment, account, l.as_mut()), Ok(Some(balance)));
    }
    assert_eq!(query_balance(r.commitment, 16, l.as_mut()), Ok(None));
    assert_eq!(query_balance(r.commitment, u64::MAX, l.as_mut()), Ok(None));

    let mut liar = link(Box::new(AdversarialSession::new(ProverSession::new(hd), Behavior::InflatedBalance)));
    assert_eq!(query_balance(r.commitment, 3, liar.as_mut()), Err(BalanceError::Rejected(BalanceProofRejected)));

    let mut silent =
        link(Box::new(AdversarialSession::new(ProverSession::new(data(honest.clone())), Behavior::SilentAfter(0))));
    assert_eq!(query_balance(r.commitment, 3, silent.as_mut()), Err(BalanceError::NoAnswer));
    assert_eq!(silent.meter().exchanges, 1);
}

#[test]
fn report_csv_row_matches_header() {
    let honest = trace(3, 4, 11);
    let r = sync(&cfg(Flavor::Olc, 2), &boot(&honest), &mut links(&[data(honest.clone())])).unwrap();
    let row = r.csv_row();
    assert_eq!(row.len(), popos::clients::SyncReport::CSV_HEADER.len());
    assert_eq!(row[0], "olc");
    assert_eq!(row[9], honest.latest_commitment().0.to_hex());
}
