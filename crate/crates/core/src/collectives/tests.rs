use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::gla::{CumDecay, ModelDims, State};
use crate::instance::{rng, uniform_tensor};
use crate::tensor::Tensor;

fn net(alpha: f64, beta: f64) -> NetConfig {
    NetConfig::new(alpha, beta).unwrap()
}

fn scalar_dims() -> ModelDims {
    ModelDims::new(1, 1, 1).unwrap()
}

fn random_states(p: usize, dims: ModelDims, seed: u64) -> (Vec<State<f64>>, Vec<CumDecay<f64>>) {
    let mut r = rng(seed);
    let states =
        (0..p).map(|_| State::from_tensor(uniform_tensor(&mut r, &dims.state_shape(), -1.0, 1.0)).unwrap()).collect();
    let decays = (0..p)
        .map(|_| CumDecay::from_tensor(uniform_tensor(&mut r, &[dims.heads, dims.key_dim], -3.0, 0.0)).unwrap())
        .collect();
    (states, decays)
}

fn run_scan(
    p: usize,
    n: NetConfig,
    states: &[State<f64>],
    decays: &[CumDecay<f64>],
    k: usize,
    dir: Direction,
) -> RunRecord<(State<f64>, State<f64>)> {
    let mut cluster = VirtualCluster::new(p, n).unwrap();
    let pipe = PipelineConfig::new(k).unwrap();
    cluster
        .run(|ctx: &mut RankCtx<'_, f64>| {
            let r = ctx.index();
            ctx.all_scan(&states[r], &decays[r], pipe, dir)
        })
        .unwrap()
}

fn sequential_scan(states: &[State<f64>], decays: &[CumDecay<f64>], dir: Direction) -> Vec<State<f64>> {
    let order: Vec<usize> = match dir {
        Direction::Fwd => (0..states.len()).collect(),
        Direction::Bwd => (0..states.len()).rev().collect(),
    };
    let mut out = vec![State::zeros(states[0].dims()); states.len()];
    let mut acc = State::zeros(states[0].dims());
    for r in order {
        acc = states[r].decayed_add(&decays[r], &acc).unwrap();
        out[r] = acc.clone();
    }
    out
}

#[test]
fn zero_ranks_rejected() {
    assert!(matches!(VirtualCluster::new(0, NetConfig::default()), Err(Error::Config(_))));
}

#[test]
fn net_config_validation() {
    assert!(NetConfig::new(-1.0, 1.0).is_err());
    assert!(NetConfig::new(0.0, 0.0).is_err());
    assert!(NetConfig::default().with_block_update_cost(-0.1).is_err());
    assert_eq!(net(0.5, 16.0).tau(16.0), 1.5);
}

#[test]
fn channel_topology() {
    let one = VirtualCluster::new(1, NetConfig::default()).unwrap();
    assert!(one.forward_channels().is_empty() && one.backward_channels().is_empty());
    assert_eq!(one.ledger().total_sent(), 0);
    let four = VirtualCluster::new(4, NetConfig::default()).unwrap();
    assert_eq!(four.forward_channels().len(), 3);
    assert_eq!(four.backward_channels(), vec![(RankId(1), RankId(0)), (RankId(2), RankId(1)), (RankId(3), RankId(2))]);
}

#[test]
fn pipeline_must_divide_key_dim() {
    assert!(PipelineConfig::new(0).is_err());
    let dims = ModelDims::new(1, 6, 2).unwrap();
    let (s, d) = random_states(2, dims, 1);
    let mut cluster = VirtualCluster::new(2, NetConfig::default()).unwrap();
    let pipe = PipelineConfig::new(4).unwrap();
    let err =
        cluster.run(|ctx: &mut RankCtx<'_, f64>| ctx.all_scan(&s[ctx.index()], &d[ctx.index()], pipe, Direction::Fwd));
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn p2p_arrival_time() {
    let mut cluster = VirtualCluster::new(2, net(0.0, 16.0)).unwrap();
    let rec = cluster
        .run(|ctx: &mut RankCtx<'_, f64>| {
            if ctx.index() == 0 {
                ctx.send(RankId(1), vec![0.0; 16])?;
            } else {
                ctx.recv(RankId(0))?;
            }
            Ok(ctx.comm_now())
        })
        .unwrap();
    assert_eq!(rec.results, vec![1.0, 1.0]);
    assert_eq!(rec.ledger.counts(0, "p2p").sent, 16);
    assert_eq!(rec.ledger.counts(1, "p2p").received, 16);
}

#[test]
fn p2p_zero_payload_pays_latency() {
    let mut cluster = VirtualCluster::new(2, net(0.5, 1.0)).unwrap();
    let rec = cluster
        .run(|ctx: &mut RankCtx<'_, f64>| {
            if ctx.index() == 0 {
                ctx.send(RankId(1), Vec::new())?;
            } else {
                ctx.recv(RankId(0))?;
            }
            Ok(ctx.comm_now())
        })
        .unwrap();
    assert_eq!(rec.results[1], 0.5);
}

#[test]
fn p2p_is_fifo() {
    let mut cluster = VirtualCluster::new(2, net(0.0, 1.0)).unwrap();
    let rec = cluster
        .run(|ctx: &mut RankCtx<'_, f64>| {
            if ctx.index() == 0 {
                ctx.send(RankId(1), vec![1.0; 100])?;
                ctx.send(RankId(1), vec![2.0])?;
                Ok(vec![])
            } else {
                let a = ctx.recv(RankId(0))?;
                let b = ctx.recv(RankId(0))?;
                Ok(vec![a.len(), b.len()])
            }
        })
        .unwrap();
    assert_eq!(rec.results[1], vec![100, 1]);
}

#[test]
fn p2p_rejects_self_and_out_of_range() {
    let mut cluster = VirtualCluster::new(2, NetConfig::default()).unwrap();
    let err = cluster.run(|ctx: &mut RankCtx<'_, f64>| ctx.send(RankId(ctx.index()), vec![1.0]));
    assert!(matches!(err, Err(Error::Config(_))));
    let err = cluster.run(|ctx: &mut RankCtx<'_, f64>| ctx.recv(RankId(7)));
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn receive_without_sender_deadlocks() {
    let mut cluster = VirtualCluster::new(2, NetConfig::default()).unwrap();
    let err = cluster.run(|ctx: &mut RankCtx<'_, f64>| {
        let peer = RankId(1 - ctx.index());
        ctx.recv(peer)
    });
    assert!(matches!(err, Err(Error::Deadlock(_))));

    let mut cluster = VirtualCluster::new(3, NetConfig::default()).unwrap();
    let err = cluster.run(|ctx: &mut RankCtx<'_, f64>| match ctx.index() {
        0 => Ok(()),
        r => ctx.recv(RankId(r - 1)).map(|_| ()),
    });
    assert!(matches!(err, Err(Error::Deadlock(_))));
}

#[test]
fn non_deadlock_error_wins() {
    let mut cluster = VirtualCluster::new(2, NetConfig::default()).unwrap();
    let err =
        cluster.run(
            |ctx: &mut RankCtx<'_, f64>| {
                if ctx.index() == 0 {
                    Err(Error::Domain("boom".into()))
                } else {
                    ctx.recv(RankId(0)).map(|_| ())
                }
            },
        );
    assert_eq!(err.unwrap_err(), Error::Domain("boom".into()));
}

#[test]
fn scan_example_three_scalars() {
    let dims = scalar_dims();
    let states: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&x| State::from_vec(dims, vec![x]).unwrap()).collect();
    let decays: Vec<_> = [0.0, 0.5f64.ln(), 0.5f64.ln()]
        .iter()
        .map(|&x| CumDecay::from_tensor(Tensor::from_vec(&[1, 1], vec![x]).unwrap()).unwrap())
        .collect();
    let rec = run_scan(3, NetConfig::default(), &states, &decays, 1, Direction::Fwd);
    let scanned: Vec<f64> = rec.results.iter().map(|(_, s)| s.as_slice()[0]).collect();
    assert_eq!(scanned, vec![1.0, 2.5, 4.25]);
    assert_eq!(rec.results[2].0.as_slice()[0], 2.5);
    assert_eq!(rec.results[0].0.as_slice()[0], 0.0);
}

#[test]
fn scan_single_rank_is_identity() {
    let dims = ModelDims::new(2, 4, 3).unwrap();
    let (s, d) = random_states(1, dims, 2);
    let rec = run_scan(1, NetConfig::default(), &s, &d, 2, Direction::Fwd);
    assert_eq!(rec.results[0].1, s[0]);
    assert!(rec.results[0].0.as_slice().iter().all(|&x| x == 0.0));
    assert_eq!(rec.ledger.total_sent(), 0);
    assert_eq!(rec.timeline.makespan(), 0.0);
}

#[test]
fn scan_volume_is_one_state_per_sender() {
    let dims = ModelDims::new(1, 128, 128).unwrap();
    let (s, d) = random_states(4, dims, 3);
    for k in [1, 4] {
        let rec = run_scan(4, NetConfig::default(), &s, &d, k, Direction::Fwd);
        let sent: Vec<u64> = (0..4).map(|r| rec.ledger.sent(r)).collect();
        assert_eq!(sent, vec![16384, 16384, 16384, 0]);
        assert_eq!(rec.ledger.total_sent(), rec.ledger.total_received());
        let bwd = run_scan(4, NetConfig::default(), &s, &d, k, Direction::Bwd);
        let sent: Vec<u64> = (0..4).map(|r| bwd.ledger.sent(r)).collect();
        assert_eq!(sent, vec![0, 16384, 16384, 16384]);
    }
}

#[test]
fn scan_bwd_matches_sequential() {
    let dims = ModelDims::new(2, 4, 3).unwrap();
    let (s, d) = random_states(5, dims, 4);
    let rec = run_scan(5, NetConfig::default(), &s, &d, 2, Direction::Bwd);
    let want = sequential_scan(&s, &d, Direction::Bwd);
    for (r, (recv, scanned)) in rec.results.iter().enumerate() {
        assert_eq!(scanned, &want[r]);
        if r + 1 < 5 {
            assert_eq!(recv, &want[r + 1]);
        }
    }
}

#[test]
fn scan_rank_mismatch_is_dims_error() {
    let small = ModelDims::new(1, 2, 2).unwrap();
    let big = ModelDims::new(1, 2, 3).unwrap();
    let (a, da) = random_states(1, small, 5);
    let (b, db) = random_states(1, big, 6);
    let mut cluster = VirtualCluster::new(2, NetConfig::default()).unwrap();
    let err = cluster.run(|ctx: &mut RankCtx<'_, f64>| {
        if ctx.index() == 0 {
            ctx.all_scan(&a[0], &da[0], PipelineConfig::default(), Direction::Fwd)
        } else {
            ctx.all_scan(&b[0], &db[0], PipelineConfig::default(), Direction::Fwd)
        }
    });
    assert!(matches!(err, Err(Error::Dims(_))));
}

#[test]
fn scan_timeline_exact_chain() {
    // Block j reaches the tail after (j + P - 1) hops on a serial chain.
    let dims = ModelDims::new(1, 8, 4).unwrap();
    let s_len = dims.state_len() as f64;
    for (alpha, beta) in [(0.0, 8.0), (0.25, 3.0)] {
        for p in [2, 3, 5] {
            for k in [1, 2, 4, 8] {
                let (s, d) = random_states(p, dims, 7);
                let n = net(alpha, beta);
                let rec = run_scan(p, n, &s, &d, k, Direction::Fwd);
                let want = (k + p - 2) as f64 * n.tau(s_len / k as f64);
                let got = rec.timeline.makespan();
                assert!((got - want).abs() <= 1e-12 * want, "P={p} K={k}: {got} vs {want}");
                assert!(rec.timeline.streams_are_serial());
            }
        }
    }
}

#[test]
fn scan_update_cost_lengthens_chain() {
    let dims = ModelDims::new(1, 4, 4).unwrap();
    let (s, d) = random_states(3, dims, 8);
    let base = run_scan(3, net(0.0, 1.0), &s, &d, 2, Direction::Fwd);
    let slow = run_scan(3, net(0.0, 1.0).with_block_update_cost(0.5).unwrap(), &s, &d, 2, Direction::Fwd);
    assert!(slow.timeline.makespan() > base.timeline.makespan());
    assert_eq!(slow.results, base.results);
}

#[test]
fn gather_example() {
    let dims = ModelDims::new(2, 3, 2).unwrap();
    let (s, _) = random_states(4, dims, 9);
    let mut cluster = VirtualCluster::new(4, net(0.0, 1.0)).unwrap();
    let rec = cluster.run(|ctx: &mut RankCtx<'_, f64>| ctx.all_gather(&s[ctx.index()])).unwrap();
    for r in 0..4 {
        assert_eq!(rec.results[r], s);
        assert_eq!(rec.ledger.received(r), 3 * 12);
        assert!(rec.ledger.sent(r) > 0);
    }
    assert_eq!(rec.timeline.makespan(), 3.0 * 12.0);
}

#[test]
fn gather_single_rank() {
    let dims = ModelDims::new(1, 2, 2).unwrap();
    let (s, _) = random_states(1, dims, 10);
    let mut cluster = VirtualCluster::new(1, NetConfig::default()).unwrap();
    let rec = cluster.run(|ctx: &mut RankCtx<'_, f64>| ctx.all_gather(&s[0])).unwrap();
    assert_eq!(rec.results[0], s);
    assert_eq!(rec.ledger.total_sent(), 0);
}

#[test]
fn gather_shape_mismatch() {
    let mut cluster = VirtualCluster::new(2, NetConfig::default()).unwrap();
    let err = cluster.run(|ctx: &mut RankCtx<'_, f64>| {
        let dims = ModelDims::new(1, 2, 1 + ctx.index()).unwrap();
        ctx.all_gather(&State::zeros(dims))
    });
    assert!(matches!(err, Err(Error::Dims(_))));
}

#[test]
fn reduce_examples() {
    let dims = ModelDims::new(1, 3, 3).unwrap();
    let (s, _) = random_states(2, dims, 11);
    let mut cluster = VirtualCluster::new(2, NetConfig::default()).unwrap();
    let rec = cluster.run(|ctx: &mut RankCtx<'_, f64>| ctx.all_reduce(&s[ctx.index()])).unwrap();
    let want: Vec<f64> = s[0].as_slice().iter().zip(s[1].as_slice()).map(|(a, b)| a + b).collect();
    assert_eq!(rec.results[0].as_slice(), want.as_slice());
    assert_eq!(rec.results[1].as_slice(), want.as_slice());

    let mut one = VirtualCluster::new(1, NetConfig::default()).unwrap();
    let rec = one.run(|ctx: &mut RankCtx<'_, f64>| ctx.all_reduce(&s[0])).unwrap();
    assert_eq!(rec.results[0], s[0]);

    let mut four = VirtualCluster::new(4, NetConfig::default()).unwrap();
    let rec = four.run(|ctx: &mut RankCtx<'_, f64>| ctx.all_reduce(&State::zeros(dims))).unwrap();
    assert!(rec.results.iter().all(|st| st.as_slice().iter().all(|&x| x == 0.0)));
    assert!(rec.ledger.total_sent() > 0);
}

#[test]
fn reduce_agrees_across_ranks() {
    let dims = ModelDims::new(2, 5, 3).unwrap();
    let (s, _) = random_states(5, dims, 12);
    let mut cluster = VirtualCluster::new(5, NetConfig::default()).unwrap();
    let rec = cluster.run(|ctx: &mut RankCtx<'_, f64>| ctx.all_reduce(&s[ctx.index()])).unwrap();
    for r in &rec.results {
        assert_eq!(r, &rec.results[0]);
    }
    for (i, &x) in rec.results[0].as_slice().iter().enumerate() {
        let want: f64 = s.iter().map(|st| st.as_slice()[i]).sum();
        assert!((x - want).abs() < 1e-12);
    }
}

#[test]
fn cluster_accumulates_runs() {
    let dims = ModelDims::new(1, 2, 2).unwrap();
    let (s, d) = random_states(3, dims, 13);
    let mut cluster = VirtualCluster::new(3, net(0.0, 1.0)).unwrap();
    let pipe = PipelineConfig::default();
    for _ in 0..2 {
        cluster
            .run(|ctx: &mut RankCtx<'_, f64>| ctx.all_scan(&s[ctx.index()], &d[ctx.index()], pipe, Direction::Fwd))
            .unwrap();
    }
    assert_eq!(cluster.ledger().sent(0), 8);
    assert_eq!(cluster.clock(), 16.0);
    assert_eq!(cluster.timeline().makespan(), 16.0);
    let longest = cluster.timeline().events().iter().map(|e| e.duration()).fold(0.0, f64::max);
    assert!(cluster.timeline().makespan() >= longest);
}

#[test]
fn runs_are_deterministic() {
    let dims = ModelDims::new(2, 4, 2).unwrap();
    let (s, d) = random_states(6, dims, 14);
    let n = net(0.1, 7.0);
    let a = run_scan(6, n, &s, &d, 2, Direction::Fwd);
    let b = run_scan(6, n, &s, &d, 2, Direction::Fwd);
    assert_eq!(a.results, b.results);
    assert_eq!(a.ledger, b.ledger);
    let mut ea = a.timeline.events().to_vec();
    let mut eb = b.timeline.events().to_vec();
    let key = |e: &TimelineEvent| (e.rank, e.label.clone(), e.start.to_bits());
    ea.sort_by_key(key);
    eb.sort_by_key(key);
    assert_eq!(ea, eb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scan_equals_sequential_and_is_k_invariant(p in 1usize..=32, seed in any::<u64>()) {
        let dims = ModelDims::new(2, 8, 3).unwrap();
        let (s, d) = random_states(p, dims, seed);
        let want = sequential_scan(&s, &d, Direction::Fwd);
        let base = run_scan(p, NetConfig::default(), &s, &d, 1, Direction::Fwd);
        for (r, (_, scanned)) in base.results.iter().enumerate() {
            prop_assert_eq!(scanned, &want[r]);
        }
        for k in [2, 4, 8] {
            let rec = run_scan(p, NetConfig::default(), &s, &d, k, Direction::Fwd);
            prop_assert_eq!(&rec.results, &base.results);
            prop_assert_eq!(&rec.ledger, &base.ledger);
        }
    }

    #[test]
    fn conservation_per_primitive(p in 1usize..8, seed in any::<u64>()) {
        let dims = ModelDims::new(1, 4, 2).unwrap();
        let (s, d) = random_states(p, dims, seed);
        let mut cluster = VirtualCluster::new(p, NetConfig::default()).unwrap();
        cluster.run(|ctx: &mut RankCtx<'_, f64>| {
            let r = ctx.index();
            ctx.all_scan(&s[r], &d[r], PipelineConfig::new(2)?, Direction::Bwd)?;
            ctx.all_gather(&s[r])?;
            ctx.all_reduce(&s[r])
        }).unwrap();
        let ledger = cluster.ledger();
        for prim in ledger.primitives() {
            let c = ledger.primitive_totals(&prim);
            prop_assert_eq!(c.sent, c.received);
        }
        prop_assert_eq!(ledger.total_sent(), ledger.total_received());
        prop_assert_eq!(ledger.primitive_totals("all_gather").received, (p as u64 - 1) * p as u64 * 8);
    }
}
