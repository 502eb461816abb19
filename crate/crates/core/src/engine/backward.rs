use super::forward::{check_cluster, decay_from_vec, log2_ranks, serial_timeline};
use super::{GlobalSequence, RunArtifacts, RunOptions, SavedRank, StrategyKind};
use crate::collectives::VirtualCluster;
use crate::collectives::{Direction, RankCtx, RankId, VolumeLedger};
use crate::error::{Error, Result};
use crate::gla::{backward_from_scan, local_grad_scan, GradShard, LocalGradScan, SavedStates, SeqShard, State};
use crate::tensor::{Real, Tensor};

struct RankBackward<T> {
    grads: GradShard<T>,
    d_prev: State<T>,
}

fn saved_states<T>(saved: &SavedRank<T>) -> Option<SavedStates<'_, T>> {
    saved.local_states.as_deref().map(|s| (s, saved.cumdecay.as_slice()))
}

fn grads_for<T: Real>(
    shard: &SeqShard<T>,
    d_out: &Tensor<T>,
    saved: &SavedRank<T>,
    ds_next: &State<T>,
    scan: &LocalGradScan<T>,
) -> Result<GradShard<T>> {
    Ok(backward_from_scan(shard, d_out, &saved.prev, ds_next, scan, saved_states(saved))?.0)
}

/// Backward pass given the cotangent `d_out` (`[h, P·L, e_v]`) and the
/// artifacts of a forward run of the same sequence and strategy.
pub fn run_backward<T: Real>(
    seq: &GlobalSequence<T>,
    d_out: &Tensor<T>,
    strategy: StrategyKind,
    cluster: &mut VirtualCluster,
    opts: &RunOptions,
    fwd: &RunArtifacts<T>,
) -> Result<RunArtifacts<T>> {
    check_cluster(seq, strategy, cluster)?;
    opts.costs.validate()?;
    if fwd.strategy != strategy {
        return Err(Error::State(format!("saved state comes from {}, not {strategy}", fwd.strategy)));
    }
    let saved = fwd.saved.as_ref().ok_or_else(|| Error::State("no saved forward state".into()))?;
    let want_ranks = if strategy.is_distributed() { seq.ranks() } else { 1 };
    if saved.len() != want_ranks {
        return Err(Error::State(format!("saved state covers {} ranks, expected {want_ranks}", saved.len())));
    }
    let dims = seq.dims();
    let want = [dims.heads, seq.total_len(), dims.value_dim];
    if d_out.shape() != want {
        return Err(Error::Dims(format!("dO has shape {:?}, expected {want:?}", d_out.shape())));
    }
    if strategy == StrategyKind::SingleDevice {
        return single_backward(seq, d_out, opts, &saved[0]);
    }
    if strategy == StrategyKind::ZeCO {
        opts.pipe.check(dims.key_dim)?;
    }

    let shards = seq.split()?;
    let l = seq.rank_layout().seq_len;
    let d_outs: Vec<Tensor<T>> = (0..seq.ranks()).map(|p| d_out.slice_axis1(p * l, l)).collect::<Result<_>>()?;
    let record = cluster.run(|ctx: &mut RankCtx<'_, T>| {
        let r = ctx.index();
        let args = (&shards[r], &d_outs[r], &saved[r]);
        match strategy {
            StrategyKind::ZeCO => zeco_rank(ctx, args, opts),
            StrategyKind::Lasp1 => lasp1_rank(ctx, args, opts),
            StrategyKind::Lasp2 => lasp2_rank(ctx, args, opts),
            StrategyKind::SingleDevice => unreachable!("handled above"),
        }
    })?;

    let grads = GradShard::concat(&record.results.iter().map(|r| r.grads.clone()).collect::<Vec<_>>())?;
    let mut boundary_states: Vec<State<T>> = record.results.into_iter().map(|r| r.d_prev).collect();
    boundary_states.push(State::zeros(dims));
    Ok(RunArtifacts {
        strategy,
        ranks: seq.ranks(),
        outputs: None,
        grads: Some(grads),
        ledger: record.ledger,
        timeline: record.timeline,
        boundary_states,
        saved: None,
    })
}

type RankArgs<'a, T> = (&'a SeqShard<T>, &'a Tensor<T>, &'a SavedRank<T>);

fn zeco_rank<T: Real>(ctx: &mut RankCtx<'_, T>, args: RankArgs<'_, T>, opts: &RunOptions) -> Result<RankBackward<T>> {
    let (shard, d_out, saved) = args;
    let n = shard.layout.num_chunks() as f64;
    let c = &opts.costs;
    let scan = local_grad_scan(shard, d_out)?;
    ctx.compute("local_grad_scan", n * c.chunk_scan);
    let (ds_next, d_prev) = ctx.all_scan(scan.first_dstate(), scan.total_decay(), opts.pipe, Direction::Bwd)?;
    // Boundary states are rebuilt from the saved incoming state while the
    // gradient exchange is in flight; no forward-direction traffic.
    ctx.compute("recompute_states", n * c.chunk_scan);
    ctx.compute("intra_grad", n * c.chunk_intra);
    ctx.join();
    let grads = grads_for(shard, d_out, saved, &ds_next, &scan)?;
    ctx.compute("grads", n * (c.chunk_intra + c.chunk_output));
    Ok(RankBackward { grads, d_prev })
}

fn lasp1_rank<T: Real>(ctx: &mut RankCtx<'_, T>, args: RankArgs<'_, T>, opts: &RunOptions) -> Result<RankBackward<T>> {
    let (shard, d_out, saved) = args;
    let (r, p) = (ctx.index(), ctx.ranks());
    let n = shard.layout.num_chunks() as f64;
    let c = &opts.costs;
    let ds_next =
        if r + 1 < p { State::from_vec(shard.dims, ctx.recv(RankId(r + 1))?)? } else { State::zeros(shard.dims) };
    ctx.join();
    let scan = local_grad_scan(shard, d_out)?;
    ctx.compute("local_grad_scan", n * c.chunk_scan);
    let grads = grads_for(shard, d_out, saved, &ds_next, &scan)?;
    ctx.compute("recompute_states", n * c.chunk_scan);
    ctx.compute("intra_grad", n * c.chunk_intra);
    ctx.compute("grads", n * (c.chunk_intra + c.chunk_output));
    let d_prev = scan.first_dstate().decayed_add(scan.total_decay(), &ds_next)?;
    ctx.compute("state_update", c.state_update);
    if r > 0 {
        ctx.send(RankId(r - 1), d_prev.as_slice().to_vec())?;
    }
    Ok(RankBackward { grads, d_prev })
}

fn lasp2_rank<T: Real>(ctx: &mut RankCtx<'_, T>, args: RankArgs<'_, T>, opts: &RunOptions) -> Result<RankBackward<T>> {
    let (shard, d_out, saved) = args;
    let (r, p) = (ctx.index(), ctx.ranks());
    let dims = shard.dims;
    let n = shard.layout.num_chunks() as f64;
    let c = &opts.costs;
    let scan = local_grad_scan(shard, d_out)?;
    ctx.compute("local_grad_scan", n * c.chunk_scan);
    let firsts = ctx.all_gather(scan.first_dstate())?;
    let decays = ctx.all_gather_vec(scan.total_decay().log_values().data().to_vec(), "all_gather_decay")?;
    ctx.join();
    let mut ds_next = State::zeros(dims);
    for (s, d) in firsts.iter().zip(decays).skip(r + 1).rev() {
        ds_next = s.decayed_add(&decay_from_vec(dims, d)?, &ds_next)?;
    }
    let d_prev = scan.first_dstate().decayed_add(scan.total_decay(), &ds_next)?;
    ctx.compute("reduce", (log2_ranks(p) + n) * c.state_update);
    let grads = grads_for(shard, d_out, saved, &ds_next, &scan)?;
    ctx.compute("recompute_states", n * c.chunk_scan);
    ctx.compute("intra_grad", n * c.chunk_intra);
    ctx.compute("grads", n * (c.chunk_intra + c.chunk_output));
    Ok(RankBackward { grads, d_prev })
}

fn single_backward<T: Real>(
    seq: &GlobalSequence<T>,
    d_out: &Tensor<T>,
    opts: &RunOptions,
    saved: &SavedRank<T>,
) -> Result<RunArtifacts<T>> {
    let full = seq.full();
    let dims = seq.dims();
    let scan = local_grad_scan(full, d_out)?;
    let grads = grads_for(full, d_out, saved, &State::zeros(dims), &scan)?;
    let per_rank = seq.rank_layout().num_chunks();
    let boundary_states = (0..=seq.ranks()).map(|p| scan.dstates[p * per_rank].clone()).collect();
    let n = full.layout.num_chunks() as f64;
    let c = &opts.costs;
    let timeline = serial_timeline(&[
        ("local_grad_scan", n * c.chunk_scan),
        ("recompute_states", n * c.chunk_scan),
        ("intra_grad", n * c.chunk_intra),
        ("grads", n * (c.chunk_intra + c.chunk_output)),
    ]);
    Ok(RunArtifacts {
        strategy: StrategyKind::SingleDevice,
        ranks: 1,
        outputs: None,
        grads: Some(grads),
        ledger: VolumeLedger::new(1),
        timeline,
        boundary_states,
        saved: None,
    })
}
