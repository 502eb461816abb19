use super::{GlobalSequence, RunArtifacts, RunOptions, SavedRank, StrategyKind};
use crate::collectives::{Direction, RankCtx, RankId, TimelineEvent, VirtualCluster, VirtualTimeline, VolumeLedger};
use crate::error::{Error, Result};
use crate::gla::{
    chunkwise_forward, forward_outputs_with, global_correct, intra_precompute, local_state_scan, CumDecay, ModelDims,
    SeqShard, State,
};
use crate::tensor::{Real, Tensor};

struct RankForward<T> {
    outputs: Tensor<T>,
    last: State<T>,
    saved: SavedRank<T>,
}

pub(super) fn check_cluster<T: Real>(
    seq: &GlobalSequence<T>,
    strategy: StrategyKind,
    cluster: &VirtualCluster,
) -> Result<()> {
    if strategy.is_distributed() && cluster.ranks() != seq.ranks() {
        return Err(Error::Config(format!("{strategy} needs a {}-rank cluster, got {}", seq.ranks(), cluster.ranks())));
    }
    Ok(())
}

pub(super) fn decay_from_vec<T: Real>(dims: ModelDims, v: Vec<T>) -> Result<CumDecay<T>> {
    CumDecay::from_tensor(Tensor::from_vec(&[dims.heads, dims.key_dim], v)?)
}

pub(super) fn log2_ranks(p: usize) -> f64 {
    (p as f64).log2()
}

/// Forward pass of `seq` under `strategy`. Distributed strategies drive
/// `cluster`, whose rank count must equal `seq.ranks()`; the single-device
/// baseline leaves the cluster untouched.
pub fn run_forward<T: Real>(
    seq: &GlobalSequence<T>,
    strategy: StrategyKind,
    cluster: &mut VirtualCluster,
    opts: &RunOptions,
) -> Result<RunArtifacts<T>> {
    check_cluster(seq, strategy, cluster)?;
    opts.costs.validate()?;
    if strategy == StrategyKind::ZeCO {
        opts.pipe.check(seq.dims().key_dim)?;
    }
    if strategy == StrategyKind::SingleDevice {
        return single_forward(seq, opts);
    }
    let shards = seq.split()?;
    let p = seq.ranks();
    let dims = seq.dims();
    let record = cluster.run(|ctx: &mut RankCtx<'_, T>| {
        let shard = &shards[ctx.index()];
        match strategy {
            StrategyKind::ZeCO => zeco_rank(ctx, shard, opts),
            StrategyKind::Lasp1 => lasp1_rank(ctx, shard, opts),
            StrategyKind::Lasp2 => lasp2_rank(ctx, shard, opts),
            StrategyKind::SingleDevice => unreachable!("handled above"),
        }
    })?;

    let outputs = Tensor::concat_axis1(&record.results.iter().map(|r| &r.outputs).collect::<Vec<_>>())?;
    let mut boundary_states: Vec<State<T>> = record.results.iter().map(|r| r.saved.prev.clone()).collect();
    boundary_states.push(record.results.last().map_or_else(|| State::zeros(dims), |r| r.last.clone()));
    Ok(RunArtifacts {
        strategy,
        ranks: p,
        outputs: Some(outputs),
        grads: None,
        ledger: record.ledger,
        timeline: record.timeline,
        boundary_states,
        saved: Some(record.results.into_iter().map(|r| r.saved).collect()),
    })
}

fn saved_rank<T: Real>(prev: State<T>, scan: crate::gla::LocalScan<T>, opts: &RunOptions) -> SavedRank<T> {
    SavedRank { prev, cumdecay: scan.cumdecay, local_states: opts.save_all_states.then_some(scan.states) }
}

fn zeco_rank<T: Real>(ctx: &mut RankCtx<'_, T>, shard: &SeqShard<T>, opts: &RunOptions) -> Result<RankForward<T>> {
    let n = shard.layout.num_chunks() as f64;
    let c = &opts.costs;
    let scan = local_state_scan(shard)?;
    ctx.compute("local_scan", n * c.chunk_scan);
    // Stream 1: the state exchange. Stream 2: intra-chunk scores.
    let (prev, last) = ctx.all_scan(scan.last_state(), scan.total_decay(), opts.pipe, Direction::Fwd)?;
    let scores = intra_precompute(shard)?;
    ctx.compute("intra", n * c.chunk_intra);
    ctx.join();
    let outputs = forward_outputs_with(shard, &scan.states, &scan.cumdecay, &prev, &scores)?;
    ctx.compute("outputs", n * c.chunk_output);
    Ok(RankForward { outputs, last, saved: saved_rank(prev, scan, opts) })
}

fn lasp1_rank<T: Real>(ctx: &mut RankCtx<'_, T>, shard: &SeqShard<T>, opts: &RunOptions) -> Result<RankForward<T>> {
    let (r, p) = (ctx.index(), ctx.ranks());
    let n = shard.layout.num_chunks() as f64;
    let c = &opts.costs;
    let prev = match r {
        0 => State::zeros(shard.dims),
        _ => State::from_vec(shard.dims, ctx.recv(RankId(r - 1))?)?,
    };
    ctx.join();
    let fwd = chunkwise_forward(shard, &prev)?;
    ctx.compute("local_scan", n * c.chunk_scan);
    ctx.compute("intra", n * c.chunk_intra);
    ctx.compute("outputs", n * c.chunk_output);
    let last = fwd.scan.last_state().decayed_add(fwd.scan.total_decay(), &prev)?;
    ctx.compute("state_update", c.state_update);
    if r + 1 < p {
        ctx.send(RankId(r + 1), last.as_slice().to_vec())?;
    }
    Ok(RankForward { outputs: fwd.outputs, last, saved: saved_rank(prev, fwd.scan, opts) })
}

fn lasp2_rank<T: Real>(ctx: &mut RankCtx<'_, T>, shard: &SeqShard<T>, opts: &RunOptions) -> Result<RankForward<T>> {
    let (r, p) = (ctx.index(), ctx.ranks());
    let dims = shard.dims;
    let n = shard.layout.num_chunks() as f64;
    let c = &opts.costs;
    let scan = local_state_scan(shard)?;
    ctx.compute("local_scan", n * c.chunk_scan);
    let states = ctx.all_gather(scan.last_state())?;
    let decays = ctx.all_gather_vec(scan.total_decay().log_values().data().to_vec(), "all_gather_decay")?;
    ctx.join();
    let mut prev = State::zeros(dims);
    for (s, d) in states.iter().zip(decays).take(r) {
        prev = s.decayed_add(&decay_from_vec(dims, d)?, &prev)?;
    }
    let last = scan.last_state().decayed_add(scan.total_decay(), &prev)?;
    ctx.compute("reduce", (log2_ranks(p) + n) * c.state_update);
    let scores = intra_precompute(shard)?;
    ctx.compute("intra", n * c.chunk_intra);
    let outputs = forward_outputs_with(shard, &scan.states, &scan.cumdecay, &prev, &scores)?;
    ctx.compute("outputs", n * c.chunk_output);
    Ok(RankForward { outputs, last, saved: saved_rank(prev, scan, opts) })
}

/// Serial compute-only timeline on rank 0.
pub(super) fn serial_timeline(phases: &[(&str, f64)]) -> VirtualTimeline {
    let mut t = 0.0;
    let mut events = Vec::new();
    for &(label, cost) in phases {
        if cost > 0.0 {
            events.push(TimelineEvent { rank: 0, label: format!("compute:{label}"), start: t, end: t + cost });
            t += cost;
        }
    }
    VirtualTimeline::new(events)
}

fn single_forward<T: Real>(seq: &GlobalSequence<T>, opts: &RunOptions) -> Result<RunArtifacts<T>> {
    let full = seq.full();
    let dims = seq.dims();
    let fwd = chunkwise_forward(full, &State::zeros(dims))?;
    let per_rank = seq.rank_layout().num_chunks();
    let boundary_states = (0..=seq.ranks()).map(|p| fwd.scan.states[p * per_rank].clone()).collect();
    let n = full.layout.num_chunks() as f64;
    let c = &opts.costs;
    let timeline = serial_timeline(&[
        ("local_scan", n * c.chunk_scan),
        ("intra", n * c.chunk_intra),
        ("outputs", n * c.chunk_output),
    ]);
    Ok(RunArtifacts {
        strategy: StrategyKind::SingleDevice,
        ranks: 1,
        outputs: Some(fwd.outputs),
        grads: None,
        ledger: VolumeLedger::new(1),
        timeline,
        boundary_states,
        saved: Some(vec![saved_rank(State::zeros(dims), fwd.scan, opts)]),
    })
}

/// Global states at every chunk boundary of the concatenated sequence,
/// `P·N + 1` in total, materialized from a forward run's rank-boundary
/// states. Forward passes never build these; they correct lazily.
pub fn materialize_states<T: Real>(seq: &GlobalSequence<T>, fwd: &RunArtifacts<T>) -> Result<Vec<State<T>>> {
    if fwd.boundary_states.len() != seq.ranks() + 1 {
        return Err(Error::State(format!(
            "expected {} boundary states, artifacts hold {}",
            seq.ranks() + 1,
            fwd.boundary_states.len()
        )));
    }
    let mut out = vec![fwd.boundary_states[0].clone()];
    for (shard, prev) in seq.split()?.iter().zip(&fwd.boundary_states) {
        let scan = local_state_scan(shard)?;
        out.extend(global_correct(&scan.states, &scan.cumdecay, prev)?.into_iter().skip(1));
    }
    Ok(out)
}
