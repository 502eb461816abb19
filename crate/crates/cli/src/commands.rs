//! The four subcommands, each producing a [`Report`].

use rand::Rng;
use zeco_core::cost::{cost_report, volume_compute_table, CostParams, Method};
use zeco_core::engine::{materialize_states, run_backward, run_forward};
use zeco_core::gla::{finite_diff_sampled, recurrent_forward, GradEntry, GradInput};
use zeco_core::instance::{rng, uniform_tensor};
use zeco_core::{
    CumDecay, Direction, GlobalSequence, PipelineConfig, Precision, RankCtx, Real, RunOptions, State, StrategyKind,
    Tensor, VirtualCluster,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::report::{Cell, Report};

/// Forward and backward equivalence tolerance against the single-device run.
pub const EQUIV_TOL: f64 = 1e-10;
/// Rank-boundary states against the token recurrence.
pub const STATE_TOL: f64 = 1e-12;
/// Sampled central differences against the distributed backward.
pub const GRAD_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;
/// Coordinates sampled per input tensor by the gradient check.
pub const FD_SAMPLES: usize = 8;

fn cotangent(seed: u64, seq: &GlobalSequence<f64>) -> Tensor<f64> {
    let d = seq.dims();
    uniform_tensor(&mut rng(seed ^ 0x9e37_79b9_7f4a_7c15), &[d.heads, seq.total_len(), d.value_dim], -1.0, 1.0)
}

fn opts(cfg: &ExperimentConfig) -> RunOptions {
    RunOptions::new(cfg.pipe, cfg.costs())
}

/// Equivalence and gradient checks; the flag is true iff every row passes.
pub fn verify(cfg: &ExperimentConfig) -> Result<(Report, bool), CliError> {
    if cfg.precision != Precision::F64 {
        return Err(CliError::Usage("verify compares against f64 oracles; rerun with --precision f64".into()));
    }
    let mut report = Report::new(&[
        "check",
        "strategy",
        "P",
        "L",
        "C",
        "h",
        "ek",
        "ev",
        "K",
        "seed",
        "max_rel_err",
        "tolerance",
        "pass",
    ]);
    let mut all_pass = true;
    let mut row = |check: &str, err: f64, tol: f64| {
        let pass = err <= tol;
        all_pass &= pass;
        report.push(vec![
            check.into(),
            cfg.strategy.name().into(),
            cfg.ranks.into(),
            cfg.layout.seq_len.into(),
            cfg.layout.chunk_len.into(),
            cfg.dims.heads.into(),
            cfg.dims.key_dim.into(),
            cfg.dims.value_dim.into(),
            cfg.pipe.num_blocks().into(),
            cfg.seed.into(),
            err.into(),
            tol.into(),
            pass.into(),
        ]);
    };

    let seq = GlobalSequence::<f64>::random(cfg.seed, cfg.dims, cfg.ranks, cfg.layout.seq_len, cfg.layout.chunk_len)?;
    let o = opts(cfg);
    let d_out = cotangent(cfg.seed, &seq);
    let mut cluster = VirtualCluster::new(cfg.ranks, cfg.net)?;
    let single_f = run_forward(&seq, StrategyKind::SingleDevice, &mut cluster, &o)?;
    let single_b = run_backward(&seq, &d_out, StrategyKind::SingleDevice, &mut cluster, &o, &single_f)?;
    let fwd = run_forward(&seq, cfg.strategy, &mut cluster, &o)?;
    let bwd = run_backward(&seq, &d_out, cfg.strategy, &mut cluster, &o, &fwd)?;

    let rec = recurrent_forward(seq.full(), &State::zeros(cfg.dims))?;
    row("forward_vs_recurrence", fwd.outputs()?.rel_err(&rec.outputs), EQUIV_TOL);
    row("forward_vs_single", fwd.outputs()?.rel_err(single_f.outputs()?), EQUIV_TOL);

    let states = materialize_states(&seq, &fwd)?;
    let state_err =
        states.iter().zip(&rec.boundary_states).map(|(a, b)| a.tensor().rel_err(b.tensor())).fold(0.0, f64::max);
    row("boundary_states", state_err, STATE_TOL);
    row("backward_vs_single", bwd.grads()?.max_rel_err(single_b.grads()?), EQUIV_TOL);

    let mut r = rng(cfg.seed ^ 0x5151);
    let d = cfg.dims;
    let entries: Vec<GradEntry> = GradInput::ALL
        .iter()
        .flat_map(|&input| {
            let width = if input == GradInput::V { d.value_dim } else { d.key_dim };
            (0..FD_SAMPLES)
                .map(|_| GradEntry {
                    input,
                    head: r.random_range(0..d.heads),
                    token: r.random_range(0..seq.total_len()),
                    channel: r.random_range(0..width),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let fd = finite_diff_sampled(seq.full(), &d_out, FD_STEP, &entries)?;
    let grads = bwd.grads()?;
    let mut grad_err: f64 = 0.0;
    for input in GradInput::ALL {
        let (mut num, mut den) = (0.0, 0.0);
        for (e, f) in entries.iter().zip(&fd).filter(|(e, _)| e.input == input) {
            let t = input.grad(grads);
            let a = t.data()[e.flat_index(t.shape())];
            num += (a - f) * (a - f);
            den += a * a;
        }
        grad_err = grad_err.max(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() });
    }
    row("gradcheck_sampled", grad_err, GRAD_TOL);
    Ok((report, all_pass))
}

struct Measured {
    makespan: f64,
    exposed: f64,
    sent: u64,
    received: u64,
}

/// Runs `f` `warmup + repeats` times and averages the timed repeats.
fn repeat(cfg: &ExperimentConfig, mut f: impl FnMut() -> Result<Measured, CliError>) -> Result<Measured, CliError> {
    for _ in 0..cfg.warmup {
        f()?;
    }
    let mut acc = Measured { makespan: 0.0, exposed: 0.0, sent: 0, received: 0 };
    for _ in 0..cfg.repeats {
        let m = f()?;
        acc = Measured { makespan: acc.makespan + m.makespan, exposed: acc.exposed + m.exposed, ..m };
    }
    let n = cfg.repeats as f64;
    Ok(Measured { makespan: acc.makespan / n, exposed: acc.exposed / n, ..acc })
}

/// Makespan and volume of one All-Scan over zero states.
pub fn simulate_all_scan(cfg: &ExperimentConfig, ranks: usize, blocks: usize) -> Result<(f64, u64), CliError> {
    let mut cluster = VirtualCluster::new(ranks, cfg.net)?;
    let local = State::<f64>::zeros(cfg.dims);
    let decay = CumDecay::identity(cfg.dims);
    let pipe = PipelineConfig::new(blocks)?;
    let rec = cluster.run(|ctx: &mut RankCtx<'_, f64>| ctx.all_scan(&local, &decay, pipe, Direction::Fwd))?;
    Ok((rec.timeline.makespan(), rec.ledger.total_sent()))
}

/// Makespan and volume of one state All-Gather.
pub fn simulate_all_gather(cfg: &ExperimentConfig, ranks: usize) -> Result<(f64, u64), CliError> {
    let mut cluster = VirtualCluster::new(ranks, cfg.net)?;
    let local = State::<f64>::zeros(cfg.dims);
    let rec = cluster.run(|ctx: &mut RankCtx<'_, f64>| ctx.all_gather(&local))?;
    Ok((rec.timeline.makespan(), rec.ledger.total_sent()))
}

fn strategy_run<T: Real>(
    cfg: &ExperimentConfig,
    kind: StrategyKind,
    ranks: usize,
    blocks: usize,
) -> Result<Measured, CliError> {
    let seq = GlobalSequence::<T>::random(cfg.seed, cfg.dims, ranks, cfg.layout.seq_len, cfg.layout.chunk_len)?;
    let mut cluster = VirtualCluster::new(ranks, cfg.net)?;
    let o = RunOptions::new(PipelineConfig::new(blocks)?, cfg.costs());
    let a = run_forward(&seq, kind, &mut cluster, &o)?;
    Ok(Measured {
        makespan: a.makespan(),
        exposed: a.comm_exposed(),
        sent: a.ledger.total_sent(),
        received: a.ledger.total_received(),
    })
}

/// Virtual-time sweep over `(P, K)`: collectives alone, then full forward
/// runs of each strategy. Volumes are cluster totals.
pub fn bench(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mut report = Report::new(&[
        "strategy",
        "P",
        "K",
        "L",
        "h",
        "ek",
        "ev",
        "sim_makespan",
        "comm_exposed",
        "volume_sent",
        "volume_received",
    ]);
    let mut push = |name: &str, ranks: usize, blocks: Option<usize>, m: Measured| {
        report.push(vec![
            name.into(),
            ranks.into(),
            blocks.into(),
            cfg.layout.seq_len.into(),
            cfg.dims.heads.into(),
            cfg.dims.key_dim.into(),
            cfg.dims.value_dim.into(),
            m.makespan.into(),
            m.exposed.into(),
            m.sent.into(),
            m.received.into(),
        ]);
    };
    let collective = |(t, v): (f64, u64)| Measured { makespan: t, exposed: t, sent: v, received: v };
    for &ranks in &cfg.sweep_ranks {
        for &blocks in &cfg.sweep_blocks {
            let m = repeat(cfg, || simulate_all_scan(cfg, ranks, blocks).map(collective))?;
            push("all_scan", ranks, Some(blocks), m);
        }
        let m = repeat(cfg, || simulate_all_gather(cfg, ranks).map(collective))?;
        push("all_gather", ranks, None, m);
        if cfg.collectives_only {
            continue;
        }
        for kind in StrategyKind::ALL {
            let sweep: Vec<Option<usize>> = match kind {
                StrategyKind::ZeCO => cfg.sweep_blocks.iter().copied().map(Some).collect(),
                _ => vec![None],
            };
            for blocks in sweep {
                let k = blocks.unwrap_or(1);
                let m = repeat(cfg, || match cfg.precision {
                    Precision::F64 => strategy_run::<f64>(cfg, kind, ranks, k),
                    Precision::F32 => strategy_run::<f32>(cfg, kind, ranks, k),
                })?;
                push(kind.name(), ranks, blocks, m);
            }
        }
    }
    Ok(report)
}

fn cost_params(cfg: &ExperimentConfig, ranks: usize) -> Result<CostParams, CliError> {
    Ok(CostParams::new(
        cfg.net,
        cfg.dims,
        ranks,
        cfg.pipe.num_blocks(),
        cfg.costs(),
        cfg.layout.seq_len,
        cfg.layout.chunk_len,
    )?)
}

/// Analytical time models and the volume/compute table, one block of rows
/// per swept rank count. `D = h · e_k`, `e = e_v`.
pub fn cost(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mut report =
        Report::new(&["method", "P", "L", "D", "e", "N", "volume_elements", "compute_ops", "t_model_seconds"]);
    for &ranks in &cfg.sweep_ranks {
        let p = cost_params(cfg, ranks)?;
        let r = cost_report(&p)?;
        for row in &r.rows {
            let compute = match row.compute.exact() {
                Some(v) => Cell::from(v),
                None => Cell::from(row.compute.value()),
            };
            report.push(vec![
                row.method.name().into(),
                ranks.into(),
                p.seq_per_rank.into(),
                (p.dims.heads * p.dims.key_dim).into(),
                p.dims.value_dim.into(),
                p.chunks.into(),
                row.volume.into(),
                compute,
                r.t_model(row.method).into(),
            ]);
        }
    }
    Ok(report)
}

/// Table volumes next to per-rank ledger measurements for the simulated
/// methods. ZeCO and LASP-1 are measured by the largest per-rank send,
/// LASP-2 by the largest per-rank state receive.
pub fn volume(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mut report = Report::new(&[
        "method",
        "P",
        "L",
        "D",
        "e",
        "table_volume",
        "physical_volume",
        "measured_volume",
        "measured_as",
        "discrepancy",
        "flagged",
    ]);
    for &ranks in &cfg.sweep_ranks {
        let p = cost_params(cfg, ranks)?;
        let seq = GlobalSequence::<f64>::random(cfg.seed, cfg.dims, ranks, cfg.layout.seq_len, cfg.layout.chunk_len)?;
        for (method, kind, primitive, received) in [
            (Method::Lasp1, StrategyKind::Lasp1, "p2p", false),
            (Method::Lasp2, StrategyKind::Lasp2, "all_gather", true),
            (Method::ZeCO, StrategyKind::ZeCO, "all_scan_fwd", false),
        ] {
            let mut cluster = VirtualCluster::new(ranks, cfg.net)?;
            let a = run_forward(&seq, kind, &mut cluster, &opts(cfg))?;
            let measured = (0..ranks)
                .map(|r| {
                    let c = a.ledger.counts(r, primitive);
                    if received {
                        c.received
                    } else {
                        c.sent
                    }
                })
                .max()
                .unwrap_or(0);
            let row = volume_compute_table(method, &p);
            let discrepancy = row.volume as i128 - measured as i128;
            let measured_as = format!("max_rank_{}_{primitive}", if received { "received" } else { "sent" });
            report.push(vec![
                method.name().into(),
                ranks.into(),
                p.seq_per_rank.into(),
                (p.dims.heads * p.dims.key_dim).into(),
                p.dims.value_dim.into(),
                row.volume.into(),
                row.physical_volume.into(),
                measured.into(),
                measured_as.into(),
                Cell::Int(discrepancy),
                (discrepancy != 0).into(),
            ]);
        }
    }
    Ok(report)
}
