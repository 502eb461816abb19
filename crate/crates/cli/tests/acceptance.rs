//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use zeco_core::cost::{cost_report, CostParams};
use zeco_core::engine::{materialize_states, run_backward, run_forward, ComputeCosts, DEFAULT_FLOP_RATE};
use zeco_core::gla::{finite_diff_grad, recurrent_forward};
use zeco_core::instance::{rng, uniform_tensor};
use zeco_core::{
    CumDecay, Direction, GlobalSequence, ModelDims, NetConfig, PipelineConfig, RankCtx, RunOptions, State,
    StrategyKind, Tensor, VirtualCluster,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn zeco(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_zeco")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).expect("utf-8 report"))
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn fwd(
    seq: &GlobalSequence<f64>,
    kind: StrategyKind,
    net: NetConfig,
    opts: &RunOptions,
) -> zeco_core::RunArtifacts<f64> {
    run_forward(seq, kind, &mut VirtualCluster::new(seq.ranks(), net).unwrap(), opts).unwrap()
}

const GRID_SEEDS: u64 = 20;
const GRID_RANKS: [usize; 4] = [1, 2, 4, 8];
const GRID_CHUNKS: [usize; 2] = [16, 64];

fn grid_dims() -> ModelDims {
    ModelDims::new(2, 16, 16).unwrap()
}

fn c1_oracle_equivalence() -> Verdict {
    const TOL: f64 = 1e-10;
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for seed in 0..GRID_SEEDS {
        for p in GRID_RANKS {
            for c in GRID_CHUNKS {
                let seq = GlobalSequence::<f64>::random(seed, grid_dims(), p, 256, c).unwrap();
                let rec = recurrent_forward(seq.full(), &State::zeros(grid_dims())).unwrap();
                let opts = RunOptions::new(PipelineConfig::new(4).unwrap(), ComputeCosts::zero());
                for kind in StrategyKind::ALL {
                    let a = fwd(&seq, kind, NetConfig::default(), &opts);
                    worst = worst.max(a.outputs().unwrap().rel_err(&rec.outputs));
                    runs += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= TOL && secs < 60.0,
        format!("{runs} runs, max rel err {worst:.3e} (tol {TOL:e}), {secs:.1} s (limit 60 s)"),
    )
}

fn c2_boundary_states() -> Verdict {
    const TOL: f64 = 1e-12;
    let mut worst: f64 = 0.0;
    for seed in 0..GRID_SEEDS {
        for p in GRID_RANKS {
            for c in GRID_CHUNKS {
                let seq = GlobalSequence::<f64>::random(seed, grid_dims(), p, 256, c).unwrap();
                let rec = recurrent_forward(seq.full(), &State::zeros(grid_dims())).unwrap();
                let a = fwd(&seq, StrategyKind::ZeCO, NetConfig::default(), &RunOptions::default());
                let states = materialize_states(&seq, &a).unwrap();
                assert_eq!(states.len(), rec.boundary_states.len());
                for (x, y) in states.iter().zip(&rec.boundary_states) {
                    worst = worst.max(x.tensor().rel_err(y.tensor()));
                }
                let per_rank = 256 / c;
                for (i, b) in a.boundary_states.iter().enumerate() {
                    worst = worst.max(b.tensor().rel_err(rec.boundary_states[i * per_rank].tensor()));
                }
            }
        }
    }
    verdict(worst <= TOL, format!("max rel err {worst:.3e} over every chunk boundary (tol {TOL:e})"))
}

fn c3_gradcheck() -> Verdict {
    const TOL: f64 = 1e-5;
    const STEP: f64 = 1e-5;
    let dims = ModelDims::new(1, 4, 4).unwrap();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..12u64 {
        for c in [2, 4] {
            let seq = GlobalSequence::<f64>::random(seed, dims, 2, 8, c).unwrap();
            let d_out = uniform_tensor(&mut rng(seed + 1000), &[1, 16, 4], -1.0, 1.0);
            let mut cluster = VirtualCluster::new(2, NetConfig::default()).unwrap();
            let opts = RunOptions::new(PipelineConfig::new(2).unwrap(), ComputeCosts::zero());
            let f = run_forward(&seq, StrategyKind::ZeCO, &mut cluster, &opts).unwrap();
            let b = run_backward(&seq, &d_out, StrategyKind::ZeCO, &mut cluster, &opts, &f).unwrap();
            let fd = finite_diff_grad(seq.full(), &d_out, STEP).unwrap();
            worst = worst.max(b.grads().unwrap().max_rel_err(&fd));
            cases += 1;
        }
    }
    verdict(worst <= TOL, format!("{cases} cases (P=2, L=8, C in {{2,4}}), max rel err {worst:.3e} (tol {TOL:e})"))
}

fn c4_volume() -> Verdict {
    let dims = ModelDims::new(2, 8, 8).unwrap();
    let s = dims.state_len() as u64;
    let mut ok = true;
    let mut zeco_sent = Vec::new();
    for p in [2, 4, 8, 16, 32] {
        let seq = GlobalSequence::<f64>::random(p as u64, dims, p, 16, 8).unwrap();
        let z = fwd(&seq, StrategyKind::ZeCO, NetConfig::default(), &RunOptions::default());
        let l2 = fwd(&seq, StrategyKind::Lasp2, NetConfig::default(), &RunOptions::default());
        for r in 0..p {
            let want = if r + 1 < p { s } else { 0 };
            ok &= z.ledger.sent(r) == want;
            ok &= l2.ledger.counts(r, "all_gather").received == (p as u64 - 1) * s;
        }
        zeco_sent.push(z.ledger.sent(0));
    }
    verdict(ok, format!("S={s}: ZeCO per-rank sent {zeco_sent:?} for P=2..32; LASP-2 per-rank received (P-1)S exactly"))
}

fn simulate_all_scan(net: NetConfig, dims: ModelDims, p: usize, k: usize) -> f64 {
    let mut cluster = VirtualCluster::new(p, net).unwrap();
    let local = State::<f64>::zeros(dims);
    let decay = CumDecay::identity(dims);
    let pipe = PipelineConfig::new(k).unwrap();
    cluster.run(|ctx: &mut RankCtx<'_, f64>| ctx.all_scan(&local, &decay, pipe, Direction::Fwd)).unwrap();
    cluster.timeline().makespan()
}

fn c5_pipelined_latency() -> Verdict {
    const TOL: f64 = 1e-9;
    let dims = ModelDims::new(2, 8, 8).unwrap();
    let s = dims.state_len() as f64;
    let beta = 1e3;
    let mut worst: f64 = 0.0;
    let mut chain_worst: f64 = 0.0;
    for alpha in [0.0, 0.01] {
        let net = NetConfig::new(alpha, beta).unwrap();
        for p in [2, 4, 8, 16] {
            for k in [1, 2, 4, 8] {
                let sim = simulate_all_scan(net, dims, p, k);
                let block = alpha + s / (k as f64 * beta);
                let law = if alpha == 0.0 {
                    s / beta + (p - 1) as f64 * (s / beta) / k as f64
                } else {
                    (k + p - 1) as f64 * block
                };
                worst = worst.max((sim - law).abs() / law);
                let chain = (k + p - 2) as f64 * block;
                chain_worst = chain_worst.max((sim - chain).abs() / chain);
            }
        }
    }
    verdict(
        worst <= TOL,
        format!(
            "max rel err vs closed form {worst:.3e} (tol {TOL:e}); simulated chain equals (K+P-2)(a+S/(Kb)) to {chain_worst:.1e}: \
             the closed form charges one extra block transfer (P hops on a P-1 link chain)"
        ),
    )
}

fn c6_k_invariance() -> Verdict {
    let dims = ModelDims::new(2, 16, 4).unwrap();
    let mut ok = true;
    let mut checked = 0;
    for seed in 0..10u64 {
        let p = 2 + (seed as usize % 7);
        let mut r = rng(seed);
        let states: Vec<State<f64>> = (0..p)
            .map(|_| State::from_tensor(uniform_tensor(&mut r, &dims.state_shape(), -1.0, 1.0)).unwrap())
            .collect();
        let decays: Vec<CumDecay<f64>> =
            (0..p).map(|_| CumDecay::from_tensor(uniform_tensor(&mut r, &[2, 16], -2.0, 0.0)).unwrap()).collect();
        let mut base = None;
        for k in [1, 2, 4, 8, 16] {
            for dir in [Direction::Fwd, Direction::Bwd] {
                let mut cluster = VirtualCluster::new(p, NetConfig::default()).unwrap();
                let pipe = PipelineConfig::new(k).unwrap();
                let rec = cluster
                    .run(|ctx: &mut RankCtx<'_, f64>| {
                        ctx.all_scan(&states[ctx.index()], &decays[ctx.index()], pipe, dir)
                    })
                    .unwrap();
                let bits: Vec<u64> = rec
                    .results
                    .iter()
                    .flat_map(|(a, b)| a.as_slice().iter().chain(b.as_slice()))
                    .map(|x| x.to_bits())
                    .collect();
                let key = (dir == Direction::Fwd, bits);
                match &base {
                    None if dir == Direction::Fwd => base = Some(key.1.clone()),
                    Some(b) if dir == Direction::Fwd => ok &= *b == key.1,
                    _ => {}
                }
                checked += 1;
            }
        }
        // The same holds end to end through the engine.
        let seq = GlobalSequence::<f64>::random(seed, dims, p, 32, 8).unwrap();
        let outs: Vec<Tensor<f64>> = [1, 2, 4, 8, 16]
            .iter()
            .map(|&k| {
                let o = RunOptions::new(PipelineConfig::new(k).unwrap(), ComputeCosts::zero());
                fwd(&seq, StrategyKind::ZeCO, NetConfig::default(), &o).outputs.unwrap()
            })
            .collect();
        ok &= outs.windows(2).all(|w| w[0] == w[1]);
    }
    verdict(ok, format!("{checked} all-scan runs over K in {{1,2,4,8,16}} and engine outputs: bit-identical"))
}

fn c7_ordering() -> Verdict {
    const DRAWS: usize = 1000;
    const SLOPE_TOL: f64 = 0.01;
    let mut r = rng(7);
    let mut model_ok = 0;
    let mut sim_ok = 0;
    for draw in 0..DRAWS {
        let p = r.random_range(2..=16usize);
        let dims = ModelDims::new(r.random_range(1..=2), [8, 16][r.random_range(0..2)], [16, 32][r.random_range(0..2)])
            .unwrap();
        let k = [1, 2, 4, 8][r.random_range(0..4)];
        let l = [16, 32, 64][r.random_range(0..3)];
        let costs = ComputeCosts::from_flops(dims, 8, DEFAULT_FLOP_RATE).unwrap();
        let t_ideal = (l / 8) as f64 * (costs.chunk_scan + costs.chunk_intra + costs.chunk_output);
        // Communication-to-compute ratio, log-uniform in [1e-2, 10].
        let rho = 10f64.powf(r.random_range(-2.0..1.0));
        let net = NetConfig::new(0.0, dims.state_len() as f64 / (rho * t_ideal)).unwrap();
        let params = CostParams::new(net, dims, p, k, costs, l, 8).unwrap();
        let m = cost_report(&params).unwrap();
        model_ok += usize::from(m.t_zeco < m.t_lasp2 && m.t_lasp2 < m.t_lasp1);

        let seq = GlobalSequence::<f64>::random(draw as u64, dims, p, l, 8).unwrap();
        let opts = RunOptions::new(PipelineConfig::new(k).unwrap(), costs);
        let span = |kind| fwd(&seq, kind, net, &opts).makespan();
        let (z, l2, l1) = (span(StrategyKind::ZeCO), span(StrategyKind::Lasp2), span(StrategyKind::Lasp1));
        sim_ok += usize::from(z < l2 && l2 < l1);
    }

    let dims = ModelDims::new(2, 16, 16).unwrap();
    let costs = ComputeCosts::from_flops(dims, 16, DEFAULT_FLOP_RATE).unwrap();
    let net = NetConfig::new(0.0, 1e6).unwrap();
    let ranks = [2usize, 4, 8, 16, 32];
    let spans: Vec<f64> = ranks
        .iter()
        .map(|&p| {
            let seq = GlobalSequence::<f64>::random(1, dims, p, 64, 16).unwrap();
            fwd(&seq, StrategyKind::Lasp1, net, &RunOptions::new(PipelineConfig::default(), costs)).makespan()
        })
        .collect();
    let n = ranks.len() as f64;
    let mx = ranks.iter().map(|&p| p as f64).sum::<f64>() / n;
    let my = spans.iter().sum::<f64>() / n;
    let sxy: f64 = ranks.iter().zip(&spans).map(|(&p, y)| (p as f64 - mx) * (y - my)).sum();
    let sxx: f64 = ranks.iter().map(|&p| (p as f64 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let want = costs.rank_forward(4) + net.tau(dims.state_len() as f64);
    let slope_err = (slope - want).abs() / want;
    verdict(
        model_ok == DRAWS && sim_ok == DRAWS && slope_err <= SLOPE_TOL,
        format!(
            "model {model_ok}/{DRAWS}, simulator {sim_ok}/{DRAWS} draws ordered (alpha=0, comm/compute in [1e-2,10]); \
             LASP-1 slope {slope:.6e} vs {want:.6e}, rel err {slope_err:.1e} (tol {SLOPE_TOL})"
        ),
    )
}

fn c8_table() -> Verdict {
    let (p, h, e, l, c) = (8u128, 32u128, 128u128, 8192u128, 64u128);
    let (code, out) = zeco(&[
        "cost",
        "--ranks",
        "8",
        "--heads",
        "32",
        "--dk",
        "128",
        "--dv",
        "128",
        "--seq-per-rank",
        "8192",
        "--chunk",
        "64",
    ]);
    let d = h * e;
    let de = d * e;
    let n = l / c;
    let log2p = 3;
    let expected: [(&str, u128, u128); 5] = [
        ("ulysses", 4 * l * d, l * l * d * p),
        ("megatron_cp", 2 * p * l * d, l * l * d * p),
        ("lasp1", p * de, p * l * de),
        ("lasp2", p * de, l * de + log2p * de + n * de),
        ("zeco", de, l * de + n * de + n * d),
    ];
    let rows = csv_rows(&out);
    let mut ok = code == 0 && rows.len() == 5;
    for (row, (name, vol, comp)) in rows.iter().zip(expected) {
        ok &= row[0] == name && row[6] == vol.to_string() && row[7] == comp.to_string();
    }
    ok &= expected[4].1 == 524288 && expected[3].1 == 8 * 524288 && expected[0].1 == 134217728;

    let (vcode, vout) = zeco(&[
        "volume",
        "--ranks",
        "8",
        "--heads",
        "2",
        "--dk",
        "8",
        "--dv",
        "8",
        "--seq-per-rank",
        "16",
        "--chunk",
        "8",
    ]);
    let vrows = csv_rows(&vout);
    let get = |m: &str| vrows.iter().find(|r| r[0] == m).cloned().unwrap_or_default();
    let lasp2 = get("lasp2");
    let zeco_row = get("zeco");
    ok &= vcode == 0
        && lasp2.get(9).map(String::as_str) == Some("128")
        && lasp2.get(10).map(String::as_str) == Some("true");
    ok &= zeco_row.get(9).map(String::as_str) == Some("0") && zeco_row.get(10).map(String::as_str) == Some("false");
    verdict(
        ok,
        format!(
            "5 table rows match exactly at P=8, D=4096, e=128, L=8192; LASP-2 table PDe vs measured (P-1)De flagged (discrepancy De={}), ZeCO discrepancy 0",
            lasp2.get(9).cloned().unwrap_or_default()
        ),
    )
}

fn c9_gather_scan_sweep() -> Verdict {
    const THRESHOLD: f64 = 3.0;
    let (code, out) = zeco(&["bench", "--collectives-only", "--sweep-ranks", "8,16,32,64,128,256"]);
    let rows = csv_rows(&out);
    let span = |name: &str, p: usize| -> f64 {
        rows.iter().find(|r| r[0] == name && r[1] == p.to_string()).map(|r| r[7].parse().unwrap()).unwrap()
    };
    let ratios: Vec<f64> =
        [8, 16, 32, 64, 128, 256].iter().map(|&p| span("all_gather", p) / span("all_scan", p)).collect();
    let monotone = ratios.windows(2).all(|w| w[1] > w[0]);
    let last = *ratios.last().unwrap();
    verdict(
        code == 0 && monotone && last > THRESHOLD,
        format!(
            "all-gather/all-scan ratio {} (alpha=0, beta=1e9, K=4), monotone={monotone}, P=256 ratio {last:.3} (> {THRESHOLD})",
            ratios.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn c10_determinism() -> Verdict {
    let small = [
        "--ranks",
        "3",
        "--seq-per-rank",
        "16",
        "--chunk",
        "8",
        "--heads",
        "1",
        "--dk",
        "4",
        "--dv",
        "4",
        "--pipeline-blocks",
        "2",
    ];
    let mut ok = true;
    let mut compared = 0;
    for cmd in ["verify", "bench", "cost", "volume"] {
        for format in ["csv", "json"] {
            let args: Vec<&str> = [cmd].into_iter().chain(small).chain(["--format", format]).collect();
            let a = zeco(&args);
            let b = zeco(&args);
            ok &= a.0 == 0 && a == b && !a.1.is_empty();
            compared += 1;
        }
    }
    verdict(ok, format!("{compared} command/format pairs run twice: byte-identical reports"))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", c1_oracle_equivalence),
        ("corrected boundary states", c2_boundary_states),
        ("distributed gradcheck", c3_gradcheck),
        ("zero-overhead volume", c4_volume),
        ("pipelined latency law", c5_pipelined_latency),
        ("K-invariance", c6_k_invariance),
        ("strategy-time ordering", c7_ordering),
        ("volume/compute table", c8_table),
        ("all-gather vs all-scan sweep", c9_gather_scan_sweep),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| verdict(false, "panicked".into()));
        failed += usize::from(!v.pass);
        println!("criterion {:>2} [{}] {name}: {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
