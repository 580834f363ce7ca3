//! Scheduled execution of the chain on the simulated cluster.
//!
//! Every stage is lowered to per-core micro-op programs, executed on the
//! cycle-stepped engine, and verified value-by-value against the golden
//! chain. Each stage consumes the *golden* output of its predecessor, so a
//! divergence is pinned to the stage that caused it.
//!
//! Timing extrapolates honestly: a stage's work is cut into engine runs of
//! identical shape, one representative run is executed and verified, and the
//! cycle counts are scaled by the number of runs (a ragged final run is
//! charged at the full-run price). Single-core references run the same
//! arithmetic under the same placement discipline on one core — the
//! transform and multiply baselines on their natural layouts, the
//! estimation and equalisation baselines on the core's own banks — and are
//! prorated across capacity chunks so the baseline is never inflated by
//! chunk-boundary fill.

use serde::{Deserialize, Serialize};

use super::{kernel_macs, run_golden, GoldenChain, PipelineError, Stage, UseCaseConfig};
use crate::cluster::ClusterTopology;
use crate::engine::{
    run, BarrierSpec, ClusterMemory, ComputeOp, CycleStats, MicroOp, ProgramSet, Reg, RunOptions,
};
use crate::layouts::{
    counter_location, fft_fold_program, fft_replication, fft_serial_program, mmm_program,
    mmm_schedule, mmm_serial_program, BARRIER_COUNT_REG,
};
use crate::numerics::{fft_radix4, Complex32, TwiddleTable};

/// Largest simulated-vs-golden deviation tolerated at any stage boundary.
pub const SIM_TOLERANCE: f64 = 1e-4;

/// Top bank rows left untouched by stage data so barrier counters (which
/// live there) can never collide with it.
const LOCAL_MARGIN_ROWS: usize = 4;

/// Banks adjacent to one core in the tile model.
const LOCAL_BANKS_PER_CORE: usize = 4;

/// Prorates one measured chunk over the full work-item count, rounding up.
/// Charging whole chunk multiples instead would bill the single-core
/// baseline for fill cycles of chunks it never needs.
fn prorate(chunk_cycles: u64, total_items: usize, chunk_items: usize) -> u64 {
    (chunk_cycles * total_items as u64).div_ceil(chunk_items as u64)
}

/// How many independent instances ride between synchronisation points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Batching {
    /// Transforms per core set between stage barriers; `None` takes the
    /// topology's resident default.
    pub fft_batch: Option<usize>,
    /// Data symbols whose equalisation runs as one scheduling group.
    pub cholesky_batch: usize,
}

impl Default for Batching {
    fn default() -> Self {
        Self { fft_batch: None, cholesky_batch: 1 }
    }
}

/// Cycle budget split across the whole cluster for one stage (summed over
/// every core and every charged run).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StallBreakdown {
    pub issued: u64,
    pub raw: u64,
    pub lsu: u64,
    pub wfi: u64,
    pub idle_tail: u64,
    /// Arbitration wait of memory requests; overlaps the buckets above
    /// rather than adding to them.
    pub conflict_wait: u64,
}

impl StallBreakdown {
    fn from_stats(stats: &CycleStats) -> Self {
        let mut out = Self::default();
        for c in &stats.per_core {
            out.issued += c.issued;
            out.raw += c.raw_stalls;
            out.lsu += c.lsu_stalls;
            out.wfi += c.wfi_stalls;
            out.idle_tail += c.idle_tail;
            out.conflict_wait += c.conflict_wait;
        }
        out
    }

    fn scale(mut self, k: u64) -> Self {
        self.issued *= k;
        self.raw *= k;
        self.lsu *= k;
        self.wfi *= k;
        self.idle_tail *= k;
        self.conflict_wait *= k;
        self
    }
}

/// One stage's scheduled-execution summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    /// Complex MACs of the whole stage by the closed-form count.
    pub mac_count: u64,
    /// Independent work items the stage covers (transforms, symbols,
    /// estimates, resource elements).
    pub instances: u64,
    /// Identical engine runs the totals are scaled over.
    pub engine_runs: u64,
    pub cycles_per_run: u64,
    pub simulated_cycles: u64,
    pub single_core_cycles: u64,
    pub speedup: f64,
    pub ipc: f64,
    pub macs_per_cycle: f64,
    pub active_cores: usize,
    pub stalls: StallBreakdown,
    /// Largest simulated-vs-golden deviation seen on verified values.
    pub worst_error: f64,
}

/// Whole-chain totals plus the per-stage reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub stages: Vec<StageReport>,
    pub simulated_cycles: u64,
    pub single_core_cycles: u64,
    pub speedup: f64,
    /// Share of the simulated chain time per stage, in percent.
    pub stage_percent: Vec<(String, f64)>,
    pub evm: f64,
    pub sigma2_true: f32,
    pub sigma2_est: f32,
}

/// A verified simulated run with the golden chain it was checked against.
pub struct SimulatedChain {
    pub golden: GoldenChain,
    pub report: ChainReport,
}

// ---------------------------------------------------------------------------
// Small shared helpers
// ---------------------------------------------------------------------------

/// Words of a core's own banks that stage data may occupy.
fn usable_local_words(topo: &ClusterTopology) -> usize {
    LOCAL_BANKS_PER_CORE * (topo.words_per_bank - LOCAL_MARGIN_ROWS)
}

/// Address of local word `idx` of `core`, flattened across its banks and
/// skipping the counter margin at the top of each.
fn local_word(topo: &ClusterTopology, core: usize, idx: usize) -> usize {
    let per_bank = topo.words_per_bank - LOCAL_MARGIN_ROWS;
    let mut loc = topo.local_bank(core, idx / per_bank);
    loc.offset = idx % per_bank;
    topo.address_of(&loc).expect("core-local banks always map")
}

/// Splits `0..total` into `parts` contiguous ranges whose lengths differ by
/// at most one (longer ones first).
fn slice_ranges(total: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let base = total / parts;
    let extra = total % parts;
    let mut out = Vec::with_capacity(parts);
    let mut at = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(at..at + len);
        at += len;
    }
    out
}

fn track(worst: &mut f64, sim: Complex32, gold: Complex32) {
    let d = f64::from((sim - gold).norm());
    if d > *worst {
        *worst = d;
    }
}

/// Builds the stage report, enforcing the golden tolerance and the engine's
/// cycle-accounting identity.
#[allow(clippy::too_many_arguments)]
fn finish(
    stage: Stage,
    cfg: &UseCaseConfig,
    instances: usize,
    stats: &CycleStats,
    runs: u64,
    serial_total: u64,
    worst: f64,
) -> Result<StageReport, PipelineError> {
    if worst > SIM_TOLERANCE {
        return Err(PipelineError::GoldenMismatch {
            stage: stage.name(),
            worst,
            tolerance: SIM_TOLERANCE,
        });
    }
    let mac_count = kernel_macs(stage, cfg);
    let simulated = stats.total_cycles * runs;
    Ok(StageReport {
        stage: stage.name().to_string(),
        mac_count,
        instances: instances as u64,
        engine_runs: runs,
        cycles_per_run: stats.total_cycles,
        simulated_cycles: simulated,
        single_core_cycles: serial_total,
        speedup: serial_total as f64 / simulated as f64,
        ipc: stats.ipc(),
        macs_per_cycle: mac_count as f64 / simulated as f64,
        active_cores: stats.active_cores,
        stalls: StallBreakdown::from_stats(stats).scale(runs),
        worst_error: worst,
    })
}

fn timed_run(
    topo: &ClusterTopology,
    set: &ProgramSet,
    mem: &mut ClusterMemory,
) -> Result<CycleStats, PipelineError> {
    let stats = run(topo, set, mem, &RunOptions::default(), None)?;
    assert!(stats.accounting_exact(), "engine cycle accounting must be exact");
    Ok(stats)
}

// ---------------------------------------------------------------------------
// OFDM demodulation stage
// ---------------------------------------------------------------------------

fn ofdm_stage(
    cfg: &UseCaseConfig,
    topo: &ClusterTopology,
    golden: &GoldenChain,
    batching: &Batching,
) -> Result<StageReport, PipelineError> {
    let plan = fft_replication(cfg.n_fft, topo)?;
    let batches = match batching.fft_batch {
        None => plan.batches_per_set,
        Some(0) => {
            return Err(PipelineError::BatchingInvalid {
                reason: "fft_batch must be at least 1".into(),
            })
        }
        Some(b) => b,
    };
    let prog = fft_fold_program(cfg.n_fft, topo, &plan.core_sets, batches)?;
    let per_run = plan.core_sets.len() * batches;
    let total = cfg.n_symb * cfg.n_r;
    let staged = per_run.min(total);
    let inst_of = |i: usize| (i / cfg.n_r, i % cfg.n_r); // (symbol, antenna)

    let mut mem = ClusterMemory::zeroed(topo);
    for inst in 0..staged {
        let (s, r) = inst_of(inst);
        let (set, batch) = (inst / batches, inst % batches);
        for (i, &v) in golden.time_rx[s][r].as_slice().iter().enumerate() {
            mem.write(prog.input_addr(topo, set, batch, i), v);
        }
    }
    let stats = timed_run(topo, &prog.set, &mut mem)?;

    let tw = TwiddleTable::new(cfg.n_fft)?;
    let mut worst = 0.0f64;
    for inst in 0..staged {
        let (s, r) = inst_of(inst);
        let (set, batch) = (inst / batches, inst % batches);
        let want = fft_radix4(&golden.time_rx[s][r], &tw)?;
        for (k, &w) in want.as_slice().iter().enumerate() {
            track(&mut worst, mem.read(prog.output_addr(topo, set, batch, k)), w);
        }
    }
    let runs = total.div_ceil(per_run) as u64;

    let sprog = fft_serial_program(cfg.n_fft, topo, 0)?;
    let mut smem = ClusterMemory::zeroed(topo);
    for (i, &v) in golden.time_rx[0][0].as_slice().iter().enumerate() {
        smem.write(sprog.input_addr(topo, 0, 0, i), v);
    }
    let sstats = timed_run(topo, &sprog.set, &mut smem)?;
    let want = fft_radix4(&golden.time_rx[0][0], &tw)?;
    for (k, &w) in want.as_slice().iter().enumerate() {
        track(&mut worst, smem.read(sprog.output_addr(topo, 0, 0, k)), w);
    }
    let serial_total = sstats.total_cycles * total as u64;

    finish(Stage::OfdmDemod, cfg, total, &stats, runs, serial_total, worst)
}

// ---------------------------------------------------------------------------
// Beamforming stage
// ---------------------------------------------------------------------------

fn stage_bf_inputs(
    prog: &crate::layouts::MmmProgram,
    topo: &ClusterTopology,
    cfg: &UseCaseConfig,
    golden: &GoldenChain,
    mem: &mut ClusterMemory,
) {
    // A = received grid transposed (subcarriers x antennas), B = weights
    // transposed (antennas x beams): C = A B is the beam grid transposed.
    for sc in 0..cfg.n_sc {
        for k in 0..cfg.n_r {
            mem.write(prog.a_addr(topo, sc, k), golden.freq_rx[0].get(k, sc));
        }
    }
    for k in 0..cfg.n_r {
        for b in 0..cfg.n_b {
            mem.write(prog.b_addr(topo, k, b), golden.w.get(b, k));
        }
    }
}

fn bf_stage(
    cfg: &UseCaseConfig,
    topo: &ClusterTopology,
    golden: &GoldenChain,
) -> Result<StageReport, PipelineError> {
    let cores: Vec<usize> = (0..topo.num_cores()).collect();
    let sched = mmm_schedule(cfg.n_sc, cfg.n_r, cfg.n_b, topo, &cores)?;
    let prog = mmm_program(sched, topo);
    let mut mem = ClusterMemory::zeroed(topo);
    stage_bf_inputs(&prog, topo, cfg, golden, &mut mem);
    let stats = timed_run(topo, &prog.set, &mut mem)?;

    let mut worst = 0.0f64;
    for sc in 0..cfg.n_sc {
        for b in 0..cfg.n_b {
            track(&mut worst, mem.read(prog.c_addr(topo, sc, b)), golden.beamformed[0].get(b, sc));
        }
    }
    let runs = cfg.n_symb as u64;

    let sprog = mmm_serial_program(cfg.n_sc, cfg.n_r, cfg.n_b, topo, 0)?;
    let mut smem = ClusterMemory::zeroed(topo);
    stage_bf_inputs(&sprog, topo, cfg, golden, &mut smem);
    let sstats = timed_run(topo, &sprog.set, &mut smem)?;
    for sc in 0..cfg.n_sc {
        for b in 0..cfg.n_b {
            track(&mut worst, smem.read(sprog.c_addr(topo, sc, b)), golden.beamformed[0].get(b, sc));
        }
    }
    let serial_total = sstats.total_cycles * cfg.n_symb as u64;

    finish(Stage::Beamforming, cfg, cfg.n_symb, &stats, runs, serial_total, worst)
}

// ---------------------------------------------------------------------------
// Channel-estimation stage
// ---------------------------------------------------------------------------

const R_IN: Reg = 0;
const R_X: Reg = 1;
const R_ACC: Reg = 2;
const R_TMP: Reg = 3;

/// One comb estimate: divide each pilot-symbol observation by its known
/// pilot, accumulate, and scale by 1/P. `addr(i)` maps estimate-slot word
/// `i` — P inputs then the output.
fn emit_estimate(prog: &mut Vec<MicroOp>, addr: impl Fn(usize) -> usize, pilots: &[Complex32]) {
    let p = pilots.len();
    let c = |op, s0, s1, dst| MicroOp::Compute { op, s0, s1, dst };
    for (s, &x) in pilots.iter().enumerate() {
        prog.push(MicroOp::Load { addr: addr(s), dst: R_IN });
        prog.push(c(ComputeOp::Imm(x), 0, 0, R_X));
        if s == 0 {
            prog.push(c(ComputeOp::Div, R_IN, R_X, R_ACC));
        } else {
            prog.push(c(ComputeOp::Div, R_IN, R_X, R_TMP));
            prog.push(c(ComputeOp::Add, R_ACC, R_TMP, R_ACC));
        }
    }
    let inv_p = Complex32::new(1.0 / p as f32, 0.0);
    prog.push(c(ComputeOp::MulImm(inv_p), R_ACC, 0, R_ACC));
    prog.push(MicroOp::Store { addr: addr(p), src: R_ACC });
}

/// Decodes flat estimate index -> (group, beam, layer).
fn estimate_coords(cfg: &UseCaseConfig, e: usize) -> (usize, usize, usize) {
    let per_group = cfg.n_b * cfg.n_l;
    (e / per_group, (e % per_group) / cfg.n_l, e % cfg.n_l)
}

fn che_stage(
    cfg: &UseCaseConfig,
    topo: &ClusterTopology,
    golden: &GoldenChain,
) -> Result<StageReport, PipelineError> {
    let p = cfg.n_pilot;
    let slot = p + 1;
    let est_total = cfg.n_sc * cfg.n_b;
    let cap_core = usable_local_words(topo) / slot;
    if cap_core == 0 {
        return Err(PipelineError::CapacityExceeded {
            stage: Stage::ChannelEstimation.name(),
            detail: format!("{slot}-word estimate slots do not fit a core's banks"),
        });
    }
    let cores = topo.num_cores();
    let per_run = est_total.min(cores * cap_core);
    let runs = est_total.div_ceil(per_run) as u64;
    let ranges = slice_ranges(per_run, cores);

    let mut set = ProgramSet::new(cores);
    let mut mem = ClusterMemory::zeroed(topo);
    let mut pilots = vec![Complex32::new(0.0, 0.0); p];
    for (core, range) in ranges.iter().enumerate() {
        for (i, e) in range.clone().enumerate() {
            let (g, b, l) = estimate_coords(cfg, e);
            let sc = g * cfg.n_l + l;
            let base = i * slot;
            for (s, slot_x) in pilots.iter_mut().enumerate() {
                mem.write(local_word(topo, core, base + s), golden.beamformed[s].get(b, sc));
                *slot_x = golden.stimulus.x[s].get(l, sc);
            }
            let prog = &mut set.programs[core];
            emit_estimate(prog, |i| local_word(topo, core, base + i), &pilots);
        }
    }
    let stats = timed_run(topo, &set, &mut mem)?;

    let mut worst = 0.0f64;
    for (core, range) in ranges.iter().enumerate() {
        for (i, e) in range.clone().enumerate() {
            let (g, b, l) = estimate_coords(cfg, e);
            let sc = g * cfg.n_l + l;
            let out = mem.read(local_word(topo, core, i * slot + p));
            track(&mut worst, out, golden.h_grid.get(b, sc));
        }
    }

    // Single-core reference: the same slots in core 0's banks, one chunk
    // measured, prorated over the full estimate count.
    let ser_chunk = est_total.min(cap_core);
    let mut sset = ProgramSet::new(cores);
    let mut smem = ClusterMemory::zeroed(topo);
    for e in 0..ser_chunk {
        let (g, b, l) = estimate_coords(cfg, e);
        let sc = g * cfg.n_l + l;
        let base = e * slot;
        for (s, slot_x) in pilots.iter_mut().enumerate() {
            smem.write(local_word(topo, 0, base + s), golden.beamformed[s].get(b, sc));
            *slot_x = golden.stimulus.x[s].get(l, sc);
        }
        emit_estimate(&mut sset.programs[0], |i| local_word(topo, 0, base + i), &pilots);
    }
    let sstats = timed_run(topo, &sset, &mut smem)?;
    for e in 0..ser_chunk {
        let (g, b, l) = estimate_coords(cfg, e);
        let sc = g * cfg.n_l + l;
        track(&mut worst, smem.read(local_word(topo, 0, e * slot + p)), golden.h_grid.get(b, sc));
    }
    let serial_total = prorate(sstats.total_cycles, est_total, ser_chunk);

    finish(Stage::ChannelEstimation, cfg, est_total, &stats, runs, serial_total, worst)
}

// ---------------------------------------------------------------------------
// Noise-estimation stage
// ---------------------------------------------------------------------------

/// Residual-power accumulation for one subcarrier column: `P * n_b`
/// residuals `z - h x` squared into the running sum in `R_TMP`.
/// `addr(i)` maps column words — `n_b` estimates then `P` blocks of `n_b`
/// observations.
fn emit_column_power(
    prog: &mut Vec<MicroOp>,
    addr: impl Fn(usize) -> usize,
    n_b: usize,
    pilots: &[Complex32],
) {
    let c = |op, s0, s1, dst| MicroOp::Compute { op, s0, s1, dst };
    for b in 0..n_b {
        prog.push(MicroOp::Load { addr: addr(b), dst: R_X });
        for (s, &x) in pilots.iter().enumerate() {
            prog.push(MicroOp::Load { addr: addr(n_b * (1 + s) + b), dst: R_IN });
            prog.push(c(ComputeOp::Imm(x), 0, 0, R_ACC));
            prog.push(c(ComputeOp::SubMul, R_X, R_ACC, R_IN)); // z - h*x
            prog.push(c(ComputeOp::AddNormSq, R_IN, 0, R_TMP));
        }
    }
}

fn ne_stage(
    cfg: &UseCaseConfig,
    topo: &ClusterTopology,
    golden: &GoldenChain,
) -> Result<StageReport, PipelineError> {
    let p = cfg.n_pilot;
    let col_words = cfg.n_b * (p + 1);
    let usable = usable_local_words(topo);
    // Word 0 holds the core's partial sum; the last word of core 0 holds the
    // reduced estimate.
    let cap_cols = usable.saturating_sub(2) / col_words;
    if cap_cols == 0 {
        return Err(PipelineError::CapacityExceeded {
            stage: Stage::NoiseEstimation.name(),
            detail: format!("{col_words}-word columns do not fit a core's banks"),
        });
    }
    let cores = topo.num_cores();
    let per_run = cfg.n_sc.min(cores * cap_cols);
    let runs = cfg.n_sc.div_ceil(per_run) as u64;
    let ranges = slice_ranges(per_run, cores);
    let chunk_items = (per_run * cfg.n_b * p) as f64;
    let correction = cfg.n_pilot as f64 / (cfg.n_pilot as f64 - 1.0);
    let scale = (correction / chunk_items) as f32;
    let sigma_addr = local_word(topo, 0, usable - 1);

    let mut set = ProgramSet::new(cores);
    let barrier = {
        let participants: Vec<usize> = (0..cores).collect();
        let counter = counter_location(topo, 0);
        set.add_barrier(BarrierSpec {
            counter_addr: topo.address_of(&counter)?,
            participants,
        })
    };
    let mut mem = ClusterMemory::zeroed(topo);
    let mut pilots = vec![Complex32::new(0.0, 0.0); p];
    for (core, range) in ranges.iter().enumerate() {
        set.programs[core].push(MicroOp::Compute { op: ComputeOp::Imm(Complex32::new(0.0, 0.0)), s0: 0, s1: 0, dst: R_TMP });
        for (j, sc) in range.clone().enumerate() {
            let base = 1 + j * col_words;
            let l = sc % cfg.n_l;
            for b in 0..cfg.n_b {
                mem.write(local_word(topo, core, base + b), golden.h_grid.get(b, sc));
                for s in 0..p {
                    mem.write(
                        local_word(topo, core, base + cfg.n_b * (1 + s) + b),
                        golden.beamformed[s].get(b, sc),
                    );
                }
            }
            for (s, x) in pilots.iter_mut().enumerate() {
                *x = golden.stimulus.x[s].get(l, sc);
            }
            emit_column_power(
                &mut set.programs[core],
                |i| local_word(topo, core, base + i),
                cfg.n_b,
                &pilots,
            );
        }
        set.programs[core].push(MicroOp::Store { addr: local_word(topo, core, 0), src: R_TMP });
        set.emit_barrier_arrival(topo, barrier, core, BARRIER_COUNT_REG);
    }
    // Core 0 reduces the partials after the barrier.
    {
        let prog = &mut set.programs[0];
        prog.push(MicroOp::Compute { op: ComputeOp::Imm(Complex32::new(0.0, 0.0)), s0: 0, s1: 0, dst: R_ACC });
        for core in 0..cores {
            prog.push(MicroOp::Load { addr: local_word(topo, core, 0), dst: R_IN });
            prog.push(MicroOp::Compute { op: ComputeOp::Add, s0: R_ACC, s1: R_IN, dst: R_ACC });
        }
        prog.push(MicroOp::Compute {
            op: ComputeOp::MulImm(Complex32::new(scale, 0.0)),
            s0: R_ACC,
            s1: 0,
            dst: R_ACC,
        });
        prog.push(MicroOp::Store { addr: sigma_addr, src: R_ACC });
    }
    let stats = timed_run(topo, &set, &mut mem)?;

    // Double-precision reference for a column chunk's bias-corrected mean
    // residual power.
    let residual_mean = |cols: std::ops::Range<usize>| -> f64 {
        let count = (cols.len() * cfg.n_b * p) as f64;
        let mut acc = 0.0f64;
        for sc in cols {
            let l = sc % cfg.n_l;
            for s in 0..p {
                let x = golden.stimulus.x[s].get(l, sc);
                for b in 0..cfg.n_b {
                    let r = golden.beamformed[s].get(b, sc) - golden.h_grid.get(b, sc) * x;
                    acc += f64::from(r.norm_sqr());
                }
            }
        }
        correction * acc / count
    };
    let mut worst = 0.0f64;
    let sim_sigma = f64::from(mem.read(sigma_addr).re);
    worst = worst.max((sim_sigma - residual_mean(0..per_run)).abs());
    if runs == 1 {
        worst = worst.max((sim_sigma - f64::from(golden.sigma2_est.value())).abs());
    }

    // Single-core reference: same column layout in core 0's banks, a single
    // register accumulator, no partials or barrier; one chunk measured and
    // prorated over all columns.
    let ser_cols = cfg.n_sc.min(usable.saturating_sub(1) / col_words);
    let ser_scale = (correction / (ser_cols * cfg.n_b * p) as f64) as f32;
    let mut sset = ProgramSet::new(cores);
    let mut smem = ClusterMemory::zeroed(topo);
    sset.programs[0].push(MicroOp::Compute { op: ComputeOp::Imm(Complex32::new(0.0, 0.0)), s0: 0, s1: 0, dst: R_TMP });
    for sc in 0..ser_cols {
        let base = sc * col_words;
        let l = sc % cfg.n_l;
        for b in 0..cfg.n_b {
            smem.write(local_word(topo, 0, base + b), golden.h_grid.get(b, sc));
            for s in 0..p {
                smem.write(
                    local_word(topo, 0, base + cfg.n_b * (1 + s) + b),
                    golden.beamformed[s].get(b, sc),
                );
            }
        }
        for (s, x) in pilots.iter_mut().enumerate() {
            *x = golden.stimulus.x[s].get(l, sc);
        }
        emit_column_power(&mut sset.programs[0], |i| local_word(topo, 0, base + i), cfg.n_b, &pilots);
    }
    sset.programs[0].push(MicroOp::Compute {
        op: ComputeOp::MulImm(Complex32::new(ser_scale, 0.0)),
        s0: R_TMP,
        s1: 0,
        dst: R_TMP,
    });
    sset.programs[0].push(MicroOp::Store { addr: sigma_addr, src: R_TMP });
    let sstats = timed_run(topo, &sset, &mut smem)?;
    worst = worst.max((f64::from(smem.read(sigma_addr).re) - residual_mean(0..ser_cols)).abs());
    let serial_total = prorate(sstats.total_cycles, cfg.n_sc, ser_cols);

    finish(Stage::NoiseEstimation, cfg, cfg.n_sc * cfg.n_b * p, &stats, runs, serial_total, worst)
}

// ---------------------------------------------------------------------------
// MIMO equalisation stage
// ---------------------------------------------------------------------------

/// Words per equalisation instance: Gramian, right-hand side, factor,
/// intermediate, solution.
fn mmse_stride(n: usize) -> usize {
    2 * n * n + 3 * n
}

/// One equalisation: Cholesky factorisation in column order, then a forward
/// and a backward solve, mirroring the golden kernels operation for
/// operation. `addr(i)` maps instance words (see `mmse_stride` regions).
fn emit_mmse_instance(prog: &mut Vec<MicroOp>, addr: impl Fn(usize) -> usize, n: usize) {
    let g = |r: usize, k: usize| addr(r * n + k);
    let z = |i: usize| addr(n * n + i);
    let lw = |r: usize, k: usize| addr(n * n + n + r * n + k);
    let wv = |i: usize| addr(2 * n * n + n + i);
    let xv = |i: usize| addr(2 * n * n + 2 * n + i);
    const R_DIAG: Reg = 3;
    let c = |op, s0, s1, dst| MicroOp::Compute { op, s0, s1, dst };
    // Factorisation, diagonal first then the column below it.
    for j in 0..n {
        prog.push(MicroOp::Load { addr: g(j, j), dst: R_ACC });
        for k in 0..j {
            prog.push(MicroOp::Load { addr: lw(j, k), dst: R_IN });
            prog.push(c(ComputeOp::SubNormSq, R_IN, 0, R_ACC));
        }
        prog.push(c(ComputeOp::SqrtRe, R_ACC, 0, R_ACC));
        prog.push(c(ComputeOp::Copy, R_ACC, 0, R_DIAG));
        prog.push(MicroOp::Store { addr: lw(j, j), src: R_ACC });
        for i in (j + 1)..n {
            prog.push(MicroOp::Load { addr: g(i, j), dst: R_ACC });
            for k in 0..j {
                prog.push(MicroOp::Load { addr: lw(i, k), dst: R_IN });
                prog.push(MicroOp::Load { addr: lw(j, k), dst: R_X });
                prog.push(c(ComputeOp::SubMulConj, R_IN, R_X, R_ACC));
            }
            prog.push(c(ComputeOp::DivReal, R_ACC, R_DIAG, R_ACC));
            prog.push(MicroOp::Store { addr: lw(i, j), src: R_ACC });
        }
    }
    // Forward solve L w = z.
    for i in 0..n {
        prog.push(MicroOp::Load { addr: z(i), dst: R_ACC });
        for k in 0..i {
            prog.push(MicroOp::Load { addr: lw(i, k), dst: R_IN });
            prog.push(MicroOp::Load { addr: wv(k), dst: R_X });
            prog.push(c(ComputeOp::SubMul, R_IN, R_X, R_ACC));
        }
        prog.push(MicroOp::Load { addr: lw(i, i), dst: R_DIAG });
        prog.push(c(ComputeOp::DivReal, R_ACC, R_DIAG, R_ACC));
        prog.push(MicroOp::Store { addr: wv(i), src: R_ACC });
    }
    // Backward solve L^H x = w.
    for i in (0..n).rev() {
        prog.push(MicroOp::Load { addr: wv(i), dst: R_ACC });
        for k in (i + 1)..n {
            prog.push(MicroOp::Load { addr: xv(k), dst: R_IN });
            prog.push(MicroOp::Load { addr: lw(k, i), dst: R_X });
            prog.push(c(ComputeOp::SubMulConj, R_IN, R_X, R_ACC));
        }
        prog.push(MicroOp::Load { addr: lw(i, i), dst: R_DIAG });
        prog.push(c(ComputeOp::DivReal, R_ACC, R_DIAG, R_ACC));
        prog.push(MicroOp::Store { addr: xv(i), src: R_ACC });
    }
}

fn stage_mmse_inputs(
    cfg: &UseCaseConfig,
    golden: &GoldenChain,
    inst: usize, // sd * n_sc + sc within the scheduling group
    mut write: impl FnMut(usize, Complex32),
) {
    let n = cfg.n_l;
    let (sd, sc) = (inst / cfg.n_sc, inst % cfg.n_sc);
    let g = &golden.g_groups[sc / n];
    for r in 0..n {
        for k in 0..n {
            write(r * n + k, g.get(r, k));
        }
    }
    for i in 0..n {
        write(n * n + i, golden.z_grids[sd].get(i, sc));
    }
}

fn mimo_stage(
    cfg: &UseCaseConfig,
    topo: &ClusterTopology,
    golden: &GoldenChain,
    batching: &Batching,
) -> Result<StageReport, PipelineError> {
    let n = cfg.n_l;
    let n_data = cfg.n_data();
    let batch = batching.cholesky_batch;
    if batch == 0 || n_data % batch != 0 {
        return Err(PipelineError::BatchingInvalid {
            reason: format!("cholesky_batch {batch} must divide the {n_data} data symbols"),
        });
    }
    let stride = mmse_stride(n);
    let cap_core = usable_local_words(topo) / stride;
    if cap_core == 0 {
        return Err(PipelineError::CapacityExceeded {
            stage: Stage::Mimo.name(),
            detail: format!("{stride}-word equalisation slots do not fit a core's banks"),
        });
    }
    let cores = topo.num_cores();
    let group_inst = batch * cfg.n_sc;
    let per_run = group_inst.min(cores * cap_core);
    let runs = (group_inst.div_ceil(per_run) * (n_data / batch)) as u64;
    let ranges = slice_ranges(per_run, cores);

    let mut set = ProgramSet::new(cores);
    let barrier = set.add_barrier(BarrierSpec {
        counter_addr: topo.address_of(&counter_location(topo, 0))?,
        participants: (0..cores).collect(),
    });
    let mut mem = ClusterMemory::zeroed(topo);
    for (core, range) in ranges.iter().enumerate() {
        for (i, inst) in range.clone().enumerate() {
            let base = i * stride;
            stage_mmse_inputs(cfg, golden, inst, |w, v| {
                mem.write(local_word(topo, core, base + w), v);
            });
            emit_mmse_instance(
                &mut set.programs[core],
                |w| local_word(topo, core, base + w),
                n,
            );
        }
        // Group boundary: nobody proceeds to the next group early.
        set.emit_barrier_arrival(topo, barrier, core, BARRIER_COUNT_REG);
    }
    let stats = timed_run(topo, &set, &mut mem)?;

    let mut worst = 0.0f64;
    for (core, range) in ranges.iter().enumerate() {
        for (i, inst) in range.clone().enumerate() {
            let (sd, sc) = (inst / cfg.n_sc, inst % cfg.n_sc);
            let base = i * stride;
            for l in 0..n {
                let sim = mem.read(local_word(topo, core, base + 2 * n * n + 2 * n + l));
                track(&mut worst, sim, golden.x_hat[sd].get(l, sc));
            }
        }
    }

    // Single-core reference: the same instance slots in core 0's banks, one
    // chunk measured, prorated over every resource element.
    let total_inst = n_data * cfg.n_sc;
    let ser_chunk = total_inst.min(cap_core);
    let mut sset = ProgramSet::new(cores);
    let mut smem = ClusterMemory::zeroed(topo);
    for inst in 0..ser_chunk {
        let base = inst * stride;
        stage_mmse_inputs(cfg, golden, inst, |w, v| {
            smem.write(local_word(topo, 0, base + w), v);
        });
        emit_mmse_instance(&mut sset.programs[0], |w| local_word(topo, 0, base + w), n);
    }
    let sstats = timed_run(topo, &sset, &mut smem)?;
    for inst in 0..ser_chunk {
        let (sd, sc) = (inst / cfg.n_sc, inst % cfg.n_sc);
        let base = inst * stride;
        for l in 0..n {
            track(
                &mut worst,
                smem.read(local_word(topo, 0, base + 2 * n * n + 2 * n + l)),
                golden.x_hat[sd].get(l, sc),
            );
        }
    }
    let serial_total = prorate(sstats.total_cycles, total_inst, ser_chunk);

    finish(Stage::Mimo, cfg, total_inst, &stats, runs, serial_total, worst)
}

// ---------------------------------------------------------------------------
// The chain
// ---------------------------------------------------------------------------

/// Runs the golden chain, then every stage on the simulated cluster, and
/// verifies each stage's memory image against the golden values.
pub fn run_simulated(
    cfg: &UseCaseConfig,
    topo: &ClusterTopology,
    batching: &Batching,
) -> Result<SimulatedChain, PipelineError> {
    cfg.validate()?;
    let golden = run_golden(cfg)?;
    let stages = vec![
        ofdm_stage(cfg, topo, &golden, batching)?,
        bf_stage(cfg, topo, &golden)?,
        che_stage(cfg, topo, &golden)?,
        ne_stage(cfg, topo, &golden)?,
        mimo_stage(cfg, topo, &golden, batching)?,
    ];
    let simulated_cycles: u64 = stages.iter().map(|s| s.simulated_cycles).sum();
    let single_core_cycles: u64 = stages.iter().map(|s| s.single_core_cycles).sum();
    let stage_percent = stages
        .iter()
        .map(|s| (s.stage.clone(), 100.0 * s.simulated_cycles as f64 / simulated_cycles as f64))
        .collect();
    let report = ChainReport {
        simulated_cycles,
        single_core_cycles,
        speedup: single_core_cycles as f64 / simulated_cycles as f64,
        stage_percent,
        evm: golden.evm,
        sigma2_true: cfg.sigma2_true,
        sigma2_est: golden.sigma2_est.value(),
        stages,
    };
    Ok(SimulatedChain { golden, report })
}
