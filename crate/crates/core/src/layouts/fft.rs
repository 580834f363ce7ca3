//! Folded placement for the radix-4 decimation-in-frequency FFT.
//!
//! The work array of an N-point transform is spread over `n` cores so that at
//! every stage, all four inputs of every butterfly sit in the executing
//! core's own four banks — the *folded* layout. Each core owns
//! `b = (N/4) / n` consecutive butterflies per stage; input `m` of butterfly
//! `L` lives in local bank `m` at row `L mod b`. Stage results are *pushed*:
//! each output is stored directly into the bank where the next stage's owner
//! expects it, so no separate redistribution pass exists. Stages double-buffer
//! between two row regions of the same banks; several independent transforms
//! ("batches") stack further row regions and run back-to-back between shared
//! barriers, amortizing synchronization.
//!
//! Only the cores of one sub-transform synchronize at a stage boundary: after
//! stage `s` there is one barrier per length-`N/4^s` block, covering exactly
//! the cores that own its butterflies. Once a sub-transform fits inside a
//! single core, no further barriers are emitted at all.
//!
//! Twiddle factors are compile-time immediates of the emitted programs (the
//! multiplier consumes them as constants), so butterfly reads are exactly the
//! four data elements.

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::cluster::{BankLocation, ClusterTopology};
use crate::engine::{BarrierSpec, ComputeOp, MicroOp, ProgramSet, Reg};
use crate::numerics::{digit_reverse_base4, TwiddleTable};

use super::{
    counter_location, counter_rows, LayoutError, LayoutPlan, PhaseAccess, SyncPoint,
    BARRIER_COUNT_REG,
};

/// How many transforms of one size the cluster runs, and on which cores.
///
/// `core_sets` are the disjoint core groups that execute concurrently; each
/// set runs `batches_per_set` transforms back-to-back between shared
/// barriers, so `resident_instances = core_sets.len() * batches_per_set`
/// transforms live in the banks at once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationPlan {
    pub fft_len: usize,
    pub cores_per_instance: usize,
    pub core_sets: Vec<Vec<usize>>,
    pub resident_instances: usize,
    pub batches_per_set: usize,
}

fn log4(n: usize) -> Option<u32> {
    if n >= 4 && n.is_power_of_two() && n.trailing_zeros() % 2 == 0 {
        Some(n.trailing_zeros() / 2)
    } else {
        None
    }
}

/// Rows a bank must reserve below the barrier counters; keeps a margin so
/// data and counters can never meet.
const COUNTER_MARGIN_ROWS: usize = 4;

/// The folded geometry of one instance: which core owns which butterflies
/// and where every work-array element lives at every stage.
struct Fold {
    n: usize,
    l_stages: u32,
    /// Cores by position; position `p` owns butterflies `[p*b, (p+1)*b)`.
    cores: Vec<usize>,
    /// Butterflies per core per stage.
    b: usize,
    base_row: usize,
    batches: usize,
    /// Placement rotation for the deliberately unfolded control layout:
    /// input quarter `m` is shifted by `m * rotation` core positions.
    rotation: usize,
}

struct Place {
    pos: usize,
    bank: usize,
    row: usize,
}

impl Fold {
    fn checked(
        n: usize,
        topo: &ClusterTopology,
        cores: &[usize],
        batches: usize,
        base_row: usize,
        rotation: usize,
    ) -> Result<Self, LayoutError> {
        let l_stages = log4(n).ok_or(LayoutError::NotPowerOfFour { n })?;
        let quarter = n / 4;
        if cores.is_empty() || quarter % cores.len() != 0 {
            return Err(LayoutError::TooFewCores {
                kernel: "fft_fold",
                got: cores.len(),
                needed: format!("a divisor of {quarter}"),
            });
        }
        let mut seen = vec![false; topo.num_cores()];
        for &c in cores {
            if c >= topo.num_cores() {
                return Err(LayoutError::MalformedPlan {
                    reason: format!("core {c} outside the topology"),
                });
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(LayoutError::MalformedPlan {
                    reason: format!("core {c} listed twice"),
                });
            }
        }
        if batches == 0 {
            return Err(LayoutError::MalformedPlan {
                reason: "batch count must be at least 1".to_string(),
            });
        }
        let b = quarter / cores.len();
        let rows = batches * 2 * b;
        if base_row + rows + COUNTER_MARGIN_ROWS > topo.words_per_bank {
            return Err(LayoutError::TooLarge {
                n,
                detail: format!(
                    "{batches} batched transforms over {} cores need {rows} rows per bank, {} available",
                    cores.len(),
                    topo.words_per_bank - base_row - COUNTER_MARGIN_ROWS
                ),
            });
        }
        Ok(Self {
            n,
            l_stages,
            cores: cores.to_vec(),
            b,
            base_row,
            batches,
            rotation,
        })
    }

    /// Sub-transform length at `stage`.
    fn sub_len(&self, stage: u32) -> usize {
        self.n >> (2 * stage)
    }

    /// Where element `w` of the work array lives while it is a stage-`stage`
    /// value. `stage == l_stages` addresses the final (digit-reversed)
    /// output, which stays where the last stage wrote it.
    fn place(&self, stage: u32, w: usize) -> Place {
        let s_eff = stage.min(self.l_stages - 1);
        let sub = self.sub_len(s_eff);
        let q = sub / 4;
        let block = w / sub;
        let within = w % sub;
        let m = within / q;
        let j = within % q;
        let l_idx = block * q + j;
        let mut pos = l_idx / self.b;
        if self.rotation != 0 {
            pos = (pos + m * self.rotation) % self.cores.len();
        }
        Place {
            pos,
            bank: m,
            row: (s_eff as usize % 2) * self.b + l_idx % self.b,
        }
    }

    fn location(&self, topo: &ClusterTopology, batch: usize, stage: u32, w: usize) -> BankLocation {
        let p = self.place(stage, w);
        let mut loc = topo.local_bank(self.cores[p.pos], p.bank);
        loc.offset = self.base_row + batch * 2 * self.b + p.row;
        loc
    }

    fn addr(&self, topo: &ClusterTopology, batch: usize, stage: u32, w: usize) -> usize {
        topo.address_of(&self.location(topo, batch, stage, w))
            .expect("folded locations are always in range")
    }

    /// Logical id of element `w` as a stage-`stage` value of batch `batch`.
    fn id(&self, batch: usize, stage: u32, w: usize) -> u64 {
        ((batch as u64 * (self.l_stages as u64 + 1) + stage as u64) * self.n as u64) + w as u64
    }

    /// The four work-array indices of butterfly `l_idx` at `stage`.
    fn butterfly_elements(&self, stage: u32, l_idx: usize) -> [usize; 4] {
        let sub = self.sub_len(stage);
        let q = sub / 4;
        let block = l_idx / q;
        let j = l_idx % q;
        std::array::from_fn(|m| block * sub + j + m * q)
    }

    /// Stage boundaries that need synchronization, with their per-block core
    /// position ranges: after stage `s`, each block of `q_s / b` core
    /// positions held one sub-transform and must rendezvous.
    fn sync_blocks(&self) -> Vec<(u32, usize)> {
        let mut out = Vec::new();
        for s in 0..self.l_stages {
            let q = self.sub_len(s) / 4;
            if q > self.b {
                out.push((s, q / self.b));
            }
        }
        out
    }
}

/// Largest power of two not exceeding `v`.
fn floor_pow2(v: usize) -> usize {
    debug_assert!(v >= 1);
    1 << (usize::BITS - 1 - v.leading_zeros())
}

/// How a batch of `n`-point transforms maps onto the whole cluster: an
/// instance spans `min(N/4, cores)` cores (one butterfly column per core
/// when the cluster is large enough, several otherwise), disjoint core sets
/// run concurrently, and each set serializes enough batches to cover the
/// resident instances (four transforms fit per core-set bank region).
pub fn fft_replication(
    n: usize,
    topo: &ClusterTopology,
) -> Result<ReplicationPlan, LayoutError> {
    log4(n).ok_or(LayoutError::NotPowerOfFour { n })?;
    let quarter = n / 4;
    let total = topo.num_cores();
    let per = if quarter <= total {
        quarter
    } else {
        floor_pow2(total)
    };
    let b = quarter / per;
    if 2 * b + COUNTER_MARGIN_ROWS > topo.words_per_bank {
        return Err(LayoutError::TooLarge {
            n,
            detail: format!(
                "a single transform needs {} rows per bank, {} available",
                2 * b,
                topo.words_per_bank - COUNTER_MARGIN_ROWS
            ),
        });
    }
    let sets = (total / per).max(1);
    let resident_raw = (4 * topo.num_banks() / n).max(1);
    let mut batches = (resident_raw / sets).max(1);
    // Never default to more batches than the rows can hold.
    while batches > 1 && 2 * b * batches + COUNTER_MARGIN_ROWS > topo.words_per_bank {
        batches /= 2;
    }
    let core_sets: Vec<Vec<usize>> = (0..sets)
        .map(|s| (s * per..(s + 1) * per).collect())
        .collect();
    Ok(ReplicationPlan {
        fft_len: n,
        cores_per_instance: per,
        resident_instances: sets * batches,
        batches_per_set: batches,
        core_sets,
    })
}

fn fold_plan(fold: &Fold, topo: &ClusterTopology) -> LayoutPlan {
    let mut plan = LayoutPlan::new(topo.num_cores());
    let stages = fold.l_stages;
    for batch in 0..fold.batches {
        for stage in 0..=stages {
            for w in 0..fold.n {
                plan.placement
                    .insert(fold.id(batch, stage, w), fold.location(topo, batch, stage, w));
            }
        }
    }
    // One phase per (stage, batch); all instance cores advance together.
    let num_phases = stages as usize * fold.batches;
    for &core in &fold.cores {
        plan.core_work[core] = vec![PhaseAccess::default(); num_phases];
    }
    for stage in 0..stages {
        for batch in 0..fold.batches {
            let phase = stage as usize * fold.batches + batch;
            for pos in 0..fold.cores.len() {
                let acc = &mut plan.core_work[fold.cores[pos]][phase];
                for i in 0..fold.b {
                    let l_idx = pos * fold.b + i;
                    let elems = fold.butterfly_elements(stage, l_idx);
                    for &w in &elems {
                        acc.reads.push(fold.id(batch, stage, w));
                    }
                    acc.computes += 12;
                    for &w in &elems {
                        acc.writes.push(fold.id(batch, stage + 1, w));
                    }
                }
            }
        }
    }
    for (stage, positions_per_block) in fold.sync_blocks() {
        let boundary = (stage as usize + 1) * fold.batches - 1;
        let mut pos = 0;
        while pos < fold.cores.len() {
            let mut participants: Vec<usize> =
                fold.cores[pos..pos + positions_per_block].to_vec();
            participants.sort_unstable();
            plan.sync_points.push(SyncPoint {
                boundary,
                participants,
            });
            pos += positions_per_block;
        }
    }
    plan
}

/// Folded single-instance layout: every butterfly reads only the executing
/// core's own banks. `instance_cores` must number a divisor of `N/4`
/// (`N/4` cores give one butterfly per core per stage; fewer give
/// correspondingly more).
pub fn fft_fold_layout(
    n: usize,
    topo: &ClusterTopology,
    instance_cores: &[usize],
) -> Result<LayoutPlan, LayoutError> {
    fft_fold_layout_batched(n, topo, instance_cores, 1)
}

/// Folded layout with `batches` independent transforms interleaved between
/// shared stage barriers.
pub fn fft_fold_layout_batched(
    n: usize,
    topo: &ClusterTopology,
    instance_cores: &[usize],
    batches: usize,
) -> Result<LayoutPlan, LayoutError> {
    let fold = Fold::checked(n, topo, instance_cores, batches, 0, 0)?;
    Ok(fold_plan(&fold, topo))
}

/// Control layout with the folding deliberately undone: each input quarter is
/// rotated to a different core's banks, so exactly one of a butterfly's four
/// reads is core-local and the other three cross the interconnect. Used to
/// demonstrate what the folded layout buys.
pub fn fft_unfolded_layout(
    n: usize,
    topo: &ClusterTopology,
    instance_cores: &[usize],
) -> Result<LayoutPlan, LayoutError> {
    if instance_cores.len() < 4 {
        return Err(LayoutError::TooFewCores {
            kernel: "fft_unfolded",
            got: instance_cores.len(),
            needed: "at least 4 (rotating quarters needs them)".to_string(),
        });
    }
    let rotation = instance_cores.len() / 4;
    let fold = Fold::checked(n, topo, instance_cores, 1, 0, rotation)?;
    Ok(fold_plan(&fold, topo))
}

/// An executable FFT build: the programs plus the address maps needed to
/// stage inputs and collect outputs.
pub struct FftProgram {
    pub set: ProgramSet,
    pub n: usize,
    pub batches: usize,
    pub num_sets: usize,
    folds: Vec<Fold>,
    serial: Option<(usize, usize)>, // (core, base address)
}

impl FftProgram {
    /// Address of natural-order input sample `i` of batch `batch` on core set
    /// `set`.
    pub fn input_addr(&self, topo: &ClusterTopology, set: usize, batch: usize, i: usize) -> usize {
        match self.serial {
            Some((_, base)) => base + i,
            None => self.folds[set].addr(topo, batch, 0, i),
        }
    }

    /// Address of natural-order output bin `k` of batch `batch` on core set
    /// `set`.
    pub fn output_addr(&self, topo: &ClusterTopology, set: usize, batch: usize, k: usize) -> usize {
        let digits = self.n.trailing_zeros() / 2;
        let w = digit_reverse_base4(k, digits);
        match self.serial {
            Some((_, base)) => base + w,
            None => self.folds[set].addr(topo, batch, self.folds[set].l_stages, w),
        }
    }
}

const R_IN: [Reg; 4] = [0, 1, 2, 3];
const R_SUM_AC: Reg = 4;
const R_DIF_AC: Reg = 5;
const R_SUM_BD: Reg = 6;
const R_DIF_BD: Reg = 7;
const R_Y: [Reg; 4] = [8, 9, 10, 11];

/// Emits one radix-4 butterfly: 4 loads, 12 compute ops (9 adder-class,
/// 3 multiplies), 4 stores. The arithmetic mirrors the golden kernel
/// operation for operation, so the results are bit-identical.
fn emit_butterfly(
    prog: &mut Vec<MicroOp>,
    loads: [usize; 4],
    stores: [usize; 4],
    w1: Complex32,
    w2: Complex32,
    w3: Complex32,
) {
    for (m, addr) in loads.into_iter().enumerate() {
        prog.push(MicroOp::Load { addr, dst: R_IN[m] });
    }
    let c = |op, s0, s1, dst| MicroOp::Compute { op, s0, s1, dst };
    prog.push(c(ComputeOp::Add, R_IN[0], R_IN[2], R_SUM_AC));
    prog.push(c(ComputeOp::Sub, R_IN[0], R_IN[2], R_DIF_AC));
    prog.push(c(ComputeOp::Add, R_IN[1], R_IN[3], R_SUM_BD));
    prog.push(c(ComputeOp::Sub, R_IN[1], R_IN[3], R_DIF_BD));
    prog.push(c(ComputeOp::RotNegI, R_DIF_BD, 0, R_DIF_BD));
    prog.push(c(ComputeOp::Add, R_SUM_AC, R_SUM_BD, R_Y[0]));
    prog.push(c(ComputeOp::Add, R_DIF_AC, R_DIF_BD, R_Y[1]));
    prog.push(c(ComputeOp::MulImm(w1), R_Y[1], 0, R_Y[1]));
    prog.push(c(ComputeOp::Sub, R_SUM_AC, R_SUM_BD, R_Y[2]));
    prog.push(c(ComputeOp::MulImm(w2), R_Y[2], 0, R_Y[2]));
    prog.push(c(ComputeOp::Sub, R_DIF_AC, R_DIF_BD, R_Y[3]));
    prog.push(c(ComputeOp::MulImm(w3), R_Y[3], 0, R_Y[3]));
    for (m, addr) in stores.into_iter().enumerate() {
        prog.push(MicroOp::Store { addr, src: R_Y[m] });
    }
}

/// Builds the engine programs for folded transforms on one or more disjoint
/// core sets, each running `batches` transforms between shared barriers.
pub fn fft_fold_program(
    n: usize,
    topo: &ClusterTopology,
    core_sets: &[Vec<usize>],
    batches: usize,
) -> Result<FftProgram, LayoutError> {
    if core_sets.is_empty() {
        return Err(LayoutError::TooFewCores {
            kernel: "fft_fold",
            got: 0,
            needed: "at least one core set".to_string(),
        });
    }
    let mut folds = Vec::with_capacity(core_sets.len());
    for cores in core_sets {
        folds.push(Fold::checked(n, topo, cores, batches, 0, 0)?);
    }
    {
        let mut seen = vec![false; topo.num_cores()];
        for fold in &folds {
            for &c in &fold.cores {
                if std::mem::replace(&mut seen[c], true) {
                    return Err(LayoutError::MalformedPlan {
                        reason: format!("core {c} appears in two core sets"),
                    });
                }
            }
        }
    }
    let tw = TwiddleTable::new(n).expect("power of four checked above");

    let mut set = ProgramSet::new(topo.num_cores());
    // Barriers: per core set, per synchronized stage, per block.
    let mut counter_index = 0usize;
    // barrier_base[set][stage] = first barrier id of that stage's blocks.
    let mut barrier_base: Vec<Vec<Option<usize>>> = Vec::new();
    for fold in &folds {
        let mut per_stage = vec![None; fold.l_stages as usize];
        for (stage, positions_per_block) in fold.sync_blocks() {
            let mut first = None;
            let mut pos = 0;
            while pos < fold.cores.len() {
                let mut participants: Vec<usize> =
                    fold.cores[pos..pos + positions_per_block].to_vec();
                participants.sort_unstable();
                let counter = counter_location(topo, counter_index);
                counter_index += 1;
                let id = set.add_barrier(BarrierSpec {
                    counter_addr: topo
                        .address_of(&counter)
                        .expect("counter locations are in range"),
                    participants,
                });
                if first.is_none() {
                    first = Some(id);
                }
                pos += positions_per_block;
            }
            per_stage[stage as usize] = first;
        }
        barrier_base.push(per_stage);
    }
    let rows = counter_rows(topo, counter_index);
    for fold in &folds {
        if fold.base_row + fold.batches * 2 * fold.b + rows > topo.words_per_bank {
            return Err(LayoutError::TooLarge {
                n,
                detail: format!(
                    "data and {counter_index} barrier counters overflow the {}-word banks",
                    topo.words_per_bank
                ),
            });
        }
    }

    for (set_idx, fold) in folds.iter().enumerate() {
        let blocks = fold.sync_blocks();
        for pos in 0..fold.cores.len() {
            let core = fold.cores[pos];
            for stage in 0..fold.l_stages {
                let stride = fold.n / fold.sub_len(stage);
                for batch in 0..fold.batches {
                    let mut prog = std::mem::take(&mut set.programs[core]);
                    for i in 0..fold.b {
                        let l_idx = pos * fold.b + i;
                        let elems = fold.butterfly_elements(stage, l_idx);
                        let j = l_idx % (fold.sub_len(stage) / 4);
                        let loads =
                            std::array::from_fn(|m| fold.addr(topo, batch, stage, elems[m]));
                        let stores =
                            std::array::from_fn(|m| fold.addr(topo, batch, stage + 1, elems[m]));
                        emit_butterfly(
                            &mut prog,
                            loads,
                            stores,
                            tw.factor(j * stride),
                            tw.factor(2 * j * stride),
                            tw.factor(3 * j * stride),
                        );
                    }
                    set.programs[core] = prog;
                }
                if let Some((_, positions_per_block)) =
                    blocks.iter().find(|(s, _)| *s == stage).copied().map(|p| (p.0, p.1))
                {
                    let base = barrier_base[set_idx][stage as usize]
                        .expect("sync stage has a barrier base");
                    let block = pos / positions_per_block;
                    set.emit_barrier_arrival(topo, base + block, core, BARRIER_COUNT_REG);
                }
            }
        }
    }

    Ok(FftProgram {
        set,
        n,
        batches,
        num_sets: folds.len(),
        folds,
        serial: None,
    })
}

/// A plain sequential transform on one core, data interleaved across the
/// cluster in natural order — the baseline that parallel speedups are
/// measured against. Identical arithmetic, no barriers.
pub fn fft_serial_program(
    n: usize,
    topo: &ClusterTopology,
    core: usize,
) -> Result<FftProgram, LayoutError> {
    let l_stages = log4(n).ok_or(LayoutError::NotPowerOfFour { n })?;
    if core >= topo.num_cores() {
        return Err(LayoutError::MalformedPlan {
            reason: format!("core {core} outside the topology"),
        });
    }
    if n > topo.interleaved_words {
        return Err(LayoutError::TooLarge {
            n,
            detail: format!(
                "serial work array exceeds the {}-word interleaved region",
                topo.interleaved_words
            ),
        });
    }
    let tw = TwiddleTable::new(n).expect("power of four checked above");
    let base = 0usize;
    let mut set = ProgramSet::new(topo.num_cores());
    let mut prog = Vec::new();
    for stage in 0..l_stages {
        let sub = n >> (2 * stage);
        let q = sub / 4;
        let stride = n / sub;
        for block_base in (0..n).step_by(sub) {
            for j in 0..q {
                let addrs = std::array::from_fn(|m| base + block_base + j + m * q);
                emit_butterfly(
                    &mut prog,
                    addrs,
                    addrs,
                    tw.factor(j * stride),
                    tw.factor(2 * j * stride),
                    tw.factor(3 * j * stride),
                );
            }
        }
    }
    set.programs[core] = prog;
    Ok(FftProgram {
        set,
        n,
        batches: 1,
        num_sets: 1,
        folds: Vec::new(),
        serial: Some((core, base)),
    })
}
