//! Deterministic cycle-stepped execution of per-core micro-op programs.
//!
//! Each core runs a straight-line program of loads, stores, computes and
//! synchronisation ops. Issue is in-order, one op per cycle; loads and stores
//! go through a load-store unit with a bounded number of outstanding
//! requests, and all memory traffic is arbitrated per bank and per
//! remote-group port (see [`crate::cluster`]). A cycle in which a core cannot
//! issue is attributed to exactly one stall class:
//!
//! * `raw` — a source register (or a busy divide/sqrt unit) is not ready;
//! * `lsu` — the load-store queue is full, or an ordered op waits for it to drain;
//! * `wfi` — the core is asleep waiting for a wake-up trigger.
//!
//! Instruction fetch is modelled as ideal, so fetch stalls are structurally
//! zero and reported as such. Together with issued cycles and the idle tail
//! after a core retires, the classes account for every cycle exactly.
//!
//! Barriers are an idiom, not a primitive: an atomic increment on a counter
//! word, a conditional sleep, and — on the last arrival — a counter reset and
//! one or more wake-up triggers covering the participants. The engine only
//! knows about the individual ops; [`barrier_idiom`] emits the sequence.

mod run;

pub use run::{run, run_functional, wakeup_dispatch, CoreStatus, RunOptions};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterTopology;

/// Number of architectural registers a program may use.
pub const NUM_REGS: usize = 30;

/// Register tag, valid in `0..NUM_REGS`.
pub type Reg = u8;

/// Functional units with distinct issue latencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuncUnit {
    IntAlu,
    Mul,
    DivSqrt,
}

/// Arithmetic performed by a [`MicroOp::Compute`].
///
/// Every variant evaluates with the same 32-bit complex arithmetic as the
/// golden kernels, so a scheduled kernel that performs the same operations in
/// the same order produces bit-identical memory contents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ComputeOp {
    /// dst = s0 + s1
    Add,
    /// dst = s0 - s1
    Sub,
    /// dst = -i * s0 (quarter rotation; no multiplier needed)
    RotNegI,
    /// dst = s0 (register move)
    Copy,
    /// dst = imm
    Imm(Complex32),
    /// dst = s0 * s1
    Mul,
    /// dst = s0 * imm
    MulImm(Complex32),
    /// dst += s0 * s1
    Mac,
    /// dst -= s0 * s1
    SubMul,
    /// dst -= s0 * conj(s1)
    SubMulConj,
    /// dst.re -= |s0|^2
    SubNormSq,
    /// dst.re += |s0|^2
    AddNormSq,
    /// dst = (sqrt(s0.re), 0)
    SqrtRe,
    /// dst = (s0.re / s1.re, s0.im / s1.re) — divide by a real diagonal
    DivReal,
    /// dst = s0 / s1 (full complex division)
    Div,
}

impl ComputeOp {
    pub fn unit(self) -> FuncUnit {
        use ComputeOp::*;
        match self {
            Add | Sub | RotNegI | Copy | Imm(_) => FuncUnit::IntAlu,
            Mul | MulImm(_) | Mac | SubMul | SubMulConj | SubNormSq | AddNormSq => FuncUnit::Mul,
            SqrtRe | DivReal | Div => FuncUnit::DivSqrt,
        }
    }

    /// True when dst is also an input (accumulating forms).
    pub fn reads_dst(self) -> bool {
        matches!(
            self,
            ComputeOp::Mac | ComputeOp::SubMul | ComputeOp::SubMulConj | ComputeOp::SubNormSq | ComputeOp::AddNormSq
        )
    }

    /// True when the op consumes its first source register.
    pub fn reads_s0(self) -> bool {
        !matches!(self, ComputeOp::Imm(_))
    }

    /// True when the op consumes its second source register.
    pub fn reads_s1(self) -> bool {
        matches!(
            self,
            ComputeOp::Add
                | ComputeOp::Sub
                | ComputeOp::Mul
                | ComputeOp::Mac
                | ComputeOp::SubMul
                | ComputeOp::SubMulConj
                | ComputeOp::DivReal
                | ComputeOp::Div
        )
    }

    /// True for multiplier-class work, the ops counted towards MAC throughput.
    pub fn is_mac_class(self) -> bool {
        self.unit() == FuncUnit::Mul
    }

    pub(crate) fn eval(self, s0: Complex32, s1: Complex32, dst: Complex32) -> Complex32 {
        use ComputeOp::*;
        match self {
            Add => s0 + s1,
            Sub => s0 - s1,
            RotNegI => Complex32::new(s0.im, -s0.re),
            Copy => s0,
            Imm(v) => v,
            Mul => s0 * s1,
            MulImm(w) => s0 * w,
            Mac => dst + s0 * s1,
            SubMul => dst - s0 * s1,
            SubMulConj => dst - s0 * s1.conj(),
            SubNormSq => Complex32::new(dst.re - s0.norm_sqr(), dst.im),
            AddNormSq => Complex32::new(dst.re + s0.norm_sqr(), dst.im),
            SqrtRe => Complex32::new(s0.re.sqrt(), 0.0),
            DivReal => Complex32::new(s0.re / s1.re, s0.im / s1.re),
            Div => s0 / s1,
        }
    }
}

/// Wake-up trigger coverage. A trigger never wakes its own issuer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WakeupScope {
    Broadcast,
    Group(usize),
    Tile { group: usize, tile: usize },
    Core(usize),
}

/// Guard on conditional ops: the op takes effect only when the register's
/// real part equals the value exactly (counters hold small integers, so the
/// comparison is exact).
pub type Guard = (Reg, f32);

/// One micro-operation. Memory operands are flat word addresses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MicroOp {
    Load { addr: usize, dst: Reg },
    Store { addr: usize, src: Reg },
    /// Store an immediate; with a guard, a failed guard makes it a 1-cycle no-op.
    StoreImm { addr: usize, value: Complex32, only_if: Option<Guard> },
    /// Atomic fetch-and-increment of the word's real part; dst receives the
    /// *new* value. Waits for the core's older memory ops to drain first, so
    /// it acts as a release fence.
    AtomicAdd { addr: usize, dst: Reg },
    Compute { op: ComputeOp, s0: Reg, s1: Reg, dst: Reg },
    /// Sleep until woken. With a guard that passes, or with a pending wake
    /// latch, it falls through as a 1-cycle op instead of sleeping.
    Wfi { skip_if: Option<Guard> },
    /// Wake-up trigger: a 1-cycle write to a dedicated control register.
    /// Sleeping cores in scope resume the next cycle; running cores in scope
    /// get a wake latch their next `Wfi` consumes. Drains the issuer's
    /// load-store queue first. `barrier` ties the trigger to a participant
    /// set for validation.
    CsrWakeup { scope: WakeupScope, barrier: Option<usize>, only_if: Option<Guard> },
}

/// A barrier's identity: where its counter lives and who takes part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub counter_addr: usize,
    /// Sorted, deduplicated core ids.
    pub participants: Vec<usize>,
}

impl BarrierSpec {
    pub fn expected(&self) -> f32 {
        self.participants.len() as f32
    }
}

/// Programs for every core plus the barriers they reference.
#[derive(Debug, Clone, Default)]
pub struct ProgramSet {
    pub programs: Vec<Vec<MicroOp>>,
    pub barriers: Vec<BarrierSpec>,
}

impl ProgramSet {
    pub fn new(num_cores: usize) -> Self {
        Self { programs: vec![Vec::new(); num_cores], barriers: Vec::new() }
    }

    /// Registers a barrier and returns its id for use in wake-up triggers.
    pub fn add_barrier(&mut self, spec: BarrierSpec) -> usize {
        self.barriers.push(spec);
        self.barriers.len() - 1
    }

    /// Total ops across all cores.
    pub fn op_count(&self) -> usize {
        self.programs.iter().map(Vec::len).sum()
    }

    /// Cores with at least one op.
    pub fn active_cores(&self) -> usize {
        self.programs.iter().filter(|p| !p.is_empty()).count()
    }

    /// Appends the barrier-arrival idiom for `core` to its program: atomic
    /// increment, conditional sleep, and the last-arrival path (counter
    /// reset plus wake-up triggers). `count_reg` must not be live across the
    /// barrier.
    pub fn emit_barrier_arrival(&mut self, topo: &ClusterTopology, barrier_id: usize, core: usize, count_reg: Reg) {
        let spec = self.barriers[barrier_id].clone();
        let expected = spec.expected();
        let scopes = cover_scopes(topo, &spec.participants);
        let prog = &mut self.programs[core];
        prog.push(MicroOp::AtomicAdd { addr: spec.counter_addr, dst: count_reg });
        prog.push(MicroOp::Wfi { skip_if: Some((count_reg, expected)) });
        // Only the last arrival sees count == expected; everyone else executes
        // the rest of the idiom as guarded no-ops after being woken.
        prog.push(MicroOp::StoreImm {
            addr: spec.counter_addr,
            value: Complex32::new(0.0, 0.0),
            only_if: Some((count_reg, expected)),
        });
        for scope in scopes {
            prog.push(MicroOp::CsrWakeup {
                scope,
                barrier: Some(barrier_id),
                only_if: Some((count_reg, expected)),
            });
        }
    }
}

/// Minimal set of wake-up scopes covering `participants`: whole cluster,
/// whole groups, whole tiles, then single cores.
pub fn cover_scopes(topo: &ClusterTopology, participants: &[usize]) -> Vec<WakeupScope> {
    if participants.len() == topo.num_cores() {
        return vec![WakeupScope::Broadcast];
    }
    let mut scopes = Vec::new();
    let mut covered = vec![false; topo.num_cores()];
    let in_set = {
        let mut set = vec![false; topo.num_cores()];
        for &c in participants {
            set[c] = true;
        }
        set
    };
    let cores_per_group = topo.cores_per_tile * topo.tiles_per_group;
    for g in 0..topo.num_groups {
        let base = g * cores_per_group;
        if (base..base + cores_per_group).all(|c| in_set[c]) {
            scopes.push(WakeupScope::Group(g));
            covered[base..base + cores_per_group].fill(true);
        }
    }
    for t in 0..topo.num_tiles() {
        let base = t * topo.cores_per_tile;
        if covered[base] {
            continue;
        }
        if (base..base + topo.cores_per_tile).all(|c| in_set[c]) {
            scopes.push(WakeupScope::Tile { group: t / topo.tiles_per_group, tile: t % topo.tiles_per_group });
            covered[base..base + topo.cores_per_tile].fill(true);
        }
    }
    for &c in participants {
        if !covered[c] {
            scopes.push(WakeupScope::Core(c));
        }
    }
    scopes
}

/// Issue latencies per functional unit, in cycles. The divide/sqrt unit is
/// iterative and unpipelined; the others accept one op per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecTiming {
    pub int_alu: u64,
    pub mul: u64,
    pub div_sqrt: u64,
}

impl Default for ExecTiming {
    fn default() -> Self {
        Self { int_alu: 1, mul: 3, div_sqrt: 12 }
    }
}

impl ExecTiming {
    pub fn latency(&self, unit: FuncUnit) -> u64 {
        match unit {
            FuncUnit::IntAlu => self.int_alu,
            FuncUnit::Mul => self.mul,
            FuncUnit::DivSqrt => self.div_sqrt,
        }
    }
}

/// Per-core cycle accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreStats {
    pub issued: u64,
    pub raw_stalls: u64,
    pub lsu_stalls: u64,
    pub wfi_stalls: u64,
    /// Cycles after the core retired, up to the end of the run.
    pub idle_tail: u64,
    /// Cycles the core's memory requests spent waiting for arbitration
    /// (request-level; overlaps with issue activity, not part of the
    /// per-cycle accounting identity).
    pub conflict_wait: u64,
    /// Multiplier-class ops issued (MAC throughput numerator).
    pub mac_ops: u64,
}

/// Whole-run statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub total_cycles: u64,
    pub per_core: Vec<CoreStats>,
    /// Cores with non-empty programs; the IPC denominator.
    pub active_cores: usize,
    /// Fetch is ideal in this model; always zero, reported for completeness.
    pub fetch_stalls: u64,
}

impl CycleStats {
    pub fn issued(&self) -> u64 {
        self.per_core.iter().map(|c| c.issued).sum()
    }

    pub fn mac_ops(&self) -> u64 {
        self.per_core.iter().map(|c| c.mac_ops).sum()
    }

    pub fn stall_totals(&self) -> (u64, u64, u64, u64) {
        let mut t = (0, 0, 0, 0);
        for c in &self.per_core {
            t.0 += c.raw_stalls;
            t.1 += c.lsu_stalls;
            t.2 += c.wfi_stalls;
            t.3 += c.idle_tail;
        }
        t
    }

    /// Instructions per cycle per active core, in [0, 1].
    pub fn ipc(&self) -> f64 {
        if self.active_cores == 0 || self.total_cycles == 0 {
            return 0.0;
        }
        self.issued() as f64 / (self.active_cores as f64 * self.total_cycles as f64)
    }

    /// Multiplier-class ops retired per cycle across the whole cluster.
    pub fn macs_per_cycle(&self) -> f64 {
        if self.total_cycles == 0 {
            return 0.0;
        }
        self.mac_ops() as f64 / self.total_cycles as f64
    }

    /// Checks the exact accounting identity for every core with a program:
    /// issued + raw + lsu + wfi + idle tail == total cycles.
    pub fn accounting_exact(&self) -> bool {
        self.per_core.iter().all(|c| {
            c.issued + c.raw_stalls + c.lsu_stalls + c.wfi_stalls + c.idle_tail == self.total_cycles
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid program: {reason}")]
    InvalidProgram { reason: String },
    #[error("deadlock at cycle {cycle}: {sleeping} sleeping, {blocked} blocked cores (first sleeping: {first_sleeping:?})")]
    Deadlock { cycle: u64, sleeping: usize, blocked: usize, first_sleeping: Option<usize> },
    #[error("barrier {barrier}: wake-up at cycle {cycle} targets running core {core} outside the participant set")]
    MismatchedParticipants { barrier: usize, core: usize, cycle: u64 },
}

/// Cluster memory image: one complex word per address.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMemory {
    words: Vec<Complex32>,
}

impl ClusterMemory {
    pub fn zeroed(topo: &ClusterTopology) -> Self {
        Self { words: vec![Complex32::new(0.0, 0.0); topo.total_words()] }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn read(&self, addr: usize) -> Complex32 {
        self.words[addr]
    }

    pub fn write(&mut self, addr: usize, value: Complex32) {
        self.words[addr] = value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compute_ops_route_to_the_right_unit() {
        assert_eq!(ComputeOp::Add.unit(), FuncUnit::IntAlu);
        assert_eq!(ComputeOp::Mac.unit(), FuncUnit::Mul);
        assert_eq!(ComputeOp::Div.unit(), FuncUnit::DivSqrt);
        assert!(ComputeOp::Mac.reads_dst());
        assert!(!ComputeOp::Mul.reads_dst());
        assert!(ComputeOp::MulImm(Complex32::new(1.0, 0.0)).is_mac_class());
    }

    #[test]
    fn rotation_matches_multiplication_by_minus_i() {
        let z = Complex32::new(3.0, -2.0);
        let rotated = ComputeOp::RotNegI.eval(z, z, z);
        assert_eq!(rotated, z * Complex32::new(0.0, -1.0));
    }

    #[test]
    fn scope_cover_prefers_coarse_scopes() {
        let topo = ClusterTopology::custom(2, 2, 2).unwrap(); // 8 cores, 4 tiles
        let all: Vec<usize> = (0..8).collect();
        assert_eq!(cover_scopes(&topo, &all), vec![WakeupScope::Broadcast]);
        // Group 0 entirely plus one spare core of group 1.
        let set: Vec<usize> = vec![0, 1, 2, 3, 5];
        assert_eq!(
            cover_scopes(&topo, &set),
            vec![WakeupScope::Group(0), WakeupScope::Core(5)]
        );
        // One whole tile.
        let set: Vec<usize> = vec![2, 3];
        assert_eq!(cover_scopes(&topo, &set), vec![WakeupScope::Tile { group: 0, tile: 1 }]);
    }

    #[test]
    fn default_timing_matches_the_model() {
        let t = ExecTiming::default();
        assert_eq!((t.int_alu, t.mul, t.div_sqrt), (1, 3, 12));
    }
}
