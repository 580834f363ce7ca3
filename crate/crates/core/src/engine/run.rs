//! The cycle-stepped interpreter and its untimed functional twin.
//!
//! Per cycle, in order: memory responses arrive and free load-store slots;
//! wake-up triggers fired last cycle are delivered; retired cores are
//! noticed and termination / deadlock checked; every running core attempts
//! to issue its next op (ascending core id); finally all waiting memory
//! requests are arbitrated and granted requests take effect. Requests that
//! lose arbitration stay queued with their original issue cycle, so age-based
//! priority carries across cycles. Every step is a deterministic function of
//! the program set and initial memory, so two runs are cycle-identical.
//!
//! The functional twin executes the same programs with the same operand
//! semantics but no timing: cores run round-robin until they sleep or
//! finish, and wake-ups deliver immediately. For programs whose cross-core
//! communication is ordered by barriers it produces bit-identical memory to
//! the timed run at a tiny fraction of the cost.

use std::io::Write;

use num_complex::Complex32;

use crate::cluster::{arbitrate, AccessKind, AccessRequest, BankLocation, ClusterTopology};

use super::{
    ClusterMemory, CoreStats, CycleStats, EngineError, ExecTiming, FuncUnit, Guard,
    MicroOp, ProgramSet, Reg, WakeupScope, NUM_REGS,
};

/// Scheduling status of a core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreStatus {
    Running,
    Sleeping,
    Done,
}

/// Options for a timed run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub timing: ExecTiming,
    /// Cycles without any issue, grant, response or wake before the run is
    /// declared dead. Defaults to a bound derived from the core count and the
    /// worst-case latencies, so a legal stall can never trip it.
    pub deadlock_horizon: Option<u64>,
}

/// Delivers one wake-up trigger: sleeping cores in scope (except the issuer)
/// become running and are returned in ascending id order; running cores in
/// scope get their wake latch set, which their next sleep attempt consumes.
/// Retired cores ignore the trigger.
pub fn wakeup_dispatch(
    topo: &ClusterTopology,
    scope: WakeupScope,
    issuer: Option<usize>,
    statuses: &mut [CoreStatus],
    latches: &mut [bool],
) -> Vec<usize> {
    let mut woken = Vec::new();
    for_each_scope_core(topo, scope, |c| {
        if Some(c) == issuer {
            return;
        }
        match statuses[c] {
            CoreStatus::Sleeping => {
                statuses[c] = CoreStatus::Running;
                woken.push(c);
            }
            CoreStatus::Running => latches[c] = true,
            CoreStatus::Done => {}
        }
    });
    woken
}

fn for_each_scope_core(topo: &ClusterTopology, scope: WakeupScope, mut f: impl FnMut(usize)) {
    match scope {
        WakeupScope::Broadcast => {
            for c in 0..topo.num_cores() {
                f(c);
            }
        }
        WakeupScope::Group(g) => {
            let per = topo.cores_per_tile * topo.tiles_per_group;
            for c in g * per..(g + 1) * per {
                f(c);
            }
        }
        WakeupScope::Tile { group, tile } => {
            let base = (group * topo.tiles_per_group + tile) * topo.cores_per_tile;
            for c in base..base + topo.cores_per_tile {
                f(c);
            }
        }
        WakeupScope::Core(c) => f(c),
    }
}

#[derive(Clone, Copy)]
enum Payload {
    Load { dst: Reg },
    Store { value: Complex32 },
    Atomic { dst: Reg },
}

#[derive(Clone, Copy)]
struct Pending {
    core: usize,
    addr: usize,
    loc: BankLocation,
    issue_cycle: u64,
    payload: Payload,
}

impl Pending {
    fn kind(&self) -> AccessKind {
        match self.payload {
            Payload::Load { .. } => AccessKind::Load,
            Payload::Store { .. } => AccessKind::Store,
            Payload::Atomic { .. } => AccessKind::Atomic,
        }
    }
}

enum GuardState {
    NotReady,
    Fail,
    Pass,
}

fn guard_state(guard: Option<Guard>, regs: &[Complex32; NUM_REGS], ready: &[u64; NUM_REGS], now: u64) -> GuardState {
    match guard {
        None => GuardState::Pass,
        Some((r, v)) => {
            if ready[r as usize] > now {
                GuardState::NotReady
            } else if regs[r as usize].re == v {
                GuardState::Pass
            } else {
                GuardState::Fail
            }
        }
    }
}

fn guard_value(guard: Option<Guard>, regs: &[Complex32; NUM_REGS]) -> bool {
    match guard {
        None => true,
        Some((r, v)) => regs[r as usize].re == v,
    }
}

fn validate_set(topo: &ClusterTopology, set: &ProgramSet) -> Result<(), EngineError> {
    let fail = |reason: String| Err(EngineError::InvalidProgram { reason });
    if set.programs.len() != topo.num_cores() {
        return fail(format!(
            "{} programs for {} cores",
            set.programs.len(),
            topo.num_cores()
        ));
    }
    let total = topo.total_words();
    let reg_ok = |r: Reg| (r as usize) < NUM_REGS;
    let guard_ok = |g: &Option<Guard>| g.map_or(true, |(r, _)| reg_ok(r));
    for (c, prog) in set.programs.iter().enumerate() {
        for (i, op) in prog.iter().enumerate() {
            let ok = match op {
                MicroOp::Load { addr, dst } => *addr < total && reg_ok(*dst),
                MicroOp::Store { addr, src } => *addr < total && reg_ok(*src),
                MicroOp::StoreImm { addr, only_if, .. } => *addr < total && guard_ok(only_if),
                MicroOp::AtomicAdd { addr, dst } => *addr < total && reg_ok(*dst),
                MicroOp::Compute { s0, s1, dst, .. } => reg_ok(*s0) && reg_ok(*s1) && reg_ok(*dst),
                MicroOp::Wfi { skip_if } => guard_ok(skip_if),
                MicroOp::CsrWakeup { scope, barrier, only_if } => {
                    let scope_ok = match *scope {
                        WakeupScope::Broadcast => true,
                        WakeupScope::Group(g) => g < topo.num_groups,
                        WakeupScope::Tile { group, tile } => {
                            group < topo.num_groups && tile < topo.tiles_per_group
                        }
                        WakeupScope::Core(core) => core < topo.num_cores(),
                    };
                    scope_ok && barrier.map_or(true, |b| b < set.barriers.len()) && guard_ok(only_if)
                }
            };
            if !ok {
                return fail(format!("core {c} op {i} references out-of-range state: {op:?}"));
            }
        }
    }
    let mut counters = std::collections::BTreeSet::new();
    for (b, spec) in set.barriers.iter().enumerate() {
        if spec.participants.is_empty() {
            return fail(format!("barrier {b} has no participants"));
        }
        if !spec.participants.windows(2).all(|w| w[0] < w[1]) {
            return fail(format!("barrier {b} participants must be sorted and unique"));
        }
        if *spec.participants.last().unwrap() >= topo.num_cores() {
            return fail(format!("barrier {b} names a core outside the cluster"));
        }
        if spec.counter_addr >= total {
            return fail(format!("barrier {b} counter address out of range"));
        }
        if !counters.insert(spec.counter_addr) {
            return fail(format!("barrier {b} reuses another barrier's counter word"));
        }
    }
    Ok(())
}

fn op_name(op: &MicroOp) -> &'static str {
    match op {
        MicroOp::Load { .. } => "load",
        MicroOp::Store { .. } => "store",
        MicroOp::StoreImm { .. } => "store-imm",
        MicroOp::AtomicAdd { .. } => "atomic-add",
        MicroOp::Compute { .. } => "compute",
        MicroOp::Wfi { .. } => "wfi",
        MicroOp::CsrWakeup { .. } => "csr-wakeup",
    }
}

/// Runs the program set to completion and returns the cycle accounting.
///
/// `mem` holds the initial memory image and is updated in place. `trace`,
/// when given, receives one line per issue, grant, sleep, resume and wake
/// trigger.
pub fn run(
    topo: &ClusterTopology,
    set: &ProgramSet,
    mem: &mut ClusterMemory,
    opts: &RunOptions,
    mut trace: Option<&mut dyn Write>,
) -> Result<CycleStats, EngineError> {
    validate_set(topo, set)?;
    if mem.len() != topo.total_words() {
        return Err(EngineError::InvalidProgram {
            reason: format!("memory has {} words, topology needs {}", mem.len(), topo.total_words()),
        });
    }

    let n = topo.num_cores();
    let timing = opts.timing;
    let horizon = opts.deadlock_horizon.unwrap_or_else(|| {
        10 * n as u64 + 64 + timing.div_sqrt + topo.latency_remote_group
    });

    let zero = Complex32::new(0.0, 0.0);
    let mut pc = vec![0usize; n];
    let mut regs = vec![[zero; NUM_REGS]; n];
    let mut ready = vec![[0u64; NUM_REGS]; n];
    let mut inflight = vec![0usize; n];
    let mut div_busy = vec![0u64; n];
    let mut latches = vec![false; n];
    let mut sleep_since = vec![0u64; n];
    let mut done_at = vec![0u64; n];
    let mut statuses = vec![CoreStatus::Running; n];
    let mut stats = vec![CoreStats::default(); n];
    let mut done_count = 0usize;
    let mut sleeping_count = 0usize;
    for c in 0..n {
        if set.programs[c].is_empty() {
            statuses[c] = CoreStatus::Done;
            done_count += 1;
        }
    }
    // Cores currently able to issue, ascending. Iterating only these keeps
    // sparse runs (e.g. serial baselines on a large cluster) cheap, and the
    // ascending order keeps the request queue pre-sorted for the arbiter.
    let mut running: Vec<usize> =
        (0..n).filter(|&c| statuses[c] == CoreStatus::Running).collect();

    let mut pending: Vec<Pending> = Vec::new();
    let mut arb_reqs: Vec<AccessRequest> = Vec::new();
    // Responses complete at grant + latency; a small ring indexed by cycle
    // holds the cores whose slots free up.
    let ring_len = (topo.latency_remote_group as usize + 2).next_power_of_two();
    let mut ring: Vec<Vec<usize>> = vec![Vec::new(); ring_len];
    let mut outstanding_events = 0usize;
    // Wake-ups trigger in one cycle and deliver at the start of the next.
    let mut wakes_next: Vec<(WakeupScope, usize, Option<usize>)> = Vec::new();
    let mut scope_buf: Vec<usize> = Vec::new();

    let mut last_progress: u64 = 0;
    let mut t: u64 = 0;
    let total_cycles;

    loop {
        let mut progress = false;

        // 1. Responses arriving now free their load-store slots.
        let slot = (t as usize) & (ring_len - 1);
        if !ring[slot].is_empty() {
            for i in 0..ring[slot].len() {
                inflight[ring[slot][i]] -= 1;
            }
            outstanding_events -= ring[slot].len();
            ring[slot].clear();
            progress = true;
        }

        // 2. Deliver wake-ups triggered last cycle.
        if !wakes_next.is_empty() {
            let deliveries = std::mem::take(&mut wakes_next);
            let mut woken_any = 0usize;
            for (scope, issuer, barrier) in deliveries {
                if let Some(b) = barrier {
                    let parts = &set.barriers[b].participants;
                    scope_buf.clear();
                    for_each_scope_core(topo, scope, |c| scope_buf.push(c));
                    for &c in &scope_buf {
                        if c != issuer
                            && statuses[c] != CoreStatus::Done
                            && parts.binary_search(&c).is_err()
                        {
                            return Err(EngineError::MismatchedParticipants { barrier: b, core: c, cycle: t });
                        }
                    }
                }
                let woken = wakeup_dispatch(topo, scope, Some(issuer), &mut statuses, &mut latches);
                for &c in &woken {
                    stats[c].wfi_stalls += t - sleep_since[c];
                    progress = true;
                    if let Some(w) = trace.as_deref_mut() {
                        let _ = writeln!(w, "cycle={t} core={c} resume");
                    }
                }
                woken_any += woken.len();
                running.extend(woken);
            }
            if woken_any > 0 {
                sleeping_count -= woken_any;
                running.sort_unstable();
            }
        }

        // 3. Notice retired cores; check for termination or a dead cluster.
        running.retain(|&c| {
            if pc[c] == set.programs[c].len() {
                statuses[c] = CoreStatus::Done;
                done_at[c] = t;
                done_count += 1;
                false
            } else {
                true
            }
        });
        let quiescent = pending.is_empty() && outstanding_events == 0 && wakes_next.is_empty();
        if done_count == n && quiescent {
            total_cycles = t;
            break;
        }
        // Only sleepers left and nothing in flight: no wake can ever arrive.
        if running.is_empty() && sleeping_count > 0 && quiescent {
            let first_sleeping = statuses.iter().position(|&s| s == CoreStatus::Sleeping);
            return Err(EngineError::Deadlock { cycle: t, sleeping: sleeping_count, blocked: 0, first_sleeping });
        }
        if outstanding_events == 0 && t.saturating_sub(last_progress) > horizon {
            let first_sleeping = statuses.iter().position(|&s| s == CoreStatus::Sleeping);
            return Err(EngineError::Deadlock {
                cycle: t,
                sleeping: sleeping_count,
                blocked: running.len(),
                first_sleeping,
            });
        }

        // 4. Issue phase, ascending core id.
        let mut run_idx = 0;
        while run_idx < running.len() {
            let c = running[run_idx];
            let op = &set.programs[c][pc[c]];
            let st = &mut stats[c];
            let issued = match *op {
                MicroOp::Load { addr, dst } => {
                    if inflight[c] == topo.max_outstanding {
                        st.lsu_stalls += 1;
                        false
                    } else {
                        let loc = topo.map_address(addr).expect("validated address");
                        pending.push(Pending { core: c, addr, loc, issue_cycle: t, payload: Payload::Load { dst } });
                        inflight[c] += 1;
                        ready[c][dst as usize] = u64::MAX;
                        true
                    }
                }
                MicroOp::Store { addr, src } => {
                    if ready[c][src as usize] > t {
                        st.raw_stalls += 1;
                        false
                    } else if inflight[c] == topo.max_outstanding {
                        st.lsu_stalls += 1;
                        false
                    } else {
                        let loc = topo.map_address(addr).expect("validated address");
                        let value = regs[c][src as usize];
                        pending.push(Pending { core: c, addr, loc, issue_cycle: t, payload: Payload::Store { value } });
                        inflight[c] += 1;
                        true
                    }
                }
                MicroOp::StoreImm { addr, value, only_if } => match guard_state(only_if, &regs[c], &ready[c], t) {
                    GuardState::NotReady => {
                        st.raw_stalls += 1;
                        false
                    }
                    GuardState::Fail => true,
                    GuardState::Pass => {
                        if inflight[c] == topo.max_outstanding {
                            st.lsu_stalls += 1;
                            false
                        } else {
                            let loc = topo.map_address(addr).expect("validated address");
                            pending.push(Pending { core: c, addr, loc, issue_cycle: t, payload: Payload::Store { value } });
                            inflight[c] += 1;
                            true
                        }
                    }
                },
                MicroOp::AtomicAdd { addr, dst } => {
                    // Ordered: all earlier accesses must have responded.
                    if inflight[c] > 0 {
                        st.lsu_stalls += 1;
                        false
                    } else {
                        let loc = topo.map_address(addr).expect("validated address");
                        pending.push(Pending { core: c, addr, loc, issue_cycle: t, payload: Payload::Atomic { dst } });
                        inflight[c] += 1;
                        ready[c][dst as usize] = u64::MAX;
                        true
                    }
                }
                MicroOp::Compute { op, s0, s1, dst } => {
                    let unit = op.unit();
                    if unit == FuncUnit::DivSqrt && div_busy[c] > t {
                        st.raw_stalls += 1;
                        false
                    } else {
                        let (s0, s1, dst) = (s0 as usize, s1 as usize, dst as usize);
                        let operands_ready = (!op.reads_s0() || ready[c][s0] <= t)
                            && (!op.reads_s1() || ready[c][s1] <= t)
                            && (!op.reads_dst() || ready[c][dst] <= t);
                        if !operands_ready {
                            st.raw_stalls += 1;
                            false
                        } else {
                            regs[c][dst] = op.eval(regs[c][s0], regs[c][s1], regs[c][dst]);
                            let lat = timing.latency(unit);
                            ready[c][dst] = t + lat;
                            if unit == FuncUnit::DivSqrt {
                                div_busy[c] = t + lat;
                            }
                            if op.is_mac_class() {
                                st.mac_ops += 1;
                            }
                            true
                        }
                    }
                }
                MicroOp::Wfi { skip_if } => {
                    let skip = match skip_if {
                        None => Some(false),
                        Some(g) => match guard_state(Some(g), &regs[c], &ready[c], t) {
                            GuardState::NotReady => None,
                            GuardState::Pass => Some(true),
                            GuardState::Fail => Some(false),
                        },
                    };
                    match skip {
                        None => {
                            st.raw_stalls += 1;
                            false
                        }
                        Some(true) => true,
                        Some(false) => {
                            if latches[c] {
                                latches[c] = false;
                            } else {
                                statuses[c] = CoreStatus::Sleeping;
                                sleep_since[c] = t + 1;
                                if let Some(w) = trace.as_deref_mut() {
                                    let _ = writeln!(w, "cycle={t} core={c} sleep");
                                }
                            }
                            true
                        }
                    }
                }
                MicroOp::CsrWakeup { scope, barrier, only_if } => match guard_state(only_if, &regs[c], &ready[c], t) {
                    GuardState::NotReady => {
                        st.raw_stalls += 1;
                        false
                    }
                    GuardState::Fail => true,
                    GuardState::Pass => {
                        // Ordered like the atomic: earlier stores must be
                        // visible before anyone wakes.
                        if inflight[c] > 0 {
                            st.lsu_stalls += 1;
                            false
                        } else {
                            wakes_next.push((scope, c, barrier));
                            if let Some(w) = trace.as_deref_mut() {
                                let _ = writeln!(w, "cycle={t} core={c} wake-trigger scope={scope:?}");
                            }
                            true
                        }
                    }
                },
            };
            if issued {
                st.issued += 1;
                if let Some(w) = trace.as_deref_mut() {
                    let _ = writeln!(w, "cycle={t} core={c} issue {}", op_name(op));
                }
                pc[c] += 1;
                progress = true;
            }
            if statuses[c] == CoreStatus::Sleeping {
                sleeping_count += 1;
                running.remove(run_idx);
            } else {
                run_idx += 1;
            }
        }

        // 5. Arbitrate all waiting requests; grants take effect now.
        if !pending.is_empty() {
            arb_reqs.clear();
            arb_reqs.extend(pending.iter().map(|p| AccessRequest {
                core: p.core,
                kind: p.kind(),
                location: p.loc,
                issue_cycle: p.issue_cycle,
            }));
            let outcome = arbitrate(topo, &arb_reqs);
            for &i in &outcome.granted {
                let p = pending[i];
                let lat = topo.access_latency(p.core, &p.loc);
                match p.payload {
                    Payload::Load { dst } => {
                        regs[p.core][dst as usize] = mem.read(p.addr);
                        ready[p.core][dst as usize] = t + lat;
                    }
                    Payload::Store { value } => mem.write(p.addr, value),
                    Payload::Atomic { dst } => {
                        let old = mem.read(p.addr);
                        let new = Complex32::new(old.re + 1.0, old.im);
                        mem.write(p.addr, new);
                        regs[p.core][dst as usize] = new;
                        ready[p.core][dst as usize] = t + lat;
                    }
                }
                ring[((t + lat) as usize) & (ring_len - 1)].push(p.core);
                outstanding_events += 1;
                stats[p.core].conflict_wait += t - p.issue_cycle;
                progress = true;
                if let Some(w) = trace.as_deref_mut() {
                    let _ = writeln!(
                        w,
                        "cycle={t} core={} grant addr={} group={} tile={} bank={} latency={lat} waited={}",
                        p.core, p.addr, p.loc.group, p.loc.tile, p.loc.bank, t - p.issue_cycle
                    );
                }
            }
            pending = outcome.stalled.iter().map(|&i| pending[i]).collect();
        }

        if progress {
            last_progress = t;
        }
        t += 1;
    }

    for c in 0..n {
        stats[c].idle_tail = total_cycles - done_at[c];
    }
    Ok(CycleStats {
        total_cycles,
        per_core: stats,
        active_cores: set.active_cores(),
        fetch_stalls: 0,
    })
}

/// Executes the program set with full operand semantics but no timing model.
///
/// Cores run round-robin, each until it sleeps or retires; wake-ups deliver
/// immediately. Memory ends up bit-identical to the timed run for programs
/// whose cross-core communication is ordered by barriers.
pub fn run_functional(
    topo: &ClusterTopology,
    set: &ProgramSet,
    mem: &mut ClusterMemory,
) -> Result<(), EngineError> {
    validate_set(topo, set)?;
    if mem.len() != topo.total_words() {
        return Err(EngineError::InvalidProgram {
            reason: format!("memory has {} words, topology needs {}", mem.len(), topo.total_words()),
        });
    }

    let n = topo.num_cores();
    let zero = Complex32::new(0.0, 0.0);
    let mut pc = vec![0usize; n];
    let mut regs = vec![[zero; NUM_REGS]; n];
    let mut latches = vec![false; n];
    let mut statuses = vec![CoreStatus::Running; n];
    let mut scope_buf: Vec<usize> = Vec::new();
    for c in 0..n {
        if set.programs[c].is_empty() {
            statuses[c] = CoreStatus::Done;
        }
    }

    let mut sweep: u64 = 0;
    loop {
        let mut progress = false;
        for c in 0..n {
            if statuses[c] != CoreStatus::Running {
                continue;
            }
            loop {
                if pc[c] == set.programs[c].len() {
                    statuses[c] = CoreStatus::Done;
                    break;
                }
                match set.programs[c][pc[c]] {
                    MicroOp::Load { addr, dst } => regs[c][dst as usize] = mem.read(addr),
                    MicroOp::Store { addr, src } => mem.write(addr, regs[c][src as usize]),
                    MicroOp::StoreImm { addr, value, only_if } => {
                        if guard_value(only_if, &regs[c]) {
                            mem.write(addr, value);
                        }
                    }
                    MicroOp::AtomicAdd { addr, dst } => {
                        let old = mem.read(addr);
                        let new = Complex32::new(old.re + 1.0, old.im);
                        mem.write(addr, new);
                        regs[c][dst as usize] = new;
                    }
                    MicroOp::Compute { op, s0, s1, dst } => {
                        let (s0, s1, dst) = (s0 as usize, s1 as usize, dst as usize);
                        regs[c][dst] = op.eval(regs[c][s0], regs[c][s1], regs[c][dst]);
                    }
                    MicroOp::Wfi { skip_if } => {
                        let skip = skip_if.is_some() && guard_value(skip_if, &regs[c]);
                        if !skip {
                            if latches[c] {
                                latches[c] = false;
                            } else {
                                statuses[c] = CoreStatus::Sleeping;
                                pc[c] += 1;
                                progress = true;
                                break;
                            }
                        }
                    }
                    MicroOp::CsrWakeup { scope, barrier, only_if } => {
                        if guard_value(only_if, &regs[c]) {
                            if let Some(b) = barrier {
                                let parts = &set.barriers[b].participants;
                                scope_buf.clear();
                                for_each_scope_core(topo, scope, |core| scope_buf.push(core));
                                for &core in &scope_buf {
                                    if core != c
                                        && statuses[core] != CoreStatus::Done
                                        && parts.binary_search(&core).is_err()
                                    {
                                        return Err(EngineError::MismatchedParticipants {
                                            barrier: b,
                                            core,
                                            cycle: sweep,
                                        });
                                    }
                                }
                            }
                            wakeup_dispatch(topo, scope, Some(c), &mut statuses, &mut latches);
                        }
                    }
                }
                pc[c] += 1;
                progress = true;
            }
        }
        if statuses.iter().all(|&s| s == CoreStatus::Done) {
            return Ok(());
        }
        if !progress {
            let sleeping = statuses.iter().filter(|&&s| s == CoreStatus::Sleeping).count();
            let first_sleeping = statuses.iter().position(|&s| s == CoreStatus::Sleeping);
            return Err(EngineError::Deadlock { cycle: sweep, sleeping, blocked: 0, first_sleeping });
        }
        sweep += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::super::{BarrierSpec, ComputeOp};
    use super::*;
    use proptest::prelude::*;

    fn c(re: f32, im: f32) -> Complex32 {
        Complex32::new(re, im)
    }

    fn imm(v: f32, dst: Reg) -> MicroOp {
        MicroOp::Compute { op: ComputeOp::Imm(c(v, 0.0)), s0: 0, s1: 0, dst }
    }

    fn run_plain(topo: &ClusterTopology, set: &ProgramSet, mem: &mut ClusterMemory) -> CycleStats {
        run(topo, set, mem, &RunOptions::default(), None).expect("run succeeds")
    }

    /// A load's consumer waits out the round-trip latency as raw stalls.
    #[test]
    fn remote_load_use_gap_is_the_round_trip() {
        let topo = ClusterTopology::custom(1, 1, 2).unwrap();
        let mut set = ProgramSet::new(2);
        // Address 4 lives in group 1: remote for core 0, latency 5.
        set.programs[0] = vec![
            MicroOp::Load { addr: 4, dst: 0 },
            MicroOp::Compute { op: ComputeOp::Add, s0: 0, s1: 0, dst: 1 },
            MicroOp::Store { addr: 0, src: 1 },
        ];
        let mut mem = ClusterMemory::zeroed(&topo);
        mem.write(4, c(1.5, -0.5));
        let stats = run_plain(&topo, &set, &mut mem);
        assert_eq!(stats.per_core[0].raw_stalls, 4, "grant at 0, value usable at 5");
        assert_eq!(stats.per_core[0].issued, 3);
        assert_eq!(stats.total_cycles, 7, "store response drains at cycle 7");
        assert!(stats.accounting_exact());
        assert_eq!(mem.read(0), c(3.0, -1.0));
    }

    /// Same-cycle requests to one bank: the lower core id wins, the loser's
    /// wait is charged to conflict_wait, not to an issue stall.
    #[test]
    fn bank_conflict_wait_accumulates_on_the_losing_core() {
        let topo = ClusterTopology::custom(2, 1, 1).unwrap();
        let mut set = ProgramSet::new(2);
        let iterations = 100;
        for core in 0..2 {
            let prog = &mut set.programs[core];
            for _ in 0..iterations {
                prog.push(MicroOp::Load { addr: 0, dst: 0 });
                prog.push(imm(1.0, 1));
                prog.push(imm(2.0, 2));
                prog.push(imm(3.0, 3));
            }
        }
        let mut mem = ClusterMemory::zeroed(&topo);
        let stats = run(&topo, &set, &mut mem, &RunOptions::default(), None).unwrap();
        assert_eq!(stats.per_core[0].conflict_wait, 0);
        assert_eq!(stats.per_core[1].conflict_wait, iterations as u64);
        for core in 0..2 {
            assert_eq!(stats.per_core[core].raw_stalls, 0);
            assert_eq!(stats.per_core[core].lsu_stalls, 0);
            assert_eq!(stats.per_core[core].issued, 4 * iterations as u64);
        }
        assert_eq!(stats.total_cycles, 4 * iterations as u64);
        assert!(stats.accounting_exact());
    }

    /// The atomic waits for the core's own earlier accesses to respond.
    #[test]
    fn atomic_add_drains_the_queue_first() {
        let topo = ClusterTopology::custom(1, 1, 2).unwrap();
        let mut set = ProgramSet::new(2);
        set.programs[0] = vec![
            MicroOp::Load { addr: 4, dst: 0 }, // remote, responds at cycle 5
            MicroOp::AtomicAdd { addr: 0, dst: 1 },
        ];
        let mut mem = ClusterMemory::zeroed(&topo);
        let stats = run_plain(&topo, &set, &mut mem);
        assert_eq!(stats.per_core[0].lsu_stalls, 4, "ordered op waits cycles 1-4");
        assert_eq!(mem.read(0), c(1.0, 0.0));
        assert!(stats.accounting_exact());
    }

    /// The divide/sqrt unit is unpipelined: back-to-back ops serialize.
    #[test]
    fn div_sqrt_unit_is_unpipelined() {
        let topo = ClusterTopology::custom(1, 1, 1).unwrap();
        let mut set = ProgramSet::new(1);
        set.programs[0] = vec![
            imm(4.0, 0),
            MicroOp::Compute { op: ComputeOp::SqrtRe, s0: 0, s1: 0, dst: 1 },
            MicroOp::Compute { op: ComputeOp::SqrtRe, s0: 0, s1: 0, dst: 2 },
            MicroOp::Store { addr: 0, src: 1 },
        ];
        let mut mem = ClusterMemory::zeroed(&topo);
        let stats = run_plain(&topo, &set, &mut mem);
        assert_eq!(stats.per_core[0].raw_stalls, 11, "second sqrt waits for the unit");
        assert_eq!(stats.total_cycles, 15);
        assert_eq!(mem.read(0), c(2.0, 0.0));
        assert!(stats.accounting_exact());
    }

    #[test]
    fn full_queue_charges_lsu_stalls() {
        let topo = ClusterTopology::custom(2, 1, 1).unwrap();
        let mut set = ProgramSet::new(2);
        // Two cores hammer one bank back-to-back. The bank grants one
        // request per cycle, so ungranted requests pile up in both queues
        // until the 8-entry limit throttles issue.
        for core in 0..2 {
            set.programs[core] = (0..24).map(|_| MicroOp::Load { addr: 0, dst: 0 }).collect();
        }
        let mut mem = ClusterMemory::zeroed(&topo);
        let stats = run_plain(&topo, &set, &mut mem);
        assert!(stats.per_core[0].lsu_stalls > 0);
        assert!(stats.per_core[1].lsu_stalls > 0);
        assert!(stats.accounting_exact());
    }

    /// Both cores arrive at a barrier; the early one sleeps and is woken by
    /// the last arrival, which resets the counter for reuse.
    #[test]
    fn barrier_wakes_all_participants() {
        let topo = ClusterTopology::custom(2, 1, 1).unwrap();
        let mut set = ProgramSet::new(2);
        let b = set.add_barrier(BarrierSpec { counter_addr: 100, participants: vec![0, 1] });
        for _ in 0..5 {
            set.programs[0].push(imm(0.0, 0));
        }
        set.emit_barrier_arrival(&topo, b, 0, 29);
        set.emit_barrier_arrival(&topo, b, 1, 29);
        set.programs[0].push(MicroOp::StoreImm { addr: 200, value: c(1.0, 0.0), only_if: None });
        set.programs[1].push(MicroOp::StoreImm { addr: 201, value: c(2.0, 0.0), only_if: None });
        let mut mem = ClusterMemory::zeroed(&topo);
        let stats = run_plain(&topo, &set, &mut mem);
        assert_eq!(mem.read(100), c(0.0, 0.0), "counter reset for reuse");
        assert_eq!(mem.read(200), c(1.0, 0.0));
        assert_eq!(mem.read(201), c(2.0, 0.0));
        assert_eq!(stats.per_core[0].wfi_stalls, 0, "last arrival skips the sleep");
        assert_eq!(stats.per_core[1].wfi_stalls, 7, "early arrival sleeps cycles 2-8");
        assert_eq!(stats.total_cycles, 12);
        assert!(stats.accounting_exact());
    }

    /// A wake-up reaching a still-running participant sets the wake latch so
    /// the participant's sleep attempt falls through instead of sleeping past
    /// the only wake-up it will ever get.
    #[test]
    fn wake_latch_prevents_the_lost_wakeup() {
        let topo = ClusterTopology::custom(1, 1, 2).unwrap();
        let mut set = ProgramSet::new(2);
        let b = set.add_barrier(BarrierSpec { counter_addr: 0, participants: vec![0, 1] });
        // Core 1 (remote from the counter) arrives first but sees its count
        // only after the 5-cycle round trip; core 0 arrives second, completes
        // the barrier and fires the wake-up while core 1 is still waiting.
        set.programs[0].push(imm(0.0, 5));
        set.emit_barrier_arrival(&topo, b, 0, 29);
        set.emit_barrier_arrival(&topo, b, 1, 29);
        // Final marker stores are local to each core so the drain is short.
        set.programs[0].push(MicroOp::StoreImm { addr: 16, value: c(5.0, 0.0), only_if: None });
        set.programs[1].push(MicroOp::StoreImm { addr: 21, value: c(7.0, 0.0), only_if: None });
        let mut mem = ClusterMemory::zeroed(&topo);
        let stats = run_plain(&topo, &set, &mut mem);
        assert_eq!(mem.read(0), c(0.0, 0.0));
        assert_eq!(mem.read(16), c(5.0, 0.0));
        assert_eq!(mem.read(21), c(7.0, 0.0));
        assert_eq!(stats.per_core[1].wfi_stalls, 0, "latch consumed, never slept");
        assert_eq!(stats.per_core[1].raw_stalls, 4, "waited for its own count");
        assert_eq!(stats.total_cycles, 9);
        assert!(stats.accounting_exact());
    }

    #[test]
    fn missing_participant_deadlocks_and_is_reported() {
        let topo = ClusterTopology::custom(2, 1, 1).unwrap();
        let mut set = ProgramSet::new(2);
        let b = set.add_barrier(BarrierSpec { counter_addr: 60, participants: vec![0, 1] });
        set.emit_barrier_arrival(&topo, b, 0, 29);
        // Core 1 never arrives.
        let mut mem = ClusterMemory::zeroed(&topo);
        let err = run(&topo, &set, &mut mem, &RunOptions::default(), None).unwrap_err();
        match err {
            EngineError::Deadlock { sleeping, first_sleeping, .. } => {
                assert_eq!(sleeping, 1);
                assert_eq!(first_sleeping, Some(0));
            }
            other => panic!("expected deadlock, got {other:?}"),
        }
    }

    #[test]
    fn wakeup_outside_the_participant_set_is_flagged() {
        let topo = ClusterTopology::custom(2, 1, 1).unwrap();
        let mut set = ProgramSet::new(2);
        let b = set.add_barrier(BarrierSpec { counter_addr: 50, participants: vec![0] });
        set.programs[0] = vec![MicroOp::CsrWakeup { scope: WakeupScope::Core(1), barrier: Some(b), only_if: None }];
        set.programs[1] = vec![imm(0.0, 0), imm(0.0, 1), imm(0.0, 2)];
        let mut mem = ClusterMemory::zeroed(&topo);
        let err = run(&topo, &set, &mut mem, &RunOptions::default(), None).unwrap_err();
        assert_eq!(err, EngineError::MismatchedParticipants { barrier: 0, core: 1, cycle: 1 });
    }

    #[test]
    fn wakeup_dispatch_covers_exactly_the_scope() {
        let topo = ClusterTopology::custom(2, 2, 2).unwrap(); // 8 cores
        let mut statuses = vec![CoreStatus::Sleeping; 8];
        statuses[3] = CoreStatus::Running;
        statuses[7] = CoreStatus::Done;
        let mut latches = vec![false; 8];
        let woken = wakeup_dispatch(&topo, WakeupScope::Group(0), None, &mut statuses, &mut latches);
        assert_eq!(woken, vec![0, 1, 2], "sleeping cores of group 0");
        assert!(latches[3], "running core in scope gets the latch");
        assert_eq!(statuses[4], CoreStatus::Sleeping, "group 1 untouched");

        let mut statuses = vec![CoreStatus::Sleeping; 8];
        let mut latches = vec![false; 8];
        let woken = wakeup_dispatch(&topo, WakeupScope::Tile { group: 1, tile: 0 }, Some(4), &mut statuses, &mut latches);
        assert_eq!(woken, vec![5], "tile scope minus the issuer");
        assert_eq!(statuses[4], CoreStatus::Sleeping, "issuer never self-wakes");
    }

    #[test]
    fn invalid_programs_are_rejected() {
        let topo = ClusterTopology::custom(1, 1, 1).unwrap();
        let mut mem = ClusterMemory::zeroed(&topo);
        // Wrong program count.
        let set = ProgramSet::new(2);
        assert!(matches!(
            run(&topo, &set, &mut mem, &RunOptions::default(), None),
            Err(EngineError::InvalidProgram { .. })
        ));
        // Register out of range.
        let mut set = ProgramSet::new(1);
        set.programs[0] = vec![MicroOp::Load { addr: 0, dst: 40 }];
        assert!(matches!(
            run(&topo, &set, &mut mem, &RunOptions::default(), None),
            Err(EngineError::InvalidProgram { .. })
        ));
        // Address out of range.
        let mut set = ProgramSet::new(1);
        set.programs[0] = vec![MicroOp::Load { addr: topo.total_words(), dst: 0 }];
        assert!(matches!(
            run(&topo, &set, &mut mem, &RunOptions::default(), None),
            Err(EngineError::InvalidProgram { .. })
        ));
        // Two barriers sharing a counter word.
        let mut set = ProgramSet::new(1);
        set.add_barrier(BarrierSpec { counter_addr: 9, participants: vec![0] });
        set.add_barrier(BarrierSpec { counter_addr: 9, participants: vec![0] });
        assert!(matches!(
            run(&topo, &set, &mut mem, &RunOptions::default(), None),
            Err(EngineError::InvalidProgram { .. })
        ));
    }

    #[test]
    fn empty_program_set_finishes_in_zero_cycles() {
        let topo = ClusterTopology::custom(2, 1, 1).unwrap();
        let set = ProgramSet::new(2);
        let mut mem = ClusterMemory::zeroed(&topo);
        let stats = run_plain(&topo, &set, &mut mem);
        assert_eq!(stats.total_cycles, 0);
        assert_eq!(stats.active_cores, 0);
        assert!(stats.accounting_exact());
    }

    #[test]
    fn throughput_metrics_follow_the_counts() {
        let topo = ClusterTopology::custom(1, 1, 1).unwrap();
        let mut set = ProgramSet::new(1);
        set.programs[0] = vec![
            imm(1.0, 0),
            imm(2.0, 1),
            MicroOp::Compute { op: ComputeOp::Mul, s0: 0, s1: 1, dst: 2 },
            MicroOp::Compute { op: ComputeOp::Mac, s0: 0, s1: 1, dst: 2 },
        ];
        let mut mem = ClusterMemory::zeroed(&topo);
        let stats = run_plain(&topo, &set, &mut mem);
        // Mac reads its accumulator, so it waits out the multiplier latency.
        assert_eq!(stats.total_cycles, 6);
        assert_eq!(stats.issued(), 4);
        assert_eq!(stats.mac_ops(), 2);
        assert!((stats.ipc() - 4.0 / 6.0).abs() < 1e-12);
        assert!((stats.macs_per_cycle() - 2.0 / 6.0).abs() < 1e-12);
        assert!(stats.accounting_exact());
    }

    /// Cross-core communication through a barrier: the functional twin and
    /// the timed run end with bit-identical memory.
    #[test]
    fn functional_twin_matches_timed_memory() {
        let topo = ClusterTopology::custom(2, 1, 1).unwrap();
        let mut set = ProgramSet::new(2);
        let b = set.add_barrier(BarrierSpec { counter_addr: 64, participants: vec![0, 1] });
        set.programs[0] = vec![
            MicroOp::Compute { op: ComputeOp::Imm(c(3.0, 4.0)), s0: 0, s1: 0, dst: 0 },
            MicroOp::Store { addr: 5, src: 0 },
        ];
        set.emit_barrier_arrival(&topo, b, 0, 29);
        set.emit_barrier_arrival(&topo, b, 1, 29);
        set.programs[1].push(MicroOp::Load { addr: 5, dst: 0 });
        set.programs[1].push(MicroOp::Compute { op: ComputeOp::Mul, s0: 0, s1: 0, dst: 1 });
        set.programs[1].push(MicroOp::Store { addr: 6, src: 1 });

        let mut timed = ClusterMemory::zeroed(&topo);
        let stats = run_plain(&topo, &set, &mut timed);
        let mut functional = ClusterMemory::zeroed(&topo);
        run_functional(&topo, &set, &mut functional).unwrap();
        assert_eq!(timed, functional);
        assert_eq!(timed.read(6), c(-7.0, 24.0), "(3+4i)^2");
        assert!(stats.accounting_exact());
    }

    #[test]
    fn functional_twin_detects_deadlock() {
        let topo = ClusterTopology::custom(2, 1, 1).unwrap();
        let mut set = ProgramSet::new(2);
        let b = set.add_barrier(BarrierSpec { counter_addr: 60, participants: vec![0, 1] });
        set.emit_barrier_arrival(&topo, b, 0, 29);
        let mut mem = ClusterMemory::zeroed(&topo);
        assert!(matches!(
            run_functional(&topo, &set, &mut mem),
            Err(EngineError::Deadlock { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Random straight-line programs: the accounting identity holds for
        /// every core and the whole run is bit-deterministic.
        #[test]
        fn accounting_identity_and_determinism(
            progs in proptest::collection::vec(
                proptest::collection::vec(
                    prop_oneof![
                        (0usize..64, 0u8..4).prop_map(|(a, r)| MicroOp::Load { addr: a, dst: r }),
                        (0usize..64, 0u8..4).prop_map(|(a, r)| MicroOp::Store { addr: a, src: r }),
                        (0u8..4, 0u8..4, 0u8..4).prop_map(|(s0, s1, d)| MicroOp::Compute { op: ComputeOp::Add, s0, s1, dst: d }),
                        (0u8..4, 0u8..4, 0u8..4).prop_map(|(s0, s1, d)| MicroOp::Compute { op: ComputeOp::Mac, s0, s1, dst: d }),
                        (-4.0f32..4.0, 0u8..4).prop_map(|(v, d)| MicroOp::Compute { op: ComputeOp::Imm(Complex32::new(v, 0.0)), s0: 0, s1: 0, dst: d }),
                    ],
                    0..12,
                ),
                8,
            )
        ) {
            let topo = ClusterTopology::custom(2, 2, 2).unwrap();
            let mut set = ProgramSet::new(8);
            set.programs = progs;
            let mut mem_a = ClusterMemory::zeroed(&topo);
            let stats_a = run(&topo, &set, &mut mem_a, &RunOptions::default(), None).unwrap();
            prop_assert!(stats_a.accounting_exact());
            let mut mem_b = ClusterMemory::zeroed(&topo);
            let stats_b = run(&topo, &set, &mut mem_b, &RunOptions::default(), None).unwrap();
            prop_assert_eq!(stats_a, stats_b);
            prop_assert_eq!(mem_a, mem_b);
        }
    }
}
