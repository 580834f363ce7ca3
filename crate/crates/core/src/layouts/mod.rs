//! Data-placement planning for the banked cluster memory.
//!
//! A [`LayoutPlan`] describes, independently of any executable program, where
//! every logical value of a kernel lives ([`BankLocation`] per value id), what
//! each core reads, computes and writes in every phase, and which cores must
//! synchronize at which phase boundaries. Plans are checked by
//! [`verify_conflict_free`], which walks the per-phase access streams in
//! idealized lockstep and reports:
//!
//! * how many reads are *core-local* (same tile as the issuing core, i.e.
//!   single-cycle),
//! * how many same-cycle-slot accesses collide on one bank, and
//! * the worst same-slot pile-up of requests from one tile onto one remote
//!   group (those share a single request port in the interconnect).
//!
//! The verifier also proves the plan well-formed: every referenced id is
//! placed, no two values written in the same phase share a word, nothing is
//! read before it is written, and every cross-core dependency (including
//! write-after-read reuse of a word) is covered by a sync point whose
//! participants include both cores.
//!
//! The concrete planners live in submodules: [`fft`] (folded butterflies),
//! [`mmm`] (4x4 output windows) and [`cholesky`] (row-per-bank mirrored
//! pairs). Each submodule also lowers its plan to an executable
//! [`ProgramSet`](crate::engine::ProgramSet) from the same schedule walk, so
//! the verified plan and the simulated program cannot drift apart.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{BankLocation, ClusterTopology};

pub mod cholesky;
pub mod fft;
pub mod mmm;

pub use cholesky::{cholesky_capacity, cholesky_layout, cholesky_pair_program, CholeskyProgram};
pub use fft::{
    fft_fold_layout, fft_fold_layout_batched, fft_fold_program, fft_replication,
    fft_serial_program, fft_unfolded_layout, FftProgram, ReplicationPlan,
};
pub use mmm::{
    mmm_program, mmm_schedule, mmm_schedule_conflicting, mmm_serial_program, MmmProgram,
    MmmSchedule,
};

/// Register reserved by convention for barrier arrival counts in lowered
/// programs (the engine allows any register; keeping one fixed makes the
/// emitted programs easier to audit).
pub const BARRIER_COUNT_REG: u8 = 29;

/// What one core does during one phase: the logical ids it reads, how many
/// compute operations it performs on them, and the ids it writes. Reads
/// precede computes, computes precede writes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseAccess {
    pub reads: Vec<u64>,
    pub computes: u32,
    pub writes: Vec<u64>,
}

impl PhaseAccess {
    pub fn is_empty(&self) -> bool {
        self.reads.is_empty() && self.computes == 0 && self.writes.is_empty()
    }
}

/// A synchronization requirement at the boundary *after* phase `boundary`:
/// all `participants` finish phase `boundary` before any of them starts
/// phase `boundary + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncPoint {
    pub boundary: usize,
    pub participants: Vec<usize>,
}

/// A complete placement-and-schedule description of one kernel instance.
///
/// `placement` maps every logical value id to the word that holds it;
/// `core_work[c]` lists the phases of core `c` (cores may have empty
/// phases); `sync_points` are the barriers the schedule relies on.
/// Ids are opaque to the verifier; planners pack kind/coordinates into them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub placement: BTreeMap<u64, BankLocation>,
    pub core_work: Vec<Vec<PhaseAccess>>,
    pub sync_points: Vec<SyncPoint>,
}

impl LayoutPlan {
    pub fn new(num_cores: usize) -> Self {
        Self {
            placement: BTreeMap::new(),
            core_work: vec![Vec::new(); num_cores],
            sync_points: Vec::new(),
        }
    }

    /// Number of phases (cores with shorter lists idle through the rest).
    pub fn num_phases(&self) -> usize {
        self.core_work.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Total reads and writes across all cores and phases.
    pub fn access_counts(&self) -> (u64, u64) {
        let mut reads = 0u64;
        let mut writes = 0u64;
        for phases in &self.core_work {
            for p in phases {
                reads += p.reads.len() as u64;
                writes += p.writes.len() as u64;
            }
        }
        (reads, writes)
    }
}

/// Verdict of [`verify_conflict_free`]: locality and contention metrics of a
/// well-formed plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub total_reads: u64,
    pub total_writes: u64,
    /// Fraction of reads served by a bank in the reading core's own tile
    /// (single-cycle accesses).
    pub local_read_fraction: f64,
    /// Same-slot accesses beyond the first to any single bank, summed over
    /// all slots (0 means every slot is conflict-free).
    pub conflict_count: u64,
    /// Worst same-slot overlap of requests from one tile to one remote
    /// group, beyond the single request port (0 means the port is never
    /// oversubscribed in lockstep).
    pub max_tile_to_group_collisions: u32,
}

/// Failures of layout planning or plan verification.
#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("{kernel}: got {got} cores, needs {needed}")]
    TooFewCores {
        kernel: &'static str,
        got: usize,
        needed: String,
    },
    #[error("length {n} is not a power of four (>= 4)")]
    NotPowerOfFour { n: usize },
    #[error("problem size {n} exceeds what the memory can hold ({detail})")]
    TooLarge { n: usize, detail: String },
    #[error("{context}: sizes do not match ({detail})")]
    SizeMismatch {
        context: &'static str,
        detail: String,
    },
    #[error("plan references id {id} with no placement")]
    UnplacedId { id: u64 },
    #[error("placement of id {id} is not a valid location for this topology")]
    BadLocation { id: u64 },
    #[error("ids {first} and {second} are written to the same word in phase {phase}")]
    WriteCollision { first: u64, second: u64, phase: usize },
    #[error("id {id} is read in phase {phase} but only written in phase {writer_phase}")]
    ReadBeforeWrite {
        id: u64,
        phase: usize,
        writer_phase: usize,
    },
    #[error("id {id} is read in phase {phase} after its word was overwritten in phase {overwrite_phase}")]
    StaleRead {
        id: u64,
        phase: usize,
        overwrite_phase: usize,
    },
    #[error("id {id} is written more than once")]
    DuplicateWrite { id: u64 },
    #[error(
        "no sync point orders cores {from_core} (phase {from_phase}) and {to_core} (phase {to_phase}) for id {id}"
    )]
    MissingSync {
        id: u64,
        from_core: usize,
        from_phase: usize,
        to_core: usize,
        to_phase: usize,
    },
    #[error("plan is malformed: {reason}")]
    MalformedPlan { reason: String },
}

/// Location of the counter word backing barrier number `index`.
///
/// Counters are spread across all banks in the top rows of the bank address
/// space, far from the kernel data that planners place in the low rows.
pub(crate) fn counter_location(topo: &ClusterTopology, index: usize) -> BankLocation {
    let banks = topo.num_banks();
    let flat = index % banks;
    let tile_flat = flat / topo.banks_per_tile;
    BankLocation {
        group: tile_flat / topo.tiles_per_group,
        tile: tile_flat % topo.tiles_per_group,
        bank: flat % topo.banks_per_tile,
        offset: topo.words_per_bank - 1 - index / banks,
    }
}

/// Rows at the top of every bank that barrier counters may occupy given the
/// number of barriers; planners keep data clear of them.
pub(crate) fn counter_rows(topo: &ClusterTopology, num_barriers: usize) -> usize {
    num_barriers.div_ceil(topo.num_banks())
}

struct WriterInfo {
    core: usize,
    phase: usize,
}

/// Checks a plan for well-formedness and returns its locality/contention
/// metrics (see the module docs for the exact rules).
pub fn verify_conflict_free(
    plan: &LayoutPlan,
    topo: &ClusterTopology,
) -> Result<LocalityReport, LayoutError> {
    if plan.core_work.len() != topo.num_cores() {
        return Err(LayoutError::MalformedPlan {
            reason: format!(
                "plan covers {} cores but the topology has {}",
                plan.core_work.len(),
                topo.num_cores()
            ),
        });
    }
    let num_phases = plan.num_phases();
    for sync in &plan.sync_points {
        if sync.boundary + 1 >= num_phases + 1 {
            // A barrier after the final phase orders nothing; treat as malformed.
            if sync.boundary >= num_phases {
                return Err(LayoutError::MalformedPlan {
                    reason: format!(
                        "sync point at boundary {} but the plan has {} phases",
                        sync.boundary, num_phases
                    ),
                });
            }
        }
        for &c in &sync.participants {
            if c >= topo.num_cores() {
                return Err(LayoutError::MalformedPlan {
                    reason: format!("sync point names core {c} outside the topology"),
                });
            }
        }
    }

    // Resolve every referenced id to a word address once.
    let mut word_of: HashMap<u64, usize> = HashMap::with_capacity(plan.placement.len());
    for (&id, loc) in &plan.placement {
        let addr = topo
            .address_of(loc)
            .map_err(|_| LayoutError::BadLocation { id })?;
        word_of.insert(id, addr);
    }
    let resolve = |id: u64| -> Result<usize, LayoutError> {
        word_of.get(&id).copied().ok_or(LayoutError::UnplacedId { id })
    };

    // Pass 1: writers, readers, and per-phase write collisions.
    let mut writer: HashMap<u64, WriterInfo> = HashMap::new();
    let mut readers: HashMap<u64, Vec<(usize, usize)>> = HashMap::new();
    for (core, phases) in plan.core_work.iter().enumerate() {
        for (phase, acc) in phases.iter().enumerate() {
            for &id in &acc.reads {
                resolve(id)?;
                readers.entry(id).or_default().push((core, phase));
            }
            for &id in &acc.writes {
                resolve(id)?;
                if writer.insert(id, WriterInfo { core, phase }).is_some() {
                    return Err(LayoutError::DuplicateWrite { id });
                }
            }
        }
    }
    let mut words_in_phase: HashMap<(usize, usize), u64> = HashMap::new();
    for (_, phases) in plan.core_work.iter().enumerate() {
        for (phase, acc) in phases.iter().enumerate() {
            for &id in &acc.writes {
                let w = resolve(id)?;
                if let Some(&prev) = words_in_phase.get(&(w, phase)) {
                    return Err(LayoutError::WriteCollision {
                        first: prev,
                        second: id,
                        phase,
                    });
                }
                words_in_phase.insert((w, phase), id);
            }
        }
    }

    // Sync lookup: is there a barrier at a boundary in [lo, hi) covering both?
    let covered = |lo: usize, hi: usize, a: usize, b: usize| -> bool {
        plan.sync_points.iter().any(|s| {
            s.boundary >= lo
                && s.boundary < hi
                && s.participants.contains(&a)
                && s.participants.contains(&b)
        })
    };

    // Pass 2: read-after-write ordering.
    for (&id, reads) in &readers {
        if let Some(w) = writer.get(&id) {
            for &(r_core, r_phase) in reads {
                if r_phase <= w.phase {
                    return Err(LayoutError::ReadBeforeWrite {
                        id,
                        phase: r_phase,
                        writer_phase: w.phase,
                    });
                }
                if r_core != w.core && !covered(w.phase, r_phase, w.core, r_core) {
                    return Err(LayoutError::MissingSync {
                        id,
                        from_core: w.core,
                        from_phase: w.phase,
                        to_core: r_core,
                        to_phase: r_phase,
                    });
                }
            }
        }
    }

    // Pass 3: word reuse — write-after-write and write-after-read hazards
    // between different ids sharing a word.
    let mut ids_by_word: HashMap<usize, Vec<u64>> = HashMap::new();
    for (&id, &w) in &word_of {
        ids_by_word.entry(w).or_default().push(id);
    }
    for ids in ids_by_word.values() {
        if ids.len() < 2 {
            continue;
        }
        // Order the occupants of this word by write phase; ids never written
        // (pre-loaded inputs) occupy the word from the start.
        let mut occupants: Vec<(u64, Option<&WriterInfo>)> =
            ids.iter().map(|&id| (id, writer.get(&id))).collect();
        occupants.sort_by_key(|(id, w)| (w.map_or(0, |w| w.phase + 1), *id));
        for pair in occupants.windows(2) {
            let (prev_id, prev_w) = (pair[0].0, pair[0].1);
            let (next_id, next_w) = (pair[1].0, pair[1].1);
            let next_w = match next_w {
                Some(w) => w,
                // Two never-written ids on one word: both are inputs; that is
                // two names for one value slot and cannot conflict.
                None => continue,
            };
            // Write-after-write: the earlier write must be ordered before the
            // overwrite unless one core does both.
            if let Some(prev_w) = prev_w {
                if prev_w.phase == next_w.phase {
                    return Err(LayoutError::WriteCollision {
                        first: prev_id,
                        second: next_id,
                        phase: next_w.phase,
                    });
                }
                if prev_w.core != next_w.core
                    && !covered(prev_w.phase, next_w.phase, prev_w.core, next_w.core)
                {
                    return Err(LayoutError::MissingSync {
                        id: next_id,
                        from_core: prev_w.core,
                        from_phase: prev_w.phase,
                        to_core: next_w.core,
                        to_phase: next_w.phase,
                    });
                }
            }
            // Write-after-read: everyone reading the earlier value must do so
            // before the overwrite (same phase is fine for the overwriting
            // core itself: reads precede writes inside a phase).
            if let Some(reads) = readers.get(&prev_id) {
                for &(r_core, r_phase) in reads {
                    if r_phase > next_w.phase
                        || (r_phase == next_w.phase && r_core != next_w.core)
                    {
                        return Err(LayoutError::StaleRead {
                            id: prev_id,
                            phase: r_phase,
                            overwrite_phase: next_w.phase,
                        });
                    }
                    if r_phase < next_w.phase
                        && r_core != next_w.core
                        && !covered(r_phase, next_w.phase, r_core, next_w.core)
                    {
                        return Err(LayoutError::MissingSync {
                            id: prev_id,
                            from_core: r_core,
                            from_phase: r_phase,
                            to_core: next_w.core,
                            to_phase: next_w.phase,
                        });
                    }
                }
            }
        }
    }

    // Pass 4: lockstep slot metrics. Within a phase, slot k of the read
    // streams of all cores land together, then slot k of the write streams.
    let mut total_reads = 0u64;
    let mut local_reads = 0u64;
    let mut total_writes = 0u64;
    let mut conflict_count = 0u64;
    let mut max_port: u32 = 0;
    let mut bank_hits: HashMap<usize, u32> = HashMap::new();
    let mut port_hits: HashMap<(usize, usize, usize), u32> = HashMap::new();
    for phase in 0..num_phases {
        for is_write in [false, true] {
            let slots = plan
                .core_work
                .iter()
                .map(|phases| {
                    phases.get(phase).map_or(0, |a| {
                        if is_write {
                            a.writes.len()
                        } else {
                            a.reads.len()
                        }
                    })
                })
                .max()
                .unwrap_or(0);
            for slot in 0..slots {
                bank_hits.clear();
                port_hits.clear();
                for (core, phases) in plan.core_work.iter().enumerate() {
                    let Some(acc) = phases.get(phase) else { continue };
                    let stream = if is_write { &acc.writes } else { &acc.reads };
                    let Some(&id) = stream.get(slot) else { continue };
                    let loc = &plan.placement[&id];
                    let bank = topo.global_bank(loc);
                    *bank_hits.entry(bank).or_insert(0) += 1;
                    let (core_group, core_tile, _) = topo.core_coords(core);
                    if !is_write {
                        total_reads += 1;
                        if loc.group == core_group && loc.tile == core_tile {
                            local_reads += 1;
                        }
                    } else {
                        total_writes += 1;
                    }
                    if loc.group != core_group {
                        let tile_flat = core_group * topo.tiles_per_group + core_tile;
                        *port_hits.entry((tile_flat, loc.group, usize::from(is_write))).or_insert(0) += 1;
                    }
                }
                for &n in bank_hits.values() {
                    conflict_count += u64::from(n.saturating_sub(1));
                }
                for &n in port_hits.values() {
                    max_port = max_port.max(n.saturating_sub(1));
                }
            }
        }
    }

    Ok(LocalityReport {
        total_reads,
        total_writes,
        local_read_fraction: if total_reads == 0 {
            1.0
        } else {
            local_reads as f64 / total_reads as f64
        },
        conflict_count,
        max_tile_to_group_collisions: max_port,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn topo() -> ClusterTopology {
        ClusterTopology::custom(2, 2, 2).unwrap()
    }

    fn loc(topo: &ClusterTopology, core: usize, bank: usize, offset: usize) -> BankLocation {
        let mut l = topo.local_bank(core, bank);
        l.offset = offset;
        l
    }

    #[test]
    fn counter_words_are_distinct_and_high() {
        let t = topo();
        let mut seen = BTreeSet::new();
        for k in 0..2 * t.num_banks() {
            let l = counter_location(&t, k);
            let addr = t.address_of(&l).unwrap();
            assert!(seen.insert(addr), "counter {k} collides");
            assert!(l.offset >= t.words_per_bank - 2);
        }
        assert_eq!(counter_rows(&t, t.num_banks()), 1);
        assert_eq!(counter_rows(&t, t.num_banks() + 1), 2);
    }

    #[test]
    fn a_local_single_writer_plan_verifies_clean() {
        let t = topo();
        let mut plan = LayoutPlan::new(t.num_cores());
        // Core 0 reads two values from its own banks and writes one result.
        plan.placement.insert(1, loc(&t, 0, 0, 0));
        plan.placement.insert(2, loc(&t, 0, 1, 0));
        plan.placement.insert(3, loc(&t, 0, 2, 0));
        plan.core_work[0].push(PhaseAccess {
            reads: vec![1, 2],
            computes: 1,
            writes: vec![3],
        });
        let report = verify_conflict_free(&plan, &t).unwrap();
        assert_eq!(report.total_reads, 2);
        assert_eq!(report.total_writes, 1);
        assert_eq!(report.local_read_fraction, 1.0);
        assert_eq!(report.conflict_count, 0);
        assert_eq!(report.max_tile_to_group_collisions, 0);
    }

    #[test]
    fn same_slot_same_bank_reads_are_counted_as_conflicts() {
        let t = topo();
        let mut plan = LayoutPlan::new(t.num_cores());
        // Both cores of tile (0,0) read the same word in slot 0.
        plan.placement.insert(7, loc(&t, 0, 0, 0));
        for core in [0, 1] {
            plan.core_work[core].push(PhaseAccess {
                reads: vec![7],
                computes: 0,
                writes: vec![],
            });
        }
        let report = verify_conflict_free(&plan, &t).unwrap();
        assert_eq!(report.conflict_count, 1);
        // Same-tile cores reading their own tile's bank: local, no port use.
        assert_eq!(report.local_read_fraction, 1.0);
        assert_eq!(report.max_tile_to_group_collisions, 0);
    }

    #[test]
    fn same_tile_cores_hitting_one_remote_group_trip_the_port_metric() {
        let t = topo(); // cores 0,1 in group 0; banks of core 4 live in group 1
        let mut plan = LayoutPlan::new(t.num_cores());
        plan.placement.insert(1, loc(&t, 4, 0, 0));
        plan.placement.insert(2, loc(&t, 4, 1, 0));
        for (core, id) in [(0usize, 1u64), (1, 2)] {
            plan.core_work[core].push(PhaseAccess {
                reads: vec![id],
                computes: 0,
                writes: vec![],
            });
        }
        let report = verify_conflict_free(&plan, &t).unwrap();
        assert_eq!(report.conflict_count, 0); // different banks
        assert_eq!(report.local_read_fraction, 0.0);
        assert_eq!(report.max_tile_to_group_collisions, 1);
    }

    #[test]
    fn cross_core_reads_need_a_covering_sync_point() {
        let t = topo();
        let mut plan = LayoutPlan::new(t.num_cores());
        plan.placement.insert(1, loc(&t, 0, 0, 0));
        plan.core_work[0].push(PhaseAccess {
            reads: vec![],
            computes: 1,
            writes: vec![1],
        });
        plan.core_work[2] = vec![
            PhaseAccess::default(),
            PhaseAccess {
                reads: vec![1],
                computes: 0,
                writes: vec![],
            },
        ];
        assert!(matches!(
            verify_conflict_free(&plan, &t),
            Err(LayoutError::MissingSync { id: 1, .. })
        ));
        plan.sync_points.push(SyncPoint {
            boundary: 0,
            participants: vec![0, 2],
        });
        assert!(verify_conflict_free(&plan, &t).is_ok());
    }

    #[test]
    fn word_reuse_without_ordering_is_a_stale_read() {
        let t = topo();
        let mut plan = LayoutPlan::new(t.num_cores());
        let shared = loc(&t, 0, 0, 0);
        plan.placement.insert(1, shared); // input value
        plan.placement.insert(2, shared); // later occupant of the same word
        // Core 2 overwrites the word in phase 0; core 0 still reads the old
        // value in phase 1.
        plan.core_work[2].push(PhaseAccess {
            reads: vec![],
            computes: 0,
            writes: vec![2],
        });
        plan.core_work[0] = vec![
            PhaseAccess::default(),
            PhaseAccess {
                reads: vec![1],
                computes: 0,
                writes: vec![],
            },
        ];
        assert!(matches!(
            verify_conflict_free(&plan, &t),
            Err(LayoutError::StaleRead { id: 1, .. })
        ));
    }

    #[test]
    fn in_place_same_core_rewrite_is_allowed() {
        let t = topo();
        let mut plan = LayoutPlan::new(t.num_cores());
        let word = loc(&t, 3, 2, 5);
        plan.placement.insert(10, word);
        plan.placement.insert(11, word);
        plan.core_work[3].push(PhaseAccess {
            reads: vec![10],
            computes: 1,
            writes: vec![11],
        });
        let report = verify_conflict_free(&plan, &t).unwrap();
        assert_eq!(report.total_reads, 1);
        assert_eq!(report.total_writes, 1);
    }

    #[test]
    fn malformed_plans_are_rejected() {
        let t = topo();
        // Unplaced id.
        let mut plan = LayoutPlan::new(t.num_cores());
        plan.core_work[0].push(PhaseAccess {
            reads: vec![42],
            computes: 0,
            writes: vec![],
        });
        assert_eq!(
            verify_conflict_free(&plan, &t),
            Err(LayoutError::UnplacedId { id: 42 })
        );
        // Double write of one id.
        let mut plan = LayoutPlan::new(t.num_cores());
        plan.placement.insert(1, loc(&t, 0, 0, 0));
        plan.core_work[0].push(PhaseAccess {
            reads: vec![],
            computes: 0,
            writes: vec![1],
        });
        plan.core_work[1].push(PhaseAccess {
            reads: vec![],
            computes: 0,
            writes: vec![1],
        });
        assert_eq!(
            verify_conflict_free(&plan, &t),
            Err(LayoutError::DuplicateWrite { id: 1 })
        );
        // Two ids, one word, same phase.
        let mut plan = LayoutPlan::new(t.num_cores());
        plan.placement.insert(1, loc(&t, 0, 0, 0));
        plan.placement.insert(2, loc(&t, 0, 0, 0));
        plan.core_work[0].push(PhaseAccess {
            reads: vec![],
            computes: 0,
            writes: vec![1],
        });
        plan.core_work[1].push(PhaseAccess {
            reads: vec![],
            computes: 0,
            writes: vec![2],
        });
        assert!(matches!(
            verify_conflict_free(&plan, &t),
            Err(LayoutError::WriteCollision { .. })
        ));
        // Read of an id in the phase it is written.
        let mut plan = LayoutPlan::new(t.num_cores());
        plan.placement.insert(1, loc(&t, 0, 0, 0));
        plan.core_work[0].push(PhaseAccess {
            reads: vec![1],
            computes: 0,
            writes: vec![1],
        });
        assert!(matches!(
            verify_conflict_free(&plan, &t),
            Err(LayoutError::ReadBeforeWrite { id: 1, .. })
        ));
        // Wrong core count.
        let plan = LayoutPlan::new(3);
        assert!(matches!(
            verify_conflict_free(&plan, &t),
            Err(LayoutError::MalformedPlan { .. })
        ));
    }

    #[test]
    fn plans_serialize_to_stable_json() {
        let t = topo();
        let mut plan = LayoutPlan::new(2);
        plan.placement.insert(5, loc(&t, 0, 1, 3));
        plan.core_work[0].push(PhaseAccess {
            reads: vec![5],
            computes: 2,
            writes: vec![],
        });
        plan.sync_points.push(SyncPoint {
            boundary: 0,
            participants: vec![0, 1],
        });
        let json = serde_json::to_string(&plan).unwrap();
        let back: LayoutPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
        assert_eq!(json, serde_json::to_string(&back).unwrap());
    }
}
