//! Windowed placement and schedule for the complex matrix-matrix multiply
//! `C = A · B`.
//!
//! The output is tiled into 4×4 windows. A core computes one window at a
//! time: 16 accumulators live in registers, and each step of the inner
//! product loads 4 elements of `A` (one column of the window's row block)
//! plus 4 elements of `B` (one row of its column block) and feeds 16
//! multiply-accumulates — 8 loads per 16 MACs.
//!
//! Contention is avoided by construction rather than by luck:
//! * `A` row block `rb` lives in memory group `rb mod G`. Cores of one tile
//!   work on consecutive row blocks, so at any lockstep instant they pull
//!   `A` from distinct groups.
//! * Each core starts its column-block round-robin at a different block
//!   (shifted by its within-tile index) and wraps, so tile-mates pull `B`
//!   from distinct groups too.
//! * Within a window, the visit order of `A` rows rotates with the core's
//!   stripe and the visit order of `B` columns rotates with the tile's
//!   position in its group, so cores that share data never hit the same
//!   bank in the same slot.
//!
//! When there are more cores than row blocks, stripes of cores split the
//! column blocks; when there are fewer, each core takes several row blocks
//! in a strided pattern (stride = core count) that keeps tile-mates on
//! distinct groups. A single core therefore degenerates to the plain
//! row-major triple loop — the serial baseline measured against.

use num_complex::Complex32;

use crate::cluster::{BankLocation, ClusterTopology};
use crate::engine::{ComputeOp, MicroOp, ProgramSet, Reg};

use super::{LayoutError, LayoutPlan, PhaseAccess};

/// Dimensions, placements and per-core window orders for one multiply.
#[derive(Debug, Clone)]
pub struct MmmSchedule {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    /// True when there are fewer 4×4 windows than cores; surplus cores idle.
    pub dimension_too_small: bool,
    /// Cores given no windows (surplus beyond the window count or beyond a
    /// whole number of stripes).
    pub idle_cores: Vec<usize>,
    /// The address-stream view consumed by the layout verifier.
    pub plan: LayoutPlan,
    assignments: Vec<CoreWindows>,
    geom: Geometry,
}

#[derive(Debug, Clone)]
struct CoreWindows {
    core: usize,
    /// Rotation applied to the window's `A`-row visit order.
    v_rot: usize,
    /// Rotation applied to the window's `B`-column visit order.
    u_rot: usize,
    /// (row block, column block) in visit order.
    windows: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct Geometry {
    m: usize,
    n: usize,
    p: usize,
    /// Bank slots reserved for `A` rows per group (uniform across groups).
    a_slots: usize,
    /// First bank row of the `C` region.
    base_c: usize,
    /// Negative-control switch: squeeze all of `A` into group 0.
    force_group0: bool,
}

const ROWGUARD_ROWS: usize = 4;

impl Geometry {
    fn new(
        m: usize,
        n: usize,
        p: usize,
        topo: &ClusterTopology,
        force_group0: bool,
    ) -> Result<Self, LayoutError> {
        if m == 0 || n == 0 || p == 0 || m % 4 != 0 || p % 4 != 0 {
            return Err(LayoutError::SizeMismatch {
                context: "mmm windows",
                detail: format!("need m, p nonzero multiples of 4 and n ≥ 1, got {m}x{n}x{p}"),
            });
        }
        let g = topo.num_groups;
        let bg = topo.banks_per_tile * topo.tiles_per_group;
        // The negative control packs every A row block into group 0, which
        // needs the full (injective) slot range instead of a per-group share.
        let a_slots = if force_group0 { m } else { 4 * (m / 4).div_ceil(g) };
        let b_slots = 4 * (p / 4).div_ceil(g);
        let data_rows = (a_slots + b_slots).div_ceil(bg) * n;
        // Worst-case rows of C interleaved over one group's banks.
        let c_rows = (4 * (m / 4).div_ceil(g) * p).div_ceil(bg);
        if data_rows + c_rows + ROWGUARD_ROWS > topo.words_per_bank {
            return Err(LayoutError::TooLarge {
                n: m.max(n).max(p),
                detail: format!(
                    "{m}x{n}x{p} needs {} rows per bank, {} available",
                    data_rows + c_rows,
                    topo.words_per_bank - ROWGUARD_ROWS
                ),
            });
        }
        Ok(Self {
            m,
            n,
            p,
            a_slots,
            base_c: data_rows,
            force_group0,
        })
    }

    fn bg(&self, topo: &ClusterTopology) -> usize {
        topo.banks_per_tile * topo.tiles_per_group
    }

    fn loc(&self, topo: &ClusterTopology, group: usize, slot: usize, row: usize) -> BankLocation {
        let bg = self.bg(topo);
        let bank_in_group = slot % bg;
        BankLocation {
            group,
            tile: bank_in_group / topo.banks_per_tile,
            bank: bank_in_group % topo.banks_per_tile,
            offset: (slot / bg) * self.n + row,
        }
    }

    /// Element (r, k) of `A`: the whole row is contiguous in one bank of
    /// group `rb mod G`.
    fn a_loc(&self, topo: &ClusterTopology, r: usize, k: usize) -> BankLocation {
        let (rb, v) = (r / 4, r % 4);
        if self.force_group0 {
            return self.loc(topo, 0, rb * 4 + v, k);
        }
        self.loc(topo, rb % topo.num_groups, (rb / topo.num_groups) * 4 + v, k)
    }

    /// Element (k, col) of `B`: the whole column is contiguous in one bank of
    /// group `cb mod G`, in the slot range after `A`'s.
    fn b_loc(&self, topo: &ClusterTopology, k: usize, col: usize) -> BankLocation {
        let (cb, u) = (col / 4, col % 4);
        let group = cb % topo.num_groups;
        self.loc(topo, group, self.a_slots + (cb / topo.num_groups) * 4 + u, k)
    }

    /// Element (r, col) of `C`: rows of a group interleave over its banks.
    fn c_loc(&self, topo: &ClusterTopology, r: usize, col: usize) -> BankLocation {
        let (rb, v) = (r / 4, r % 4);
        let group = rb % topo.num_groups;
        let f = ((rb / topo.num_groups) * 4 + v) * self.p + col;
        let bg = self.bg(topo);
        BankLocation {
            group,
            tile: (f % bg) / topo.banks_per_tile,
            bank: (f % bg) % topo.banks_per_tile,
            offset: self.base_c + f / bg,
        }
    }

    fn a_id(&self, r: usize, k: usize) -> u64 {
        (r * self.n + k) as u64
    }

    fn b_id(&self, k: usize, col: usize) -> u64 {
        (self.m * self.n + col * self.n + k) as u64
    }

    fn c_id(&self, r: usize, col: usize) -> u64 {
        (self.m * self.n + self.p * self.n + r * self.p + col) as u64
    }
}

fn check_cores(topo: &ClusterTopology, cores: &[usize]) -> Result<(), LayoutError> {
    if cores.is_empty() {
        return Err(LayoutError::TooFewCores {
            kernel: "mmm",
            got: 0,
            needed: "at least 1".to_string(),
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
    Ok(())
}

/// Balanced contiguous slice `idx` of `0..total` split `ways` ways.
fn slice_bounds(total: usize, ways: usize, idx: usize) -> (usize, usize) {
    let base = total / ways;
    let extra = total % ways;
    let start = idx * base + idx.min(extra);
    (start, start + base + usize::from(idx < extra))
}

fn build_schedule(
    m: usize,
    n: usize,
    p: usize,
    topo: &ClusterTopology,
    cores: &[usize],
    staggered: bool,
    force_group0: bool,
) -> Result<MmmSchedule, LayoutError> {
    check_cores(topo, cores)?;
    let geom = Geometry::new(m, n, p, topo, force_group0)?;
    let rb_count = m / 4;
    let cb_count = p / 4;
    let windows_total = rb_count * cb_count;
    let dimension_too_small = windows_total < cores.len();

    // Stripe structure: with more cores than row blocks, `stripes` groups of
    // `rb_count` cores split the column blocks; otherwise every core covers
    // all column blocks and takes row blocks strided by the core count.
    let (used, stripes) = if cores.len() > rb_count {
        let s = (cores.len() / rb_count).min(cb_count);
        (rb_count * s, s)
    } else {
        (cores.len(), 0)
    };
    let idle_cores: Vec<usize> = cores[used..].to_vec();

    let mut assignments = Vec::with_capacity(used);
    for (idx, &core) in cores[..used].iter().enumerate() {
        let (_, tile_in_group, within) = topo.core_coords(core);
        let t = if staggered { within } else { 0 };
        let u_rot = if staggered { tile_in_group % 4 } else { 0 };
        let mut windows = Vec::new();
        let v_rot;
        if stripes > 0 {
            let rb = idx % rb_count;
            let stripe = idx / rb_count;
            v_rot = if staggered { (t + stripe) % 4 } else { 0 };
            let (lo, hi) = slice_bounds(cb_count, stripes, stripe);
            let len = hi - lo;
            for i in 0..len {
                windows.push((rb, lo + (t + i) % len));
            }
        } else {
            v_rot = t % 4;
            let mut rb = idx;
            while rb < rb_count {
                for i in 0..cb_count {
                    windows.push((rb, (t + i) % cb_count));
                }
                rb += used;
            }
        }
        assignments.push(CoreWindows {
            core,
            v_rot,
            u_rot,
            windows,
        });
    }

    let mut plan = LayoutPlan::new(topo.num_cores());
    for r in 0..m {
        for k in 0..n {
            plan.placement.insert(geom.a_id(r, k), geom.a_loc(topo, r, k));
        }
    }
    for col in 0..p {
        for k in 0..n {
            plan.placement.insert(geom.b_id(k, col), geom.b_loc(topo, k, col));
        }
    }
    for r in 0..m {
        for col in 0..p {
            plan.placement.insert(geom.c_id(r, col), geom.c_loc(topo, r, col));
        }
    }
    for a in &assignments {
        let mut phases = Vec::with_capacity(a.windows.len());
        for &(rb, cb) in &a.windows {
            let mut acc = PhaseAccess::default();
            for k in 0..n {
                for mi in 0..4 {
                    acc.reads.push(geom.a_id(4 * rb + (a.v_rot + mi) % 4, k));
                }
                for mi in 0..4 {
                    acc.reads.push(geom.b_id(k, 4 * cb + (a.u_rot + mi) % 4));
                }
            }
            acc.computes = 16 + 16 * n as u32;
            for v in 0..4 {
                for ui in 0..4 {
                    acc.writes.push(geom.c_id(4 * rb + v, 4 * cb + (a.u_rot + ui) % 4));
                }
            }
            phases.push(acc);
        }
        plan.core_work[a.core] = phases;
    }

    Ok(MmmSchedule {
        m,
        n,
        p,
        dimension_too_small,
        idle_cores,
        plan,
        assignments,
        geom,
    })
}

/// The contention-avoiding schedule described at module level.
pub fn mmm_schedule(
    m: usize,
    n: usize,
    p: usize,
    topo: &ClusterTopology,
    cores: &[usize],
) -> Result<MmmSchedule, LayoutError> {
    build_schedule(m, n, p, topo, cores, true, false)
}

/// Negative control: all of `A` forced into group 0 and every stagger
/// removed, so tile-mates hammer the same group in the same slot.
/// The work partition is still correct — only the contention properties are
/// deliberately broken, which the verifier's metrics must expose.
pub fn mmm_schedule_conflicting(
    m: usize,
    n: usize,
    p: usize,
    topo: &ClusterTopology,
    cores: &[usize],
) -> Result<MmmSchedule, LayoutError> {
    build_schedule(m, n, p, topo, cores, false, true)
}

/// An executable multiply: the per-core programs plus the address map for
/// staging `A`/`B` and collecting `C`.
pub struct MmmProgram {
    pub set: ProgramSet,
    pub schedule: MmmSchedule,
}

impl MmmProgram {
    pub fn a_addr(&self, topo: &ClusterTopology, r: usize, k: usize) -> usize {
        topo.address_of(&self.schedule.geom.a_loc(topo, r, k))
            .expect("geometry was capacity-checked")
    }

    pub fn b_addr(&self, topo: &ClusterTopology, k: usize, col: usize) -> usize {
        topo.address_of(&self.schedule.geom.b_loc(topo, k, col))
            .expect("geometry was capacity-checked")
    }

    pub fn c_addr(&self, topo: &ClusterTopology, r: usize, col: usize) -> usize {
        topo.address_of(&self.schedule.geom.c_loc(topo, r, col))
            .expect("geometry was capacity-checked")
    }
}

const R_A: [Reg; 4] = [0, 1, 2, 3];
const R_B: [Reg; 4] = [4, 5, 6, 7];

fn acc_reg(v: usize, u: usize) -> Reg {
    (8 + v * 4 + u) as Reg
}

/// Emits the engine programs for a schedule. Accumulation order over `k` is
/// ascending for every output element, matching the golden multiply bit for
/// bit regardless of the visit rotations.
pub fn mmm_program(schedule: MmmSchedule, topo: &ClusterTopology) -> MmmProgram {
    let mut set = ProgramSet::new(topo.num_cores());
    for a in &schedule.assignments {
        let geom = &schedule.geom;
        let prog = &mut set.programs[a.core];
        for &(rb, cb) in &a.windows {
            for v in 0..4 {
                for u in 0..4 {
                    prog.push(MicroOp::Compute {
                        op: ComputeOp::Imm(Complex32::new(0.0, 0.0)),
                        s0: 0,
                        s1: 0,
                        dst: acc_reg(v, u),
                    });
                }
            }
            for k in 0..schedule.n {
                let mut vs = [0usize; 4];
                let mut us = [0usize; 4];
                for mi in 0..4 {
                    vs[mi] = (a.v_rot + mi) % 4;
                    us[mi] = (a.u_rot + mi) % 4;
                    let al = geom.a_loc(topo, 4 * rb + vs[mi], k);
                    prog.push(MicroOp::Load {
                        addr: topo.address_of(&al).expect("in range"),
                        dst: R_A[mi],
                    });
                }
                for mi in 0..4 {
                    let bl = geom.b_loc(topo, k, 4 * cb + us[mi]);
                    prog.push(MicroOp::Load {
                        addr: topo.address_of(&bl).expect("in range"),
                        dst: R_B[mi],
                    });
                }
                for ai in 0..4 {
                    for bi in 0..4 {
                        prog.push(MicroOp::Compute {
                            op: ComputeOp::Mac,
                            s0: R_A[ai],
                            s1: R_B[bi],
                            dst: acc_reg(vs[ai], us[bi]),
                        });
                    }
                }
            }
            for v in 0..4 {
                for ui in 0..4 {
                    let u = (a.u_rot + ui) % 4;
                    let cl = geom.c_loc(topo, 4 * rb + v, 4 * cb + u);
                    prog.push(MicroOp::Store {
                        addr: topo.address_of(&cl).expect("in range"),
                        src: acc_reg(v, u),
                    });
                }
            }
        }
    }
    MmmProgram { set, schedule }
}

/// The whole multiply on one core with the same placement — the baseline
/// for parallel speedups on the same memory system.
pub fn mmm_serial_program(
    m: usize,
    n: usize,
    p: usize,
    topo: &ClusterTopology,
    core: usize,
) -> Result<MmmProgram, LayoutError> {
    Ok(mmm_program(mmm_schedule(m, n, p, topo, &[core])?, topo))
}
