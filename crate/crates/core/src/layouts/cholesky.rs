//! Row-folded placement for pairs of Cholesky decompositions.
//!
//! One instance factors two Hermitian positive-definite `n×n` matrices at
//! once on `n/4` cores. Row `r` of an input and of its factor live entirely
//! in one bank of the owning core, so every access to a core's own rows is
//! a 1-cycle local load. Ownership of the first matrix deals rows round-robin
//! (`core c` gets rows `c, c+P, c+2P, c+3P`); the second matrix is dealt the
//! same way *mirrored* (row `n-1-r` where the first had `r`). Since the work
//! of row `r` grows linearly with `r`, the mirror gives every core exactly
//! the same total element count — the pair balances what a single
//! triangular factorization cannot.
//!
//! Iteration is column-major (Crout): the diagonal owners compute the two
//! pivots of column `j`, one all-core barrier releases the column, and every
//! core then updates its own rows below `j` in both matrices, reading the
//! pivot row remotely and everything else locally. That single barrier per
//! column covers every cross-core dependency: pivot-row elements written in
//! earlier columns are always separated from their readers by the pivot
//! barrier of the column that consumes them. On a single core (`n = 4`) no
//! barrier is emitted at all.

use crate::cluster::{BankLocation, ClusterTopology};
use crate::engine::{BarrierSpec, ComputeOp, MicroOp, ProgramSet, Reg};

use super::{
    counter_location, LayoutError, LayoutPlan, PhaseAccess, SyncPoint, BARRIER_COUNT_REG,
};

/// Concurrent instance slots for `n×n` factorizations: each slot spans
/// `n/4` cores, so a cluster fits `cores / (n/4)` of them side by side.
pub fn cholesky_capacity(n: usize, topo: &ClusterTopology) -> Result<usize, LayoutError> {
    let geom = Geometry::checked(n, topo, None)?;
    Ok(topo.num_cores() / geom.p)
}

const ROWGUARD_ROWS: usize = 4;

/// Matrix index within a pair.
const FIRST: usize = 0;
const SECOND: usize = 1;

struct Geometry {
    n: usize,
    /// Cores in the instance (`n/4`).
    p: usize,
    cores: Vec<usize>,
}

impl Geometry {
    fn checked(
        n: usize,
        topo: &ClusterTopology,
        cores: Option<&[usize]>,
    ) -> Result<Self, LayoutError> {
        if n < 4 || n % 4 != 0 {
            return Err(LayoutError::SizeMismatch {
                context: "cholesky pair",
                detail: format!("matrix size must be a nonzero multiple of 4, got {n}"),
            });
        }
        if 4 * n + ROWGUARD_ROWS > topo.words_per_bank {
            return Err(LayoutError::TooLarge {
                n,
                detail: format!(
                    "four {n}-word row regions exceed the {}-word banks",
                    topo.words_per_bank
                ),
            });
        }
        let p = n / 4;
        let cores = match cores {
            None => (0..p.min(topo.num_cores())).collect(),
            Some(list) => {
                if list.len() != p {
                    return Err(LayoutError::TooFewCores {
                        kernel: "cholesky",
                        got: list.len(),
                        needed: format!("exactly {p} (n/4)"),
                    });
                }
                let mut seen = vec![false; topo.num_cores()];
                for &c in list {
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
                list.to_vec()
            }
        };
        if cores.len() != p {
            return Err(LayoutError::TooFewCores {
                kernel: "cholesky",
                got: topo.num_cores(),
                needed: format!("exactly {p} (n/4)"),
            });
        }
        Ok(Self { n, p, cores })
    }

    /// Owner core position and local bank of row `r` of `matrix`.
    fn row_home(&self, matrix: usize, r: usize) -> (usize, usize) {
        let key = if matrix == FIRST { r } else { self.n - 1 - r };
        (key % self.p, key / self.p)
    }

    /// Bank location of element (r, k); `region` 0 holds the input, 1 the
    /// factor (regions 2–3 are the second matrix's).
    fn loc(&self, topo: &ClusterTopology, matrix: usize, is_factor: bool, r: usize, k: usize) -> BankLocation {
        let (pos, bank) = self.row_home(matrix, r);
        let region = 2 * matrix + usize::from(is_factor);
        let mut loc = topo.local_bank(self.cores[pos], bank);
        loc.offset = region * self.n + k;
        loc
    }

    fn addr(&self, topo: &ClusterTopology, matrix: usize, is_factor: bool, r: usize, k: usize) -> usize {
        topo.address_of(&self.loc(topo, matrix, is_factor, r, k))
            .expect("row regions were capacity-checked")
    }

    fn id(&self, matrix: usize, is_factor: bool, r: usize, k: usize) -> u64 {
        let region = 2 * matrix + usize::from(is_factor);
        (region * self.n * self.n + r * self.n + k) as u64
    }

    /// Rows of `matrix` owned by core position `pos`.
    fn owned_rows(&self, matrix: usize, pos: usize) -> Vec<usize> {
        (0..4)
            .map(|j| {
                let key = pos + j * self.p;
                if matrix == FIRST {
                    key
                } else {
                    self.n - 1 - key
                }
            })
            .collect()
    }
}

/// The address-stream plan of one mirrored pair: phases `2j` (pivots of
/// column `j`) and `2j+1` (row updates of column `j`), one all-core sync
/// after each pivot phase.
pub fn cholesky_layout(
    n: usize,
    topo: &ClusterTopology,
    cores: &[usize],
) -> Result<LayoutPlan, LayoutError> {
    let geom = Geometry::checked(n, topo, Some(cores))?;
    let mut plan = LayoutPlan::new(topo.num_cores());
    for matrix in [FIRST, SECOND] {
        for r in 0..n {
            for k in 0..n {
                plan.placement
                    .insert(geom.id(matrix, false, r, k), geom.loc(topo, matrix, false, r, k));
                plan.placement
                    .insert(geom.id(matrix, true, r, k), geom.loc(topo, matrix, true, r, k));
            }
        }
    }
    for (pos, &core) in geom.cores.iter().enumerate() {
        let mut phases = Vec::with_capacity(2 * n);
        for col in 0..n {
            let mut pivot = PhaseAccess::default();
            for matrix in [FIRST, SECOND] {
                if geom.row_home(matrix, col).0 == pos {
                    pivot.reads.push(geom.id(matrix, false, col, col));
                    for k in 0..col {
                        pivot.reads.push(geom.id(matrix, true, col, k));
                    }
                    pivot.computes += col as u32 + 1;
                    pivot.writes.push(geom.id(matrix, true, col, col));
                }
            }
            phases.push(pivot);
            let mut update = PhaseAccess::default();
            for matrix in [FIRST, SECOND] {
                let rows: Vec<usize> = geom
                    .owned_rows(matrix, pos)
                    .into_iter()
                    .filter(|&r| r > col)
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                update.reads.push(geom.id(matrix, true, col, col));
                for r in rows {
                    update.reads.push(geom.id(matrix, false, r, col));
                    for k in 0..col {
                        update.reads.push(geom.id(matrix, true, r, k));
                        update.reads.push(geom.id(matrix, true, col, k));
                    }
                    update.computes += col as u32 + 1;
                    update.writes.push(geom.id(matrix, true, r, col));
                }
            }
            phases.push(update);
        }
        plan.core_work[core] = phases;
    }
    if geom.p > 1 {
        let all: Vec<usize> = {
            let mut v = geom.cores.clone();
            v.sort_unstable();
            v
        };
        for col in 0..n - 1 {
            plan.sync_points.push(SyncPoint {
                boundary: 2 * col,
                participants: all.clone(),
            });
        }
    }
    Ok(plan)
}

/// An executable pair build with the address maps for staging the inputs
/// and collecting the factors.
pub struct CholeskyProgram {
    pub set: ProgramSet,
    pub n: usize,
    geom: Geometry,
}

impl CholeskyProgram {
    /// Address of input element (r, k) of `matrix` (0 or 1).
    pub fn g_addr(&self, topo: &ClusterTopology, matrix: usize, r: usize, k: usize) -> usize {
        self.geom.addr(topo, matrix, false, r, k)
    }

    /// Address of factor element (r, k) of `matrix` (0 or 1).
    pub fn l_addr(&self, topo: &ClusterTopology, matrix: usize, r: usize, k: usize) -> usize {
        self.geom.addr(topo, matrix, true, r, k)
    }
}

const R_ACC: Reg = 0;
const R_LOCAL: Reg = 1;
const R_REMOTE: Reg = 2;
const R_DIAG: Reg = 3;

/// Builds the engine programs for one mirrored pair. The arithmetic follows
/// the golden Crout routine operation for operation (pivot via squared-norm
/// subtractions and a real square root, updates via conjugate
/// multiply-subtract then division by the real pivot), so a run produces
/// bit-identical factors. Inputs must be positive definite; a negative
/// pivot would propagate NaNs instead of raising an error.
pub fn cholesky_pair_program(
    n: usize,
    topo: &ClusterTopology,
    cores: &[usize],
) -> Result<CholeskyProgram, LayoutError> {
    let geom = Geometry::checked(n, topo, Some(cores))?;
    let mut set = ProgramSet::new(topo.num_cores());
    let barriers: Vec<usize> = if geom.p > 1 {
        let mut sorted = geom.cores.clone();
        sorted.sort_unstable();
        (0..n - 1)
            .map(|col| {
                let counter = counter_location(topo, col);
                set.add_barrier(BarrierSpec {
                    counter_addr: topo.address_of(&counter).expect("counters are in range"),
                    participants: sorted.clone(),
                })
            })
            .collect()
    } else {
        Vec::new()
    };

    for (pos, &core) in geom.cores.iter().enumerate() {
        for col in 0..n {
            for matrix in [FIRST, SECOND] {
                if geom.row_home(matrix, col).0 != pos {
                    continue;
                }
                let mut prog = std::mem::take(&mut set.programs[core]);
                prog.push(MicroOp::Load {
                    addr: geom.addr(topo, matrix, false, col, col),
                    dst: R_ACC,
                });
                for k in 0..col {
                    prog.push(MicroOp::Load {
                        addr: geom.addr(topo, matrix, true, col, k),
                        dst: R_LOCAL,
                    });
                    prog.push(MicroOp::Compute {
                        op: ComputeOp::SubNormSq,
                        s0: R_LOCAL,
                        s1: 0,
                        dst: R_ACC,
                    });
                }
                prog.push(MicroOp::Compute { op: ComputeOp::SqrtRe, s0: R_ACC, s1: 0, dst: R_ACC });
                prog.push(MicroOp::Store {
                    addr: geom.addr(topo, matrix, true, col, col),
                    src: R_ACC,
                });
                set.programs[core] = prog;
            }
            if geom.p > 1 && col < n - 1 {
                set.emit_barrier_arrival(topo, barriers[col], core, BARRIER_COUNT_REG);
            }
            for matrix in [FIRST, SECOND] {
                let rows: Vec<usize> = geom
                    .owned_rows(matrix, pos)
                    .into_iter()
                    .filter(|&r| r > col)
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let mut prog = std::mem::take(&mut set.programs[core]);
                prog.push(MicroOp::Load {
                    addr: geom.addr(topo, matrix, true, col, col),
                    dst: R_DIAG,
                });
                for r in rows {
                    prog.push(MicroOp::Load {
                        addr: geom.addr(topo, matrix, false, r, col),
                        dst: R_ACC,
                    });
                    for k in 0..col {
                        prog.push(MicroOp::Load {
                            addr: geom.addr(topo, matrix, true, r, k),
                            dst: R_LOCAL,
                        });
                        prog.push(MicroOp::Load {
                            addr: geom.addr(topo, matrix, true, col, k),
                            dst: R_REMOTE,
                        });
                        prog.push(MicroOp::Compute {
                            op: ComputeOp::SubMulConj,
                            s0: R_LOCAL,
                            s1: R_REMOTE,
                            dst: R_ACC,
                        });
                    }
                    prog.push(MicroOp::Compute {
                        op: ComputeOp::DivReal,
                        s0: R_ACC,
                        s1: R_DIAG,
                        dst: R_ACC,
                    });
                    prog.push(MicroOp::Store {
                        addr: geom.addr(topo, matrix, true, r, col),
                        src: R_ACC,
                    });
                }
                set.programs[core] = prog;
            }
        }
    }
    Ok(CholeskyProgram { set, n, geom })
}
