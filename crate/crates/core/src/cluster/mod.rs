//! Physical model of the cluster: core/tile/group hierarchy, banked L1
//! memory, word-address mapping and access latencies.
//!
//! The machine is a grid of tiles, each pairing a few cores with four times
//! as many single-ported SRAM banks. Tiles aggregate into groups, groups into
//! the cluster. Every core can reach every bank through the interconnect;
//! what changes with distance is the round-trip latency and, for traffic that
//! leaves the group, the number of request ports available per cycle.

mod arbiter;

pub use arbiter::{arbitrate, ArbitrationOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("invalid topology: {reason}")]
    InvalidTopology { reason: String },
    #[error("word address {addr} is out of range (memory has {total} words)")]
    OutOfRange { addr: usize, total: usize },
    #[error("bank location {0:?} does not exist in this topology")]
    InvalidLocation(BankLocation),
}

/// Geometry and timing parameters of a cluster.
///
/// Invariants enforced at construction: four banks per core
/// (`banks_per_tile == 4 * cores_per_tile`), at least one tile and group, and
/// an interleaved-region boundary that splits every bank at the same offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTopology {
    pub cores_per_tile: usize,
    pub banks_per_tile: usize,
    pub tiles_per_group: usize,
    pub num_groups: usize,
    /// 32-bit words per bank (1 KiB banks hold 256).
    pub words_per_bank: usize,
    /// Round-trip latency to a bank in the core's own tile.
    pub latency_local: u64,
    /// Latency to a bank in another tile of the same group.
    pub latency_same_group: u64,
    /// Latency to a bank in a remote group.
    pub latency_remote_group: u64,
    /// Outstanding loads/stores a core may have in flight.
    pub max_outstanding: usize,
    /// Words covered by the cluster-wide interleaved region; the remainder of
    /// every bank belongs to the per-tile sequential region.
    pub interleaved_words: usize,
}

impl ClusterTopology {
    /// 256-core preset: 4 cores and 16 banks per tile, 16 tiles per group,
    /// 4 groups, 1 MiB of L1 in total.
    pub fn mempool() -> Self {
        Self::custom(4, 16, 4).expect("preset is valid")
    }

    /// 1024-core preset: 8 cores and 32 banks per tile, 16 tiles per group,
    /// 8 groups, 4 MiB of L1 in total.
    pub fn terapool() -> Self {
        Self::custom(8, 16, 8).expect("preset is valid")
    }

    /// Builds a topology with the standard bank ratio (4 banks per core),
    /// 256-word banks, latencies 1/3/5 and 8 outstanding requests. The
    /// interleaved region covers the first half of every bank.
    pub fn custom(
        cores_per_tile: usize,
        tiles_per_group: usize,
        num_groups: usize,
    ) -> Result<Self, ClusterError> {
        let topo = Self {
            cores_per_tile,
            banks_per_tile: 4 * cores_per_tile,
            tiles_per_group,
            num_groups,
            words_per_bank: 256,
            latency_local: 1,
            latency_same_group: 3,
            latency_remote_group: 5,
            max_outstanding: 8,
            interleaved_words: 4 * cores_per_tile * tiles_per_group * num_groups * 128,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let fail = |reason: &str| Err(ClusterError::InvalidTopology { reason: reason.to_string() });
        if self.cores_per_tile == 0 || self.tiles_per_group == 0 || self.num_groups == 0 {
            return fail("all dimensions must be non-zero");
        }
        if self.banks_per_tile != 4 * self.cores_per_tile {
            return fail("banks_per_tile must be 4x cores_per_tile");
        }
        if self.words_per_bank == 0 {
            return fail("words_per_bank must be non-zero");
        }
        if self.max_outstanding == 0 {
            return fail("max_outstanding must be non-zero");
        }
        if self.interleaved_words % self.num_banks() != 0 {
            return fail("interleaved region must cover whole bank rows");
        }
        if self.interleaved_words > self.total_words() {
            return fail("interleaved region larger than memory");
        }
        if self.latency_local > self.latency_same_group || self.latency_same_group > self.latency_remote_group {
            return fail("latencies must be non-decreasing with distance");
        }
        Ok(())
    }

    pub fn num_tiles(&self) -> usize {
        self.tiles_per_group * self.num_groups
    }

    pub fn num_cores(&self) -> usize {
        self.cores_per_tile * self.num_tiles()
    }

    pub fn num_banks(&self) -> usize {
        self.banks_per_tile * self.num_tiles()
    }

    pub fn total_words(&self) -> usize {
        self.num_banks() * self.words_per_bank
    }

    /// Coordinates of a core: (group, tile-in-group, core-in-tile).
    pub fn core_coords(&self, core: usize) -> (usize, usize, usize) {
        let per_group = self.cores_per_tile * self.tiles_per_group;
        (core / per_group, (core / self.cores_per_tile) % self.tiles_per_group, core % self.cores_per_tile)
    }

    /// Group-major flat tile index of the tile containing `core`.
    pub fn tile_of_core(&self, core: usize) -> usize {
        core / self.cores_per_tile
    }

    pub fn group_of_core(&self, core: usize) -> usize {
        core / (self.cores_per_tile * self.tiles_per_group)
    }

    /// Global bank index of a location, group-major then tile-major.
    pub fn global_bank(&self, loc: &BankLocation) -> usize {
        (loc.group * self.tiles_per_group + loc.tile) * self.banks_per_tile + loc.bank
    }

    /// The `index`-th local bank of a core (cores own four consecutive banks
    /// within their tile).
    pub fn local_bank(&self, core: usize, index: usize) -> BankLocation {
        debug_assert!(index < 4);
        let (group, tile, within) = self.core_coords(core);
        BankLocation { group, tile, bank: within * 4 + index, offset: 0 }
    }

    /// Maps a flat word address onto its bank and offset.
    ///
    /// Two regions share the address space. In the interleaved region
    /// consecutive words rotate across all banks cluster-wide
    /// (`bank = addr mod num_banks`). Addresses past the boundary fill the
    /// remaining words of each tile in turn: all leftover words of the
    /// tile's bank 0, then bank 1, and so on.
    pub fn map_address(&self, addr: usize) -> Result<BankLocation, ClusterError> {
        let total = self.total_words();
        if addr >= total {
            return Err(ClusterError::OutOfRange { addr, total });
        }
        if addr < self.interleaved_words {
            let bank_global = addr % self.num_banks();
            let offset = addr / self.num_banks();
            return Ok(self.bank_location(bank_global, offset));
        }
        let rows_interleaved = self.interleaved_words / self.num_banks();
        let seq_rows = self.words_per_bank - rows_interleaved;
        let seq_per_tile = self.banks_per_tile * seq_rows;
        let rel = addr - self.interleaved_words;
        let tile_global = rel / seq_per_tile;
        let within = rel % seq_per_tile;
        let bank = within / seq_rows;
        let offset = rows_interleaved + within % seq_rows;
        Ok(BankLocation {
            group: tile_global / self.tiles_per_group,
            tile: tile_global % self.tiles_per_group,
            bank,
            offset,
        })
    }

    /// Inverse of [`Self::map_address`].
    pub fn address_of(&self, loc: &BankLocation) -> Result<usize, ClusterError> {
        if loc.group >= self.num_groups
            || loc.tile >= self.tiles_per_group
            || loc.bank >= self.banks_per_tile
            || loc.offset >= self.words_per_bank
        {
            return Err(ClusterError::InvalidLocation(*loc));
        }
        let rows_interleaved = self.interleaved_words / self.num_banks();
        if loc.offset < rows_interleaved {
            return Ok(loc.offset * self.num_banks() + self.global_bank(loc));
        }
        let seq_rows = self.words_per_bank - rows_interleaved;
        let seq_per_tile = self.banks_per_tile * seq_rows;
        let tile_global = loc.group * self.tiles_per_group + loc.tile;
        Ok(self.interleaved_words
            + tile_global * seq_per_tile
            + loc.bank * seq_rows
            + (loc.offset - rows_interleaved))
    }

    fn bank_location(&self, bank_global: usize, offset: usize) -> BankLocation {
        let tile_global = bank_global / self.banks_per_tile;
        BankLocation {
            group: tile_global / self.tiles_per_group,
            tile: tile_global % self.tiles_per_group,
            bank: bank_global % self.banks_per_tile,
            offset,
        }
    }

    /// Round-trip latency for `core` accessing `loc`: 1 inside the tile, 3
    /// inside the group, 5 across groups.
    pub fn access_latency(&self, core: usize, loc: &BankLocation) -> u64 {
        let (group, tile, _) = self.core_coords(core);
        if group == loc.group {
            if tile == loc.tile {
                self.latency_local
            } else {
                self.latency_same_group
            }
        } else {
            self.latency_remote_group
        }
    }
}

/// A word's place in the hierarchy: which group, which tile inside it, which
/// bank inside the tile, and the word offset inside the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BankLocation {
    pub group: usize,
    pub tile: usize,
    pub bank: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessKind {
    Load,
    Store,
    Atomic,
}

/// One memory request as seen by the arbiter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessRequest {
    pub core: usize,
    pub kind: AccessKind,
    pub location: BankLocation,
    pub issue_cycle: u64,
}
