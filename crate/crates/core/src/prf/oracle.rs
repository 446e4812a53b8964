//! A lazily sampled random function standing in for the PRF.
//!
//! Generator and detector must consult the same table so that they agree on
//! every value either of them has looked at.

use std::collections::HashMap;

use rand::RngCore;

use super::{PrfSource, UnitReal};

/// Memo of every `(seed, index)` pair queried so far.
#[derive(Clone, Debug, Default)]
pub struct OracleTable {
    entries: HashMap<(Vec<bool>, u64), UnitReal>,
}

impl OracleTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, seed: &[bool], index: u64) -> Option<UnitReal> {
        self.entries.get(&(seed.to_vec(), index)).copied()
    }
}

/// Returns the stored value for `(seed, index)`, drawing and storing a fresh
/// uniform one on first use.
pub fn oracle_unit<R: RngCore + ?Sized>(table: &mut OracleTable, seed: &[bool], index: u64, rng: &mut R) -> UnitReal {
    *table.entries.entry((seed.to_vec(), index)).or_insert_with(|| UnitReal::random(rng))
}

/// An [`OracleTable`] bundled with the generator that fills it.
#[derive(Debug)]
pub struct RandomOracle<R> {
    pub table: OracleTable,
    rng: R,
}

impl<R: RngCore> RandomOracle<R> {
    pub fn new(rng: R) -> Self {
        RandomOracle { table: OracleTable::new(), rng }
    }
}

impl<R: RngCore> PrfSource for RandomOracle<R> {
    fn unit(&mut self, seed: &[bool], index: u64) -> UnitReal {
        oracle_unit(&mut self.table, seed, index, &mut self.rng)
    }
}
