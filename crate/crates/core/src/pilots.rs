//! Pilot sequences and their pairwise overlaps.
//!
//! Base sequences are the columns of the `tau x tau` identity, so the only
//! inner products that occur are 0 and 1 and `gram2` is exact.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PilotMode {
    /// Every user gets its own base sequence; needs `tau >= K`.
    Orthogonal,
    /// Each user draws one of the `tau` base sequences uniformly at random.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotBook {
    pub tau: usize,
    pub mode: PilotMode,
    /// Base-sequence index of each user.
    pub assignment: Vec<usize>,
    /// `|phi_k^H phi_k'|^2`, K x K.
    pub gram2: DMatrix<f64>,
}

impl PilotBook {
    /// Builds a book from an explicit assignment vector.
    pub fn from_assignment(tau: usize, mode: PilotMode, assignment: Vec<usize>) -> Result<Self> {
        if tau == 0 {
            return Err(Error::Config("pilot length must be at least 1".into()));
        }
        if let Some(&bad) = assignment.iter().find(|&&a| a >= tau) {
            return Err(Error::Config(format!(
                "pilot index {bad} outside base set of {tau}"
            )));
        }
        let k = assignment.len();
        let gram2 = DMatrix::from_fn(k, k, |i, j| {
            if assignment[i] == assignment[j] {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self {
            tau,
            mode,
            assignment,
            gram2,
        })
    }

    pub fn num_users(&self) -> usize {
        self.assignment.len()
    }

    /// The `tau x K` pilot matrix with unit-norm columns.
    pub fn phi(&self) -> DMatrix<Complex64> {
        let mut phi = DMatrix::zeros(self.tau, self.num_users());
        for (k, &a) in self.assignment.iter().enumerate() {
            phi[(a, k)] = Complex64::new(1.0, 0.0);
        }
        phi
    }

    pub fn shares_pilot(&self, k: usize, other: usize) -> bool {
        self.assignment[k] == self.assignment[other]
    }

    /// Number of unordered user pairs that share a base sequence.
    pub fn colliding_pairs(&self) -> usize {
        let k = self.num_users();
        (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .filter(|&(i, j)| self.shares_pilot(i, j))
            .count()
    }
}

pub fn assign_pilots<R: Rng + ?Sized>(
    num_users: usize,
    tau: usize,
    mode: PilotMode,
    rng: &mut R,
) -> Result<PilotBook> {
    if tau == 0 {
        return Err(Error::Config("pilot length must be at least 1".into()));
    }
    let assignment = match mode {
        PilotMode::Orthogonal => {
            if tau < num_users {
                return Err(Error::Config(format!(
                    "orthogonal pilots need tau >= K, got tau={tau}, K={num_users}"
                )));
            }
            (0..num_users).collect()
        }
        PilotMode::Random => (0..num_users).map(|_| rng.random_range(0..tau)).collect(),
    };
    PilotBook::from_assignment(tau, mode, assignment)
}
