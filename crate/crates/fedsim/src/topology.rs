//! Mixing matrices for networked averaging.
//!
//! A mixing matrix W is symmetric, entrywise non-negative, with rows (and by
//! symmetry columns) summing to one. The cached spectral quantity zeta is
//! the largest eigenvalue magnitude after the principal eigenvalue 1; it
//! controls how fast gossip contracts disagreement between devices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::sampling::RngStream;

const STRUCT_TOL: f64 = 1e-10;
const CONNECT_TOL: f64 = 1e-12;

/// A validated mixing matrix with cached spectral gap.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    entries: DMatrix<f64>,
    zeta: f64,
}

impl MixingMatrix {
    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Second-largest eigenvalue magnitude, in [0, 1).
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Rows as CSV text, one device per line.
    pub fn to_csv(&self) -> String {
        let p = self.size();
        let mut out = String::new();
        for i in 0..p {
            let row: Vec<String> = (0..p).map(|j| format!("{}", self.entries[(i, j)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Checks all mixing-matrix invariants to 1e-10 and caches zeta.
///
/// Rejects asymmetric matrices, negative entries and row-sum violations as
/// `InvalidMixing`; a second eigenvalue magnitude indistinguishable from one
/// is `DisconnectedTopology`.
pub fn validate_mixing(entries: DMatrix<f64>) -> Result<MixingMatrix> {
    let p = entries.nrows();
    if p == 0 || entries.ncols() != p {
        return Err(FedError::InvalidMixing("matrix must be square and non-empty".into()));
    }
    for i in 0..p {
        for j in 0..p {
            let v = entries[(i, j)];
            if !v.is_finite() {
                return Err(FedError::InvalidMixing(format!("non-finite entry at ({i},{j})")));
            }
            if v < -STRUCT_TOL {
                return Err(FedError::InvalidMixing(format!(
                    "negative entry {v} at ({i},{j})"
                )));
            }
            if (entries[(i, j)] - entries[(j, i)]).abs() > STRUCT_TOL {
                return Err(FedError::InvalidMixing(format!(
                    "asymmetric at ({i},{j}): {} vs {}",
                    entries[(i, j)],
                    entries[(j, i)]
                )));
            }
        }
        let row_sum: f64 = entries.row(i).iter().sum();
        if (row_sum - 1.0).abs() > STRUCT_TOL {
            return Err(FedError::InvalidMixing(format!(
                "row {i} sums to {row_sum}, expected 1"
            )));
        }
    }

    // Symmetric spectrum via tridiagonalization + QR.
    let sym = (&entries + entries.transpose()) * 0.5;
    let mut eigs: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().cloned().collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let principal = eigs[0];
    if (principal - 1.0).abs() > STRUCT_TOL {
        return Err(FedError::InvalidMixing(format!(
            "principal eigenvalue {principal}, expected 1"
        )));
    }
    let zeta = if p == 1 {
        0.0
    } else {
        eigs[1].abs().max(eigs[p - 1].abs())
    };
    if zeta >= 1.0 - CONNECT_TOL {
        return Err(FedError::DisconnectedTopology { zeta });
    }
    Ok(MixingMatrix { entries, zeta })
}

/// Built-in topology constructors, serializable as config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    /// Complete uniform averaging, W = (1/p) 11^T. zeta = 0.
    Complete,
    /// Cycle with the given self-weight; both neighbors share the rest.
    Ring { self_weight: f64 },
    /// Nodes at seeded uniform positions in the unit square, connected when
    /// within `radius`, with Metropolis-Hastings weights.
    RandomGeometric { radius: f64, seed: u64 },
}

/// Builds a mixing matrix for `p` devices and validates it.
pub fn make_topology(kind: &TopologyKind, p: usize) -> Result<MixingMatrix> {
    let entries = match kind {
        TopologyKind::Complete => {
            if p < 1 {
                return Err(FedError::invalid("complete topology needs p >= 1"));
            }
            DMatrix::from_element(p, p, 1.0 / p as f64)
        }
        TopologyKind::Ring { self_weight } => {
            let s = *self_weight;
            if p < 2 {
                return Err(FedError::invalid("ring topology needs p >= 2"));
            }
            if !(0.0..1.0).contains(&s) {
                return Err(FedError::InvalidMixing(format!(
                    "ring self-weight {s} outside [0, 1)"
                )));
            }
            let mut w = DMatrix::zeros(p, p);
            for i in 0..p {
                w[(i, i)] = s;
                // For p = 2 both neighbor slots land on the same device.
                w[(i, (i + 1) % p)] += (1.0 - s) / 2.0;
                w[(i, (i + p - 1) % p)] += (1.0 - s) / 2.0;
            }
            w
        }
        TopologyKind::RandomGeometric { radius, seed } => {
            if p < 1 {
                return Err(FedError::invalid("random-geometric topology needs p >= 1"));
            }
            if radius.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(FedError::invalid("radius must be positive"));
            }
            let mut rng = RngStream::generator(*seed, 0x706F_7321);
            let points: Vec<(f64, f64)> =
                (0..p).map(|_| (rng.next_f64(), rng.next_f64())).collect();
            let mut adj = vec![vec![false; p]; p];
            let mut degree = vec![0usize; p];
            for i in 0..p {
                for j in (i + 1)..p {
                    let dx = points[i].0 - points[j].0;
                    let dy = points[i].1 - points[j].1;
                    if (dx * dx + dy * dy).sqrt() <= *radius {
                        adj[i][j] = true;
                        adj[j][i] = true;
                        degree[i] += 1;
                        degree[j] += 1;
                    }
                }
            }
            let mut w = DMatrix::zeros(p, p);
            for i in 0..p {
                let mut off_sum = 0.0;
                for j in 0..p {
                    if adj[i][j] {
                        let v = 1.0 / (1 + degree[i].max(degree[j])) as f64;
                        w[(i, j)] = v;
                        off_sum += v;
                    }
                }
                w[(i, i)] = 1.0 - off_sum;
            }
            w
        }
    };
    validate_mixing(entries)
}

/// zeta of `ring(self_weight)` on p devices by the circulant eigenvalue
/// formula s + (1-s) cos(2 pi k / p). Used as an oracle in tests and to
/// solve for a self-weight hitting a target zeta in sweeps.
pub fn ring_zeta(p: usize, self_weight: f64) -> f64 {
    let s = self_weight;
    (1..p)
        .map(|k| (s + (1.0 - s) * (std::f64::consts::TAU * k as f64 / p as f64).cos()).abs())
        .fold(0.0, f64::max)
}

/// Ring self-weight whose circulant spectrum has second eigenvalue exactly
/// `zeta` (valid when cos(2 pi / p) <= zeta < 1 so no wrap-around mode
/// dominates).
pub fn ring_self_weight_for_zeta(p: usize, zeta: f64) -> Result<f64> {
    if p < 3 {
        return Err(FedError::invalid("zeta targeting needs p >= 3"));
    }
    let c = (std::f64::consts::TAU / p as f64).cos();
    if !(zeta < 1.0 && zeta >= c.max(0.0)) {
        return Err(FedError::invalid(format!(
            "target zeta {zeta} outside attainable range [{}, 1) for p = {p}",
            c.max(0.0)
        )));
    }
    let s = (zeta - c) / (1.0 - c);
    // With a small self-weight the most negative circulant mode can exceed
    // the k = 1 mode in magnitude, in which case the target is unattainable.
    if (ring_zeta(p, s) - zeta).abs() > 1e-12 {
        return Err(FedError::invalid(format!(
            "target zeta {zeta} dominated by the negative spectrum tail for p = {p}"
        )));
    }
    Ok(s)
}
