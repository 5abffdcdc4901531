//! Synthetic ground-truth covariance models and Gaussian sampling.
//!
//! Randomness comes from `ChaCha8Rng`, which produces the same stream on
//! every platform for a given 64-bit seed. Independent streams for
//! replications are derived with [`Seed::child`].

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LorecError, Result};
use crate::matrix::{save_matrix_csv, spectral_factorize, SymmetricMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    /// Derives an independent seed for sub-stream `index`.
    pub fn child(self, index: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9)
            ^ index.wrapping_add(1).wrapping_mul(0x94D0_49BB_1331_11EB);
        // splitmix64 finalizer
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Factor,
    CompoundSymmetry,
    Spike,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Factor => "factor",
            ModelFamily::CompoundSymmetry => "compound_symmetry",
            ModelFamily::Spike => "spike",
        }
    }

    pub fn generate(self, p: usize, seed: Seed) -> Result<GroundTruthModel> {
        match self {
            ModelFamily::Factor => gen_factor(p, seed),
            ModelFamily::CompoundSymmetry => gen_compound_symmetry(p, seed),
            ModelFamily::Spike => gen_spike(p, seed),
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = LorecError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factor" => Ok(ModelFamily::Factor),
            "compound_symmetry" | "compound-symmetry" | "compound" => {
                Ok(ModelFamily::CompoundSymmetry)
            }
            "spike" => Ok(ModelFamily::Spike),
            other => Err(LorecError::invalid(format!("unknown model family {other:?}"))),
        }
    }
}

/// Parameters that pin down a generated model beyond its matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyParams {
    Factor {
        factor_variances: Vec<f64>,
    },
    CompoundSymmetry {
        between: f64,
        block_size: usize,
        /// `permutation[i]` is the unpermuted index placed at position `i`.
        permutation: Vec<usize>,
    },
    Spike {
        beta: f64,
        k: usize,
        block_size: usize,
        /// Nonzero coordinates of the spike direction, ascending.
        support: Vec<usize>,
        /// The unit spike direction `u`.
        direction: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct GroundTruthModel {
    pub sigma: SymmetricMatrix,
    pub low_rank: SymmetricMatrix,
    pub sparse: SymmetricMatrix,
    pub true_rank: usize,
    /// Nonzero pattern of `sparse`, both triangles.
    pub true_support: BTreeSet<(usize, usize)>,
    pub family: ModelFamily,
    pub params: FamilyParams,
}

#[derive(Debug, Serialize)]
struct ModelMeta<'a> {
    family: ModelFamily,
    p: usize,
    true_rank: usize,
    support_size: usize,
    params: &'a FamilyParams,
}

impl GroundTruthModel {
    fn assemble(
        low_rank: SymmetricMatrix,
        sparse: SymmetricMatrix,
        true_rank: usize,
        family: ModelFamily,
        params: FamilyParams,
    ) -> Self {
        let p = sparse.dim();
        let true_support = (0..p)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .filter(|&(i, j)| sparse[(i, j)] != 0.0)
            .collect();
        GroundTruthModel {
            sigma: &low_rank + &sparse,
            low_rank,
            sparse,
            true_rank,
            true_support,
            family,
            params,
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    /// Writes `sigma.csv`, `low_rank.csv`, `sparse.csv` and `meta.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_matrix_csv(dir.join("sigma.csv"), self.sigma.as_matrix())?;
        save_matrix_csv(dir.join("low_rank.csv"), self.low_rank.as_matrix())?;
        save_matrix_csv(dir.join("sparse.csv"), self.sparse.as_matrix())?;
        let meta = ModelMeta {
            family: self.family,
            p: self.dim(),
            true_rank: self.true_rank,
            support_size: self.true_support.len(),
            params: &self.params,
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }
}

/// Haar-distributed `p × r` matrix with orthonormal columns.
fn haar_orthonormal(rng: &mut ChaCha8Rng, p: usize, r: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let rmat = qr.r();
    // fixing the signs of R's diagonal makes Q exactly Haar
    for k in 0..r {
        if rmat[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

fn block_diagonal(p: usize, block: usize, off: f64, diag: f64) -> SymmetricMatrix {
    SymmetricMatrix::from_upper_fn(p, |i, j| {
        if i == j {
            diag
        } else if i / block == j / block {
            off
        } else {
            0.0
        }
    })
}

/// Factor model `U diag(8, 8, 8) Uᵀ + I` with Haar `U ∈ ℝ^{p×3}`.
pub fn gen_factor(p: usize, seed: Seed) -> Result<GroundTruthModel> {
    if p < 4 {
        return Err(LorecError::invalid(format!("factor model needs p >= 4, got {p}")));
    }
    let variances = vec![8.0; 3];
    let mut rng = seed.rng();
    let u = haar_orthonormal(&mut rng, p, variances.len());
    let mut scaled = u.clone();
    for (k, v) in variances.iter().enumerate() {
        scaled.column_mut(k).scale_mut(*v);
    }
    let low_rank = SymmetricMatrix::symmetrize(scaled * u.transpose())?;
    Ok(GroundTruthModel::assemble(
        low_rank,
        SymmetricMatrix::identity(p),
        variances.len(),
        ModelFamily::Factor,
        FamilyParams::Factor {
            factor_variances: variances,
        },
    ))
}

/// Compound symmetry `0.2·11ᵀ + P blockdiag(B, …, B) Pᵀ` with
/// `B = 0.4·11ᵀ + 0.4·I` of size 5 and a uniformly random permutation `P`.
pub fn gen_compound_symmetry(p: usize, seed: Seed) -> Result<GroundTruthModel> {
    const BLOCK: usize = 5;
    const BETWEEN: f64 = 0.2;
    if p == 0 || !p.is_multiple_of(BLOCK) {
        return Err(LorecError::invalid(format!(
            "compound symmetry needs p divisible by {BLOCK}, got {p}"
        )));
    }
    let mut rng = seed.rng();
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(&mut rng);
    let blocks = block_diagonal(p, BLOCK, 0.4, 0.4 + 0.4);
    let sparse = blocks.permuted(&perm)?;
    let low_rank = SymmetricMatrix::from_upper_fn(p, |_, _| BETWEEN);
    Ok(GroundTruthModel::assemble(
        low_rank,
        sparse,
        1,
        ModelFamily::CompoundSymmetry,
        FamilyParams::CompoundSymmetry {
            between: BETWEEN,
            block_size: BLOCK,
            permutation: perm,
        },
    ))
}

/// Spiked model `16·uuᵀ + blockdiag(0.4·11ᵀ + 0.6·I)` (blocks of 4), with
/// `u` supported on a random half of the coordinates and entries `±1/√k`.
pub fn gen_spike(p: usize, seed: Seed) -> Result<GroundTruthModel> {
    const BLOCK: usize = 4;
    const BETA: f64 = 16.0;
    if p == 0 || !p.is_multiple_of(BLOCK) {
        return Err(LorecError::invalid(format!(
            "spike model needs p divisible by {BLOCK}, got {p}"
        )));
    }
    let k = p / 2;
    let mut rng = seed.rng();
    let mut coords: Vec<usize> = (0..p).collect();
    coords.shuffle(&mut rng);
    let mut support: Vec<usize> = coords[..k].to_vec();
    support.sort_unstable();
    let magnitude = 1.0 / (k as f64).sqrt();
    let mut u = DVector::zeros(p);
    for &i in &support {
        u[i] = if rng.random::<bool>() { magnitude } else { -magnitude };
    }
    let low_rank = SymmetricMatrix::outer(&u, BETA);
    let sparse = block_diagonal(p, BLOCK, 0.4, 0.4 + 0.6);
    Ok(GroundTruthModel::assemble(
        low_rank,
        sparse,
        1,
        ModelFamily::Spike,
        FamilyParams::Spike {
            beta: BETA,
            k,
            block_size: BLOCK,
            support,
            direction: u.iter().copied().collect(),
        },
    ))
}

/// `n` independent draws from `N(0, Σ*)`, one per row.
pub fn sample_gaussian(model: &GroundTruthModel, n: usize, seed: Seed) -> Result<DMatrix<f64>> {
    sample_from_covariance(&model.sigma, n, seed)
}

/// `n` draws from `N(0, Σ)` using the symmetric square root of `Σ`.
pub fn sample_from_covariance(
    sigma: &SymmetricMatrix,
    n: usize,
    seed: Seed,
) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(LorecError::invalid("sample size must be at least 1"));
    }
    let spec = spectral_factorize(sigma)?;
    if let Some(&smallest) = spec.eigenvalues.last() {
        if smallest <= 0.0 {
            return Err(LorecError::NumericFailure(format!(
                "covariance is not positive definite (smallest eigenvalue {smallest:e})"
            )));
        }
    }
    let root = spec.reconstruct_with(f64::sqrt);
    let p = sigma.dim();
    let mut rng = seed.rng();
    // filled row by row so the stream order does not depend on storage layout
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(z * root.as_matrix())
}
