//! Synthetic registration pairs: soft multi-blob images with per-blob labels,
//! warped by a smooth, provably fold-free random displacement field.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{
    load_tensor, save_tensor, strides, warp, warp_labels, DisplacementField, GridShape, Image,
    Interpolation, LabelMap, Tensor,
};
use crate::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub shape: Vec<usize>,
    pub n_blobs: usize,
    /// Width (standard deviation, voxels) of the Gaussian bumps that make up
    /// the ground-truth field.
    pub smoothness: f64,
    /// Bound on every displacement component, in voxels.
    pub max_disp: f64,
    #[serde(default = "default_bumps")]
    pub n_bumps: usize,
}

fn default_bumps() -> usize {
    4
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            shape: vec![64, 64],
            n_blobs: 6,
            smoothness: 14.0,
            max_disp: 8.0,
            n_bumps: default_bumps(),
        }
    }
}

impl SynthSpec {
    pub fn with_shape(shape: &[usize]) -> Self {
        SynthSpec {
            shape: shape.to_vec(),
            ..Self::default()
        }
    }

    /// Each displacement component is a sum of Gaussian bumps whose absolute
    /// amplitudes add up to at most `max_disp`, so every partial derivative
    /// is bounded by `max_disp / (s * sqrt(e))`. Keeping the row sums of the
    /// displacement gradient below one keeps `det(I + grad u)` positive.
    pub fn invertibility_margin(&self) -> f64 {
        let d = self.shape.len() as f64;
        d * self.max_disp / (self.smoothness * std::f64::consts::E.sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        GridShape::new(self.shape.clone())?;
        if self.n_blobs == 0 {
            return Err(Error::Config("n_blobs must be >= 1".into()));
        }
        if !(self.smoothness > 0.0) || !(self.max_disp >= 0.0) || !self.max_disp.is_finite() {
            return Err(Error::Config(
                "smoothness must be positive and max_disp non-negative".into(),
            ));
        }
        let margin = self.invertibility_margin();
        if margin >= 1.0 {
            return Err(Error::Config(format!(
                "max_disp {} with smoothness {} can fold the field (bound {margin:.3} >= 1)",
                self.max_disp, self.smoothness
            )));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<i32> {
        (1..=self.n_blobs as i32).collect()
    }
}

/// One generated registration pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub seed: u64,
    pub fixed: Image,
    pub moving: Image,
    pub fixed_labels: LabelMap,
    pub moving_labels: LabelMap,
    pub gt_field: Option<DisplacementField>,
}

impl PairRecord {
    pub fn labels(&self) -> &[i32] {
        self.fixed_labels.labels()
    }
}

struct Blob {
    center: Vec<f64>,
    radii: Vec<f64>,
    intensity: f64,
}

fn soft_profile(blob: &Blob, x: &[usize]) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(&blob.center)
        .zip(&blob.radii)
        .map(|((&xi, c), r)| ((xi as f64 - c) / r).powi(2))
        .sum();
    // signed distance to the rim in (roughly) voxels, logistic edge
    let r_min = blob.radii.iter().cloned().fold(f64::MAX, f64::min);
    let edge = (r2.sqrt() - 1.0) * r_min;
    1.0 / (1.0 + edge.exp())
}

/// Deterministic pair for `seed`.
pub fn generate_pair(seed: u64, spec: &SynthSpec) -> Result<PairRecord> {
    spec.validate()?;
    let shape = GridShape::new(spec.shape.clone())?;
    let dims = shape.dims().to_vec();
    let nd = dims.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_axis = shape.min_axis() as f64;

    let blobs: Vec<Blob> = (0..spec.n_blobs)
        .map(|_| Blob {
            center: dims
                .iter()
                .map(|&d| rng.random_range(0.2..0.8) * d as f64)
                .collect(),
            radii: (0..nd)
                .map(|_| rng.random_range(0.07..0.16) * min_axis)
                .collect(),
            // overlapping intensity ranges keep similarity non-trivial
            intensity: rng.random_range(0.25..1.0),
        })
        .collect();
    let texture: Vec<(Vec<f64>, f64)> = (0..2)
        .map(|_| {
            let freq = (0..nd)
                .map(|_| rng.random_range(0.5..2.0) * std::f64::consts::TAU / min_axis)
                .collect();
            (freq, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();

    let n = shape.len();
    let st = strides(&dims);
    let mut intensity = vec![0.0; n];
    let mut labels = vec![0i32; n];
    let mut idx = vec![0usize; nd];
    for v in 0..n {
        let mut rem = v;
        for (a, s) in st.iter().enumerate() {
            idx[a] = rem / s;
            rem %= s;
        }
        let mut value: f64 = texture
            .iter()
            .map(|(f, ph)| {
                let arg: f64 = idx.iter().zip(f).map(|(&x, w)| x as f64 * w).sum();
                0.03 * (arg + ph).sin()
            })
            .sum();
        for (k, blob) in blobs.iter().enumerate() {
            let p = soft_profile(blob, &idx);
            value = value * (1.0 - p) + blob.intensity * p;
            if p > 0.5 {
                labels[v] = k as i32 + 1;
            }
        }
        // generated values are f32-representable so stored pairs reload exactly
        intensity[v] = value as f32 as f64;
    }
    let fixed = Image::new(shape.clone(), intensity)?;
    let fixed_labels = LabelMap::new(shape.clone(), labels, spec.labels())?;

    let mut field = vec![0.0; nd * n];
    for c in 0..nd {
        let mut amps: Vec<f64> = (0..spec.n_bumps)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let total: f64 = amps.iter().map(|a: &f64| a.abs()).sum();
        let target = spec.max_disp * rng.random_range(0.6..1.0);
        if total > 0.0 {
            amps.iter_mut().for_each(|a| *a *= target / total);
        }
        let centers: Vec<Vec<f64>> = (0..spec.n_bumps)
            .map(|_| {
                dims.iter()
                    .map(|&d| rng.random_range(0.0..d as f64))
                    .collect()
            })
            .collect();
        let comp = &mut field[c * n..(c + 1) * n];
        for (v, out) in comp.iter_mut().enumerate() {
            let mut rem = v;
            for (a, s) in st.iter().enumerate() {
                idx[a] = rem / s;
                rem %= s;
            }
            *out = amps
                .iter()
                .zip(&centers)
                .map(|(a, ctr)| {
                    let r2: f64 = idx
                        .iter()
                        .zip(ctr)
                        .map(|(&x, c)| (x as f64 - c).powi(2))
                        .sum();
                    a * (-r2 / (2.0 * spec.smoothness * spec.smoothness)).exp()
                })
                .sum::<f64>() as f32 as f64;
        }
    }
    let gt = DisplacementField::new(shape, field)?;
    let moving = warp(&fixed, &gt, Interpolation::Linear)?.map(|v| v as f32 as f64)?;
    let moving_labels = warp_labels(&fixed_labels, &gt)?;
    Ok(PairRecord {
        id: format!("pair_{seed:06}"),
        seed,
        fixed,
        moving,
        fixed_labels,
        moving_labels,
        gt_field: Some(gt),
    })
}

/// Seeds `base_seed, base_seed + 1, ...` generated in parallel.
pub fn generate_pairs(n_pairs: usize, base_seed: u64, spec: &SynthSpec) -> Result<Vec<PairRecord>> {
    spec.validate()?;
    (0..n_pairs as u64)
        .into_par_iter()
        .map(|i| generate_pair(base_seed.wrapping_add(i), spec))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Split assignment by position: `floor(n * train)` training pairs,
/// `floor(n * val)` validation pairs, the rest test.
pub fn split_counts(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must sum to 1"
        )));
    }
    let train = (n as f64 * a + 1e-9).floor() as usize;
    let val = ((n as f64 * b + 1e-9).floor() as usize).min(n - train);
    Ok((train, val, n - train - val))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPaths {
    pub fixed: PathBuf,
    pub moving: PathBuf,
    pub fixed_labels: PathBuf,
    pub moving_labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_field: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    /// Relative to the manifest directory.
    pub paths: PairPaths,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub spec: SynthSpec,
    pub pairs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.pairs
            .iter()
            .filter(|p| p.split == split)
            .map(|p| p.id.as_str())
            .collect()
    }
}

/// Writes `n_pairs` pairs and `manifest.json` into `out_dir`.
pub fn make_dataset(
    n_pairs: usize,
    spec: &SynthSpec,
    base_seed: u64,
    split: (f64, f64, f64),
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let out = out_dir.as_ref();
    let (n_train, n_val, _) = split_counts(n_pairs, split)?;
    let records = generate_pairs(n_pairs, base_seed, spec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pairs = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let rel = PathBuf::from(&rec.id);
            let paths = PairPaths {
                fixed: rel.join("fixed"),
                moving: rel.join("moving"),
                fixed_labels: rel.join("fixed_labels"),
                moving_labels: rel.join("moving_labels"),
                gt_field: rec.gt_field.as_ref().map(|_| rel.join("gt_field")),
            };
            save_tensor(out.join(&paths.fixed), &Tensor::Image(rec.fixed.clone()))?;
            save_tensor(out.join(&paths.moving), &Tensor::Image(rec.moving.clone()))?;
            save_tensor(
                out.join(&paths.fixed_labels),
                &Tensor::Labels(rec.fixed_labels.clone()),
            )?;
            save_tensor(
                out.join(&paths.moving_labels),
                &Tensor::Labels(rec.moving_labels.clone()),
            )?;
            if let (Some(p), Some(f)) = (&paths.gt_field, &rec.gt_field) {
                save_tensor(out.join(p), &Tensor::Field(f.clone()))?;
            }
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            Ok(ManifestEntry {
                id: rec.id.clone(),
                seed: rec.seed,
                paths,
                split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        spec: spec.clone(),
        pairs,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A dataset directory opened through its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let path = root.join("manifest.json");
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_slice(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::format(
                &path,
                format!("manifest version {} unsupported", manifest.version),
            ));
        }
        Ok(Dataset { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.manifest
            .pairs
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::Data(format!("no pair {id:?} in dataset")))
    }

    pub fn load(&self, id: &str) -> Result<PairRecord> {
        let e = self.entry(id)?;
        let p = &e.paths;
        Ok(PairRecord {
            id: e.id.clone(),
            seed: e.seed,
            fixed: load_tensor(self.root.join(&p.fixed))?.into_image()?,
            moving: load_tensor(self.root.join(&p.moving))?.into_image()?,
            fixed_labels: load_tensor(self.root.join(&p.fixed_labels))?.into_labels()?,
            moving_labels: load_tensor(self.root.join(&p.moving_labels))?.into_labels()?,
            gt_field: match &p.gt_field {
                Some(path) => Some(load_tensor(self.root.join(path))?.into_field()?),
                None => None,
            },
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<PairRecord>> {
        self.manifest
            .ids(split)
            .into_par_iter()
            .map(|id| self.load(id))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::jacobian_determinant;
    use crate::metrics::dice;

    fn small() -> SynthSpec {
        SynthSpec {
            shape: vec![32, 32],
            n_blobs: 4,
            smoothness: 6.0,
            max_disp: 2.0,
            n_bumps: 3,
        }
    }

    #[test]
    fn zero_displacement_leaves_the_pair_aligned() {
        let spec = SynthSpec {
            max_disp: 0.0,
            ..small()
        };
        let p = generate_pair(3, &spec).unwrap();
        assert_eq!(p.fixed, p.moving);
        assert_eq!(p.fixed_labels, p.moving_labels);
        assert_eq!(
            dice(&p.fixed_labels, &p.moving_labels, p.labels())
                .unwrap()
                .mean,
            1.0
        );
    }

    #[test]
    fn same_seed_same_pair() {
        assert_eq!(
            generate_pair(11, &small()).unwrap(),
            generate_pair(11, &small()).unwrap()
        );
        assert_ne!(
            generate_pair(11, &small()).unwrap().fixed,
            generate_pair(12, &small()).unwrap().fixed
        );
    }

    #[test]
    fn generated_fields_are_fold_free() {
        for seed in 0..20 {
            let p = generate_pair(seed, &SynthSpec::default()).unwrap();
            let (_, det) = jacobian_determinant(p.gt_field.as_ref().unwrap()).unwrap();
            let min = det.iter().cloned().fold(f64::MAX, f64::min);
            assert!(min > 0.0, "seed {seed}: min det {min}");
        }
    }

    #[test]
    fn folding_spec_is_rejected() {
        let spec = SynthSpec {
            max_disp: 20.0,
            ..small()
        };
        assert!(matches!(generate_pair(0, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_counts(10, (0.6, 0.2, 0.2)).unwrap(), (6, 2, 2));
        assert_eq!(split_counts(7, (0.5, 0.25, 0.25)).unwrap(), (3, 1, 3));
        assert!(split_counts(10, (0.6, 0.6, 0.2)).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_dataset(5, &small(), 40, (0.6, 0.2, 0.2), dir.path()).unwrap();
        assert_eq!(m.ids(Split::Train).len(), 3);
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest(), &m);
        let back = ds.load(&m.pairs[4].id).unwrap();
        assert_eq!(back, generate_pair(44, &small()).unwrap());
    }
}
