//! Per-token embedding vectors: the EMBF file format, PCA reduction, and a
//! seeded Gaussian generator for desk-scale experiments.
//!
//! EMBF layout (all integers little-endian):
//!
//! ```text
//! "EMBF" | version: u32 = 1 | corpus_hash: [u8; 32] | token_count: u64 | dim: u32
//! | token_count * dim f32, row-major
//! ```

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMBF";
const VERSION: u32 = 1;

/// One fixed-width vector per corpus token, indexed by global token index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    corpus_hash: [u8; 32],
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>, corpus_hash: [u8; 32]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i / dim,
                col: i % dim,
            });
        }
        Ok(Self {
            dim,
            data,
            corpus_hash,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn corpus_hash(&self) -> &[u8; 32] {
        &self.corpus_hash
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize) -> Option<&[f32]> {
        (i < self.n_rows()).then(|| self.row(i))
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Checks this matrix was built for `corpus`.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        if &self.corpus_hash != corpus.manifest_hash() {
            return Err(Error::CorpusHashMismatch {
                expected: hex::encode(corpus.manifest_hash()),
                found: hex::encode(self.corpus_hash),
            });
        }
        if self.n_rows() != corpus.n_tokens() {
            return Err(Error::RowCountMismatch {
                expected: corpus.n_tokens(),
                found: self.n_rows(),
            });
        }
        Ok(())
    }
}

pub fn write_embf(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    w.write_all(&matrix.corpus_hash).map_err(io)?;
    w.write_u64::<LittleEndian>(matrix.n_rows() as u64).map_err(io)?;
    w.write_u32::<LittleEndian>(matrix.dim as u32).map_err(io)?;
    for &v in &matrix.data {
        w.write_f32::<LittleEndian>(v).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads an EMBF file without checking it against a corpus.
pub fn read_embf(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::BadEmbeddingFile("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(Error::BadEmbeddingFile(format!("unsupported version {version}")));
    }
    let mut corpus_hash = [0u8; 32];
    r.read_exact(&mut corpus_hash).map_err(io)?;
    let n = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let len = n
        .checked_mul(dim)
        .ok_or_else(|| Error::BadEmbeddingFile("size overflow".into()))?;
    let mut data = vec![0f32; len];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(|e| Error::BadEmbeddingFile(format!("truncated payload: {e}")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::BadEmbeddingFile("trailing bytes after payload".into()));
    }
    EmbeddingMatrix::new(dim, data, corpus_hash)
}

/// Reads an EMBF file and checks that it belongs to `corpus`.
pub fn load_embeddings(path: impl AsRef<Path>, corpus: &Corpus) -> Result<EmbeddingMatrix> {
    let m = read_embf(path)?;
    m.validate_against(corpus)?;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractionStrategy {
    /// Last encoder layer.
    LL,
    /// Sum of the last four layers.
    SL4,
    /// Concatenation of the last four layers.
    CL4,
    Synthetic,
}

impl fmt::Display for ExtractionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::LL => "LL",
            Self::SL4 => "SL4",
            Self::CL4 => "CL4",
            Self::Synthetic => "synthetic",
        };
        f.write_str(s)
    }
}

impl FromStr for ExtractionStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LL" => Ok(Self::LL),
            "SL4" => Ok(Self::SL4),
            "CL4" => Ok(Self::CL4),
            "synthetic" => Ok(Self::Synthetic),
            _ => Err(Error::InvalidArgument(format!("unknown extraction strategy `{s}`"))),
        }
    }
}

/// Sidecar text file next to an EMBF file (`<file>.manifest`), one
/// `key=value` per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingManifest {
    pub source_model: String,
    pub strategy: ExtractionStrategy,
    pub dim: usize,
}

impl EmbeddingManifest {
    pub fn sidecar_path(embf: &Path) -> PathBuf {
        let mut p = embf.as_os_str().to_owned();
        p.push(".manifest");
        PathBuf::from(p)
    }

    pub fn write(&self, embf: &Path) -> Result<()> {
        let path = Self::sidecar_path(embf);
        let text = format!(
            "source_model={}\nstrategy={}\ndim={}\n",
            self.source_model, self.strategy, self.dim
        );
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(embf: &Path) -> Result<Self> {
        let path = Self::sidecar_path(embf);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (mut model, mut strategy, mut dim) = (None, None, None);
        for (i, line) in text.lines().enumerate() {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            match k.trim() {
                "source_model" => model = Some(v.trim().to_string()),
                "strategy" => strategy = Some(v.trim().parse()?),
                "dim" => {
                    dim = Some(v.trim().parse().map_err(|_| Error::Parse {
                        path: path.clone(),
                        line: i + 1,
                        message: "dim is not an integer".into(),
                    })?)
                }
                _ => {}
            }
        }
        let missing = |k: &str| Error::Parse {
            path: path.clone(),
            line: 0,
            message: format!("missing `{k}`"),
        };
        Ok(Self {
            source_model: model.ok_or_else(|| missing("source_model"))?,
            strategy: strategy.ok_or_else(|| missing("strategy"))?,
            dim: dim.ok_or_else(|| missing("dim"))?,
        })
    }
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaTarget {
    Components(usize),
    /// Smallest k whose cumulative explained variance reaches the fraction.
    VarianceFraction(f64),
}

impl Default for PcaTarget {
    fn default() -> Self {
        PcaTarget::VarianceFraction(0.825)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// k x dim, row-major; rows are orthonormal.
    components: Vec<f64>,
    /// Covariance eigenvalues of the kept components, non-increasing.
    eigenvalues: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
    /// Ratios for every component, kept for diagnostics.
    full_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.components[i * d..(i + 1) * d]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.explained_variance_ratio
    }

    /// Cumulative explained variance for every possible k (index k-1).
    pub fn cumulative_ratio_all(&self) -> Vec<f64> {
        self.full_ratio
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok((0..self.k())
            .map(|c| {
                self.component(c)
                    .iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(w, (v, m))| w * (v - m))
                    .sum()
            })
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, &zc) in z.iter().enumerate() {
            for (xi, w) in x.iter_mut().zip(self.component(c)) {
                *xi += zc * w;
            }
        }
        x
    }
}

pub fn fit_pca(matrix: &EmbeddingMatrix, target: PcaTarget) -> Result<PcaModel> {
    let n = matrix.n_rows();
    let d = matrix.dim();
    if let PcaTarget::Components(k) = target {
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {k} components of a {d}-dimensional matrix"
            )));
        }
        if n <= k {
            return Err(Error::InvalidArgument(format!(
                "need more than {k} rows to fit {k} components, have {n}"
            )));
        }
    }
    if let PcaTarget::VarianceFraction(f) = target {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidArgument(format!("variance fraction {f} not in (0, 1]")));
        }
    }
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two rows".into()));
    }

    let mut mean = vec![0.0f64; d];
    for row in matrix.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    // Accumulate the scatter matrix in row blocks to bound memory.
    const BLOCK: usize = 2048;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for start in (0..n).step_by(BLOCK) {
        let rows = BLOCK.min(n - start);
        let block = DMatrix::from_fn(rows, d, |r, c| matrix.row(start + r)[c] as f64 - mean[c]);
        cov.gemm_tr(1.0, &block, &block, 1.0);
    }
    cov /= (n - 1) as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return match target {
            PcaTarget::VarianceFraction(_) => Err(Error::Degenerate(
                "all rows identical; explained variance is undefined".into(),
            )),
            PcaTarget::Components(_) => Err(Error::Degenerate("all rows identical".into())),
        };
    }
    let full_ratio: Vec<f64> = values.iter().map(|v| v / total).collect();

    let k = match target {
        PcaTarget::Components(k) => k,
        PcaTarget::VarianceFraction(f) => {
            let mut acc = 0.0;
            let mut k = d;
            for (i, r) in full_ratio.iter().enumerate() {
                acc += r;
                if acc >= f - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };

    let mut components = Vec::with_capacity(k * d);
    for &i in &order[..k] {
        let col = eig.eigenvectors.column(i);
        // Sign convention: largest-magnitude entry is positive.
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| v * sign));
    }

    Ok(PcaModel {
        mean,
        components,
        eigenvalues: values[..k].to_vec(),
        explained_variance_ratio: full_ratio[..k].to_vec(),
        full_ratio,
    })
}

/// Projects every row, keeping the corpus hash.
pub fn transform(pca: &PcaModel, matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let rows = transform_f64(pca, matrix)?;
    let data = rows.into_iter().map(|v| v as f32).collect();
    EmbeddingMatrix::new(pca.k(), data, matrix.corpus_hash)
}

/// Full-precision projection, row-major `n x k`.
pub fn transform_f64(pca: &PcaModel, matrix: &EmbeddingMatrix) -> Result<Vec<f64>> {
    if matrix.dim() != pca.dim() {
        return Err(Error::DimensionMismatch {
            expected: pca.dim(),
            found: matrix.dim(),
        });
    }
    let mut out = Vec::with_capacity(matrix.n_rows() * pca.k());
    let mut buf = vec![0.0f64; pca.dim()];
    for row in matrix.rows() {
        for ((b, &v), m) in buf.iter_mut().zip(row).zip(&pca.mean) {
            *b = v as f64 - m;
        }
        for c in 0..pca.k() {
            out.push(pca.component(c).iter().zip(&buf).map(|(w, x)| w * x).sum());
        }
    }
    Ok(out)
}

/// Isotropic Gaussian clouds around a mean per entity class (and one for `O`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub outside_mean: Vec<f64>,
    /// One mean per entity class, in label-scheme order.
    pub class_means: Vec<Vec<f64>>,
    pub noise: f64,
}

impl GeneratorSpec {
    pub fn dim(&self) -> usize {
        self.outside_mean.len()
    }
}

pub fn synth_embeddings(
    corpus: &Corpus,
    spec: &GeneratorSpec,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let dim = spec.dim();
    if dim == 0 {
        return Err(Error::InvalidArgument("generator dimension is zero".into()));
    }
    if spec.class_means.len() != corpus.label_scheme().num_classes() {
        return Err(Error::DimensionMismatch {
            expected: corpus.label_scheme().num_classes(),
            found: spec.class_means.len(),
        });
    }
    if let Some(bad) = spec.class_means.iter().find(|m| m.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::InvalidArgument("noise scale must be non-negative".into()));
    }
    let scheme = corpus.label_scheme();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(corpus.n_tokens() * dim);
    for tok in corpus.tokens() {
        let mean = match scheme.class_of(tok.gold) {
            None => &spec.outside_mean,
            Some(c) => &spec.class_means[c],
        };
        for &m in mean {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((m + spec.noise * z) as f32);
        }
    }
    EmbeddingMatrix::new(dim, data, *corpus.manifest_hash())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelScheme, RawToken, OUTSIDE};

    fn tiny_corpus() -> Corpus {
        let scheme = LabelScheme::new(["A"]).unwrap();
        let sents = vec![vec![
            RawToken { surface: "x".into(), pos: None, tag: OUTSIDE },
            RawToken { surface: "Y".into(), pos: None, tag: 1 },
            RawToken { surface: "z".into(), pos: None, tag: OUTSIDE },
        ]];
        Corpus::from_tagged(scheme, false, sents).unwrap()
    }

    fn spec2() -> GeneratorSpec {
        GeneratorSpec {
            outside_mean: vec![0.0, 0.0],
            class_means: vec![vec![5.0, -1.0]],
            noise: 0.0,
        }
    }

    #[test]
    fn zero_noise_maps_to_means() {
        let c = tiny_corpus();
        let m = synth_embeddings(&c, &spec2(), 3).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0]);
        assert_eq!(m.row(1), &[5.0, -1.0]);
        assert_eq!(m.n_rows(), 3);
    }

    #[test]
    fn generator_is_seeded() {
        let c = tiny_corpus();
        let mut s = spec2();
        s.noise = 1.0;
        assert_eq!(
            synth_embeddings(&c, &s, 9).unwrap(),
            synth_embeddings(&c, &s, 9).unwrap()
        );
        assert_ne!(
            synth_embeddings(&c, &s, 9).unwrap(),
            synth_embeddings(&c, &s, 10).unwrap()
        );
    }

    #[test]
    fn generator_rejects_inconsistent_dims() {
        let c = tiny_corpus();
        let mut s = spec2();
        s.class_means[0].push(1.0);
        assert!(synth_embeddings(&c, &s, 0).is_err());
    }

    #[test]
    fn embf_guards() {
        let c = tiny_corpus();
        let m = synth_embeddings(&c, &spec2(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.embf");
        write_embf(&m, &p).unwrap();
        assert_eq!(load_embeddings(&p, &c).unwrap(), m);

        let other = EmbeddingMatrix::new(2, m.as_slice().to_vec(), [7u8; 32]).unwrap();
        write_embf(&other, &p).unwrap();
        assert!(matches!(
            load_embeddings(&p, &c),
            Err(Error::CorpusHashMismatch { .. })
        ));

        // Patch a NaN into the payload directly.
        write_embf(&m, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let off = 4 + 4 + 32 + 8 + 4 + 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_embeddings(&p, &c), Err(Error::NonFinite { row: 0, col: 1 })));
    }

    #[test]
    fn header_layout_is_exact() {
        let m = EmbeddingMatrix::new(2, vec![1.0, 2.0, 3.0, 4.0], [0xab; 32]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.embf");
        write_embf(&m, &p).unwrap();
        let b = std::fs::read(&p).unwrap();
        assert_eq!(&b[..4], b"EMBF");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..40], &[0xab; 32]);
        assert_eq!(&b[40..48], &2u64.to_le_bytes());
        assert_eq!(&b[48..52], &2u32.to_le_bytes());
        assert_eq!(&b[52..56], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 52 + 16);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.embf");
        let man = EmbeddingManifest {
            source_model: "bert-base-cased".into(),
            strategy: ExtractionStrategy::CL4,
            dim: 3072,
        };
        man.write(&p).unwrap();
        assert_eq!(EmbeddingManifest::read(&p).unwrap(), man);
    }

    #[test]
    fn line_has_single_component() {
        let data: Vec<f32> = (0..20).flat_map(|i| [i as f32 * 0.1, i as f32 * 0.1]).collect();
        let m = EmbeddingMatrix::new(2, data, [0; 32]).unwrap();
        let pca = fit_pca(&m, PcaTarget::VarianceFraction(0.99)).unwrap();
        assert_eq!(pca.k(), 1);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((pca.component(0)[0] - s).abs() < 1e-9);
        assert!((pca.component(0)[1] - s).abs() < 1e-9);
        assert!((pca.explained_variance_ratio()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pca_argument_errors() {
        let m = EmbeddingMatrix::new(2, vec![1.0; 8], [0; 32]).unwrap();
        assert!(fit_pca(&m, PcaTarget::Components(3)).is_err());
        assert!(matches!(
            fit_pca(&m, PcaTarget::VarianceFraction(0.8)),
            Err(Error::Degenerate(_))
        ));
        let pca = fit_pca(
            &EmbeddingMatrix::new(2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0], [0; 32]).unwrap(),
            PcaTarget::Components(1),
        )
        .unwrap();
        let wide = EmbeddingMatrix::new(3, vec![0.0; 3], [0; 32]).unwrap();
        assert!(matches!(transform(&pca, &wide), Err(Error::DimensionMismatch { .. })));
    }
}
