use std::path::Path;
use std::str::FromStr;

use deco_core::prototypes::CountMatrix;
use deco_core::SeededRng;

use crate::error::{io_err, DataError, Result};
use crate::manifest::{GeneratorParams, Manifest, SampleRecord};
use crate::ppm;
use crate::render::{render_image, ClassSpec, DomainSpec};

/// How many images each `(domain, class)` cell receives.
#[derive(Debug, Clone, PartialEq)]
pub enum ImbalanceProfile {
    Balanced,
    /// `n(d, c) = max(1, round(per_cell · r^c))`.
    LongTail(f64),
    /// `n(d, c) = max(1, round(per_cell · r^d))`.
    DomainTail(f64),
    /// Explicit row-major counts, one row per domain.
    Explicit(Vec<Vec<u64>>),
}

impl ImbalanceProfile {
    pub fn cell_count(&self, per_cell: usize, domain: usize, class: usize) -> u64 {
        let decay = |r: f64, k: usize| ((per_cell as f64 * r.powi(k as i32)).round() as u64).max(1);
        match self {
            Self::Balanced => per_cell as u64,
            Self::LongTail(r) => decay(*r, class),
            Self::DomainTail(r) => decay(*r, domain),
            Self::Explicit(rows) => rows[domain][class],
        }
    }

    pub fn counts(&self, per_cell: usize, domains: usize, classes: usize) -> Result<CountMatrix> {
        if let Self::Explicit(rows) = self {
            if rows.len() != domains || rows.iter().any(|r| r.len() != classes) {
                return Err(DataError::Config(format!("explicit counts must be {domains}×{classes}")));
            }
        }
        let rows: Vec<Vec<u64>> = (0..domains)
            .map(|d| (0..classes).map(|c| self.cell_count(per_cell, d, c)).collect())
            .collect();
        CountMatrix::from_rows(&rows).map_err(|e| DataError::Config(e.to_string()))
    }

    pub fn label(&self) -> String {
        match self {
            Self::Balanced => "balanced".into(),
            Self::LongTail(r) => format!("long-tail:{r}"),
            Self::DomainTail(r) => format!("domain-tail:{r}"),
            Self::Explicit(_) => "explicit".into(),
        }
    }
}

impl FromStr for ImbalanceProfile {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        let ratio = |v: &str| -> Result<f64> {
            let r: f64 = v
                .trim()
                .parse()
                .map_err(|_| DataError::Config(format!("bad decay ratio {v:?}")))?;
            if !(r > 0.0 && r <= 1.0) {
                return Err(DataError::Config(format!("decay ratio must lie in (0, 1], got {r}")));
            }
            Ok(r)
        };
        let s = s.trim();
        if s == "balanced" {
            return Ok(Self::Balanced);
        }
        let (kind, value) = s
            .split_once([':', ' '])
            .ok_or_else(|| DataError::Config(format!("unknown imbalance profile {s:?}")))?;
        match kind {
            "long-tail" => Ok(Self::LongTail(ratio(value)?)),
            "domain-tail" => Ok(Self::DomainTail(ratio(value)?)),
            _ => Err(DataError::Config(format!("unknown imbalance profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub domains: usize,
    pub classes: usize,
    pub per_cell: usize,
    pub profile: ImbalanceProfile,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            domains: 4,
            classes: 5,
            per_cell: 40,
            profile: ImbalanceProfile::Balanced,
            image_size: 64,
            seed: 0,
        }
    }
}

const STYLE_STREAM: u64 = 1 << 40;

/// The style of every domain for a generator seed.
pub fn domain_specs(seed: u64, domains: usize) -> Vec<DomainSpec> {
    (0..domains)
        .map(|d| DomainSpec::sample(d, &mut SeededRng::derive(seed, STYLE_STREAM + d as u64)))
        .collect()
}

fn image_stream(domain: usize, class: usize, k: usize) -> u64 {
    ((domain as u64) << 48) | ((class as u64) << 32) | k as u64
}

pub fn relative_path(domain: usize, class: usize, k: usize) -> String {
    format!("domain-{domain}/class-{class}/img-{k}.ppm")
}

/// Renders every image and writes the manifest under `root`.
pub fn generate_dataset(root: &Path, cfg: &GeneratorConfig) -> Result<Manifest> {
    if cfg.domains == 0 || cfg.classes < 2 {
        return Err(DataError::Config(format!(
            "need at least 1 domain and 2 classes, got {} and {}",
            cfg.domains, cfg.classes
        )));
    }
    if cfg.image_size < 32 {
        return Err(DataError::Config(format!("image size must be at least 32, got {}", cfg.image_size)));
    }
    let counts = cfg.profile.counts(cfg.per_cell, cfg.domains, cfg.classes)?;
    let styles = domain_specs(cfg.seed, cfg.domains);
    let mut records = Vec::with_capacity(counts.total() as usize);
    for (d, style) in styles.iter().enumerate() {
        for c in 0..cfg.classes {
            let dir = root.join(format!("domain-{d}/class-{c}"));
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let spec = ClassSpec::grade(c);
            for k in 0..counts.get(d, c) as usize {
                let mut rng = SeededRng::derive(cfg.seed, image_stream(d, c, k));
                let (img, _) = render_image(&spec, style, cfg.image_size, &mut rng);
                let rel = relative_path(d, c, k);
                ppm::write(&root.join(&rel), &img)?;
                records.push(SampleRecord {
                    path: rel,
                    label: c,
                    domain: d,
                    split: "all".into(),
                });
            }
        }
    }
    let manifest = Manifest {
        root: root.to_path_buf(),
        params: GeneratorParams {
            seed: cfg.seed,
            domains: cfg.domains,
            classes: cfg.classes,
            image_size: cfg.image_size,
            profile: cfg.profile.label(),
        },
        counts,
        records,
    };
    manifest.write()?;
    Ok(manifest)
}
