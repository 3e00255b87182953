//! On-disk manifest: one `#deco-manifest` header line with the generator
//! parameters and row-major `(domain, class)` counts, a column line, then
//! one `path,label,domain,split` row per image. Paths are relative to the
//! dataset root.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use deco_core::prototypes::CountMatrix;

use crate::error::{io_err, DataError, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
const MAGIC: &str = "#deco-manifest";
const COLUMNS: &str = "path,label,domain,split";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub path: String,
    pub label: usize,
    pub domain: usize,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorParams {
    pub seed: u64,
    pub domains: usize,
    pub classes: usize,
    pub image_size: usize,
    pub profile: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub params: GeneratorParams,
    pub counts: CountMatrix,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn file_path(root: &Path) -> PathBuf {
        root.join(MANIFEST_FILE)
    }

    pub fn recount(&self) -> CountMatrix {
        let mut m = CountMatrix::zeros(self.params.domains, self.params.classes);
        for r in &self.records {
            if r.domain < self.params.domains && r.label < self.params.classes {
                m.increment(r.domain, r.label);
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let file = Self::file_path(&self.root);
        for (i, r) in self.records.iter().enumerate() {
            if r.domain >= self.params.domains || r.label >= self.params.classes {
                return Err(DataError::Manifest {
                    path: file,
                    line: i + 3,
                    detail: format!("(label {}, domain {}) outside configured ranges", r.label, r.domain),
                });
            }
        }
        let recount = self.recount();
        for d in 0..self.params.domains {
            for c in 0..self.params.classes {
                let (stored, recount) = (self.counts.get(d, c), recount.get(d, c));
                if stored != recount {
                    return Err(DataError::CountMismatch {
                        domain: d,
                        class: c,
                        stored,
                        recount,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let p = &self.params;
        let counts: Vec<String> = self.counts.as_slice().iter().map(u64::to_string).collect();
        let mut out = format!(
            "{MAGIC} seed={} domains={} classes={} image_size={} profile={} counts={}\n{COLUMNS}\n",
            p.seed,
            p.domains,
            p.classes,
            p.image_size,
            p.profile,
            counts.join(",")
        );
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.path, r.label, r.domain, r.split);
        }
        out
    }

    pub fn write(&self) -> Result<()> {
        let path = Self::file_path(&self.root);
        std::fs::write(&path, self.render()).map_err(io_err(&path))
    }

    /// Reads and validates `root/manifest.csv`.
    pub fn read(root: &Path) -> Result<Self> {
        let path = Self::file_path(root);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let m = Self::parse(root, &text)?;
        m.validate()?;
        Ok(m)
    }

    fn parse(root: &Path, text: &str) -> Result<Self> {
        let file = Self::file_path(root);
        let err = |line: usize, detail: String| DataError::Manifest {
            path: file.clone(),
            line,
            detail,
        };
        let (header, body) = text.split_once('\n').ok_or_else(|| err(1, "missing header".into()))?;
        let fields = header
            .strip_prefix(MAGIC)
            .ok_or_else(|| err(1, format!("header must start with {MAGIC}")))?;
        let mut seed = None;
        let mut domains = None;
        let mut classes = None;
        let mut image_size = None;
        let mut profile = None;
        let mut counts = None;
        for kv in fields.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| err(1, format!("malformed field {kv:?}")))?;
            let num = |v: &str| v.parse::<u64>().map_err(|_| err(1, format!("bad {k} value {v:?}")));
            match k {
                "seed" => seed = Some(num(v)?),
                "domains" => domains = Some(num(v)? as usize),
                "classes" => classes = Some(num(v)? as usize),
                "image_size" => image_size = Some(num(v)? as usize),
                "profile" => profile = Some(v.to_string()),
                "counts" => counts = Some(v.split(',').map(num).collect::<Result<Vec<u64>>>()?),
                other => return Err(err(1, format!("unknown header field {other:?}"))),
            }
        }
        let missing = |name: &str| err(1, format!("header lacks {name}"));
        let params = GeneratorParams {
            seed: seed.ok_or_else(|| missing("seed"))?,
            domains: domains.ok_or_else(|| missing("domains"))?,
            classes: classes.ok_or_else(|| missing("classes"))?,
            image_size: image_size.ok_or_else(|| missing("image_size"))?,
            profile: profile.ok_or_else(|| missing("profile"))?,
        };
        let flat = counts.ok_or_else(|| missing("counts"))?;
        if flat.len() != params.domains * params.classes {
            return Err(err(1, format!("{} counts for {}×{} cells", flat.len(), params.domains, params.classes)));
        }
        let rows: Vec<Vec<u64>> = flat.chunks(params.classes).map(<[u64]>::to_vec).collect();
        let counts = CountMatrix::from_rows(&rows).map_err(|e| err(1, e.to_string()))?;

        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let columns = reader.headers().map_err(|e| err(2, e.to_string()))?.clone();
        if columns.iter().collect::<Vec<_>>().join(",") != COLUMNS {
            return Err(err(2, format!("columns must be {COLUMNS}")));
        }
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let line = i + 3;
            let row = row.map_err(|e| err(line, e.to_string()))?;
            if row.len() != 4 {
                return Err(err(line, format!("expected 4 fields, got {}", row.len())));
            }
            let int = |s: &str, what: &str| s.parse::<usize>().map_err(|_| err(line, format!("bad {what} {s:?}")));
            records.push(SampleRecord {
                path: row[0].to_string(),
                label: int(&row[1], "label")?,
                domain: int(&row[2], "domain")?,
                split: row[3].to_string(),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            params,
            counts,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Manifest {
        let records = vec![
            SampleRecord { path: "domain-0/class-1/img-0.ppm".into(), label: 1, domain: 0, split: "all".into() },
            SampleRecord { path: "domain-1/class-0/img-0.ppm".into(), label: 0, domain: 1, split: "all".into() },
            SampleRecord { path: "domain-1/class-0/img-1.ppm".into(), label: 0, domain: 1, split: "all".into() },
        ];
        Manifest {
            root: PathBuf::from("/data"),
            params: GeneratorParams { seed: 9, domains: 2, classes: 2, image_size: 32, profile: "balanced".into() },
            counts: CountMatrix::from_rows(&[vec![0, 1], vec![2, 0]]).unwrap(),
            records,
        }
    }

    #[test]
    fn render_parse_round_trip() {
        let m = sample();
        let text = m.render();
        assert!(text.starts_with("#deco-manifest seed=9 domains=2 classes=2 image_size=32 profile=balanced counts=0,1,2,0\n"));
        let back = Manifest::parse(Path::new("/data"), &text).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
    }

    #[test]
    fn count_mismatch_names_cell() {
        let mut m = sample();
        m.counts = CountMatrix::from_rows(&[vec![0, 1], vec![3, 0]]).unwrap();
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("domain 1, class 0"), "{err}");
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = sample().render().replace("img-1.ppm,0,1", "img-1.ppm,zero,1");
        let err = Manifest::parse(Path::new("/data"), &text).unwrap_err().to_string();
        assert!(err.contains(":5:") && err.contains("label"), "{err}");
        assert!(Manifest::parse(Path::new("/d"), "nonsense\n").is_err());
    }
}
