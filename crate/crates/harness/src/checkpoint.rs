//! Named-tensor checkpoint format.
//!
//! Layout (little endian): magic `DECOCKPT`, `u32` version, `u64` length +
//! UTF-8 config text, `u64` tensor count, then per tensor `u64` name length,
//! name bytes, `u64` rank, `rank × u64` dims and the `f64` values.

use std::path::Path;

use deco_core::model::Parameters;
use deco_core::prototypes::{ClassPrototypeBank, DomainPrototypeBank};
use deco_core::Tensor;

use crate::config::ExperimentConfig;
use crate::error::{io_err, HarnessError, Result};
use crate::train::TrainedModel;

const MAGIC: &[u8; 8] = b"DECOCKPT";
const VERSION: u32 = 1;

pub fn encode(config_text: &str, tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_text.len() as u64).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!("truncated at byte {} (wanted {n} more)", self.pos)
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> std::result::Result<usize, String> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| format!("implausible length {v}"))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8".to_string())
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(String, Vec<(String, Tensor)>), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let config = r.string()?;
    let count = r.len()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.len()?;
        let shape = (0..rank).map(|_| r.len()).collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or("tensor too large")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok((config, tensors))
}

/// Parameters under their own names, banks under `class`, `domain_mean` and
/// `domain_std`, and `meta.shape = [image_size, domains, classes, fold]` with fold −1 when absent.
pub fn save(path: &Path, model: &TrainedModel) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = model.params.entries().to_vec();
    tensors.extend(model.class_bank.inner().to_named("class"));
    let (u, v) = model.domain_bank.banks();
    tensors.extend(u.to_named("domain_mean"));
    tensors.extend(v.to_named("domain_std"));
    tensors.push((
        "meta.shape".into(),
        Tensor::from_vec(vec![
            model.image_size as f64,
            model.domains as f64,
            model.backbone.num_classes as f64,
            model.fold.map_or(-1.0, |d| d as f64),
        ])?,
    ));
    let bytes = encode(&model.config.canonical(), &tensors);
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let bad = |detail: String| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    let (text, tensors) = decode(&bytes).map_err(bad)?;
    let config = ExperimentConfig::parse_canonical(&text)?;
    let meta = tensors
        .iter()
        .find(|(n, _)| n == "meta.shape")
        .map(|(_, t)| t.data().to_vec())
        .filter(|m| m.len() == 4)
        .ok_or_else(|| bad("missing meta.shape".into()))?;
    let (image_size, domains, classes) = (meta[0] as usize, meta[1] as usize, meta[2] as usize);
    let fold = (meta[3] >= 0.0).then(|| meta[3] as usize);
    let backbone = config.backbone(classes);
    let params = Parameters::from_entries(
        tensors
            .iter()
            .filter(|(n, _)| n.starts_with("conv") || n.starts_with("fc."))
            .cloned()
            .collect(),
    );
    params.check_against(&backbone).map_err(|e| bad(e.to_string()))?;
    let [c, h, w] = backbone.feature_shape(backbone.insertion_layer, image_size, image_size)?;
    let mut class_bank = ClassPrototypeBank::new(classes, &[c, h, w], config.bank());
    class_bank.inner_mut().load_named("class", &tensors)?;
    let mut domain_bank = DomainPrototypeBank::new(domains, c, config.bank());
    let (u, v) = domain_bank.banks_mut();
    u.load_named("domain_mean", &tensors)?;
    v.load_named("domain_std", &tensors)?;
    Ok(TrainedModel {
        config,
        backbone,
        image_size,
        domains,
        fold,
        params,
        class_bank,
        domain_bank,
    })
}
