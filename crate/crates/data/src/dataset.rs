use std::path::Path;

use deco_core::prototypes::CountMatrix;
use deco_core::Tensor;

use crate::error::{DataError, Result};
use crate::manifest::Manifest;
use crate::ppm;

/// A manifest with every image decoded once and cached as 8-bit RGB.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    images: Vec<Vec<u8>>,
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(root)?;
    let size = manifest.params.image_size;
    let mut images = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let path = root.join(&r.path);
        let img = ppm::read(&path)?;
        if img.width != size || img.height != size {
            return Err(DataError::Pixmap {
                path,
                detail: format!("{}×{} image in a {size}×{size} dataset", img.width, img.height),
            });
        }
        images.push(img.pixels);
    }
    Ok(Dataset { manifest, images })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.manifest.params.image_size
    }

    pub fn label(&self, i: usize) -> usize {
        self.manifest.records[i].label
    }

    pub fn domain(&self, i: usize) -> usize {
        self.manifest.records[i].domain
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.label(i)).collect()
    }

    pub fn domains(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.domain(i)).collect()
    }

    pub fn raw_pixels(&self, i: usize) -> &[u8] {
        &self.images[i]
    }

    /// `N×3×H×W` batch scaled to [0, 1].
    pub fn tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let s = self.image_size();
        let plane = s * s;
        let mut data = vec![0.0; indices.len() * 3 * plane];
        for (n, &i) in indices.iter().enumerate() {
            let px = &self.images[i];
            let out = &mut data[n * 3 * plane..(n + 1) * 3 * plane];
            for p in 0..plane {
                for ch in 0..3 {
                    out[ch * plane + p] = px[p * 3 + ch] as f64 / 255.0;
                }
            }
        }
        Ok(Tensor::new(vec![indices.len(), 3, s, s], data)?)
    }

    /// `(domain, class)` counts over a subset of the records.
    pub fn counts(&self, indices: &[usize]) -> CountMatrix {
        let p = &self.manifest.params;
        let mut m = CountMatrix::zeros(p.domains, p.classes);
        for &i in indices {
            m.increment(self.domain(i), self.label(i));
        }
        m
    }
}
