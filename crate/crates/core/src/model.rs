//! Plain conv/ReLU backbone split at an insertion layer, with a
//! global-average-pool + linear classifier head.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub stage_widths: Vec<usize>,
    /// Stride of the first block in each stage.
    pub stage_strides: Vec<usize>,
    /// Square kernel size per stage; padding is `(k − 1) / 2`.
    pub stage_kernels: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Number of conv layers before the insertion point.
    pub insertion_layer: usize,
    pub num_classes: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            stage_widths: vec![16, 32, 64],
            stage_strides: vec![2, 2, 1],
            stage_kernels: vec![3, 3, 3],
            blocks_per_stage: 1,
            insertion_layer: 1,
            num_classes: 5,
        }
    }
}

/// Geometry of one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl BackboneConfig {
    pub fn total_depth(&self) -> usize {
        self.stage_widths.len() * self.blocks_per_stage
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |detail: String| TensorError::Invalid {
            op: "backbone_config",
            detail,
        };
        let stages = self.stage_widths.len();
        if stages == 0 || self.stage_strides.len() != stages || self.stage_kernels.len() != stages {
            return Err(invalid(format!(
                "need matching per-stage widths/strides/kernels, got {}/{}/{}",
                stages,
                self.stage_strides.len(),
                self.stage_kernels.len()
            )));
        }
        if self.blocks_per_stage == 0
            || self.input_channels == 0
            || self.num_classes < 2
            || self.stage_widths.contains(&0)
            || self.stage_strides.contains(&0)
            || self.stage_kernels.contains(&0)
        {
            return Err(invalid("zero-sized component".into()));
        }
        let depth = self.total_depth();
        if self.insertion_layer < 1 || self.insertion_layer >= depth {
            return Err(invalid(format!(
                "insertion layer {} must satisfy 1 <= l < {depth}",
                self.insertion_layer
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::with_capacity(self.total_depth());
        let mut in_channels = self.input_channels;
        for s in 0..self.stage_widths.len() {
            for b in 0..self.blocks_per_stage {
                let kernel = self.stage_kernels[s];
                out.push(LayerSpec {
                    in_channels,
                    out_channels: self.stage_widths[s],
                    kernel,
                    stride: if b == 0 { self.stage_strides[s] } else { 1 },
                    pad: (kernel - 1) / 2,
                });
                in_channels = self.stage_widths[s];
            }
        }
        out
    }

    /// Per-sample `C×H×W` after `layer` conv layers for an `height×width` input.
    pub fn feature_shape(&self, layer: usize, height: usize, width: usize) -> Result<[usize; 3]> {
        let mut shape = [self.input_channels, height, width];
        for spec in self.layers().iter().take(layer) {
            let out = |x: usize| -> Result<usize> {
                if x + 2 * spec.pad < spec.kernel {
                    return Err(TensorError::Invalid {
                        op: "feature_shape",
                        detail: format!("spatial extent {x} too small for kernel {}", spec.kernel),
                    });
                }
                Ok((x + 2 * spec.pad - spec.kernel) / spec.stride + 1)
            };
            shape = [spec.out_channels, out(shape[1])?, out(shape[2])?];
        }
        Ok(shape)
    }

    pub fn final_channels(&self) -> usize {
        *self.stage_widths.last().expect("validated")
    }
}

/// Named parameter tensors: `conv{i}.weight`, `conv{i}.bias`, `fc.weight`, `fc.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    entries: Vec<(String, Tensor)>,
}

impl Parameters {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Differentiable leaves for one training step.
    pub fn attach<'g>(&self, g: &'g Graph) -> ParamVars<'g> {
        ParamVars {
            vars: self.entries.iter().map(|(_, t)| g.param(t.clone())).collect(),
        }
    }

    /// Constant leaves for inference.
    pub fn attach_frozen<'g>(&self, g: &'g Graph) -> ParamVars<'g> {
        ParamVars {
            vars: self.entries.iter().map(|(_, t)| g.constant(t.clone())).collect(),
        }
    }

    /// Checks that every tensor matches the shape `cfg` prescribes.
    pub fn check_against(&self, cfg: &BackboneConfig) -> Result<()> {
        let expected = parameter_shapes(cfg);
        if expected.len() != self.entries.len() {
            return Err(TensorError::Invalid {
                op: "parameters",
                detail: format!("expected {} tensors, got {}", expected.len(), self.entries.len()),
            });
        }
        for ((name, shape), (have_name, t)) in expected.iter().zip(&self.entries) {
            if name != have_name || shape.as_slice() != t.shape() {
                return Err(TensorError::Invalid {
                    op: "parameters",
                    detail: format!("{have_name} {:?} does not match {name} {shape:?}", t.shape()),
                });
            }
        }
        Ok(())
    }
}

/// Graph handles in the same order as [`Parameters::entries`].
#[derive(Debug, Clone)]
pub struct ParamVars<'g> {
    pub vars: Vec<Var<'g>>,
}

impl<'g> ParamVars<'g> {
    fn conv(&self, layer: usize) -> (Var<'g>, Var<'g>) {
        (self.vars[2 * layer], self.vars[2 * layer + 1])
    }

    fn head(&self) -> (Var<'g>, Var<'g>) {
        let n = self.vars.len();
        (self.vars[n - 2], self.vars[n - 1])
    }
}

fn parameter_shapes(cfg: &BackboneConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (i, l) in cfg.layers().iter().enumerate() {
        out.push((
            format!("conv{i}.weight"),
            vec![l.out_channels, l.in_channels, l.kernel, l.kernel],
        ));
        out.push((format!("conv{i}.bias"), vec![l.out_channels]));
    }
    out.push(("fc.weight".into(), vec![cfg.final_channels(), cfg.num_classes]));
    out.push(("fc.bias".into(), vec![cfg.num_classes]));
    out
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
pub fn init_parameters(cfg: &BackboneConfig, rng: &mut SeededRng) -> Result<Parameters> {
    cfg.validate()?;
    let entries = parameter_shapes(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = if shape.len() == 4 {
                    shape[1..].iter().product()
                } else {
                    shape[0]
                };
                let std = (2.0 / fan_in as f64).sqrt();
                Tensor::from_fn(&shape, |_| std * rng.normal())
            };
            (name, t)
        })
        .collect();
    Ok(Parameters { entries })
}

fn run_layers<'g>(
    mut x: Var<'g>,
    params: &ParamVars<'g>,
    cfg: &BackboneConfig,
    range: std::ops::Range<usize>,
) -> Result<Var<'g>> {
    let layers = cfg.layers();
    for i in range {
        let spec = layers[i];
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != spec.in_channels {
            return Err(TensorError::ShapeMismatch {
                op: "backbone",
                lhs: shape,
                rhs: vec![spec.out_channels, spec.in_channels, spec.kernel, spec.kernel],
            });
        }
        let (w, b) = params.conv(i);
        x = x.conv2d(w, spec.stride, spec.pad)?.add_channel_bias(b)?.relu()?;
    }
    Ok(x)
}

/// Features `r = f^l(x)` at the insertion layer.
pub fn forward_to_layer<'g>(x: Var<'g>, params: &ParamVars<'g>, cfg: &BackboneConfig) -> Result<Var<'g>> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != cfg.input_channels {
        return Err(TensorError::ShapeMismatch {
            op: "forward_to_layer",
            lhs: shape,
            rhs: vec![cfg.input_channels],
        });
    }
    cfg.feature_shape(cfg.total_depth(), shape[2], shape[3])?;
    run_layers(x, params, cfg, 0..cfg.insertion_layer)
}

/// Remaining layers from the insertion point to `f^L`.
pub fn forward_from_layer<'g>(r: Var<'g>, params: &ParamVars<'g>, cfg: &BackboneConfig) -> Result<Var<'g>> {
    run_layers(r, params, cfg, cfg.insertion_layer..cfg.total_depth())
}

/// Global average pool followed by the linear head.
pub fn classify<'g>(features: Var<'g>, params: &ParamVars<'g>) -> Result<Var<'g>> {
    let (w, b) = params.head();
    let pooled = features.global_avg_pool()?;
    pooled.linear(w, b)
}

pub fn forward<'g>(x: Var<'g>, params: &ParamVars<'g>, cfg: &BackboneConfig) -> Result<Var<'g>> {
    let r = forward_to_layer(x, params, cfg)?;
    let features = forward_from_layer(r, params, cfg)?;
    classify(features, params)
}
