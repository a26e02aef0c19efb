use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Backbone output for one image: `channels x height x width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    values: Vec<T>,
    channels: usize,
    height: usize,
    width: usize,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(values: Vec<T>, channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(shape_err("feature map", "C, H, W >= 1", format!("({channels}, {height}, {width})")));
        }
        if values.len() != channels * height * width {
            return Err(shape_err(
                "feature map",
                channels * height * width,
                values.len(),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            values,
            channels,
            height,
            width,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// `channels x positions` matrix.
    pub fn values(&self) -> &[T] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature<T>(pub Vec<T>);

/// Per-view spatial weights, `views x positions`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewAttention<T> {
    pub weights: Vec<T>,
    pub views: usize,
    pub height: usize,
    pub width: usize,
}

impl<T: Scalar> ViewAttention<T> {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn view(&self, k: usize) -> &[T] {
        let p = self.positions();
        &self.weights[k * p..(k + 1) * p]
    }
}

/// Concatenated view features `[a_1; ...; a_K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mediator<T> {
    pub concatenated: Vec<T>,
    pub views: usize,
    pub view_dim: usize,
}

impl<T: Scalar> Mediator<T> {
    pub fn from_views(views: &[Vec<T>]) -> Result<Self> {
        let view_dim = views.first().map_or(0, Vec::len);
        if views.is_empty() || view_dim == 0 {
            return Err(Error::Config("a mediator needs at least one non-empty view".into()));
        }
        if let Some(bad) = views.iter().find(|v| v.len() != view_dim) {
            return Err(shape_err("mediator view", view_dim, bad.len()));
        }
        Ok(Self {
            concatenated: views.concat(),
            views: views.len(),
            view_dim,
        })
    }

    pub fn view(&self, k: usize) -> &[T] {
        &self.concatenated[k * self.view_dim..(k + 1) * self.view_dim]
    }

    pub fn dim(&self) -> usize {
        self.concatenated.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedMediator<T>(pub Vec<T>);

#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T>(pub Vec<T>);

/// Architecture and prototype-correction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of attention view heads (`num_att`).
    pub num_views: usize,
    pub d_global: usize,
    pub d_view: usize,
    pub gamma_align: f64,
    pub gamma_contrast: f64,
    pub prototype_momentum: f64,
    pub num_classes: usize,
    /// First-stage channel count of the backbone; 64 gives the standard ResNet-18.
    pub backbone_width: usize,
    pub input_size: usize,
    pub enable_mvfe: bool,
    pub enable_pbc: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_views: 3,
            d_global: 256,
            d_view: 128,
            gamma_align: 0.5,
            gamma_contrast: 0.1,
            prototype_momentum: 0.9,
            num_classes: 2,
            backbone_width: 64,
            input_size: 128,
            enable_mvfe: true,
            enable_pbc: true,
        }
    }
}

impl ModelConfig {
    pub fn mediator_dim(&self) -> usize {
        self.num_views * self.d_view
    }

    pub fn head_input_dim(&self) -> usize {
        if self.enable_mvfe {
            self.d_global + self.mediator_dim()
        } else {
            self.d_global
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
            Ok(())
        };
        if self.num_views == 0 {
            return Err(Error::Config("model.num_views must be >= 1".into()));
        }
        if self.d_global == 0 || self.d_view == 0 {
            return Err(Error::Config("model.d_global and model.d_view must be >= 1".into()));
        }
        if self.num_classes != 2 {
            return Err(Error::Config(format!(
                "model.num_classes must be 2 (benign/malignant), got {}",
                self.num_classes
            )));
        }
        if self.backbone_width == 0 {
            return Err(Error::Config("model.backbone_width must be >= 1".into()));
        }
        if self.input_size < 32 {
            return Err(Error::Config("model.input_size must be >= 32".into()));
        }
        unit("model.gamma_align", self.gamma_align)?;
        unit("model.gamma_contrast", self.gamma_contrast)?;
        unit("model.prototype_momentum", self.prototype_momentum)?;
        if self.enable_pbc && !self.enable_mvfe {
            return Err(Error::Config("prototype correction requires the multi-view extractor".into()));
        }
        Ok(())
    }
}
