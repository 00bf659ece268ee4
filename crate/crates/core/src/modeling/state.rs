use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mat;

/// Attention key/value cache of a causal decoder: one `t x 2d` matrix per
/// layer holding `[keys | values]` for the `t` positions consumed so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenState {
    layers: Vec<Mat>,
}

/// An additive change to a [`HiddenState`], shaped exactly like it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    layers: Vec<Mat>,
}

fn check_uniform(layers: &[Mat]) -> Result<()> {
    let Some(first) = layers.first() else {
        return Err(Error::Shape("a hidden state needs at least one layer".into()));
    };
    if layers.iter().any(|m| m.shape() != first.shape()) || first.cols() % 2 != 0 {
        return Err(Error::Shape("hidden-state layers must share one t x 2d shape".into()));
    }
    Ok(())
}

impl HiddenState {
    pub fn from_layers(layers: Vec<Mat>) -> Result<Self> {
        check_uniform(&layers)?;
        Ok(HiddenState { layers })
    }

    /// State of `layers` layers with no positions yet.
    pub fn empty(layers: usize, d_model: usize) -> Self {
        HiddenState {
            layers: vec![Mat::zeros(0, 2 * d_model); layers],
        }
    }

    pub fn layers(&self) -> &[Mat] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn add(&self, delta: &Perturbation) -> Result<HiddenState> {
        if delta.layers.len() != self.layers.len() || delta.layers[0].shape() != self.layers[0].shape() {
            return Err(Error::Shape(format!(
                "perturbation {}x{:?} does not match state {}x{:?}",
                delta.layers.len(),
                delta.layers[0].shape(),
                self.layers.len(),
                self.layers[0].shape()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(&delta.layers)
            .map(|(h, d)| {
                let mut s = h.clone();
                s.add_assign(d);
                s
            })
            .collect();
        Ok(HiddenState { layers })
    }

    pub fn layer_norms(&self) -> Vec<f32> {
        self.layers.iter().map(Mat::frobenius_norm).collect()
    }

    /// Appends one position per layer (`rows[l]` is `1 x 2d`).
    pub fn push(&self, rows: &[Mat]) -> Result<HiddenState> {
        if rows.len() != self.layers.len() {
            return Err(Error::Shape("one new row per layer expected".into()));
        }
        let layers = self
            .layers
            .iter()
            .zip(rows)
            .map(|(h, r)| Mat::vstack(&[h, r]))
            .collect();
        Ok(HiddenState { layers })
    }
}

impl Perturbation {
    pub fn zeros_like(state: &HiddenState) -> Self {
        Perturbation {
            layers: state.layers.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Mat>) -> Result<Self> {
        check_uniform(&layers)?;
        Ok(Perturbation { layers })
    }

    /// Full-size perturbation whose last `window.rows()` positions per layer
    /// come from `window`; earlier positions are zero.
    pub fn from_window(state: &HiddenState, window: &[Mat]) -> Result<Self> {
        let t = state.len();
        let layers = window
            .iter()
            .map(|w| {
                if w.rows() > t || w.cols() != state.width() {
                    return Err(Error::Shape("window larger than the state".into()));
                }
                Ok(Mat::vstack(&[&Mat::zeros(t - w.rows(), w.cols()), w]))
            })
            .collect::<Result<Vec<_>>>()?;
        if layers.len() != state.num_layers() {
            return Err(Error::Shape("one window matrix per layer expected".into()));
        }
        Ok(Perturbation { layers })
    }

    pub fn layers(&self) -> &[Mat] {
        &self.layers
    }

    pub fn layer_norms(&self) -> Vec<f32> {
        self.layers.iter().map(Mat::frobenius_norm).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(Mat::all_finite)
    }
}
