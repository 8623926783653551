use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Fc,
}

/// Geometry of one edge layer as seen by the optimizer's state vector.
///
/// Fully-connected layers report kernel, stride and feature size 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerMeta {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub feat: usize,
    pub w_count: usize,
}

impl LayerMeta {
    pub fn as_features(&self) -> [f64; 6] {
        [
            self.c_in as f64,
            self.c_out as f64,
            self.kernel as f64,
            self.stride as f64,
            self.feat as f64,
            self.w_count as f64,
        ]
    }
}

/// Shape of one input image (rows x cols x channels).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

/// A layer of edges with trainable weights, plus the ReLU and max-pool that
/// follow it.
///
/// Convolution weights are ordered output channel, input channel, kernel
/// row, kernel column; fully-connected weights output-major then input.
/// Convolutions are unpadded.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLayer {
    kind: LayerKind,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    feat: usize,
    relu: bool,
    pool: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl EdgeLayer {
    pub fn conv(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        feat: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 || kernel == 0 || stride == 0 {
            return Err(Error::param("conv layer dimensions must be positive"));
        }
        if kernel > feat {
            return Err(Error::param(format!(
                "kernel {kernel} larger than feature map {feat}"
            )));
        }
        Self::checked(
            LayerKind::Conv,
            c_in,
            c_out,
            kernel,
            stride,
            feat,
            weights,
            bias,
        )
    }

    pub fn fc(c_in: usize, c_out: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if c_in == 0 || c_out == 0 {
            return Err(Error::param("fc layer dimensions must be positive"));
        }
        Self::checked(LayerKind::Fc, c_in, c_out, 1, 1, 1, weights, bias)
    }

    #[allow(clippy::too_many_arguments)]
    fn checked(
        kind: LayerKind,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        feat: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let expected = c_out * c_in * kernel * kernel;
        if weights.len() != expected {
            return Err(Error::shape(format!(
                "{kind:?} layer needs {expected} weights, got {}",
                weights.len()
            )));
        }
        if bias.len() != c_out {
            return Err(Error::shape(format!(
                "{kind:?} layer needs {c_out} biases, got {}",
                bias.len()
            )));
        }
        Ok(Self {
            kind,
            c_in,
            c_out,
            kernel,
            stride,
            feat,
            relu: false,
            pool: 1,
            weights,
            bias,
        })
    }

    pub fn with_relu(mut self, relu: bool) -> Self {
        self.relu = relu;
        self
    }

    /// Non-overlapping max-pool window applied after the activation; 1 disables it.
    pub fn with_pool(mut self, pool: usize) -> Self {
        self.pool = pool.max(1);
        self
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn feat(&self) -> usize {
        self.feat
    }

    pub fn relu(&self) -> bool {
        self.relu
    }

    pub fn pool(&self) -> usize {
        self.pool
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Spatial size of the convolution output before pooling.
    pub fn conv_out_size(&self) -> usize {
        (self.feat - self.kernel) / self.stride + 1
    }

    /// Spatial size after pooling (1 for fc layers).
    pub fn out_size(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.conv_out_size() / self.pool,
            LayerKind::Fc => 1,
        }
    }

    pub fn meta(&self) -> LayerMeta {
        LayerMeta {
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: self.kernel,
            stride: self.stride,
            feat: self.feat,
            w_count: self.weights.len(),
        }
    }
}

/// Feed-forward classifier made of [`EdgeLayer`]s. Immutable geometry;
/// weights may be swapped for decoded (possibly corrupted) values.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    input: InputShape,
    layers: Vec<EdgeLayer>,
    class_count: usize,
}

impl NetworkModel {
    pub fn new(input: InputShape, layers: Vec<EdgeLayer>, class_count: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("a model needs at least one edge layer"));
        }
        let mut channels = input.channels;
        let mut size = input.rows;
        let mut flat = false;
        if input.rows != input.cols {
            // fc-only models flatten any input; conv layers need square maps
            if layers[0].kind == LayerKind::Conv {
                return Err(Error::shape("convolutional input must be square"));
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            match layer.kind {
                LayerKind::Conv => {
                    if flat {
                        return Err(Error::shape(format!(
                            "layer {i}: convolution after a fully-connected layer"
                        )));
                    }
                    if layer.c_in != channels || layer.feat != size {
                        return Err(Error::shape(format!(
                            "layer {i}: expects {}x{}x{} input, previous layer yields {}x{}x{}",
                            layer.c_in, layer.feat, layer.feat, channels, size, size
                        )));
                    }
                    if layer.out_size() == 0 {
                        return Err(Error::shape(format!(
                            "layer {i}: pooling leaves an empty map"
                        )));
                    }
                    channels = layer.c_out;
                    size = layer.out_size();
                }
                LayerKind::Fc => {
                    let len = if i == 0 {
                        input.rows * input.cols * input.channels
                    } else {
                        channels * size * size
                    };
                    if layer.c_in != len {
                        return Err(Error::shape(format!(
                            "layer {i}: fc expects {} inputs, previous layer yields {len}",
                            layer.c_in
                        )));
                    }
                    if layer.pool != 1 {
                        return Err(Error::shape(format!("layer {i}: fc layers cannot pool")));
                    }
                    channels = layer.c_out;
                    size = 1;
                    flat = true;
                }
            }
        }
        if channels * size * size != class_count {
            return Err(Error::shape(format!(
                "last layer yields {} scores for {class_count} classes",
                channels * size * size
            )));
        }
        Ok(Self {
            input,
            layers,
            class_count,
        })
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn layers(&self) -> &[EdgeLayer] {
        &self.layers
    }

    /// Mutable access to the layers; geometry stays fixed, weights may change.
    pub fn layers_mut(&mut self) -> &mut [EdgeLayer] {
        &mut self.layers
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.weights.len()).collect()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// One [`LayerMeta`] per edge layer; independent of weight values.
    pub fn layer_metadata(&self) -> Vec<LayerMeta> {
        self.layers.iter().map(EdgeLayer::meta).collect()
    }
}
