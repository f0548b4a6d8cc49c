//! Residual cosine/Euclidean autoencoder.
//!
//! Six dense layers, `enc1 enc2 enc3 dec1 dec2 dec3`, with widths
//! `d→l→l→l→l→l→d`. Hidden layers use relu, the last decoder layer is linear.
//! Shortcut connections add a source layer's output to a later layer's
//! pre-activation; when the widths differ the shortcut carries a learned
//! projection matrix.
//!
//! The training objective for a batch of `n` columns is
//!
//! ```text
//! total = α · mean_j ‖x_j − x̂_j‖²
//!       − β · mean_j (x_j · x̂_j) / (‖x_j‖ ‖x̂_j‖)
//!       + λ · Σ_enc ‖W‖₁
//! ```
//!
//! Columns whose input or reconstruction has (near) zero norm contribute
//! nothing to the cosine term and mark the loss as degenerate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{dense_backward, DenseLayer, LayerCache};
use crate::optim::Parameterized;
use crate::scalar::Scalar;
use crate::tensor::{dot, Activation, Mat};

/// Norm floor below which the cosine term is skipped for a column.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerId {
    Enc1,
    Enc2,
    Enc3,
    Dec1,
    Dec2,
    Dec3,
}

impl LayerId {
    pub const ALL: [LayerId; 6] = [
        LayerId::Enc1,
        LayerId::Enc2,
        LayerId::Enc3,
        LayerId::Dec1,
        LayerId::Dec2,
        LayerId::Dec3,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_encoder(self) -> bool {
        self.index() < 3
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerId::Enc1 => "enc1",
            LayerId::Enc2 => "enc2",
            LayerId::Enc3 => "enc3",
            LayerId::Dec1 => "dec1",
            LayerId::Dec2 => "dec2",
            LayerId::Dec3 => "dec3",
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown layer id `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipKind {
    /// Between alternate layers, overlapping one another.
    Cross,
    /// Encoder layer to its mirror decoder layer.
    Symmetric,
}

/// Shortcut topology without weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SkipPair {
    pub src: LayerId,
    pub dst: LayerId,
    pub kind: SkipKind,
}

impl SkipPair {
    pub const fn new(src: LayerId, dst: LayerId, kind: SkipKind) -> Self {
        SkipPair { src, dst, kind }
    }
}

impl fmt::Display for SkipPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src, self.dst)
    }
}

/// The three cross and three symmetric shortcuts of the reference architecture.
pub const DEFAULT_SKIPS: [SkipPair; 6] = [
    SkipPair::new(LayerId::Enc1, LayerId::Enc3, SkipKind::Cross),
    SkipPair::new(LayerId::Enc2, LayerId::Dec1, SkipKind::Cross),
    SkipPair::new(LayerId::Enc3, LayerId::Dec2, SkipKind::Cross),
    SkipPair::new(LayerId::Enc1, LayerId::Dec3, SkipKind::Symmetric),
    SkipPair::new(LayerId::Enc2, LayerId::Dec2, SkipKind::Symmetric),
    SkipPair::new(LayerId::Enc3, LayerId::Dec1, SkipKind::Symmetric),
];

/// Named subsets of [`DEFAULT_SKIPS`], for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipPreset {
    #[default]
    All,
    Cross,
    Symmetric,
    None,
}

impl SkipPreset {
    pub fn pairs(self) -> Vec<SkipPair> {
        DEFAULT_SKIPS
            .into_iter()
            .filter(|p| match self {
                SkipPreset::All => true,
                SkipPreset::Cross => p.kind == SkipKind::Cross,
                SkipPreset::Symmetric => p.kind == SkipKind::Symmetric,
                SkipPreset::None => false,
            })
            .collect()
    }
}

impl FromStr for SkipPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SkipPreset::All),
            "cross" => Ok(SkipPreset::Cross),
            "symmetric" => Ok(SkipPreset::Symmetric),
            "none" => Ok(SkipPreset::None),
            _ => Err(Error::Usage(format!("unknown skip preset `{s}`; expected all, cross, symmetric or none"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkipSpec<T> {
    pub src: LayerId,
    pub dst: LayerId,
    pub kind: SkipKind,
    /// `dst_out × src_out`, present iff the widths differ.
    pub projection: Option<Mat<T>>,
}

impl<T> SkipSpec<T> {
    pub fn pair(&self) -> SkipPair {
        SkipPair::new(self.src, self.dst, self.kind)
    }
}

/// Weights of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeanParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for CodeanParams {
    fn default() -> Self {
        CodeanParams {
            alpha: 1.0,
            beta: 1.0,
            lambda: 0.01,
        }
    }
}

impl CodeanParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.lambda];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        if self.alpha + self.beta <= 0.0 {
            return Err(Error::Config("alpha + beta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub euc: T,
    pub cos: T,
    pub reg: T,
    /// At least one column had a near-zero norm, so its cosine term was skipped.
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    /// One cache per layer, in `LayerId` order.
    pub caches: Vec<LayerCache<T>>,
}

impl<T> ForwardPass<T> {
    pub fn reconstruction(&self) -> &Mat<T> {
        &self.caches[LayerId::Dec3.index()].output
    }

    pub fn code(&self) -> &Mat<T> {
        &self.caches[LayerId::Enc3.index()].output
    }
}

#[derive(Clone, Debug)]
pub struct NetGrads<T> {
    /// `(weight, bias)` gradient per layer.
    pub layers: Vec<(Mat<T>, Mat<T>)>,
    /// Gradient per skip, `None` for identity shortcuts.
    pub projections: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> NetGrads<T> {
    /// Gradients in the same order as [`Parameterized::params`].
    pub fn as_slices(&self) -> Vec<&Mat<T>> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + self.projections.len());
        for (w, b) in &self.layers {
            out.push(w);
            out.push(b);
        }
        out.extend(self.projections.iter().flatten());
        out
    }
}

/// Switches for [`RCodeanNet::backward_with`].
#[derive(Clone, Copy, Debug, Default)]
pub struct BackwardOptions {
    /// Omit the cosine term from the gradient (mutation sentinel for the gradient checker).
    pub drop_cosine: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RCodeanNet<T> {
    layers: Vec<DenseLayer<T>>,
    skips: Vec<SkipSpec<T>>,
    pub params: CodeanParams,
}

impl<T: Scalar> RCodeanNet<T> {
    /// Randomly initialised network; projections use the same Glorot range as layers.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        params: CodeanParams,
        skips: &[SkipPair],
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("input and hidden dimensions must be positive".into()));
        }
        let layers = LayerId::ALL
            .iter()
            .map(|&id| {
                let (i, o) = layer_dims(id, input_dim, hidden_dim);
                DenseLayer::new(i, o, layer_activation(id), rng)
            })
            .collect::<Vec<_>>();
        let skips = skips
            .iter()
            .map(|p| {
                let src_out = layers[p.src.index()].out_dim();
                let dst_out = layers[p.dst.index()].out_dim();
                let projection = (src_out != dst_out).then(|| {
                    let limit = (6.0 / (src_out + dst_out) as f64).sqrt();
                    Mat::random_uniform(dst_out, src_out, limit, rng)
                });
                SkipSpec {
                    src: p.src,
                    dst: p.dst,
                    kind: p.kind,
                    projection,
                }
            })
            .collect();
        Self::from_parts(layers, skips, params)
    }

    /// Network with every weight, bias and projection zero.
    pub fn zeros(input_dim: usize, hidden_dim: usize, params: CodeanParams, skips: &[SkipPair]) -> Result<Self> {
        let layers = LayerId::ALL
            .iter()
            .map(|&id| {
                let (i, o) = layer_dims(id, input_dim, hidden_dim);
                DenseLayer::zeros(i, o, layer_activation(id))
            })
            .collect::<Vec<_>>();
        let skips = skips
            .iter()
            .map(|p| {
                let src_out = layers[p.src.index()].out_dim();
                let dst_out = layers[p.dst.index()].out_dim();
                SkipSpec {
                    src: p.src,
                    dst: p.dst,
                    kind: p.kind,
                    projection: (src_out != dst_out).then(|| Mat::zeros(dst_out, src_out)),
                }
            })
            .collect();
        Self::from_parts(layers, skips, params)
    }

    pub fn from_parts(layers: Vec<DenseLayer<T>>, skips: Vec<SkipSpec<T>>, params: CodeanParams) -> Result<Self> {
        params.validate()?;
        if layers.len() != 6 {
            return Err(Error::Config(format!("expected 6 layers, got {}", layers.len())));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Config(format!(
                    "layer widths do not chain: {}→{} then {}→{}",
                    w[0].in_dim(),
                    w[0].out_dim(),
                    w[1].in_dim(),
                    w[1].out_dim()
                )));
            }
        }
        if layers[0].in_dim() != layers[5].out_dim() {
            return Err(Error::Config("decoder output width must equal input width".into()));
        }
        let l = layers[0].out_dim();
        if layers[..5].iter().any(|layer| layer.out_dim() != l) {
            return Err(Error::Config("all hidden layers must share one width".into()));
        }
        for s in &skips {
            if s.src >= s.dst {
                return Err(Error::Config(format!("skip {} must go forward through the stack", s.pair())));
            }
            let src_out = layers[s.src.index()].out_dim();
            let dst_out = layers[s.dst.index()].out_dim();
            match &s.projection {
                None if src_out != dst_out => {
                    return Err(Error::Config(format!(
                        "skip {} joins width {src_out} to {dst_out} and needs a projection",
                        s.pair()
                    )))
                }
                Some(_) if src_out == dst_out => {
                    return Err(Error::Config(format!("skip {} has equal widths and takes no projection", s.pair())))
                }
                Some(p) if p.shape() != (dst_out, src_out) => {
                    return Err(Error::Config(format!(
                        "skip {} projection is {:?}, expected {:?}",
                        s.pair(),
                        p.shape(),
                        (dst_out, src_out)
                    )))
                }
                _ => {}
            }
        }
        Ok(RCodeanNet { layers, skips, params })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].out_dim()
    }

    pub fn layer(&self, id: LayerId) -> &DenseLayer<T> {
        &self.layers[id.index()]
    }

    pub fn layer_mut(&mut self, id: LayerId) -> &mut DenseLayer<T> {
        &mut self.layers[id.index()]
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn skips(&self) -> &[SkipSpec<T>] {
        &self.skips
    }

    pub fn skips_mut(&mut self) -> &mut [SkipSpec<T>] {
        &mut self.skips
    }

    pub fn skip_pairs(&self) -> Vec<SkipPair> {
        self.skips.iter().map(SkipSpec::pair).collect()
    }

    /// Same layers, no shortcut connections.
    pub fn without_skips(&self) -> Self {
        RCodeanNet {
            layers: self.layers.clone(),
            skips: Vec::new(),
            params: self.params,
        }
    }

    fn skip_input(&self, dst: LayerId, caches: &[LayerCache<T>]) -> Result<Option<Mat<T>>> {
        let mut acc: Option<Mat<T>> = None;
        for s in self.skips.iter().filter(|s| s.dst == dst) {
            let src_out = &caches[s.src.index()].output;
            let contrib = match &s.projection {
                Some(p) => p.matmul(src_out).map_err(|e| e.within(format!("skip {}", s.pair())))?,
                None => src_out.clone(),
            };
            match acc.as_mut() {
                Some(a) => a.add_assign(&contrib).map_err(|e| e.within(format!("skip {}", s.pair())))?,
                None => acc = Some(contrib),
            }
        }
        Ok(acc)
    }

    fn forward_layers(&self, x: &Mat<T>, count: usize) -> Result<Vec<LayerCache<T>>> {
        if x.rows() != self.input_dim() {
            return Err(Error::shape("R-Codean input", (self.input_dim(), x.cols()), x.shape()));
        }
        let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(count);
        for &id in &LayerId::ALL[..count] {
            let skip = self.skip_input(id, &caches)?;
            let input = caches.last().map_or(x, |c| &c.output);
            let cache = self.layers[id.index()]
                .forward(input, skip.as_ref())
                .map_err(|e| e.within(id))?;
            caches.push(cache);
        }
        Ok(caches)
    }

    pub fn forward(&self, x: &Mat<T>) -> Result<ForwardPass<T>> {
        Ok(ForwardPass {
            caches: self.forward_layers(x, 6)?,
        })
    }

    /// The enc3 output, including its incoming shortcut contributions.
    pub fn encode(&self, x: &Mat<T>) -> Result<Mat<T>> {
        let mut caches = self.forward_layers(x, 3)?;
        Ok(caches.pop().expect("three encoder caches").output)
    }

    pub fn reconstruct(&self, x: &Mat<T>) -> Result<Mat<T>> {
        Ok(self.forward(x)?.reconstruction().clone())
    }

    /// Σ ‖W‖₁ over the encoder weight matrices.
    pub fn l1_penalty(&self) -> T {
        self.layers[..3].iter().map(|l| l.weight.norms().l1).sum()
    }

    pub fn loss(&self, x: &Mat<T>, reconstruction: &Mat<T>) -> Result<LossBreakdown<T>> {
        Ok(self.loss_terms(x, reconstruction, false)?.0)
    }

    /// Loss and ∂loss/∂reconstruction (the regulariser is handled separately).
    fn loss_terms(&self, x: &Mat<T>, recon: &Mat<T>, want_grad: bool) -> Result<(LossBreakdown<T>, Option<Mat<T>>, Option<Mat<T>>)> {
        if x.shape() != recon.shape() {
            return Err(Error::shape("codean loss", x.shape(), recon.shape()));
        }
        let (d, n) = x.shape();
        let inv_n = T::one() / T::lit(n as f64);
        let eps = T::lit(COSINE_EPS);
        let mut euc = T::zero();
        let mut cos = T::zero();
        let mut degenerate = false;
        let mut g_euc = want_grad.then(|| Mat::zeros(d, n));
        let mut g_cos = want_grad.then(|| Mat::zeros(d, n));
        let two = T::lit(2.0);
        for j in 0..n {
            let xc = x.col(j);
            let rc = recon.col(j);
            let mut sq = T::zero();
            for (&a, &b) in xc.iter().zip(&rc) {
                sq += (a - b) * (a - b);
            }
            euc += sq;
            let nx = dot(&xc, &xc).sqrt();
            let nr = dot(&rc, &rc).sqrt();
            let skip_cos = nx < eps || nr < eps;
            degenerate |= skip_cos;
            let xr = dot(&xc, &rc);
            if !skip_cos {
                cos -= xr / (nx * nr);
            }
            if let (Some(ge), Some(gc)) = (g_euc.as_mut(), g_cos.as_mut()) {
                for i in 0..d {
                    ge.set(i, j, two * (rc[i] - xc[i]) * inv_n);
                    if !skip_cos {
                        let g = -xc[i] / (nx * nr) + xr * rc[i] / (nx * nr * nr * nr);
                        gc.set(i, j, g * inv_n);
                    }
                }
            }
        }
        euc = euc * inv_n;
        cos = cos * inv_n;
        let reg = self.l1_penalty();
        let p = self.params;
        let mut total = T::lit(p.alpha) * euc + T::lit(p.lambda) * reg;
        if p.beta != 0.0 {
            total += T::lit(p.beta) * cos;
        }
        Ok((
            LossBreakdown {
                total,
                euc,
                cos,
                reg,
                degenerate,
            },
            g_euc,
            g_cos,
        ))
    }

    pub fn backward(&self, x: &Mat<T>, pass: &ForwardPass<T>) -> Result<NetGrads<T>> {
        self.backward_with(x, pass, BackwardOptions::default())
    }

    pub fn backward_with(&self, x: &Mat<T>, pass: &ForwardPass<T>, opts: BackwardOptions) -> Result<NetGrads<T>> {
        if pass.caches.len() != 6 || pass.caches[0].input.shape() != x.shape() {
            return Err(Error::Training("forward caches do not match this input".into()));
        }
        let (_, g_euc, g_cos) = self.loss_terms(x, pass.reconstruction(), true)?;
        let p = self.params;
        let mut grad_recon = g_euc.expect("gradient requested").scale(T::lit(p.alpha));
        if !opts.drop_cosine && p.beta != 0.0 {
            grad_recon.add_assign(&g_cos.expect("gradient requested").scale(T::lit(p.beta)))?;
        }

        let mut upstream: Vec<Option<Mat<T>>> = vec![None; 6];
        upstream[5] = Some(grad_recon);
        let mut layer_grads: Vec<Option<(Mat<T>, Mat<T>)>> = vec![None; 6];
        let mut proj_grads: Vec<Option<Mat<T>>> = vec![None; self.skips.len()];

        for &id in LayerId::ALL.iter().rev() {
            let i = id.index();
            let cache = &pass.caches[i];
            let g_out = upstream[i]
                .take()
                .unwrap_or_else(|| Mat::zeros(cache.output.rows(), cache.output.cols()));
            let g = dense_backward(&self.layers[i], cache, &g_out).map_err(|e| {
                Error::Training(format!("stale cache at {id}: {e}"))
            })?;
            for (k, s) in self.skips.iter().enumerate().filter(|(_, s)| s.dst == id) {
                let src_out = &pass.caches[s.src.index()].output;
                let to_src = match &s.projection {
                    Some(proj) => {
                        proj_grads[k] = Some(g.grad_skip.matmul_nt(src_out)?);
                        proj.matmul_tn(&g.grad_skip)?
                    }
                    None => g.grad_skip.clone(),
                };
                accumulate(&mut upstream[s.src.index()], to_src)?;
            }
            if i > 0 {
                accumulate(&mut upstream[i - 1], g.grad_in)?;
            }
            let mut gw = g.grad_weight;
            if id.is_encoder() && p.lambda != 0.0 {
                let lam = T::lit(p.lambda);
                for (gv, &wv) in gw.data_mut().iter_mut().zip(self.layers[i].weight.data()) {
                    *gv += lam * sign(wv);
                }
            }
            layer_grads[i] = Some((gw, g.grad_bias));
        }

        Ok(NetGrads {
            layers: layer_grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
            projections: proj_grads,
        })
    }

    /// Forward, loss and gradients in one call.
    pub fn loss_and_grads(&self, x: &Mat<T>) -> Result<(LossBreakdown<T>, NetGrads<T>)> {
        let pass = self.forward(x)?;
        let loss = self.loss(x, pass.reconstruction())?;
        let grads = self.backward(x, &pass)?;
        Ok((loss, grads))
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Mat<T>>, g: Mat<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[inline]
fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn layer_dims(id: LayerId, d: usize, l: usize) -> (usize, usize) {
    match id {
        LayerId::Enc1 => (d, l),
        LayerId::Dec3 => (l, d),
        _ => (l, l),
    }
}

fn layer_activation(id: LayerId) -> Activation {
    match id {
        LayerId::Dec3 => Activation::Identity,
        _ => Activation::Relu,
    }
}

impl<T: Scalar> Parameterized<T> for RCodeanNet<T> {
    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for id in LayerId::ALL {
            names.push(format!("{id}.weight"));
            names.push(format!("{id}.bias"));
        }
        for s in self.skips.iter().filter(|s| s.projection.is_some()) {
            names.push(format!("skip[{}].projection", s.pair()));
        }
        names
    }

    fn params(&self) -> Vec<&Mat<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.extend(self.skips.iter().filter_map(|s| s.projection.as_ref()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.extend(self.skips.iter_mut().filter_map(|s| s.projection.as_mut()));
        out
    }
}
