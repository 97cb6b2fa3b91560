//! Forward and backward passes of the shared-encoder network.

use super::autograd::{Tape, Var};
use super::{patchify, LossBreakdown, MaeError, Mask, ModelConfig, ModelParams};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Regression branch only (inference); the mask is ignored.
    RegressionOnly,
    /// Regression branch on all tokens plus the SSAT branch on kept tokens.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// De-standardized prediction in months.
    pub prediction_months: f64,
    /// Raw network output (standardized units).
    pub prediction_std: f64,
    /// `[N_tok, p²]` decoder output, Joint mode only.
    pub reconstruction: Option<DenseTensor<f64>>,
    /// Squared regression error in standardized units, when a label is given.
    pub l_reg: Option<f64>,
    /// Full breakdown, Joint mode with a label only.
    pub loss: Option<LossBreakdown>,
}

/// One training example with a fixed mask.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub image: &'a DenseTensor<f64>,
    pub label_months: f64,
    pub mask: Mask,
}

/// Gradients share the parameter store's names and shapes.
pub type Gradients = ModelParams;

/// Mean squared error over the `masked` rows of two `[N, P]` patch matrices.
pub fn masked_mse(pred: &DenseTensor<f64>, target: &DenseTensor<f64>, masked: &[usize]) -> f64 {
    if masked.is_empty() {
        return 0.0;
    }
    let p = pred.dims()[1];
    let mut s = 0.0;
    for &t in masked {
        for j in 0..p {
            let e = pred.data()[t * p + j] - target.data()[t * p + j];
            s += e * e;
        }
    }
    s / (masked.len() * p) as f64
}

struct Net<'a> {
    cfg: &'a ModelConfig,
    params: &'a ModelParams,
    tape: Tape,
    cache: Vec<Option<Var>>,
}

struct Outputs {
    pred: Var,
    l_reg: Option<Var>,
    recon: Option<Var>,
    l_ssat: Option<Var>,
}

impl<'a> Net<'a> {
    fn new(cfg: &'a ModelConfig, params: &'a ModelParams) -> Self {
        Self { cfg, params, tape: Tape::new(), cache: vec![None; params.len()] }
    }

    fn p(&mut self, name: &str) -> Var {
        let i = self.params.index_of(name).unwrap_or_else(|| panic!("layout lacks {name}"));
        if let Some(v) = self.cache[i] {
            return v;
        }
        let e = &self.params.entries()[i];
        let (r, c) = (e.tensor.dims()[0], e.tensor.dims()[1]);
        let data = e.tensor.data().to_vec();
        let v = if e.trainable { self.tape.param(i, r, c, data) } else { self.tape.leaf(r, c, data) };
        self.cache[i] = Some(v);
        v
    }

    fn linear(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.p(&format!("{prefix}.weight"));
        let b = self.p(&format!("{prefix}.bias"));
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.p(&format!("{prefix}.gamma"));
        let b = self.p(&format!("{prefix}.beta"));
        self.tape.layer_norm(x, g, b)
    }

    /// Pre-norm transformer block: `x + MHSA(LN(x))`, then `x + MLP(LN(x))`.
    fn block(&mut self, x: Var, prefix: &str, dim: usize, heads: usize) -> Var {
        let h = self.norm(x, &format!("{prefix}.norm1"));
        let qkv = self.linear(h, &format!("{prefix}.attn.qkv"));
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let q = self.tape.slice_cols(qkv, hd * dh, dh);
            let k = self.tape.slice_cols(qkv, dim + hd * dh, dh);
            let v = self.tape.slice_cols(qkv, 2 * dim + hd * dh, dh);
            let s = self.tape.matmul_nt(q, k);
            let s = self.tape.scale(s, scale);
            let a = self.tape.softmax_rows(s);
            outs.push(self.tape.matmul(a, v));
        }
        let o = if heads == 1 { outs[0] } else { self.tape.concat_cols(&outs) };
        let o = self.linear(o, &format!("{prefix}.attn.proj"));
        let x = self.tape.add(x, o);
        let h = self.norm(x, &format!("{prefix}.norm2"));
        let h = self.linear(h, &format!("{prefix}.mlp.fc1"));
        let h = self.tape.gelu(h);
        let h = self.linear(h, &format!("{prefix}.mlp.fc2"));
        self.tape.add(x, h)
    }

    /// Encoder over the given tokens; row 0 of the result is the regression
    /// token, row `1 + i` is `tokens[i]`.
    fn encode(&mut self, patches: Var, tokens: &[usize]) -> Var {
        let sel: Vec<(Var, usize)> = tokens.iter().map(|&t| (patches, t)).collect();
        let mut x = self.p("reg_token");
        if !sel.is_empty() {
            let xp = self.tape.gather_rows(&sel);
            let emb = self.linear(xp, "patch_embed");
            let pos = self.p("enc.pos");
            let psel: Vec<(Var, usize)> = tokens.iter().map(|&t| (pos, t)).collect();
            let pos = self.tape.gather_rows(&psel);
            let emb = self.tape.add(emb, pos);
            let mut rows = vec![(x, 0)];
            rows.extend((0..tokens.len()).map(|i| (emb, i)));
            x = self.tape.gather_rows(&rows);
        }
        for b in 0..self.cfg.enc_blocks {
            x = self.block(x, &format!("enc.blocks.{b}"), self.cfg.enc_dim, self.cfg.enc_heads);
        }
        self.norm(x, "enc.norm")
    }

    fn run(
        &mut self,
        img: &DenseTensor<f64>,
        target: &DenseTensor<f64>,
        mask: &Mask,
        mode: ForwardMode,
        label_std: Option<f64>,
    ) -> Result<Outputs, MaeError> {
        let n = self.cfg.n_tokens();
        let pl = self.cfg.patch_len();
        let patches = patchify(img, self.cfg.patch)?;
        let px = self.tape.leaf(n, pl, patches.data().to_vec());

        // regression branch: all tokens
        let all: Vec<usize> = (0..n).collect();
        let enc = self.encode(px, &all);
        let r = self.tape.gather_rows(&[(enc, 0)]);
        let pred = self.linear(r, "reg_head");
        let l_reg = label_std.map(|y| {
            let yv = self.tape.leaf(1, 1, vec![y]);
            let e = self.tape.sub(pred, yv);
            self.tape.mean_sq(e)
        });
        if mode == ForwardMode::RegressionOnly {
            return Ok(Outputs { pred, l_reg, recon: None, l_ssat: None });
        }

        // SSAT branch: kept tokens through the same encoder weights
        let enc = self.encode(px, &mask.kept);
        let e = self.linear(enc, "dec.embed");
        let mt = self.p("mask_token");
        let mut slot = vec![None; n];
        for (i, &t) in mask.kept.iter().enumerate() {
            slot[t] = Some(1 + i);
        }
        let mut rows = vec![(e, 0)];
        rows.extend(slot.iter().map(|s| match s {
            Some(r) => (e, *r),
            None => (mt, 0),
        }));
        let x = self.tape.gather_rows(&rows);
        let zero = self.tape.leaf(1, self.cfg.dec_dim, vec![0.0; self.cfg.dec_dim]);
        let pos = self.p("dec.pos");
        let mut prow = vec![(zero, 0)];
        prow.extend((0..n).map(|t| (pos, t)));
        let pos = self.tape.gather_rows(&prow);
        let mut x = self.tape.add(x, pos);
        for b in 0..self.cfg.dec_blocks {
            x = self.block(x, &format!("dec.blocks.{b}"), self.cfg.dec_dim, self.cfg.dec_heads);
        }
        let x = self.norm(x, "dec.norm");
        let body: Vec<(Var, usize)> = (1..=n).map(|t| (x, t)).collect();
        let x = self.tape.gather_rows(&body);
        let recon = self.linear(x, "dec.head");
        let l_ssat = if mask.masked.is_empty() {
            None
        } else {
            let sel: Vec<(Var, usize)> = mask.masked.iter().map(|&t| (recon, t)).collect();
            let pm = self.tape.gather_rows(&sel);
            let tp = patchify(target, self.cfg.patch)?;
            let tx = self.tape.leaf(n, pl, tp.data().to_vec());
            let tsel: Vec<(Var, usize)> = mask.masked.iter().map(|&t| (tx, t)).collect();
            let tm = self.tape.gather_rows(&tsel);
            let d = self.tape.sub(pm, tm);
            Some(self.tape.mean_sq(d))
        };
        Ok(Outputs { pred, l_reg, recon: Some(recon), l_ssat })
    }

    fn check_finite(&self) -> Result<(), MaeError> {
        if let Some((node, op)) = self.tape.first_non_finite() {
            let param = self
                .params
                .first_non_finite()
                .map(str::to_string)
                .unwrap_or_else(|| "none (activation overflow with finite parameters)".into());
            return Err(MaeError::NonFiniteActivation { node, op, param });
        }
        Ok(())
    }
}

fn check_inputs(params: &ModelParams, cfg: &ModelConfig, img: &DenseTensor<f64>, mask: &Mask) -> Result<(), MaeError> {
    if let Some(name) = params.first_non_finite() {
        return Err(MaeError::NonFiniteParam(name.to_string()));
    }
    if img.dims() != cfg.img_size {
        return Err(MaeError::ImageSize { got: img.dims().to_vec(), expected: cfg.img_size });
    }
    let n = cfg.n_tokens();
    if mask.kept.len() + mask.masked.len() != n || mask.kept.iter().chain(&mask.masked).any(|&t| t >= n) {
        return Err(MaeError::BadConfig(format!("mask does not partition {n} tokens")));
    }
    Ok(())
}

fn standardize(cfg: &ModelConfig, months: f64) -> f64 {
    (months - cfg.label_mean) / cfg.label_std
}

/// Forward pass. The SSAT target is the input image itself.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    img: &DenseTensor<f64>,
    mask: &Mask,
    mode: ForwardMode,
    label_months: Option<f64>,
) -> Result<ForwardOutput, MaeError> {
    forward_with_target(params, cfg, img, img, mask, mode, label_months)
}

/// Forward pass reconstructing towards an explicit `target` image.
pub fn forward_with_target(
    params: &ModelParams,
    cfg: &ModelConfig,
    img: &DenseTensor<f64>,
    target: &DenseTensor<f64>,
    mask: &Mask,
    mode: ForwardMode,
    label_months: Option<f64>,
) -> Result<ForwardOutput, MaeError> {
    if target.dims() != img.dims() {
        return Err(MaeError::ImageSize { got: target.dims().to_vec(), expected: cfg.img_size });
    }
    let full;
    let mask = if mode == ForwardMode::RegressionOnly {
        full = Mask::none(cfg.n_tokens());
        &full
    } else {
        mask
    };
    check_inputs(params, cfg, img, mask)?;
    let mut net = Net::new(cfg, params);
    let out = net.run(img, target, mask, mode, label_months.map(|y| standardize(cfg, y)))?;
    net.check_finite()?;
    let t = &net.tape;
    let prediction_std = t.value(out.pred)[0];
    let l_reg = out.l_reg.map(|v| t.value(v)[0]);
    let reconstruction =
        out.recon.map(|v| DenseTensor::matrix(cfg.n_tokens(), cfg.patch_len(), t.value(v).to_vec())).transpose()?;
    let loss = match (mode, l_reg) {
        (ForwardMode::Joint, Some(lr)) => {
            let ls = out.l_ssat.map_or(0.0, |v| t.value(v)[0]);
            Some(LossBreakdown::new(cfg.alpha, lr, ls, mask.masked.len()))
        }
        _ => None,
    };
    Ok(ForwardOutput {
        prediction_months: prediction_std * cfg.label_std + cfg.label_mean,
        prediction_std,
        reconstruction,
        l_reg,
        loss,
    })
}

/// Regression-only prediction in months.
pub fn predict_image(params: &ModelParams, cfg: &ModelConfig, img: &DenseTensor<f64>) -> Result<f64, MaeError> {
    Ok(forward(params, cfg, img, &Mask::none(cfg.n_tokens()), ForwardMode::RegressionOnly, None)?.prediction_months)
}

/// Exact gradients of the mean batch loss. In Joint mode the loss is
/// `α·mean(l_reg) + (1−α)·mean(l_ssat)`; in RegressionOnly mode it is
/// `mean(l_reg)`.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[BatchItem<'_>],
    mode: ForwardMode,
) -> Result<(Gradients, LossBreakdown), MaeError> {
    if batch.is_empty() {
        return Err(MaeError::EmptyTrainSet);
    }
    let b = batch.len() as f64;
    let mut grads = params.zeros_like();
    let (mut sum_reg, mut sum_ssat, mut masked) = (0.0, 0.0, 0usize);
    for item in batch {
        let mask = match mode {
            ForwardMode::Joint => item.mask.clone(),
            ForwardMode::RegressionOnly => Mask::none(cfg.n_tokens()),
        };
        check_inputs(params, cfg, item.image, &mask)?;
        let mut net = Net::new(cfg, params);
        let out = net.run(item.image, item.image, &mask, mode, Some(standardize(cfg, item.label_months)))?;
        net.check_finite()?;
        let l_reg = out.l_reg.expect("label supplied");
        let mut seeds = Vec::with_capacity(2);
        match mode {
            ForwardMode::Joint => {
                seeds.push((l_reg, cfg.alpha / b));
                if let Some(ls) = out.l_ssat {
                    seeds.push((ls, (1.0 - cfg.alpha) / b));
                    sum_ssat += net.tape.value(ls)[0];
                }
                masked += mask.masked.len();
            }
            ForwardMode::RegressionOnly => seeds.push((l_reg, 1.0 / b)),
        }
        sum_reg += net.tape.value(l_reg)[0];
        let g = net.tape.backward(&seeds);
        for (i, gi) in net.tape.param_grads(&g) {
            for (a, v) in grads.data_mut(i).iter_mut().zip(gi) {
                *a += v;
            }
        }
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(MaeError::NonFiniteParam(format!("gradient of {name}")));
    }
    let (l_reg, l_ssat) = (sum_reg / b, sum_ssat / b);
    let loss = match mode {
        ForwardMode::Joint => LossBreakdown::new(cfg.alpha, l_reg, l_ssat, masked),
        ForwardMode::RegressionOnly => LossBreakdown { total: l_reg, l_reg, l_ssat: 0.0, masked_patch_count: 0 },
    };
    Ok((grads, loss))
}
