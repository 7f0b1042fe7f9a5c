//! 64-bit forward pass with a tape, and the matching reverse pass.
//!
//! Mirrors `Model::forward` operation for operation so a trained student
//! behaves the same once rounded to f32.

use crate::error::{LabError, Result};
use crate::model::LAYER_NORM_EPS;

use super::loss::LossSpec;
use super::params::*;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// `y = x W^T + b` for `n` rows; `w` is `[out x inp]`.
fn linear(w: &[f64], b: &[f64], x: &[f64], n: usize, out: usize, inp: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * out];
    for r in 0..n {
        let xr = &x[r * inp..(r + 1) * inp];
        for o in 0..out {
            let wr = &w[o * inp..(o + 1) * inp];
            y[r * out + o] = wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() + b[o];
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
fn linear_back(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    n: usize,
    out: usize,
    inp: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; n * inp];
    let mut dw = vec![0.0; out * inp];
    let mut db = vec![0.0; out];
    for r in 0..n {
        let xr = &x[r * inp..(r + 1) * inp];
        let dxr = &mut dx[r * inp..(r + 1) * inp];
        for o in 0..out {
            let g = dy[r * out + o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wr = &w[o * inp..(o + 1) * inp];
            let dwr = &mut dw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    (dx, dw, db)
}

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    y: Vec<f64>,
}

fn layer_norm(g: &[f64], b: &[f64], x: &[f64], n: usize, d: usize) -> NormCache {
    let mut xhat = vec![0.0; n * d];
    let mut y = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for r in 0..n {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        rstd[r] = 1.0 / (var + LAYER_NORM_EPS as f64).sqrt();
        for i in 0..d {
            let h = (xr[i] - mean) * rstd[r];
            xhat[r * d + i] = h;
            y[r * d + i] = h * g[i] + b[i];
        }
    }
    NormCache { xhat, rstd, y }
}

/// Returns `(dx, dgain, dbias)`.
fn layer_norm_back(g: &[f64], c: &NormCache, dy: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; n * d];
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let xh = &c.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for i in 0..d {
            dx[r * d + i] = c.rstd[r] * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
    }
    (dx, dg, db)
}

struct LayerTape {
    ln1: NormCache,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head `[n x n]`, zero above the diagonal.
    attn: Vec<Vec<f64>>,
    ctx: Vec<f64>,
    ln2: NormCache,
    pre: Vec<f64>,
    act: Vec<f64>,
}

/// Activations of one forward pass.
pub struct Tape {
    tokens: Vec<u32>,
    layers: Vec<LayerTape>,
    ln_f: NormCache,
    /// `[n x vocab]`
    pub logits: Vec<f64>,
}

fn check_tokens(p: &Params, tokens: &[u32]) -> Result<()> {
    let c = &p.config;
    if tokens.is_empty() || tokens.len() > c.context_len {
        return Err(LabError::domain(format!(
            "sequence length {} outside 1..={}",
            tokens.len(),
            c.context_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
        return Err(LabError::domain(format!("token {bad} is outside the vocabulary")));
    }
    Ok(())
}

pub fn forward_tape(p: &Params, tokens: &[u32]) -> Result<Tape> {
    check_tokens(p, tokens)?;
    let c = &p.config;
    let (n, d, dff, dh) = (tokens.len(), c.d_model, c.d_ff, c.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let t = &p.tensors;

    let mut x = vec![0.0; n * d];
    for (r, &tok) in tokens.iter().enumerate() {
        let e = &t[WTE][tok as usize * d..(tok as usize + 1) * d];
        let pos = &t[WPE][r * d..(r + 1) * d];
        for i in 0..d {
            x[r * d + i] = e[i] + pos[i];
        }
    }

    let mut layers = Vec::with_capacity(c.n_layers);
    for l in 0..c.n_layers {
        let b = block_base(l);
        let ln1 = layer_norm(&t[b + LN1_G], &t[b + LN1_B], &x, n, d);
        let q = linear(&t[b + Q_W], &t[b + Q_W + 1], &ln1.y, n, d, d);
        let k = linear(&t[b + K_W], &t[b + K_W + 1], &ln1.y, n, d, d);
        let v = linear(&t[b + V_W], &t[b + V_W + 1], &ln1.y, n, d, d);
        let mut ctx = vec![0.0; n * d];
        let mut attn = Vec::with_capacity(c.n_heads);
        for h in 0..c.n_heads {
            let off = h * dh;
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + dh];
                let row = &mut a[i * n..i * n + i + 1];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + off..j * d + off + dh];
                    *s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                    max = max.max(*s);
                }
                let mut total = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                for s in row.iter_mut() {
                    *s /= total;
                }
                if p.head_mask[l][h] {
                    continue;
                }
                for (j, &w) in row.iter().enumerate() {
                    for e in 0..dh {
                        ctx[i * d + off + e] += w * v[j * d + off + e];
                    }
                }
            }
            attn.push(a);
        }
        let proj = linear(&t[b + O_W], &t[b + O_W + 1], &ctx, n, d, d);
        for (xi, pi) in x.iter_mut().zip(&proj) {
            *xi += pi;
        }
        let ln2 = layer_norm(&t[b + LN2_G], &t[b + LN2_B], &x, n, d);
        let pre = linear(&t[b + FF_IN_W], &t[b + FF_IN_W + 1], &ln2.y, n, dff, d);
        let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
        let out = linear(&t[b + FF_OUT_W], &t[b + FF_OUT_W + 1], &act, n, d, dff);
        for (xi, oi) in x.iter_mut().zip(&out) {
            *xi += oi;
        }
        layers.push(LayerTape {
            ln1,
            q,
            k,
            v,
            attn,
            ctx,
            ln2,
            pre,
            act,
        });
    }

    let f = ln_final(c);
    let ln_f = layer_norm(&t[f], &t[f + 1], &x, n, d);
    let zero_bias = vec![0.0; c.vocab_size];
    let logits = linear(&t[WTE], &zero_bias, &ln_f.y, n, c.vocab_size, d);
    Ok(Tape {
        tokens: tokens.to_vec(),
        layers,
        ln_f,
        logits,
    })
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient on the tape's logits.
pub fn backward_tape(p: &Params, tape: &Tape, dlogits: &[f64]) -> Result<Params> {
    let c = &p.config;
    let (n, d, dff, dh) = (tape.tokens.len(), c.d_model, c.d_ff, c.head_dim());
    if dlogits.len() != n * c.vocab_size {
        return Err(LabError::shape(format!(
            "{} logit gradients for {n} positions of width {}",
            dlogits.len(),
            c.vocab_size
        )));
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let t = &p.tensors;
    let mut g = p.zeros_like();

    let (dy, dwte_head, _) = linear_back(&t[WTE], &tape.ln_f.y, dlogits, n, c.vocab_size, d);
    let f = ln_final(c);
    let (mut dx, dg, db) = layer_norm_back(&t[f], &tape.ln_f, &dy, n, d);
    g.tensors[f] = dg;
    g.tensors[f + 1] = db;

    for l in (0..c.n_layers).rev() {
        let b = block_base(l);
        let lt = &tape.layers[l];

        let (dact, dw, db) = linear_back(&t[b + FF_OUT_W], &lt.act, &dx, n, d, dff);
        g.tensors[b + FF_OUT_W] = dw;
        g.tensors[b + FF_OUT_W + 1] = db;
        let dpre: Vec<f64> = dact.iter().zip(&lt.pre).map(|(g, &x)| g * gelu_grad(x)).collect();
        let (dln2, dw, db) = linear_back(&t[b + FF_IN_W], &lt.ln2.y, &dpre, n, dff, d);
        g.tensors[b + FF_IN_W] = dw;
        g.tensors[b + FF_IN_W + 1] = db;
        let (dmid, dg, db) = layer_norm_back(&t[b + LN2_G], &lt.ln2, &dln2, n, d);
        g.tensors[b + LN2_G] = dg;
        g.tensors[b + LN2_B] = db;
        for (a, m) in dx.iter_mut().zip(&dmid) {
            *a += m;
        }

        let (dctx, dw, db) = linear_back(&t[b + O_W], &lt.ctx, &dx, n, d, d);
        g.tensors[b + O_W] = dw;
        g.tensors[b + O_W + 1] = db;
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n];
        for h in 0..c.n_heads {
            if p.head_mask[l][h] {
                continue;
            }
            let off = h * dh;
            let a = &lt.attn[h];
            for i in 0..n {
                let dci = &dctx[i * d + off..i * d + off + dh];
                let row = &a[i * n..i * n + i + 1];
                for j in 0..=i {
                    let vj = &lt.v[j * d + off..j * d + off + dh];
                    da[j] = dci.iter().zip(vj).map(|(x, y)| x * y).sum();
                    for e in 0..dh {
                        dv[j * d + off + e] += row[j] * dci[e];
                    }
                }
                let dot: f64 = row.iter().zip(&da).map(|(x, y)| x * y).sum();
                for j in 0..=i {
                    let ds = row[j] * (da[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for e in 0..dh {
                        dq[i * d + off + e] += ds * lt.k[j * d + off + e];
                        dk[j * d + off + e] += ds * lt.q[i * d + off + e];
                    }
                }
            }
        }
        let mut dln1 = vec![0.0; n * d];
        for (slot, grad) in [(Q_W, &dq), (K_W, &dk), (V_W, &dv)] {
            let (dxi, dw, db) = linear_back(&t[b + slot], &lt.ln1.y, grad, n, d, d);
            g.tensors[b + slot] = dw;
            g.tensors[b + slot + 1] = db;
            for (a, v) in dln1.iter_mut().zip(&dxi) {
                *a += v;
            }
        }
        let (din, dg, db) = layer_norm_back(&t[b + LN1_G], &lt.ln1, &dln1, n, d);
        g.tensors[b + LN1_G] = dg;
        g.tensors[b + LN1_B] = db;
        for (a, v) in dx.iter_mut().zip(&din) {
            *a += v;
        }
    }

    let mut dwte = dwte_head;
    for (r, &tok) in tape.tokens.iter().enumerate() {
        let tok = tok as usize;
        for i in 0..d {
            dwte[tok * d + i] += dx[r * d + i];
            g.tensors[WPE][r * d + i] += dx[r * d + i];
        }
    }
    g.tensors[WTE] = dwte;
    Ok(g)
}

/// Logits of `tokens` under `p`.
pub fn forward_logits(p: &Params, tokens: &[u32]) -> Result<Vec<f64>> {
    Ok(forward_tape(p, tokens)?.logits)
}

/// One training example: input tokens, next-token targets and, for
/// distillation losses, the teacher's logits on the same input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub targets: Vec<u32>,
    pub teacher_logits: Option<Vec<f64>>,
}

/// Mean loss over `batch` and its gradient.
pub fn backward(p: &Params, batch: &[Example], spec: &LossSpec) -> Result<(f64, Params)> {
    spec.validate()?;
    if batch.is_empty() {
        return Err(LabError::domain("empty batch"));
    }
    let mut total = 0.0;
    let mut grads = p.zeros_like();
    let w = 1.0 / batch.len() as f64;
    for ex in batch {
        let tape = forward_tape(p, &ex.tokens)?;
        let (loss, mut dlogits) =
            spec.evaluate(&tape.logits, ex.teacher_logits.as_deref(), &ex.targets, p.config.vocab_size)?;
        total += w * loss;
        dlogits.iter_mut().for_each(|v| *v *= w);
        let g = backward_tape(p, &tape, &dlogits)?;
        for (acc, t) in grads.tensors.iter_mut().zip(&g.tensors) {
            for (a, v) in acc.iter_mut().zip(t) {
                *a += v;
            }
        }
    }
    Ok((total, grads))
}

/// Mean loss over `batch` without gradients.
pub fn batch_loss(p: &Params, batch: &[Example], spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    if batch.is_empty() {
        return Err(LabError::domain("empty batch"));
    }
    let mut total = 0.0;
    for ex in batch {
        let logits = forward_logits(p, &ex.tokens)?;
        let (loss, _) = spec.evaluate(&logits, ex.teacher_logits.as_deref(), &ex.targets, p.config.vocab_size)?;
        total += loss / batch.len() as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::loss::Objective;
    use crate::model::{Model, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 12,
            vocab_size: 11,
            context_len: 7,
        }
    }

    #[test]
    fn matches_f32_forward() {
        let mut m = Model::init(cfg(), 9).unwrap();
        m.head_mask[1][0] = true;
        let tokens = [3, 1, 4, 1, 5, 9];
        let p = Params::from_model(&m);
        let ours = forward_logits(&p, &tokens).unwrap();
        let theirs = m.forward(&tokens).unwrap().logits;
        for (a, b) in ours.iter().zip(&theirs.data) {
            assert!((a - *b as f64).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn identical_teacher_gives_zero_gradient() {
        let p = Params::from_model(&Model::init(cfg(), 2).unwrap());
        let tokens = vec![1, 2, 3, 4];
        let teacher = forward_logits(&p, &tokens).unwrap();
        let ex = Example {
            tokens,
            targets: vec![2, 3, 4, 5],
            teacher_logits: Some(teacher),
        };
        for objective in [
            Objective::ForwardKld { temperature: 2.0 },
            Objective::ReverseKld { temperature: 1.0 },
        ] {
            let spec = LossSpec {
                objective,
                ce_mix_lambda: 0.0,
            };
            let (loss, g) = backward(&p, std::slice::from_ref(&ex), &spec).unwrap();
            assert!(loss.abs() < 1e-12);
            assert!(g.flatten().iter().all(|v| v.abs() <= 1e-8));
        }
    }

    #[test]
    fn gelu_derivative() {
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
