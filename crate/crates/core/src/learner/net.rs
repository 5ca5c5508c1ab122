//! Parameter layout, forward pass and analytic backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Pooled,
    BiRecurrent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub buckets: usize,
    pub dim: usize,
    pub hidden: usize,
    pub encoder: EncoderKind,
    pub head_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Gru {
    wz: usize,
    wr: usize,
    wn: usize,
    uz: usize,
    ur: usize,
    un: usize,
    bz: usize,
    br: usize,
    bn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Enc {
    Pooled { wh: usize, bh: usize },
    Gru([Gru; 2]),
}

/// Offsets of every parameter block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub dims: Dims,
    enc: Enc,
    heads: Vec<(usize, usize)>,
    pub total: usize,
}

impl Layout {
    pub fn new(dims: Dims) -> Self {
        let (b, d, h) = (dims.buckets, dims.dim, dims.hidden);
        let mut at = b * d;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let enc = match dims.encoder {
            EncoderKind::Pooled => Enc::Pooled {
                wh: take(h * d),
                bh: take(h),
            },
            EncoderKind::BiRecurrent => {
                let mut dir = || Gru {
                    wz: take(h * d),
                    wr: take(h * d),
                    wn: take(h * d),
                    uz: take(h * h),
                    ur: take(h * h),
                    un: take(h * h),
                    bz: take(h),
                    br: take(h),
                    bn: take(h),
                };
                let f = dir();
                Enc::Gru([f, dir()])
            }
        };
        let feat = Self::feature_width(&dims);
        let heads = dims.head_sizes.iter().map(|&k| (take(k * feat), take(k))).collect();
        Layout {
            dims,
            enc,
            heads,
            total: at,
        }
    }

    fn feature_width(dims: &Dims) -> usize {
        match dims.encoder {
            EncoderKind::Pooled => dims.hidden,
            EncoderKind::BiRecurrent => 2 * dims.hidden,
        }
    }

    pub fn feature(&self) -> usize {
        Self::feature_width(&self.dims)
    }

    /// Size of the embedding block, which starts at offset 0.
    pub fn embedding_len(&self) -> usize {
        self.dims.buckets * self.dims.dim
    }

    /// Embeddings start at zero (so untouched buckets stay zero); weight
    /// matrices are Xavier-uniform, biases zero.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        let (d, h, f) = (self.dims.dim, self.dims.hidden, self.feature());
        let mut fill = |p: &mut Vec<f64>, at: usize, rows: usize, cols: usize| {
            let lim = (6.0 / (rows + cols) as f64).sqrt();
            for v in &mut p[at..at + rows * cols] {
                *v = rng.gen_range(-lim..lim);
            }
        };
        match &self.enc {
            Enc::Pooled { wh, .. } => fill(&mut p, *wh, h, d),
            Enc::Gru(dirs) => {
                for g in dirs {
                    for w in [g.wz, g.wr, g.wn] {
                        fill(&mut p, w, h, d);
                    }
                    for u in [g.uz, g.ur, g.un] {
                        fill(&mut p, u, h, h);
                    }
                }
            }
        }
        for (&(w, _), &k) in self.heads.iter().zip(&self.dims.head_sizes) {
            fill(&mut p, w, k, f);
        }
        p
    }
}

/// y += W x for a row-major `rows × cols` block.
fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        y[r] += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// y += Wᵀ g.
fn matvec_t_add(w: &[f64], rows: usize, cols: usize, g: &[f64], y: &mut [f64]) {
    for r in 0..rows {
        if g[r] == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (yc, a) in y.iter_mut().zip(row) {
            *yc += a * g[r];
        }
    }
}

/// dW += g ⊗ x.
fn outer_add(dw: &mut [f64], rows: usize, cols: usize, g: &[f64], x: &[f64]) {
    for r in 0..rows {
        if g[r] == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, xv) in row.iter_mut().zip(x) {
            *d += g[r] * xv;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

struct Step {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    unh: Vec<f64>,
}

enum EncCache {
    Pooled { xbar: Vec<f64>, z: Vec<f64> },
    Gru([Vec<Step>; 2]),
}

pub struct Cache {
    xs: Vec<Vec<f64>>,
    enc: EncCache,
    feat: Vec<f64>,
    pub logits: Vec<Vec<f64>>,
}

/// Token vector: mean of the token's bucket rows.
fn token_vec(p: &[f64], d: usize, buckets: &[usize]) -> Vec<f64> {
    let mut x = vec![0.0; d];
    if buckets.is_empty() {
        return x;
    }
    for &b in buckets {
        for (xi, e) in x.iter_mut().zip(&p[b * d..(b + 1) * d]) {
            *xi += e;
        }
    }
    let inv = 1.0 / buckets.len() as f64;
    x.iter_mut().for_each(|v| *v *= inv);
    x
}

pub fn embed(layout: &Layout, p: &[f64], tokens: &[Vec<usize>]) -> Vec<Vec<f64>> {
    tokens.iter().map(|t| token_vec(p, layout.dims.dim, t)).collect()
}

fn gru_scan(g: &Gru, p: &[f64], d: usize, h: usize, xs: &[&Vec<f64>]) -> (Vec<f64>, Vec<Step>) {
    let mut state = vec![0.0; h];
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let mut az = p[g.bz..g.bz + h].to_vec();
        let mut ar = p[g.br..g.br + h].to_vec();
        let mut an = p[g.bn..g.bn + h].to_vec();
        matvec_add(&p[g.wz..], h, d, x, &mut az);
        matvec_add(&p[g.wr..], h, d, x, &mut ar);
        matvec_add(&p[g.wn..], h, d, x, &mut an);
        matvec_add(&p[g.uz..], h, h, &state, &mut az);
        matvec_add(&p[g.ur..], h, h, &state, &mut ar);
        let mut unh = vec![0.0; h];
        matvec_add(&p[g.un..], h, h, &state, &mut unh);
        let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();
        let r: Vec<f64> = ar.iter().map(|&a| sigmoid(a)).collect();
        let n: Vec<f64> = (0..h).map(|i| (an[i] + r[i] * unh[i]).tanh()).collect();
        let next: Vec<f64> = (0..h).map(|i| (1.0 - z[i]) * n[i] + z[i] * state[i]).collect();
        steps.push(Step {
            h_prev: std::mem::replace(&mut state, next),
            z,
            r,
            n,
            unh,
        });
    }
    (state, steps)
}

pub fn forward(layout: &Layout, p: &[f64], tokens: &[Vec<usize>]) -> Cache {
    let dims = &layout.dims;
    let (d, h) = (dims.dim, dims.hidden);
    let xs = embed(layout, p, tokens);
    let (enc, feat) = match &layout.enc {
        Enc::Pooled { wh, bh } => {
            let mut xbar = vec![0.0; d];
            for x in &xs {
                for (a, b) in xbar.iter_mut().zip(x) {
                    *a += b;
                }
            }
            if !xs.is_empty() {
                let inv = 1.0 / xs.len() as f64;
                xbar.iter_mut().for_each(|v| *v *= inv);
            }
            let mut a = p[*bh..*bh + h].to_vec();
            matvec_add(&p[*wh..], h, d, &xbar, &mut a);
            let z: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
            (EncCache::Pooled { xbar, z: z.clone() }, z)
        }
        Enc::Gru([fwd, bwd]) => {
            let order: Vec<&Vec<f64>> = xs.iter().collect();
            let rev: Vec<&Vec<f64>> = xs.iter().rev().collect();
            let (hf, sf) = gru_scan(fwd, p, d, h, &order);
            let (hb, sb) = gru_scan(bwd, p, d, h, &rev);
            let mut feat = hf;
            feat.extend(hb);
            (EncCache::Gru([sf, sb]), feat)
        }
    };
    let f = layout.feature();
    let logits = layout
        .heads
        .iter()
        .zip(&dims.head_sizes)
        .map(|(&(w, b), &k)| {
            let mut l = p[b..b + k].to_vec();
            matvec_add(&p[w..], k, f, &feat, &mut l);
            l
        })
        .collect();
    Cache {
        xs,
        enc,
        feat,
        logits,
    }
}

#[allow(clippy::too_many_arguments)]
fn gru_backward(
    g: &Gru,
    p: &[f64],
    grad: &mut [f64],
    d: usize,
    h: usize,
    xs: &[&Vec<f64>],
    steps: &[Step],
    dh_final: &[f64],
    dxs: &mut [&mut Vec<f64>],
) {
    let mut dh = dh_final.to_vec();
    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        let x = xs[t];
        let mut dh_prev: Vec<f64> = (0..h).map(|i| dh[i] * s.z[i]).collect();
        let mut dan = vec![0.0; h];
        let mut daz = vec![0.0; h];
        let mut dar = vec![0.0; h];
        let mut dunh = vec![0.0; h];
        for i in 0..h {
            let dn = dh[i] * (1.0 - s.z[i]);
            let dz = dh[i] * (s.h_prev[i] - s.n[i]);
            dan[i] = dn * (1.0 - s.n[i] * s.n[i]);
            let dr = dan[i] * s.unh[i];
            dunh[i] = dan[i] * s.r[i];
            daz[i] = dz * s.z[i] * (1.0 - s.z[i]);
            dar[i] = dr * s.r[i] * (1.0 - s.r[i]);
        }
        for (w, u, b, da) in [(g.wz, g.uz, g.bz, &daz), (g.wr, g.ur, g.br, &dar)] {
            outer_add(&mut grad[w..], h, d, da, x);
            outer_add(&mut grad[u..], h, h, da, &s.h_prev);
            for i in 0..h {
                grad[b + i] += da[i];
            }
            matvec_t_add(&p[w..], h, d, da, &mut dxs[t][..]);
            matvec_t_add(&p[u..], h, h, da, &mut dh_prev);
        }
        outer_add(&mut grad[g.wn..], h, d, &dan, x);
        for i in 0..h {
            grad[g.bn + i] += dan[i];
        }
        matvec_t_add(&p[g.wn..], h, d, &dan, &mut dxs[t][..]);
        outer_add(&mut grad[g.un..], h, h, &dunh, &s.h_prev);
        matvec_t_add(&p[g.un..], h, h, &dunh, &mut dh_prev);
        dh = dh_prev;
    }
}

/// Accumulate gradients of a loss with logit gradients `dlogits` into `grad`.
pub fn backward(
    layout: &Layout,
    p: &[f64],
    tokens: &[Vec<usize>],
    cache: &Cache,
    dlogits: &[Vec<f64>],
    grad: &mut [f64],
) {
    let dims = &layout.dims;
    let (d, h, f) = (dims.dim, dims.hidden, layout.feature());
    let mut dfeat = vec![0.0; f];
    for ((&(w, b), &k), dl) in layout.heads.iter().zip(&dims.head_sizes).zip(dlogits) {
        outer_add(&mut grad[w..], k, f, dl, &cache.feat);
        for i in 0..k {
            grad[b + i] += dl[i];
        }
        matvec_t_add(&p[w..], k, f, dl, &mut dfeat);
    }
    let mut dxs: Vec<Vec<f64>> = vec![vec![0.0; d]; cache.xs.len()];
    match (&layout.enc, &cache.enc) {
        (Enc::Pooled { wh, bh }, EncCache::Pooled { xbar, z }) => {
            let da: Vec<f64> = (0..h).map(|i| dfeat[i] * (1.0 - z[i] * z[i])).collect();
            outer_add(&mut grad[*wh..], h, d, &da, xbar);
            for i in 0..h {
                grad[bh + i] += da[i];
            }
            let mut dxbar = vec![0.0; d];
            matvec_t_add(&p[*wh..], h, d, &da, &mut dxbar);
            let inv = 1.0 / cache.xs.len().max(1) as f64;
            for dx in &mut dxs {
                for (a, b) in dx.iter_mut().zip(&dxbar) {
                    *a = b * inv;
                }
            }
        }
        (Enc::Gru([fwd, bwd]), EncCache::Gru([sf, sb])) => {
            let order: Vec<&Vec<f64>> = cache.xs.iter().collect();
            let rev: Vec<&Vec<f64>> = cache.xs.iter().rev().collect();
            {
                let mut refs: Vec<&mut Vec<f64>> = dxs.iter_mut().collect();
                gru_backward(fwd, p, grad, d, h, &order, sf, &dfeat[..h], &mut refs);
            }
            let mut refs: Vec<&mut Vec<f64>> = dxs.iter_mut().rev().collect();
            gru_backward(bwd, p, grad, d, h, &rev, sb, &dfeat[h..], &mut refs);
        }
        _ => unreachable!("cache built by this layout"),
    }
    for (t, dx) in tokens.iter().zip(&dxs) {
        if t.is_empty() {
            continue;
        }
        let inv = 1.0 / t.len() as f64;
        for &bkt in t {
            for (g, v) in grad[bkt * d..(bkt + 1) * d].iter_mut().zip(dx) {
                *g += v * inv;
            }
        }
    }
}

/// Summed cross-entropy over the trainable heads and the logit gradients.
/// Heads marked constant contribute neither loss nor gradient.
pub fn head_loss(logits: &[Vec<f64>], label: &[usize], constant: &[Option<usize>]) -> (f64, Vec<Vec<f64>>) {
    let mut loss = 0.0;
    let grads = logits
        .iter()
        .enumerate()
        .map(|(k, l)| {
            if constant[k].is_some() {
                return vec![0.0; l.len()];
            }
            let mut p = softmax(l);
            loss -= p[label[k]].max(f64::MIN_POSITIVE).ln();
            p[label[k]] -= 1.0;
            p
        })
        .collect();
    (loss, grads)
}
