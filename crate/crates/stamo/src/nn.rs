//! Neural-network building blocks on top of [`crate::tensor`]: parameter
//! storage, initializers, linear/attention/transformer layers, and a
//! decoupled-weight-decay Adam optimizer with cosine learning-rate decay.

use crate::tensor::{ParamId, Real, Tape, TensorRef};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// A named parameter matrix. `trainable == false` marks frozen weights.
pub struct Param<T: Real> {
    pub name: String,
    pub value: Arc<Array2<T>>,
    pub trainable: bool,
}

/// Flat registry of model parameters; layers hold [`ParamId`]s into it.
pub struct ParamStore<T: Real> {
    params: Vec<Param<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Array2<T>, trainable: bool) -> ParamId {
        self.params.push(Param {
            name: name.to_string(),
            value: Arc::new(value),
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Put a parameter onto a tape. Trainable parameters become gradient
    /// leaves; frozen ones enter as constants.
    pub fn leaf(&self, tape: &mut Tape<T>, id: ParamId) -> TensorRef {
        let p = &self.params[id.0];
        let tag = if p.trainable { Some(id) } else { None };
        tape.shared(Arc::clone(&p.value), tag)
    }

    /// FNV-1a hash over the little-endian f64 encoding of selected params.
    /// Used to verify that frozen weights never move.
    pub fn content_hash<F: Fn(&Param<T>) -> bool>(&self, select: F) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in self.params.iter().filter(|p| select(p)) {
            for b in p.name.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
            }
            for v in p.value.iter() {
                for b in v.to_f64_().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Truncated-normal-ish init: normal(0, std) resampled into [-2std, 2std].
pub fn init_normal<T: Real>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    std: f64,
) -> Array2<T> {
    let mut out = Array2::zeros((rows, cols));
    for v in out.iter_mut() {
        let mut draw: f64 = StandardNormal.sample(rng);
        while draw.abs() > 2.0 {
            draw = StandardNormal.sample(rng);
        }
        *v = T::from_f64(draw * std);
    }
    out
}

pub fn init_uniform<T: Real>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    bound: f64,
) -> Array2<T> {
    let mut out = Array2::zeros((rows, cols));
    for v in out.iter_mut() {
        *v = T::from_f64(rng.random_range(-bound..bound));
    }
    out
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
        trainable: bool,
    ) -> Self {
        let std = (2.0 / (d_in + d_out) as f64).sqrt();
        let w = store.add(&format!("{name}.w"), init_normal(rng, d_in, d_out, std), trainable);
        let b = store.add(&format!("{name}.b"), Array2::zeros((1, d_out)), trainable);
        Linear { w, b: Some(b) }
    }

    /// Zero-initialized variant; used for output projections so a fresh
    /// model predicts zeros.
    pub fn new_zeros<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        trainable: bool,
    ) -> Self {
        let w = store.add(&format!("{name}.w"), Array2::zeros((d_in, d_out)), trainable);
        let b = store.add(&format!("{name}.b"), Array2::zeros((1, d_out)), trainable);
        Linear { w, b: Some(b) }
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: TensorRef,
    ) -> TensorRef {
        let w = store.leaf(tape, self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let bias = store.leaf(tape, b);
                tape.add_row(y, bias)
            }
            None => y,
        }
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        trainable: bool,
    ) -> Self {
        let gain = store.add(&format!("{name}.g"), Array2::from_elem((1, width), T::one()), trainable);
        let bias = store.add(&format!("{name}.b"), Array2::zeros((1, width)), trainable);
        LayerNorm { gain, bias }
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: TensorRef,
    ) -> TensorRef {
        let n = tape.layer_norm_rows(x, T::from_f64(1e-5));
        let g = store.leaf(tape, self.gain);
        let b = store.leaf(tape, self.bias);
        let scaled = tape.mul_row(n, g);
        tape.add_row(scaled, b)
    }
}

/// Multi-head scaled-dot-product attention. Queries come from `x`; keys and
/// values from `ctx` (pass the same tensor for self-attention).
#[derive(Clone)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub width: usize,
}

impl Attention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
        trainable: bool,
    ) -> Self {
        assert!(width % heads == 0, "attention width must divide heads");
        Attention {
            wq: Linear::new(store, &format!("{name}.q"), width, width, rng, trainable),
            wk: Linear::new(store, &format!("{name}.k"), width, width, rng, trainable),
            wv: Linear::new(store, &format!("{name}.v"), width, width, rng, trainable),
            wo: Linear::new(store, &format!("{name}.o"), width, width, rng, trainable),
            heads,
            width,
        }
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: TensorRef,
        ctx: TensorRef,
    ) -> TensorRef {
        let q = self.wq.forward(store, tape, x);
        let k = self.wk.forward(store, tape, ctx);
        let v = self.wv.forward(store, tape, ctx);
        let dh = self.width / self.heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, lo, hi);
            let kh = tape.slice_cols(k, lo, hi);
            let vh = tape.slice_cols(v, lo, hi);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled);
            head_outs.push(tape.matmul(attn, vh));
        }
        // Heads are re-joined by stacking along rows then reshaping back;
        // equivalent to column concatenation for the later projection only
        // when done per-column, so concatenate columns via transpose trick.
        let merged = concat_cols(tape, &head_outs);
        self.wo.forward(store, tape, merged)
    }
}

/// Column concatenation built from transpose + row concat.
pub fn concat_cols<T: Real>(tape: &mut Tape<T>, parts: &[TensorRef]) -> TensorRef {
    if parts.len() == 1 {
        return parts[0];
    }
    let transposed: Vec<TensorRef> = parts.iter().map(|p| tape.transpose(*p)).collect();
    let stacked = tape.concat_rows(&transposed);
    tape.transpose(stacked)
}

/// Two-layer GELU MLP.
#[derive(Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
        trainable: bool,
    ) -> Self {
        Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), width, hidden, rng, trainable),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, width, rng, trainable),
        }
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: TensorRef,
    ) -> TensorRef {
        let h = self.fc1.forward(store, tape, x);
        let a = tape.gelu(h);
        self.fc2.forward(store, tape, a)
    }
}

/// Pre-norm transformer block: self-attention, optional cross-attention to a
/// conditioning sequence, then an MLP; residuals around each.
#[derive(Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub cross: Option<(LayerNorm, Attention)>,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        mlp_ratio: usize,
        with_cross: bool,
        rng: &mut ChaCha8Rng,
        trainable: bool,
    ) -> Self {
        Block {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), width, trainable),
            attn: Attention::new(store, &format!("{name}.attn"), width, heads, rng, trainable),
            cross: if with_cross {
                Some((
                    LayerNorm::new(store, &format!("{name}.lnc"), width, trainable),
                    Attention::new(store, &format!("{name}.xattn"), width, heads, rng, trainable),
                ))
            } else {
                None
            },
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), width, trainable),
            mlp: Mlp::new(store, &format!("{name}.mlp"), width, width * mlp_ratio, rng, trainable),
        }
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: TensorRef,
        cond: Option<TensorRef>,
    ) -> TensorRef {
        let n1 = self.ln1.forward(store, tape, x);
        let sa = self.attn.forward(store, tape, n1, n1);
        let mut h = tape.add(x, sa);
        if let Some((lnc, xattn)) = &self.cross {
            let cond = cond.expect("cross block requires conditioning tokens");
            let nc = lnc.forward(store, tape, h);
            let ca = xattn.forward(store, tape, nc, cond);
            h = tape.add(h, ca);
        }
        let n2 = self.ln2.forward(store, tape, h);
        let ff = self.mlp.forward(store, tape, n2);
        tape.add(h, ff)
    }
}

/// Sinusoidal embedding of a scalar in [0, 1], `width` features.
pub fn sinusoidal_embedding<T: Real>(t: f64, width: usize) -> Array2<T> {
    let half = width / 2;
    let mut out = Array2::zeros((1, width));
    for i in 0..half {
        let freq = 10_000f64.powf(-(i as f64) / half as f64);
        let angle = t * freq * 1000.0;
        out[[0, i]] = T::from_f64(angle.sin());
        out[[0, half + i]] = T::from_f64(angle.cos());
    }
    out
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay.
pub struct AdamW<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Option<Array2<T>>>,
    v: Vec<Option<Array2<T>>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. `lr` overrides the stored base rate (schedulers pass
    /// the decayed value each step). Frozen params are never touched.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &crate::tensor::Gradients<T>,
        lr: f64,
    ) {
        self.step += 1;
        if self.m.len() < store.len() {
            self.m.resize_with(store.len(), || None);
            self.v.resize_with(store.len(), || None);
        }
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let eps = T::from_f64(self.eps);
        let step_size = T::from_f64(lr / bc1);
        let bc2_sqrt_inv = T::from_f64(1.0 / bc2.sqrt());
        let decay = T::from_f64(lr * self.weight_decay);

        for (id, g) in grads.iter() {
            if !store.param(id).trainable {
                continue;
            }
            let shape = store.value(id).dim();
            let m = self.m[id.0].get_or_insert_with(|| Array2::zeros(shape));
            let v = self.v[id.0].get_or_insert_with(|| Array2::zeros(shape));
            m.zip_mut_with(g, |mv, &gv| *mv = b1 * *mv + (one - b1) * gv);
            v.zip_mut_with(g, |vv, &gv| *vv = b2 * *vv + (one - b2) * gv * gv);
            let p = store.value_mut(id);
            ndarray::Zip::from(&mut *p).and(&*m).and(&*v).for_each(|pv, &mv, &vv| {
                let denom = (vv.sqrt() * bc2_sqrt_inv) + eps;
                *pv = *pv - step_size * (mv / denom) - decay * *pv;
            });
        }
    }
}

/// Cosine decay from `base_lr` to `min_lr` over `total_steps`, with an
/// optional linear warmup.
#[derive(Debug, Clone)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let t = (step - self.warmup_steps) as f64;
        let total = (self.total_steps.saturating_sub(self.warmup_steps)).max(1) as f64;
        let frac = (t / total).min(1.0);
        self.min_lr
            + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}
