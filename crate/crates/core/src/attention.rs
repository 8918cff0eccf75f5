//! Reference single-head attention over video token grids.
//!
//! Four key patterns are supported: per-frame spatial, per-location
//! temporal, dense full, and masked full, where only masked (disoccluded)
//! query tokens see every token of every frame while the rest keep the
//! spatial pattern. Cost is counted as query-key dot products.
//!
//! Everything runs in `f64`; rows are evaluated in a fixed key order so a
//! masked-full pass with an empty or full mask reproduces the spatial or
//! full pass bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest token count accepted by the dense full pattern.
pub const MAX_DENSE_TOKENS: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("expected {expected} values for a {n}x{h}x{w}x{c} grid, got {got}")]
    Length {
        n: usize,
        h: usize,
        w: usize,
        c: usize,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("{tokens} tokens exceed the dense attention limit of {MAX_DENSE_TOKENS}")]
    TooLarge { tokens: usize },
    #[error("masked-full pattern requires a mask")]
    MissingMask,
}

/// `N x h x w` tokens of dimension `c`; token `(f, r, k)` lives at index
/// `f * h * w + r * w + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    data: Vec<f64>,
}

impl TokenGrid {
    pub fn new(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self, AttentionError> {
        let expected = n * h * w * c;
        if data.len() != expected {
            return Err(AttentionError::Length {
                n,
                h,
                w,
                c,
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(AttentionError::NonFinite(i));
        }
        Ok(Self { n, h, w, c, data })
    }

    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn tokens(&self) -> usize {
        self.n * self.h * self.w
    }

    #[inline]
    pub fn index(&self, frame: usize, row: usize, col: usize) -> usize {
        frame * self.h * self.w + row * self.w + col
    }

    #[inline]
    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn same_layout(&self, other: &TokenGrid) -> bool {
        (self.n, self.h, self.w, self.c) == (other.n, other.h, other.w, other.c)
    }
}

/// Row-major `c x c` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    pub dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, AttentionError> {
        if data.len() != dim * dim {
            return Err(AttentionError::Shape(format!(
                "{} values for a {dim}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `y = M x`.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.dim..(r + 1) * self.dim];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// Projections `q = W_q x`, `k = W_k x`, `v = W_v x`; scores are scaled by
/// `1 / sqrt(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: SquareMatrix,
    pub wk: SquareMatrix,
    pub wv: SquareMatrix,
}

impl AttentionParams {
    pub fn new(wq: SquareMatrix, wk: SquareMatrix, wv: SquareMatrix) -> Result<Self, AttentionError> {
        if wq.dim != wk.dim || wk.dim != wv.dim {
            return Err(AttentionError::Shape(format!(
                "projection sizes {}, {}, {} differ",
                wq.dim, wk.dim, wv.dim
            )));
        }
        Ok(Self { wq, wk, wv })
    }

    pub fn dim(&self) -> usize {
        self.wq.dim
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.dim() as f64).sqrt()
    }
}

/// Disoccluded-token flags, one per token of the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    flags: Vec<bool>,
}

impl AttentionMask {
    pub fn new(n: usize, h: usize, w: usize, flags: Vec<bool>) -> Result<Self, AttentionError> {
        if flags.len() != n * h * w {
            return Err(AttentionError::Shape(format!(
                "{} mask flags for {n}x{h}x{w} tokens",
                flags.len()
            )));
        }
        Ok(Self { n, h, w, flags })
    }

    pub fn empty(n: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            h,
            w,
            flags: vec![false; n * h * w],
        }
    }

    pub fn full(n: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            h,
            w,
            flags: vec![true; n * h * w],
        }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn is_masked(&self, token: usize) -> bool {
        self.flags[token]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Spatial,
    Temporal,
    Full,
    MaskedFull,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::Spatial,
        Pattern::Temporal,
        Pattern::Full,
        Pattern::MaskedFull,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Pattern::Spatial => "spatial",
            Pattern::Temporal => "temporal",
            Pattern::Full => "full",
            Pattern::MaskedFull => "masked_full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub qk_dot_products: u64,
    pub pattern: Pattern,
}

/// Closed-form query-key dot product count for a pattern.
pub fn predicted_cost(pattern: Pattern, n: usize, h: usize, w: usize, masked: usize) -> u64 {
    let (n, hw, m) = (n as u64, (h * w) as u64, masked as u64);
    match pattern {
        Pattern::Spatial => n * hw * hw,
        Pattern::Temporal => n * n * hw,
        Pattern::Full => n * n * hw * hw,
        Pattern::MaskedFull => (n * hw - m) * hw + m * n * hw,
    }
}

/// The keys a query attends to, always enumerated in ascending token order.
#[derive(Debug, Clone, Copy)]
enum KeySet {
    /// Tokens `start..start + len`.
    Range { start: usize, len: usize },
    /// Tokens `offset, offset + stride, ..` (`count` of them).
    Strided {
        offset: usize,
        stride: usize,
        count: usize,
    },
}

impl KeySet {
    fn len(&self) -> usize {
        match *self {
            KeySet::Range { len, .. } => len,
            KeySet::Strided { count, .. } => count,
        }
    }

    #[inline]
    fn get(&self, j: usize) -> usize {
        match *self {
            KeySet::Range { start, .. } => start + j,
            KeySet::Strided { offset, stride, .. } => offset + j * stride,
        }
    }
}

struct Layout<'a> {
    n: usize,
    hw: usize,
    pattern: Pattern,
    mask: Option<&'a AttentionMask>,
}

impl Layout<'_> {
    fn keys(&self, query: usize) -> KeySet {
        let total = self.n * self.hw;
        let frame = query / self.hw;
        let spatial = KeySet::Range {
            start: frame * self.hw,
            len: self.hw,
        };
        let all = KeySet::Range {
            start: 0,
            len: total,
        };
        match self.pattern {
            Pattern::Spatial => spatial,
            Pattern::Full => all,
            Pattern::Temporal => KeySet::Strided {
                offset: query % self.hw,
                stride: self.hw,
                count: self.n,
            },
            Pattern::MaskedFull => {
                if self.mask.is_some_and(|m| m.is_masked(query)) {
                    all
                } else {
                    spatial
                }
            }
        }
    }
}

fn validate<'a>(
    x: &TokenGrid,
    p: &AttentionParams,
    pattern: Pattern,
    mask: Option<&'a AttentionMask>,
) -> Result<Layout<'a>, AttentionError> {
    if p.dim() != x.c {
        return Err(AttentionError::Shape(format!(
            "token dim {} but projections are {}x{}",
            x.c,
            p.dim(),
            p.dim()
        )));
    }
    if pattern == Pattern::Full && x.tokens() > MAX_DENSE_TOKENS {
        return Err(AttentionError::TooLarge { tokens: x.tokens() });
    }
    let mask = match pattern {
        Pattern::MaskedFull => {
            let m = mask.ok_or(AttentionError::MissingMask)?;
            if (m.n, m.h, m.w) != (x.n, x.h, x.w) {
                return Err(AttentionError::Shape(format!(
                    "mask is {}x{}x{} but grid is {}x{}x{}",
                    m.n, m.h, m.w, x.n, x.h, x.w
                )));
            }
            Some(m)
        }
        _ => None,
    };
    Ok(Layout {
        n: x.n,
        hw: x.h * x.w,
        pattern,
        mask,
    })
}

/// Projected queries, keys and values, token-major.
struct Projections {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
}

fn project(x: &TokenGrid, p: &AttentionParams) -> Projections {
    let c = x.c;
    let t = x.tokens();
    let mut q = vec![0.0; t * c];
    let mut k = vec![0.0; t * c];
    let mut v = vec![0.0; t * c];
    for i in 0..t {
        let xi = x.token(i);
        p.wq.apply(xi, &mut q[i * c..(i + 1) * c]);
        p.wk.apply(xi, &mut k[i * c..(i + 1) * c]);
        p.wv.apply(xi, &mut v[i * c..(i + 1) * c]);
    }
    Projections { q, k, v }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax weights of query `i` over `keys`, written into `probs`.
fn row_probabilities(proj: &Projections, c: usize, scale: f64, i: usize, keys: KeySet, probs: &mut Vec<f64>) {
    probs.clear();
    let qi = &proj.q[i * c..(i + 1) * c];
    let mut max = f64::NEG_INFINITY;
    for j in 0..keys.len() {
        let kj = keys.get(j);
        let s = scale * dot(qi, &proj.k[kj * c..(kj + 1) * c]);
        max = max.max(s);
        probs.push(s);
    }
    let mut sum = 0.0;
    for s in probs.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in probs.iter_mut() {
        *s /= sum;
    }
}

/// Runs one attention pattern. `mask` is required for
/// [`Pattern::MaskedFull`] and ignored otherwise.
pub fn attend(
    x: &TokenGrid,
    p: &AttentionParams,
    pattern: Pattern,
    mask: Option<&AttentionMask>,
) -> Result<(TokenGrid, CostReport), AttentionError> {
    let layout = validate(x, p, pattern, mask)?;
    let c = x.c;
    let proj = project(x, p);
    let scale = p.scale();
    let mut out = TokenGrid::zeros(x.n, x.h, x.w, c);
    let mut cost = 0u64;
    let mut probs = Vec::new();
    for i in 0..x.tokens() {
        let keys = layout.keys(i);
        cost += keys.len() as u64;
        row_probabilities(&proj, c, scale, i, keys, &mut probs);
        let oi = &mut out.data[i * c..(i + 1) * c];
        for (j, &pij) in probs.iter().enumerate() {
            let kj = keys.get(j);
            for (o, v) in oi.iter_mut().zip(&proj.v[kj * c..(kj + 1) * c]) {
                *o += pij * v;
            }
        }
    }
    Ok((
        out,
        CostReport {
            qk_dot_products: cost,
            pattern,
        },
    ))
}

pub fn attend_spatial(x: &TokenGrid, p: &AttentionParams) -> Result<(TokenGrid, CostReport), AttentionError> {
    attend(x, p, Pattern::Spatial, None)
}

pub fn attend_temporal(x: &TokenGrid, p: &AttentionParams) -> Result<(TokenGrid, CostReport), AttentionError> {
    attend(x, p, Pattern::Temporal, None)
}

pub fn attend_full(x: &TokenGrid, p: &AttentionParams) -> Result<(TokenGrid, CostReport), AttentionError> {
    attend(x, p, Pattern::Full, None)
}

pub fn attend_masked_full(
    x: &TokenGrid,
    p: &AttentionParams,
    m: &AttentionMask,
) -> Result<(TokenGrid, CostReport), AttentionError> {
    attend(x, p, Pattern::MaskedFull, Some(m))
}

/// Attention weights of every query row as `(key token, weight)` pairs.
pub fn attention_weights(
    x: &TokenGrid,
    p: &AttentionParams,
    pattern: Pattern,
    mask: Option<&AttentionMask>,
) -> Result<Vec<Vec<(usize, f64)>>, AttentionError> {
    let layout = validate(x, p, pattern, mask)?;
    let proj = project(x, p);
    let mut probs = Vec::new();
    Ok((0..x.tokens())
        .map(|i| {
            let keys = layout.keys(i);
            row_probabilities(&proj, x.c, p.scale(), i, keys, &mut probs);
            probs.iter().enumerate().map(|(j, &w)| (keys.get(j), w)).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub dx: TokenGrid,
    pub dwq: SquareMatrix,
    pub dwk: SquareMatrix,
    pub dwv: SquareMatrix,
}

/// Gradients of `sum(upstream * attend(x))` with respect to the tokens and
/// the three projections.
pub fn attention_backward(
    x: &TokenGrid,
    p: &AttentionParams,
    pattern: Pattern,
    mask: Option<&AttentionMask>,
    upstream: &TokenGrid,
) -> Result<AttentionGrads, AttentionError> {
    let layout = validate(x, p, pattern, mask)?;
    if !x.same_layout(upstream) {
        return Err(AttentionError::Shape("upstream gradient shape differs from input".into()));
    }
    let c = x.c;
    let t = x.tokens();
    let scale = p.scale();
    let proj = project(x, p);
    let mut dq = vec![0.0; t * c];
    let mut dk = vec![0.0; t * c];
    let mut dv = vec![0.0; t * c];
    let mut probs = Vec::new();
    let mut dprobs = Vec::new();

    for i in 0..t {
        let keys = layout.keys(i);
        row_probabilities(&proj, c, scale, i, keys, &mut probs);
        let gi = upstream.token(i);
        dprobs.clear();
        for (j, &pij) in probs.iter().enumerate() {
            let kj = keys.get(j);
            dprobs.push(dot(gi, &proj.v[kj * c..(kj + 1) * c]));
            for (d, g) in dv[kj * c..(kj + 1) * c].iter_mut().zip(gi) {
                *d += pij * g;
            }
        }
        let weighted: f64 = probs.iter().zip(&dprobs).map(|(a, b)| a * b).sum();
        let qi: Vec<f64> = proj.q[i * c..(i + 1) * c].to_vec();
        for (j, (&pij, &dpij)) in probs.iter().zip(&dprobs).enumerate() {
            let ds = pij * (dpij - weighted) * scale;
            let kj = keys.get(j);
            for a in 0..c {
                dq[i * c + a] += ds * proj.k[kj * c + a];
                dk[kj * c + a] += ds * qi[a];
            }
        }
    }

    // back through the projections: q_i = W_q x_i etc.
    let mut dx = TokenGrid::zeros(x.n, x.h, x.w, c);
    let mut dwq = SquareMatrix::zeros(c);
    let mut dwk = SquareMatrix::zeros(c);
    let mut dwv = SquareMatrix::zeros(c);
    for i in 0..t {
        let xi = x.token(i);
        for (grad, w, dw) in [
            (&dq, &p.wq, &mut dwq),
            (&dk, &p.wk, &mut dwk),
            (&dv, &p.wv, &mut dwv),
        ] {
            let gi = &grad[i * c..(i + 1) * c];
            for a in 0..c {
                if gi[a] == 0.0 {
                    continue;
                }
                for b in 0..c {
                    dx.data[i * c + b] += gi[a] * w.get(a, b);
                    dw.data[a * c + b] += gi[a] * xi[b];
                }
            }
        }
    }
    Ok(AttentionGrads { dx, dwq, dwk, dwv })
}

/// A seeded random problem: tokens, projections, a mask covering about
/// `mask_fraction` of the tokens, and an upstream gradient.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub x: TokenGrid,
    pub params: AttentionParams,
    pub mask: AttentionMask,
    pub upstream: TokenGrid,
}

pub fn random_instance(seed: u64, n: usize, h: usize, w: usize, c: usize, mask_fraction: f64) -> RandomInstance {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let t = n * h * w;
    let grid = |rng: &mut rand_chacha::ChaCha8Rng| TokenGrid {
        n,
        h,
        w,
        c,
        data: (0..t * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let x = grid(&mut rng);
    let upstream = grid(&mut rng);
    let mut mat = || SquareMatrix {
        dim: c,
        data: (0..c * c).map(|_| rng.gen_range(-0.8..0.8)).collect(),
    };
    let params = AttentionParams {
        wq: mat(),
        wk: mat(),
        wv: mat(),
    };
    let flags = (0..t).map(|_| rng.gen_bool(mask_fraction.clamp(0.0, 1.0))).collect();
    RandomInstance {
        x,
        params,
        mask: AttentionMask { n, h, w, flags },
        upstream,
    }
}

fn weight_entry(p: &mut AttentionParams, which: usize, i: usize) -> &mut f64 {
    let m = match which {
        0 => &mut p.wq,
        1 => &mut p.wk,
        _ => &mut p.wv,
    };
    &mut m.data[i]
}

/// Largest relative error between [`attention_backward`] and central
/// differences of `sum(upstream * attend(x))` over every input and weight
/// entry. Relative error is `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn gradient_check(
    x: &TokenGrid,
    p: &AttentionParams,
    pattern: Pattern,
    mask: Option<&AttentionMask>,
    upstream: &TokenGrid,
    step: f64,
) -> Result<f64, AttentionError> {
    let grads = attention_backward(x, p, pattern, mask, upstream)?;
    let objective = |x: &TokenGrid, p: &AttentionParams| -> Result<f64, AttentionError> {
        let (out, _) = attend(x, p, pattern, mask)?;
        Ok(dot(out.data(), upstream.data()))
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
    let mut worst = 0.0f64;

    let mut xp = x.clone();
    for i in 0..x.data.len() {
        let orig = xp.data[i];
        xp.data[i] = orig + step;
        let plus = objective(&xp, p)?;
        xp.data[i] = orig - step;
        let minus = objective(&xp, p)?;
        xp.data[i] = orig;
        worst = worst.max(rel(grads.dx.data[i], (plus - minus) / (2.0 * step)));
    }

    let mut pp = p.clone();
    for which in 0..3 {
        let analytic = [&grads.dwq, &grads.dwk, &grads.dwv][which];
        for i in 0..p.dim() * p.dim() {
            let orig = *weight_entry(&mut pp, which, i);
            *weight_entry(&mut pp, which, i) = orig + step;
            let plus = objective(x, &pp)?;
            *weight_entry(&mut pp, which, i) = orig - step;
            let minus = objective(x, &pp)?;
            *weight_entry(&mut pp, which, i) = orig;
            worst = worst.max(rel(analytic.data[i], (plus - minus) / (2.0 * step)));
        }
    }
    Ok(worst)
}
