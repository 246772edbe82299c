//! Layers with hand-written backward passes. Feature maps are channel-last
//! (`h × w × c`); every layer's `backward` accumulates parameter gradients
//! and returns the gradient with respect to its input.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ssm::{self, ScanInput, SsmParameters};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: String, shape: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            name,
            shape,
            value,
            grad,
        }
    }

    pub fn constant(name: String, shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![v; n])
    }

    pub fn uniform(name: String, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Self::new(name, shape, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn positions(&self) -> usize {
        self.h * self.w
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.w + j) * self.c;
        &self.data[o..o + self.c]
    }

    pub fn pixel_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.w + j) * self.c;
        &mut self.data[o..o + self.c]
    }

    pub fn same_shape(&self) -> Map {
        Map::zeros(self.h, self.w, self.c)
    }

    /// Channels `from..to` of every position.
    pub fn channels(&self, from: usize, to: usize) -> Map {
        let c = to - from;
        let mut out = Map::zeros(self.h, self.w, c);
        for p in 0..self.positions() {
            out.data[p * c..(p + 1) * c]
                .copy_from_slice(&self.data[p * self.c + from..p * self.c + to]);
        }
        out
    }

    /// Channel-wise concatenation.
    pub fn concat(a: &Map, b: &Map) -> Map {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let c = a.c + b.c;
        let mut out = Map::zeros(a.h, a.w, c);
        for p in 0..a.positions() {
            out.data[p * c..p * c + a.c].copy_from_slice(&a.data[p * a.c..(p + 1) * a.c]);
            out.data[p * c + a.c..(p + 1) * c].copy_from_slice(&b.data[p * b.c..(p + 1) * b.c]);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Map) {
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }
}

/// Square convolution with "same" padding (`k / 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    /// `cout × k × k × cin`
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let bound = Float::sqrt(6.0 / fan_in);
        Self {
            cin,
            cout,
            k,
            stride,
            weight: Param::uniform(
                alloc::format!("{name}.weight"),
                vec![cout, k, k, cin],
                bound * 0.5,
                rng,
            ),
            bias: Param::constant(alloc::format!("{name}.bias"), vec![cout], 0.0),
        }
    }

    fn out_size(&self, n: usize) -> usize {
        let p = self.k / 2;
        (n + 2 * p - self.k) / self.stride + 1
    }

    pub fn forward(&self, x: &Map) -> Map {
        debug_assert_eq!(x.c, self.cin);
        let (oh, ow) = (self.out_size(x.h), self.out_size(x.w));
        let p = self.k / 2;
        let mut y = Map::zeros(oh, ow, self.cout);
        let w = &self.weight.value;
        for oy in 0..oh {
            for ox in 0..ow {
                let out = y.pixel_mut(oy, ox);
                out.copy_from_slice(&self.bias.value);
                for ky in 0..self.k {
                    let iy = (oy * self.stride + ky) as isize - p as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox * self.stride + kx) as isize - p as isize;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let xs = x.pixel(iy as usize, ix as usize);
                        for (o, acc) in out.iter_mut().enumerate() {
                            let off = ((o * self.k + ky) * self.k + kx) * self.cin;
                            *acc += dot(&w[off..off + self.cin], xs);
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Map, gy: &Map) -> Map {
        let p = self.k / 2;
        let mut gx = x.same_shape();
        for oy in 0..gy.h {
            for ox in 0..gy.w {
                let g = gy.pixel(oy, ox);
                for (o, gv) in g.iter().enumerate() {
                    self.bias.grad[o] += gv;
                }
                for ky in 0..self.k {
                    let iy = (oy * self.stride + ky) as isize - p as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox * self.stride + kx) as isize - p as isize;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let (iy, ix) = (iy as usize, ix as usize);
                        let xo = (iy * x.w + ix) * x.c;
                        for (o, &gv) in g.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            let off = ((o * self.k + ky) * self.k + kx) * self.cin;
                            axpy(
                                gv,
                                &x.data[xo..xo + self.cin],
                                &mut self.weight.grad[off..off + self.cin],
                            );
                            axpy(
                                gv,
                                &self.weight.value[off..off + self.cin],
                                &mut gx.data[xo..xo + self.cin],
                            );
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

/// Position-wise affine map `y = W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub cin: usize,
    pub cout: usize,
    /// `cout × cin`
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = Float::sqrt(3.0 / cin as f64);
        Self {
            cin,
            cout,
            weight: Param::uniform(alloc::format!("{name}.weight"), vec![cout, cin], bound, rng),
            bias: Param::constant(alloc::format!("{name}.bias"), vec![cout], 0.0),
        }
    }

    pub fn forward_vec(&self, x: &[f64], y: &mut [f64]) {
        for (o, out) in y.iter_mut().enumerate() {
            *out =
                self.bias.value[o] + dot(&self.weight.value[o * self.cin..(o + 1) * self.cin], x);
        }
    }

    pub fn backward_vec(&mut self, x: &[f64], gy: &[f64], gx: &mut [f64]) {
        for (o, &g) in gy.iter().enumerate() {
            self.bias.grad[o] += g;
            let row = o * self.cin..(o + 1) * self.cin;
            axpy(g, x, &mut self.weight.grad[row.clone()]);
            axpy(g, &self.weight.value[row], gx);
        }
    }

    pub fn forward(&self, x: &Map) -> Map {
        debug_assert_eq!(x.c, self.cin);
        let mut y = Map::zeros(x.h, x.w, self.cout);
        for p in 0..x.positions() {
            self.forward_vec(
                &x.data[p * self.cin..(p + 1) * self.cin],
                &mut y.data[p * self.cout..(p + 1) * self.cout],
            );
        }
        y
    }

    pub fn backward(&mut self, x: &Map, gy: &Map) -> Map {
        let mut gx = x.same_shape();
        for p in 0..x.positions() {
            let xs = &x.data[p * self.cin..(p + 1) * self.cin];
            let gs = &gy.data[p * self.cout..(p + 1) * self.cout];
            self.backward_vec(xs, gs, &mut gx.data[p * self.cin..(p + 1) * self.cin]);
        }
        gx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

/// Per-position normalization over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub c: usize,
    pub gamma: Param,
    pub beta: Param,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Map,
    rstd: Vec<f64>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(name: &str, c: usize) -> Self {
        Self {
            c,
            gamma: Param::constant(alloc::format!("{name}.gamma"), vec![c], 1.0),
            beta: Param::constant(alloc::format!("{name}.beta"), vec![c], 0.0),
        }
    }

    pub fn forward(&self, x: &Map) -> (Map, LayerNormCache) {
        let c = self.c;
        let mut y = x.same_shape();
        let mut xhat = x.same_shape();
        let mut rstd = vec![0.0; x.positions()];
        for p in 0..x.positions() {
            let xs = &x.data[p * c..(p + 1) * c];
            let mean = xs.iter().sum::<f64>() / c as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / Float::sqrt(var + LN_EPS);
            rstd[p] = r;
            for i in 0..c {
                let xh = (xs[i] - mean) * r;
                xhat.data[p * c + i] = xh;
                y.data[p * c + i] = self.gamma.value[i] * xh + self.beta.value[i];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, gy: &Map) -> Map {
        let c = self.c;
        let mut gx = gy.same_shape();
        let mut gxhat = vec![0.0; c];
        for p in 0..gy.positions() {
            let xh = &cache.xhat.data[p * c..(p + 1) * c];
            let g = &gy.data[p * c..(p + 1) * c];
            for i in 0..c {
                self.gamma.grad[i] += g[i] * xh[i];
                self.beta.grad[i] += g[i];
                gxhat[i] = g[i] * self.gamma.value[i];
            }
            let m1 = gxhat.iter().sum::<f64>() / c as f64;
            let m2 = gxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
            for i in 0..c {
                gx.data[p * c + i] = cache.rstd[p] * (gxhat[i] - m1 - xh[i] * m2);
            }
        }
        gx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.gamma, &self.beta]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + Float::exp(-x))
}

pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        Float::ln_1p(Float::exp(x))
    }
}

pub fn silu(x: &Map) -> Map {
    Map {
        data: x.data.iter().map(|&v| v * sigmoid(v)).collect(),
        ..*x
    }
}

/// Gradient of SiLU given its input `x`.
pub fn silu_backward(x: &Map, gy: &Map) -> Map {
    let data = x
        .data
        .iter()
        .zip(&gy.data)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (1.0 + v * (1.0 - s))
        })
        .collect();
    Map { data, ..*x }
}

/// Interleaves the two channel halves: `[a0, b0, a1, b1, …]`.
pub fn channel_shuffle(x: &Map) -> Map {
    let half = x.c / 2;
    let mut y = x.same_shape();
    for p in 0..x.positions() {
        for j in 0..half {
            y.data[p * x.c + 2 * j] = x.data[p * x.c + j];
            y.data[p * x.c + 2 * j + 1] = x.data[p * x.c + half + j];
        }
    }
    y
}

pub fn channel_shuffle_backward(gy: &Map) -> Map {
    let half = gy.c / 2;
    let mut gx = gy.same_shape();
    for p in 0..gy.positions() {
        for j in 0..half {
            gx.data[p * gy.c + j] = gy.data[p * gy.c + 2 * j];
            gx.data[p * gy.c + half + j] = gy.data[p * gy.c + 2 * j + 1];
        }
    }
    gx
}

/// Four-direction selective scan with input-dependent `Δ`, `B`, `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ss2d {
    pub c: usize,
    pub state_dim: usize,
    pub dt_proj: Linear,
    pub b_proj: Linear,
    pub c_proj: Linear,
    /// `A = −exp(a_log)`, `c × state_dim`.
    pub a_log: Param,
    pub d: Param,
}

#[derive(Debug, Clone)]
pub struct Ss2dCache {
    dt_pre: Map,
    delta: Vec<f64>,
    b: Map,
    cm: Map,
    states: [Vec<f64>; 4],
}

impl Ss2d {
    pub fn new(name: &str, c: usize, state_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut dt_proj = Linear::new(&alloc::format!("{name}.dt_proj"), c, c, rng);
        dt_proj.weight.value.iter_mut().for_each(|w| *w *= 0.1);
        // softplus⁻¹ of a log-uniform Δ in [0.05, 0.5]
        for b in dt_proj.bias.value.iter_mut() {
            let dt: f64 = Float::exp(rng.random_range(Float::ln(0.05)..Float::ln(0.5)));
            *b = dt + Float::ln(-Float::exp_m1(-dt));
        }
        let a_log = (0..c * state_dim)
            .map(|i| Float::ln((i % state_dim + 1) as f64))
            .collect();
        Self {
            c,
            state_dim,
            dt_proj,
            b_proj: Linear::new(&alloc::format!("{name}.b_proj"), c, state_dim, rng),
            c_proj: Linear::new(&alloc::format!("{name}.c_proj"), c, state_dim, rng),
            a_log: Param::new(alloc::format!("{name}.a_log"), vec![c, state_dim], a_log),
            d: Param::constant(alloc::format!("{name}.d"), vec![c], 1.0),
        }
    }

    pub fn ssm_parameters(&self) -> SsmParameters {
        SsmParameters {
            channels: self.c,
            state_dim: self.state_dim,
            a: self.a_log.value.iter().map(|v| -Float::exp(*v)).collect(),
            d: self.d.value.clone(),
        }
    }

    pub fn forward(&self, x: &Map) -> (Map, Ss2dCache) {
        let dt_pre = self.dt_proj.forward(x);
        let delta: Vec<f64> = dt_pre.data.iter().map(|v| softplus(*v)).collect();
        let b = self.b_proj.forward(x);
        let cm = self.c_proj.forward(x);
        let params = self.ssm_parameters();
        let input = ScanInput {
            x: &x.data,
            delta: &delta,
            b: &b.data,
            c: &cm.data,
        };
        let (y, states) = ssm::ss2d_scan(&params, &input, x.h, x.w);
        (
            Map { data: y, ..*x },
            Ss2dCache {
                dt_pre,
                delta,
                b,
                cm,
                states,
            },
        )
    }

    pub fn backward(&mut self, x: &Map, cache: &Ss2dCache, gy: &Map) -> Map {
        let params = self.ssm_parameters();
        let input = ScanInput {
            x: &x.data,
            delta: &cache.delta,
            b: &cache.b.data,
            c: &cache.cm.data,
        };
        let g = ssm::ss2d_scan_backward(&params, &input, x.h, x.w, &cache.states, &gy.data);
        for (i, ga) in g.a.iter().enumerate() {
            self.a_log.grad[i] += ga * params.a[i];
        }
        for (i, gd) in g.d.iter().enumerate() {
            self.d.grad[i] += gd;
        }
        let gdt = Map {
            data: g
                .delta
                .iter()
                .zip(&cache.dt_pre.data)
                .map(|(gd, pre)| gd * sigmoid(*pre))
                .collect(),
            ..*x
        };
        let mut gx = Map { data: g.x, ..*x };
        gx.add_assign(&self.dt_proj.backward(x, &gdt));
        gx.add_assign(&self.b_proj.backward(
            x,
            &Map {
                data: g.b,
                ..cache.b.clone()
            },
        ));
        gx.add_assign(&self.c_proj.backward(
            x,
            &Map {
                data: g.c,
                ..cache.cm.clone()
            },
        ));
        gx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::new();
        v.extend(self.dt_proj.params_mut());
        v.extend(self.b_proj.params_mut());
        v.extend(self.c_proj.params_mut());
        v.push(&mut self.a_log);
        v.push(&mut self.d);
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = Vec::new();
        v.extend(self.dt_proj.params());
        v.extend(self.b_proj.params());
        v.extend(self.c_proj.params());
        v.push(&self.a_log);
        v.push(&self.d);
        v
    }
}

/// SS-Conv-SSM block: normalize, split channels, a convolutional local
/// branch and a scan global branch, concatenate, shuffle, add the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct SsConvSsmBlock {
    pub c: usize,
    pub norm: LayerNorm,
    pub local: Conv2d,
    pub global_in: Linear,
    pub ss2d: Ss2d,
    pub global_out: Linear,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    norm: LayerNormCache,
    zl: Map,
    zg: Map,
    l_pre: Map,
    g_pre: Map,
    g_act: Map,
    ss: Ss2dCache,
    g_ss: Map,
}

impl SsConvSsmBlock {
    pub fn new(name: &str, c: usize, state_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let half = c / 2;
        let mut global_out = Linear::new(&alloc::format!("{name}.global_out"), half, half, rng);
        global_out.weight.value.iter_mut().for_each(|w| *w *= 0.5);
        Self {
            c,
            norm: LayerNorm::new(&alloc::format!("{name}.norm"), c),
            local: Conv2d::new(&alloc::format!("{name}.local"), half, half, 3, 1, rng),
            global_in: Linear::new(&alloc::format!("{name}.global_in"), half, half, rng),
            ss2d: Ss2d::new(&alloc::format!("{name}.ss2d"), half, state_dim, rng),
            global_out,
        }
    }

    pub fn forward(&self, x: &Map) -> (Map, BlockCache) {
        let half = self.c / 2;
        let (z, norm) = self.norm.forward(x);
        let zl = z.channels(0, half);
        let zg = z.channels(half, self.c);
        let l_pre = self.local.forward(&zl);
        let l = silu(&l_pre);
        let g_pre = self.global_in.forward(&zg);
        let g_act = silu(&g_pre);
        let (g_ss, ss) = self.ss2d.forward(&g_act);
        let g = self.global_out.forward(&g_ss);
        let mut y = channel_shuffle(&Map::concat(&l, &g));
        y.add_assign(x);
        (
            y,
            BlockCache {
                norm,
                zl,
                zg,
                l_pre,
                g_pre,
                g_act,
                ss,
                g_ss,
            },
        )
    }

    pub fn backward(&mut self, cache: &BlockCache, gy: &Map) -> Map {
        let half = self.c / 2;
        let gcat = channel_shuffle_backward(gy);
        let gl = gcat.channels(0, half);
        let gg = gcat.channels(half, self.c);
        let g_ss = self.global_out.backward(&cache.g_ss, &gg);
        let g_act = self.ss2d.backward(&cache.g_act, &cache.ss, &g_ss);
        let g_pre = silu_backward(&cache.g_pre, &g_act);
        let gzg = self.global_in.backward(&cache.zg, &g_pre);
        let gl_pre = silu_backward(&cache.l_pre, &gl);
        let gzl = self.local.backward(&cache.zl, &gl_pre);
        let gz = Map::concat(&gzl, &gzg);
        let mut gx = self.norm.backward(&cache.norm, &gz);
        gx.add_assign(gy);
        gx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::new();
        v.extend(self.norm.params_mut());
        v.extend(self.local.params_mut());
        v.extend(self.global_in.params_mut());
        v.extend(self.ss2d.params_mut());
        v.extend(self.global_out.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = Vec::new();
        v.extend(self.norm.params());
        v.extend(self.local.params());
        v.extend(self.global_in.params());
        v.extend(self.ss2d.params());
        v.extend(self.global_out.params());
        v
    }
}

/// 2×2 patch merging: gather, normalize, project to the next width.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMerge {
    pub norm: LayerNorm,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct PatchMergeCache {
    gathered: Map,
    norm: LayerNormCache,
    normed: Map,
}

impl PatchMerge {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm: LayerNorm::new(&alloc::format!("{name}.norm"), 4 * cin),
            proj: Linear::new(&alloc::format!("{name}.proj"), 4 * cin, cout, rng),
        }
    }

    const OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

    pub fn forward(&self, x: &Map) -> (Map, PatchMergeCache) {
        let (h, w, c) = (x.h / 2, x.w / 2, x.c);
        let mut gathered = Map::zeros(h, w, 4 * c);
        for i in 0..h {
            for j in 0..w {
                let out = gathered.pixel_mut(i, j);
                for (k, (di, dj)) in Self::OFFSETS.iter().enumerate() {
                    out[k * c..(k + 1) * c].copy_from_slice(x.pixel(2 * i + di, 2 * j + dj));
                }
            }
        }
        let (normed, norm) = self.norm.forward(&gathered);
        let y = self.proj.forward(&normed);
        (
            y,
            PatchMergeCache {
                gathered,
                norm,
                normed,
            },
        )
    }

    pub fn backward(&mut self, x: &Map, cache: &PatchMergeCache, gy: &Map) -> Map {
        let gnormed = self.proj.backward(&cache.normed, gy);
        let ggathered = self.norm.backward(&cache.norm, &gnormed);
        let c = x.c;
        let mut gx = x.same_shape();
        for i in 0..cache.gathered.h {
            for j in 0..cache.gathered.w {
                let g = ggathered.pixel(i, j);
                for (k, (di, dj)) in Self::OFFSETS.iter().enumerate() {
                    gx.pixel_mut(2 * i + di, 2 * j + dj)
                        .copy_from_slice(&g[k * c..(k + 1) * c]);
                }
            }
        }
        gx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::new();
        v.extend(self.norm.params_mut());
        v.extend(self.proj.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = Vec::new();
        v.extend(self.norm.params());
        v.extend(self.proj.params());
        v
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yv, xv)| *yv += alpha * xv);
}
