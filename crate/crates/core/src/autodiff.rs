//! Derivative engine for the network architectures.
//!
//! Forward pass: every scalar flowing through the network is a truncated
//! Taylor jet carrying the value, first derivatives with respect to the
//! spatial/time inputs, and the pure second spatial derivatives. This yields
//! analytically exact ∂f/∂x̂, ∂f/∂t̂, ∂²f/∂x̂² (and ŷ counterparts) in one pass.
//!
//! Backward pass: reverse-mode accumulation where the adjoint of a node is a
//! jet-shaped vector (one adjoint per tracked component). Because the PDE
//! residual reads first and second input derivatives, parameter gradients
//! flow through third-order mixed paths; the adjoint rules below carry the
//! required g''' terms, so the gradients are exact rather than approximate.

use crate::error::{CoreError, Result};
use crate::loss::{
    bc_residual_parts, ic_residual_parts, pde_residual_parts, CollocationBatch, LossBreakdown,
    LossDefinition, TermKind,
};
use crate::network::{ArchKind, Activation, InputLabel, Layout, NetworkSpec, EXP_CLAMP};
use serde::{Deserialize, Serialize};

/// Flat trainable-parameter store plus its named slot layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamStore {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        layout.validate()?;
        if values.len() != layout.total {
            return Err(CoreError::contract(format!(
                "parameter vector has {} entries but the layout covers {}",
                values.len(),
                layout.total
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One collocation point in nondimensional coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputPoint {
    pub x: f64,
    pub y: Option<f64>,
    pub t: f64,
    pub h1: f64,
    pub h2: f64,
}

impl InputPoint {
    pub fn one_d(x: f64, t: f64, h1: f64, h2: f64) -> Self {
        Self { x, y: None, t, h1, h2 }
    }

    pub fn two_d(x: f64, y: f64, t: f64, h1: f64, h2: f64) -> Self {
        Self { x, y: Some(y), t, h1, h2 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.x.is_finite()
            && self.t.is_finite()
            && self.h1.is_finite()
            && self.h2.is_finite()
            && self.y.map_or(true, f64::is_finite);
        if !finite {
            return Err(CoreError::contract("input point has non-finite components"));
        }
        if self.h1 <= 0.0 || self.h2 <= 0.0 {
            return Err(CoreError::contract("input point requires h1, h2 > 0"));
        }
        Ok(())
    }
}

/// Input-derivative selector for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivLabel {
    DDx,
    DDt,
    D2Dx2,
    DDy,
    D2Dy2,
}

/// Network output and requested input derivatives at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalResult {
    pub value: f64,
    pub d_dx: Option<f64>,
    pub d_dt: Option<f64>,
    pub d2_dx2: Option<f64>,
    pub d_dy: Option<f64>,
    pub d2_dy2: Option<f64>,
}

/// Raw jet components; used both to read results out of the forward pass and
/// to seed the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JetParts {
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    pub dxx: f64,
    pub dyy: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum SeedDir {
    X,
    Y,
    T,
}

/// Scalar type threaded through the network evaluation. Implemented by the
/// 1D and 2D jets and by plain `f64` (value-only inference).
pub(crate) trait JetScalar: Copy {
    fn constant(c: f64) -> Self;
    fn seed(value: f64, dir: SeedDir) -> Self;
    fn value(self) -> f64;
    fn scale(self, c: f64) -> Self;
    /// self + c·o
    fn madd(self, c: f64, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    /// Apply a unary g with value `g` and derivative factors `gp`, `gpp`.
    fn chain(self, g: f64, gp: f64, gpp: f64) -> Self;
    /// Adjoint of `chain`: contribution to z̄ given ā, the forward jet z and
    /// the derivative triple (g', g'', g''').
    fn chain_adjoint(abar: Self, z: Self, d: [f64; 3]) -> Self;
    /// Adjoint of `mul`: contribution to ā for c = a·b, given c̄ and b.
    fn mul_adjoint(cbar: Self, b: Self) -> Self;
    /// Component-wise dot product (parameter gradient of a linear map).
    fn dot(self, o: Self) -> f64;
    fn from_parts(p: JetParts) -> Self;
    fn parts(self) -> JetParts;
    fn is_finite(self) -> bool;
}

/// Jet for 1D problems: (v, ∂x, ∂t, ∂xx).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Jet1 {
    v: f64,
    dx: f64,
    dt: f64,
    dxx: f64,
}

impl JetScalar for Jet1 {
    #[inline]
    fn constant(c: f64) -> Self {
        Jet1 { v: c, dx: 0.0, dt: 0.0, dxx: 0.0 }
    }

    #[inline]
    fn seed(value: f64, dir: SeedDir) -> Self {
        match dir {
            SeedDir::X => Jet1 { v: value, dx: 1.0, dt: 0.0, dxx: 0.0 },
            SeedDir::T => Jet1 { v: value, dx: 0.0, dt: 1.0, dxx: 0.0 },
            SeedDir::Y => unreachable!("1D jet seeded in y"),
        }
    }

    #[inline]
    fn value(self) -> f64 {
        self.v
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        Jet1 { v: c * self.v, dx: c * self.dx, dt: c * self.dt, dxx: c * self.dxx }
    }

    #[inline]
    fn madd(self, c: f64, o: Self) -> Self {
        Jet1 {
            v: self.v + c * o.v,
            dx: self.dx + c * o.dx,
            dt: self.dt + c * o.dt,
            dxx: self.dxx + c * o.dxx,
        }
    }

    #[inline]
    fn mul(self, o: Self) -> Self {
        Jet1 {
            v: self.v * o.v,
            dx: self.dx * o.v + self.v * o.dx,
            dt: self.dt * o.v + self.v * o.dt,
            dxx: self.dxx * o.v + 2.0 * self.dx * o.dx + self.v * o.dxx,
        }
    }

    #[inline]
    fn chain(self, g: f64, gp: f64, gpp: f64) -> Self {
        Jet1 {
            v: g,
            dx: gp * self.dx,
            dt: gp * self.dt,
            dxx: gpp * self.dx * self.dx + gp * self.dxx,
        }
    }

    #[inline]
    fn chain_adjoint(abar: Self, z: Self, d: [f64; 3]) -> Self {
        let [gp, gpp, gppp] = d;
        Jet1 {
            v: abar.v * gp
                + gpp * (abar.dx * z.dx + abar.dt * z.dt)
                + abar.dxx * (gppp * z.dx * z.dx + gpp * z.dxx),
            dx: abar.dx * gp + 2.0 * gpp * abar.dxx * z.dx,
            dt: abar.dt * gp,
            dxx: abar.dxx * gp,
        }
    }

    #[inline]
    fn mul_adjoint(cbar: Self, b: Self) -> Self {
        Jet1 {
            v: cbar.v * b.v + cbar.dx * b.dx + cbar.dt * b.dt + cbar.dxx * b.dxx,
            dx: cbar.dx * b.v + 2.0 * cbar.dxx * b.dx,
            dt: cbar.dt * b.v,
            dxx: cbar.dxx * b.v,
        }
    }

    #[inline]
    fn dot(self, o: Self) -> f64 {
        self.v * o.v + self.dx * o.dx + self.dt * o.dt + self.dxx * o.dxx
    }

    #[inline]
    fn from_parts(p: JetParts) -> Self {
        debug_assert!(p.dy == 0.0 && p.dyy == 0.0);
        Jet1 { v: p.v, dx: p.dx, dt: p.dt, dxx: p.dxx }
    }

    #[inline]
    fn parts(self) -> JetParts {
        JetParts { v: self.v, dx: self.dx, dt: self.dt, dxx: self.dxx, ..JetParts::default() }
    }

    #[inline]
    fn is_finite(self) -> bool {
        self.v.is_finite() && self.dx.is_finite() && self.dt.is_finite() && self.dxx.is_finite()
    }
}

/// Jet for 2D problems: (v, ∂x, ∂y, ∂t, ∂xx, ∂yy).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Jet2 {
    v: f64,
    dx: f64,
    dy: f64,
    dt: f64,
    dxx: f64,
    dyy: f64,
}

impl JetScalar for Jet2 {
    #[inline]
    fn constant(c: f64) -> Self {
        Jet2 { v: c, dx: 0.0, dy: 0.0, dt: 0.0, dxx: 0.0, dyy: 0.0 }
    }

    #[inline]
    fn seed(value: f64, dir: SeedDir) -> Self {
        let mut j = Jet2::constant(value);
        match dir {
            SeedDir::X => j.dx = 1.0,
            SeedDir::Y => j.dy = 1.0,
            SeedDir::T => j.dt = 1.0,
        }
        j
    }

    #[inline]
    fn value(self) -> f64 {
        self.v
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        Jet2 {
            v: c * self.v,
            dx: c * self.dx,
            dy: c * self.dy,
            dt: c * self.dt,
            dxx: c * self.dxx,
            dyy: c * self.dyy,
        }
    }

    #[inline]
    fn madd(self, c: f64, o: Self) -> Self {
        Jet2 {
            v: self.v + c * o.v,
            dx: self.dx + c * o.dx,
            dy: self.dy + c * o.dy,
            dt: self.dt + c * o.dt,
            dxx: self.dxx + c * o.dxx,
            dyy: self.dyy + c * o.dyy,
        }
    }

    #[inline]
    fn mul(self, o: Self) -> Self {
        Jet2 {
            v: self.v * o.v,
            dx: self.dx * o.v + self.v * o.dx,
            dy: self.dy * o.v + self.v * o.dy,
            dt: self.dt * o.v + self.v * o.dt,
            dxx: self.dxx * o.v + 2.0 * self.dx * o.dx + self.v * o.dxx,
            dyy: self.dyy * o.v + 2.0 * self.dy * o.dy + self.v * o.dyy,
        }
    }

    #[inline]
    fn chain(self, g: f64, gp: f64, gpp: f64) -> Self {
        Jet2 {
            v: g,
            dx: gp * self.dx,
            dy: gp * self.dy,
            dt: gp * self.dt,
            dxx: gpp * self.dx * self.dx + gp * self.dxx,
            dyy: gpp * self.dy * self.dy + gp * self.dyy,
        }
    }

    #[inline]
    fn chain_adjoint(abar: Self, z: Self, d: [f64; 3]) -> Self {
        let [gp, gpp, gppp] = d;
        Jet2 {
            v: abar.v * gp
                + gpp * (abar.dx * z.dx + abar.dy * z.dy + abar.dt * z.dt)
                + abar.dxx * (gppp * z.dx * z.dx + gpp * z.dxx)
                + abar.dyy * (gppp * z.dy * z.dy + gpp * z.dyy),
            dx: abar.dx * gp + 2.0 * gpp * abar.dxx * z.dx,
            dy: abar.dy * gp + 2.0 * gpp * abar.dyy * z.dy,
            dt: abar.dt * gp,
            dxx: abar.dxx * gp,
            dyy: abar.dyy * gp,
        }
    }

    #[inline]
    fn mul_adjoint(cbar: Self, b: Self) -> Self {
        Jet2 {
            v: cbar.v * b.v
                + cbar.dx * b.dx
                + cbar.dy * b.dy
                + cbar.dt * b.dt
                + cbar.dxx * b.dxx
                + cbar.dyy * b.dyy,
            dx: cbar.dx * b.v + 2.0 * cbar.dxx * b.dx,
            dy: cbar.dy * b.v + 2.0 * cbar.dyy * b.dy,
            dt: cbar.dt * b.v,
            dxx: cbar.dxx * b.v,
            dyy: cbar.dyy * b.v,
        }
    }

    #[inline]
    fn dot(self, o: Self) -> f64 {
        self.v * o.v
            + self.dx * o.dx
            + self.dy * o.dy
            + self.dt * o.dt
            + self.dxx * o.dxx
            + self.dyy * o.dyy
    }

    #[inline]
    fn from_parts(p: JetParts) -> Self {
        Jet2 { v: p.v, dx: p.dx, dy: p.dy, dt: p.dt, dxx: p.dxx, dyy: p.dyy }
    }

    #[inline]
    fn parts(self) -> JetParts {
        JetParts { v: self.v, dx: self.dx, dy: self.dy, dt: self.dt, dxx: self.dxx, dyy: self.dyy }
    }

    #[inline]
    fn is_finite(self) -> bool {
        self.v.is_finite()
            && self.dx.is_finite()
            && self.dy.is_finite()
            && self.dt.is_finite()
            && self.dxx.is_finite()
            && self.dyy.is_finite()
    }
}

/// Value-only evaluation; derivative components are dropped.
impl JetScalar for f64 {
    #[inline]
    fn constant(c: f64) -> Self {
        c
    }

    #[inline]
    fn seed(value: f64, _dir: SeedDir) -> Self {
        value
    }

    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        c * self
    }

    #[inline]
    fn madd(self, c: f64, o: Self) -> Self {
        self + c * o
    }

    #[inline]
    fn mul(self, o: Self) -> Self {
        self * o
    }

    #[inline]
    fn chain(self, g: f64, _gp: f64, _gpp: f64) -> Self {
        g
    }

    #[inline]
    fn chain_adjoint(abar: Self, _z: Self, d: [f64; 3]) -> Self {
        abar * d[0]
    }

    #[inline]
    fn mul_adjoint(cbar: Self, b: Self) -> Self {
        cbar * b
    }

    #[inline]
    fn dot(self, o: Self) -> f64 {
        self * o
    }

    #[inline]
    fn from_parts(p: JetParts) -> Self {
        p.v
    }

    #[inline]
    fn parts(self) -> JetParts {
        JetParts { v: self, ..JetParts::default() }
    }

    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Parameter offsets resolved once per (spec, params) pair.
struct ResolvedNet<'a> {
    spec: &'a NetworkSpec,
    vals: &'a [f64],
    features: usize,
    pre_a: usize,
    pre_a0: usize,
    pre_b: usize,
    pre_b0: usize,
    pre_c: usize,
    pre_c0: usize,
    dense: Vec<(usize, usize, usize)>, // (w offset, b offset, fan-in)
    out_w: usize,
    out_b: usize,
    width: usize,
    h_labels: Vec<InputLabel>,
}

impl<'a> ResolvedNet<'a> {
    fn new(spec: &'a NetworkSpec, params: &'a ParamStore) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if *params.layout() != layout {
            return Err(CoreError::contract(
                "parameter store layout does not match the network spec",
            ));
        }
        let engineered = spec.architecture == ArchKind::Engineered;
        let off = |name: &str| layout.offset(name);
        let mut dense = Vec::with_capacity(spec.hidden_layers);
        let mut fan_in = spec.first_dense_inputs();
        for l in 0..spec.hidden_layers {
            dense.push((off(&format!("dense{l}.w")), off(&format!("dense{l}.b")), fan_in));
            fan_in = spec.nodes_per_layer;
        }
        Ok(Self {
            spec,
            vals: params.values(),
            features: if engineered { spec.engineered_feature_count } else { 0 },
            pre_a: if engineered { off("pre.a") } else { 0 },
            pre_a0: if engineered { off("pre.a0") } else { 0 },
            pre_b: if engineered { off("pre.b") } else { 0 },
            pre_b0: if engineered { off("pre.b0") } else { 0 },
            pre_c: if engineered && spec.is_two_d() { off("pre.c") } else { 0 },
            pre_c0: if engineered && spec.is_two_d() { off("pre.c0") } else { 0 },
            dense,
            out_w: off("out.w"),
            out_b: off("out.b"),
            width: spec.nodes_per_layer,
            h_labels: spec.h_labels(),
        })
    }
}

/// Per-point forward state, reused across points to avoid reallocation.
struct Workspace<J> {
    x: J,
    y: J,
    t: J,
    u: Vec<J>,
    v: Vec<J>,
    w: Vec<J>,
    ud: Vec<[f64; 3]>,
    vd: Vec<[f64; 3]>,
    wd: Vec<[f64; 3]>,
    e: Vec<J>,
    s: Vec<J>,
    sy: Vec<J>,
    es: Vec<J>,
    layer_in: Vec<Vec<J>>,
    z: Vec<Vec<J>>,
    zd: Vec<Vec<[f64; 3]>>,
    adj: Vec<J>,
    adj_next: Vec<J>,
    clamp_hits: u64,
}

impl<J: JetScalar> Workspace<J> {
    fn new(spec: &NetworkSpec) -> Self {
        let f = if spec.architecture == ArchKind::Engineered {
            spec.engineered_feature_count
        } else {
            0
        };
        let w = spec.nodes_per_layer;
        let first_in = spec.first_dense_inputs();
        let zero = J::constant(0.0);
        let mut layer_in = Vec::with_capacity(spec.hidden_layers + 1);
        layer_in.push(vec![zero; first_in]);
        for _ in 0..spec.hidden_layers {
            layer_in.push(vec![zero; w]);
        }
        Workspace {
            x: zero,
            y: zero,
            t: zero,
            u: vec![zero; f],
            v: vec![zero; f],
            w: vec![zero; f],
            ud: vec![[0.0; 3]; f],
            vd: vec![[0.0; 3]; f],
            wd: vec![[0.0; 3]; f],
            e: vec![zero; f],
            s: vec![zero; f],
            sy: vec![zero; f],
            es: vec![zero; f],
            layer_in,
            z: vec![vec![zero; w]; spec.hidden_layers],
            zd: vec![vec![[0.0; 3]; w]; spec.hidden_layers],
            adj: vec![zero; first_in.max(w)],
            adj_next: vec![zero; first_in.max(w)],
            clamp_hits: 0,
        }
    }
}

/// Forward pass; fills the workspace and returns the output jet.
fn forward<J: JetScalar>(net: &ResolvedNet, point: &InputPoint, ws: &mut Workspace<J>) -> J {
    let two_d = net.spec.is_two_d();
    ws.x = J::seed(point.x, SeedDir::X);
    ws.t = J::seed(point.t, SeedDir::T);
    if two_d {
        ws.y = J::seed(point.y.expect("2D spec needs a y coordinate"), SeedDir::Y);
    }
    let h_value = |label: InputLabel| match label {
        InputLabel::H1 => point.h1,
        InputLabel::H2 => point.h2,
        _ => unreachable!(),
    };

    match net.spec.architecture {
        ArchKind::Engineered => {
            let vals = net.vals;
            for i in 0..net.features {
                let u = J::constant(vals[net.pre_a0 + i]).madd(vals[net.pre_a + i], ws.t);
                let (e, ud) = if u.value() > EXP_CLAMP {
                    ws.clamp_hits += 1;
                    (J::constant(EXP_CLAMP.exp()), [0.0; 3])
                } else {
                    let ev = u.value().exp();
                    (u.chain(ev, ev, ev), [ev, ev, ev])
                };
                let v = J::constant(vals[net.pre_b0 + i]).madd(vals[net.pre_b + i], ws.x);
                let (sv, cv) = v.value().sin_cos();
                let s = v.chain(sv, cv, -sv);
                ws.u[i] = u;
                ws.v[i] = v;
                ws.ud[i] = ud;
                ws.vd[i] = [cv, -sv, -cv];
                ws.e[i] = e;
                ws.s[i] = s;
                let feat = if two_d {
                    let wj = J::constant(vals[net.pre_c0 + i]).madd(vals[net.pre_c + i], ws.y);
                    let (sw, cw) = wj.value().sin_cos();
                    let syj = wj.chain(sw, cw, -sw);
                    let es = e.mul(s);
                    ws.w[i] = wj;
                    ws.wd[i] = [cw, -sw, -cw];
                    ws.sy[i] = syj;
                    ws.es[i] = es;
                    es.mul(syj)
                } else {
                    e.mul(s)
                };
                ws.layer_in[0][i] = feat;
            }
            for (k, &label) in net.h_labels.iter().enumerate() {
                ws.layer_in[0][net.features + k] = J::constant(h_value(label));
            }
        }
        ArchKind::Plain => {
            for (k, &label) in net.spec.input_labels.iter().enumerate() {
                ws.layer_in[0][k] = match label {
                    InputLabel::X => ws.x,
                    InputLabel::Y => ws.y,
                    InputLabel::T => ws.t,
                    InputLabel::H1 | InputLabel::H2 => J::constant(h_value(label)),
                };
            }
        }
    }

    let act = net.spec.activation;
    for (l, &(w_off, b_off, fan_in)) in net.dense.iter().enumerate() {
        for j in 0..net.width {
            let mut z = J::constant(net.vals[b_off + j]);
            let row = w_off + j * fan_in;
            for k in 0..fan_in {
                z = z.madd(net.vals[row + k], ws.layer_in[l][k]);
            }
            let (g, gp, gpp, gppp) = act.derivs(z.value());
            ws.z[l][j] = z;
            ws.zd[l][j] = [gp, gpp, gppp];
            ws.layer_in[l + 1][j] = z.chain(g, gp, gpp);
        }
    }

    let last = net.dense.len();
    let mut out = J::constant(net.vals[net.out_b]);
    for k in 0..net.width {
        out = out.madd(net.vals[net.out_w + k], ws.layer_in[last][k]);
    }
    out
}

/// Backward pass: accumulate d(seedᵀ · output-jet)/dθ into `grad`.
fn backward<J: JetScalar>(net: &ResolvedNet, ws: &mut Workspace<J>, seed: J, grad: &mut [f64]) {
    let last = net.dense.len();
    grad[net.out_b] += seed.value();
    for k in 0..net.width {
        grad[net.out_w + k] += seed.dot(ws.layer_in[last][k]);
        ws.adj[k] = seed.scale(net.vals[net.out_w + k]);
    }

    for l in (0..net.dense.len()).rev() {
        let (w_off, b_off, fan_in) = net.dense[l];
        for slot in ws.adj_next.iter_mut().take(fan_in) {
            *slot = J::constant(0.0);
        }
        for j in 0..net.width {
            let zbar = J::chain_adjoint(ws.adj[j], ws.z[l][j], ws.zd[l][j]);
            grad[b_off + j] += zbar.value();
            let row = w_off + j * fan_in;
            for k in 0..fan_in {
                grad[row + k] += zbar.dot(ws.layer_in[l][k]);
                ws.adj_next[k] = ws.adj_next[k].madd(net.vals[row + k], zbar);
            }
        }
        std::mem::swap(&mut ws.adj, &mut ws.adj_next);
    }

    if net.spec.architecture == ArchKind::Engineered {
        let two_d = net.spec.is_two_d();
        for i in 0..net.features {
            let featbar = ws.adj[i];
            let (ebar, sbar) = if two_d {
                let esbar = J::mul_adjoint(featbar, ws.sy[i]);
                let sybar = J::mul_adjoint(featbar, ws.es[i]);
                let wbar = J::chain_adjoint(sybar, ws.w[i], ws.wd[i]);
                grad[net.pre_c + i] += wbar.dot(ws.y);
                grad[net.pre_c0 + i] += wbar.value();
                (J::mul_adjoint(esbar, ws.s[i]), J::mul_adjoint(esbar, ws.e[i]))
            } else {
                (J::mul_adjoint(featbar, ws.s[i]), J::mul_adjoint(featbar, ws.e[i]))
            };
            let ubar = J::chain_adjoint(ebar, ws.u[i], ws.ud[i]);
            grad[net.pre_a + i] += ubar.dot(ws.t);
            grad[net.pre_a0 + i] += ubar.value();
            let vbar = J::chain_adjoint(sbar, ws.v[i], ws.vd[i]);
            grad[net.pre_b + i] += vbar.dot(ws.x);
            grad[net.pre_b0 + i] += vbar.value();
        }
    }
    // plain architecture: layer-0 adjoints belong to input leaves, no parameters
}

/// Evaluate the network at `point`, returning the value and the requested
/// analytic input derivatives. Deterministic for fixed inputs.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &ParamStore,
    point: &InputPoint,
    requests: &[DerivLabel],
) -> Result<EvalResult> {
    point.validate()?;
    let two_d = spec.is_two_d();
    for r in requests {
        if matches!(r, DerivLabel::DDy | DerivLabel::D2Dy2) && !two_d {
            return Err(CoreError::Request(format!(
                "{r:?} is not available for a 1D network"
            )));
        }
    }
    if two_d && point.y.is_none() {
        return Err(CoreError::contract("2D network evaluated without a y coordinate"));
    }
    let net = ResolvedNet::new(spec, params)?;
    let parts = if two_d {
        let mut ws = Workspace::<Jet2>::new(spec);
        let out = forward(&net, point, &mut ws);
        finite_check(&net, &ws)?;
        out.parts()
    } else {
        let mut ws = Workspace::<Jet1>::new(spec);
        let out = forward(&net, point, &mut ws);
        finite_check(&net, &ws)?;
        out.parts()
    };
    let mut result = EvalResult { value: parts.v, ..EvalResult::default() };
    for r in requests {
        match r {
            DerivLabel::DDx => result.d_dx = Some(parts.dx),
            DerivLabel::DDt => result.d_dt = Some(parts.dt),
            DerivLabel::D2Dx2 => result.d2_dx2 = Some(parts.dxx),
            DerivLabel::DDy => result.d_dy = Some(parts.dy),
            DerivLabel::D2Dy2 => result.d2_dy2 = Some(parts.dyy),
        }
    }
    Ok(result)
}

fn finite_check<J: JetScalar>(net: &ResolvedNet, ws: &Workspace<J>) -> Result<()> {
    for (l, zs) in ws.z.iter().enumerate() {
        if zs.iter().any(|z| !z.is_finite()) {
            return Err(CoreError::numeric(
                format!("dense{l}.w"),
                "non-finite pre-activation",
            ));
        }
    }
    Ok(())
}

/// Value-only forward pass for inference (sweeps, heat maps, comparisons).
pub fn forward_value(spec: &NetworkSpec, params: &ParamStore, point: &InputPoint) -> Result<f64> {
    point.validate()?;
    let net = ResolvedNet::new(spec, params)?;
    let mut ws = Workspace::<f64>::new(spec);
    Ok(forward(&net, point, &mut ws))
}

/// Reusable buffer for batched inference.
pub struct Predictor<'a> {
    net: ResolvedNet<'a>,
    ws: Workspace<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(spec: &'a NetworkSpec, params: &'a ParamStore) -> Result<Self> {
        let net = ResolvedNet::new(spec, params)?;
        let ws = Workspace::<f64>::new(spec);
        Ok(Self { net, ws })
    }

    pub fn value(&mut self, point: &InputPoint) -> f64 {
        forward(&self.net, point, &mut self.ws)
    }
}

/// Gradient of the λ-weighted composite loss over a batch, with the per-term
/// breakdown computed along the way.
pub struct LossGradient {
    pub gradient: Vec<f64>,
    pub breakdown: LossBreakdown,
    /// Number of engineered-feature exponent clamps hit in this batch.
    pub clamp_hits: u64,
}

/// Backpropagate the composite loss of Eq.-style residuals over a collocation
/// batch. `lambdas` must align with `def.term_kinds()`. The reduction order
/// over points is fixed, so results are deterministic.
pub fn loss_gradient(
    spec: &NetworkSpec,
    params: &ParamStore,
    batch: &CollocationBatch,
    def: &LossDefinition,
    lambdas: &[f64],
) -> Result<LossGradient> {
    if spec.is_two_d() {
        loss_gradient_impl::<Jet2>(spec, params, batch, def, lambdas)
    } else {
        loss_gradient_impl::<Jet1>(spec, params, batch, def, lambdas)
    }
}

fn loss_gradient_impl<J: JetScalar>(
    spec: &NetworkSpec,
    params: &ParamStore,
    batch: &CollocationBatch,
    def: &LossDefinition,
    lambdas: &[f64],
) -> Result<LossGradient> {
    let terms = def.term_kinds();
    if lambdas.len() != terms.len() {
        return Err(CoreError::contract(format!(
            "{} lambdas supplied for {} loss terms",
            lambdas.len(),
            terms.len()
        )));
    }
    let net = ResolvedNet::new(spec, params)?;
    let mut ws = Workspace::<J>::new(spec);
    let n_params = params.len();
    let mut term_grads = vec![vec![0.0_f64; n_params]; terms.len()];
    let mut losses = vec![0.0_f64; terms.len()];

    for (ti, term) in terms.iter().enumerate() {
        let points = batch.points_for(*term).ok_or_else(|| {
            CoreError::contract(format!("batch has no point list for {term:?}"))
        })?;
        if points.is_empty() {
            return Err(CoreError::contract(format!("empty point list for {term:?}")));
        }
        let inv_n = 1.0 / points.len() as f64;
        let mut acc = 0.0;
        let grad = &mut term_grads[ti];
        for p in points {
            let out = forward(&net, p, &mut ws);
            let parts = out.parts();
            let (residual, mut seed_parts) = residual_and_seed(*term, &parts, p, def)?;
            acc += residual * residual;
            let w = 2.0 * residual * inv_n;
            seed_parts.v *= w;
            seed_parts.dx *= w;
            seed_parts.dy *= w;
            seed_parts.dt *= w;
            seed_parts.dxx *= w;
            seed_parts.dyy *= w;
            backward(&net, &mut ws, J::from_parts(seed_parts), grad);
        }
        losses[ti] = acc * inv_n;
    }

    if losses.iter().any(|l| !l.is_finite()) {
        let detail = terms
            .iter()
            .zip(&losses)
            .map(|(t, l)| format!("{}={l:.3e}", t.name()))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(CoreError::numeric("composite loss", detail));
    }

    let breakdown = LossBreakdown::new(terms.clone(), losses, lambdas.to_vec());
    let mut gradient = vec![0.0_f64; n_params];
    for (ti, tg) in term_grads.iter().enumerate() {
        let lam = lambdas[ti];
        for (g, t) in gradient.iter_mut().zip(tg) {
            *g += lam * t;
        }
    }
    Ok(LossGradient { gradient, breakdown, clamp_hits: ws.clamp_hits })
}

/// Residual value and its derivative with respect to the output-jet
/// components (unweighted seed) for one point of one loss term.
fn residual_and_seed(
    term: TermKind,
    parts: &JetParts,
    point: &InputPoint,
    def: &LossDefinition,
) -> Result<(f64, JetParts)> {
    match term {
        TermKind::Pde => pde_residual_parts(parts, &def.pde),
        TermKind::Initial => {
            let t_inf0 = def.air_hat_at(0.0)?;
            Ok(ic_residual_parts(parts, t_inf0))
        }
        TermKind::Side(side) => {
            let t_inf = def.air_hat_at(point.t)?;
            bc_residual_parts(side, parts, point, t_inf, def)
        }
    }
}

/// Adam optimizer accumulators; one pair of moments per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction. `params` and `state` are updated in
/// place; `state.step_count` is incremented.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(CoreError::contract(format!(
            "adam_step length mismatch: params {n}, grads {}, moments {}",
            grads.len(),
            state.first_moment.len()
        )));
    }
    if !(learning_rate > 0.0) {
        return Err(CoreError::contract("learning rate must be > 0"));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let values = params.values_mut();
    for i in 0..n {
        let g = grads[i];
        state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
        state.second_moment[i] =
            state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.first_moment[i] / bias1;
        let v_hat = state.second_moment[i] / bias2;
        values[i] -= learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_glorot, ArchKind, NetworkSpec};

    /// plain 1-hidden-unit network tuned so ELU stays in its linear region:
    /// f = 2x + 3t + 1.
    fn linear_net() -> (NetworkSpec, ParamStore) {
        let spec = NetworkSpec {
            architecture: ArchKind::Plain,
            input_labels: vec![InputLabel::X, InputLabel::T],
            hidden_layers: 1,
            nodes_per_layer: 1,
            engineered_feature_count: 0,
            activation: Activation::Elu,
        };
        let layout = spec.layout();
        let mut vals = vec![0.0; layout.total];
        vals[layout.offset("dense0.w")] = 2.0;
        vals[layout.offset("dense0.w") + 1] = 3.0;
        vals[layout.offset("dense0.b")] = 10.0;
        vals[layout.offset("out.w")] = 1.0;
        vals[layout.offset("out.b")] = -9.0;
        (spec.clone(), ParamStore::new(vals, layout).unwrap())
    }

    /// engineered single-feature network passing exp(−t̂)·sin(x̂) straight to
    /// the output (ELU shifted into its identity region).
    fn single_feature_net(a: f64, a0: f64, b: f64, b0: f64) -> (NetworkSpec, ParamStore) {
        let spec = NetworkSpec {
            architecture: ArchKind::Engineered,
            input_labels: vec![InputLabel::X, InputLabel::T],
            hidden_layers: 1,
            nodes_per_layer: 1,
            engineered_feature_count: 1,
            activation: Activation::Elu,
        };
        let layout = spec.layout();
        let mut vals = vec![0.0; layout.total];
        vals[layout.offset("pre.a")] = a;
        vals[layout.offset("pre.a0")] = a0;
        vals[layout.offset("pre.b")] = b;
        vals[layout.offset("pre.b0")] = b0;
        vals[layout.offset("dense0.w")] = 1.0;
        vals[layout.offset("dense0.b")] = 10.0;
        vals[layout.offset("out.w")] = 1.0;
        vals[layout.offset("out.b")] = -10.0;
        (spec.clone(), ParamStore::new(vals, layout).unwrap())
    }

    const ALL_1D: [DerivLabel; 3] = [DerivLabel::DDx, DerivLabel::DDt, DerivLabel::D2Dx2];

    #[test]
    fn linear_network_derivatives() {
        let (spec, params) = linear_net();
        let p = InputPoint::one_d(1.0, 1.0, 1.0, 1.0);
        let r = evaluate(&spec, &params, &p, &ALL_1D).unwrap();
        assert!((r.value - 6.0).abs() < 1e-14);
        assert!((r.d_dx.unwrap() - 2.0).abs() < 1e-14);
        assert!((r.d_dt.unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(r.d2_dx2.unwrap(), 0.0);
    }

    #[test]
    fn single_feature_matches_hand_derivatives() {
        // f = exp(−t̂)·sin(x̂): at (0,0) value 0, ∂x = 1, ∂xx = 0, ∂t = 0
        let (spec, params) = single_feature_net(-1.0, 0.0, 1.0, 0.0);
        let p = InputPoint::one_d(0.0, 0.0, 1.0, 1.0);
        let r = evaluate(&spec, &params, &p, &ALL_1D).unwrap();
        assert!(r.value.abs() < 1e-15);
        assert!((r.d_dx.unwrap() - 1.0).abs() < 1e-14);
        assert!(r.d2_dx2.unwrap().abs() < 1e-14);
        assert!(r.d_dt.unwrap().abs() < 1e-15);
    }

    #[test]
    fn engineered_feature_identities() {
        // ∂feat/∂t̂ = a·feat and ∂²feat/∂x̂² = −b²·feat, to 1e-10 relative
        let (a, b) = (-0.8, 2.3);
        let (spec, params) = single_feature_net(a, 0.1, b, 0.4);
        for &(x, t) in &[(0.2, 0.1), (0.9, 0.8), (0.5, 1.0)] {
            let p = InputPoint::one_d(x, t, 1.0, 1.0);
            let r = evaluate(&spec, &params, &p, &ALL_1D).unwrap();
            let feat = r.value;
            assert!(
                (r.d_dt.unwrap() - a * feat).abs() <= 1e-10 * feat.abs().max(1e-3),
                "dt identity failed at ({x},{t})"
            );
            assert!(
                (r.d2_dx2.unwrap() + b * b * feat).abs() <= 1e-10 * feat.abs().max(1e-3),
                "dxx identity failed at ({x},{t})"
            );
        }
    }

    #[test]
    fn zero_output_weights_give_constant_bias() {
        let spec = NetworkSpec::engineered(vec![InputLabel::X, InputLabel::T]);
        let mut params = init_glorot(&spec, 3).unwrap();
        let layout = spec.layout();
        let out_w = layout.offset("out.w");
        for v in &mut params.values_mut()[out_w..out_w + spec.nodes_per_layer] {
            *v = 0.0;
        }
        params.values_mut()[layout.offset("out.b")] = 0.37;
        for &(x, t) in &[(0.0, 0.0), (0.5, 0.3), (1.0, 1.0)] {
            let p = InputPoint::one_d(x, t, 1.0, 0.5);
            let r = evaluate(&spec, &params, &p, &ALL_1D).unwrap();
            assert_eq!(r.value, 0.37);
            assert_eq!(r.d_dx.unwrap(), 0.0);
            assert_eq!(r.d_dt.unwrap(), 0.0);
            assert_eq!(r.d2_dx2.unwrap(), 0.0);
        }
    }

    #[test]
    fn relu_x_path_has_zero_second_derivative() {
        let mut spec = NetworkSpec::plain(vec![InputLabel::X, InputLabel::T]);
        spec.activation = Activation::Relu;
        let params = init_glorot(&spec, 11).unwrap();
        for i in 0..50 {
            let p = InputPoint::one_d(0.02 * i as f64, 0.013 * i as f64, 1.0, 1.0);
            let r = evaluate(&spec, &params, &p, &[DerivLabel::D2Dx2]).unwrap();
            assert_eq!(r.d2_dx2.unwrap(), 0.0);
        }
    }

    #[test]
    fn evaluate_is_bit_deterministic_and_matches_value_forward() {
        let spec = NetworkSpec::engineered(vec![
            InputLabel::X,
            InputLabel::T,
            InputLabel::H1,
            InputLabel::H2,
        ]);
        let params = init_glorot(&spec, 99).unwrap();
        let p = InputPoint::one_d(0.31, 0.77, 1.2, 0.6);
        let r1 = evaluate(&spec, &params, &p, &ALL_1D).unwrap();
        let r2 = evaluate(&spec, &params, &p, &ALL_1D).unwrap();
        assert_eq!(r1, r2);
        let v = forward_value(&spec, &params, &p).unwrap();
        assert_eq!(v.to_bits(), r1.value.to_bits());
    }

    #[test]
    fn y_derivative_request_rejected_in_1d() {
        let (spec, params) = linear_net();
        let p = InputPoint::one_d(0.1, 0.1, 1.0, 1.0);
        let err = evaluate(&spec, &params, &p, &[DerivLabel::DDy]).unwrap_err();
        assert!(matches!(err, CoreError::Request(_)));
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let (_, mut params) = linear_net();
        let before = params.values().to_vec();
        let mut state = AdamState::new(params.len());
        adam_step(&mut params, &vec![0.0; before.len()], &mut state, 1e-3).unwrap();
        assert_eq!(params.values(), &before[..]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let (_, mut params) = linear_net();
        let n = params.len();
        let before = params.values().to_vec();
        let mut grads = vec![0.0; n];
        grads[0] = 0.73;
        grads[1] = -1.9;
        let mut state = AdamState::new(n);
        let lr = 1e-4;
        adam_step(&mut params, &grads, &mut state, lr).unwrap();
        let after = params.values();
        assert!((after[0] - (before[0] - lr)).abs() < 1e-6 * lr);
        assert!((after[1] - (before[1] + lr)).abs() < 1e-6 * lr);
        for i in 2..n {
            assert_eq!(after[i], before[i]);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // loss = ½ w², gradient = w
        let layout = Layout {
            slots: vec![crate::network::Slot { name: "w".into(), offset: 0, len: 1 }],
            total: 1,
        };
        let mut params = ParamStore::new(vec![1.0], layout).unwrap();
        let mut state = AdamState::new(1);
        let mut last = 0.5;
        for _ in 0..50 {
            let w = params.values()[0];
            adam_step(&mut params, &[w], &mut state, 0.05).unwrap();
            let loss = 0.5 * params.values()[0] * params.values()[0];
            assert!(loss <= last + 1e-12);
            last = loss;
        }
        assert!(last < 0.5);
    }

    #[test]
    fn adam_rejects_length_mismatch() {
        let (_, mut params) = linear_net();
        let mut state = AdamState::new(params.len());
        let err = adam_step(&mut params, &[0.0; 2], &mut state, 1e-3).unwrap_err();
        assert!(matches!(err, CoreError::Contract(_)));
    }
}
