//! Network architectures: a plain dense stack and the physics-informed
//! variant whose first layer is built from trainable exp(a·t̂ + a₀)·sin(b·x̂ + b₀)
//! features (times a third sin pre-layer in ŷ for 2D).

use crate::autodiff::ParamStore;
use crate::error::{CoreError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Plain,
    Engineered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLabel {
    X,
    Y,
    T,
    H1,
    H2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Relu,
    Tanh,
}

impl Activation {
    /// Value and first three derivatives at `z`. The z = 0 tie goes to the
    /// non-negative branch for ELU and ReLU.
    #[inline]
    pub fn derivs(self, z: f64) -> (f64, f64, f64, f64) {
        match self {
            Activation::Elu => {
                if z >= 0.0 {
                    (z, 1.0, 0.0, 0.0)
                } else {
                    let e = z.exp();
                    (e - 1.0, e, e, e)
                }
            }
            Activation::Relu => {
                if z >= 0.0 {
                    (z, 1.0, 0.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0, 0.0)
                }
            }
            Activation::Tanh => {
                let g = z.tanh();
                let gp = 1.0 - g * g;
                let gpp = -2.0 * g * gp;
                let gppp = -2.0 * (gp * gp + g * gpp);
                (g, gp, gpp, gppp)
            }
        }
    }

    pub fn value(self, z: f64) -> f64 {
        self.derivs(z).0
    }
}

/// Architecture description; together with a seed it fully determines the
/// initial [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub architecture: ArchKind,
    pub input_labels: Vec<InputLabel>,
    pub hidden_layers: usize,
    pub nodes_per_layer: usize,
    pub engineered_feature_count: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    /// The paper-default engineered network: 6×32 dense stack fed by 32
    /// exp·sin features, ELU activations.
    pub fn engineered(input_labels: Vec<InputLabel>) -> Self {
        Self {
            architecture: ArchKind::Engineered,
            input_labels,
            hidden_layers: 6,
            nodes_per_layer: 32,
            engineered_feature_count: 32,
            activation: Activation::Elu,
        }
    }

    pub fn plain(input_labels: Vec<InputLabel>) -> Self {
        Self {
            architecture: ArchKind::Plain,
            input_labels,
            hidden_layers: 6,
            nodes_per_layer: 32,
            engineered_feature_count: 0,
            activation: Activation::Elu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers < 1 || self.nodes_per_layer < 1 {
            return Err(CoreError::contract("need hidden_layers >= 1 and nodes_per_layer >= 1"));
        }
        let mut seen = Vec::new();
        for l in &self.input_labels {
            if seen.contains(l) {
                return Err(CoreError::contract("duplicate input label"));
            }
            seen.push(*l);
        }
        if self.architecture == ArchKind::Engineered {
            if self.engineered_feature_count < 1 {
                return Err(CoreError::contract("engineered architecture needs features >= 1"));
            }
            if !self.has_label(InputLabel::X) || !self.has_label(InputLabel::T) {
                return Err(CoreError::contract(
                    "engineered architecture requires x and t inputs",
                ));
            }
        }
        if self.input_labels.is_empty() {
            return Err(CoreError::contract("network needs at least one input"));
        }
        Ok(())
    }

    pub fn has_label(&self, label: InputLabel) -> bool {
        self.input_labels.contains(&label)
    }

    pub fn is_two_d(&self) -> bool {
        self.has_label(InputLabel::Y)
    }

    /// h labels routed past the pre-layers, in declaration order.
    pub fn h_labels(&self) -> Vec<InputLabel> {
        self.input_labels
            .iter()
            .copied()
            .filter(|l| matches!(l, InputLabel::H1 | InputLabel::H2))
            .collect()
    }

    /// Width of the first dense layer's input vector.
    pub fn first_dense_inputs(&self) -> usize {
        match self.architecture {
            ArchKind::Plain => self.input_labels.len(),
            ArchKind::Engineered => self.engineered_feature_count + self.h_labels().len(),
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::for_spec(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// One named contiguous slot of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Named slot layout covering the whole parameter vector without gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub total: usize,
}

impl Layout {
    pub fn for_spec(spec: &NetworkSpec) -> Layout {
        let mut slots = Vec::new();
        let mut offset = 0usize;
        let mut push = |slots: &mut Vec<Slot>, name: String, len: usize| {
            slots.push(Slot { name, offset, len });
            offset += len;
        };
        let w = spec.nodes_per_layer;
        if spec.architecture == ArchKind::Engineered {
            let f = spec.engineered_feature_count;
            push(&mut slots, "pre.a".into(), f);
            push(&mut slots, "pre.a0".into(), f);
            push(&mut slots, "pre.b".into(), f);
            push(&mut slots, "pre.b0".into(), f);
            if spec.is_two_d() {
                push(&mut slots, "pre.c".into(), f);
                push(&mut slots, "pre.c0".into(), f);
            }
        }
        let mut inputs = spec.first_dense_inputs();
        for l in 0..spec.hidden_layers {
            push(&mut slots, format!("dense{l}.w"), inputs * w);
            push(&mut slots, format!("dense{l}.b"), w);
            inputs = w;
        }
        push(&mut slots, "out.w".into(), w);
        push(&mut slots, "out.b".into(), 1);
        Layout { slots, total: offset }
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn offset(&self, name: &str) -> usize {
        self.slot(name)
            .unwrap_or_else(|| panic!("layout has no slot `{name}`"))
            .offset
    }

    /// The slot containing a flat index, for diagnostics.
    pub fn slot_of_index(&self, idx: usize) -> Option<&Slot> {
        self.slots
            .iter()
            .find(|s| idx >= s.offset && idx < s.offset + s.len)
    }

    pub fn validate(&self) -> Result<()> {
        let mut expected = 0usize;
        for s in &self.slots {
            if s.offset != expected {
                return Err(CoreError::contract(format!(
                    "slot `{}` starts at {} but {} expected",
                    s.name, s.offset, expected
                )));
            }
            expected += s.len;
        }
        if expected != self.total {
            return Err(CoreError::contract("slot layout does not cover the parameter vector"));
        }
        Ok(())
    }
}

/// Glorot-uniform initialization: dense weights uniform on
/// ±sqrt(6/(fan_in + fan_out)), biases zero. Each pre-layer is treated as a
/// 1 → feature_count dense map for its fan counts. Deterministic per seed.
pub fn init_glorot(spec: &NetworkSpec, seed: u64) -> Result<ParamStore> {
    spec.validate()?;
    let layout = spec.layout();
    let mut values = vec![0.0_f64; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |values: &mut [f64], slot: &Slot, limit: f64, rng: &mut ChaCha8Rng| {
        for v in &mut values[slot.offset..slot.offset + slot.len] {
            *v = limit * (2.0 * rng.gen::<f64>() - 1.0);
        }
    };
    let w = spec.nodes_per_layer as f64;
    let f = spec.engineered_feature_count as f64;
    let pre_limit = (6.0 / (1.0 + f)).sqrt();
    for slot in layout.slots.clone() {
        let limit = match slot.name.as_str() {
            "pre.a" | "pre.b" | "pre.c" => pre_limit,
            "pre.a0" | "pre.b0" | "pre.c0" => continue, // biases stay zero
            "out.w" => (6.0 / (w + 1.0)).sqrt(),
            "out.b" => continue,
            name if name.ends_with(".b") => continue,
            name => {
                // denseN.w: fan_in is the slot size divided by the width
                debug_assert!(name.ends_with(".w"));
                let fan_in = (slot.len / spec.nodes_per_layer) as f64;
                (6.0 / (fan_in + w)).sqrt()
            }
        };
        fill(&mut values, &slot, limit, &mut rng);
    }
    ParamStore::new(values, layout)
}

/// Evaluate the engineered feature vector at (x̂, t̂[, ŷ]) for given pre-layer
/// parameters: feature_i = exp(a_i t̂ + a0_i)·sin(b_i x̂ + b0_i)[·sin(c_i ŷ + c0_i)].
/// The exponent is clamped at [`EXP_CLAMP`] to guard against overflow from
/// untrained weights.
pub fn engineered_layer(
    spec: &NetworkSpec,
    params: &ParamStore,
    x_hat: f64,
    t_hat: f64,
    y_hat: Option<f64>,
) -> Result<Vec<f64>> {
    if spec.architecture != ArchKind::Engineered {
        return Err(CoreError::contract("engineered_layer needs the engineered architecture"));
    }
    if spec.is_two_d() != y_hat.is_some() {
        return Err(CoreError::contract("ŷ must be supplied exactly for 2D specs"));
    }
    let layout = params.layout();
    let f = spec.engineered_feature_count;
    let vals = params.values();
    let (a, a0) = (layout.offset("pre.a"), layout.offset("pre.a0"));
    let (b, b0) = (layout.offset("pre.b"), layout.offset("pre.b0"));
    let mut out = Vec::with_capacity(f);
    for i in 0..f {
        let exponent = (vals[a + i] * t_hat + vals[a0 + i]).min(EXP_CLAMP);
        let mut feature = exponent.exp() * (vals[b + i] * x_hat + vals[b0 + i]).sin();
        if let Some(y) = y_hat {
            let (c, c0) = (layout.offset("pre.c"), layout.offset("pre.c0"));
            feature *= (vals[c + i] * y + vals[c0 + i]).sin();
        }
        out.push(feature);
    }
    Ok(out)
}

/// Upper clamp for the exponential pre-layer argument.
pub const EXP_CLAMP: f64 = 30.0;

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_1d() -> NetworkSpec {
        NetworkSpec::engineered(vec![InputLabel::X, InputLabel::T])
    }

    #[test]
    fn param_count_matches_formula() {
        // engineered, 1D, no h inputs: 4F + F·W + W + (H−1)(W²+W) + W + 1
        let s = spec_1d();
        let (f, w, h) = (32usize, 32usize, 6usize);
        let expected = 4 * f + f * w + w + (h - 1) * (w * w + w) + w + 1;
        assert_eq!(s.param_count(), expected);

        // with h1, h2 inputs: first layer fan-in grows by 2
        let s4 = NetworkSpec::engineered(vec![
            InputLabel::X,
            InputLabel::T,
            InputLabel::H1,
            InputLabel::H2,
        ]);
        assert_eq!(s4.param_count(), expected + 2 * w);

        // 2D adds a third pre-layer pair
        let s2d = NetworkSpec::engineered(vec![InputLabel::X, InputLabel::Y, InputLabel::T]);
        assert_eq!(s2d.param_count(), expected + 2 * f);

        // plain 2-input: n·W + W + (H−1)(W²+W) + W + 1
        let p = NetworkSpec::plain(vec![InputLabel::X, InputLabel::T]);
        assert_eq!(p.param_count(), 2 * w + w + (h - 1) * (w * w + w) + w + 1);
    }

    #[test]
    fn layout_covers_everything() {
        for spec in [
            spec_1d(),
            NetworkSpec::plain(vec![InputLabel::X, InputLabel::T, InputLabel::H1]),
            NetworkSpec::engineered(vec![InputLabel::X, InputLabel::Y, InputLabel::T]),
        ] {
            let layout = spec.layout();
            layout.validate().unwrap();
            assert_eq!(layout.total, spec.param_count());
        }
    }

    #[test]
    fn glorot_is_deterministic_and_bounded() {
        let spec = spec_1d();
        let p1 = init_glorot(&spec, 42).unwrap();
        let p2 = init_glorot(&spec, 42).unwrap();
        assert_eq!(p1.values(), p2.values());
        let p3 = init_glorot(&spec, 43).unwrap();
        assert_ne!(p1.values(), p3.values());

        // 32→32 layers bounded by sqrt(6/64)
        let bound = (6.0_f64 / 64.0).sqrt();
        let layout = spec.layout();
        for l in 1..spec.hidden_layers {
            let slot = layout.slot(&format!("dense{l}.w")).unwrap();
            for &v in &p1.values()[slot.offset..slot.offset + slot.len] {
                assert!(v.abs() <= bound, "weight {v} out of Glorot bound {bound}");
            }
        }
        // all biases exactly zero
        for slot in &layout.slots {
            if slot.name.ends_with('0') || slot.name.ends_with(".b") {
                for &v in &p1.values()[slot.offset..slot.offset + slot.len] {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn elu_closed_forms() {
        let (g, gp, _, _) = Activation::Elu.derivs(0.0);
        assert_eq!((g, gp), (0.0, 1.0));
        // approach from below: value → 0, slope → 1
        let (g, gp, gpp, _) = Activation::Elu.derivs(-1e-12);
        assert!(g.abs() < 1e-11 && (gp - 1.0).abs() < 1e-11 && (gpp - 1.0).abs() < 1e-11);

        let (g, _, gpp, _) = Activation::Elu.derivs(-1.0);
        let e1 = (-1.0_f64).exp();
        assert!((g - (e1 - 1.0)).abs() < 1e-15);
        assert!((gpp - e1).abs() < 1e-15);
    }

    #[test]
    fn relu_second_derivative_is_zero() {
        for &z in &[-5.0, -0.3, 0.2, 7.0] {
            let (_, _, gpp, gppp) = Activation::Relu.derivs(z);
            assert_eq!(gpp, 0.0);
            assert_eq!(gppp, 0.0);
        }
    }

    #[test]
    fn engineered_layer_closed_forms() {
        let mut spec = spec_1d();
        spec.engineered_feature_count = 1;
        spec.hidden_layers = 1;
        spec.nodes_per_layer = 1;
        let layout = spec.layout();
        let mut values = vec![0.0; layout.total];

        // a = a0 = 0, b = 1, b0 = 0 at b·x̂ = π/2 → exp(0)·sin(π/2) = 1
        values[layout.offset("pre.b")] = 1.0;
        let params = ParamStore::new(values.clone(), layout.clone()).unwrap();
        let f = engineered_layer(&spec, &params, std::f64::consts::FRAC_PI_2, 0.7, None).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-15);

        // sin argument zero → feature 0 for any t̂
        let f = engineered_layer(&spec, &params, 0.0, 0.3, None).unwrap();
        assert_eq!(f[0], 0.0);

        // a = −1, t̂ = 1, sin part 1 → e⁻¹
        values[layout.offset("pre.a")] = -1.0;
        values[layout.offset("pre.b0")] = std::f64::consts::FRAC_PI_2;
        values[layout.offset("pre.b")] = 0.0;
        let params = ParamStore::new(values, layout).unwrap();
        let f = engineered_layer(&spec, &params, 0.0, 1.0, None).unwrap();
        assert!((f[0] - (-1.0_f64).exp()).abs() < 1e-15, "{}", f[0]);
    }
}
