//! Parameter tensors and their canonical ordering.
//!
//! Every consumer that walks all tensors (optimizer, gradient check,
//! checkpoint serialization) uses [`Parameters::tensors`] /
//! [`Parameters::tensors_mut`], which yield `(name, view)` pairs in one
//! fixed, documented order:
//!
//! `tok_emb`, `pos_emb`, then per layer `ln1.g ln1.b attn.wq attn.bq
//! attn.wk attn.bk attn.wv attn.bv attn.wo attn.bo ln2.g ln2.b mlp.w1
//! mlp.b1 mlp.w2 mlp.b2`, then `lnf.g`, `lnf.b`.
//!
//! The output projection is tied to `tok_emb` and has no tensor of its own.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Float type the model is generic over (`f32` for training and inference,
/// `f64` inside the gradient check).
pub trait Scalar: NdFloat + FromPrimitive {
    fn of_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite constant")
    }
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_g: Array1<F>,
    pub ln1_b: Array1<F>,
    pub wq: Array2<F>,
    pub wk: Array2<F>,
    pub wv: Array2<F>,
    pub wo: Array2<F>,
    pub ln2_g: Array1<F>,
    pub ln2_b: Array1<F>,
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    pub tok_emb: Array2<F>,
    pub pos_emb: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
    pub lnf_g: Array1<F>,
    pub lnf_b: Array1<F>,
}

impl<F: Scalar> Parameters<F> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let layer = || LayerParams {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w1: Array2::zeros((d, 4 * d)),
            b1: Array1::zeros(4 * d),
            w2: Array2::zeros((4 * d, d)),
            b2: Array1::zeros(d),
        };
        Parameters {
            tok_emb: Array2::zeros((config.vocab_size, d)),
            pos_emb: Array2::zeros((config.context, d)),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
        }
    }

    /// Seeded initialization: normal(0, 0.02) weights and embeddings,
    /// zero biases, unit normalization gains. Samples are drawn in `f64`
    /// and converted, so the draw sequence is identical for every `F`.
    pub fn init(config: &ModelConfig) -> Self {
        Self::init_scaled(config, 1.0)
    }

    /// Initialization with the weight standard deviation scaled by
    /// `factor` (the gradient check uses a larger scale so attention
    /// gradients sit well above the finite-difference noise floor).
    pub fn init_scaled(config: &ModelConfig, factor: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Self::zeros(config);
        let std = 0.02 * factor;
        let mut fill_normal = |a: &mut ndarray::ArrayViewMutD<F>| {
            for x in a.iter_mut() {
                *x = F::of_f64(normal_sample(&mut rng) * std);
            }
        };
        for (name, mut view) in params.tensors_mut() {
            if decays(&name) {
                fill_normal(&mut view);
            } else if name.ends_with(".g") {
                view.fill(F::one());
            }
            // biases and normalization offsets stay zero
        }
        params
    }

    /// `(name, view)` pairs in the canonical tensor order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out: Vec<(String, ArrayViewD<'_, F>)> = Vec::new();
        out.push(("tok_emb".into(), self.tok_emb.view().into_dyn()));
        out.push(("pos_emb".into(), self.pos_emb.view().into_dyn()));
        for (i, layer) in self.layers.iter().enumerate() {
            macro_rules! push {
                ($suffix:literal, $field:ident) => {
                    out.push((format!("layer{i}.{}", $suffix), layer.$field.view().into_dyn()))
                };
            }
            push!("ln1.g", ln1_g);
            push!("ln1.b", ln1_b);
            push!("attn.wq", wq);
            push!("attn.wk", wk);
            push!("attn.wv", wv);
            push!("attn.wo", wo);
            push!("ln2.g", ln2_g);
            push!("ln2.b", ln2_b);
            push!("mlp.w1", w1);
            push!("mlp.b1", b1);
            push!("mlp.w2", w2);
            push!("mlp.b2", b2);
        }
        out.push(("lnf.g".into(), self.lnf_g.view().into_dyn()));
        out.push(("lnf.b".into(), self.lnf_b.view().into_dyn()));
        out
    }

    /// Mutable variant of [`Parameters::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let Parameters {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
        } = self;
        let mut out: Vec<(String, ArrayViewMutD<'_, F>)> = Vec::new();
        out.push(("tok_emb".into(), tok_emb.view_mut().into_dyn()));
        out.push(("pos_emb".into(), pos_emb.view_mut().into_dyn()));
        for (i, layer) in layers.iter_mut().enumerate() {
            macro_rules! push {
                ($suffix:literal, $field:ident) => {
                    out.push((
                        format!("layer{i}.{}", $suffix),
                        layer.$field.view_mut().into_dyn(),
                    ))
                };
            }
            push!("ln1.g", ln1_g);
            push!("ln1.b", ln1_b);
            push!("attn.wq", wq);
            push!("attn.wk", wk);
            push!("attn.wv", wv);
            push!("attn.wo", wo);
            push!("ln2.g", ln2_g);
            push!("ln2.b", ln2_b);
            push!("mlp.w1", w1);
            push!("mlp.b1", b1);
            push!("mlp.w2", w2);
            push!("mlp.b2", b2);
        }
        out.push(("lnf.g".into(), lnf_g.view_mut().into_dyn()));
        out.push(("lnf.b".into(), lnf_b.view_mut().into_dyn()));
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Errors with the offending tensor's name if any value is non-finite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        for (name, tensor) in self.tensors() {
            if tensor.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite {what} in tensor {name}"
                )));
            }
        }
        Ok(())
    }

    /// In-place `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Parameters<F>) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.zip_mut_with(&b, |x, y| *x = *x + *y);
        }
    }

    /// In-place scalar multiply.
    pub fn scale(&mut self, factor: F) {
        for (_, mut a) in self.tensors_mut() {
            a.mapv_inplace(|x| x * factor);
        }
    }

    pub fn cast<G: Scalar>(&self) -> Parameters<G> {
        let c1 = |a: &Array1<F>| a.mapv(|x| G::of_f64(x.as_f64()));
        let c2 = |a: &Array2<F>| a.mapv(|x| G::of_f64(x.as_f64()));
        Parameters {
            tok_emb: c2(&self.tok_emb),
            pos_emb: c2(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_g: c1(&l.ln1_g),
                    ln1_b: c1(&l.ln1_b),
                    wq: c2(&l.wq),
                    wk: c2(&l.wk),
                    wv: c2(&l.wv),
                    wo: c2(&l.wo),
                    ln2_g: c1(&l.ln2_g),
                    ln2_b: c1(&l.ln2_b),
                    w1: c2(&l.w1),
                    b1: c1(&l.b1),
                    w2: c2(&l.w2),
                    b2: c1(&l.b2),
                })
                .collect(),
            lnf_g: c1(&self.lnf_g),
            lnf_b: c1(&self.lnf_b),
        }
    }
}

/// Weight decay applies to weight matrices and embeddings, not to biases
/// or normalization parameters.
pub fn decays(name: &str) -> bool {
    name == "tok_emb"
        || name == "pos_emb"
        || name.contains(".w")
}

/// Box-Muller standard normal from a uniform stream; drawn in f64 so the
/// sequence is precision-independent.
fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}
