//! The four classifier architectures and the joint training objective.
//!
//! * `fcn`: dense 90 → 45 → softmax on one view.
//! * `cnn`: two conv/pool blocks on one view, flattened into the same dense head.
//! * `concat`: a conv branch per view, each projected to `proj_dim`, concatenated.
//! * `trio`: like `concat`, but each projection is modulated by a sigmoid gate,
//!   the gated features are pulled together by a canonical-correlation term,
//!   and the concatenation is refined by single-head self-attention over
//!   `token_dim`-wide tokens before the head.

mod check;
mod checkpoint;
mod layers;
mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use check::{check_model_gradients, GradProbe};
pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{branch_lengths, branch_width, CONV1_FILTERS, CONV2_FILTERS, HIDDEN1, HIDDEN2};
pub use loss::{cross_entropy, softmax_cross_entropy_grad, total_loss, PROB_FLOOR};

use crate::cca::{cca_grad, CcaConfig, CcaGrad};
use crate::error::{Error, Result};
use crate::nn::attention::AttentionCache;
use crate::nn::{Matrix, ParamStore, Real};
use layers::{ConvBranch, Dense, Gate, GateCache, Head, HeadCache, ProjectedBranch, ProjectedCache, TokenAttention};

/// Smallest single-view input width the convolutional stack accepts.
pub const MIN_CONV_INPUT: usize = 12;

/// Rows per chunk when running inference on large inputs.
const INFERENCE_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Fcn,
    Cnn,
    Concat,
    Trio,
}

impl Arch {
    pub fn is_fusion(self) -> bool {
        matches!(self, Arch::Concat | Arch::Trio)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Fcn => "fcn",
            Arch::Cnn => "cnn",
            Arch::Concat => "concat",
            Arch::Trio => "trio",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fcn" => Ok(Arch::Fcn),
            "cnn" => Ok(Arch::Cnn),
            "concat" => Ok(Arch::Concat),
            "trio" => Ok(Arch::Trio),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

fn default_proj_dim() -> usize {
    128
}
fn default_token_dim() -> usize {
    64
}
fn default_dropout() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub d_in_a: usize,
    /// Width of the second view; 0 for single-view architectures.
    #[serde(default)]
    pub d_in_b: usize,
    pub n_classes: usize,
    #[serde(default = "default_proj_dim")]
    pub proj_dim: usize,
    #[serde(default = "default_token_dim")]
    pub token_dim: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn new(arch: Arch, d_in_a: usize, d_in_b: usize, n_classes: usize) -> Self {
        ModelConfig {
            arch,
            d_in_a,
            d_in_b: if arch.is_fusion() { d_in_b } else { 0 },
            n_classes,
            proj_dim: default_proj_dim(),
            token_dim: default_token_dim(),
            dropout_rate: default_dropout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need ≥ 2 classes, got {}", self.n_classes)));
        }
        if self.d_in_a == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.arch != Arch::Fcn && self.d_in_a < MIN_CONV_INPUT {
            return Err(Error::Config(format!(
                "d_in too small: {} < {MIN_CONV_INPUT} for the convolutional branch",
                self.d_in_a
            )));
        }
        if self.arch.is_fusion() {
            if self.d_in_b < MIN_CONV_INPUT {
                return Err(Error::Config(format!(
                    "d_in too small: view B width {} < {MIN_CONV_INPUT}",
                    self.d_in_b
                )));
            }
            if self.proj_dim == 0 {
                return Err(Error::Config("proj_dim must be positive".into()));
            }
        } else if self.d_in_b != 0 {
            return Err(Error::Config(format!("{} is single-view; d_in_b must be 0", self.arch.name())));
        }
        if self.arch == Arch::Trio && (self.token_dim == 0 || !(2 * self.proj_dim).is_multiple_of(self.token_dim)) {
            return Err(Error::Config(format!(
                "2 * proj_dim = {} is not divisible by token_dim = {}",
                2 * self.proj_dim,
                self.token_dim
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Clone, Debug)]
enum Net {
    Fcn {
        head: Head,
    },
    Cnn {
        branch: ConvBranch,
        head: Head,
    },
    Concat {
        a: ProjectedBranch,
        b: ProjectedBranch,
        head: Head,
    },
    Trio {
        a: ProjectedBranch,
        b: ProjectedBranch,
        gate_a: Gate,
        gate_b: Gate,
        attn: TokenAttention,
        head: Head,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, intermediates recorded for `backward`, CCA term computed.
    Train,
    /// Deterministic inference.
    Eval,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub probs: Matrix<T>,
    /// Batch CCA value; present for `trio` in training mode.
    pub cca_value: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub ce: f64,
    pub cca: Option<f64>,
    pub total: f64,
}

struct FusionTape<T> {
    a: ProjectedCache<T>,
    b: ProjectedCache<T>,
}

enum TapeKind<T> {
    Fcn(HeadCache<T>),
    Cnn(layers::BranchCache<T>, HeadCache<T>),
    Concat(FusionTape<T>, HeadCache<T>),
    Trio {
        branches: FusionTape<T>,
        gates: (GateCache<T>, GateCache<T>),
        attn: Vec<AttentionCache<T>>,
        cca: CcaGrad<T>,
        head: HeadCache<T>,
    },
}

struct Tape<T> {
    probs: Matrix<T>,
    kind: TapeKind<T>,
}

/// A built classifier: configuration, parameters and the last training tape.
pub struct Model<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    net: Net,
    tape: Option<Tape<T>>,
    bypass_attention: bool,
}

impl<T: Real> Clone for Model<T> {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
            net: self.net.clone(),
            tape: None,
            bypass_attention: self.bypass_attention,
        }
    }
}

impl<T: Real> std::fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.params.count())
            .finish()
    }
}

fn split_cols<T: Real>(m: &Matrix<T>, at: usize) -> (Matrix<T>, Matrix<T>) {
    let left = Matrix::from_fn(m.rows(), at, |r, c| m[(r, c)]);
    let right = Matrix::from_fn(m.rows(), m.cols() - at, |r, c| m[(r, at + c)]);
    (left, right)
}

fn concat_cols<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut data = Vec::with_capacity(a.rows() * (a.cols() + b.cols()));
    for r in 0..a.rows() {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Matrix::new(a.rows(), a.cols() + b.cols(), data).expect("concat shape")
}

impl<T: Real> Model<T> {
    /// Build and initialise a model. All randomness comes from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.n_classes;
        let net = match config.arch {
            Arch::Fcn => Net::Fcn {
                head: Head::new(&mut store, &mut rng, config.d_in_a, c)?,
            },
            Arch::Cnn => {
                let branch = ConvBranch::new(&mut store, &mut rng, "a")?;
                let head = Head::new(&mut store, &mut rng, branch_width(config.d_in_a), c)?;
                Net::Cnn { branch, head }
            }
            Arch::Concat => {
                let a = ProjectedBranch::new(&mut store, &mut rng, "a", config.d_in_a, config.proj_dim)?;
                let b = ProjectedBranch::new(&mut store, &mut rng, "b", config.d_in_b, config.proj_dim)?;
                let head = Head::new(&mut store, &mut rng, 2 * config.proj_dim, c)?;
                Net::Concat { a, b, head }
            }
            Arch::Trio => {
                let a = ProjectedBranch::new(&mut store, &mut rng, "a", config.d_in_a, config.proj_dim)?;
                let b = ProjectedBranch::new(&mut store, &mut rng, "b", config.d_in_b, config.proj_dim)?;
                let gate_a = Gate::new(&mut store, &mut rng, "a.gate", config.proj_dim)?;
                let gate_b = Gate::new(&mut store, &mut rng, "b.gate", config.proj_dim)?;
                let attn = TokenAttention::new(&mut store, &mut rng, "attn", config.token_dim)?;
                let head = Head::new(&mut store, &mut rng, 2 * config.proj_dim, c)?;
                Net::Trio {
                    a,
                    b,
                    gate_a,
                    gate_b,
                    attn,
                    head,
                }
            }
        };
        Ok(Model {
            config: config.clone(),
            params: store,
            net,
            tape: None,
            bypass_attention: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Skip the attention block in `trio` (the concatenated features go straight
    /// to the head). Used to relate `trio` to `concat` in tests.
    #[doc(hidden)]
    pub fn set_attention_bypass(&mut self, bypass: bool) {
        self.bypass_attention = bypass;
    }

    fn check_inputs(&self, a: &Matrix<T>, b: Option<&Matrix<T>>) -> Result<()> {
        if a.cols() != self.config.d_in_a {
            return Err(Error::DimMismatch {
                what: "view A".into(),
                expected: self.config.d_in_a,
                actual: a.cols(),
            });
        }
        if self.config.arch.is_fusion() {
            let b = b.ok_or_else(|| Error::Config("fusion requires two views".into()))?;
            if b.cols() != self.config.d_in_b {
                return Err(Error::DimMismatch {
                    what: "view B".into(),
                    expected: self.config.d_in_b,
                    actual: b.cols(),
                });
            }
            if b.rows() != a.rows() {
                return Err(Error::Shape(format!("views have {} and {} rows", a.rows(), b.rows())));
            }
        }
        Ok(())
    }

    fn run<R: Rng>(
        &self,
        a: &Matrix<T>,
        b: Option<&Matrix<T>>,
        mode: Mode,
        cca_cfg: &CcaConfig,
        rng: &mut R,
    ) -> Result<(ForwardOutput<T>, Option<Tape<T>>)> {
        self.check_inputs(a, b)?;
        let train = mode == Mode::Train;
        let rate = self.config.dropout_rate;
        let store = &self.params;
        let (probs, cca_value, kind) = match &self.net {
            Net::Fcn { head } => {
                let (p, hc) = head.forward(store, a, rate, train, rng, train)?;
                (p, None, hc.map(TapeKind::Fcn))
            }
            Net::Cnn { branch, head } => {
                let (flat, bc) = branch.forward(store, a, train)?;
                let (p, hc) = head.forward(store, &flat, rate, train, rng, train)?;
                (p, None, bc.zip(hc).map(|(bc, hc)| TapeKind::Cnn(bc, hc)))
            }
            Net::Concat { a: ba, b: bb, head } => {
                let b = b.expect("checked");
                let (xa, ca) = ba.forward(store, a, train)?;
                let (xb, cb) = bb.forward(store, b, train)?;
                let fused = concat_cols(&xa, &xb);
                let (p, hc) = head.forward(store, &fused, rate, train, rng, train)?;
                let kind = match (ca, cb, hc) {
                    (Some(a), Some(b), Some(h)) => Some(TapeKind::Concat(FusionTape { a, b }, h)),
                    _ => None,
                };
                (p, None, kind)
            }
            Net::Trio {
                a: ba,
                b: bb,
                gate_a,
                gate_b,
                attn,
                head,
            } => {
                let b = b.expect("checked");
                let (xa, ca) = ba.forward(store, a, train)?;
                let (xb, cb) = bb.forward(store, b, train)?;
                let (ga, gca) = gate_a.forward(store, &xa)?;
                let (gb, gcb) = gate_b.forward(store, &xb)?;
                let cca = if train { Some(cca_grad(&ga, &gb, cca_cfg)?) } else { None };
                let fused = concat_cols(&ga, &gb);
                let (refined, attn_caches) = if self.bypass_attention {
                    (fused, Vec::new())
                } else {
                    attn.forward(store, &fused, train)?
                };
                let (p, hc) = head.forward(store, &refined, rate, train, rng, train)?;
                let value = cca.as_ref().map(|c| c.value);
                let kind = match (ca, cb, cca, hc) {
                    (Some(ca), Some(cb), Some(cca), Some(h)) => Some(TapeKind::Trio {
                        branches: FusionTape { a: ca, b: cb },
                        gates: (gca, gcb),
                        attn: attn_caches,
                        cca,
                        head: h,
                    }),
                    _ => None,
                };
                (p, value, kind)
            }
        };
        let tape = kind.map(|kind| Tape {
            probs: probs.clone(),
            kind,
        });
        Ok((ForwardOutput { probs, cca_value }, tape))
    }

    /// Forward pass. In [`Mode::Train`] the intermediates are kept for [`Model::backward`].
    pub fn forward<R: Rng>(
        &mut self,
        a: &Matrix<T>,
        b: Option<&Matrix<T>>,
        mode: Mode,
        cca_cfg: &CcaConfig,
        rng: &mut R,
    ) -> Result<ForwardOutput<T>> {
        self.tape = None;
        let (out, tape) = self.run(a, b, mode, cca_cfg, rng)?;
        self.tape = tape;
        Ok(out)
    }

    /// Class probabilities in evaluation mode, computed in row chunks.
    pub fn predict_proba(&self, a: &Matrix<T>, b: Option<&Matrix<T>>) -> Result<Matrix<T>> {
        self.check_inputs(a, b)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = CcaConfig::default();
        let mut data = Vec::with_capacity(a.rows() * self.config.n_classes);
        let rows: Vec<usize> = (0..a.rows()).collect();
        for chunk in rows.chunks(INFERENCE_CHUNK) {
            let ca = a.select_rows(chunk);
            let cb = b.map(|b| b.select_rows(chunk));
            let (out, _) = self.run(&ca, cb.as_ref(), Mode::Eval, &cfg, &mut rng)?;
            data.extend_from_slice(out.probs.data());
        }
        Matrix::new(a.rows(), self.config.n_classes, data)
    }

    /// Back-propagate `cross_entropy − λ·cca` from the last training forward pass.
    ///
    /// Gradients are written (not accumulated) into the parameter store.
    pub fn backward(&mut self, labels: &[usize], lambda: f64) -> Result<LossParts> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::Usage("backward called without a training forward pass".into()))?;
        if labels.len() != tape.probs.rows() {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                tape.probs.rows()
            )));
        }
        if lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        let ce = cross_entropy(&tape.probs, labels)?;
        let dlogits = softmax_cross_entropy_grad(&tape.probs, labels);
        self.params.zero_grad();
        let store = &mut self.params;
        let mut cca_value = None;
        match (&self.net, tape.kind) {
            (Net::Fcn { head }, TapeKind::Fcn(hc)) => {
                head.backward(store, &hc, &dlogits);
            }
            (Net::Cnn { branch, head }, TapeKind::Cnn(bc, hc)) => {
                let dflat = head.backward(store, &hc, &dlogits);
                branch.backward(store, &bc, dflat);
            }
            (Net::Concat { a, b, head }, TapeKind::Concat(ft, hc)) => {
                let dfused = head.backward(store, &hc, &dlogits);
                let (da, db) = split_cols(&dfused, self.config.proj_dim);
                a.backward(store, &ft.a, da);
                b.backward(store, &ft.b, db);
            }
            (
                Net::Trio {
                    a,
                    b,
                    gate_a,
                    gate_b,
                    attn,
                    head,
                },
                TapeKind::Trio {
                    branches,
                    gates,
                    attn: attn_caches,
                    cca,
                    head: hc,
                },
            ) => {
                let drefined = head.backward(store, &hc, &dlogits);
                let dfused = if self.bypass_attention {
                    drefined
                } else {
                    attn.backward(store, &attn_caches, &drefined)
                };
                let (mut dga, mut dgb) = split_cols(&dfused, self.config.proj_dim);
                if lambda != 0.0 {
                    let s = T::lit(-lambda);
                    dga.add_assign(&cca.dxh.scale(s));
                    dgb.add_assign(&cca.dyh.scale(s));
                }
                let dxa = gate_a.backward(store, &gates.0, &dga);
                let dxb = gate_b.backward(store, &gates.1, &dgb);
                a.backward(store, &branches.a, dxa);
                b.backward(store, &branches.b, dxb);
                cca_value = Some(cca.value);
            }
            _ => unreachable!("tape recorded by a different architecture"),
        }
        let total = total_loss(ce, cca_value.unwrap_or(0.0), if cca_value.is_some() { lambda } else { 0.0 });
        Ok(LossParts {
            ce,
            cca: cca_value,
            total,
        })
    }

    /// Gate activations `G_X`, `G_Y` for a batch (trio only).
    pub fn gate_values(&self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Option<(Matrix<T>, Matrix<T>)>> {
        self.check_inputs(a, Some(b))?;
        let Net::Trio {
            a: ba,
            b: bb,
            gate_a,
            gate_b,
            ..
        } = &self.net
        else {
            return Ok(None);
        };
        let (xa, _) = ba.forward(&self.params, a, false)?;
        let (xb, _) = bb.forward(&self.params, b, false)?;
        let (_, ca) = gate_a.forward(&self.params, &xa)?;
        let (_, cb) = gate_b.forward(&self.params, &xb)?;
        Ok(Some((Gate::gate_values(&ca).clone(), Gate::gate_values(&cb).clone())))
    }

    /// Names of the gate dense layers' weight and bias (trio only).
    pub fn gate_param_names(&self) -> Vec<String> {
        match &self.net {
            Net::Trio { gate_a, gate_b, .. } => [gate_a.dense(), gate_b.dense()]
                .iter()
                .flat_map(|d: &&Dense| {
                    [
                        self.params.get(d.weight()).name.clone(),
                        self.params.get(d.bias()).name.clone(),
                    ]
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Same configuration with every parameter converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut out = Model::<U>::build(&self.config, 0).expect("config already validated");
        for p in self.params.iter() {
            let dst = out.params.by_name_mut(&p.name).expect("same architecture");
            for (d, &s) in dst.value.data_mut().iter_mut().zip(p.value.data()) {
                *d = U::lit(s.as_f64());
            }
        }
        out.params.set_step(self.params.step());
        out.bypass_attention = self.bypass_attention;
        out
    }
}
