//! Variational autoencoder that embeds a material database in a 2-D latent space.
//!
//! Encoder: 4 → 250 (relu) → two affine heads 250 → 2 for the mean and the
//! log-variance. Decoder: 2 → 250 (relu) → 4 (sigmoid), in min-max scaled
//! property space. Inference always uses the mean embedding; sampling only
//! happens inside [`train`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Matrix, Tape, Var};
use crate::materials::{Attribute, MaterialDatabase, Properties, Scaler};
use crate::optim::Adam;

pub const FEATURES: usize = 4;
pub const HIDDEN: usize = 250;
pub const LATENT: usize = 2;

/// Half-width of the latent box the design optimizer explores.
pub const LATENT_BOUND: f64 = 3.0;

const FORMAT_NAME: &str = "vaetruss-vae";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("cannot access model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("model layer `{layer}` has shape {found:?}, expected {expected:?}")]
    DimensionMismatch {
        layer: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("model was trained on a different database: {0}")]
    DatabaseMismatch(String),
    #[error("unknown material attribute `{0}`")]
    UnknownAttribute(String),
    #[error("grid resolution must be at least 2, got {0}")]
    Resolution(usize),
}

/// Hyperparameters for [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the KL term.
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 5e-5,
            lr: 0.002,
            epochs: 50_000,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), VaeError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(VaeError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(VaeError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(VaeError::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Affine map `x·W + b` for row-vector batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// inputs × outputs
    pub weight: Matrix,
    /// 1 × outputs
    pub bias: Matrix,
}

impl Dense {
    fn glorot(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weight: Matrix::from_fn(inputs, outputs, |_, _| rng.gen_range(-limit..limit)),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weight.shape()
    }
}

/// Records `x·W + b` with the given weight handles.
pub(crate) fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

const LAYER_NAMES: [&str; 5] = ["encoder.hidden", "encoder.mean", "encoder.log_var", "decoder.hidden", "decoder.output"];
const LAYER_SHAPES: [(usize, usize); 5] = [
    (FEATURES, HIDDEN),
    (HIDDEN, LATENT),
    (HIDDEN, LATENT),
    (LATENT, HIDDEN),
    (HIDDEN, FEATURES),
];

/// A trained autoencoder with the scaler and embeddings of its training set.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    layers: [Dense; 5],
    scaler: Scaler,
    names: Vec<String>,
    classes: Vec<String>,
    embeddings: Vec<[f64; LATENT]>,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: VaeModel,
    /// Total loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Handles for the decoder weights recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    hidden_w: Var,
    hidden_b: Var,
    out_w: Var,
    out_b: Var,
}

/// Decoded properties recorded on a tape, unscaled to SI units.
#[derive(Debug, Clone, Copy)]
pub struct DecodedVars {
    /// 1×4 output in scaled space.
    pub scaled: Var,
    pub youngs_modulus: Var,
    pub cost: Var,
    pub density: Var,
    pub yield_strength: Var,
}

impl DecodedVars {
    pub fn get(&self, attribute: Attribute) -> Var {
        match attribute {
            Attribute::YoungsModulus => self.youngs_modulus,
            Attribute::Cost => self.cost,
            Attribute::Density => self.density,
            Attribute::YieldStrength => self.yield_strength,
        }
    }
}

impl VaeModel {
    fn init(db: &MaterialDatabase, rng: &mut impl Rng) -> Self {
        let layers = LAYER_SHAPES.map(|(i, o)| Dense::glorot(rng, i, o));
        Self {
            layers,
            scaler: *db.scaler(),
            names: db.materials().iter().map(|m| m.name.clone()).collect(),
            classes: db.materials().iter().map(|m| m.class.clone()).collect(),
            embeddings: Vec::new(),
        }
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    /// Latent mean of every training material, in database order.
    pub fn embeddings(&self) -> &[[f64; LATENT]] {
        &self.embeddings
    }

    pub fn material_names(&self) -> &[String] {
        &self.names
    }

    pub fn material_classes(&self) -> &[String] {
        &self.classes
    }

    pub fn layers(&self) -> &[Dense; 5] {
        &self.layers
    }

    /// Errors unless `db` holds the materials and scaler this model was trained on.
    pub fn check_database(&self, db: &MaterialDatabase) -> Result<(), VaeError> {
        if db.scaler() != &self.scaler {
            return Err(VaeError::DatabaseMismatch("scaler bounds differ".into()));
        }
        let names: Vec<&str> = db.materials().iter().map(|m| m.name.as_str()).collect();
        if names.len() != self.names.len() || names.iter().zip(&self.names).any(|(a, b)| *a != b) {
            return Err(VaeError::DatabaseMismatch(format!(
                "model has {} materials, database has {}",
                self.names.len(),
                names.len()
            )));
        }
        Ok(())
    }

    fn decoder_vars(&self, tape: &mut Tape, trainable: bool) -> DecoderVars {
        let mut rec = |m: &Matrix| if trainable { tape.leaf(m.clone()) } else { tape.constant(m.clone()) };
        DecoderVars {
            hidden_w: rec(&self.layers[3].weight),
            hidden_b: rec(&self.layers[3].bias),
            out_w: rec(&self.layers[4].weight),
            out_b: rec(&self.layers[4].bias),
        }
    }

    fn record_decoder_with(tape: &mut Tape, vars: &DecoderVars, z: Var) -> Result<Var, AutodiffError> {
        let pre = affine(tape, z, vars.hidden_w, vars.hidden_b)?;
        let h = tape.relu(pre)?;
        let out = affine(tape, h, vars.out_w, vars.out_b)?;
        tape.sigmoid(out)
    }

    /// Records the frozen decoder on `tape` for a 1×2 latent row `z` and
    /// unscales the output to SI units.
    pub fn record_decode(&self, tape: &mut Tape, z: Var) -> Result<DecodedVars, AutodiffError> {
        let vars = self.decoder_vars(tape, false);
        let scaled = Self::record_decoder_with(tape, &vars, z)?;
        let mut unscaled = [scaled; 4];
        for attribute in Attribute::ALL {
            let i = attribute.index();
            let s = tape.elem(scaled, i)?;
            let r = tape.scale(s, self.scaler.max[i] - self.scaler.min[i])?;
            unscaled[i] = tape.shift(r, self.scaler.min[i])?;
        }
        Ok(DecodedVars {
            scaled,
            youngs_modulus: unscaled[0],
            cost: unscaled[1],
            density: unscaled[2],
            yield_strength: unscaled[3],
        })
    }

    /// Decoded properties at a latent point.
    pub fn decode(&self, z: [f64; LATENT]) -> Properties {
        let s = self.decode_scaled(z);
        self.scaler.unscale(&s)
    }

    pub fn decode_scaled(&self, z: [f64; LATENT]) -> [f64; 4] {
        let zr = Matrix::from_row_slice(1, LATENT, &z);
        let h = (&zr * &self.layers[3].weight + &self.layers[3].bias).map(|v| v.max(0.0));
        let out = &h * &self.layers[4].weight + &self.layers[4].bias;
        std::array::from_fn(|i| crate::autodiff::sigmoid(out[i]))
    }

    /// Mean latent embedding of a property vector (no sampling).
    pub fn encode(&self, properties: &Properties) -> [f64; LATENT] {
        let x = Matrix::from_row_slice(1, FEATURES, &self.scaler.scale(properties));
        let h = (&x * &self.layers[0].weight + &self.layers[0].bias).map(|v| v.max(0.0));
        let mu = &h * &self.layers[1].weight + &self.layers[1].bias;
        [mu[0], mu[1]]
    }

    /// Latent Euclidean distances between every pair of embedded materials.
    pub fn distance_matrix(&self) -> Vec<Vec<f64>> {
        self.embeddings
            .iter()
            .map(|a| self.embeddings.iter().map(|b| latent_distance(a, b)).collect())
            .collect()
    }

    /// Decoded `attribute` over a `resolution`² grid spanning the latent box.
    pub fn latent_grid(&self, attribute: &str, resolution: usize) -> Result<LatentGrid, VaeError> {
        let attribute = Attribute::parse(attribute).ok_or_else(|| VaeError::UnknownAttribute(attribute.to_string()))?;
        if resolution < 2 {
            return Err(VaeError::Resolution(resolution));
        }
        let step = 2.0 * LATENT_BOUND / (resolution - 1) as f64;
        let axis: Vec<f64> = (0..resolution).map(|i| -LATENT_BOUND + i as f64 * step).collect();
        let mut values = Vec::with_capacity(resolution * resolution);
        for &z1 in &axis {
            for &z0 in &axis {
                values.push(self.decode([z0, z1]).get(attribute));
            }
        }
        Ok(LatentGrid { attribute, axis, values })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VaeError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VaeError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            features: FEATURES,
            hidden: HIDDEN,
            latent: LATENT,
            layers: self
                .layers
                .iter()
                .zip(LAYER_NAMES)
                .map(|(l, name)| LayerFile {
                    name: name.into(),
                    inputs: l.weight.nrows(),
                    outputs: l.weight.ncols(),
                    weight: row_major(&l.weight),
                    bias: l.bias.as_slice().to_vec(),
                })
                .collect(),
            scaler: self.scaler,
            materials: self
                .names
                .iter()
                .zip(&self.classes)
                .zip(&self.embeddings)
                .map(|((name, class), z)| EmbeddingFile {
                    name: name.clone(),
                    class: class.clone(),
                    z: *z,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VaeError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| VaeError::Format(e.to_string()))?;
        if file.format != FORMAT_NAME {
            return Err(VaeError::Format(format!("unexpected format `{}`", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(VaeError::Format(format!("unsupported version {}", file.version)));
        }
        if (file.features, file.hidden, file.latent) != (FEATURES, HIDDEN, LATENT) {
            return Err(VaeError::Format(format!(
                "architecture {}-{}-{} does not match {FEATURES}-{HIDDEN}-{LATENT}",
                file.features, file.hidden, file.latent
            )));
        }
        if file.layers.len() != LAYER_SHAPES.len() {
            return Err(VaeError::Format(format!("expected 5 layers, found {}", file.layers.len())));
        }
        let mut layers = Vec::with_capacity(5);
        for (i, lf) in file.layers.iter().enumerate() {
            let expected = LAYER_SHAPES[i];
            let found = (lf.inputs, lf.outputs);
            if found != expected || lf.weight.len() != lf.inputs * lf.outputs || lf.bias.len() != lf.outputs {
                return Err(VaeError::DimensionMismatch {
                    layer: LAYER_NAMES[i],
                    expected,
                    found: (lf.weight.len() / lf.outputs.max(1), lf.bias.len()),
                });
            }
            layers.push(Dense {
                weight: Matrix::from_row_slice(lf.inputs, lf.outputs, &lf.weight),
                bias: Matrix::from_row_slice(1, lf.outputs, &lf.bias),
            });
        }
        let layers: [Dense; 5] = layers.try_into().expect("five layers");
        Ok(Self {
            layers,
            scaler: file.scaler,
            names: file.materials.iter().map(|m| m.name.clone()).collect(),
            classes: file.materials.iter().map(|m| m.class.clone()).collect(),
            embeddings: file.materials.iter().map(|m| m.z).collect(),
        })
    }

    fn params(&self) -> Vec<Matrix> {
        self.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    fn set_params(&mut self, params: Vec<Matrix>) {
        let mut it = params.into_iter();
        for l in &mut self.layers {
            l.weight = it.next().expect("weight");
            l.bias = it.next().expect("bias");
        }
    }
}

/// Decoded attribute values on a square latent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub attribute: Attribute,
    /// Shared coordinates of both axes.
    pub axis: Vec<f64>,
    /// Row-major: `values[i * n + j]` sits at `(z0, z1) = (axis[j], axis[i])`.
    pub values: Vec<f64>,
}

impl LatentGrid {
    pub fn resolution(&self) -> usize {
        self.axis.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.axis.len() + j]
    }
}

pub fn latent_distance(a: &[f64; LATENT], b: &[f64; LATENT]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Closed-form KL divergence of N(μ, σ²) from N(0, 1), summed over dimensions.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    mu.iter()
        .zip(log_var)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// Full-batch training with the reparameterization trick and Adam.
pub fn train(db: &MaterialDatabase, cfg: &TrainConfig) -> Result<Trained, VaeError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = VaeModel::init(db, &mut rng);
    let n = db.len();
    let x_data = Matrix::from_fn(n, FEATURES, |i, j| db.scale(&db.materials()[i].properties)[j]);

    let mut params = model.params();
    let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
    let mut adam = Adam::new(cfg.lr, &shapes);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let noise = Matrix::from_fn(n, LATENT, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut tape = Tape::new();
        let handles: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let x = tape.constant(x_data.clone());
        let eps = tape.constant(noise);

        let pre = affine(&mut tape, x, handles[0], handles[1])?;
        let h = tape.relu(pre)?;
        let mu = affine(&mut tape, h, handles[2], handles[3])?;
        let log_var = affine(&mut tape, h, handles[4], handles[5])?;
        let half_lv = tape.scale(log_var, 0.5)?;
        let sigma = tape.exp(half_lv)?;
        let noise_term = tape.mul(sigma, eps)?;
        let z = tape.add(mu, noise_term)?;
        let dec = DecoderVars {
            hidden_w: handles[6],
            hidden_b: handles[7],
            out_w: handles[8],
            out_b: handles[9],
        };
        let x_hat = VaeModel::record_decoder_with(&mut tape, &dec, z)?;

        let diff = tape.sub(x_hat, x)?;
        let sq = tape.mul(diff, diff)?;
        let mse = tape.mean(sq)?;

        let mu_sq = tape.mul(mu, mu)?;
        let var = tape.exp(log_var)?;
        let a = tape.add(mu_sq, var)?;
        let b = tape.sub(a, log_var)?;
        let c = tape.shift(b, -1.0)?;
        let kl_total = tape.sum(c)?;
        let kl = tape.scale(kl_total, 0.5 / n as f64)?;
        let weighted_kl = tape.scale(kl, cfg.beta)?;
        let loss = tape.add(mse, weighted_kl)?;

        let loss_value = tape.scalar_value(loss);
        if !loss_value.is_finite() {
            return Err(VaeError::Divergence { epoch, loss: loss_value });
        }
        history.push(loss_value);

        let grads = tape.backward(loss)?;
        let g: Vec<Matrix> = handles.iter().map(|&v| grads.wrt(v)).collect();
        adam.step(&mut params, &g);
    }

    model.set_params(params);
    model.embeddings = db.materials().iter().map(|m| model.encode(&m.properties)).collect();
    Ok(Trained {
        model,
        loss_history: history,
    })
}

/// Percentage reconstruction errors `|ζ − ζ̂| / ζ × 100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub rows: Vec<ReconstructionRow>,
    /// Per-attribute maximum over all rows.
    pub max: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRow {
    pub name: String,
    pub class: String,
    pub errors: [f64; 4],
}

pub fn percent_errors(actual: &Properties, decoded: &Properties) -> [f64; 4] {
    std::array::from_fn(|i| (actual.0[i] - decoded.0[i]).abs() / actual.0[i] * 100.0)
}

/// Round-trips every database material through encode and decode.
pub fn reconstruction_report(model: &VaeModel, db: &MaterialDatabase) -> ReconstructionReport {
    report_from(db, |p| model.decode(model.encode(p)))
}

pub(crate) fn report_from(db: &MaterialDatabase, reconstruct: impl Fn(&Properties) -> Properties) -> ReconstructionReport {
    let mut max = [0.0f64; 4];
    let rows = db
        .materials()
        .iter()
        .map(|m| {
            let errors = percent_errors(&m.properties, &reconstruct(&m.properties));
            for i in 0..4 {
                max[i] = max[i].max(errors[i]);
            }
            ReconstructionRow {
                name: m.name.clone(),
                class: m.class.clone(),
                errors,
            }
        })
        .collect();
    ReconstructionReport { rows, max }
}

/// Mean latent distance within classes and across classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterStats {
    pub intra_class_mean: f64,
    pub inter_class_mean: f64,
}

pub fn cluster_stats(model: &VaeModel) -> ClusterStats {
    let d = model.distance_matrix();
    let classes = model.material_classes();
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..d.len() {
        for j in (i + 1)..d.len() {
            if classes[i] == classes[j] {
                intra += d[i][j];
                ni += 1;
            } else {
                inter += d[i][j];
                nx += 1;
            }
        }
    }
    ClusterStats {
        intra_class_mean: if ni > 0 { intra / ni as f64 } else { 0.0 },
        inter_class_mean: if nx > 0 { inter / nx as f64 } else { 0.0 },
    }
}

/// Mean latent distance between members of two classes.
pub fn mean_class_distance(model: &VaeModel, a: &str, b: &str) -> Option<f64> {
    let d = model.distance_matrix();
    let classes = model.material_classes();
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..d.len() {
        for j in 0..d.len() {
            if i != j && classes[i] == a && classes[j] == b {
                sum += d[i][j];
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

fn row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    features: usize,
    hidden: usize,
    latent: usize,
    layers: Vec<LayerFile>,
    scaler: Scaler,
    materials: Vec<EmbeddingFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    name: String,
    inputs: usize,
    outputs: usize,
    /// row-major inputs × outputs
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingFile {
    name: String,
    class: String,
    z: [f64; LATENT],
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_model(epochs: usize, seed: u64) -> Trained {
        let cfg = TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        };
        train(&MaterialDatabase::table1(), &cfg).unwrap()
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(kl_divergence(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((kl_divergence(&[1.0, 1.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((kl_divergence(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { beta: 0.0, ..ok }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..ok }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn single_epoch_model_is_valid() {
        let t = short_model(1, 3);
        assert_eq!(t.loss_history.len(), 1);
        assert_eq!(t.model.embeddings().len(), 9);
        let p = t.model.decode([0.5, -0.5]);
        assert!(p.0.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = short_model(50, 11);
        let b = short_model(50, 11);
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history, b.loss_history);
        let c = short_model(50, 12);
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn encode_is_deterministic() {
        let t = short_model(5, 1);
        let db = MaterialDatabase::table1();
        let m = &db.materials()[4];
        let a = t.model.encode(&m.properties);
        let b = t.model.encode(&m.properties);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn decoded_outputs_positive_and_inside_scaled_box() {
        let t = short_model(20, 2);
        for z0 in [-3.0, -1.0, 0.0, 2.5, 3.0] {
            for z1 in [-3.0, 0.3, 3.0] {
                let s = t.model.decode_scaled([z0, z1]);
                assert!(s.iter().all(|v| *v > 0.0 && *v < 1.0));
                assert!(t.model.decode([z0, z1]).0.iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn tape_decode_matches_plain_decode() {
        let t = short_model(30, 4);
        let mut tape = Tape::new();
        let z = tape.leaf(Matrix::from_row_slice(1, 2, &[0.4, -1.3]));
        let d = t.model.record_decode(&mut tape, z).unwrap();
        let plain = t.model.decode([0.4, -1.3]);
        for a in Attribute::ALL {
            let v = tape.scalar_value(d.get(a));
            assert!((v - plain.get(a)).abs() <= 1e-12 * plain.get(a));
        }
    }

    #[test]
    fn decoder_gradient_matches_finite_differences() {
        let t = short_model(200, 5);
        let model = &t.model;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let z0 = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            for a in Attribute::ALL {
                let mut tape = Tape::new();
                let z = tape.leaf(Matrix::from_row_slice(1, 2, &z0));
                let d = model.record_decode(&mut tape, z).unwrap();
                let g = tape.backward(d.get(a)).unwrap().wrt(z);
                for j in 0..2 {
                    let h = 1e-6;
                    let mut zp = z0;
                    let mut zm = z0;
                    zp[j] += h;
                    zm[j] -= h;
                    let fd = (model.decode(zp).get(a) - model.decode(zm).get(a)) / (2.0 * h);
                    let scale = fd.abs().max(g[j].abs()).max(1e-9 * model.scaler().range(a));
                    assert!((fd - g[j]).abs() / scale < 1e-4, "{a} dz{j}: fd {fd} ad {}", g[j]);
                }
            }
        }
    }

    #[test]
    fn perfect_reconstruction_reports_zero() {
        let db = MaterialDatabase::table1();
        let r = report_from(&db, |p| *p);
        assert_eq!(r.rows.len(), 9);
        assert_eq!(r.max, [0.0; 4]);
    }

    #[test]
    fn distance_matrix_symmetric_zero_diagonal() {
        let t = short_model(30, 6);
        let d = t.model.distance_matrix();
        for (i, row) in d.iter().enumerate() {
            assert_eq!(row[i], 0.0);
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, d[j][i]);
            }
        }
    }

    #[test]
    fn latent_grid_corners_and_errors() {
        let t = short_model(10, 8);
        let g = t.model.latent_grid("E", 2).unwrap();
        assert_eq!(g.values.len(), 4);
        assert_eq!(g.axis, vec![-3.0, 3.0]);
        assert_eq!(g.at(1, 0), t.model.decode([-3.0, 3.0]).youngs_modulus());
        assert!(g.values.iter().all(|v| *v > 0.0));
        assert!(matches!(t.model.latent_grid("hardness", 5), Err(VaeError::UnknownAttribute(_))));
        assert!(matches!(t.model.latent_grid("E", 1), Err(VaeError::Resolution(1))));
    }

    #[test]
    fn model_file_round_trip_and_dimension_check() {
        let t = short_model(3, 9);
        let json = t.model.to_json();
        let back = VaeModel::from_json(&json).unwrap();
        assert_eq!(back, t.model);
        assert_eq!(back.to_json(), json);

        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        value["layers"][3]["inputs"] = serde_json::json!(3);
        let err = VaeModel::from_json(&value.to_string()).unwrap_err();
        assert!(matches!(err, VaeError::DimensionMismatch { layer: "decoder.hidden", .. }), "{err}");

        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        value["hidden"] = serde_json::json!(128);
        assert!(matches!(VaeModel::from_json(&value.to_string()), Err(VaeError::Format(_))));
    }

    #[test]
    fn database_mismatch_detected() {
        let t = short_model(2, 1);
        let db = MaterialDatabase::table1();
        assert!(t.model.check_database(&db).is_ok());
        let steel = db.filter_by_class(&["Steel"]).unwrap();
        assert!(matches!(t.model.check_database(&steel), Err(VaeError::DatabaseMismatch(_))));
    }
}
