//! The field surrogate: a four-stage U-Net regression model with
//! from-scratch reverse-mode differentiation.
//!
//! Input encoding is a single real channel: tissue_id/12 for tissue cells,
//! 0 for background, and a sentinel value of 2.0 at the antenna pixel. The
//! network emits two real channels interpreted as the real and imaginary
//! parts of the field, rescaled by a per-frequency normalization constant s
//! stored in the model. Training minimizes the mean square error of the
//! complex difference over samples and voxels, computed on y/s.

mod adam;
pub mod kernels;
pub mod tensor;
pub mod unet;

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::phantom::{tissue, AntennaPlacement, TissueLabelGrid};
use crate::solver::FieldMap;
use tensor::Tensor;
use unet::{UNetShape, OUT_CHANNELS, PAD_MULTIPLE};

/// Value marking the antenna pixel in the input encoding.
pub const ANTENNA_SENTINEL: f32 = 2.0;

#[derive(Debug)]
pub enum SurrogateError {
    AntennaOutOfBounds { i: usize, j: usize },
    ShapeMismatch { expected: (usize, usize), actual: (usize, usize) },
    BadArchitecture(String),
    BadConfig(String),
    EmptySplit { split: &'static str },
    SubjectInBothSplits { subject: String },
    NonFiniteLoss { epoch: usize },
    CheckpointFormat(String),
    Io(std::io::Error),
}

impl fmt::Display for SurrogateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurrogateError::AntennaOutOfBounds { i, j } => {
                write!(f, "antenna cell ({i}, {j}) outside grid")
            }
            SurrogateError::ShapeMismatch { expected, actual } => write!(
                f,
                "dims {}x{} do not match expected {}x{}",
                actual.0, actual.1, expected.0, expected.1
            ),
            SurrogateError::BadArchitecture(msg) => write!(f, "bad architecture: {msg}"),
            SurrogateError::BadConfig(msg) => write!(f, "bad training config: {msg}"),
            SurrogateError::EmptySplit { split } => write!(f, "{split} split is empty"),
            SurrogateError::SubjectInBothSplits { subject } => {
                write!(f, "subject {subject} appears in both splits")
            }
            SurrogateError::NonFiniteLoss { epoch } => {
                write!(f, "loss became non-finite at epoch {epoch}")
            }
            SurrogateError::CheckpointFormat(msg) => write!(f, "bad checkpoint: {msg}"),
            SurrogateError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SurrogateError {}

impl From<std::io::Error> for SurrogateError {
    fn from(e: std::io::Error) -> Self {
        SurrogateError::Io(e)
    }
}

/// Single-channel network input: tissue map plus antenna sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct InputEncoding {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl InputEncoding {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Check the encoding invariants: exactly one sentinel, all other
    /// values in [0, 1].
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let sentinels = self.data.iter().filter(|&&v| v == ANTENNA_SENTINEL).count();
        if sentinels != 1 {
            return Err(SurrogateError::BadConfig(format!(
                "expected exactly one antenna sentinel, found {sentinels}"
            )));
        }
        if self
            .data
            .iter()
            .any(|&v| v != ANTENNA_SENTINEL && !(0.0..=1.0).contains(&v))
        {
            return Err(SurrogateError::BadConfig(
                "non-sentinel encoding values must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Encode (tissue map + antenna location) as the single-channel input.
pub fn encode_input(
    grid: &TissueLabelGrid,
    antenna: &AntennaPlacement,
) -> Result<InputEncoding, SurrogateError> {
    if !grid.in_bounds(antenna.i, antenna.j) {
        return Err(SurrogateError::AntennaOutOfBounds {
            i: antenna.i,
            j: antenna.j,
        });
    }
    let mut data: Vec<f32> = grid
        .labels()
        .iter()
        .map(|&l| l as f32 / tissue::MAX_LABEL as f32)
        .collect();
    data[antenna.i * grid.width() + antenna.j] = ANTENNA_SENTINEL;
    Ok(InputEncoding {
        width: grid.width(),
        height: grid.height(),
        data,
    })
}

/// U-Net weights plus the metadata needed to run them.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub shape: UNetShape,
    pub frequency: f64,
    /// Target scale s (V/m): network outputs are multiplied by s.
    pub normalization: f64,
    pub params: Vec<f32>,
}

impl SurrogateModel {
    /// Fan-in-scaled uniform initialization, deterministic in `seed`.
    pub fn init(
        shape: UNetShape,
        frequency: f64,
        normalization: f64,
        seed: u64,
    ) -> Result<Self, SurrogateError> {
        shape.validate().map_err(SurrogateError::BadArchitecture)?;
        if !(normalization > 0.0) {
            return Err(SurrogateError::BadConfig(format!(
                "normalization must be positive, got {normalization}"
            )));
        }
        let layout = shape.layout();
        let mut params = vec![0f32; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for entry in &layout.entries {
            if entry.name.ends_with(".bias") {
                continue; // biases start at zero
            }
            // fan_in = product of all dims but the first (output) dim
            let fan_in: usize = entry.shape[1..].iter().product();
            let bound = (1.0 / fan_in as f64).sqrt();
            for v in &mut params[entry.offset..entry.offset + entry.len] {
                *v = rng.gen_range(-bound..bound) as f32;
            }
        }
        Ok(Self {
            shape,
            frequency,
            normalization,
            params,
        })
    }
}

fn pad_up(v: usize) -> usize {
    v.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE
}

fn padded_input(encoding: &InputEncoding) -> Tensor {
    let (w, h) = (encoding.width, encoding.height);
    let (pw, ph) = (pad_up(w), pad_up(h));
    let mut t = Tensor::zeros(1, ph, pw);
    for i in 0..h {
        t.data[i * pw..i * pw + w].copy_from_slice(&encoding.data[i * w..(i + 1) * w]);
    }
    t
}

/// Run the network. Inputs whose dims are not multiples of 16 are zero-padded
/// to the next multiple and the output is cropped back, so output dims always
/// equal input dims.
pub fn forward(model: &SurrogateModel, encoding: &InputEncoding) -> FieldMap {
    let input = padded_input(encoding);
    let trace = unet::forward(&model.shape, &model.params, &input, true);
    crop_to_field(model, &trace.output, encoding.width, encoding.height)
}

fn crop_to_field(model: &SurrogateModel, output: &Tensor, w: usize, h: usize) -> FieldMap {
    let pw = output.w;
    let re = output.plane(0);
    let im = output.plane(1);
    let s = model.normalization;
    let mut values = Vec::with_capacity(w * h);
    for i in 0..h {
        for j in 0..w {
            values.push(Complex64::new(
                re[i * pw + j] as f64 * s,
                im[i * pw + j] as f64 * s,
            ));
        }
    }
    FieldMap::new(w, h, model.frequency, values)
}

/// Mean over samples and voxels of |y − ŷ|², computed on normalized fields
/// (both sides divided by `normalization`).
pub fn mse_loss(
    pairs: &[(&FieldMap, &FieldMap)],
    normalization: f64,
) -> Result<f64, SurrogateError> {
    if pairs.is_empty() {
        return Err(SurrogateError::BadConfig("loss over an empty batch".into()));
    }
    let s2 = normalization * normalization;
    let mut total = 0.0;
    for (y, y_hat) in pairs {
        if y.width() != y_hat.width() || y.height() != y_hat.height() {
            return Err(SurrogateError::ShapeMismatch {
                expected: (y.width(), y.height()),
                actual: (y_hat.width(), y_hat.height()),
            });
        }
        let v = (y.width() * y.height()) as f64;
        let sum: f64 = y
            .values()
            .iter()
            .zip(y_hat.values())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        total += sum / (s2 * v);
    }
    Ok(total / pairs.len() as f64)
}

/// Normalized 2-channel target tensor padded to the network grid.
fn padded_target(target: &FieldMap, s: f64, ph: usize, pw: usize) -> Tensor {
    let (w, h) = (target.width(), target.height());
    let mut t = Tensor::zeros(OUT_CHANNELS, ph, pw);
    for i in 0..h {
        for j in 0..w {
            let v = target.at(i, j);
            t.data[i * pw + j] = (v.re / s) as f32;
            t.data[ph * pw + i * pw + j] = (v.im / s) as f32;
        }
    }
    t
}

/// Per-sample loss and gradient arena for L = (1/V)Σ_v |out − y/s|².
fn loss_and_grads(
    model: &SurrogateModel,
    input: &Tensor,
    target: &Tensor,
    crop: (usize, usize),
    parallel: bool,
) -> (f64, Vec<f32>) {
    let trace = unet::forward(&model.shape, &model.params, input, parallel);
    let (w, h) = crop;
    let (ph, pw) = (input.h, input.w);
    let v = (w * h) as f64;
    let mut d_out = Tensor::zeros(OUT_CHANNELS, ph, pw);
    let mut loss = 0.0f64;
    for c in 0..OUT_CHANNELS {
        let out_plane = trace.output.plane(c);
        let target_plane = target.plane(c);
        let d_plane = d_out.plane_mut(c);
        for i in 0..h {
            for j in 0..w {
                let k = i * pw + j;
                let diff = (out_plane[k] - target_plane[k]) as f64;
                loss += diff * diff;
                d_plane[k] = (2.0 * diff / v) as f32;
            }
        }
    }
    loss /= v;
    let grads = unet::backward(&model.shape, &model.params, input, &trace, &d_out, parallel);
    (loss, grads)
}

/// Exact reverse-mode gradients of the single-sample loss with respect to
/// every weight, as an arena matching the model's tensor layout.
pub fn backward(
    model: &SurrogateModel,
    encoding: &InputEncoding,
    target: &FieldMap,
) -> Result<Vec<f32>, SurrogateError> {
    if target.width() != encoding.width || target.height() != encoding.height {
        return Err(SurrogateError::ShapeMismatch {
            expected: (encoding.width, encoding.height),
            actual: (target.width(), target.height()),
        });
    }
    let input = padded_input(encoding);
    let t = padded_target(target, model.normalization, input.h, input.w);
    let (_, grads) = loss_and_grads(
        model,
        &input,
        &t,
        (encoding.width, encoding.height),
        true,
    );
    Ok(grads)
}

/// Training and validation samples are identified by subject so splits stay
/// disjoint by construction.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub subject: String,
    pub is_validation: bool,
    pub encoding: InputEncoding,
    pub target: FieldMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub stages: usize,
    pub base_width: usize,
    /// When set, these subjects form the validation split regardless of the
    /// per-sample tags.
    pub validation_subjects: Option<Vec<String>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 200,
            seed: 7,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            stages: 4,
            base_width: 16,
            validation_subjects: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Best validation MSE seen (or final train MSE when no validation set).
    pub best_mse: f64,
    pub normalization: f64,
}

/// Samples per split: subjects × antennas.
pub fn count_split(subjects: usize, antennas: usize) -> usize {
    subjects * antennas
}

/// Train the surrogate. Deterministic for a fixed config: fixed init, fixed
/// shuffle order, ordered gradient reduction. Returns the weights with the
/// best validation MSE seen (final weights when there is no validation set)
/// plus the per-epoch loss trace.
pub fn train(
    samples: &[TrainSample],
    frequency: f64,
    config: &TrainConfig,
) -> Result<(SurrogateModel, TrainLog), SurrogateError> {
    if config.batch_size == 0 {
        return Err(SurrogateError::BadConfig("batch size must be >= 1".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(SurrogateError::BadConfig(
            "learning rate must be positive".into(),
        ));
    }
    let is_val = |sample: &TrainSample| match &config.validation_subjects {
        Some(list) => list.contains(&sample.subject),
        None => sample.is_validation,
    };
    let train_idx: Vec<usize> = (0..samples.len())
        .filter(|&k| !is_val(&samples[k]))
        .collect();
    let val_idx: Vec<usize> = (0..samples.len())
        .filter(|&k| is_val(&samples[k]))
        .collect();
    if train_idx.is_empty() {
        return Err(SurrogateError::EmptySplit { split: "training" });
    }
    let train_subjects: BTreeSet<&str> = train_idx
        .iter()
        .map(|&k| samples[k].subject.as_str())
        .collect();
    for &k in &val_idx {
        if train_subjects.contains(samples[k].subject.as_str()) {
            return Err(SurrogateError::SubjectInBothSplits {
                subject: samples[k].subject.clone(),
            });
        }
    }

    // Per-frequency target scale: median over training samples of max|y|.
    let mut maxima: Vec<f64> = train_idx
        .iter()
        .map(|&k| samples[k].target.max_abs())
        .collect();
    maxima.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let normalization = if maxima.len() % 2 == 1 {
        maxima[maxima.len() / 2]
    } else {
        0.5 * (maxima[maxima.len() / 2 - 1] + maxima[maxima.len() / 2])
    };
    if !(normalization > 0.0) {
        return Err(SurrogateError::BadConfig(
            "training targets are identically zero".into(),
        ));
    }

    let shape = UNetShape {
        stages: config.stages,
        base_width: config.base_width,
    };
    let mut model = SurrogateModel::init(shape, frequency, normalization, config.seed)?;

    // Pre-pad all inputs and normalized targets once.
    let prepared: Vec<(Tensor, Tensor, (usize, usize))> = samples
        .iter()
        .map(|sample| {
            let input = padded_input(&sample.encoding);
            let target = padded_target(&sample.target, normalization, input.h, input.w);
            (
                input,
                target,
                (sample.encoding.width, sample.encoding.height),
            )
        })
        .collect();

    let mut opt = adam::Adam::new(
        model.params.len(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_epsilon,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5DEECE66D);
    let mut order: Vec<usize> = train_idx.clone();
    let mut log = TrainLog {
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_mse: f64::INFINITY,
        normalization,
    };
    let mut best_params: Option<Vec<f32>> = None;

    for epoch in 0..config.epochs {
        // Fisher-Yates with the dedicated shuffle stream.
        for k in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=k);
            order.swap(k, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            // Per-sample gradients in parallel, reduced in index order.
            let results: Vec<(f64, Vec<f32>)> = batch
                .par_iter()
                .map(|&k| {
                    let (input, target, crop) = &prepared[k];
                    loss_and_grads(&model, input, target, *crop, false)
                })
                .collect();
            let inv = 1.0 / batch.len() as f32;
            let mut grads = vec![0f32; model.params.len()];
            for (loss, g) in &results {
                epoch_loss += loss;
                for (dst, src) in grads.iter_mut().zip(g) {
                    *dst += src * inv;
                }
            }
            opt.step(&mut model.params, &grads);
        }
        let train_mse = epoch_loss / train_idx.len() as f64;
        if !train_mse.is_finite() {
            return Err(SurrogateError::NonFiniteLoss { epoch });
        }

        let val_mse = if val_idx.is_empty() {
            None
        } else {
            let total: f64 = val_idx
                .par_iter()
                .map(|&k| {
                    let (input, target, crop) = &prepared[k];
                    let trace = unet::forward(&model.shape, &model.params, input, false);
                    let (w, h) = *crop;
                    let pw = input.w;
                    let mut loss = 0.0f64;
                    for c in 0..OUT_CHANNELS {
                        let out_plane = trace.output.plane(c);
                        let target_plane = target.plane(c);
                        for i in 0..h {
                            for j in 0..w {
                                let diff =
                                    (out_plane[i * pw + j] - target_plane[i * pw + j]) as f64;
                                loss += diff * diff;
                            }
                        }
                    }
                    loss / (w * h) as f64
                })
                .sum();
            Some(total / val_idx.len() as f64)
        };
        if let Some(v) = val_mse {
            if !v.is_finite() {
                return Err(SurrogateError::NonFiniteLoss { epoch });
            }
            if v < log.best_mse {
                log.best_mse = v;
                log.best_epoch = epoch;
                best_params = Some(model.params.clone());
            }
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
    }

    match best_params {
        Some(p) => model.params = p,
        None => {
            log.best_epoch = config.epochs.saturating_sub(1);
            log.best_mse = log.epochs.last().map(|e| e.train_mse).unwrap_or(f64::NAN);
        }
    }
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, little-endian u32 header length, JSON header,
// then concatenated raw little-endian f32 tensor data.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"EMUCKPT1";

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    name: String,
    shape: Vec<usize>,
    byte_offset: usize,
    byte_len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    schema_version: u32,
    stages: usize,
    base_width: usize,
    frequency_hz: f64,
    normalization: f64,
    tensors: Vec<CheckpointTensor>,
}

pub fn save_checkpoint(model: &SurrogateModel, path: &Path) -> Result<(), SurrogateError> {
    let layout = model.shape.layout();
    let header = CheckpointHeader {
        schema_version: 1,
        stages: model.shape.stages,
        base_width: model.shape.base_width,
        frequency_hz: model.frequency,
        normalization: model.normalization,
        tensors: layout
            .entries
            .iter()
            .map(|e| CheckpointTensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                byte_offset: e.offset * 4,
                byte_len: e.len * 4,
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| SurrogateError::CheckpointFormat(e.to_string()))?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    let mut bytes = Vec::with_capacity(model.params.len() * 4);
    for v in &model.params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SurrogateModel, SurrogateError> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(SurrogateError::CheckpointFormat(
            "bad magic; not a checkpoint file".into(),
        ));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| SurrogateError::CheckpointFormat(e.to_string()))?;
    if header.schema_version != 1 {
        return Err(SurrogateError::CheckpointFormat(format!(
            "unsupported schema version {}",
            header.schema_version
        )));
    }
    if !(header.normalization > 0.0) {
        return Err(SurrogateError::CheckpointFormat(
            "normalization must be positive".into(),
        ));
    }
    let shape = UNetShape {
        stages: header.stages,
        base_width: header.base_width,
    };
    shape.validate().map_err(SurrogateError::BadArchitecture)?;
    let layout = shape.layout();
    if layout.entries.len() != header.tensors.len() {
        return Err(SurrogateError::CheckpointFormat(format!(
            "expected {} tensors, found {}",
            layout.entries.len(),
            header.tensors.len()
        )));
    }
    for (expected, actual) in layout.entries.iter().zip(&header.tensors) {
        if expected.name != actual.name
            || expected.shape != actual.shape
            || expected.offset * 4 != actual.byte_offset
            || expected.len * 4 != actual.byte_len
        {
            return Err(SurrogateError::CheckpointFormat(format!(
                "tensor {} does not match the declared architecture",
                actual.name
            )));
        }
    }
    let mut data = Vec::new();
    file.read_to_end(&mut data)?;
    if data.len() != layout.total * 4 {
        return Err(SurrogateError::CheckpointFormat(format!(
            "tensor data is {} bytes, expected {}",
            data.len(),
            layout.total * 4
        )));
    }
    let mut params = Vec::with_capacity(layout.total);
    for chunk in data.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(SurrogateError::CheckpointFormat(
                "tensor data contains non-finite values".into(),
            ));
        }
        params.push(v);
    }
    Ok(SurrogateModel {
        shape,
        frequency: header.frequency_hz,
        normalization: header.normalization,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_grid() -> TissueLabelGrid {
        let mut labels = vec![0u8; 24 * 24];
        labels[12 * 24 + 12] = 12;
        labels[12 * 24 + 13] = 3;
        TissueLabelGrid::new(24, 24, 1e-3, labels).unwrap()
    }

    #[test]
    fn encoding_has_one_sentinel_and_normalized_labels() {
        let grid = tiny_grid();
        let enc = encode_input(&grid, &AntennaPlacement::unit(3, 4)).unwrap();
        enc.validate().unwrap();
        assert_eq!(enc.data()[3 * 24 + 4], ANTENNA_SENTINEL);
        assert_eq!(enc.data()[12 * 24 + 12], 1.0); // label 12 -> 1.0
        assert_eq!(enc.data()[12 * 24 + 13], 0.25); // label 3 -> 3/12
        assert_eq!(enc.data()[0], 0.0);
    }

    #[test]
    fn encodings_differ_in_exactly_two_cells_for_two_antennas() {
        let grid = tiny_grid();
        let a = encode_input(&grid, &AntennaPlacement::unit(3, 4)).unwrap();
        let b = encode_input(&grid, &AntennaPlacement::unit(20, 7)).unwrap();
        let diff = a
            .data()
            .iter()
            .zip(b.data())
            .filter(|(x, y)| x != y)
            .count();
        assert_eq!(diff, 2);
    }

    #[test]
    fn encode_rejects_out_of_bounds_antenna() {
        let grid = tiny_grid();
        assert!(matches!(
            encode_input(&grid, &AntennaPlacement::unit(24, 0)),
            Err(SurrogateError::AntennaOutOfBounds { .. })
        ));
    }

    #[test]
    fn forward_shape_contract_over_dims() {
        let model = SurrogateModel::init(
            UNetShape {
                stages: 2,
                base_width: 4,
            },
            4e8,
            1.0,
            3,
        )
        .unwrap();
        for (w, h) in [(32, 32), (33, 47), (64, 64), (96, 80), (158, 133), (192, 192)] {
            let mut labels = vec![0u8; w * h];
            labels[w + 1] = 1;
            let grid = TissueLabelGrid::new(w, h, 1e-3, labels).unwrap();
            let enc = encode_input(&grid, &AntennaPlacement::unit(0, 0)).unwrap();
            let out = forward(&model, &enc);
            assert_eq!((out.width(), out.height()), (w, h));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = SurrogateModel::init(
            UNetShape {
                stages: 2,
                base_width: 4,
            },
            4e8,
            2.5,
            9,
        )
        .unwrap();
        let grid = tiny_grid();
        let enc = encode_input(&grid, &AntennaPlacement::unit(5, 5)).unwrap();
        let a = forward(&model, &enc);
        let b = forward(&model, &enc);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn moving_the_antenna_changes_the_prediction() {
        let model = SurrogateModel::init(
            UNetShape {
                stages: 2,
                base_width: 4,
            },
            4e8,
            1.0,
            5,
        )
        .unwrap();
        let grid = tiny_grid();
        let a = forward(&model, &encode_input(&grid, &AntennaPlacement::unit(3, 3)).unwrap());
        let b = forward(&model, &encode_input(&grid, &AntennaPlacement::unit(18, 20)).unwrap());
        let l2: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum();
        assert!(l2 > 0.0);
    }

    #[test]
    fn loss_hand_case_and_scale_identity() {
        let y = FieldMap::new(
            2,
            1,
            4e8,
            vec![Complex64::new(1.0, 1.0), Complex64::default()],
        );
        let y_hat = FieldMap::new(2, 1, 4e8, vec![Complex64::default(); 2]);
        // (|1+j|² + 0)/2 = 1 at s = 1
        let loss = mse_loss(&[(&y, &y_hat)], 1.0).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
        // loss(y, ŷ at scale s) = loss(y, ŷ)/s²
        let s = 3.0;
        let scaled = mse_loss(&[(&y, &y_hat)], s).unwrap();
        assert!((scaled - loss / (s * s)).abs() < 1e-12);
        // identical fields give exactly zero
        assert_eq!(mse_loss(&[(&y, &y)], 2.0).unwrap(), 0.0);
        // batch order invariance
        let other = FieldMap::new(
            2,
            1,
            4e8,
            vec![Complex64::new(0.5, 0.0), Complex64::new(0.0, 2.0)],
        );
        let ab = mse_loss(&[(&y, &y_hat), (&other, &y_hat)], 1.0).unwrap();
        let ba = mse_loss(&[(&other, &y_hat), (&y, &y_hat)], 1.0).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn gradients_vanish_at_the_minimum_and_scale_with_residual() {
        let model = SurrogateModel::init(
            UNetShape {
                stages: 2,
                base_width: 4,
            },
            4e8,
            1.0,
            21,
        )
        .unwrap();
        let grid = tiny_grid();
        let enc = encode_input(&grid, &AntennaPlacement::unit(6, 6)).unwrap();
        let prediction = forward(&model, &enc);
        // Target equal to the prediction: all gradients are exactly zero.
        let grads = backward(&model, &enc, &prediction).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));

        // Doubling the residual doubles the gradient (quadratic loss).
        let mut target1 = prediction.clone();
        let mut target2 = prediction.clone();
        for (t1, t2) in target1.values_mut().iter_mut().zip(target2.values_mut()) {
            *t1 += Complex64::new(0.01, -0.02);
            *t2 += Complex64::new(0.02, -0.04);
        }
        let g1 = backward(&model, &enc, &target1).unwrap();
        let g2 = backward(&model, &enc, &target2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((b - 2.0 * a).abs() <= 1e-6 * b.abs().max(1e-6));
        }
    }

    #[test]
    fn count_split_matches_protocol() {
        assert_eq!(count_split(14, 43), 602);
        assert_eq!(count_split(6, 43), 258);
        assert_eq!(count_split(1, 1), 1);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let model = SurrogateModel::init(
            UNetShape {
                stages: 3,
                base_width: 8,
            },
            9e8,
            123.456,
            42,
        )
        .unwrap();
        let dir = std::env::temp_dir().join("emu_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.shape, model.shape);
        assert_eq!(loaded.frequency, model.frequency);
        assert_eq!(loaded.normalization, model.normalization);
        assert_eq!(loaded.params, model.params);
        // Bytes are identical after a save of the loaded model.
        let path2 = dir.join("model2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoint_rejects_corrupt_files() {
        let dir = std::env::temp_dir().join("emu_ckpt_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(SurrogateError::CheckpointFormat(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    fn micro_samples(grid: &TissueLabelGrid) -> Vec<TrainSample> {
        // One training sample derived from a fixed synthetic "field".
        let enc = encode_input(grid, &AntennaPlacement::unit(2, 2)).unwrap();
        let values: Vec<Complex64> = (0..grid.width() * grid.height())
            .map(|k| {
                let x = k as f64 / 37.0;
                Complex64::new((x).sin(), (0.7 * x).cos()) * 5.0
            })
            .collect();
        vec![TrainSample {
            subject: "s0".into(),
            is_validation: false,
            encoding: enc,
            target: FieldMap::new(grid.width(), grid.height(), 4e8, values),
        }]
    }

    #[test]
    fn training_is_deterministic_for_fixed_seed() {
        let grid = tiny_grid();
        let samples = micro_samples(&grid);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 1,
            stages: 2,
            base_width: 4,
            ..TrainConfig::default()
        };
        let (m1, l1) = train(&samples, 4e8, &config).unwrap();
        let (m2, l2) = train(&samples, 4e8, &config).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(l1.epochs.len(), l2.epochs.len());
        for (a, b) in l1.epochs.iter().zip(&l2.epochs) {
            assert_eq!(a.train_mse, b.train_mse);
        }
    }

    #[test]
    fn training_rejects_overlapping_splits() {
        let grid = tiny_grid();
        let mut samples = micro_samples(&grid);
        let mut dup = samples[0].clone();
        dup.is_validation = true;
        samples.push(dup);
        let config = TrainConfig {
            epochs: 1,
            stages: 2,
            base_width: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&samples, 4e8, &config),
            Err(SurrogateError::SubjectInBothSplits { .. })
        ));
    }

    #[test]
    fn training_rejects_empty_training_split() {
        let grid = tiny_grid();
        let mut samples = micro_samples(&grid);
        samples[0].is_validation = true;
        let config = TrainConfig {
            epochs: 1,
            stages: 2,
            base_width: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&samples, 4e8, &config),
            Err(SurrogateError::EmptySplit { .. })
        ));
    }
}
