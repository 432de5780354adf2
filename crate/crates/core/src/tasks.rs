//! Synthetic regression tasks on the unit sphere.
//!
//! Inputs are drawn uniformly from S^{d-1} (Gaussian draw, then normalize)
//! and labelled by a small family of teacher functions. All labels are kept
//! in [-1, 1]. The teacher families are a modelling choice for desk-scale
//! experiments; nothing downstream depends on a particular family.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{self, Csv};
use crate::linalg::{self, Matrix, Vector};
use crate::rng::{self, streams};

/// Rows whose cosine similarity exceeds this are treated as duplicates.
pub const DUPLICATE_COSINE: f64 = 1.0 - 1e-9;
pub const NORM_TOL: f64 = 1e-12;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    /// `y = w . x`; parameters are `w` (length d).
    LinearTeacher,
    /// `y = sum_j c_j relu(v_j . x)`; parameters are `[v_1, c_1, v_2, c_2, ...]`,
    /// each unit taking d + 1 numbers.
    ReluTeacher,
    /// `y_i = amplitude * s_i` with `s_i` a seeded sign sequence; parameters
    /// are `[salt]` or `[salt, amplitude]`.
    RandomSigns,
    /// `y = c`; parameters are `[]` (c = 0) or `[c]`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFnSpec {
    pub kind: LabelKind,
    #[serde(default)]
    pub parameters: Vec<f64>,
    #[serde(default)]
    pub clip: bool,
}

impl LabelFnSpec {
    pub fn constant(c: f64) -> Self {
        Self {
            kind: LabelKind::Constant,
            parameters: vec![c],
            clip: false,
        }
    }

    pub fn linear(w: Vec<f64>, clip: bool) -> Self {
        Self {
            kind: LabelKind::LinearTeacher,
            parameters: w,
            clip,
        }
    }

    pub fn random_signs(salt: u32) -> Self {
        Self {
            kind: LabelKind::RandomSigns,
            parameters: vec![salt as f64],
            clip: false,
        }
    }

    /// Linear teacher with a seeded direction of norm `scale`.
    pub fn random_linear(d: usize, scale: f64, seed: u64) -> Self {
        let mut s = rng::stream(seed, streams::TEACHER);
        let w = rng::normal_vec(&mut s, d);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self::linear(w.iter().map(|x| scale * x / norm).collect(), true)
    }

    /// ReLU teacher with `hidden` unit-norm units and output weights
    /// `+-1/sqrt(hidden)`, clipped to [-1, 1].
    pub fn random_relu(d: usize, hidden: usize, seed: u64) -> Self {
        let mut s = rng::stream(seed, streams::TEACHER);
        let mut params = Vec::with_capacity(hidden * (d + 1));
        let c = 1.0 / (hidden as f64).sqrt();
        for _ in 0..hidden {
            let v = rng::normal_vec(&mut s, d);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            params.extend(v.iter().map(|x| x / norm));
            params.push(c * rng::sign(&mut s));
        }
        Self {
            kind: LabelKind::ReluTeacher,
            parameters: params,
            clip: true,
        }
    }

    /// The same labeler with every output negated (`d` is the input dimension).
    pub fn negated(&self, d: usize) -> Self {
        let mut out = self.clone();
        match self.kind {
            LabelKind::LinearTeacher => out.parameters.iter_mut().for_each(|p| *p = -*p),
            LabelKind::Constant => {
                out.parameters = vec![-self.parameters.first().copied().unwrap_or(0.0)]
            }
            LabelKind::RandomSigns => {
                let amp = self.parameters.get(1).copied().unwrap_or(1.0);
                out.parameters = vec![self.parameters[0], -amp];
            }
            LabelKind::ReluTeacher => {
                for unit in out.parameters.chunks_mut(d + 1) {
                    let last = unit.len() - 1;
                    unit[last] = -unit[last];
                }
            }
        }
        out
    }

    /// `(1 - t) * self + t * other` for two teachers of the same kind.
    /// Linear teachers blend their weight vectors; ReLU teachers concatenate
    /// their units with rescaled output weights.
    pub fn blend(&self, other: &Self, t: f64, d: usize) -> Result<Self> {
        self.check(d)?;
        other.check(d)?;
        if self.kind != other.kind {
            return Err(Error::invalid("cannot blend labelers of different kinds"));
        }
        let clip = self.clip || other.clip;
        match self.kind {
            LabelKind::LinearTeacher => {
                if self.parameters.len() != other.parameters.len() {
                    return Err(Error::DimensionMismatch {
                        what: "blended linear teachers",
                        expected: self.parameters.len(),
                        found: other.parameters.len(),
                    });
                }
                let w = self
                    .parameters
                    .iter()
                    .zip(&other.parameters)
                    .map(|(a, b)| (1.0 - t) * a + t * b)
                    .collect();
                Ok(Self::linear(w, clip))
            }
            LabelKind::ReluTeacher => {
                let stride = d + 1;
                let mut params = Vec::new();
                for (src, weight) in [(self, 1.0 - t), (other, t)] {
                    for unit in src.parameters.chunks(stride) {
                        params.extend_from_slice(&unit[..stride - 1]);
                        params.push(weight * unit[stride - 1]);
                    }
                }
                Ok(Self {
                    kind: LabelKind::ReluTeacher,
                    parameters: params,
                    clip,
                })
            }
            LabelKind::Constant => {
                let a = self.parameters.first().copied().unwrap_or(0.0);
                let b = other.parameters.first().copied().unwrap_or(0.0);
                Ok(Self::constant((1.0 - t) * a + t * b))
            }
            LabelKind::RandomSigns => Err(Error::invalid("random-sign labelers cannot be blended")),
        }
    }

    /// Validate parameters against the input dimension.
    pub fn check(&self, d: usize) -> Result<()> {
        if let Some(i) = self.parameters.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("label_fn parameter {i} is not finite")));
        }
        match self.kind {
            LabelKind::LinearTeacher => {
                if self.parameters.len() != d {
                    return Err(Error::DimensionMismatch {
                        what: "linear teacher weights",
                        expected: d,
                        found: self.parameters.len(),
                    });
                }
            }
            LabelKind::ReluTeacher => {
                if self.parameters.is_empty() || !self.parameters.len().is_multiple_of(d + 1) {
                    return Err(Error::invalid(format!(
                        "relu teacher needs a non-empty multiple of d + 1 = {} parameters, got {}",
                        d + 1,
                        self.parameters.len()
                    )));
                }
            }
            LabelKind::RandomSigns => {
                let salt = self.parameters.first().copied().ok_or_else(|| {
                    Error::invalid("random-signs labeler needs a salt parameter")
                })?;
                if salt < 0.0 || salt.fract() != 0.0 || salt > 9.007_199_254_740_992e15 {
                    return Err(Error::invalid("random-signs salt must be a non-negative integer"));
                }
                if self.parameters.len() > 2 {
                    return Err(Error::invalid("random-signs takes at most [salt, amplitude]"));
                }
                let amp = self.parameters.get(1).copied().unwrap_or(1.0);
                if !self.clip && amp.abs() > 1.0 {
                    return Err(Error::invalid("random-signs amplitude exceeds 1 with clip disabled"));
                }
            }
            LabelKind::Constant => {
                if self.parameters.len() > 1 {
                    return Err(Error::invalid("constant labeler takes at most one parameter"));
                }
                let c = self.parameters.first().copied().unwrap_or(0.0);
                if !self.clip && c.abs() > 1.0 {
                    return Err(Error::invalid("constant label exceeds 1 with clip disabled"));
                }
            }
        }
        Ok(())
    }

    /// Label every row of `inputs`.
    pub fn evaluate(&self, inputs: &Matrix) -> Result<Vector> {
        let d = inputs.ncols();
        self.check(d)?;
        let n = inputs.nrows();
        let mut y = match self.kind {
            LabelKind::Constant => {
                Vector::from_element(n, self.parameters.first().copied().unwrap_or(0.0))
            }
            LabelKind::LinearTeacher => {
                let w = Vector::from_column_slice(&self.parameters);
                inputs * w
            }
            LabelKind::ReluTeacher => {
                let mut y = Vector::zeros(n);
                for unit in self.parameters.chunks(d + 1) {
                    let v = Vector::from_column_slice(&unit[..d]);
                    let c = unit[d];
                    let pre = inputs * v;
                    for i in 0..n {
                        y[i] += c * pre[i].max(0.0);
                    }
                }
                y
            }
            LabelKind::RandomSigns => {
                let salt = self.parameters[0] as u64;
                let amp = self.parameters.get(1).copied().unwrap_or(1.0);
                let mut s = rng::stream(salt, streams::LABELS);
                Vector::from_fn(n, |_, _| amp * rng::sign(&mut s))
            }
        };
        if self.clip {
            y.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        } else if let Some(i) = y.iter().position(|v| v.abs() > 1.0) {
            return Err(Error::invalid(format!(
                "label {i} = {} exceeds 1 in magnitude and clipping is disabled",
                y[i]
            )));
        }
        Ok(y)
    }
}

/// `n` unit-norm inputs in R^d with labels in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    name: String,
    seed: u64,
    inputs: Matrix,
    labels: Vector,
    provenance: serde_json::Value,
}

impl TaskDataset {
    /// Build a dataset, rejecting anything that violates the dataset invariants.
    pub fn new(name: impl Into<String>, seed: u64, inputs: Matrix, labels: Vector) -> Result<Self> {
        let task = Self::from_parts_unchecked(name, seed, inputs, labels);
        let report = task.validate();
        if !report.passed {
            return Err(Error::invalid(format!("dataset violates invariants: {}", report.summary())));
        }
        Ok(task)
    }

    /// Build without validation; `validate` reports what is wrong.
    pub fn from_parts_unchecked(
        name: impl Into<String>,
        seed: u64,
        inputs: Matrix,
        labels: Vector,
    ) -> Self {
        Self {
            name: name.into(),
            seed,
            inputs,
            labels,
            provenance: serde_json::Value::Null,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }
    pub fn d(&self) -> usize {
        self.inputs.ncols()
    }
    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }
    pub fn labels(&self) -> &Vector {
        &self.labels
    }
    pub fn provenance(&self) -> &serde_json::Value {
        &self.provenance
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_provenance(mut self, provenance: serde_json::Value) -> Self {
        self.provenance = provenance;
        self
    }

    /// Same inputs, new label vector (checked).
    pub fn with_labels(&self, labels: Vector) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "label vector",
                expected: self.n(),
                found: labels.len(),
            });
        }
        if let Some(i) = labels.iter().position(|y| !(y.abs() <= 1.0)) {
            return Err(Error::invalid(format!("label {i} = {} outside [-1, 1]", labels[i])));
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    pub fn to_json_string(&self) -> Result<String> {
        io::to_json_string(&DatasetFile {
            name: self.name.clone(),
            seed: self.seed,
            d: self.d(),
            n: self.n(),
            inputs: linalg::to_row_major(&self.inputs),
            labels: self.labels.iter().copied().collect(),
            provenance: self.provenance.clone(),
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(s)?;
        if file.labels.len() != file.n {
            return Err(Error::Format(format!(
                "dataset declares n = {} but has {} labels",
                file.n,
                file.labels.len()
            )));
        }
        let inputs = linalg::from_row_major(file.n, file.d, &file.inputs)
            .map_err(|e| Error::Format(e.to_string()))?;
        let task = Self::new(file.name, file.seed, inputs, Vector::from_vec(file.labels))?;
        Ok(task.with_provenance(file.provenance))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json_string()?.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// One sample per line: `index,label,x0,...,x{d-1}`.
    pub fn to_csv(&self) -> Csv {
        let mut header = vec!["index".to_string(), "label".to_string()];
        header.extend((0..self.d()).map(|j| format!("x{j}")));
        let mut csv = Csv::with_header(&header);
        for i in 0..self.n() {
            let mut row = vec![i.to_string(), io::fmt_f64(self.labels[i])];
            row.extend(self.inputs.row(i).iter().map(|&x| io::fmt_f64(x)));
            csv.row(&row);
        }
        csv
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    name: String,
    seed: u64,
    d: usize,
    n: usize,
    inputs: Vec<f64>,
    labels: Vec<f64>,
    #[serde(default)]
    provenance: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n: usize,
    pub d: usize,
    pub max_norm_deviation: f64,
    pub norm_violations: Vec<usize>,
    pub max_abs_label: f64,
    pub label_violations: Vec<usize>,
    pub duplicate_pairs: Vec<(usize, usize)>,
    pub shape_ok: bool,
    pub passed: bool,
}

impl ValidationReport {
    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        if !self.shape_ok {
            parts.push(format!("shape n = {}, d = {} (need n >= 1, d >= 2)", self.n, self.d));
        }
        if !self.norm_violations.is_empty() {
            parts.push(format!(
                "rows {:?} not unit norm (max deviation {:e})",
                self.norm_violations, self.max_norm_deviation
            ));
        }
        if !self.label_violations.is_empty() {
            parts.push(format!("labels {:?} exceed 1 in magnitude", self.label_violations));
        }
        if !self.duplicate_pairs.is_empty() {
            parts.push(format!("duplicate rows {:?}", self.duplicate_pairs));
        }
        if parts.is_empty() {
            "ok".to_string()
        } else {
            parts.join("; ")
        }
    }
}

/// Check norms, label bounds, and duplicate rows. Never fails; the verdict
/// is in `passed`.
pub fn validate(task: &TaskDataset) -> ValidationReport {
    let x = &task.inputs;
    let (n, d) = x.shape();
    let mut max_dev: f64 = 0.0;
    let mut norm_violations = Vec::new();
    let norms: Vec<f64> = (0..n).map(|i| x.row(i).norm()).collect();
    for (i, &nrm) in norms.iter().enumerate() {
        let dev = (nrm - 1.0).abs();
        if !(dev <= NORM_TOL) {
            norm_violations.push(i);
        }
        max_dev = if dev.is_nan() { f64::NAN } else { max_dev.max(dev) };
    }
    let mut max_label: f64 = 0.0;
    let mut label_violations = Vec::new();
    for (i, y) in task.labels.iter().enumerate() {
        if !(y.abs() <= 1.0) {
            label_violations.push(i);
        }
        max_label = max_label.max(y.abs());
    }
    let mut duplicate_pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let denom = norms[i] * norms[j];
            let same = x.row(i) == x.row(j);
            if same || (denom > 0.0 && x.row(i).dot(&x.row(j)) / denom > DUPLICATE_COSINE) {
                duplicate_pairs.push((i, j));
            }
        }
    }
    let shape_ok = n >= 1 && d >= 2 && task.labels.len() == n;
    let passed = shape_ok
        && norm_violations.is_empty()
        && label_violations.is_empty()
        && duplicate_pairs.is_empty();
    ValidationReport {
        n,
        d,
        max_norm_deviation: max_dev,
        norm_violations,
        max_abs_label: max_label,
        label_violations,
        duplicate_pairs,
        shape_ok,
        passed,
    }
}

fn check_shape(n: usize, d: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::invalid("need at least one sample"));
    }
    if d < 2 {
        return Err(Error::invalid("input dimension must be at least 2"));
    }
    Ok(())
}

fn unit_gaussian(d: usize, s: &mut rng::Stream) -> Vector {
    loop {
        let v = Vector::from_vec(rng::normal_vec(s, d));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

fn is_near_duplicate(rows: &[Vector], x: &Vector) -> bool {
    rows.iter().any(|r| r.dot(x) > DUPLICATE_COSINE)
}

/// `n` distinct points drawn uniformly on the unit sphere, optionally mapped
/// through `transform` (applied before the duplicate check).
fn sample_sphere(
    n: usize,
    d: usize,
    s: &mut rng::Stream,
    mut transform: impl FnMut(usize, Vector) -> Vector,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    let mut raw = Vec::with_capacity(n);
    let mut rows: Vec<Vector> = Vec::with_capacity(n);
    for i in 0..n {
        let mut attempts = 0;
        loop {
            let z = unit_gaussian(d, s);
            let x = transform(i, z.clone());
            if !is_near_duplicate(&rows, &x) {
                raw.push(z);
                rows.push(x);
                break;
            }
            attempts += 1;
            if attempts > MAX_RESAMPLES {
                return Err(Error::invalid(format!(
                    "could not draw {n} distinct points on S^{}",
                    d - 1
                )));
            }
        }
    }
    Ok((raw, rows))
}

fn stack_rows(rows: &[Vector], d: usize) -> Matrix {
    Matrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

/// Draw a fresh task: uniform inputs on the sphere labelled by `label_fn`.
pub fn gen_task(n: usize, d: usize, label_fn: &LabelFnSpec, seed: u64) -> Result<TaskDataset> {
    check_shape(n, d)?;
    label_fn.check(d)?;
    let mut s = rng::stream(seed, streams::INPUTS);
    let (_, rows) = sample_sphere(n, d, &mut s, |_, z| z)?;
    let inputs = stack_rows(&rows, d);
    let labels = label_fn.evaluate(&inputs)?;
    let task = TaskDataset::new(format!("task-{seed}"), seed, inputs, labels)?;
    Ok(task.with_provenance(json!({
        "op": "gen_task",
        "n": n,
        "d": d,
        "label_fn": label_fn,
        "seed": seed,
        "generator": rng::GENERATOR_ID,
    })))
}

fn renormalize_rows(x: &mut Matrix) {
    for i in 0..x.nrows() {
        let norm = x.row(i).norm();
        if (norm - 1.0).abs() > 4.0 * f64::EPSILON {
            x.row_mut(i).unscale_mut(norm);
        }
    }
}

/// Apply an orthogonal map to every input; labels are kept.
pub fn rotate_inputs(task: &TaskDataset, rotation: &Matrix) -> Result<TaskDataset> {
    let d = task.d();
    if rotation.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            what: "rotation matrix",
            expected: d,
            found: if rotation.nrows() != d { rotation.nrows() } else { rotation.ncols() },
        });
    }
    let defect = linalg::orthogonality_defect(rotation);
    if !(defect <= 1e-10) {
        return Err(Error::NotOrthogonal { deviation: defect });
    }
    let mut inputs = task.inputs() * rotation.transpose();
    renormalize_rows(&mut inputs);
    let provenance = json!({ "op": "rotate_inputs", "parent": task.provenance });
    Ok(TaskDataset {
        name: format!("{}-rotated", task.name),
        seed: task.seed,
        inputs,
        labels: task.labels.clone(),
        provenance,
    })
}

/// Same inputs, labels recomputed by `label_fn`.
pub fn relabel(task: &TaskDataset, label_fn: &LabelFnSpec) -> Result<TaskDataset> {
    let labels = label_fn.evaluate(task.inputs())?;
    let provenance = json!({ "op": "relabel", "label_fn": label_fn, "parent": task.provenance });
    Ok(TaskDataset {
        labels,
        provenance,
        ..task.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskPairSpec {
    pub n_source: usize,
    pub n_target: usize,
    pub d: usize,
    /// Fraction of target samples drawn from the source process; the rest
    /// come from the source process seen through a fixed random rotation.
    pub input_overlap: f64,
    pub source_labels: LabelFnSpec,
    pub target_labels: LabelFnSpec,
    pub seed: u64,
}

impl TaskPairSpec {
    pub fn check(&self) -> Result<()> {
        check_shape(self.n_source, self.d)?;
        check_shape(self.n_target, self.d)?;
        if !(0.0..=1.0).contains(&self.input_overlap) {
            return Err(Error::invalid(format!(
                "input_overlap = {} outside [0, 1]",
                self.input_overlap
            )));
        }
        self.source_labels.check(self.d)?;
        self.target_labels.check(self.d)?;
        Ok(())
    }
}

/// Build a (source, target) pair.
///
/// Source samples are `(x, f_P(x))` with `x` uniform on the sphere. The
/// first `round(overlap * n_target)` target samples are fresh draws
/// `(x, f_Q(x))` from the same process; the remainder are `(R z, f_Q(z))`
/// for a seeded rotation `R`, i.e. the labelling seen through rotated inputs.
pub fn make_task_pair(spec: &TaskPairSpec) -> Result<(TaskDataset, TaskDataset)> {
    spec.check()?;
    let d = spec.d;
    let source_seed = rng::child_seed(spec.seed, streams::SOURCE);
    let target_seed = rng::child_seed(spec.seed, streams::TARGET);
    let source = gen_task(spec.n_source, d, &spec.source_labels, source_seed)?
        .with_name(format!("source-{}", spec.seed));

    let rotation = linalg::random_orthogonal(d, &mut rng::stream(spec.seed, streams::ROTATION));
    let n_shared = (spec.input_overlap * spec.n_target as f64).round() as usize;
    let mut s = rng::stream(target_seed, streams::INPUTS);
    let (raw, rows) = sample_sphere(spec.n_target, d, &mut s, |i, z| {
        if i < n_shared {
            z
        } else {
            &rotation * z
        }
    })?;
    let mut inputs = stack_rows(&rows, d);
    renormalize_rows(&mut inputs);
    let labels = spec.target_labels.evaluate(&stack_rows(&raw, d))?;
    let target = TaskDataset::new(format!("target-{}", spec.seed), target_seed, inputs, labels)?
        .with_provenance(json!({
            "op": "make_task_pair",
            "spec": spec,
            "role": "target",
            "generator": rng::GENERATOR_ID,
        }));
    let source = source.with_provenance(json!({
        "op": "make_task_pair",
        "spec": spec,
        "role": "source",
        "generator": rng::GENERATOR_ID,
    }));
    Ok((source, target))
}

/// A source task and a family of targets on the inputs of `spec`'s target.
/// Target j is labelled (on its own inputs) by
/// `target_labels.blend(distractor, distortions[j])`, so larger distortions
/// move further from the pair's target labelling.
pub fn distortion_family(
    spec: &TaskPairSpec,
    distractor: &LabelFnSpec,
    distortions: &[f64],
) -> Result<(TaskDataset, Vec<TaskDataset>)> {
    if distortions.is_empty() {
        return Err(Error::invalid("need at least one distortion level"));
    }
    let (source, base) = make_task_pair(spec)?;
    let targets = distortions
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let f = spec.target_labels.blend(distractor, t, spec.d)?;
            Ok(relabel(&base, &f)?.with_name(format!("target-{}-{j}", spec.seed)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((source, targets))
}

/// Source/target pair sharing a teacher, where the source labels also carry
/// a sample-specific sign component of weight `noise`. Long pretraining fits
/// that component, which is useless on the target.
pub fn make_specific_noise_pair(
    n_source: usize,
    n_target: usize,
    d: usize,
    noise: f64,
    seed: u64,
) -> Result<(TaskDataset, TaskDataset)> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::invalid("noise weight must lie in [0, 1]"));
    }
    let teacher = LabelFnSpec::random_relu(d, 4, rng::child_seed(seed, streams::TEACHER));
    let spec = TaskPairSpec {
        n_source,
        n_target,
        d,
        input_overlap: 1.0,
        source_labels: teacher.clone(),
        target_labels: teacher,
        seed,
    };
    let (source, target) = make_task_pair(&spec)?;
    let signs = LabelFnSpec::random_signs((seed % (1 << 31)) as u32).evaluate(source.inputs())?;
    let mixed = source.labels() * (1.0 - noise) + signs * noise;
    let source = source
        .with_labels(mixed.map(|v| v.clamp(-1.0, 1.0)))?
        .with_name(format!("noisy-source-{seed}"));
    Ok((source, target))
}
