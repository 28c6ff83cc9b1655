use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

pub const DEFAULT_INTEREST_CLASSES: [&str; 3] = ["shoes", "fashion", "hospitality"];

/// Binary multi-label interest annotations for a subset of users.
#[derive(Debug, Clone, PartialEq)]
pub struct InterestLabels {
    classes: Vec<String>,
    labels: BTreeMap<usize, Vec<bool>>,
}

impl InterestLabels {
    pub fn new(classes: Vec<String>, labels: BTreeMap<usize, Vec<bool>>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Empty("interest classes"));
        }
        for (u, l) in &labels {
            if l.len() != classes.len() {
                return Err(Error::DimensionMismatch {
                    context: format!("interest labels of user {u}"),
                    expected: classes.len(),
                    actual: l.len(),
                });
            }
            if !l.iter().any(|&b| b) {
                return Err(Error::InvalidConfig(format!("user {u} has no interest class")));
            }
        }
        Ok(InterestLabels { classes, labels })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn users(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, user: usize) -> Option<&[bool]> {
        self.labels.get(&user).map(Vec::as_slice)
    }

    /// Same users and classes with the label vectors permuted across users.
    pub fn shuffled(&self, seed: u64) -> Self {
        let users: Vec<usize> = self.labels.keys().copied().collect();
        let mut rows: Vec<Vec<bool>> = self.labels.values().cloned().collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        InterestLabels {
            classes: self.classes.clone(),
            labels: users.into_iter().zip(rows).collect(),
        }
    }

    /// Tab-separated: a `user` header followed by class names, then one row
    /// of 0/1 flags per user.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let classes: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
        let mut labels = BTreeMap::new();
        for (i, line) in lines {
            let mut fields = line.split('\t');
            let user = fields
                .next()
                .and_then(|f| f.trim().parse::<usize>().ok())
                .ok_or_else(|| parse_err(i + 1, "bad user id".into()))?;
            let flags = fields
                .map(|f| match f.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(parse_err(i + 1, format!("bad flag {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if labels.insert(user, flags).is_some() {
                return Err(parse_err(i + 1, format!("duplicate user {user}")));
            }
        }
        InterestLabels::new(classes, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("user");
        for c in &self.classes {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (u, l) in &self.labels {
            let _ = write!(out, "{u}");
            for &b in l {
                out.push_str(if b { "\t1" } else { "\t0" });
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    pub iterations: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            iterations: 500,
        }
    }
}

/// Linear classifier `sign(w·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    /// Minimizes `½‖w‖² + C Σ max(0, 1 − y(w·x + b))` by full-batch
    /// projected subgradient steps of size `1/(λt)` with `λ = 1/(Cn)`,
    /// returning the average of the second half of the iterates. The bias is
    /// an extra constant feature.
    pub fn train(x: &[&[f64]], y: &[bool], config: &SvmConfig) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Empty("classifier training set"));
        }
        if !(config.c > 0.0) || config.iterations == 0 {
            return Err(Error::InvalidConfig("svm needs C > 0 and iterations > 0".into()));
        }
        let d = x[0].len();
        let n = x.len();
        let lambda = 1.0 / (config.c * n as f64);
        let radius = 1.0 / lambda.sqrt();
        let mut w = vec![0.0; d + 1];
        let mut avg = vec![0.0; d + 1];
        let mut averaged = 0usize;
        let mut step = vec![0.0; d + 1];
        let start_avg = config.iterations / 2;
        for t in 1..=config.iterations {
            step.fill(0.0);
            for (xi, &yi) in x.iter().zip(y) {
                let s = if yi { 1.0 } else { -1.0 };
                if s * (dot(&w[..d], xi) + w[d]) < 1.0 {
                    for (g, v) in step.iter_mut().zip(xi.iter()) {
                        *g += s * v;
                    }
                    step[d] += s;
                }
            }
            let eta = 1.0 / (lambda * t as f64);
            let shrink = 1.0 - eta * lambda;
            for (wj, gj) in w.iter_mut().zip(&step) {
                *wj = shrink * *wj + eta / n as f64 * gj;
            }
            let nw = dot(&w, &w).sqrt();
            if nw > radius {
                w.iter_mut().for_each(|v| *v *= radius / nw);
            }
            if t > start_avg {
                averaged += 1;
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += v;
                }
            }
        }
        avg.iter_mut().for_each(|a| *a /= averaged as f64);
        let bias = avg.pop().unwrap_or(0.0);
        Ok(LinearSvm { weights: avg, bias })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }
}

pub fn f1_score(truth: &[bool], predicted: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterestReport {
    pub classes: Vec<String>,
    /// Mean F1 over folds for each class.
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
    pub folds: usize,
}

/// Splits indices into `folds` groups, dealing shuffled positives and
/// negatives round-robin so each fold keeps the class ratio.
fn stratified_folds(y: &[bool], folds: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut assign = vec![0; y.len()];
    for label in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == label).collect();
        idx.shuffle(rng);
        for (k, i) in idx.into_iter().enumerate() {
            assign[i] = k % folds;
        }
    }
    assign
}

/// One-vs-rest linear SVMs under stratified k-fold cross-validation; the
/// result is the F1 averaged over classes and folds. Row `u` of `embeddings`
/// belongs to user `u`. Features are centered and scaled by the training
/// fold's root-mean-square norm.
pub fn predict_user_interests(
    embeddings: &Matrix,
    labels: &InterestLabels,
    folds: usize,
    seed: u64,
    config: &SvmConfig,
) -> Result<InterestReport> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let users: Vec<usize> = labels.users().collect();
    if let Some(&bad) = users.iter().find(|&&u| u >= embeddings.rows()) {
        return Err(Error::OutOfRange {
            what: "user embedding",
            index: bad,
            size: embeddings.rows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class = Vec::with_capacity(labels.classes().len());
    for (c, class) in labels.classes().iter().enumerate() {
        let y: Vec<bool> = users.iter().map(|&u| labels.labels[&u][c]).collect();
        let pos = y.iter().filter(|&&b| b).count();
        if pos < folds || y.len() - pos < folds {
            return Err(Error::DegenerateFold(format!(
                "class {class:?} has {pos} positives and {} negatives for {folds} folds",
                y.len() - pos
            )));
        }
        let assign = stratified_folds(&y, folds, &mut rng);
        let mut total = 0.0;
        for f in 0..folds {
            let train: Vec<usize> = (0..y.len()).filter(|&i| assign[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| assign[i] == f).collect();
            let scaled = standardize(embeddings, &users, &train);
            let xs: Vec<&[f64]> = train.iter().map(|&i| scaled.row(i)).collect();
            let ys: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let svm = LinearSvm::train(&xs, &ys, config)?;
            let truth: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            let pred: Vec<bool> = test.iter().map(|&i| svm.predict(scaled.row(i))).collect();
            total += f1_score(&truth, &pred);
        }
        per_class.push(total / folds as f64);
    }
    let macro_f1 = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(InterestReport {
        classes: labels.classes().to_vec(),
        per_class,
        macro_f1,
        folds,
    })
}

/// Rows for `users`, centered by the mean of the `train` rows and divided
/// by their root-mean-square norm.
fn standardize(embeddings: &Matrix, users: &[usize], train: &[usize]) -> Matrix {
    let d = embeddings.cols();
    let mut mean = vec![0.0; d];
    for &i in train {
        for (m, v) in mean.iter_mut().zip(embeddings.row(users[i])) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut out = Matrix::zeros(users.len(), d);
    for (i, &u) in users.iter().enumerate() {
        for ((o, v), m) in out.row_mut(i).iter_mut().zip(embeddings.row(u)).zip(&mean) {
            *o = v - m;
        }
    }
    let ms = train.iter().map(|&i| dot(out.row(i), out.row(i))).sum::<f64>() / train.len() as f64;
    if ms > 0.0 {
        let s = 1.0 / ms.sqrt();
        out.as_mut_slice().iter_mut().for_each(|v| *v *= s);
    }
    out
}
