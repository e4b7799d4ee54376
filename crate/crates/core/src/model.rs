//! Task data model, the nearest-class-mean classifier, and the projection
//! onto the subspace spanned by the class means.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{ColPivQR, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in feature space.
pub type FeatureVector = DVector<f64>;

/// Relative threshold on the R diagonal below which a QR direction is
/// treated as numerically null.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Class identifier.
///
/// Integer labels order by value and sort before textual labels, which
/// order lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassLabel {
    Int(i64),
    Text(String),
}

impl ClassLabel {
    /// Parses a raw field, preferring an integer reading.
    pub fn parse(raw: &str) -> Self {
        let trimmed = raw.trim();
        match trimmed.parse::<i64>() {
            Ok(v) => ClassLabel::Int(v),
            Err(_) => ClassLabel::Text(trimmed.to_string()),
        }
    }
}

impl Ord for ClassLabel {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ClassLabel::Int(a), ClassLabel::Int(b)) => a.cmp(b),
            (ClassLabel::Int(_), ClassLabel::Text(_)) => Ordering::Less,
            (ClassLabel::Text(_), ClassLabel::Int(_)) => Ordering::Greater,
            (ClassLabel::Text(a), ClassLabel::Text(b)) => a.cmp(b),
        }
    }
}

impl PartialOrd for ClassLabel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassLabel::Int(v) => write!(f, "{v}"),
            ClassLabel::Text(s) => f.write_str(s),
        }
    }
}

impl From<i64> for ClassLabel {
    fn from(v: i64) -> Self {
        ClassLabel::Int(v)
    }
}

impl From<&str> for ClassLabel {
    fn from(v: &str) -> Self {
        ClassLabel::Text(v.to_string())
    }
}

/// Labeled feature vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    vectors: Vec<FeatureVector>,
    labels: Vec<ClassLabel>,
    dim: usize,
}

impl FeatureSet {
    pub fn new(vectors: Vec<FeatureVector>, labels: Vec<ClassLabel>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::InvalidTask(format!(
                "{} vectors but {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        let dim = vectors.first().map(|v| v.len()).unwrap_or(0);
        if vectors.is_empty() || dim == 0 {
            return Err(Error::InvalidTask("feature set is empty".into()));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
        }
        Ok(Self { vectors, labels, dim })
    }

    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Groups vectors by label in canonical label order; within a class the
    /// input order is kept. Each group is a `dim × count` matrix.
    pub fn group_by_class(&self) -> BTreeMap<ClassLabel, DMatrix<f64>> {
        let mut members: BTreeMap<ClassLabel, Vec<&FeatureVector>> = BTreeMap::new();
        for (v, l) in self.vectors.iter().zip(&self.labels) {
            members.entry(l.clone()).or_default().push(v);
        }
        members
            .into_iter()
            .map(|(label, vs)| {
                let cols: Vec<FeatureVector> = vs.into_iter().cloned().collect();
                (label, DMatrix::from_columns(&cols))
            })
            .collect()
    }
}

/// An n-way k-shot classification problem.
///
/// Classes are stored in canonical label order; each class holds its samples
/// as the columns of a `dim × count` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotTask {
    classes: Vec<ClassLabel>,
    support: Vec<DMatrix<f64>>,
    query: Option<Vec<DMatrix<f64>>>,
    dim: usize,
    k_shots: usize,
}

impl FewShotTask {
    pub fn from_feature_sets(support: FeatureSet, query: Option<FeatureSet>) -> Result<Self> {
        let grouped = support.group_by_class();
        let classes: Vec<ClassLabel> = grouped.keys().cloned().collect();
        let support_mats: Vec<DMatrix<f64>> = grouped.into_values().collect();
        let query_mats = match query {
            None => None,
            Some(q) => {
                if q.dim() != support.dim() {
                    return Err(Error::DimensionMismatch { expected: support.dim(), found: q.dim() });
                }
                let mut qg = q.group_by_class();
                if let Some(extra) = qg.keys().find(|l| !classes.contains(l)) {
                    return Err(Error::InvalidTask(format!(
                        "query label {extra} does not appear in support"
                    )));
                }
                Some(
                    classes
                        .iter()
                        .map(|c| qg.remove(c).unwrap_or_else(|| DMatrix::zeros(support.dim(), 0)))
                        .collect(),
                )
            }
        };
        Self::from_grouped(classes, support_mats, query_mats)
    }

    /// Builds a task from per-class sample matrices. Classes are reordered
    /// canonically if needed.
    pub fn from_grouped(
        classes: Vec<ClassLabel>,
        support: Vec<DMatrix<f64>>,
        query: Option<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        if classes.len() != support.len() {
            return Err(Error::InvalidTask("class count does not match support groups".into()));
        }
        if classes.len() < 2 {
            return Err(Error::InvalidTask(format!("need at least 2 classes, got {}", classes.len())));
        }
        if let Some(q) = &query {
            if q.len() != classes.len() {
                return Err(Error::InvalidTask("query groups do not match classes".into()));
            }
        }
        let dim = support[0].nrows();
        if dim == 0 {
            return Err(Error::InvalidTask("zero-dimensional features".into()));
        }
        let k_shots = support[0].ncols();
        for (c, m) in support.iter().enumerate() {
            if m.nrows() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.nrows() });
            }
            if m.ncols() == 0 {
                return Err(Error::EmptyClass(classes[c].to_string()));
            }
            if m.ncols() != k_shots {
                return Err(Error::InvalidTask(format!(
                    "class {} has {} samples, expected {k_shots}",
                    classes[c],
                    m.ncols()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index: c });
            }
        }
        for q in query.iter().flatten() {
            if q.nrows() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: q.nrows() });
            }
        }

        let mut order: Vec<usize> = (0..classes.len()).collect();
        order.sort_by(|&a, &b| classes[a].cmp(&classes[b]));
        if order.windows(2).any(|w| classes[w[0]] == classes[w[1]]) {
            return Err(Error::InvalidTask("duplicate class label".into()));
        }
        let classes = order.iter().map(|&i| classes[i].clone()).collect();
        let mut support = support.into_iter().map(Some).collect::<Vec<_>>();
        let support = order.iter().map(|&i| support[i].take().unwrap()).collect();
        let query = query.map(|q| {
            let mut q = q.into_iter().map(Some).collect::<Vec<_>>();
            order.iter().map(|&i| q[i].take().unwrap()).collect()
        });
        Ok(Self { classes, support, query, dim, k_shots })
    }

    pub fn n_ways(&self) -> usize {
        self.classes.len()
    }

    pub fn k_shots(&self) -> usize {
        self.k_shots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    /// Support samples per class, `dim × k` each.
    pub fn support(&self) -> &[DMatrix<f64>] {
        &self.support
    }

    pub fn query(&self) -> Option<&[DMatrix<f64>]> {
        self.query.as_deref()
    }

    /// Same task with the held-out samples dropped.
    pub fn without_query(&self) -> Self {
        Self { query: None, ..self.clone() }
    }

    /// The support samples as a flat labeled set.
    pub fn support_set(&self) -> FeatureSet {
        let mut vectors = Vec::with_capacity(self.n_ways() * self.k_shots);
        let mut labels = Vec::with_capacity(vectors.capacity());
        for (label, m) in self.classes.iter().zip(&self.support) {
            for col in m.column_iter() {
                vectors.push(col.into_owned());
                labels.push(label.clone());
            }
        }
        FeatureSet { vectors, labels, dim: self.dim }
    }

    /// Empirical class means in canonical class order.
    pub fn class_means(&self) -> Vec<FeatureVector> {
        self.support.iter().map(column_mean).collect()
    }
}

pub(crate) fn column_mean(m: &DMatrix<f64>) -> FeatureVector {
    m.column_sum() / m.ncols() as f64
}

/// Estimates class centers as the empirical average of each class.
pub fn fit_class_means(support: &FeatureSet) -> Result<BTreeMap<ClassLabel, FeatureVector>> {
    support
        .group_by_class()
        .into_iter()
        .map(|(label, m)| {
            if m.ncols() == 0 {
                Err(Error::EmptyClass(label.to_string()))
            } else {
                Ok((label, column_mean(&m)))
            }
        })
        .collect()
}

/// Index of the nearest mean; ties go to the lowest index.
pub fn nearest_index<'a, I>(z: &[f64], means: I) -> usize
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, m) in means.into_iter().enumerate() {
        let d: f64 = z.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_dist {
            best_dist = d;
            best = i;
        }
    }
    best
}

/// Assigns `z` to the class whose mean is closest in Euclidean distance.
/// Exact ties resolve to the smallest label.
pub fn ncm_classify(z: &FeatureVector, means: &BTreeMap<ClassLabel, FeatureVector>) -> Result<ClassLabel> {
    if means.is_empty() {
        return Err(Error::InvalidTask("no class means".into()));
    }
    for m in means.values() {
        if m.len() != z.len() {
            return Err(Error::DimensionMismatch { expected: z.len(), found: m.len() });
        }
    }
    let idx = nearest_index(z.as_slice(), means.values().map(|m| m.as_slice()));
    Ok(means.keys().nth(idx).cloned().expect("index within map"))
}

/// A task expressed in coordinates of the class-mean subspace.
#[derive(Debug, Clone)]
pub struct ProjectedTask {
    /// Orthonormal rows spanning the mean differences, `rank × d`.
    pub basis: DMatrix<f64>,
    /// Point subtracted before projecting (the first class mean).
    pub origin: FeatureVector,
    pub classes: Vec<ClassLabel>,
    /// Projected support samples per class, `rank × k` each.
    pub support_proj: Vec<DMatrix<f64>>,
    pub means_proj: Vec<FeatureVector>,
}

impl ProjectedTask {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn project(&self, z: &FeatureVector) -> FeatureVector {
        &self.basis * (z - &self.origin)
    }

    pub fn project_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = m.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.origin;
        }
        &self.basis * centered
    }
}

/// Orthonormal basis (as rows) of the span of `means[c] - means[0]`,
/// obtained from a column-pivoted QR with rank detection.
pub fn class_subspace_basis(means: &[FeatureVector]) -> Result<DMatrix<f64>> {
    if means.len() < 2 {
        return Err(Error::InvalidTask("projection needs at least 2 classes".into()));
    }
    let d = means[0].len();
    let diffs: Vec<FeatureVector> = means[1..].iter().map(|m| m - &means[0]).collect();
    let a = DMatrix::from_columns(&diffs);
    let qr = ColPivQR::new(a);
    let r = qr.r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let largest = diag.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 || !largest.is_finite() {
        return Err(Error::DegenerateCenters);
    }
    let rank = diag.iter().take_while(|&&v| v >= RANK_TOLERANCE * largest).count();
    let q = qr.q();
    debug_assert_eq!(q.nrows(), d);
    Ok(q.columns(0, rank).transpose())
}

/// Projects a task onto the subspace spanned by its class-mean differences.
/// Squared-distance differences to any two means, and hence NCM decisions,
/// are preserved.
pub fn project_to_class_subspace(task: &FewShotTask, means: &[FeatureVector]) -> Result<ProjectedTask> {
    if means.len() != task.n_ways() {
        return Err(Error::InvalidTask("one mean per class required".into()));
    }
    if let Some(m) = means.iter().find(|m| m.len() != task.dim()) {
        return Err(Error::DimensionMismatch { expected: task.dim(), found: m.len() });
    }
    let basis = class_subspace_basis(means)?;
    let mut projected = ProjectedTask {
        basis,
        origin: means[0].clone(),
        classes: task.classes().to_vec(),
        support_proj: Vec::new(),
        means_proj: Vec::new(),
    };
    projected.support_proj = task.support().iter().map(|m| projected.project_columns(m)).collect();
    projected.means_proj = means.iter().map(|m| projected.project(m)).collect();
    Ok(projected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn set(rows: &[(&[f64], i64)]) -> FeatureSet {
        FeatureSet::new(
            rows.iter().map(|(v, _)| DVector::from_column_slice(v)).collect(),
            rows.iter().map(|(_, l)| ClassLabel::Int(*l)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn label_order_numeric_before_text() {
        let mut labels = vec![
            ClassLabel::from("b"),
            ClassLabel::Int(10),
            ClassLabel::from("a"),
            ClassLabel::Int(2),
        ];
        labels.sort();
        assert_eq!(
            labels,
            vec![ClassLabel::Int(2), ClassLabel::Int(10), ClassLabel::from("a"), ClassLabel::from("b")]
        );
        assert_eq!(ClassLabel::parse(" 7 "), ClassLabel::Int(7));
        assert_eq!(ClassLabel::parse("n015"), ClassLabel::from("n015"));
    }

    #[test]
    fn means_of_single_and_pairs() {
        let s = set(&[(&[3.0, -1.0], 0), (&[0.0, 0.0], 1), (&[2.0, 2.0], 1)]);
        let means = fit_class_means(&s).unwrap();
        assert_eq!(means[&ClassLabel::Int(0)], dvector![3.0, -1.0]);
        assert_eq!(means[&ClassLabel::Int(1)], dvector![1.0, 1.0]);
    }

    #[test]
    fn duplicated_samples_keep_means() {
        let s = set(&[(&[0.0, 1.0], 0), (&[4.0, 3.0], 0), (&[1.0, 1.0], 1)]);
        let d = set(&[
            (&[0.0, 1.0], 0),
            (&[4.0, 3.0], 0),
            (&[1.0, 1.0], 1),
            (&[0.0, 1.0], 0),
            (&[4.0, 3.0], 0),
            (&[1.0, 1.0], 1),
        ]);
        assert_eq!(fit_class_means(&s).unwrap(), fit_class_means(&d).unwrap());
    }

    #[test]
    fn classify_cases() {
        let mut means = BTreeMap::new();
        means.insert(ClassLabel::Int(0), dvector![-1.0]);
        means.insert(ClassLabel::Int(1), dvector![2.0]);
        assert_eq!(ncm_classify(&dvector![0.0], &means).unwrap(), ClassLabel::Int(0));
        assert_eq!(ncm_classify(&dvector![2.0], &means).unwrap(), ClassLabel::Int(1));
        // equidistant: smaller label wins
        assert_eq!(ncm_classify(&dvector![0.5], &means).unwrap(), ClassLabel::Int(0));
        assert!(matches!(
            ncm_classify(&dvector![0.5, 1.0], &means),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ragged_feature_set_rejected() {
        let err = FeatureSet::new(vec![dvector![1.0, 2.0], dvector![1.0]], vec![0.into(), 1.into()]);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let err = FeatureSet::new(vec![dvector![f64::NAN]], vec![0.into()]);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn task_requires_equal_shots_and_known_query_labels() {
        let s = set(&[(&[0.0], 0), (&[1.0], 0), (&[2.0], 1)]);
        assert!(FewShotTask::from_feature_sets(s, None).is_err());
        let s = set(&[(&[0.0], 0), (&[2.0], 1)]);
        let q = set(&[(&[0.0], 5)]);
        assert!(FewShotTask::from_feature_sets(s, Some(q)).is_err());
    }

    #[test]
    fn binary_projection_is_one_dimensional_isometry() {
        let s = set(&[(&[0.0, 0.0, 1.0], 0), (&[3.0, 4.0, 1.0], 1)]);
        let task = FewShotTask::from_feature_sets(s, None).unwrap();
        let means = task.class_means();
        let p = project_to_class_subspace(&task, &means).unwrap();
        assert_eq!(p.dim(), 1);
        let dist = (&p.means_proj[0] - &p.means_proj[1]).norm();
        assert!((dist - 5.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_means_reduce_rank() {
        let s = set(&[(&[0.0, 0.0, 0.0], 0), (&[1.0, 1.0, 0.0], 1), (&[3.0, 3.0, 0.0], 2)]);
        let task = FewShotTask::from_feature_sets(s, None).unwrap();
        let p = project_to_class_subspace(&task, &task.class_means()).unwrap();
        assert_eq!(p.dim(), 1);
    }

    #[test]
    fn coincident_first_pair_still_spans_third() {
        let s = set(&[(&[1.0, 0.0, 0.0], 0), (&[1.0, 0.0, 0.0], 1), (&[1.0, 0.0, 2.0], 2)]);
        let task = FewShotTask::from_feature_sets(s, None).unwrap();
        let p = project_to_class_subspace(&task, &task.class_means()).unwrap();
        assert_eq!(p.dim(), 1);
        assert!(((&p.means_proj[2] - &p.means_proj[0]).norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_means_are_degenerate() {
        let s = set(&[(&[1.0, 2.0], 0), (&[1.0, 2.0], 1)]);
        let task = FewShotTask::from_feature_sets(s, None).unwrap();
        assert_eq!(
            project_to_class_subspace(&task, &task.class_means()).unwrap_err(),
            Error::DegenerateCenters
        );
    }
}
