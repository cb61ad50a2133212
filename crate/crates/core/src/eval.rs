//! Accuracy sweeps: attacks × coefficient filters × optional smoothing,
//! evaluated on a seed set of correctly classified samples.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{attack_batch, seed_set, AttackKind, AttackSpec, SoftmaxClassifier};
use crate::error::{Result, SaakError};
use crate::filter::{apply_filter, FilterSpec, FilterStrategy};
use crate::io::{read_file, write_atomic, Dataset, DatasetFilter};
use crate::model::SaakModel;
use crate::smoothing::Smoothing;
use crate::tensor::{CoefficientTensor, ImageTensor};
use crate::transform::{forward, inverse};

pub const DEFAULT_SEED_SET: usize = 100;

fn default_seed_set() -> usize {
    DEFAULT_SEED_SET
}

fn default_clamp() -> bool {
    true
}

/// A sweep definition, read from JSON.
///
/// Filters are the cross product `strategies × counts × parameters`;
/// truncation ignores `parameters`, and an empty `parameters` list means the
/// strategy default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Dataset file or directory, relative paths resolved against the grid
    /// file's directory.
    pub data: PathBuf,
    #[serde(default)]
    pub classes: Option<Vec<usize>>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default = "default_seed_set")]
    pub seed_set: usize,
    pub strategies: Vec<FilterStrategy>,
    pub counts: Vec<usize>,
    #[serde(default)]
    pub parameters: Vec<f64>,
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub smoothing: Vec<Smoothing>,
    #[serde(default = "default_clamp")]
    pub clamp: bool,
}

impl GridConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut grid: GridConfig = serde_json::from_str(text)?;
        // FGSM is a single full step regardless of what the entry says
        for a in grid.attacks.iter_mut().filter(|a| a.kind == AttackKind::Fgsm) {
            *a = AttackSpec::fgsm(a.epsilon);
        }
        grid.validate()?;
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut grid = Self::from_json(&String::from_utf8_lossy(&read_file(path)?))?;
        if grid.data.is_relative() {
            if let Some(dir) = path.parent() {
                grid.data = dir.join(&grid.data);
            }
        }
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed_set == 0 {
            return Err(SaakError::InvalidArgument("seed_set must be positive".into()));
        }
        for a in &self.attacks {
            a.validate()?;
        }
        for s in &self.smoothing {
            Smoothing::new(s.kind, s.kernel)?;
        }
        self.filters().map(|_| ())
    }

    /// The expanded filter list, in grid order.
    pub fn filters(&self) -> Result<Vec<FilterSpec>> {
        let mut out = Vec::new();
        for &strategy in &self.strategies {
            for &count in &self.counts {
                if strategy == FilterStrategy::Truncate || self.parameters.is_empty() {
                    out.push(FilterSpec::new(strategy, count, None)?);
                } else {
                    for &p in &self.parameters {
                        out.push(FilterSpec::new(strategy, count, Some(p))?);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn load_data(&self) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
        let ds = Dataset::load(
            &self.data,
            &DatasetFilter {
                classes: self.classes.clone(),
                limit: self.limit,
            },
        )?;
        let labels = ds
            .labels
            .ok_or_else(|| SaakError::InvalidArgument(format!("{} has no labels", self.data.display())))?;
        Ok((ds.images, labels))
    }
}

/// One defense configuration: an optional coefficient filter followed by
/// optional spatial smoothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Defense {
    pub filter: Option<FilterSpec>,
    pub smoothing: Option<Smoothing>,
}

impl Defense {
    pub const NONE: Defense = Defense {
        filter: None,
        smoothing: None,
    };

    pub fn label(&self) -> String {
        match (self.filter, self.smoothing) {
            (None, None) => "none".into(),
            (Some(f), None) => f.to_string(),
            (None, Some(s)) => s.to_string(),
            (Some(f), Some(s)) => format!("{f}+{s}"),
        }
    }

    /// Applies the defense, reusing the image's coefficients when given.
    fn apply(&self, img: &ImageTensor, coeffs: Option<&CoefficientTensor>, m: &SaakModel, clamp: bool) -> Result<ImageTensor> {
        let filtered = match (self.filter, coeffs) {
            (Some(spec), Some(c)) => inverse(&apply_filter(c, &spec)?, m, clamp)?,
            (Some(spec), None) => inverse(&apply_filter(&forward(img, m)?, &spec)?, m, clamp)?,
            (None, _) => img.clone(),
        };
        match self.smoothing {
            Some(s) => s.apply(&filtered),
            None => Ok(filtered),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub condition: String,
    pub attack: String,
    pub filter: String,
    pub accuracy: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// Compact JSON of the grid, written as a comment header.
    pub grid: String,
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("# grid={}\ncondition,attack,filter,accuracy,sample_count\n", self.grid);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.condition, r.attack, r.filter, r.accuracy, r.sample_count
            ));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let csv = self.to_csv();
        write_atomic(path, |w| w.write_all(csv.as_bytes()))
    }

    pub fn find(&self, attack: &str, filter: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.attack == attack && r.filter == filter)
    }
}

/// Accuracy of `f` on `images` after each defense, sharing one forward
/// transform per image across all defenses.
pub fn defended_accuracies(
    f: &SoftmaxClassifier,
    m: &SaakModel,
    images: &[ImageTensor],
    labels: &[usize],
    defenses: &[Defense],
    clamp: bool,
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(SaakError::Empty("no images to evaluate"));
    }
    if images.len() != labels.len() {
        return Err(SaakError::LengthMismatch {
            expected: images.len(),
            actual: labels.len(),
        });
    }
    for d in defenses {
        if let Some(spec) = d.filter {
            spec.validate(m.spectral_dim())?;
        }
    }
    let needs_coeffs = defenses.iter().any(|d| d.filter.is_some());
    let correct: Vec<Vec<usize>> = images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(img, &y)| -> Result<Vec<usize>> {
            let coeffs = needs_coeffs.then(|| forward(img, m)).transpose()?;
            defenses
                .iter()
                .map(|d| {
                    let defended = d.apply(img, coeffs.as_ref(), m, clamp)?;
                    Ok(usize::from(f.predict(&defended)? == y))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = images.len() as f64;
    Ok((0..defenses.len())
        .map(|j| correct.iter().map(|c| c[j]).sum::<usize>() as f64 / n)
        .collect())
}

/// Runs the sweep on already-loaded data: picks the seed set, attacks it,
/// and evaluates every defense on the clean and each attacked set.
pub fn run_grid(
    f: &SoftmaxClassifier,
    m: &SaakModel,
    grid: &GridConfig,
    images: &[ImageTensor],
    labels: &[usize],
) -> Result<EvaluationReport> {
    grid.validate()?;
    if let Some(img) = images.first() {
        if img.shape() != f.input_shape() {
            return Err(SaakError::ShapeMismatch(format!(
                "images are {:?}, classifier expects {:?}",
                img.shape(),
                f.input_shape()
            )));
        }
        let (h, w, c) = img.shape();
        m.config().check_image(h, w, c)?;
    }
    let seeds = seed_set(f, images, labels, grid.seed_set)?;
    if seeds.is_empty() {
        return Err(SaakError::Empty("no correctly classified samples for the seed set"));
    }
    if seeds.len() < grid.seed_set {
        log::warn!("seed set has {} samples, {} requested", seeds.len(), grid.seed_set);
    }
    let xs: Vec<ImageTensor> = seeds.iter().map(|&i| images[i].clone()).collect();
    let ys: Vec<usize> = seeds.iter().map(|&i| labels[i]).collect();

    let filters = grid.filters()?;
    let mut defenses = vec![Defense::NONE];
    defenses.extend(filters.iter().map(|&f| Defense {
        filter: Some(f),
        smoothing: None,
    }));
    for &s in &grid.smoothing {
        defenses.push(Defense {
            filter: None,
            smoothing: Some(s),
        });
        defenses.extend(filters.iter().map(|&f| Defense {
            filter: Some(f),
            smoothing: Some(s),
        }));
    }

    let mut conditions: Vec<(String, String, Vec<ImageTensor>)> = vec![("clean".into(), "none".into(), xs.clone())];
    for spec in &grid.attacks {
        let adv = attack_batch(f, &xs, &ys, spec)?;
        conditions.push((spec.label(), spec.kind.to_string(), adv));
    }

    let mut rows = Vec::new();
    for (condition, attack, set) in &conditions {
        let acc = defended_accuracies(f, m, set, &ys, &defenses, grid.clamp)?;
        for (d, a) in defenses.iter().zip(acc) {
            rows.push(ReportRow {
                condition: format!("{condition}/{}", d.label()),
                attack: attack.clone(),
                filter: d.label(),
                accuracy: a,
                sample_count: set.len(),
            });
        }
    }
    Ok(EvaluationReport {
        grid: serde_json::to_string(grid)?,
        rows,
    })
}
