//! 1NN distortion recognition in the learned subspaces.
//!
//! Every block position keeps its own corpus of labeled training
//! projections. A query image is classified by running 1NN per block
//! (Euclidean distance in the p-dimensional projection space, exact ties
//! broken toward the lowest image id) and taking a majority vote over the
//! block labels. Per-image reports carry the full vote histogram and the top
//! two votes with percentages.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Number of distortion classes: original plus six families.
pub const NUM_LABELS: usize = 7;

/// One training projection with its label and the id of the image it came
/// from.
#[derive(Debug, Clone)]
pub struct CorpusEntry<T> {
    pub projection: DVector<T>,
    pub label: u8,
    pub image_id: usize,
}

/// Per-block 1NN corpora: `per_block[i]` holds one entry per training image,
/// ordered by image id.
#[derive(Debug, Clone)]
pub struct ProjectionCorpus<T> {
    per_block: Vec<Vec<CorpusEntry<T>>>,
}

impl<T: Real> ProjectionCorpus<T> {
    /// Builds the corpus from per-image block projections (`projections[j]`
    /// is image `j`'s `b` block projections) and their labels.
    pub fn build(projections: &[Vec<DVector<T>>], labels: &[u8]) -> Result<Self> {
        if projections.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if projections.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: projections.len(),
                right: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|l| **l as usize >= NUM_LABELS) {
            return Err(Error::LabelOutOfRange {
                label: *bad,
                max: NUM_LABELS as u8 - 1,
            });
        }
        let b = projections[0].len();
        if let Some(bad) = projections.iter().find(|p| p.len() != b) {
            return Err(Error::Shape(format!(
                "projection lists differ in block count: {} vs {}",
                b,
                bad.len()
            )));
        }
        let mut per_block = vec![Vec::with_capacity(projections.len()); b];
        for (image_id, (projs, label)) in projections.iter().zip(labels).enumerate() {
            for (i, proj) in projs.iter().enumerate() {
                per_block[i].push(CorpusEntry {
                    projection: proj.clone(),
                    label: *label,
                    image_id,
                });
            }
        }
        Ok(Self { per_block })
    }

    /// Number of block positions.
    pub fn blocks(&self) -> usize {
        self.per_block.len()
    }

    /// Number of training images.
    pub fn images(&self) -> usize {
        self.per_block.first().map_or(0, Vec::len)
    }

    pub fn entries(&self, block: usize) -> &[CorpusEntry<T>] {
        &self.per_block[block]
    }
}

/// 1NN label of a query projection against one block's corpus entries.
/// Entries are scanned in image-id order and only strictly smaller distances
/// replace the champion, so exact ties resolve to the lowest image id.
pub fn classify_block<T: Real>(query: &DVector<T>, corpus: &[CorpusEntry<T>]) -> Result<u8> {
    let mut best: Option<(T, u8)> = None;
    for entry in corpus {
        if entry.projection.len() != query.len() {
            return Err(Error::Shape(format!(
                "projection length {} vs corpus {}",
                query.len(),
                entry.projection.len()
            )));
        }
        let d = (&entry.projection - query).norm_squared();
        match &best {
            Some((bd, _)) if d >= *bd => {}
            _ => best = Some((d, entry.label)),
        }
    }
    best.map(|(_, label)| label).ok_or(Error::EmptyCorpus)
}

/// Vote outcome for one image: the histogram of block votes, the majority
/// label, and the top two votes as percentages of the blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteReport {
    pub histogram: [usize; NUM_LABELS],
    pub majority: u8,
    /// Up to two `(label, percentage)` pairs, strongest first.
    pub top_two: Vec<(u8, f64)>,
}

impl VoteReport {
    pub fn total_votes(&self) -> usize {
        self.histogram.iter().sum()
    }
}

/// Classifies a whole image: per-block 1NN votes aggregated into a majority
/// label. Ties on the top count go to the label with the larger margin over
/// its runner-up, then to the lowest label index.
pub fn classify_image<T: Real>(
    projections: &[DVector<T>],
    corpus: &ProjectionCorpus<T>,
) -> Result<VoteReport> {
    if projections.len() != corpus.blocks() {
        return Err(Error::Shape(format!(
            "image has {} blocks, corpus has {}",
            projections.len(),
            corpus.blocks()
        )));
    }
    let mut histogram = [0usize; NUM_LABELS];
    for (i, proj) in projections.iter().enumerate() {
        let label = classify_block(proj, corpus.entries(i))?;
        histogram[label as usize] += 1;
    }
    Ok(report_from_histogram(histogram))
}

fn report_from_histogram(histogram: [usize; NUM_LABELS]) -> VoteReport {
    let total: usize = histogram.iter().sum();
    let top = *histogram.iter().max().unwrap_or(&0);
    let candidates: Vec<usize> = (0..NUM_LABELS).filter(|l| histogram[*l] == top).collect();
    let majority = if candidates.len() == 1 {
        candidates[0] as u8
    } else {
        // Margin over the best other label; with several tied candidates the
        // margins are all zero and the lowest index wins.
        let mut best = (0isize, usize::MAX);
        for c in &candidates {
            let runner_up = (0..NUM_LABELS)
                .filter(|l| l != c)
                .map(|l| histogram[l])
                .max()
                .unwrap_or(0);
            let margin = histogram[*c] as isize - runner_up as isize;
            if margin > best.0 || (margin == best.0 && *c < best.1) {
                best = (margin, *c);
            }
        }
        best.1 as u8
    };
    let mut order: Vec<usize> = (0..NUM_LABELS).collect();
    order.sort_by(|a, b| histogram[*b].cmp(&histogram[*a]).then(a.cmp(b)));
    let top_two = order
        .into_iter()
        .take(2)
        .filter(|l| histogram[*l] > 0)
        .map(|l| (l as u8, 100.0 * histogram[l] as f64 / total.max(1) as f64))
        .collect();
    VoteReport {
        histogram,
        majority,
        top_two,
    }
}

/// A 7×7 confusion matrix: rows are true labels, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_LABELS]; NUM_LABELS],
}

impl ConfusionMatrix {
    /// Accumulates `(true label, predicted label)` pairs.
    pub fn from_pairs(pairs: &[(u8, u8)]) -> Result<Self> {
        let mut counts = [[0usize; NUM_LABELS]; NUM_LABELS];
        for (truth, predicted) in pairs {
            for label in [truth, predicted] {
                if *label as usize >= NUM_LABELS {
                    return Err(Error::LabelOutOfRange {
                        label: *label,
                        max: NUM_LABELS as u8 - 1,
                    });
                }
            }
            counts[*truth as usize][*predicted as usize] += 1;
        }
        Ok(Self { counts })
    }

    pub fn row_sums(&self) -> [usize; NUM_LABELS] {
        let mut sums = [0usize; NUM_LABELS];
        for (r, row) in self.counts.iter().enumerate() {
            sums[r] = row.iter().sum();
        }
        sums
    }

    /// Fraction of row `label` sitting on the diagonal (0 for empty rows).
    pub fn diagonal_fraction(&self, label: u8) -> f64 {
        let r = label as usize;
        let total: usize = self.counts[r].iter().sum();
        if total == 0 {
            0.0
        } else {
            self.counts[r][r] as f64 / total as f64
        }
    }

    /// Accuracy over a subset of true labels.
    pub fn accuracy_over(&self, labels: &[u8]) -> f64 {
        let mut correct = 0usize;
        let mut total = 0usize;
        for l in labels {
            let r = *l as usize;
            correct += self.counts[r][r];
            total += self.counts[r].iter().sum::<usize>();
        }
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }

    /// CSV with a header row; rows are true labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..NUM_LABELS {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (r, row) in self.counts.iter().enumerate() {
            out.push_str(&r.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width text rendering.
    pub fn to_pretty(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..NUM_LABELS {
            out.push_str(&format!("{c:>6}"));
        }
        out.push('\n');
        for (r, row) in self.counts.iter().enumerate() {
            out.push_str(&format!("{r:>9}"));
            for v in row {
                out.push_str(&format!("{v:>6}"));
            }
            out.push('\n');
        }
        out
    }

    /// Renders the matrix as a grayscale heat map (each cell scaled by its
    /// row maximum), upsampled by `cell` pixels per entry.
    pub fn to_heatmap<T: Real>(&self, cell: usize) -> crate::image::GrayImage<T> {
        let side = NUM_LABELS * cell.max(1);
        crate::image::GrayImage::from_fn(side, side, |x, y| {
            let r = y / cell.max(1);
            let c = x / cell.max(1);
            let row_max = *self.counts[r].iter().max().unwrap_or(&0);
            if row_max == 0 {
                T::zero()
            } else {
                T::of(self.counts[r][c] as f64 / row_max as f64)
            }
        })
    }
}
