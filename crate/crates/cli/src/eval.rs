//! Detection files and accuracy evaluation against labeled datasets.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use stca::pipeline::Detection;

use crate::dataset::Dataset;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalOutput {
    pub posterior: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub candidate_frame: i64,
    pub candidate_index: usize,
    pub weight: f64,
}

/// One key frame of output; `attention[i]` lists the strongest links of target `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame_id: i64,
    pub proposals: Vec<ProposalOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<Vec<LinkRecord>>>,
}

impl DetectionRecord {
    pub fn from_detection(video_id: &str, d: &Detection) -> Self {
        let labels = d.labels();
        Self {
            video_id: video_id.to_string(),
            frame_id: d.frame_id,
            proposals: labels
                .into_iter()
                .enumerate()
                .map(|(i, label)| ProposalOutput {
                    posterior: d.posteriors.row(i).to_vec(),
                    label,
                })
                .collect(),
            attention: d.attention.as_ref().map(|rows| {
                rows.iter()
                    .map(|links| {
                        links
                            .iter()
                            .map(|l| LinkRecord {
                                candidate_frame: l.candidate_frame,
                                candidate_index: l.candidate_index,
                                weight: l.weight,
                            })
                            .collect()
                    })
                    .collect()
            }),
        }
    }
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| CliError::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_detections(path: &Path) -> CliResult<Vec<DetectionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let err = |message: String| CliError::Data {
            path: origin.clone(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRecall {
    pub class: usize,
    pub support: usize,
    pub correct: usize,
}

impl ClassRecall {
    pub fn recall(&self) -> f64 {
        self.correct as f64 / self.support as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    /// Ground-truth classes in ascending order.
    pub per_class: Vec<ClassRecall>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy {:.4} ({}/{})", self.accuracy(), self.correct, self.total)?;
        writeln!(f, "{:>6} {:>8} {:>8} {:>7}", "class", "support", "correct", "recall")?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:>6} {:>8} {:>8} {:>7.4}",
                c.class,
                c.support,
                c.correct,
                c.recall()
            )?;
        }
        Ok(())
    }
}

/// Scores every detection against the labels of the matching dataset frame.
/// Frames are matched by `(video_id, frame_id)` and proposals by position.
pub fn evaluate(detections: &[DetectionRecord], data: &Dataset) -> CliResult<EvalReport> {
    let misaligned = |message: String| CliError::Data {
        path: "detections".into(),
        line: 0,
        message: format!("alignment mismatch: {message}"),
    };
    let mut frames = HashMap::new();
    for v in &data.videos {
        for f in &v.frames {
            frames.insert((v.id.as_str(), f.frame_id), f);
        }
    }
    let mut classes: BTreeMap<usize, ClassRecall> = BTreeMap::new();
    let (mut total, mut correct) = (0, 0);
    for d in detections {
        let frame = frames
            .get(&(d.video_id.as_str(), d.frame_id))
            .ok_or_else(|| misaligned(format!("no frame {} in video {}", d.frame_id, d.video_id)))?;
        if frame.proposals.len() != d.proposals.len() {
            return Err(misaligned(format!(
                "video {} frame {} has {} proposals, detections have {}",
                d.video_id,
                d.frame_id,
                frame.proposals.len(),
                d.proposals.len()
            )));
        }
        for (i, (p, out)) in frame.proposals.iter().zip(&d.proposals).enumerate() {
            let truth = p.label.ok_or_else(|| {
                misaligned(format!(
                    "video {} frame {} proposal {i} is unlabeled",
                    d.video_id, d.frame_id
                ))
            })?;
            let entry = classes.entry(truth).or_insert(ClassRecall {
                class: truth,
                support: 0,
                correct: 0,
            });
            entry.support += 1;
            total += 1;
            if out.label == truth {
                entry.correct += 1;
                correct += 1;
            }
        }
    }
    Ok(EvalReport {
        total,
        correct,
        per_class: classes.into_values().collect(),
    })
}
