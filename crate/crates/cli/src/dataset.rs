//! Line-delimited JSON datasets: one frame per line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use stca::{validate_frame, BoundingBox, FrameProposals, Proposal, StcaConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    /// `[cx, cy, w, h]` with a center-based box.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub feature: Vec<f64>,
    pub objectness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_id: i64,
    pub proposals: Vec<ProposalRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub frames: Vec<FrameProposals>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }

    /// The first `videos.len() − held_out` videos and the rest.
    pub fn split(&self, held_out: usize) -> (Dataset, Dataset) {
        let cut = self.videos.len().saturating_sub(held_out);
        (
            Dataset {
                videos: self.videos[..cut].to_vec(),
            },
            Dataset {
                videos: self.videos[cut..].to_vec(),
            },
        )
    }

    pub fn sequences(&self) -> Vec<Vec<FrameProposals>> {
        self.videos.iter().map(|v| v.frames.clone()).collect()
    }
}

fn to_record(video_id: &str, frame: &FrameProposals) -> FrameRecord {
    FrameRecord {
        video_id: video_id.to_string(),
        frame_id: frame.frame_id,
        proposals: frame
            .proposals
            .iter()
            .map(|p| ProposalRecord {
                bbox: [p.bbox.cx, p.bbox.cy, p.bbox.w, p.bbox.h],
                feature: p.feature.clone(),
                objectness: p.objectness,
                label: p.label,
            })
            .collect(),
    }
}

fn from_record(r: FrameRecord) -> (String, FrameProposals) {
    let frame_id = r.frame_id;
    let proposals = r
        .proposals
        .into_iter()
        .map(|p| Proposal {
            bbox: BoundingBox::new(p.bbox[0], p.bbox[1], p.bbox[2], p.bbox[3]),
            frame_id,
            feature: p.feature,
            objectness: p.objectness,
            label: p.label,
        })
        .collect();
    (r.video_id, FrameProposals { frame_id, proposals })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for v in &dataset.videos {
        for f in &v.frames {
            serde_json::to_writer(&mut out, &to_record(&v.id, f)).map_err(|e| CliError::io(path, e.into()))?;
            out.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
        }
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

/// Parses and validates a dataset. Frames of a video must be contiguous
/// and strictly ascending, and every frame must hold exactly `n_proposals`
/// valid proposals.
pub fn parse_dataset(reader: impl BufRead, origin: &str, config: &StcaConfig) -> CliResult<Dataset> {
    let err = |line: usize, message: String| CliError::Data {
        path: origin.to_string(),
        line,
        message,
    };
    let mut videos: Vec<Video> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| err(n, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line).map_err(|e| err(n, e.to_string()))?;
        let (video_id, frame) = from_record(record);
        validate_frame(&frame, config).map_err(|e| err(n, e.to_string()))?;
        match videos.last_mut() {
            Some(v) if v.id == video_id => {
                let last = v.frames.last().map(|f| f.frame_id).unwrap_or(i64::MIN);
                if frame.frame_id <= last {
                    return Err(err(
                        n,
                        format!("frame {} of video {video_id} follows frame {last}", frame.frame_id),
                    ));
                }
                v.frames.push(frame);
            }
            _ => {
                if videos.iter().any(|v| v.id == video_id) {
                    return Err(err(n, format!("frames of video {video_id} are not contiguous")));
                }
                videos.push(Video {
                    id: video_id,
                    frames: vec![frame],
                });
            }
        }
    }
    Ok(Dataset { videos })
}

pub fn read_dataset(path: &Path, config: &StcaConfig) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(BufReader::new(file), &path.display().to_string(), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(video: &str, frame: i64, n: usize, d: usize) -> String {
        let p = ProposalRecord {
            bbox: [1.0, 2.0, 3.0, 4.0],
            feature: vec![0.1; d],
            objectness: 0.5,
            label: Some(1),
        };
        serde_json::to_string(&FrameRecord {
            video_id: video.into(),
            frame_id: frame,
            proposals: vec![p; n],
        })
        .unwrap()
    }

    fn cfg() -> StcaConfig {
        StcaConfig {
            n_proposals: 2,
            d_v: 4,
            ..StcaConfig::desk()
        }
    }

    #[test]
    fn groups_frames_by_video() {
        let text = [line("a", 0, 2, 4), line("a", 1, 2, 4), line("b", 0, 2, 4)].join("\n");
        let ds = parse_dataset(text.as_bytes(), "t", &cfg()).unwrap();
        assert_eq!(ds.videos.len(), 2);
        assert_eq!(ds.frame_count(), 3);
        assert_eq!(ds.videos[0].frames[1].proposals[0].frame_id, 1);
    }

    #[test]
    fn rejects_malformed_input() {
        let cases = [
            [line("a", 1, 2, 4), line("a", 1, 2, 4)].join("\n"),
            [line("a", 0, 2, 4), line("b", 0, 2, 4), line("a", 1, 2, 4)].join("\n"),
            line("a", 0, 3, 4),
            line("a", 0, 2, 5),
            "{not json".to_string(),
        ];
        for text in cases {
            let e = parse_dataset(text.as_bytes(), "t", &cfg()).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{e}");
        }
    }

    #[test]
    fn box_key_is_spelled_box() {
        assert!(line("a", 0, 1, 1).contains("\"box\":[1.0,2.0,3.0,4.0]"));
    }
}
