//! Self-describing text checkpoints.
//!
//! ```text
//! stca-checkpoint v1
//! config <line count>
//! <RunConfig::to_text lines>
//! matrix <name> <rows> <cols>
//! <rows lines of cols values, row-major>
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle reproduces every bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use stca::pipeline::{HeadParams, Network};
use stca::{Matrix, StcaParams};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MAGIC: &str = "stca-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Configuration the network was trained with.
    pub config: RunConfig,
    pub network: Network,
}

fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "matrix {name} {} {}", m.rows(), m.cols());
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn stage_matrices<'a>(prefix: &str, p: &'a StcaParams) -> Vec<(String, &'a Matrix)> {
    p.blocks()
        .into_iter()
        .map(|(name, m)| (format!("{prefix}.{name}"), m))
        .collect()
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let config = self.config.to_text();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "config {}", config.lines().count());
        out.push_str(&config);
        let net = &self.network;
        for (name, m) in stage_matrices("stage1", &net.stage1)
            .into_iter()
            .chain(stage_matrices("stage2", &net.stage2))
        {
            write_matrix(&mut out, &name, m);
        }
        write_matrix(&mut out, "head.weights", &net.head.weights);
        let bias =
            Matrix::from_vec(1, net.head.bias.len(), net.head.bias.clone()).expect("bias row has matching length");
        write_matrix(&mut out, "head.bias", &bias);
        out
    }

    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let err = |line: usize, message: String| CliError::Data {
            path: origin.to_string(),
            line,
            message,
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first().map(|l| l.trim()) != Some(MAGIC) {
            return Err(err(1, format!("expected header `{MAGIC}`")));
        }
        let count: usize = lines
            .get(1)
            .and_then(|l| l.strip_prefix("config "))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| err(2, "expected `config <line count>`".into()))?;
        let config_end = 2 + count;
        if lines.len() < config_end {
            return Err(err(lines.len(), "truncated config section".into()));
        }
        let config = RunConfig::from_text(&lines[2..config_end].join("\n"), origin).map_err(|e| match e {
            CliError::Config { line, message, .. } => err(line + 2, message),
            other => other,
        })?;

        let mut matrices: BTreeMap<String, Matrix> = BTreeMap::new();
        let mut i = config_end;
        while i < lines.len() {
            let header = lines[i].trim();
            if header.is_empty() {
                i += 1;
                continue;
            }
            let parts: Vec<&str> = header.split_whitespace().collect();
            let (name, rows, cols) = match parts.as_slice() {
                ["matrix", name, rows, cols] => (
                    name.to_string(),
                    rows.parse::<usize>().map_err(|e| err(i + 1, e.to_string()))?,
                    cols.parse::<usize>().map_err(|e| err(i + 1, e.to_string()))?,
                ),
                _ => {
                    return Err(err(
                        i + 1,
                        format!("expected `matrix <name> <rows> <cols>`, got `{header}`"),
                    ))
                }
            };
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let n = i + 2 + r;
                let line = lines
                    .get(n - 1)
                    .ok_or_else(|| err(n, format!("matrix {name} is truncated")))?;
                let before = data.len();
                for tok in line.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|e| err(n, format!("{tok}: {e}")))?);
                }
                if data.len() - before != cols {
                    return Err(err(
                        n,
                        format!(
                            "matrix {name} row {r} has {} values, expected {cols}",
                            data.len() - before
                        ),
                    ));
                }
            }
            if matrices.contains_key(&name) {
                return Err(err(i + 1, format!("matrix {name} given twice")));
            }
            matrices.insert(name, Matrix::from_vec(rows, cols, data)?);
            i += 1 + rows;
        }

        let mut take = |name: &str| {
            matrices
                .remove(name)
                .ok_or_else(|| err(0, format!("missing matrix {name}")))
        };
        let mut stage = |prefix: &str| -> CliResult<StcaParams> {
            Ok(StcaParams {
                w_q: take(&format!("{prefix}.w_q"))?,
                w_k: take(&format!("{prefix}.w_k"))?,
                w_s: take(&format!("{prefix}.w_s"))?,
                w_t: take(&format!("{prefix}.w_t"))?,
                w_q_temporal: if config.stca.share_query {
                    None
                } else {
                    Some(take(&format!("{prefix}.w_q_temporal"))?)
                },
            })
        };
        let stage1 = stage("stage1")?;
        let stage2 = stage("stage2")?;
        let weights = take("head.weights")?;
        let bias = take("head.bias")?;
        if bias.rows() != 1 {
            return Err(err(0, "head.bias must have one row".into()));
        }
        if let Some(extra) = matrices.keys().next() {
            return Err(err(0, format!("unexpected matrix {extra}")));
        }
        let network = Network {
            aggregation: config.aggregation,
            stage1,
            stage2,
            head: HeadParams {
                weights,
                bias: bias.into_data(),
            },
        };
        network.validate(&config.stca).map_err(|e| err(0, e.to_string()))?;
        Ok(Self { config, network })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}
