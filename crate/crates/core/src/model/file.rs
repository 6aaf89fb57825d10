//! Plain-text `key=value` model files.
//!
//! Reals are written with 17 significant digits so a save/load cycle is
//! exact. Oracle files reference their label map by a path relative to the
//! model file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{BlobParams, InpaintModel, LocalStatsModel, OracleBlobModel};
use crate::error::{Error, Result};
use crate::pgm;

#[derive(Clone, Debug)]
pub enum ModelFile {
    LocalStats(LocalStatsModel),
    Oracle {
        params: BlobParams,
        labels: PathBuf,
        window: Option<f64>,
    },
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_model(model: &ModelFile) -> String {
    let mut out = String::new();
    match model {
        ModelFile::LocalStats(m) => {
            let _ = writeln!(out, "model_type=local_stats");
            let _ = writeln!(out, "bandwidth={}", real(m.bandwidth));
            let _ = writeln!(out, "prior_mean={}", real(m.prior_mean));
            let _ = writeln!(out, "prior_variance={}", real(m.prior_variance));
            let _ = writeln!(out, "residual_variance={}", real(m.residual_variance));
            let _ = writeln!(out, "fov_radius={}", m.fov());
        }
        ModelFile::Oracle {
            params,
            labels,
            window,
        } => {
            let _ = writeln!(out, "model_type=oracle");
            let _ = writeln!(out, "base_mean={}", real(params.base_mean));
            let _ = writeln!(out, "base_variance={}", real(params.base_variance));
            let _ = writeln!(out, "field_variance={}", real(params.field_variance));
            let _ = writeln!(out, "correlation_length={}", real(params.correlation_length));
            let _ = writeln!(out, "noise_variance={}", real(params.noise_variance));
            let _ = writeln!(out, "background_mean={}", real(params.background_mean));
            let _ = writeln!(out, "background_variance={}", real(params.background_variance));
            match window {
                Some(w) => {
                    let _ = writeln!(out, "fov_radius={}", real(*w));
                }
                None => {
                    let _ = writeln!(out, "fov_radius=inf");
                }
            }
            let _ = writeln!(out, "labels={}", labels.display());
        }
    }
    out
}

struct Fields {
    map: BTreeMap<String, (usize, String)>,
}

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            if map
                .insert(k.trim().to_string(), (i + 1, v.trim().to_string()))
                .is_some()
            {
                return Err(Error::Config {
                    line: i + 1,
                    message: format!("duplicate key {:?}", k.trim()),
                });
            }
        }
        Ok(Self { map })
    }

    fn take(&mut self, key: &str) -> Result<(usize, String)> {
        self.map.remove(key).ok_or_else(|| Error::Config {
            line: 0,
            message: format!("missing key {key:?}"),
        })
    }

    fn real(&mut self, key: &str) -> Result<f64> {
        let (line, v) = self.take(key)?;
        v.parse().map_err(|_| Error::Config {
            line,
            message: format!("{key}: not a number: {v:?}"),
        })
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            Some((k, (line, _))) => Err(Error::Config {
                line,
                message: format!("unknown key {k:?}"),
            }),
            None => Ok(()),
        }
    }
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let mut f = Fields::parse(text)?;
    let (line, kind) = f.take("model_type")?;
    let model = match kind.as_str() {
        "local_stats" => {
            let m = LocalStatsModel::new(
                f.real("bandwidth")?,
                f.real("prior_mean")?,
                f.real("prior_variance")?,
                f.real("residual_variance")?,
            )?;
            let (fline, fov) = f.take("fov_radius")?;
            if fov.parse::<usize>().ok() != Some(m.fov()) {
                return Err(Error::Config {
                    line: fline,
                    message: format!("fov_radius {fov} disagrees with bandwidth (expected {})", m.fov()),
                });
            }
            ModelFile::LocalStats(m)
        }
        "oracle" => {
            let params = BlobParams {
                base_mean: f.real("base_mean")?,
                base_variance: f.real("base_variance")?,
                field_variance: f.real("field_variance")?,
                correlation_length: f.real("correlation_length")?,
                noise_variance: f.real("noise_variance")?,
                background_mean: f.real("background_mean")?,
                background_variance: f.real("background_variance")?,
            };
            params.validate()?;
            let (_, fov) = f.take("fov_radius")?;
            let window = if fov == "inf" {
                None
            } else {
                Some(fov.parse::<f64>().map_err(|_| Error::Config {
                    line,
                    message: format!("fov_radius: not a number: {fov:?}"),
                })?)
            };
            let (_, labels) = f.take("labels")?;
            ModelFile::Oracle {
                params,
                labels: PathBuf::from(labels),
                window,
            }
        }
        other => {
            return Err(Error::Config {
                line,
                message: format!("unknown model_type {other:?}"),
            })
        }
    };
    f.finish()?;
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_model(model)).map_err(|e| Error::with_path(path, e))
}

/// Reads a model file and instantiates the model it describes.
pub fn load_model(path: impl AsRef<Path>) -> Result<Box<dyn InpaintModel>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::with_path(path, e))?;
    match parse_model(&text)? {
        ModelFile::LocalStats(m) => Ok(Box::new(m)),
        ModelFile::Oracle {
            params,
            labels,
            window,
        } => {
            let labels_path = path.parent().unwrap_or(Path::new(".")).join(labels);
            let labels = pgm::read_labels(&labels_path)?;
            let model = OracleBlobModel::new(params, labels)?;
            Ok(Box::new(match window {
                Some(w) => model.with_window(w)?,
                None => model,
            }))
        }
    }
}
