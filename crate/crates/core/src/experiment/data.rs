use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{load_trajectory, save_trajectory, InputFormat, LoadOptions, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Csv,
    Jigsaws,
}

/// Where trajectories come from when they are not simulated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of trajectory files. When absent the corpus is simulated.
    pub path: Option<String>,
    pub format: DataFormat,
    /// JIGSAWS transcription directory; files are matched by name.
    pub transcriptions: Option<String>,
    pub sample_rate_hz: Option<f64>,
}

/// `Suturing_B001` belongs to super-trial `S1`.
pub fn group_from_name(name: &str) -> Option<String> {
    let digits: String = name.chars().rev().take_while(char::is_ascii_digit).collect();
    let n: u32 = digits.chars().rev().collect::<String>().parse().ok()?;
    Some(format!("S{n}"))
}

fn listed(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        if path.extension().is_some_and(|x| x == ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every trajectory under `data.path`, sorted by file name.
/// Trajectories without a group take it from the trailing trial number of
/// their name.
pub fn load_corpus(data: &DataConfig) -> Result<Vec<Trajectory>> {
    let dir = data
        .path
        .as_deref()
        .ok_or_else(|| Error::Config("data.path: no directory given".into()))?;
    let dir = Path::new(dir);
    if !dir.is_dir() {
        return Err(Error::Config(format!("data.path: {} is not a directory", dir.display())));
    }
    let mut corpus = Vec::new();
    match data.format {
        DataFormat::Csv => {
            let opts = LoadOptions {
                sample_rate_hz: data.sample_rate_hz,
                ..Default::default()
            };
            for f in listed(dir, "csv")? {
                corpus.push(load_trajectory(&f, InputFormat::Csv, &opts)?);
            }
        }
        DataFormat::Jigsaws => {
            let tdir = data.transcriptions.as_deref().map(Path::new);
            for f in listed(dir, "txt")? {
                let transcription = match tdir {
                    Some(t) => {
                        let p = t.join(f.file_name().expect("listed files have names"));
                        if !p.is_file() {
                            log::warn!("skipping {}: no transcription", f.display());
                            continue;
                        }
                        Some(p)
                    }
                    None => None,
                };
                let opts = LoadOptions {
                    sample_rate_hz: data.sample_rate_hz,
                    transcription,
                    ..Default::default()
                };
                corpus.push(load_trajectory(&f, InputFormat::Jigsaws, &opts)?);
            }
        }
    }
    if corpus.is_empty() {
        return Err(Error::Config(format!("data.path: no trajectories in {}", dir.display())));
    }
    for t in &mut corpus {
        if t.meta.group.is_none() {
            t.meta.group = group_from_name(&t.meta.name);
        }
    }
    Ok(corpus)
}

/// Writes `<name>.csv` per trajectory and returns the paths in corpus order.
pub fn save_corpus(dir: &Path, corpus: &[Trajectory]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut paths = Vec::with_capacity(corpus.len());
    for (i, t) in corpus.iter().enumerate() {
        let name = if t.meta.name.is_empty() {
            format!("traj{i:04}")
        } else {
            t.meta.name.clone()
        };
        let path = dir.join(format!("{name}.csv"));
        save_trajectory(t, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_corpus, CorpusSpec, SimParams};

    #[test]
    fn trial_numbers_become_groups() {
        assert_eq!(group_from_name("Suturing_B001").as_deref(), Some("S1"));
        assert_eq!(group_from_name("Knot_Tying_C005").as_deref(), Some("S5"));
        assert_eq!(group_from_name("demo"), None);
    }

    #[test]
    fn corpus_round_trips_through_a_directory() {
        let corpus = generate_corpus(&CorpusSpec {
            demos: 4,
            groups: 2,
            seed: 1,
            params: SimParams {
                sample_rate_hz: 30.0,
                ..Default::default()
            },
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = save_corpus(dir.path(), &corpus).unwrap();
        assert_eq!(paths.len(), 4);
        let back = load_corpus(&DataConfig {
            path: Some(dir.path().to_string_lossy().into_owned()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn missing_directory_is_a_config_error() {
        let err = load_corpus(&DataConfig {
            path: Some("/nonexistent/gesturewatch".into()),
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("data.path"));
    }
}
