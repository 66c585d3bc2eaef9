//! Loader for the Paderborn bearing dataset layout:
//! `<root>/<bearing_code>/<combo>_<code>_<k>.mat`, one directory per bearing.

use std::path::Path;

use super::mat5::{read_mat, MatValue};
use super::{standardize, window_recording, DomainDataset, SignalSample};
use crate::config::DataSection;
use crate::error::{Error, Result};

/// Bearing codes in class-index order: one healthy, seven naturally faulted.
pub const BEARING_CODES: [&str; 8] = [
    "K001", "KA04", "KA15", "KA22", "KA30", "KI14", "KI17", "KI21",
];

/// Operating-condition file prefix per domain.
pub fn domain_combo(domain: &str) -> Result<&'static str> {
    match domain {
        "A1" => Ok("N15_M01_F10"),
        "A2" => Ok("N15_M07_F04"),
        "A3" => Ok("N15_M07_F10"),
        other => Err(Error::Config(format!("unknown domain {other}"))),
    }
}

pub fn load_pu(root: &Path, domain: &str, opts: &DataSection) -> Result<DomainDataset> {
    let combo = domain_combo(domain)?;
    if !root.is_dir() {
        return Err(Error::Data(format!(
            "PU root {} is not a directory",
            root.display()
        )));
    }

    let mut samples = vec![];
    for (class, code) in BEARING_CODES.iter().enumerate() {
        let dir = root.join(code);
        if !dir.is_dir() {
            return Err(Error::Data(format!("missing bearing {code}")));
        }

        // measurement repetitions are concatenated in file-name order
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().map(|e| e == "mat").unwrap_or(false)
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .map(|n| n.starts_with(combo))
                        .unwrap_or(false)
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!(
                "missing bearing {code}: no {combo}_*.mat files in {}",
                dir.display()
            )));
        }

        let mut recording: Vec<f64> = vec![];
        for file in &files {
            match extract_channel(file, &opts.channel) {
                Ok(signal) => recording.extend(signal),
                Err(e) => return Err(e),
            }
        }

        let windows = window_recording(&recording, opts.window_len, opts.per_class_cap)?;
        for mut w in windows {
            if opts.standardize {
                standardize(&mut w);
            }
            samples.push(SignalSample {
                waveform: w,
                label: Some(class),
                domain_id: domain.to_string(),
                source_file: format!("{code}/{combo}"),
            });
        }
    }

    let ds = DomainDataset {
        samples,
        class_count: BEARING_CODES.len(),
        domain_id: domain.to_string(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Pulls the named channel out of one measurement file. The measurement
/// variable is a struct whose `Y` field is a struct array of channels with
/// `Name` and `Data` entries; channels that do not decode are skipped with
/// a warning.
fn extract_channel(path: &Path, channel: &str) -> Result<Vec<f64>> {
    let vars = read_mat(path)?;
    for (_, value) in &vars {
        let MatValue::Struct { elements, .. } = value else {
            continue;
        };
        for element in elements {
            let Some(MatValue::Struct {
                elements: channels, ..
            }) = element.get("Y")
            else {
                continue;
            };
            for chan in channels {
                let name = match chan.get("Name").and_then(|v| v.as_str()) {
                    Some(n) => n,
                    None => {
                        log::warn!("{}: channel without a Name entry, skipped", path.display());
                        continue;
                    }
                };
                if name != channel {
                    continue;
                }
                match chan.get("Data").and_then(|v| v.as_numeric()) {
                    Some(data) => return Ok(data.to_vec()),
                    None => {
                        log::warn!(
                            "{}: channel {name} has no numeric Data, skipped",
                            path.display()
                        );
                    }
                }
            }
        }
    }
    Err(Error::Data(format!(
        "{}: vibration channel {channel} not found",
        path.display()
    )))
}
