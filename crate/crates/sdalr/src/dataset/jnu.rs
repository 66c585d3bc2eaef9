//! Loader for the JNU bearing dataset layout: `<root>/<state>_<speed>.csv`,
//! one columnar text file per bearing state and rotational speed.

use std::path::Path;

use super::{standardize, window_recording, DomainDataset, SignalSample};
use crate::config::DataSection;
use crate::error::{Error, Result};

/// Bearing states in class-index order: healthy, inner ring, outer ring, ball.
pub const STATES: [&str; 4] = ["H", "IR", "OR", "B"];

/// Rotational speed per domain, in r/min.
pub fn domain_speed(domain: &str) -> Result<u32> {
    match domain {
        "B1" => Ok(600),
        "B2" => Ok(800),
        "B3" => Ok(1000),
        other => Err(Error::Config(format!("unknown domain {other}"))),
    }
}

pub fn load_jnu(root: &Path, domain: &str, opts: &DataSection) -> Result<DomainDataset> {
    let speed = domain_speed(domain)?;
    if !root.is_dir() {
        return Err(Error::Data(format!(
            "JNU root {} is not a directory",
            root.display()
        )));
    }

    let mut samples = vec![];
    for (class, state) in STATES.iter().enumerate() {
        let path = root.join(format!("{state}_{speed}.csv"));
        if !path.is_file() {
            return Err(Error::Data(format!(
                "missing state {state}: expected {}",
                path.display()
            )));
        }
        let recording = read_column(&path)?;
        let windows = window_recording(&recording, opts.window_len, opts.per_class_cap)?;
        for mut w in windows {
            if opts.standardize {
                standardize(&mut w);
            }
            samples.push(SignalSample {
                waveform: w,
                label: Some(class),
                domain_id: domain.to_string(),
                source_file: format!("{state}_{speed}.csv"),
            });
        }
    }

    let ds = DomainDataset {
        samples,
        class_count: STATES.len(),
        domain_id: domain.to_string(),
    };
    ds.validate()?;
    Ok(ds)
}

/// First column of a headerless columnar text file.
fn read_column(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut values = vec![];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let Some(cell) = record.get(0) else { continue };
        let cell = cell.trim();
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| Error::Data(format!("{}: unreadable value '{cell}'", path.display())))?;
        values.push(v);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_jnu_fixture(dir: &Path, speed: u32, points: usize) {
        for (i, state) in STATES.iter().enumerate() {
            let mut f = std::fs::File::create(dir.join(format!("{state}_{speed}.csv"))).unwrap();
            for t in 0..points {
                writeln!(f, "{:.6}", ((t + i * 7) as f64 * 0.1).sin()).unwrap();
            }
        }
    }

    fn opts() -> DataSection {
        DataSection {
            window_len: 64,
            per_class_cap: 10,
            ..DataSection::default()
        }
    }

    #[test]
    fn loads_four_states_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        write_jnu_fixture(dir.path(), 600, 64 * 12);
        let ds = load_jnu(dir.path(), "B1", &opts()).unwrap();
        assert_eq!(ds.class_count, 4);
        assert_eq!(ds.len(), 4 * 10);
        assert_eq!(ds.class_counts(), vec![10, 10, 10, 10]);
        assert_eq!(ds.domain_id, "B1");
    }

    #[test]
    fn missing_state_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_jnu_fixture(dir.path(), 600, 64 * 2);
        std::fs::remove_file(dir.path().join("OR_600.csv")).unwrap();
        let err = load_jnu(dir.path(), "B1", &opts()).unwrap_err();
        assert!(err.to_string().contains("missing state OR"));
    }

    #[test]
    fn unknown_domain_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_jnu(dir.path(), "B4", &opts()).unwrap_err();
        assert!(err.to_string().contains("unknown domain"));
    }

    #[test]
    fn domain_tag_is_propagated() {
        let dir = tempfile::tempdir().unwrap();
        write_jnu_fixture(dir.path(), 800, 64 * 2);
        let ds = load_jnu(dir.path(), "B2", &opts()).unwrap();
        assert_eq!(ds.domain_id, "B2");
        assert!(ds.samples.iter().all(|s| s.domain_id == "B2"));
    }

    #[test]
    fn loads_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_jnu_fixture(dir.path(), 1000, 64 * 4);
        let a = load_jnu(dir.path(), "B3", &opts()).unwrap();
        let b = load_jnu(dir.path(), "B3", &opts()).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(x.waveform, y.waveform);
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn unreadable_value_names_file() {
        let dir = tempfile::tempdir().unwrap();
        write_jnu_fixture(dir.path(), 600, 64 * 2);
        std::fs::write(dir.path().join("H_600.csv"), "not_a_number\n").unwrap();
        let err = load_jnu(dir.path(), "B1", &opts()).unwrap_err();
        assert!(err.to_string().contains("H_600.csv"));
    }
}
