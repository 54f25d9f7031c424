//! Dataset directories: `meta.json` plus one CSV per trajectory.
//!
//! CSV files carry the header `t,q1x,q1y,p1x,p1y,s1,q2x,q2y,p2x,p2y,s2`
//! and 17 significant digits per value, so a write/read cycle is exact.
//! `meta.json` records the SHA-256 of every CSV; loading verifies them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::state::{Dataset, DatasetMeta, IcSpec, PendulumParams, Split, SystemState, Trajectory, SYSTEM_DIM};

pub const CSV_HEADER: [&str; SYSTEM_DIM + 1] =
    ["t", "q1x", "q1y", "p1x", "p1y", "s1", "q2x", "q2y", "p2x", "p2y", "s2"];

const FORMAT: &str = "pmnn-dataset";
const VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub params: PendulumParams,
    pub ic: IcSpec,
    pub substeps: usize,
    pub seed: u64,
    pub dt: f64,
    pub n_steps: usize,
    pub trajectories: Vec<TrajectoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEntry {
    pub file: String,
    pub split: Split,
    pub sha256: String,
}

impl DatasetManifest {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            params: self.params,
            ic: self.ic,
            substeps: self.substeps,
            seed: self.seed,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn trajectory_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for (i, z) in traj.states().iter().enumerate() {
        let t = i as f64 * traj.dt();
        let row: Vec<String> = std::iter::once(t)
            .chain(z.to_array())
            .map(|v| format!("{v:.16e}"))
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

fn parse_trajectory(bytes: &[u8], dt: f64, origin: &Path) -> Result<Trajectory> {
    let bad = |msg: String| Error::InvalidInput(format!("{}: {msg}", origin.display()));
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut states = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != SYSTEM_DIM + 1 {
            return Err(bad(format!("row {line} has {} fields", rec.len())));
        }
        let mut v = [0.0; SYSTEM_DIM];
        for (k, field) in rec.iter().skip(1).enumerate() {
            v[k] = field
                .trim()
                .parse()
                .map_err(|e| bad(format!("row {line}, column {}: {e}", CSV_HEADER[k + 1])))?;
        }
        states.push(SystemState::from_array(&v).map_err(|e| bad(format!("row {line}: {e}")))?);
    }
    Trajectory::new(dt, states).map_err(|e| bad(e.to_string()))
}

/// Writes `ds` into `dir`, creating it if needed.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    let (dt, n_steps) = match (ds.dt(), ds.n_steps()) {
        (Some(dt), Some(n)) => (dt, n),
        _ => return Err(Error::InvalidInput("cannot save an empty dataset".into())),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(ds.len());
    for (i, (traj, split)) in ds.trajectories.iter().zip(&ds.split).enumerate() {
        let file = format!("traj_{i:03}.csv");
        let bytes = trajectory_csv(traj)?;
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(TrajectoryEntry {
            file,
            split: *split,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        version: VERSION,
        params: ds.meta.params,
        ic: ds.meta.ic,
        substeps: ds.meta.substeps,
        seed: ds.meta.seed,
        dt,
        n_steps,
        trajectories: entries,
    };
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::InvalidInput(format!(
            "{}: unsupported dataset format {} v{}",
            path.display(),
            m.format,
            m.version
        )));
    }
    Ok(m)
}

/// Reads a dataset directory, verifying every trajectory checksum.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = load_manifest(dir)?;
    let mut trajectories = Vec::with_capacity(m.trajectories.len());
    let mut split = Vec::with_capacity(m.trajectories.len());
    for entry in &m.trajectories {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(&bytes);
        if found != entry.sha256 {
            return Err(Error::Checksum {
                path,
                expected: entry.sha256.clone(),
                found,
            });
        }
        let traj = parse_trajectory(&bytes, m.dt, &path)?;
        if traj.n_steps() != m.n_steps {
            return Err(Error::InvalidInput(format!(
                "{}: {} steps, manifest says {}",
                path.display(),
                traj.n_steps(),
                m.n_steps
            )));
        }
        trajectories.push(traj);
        split.push(entry.split);
    }
    let ds = Dataset {
        trajectories,
        split,
        meta: m.meta(),
    };
    ds.validate()?;
    Ok(ds)
}
