//! Dataset composition tables: one row per (environment, source).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ContainerReader, DatasetError, Source};
use crate::config::{Backend, SensorKind};
use crate::JSON_SCHEMA_VERSION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum World {
    Sim,
    Real,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub domain: String,
    pub n_trajectories: usize,
    pub n_tasks: usize,
    pub world: World,
    pub visuals: String,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub rows: Vec<ManifestRow>,
}

/// Aggregates trajectory counts per (env id, source) over the containers.
pub fn build_manifest<P: AsRef<Path>>(containers: &[P]) -> Result<DatasetManifest, DatasetError> {
    let mut rows: BTreeMap<(String, Source), ManifestRow> = BTreeMap::new();
    for path in containers {
        let reader = ContainerReader::open(path.as_ref())?;
        let cfg = reader.config();
        let cams = cfg.sensors.iter().filter(|s| s.kind == SensorKind::GridCamera).count();
        let visuals = if cams == 0 { "none".to_owned() } else { format!("{cams} cam") };
        let world = match cfg.backend {
            Backend::Sim => World::Sim,
            Backend::Hardware => World::Real,
        };
        for traj in reader.read_all()? {
            let row = rows.entry((cfg.env_id.clone(), traj.source)).or_insert_with(|| ManifestRow {
                domain: cfg.env_id.clone(),
                n_trajectories: 0,
                n_tasks: 1,
                world,
                visuals: visuals.clone(),
                source: traj.source.label().to_owned(),
            });
            row.n_trajectories += 1;
        }
    }
    Ok(DatasetManifest { schema_version: JSON_SCHEMA_VERSION, rows: rows.into_values().collect() })
}

impl DatasetManifest {
    pub fn total_trajectories(&self) -> usize {
        self.rows.iter().map(|r| r.n_trajectories).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

impl fmt::Display for DatasetManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = ["Domain", "#Traj", "#Tasks", "World", "Visuals", "Source"];
        let cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.domain.clone(),
                    r.n_trajectories.to_string(),
                    r.n_tasks.to_string(),
                    format!("{:?}", r.world),
                    r.visuals.clone(),
                    r.source.clone(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, row: &[String]| {
            let parts: Vec<String> = row.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
            writeln!(f, "{}", parts.join(" | ").trim_end())
        };
        line(f, &header.map(String::from))?;
        writeln!(f, "{}", widths.map(|w| "-".repeat(w)).join("-+-"))?;
        for row in &cells {
            line(f, row)?;
        }
        Ok(())
    }
}
