use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::generate;
use super::{trajectory_seed, Bounce, GeneratorConfig, Pose, Scenario, Split, Trajectory, TrajgenError};
use crate::jsonfmt;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { train: 9000, val: 1000, test: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub scenario: Scenario,
    pub version: u32,
    pub sizes: SplitSizes,
    pub seed: u64,
    #[serde(rename = "T")]
    pub len: usize,
    #[serde(rename = "K")]
    pub input_len: usize,
    #[serde(default)]
    pub generator: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario: Scenario,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Trajectory] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> SplitSizes {
        SplitSizes::new(self.train.len(), self.val.len(), self.test.len())
    }

    pub fn header(&self) -> DatasetHeader {
        let (len, input_len) = self.scenario.protocol();
        DatasetHeader {
            scenario: self.scenario,
            version: DATASET_FORMAT_VERSION,
            sizes: self.sizes(),
            seed: self.seed,
            len,
            input_len,
            generator: self.generator.clone(),
        }
    }
}

pub fn make_dataset(
    scenario: Scenario,
    sizes: SplitSizes,
    seed: u64,
    generator: &GeneratorConfig,
) -> Result<Dataset, TrajgenError> {
    let build = |split: Split| -> Result<Vec<Trajectory>, TrajgenError> {
        (0..sizes.get(split))
            .into_par_iter()
            .map(|i| {
                let mut t = generate(scenario, generator, trajectory_seed(seed, split, i))?;
                t.split = split;
                Ok(t)
            })
            .collect()
    };
    Ok(Dataset {
        scenario,
        seed,
        generator: generator.clone(),
        train: build(Split::Train)?,
        val: build(Split::Val)?,
        test: build(Split::Test)?,
    })
}

#[derive(Serialize, Deserialize)]
struct Record {
    split: Split,
    seed: u64,
    poses: Vec<Pose>,
    visible: Vec<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    bounces: Vec<Bounce>,
}

fn io_err(path: &Path, source: std::io::Error) -> TrajgenError {
    TrajgenError::Io { path: path.display().to_string(), source }
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), TrajgenError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let header = jsonfmt::to_string(&dataset.header()).map_err(|e| TrajgenError::InvalidParams(e.to_string()))?;
    writeln!(out, "{header}").map_err(|e| io_err(path, e))?;
    for split in Split::ALL {
        for t in dataset.split(split) {
            let rec = Record {
                split,
                seed: t.seed,
                poses: t.poses.clone(),
                visible: t.visible.clone(),
                bounces: t.bounces.clone(),
            };
            let line = jsonfmt::to_string(&rec).map_err(|e| TrajgenError::InvalidParams(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, TrajgenError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let name = path.display().to_string();
    let parse_err = |line: usize, msg: String| TrajgenError::Parse { path: name.clone(), line, msg };

    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected a header".into()))?
        .map_err(|e| io_err(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    if header.version != DATASET_FORMAT_VERSION {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }
    let (len, input_len) = header.scenario.protocol();
    if (header.len, header.input_len) != (len, input_len) {
        return Err(parse_err(
            1,
            format!(
                "T={} K={} do not match the {} protocol (T={len} K={input_len})",
                header.len, header.input_len, header.scenario
            ),
        ));
    }

    let mut ds = Dataset {
        scenario: header.scenario,
        seed: header.seed,
        generator: header.generator.clone(),
        train: Vec::with_capacity(header.sizes.train),
        val: Vec::with_capacity(header.sizes.val),
        test: Vec::with_capacity(header.sizes.test),
    };
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if rec.poses.len() != len || rec.visible.len() != len {
            return Err(parse_err(
                lineno,
                format!("expected {len} poses and visibility flags, got {} and {}", rec.poses.len(), rec.visible.len()),
            ));
        }
        if let Some(bad) = rec.poses.iter().position(|p| !p.is_valid()) {
            return Err(parse_err(lineno, format!("pose {bad} outside (-1, 1)")));
        }
        let traj = Trajectory {
            scenario: header.scenario,
            split: rec.split,
            seed: rec.seed,
            input_len,
            poses: rec.poses,
            visible: rec.visible,
            bounces: rec.bounces,
        };
        match rec.split {
            Split::Train => ds.train.push(traj),
            Split::Val => ds.val.push(traj),
            Split::Test => ds.test.push(traj),
        }
    }
    if ds.sizes() != header.sizes {
        return Err(parse_err(
            1,
            format!("header declares {:?} but file holds {:?}", header.sizes, ds.sizes()),
        ));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scenario: Scenario) -> Dataset {
        make_dataset(scenario, SplitSizes::new(90, 10, 20), 7, &GeneratorConfig::default()).unwrap()
    }

    #[test]
    fn regeneration_is_deterministic() {
        for sc in Scenario::ALL {
            assert_eq!(small(sc), small(sc));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for sc in Scenario::ALL {
            let ds = small(sc);
            let path = dir.path().join(format!("{sc}.jsonl"));
            save_dataset(&ds, &path).unwrap();
            assert_eq!(load_dataset(&path).unwrap(), ds);
        }
    }

    #[test]
    fn stored_split_sizes_match_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_dataset(&small(Scenario::Circular), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let header: DatasetHeader = serde_json::from_str(lines.next().unwrap()).unwrap();
        let mut counts = [0usize; 3];
        for l in lines {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let idx = ["train", "val", "test"].iter().position(|s| v["split"] == *s).unwrap();
            counts[idx] += 1;
        }
        assert_eq!(counts, [header.sizes.train, header.sizes.val, header.sizes.test]);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        save_dataset(&small(Scenario::Collision), &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        lines[4] = "{not json".into();
        text = lines.join("\n");
        fs::write(&path, text).unwrap();
        match load_dataset(&path) {
            Err(TrajgenError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
