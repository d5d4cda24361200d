//! Topology and model JSON, dataset CSV with its metadata sidecar, digests
//! and atomic writes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fbid_core::dataset::{column_names, TrajectoryDataset};
use fbid_core::refdyn::{BodyParams, GroundTruthModel, Joint};
use fbid_core::topology::{Branch, RobotTopology, Segment};
use fbid_core::{Mat3, SymMat3, Vec3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub joints: usize,
    pub parent: Option<usize>,
}

/// `{"branches": [[{"joints": 3, "parent": null}, ...], ...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub branches: Vec<Vec<SegmentSpec>>,
}

impl TopologyFile {
    pub fn from_topology(t: &RobotTopology) -> TopologyFile {
        TopologyFile {
            branches: t
                .branches()
                .iter()
                .map(|b| b.segments.iter().map(|s| SegmentSpec { joints: s.joint_count, parent: s.parent }).collect())
                .collect(),
        }
    }

    pub fn to_topology(&self) -> CliResult<RobotTopology> {
        let branches = self
            .branches
            .iter()
            .map(|b| Branch { segments: b.iter().map(|s| Segment { joint_count: s.joints, parent: s.parent }).collect() })
            .collect();
        Ok(RobotTopology::new(branches)?)
    }
}

/// Inertial parameters of one body; `inertia` is the rotational inertia about
/// the body origin as `[xx, xy, xz, yy, yz, zz]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia: [f64; 6],
}

impl BodySpec {
    fn from_body(b: &BodyParams) -> BodySpec {
        BodySpec { mass: b.mass, com: b.com.0, inertia: b.rot_inertia.upper() }
    }

    fn to_body(self) -> BodyParams {
        BodyParams { mass: self.mass, com: Vec3(self.com), rot_inertia: SymMat3::from_upper(self.inertia) }
    }
}

fn identity() -> [[f64; 3]; 3] {
    Mat3::IDENTITY.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    /// Joint frame orientation in the parent body frame, row-major.
    #[serde(default = "identity")]
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub axis: [f64; 3],
    /// Body moved by this joint.
    pub body: BodySpec,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

/// Topology plus joint placements and body inertial parameters; joints and
/// bodies follow the canonical joint order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub branches: Vec<Vec<SegmentSpec>>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    pub base: BodySpec,
    pub joints: Vec<JointSpec>,
}

impl ModelFile {
    pub fn from_model(m: &GroundTruthModel) -> ModelFile {
        ModelFile {
            branches: TopologyFile::from_topology(m.topology()).branches,
            gravity: m.gravity().0,
            base: BodySpec::from_body(&m.bodies()[0]),
            joints: m
                .joints()
                .iter()
                .zip(&m.bodies()[1..])
                .map(|(j, b)| JointSpec { rotation: j.rotation.0, translation: j.translation.0, axis: j.axis.0, body: BodySpec::from_body(b) })
                .collect(),
        }
    }

    pub fn to_model(&self) -> CliResult<GroundTruthModel> {
        let topology = TopologyFile { branches: self.branches.clone() }.to_topology()?;
        let joints = self
            .joints
            .iter()
            .map(|j| Joint { rotation: Mat3(j.rotation), translation: Vec3(j.translation), axis: Vec3(j.axis) })
            .collect();
        let bodies = std::iter::once(self.base.to_body()).chain(self.joints.iter().map(|j| j.body.to_body())).collect();
        Ok(GroundTruthModel::new(topology, joints, bodies, Vec3(self.gravity))?)
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::read(path, e))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// A topology from either a topology file or a model file.
pub fn load_topology(path: &Path) -> CliResult<RobotTopology> {
    let text = read_text(path)?;
    let value: serde_json::Value = parse_json(path, &text)?;
    if value.get("joints").is_some() {
        Ok(parse_json::<ModelFile>(path, &text)?.to_model()?.topology().clone())
    } else {
        parse_json::<TopologyFile>(path, &text)?.to_topology()
    }
}

pub fn load_model(path: &Path) -> CliResult<GroundTruthModel> {
    let text = read_text(path)?;
    parse_json::<ModelFile>(path, &text)?.to_model()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the canonical topology JSON.
pub fn topology_hash(t: &RobotTopology) -> String {
    sha256_hex(serde_json::to_string(&TopologyFile::from_topology(t)).expect("serializable").as_bytes())
}

/// Digest of the canonical model JSON.
pub fn model_hash(m: &GroundTruthModel) -> String {
    sha256_hex(serde_json::to_string(&ModelFile::from_model(m)).expect("serializable").as_bytes())
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see partial output.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::write(path, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::write(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| CliError::write(path, e))?;
        w.flush().map_err(|e| CliError::write(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::write(path, e.error))?;
    Ok(())
}

pub fn write_json_atomic(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::write(path, e))?;
    write_atomic(path, |w| writeln!(w, "{text}"))
}

/// Metadata stored next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_q: usize,
    pub rate: f64,
    pub samples: usize,
    pub seed: Option<u64>,
    pub model_hash: Option<String>,
    pub topology_hash: Option<String>,
    pub topology: Option<TopologyFile>,
    /// Command that produced the file.
    pub source: String,
    #[serde(default)]
    pub settings: serde_json::Value,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the CSV and its sidecar.
pub fn write_dataset(path: &Path, data: &TrajectoryDataset, meta: &DatasetMeta) -> CliResult<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(column_names(data.n_q()))?;
        let mut buf = Vec::with_capacity(data.width());
        for i in 0..data.len() {
            buf.clear();
            buf.extend(data.row(i).iter().map(|x| format!("{x}")));
            out.write_record(&buf)?;
        }
        out.flush()
    })?;
    write_json_atomic(&sidecar_path(path), meta)
}

pub fn read_meta(csv: &Path) -> CliResult<Option<DatasetMeta>> {
    let side = sidecar_path(csv);
    if !side.exists() {
        return Ok(None);
    }
    let text = read_text(&side)?;
    serde_json::from_str(&text).map(Some).map_err(|e| CliError::data(format!("{}: {e}", side.display())))
}

/// Reads a dataset CSV. The joint count comes from the header; the rate from
/// the sidecar when present.
pub fn read_dataset(path: &Path) -> CliResult<(TrajectoryDataset, Option<DatasetMeta>)> {
    let meta = read_meta(path)?;
    let file = fs::File::open(path).map_err(|e| CliError::read(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let bad = |msg: String| CliError::data(format!("{}: {msg}", path.display()));
    let header: Vec<String> = reader.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_owned).collect();
    if header.len() < 24 || header.len() % 4 != 0 {
        return Err(bad(format!("{} columns do not form a dataset", header.len())));
    }
    let n_q = header.len() / 4 - 6;
    if header != column_names(n_q) {
        return Err(bad("unexpected column names".into()));
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for field in rec.iter() {
            let x: f64 = field.trim().parse().map_err(|_| bad(format!("row {}: `{field}` is not a number", line + 1)))?;
            if !x.is_finite() {
                return Err(bad(format!("row {}: non-finite value", line + 1)));
            }
            rows.push(x);
        }
    }
    if let Some(m) = &meta {
        if m.n_q != n_q {
            return Err(bad(format!("sidecar declares {} joints, header has {n_q}", m.n_q)));
        }
    }
    let rate = meta.as_ref().map_or(0.0, |m| m.rate);
    let data = TrajectoryDataset::from_rows(n_q, rate, rows)?;
    if let Some(m) = &meta {
        if m.samples != data.len() {
            return Err(bad(format!("sidecar declares {} samples, file has {}", m.samples, data.len())));
        }
    }
    Ok((data, meta))
}

/// Checks the dataset sidecar against a topology.
pub fn check_dataset_topology(meta: Option<&DatasetMeta>, topology: &RobotTopology) -> CliResult<()> {
    if let Some(hash) = meta.and_then(|m| m.topology_hash.as_ref()) {
        if *hash != topology_hash(topology) {
            return Err(CliError::data("dataset topology hash does not match the topology"));
        }
    }
    Ok(())
}
