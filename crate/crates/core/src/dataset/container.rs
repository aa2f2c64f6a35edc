//! RoboSet-lite byte layout. All integers and floats are little-endian.
//!
//! ```text
//! header  "RSL1" | u16 version | u32 config_len | config | [u8; 32] sha256(config)
//!         | u32 n_traj | n_traj × {u64 offset, u64 length}
//! group   u32 T | u16 action_dim | u16 n_sensors | n_sensors × {u8 name_len, name, u32 dim}
//!         | u32 state_dim | u64 seed | initial state
//!         | sensors, actions, rewards, successes (u8), states: each column-major
//!         | u8 source | u32 metadata_len | metadata ("key=value\n" lines)
//! state   f64 time | u16 n_joints | q | qdot | u16 n_objects
//!         | n_objects × {f64 px, py, vx, vy, radius, mass, u8 color}
//!         | u32 grasped (u32::MAX for none) | 4 × u64 rng words
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{config_digest, hex, DatasetError, Series, Source, Trajectory, META_CONFIG_DIGEST};
use crate::config::{parse_env_config, EnvConfig};
use crate::geom::Vec2;
use crate::rng::CounterRng;
use crate::sim::{ObjectState, SimState};

pub const MAGIC: &[u8; 4] = b"RSL1";
pub const FORMAT_VERSION: u16 = 1;
const NO_GRASP: u32 = u32::MAX;

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn column_major(&mut self, s: &Series) {
        let t = s.len();
        for c in 0..s.dim {
            for r in 0..t {
                self.f64(s.data[r * s.dim + c]);
            }
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| DatasetError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], DatasetError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, DatasetError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DatasetError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DatasetError> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn column_major(&mut self, t: usize, dim: usize) -> Result<Series, DatasetError> {
        let total = t.checked_mul(dim).ok_or_else(|| DatasetError::Corrupt("series size overflow".into()))?;
        if total.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(DatasetError::Corrupt("series longer than group".into()));
        }
        let mut data = vec![0.0; total];
        for c in 0..dim {
            for r in 0..t {
                data[r * dim + c] = self.f64()?;
            }
        }
        Ok(Series { dim, data })
    }
    fn done(&self) -> Result<(), DatasetError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(DatasetError::Corrupt(format!("{} trailing bytes in group", self.buf.len() - self.pos)))
        }
    }
}

fn narrow<T: TryFrom<usize>>(v: usize, what: &str) -> Result<T, DatasetError> {
    T::try_from(v).map_err(|_| DatasetError::Invalid(format!("{what} = {v} does not fit the container layout")))
}

fn encode_state(e: &mut Enc, s: &SimState) -> Result<(), DatasetError> {
    if s.joint_vel.len() != s.joint_pos.len() {
        return Err(DatasetError::Invalid("joint position and velocity lengths differ".into()));
    }
    e.f64(s.time);
    e.u16(narrow(s.joint_pos.len(), "joint count")?);
    s.joint_pos.iter().chain(&s.joint_vel).for_each(|&v| e.f64(v));
    e.u16(narrow(s.objects.len(), "object count")?);
    for o in &s.objects {
        for v in [o.position.x, o.position.y, o.velocity.x, o.velocity.y, o.radius, o.mass] {
            e.f64(v);
        }
        e.u8(o.color_index);
    }
    e.u32(match s.grasped_object {
        Some(i) => narrow::<u32>(i, "grasped index").and_then(|i| {
            if i == NO_GRASP {
                Err(DatasetError::Invalid("grasped index out of range".into()))
            } else {
                Ok(i)
            }
        })?,
        None => NO_GRASP,
    });
    s.rng_state.to_words().iter().for_each(|&w| e.u64(w));
    Ok(())
}

fn decode_state(d: &mut Dec<'_>) -> Result<SimState, DatasetError> {
    let time = d.f64()?;
    let nj = usize::from(d.u16()?);
    let joint_pos = d.f64s(nj)?;
    let joint_vel = d.f64s(nj)?;
    let no = usize::from(d.u16()?);
    let mut objects = Vec::with_capacity(no);
    for _ in 0..no {
        let v = d.f64s(6)?;
        objects.push(ObjectState {
            position: Vec2::new(v[0], v[1]),
            velocity: Vec2::new(v[2], v[3]),
            radius: v[4],
            mass: v[5],
            color_index: d.u8()?,
        });
    }
    let grasped_object = match d.u32()? {
        NO_GRASP => None,
        i if (i as usize) < no => Some(i as usize),
        i => return Err(DatasetError::Corrupt(format!("grasped index {i} of {no} objects"))),
    };
    let words = [d.u64()?, d.u64()?, d.u64()?, d.u64()?];
    Ok(SimState { time, joint_pos, joint_vel, objects, grasped_object, rng_state: CounterRng::from_words(words) })
}

fn encode_group(t: &Trajectory) -> Result<Vec<u8>, DatasetError> {
    t.validate()?;
    let n = t.len();
    let mut e = Enc::default();
    e.u32(narrow(n, "trajectory length")?);
    e.u16(narrow(t.actions.dim, "action dim")?);
    e.u16(narrow(t.observations.len(), "sensor count")?);
    for (name, s) in &t.observations {
        e.u8(narrow(name.len(), "sensor name length")?);
        e.bytes(name.as_bytes());
        e.u32(narrow(s.dim, "sensor dim")?);
    }
    e.u32(narrow(t.states.dim, "state dim")?);
    e.u64(t.seed);
    encode_state(&mut e, &t.initial_state)?;
    for (_, s) in &t.observations {
        e.column_major(s);
    }
    e.column_major(&t.actions);
    t.rewards.iter().for_each(|&r| e.f64(r));
    t.successes.iter().for_each(|&s| e.u8(u8::from(s)));
    e.column_major(&t.states);
    e.u8(t.source.code());
    let meta: String = t.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    e.u32(narrow(meta.len(), "metadata length")?);
    e.bytes(meta.as_bytes());
    Ok(e.0)
}

fn decode_group(buf: &[u8], env_id: &str) -> Result<Trajectory, DatasetError> {
    let mut d = Dec::new(buf);
    let n = d.u32()? as usize;
    let action_dim = usize::from(d.u16()?);
    let n_sensors = usize::from(d.u16()?);
    let mut layout = Vec::with_capacity(n_sensors);
    for _ in 0..n_sensors {
        let len = usize::from(d.u8()?);
        let name = std::str::from_utf8(d.take(len)?)
            .map_err(|_| DatasetError::Corrupt("sensor name is not UTF-8".into()))?
            .to_owned();
        layout.push((name, d.u32()? as usize));
    }
    let state_dim = d.u32()? as usize;
    let seed = d.u64()?;
    let initial_state = decode_state(&mut d)?;
    let mut observations = Vec::with_capacity(n_sensors);
    for (name, dim) in layout {
        let s = d.column_major(n, dim)?;
        observations.push((name, s));
    }
    let actions = d.column_major(n, action_dim)?;
    let rewards = d.f64s(n)?;
    let successes = d
        .take(n)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DatasetError::Corrupt(format!("success flag {b}"))),
        })
        .collect::<Result<_, _>>()?;
    let states = d.column_major(n, state_dim)?;
    let code = d.u8()?;
    let source = Source::from_code(code).ok_or_else(|| DatasetError::Corrupt(format!("source code {code}")))?;
    let meta_len = d.u32()? as usize;
    let meta = std::str::from_utf8(d.take(meta_len)?)
        .map_err(|_| DatasetError::Corrupt("metadata is not UTF-8".into()))?;
    let mut metadata = BTreeMap::new();
    for line in meta.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DatasetError::Corrupt(format!("metadata line {line:?}")))?;
        metadata.insert(k.to_owned(), v.to_owned());
    }
    d.done()?;
    Ok(Trajectory {
        env_id: env_id.to_owned(),
        seed,
        observations,
        actions,
        rewards,
        successes,
        states,
        initial_state,
        source,
        metadata,
    })
}

/// Writes `trajs` as a new container at `path`, replacing any existing file.
/// Every trajectory must come from `cfg`'s environment.
pub fn write_trajectories(path: &Path, cfg: &EnvConfig, trajs: &[Trajectory]) -> Result<ContainerReader, DatasetError> {
    let digest = config_digest(cfg);
    let digest_hex = hex(&digest);
    for t in trajs {
        if t.env_id != cfg.env_id {
            return Err(DatasetError::MixedEnv { expected: cfg.env_id.clone(), got: t.env_id.clone() });
        }
        if t.metadata.get(META_CONFIG_DIGEST).is_some_and(|d| *d != digest_hex) {
            return Err(DatasetError::MixedEnv {
                expected: format!("{} ({digest_hex})", cfg.env_id),
                got: format!("{} ({})", t.env_id, t.metadata[META_CONFIG_DIGEST]),
            });
        }
    }
    let groups = trajs.iter().map(encode_group).collect::<Result<Vec<_>, _>>()?;
    let config = cfg.to_config_string();

    let mut head = Enc::default();
    head.bytes(MAGIC);
    head.u16(FORMAT_VERSION);
    head.u32(narrow(config.len(), "config length")?);
    head.bytes(config.as_bytes());
    head.bytes(&digest);
    head.u32(narrow(groups.len(), "trajectory count")?);
    let mut offset = (head.0.len() + 16 * groups.len()) as u64;
    for g in &groups {
        head.u64(offset);
        head.u64(g.len() as u64);
        offset += g.len() as u64;
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&head.0)?;
    for g in &groups {
        w.write_all(g)?;
    }
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    ContainerReader::open(path)
}

/// An opened container: header and index in memory, groups read on demand.
#[derive(Debug)]
pub struct ContainerReader {
    path: PathBuf,
    config: EnvConfig,
    config_text: String,
    digest: [u8; 32],
    index: Vec<(u64, u64)>,
    groups_start: u64,
    file_len: u64,
}

impl ContainerReader {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let mut f = File::open(path)?;
        let file_len = f.metadata()?.len();
        let mut magic = [0u8; 4];
        if f.read_exact(&mut magic).is_err() || &magic != MAGIC {
            return Err(DatasetError::NotRoboSet);
        }
        let mut fixed = [0u8; 6];
        f.read_exact(&mut fixed).map_err(|_| DatasetError::Corrupt("truncated header".into()))?;
        let version = u16::from_le_bytes([fixed[0], fixed[1]]);
        if version != FORMAT_VERSION {
            return Err(DatasetError::UnsupportedVersion(version));
        }
        let config_len = u64::from(u32::from_le_bytes([fixed[2], fixed[3], fixed[4], fixed[5]]));
        if 10 + config_len + 36 > file_len {
            return Err(DatasetError::Corrupt("config block exceeds file".into()));
        }
        let mut rest = vec![0u8; config_len as usize + 36];
        f.read_exact(&mut rest)?;
        let (config_bytes, tail) = rest.split_at(config_len as usize);
        let digest: [u8; 32] = tail[..32].try_into().expect("32 bytes");
        let config_text = String::from_utf8(config_bytes.to_vec())
            .map_err(|_| DatasetError::Corrupt("config is not UTF-8".into()))?;
        let config = parse_env_config(&config_text).map_err(|_| DatasetError::DigestMismatch)?;
        if config_digest(&config) != digest {
            return Err(DatasetError::DigestMismatch);
        }
        let n = u64::from(u32::from_le_bytes(tail[32..36].try_into().expect("4 bytes")));
        let index_start = 10 + config_len + 36;
        let groups_start = index_start + 16 * n;
        if groups_start > file_len {
            return Err(DatasetError::Corrupt("index exceeds file".into()));
        }
        let mut raw = vec![0u8; 16 * n as usize];
        f.read_exact(&mut raw)?;
        let mut index = Vec::with_capacity(n as usize);
        let mut expected = groups_start;
        for entry in raw.chunks_exact(16) {
            let off = u64::from_le_bytes(entry[..8].try_into().expect("8 bytes"));
            let len = u64::from_le_bytes(entry[8..].try_into().expect("8 bytes"));
            if off < expected || off.checked_add(len).is_none_or(|end| end > file_len) {
                return Err(DatasetError::Corrupt(format!("index entry {} out of order or out of bounds", index.len())));
            }
            expected = off + len;
            index.push((off, len));
        }
        Ok(Self { path: path.to_owned(), config, config_text, digest, index, groups_start, file_len })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn config_text(&self) -> &str {
        &self.config_text
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index(&self) -> &[(u64, u64)] {
        &self.index
    }

    /// Random access through the index.
    pub fn read(&self, k: usize) -> Result<Trajectory, DatasetError> {
        let &(off, len) = self
            .index
            .get(k)
            .ok_or_else(|| DatasetError::Invalid(format!("trajectory {k} of {}", self.index.len())))?;
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(off))?;
        let mut buf = vec![0u8; len as usize];
        f.read_exact(&mut buf)?;
        decode_group(&buf, &self.config.env_id)
    }

    /// Reads every group back to back from the end of the index, without
    /// consulting the offsets.
    pub fn read_all(&self) -> Result<Vec<Trajectory>, DatasetError> {
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(self.groups_start))?;
        let mut buf = Vec::with_capacity((self.file_len - self.groups_start) as usize);
        f.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let mut out = Vec::with_capacity(self.index.len());
        for &(_, len) in &self.index {
            let end = pos + len as usize;
            let group = buf.get(pos..end).ok_or_else(|| DatasetError::Corrupt("truncated group".into()))?;
            out.push(decode_group(group, &self.config.env_id)?);
            pos = end;
        }
        Ok(out)
    }
}
