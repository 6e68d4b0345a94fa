//! Binary frame-pair files and the dataset directory layout.
//!
//! A `.zfss` file is little-endian: magic `ZFSS`, `u32` version, `u32` point
//! count at `t`, `u32` point count at `t+1`, then the `t` points, the `t+1`
//! points and the flow as `f32` triples, then one class byte per `t` point.
//! The `.json` sidecar carries the generating config and metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generator::SceneConfig;
use super::types::{FlowField, PointClass, PointCloud, SceneMeta, SceneSample, Vec3};
use crate::{Error, Result};

pub const SAMPLE_MAGIC: &[u8; 4] = b"ZFSS";
pub const SAMPLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSidecar {
    pub version: u32,
    pub config: SceneConfig,
    pub meta: SceneMeta,
    pub frame_id_t: i64,
    pub frame_id_t1: i64,
    pub dt_seconds: f64,
}

pub(crate) struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(path: &'a Path, buf: &'a [u8]) -> Self {
        Reader { path, buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(
                self.path,
                format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn vec3s(&mut self, n: usize) -> Result<Vec<Vec3>> {
        (0..n)
            .map(|_| {
                let x = self.f32()?;
                let y = self.f32()?;
                let z = self.f32()?;
                Ok(Vec3::new(f64::from(x), f64::from(y), f64::from(z)))
            })
            .collect()
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn push_vec3s(out: &mut Vec<u8>, vs: &[Vec3]) {
    for v in vs {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
}

fn count_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidConfig(format!("{what} count {n} exceeds u32")))
}

pub fn encode_sample(sample: &SceneSample) -> Result<Vec<u8>> {
    sample.validate()?;
    let n = sample.cloud_t.len();
    let m = sample.cloud_t1.len();
    let mut out = Vec::with_capacity(16 + 12 * (2 * n + m) + n);
    out.extend_from_slice(SAMPLE_MAGIC);
    out.extend_from_slice(&SAMPLE_VERSION.to_le_bytes());
    out.extend_from_slice(&count_u32(n, "cloud_t")?.to_le_bytes());
    out.extend_from_slice(&count_u32(m, "cloud_t1")?.to_le_bytes());
    push_vec3s(&mut out, &sample.cloud_t.points);
    push_vec3s(&mut out, &sample.cloud_t1.points);
    push_vec3s(&mut out, &sample.gt_flow.vectors);
    out.extend(sample.classes.iter().map(|c| c.to_u8()));
    Ok(out)
}

/// Decoded arrays of a `.zfss` file.
pub struct SampleArrays {
    pub cloud_t: Vec<Vec3>,
    pub cloud_t1: Vec<Vec3>,
    pub flow: Vec<Vec3>,
    pub classes: Vec<PointClass>,
}

pub fn decode_sample(path: &Path, bytes: &[u8]) -> Result<SampleArrays> {
    let mut r = Reader::new(path, bytes);
    r.magic(SAMPLE_MAGIC)?;
    let version = r.u32()?;
    if version != SAMPLE_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let n = r.u32()? as usize;
    let m = r.u32()? as usize;
    let cloud_t = r.vec3s(n)?;
    let cloud_t1 = r.vec3s(m)?;
    let flow = r.vec3s(n)?;
    let classes = r
        .take(n)?
        .iter()
        .map(|&b| {
            PointClass::from_u8(b).ok_or_else(|| Error::format(path, format!("bad class byte {b}")))
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(SampleArrays {
        cloud_t,
        cloud_t1,
        flow,
        classes,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

/// Writes `<stem>.zfss` and `<stem>.json`.
pub fn save_sample(stem: &Path, sample: &SceneSample, config: &SceneConfig) -> Result<()> {
    let bin = stem.with_extension("zfss");
    write_file(&bin, &encode_sample(sample)?)?;
    let sidecar = SampleSidecar {
        version: SAMPLE_VERSION,
        config: config.clone(),
        meta: sample.meta.clone(),
        frame_id_t: sample.cloud_t.frame_id,
        frame_id_t1: sample.cloud_t1.frame_id,
        dt_seconds: sample.dt_seconds,
    };
    write_json(&stem.with_extension("json"), &sidecar)
}

pub fn load_sample(stem: &Path) -> Result<(SceneSample, SceneConfig)> {
    let bin = stem.with_extension("zfss");
    let arrays = decode_sample(&bin, &read_file(&bin)?)?;
    let sidecar: SampleSidecar = read_json(&stem.with_extension("json"))?;
    let sample = SceneSample {
        cloud_t: PointCloud::new(arrays.cloud_t, sidecar.frame_id_t),
        cloud_t1: PointCloud::new(arrays.cloud_t1, sidecar.frame_id_t1),
        gt_flow: FlowField::new(arrays.flow),
        classes: arrays.classes,
        dt_seconds: sidecar.dt_seconds,
        meta: sidecar.meta,
    };
    sample.validate()?;
    Ok((sample, sidecar.config))
}

/// `<root>/<split>/<index:06>.zfss` + `.json`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    root: PathBuf,
}

impl Dataset {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Dataset { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn split_dir(&self, split: &str) -> PathBuf {
        self.root.join(split)
    }

    pub fn stem(&self, split: &str, index: usize) -> PathBuf {
        self.split_dir(split).join(format!("{index:06}"))
    }

    pub fn save(
        &self,
        split: &str,
        index: usize,
        sample: &SceneSample,
        cfg: &SceneConfig,
    ) -> Result<()> {
        save_sample(&self.stem(split, index), sample, cfg)
    }

    pub fn load(&self, split: &str, index: usize) -> Result<SceneSample> {
        load_sample(&self.stem(split, index)).map(|(s, _)| s)
    }

    pub fn load_with_config(
        &self,
        split: &str,
        index: usize,
    ) -> Result<(SceneSample, SceneConfig)> {
        load_sample(&self.stem(split, index))
    }

    /// Sorted sample indices present in `split`.
    pub fn indices(&self, split: &str) -> Result<Vec<usize>> {
        let dir = self.split_dir(split);
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("zfss") {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            if let Ok(i) = stem.parse::<usize>() {
                out.push(i);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn load_split(&self, split: &str) -> Result<Vec<SceneSample>> {
        self.indices(split)?
            .into_iter()
            .map(|i| self.load(split, i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate_scene;

    fn cfg() -> SceneConfig {
        SceneConfig {
            area_half_extent: 10.0,
            n_background_points: 200,
            n_static_structures: 4,
            n_objects: 2,
            object_points: 50,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn save_load_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(dir.path());
        let c = cfg();
        let s = generate_scene(&c).unwrap();
        ds.save("train", 3, &s, &c).unwrap();
        assert!(dir.path().join("train/000003.zfss").exists());
        assert!(dir.path().join("train/000003.json").exists());
        let (back, back_cfg) = ds.load_with_config("train", 3).unwrap();
        assert_eq!(back_cfg, c);
        assert_eq!(back.classes, s.classes);
        assert_eq!(back.meta, s.meta);
        for (a, b) in back.cloud_t.points.iter().zip(&s.cloud_t.points) {
            assert_eq!(a.x, b.x as f32 as f64);
            assert_eq!(a.z, b.z as f32 as f64);
        }
        // A second save of the loaded sample is byte-identical.
        let first = encode_sample(&s).unwrap();
        assert_eq!(encode_sample(&back).unwrap(), first);
        assert_eq!(ds.indices("train").unwrap(), vec![3]);
    }

    #[test]
    fn header_layout() {
        let s = generate_scene(&cfg()).unwrap();
        let bytes = encode_sample(&s).unwrap();
        assert_eq!(&bytes[0..4], b"ZFSS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let n = s.cloud_t.len();
        let m = s.cloud_t1.len();
        assert_eq!(
            u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
            n
        );
        assert_eq!(
            u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize,
            m
        );
        assert_eq!(bytes.len(), 16 + 12 * (2 * n + m) + n);
    }

    #[test]
    fn rejects_corrupt_files() {
        let s = generate_scene(&cfg()).unwrap();
        let mut bytes = encode_sample(&s).unwrap();
        let p = Path::new("x.zfss");
        assert!(decode_sample(p, &bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'Q';
        assert!(matches!(
            decode_sample(p, &bytes),
            Err(Error::Format { .. })
        ));
    }
}
