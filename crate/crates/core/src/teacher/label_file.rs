//! Pseudo-label files.
//!
//! Little-endian layout: magic `ZFFL`, `u32` version, `u32` count, `f32` flow
//! triples, then `f64` final loss, `u32` iterations run, `u64` wall time in
//! milliseconds.

use std::path::{Path, PathBuf};

use super::{PseudoLabel, TeacherKind};
use crate::scene::io::{push_vec3s, read_file, write_file, Reader};
use crate::scene::FlowField;
use crate::{Error, Result};

pub const LABEL_MAGIC: &[u8; 4] = b"ZFFL";
pub const LABEL_VERSION: u32 = 1;

pub fn encode_label(label: &PseudoLabel) -> Vec<u8> {
    let n = label.flow.len();
    let mut out = Vec::with_capacity(12 + 12 * n + 20);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&LABEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    push_vec3s(&mut out, &label.flow.vectors);
    out.extend_from_slice(&label.final_loss.to_le_bytes());
    out.extend_from_slice(&label.iters_run.to_le_bytes());
    out.extend_from_slice(&label.wall_time_ms.to_le_bytes());
    out
}

pub fn decode_label(path: &Path, bytes: &[u8], teacher: TeacherKind) -> Result<PseudoLabel> {
    let mut r = Reader::new(path, bytes);
    r.magic(LABEL_MAGIC)?;
    let version = r.u32()?;
    if version != LABEL_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let n = r.u32()? as usize;
    let flow = FlowField::new(r.vec3s(n)?);
    let final_loss = r.f64()?;
    let iters_run = r.u32()?;
    let wall_time_ms = r.u64()?;
    r.finish()?;
    Ok(PseudoLabel {
        flow,
        teacher,
        final_loss,
        iters_run,
        wall_time_ms,
        cycle_loss: None,
    })
}

/// `<dir>/<index:06>.zffl`.
pub fn label_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:06}.zffl"))
}

pub fn save_label(dir: &Path, index: usize, label: &PseudoLabel) -> Result<()> {
    write_file(&label_path(dir, index), &encode_label(label))
}

pub fn load_label(dir: &Path, index: usize, teacher: TeacherKind) -> Result<PseudoLabel> {
    let path = label_path(dir, index);
    if !path.exists() {
        return Err(Error::MissingLabel(index));
    }
    decode_label(&path, &read_file(&path)?, teacher)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Vec3;

    #[test]
    fn round_trip_rounds_flow_to_f32() {
        let label = PseudoLabel {
            flow: FlowField::new(vec![Vec3::new(0.1, -0.2, 0.3), Vec3::ZERO]),
            teacher: TeacherKind::Nsfp,
            final_loss: 0.123456789,
            iters_run: 42,
            wall_time_ms: 7,
            cycle_loss: Some(0.5),
        };
        let bytes = encode_label(&label);
        assert_eq!(&bytes[..4], b"ZFFL");
        assert_eq!(bytes.len(), 12 + 24 + 20);
        let back = decode_label(Path::new("m"), &bytes, TeacherKind::Nsfp).unwrap();
        assert_eq!(back.final_loss, label.final_loss);
        assert_eq!(back.iters_run, 42);
        assert_eq!(back.wall_time_ms, 7);
        assert_eq!(back.flow.vectors[0].x, 0.1f32 as f64);
        assert_eq!(encode_label(&back), bytes);
    }

    #[test]
    fn missing_label_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_label(dir.path(), 4, TeacherKind::Gt),
            Err(Error::MissingLabel(4))
        ));
    }
}
