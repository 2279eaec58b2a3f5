//! Binary dataset and checkpoint files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! OCTF / OCTA   magic[4] u32 version=1 u32 n u32 len
//!               u32 id_len id[id_len] u64 seed
//!               n x { f32 sample[len], f32 force }
//! OCTW          magic[4] u32 version=1 u8 representation (0 raw, 1 recon)
//!               u8 log1p u32 m f64 mean[m] f64 std[m]
//!               u32 count, count x { u32 name_len name u32 ndim u32 dim[ndim] f64 data }
//! ```
//!
//! OCTF files carry the generating needle model in a JSON sidecar with the
//! same basename; OCTW files carry their architecture the same way.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::{ArchSpec, ForceModel, Normalizer, Representation, ResNet1d};
use crate::recon::{AScan, AScanDataset, ASCAN_LEN};
use crate::sim::{MScanDataset, NeedleModel, RawSpectrum, SPECTRUM_LEN};
use crate::tensor::Tensor;

pub const VERSION: u32 = 1;
const MAGIC_RAW: &[u8; 4] = b"OCTF";
const MAGIC_ASCAN: &[u8; 4] = b"OCTA";
const MAGIC_WEIGHTS: &[u8; 4] = b"OCTW";

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.fail("string is not valid UTF-8"))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.array::<4>()?;
        if &got != magic {
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(self.fail(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_records<'a>(
    magic: &[u8; 4],
    len: usize,
    needle_id: &str,
    seed: u64,
    records: impl ExactSizeIterator<Item = (Vec<f32>, f32)> + 'a,
) -> Vec<u8> {
    let n = records.len();
    let mut out = Vec::with_capacity(32 + needle_id.len() + n * (len + 1) * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    put_str(&mut out, needle_id);
    out.extend_from_slice(&seed.to_le_bytes());
    for (samples, force) in records {
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&force.to_le_bytes());
    }
    out
}

struct Records {
    needle_id: String,
    seed: u64,
    rows: Vec<Vec<f32>>,
    forces: Vec<f32>,
}

fn decode_records(
    path: &Path,
    bytes: &[u8],
    magic: &[u8; 4],
    expected_len: usize,
) -> Result<Records> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    r.header(magic)?;
    let n = r.u32()? as usize;
    let len = r.u32()? as usize;
    if len != expected_len {
        return Err(r.fail(format!("record length {len}, expected {expected_len}")));
    }
    let needle_id = r.string()?;
    let seed = r.u64()?;
    let mut rows = Vec::with_capacity(n);
    let mut forces = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(len);
        for _ in 0..len {
            row.push(r.f32()?);
        }
        rows.push(row);
        forces.push(r.f32()?);
    }
    r.finish()?;
    Ok(Records {
        needle_id,
        seed,
        rows,
        forces,
    })
}

pub fn encode_mscan(data: &MScanDataset) -> Vec<u8> {
    let records = data
        .scans
        .iter()
        .zip(&data.forces)
        .map(|(s, &f)| (s.samples().to_vec(), f));
    encode_records(MAGIC_RAW, SPECTRUM_LEN, &data.needle_id, data.seed, records)
}

pub fn write_mscan(path: &Path, data: &MScanDataset) -> Result<()> {
    data.validate()?;
    write_file(path, &encode_mscan(data))?;
    if let Some(model) = &data.model {
        write_file(
            &sidecar_path(path),
            serde_json::to_string_pretty(model)?.as_bytes(),
        )?;
    }
    Ok(())
}

/// Reads an OCTF file and, when present, its model sidecar.
pub fn read_mscan(path: &Path) -> Result<MScanDataset> {
    let bytes = read_file(path)?;
    let rec = decode_records(path, &bytes, MAGIC_RAW, SPECTRUM_LEN)?;
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let scans = rec
        .rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| RawSpectrum::new(row).map_err(|e| fail(format!("record {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let side = sidecar_path(path);
    let model = if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let model: NeedleModel = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: side.clone(),
            reason: e.to_string(),
        })?;
        Some(model)
    } else {
        None
    };
    Ok(MScanDataset {
        scans,
        forces: rec.forces,
        needle_id: rec.needle_id,
        model,
        seed: rec.seed,
    })
}

pub fn encode_ascans(data: &AScanDataset) -> Vec<u8> {
    let records = data
        .scans
        .iter()
        .zip(&data.forces)
        .map(|(s, &f)| (s.values().iter().map(|&v| v as f32).collect(), f));
    encode_records(MAGIC_ASCAN, ASCAN_LEN, &data.needle_id, data.seed, records)
}

pub fn write_ascans(path: &Path, data: &AScanDataset) -> Result<()> {
    if data.scans.len() != data.forces.len() {
        return Err(Error::Shape("A-scan and label counts differ".into()));
    }
    write_file(path, &encode_ascans(data))
}

pub fn read_ascans(path: &Path) -> Result<AScanDataset> {
    let bytes = read_file(path)?;
    let rec = decode_records(path, &bytes, MAGIC_ASCAN, ASCAN_LEN)?;
    let scans = rec
        .rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            AScan::new(row.into_iter().map(f64::from).collect()).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("record {i}: {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AScanDataset {
        scans,
        forces: rec.forces,
        needle_id: rec.needle_id,
        seed: rec.seed,
    })
}

/// Peeks at the magic bytes to tell OCTF from OCTA.
pub fn detect_representation(path: &Path) -> Result<Representation> {
    let bytes = read_file(path)?;
    match bytes.get(..4) {
        Some(m) if m == MAGIC_RAW => Ok(Representation::Raw),
        Some(m) if m == MAGIC_ASCAN => Ok(Representation::Recon),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            reason: "not an OCTF or OCTA file".into(),
        }),
    }
}

pub fn encode_model(model: &ForceModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_WEIGHTS);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match model.representation {
        Representation::Raw => 0,
        Representation::Recon => 1,
    });
    let norm = &model.normalizer;
    out.push(norm.log1p as u8);
    out.extend_from_slice(&(norm.mean.len() as u32).to_le_bytes());
    for v in norm.mean.iter().chain(&norm.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let state = model.net.state();
    out.extend_from_slice(&(state.len() as u32).to_le_bytes());
    for (name, t) in &state {
        put_str(&mut out, name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_model(path: &Path, model: &ForceModel) -> Result<()> {
    write_file(path, &encode_model(model))?;
    write_file(
        &sidecar_path(path),
        serde_json::to_string_pretty(model.net.spec())?.as_bytes(),
    )
}

/// Reads an OCTW checkpoint; the architecture comes from its sidecar.
pub fn read_model(path: &Path) -> Result<ForceModel> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let spec: ArchSpec = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: side.clone(),
        reason: e.to_string(),
    })?;
    let bytes = read_file(path)?;
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
        path,
    };
    r.header(MAGIC_WEIGHTS)?;
    let representation = match r.u8()? {
        0 => Representation::Raw,
        1 => Representation::Recon,
        other => return Err(r.fail(format!("unknown representation tag {other}"))),
    };
    let log1p = r.u8()? != 0;
    let m = r.u32()? as usize;
    let mean = (0..m).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let std = (0..m).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        entries.push((name, Tensor::new(shape, data)?));
    }
    r.finish()?;
    // weights are overwritten by load_state, so the init seed is irrelevant
    let mut net = ResNet1d::new(
        &spec,
        &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
    )?;
    net.load_state(&entries).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(ForceModel {
        net,
        normalizer: Normalizer { log1p, mean, std },
        representation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_dataset, ForceProfile};

    #[test]
    fn corrupt_magic_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.octf");
        let data = generate_dataset(
            &ForceProfile::ramp(3, 0.0, 1.0).unwrap(),
            &NeedleModel::default(),
            1,
        )
        .unwrap();
        let mut bytes = encode_mscan(&data);
        bytes[0] = b'X';
        fs::write(&p, bytes).unwrap();
        match read_mscan(&p) {
            Err(e @ Error::Format { .. }) => assert!(e.to_string().contains("bad.octf"), "{e}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_and_wrong_kind() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.octf");
        let data = generate_dataset(
            &ForceProfile::ramp(2, 0.0, 1.0).unwrap(),
            &NeedleModel::default(),
            1,
        )
        .unwrap();
        let bytes = encode_mscan(&data);
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_mscan(&p), Err(Error::Format { .. })));
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_ascans(&p), Err(Error::Format { .. })));
        assert_eq!(detect_representation(&p).unwrap(), Representation::Raw);
    }
}
