//! Binary dataset files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      "CSIF"
//! version    u16
//! K Nr Nt L  u32 x 4
//! N_samples  u32
//! T_s        f64 (seconds)
//! train_frac f64
//! N records: speed_tag f32, then (L+1)*K*Nr*Nt complex values as (re, im)
//!            f32 pairs in (time, k, rx, tx) row-major order, inputs oldest
//!            first, target last
//! ```
//!
//! A JSON sidecar next to the file (`<stem>.meta.json`) carries seeds,
//! speeds, normalization powers, the simulator config and each sample's
//! origin. Without it a file still loads, with window-relative timestamps.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSample, SampleOrigin, SequenceInfo, SplitTag};
use crate::channel::{ChannelTensor, TensorShape};
use crate::error::{Error, Result};
use crate::sim::SimConfig;

pub const MAGIC: &[u8; 4] = b"CSIF";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 5 * 4 + 8 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u16,
    split: SplitTag,
    shape: TensorShape,
    history_len: usize,
    sample_period: f64,
    train_fraction: f64,
    sequences: Vec<SequenceInfo>,
    sim_config: Option<SimConfig>,
    origins: Vec<SampleOrigin>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} exceeds u32")))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    let written = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// Writes `path` and its sidecar. Both are staged under temporary names and
/// renamed into place, so a failed write leaves no partial file.
pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let s = ds.shape;
    let tmp = path.with_extension("csif.partial");
    let result = (|| -> Result<()> {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
        for (v, what) in [
            (s.subbands, "K"),
            (s.rx, "Nr"),
            (s.tx, "Nt"),
            (ds.history_len, "L"),
            (ds.len(), "N_samples"),
        ] {
            w.write_u32::<LittleEndian>(to_u32(v, what)?)?;
        }
        w.write_f64::<LittleEndian>(ds.sample_period)?;
        w.write_f64::<LittleEndian>(ds.train_fraction)?;
        for sample in &ds.samples {
            w.write_f32::<LittleEndian>(sample.speed_tag)?;
            for t in sample.inputs.iter().chain([&sample.target]) {
                for v in t.as_slice() {
                    w.write_f32::<LittleEndian>(v.re as f32)?;
                    w.write_f32::<LittleEndian>(v.im as f32)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }

    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        split: ds.split,
        shape: s,
        history_len: ds.history_len,
        sample_period: ds.sample_period,
        train_fraction: ds.train_fraction,
        sequences: ds.sequences.clone(),
        sim_config: ds.sim_config.clone(),
        origins: ds.samples.iter().map(|x| x.origin).collect(),
    };
    let meta = sidecar_path(path);
    let meta_tmp = meta.with_extension("json.partial");
    let written = fs::write(&meta_tmp, serde_json::to_vec_pretty(&sidecar)?)
        .and_then(|_| fs::rename(&tmp, path))
        .and_then(|_| fs::rename(&meta_tmp, &meta));
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        let _ = fs::remove_file(&meta_tmp);
        return Err(e.into());
    }
    Ok(())
}

fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let meta = sidecar_path(path);
    if !meta.exists() {
        return Ok(None);
    }
    let bytes = fs::read(&meta)?;
    serde_json::from_slice(&bytes)
        .map(Some)
        .map_err(|e| Error::Format(format!("sidecar {}: {e}", meta.display())))
}

/// Reads a dataset file. Any structural problem yields [`Error::Format`];
/// no partially decoded dataset is returned.
pub fn load(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    if file_len < HEADER_LEN as u64 {
        return format_err(format!(
            "file is {file_len} bytes, shorter than the {HEADER_LEN}-byte header"
        ));
    }
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return format_err(format!("bad magic {magic:?}"));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return format_err(format!("unsupported version {version}"));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let [k, nr, nt, l, n] = dims;
    let sample_period = r.read_f64::<LittleEndian>()?;
    let train_fraction = r.read_f64::<LittleEndian>()?;
    if k == 0 || nr == 0 || nt == 0 || l == 0 {
        return format_err(format!("degenerate header K={k} Nr={nr} Nt={nt} L={l}"));
    }
    if n == 0 {
        return format_err("header declares zero samples");
    }
    let shape = TensorShape::new(k, nr, nt);
    let record = 4 + (l + 1) * shape.len() * 8;
    let expected = record
        .checked_mul(n)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if file_len != expected as u64 {
        return format_err(format!(
            "expected {expected} bytes for {n} samples of shape {shape} with L={l}, found {file_len} ({})",
            if file_len < expected as u64 { "truncated" } else { "trailing data" }
        ));
    }

    let sidecar = read_sidecar(path)?;
    if let Some(sc) = &sidecar {
        if sc.shape != shape || sc.history_len != l {
            return format_err(format!(
                "sidecar shape {} / L={} disagrees with header {shape} / L={l}",
                sc.shape, sc.history_len
            ));
        }
        if sc.origins.iter().any(|o| o.last_input + 1 < l) {
            return format_err("sidecar origin precedes a full history window");
        }
        if sc.origins.len() != n {
            return format_err(format!(
                "sidecar lists {} origins for {n} samples",
                sc.origins.len()
            ));
        }
    }

    // Windows overlap in time; with known origins the shared snapshots are
    // decoded once and reference counted.
    let mut cache: HashMap<(usize, usize), Arc<ChannelTensor>> = HashMap::new();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let speed_tag = r.read_f32::<LittleEndian>()?;
        let origin = match &sidecar {
            Some(sc) => sc.origins[i],
            None => SampleOrigin {
                sequence: 0,
                last_input: l - 1,
            },
        };
        let mut tensors = Vec::with_capacity(l + 1);
        for j in 0..=l {
            let mut data = Vec::with_capacity(shape.len());
            for _ in 0..shape.len() {
                let re = r.read_f32::<LittleEndian>()? as f64;
                let im = r.read_f32::<LittleEndian>()? as f64;
                data.push(Complex64::new(re, im));
            }
            let time_index = origin.last_input + 1 + j - l;
            let tensor = ChannelTensor::from_vec(shape, data, time_index as f64 * sample_period)?;
            let shared = match (&sidecar, cache.get(&(origin.sequence, time_index))) {
                (Some(_), Some(hit)) if **hit == tensor => Arc::clone(hit),
                (Some(_), _) => {
                    let t = Arc::new(tensor);
                    cache.insert((origin.sequence, time_index), Arc::clone(&t));
                    t
                }
                (None, _) => Arc::new(tensor),
            };
            tensors.push(shared);
        }
        let target = tensors.pop().expect("l + 1 tensors decoded");
        samples.push(DatasetSample {
            inputs: tensors,
            target,
            speed_tag,
            origin,
        });
    }

    let (split, sequences, sim_config) = match sidecar {
        Some(sc) => (sc.split, sc.sequences, sc.sim_config),
        None => (SplitTag::All, Vec::new(), None),
    };
    Ok(Dataset {
        samples,
        shape,
        history_len: l,
        sample_period,
        train_fraction,
        split,
        sequences,
        sim_config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_mixed, split};
    use crate::sim::{generate_sequence, SimConfig};
    use proptest::prelude::*;

    fn dataset(seed: u64, l: usize) -> Dataset {
        let cfg = SimConfig {
            n_tx: 4,
            n_rx: 2,
            n_subbands: 5,
            n_paths: 3,
            seed,
            ..SimConfig::default()
        };
        let a = generate_sequence(&cfg, 30.0, 9).unwrap();
        let b = generate_sequence(&SimConfig { seed: seed + 1, ..cfg }, 45.0, 9).unwrap();
        build_mixed(&[a, b], l, seed).unwrap()
    }

    fn assert_same(a: &Dataset, b: &Dataset) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.speed_tag.to_bits(), y.speed_tag.to_bits());
            assert_eq!(x.origin, y.origin);
            for (p, q) in x.inputs.iter().chain([&x.target]).zip(y.inputs.iter().chain([&y.target])) {
                assert_eq!(p.timestamp, q.timestamp);
                for (u, v) in p.as_slice().iter().zip(q.as_slice()) {
                    assert_eq!(u.re.to_bits(), v.re.to_bits());
                    assert_eq!(u.im.to_bits(), v.im.to_bits());
                }
            }
        }
        assert_eq!(a.sequences, b.sequences);
        assert_eq!(a.sim_config, b.sim_config);
        assert_eq!(
            (a.shape, a.history_len, a.sample_period, a.train_fraction, a.split),
            (b.shape, b.history_len, b.sample_period, b.train_fraction, b.split)
        );
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csif");
        save(&dataset(1, 2), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [3, HEADER_LEN - 1, HEADER_LEN + 5, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(load(&path), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn corrupt_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csif");
        save(&dataset(2, 2), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(Error::Format(_))));

        let mut bad = good.clone();
        bad[4] = 9;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn header_shape_must_match_payload_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csif");
        save(&dataset(3, 2), &path).unwrap();
        let good = fs::read(&path).unwrap();

        // K field claims one more sub-band than stored
        let mut bad = good.clone();
        bad[6] += 1;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(Error::Format(_))));

        // swap Nr and Nt: byte count still matches, sidecar catches it
        let mut bad = good.clone();
        bad[10..14].copy_from_slice(&4u32.to_le_bytes());
        bad[14..18].copy_from_slice(&2u32.to_le_bytes());
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn loads_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csif");
        let ds = dataset(4, 3);
        save(&ds, &path).unwrap();
        fs::remove_file(sidecar_path(&path)).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.samples[0].target.as_slice(), ds.samples[0].target.as_slice());
        assert_eq!(back.samples[0].target.timestamp, 3.0 * ds.sample_period);
    }

    #[test]
    fn split_datasets_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (tr, te) = split(&dataset(5, 2), 0.7, 1).unwrap();
        for (name, ds) in [("train.csif", &tr), ("test.csif", &te)] {
            let p = dir.path().join(name);
            save(ds, &p).unwrap();
            assert_same(ds, &load(&p).unwrap());
        }
        assert!(dir.path().join("train.meta.json").exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..500, l in 1usize..5) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.csif");
            let ds = dataset(seed, l);
            save(&ds, &path).unwrap();
            assert_same(&ds, &load(&path).unwrap());
        }
    }
}
