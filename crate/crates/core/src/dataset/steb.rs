//! STEB embedding files and their JSON sidecar manifests.
//!
//! Layout, little-endian throughout:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `STEB` |
//! | 4     | version (1) |
//! | 5..9  | `u32` row count N |
//! | 9..13 | `u32` dimension D |
//! | 13..17| `u32` class count C (0 = no labels) |
//! | ...   | N·D `f32` values, row-major |
//! | ...   | if C > 0: N `u16` labels |
//!
//! The manifest for `name.steb` is `name.manifest.json` in the same directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EmbeddingTable;
use crate::error::{Error, Result};

pub const STEB_MAGIC: &[u8; 4] = b"STEB";
pub const STEB_VERSION: u8 = 1;
pub const STEB_HEADER_LEN: usize = 17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub ids: Vec<String>,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub source_model: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::FormatLimit(format!("{what} {value} exceeds 2^32 - 1")))
}

pub(crate) fn encode(table: &EmbeddingTable) -> Result<Vec<u8>> {
    let n = to_u32(table.len(), "row count")?;
    let d = to_u32(table.dim(), "dimension")?;
    let c = table.n_classes();
    if c > u16::MAX as usize + 1 {
        return Err(Error::FormatLimit(format!("{c} classes do not fit 16-bit labels")));
    }
    let c = to_u32(c, "class count")?;
    let mut buf = Vec::with_capacity(STEB_HEADER_LEN + table.vectors().len() * 4 + table.labels().len() * 2);
    buf.extend_from_slice(STEB_MAGIC);
    buf.push(STEB_VERSION);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    buf.extend_from_slice(&c.to_le_bytes());
    for v in table.vectors() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if c > 0 {
        for l in table.labels() {
            buf.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write_embedding_file(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let bytes = encode(table)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let manifest = Manifest {
        ids: table.ids().to_vec(),
        class_names: table.class_names().to_vec(),
        source_model: table.source_model().to_string(),
    };
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(mpath.display().to_string(), e))?;
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))
}

struct Decoded {
    n: usize,
    dim: usize,
    classes: usize,
    vectors: Vec<f32>,
    labels: Vec<u16>,
}

fn decode(bytes: &[u8], path: &Path) -> Result<Decoded> {
    if bytes.len() < 4 || &bytes[..4] != STEB_MAGIC {
        return Err(Error::NotSteb(path.to_path_buf()));
    }
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < STEB_HEADER_LEN {
        return Err(corrupt(format!("header truncated at {} bytes", bytes.len())));
    }
    if bytes[4] != STEB_VERSION {
        return Err(corrupt(format!("unsupported version {}", bytes[4])));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (n, dim, classes) = (word(5), word(9), word(13));
    let values = n
        .checked_mul(dim)
        .ok_or_else(|| corrupt("N x D overflows".into()))?;
    let label_bytes = if classes > 0 { n * 2 } else { 0 };
    let expected = STEB_HEADER_LEN + values * 4 + label_bytes;
    if bytes.len() != expected {
        return Err(corrupt(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let payload = &bytes[STEB_HEADER_LEN..STEB_HEADER_LEN + values * 4];
    let vectors = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let labels: Vec<u16> = bytes[STEB_HEADER_LEN + values * 4..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
        .collect();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad as usize,
            classes,
        });
    }
    Ok(Decoded {
        n,
        dim,
        classes,
        vectors,
        labels,
    })
}

pub fn load_embedding_file(path: &Path) -> Result<EmbeddingTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = decode(&bytes, path)?;
    let n = decoded.n;
    let mpath = manifest_path(path);
    let manifest = if mpath.exists() {
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        Some(serde_json::from_str::<Manifest>(&text).map_err(|e| Error::json(mpath.display().to_string(), e))?)
    } else {
        None
    };
    let (ids, mut class_names, source_model) = match manifest {
        Some(m) => (m.ids, m.class_names, m.source_model),
        None => ((0..n).map(|i| i.to_string()).collect(), Vec::new(), String::new()),
    };
    if ids.len() != n {
        return Err(Error::InvalidTable(format!(
            "manifest {} lists {} ids for {n} rows",
            mpath.display(),
            ids.len()
        )));
    }
    if class_names.is_empty() {
        class_names = (0..decoded.classes).map(|c| format!("class_{c}")).collect();
    } else if class_names.len() != decoded.classes {
        return Err(Error::InvalidTable(format!(
            "manifest lists {} class names, file declares {}",
            class_names.len(),
            decoded.classes
        )));
    }
    EmbeddingTable::new(ids, decoded.vectors, decoded.dim, decoded.labels, class_names, source_model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_vector() -> EmbeddingTable {
        EmbeddingTable::new(vec!["u0".into()], vec![1.0, 2.0, 3.0], 3, vec![0], vec!["A01".into()], "").unwrap()
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.steb");
        let t = EmbeddingTable::new(vec![], vec![], 4, vec![], vec![], "").unwrap();
        write_embedding_file(&t, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), STEB_HEADER_LEN);
        assert_eq!(load_embedding_file(&path).unwrap(), t);
    }

    #[test]
    fn single_vector_payload_layout() {
        let bytes = encode(&one_vector()).unwrap();
        assert_eq!(bytes.len(), STEB_HEADER_LEN + 12 + 2);
        assert_eq!(&bytes[STEB_HEADER_LEN..STEB_HEADER_LEN + 4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[STEB_HEADER_LEN + 8..STEB_HEADER_LEN + 12], &3.0f32.to_le_bytes());
        assert_eq!(&bytes[STEB_HEADER_LEN + 12..], &[0, 0]);
    }

    #[test]
    fn hand_built_file_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hand.steb");
        let mut bytes = b"STEB".to_vec();
        bytes.push(1);
        for w in [2u32, 2, 2] {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        for v in [0.0f32, 1.0, 1.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for l in [0u16, 1] {
            bytes.extend_from_slice(&l.to_le_bytes());
        }
        fs::write(&path, bytes).unwrap();
        let t = load_embedding_file(&path).unwrap();
        assert_eq!(t.vectors(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(t.labels(), &[0, 1]);
        assert_eq!(t.class_names(), &["class_0", "class_1"]);
        assert_eq!(t.ids(), &["0", "1"]);
    }

    #[test]
    fn bad_magic_truncation_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.steb");
        fs::write(&path, b"XXXX\x01").unwrap();
        let err = load_embedding_file(&path).unwrap_err();
        assert!(err.to_string().contains("not an STEB file"));

        let mut bytes = encode(&one_vector()).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(load_embedding_file(&path).unwrap_err().to_string().contains("corrupt file"));

        let mut bytes = encode(&one_vector()).unwrap();
        let last = bytes.len() - 2;
        bytes[last] = 5;
        fs::write(&path, &bytes).unwrap();
        assert!(load_embedding_file(&path).unwrap_err().to_string().contains("label out of range"));
    }

    #[test]
    fn manifest_sits_next_to_file() {
        assert_eq!(manifest_path(Path::new("data/view_a.steb")), PathBuf::from("data/view_a.manifest.json"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn write_then_load_is_identity(
            n in 0usize..40,
            dim in 1usize..24,
            classes in 1usize..6,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vectors: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1e3f32..1e3)).collect();
            let labels: Vec<u16> = (0..n).map(|_| rng.random_range(0..classes as u16)).collect();
            let t = EmbeddingTable::new(
                (0..n).map(|i| format!("utt-{i}")).collect(),
                vectors,
                dim,
                labels,
                (0..classes).map(|c| format!("A{c:02}")).collect(),
                "synthetic",
            ).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.steb");
            write_embedding_file(&t, &path).unwrap();
            let back = load_embedding_file(&path).unwrap();
            let bits = |t: &EmbeddingTable| t.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&t));
            prop_assert_eq!(back, t);
        }
    }
}
