//! Dataset file formats.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       6     magic "DDSET\0"
//! 6       2     version (u16) = 1
//! 8       1     flags: bit0 labels present, bit1 class names present
//! 9       7     reserved, zero
//! 16      8     n_samples (u64)
//! 24      8     dim (u64)
//! 32      8     n_classes (u64, 0 when unlabeled)
//! 40      n*dim*8   samples (f64, row-major)
//! ...     n*4   labels (u32)            when bit0
//! ...     per class: u16 len + utf-8    when bit1
//! ```
//!
//! CSV import accepts one sample per row, comma-separated, with an optional
//! final integer label column.

use std::path::Path;

use super::{LabeledDataset, SampleSet, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::util::{atomic_write, ByteReader};

const MAGIC: &[u8; 6] = b"DDSET\0";
const VERSION: u16 = 1;
const FLAG_LABELS: u8 = 0b01;
const FLAG_NAMES: u8 = 0b10;

struct RawDataset {
    samples: SampleSet,
    labels: Option<Vec<usize>>,
    n_classes: usize,
    names: Option<Vec<String>>,
}

fn encode(
    samples: &SampleSet,
    labels: Option<&[usize]>,
    n_classes: usize,
    names: Option<&[String]>,
) -> Result<Vec<u8>> {
    let mut flags = 0u8;
    if labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if names.is_some() {
        flags |= FLAG_NAMES;
    }
    let mut out = Vec::with_capacity(40 + samples.data().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(flags);
    out.extend_from_slice(&[0u8; 7]);
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&(samples.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(n_classes as u64).to_le_bytes());
    for v in samples.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = labels {
        for &l in labels {
            let l32 = u32::try_from(l)
                .map_err(|_| Error::contract(format!("label {l} exceeds u32 range")))?;
            out.extend_from_slice(&l32.to_le_bytes());
        }
    }
    if let Some(names) = names {
        for name in names {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| Error::config(format!("class name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(bytes);
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<RawDataset> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(6, "magic")?;
    if magic != MAGIC {
        return Err(Error::parse(0, "bad magic bytes, not a dataset file"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::parse(6, format!("unsupported version {version}")));
    }
    let flags = r.u8("flags")?;
    r.take(7, "reserved header bytes")?;
    let n = r.u64("n_samples")? as usize;
    let dim = r.u64("dim")? as usize;
    let n_classes = r.u64("n_classes")? as usize;
    if dim == 0 || n == 0 {
        return Err(Error::parse(16, "empty dataset in header"));
    }
    let count = n
        .checked_mul(dim)
        .ok_or_else(|| Error::parse(16, "sample count overflows"))?;
    let payload_start = r.pos();
    let data = r.f64_vec(count, "sample payload")?;
    if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::parse(
            payload_start + bad as u64 * 8,
            "non-finite sample value",
        ));
    }
    let labels = if flags & FLAG_LABELS != 0 {
        let raw = r.u32_vec(n, "labels")?;
        Some(raw.into_iter().map(|l| l as usize).collect::<Vec<_>>())
    } else {
        None
    };
    let names = if flags & FLAG_NAMES != 0 {
        let mut names = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            let len = r.u16("class name length")? as usize;
            let raw = r.take(len, "class name")?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::parse(r.pos() - len as u64, "class name is not utf-8"))?;
            names.push(name.to_string());
        }
        Some(names)
    } else {
        None
    };
    r.expect_end()?;
    Ok(RawDataset {
        samples: SampleSet::new(dim, data)?,
        labels,
        n_classes,
        names,
    })
}

impl LabeledDataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = encode(
            self.samples(),
            Some(self.labels()),
            self.n_classes(),
            self.class_names(),
        )?;
        atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<LabeledDataset> {
        let bytes = std::fs::read(path)?;
        let raw = decode(&bytes)?;
        let labels = raw
            .labels
            .ok_or_else(|| Error::parse(8, "file carries no labels"))?;
        LabeledDataset::new(raw.samples, labels, raw.n_classes, raw.names)
    }

    /// CSV import: one sample per row, final column an integer label.
    /// `n_classes` defaults to `max(label) + 1` when not given.
    pub fn from_csv(path: &Path, n_classes: Option<usize>) -> Result<LabeledDataset> {
        let (samples, labels) = parse_csv(path, true)?;
        let labels = labels.expect("labeled parse returns labels");
        let classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        LabeledDataset::new(samples, labels, classes, None)
    }
}

impl UnlabeledDataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = encode(
            self.samples(),
            self.hidden_labels(),
            self.n_hidden_classes(),
            None,
        )?;
        atomic_write(path, &bytes)
    }

    /// Loads any dataset file; labels present in the file become hidden
    /// labels reserved for analysis.
    pub fn load(path: &Path) -> Result<UnlabeledDataset> {
        let bytes = std::fs::read(path)?;
        let raw = decode(&bytes)?;
        UnlabeledDataset::new(raw.samples, raw.labels, raw.n_classes)
    }

    /// CSV import without a label column.
    pub fn from_csv(path: &Path) -> Result<UnlabeledDataset> {
        let (samples, _) = parse_csv(path, false)?;
        UnlabeledDataset::new(samples, None, 0)
    }
}

fn parse_csv(path: &Path, labeled: bool) -> Result<(SampleSet, Option<Vec<usize>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut width: Option<usize> = None;
    let mut data: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len() as u64;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let n_values = if labeled {
            if fields.len() < 2 {
                return Err(Error::parse(line_start, "labeled row needs >= 2 columns"));
            }
            fields.len() - 1
        } else {
            fields.len()
        };
        match width {
            None => width = Some(n_values),
            Some(w) if w != n_values => {
                return Err(Error::parse(
                    line_start,
                    format!("row width {n_values} differs from first row {w}"),
                ))
            }
            _ => {}
        }
        for f in &fields[..n_values] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(line_start, format!("bad float {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(line_start, "non-finite value"));
            }
            data.push(v);
        }
        if labeled {
            let l: usize = fields[n_values]
                .parse()
                .map_err(|_| Error::parse(line_start, format!("bad label {:?}", fields[n_values])))?;
            labels.push(l);
        }
    }
    let width = width.ok_or_else(|| Error::parse(0, "empty csv file"))?;
    Ok((
        SampleSet::new(width, data)?,
        if labeled { Some(labels) } else { None },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_domains, DomainGenConfig};

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    fn small_config() -> DomainGenConfig {
        DomainGenConfig {
            n_base_classes: 3,
            n_target_classes: 3,
            samples_per_class: 10,
            input_dim: 6,
            latent_dim: 3,
            ..DomainGenConfig::default()
        }
    }

    #[test]
    fn labeled_roundtrip_is_exact() {
        let dir = tmpdir();
        let (base, _, _) = generate_domains(&small_config()).unwrap();
        let path = dir.path().join("base.dds");
        base.save(&path).unwrap();
        let loaded = LabeledDataset::load(&path).unwrap();
        assert_eq!(base, loaded);
    }

    #[test]
    fn unlabeled_roundtrip_keeps_hidden_labels() {
        let dir = tmpdir();
        let (_, unlabeled, _) = generate_domains(&small_config()).unwrap();
        let path = dir.path().join("u.dds");
        unlabeled.save(&path).unwrap();
        let loaded = UnlabeledDataset::load(&path).unwrap();
        assert_eq!(unlabeled, loaded);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tmpdir();
        let (base, _, _) = generate_domains(&small_config()).unwrap();
        let path = dir.path().join("trunc.dds");
        base.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match LabeledDataset::load(&path) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_fails_validation() {
        let dir = tmpdir();
        let (base, _, _) = generate_domains(&small_config()).unwrap();
        let path = dir.path().join("bad.dds");
        base.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // first label lives right after the payload; overwrite with 200
        let label_offset = 40 + base.len() * base.dim() * 8;
        bytes[label_offset..label_offset + 4].copy_from_slice(&200u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            LabeledDataset::load(&path),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("not.dds");
        std::fs::write(&path, b"HELLO WORLD PADDING PADDING").unwrap();
        assert!(matches!(
            LabeledDataset::load(&path),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn csv_import_labeled_and_unlabeled() {
        let dir = tmpdir();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "1.0, 2.0, 0\n3.0, 4.0, 1\n\n5.0, 6.0, 1\n").unwrap();
        let ds = LabeledDataset::from_csv(&path, None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.labels(), &[0, 1, 1]);

        let upath = dir.path().join("u.csv");
        std::fs::write(&upath, "1.5,2.5\n-3.0,0.25\n").unwrap();
        let uds = UnlabeledDataset::from_csv(&upath).unwrap();
        assert_eq!(uds.len(), 2);
        assert!(uds.hidden_labels().is_none());
    }

    #[test]
    fn csv_errors_carry_offsets() {
        let dir = tmpdir();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1.0,2.0,0\noops,4.0,1\n").unwrap();
        match LabeledDataset::from_csv(&path, None) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
