//! Sample manifests: CSV files listing images with ages, optional face boxes
//! (raw schema) or assigned class indices (processed schema), plus the
//! train/holdout split and summary statistics over them.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::data::bins::BinScheme;
use crate::data::BBox;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Ages above this are treated as data errors rather than outliers.
pub const MAX_AGE: u32 = 130;

const RAW_HEADER: &str = "path,age,x0,y0,x1,y1,source";
const PROCESSED_HEADER: &str = "path,age,class,source";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestKind {
    /// Original images: age plus an optional face bounding box.
    Raw,
    /// Preprocessed images: age plus the assigned class index.
    Processed,
}

impl ManifestKind {
    pub fn header(&self) -> &'static str {
        match self {
            ManifestKind::Raw => RAW_HEADER,
            ManifestKind::Processed => PROCESSED_HEADER,
        }
    }
}

/// One image entry. `bbox` is only meaningful in raw manifests, `class` only
/// in processed ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub path: String,
    pub age: u32,
    pub bbox: Option<BBox>,
    pub class: Option<usize>,
    pub source: String,
}

impl SampleRecord {
    fn validate(&self, kind: ManifestKind) -> Result<()> {
        if self.path.is_empty() {
            return Err(Error::data("record has an empty image path".to_string()));
        }
        for (field, value) in [("path", &self.path), ("source", &self.source)] {
            if value.contains(',') || value.contains('\n') {
                return Err(Error::data(format!(
                    "{field} '{value}' contains a comma or newline and cannot be stored in CSV"
                )));
            }
        }
        if self.age > MAX_AGE {
            return Err(Error::data(format!(
                "age {} for '{}' exceeds the plausible maximum {MAX_AGE}",
                self.age, self.path
            )));
        }
        match kind {
            ManifestKind::Raw => {
                if self.class.is_some() {
                    return Err(Error::data(format!(
                        "raw record '{}' must not carry a class index",
                        self.path
                    )));
                }
                if let Some(b) = self.bbox {
                    b.well_formed()?;
                }
            }
            ManifestKind::Processed => {
                if self.bbox.is_some() {
                    return Err(Error::data(format!(
                        "processed record '{}' must not carry a bounding box",
                        self.path
                    )));
                }
                if self.class.is_none() {
                    return Err(Error::data(format!(
                        "processed record '{}' is missing its class index",
                        self.path
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Aggregate statistics over a manifest's ages.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestStats {
    pub count: usize,
    pub mean_age: f64,
    /// Population standard deviation (divides by the count, not count - 1).
    pub std_age: f64,
    /// Records per bin of the scheme used to compute the stats.
    pub bin_counts: Vec<usize>,
    /// Records whose age falls in none of the scheme's bins.
    pub unbinned: usize,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    kind: ManifestKind,
    records: Vec<SampleRecord>,
    /// Directory record paths are resolved against; the manifest's own
    /// directory after `read`, the current directory for built manifests.
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(kind: ManifestKind, records: Vec<SampleRecord>) -> Result<Manifest> {
        let mut seen = HashSet::new();
        for rec in &records {
            rec.validate(kind)?;
            if !seen.insert(rec.path.as_str()) {
                return Err(Error::data(format!("duplicate image path '{}'", rec.path)));
            }
        }
        Ok(Manifest { kind, records, base_dir: PathBuf::from(".") })
    }

    pub fn kind(&self) -> ManifestKind {
        self.kind
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: PathBuf) {
        self.base_dir = dir;
    }

    /// Absolute or base-relative location of a record's image file.
    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn parse(text: &str, kind: ManifestKind, origin: &Path) -> Result<Manifest> {
        let mut records = Vec::new();
        let mut header_seen = false;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if !header_seen {
                if trimmed != kind.header() {
                    return Err(Error::format(
                        origin,
                        format!(
                            "line {line_no}: expected header '{}', found '{trimmed}'",
                            kind.header()
                        ),
                    ));
                }
                header_seen = true;
                continue;
            }
            records.push(parse_row(trimmed, kind, origin, line_no)?);
        }
        if !header_seen {
            return Err(Error::format(origin, "missing header row".to_string()));
        }
        let mut manifest = Manifest::new(kind, records)
            .map_err(|e| Error::format(origin, e.to_string()))?;
        manifest.base_dir = origin.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Ok(manifest)
    }

    pub fn read(path: &Path, kind: ManifestKind) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text, kind, path)
    }

    /// CSV text: `# ` comment lines, the header, then one row per record.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str(self.kind.header());
        out.push('\n');
        for rec in &self.records {
            match self.kind {
                ManifestKind::Raw => {
                    let (x0, y0, x1, y1) = match rec.bbox {
                        Some(b) => {
                            (b.x0.to_string(), b.y0.to_string(), b.x1.to_string(), b.y1.to_string())
                        }
                        None => Default::default(),
                    };
                    out.push_str(&format!(
                        "{},{},{x0},{y0},{x1},{y1},{}\n",
                        rec.path, rec.age, rec.source
                    ));
                }
                ManifestKind::Processed => {
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        rec.path,
                        rec.age,
                        rec.class.expect("validated on construction"),
                        rec.source
                    ));
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path, comments: &[String]) -> Result<()> {
        std::fs::write(path, self.to_csv(comments)).map_err(|e| Error::io(path, e))
    }

    /// Splits into (train, holdout) by shuffling with the seed and taking the
    /// first floor(train_frac * n) shuffled records for training.
    pub fn split(&self, seed: u64, train_frac: f64) -> Result<(Manifest, Manifest)> {
        if !(0.0..=1.0).contains(&train_frac) {
            return Err(Error::config(format!(
                "train fraction must lie in [0, 1], got {train_frac}"
            )));
        }
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        Rng::new(seed).shuffle(&mut order);
        let cut = (train_frac * self.records.len() as f64).floor() as usize;
        let take = |ids: &[usize]| Manifest {
            kind: self.kind,
            records: ids.iter().map(|&i| self.records[i].clone()).collect(),
            base_dir: self.base_dir.clone(),
        };
        Ok((take(&order[..cut]), take(&order[cut..])))
    }

    /// Age statistics plus per-bin counts under `scheme`. Ages outside every
    /// bin are tallied as `unbinned` rather than treated as errors.
    pub fn stats(&self, scheme: &BinScheme) -> ManifestStats {
        let n = self.records.len();
        let mut bin_counts = vec![0usize; scheme.len()];
        let mut unbinned = 0usize;
        if n == 0 {
            return ManifestStats { count: 0, mean_age: 0.0, std_age: 0.0, bin_counts, unbinned };
        }
        let mean = self.records.iter().map(|r| r.age as f64).sum::<f64>() / n as f64;
        let var = self
            .records
            .iter()
            .map(|r| (r.age as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        for rec in &self.records {
            match scheme.assign(rec.age) {
                Ok(class) => bin_counts[class] += 1,
                Err(_) => unbinned += 1,
            }
        }
        ManifestStats { count: n, mean_age: mean, std_age: var.sqrt(), bin_counts, unbinned }
    }
}

fn parse_row(
    line: &str,
    kind: ManifestKind,
    origin: &Path,
    line_no: usize,
) -> Result<SampleRecord> {
    let bad = |detail: String| Error::format(origin, format!("line {line_no}: {detail}"));
    let fields: Vec<&str> = line.split(',').collect();
    let expected = match kind {
        ManifestKind::Raw => 7,
        ManifestKind::Processed => 4,
    };
    if fields.len() != expected {
        return Err(bad(format!("expected {expected} fields, found {}", fields.len())));
    }
    let age: u32 = fields[1]
        .parse()
        .map_err(|_| bad(format!("bad age '{}'", fields[1])))?;
    let record = match kind {
        ManifestKind::Raw => {
            let coords = &fields[2..6];
            let bbox = if coords.iter().all(|c| c.is_empty()) {
                None
            } else {
                let mut vals = [0usize; 4];
                for (v, raw) in vals.iter_mut().zip(coords) {
                    *v = raw
                        .parse()
                        .map_err(|_| bad(format!("bad bounding box coordinate '{raw}'")))?;
                }
                Some(BBox { x0: vals[0], y0: vals[1], x1: vals[2], y1: vals[3] })
            };
            SampleRecord {
                path: fields[0].to_string(),
                age,
                bbox,
                class: None,
                source: fields[6].to_string(),
            }
        }
        ManifestKind::Processed => SampleRecord {
            path: fields[0].to_string(),
            age,
            bbox: None,
            class: Some(
                fields[2]
                    .parse()
                    .map_err(|_| bad(format!("bad class index '{}'", fields[2])))?,
            ),
            source: fields[3].to_string(),
        },
    };
    record.validate(kind).map_err(|e| bad(e.to_string()))?;
    Ok(record)
}
