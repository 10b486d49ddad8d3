//! Feature CSV files, dataset manifests, fold selection, sequence assembly
//! and the synthetic dataset generator.
//!
//! Feature CSV layout: header `seq_id,t,f0,...,f{D-1}` with an optional
//! trailing `class` column holding integer class ids. Rows of one `seq_id`
//! must have strictly increasing `t`; they become consecutive steps.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ec::{ClassId, EcError, EventStream, FluentId, PatternRule, Polarity, RuleSet};
use crate::seed::sub_seed;

/// Number of cross-validation folds.
pub const NUM_FOLDS: u32 = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("empty selection: no files in folds {0:?}")]
    EmptySelection(Vec<u32>),
    #[error("invalid synthetic dataset parameters: {0}")]
    Synth(String),
    #[error(transparent)]
    Stream(#[from] EcError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// One sequence read from a feature CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub seq_id: String,
    pub stream: EventStream,
}

/// Parses feature CSV text. Sequences are returned in order of first
/// appearance.
pub fn parse_features_csv(reader: impl Read) -> Result<Vec<Fragment>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let parse_err = |line: u64, message: String| DataError::Parse { line, message };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "seq_id" || cols[1] != "t" {
        return Err(parse_err(1, "header must start with `seq_id,t,f0`".into()));
    }
    let has_class = cols.last() == Some(&"class");
    let dim = cols.len() - 2 - usize::from(has_class);
    if dim == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }
    for (j, name) in cols[2..2 + dim].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(parse_err(1, format!("expected column `f{j}`, found `{name}`")));
        }
    }

    struct Acc {
        seq_id: String,
        last_t: u64,
        features: Vec<Vec<f64>>,
        classes: Vec<ClassId>,
    }
    let mut seqs: Vec<Acc> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != cols.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", cols.len(), row.len())));
        }
        let seq_id = &row[0];
        let t: u64 = row[1].parse().map_err(|_| parse_err(line, format!("invalid time `{}`", &row[1])))?;
        let mut x = Vec::with_capacity(dim);
        for j in 0..dim {
            let field = &row[2 + j];
            let v: f64 = field.parse().map_err(|_| parse_err(line, format!("invalid number `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{field}`")));
            }
            x.push(v);
        }
        let class = if has_class {
            let field = &row[2 + dim];
            Some(ClassId(field.parse().map_err(|_| parse_err(line, format!("invalid class `{field}`")))?))
        } else {
            None
        };

        let acc = match seqs.iter().position(|s| s.seq_id == seq_id) {
            Some(i) => {
                let acc = &mut seqs[i];
                if t == acc.last_t {
                    return Err(parse_err(line, format!("duplicate (seq_id, t) = ({seq_id}, {t})")));
                }
                if t < acc.last_t {
                    return Err(parse_err(line, format!("time {t} out of order for seq_id {seq_id}")));
                }
                acc
            }
            None => {
                seqs.push(Acc { seq_id: seq_id.to_string(), last_t: t, features: Vec::new(), classes: Vec::new() });
                seqs.last_mut().expect("just pushed")
            }
        };
        acc.last_t = t;
        acc.features.push(x);
        acc.classes.extend(class);
    }

    seqs.into_iter()
        .map(|acc| {
            let gt = has_class.then_some(acc.classes);
            Ok(Fragment { seq_id: acc.seq_id, stream: EventStream::new(acc.features, gt)? })
        })
        .collect()
}

/// Reads a feature CSV file.
pub fn load_features_csv(path: impl AsRef<Path>) -> Result<Vec<Fragment>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_features_csv(BufReader::new(file))
}

/// Writes fragments as feature CSV. A class column is written when every
/// fragment carries ground truth. Values use shortest round-trip formatting.
pub fn write_features_csv(writer: impl Write, fragments: &[Fragment]) -> Result<(), DataError> {
    let Some(first) = fragments.first() else {
        return Err(DataError::Manifest("nothing to write".into()));
    };
    let dim = first.stream.dim();
    let with_class = fragments.iter().all(|f| f.stream.gt_class().is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["seq_id".to_string(), "t".to_string()];
    header.extend((0..dim).map(|j| format!("f{j}")));
    if with_class {
        header.push("class".into());
    }
    let csv_err = |e: csv::Error| DataError::Parse { line: 0, message: e.to_string() };
    wtr.write_record(&header).map_err(csv_err)?;
    for frag in fragments {
        if frag.stream.dim() != dim {
            return Err(DataError::Manifest(format!("fragment {} has dimension {}", frag.seq_id, frag.stream.dim())));
        }
        for (t, x) in frag.stream.features().iter().enumerate() {
            let mut rec = vec![frag.seq_id.clone(), t.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            if let (true, Some(gt)) = (with_class, frag.stream.gt_class()) {
                rec.push(gt[t].0.to_string());
            }
            wtr.write_record(&rec).map_err(csv_err)?;
        }
    }
    wtr.flush().map_err(|source| DataError::Io { path: PathBuf::from("<writer>"), source })?;
    Ok(())
}

pub fn save_features_csv(path: impl AsRef<Path>, fragments: &[Fragment]) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_features_csv(file, fragments)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub id: String,
    pub path: String,
    pub class: usize,
    pub fold: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub dim: usize,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Manifest(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        for f in &self.files {
            if !(1..=NUM_FOLDS).contains(&f.fold) {
                return bad(format!("file {} has fold {} outside 1..={NUM_FOLDS}", f.id, f.fold));
            }
            if f.class >= self.classes.len() {
                return bad(format!("file {} has class {} but only {} classes", f.id, f.class, self.classes.len()));
            }
        }
        for fold in 1..=NUM_FOLDS {
            if !self.files.iter().any(|f| f.fold == fold) {
                return bad(format!("fold {fold} has no files"));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }
}

/// A manifest with every file's features in memory, index-aligned with
/// `manifest.files`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub fragments: Vec<EventStream>,
}

impl Dataset {
    /// Loads a manifest and every feature file it references. Relative paths
    /// resolve against the manifest's directory. A file without a class
    /// column takes the manifest class for all of its steps.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self, DataError> {
        let manifest_path = manifest_path.as_ref();
        let manifest = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut fragments = Vec::with_capacity(manifest.files.len());
        for entry in &manifest.files {
            let path = base.join(&entry.path);
            let frags = load_features_csv(&path)?;
            let frag = match frags.iter().find(|f| f.seq_id == entry.id) {
                Some(f) => f.stream.clone(),
                None if frags.len() == 1 => frags[0].stream.clone(),
                None => {
                    return Err(DataError::Manifest(format!("{}: no sequence `{}`", path.display(), entry.id)));
                }
            };
            if frag.dim() != manifest.dim {
                return Err(DataError::Manifest(format!(
                    "{}: dimension {} but manifest says {}",
                    path.display(),
                    frag.dim(),
                    manifest.dim
                )));
            }
            let frag = match frag.gt_class() {
                Some(_) => frag,
                None => EventStream::new(frag.features().to_vec(), Some(vec![ClassId(entry.class); frag.len()]))?,
            };
            fragments.push(frag);
        }
        Ok(Self { manifest, fragments })
    }

    /// Writes one CSV per file into `dir` plus `manifest.json`; returns the
    /// manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf, DataError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (entry, stream) in self.manifest.files.iter().zip(&self.fragments) {
            let frag = Fragment { seq_id: entry.id.clone(), stream: stream.clone() };
            save_features_csv(dir.join(&entry.path), &[frag])?;
        }
        let path = dir.join("manifest.json");
        self.manifest.save(&path)?;
        Ok(path)
    }

    /// Indices of files whose fold is in `folds`, in manifest order.
    pub fn select(&self, folds: &[u32]) -> Vec<usize> {
        (0..self.manifest.files.len()).filter(|&i| folds.contains(&self.manifest.files[i].fold)).collect()
    }
}

/// Concatenates the files of `folds` in a seeded random order and derives
/// complex-event labels. Windows may span file boundaries.
pub fn assemble_sequence(data: &Dataset, folds: &[u32], seed: u64, rs: &RuleSet) -> Result<EventStream, DataError> {
    let mut order = data.select(folds);
    if order.is_empty() {
        return Err(DataError::EmptySelection(folds.to_vec()));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let parts: Vec<EventStream> = order.iter().map(|&i| data.fragments[i].clone()).collect();
    Ok(EventStream::concat(&parts)?.with_annotation(rs)?)
}

/// Fold ids other than `test_fold`.
pub fn training_folds(test_fold: u32) -> Vec<u32> {
    (1..=NUM_FOLDS).filter(|&f| f != test_fold).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub fluents: usize,
    pub per_class: usize,
    pub dim: usize,
    pub noise: f64,
    /// Each file lasts a uniformly drawn number of steps in `1..=max_duration`.
    pub max_duration: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { classes: 10, fluents: 5, per_class: 40, dim: 16, noise: 0.1, max_duration: 4, seed: 1 }
    }
}

/// Synthetic stand-in for per-second audio embeddings: each file is a short
/// run of one class whose features are the class one-hot in the first
/// `classes` dimensions plus Gaussian noise.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    let bad = |m: &str| Err(DataError::Synth(m.into()));
    if cfg.classes < 2 || cfg.classes < 2 * cfg.fluents {
        return bad("need classes >= 2 * fluents and at least 2 classes");
    }
    if cfg.dim < cfg.classes {
        return bad("dim must be at least the class count");
    }
    if cfg.per_class == 0 || cfg.max_duration == 0 {
        return bad("per_class and max_duration must be positive");
    }
    if cfg.classes * cfg.per_class < NUM_FOLDS as usize {
        return bad("fewer files than folds");
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return bad("noise must be finite and non-negative");
    }
    let normal = Normal::new(0.0, cfg.noise).map_err(|e| DataError::Synth(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "synth"));

    let mut entries = Vec::new();
    let mut fragments = Vec::new();
    for class in 0..cfg.classes {
        for n in 0..cfg.per_class {
            let len = rng.gen_range(1..=cfg.max_duration);
            let features = (0..len)
                .map(|_| (0..cfg.dim).map(|j| f64::from(u8::from(j == class)) + normal.sample(&mut rng)).collect())
                .collect();
            let id = format!("c{class}_{n:04}");
            entries.push(FileEntry { path: format!("{id}.csv"), id, class, fold: 0 });
            fragments.push(EventStream::new(features, Some(vec![ClassId(class); len]))?);
        }
    }
    // Round-robin folds over a shuffled order keeps fold sizes within one.
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.shuffle(&mut rng);
    for (k, &i) in order.iter().enumerate() {
        entries[i].fold = (k as u32 % NUM_FOLDS) + 1;
    }
    let manifest = Manifest { classes: synth_class_names(cfg.classes), dim: cfg.dim, files: entries };
    manifest.validate()?;
    Ok(Dataset { manifest, fragments })
}

pub fn synth_class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| format!("class{c}")).collect()
}

/// Ruleset for synthetic data: fluent `f` starts on two occurrences of class
/// `2f` and ends on two occurrences of class `2f + 1` within `window` steps.
pub fn synth_ruleset(classes: usize, fluents: usize, window: usize) -> RuleSet {
    let rules = (0..fluents)
        .flat_map(|f| {
            [(Polarity::Start, 2 * f), (Polarity::End, 2 * f + 1)].map(|(polarity, c)| PatternRule {
                fluent: FluentId(f),
                polarity,
                trigger_class: ClassId(c),
                count: 2,
                window,
            })
        })
        .collect();
    RuleSet {
        classes: synth_class_names(classes),
        fluents: (0..fluents).map(|f| format!("fluent{f}")).collect(),
        rules,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ec::validate_ruleset;

    #[test]
    fn loads_a_small_file() {
        let text = "seq_id,t,f0,f1,f2,f3\na,0,1,2,3,4\na,1,0.5,0,0,0\na,2,-1e-3,0,0,1\n";
        let frags = parse_features_csv(text.as_bytes()).unwrap();
        assert_eq!(frags.len(), 1);
        assert_eq!(frags[0].stream.len(), 3);
        assert_eq!(frags[0].stream.dim(), 4);
        assert!(frags[0].stream.gt_class().is_none());
    }

    #[test]
    fn class_column_populates_ground_truth() {
        let text = "seq_id,t,f0,f1,class\na,0,1,2,3\na,1,0,0,1\nb,0,1,1,0\n";
        let frags = parse_features_csv(text.as_bytes()).unwrap();
        assert_eq!(frags.len(), 2);
        assert_eq!(frags[0].stream.gt_class().unwrap(), &[ClassId(3), ClassId(1)]);
        assert_eq!(frags[1].seq_id, "b");
    }

    #[test]
    fn short_row_names_its_line() {
        let text = "seq_id,t,f0,f1,f2,f3\na,0,1,2,3,4\na,1,1,2,3\n";
        let err = parse_features_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_non_finite_and_duplicates() {
        let nan = "seq_id,t,f0\na,0,NaN\n";
        assert!(matches!(parse_features_csv(nan.as_bytes()), Err(DataError::Parse { line: 2, .. })));
        let dup = "seq_id,t,f0\na,0,1\na,0,2\n";
        let err = parse_features_csv(dup.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        let back = "seq_id,t,f0\na,3,1\na,1,2\n";
        assert!(parse_features_csv(back.as_bytes()).is_err());
    }

    #[test]
    fn synthetic_folds_are_balanced() {
        let data = synth_generate(&SynthConfig { per_class: 13, ..SynthConfig::default() }).unwrap();
        let sizes: Vec<usize> = (1..=NUM_FOLDS).map(|f| data.select(&[f]).len()).collect();
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(max - min <= 1, "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 130);
    }

    #[test]
    fn noiseless_synthetic_features_are_one_hot() {
        let data = synth_generate(&SynthConfig { noise: 0.0, ..SynthConfig::default() }).unwrap();
        for (entry, frag) in data.manifest.files.iter().zip(&data.fragments) {
            for x in frag.features() {
                for (j, v) in x.iter().enumerate() {
                    assert_eq!(*v, if j == entry.class { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn synthetic_parameter_checks() {
        let bad = SynthConfig { classes: 4, fluents: 3, ..SynthConfig::default() };
        assert!(matches!(synth_generate(&bad), Err(DataError::Synth(_))));
        let bad = SynthConfig { dim: 5, ..SynthConfig::default() };
        assert!(synth_generate(&bad).is_err());
    }

    #[test]
    fn assembly_is_seeded_and_length_preserving() {
        let data = synth_generate(&SynthConfig::default()).unwrap();
        let rs = synth_ruleset(10, 5, 3);
        let folds = training_folds(4);
        let a = assemble_sequence(&data, &folds, 9, &rs).unwrap();
        let b = assemble_sequence(&data, &folds, 9, &rs).unwrap();
        let c = assemble_sequence(&data, &folds, 10, &rs).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let expected: usize = data.select(&folds).iter().map(|&i| data.fragments[i].len()).sum();
        assert_eq!(a.len(), expected);
        assert!(a.events().is_some());
        assert!(matches!(assemble_sequence(&data, &[], 1, &rs), Err(DataError::EmptySelection(_))));
    }

    #[test]
    fn single_file_assembles_in_place() {
        let mut data = synth_generate(&SynthConfig::default()).unwrap();
        let only = data.select(&[1])[0];
        data.manifest.files[only].fold = 1;
        for (i, f) in data.manifest.files.iter_mut().enumerate() {
            if i != only {
                f.fold = 2;
            }
        }
        let s = assemble_sequence(&data, &[1], 5, &synth_ruleset(10, 5, 2)).unwrap();
        assert_eq!(s.features(), data.fragments[only].features());
    }

    #[test]
    fn synth_ruleset_is_valid() {
        assert!(validate_ruleset(&synth_ruleset(10, 5, 4)).is_empty());
    }

    #[test]
    fn manifest_requires_all_folds() {
        let mut data = synth_generate(&SynthConfig::default()).unwrap();
        for f in &mut data.manifest.files {
            if f.fold == 10 {
                f.fold = 9;
            }
        }
        assert!(data.manifest.validate().is_err());
    }
}
