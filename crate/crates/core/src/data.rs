//! Stroke-dataset ingestion and preprocessing.
//!
//! The pipeline is: parse the CSV, drop `gender = Other`, split 80/20 with
//! stratification, fit imputation and scaling on the training side only,
//! encode into 15 numeric columns, then slice the training matrix into
//! contiguous client partitions.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Header of the public stroke CSV, without the optional leading `id`.
pub const CSV_COLUMNS: [&str; 11] = [
    "gender",
    "age",
    "hypertension",
    "heart_disease",
    "ever_married",
    "work_type",
    "Residence_type",
    "avg_glucose_level",
    "bmi",
    "smoking_status",
    "stroke",
];

/// Missing-value marker used by the `bmi` column.
pub const MISSING_MARKER: &str = "N/A";

/// The encoded column layout. Each categorical field drops its
/// alphabetically first value as the reference level.
pub const FEATURE_COLUMNS: [&str; 15] = [
    "age",
    "avg_glucose_level",
    "bmi",
    "hypertension",
    "heart_disease",
    "gender_Male",
    "ever_married_Yes",
    "Residence_type_Urban",
    "work_type_Never_worked",
    "work_type_Private",
    "work_type_Self-employed",
    "work_type_children",
    "smoking_status_formerly_smoked",
    "smoking_status_never_smoked",
    "smoking_status_smokes",
];

pub const LABEL_COLUMN: &str = "stroke";

macro_rules! vocabulary {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            /// Vocabulary in sorted (reference-first) order.
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s { $($text => Some($name::$variant),)+ _ => None }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

vocabulary!(Gender {
    Female => "Female",
    Male => "Male",
    Other => "Other",
});

vocabulary!(WorkType {
    GovtJob => "Govt_job",
    NeverWorked => "Never_worked",
    Private => "Private",
    SelfEmployed => "Self-employed",
    Children => "children",
});

vocabulary!(ResidenceType {
    Rural => "Rural",
    Urban => "Urban",
});

vocabulary!(SmokingStatus {
    Unknown => "Unknown",
    FormerlySmoked => "formerly smoked",
    NeverSmoked => "never smoked",
    Smokes => "smokes",
});

/// One patient row of the stroke dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub gender: Gender,
    pub age: f64,
    pub hypertension: bool,
    pub heart_disease: bool,
    pub ever_married: bool,
    pub work_type: WorkType,
    pub residence_type: ResidenceType,
    pub avg_glucose_level: f64,
    pub bmi: Option<f64>,
    pub smoking_status: SmokingStatus,
    pub stroke: bool,
}

/// Reads the stroke CSV from disk.
///
/// Row numbers in errors are 1-based data rows (the header is not counted).
pub fn parse_csv(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, &path.display().to_string())
}

pub fn read_records<R: Read>(reader: R, source: &str) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema {
            path: source.into(),
            message: format!("unreadable header: {e}"),
        })?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let skip = match names.first() {
        Some(&"id") => 1,
        _ => 0,
    };
    if names.len() != CSV_COLUMNS.len() + skip || names[skip..] != CSV_COLUMNS {
        let missing: Vec<&str> = CSV_COLUMNS
            .iter()
            .copied()
            .filter(|c| !names.contains(c))
            .collect();
        return Err(Error::Schema {
            path: source.into(),
            message: if missing.is_empty() {
                format!(
                    "header must be `{}`, found `{}`",
                    CSV_COLUMNS.join(","),
                    names.join(",")
                )
            } else {
                format!("missing column(s): {}", missing.join(", "))
            },
        });
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Record {
            path: source.into(),
            row: row_no,
            column: "*".into(),
            message: e.to_string(),
        })?;
        let field = |c: usize| row.get(skip + c).unwrap_or("");
        let err = |c: usize, message: String| Error::Record {
            path: source.into(),
            row: row_no,
            column: CSV_COLUMNS[c].into(),
            message,
        };
        let positive = |c: usize| -> Result<f64> {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| err(c, format!("`{}` is not a number", field(c))))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(err(c, format!("value {v} must be positive")));
            }
            Ok(v)
        };
        let flag = |c: usize| -> Result<bool> {
            match field(c) {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(err(c, format!("expected 0 or 1, found `{other}`"))),
            }
        };
        macro_rules! vocab {
            ($ty:ty, $c:expr) => {{
                let s = field($c);
                <$ty>::parse(s).ok_or_else(|| err($c, format!("unknown category `{s}`")))?
            }};
        }

        let bmi = match field(8) {
            MISSING_MARKER => None,
            _ => Some(positive(8)?),
        };
        let ever_married = match field(4) {
            "Yes" => true,
            "No" => false,
            other => return Err(err(4, format!("unknown category `{other}`"))),
        };
        records.push(RawRecord {
            gender: vocab!(Gender, 0),
            age: positive(1)?,
            hypertension: flag(2)?,
            heart_disease: flag(3)?,
            ever_married,
            work_type: vocab!(WorkType, 5),
            residence_type: vocab!(ResidenceType, 6),
            avg_glucose_level: positive(7)?,
            bmi,
            smoking_status: vocab!(SmokingStatus, 9),
            stroke: flag(10)?,
        });
    }
    Ok(records)
}

/// Writes records in the public file's layout, with a leading `id` column.
pub fn write_records_csv(records: &[RawRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "id,{}", CSV_COLUMNS.join(",")).map_err(io)?;
    for (i, r) in records.iter().enumerate() {
        let bmi = r.bmi.map_or_else(|| MISSING_MARKER.to_string(), |b| b.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            i + 1,
            r.gender,
            r.age,
            u8::from(r.hypertension),
            u8::from(r.heart_disease),
            if r.ever_married { "Yes" } else { "No" },
            r.work_type,
            r.residence_type,
            r.avg_glucose_level,
            bmi,
            r.smoking_status,
            u8::from(r.stroke),
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Removes `gender = Other` rows, which have no column in the encoding.
pub fn drop_other_gender(records: Vec<RawRecord>) -> Vec<RawRecord> {
    records
        .into_iter()
        .filter(|r| r.gender != Gender::Other)
        .collect()
}

/// Stratified train/test index split.
///
/// The test side gets `floor(n * test_fraction)` rows, shared between the
/// classes in proportion to their sizes. Both sides come back in a seeded
/// shuffled order.
pub fn stratified_split_indices(
    labels: &[bool],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = labels.len();
    let mut positives: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let mut negatives: Vec<usize> = (0..n).filter(|&i| !labels[i]).collect();
    if positives.len() < 2 {
        return Err(Error::Data(format!(
            "stratified split needs at least 2 positive records, found {}",
            positives.len()
        )));
    }
    let n_test = (n as f64 * test_fraction).floor() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::Data(format!(
            "test fraction {test_fraction} leaves an empty side for {n} records"
        )));
    }
    let pos_test = ((positives.len() * n_test) as f64 / n as f64).round() as usize;
    let pos_test = pos_test.min(positives.len()).min(n_test);
    let neg_test = (n_test - pos_test).min(negatives.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let mut test: Vec<usize> = positives[..pos_test]
        .iter()
        .chain(&negatives[..neg_test])
        .copied()
        .collect();
    let mut train: Vec<usize> = positives[pos_test..]
        .iter()
        .chain(&negatives[neg_test..])
        .copied()
        .collect();
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

pub fn stratified_split(
    records: &[RawRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<RawRecord>, Vec<RawRecord>)> {
    let labels: Vec<bool> = records.iter().map(|r| r.stroke).collect();
    let (train, test) = stratified_split_indices(&labels, test_fraction, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect();
    Ok((pick(&train), pick(&test)))
}

/// One categorical field's vocabulary in column order, reference first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategoryOrdering {
    pub field: &'static str,
    pub values: &'static [&'static str],
}

pub const CATEGORY_ORDERINGS: [CategoryOrdering; 5] = [
    CategoryOrdering {
        field: "gender",
        values: &["Female", "Male"],
    },
    CategoryOrdering {
        field: "ever_married",
        values: &["No", "Yes"],
    },
    CategoryOrdering {
        field: "Residence_type",
        values: &["Rural", "Urban"],
    },
    CategoryOrdering {
        field: "work_type",
        values: &["Govt_job", "Never_worked", "Private", "Self-employed", "children"],
    },
    CategoryOrdering {
        field: "smoking_status",
        values: &["Unknown", "formerly smoked", "never smoked", "smokes"],
    },
];

/// Statistics learned from the training split: the bmi imputation value and
/// the z-score parameters for (age, avg_glucose_level, bmi).
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessStats {
    pub bmi_mean: f64,
    pub scaler_means: [f64; 3],
    pub scaler_stds: [f64; 3],
    pub category_orderings: &'static [CategoryOrdering],
}

fn continuous(r: &RawRecord, bmi_fill: f64) -> [f64; 3] {
    [r.age, r.avg_glucose_level, r.bmi.unwrap_or(bmi_fill)]
}

pub fn fit_preprocessor(train: &[RawRecord]) -> Result<PreprocessStats> {
    if train.is_empty() {
        return Err(Error::Data("cannot fit preprocessing on zero records".into()));
    }
    let present: Vec<f64> = train.iter().filter_map(|r| r.bmi).collect();
    if present.is_empty() {
        return Err(Error::Data("every bmi value is missing".into()));
    }
    let bmi_mean = present.iter().sum::<f64>() / present.len() as f64;

    let n = train.len() as f64;
    let mut means = [0.0; 3];
    for r in train {
        for (m, v) in means.iter_mut().zip(continuous(r, bmi_mean)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = [0.0; 3];
    for r in train {
        for ((s, v), m) in stds.iter_mut().zip(continuous(r, bmi_mean)).zip(means) {
            *s += (v - m) * (v - m);
        }
    }
    for (i, s) in stds.iter_mut().enumerate() {
        *s = (*s / n).sqrt();
        if !(*s > 1e-12 * means[i].abs().max(1.0)) {
            return Err(Error::Data(format!(
                "column `{}` has zero variance in the training data",
                FEATURE_COLUMNS[i]
            )));
        }
    }
    Ok(PreprocessStats {
        bmi_mean,
        scaler_means: means,
        scaler_stds: stds,
        category_orderings: &CATEGORY_ORDERINGS,
    })
}

/// Encoded features with the fixed [`FEATURE_COLUMNS`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Matrix,
}

impl FeatureMatrix {
    pub fn column_names(&self) -> &'static [&'static str] {
        &FEATURE_COLUMNS
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn encode(r: &RawRecord, stats: &PreprocessStats) -> Result<[f64; 15]> {
    let gender_male = match r.gender {
        Gender::Male => 1.0,
        Gender::Female => 0.0,
        Gender::Other => {
            return Err(Error::Data(
                "gender `Other` has no encoded column; drop those records first".into(),
            ))
        }
    };
    let c = continuous(r, stats.bmi_mean);
    let z = |i: usize| (c[i] - stats.scaler_means[i]) / stats.scaler_stds[i];
    Ok([
        z(0),
        z(1),
        z(2),
        indicator(r.hypertension),
        indicator(r.heart_disease),
        gender_male,
        indicator(r.ever_married),
        indicator(r.residence_type == ResidenceType::Urban),
        indicator(r.work_type == WorkType::NeverWorked),
        indicator(r.work_type == WorkType::Private),
        indicator(r.work_type == WorkType::SelfEmployed),
        indicator(r.work_type == WorkType::Children),
        indicator(r.smoking_status == SmokingStatus::FormerlySmoked),
        indicator(r.smoking_status == SmokingStatus::NeverSmoked),
        indicator(r.smoking_status == SmokingStatus::Smokes),
    ])
}

/// Applies fitted statistics. Never re-estimates anything from `records`.
pub fn transform(
    records: &[RawRecord],
    stats: &PreprocessStats,
) -> Result<(FeatureMatrix, Vec<f64>)> {
    let mut data = Vec::with_capacity(records.len() * FEATURE_COLUMNS.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        data.extend_from_slice(&encode(r, stats)?);
        labels.push(indicator(r.stroke));
    }
    let rows = Matrix::new(records.len(), FEATURE_COLUMNS.len(), data)?;
    Ok((FeatureMatrix { rows }, labels))
}

/// Dumps an encoded matrix as CSV: the 15 feature columns plus `stroke`.
pub fn write_feature_dump(
    features: &FeatureMatrix,
    labels: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if labels.len() != features.rows.rows() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} labels",
            features.rows.rows(),
            labels.len()
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{},{LABEL_COLUMN}", FEATURE_COLUMNS.join(",")).map_err(io)?;
    for (row, y) in features.rows.iter_rows().zip(labels) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", cells.join(","), *y as u8).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One client's local dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    pub client_id: usize,
    pub features: Matrix,
    pub labels: Vec<f64>,
    pub n_samples: usize,
}

impl ClientPartition {
    pub fn new(client_id: usize, features: Matrix, labels: Vec<f64>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "client {client_id}: {} rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self {
            client_id,
            n_samples: labels.len(),
            features,
            labels,
        })
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y > 0.5).count()
    }
}

/// Contiguous slices: the first `num_clients - 1` clients get
/// `floor(n / num_clients)` rows and the last takes the remainder.
pub fn partition_clients(
    features: &Matrix,
    labels: &[f64],
    num_clients: usize,
) -> Result<Vec<ClientPartition>> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} rows vs {} labels", labels.len())));
    }
    if num_clients == 0 || n < num_clients {
        return Err(Error::Config(format!(
            "cannot split {n} rows across {num_clients} clients"
        )));
    }
    let per_client = n / num_clients;
    (0..num_clients)
        .map(|i| {
            let start = i * per_client;
            let end = if i + 1 == num_clients { n } else { start + per_client };
            let idx: Vec<usize> = (start..end).collect();
            ClientPartition::new(i, features.select_rows(&idx), labels[start..end].to_vec())
        })
        .collect()
}

/// Seeded row permutation, for callers that want partitions drawn from a
/// shuffled training matrix.
pub fn shuffle_rows(features: &Matrix, labels: &[f64], seed: u64) -> (Matrix, Vec<f64>) {
    let mut idx: Vec<usize> = (0..features.rows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (
        features.select_rows(&idx),
        idx.iter().map(|&i| labels[i]).collect(),
    )
}

/// Schema-valid synthetic stand-in for the stroke file.
///
/// Continuous fields are class-conditional Gaussians; positives are shifted
/// up by one standard deviation in age and glucose. Categorical and binary
/// fields are uniform and carry no signal. About 4% of bmi values are
/// missing. Gender is drawn from {Female, Male} only.
pub fn synth_dataset(n: usize, positive_rate: f64, seed: u64) -> Result<Vec<RawRecord>> {
    if !(positive_rate > 0.0 && positive_rate < 1.0) {
        return Err(Error::Config(format!(
            "positive rate must lie in (0, 1), got {positive_rate}"
        )));
    }
    let n_pos = (n as f64 * positive_rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    labels.shuffle(&mut rng);

    const AGE: (f64, f64) = (43.0, 22.0);
    const GLUCOSE: (f64, f64) = (106.0, 45.0);
    const BMI: (f64, f64) = (28.9, 7.8);
    let normal = |(m, s): (f64, f64)| Normal::new(m, s).expect("valid normal");
    let shifted = |(m, s): (f64, f64)| Normal::new(m + s, s).expect("valid normal");
    let (age_neg, age_pos) = (normal(AGE), shifted(AGE));
    let (glu_neg, glu_pos) = (normal(GLUCOSE), shifted(GLUCOSE));
    let bmi_dist = normal(BMI);

    let records = labels
        .into_iter()
        .map(|stroke| {
            let (age, glucose) = if stroke {
                (age_pos.sample(&mut rng), glu_pos.sample(&mut rng))
            } else {
                (age_neg.sample(&mut rng), glu_neg.sample(&mut rng))
            };
            let bmi = bmi_dist.sample(&mut rng).clamp(10.3, 97.6);
            let bmi_missing = rng.random_bool(0.04);
            let pick = |rng: &mut ChaCha8Rng, n: usize| rng.random_range(0..n);
            RawRecord {
                gender: [Gender::Female, Gender::Male][pick(&mut rng, 2)],
                age: age.clamp(0.08, 82.0),
                hypertension: rng.random_bool(0.5),
                heart_disease: rng.random_bool(0.5),
                ever_married: rng.random_bool(0.5),
                work_type: WorkType::ALL[pick(&mut rng, WorkType::ALL.len())],
                residence_type: ResidenceType::ALL[pick(&mut rng, 2)],
                avg_glucose_level: glucose.clamp(55.0, 272.0),
                bmi: (!bmi_missing).then_some(bmi),
                smoking_status: SmokingStatus::ALL[pick(&mut rng, SmokingStatus::ALL.len())],
                stroke,
            }
        })
        .collect();
    Ok(records)
}
