//! Loading of KDD-style flow-feature CSV files and the preprocessing chain:
//! cleaning, categorical encoding, optional address anonymization and
//! min-max normalization.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::Read;
use std::net::Ipv4Addr;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Address,
    Label,
    /// Present in the file but not used as a feature (record ids, timestamps,
    /// difficulty scores, secondary label columns).
    Ignore,
}

impl ColumnKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "numeric" | "num" => ColumnKind::Numeric,
            "categorical" | "cat" | "text" => ColumnKind::Categorical,
            "address" | "addr" => ColumnKind::Address,
            "label" => ColumnKind::Label,
            "ignore" | "skip" => ColumnKind::Ignore,
            other => return Err(Error::Schema(format!("unknown column kind {other:?}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Address => "address",
            ColumnKind::Label => "label",
            ColumnKind::Ignore => "ignore",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Column {
            name: name.into(),
            kind,
        }
    }
}

/// Column layout of a dataset plus the categorical vocabularies fitted on
/// the training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSchema {
    pub columns: Vec<Column>,
    pub normal_label: String,
    /// When set, any label outside `known_labels` (and the normal label) is
    /// rejected at load time.
    pub known_labels: Option<BTreeSet<String>>,
    /// Sorted, duplicate-free vocabulary per categorical column index.
    pub vocabularies: BTreeMap<usize, Vec<String>>,
}

const KDD_FEATURES: [(&str, ColumnKind); 41] = {
    use ColumnKind::{Categorical as C, Numeric as N};
    [
        ("duration", N),
        ("protocol_type", C),
        ("service", C),
        ("flag", C),
        ("src_bytes", N),
        ("dst_bytes", N),
        ("land", N),
        ("wrong_fragment", N),
        ("urgent", N),
        ("hot", N),
        ("num_failed_logins", N),
        ("logged_in", N),
        ("num_compromised", N),
        ("root_shell", N),
        ("su_attempted", N),
        ("num_root", N),
        ("num_file_creations", N),
        ("num_shells", N),
        ("num_access_files", N),
        ("num_outbound_cmds", N),
        ("is_host_login", N),
        ("is_guest_login", N),
        ("count", N),
        ("srv_count", N),
        ("serror_rate", N),
        ("srv_serror_rate", N),
        ("rerror_rate", N),
        ("srv_rerror_rate", N),
        ("same_srv_rate", N),
        ("diff_srv_rate", N),
        ("srv_diff_host_rate", N),
        ("dst_host_count", N),
        ("dst_host_srv_count", N),
        ("dst_host_same_srv_rate", N),
        ("dst_host_diff_srv_rate", N),
        ("dst_host_same_src_port_rate", N),
        ("dst_host_srv_diff_host_rate", N),
        ("dst_host_serror_rate", N),
        ("dst_host_srv_serror_rate", N),
        ("dst_host_rerror_rate", N),
        ("dst_host_srv_rerror_rate", N),
    ]
};

const UNSW_COLUMNS: [(&str, ColumnKind); 49] = {
    use ColumnKind::{Address as A, Categorical as C, Ignore as I, Label as L, Numeric as N};
    [
        ("srcip", A),
        ("sport", N),
        ("dstip", A),
        ("dsport", N),
        ("proto", C),
        ("state", C),
        ("dur", N),
        ("sbytes", N),
        ("dbytes", N),
        ("sttl", N),
        ("dttl", N),
        ("sloss", N),
        ("dloss", N),
        ("service", C),
        ("Sload", N),
        ("Dload", N),
        ("Spkts", N),
        ("Dpkts", N),
        ("swin", N),
        ("dwin", N),
        ("stcpb", N),
        ("dtcpb", N),
        ("smeansz", N),
        ("dmeansz", N),
        ("trans_depth", N),
        ("res_bdy_len", N),
        ("Sjit", N),
        ("Djit", N),
        ("Stime", I),
        ("Ltime", I),
        ("Sintpkt", N),
        ("Dintpkt", N),
        ("tcprtt", N),
        ("synack", N),
        ("ackdat", N),
        ("is_sm_ips_ports", N),
        ("ct_state_ttl", N),
        ("ct_flw_http_mthd", N),
        ("is_ftp_login", N),
        ("ct_ftp_cmd", N),
        ("ct_srv_src", N),
        ("ct_srv_dst", N),
        ("ct_dst_ltm", N),
        ("ct_src_ltm", N),
        ("ct_src_dport_ltm", N),
        ("ct_dst_sport_ltm", N),
        ("ct_dst_src_ltm", N),
        ("attack_cat", I),
        ("Label", L),
    ]
};

const CIC_COLUMNS: [&str; 80] = [
    "Dst Port", "Protocol", "Timestamp", "Flow Duration", "Tot Fwd Pkts", "Tot Bwd Pkts",
    "TotLen Fwd Pkts", "TotLen Bwd Pkts", "Fwd Pkt Len Max", "Fwd Pkt Len Min",
    "Fwd Pkt Len Mean", "Fwd Pkt Len Std", "Bwd Pkt Len Max", "Bwd Pkt Len Min",
    "Bwd Pkt Len Mean", "Bwd Pkt Len Std", "Flow Byts/s", "Flow Pkts/s", "Flow IAT Mean",
    "Flow IAT Std", "Flow IAT Max", "Flow IAT Min", "Fwd IAT Tot", "Fwd IAT Mean",
    "Fwd IAT Std", "Fwd IAT Max", "Fwd IAT Min", "Bwd IAT Tot", "Bwd IAT Mean",
    "Bwd IAT Std", "Bwd IAT Max", "Bwd IAT Min", "Fwd PSH Flags", "Bwd PSH Flags",
    "Fwd URG Flags", "Bwd URG Flags", "Fwd Header Len", "Bwd Header Len", "Fwd Pkts/s",
    "Bwd Pkts/s", "Pkt Len Min", "Pkt Len Max", "Pkt Len Mean", "Pkt Len Std", "Pkt Len Var",
    "FIN Flag Cnt", "SYN Flag Cnt", "RST Flag Cnt", "PSH Flag Cnt", "ACK Flag Cnt",
    "URG Flag Cnt", "CWE Flag Count", "ECE Flag Cnt", "Down/Up Ratio", "Pkt Size Avg",
    "Fwd Seg Size Avg", "Bwd Seg Size Avg", "Fwd Byts/b Avg", "Fwd Pkts/b Avg",
    "Fwd Blk Rate Avg", "Bwd Byts/b Avg", "Bwd Pkts/b Avg", "Bwd Blk Rate Avg",
    "Subflow Fwd Pkts", "Subflow Fwd Byts", "Subflow Bwd Pkts", "Subflow Bwd Byts",
    "Init Fwd Win Byts", "Init Bwd Win Byts", "Fwd Act Data Pkts", "Fwd Seg Size Min",
    "Active Mean", "Active Std", "Active Max", "Active Min", "Idle Mean", "Idle Std",
    "Idle Max", "Idle Min", "Label",
];

pub const SCHEMA_PRESETS: [&str; 4] = ["nsl-kdd", "kdd99", "unsw-nb15", "cic-ids2018"];

impl DatasetSchema {
    pub fn new(columns: Vec<Column>, normal_label: impl Into<String>) -> Result<Self> {
        let labels = columns.iter().filter(|c| c.kind == ColumnKind::Label).count();
        if labels != 1 {
            return Err(Error::Schema(format!(
                "schema must have exactly one label column, found {labels}"
            )));
        }
        Ok(DatasetSchema {
            columns,
            normal_label: normal_label.into(),
            known_labels: None,
            vocabularies: BTreeMap::new(),
        })
    }

    /// NSL-KDD: 41 features, the label and the trailing difficulty score.
    pub fn nsl_kdd() -> Self {
        let mut columns: Vec<Column> = KDD_FEATURES.iter().map(|&(n, k)| Column::new(n, k)).collect();
        columns.push(Column::new("label", ColumnKind::Label));
        columns.push(Column::new("difficulty", ColumnKind::Ignore));
        Self::new(columns, "normal").expect("preset is valid")
    }

    /// KDD Cup 99: 41 features and the label (`normal.` for benign traffic).
    pub fn kdd99() -> Self {
        let mut columns: Vec<Column> = KDD_FEATURES.iter().map(|&(n, k)| Column::new(n, k)).collect();
        columns.push(Column::new("label", ColumnKind::Label));
        Self::new(columns, "normal.").expect("preset is valid")
    }

    /// UNSW-NB15 raw 49-column layout with the binary `Label` column.
    pub fn unsw_nb15() -> Self {
        let columns = UNSW_COLUMNS.iter().map(|&(n, k)| Column::new(n, k)).collect();
        Self::new(columns, "0").expect("preset is valid")
    }

    /// CSE-CIC-IDS2018 processed flow CSV (79 features plus `Label`).
    pub fn cic_ids2018() -> Self {
        let columns = CIC_COLUMNS
            .iter()
            .map(|&name| {
                let kind = match name {
                    "Label" => ColumnKind::Label,
                    "Timestamp" => ColumnKind::Ignore,
                    "Protocol" => ColumnKind::Categorical,
                    _ => ColumnKind::Numeric,
                };
                Column::new(name, kind)
            })
            .collect();
        Self::new(columns, "Benign").expect("preset is valid")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "nsl-kdd" | "nslkdd" => Ok(Self::nsl_kdd()),
            "kdd99" | "kddcup99" => Ok(Self::kdd99()),
            "unsw-nb15" | "unsw" => Ok(Self::unsw_nb15()),
            "cic-ids2018" | "cicids2018" => Ok(Self::cic_ids2018()),
            other => Err(Error::Schema(format!(
                "unknown schema preset {other:?} (available: {})",
                SCHEMA_PRESETS.join(", ")
            ))),
        }
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn label_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.kind == ColumnKind::Label)
            .expect("validated at construction")
    }

    /// Number of raw feature columns (everything except label and ignored).
    pub fn feature_count(&self) -> usize {
        self.columns
            .iter()
            .filter(|c| !matches!(c.kind, ColumnKind::Label | ColumnKind::Ignore))
            .count()
    }

    fn indices_of(&self, kind: ColumnKind) -> impl Iterator<Item = usize> + '_ {
        self.columns
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.kind == kind)
            .map(|(i, _)| i)
    }

    pub fn is_fitted(&self) -> bool {
        self.indices_of(ColumnKind::Categorical)
            .all(|i| self.vocabularies.contains_key(&i))
    }

    /// Width of the encoded matrix: numeric columns plus one slot per
    /// vocabulary entry of every categorical column.
    pub fn encoded_width(&self) -> usize {
        self.columns
            .iter()
            .enumerate()
            .map(|(i, c)| match c.kind {
                ColumnKind::Numeric => 1,
                ColumnKind::Categorical => self.vocabularies.get(&i).map_or(0, Vec::len),
                _ => 0,
            })
            .sum()
    }

    pub fn is_anomaly(&self, label: &str) -> bool {
        label.trim() != self.normal_label
    }
}

/// One CSV row as read from disk.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawRecord {
    pub values: Vec<String>,
    pub label: String,
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    let v = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()? as f64
    } else {
        s.parse::<f64>().ok()?
    };
    v.is_finite().then_some(v)
}

fn looks_like_header(row: &[String], schema: &DatasetSchema) -> bool {
    let numeric: Vec<usize> = schema.indices_of(ColumnKind::Numeric).collect();
    if numeric.is_empty() {
        let li = schema.label_index();
        return row[li].trim().eq_ignore_ascii_case(&schema.columns[li].name);
    }
    numeric.iter().all(|&i| parse_number(&row[i]).is_none())
}

/// Reads records from any CSV source. Row numbers in errors are 1-based
/// line numbers of the input.
pub fn read_records<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Vec<RawRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let label_index = schema.label_index();
    let mut records = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row = row?;
        let line = i + 1;
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != schema.width() {
            return Err(Error::MalformedRow {
                row: line,
                message: format!("expected {} columns, found {}", schema.width(), row.len()),
            });
        }
        let values: Vec<String> = row.iter().map(str::to_string).collect();
        if i == 0 && looks_like_header(&values, schema) {
            continue;
        }
        let label = values[label_index].clone();
        if let Some(known) = &schema.known_labels {
            if label != schema.normal_label && !known.contains(&label) {
                return Err(Error::UnknownLabel { row: line, value: label });
            }
        }
        records.push(RawRecord { values, label });
    }
    Ok(records)
}

/// Loads a dataset file in file order.
pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, schema)
}

fn is_missing(value: &str) -> bool {
    let v = value.trim();
    v.is_empty()
        || v == "?"
        || v.eq_ignore_ascii_case("nan")
        || v.eq_ignore_ascii_case("inf")
        || v.eq_ignore_ascii_case("-inf")
        || v.eq_ignore_ascii_case("infinity")
        || v.eq_ignore_ascii_case("-infinity")
}

/// Drops exact duplicates (first occurrence kept) and records with missing
/// fields in any used column, preserving order.
pub fn clean(records: Vec<RawRecord>, schema: &DatasetSchema) -> Vec<RawRecord> {
    let used: Vec<usize> = schema
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kind != ColumnKind::Ignore)
        .map(|(i, _)| i)
        .collect();
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| {
            !used
                .iter()
                .any(|&i| r.values.get(i).is_none_or(|v| is_missing(v)))
        })
        .filter(|r| seen.insert(r.clone()))
        .collect()
}

/// Time-ordered numeric records with binary labels (1 = anomaly).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Array2<f64>,
    pub labels: Vec<u8>,
    pub columns: Vec<String>,
    pub norm_stats: Option<NormStats>,
}

impl FeatureMatrix {
    pub fn new(rows: Array2<f64>, labels: Vec<u8>, columns: Vec<String>) -> Result<Self> {
        if rows.nrows() != labels.len() {
            return Err(Error::shape(&[rows.nrows()], &[labels.len()]));
        }
        if columns.len() != rows.ncols() {
            return Err(Error::shape(&[rows.ncols()], &[columns.len()]));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature value".into(),
            });
        }
        Ok(FeatureMatrix {
            rows,
            labels,
            columns,
            norm_stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }

    /// First `n` records (contiguous prefix, temporal order kept).
    pub fn head(&self, n: usize) -> FeatureMatrix {
        let n = n.min(self.len());
        FeatureMatrix {
            rows: self.rows.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            columns: self.columns.clone(),
            norm_stats: self.norm_stats.clone(),
        }
    }

    pub fn class_counts(&self) -> ClassCounts {
        let anomaly = self.labels.iter().filter(|&&l| l == 1).count();
        ClassCounts {
            normal: self.len() - anomaly,
            anomaly,
        }
    }

    /// CSV text with a header row and a trailing `label` column.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.columns.clone();
        header.push("label".into());
        w.write_record(&header).expect("in-memory write");
        for (row, label) in self.rows.outer_iter().zip(&self.labels) {
            let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            fields.push(label.to_string());
            w.write_record(&fields).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Reads a matrix written by [`FeatureMatrix::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.is_empty() {
            return Err(Error::Schema("feature CSV has no header".into()));
        }
        let columns: Vec<String> = header.iter().take(header.len() - 1).map(String::from).collect();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            if rec.len() != header.len() {
                return Err(Error::MalformedRow {
                    row,
                    message: format!("expected {} columns, found {}", header.len(), rec.len()),
                });
            }
            for v in rec.iter().take(columns.len()) {
                data.push(parse_number(v).ok_or_else(|| Error::MalformedRow {
                    row,
                    message: format!("not a finite number: {v:?}"),
                })?);
            }
            labels.push(match rec[columns.len()].trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::UnknownLabel { row, value: other.into() }),
            });
        }
        let rows = Array2::from_shape_vec((labels.len(), columns.len()), data)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        FeatureMatrix::new(rows, labels, columns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub normal: usize,
    pub anomaly: usize,
}

/// Fits sorted vocabularies for every categorical column.
pub fn fit_vocabularies(records: &[RawRecord], schema: &DatasetSchema) -> DatasetSchema {
    let mut fitted = schema.clone();
    fitted.vocabularies = schema
        .indices_of(ColumnKind::Categorical)
        .map(|i| {
            let vocab: BTreeSet<&str> = records.iter().map(|r| r.values[i].as_str()).collect();
            (i, vocab.into_iter().map(String::from).collect())
        })
        .collect();
    fitted
}

/// One-hot encodes categorical columns and passes numeric columns through.
///
/// Vocabularies are fitted from `records` only when `schema` carries none;
/// a value outside the vocabulary encodes to an all-zero block.
pub fn encode_categorical(
    records: &[RawRecord],
    schema: &DatasetSchema,
) -> Result<(FeatureMatrix, DatasetSchema)> {
    let schema = if schema.is_fitted() {
        schema.clone()
    } else {
        fit_vocabularies(records, schema)
    };
    let width = schema.encoded_width();
    let mut names = Vec::with_capacity(width);
    for (i, c) in schema.columns.iter().enumerate() {
        match c.kind {
            ColumnKind::Numeric => names.push(c.name.clone()),
            ColumnKind::Categorical => {
                names.extend(schema.vocabularies[&i].iter().map(|v| format!("{}={v}", c.name)))
            }
            _ => {}
        }
    }
    let mut data = Array2::zeros((records.len(), width));
    let mut labels = Vec::with_capacity(records.len());
    for (r, record) in records.iter().enumerate() {
        let mut col = 0;
        for (i, c) in schema.columns.iter().enumerate() {
            let value = &record.values[i];
            match c.kind {
                ColumnKind::Numeric => {
                    data[[r, col]] = parse_number(value).ok_or_else(|| Error::MalformedRow {
                        row: r + 1,
                        message: format!("column {:?}: not a finite number: {value:?}", c.name),
                    })?;
                    col += 1;
                }
                ColumnKind::Categorical => {
                    let vocab = &schema.vocabularies[&i];
                    if let Ok(pos) = vocab.binary_search(value) {
                        data[[r, col + pos]] = 1.0;
                    }
                    col += vocab.len();
                }
                _ => {}
            }
        }
        labels.push(u8::from(schema.is_anomaly(&record.label)));
    }
    Ok((FeatureMatrix::new(data, labels, names)?, schema))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed Feistel permutation on `2 * half_bits` bits.
fn feistel(value: u64, half_bits: u32, seed: u64) -> u64 {
    let mask = (1u64 << half_bits) - 1;
    let (mut left, mut right) = ((value >> half_bits) & mask, value & mask);
    for round in 0..6u64 {
        let key = splitmix64(seed ^ round.wrapping_mul(0xA24B_AED4_963E_E407));
        let f = splitmix64(right ^ key) & mask;
        (left, right) = (right, left ^ f);
    }
    (left << half_bits) | right
}

fn parse_mac(s: &str) -> Option<u64> {
    let parts: Vec<&str> = s.split([':', '-']).collect();
    if parts.len() != 6 {
        return None;
    }
    parts.iter().try_fold(0u64, |acc, p| {
        (p.len() == 2).then_some(())?;
        Some((acc << 8) | u64::from_str_radix(p, 16).ok()?)
    })
}

/// Deterministic, injective replacement for one address value.
pub fn anonymize_address(value: &str, seed: u64) -> String {
    if let Ok(ip) = value.parse::<Ipv4Addr>() {
        let mapped = feistel(u32::from(ip) as u64, 16, seed) as u32;
        return Ipv4Addr::from(mapped).to_string();
    }
    if let Some(mac) = parse_mac(value) {
        let m = feistel(mac, 24, seed);
        let bytes = m.to_be_bytes();
        return bytes[2..]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<Vec<_>>()
            .join(":");
    }
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(value.as_bytes());
    let digest = hasher.finalize();
    let hex: String = digest[..16].iter().map(|b| format!("{b:02x}")).collect();
    format!("anon-{hex}")
}

/// Replaces every address-column value with a seeded random address.
pub fn anonymize(records: Vec<RawRecord>, schema: &DatasetSchema, seed: u64) -> Vec<RawRecord> {
    let addresses: Vec<usize> = schema.indices_of(ColumnKind::Address).collect();
    if addresses.is_empty() {
        return records;
    }
    records
        .into_iter()
        .map(|mut r| {
            for &i in &addresses {
                r.values[i] = anonymize_address(&r.values[i], seed);
            }
            r
        })
        .collect()
}

/// Per-column `(min, max)` captured on the fitting split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub ranges: Vec<(f64, f64)>,
}

impl NormStats {
    pub fn fit(rows: &Array2<f64>) -> Self {
        let ranges = rows
            .columns()
            .into_iter()
            .map(|c| {
                c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
            })
            .map(|(lo, hi)| if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) })
            .collect();
        NormStats { ranges }
    }
}

/// Min-max scaling into `[0, 1]`. Without `stats` they are fitted on
/// `matrix`; given stats are applied with clamping. Constant columns map to 0.
pub fn normalize(matrix: &FeatureMatrix, stats: Option<&NormStats>) -> Result<(FeatureMatrix, NormStats)> {
    let stats = match stats {
        Some(s) => {
            if s.ranges.len() != matrix.width() {
                return Err(Error::shape(&[s.ranges.len()], &[matrix.width()]));
            }
            s.clone()
        }
        None => NormStats::fit(&matrix.rows),
    };
    let mut rows = matrix.rows.clone();
    for (mut col, &(lo, hi)) in rows.columns_mut().into_iter().zip(&stats.ranges) {
        let span = hi - lo;
        col.mapv_inplace(|v| {
            if span > 0.0 {
                ((v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            }
        });
    }
    let out = FeatureMatrix {
        rows,
        labels: matrix.labels.clone(),
        columns: matrix.columns.clone(),
        norm_stats: Some(stats.clone()),
    };
    Ok((out, stats))
}

/// Fitted preprocessing state reused on every split after the first.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub schema: DatasetSchema,
    pub stats: Option<NormStats>,
    pub anonymize_seed: Option<u64>,
}

/// Record counts through the preprocessing chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PreprocessCounts {
    pub loaded: usize,
    pub cleaned: usize,
}

impl Preprocessor {
    pub fn new(schema: DatasetSchema, anonymize_seed: Option<u64>) -> Self {
        Preprocessor {
            schema,
            stats: None,
            anonymize_seed,
        }
    }

    /// Runs the chain on one split. The first call fits vocabularies and
    /// normalization statistics; later calls reuse them.
    pub fn process(&mut self, records: Vec<RawRecord>) -> Result<(FeatureMatrix, PreprocessCounts)> {
        let loaded = records.len();
        let mut records = clean(records, &self.schema);
        let cleaned = records.len();
        log::info!("clean: {loaded} records in, {cleaned} out");
        if let Some(seed) = self.anonymize_seed {
            records = anonymize(records, &self.schema, seed);
        }
        let (encoded, schema) = encode_categorical(&records, &self.schema)?;
        self.schema = schema;
        let (normalized, stats) = normalize(&encoded, self.stats.as_ref())?;
        self.stats = Some(stats);
        Ok((normalized, PreprocessCounts { loaded, cleaned }))
    }
}
