//! Seeded synthetic traffic for tests, demos and desk-scale runs without the
//! public datasets.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::{Error, Result};
use crate::ingest::{FeatureMatrix, RawRecord};

/// Labels arranged in contiguous bursts, as attack episodes appear in flow
/// logs. `anomaly_fraction` is met approximately.
pub fn bursty_labels(n: usize, anomaly_fraction: f64, mean_burst: usize, rng: &mut impl Rng) -> Vec<u8> {
    let mean_burst = mean_burst.max(1) as f64;
    let p = anomaly_fraction.clamp(0.0, 1.0);
    let mean_normal = if p > 0.0 { mean_burst * (1.0 - p) / p } else { f64::INFINITY };
    let mut labels = Vec::with_capacity(n);
    let mut anomalous = rng.random_bool(p);
    while labels.len() < n {
        let mean = if anomalous { mean_burst } else { mean_normal };
        let len = if mean.is_finite() {
            (rng.random_range(0.5..1.5) * mean).round().max(1.0) as usize
        } else {
            n
        };
        labels.extend(std::iter::repeat_n(anomalous as u8, len.min(n - labels.len())));
        anomalous = !anomalous && p > 0.0;
        if p >= 1.0 {
            anomalous = true;
        }
    }
    labels
}

/// Parameters of the two-cluster dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoClusterSpec {
    pub records: usize,
    pub features: usize,
    pub anomaly_fraction: f64,
    /// Offset added to half of the features of anomalous records.
    pub shift: f64,
    pub noise: f64,
    pub mean_burst: usize,
}

impl Default for TwoClusterSpec {
    fn default() -> Self {
        TwoClusterSpec {
            records: 2000,
            features: 10,
            anomaly_fraction: 0.3,
            shift: 0.35,
            noise: 0.04,
            mean_burst: 40,
        }
    }
}

/// Normal records scatter around one centre in `[0, 1]^d`; anomalies around
/// a centre shifted on every other feature. Values are clamped to `[0, 1]`.
pub fn two_clusters(spec: &TwoClusterSpec, seed: u64) -> Result<FeatureMatrix> {
    if spec.features == 0 || spec.records == 0 {
        return Err(Error::InvalidArgument("two-cluster data needs records and features".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let centre: Vec<f64> = (0..spec.features).map(|_| rng.random_range(0.2..0.4)).collect();
    let labels = bursty_labels(spec.records, spec.anomaly_fraction, spec.mean_burst, &mut rng);
    let rows = Array2::from_shape_fn((spec.records, spec.features), |(i, j)| {
        let shift = if labels[i] == 1 && j % 2 == 0 { spec.shift } else { 0.0 };
        (centre[j] + shift + noise.sample(&mut rng)).clamp(0.0, 1.0)
    });
    let columns = (0..spec.features).map(|j| format!("f{j}")).collect();
    FeatureMatrix::new(rows, labels, columns)
}

const ATTACKS: [&str; 6] = ["neptune", "smurf", "satan", "portsweep", "ipsweep", "guess_passwd"];
const NORMAL_SERVICES: [&str; 6] = ["http", "smtp", "ftp_data", "domain_u", "private", "ftp"];
const SCAN_SERVICES: [&str; 6] = ["private", "other", "eco_i", "telnet", "http", "finger"];
/// Every service value of the public files, so one-hot widths match.
const ALL_SERVICES: [&str; 70] = [
    "aol", "auth", "bgp", "courier", "csnet_ns", "ctf", "daytime", "discard", "domain", "domain_u", "echo", "eco_i",
    "ecr_i", "efs", "exec", "finger", "ftp", "ftp_data", "gopher", "harvest", "hostnames", "http", "http_2784",
    "http_443", "http_8001", "imap4", "IRC", "iso_tsap", "klogin", "kshell", "ldap", "link", "login", "mtp", "name",
    "netbios_dgm", "netbios_ns", "netbios_ssn", "netstat", "nnsp", "nntp", "ntp_u", "other", "pm_dump", "pop_2",
    "pop_3", "printer", "private", "red_i", "remote_job", "rje", "shell", "smtp", "sql_net", "ssh", "sunrpc",
    "supdup", "systat", "telnet", "tftp_u", "tim_i", "time", "urh_i", "urp_i", "uucp", "uucp_path", "vmnet",
    "whois", "X11", "Z39_50",
];
const RARE_FLAGS: [&str; 7] = ["S1", "S2", "S3", "OTH", "RSTOS0", "REJ", "RSTO"];

fn fmt(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

/// Rows in the 43-column NSL-KDD layout (41 features, label, difficulty).
///
/// Attack records follow coarse per-family profiles (SYN floods, ICMP
/// floods, probes, password guessing); a share of them mimic normal
/// sessions so the two classes overlap.
pub fn nsl_kdd_like(n: usize, anomaly_fraction: f64, seed: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = bursty_labels(n, anomaly_fraction, 30, &mut rng);
    let bytes: LogNormal<f64> = LogNormal::new(6.0, 1.5).unwrap();
    let mut family = 0usize;
    let mut previous = 0u8;
    labels
        .iter()
        .map(|&label| {
            if label == 1 && previous == 0 {
                family = rng.random_range(0..ATTACKS.len());
            }
            previous = label;
            let stealthy = label == 1 && rng.random_bool(0.12);
            let mimic_attack = label == 0 && rng.random_bool(0.05);
            let profile = if label == 0 && !mimic_attack || stealthy { None } else { Some(family) };
            let mut v = vec![0.0f64; 41];
            let mut proto = "tcp";
            let mut flag = "SF";
            let service;
            let r = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.random_range(lo..hi);
            match profile {
                None => {
                    service = if rng.random_bool(0.2) {
                        ALL_SERVICES[rng.random_range(0..ALL_SERVICES.len())]
                    } else {
                        NORMAL_SERVICES[rng.random_range(0..NORMAL_SERVICES.len())]
                    };
                    if rng.random_bool(0.08) {
                        flag = RARE_FLAGS[rng.random_range(0..RARE_FLAGS.len())];
                    }
                    proto = match service {
                        "domain_u" => "udp",
                        _ if rng.random_bool(0.05) => "icmp",
                        _ => "tcp",
                    };
                    v[0] = if rng.random_bool(0.9) { 0.0 } else { r(&mut rng, 1.0, 3000.0).round() };
                    v[4] = bytes.sample(&mut rng).round();
                    v[5] = (bytes.sample(&mut rng) * 4.0).round();
                    v[11] = rng.random_bool(0.7) as u8 as f64;
                    v[22] = r(&mut rng, 1.0, 30.0).round();
                    v[23] = (v[22] * r(&mut rng, 0.5, 1.0)).round();
                    v[28] = r(&mut rng, 0.8, 1.0);
                    v[29] = r(&mut rng, 0.0, 0.1);
                    v[31] = r(&mut rng, 1.0, 255.0).round();
                    v[32] = r(&mut rng, 10.0, 255.0).round();
                    v[33] = r(&mut rng, 0.5, 1.0);
                    v[34] = r(&mut rng, 0.0, 0.1);
                }
                Some(f) => {
                    service = SCAN_SERVICES[rng.random_range(0..SCAN_SERVICES.len())];
                    match ATTACKS[f] {
                        "neptune" => {
                            flag = "S0";
                            v[22] = r(&mut rng, 100.0, 511.0).round();
                            v[23] = r(&mut rng, 1.0, 30.0).round();
                            v[24] = r(&mut rng, 0.9, 1.0);
                            v[25] = v[24];
                            v[28] = r(&mut rng, 0.0, 0.2);
                            v[37] = r(&mut rng, 0.9, 1.0);
                            v[38] = v[37];
                        }
                        "smurf" => {
                            proto = "icmp";
                            v[4] = [520.0, 1032.0][rng.random_range(0..2)];
                            v[22] = 511.0;
                            v[23] = 511.0;
                            v[28] = 1.0;
                        }
                        "guess_passwd" => {
                            flag = if rng.random_bool(0.5) { "RSTO" } else { "SF" };
                            v[4] = r(&mut rng, 100.0, 130.0).round();
                            v[10] = 1.0;
                            v[22] = r(&mut rng, 1.0, 5.0).round();
                            v[28] = 1.0;
                        }
                        _ => {
                            flag = ["REJ", "RSTR", "SH", "S0"][rng.random_range(0..4)];
                            v[22] = r(&mut rng, 1.0, 200.0).round();
                            v[26] = r(&mut rng, 0.3, 1.0);
                            v[27] = v[26];
                            v[29] = r(&mut rng, 0.3, 1.0);
                            v[30] = r(&mut rng, 0.0, 1.0);
                            v[34] = r(&mut rng, 0.3, 1.0);
                            v[39] = r(&mut rng, 0.3, 1.0);
                        }
                    }
                    v[31] = 255.0;
                    v[32] = r(&mut rng, 1.0, 30.0).round();
                }
            }
            let mut values = Vec::with_capacity(43);
            for (i, x) in v.iter().enumerate() {
                values.push(match i {
                    1 => proto.to_string(),
                    2 => service.to_string(),
                    3 => flag.to_string(),
                    _ => fmt(*x),
                });
            }
            let label_text = if label == 1 { ATTACKS[family] } else { "normal" };
            values.push(label_text.to_string());
            values.push(rng.random_range(15..22).to_string());
            RawRecord {
                values,
                label: label_text.to_string(),
            }
        })
        .collect()
}

/// Writes raw records as a header-less CSV.
pub fn write_records(path: impl AsRef<Path>, records: &[RawRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        writeln!(out, "{}", r.values.join(",")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
