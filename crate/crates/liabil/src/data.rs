//! Paired competing-risks records: ingestion, validation, and
//! classification at a horizon τ with IPCW weights.
//!
//! One CSV row per individual; a pair is two rows sharing `pair_id` with
//! member labels 1 and 2. Causes are coded `0` censored, `1` cause of
//! interest, `2` competing event.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::censoring::CensoringModel;
use crate::error::{Error, Result};

/// Twin pair zygosity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zygosity {
    #[serde(rename = "MZ")]
    Mz,
    #[serde(rename = "DZ")]
    Dz,
}

impl Zygosity {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MZ" => Some(Zygosity::Mz),
            "DZ" => Some(Zygosity::Dz),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Zygosity::Mz => "MZ",
            Zygosity::Dz => "DZ",
        }
    }
}

/// Observed event status of one individual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum EventStatus {
    Censored = 0,
    CauseOfInterest = 1,
    Competing = 2,
}

impl EventStatus {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(EventStatus::Censored),
            1 => Some(EventStatus::CauseOfInterest),
            2 => Some(EventStatus::Competing),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// True when the observation time is an actual event time.
    pub fn is_event(self) -> bool {
        self != EventStatus::Censored
    }
}

/// One twin pair's observed data: times, causes, and covariates for the
/// outcome model (`x`) and the censoring model (`z`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub zygosity: Zygosity,
    /// Observation time (event or censoring) per member.
    pub time: [f64; 2],
    pub status: [EventStatus; 2],
    /// Outcome-model covariates per member (without intercept).
    pub x: [Vec<f64>; 2],
    /// Censoring-model covariates per member.
    pub z: [Vec<f64>; 2],
}

impl PairRecord {
    /// Censoring covariates shared by the pair. Administrative censoring
    /// acts on the pair, so a single covariate vector describes it; member
    /// 1's values are used.
    pub fn pair_z(&self) -> &[f64] {
        &self.z[0]
    }
}

/// Column names mapping a CSV file onto [`PairRecord`] fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub pair_id: String,
    pub member: String,
    pub zygosity: String,
    pub time: String,
    pub status: String,
    /// Outcome-model covariate columns.
    pub x_cols: Vec<String>,
    /// Censoring-model covariate columns (may overlap with `x_cols`).
    pub z_cols: Vec<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            pair_id: "pair_id".into(),
            member: "member".into(),
            zygosity: "zygosity".into(),
            time: "time".into(),
            status: "status".into(),
            x_cols: Vec::new(),
            z_cols: Vec::new(),
        }
    }
}

/// Loaded dataset plus the load report.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<PairRecord>,
    /// Pair ids that had exactly one member row and were dropped.
    pub rejected_incomplete: Vec<String>,
}

struct MemberRow {
    row: usize,
    member: u8,
    zygosity: Zygosity,
    time: f64,
    status: EventStatus,
    x: Vec<f64>,
    z: Vec<f64>,
}

/// Load a dataset from a CSV file. See [`ColumnMapping`] for the expected
/// layout; the header row is required.
pub fn load_dataset<P: AsRef<Path>>(path: P, mapping: &ColumnMapping) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    load_dataset_from_reader(file, mapping)
}

pub fn load_dataset_from_reader<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("missing column '{name}' in header")))
    };
    let idx_pair = col(&mapping.pair_id)?;
    let idx_member = col(&mapping.member)?;
    let idx_zyg = col(&mapping.zygosity)?;
    let idx_time = col(&mapping.time)?;
    let idx_status = col(&mapping.status)?;
    let idx_x: Vec<usize> = mapping.x_cols.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let idx_z: Vec<usize> = mapping.z_cols.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let mut by_pair: HashMap<String, Vec<MemberRow>> = HashMap::new();
    let mut order: Vec<String> = Vec::new();

    for (i, record) in csv.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record?;
        let field = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::Parse {
                row,
                message: "row has fewer fields than the header".into(),
            })
        };
        let parse_f64 = |idx: usize, what: &str| -> Result<f64> {
            let raw = field(idx)?;
            raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("cannot parse {what} value '{raw}'"),
            })
        };

        let pair_id = field(idx_pair)?.trim().to_string();
        if pair_id.is_empty() {
            return Err(Error::Parse { row, message: "empty pair_id".into() });
        }
        let member_raw = field(idx_member)?;
        let member: u8 = member_raw.trim().parse().map_err(|_| Error::Parse {
            row,
            message: format!("cannot parse member '{member_raw}'"),
        })?;
        if member != 1 && member != 2 {
            return Err(Error::Parse {
                row,
                message: format!("member must be 1 or 2, got {member}"),
            });
        }
        let zyg_raw = field(idx_zyg)?;
        let zygosity = Zygosity::parse(zyg_raw).ok_or_else(|| Error::Parse {
            row,
            message: format!("unknown zygosity label '{zyg_raw}'"),
        })?;
        let time = parse_f64(idx_time, "time")?;
        if !time.is_finite() || time < 0.0 {
            return Err(Error::Parse {
                row,
                message: format!("time must be finite and nonnegative, got {time}"),
            });
        }
        let status_raw = field(idx_status)?;
        let status_code: i64 = status_raw.trim().parse().map_err(|_| Error::Parse {
            row,
            message: format!("cannot parse status '{status_raw}'"),
        })?;
        let status = EventStatus::from_code(status_code).ok_or_else(|| Error::Parse {
            row,
            message: format!("status must be 0, 1 or 2, got {status_code}"),
        })?;
        let parse_covs = |idxs: &[usize]| -> Result<Vec<f64>> {
            idxs.iter()
                .map(|&idx| {
                    let v = parse_f64(idx, "covariate")?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row,
                            message: "covariate value must be finite".into(),
                        });
                    }
                    Ok(v)
                })
                .collect()
        };
        let x = parse_covs(&idx_x)?;
        let z = parse_covs(&idx_z)?;

        if !by_pair.contains_key(&pair_id) {
            order.push(pair_id.clone());
        }
        by_pair.entry(pair_id).or_default().push(MemberRow {
            row,
            member,
            zygosity,
            time,
            status,
            x,
            z,
        });
    }

    let mut pairs = Vec::new();
    let mut rejected = Vec::new();
    for pair_id in order {
        let mut members = by_pair.remove(&pair_id).unwrap();
        match members.len() {
            1 => {
                rejected.push(pair_id);
                continue;
            }
            2 => {}
            n => {
                return Err(Error::Validation(format!(
                    "pair '{pair_id}' has {n} rows; expected exactly 2"
                )))
            }
        }
        members.sort_by_key(|m| m.member);
        if members[0].member == members[1].member {
            return Err(Error::Validation(format!(
                "pair '{pair_id}' has two rows for member {} (rows {} and {})",
                members[0].member, members[0].row, members[1].row
            )));
        }
        if members[0].zygosity != members[1].zygosity {
            return Err(Error::Validation(format!(
                "pair '{pair_id}' has inconsistent zygosity labels"
            )));
        }
        let [m1, m2] = <[MemberRow; 2]>::try_from(members).ok().unwrap();
        pairs.push(PairRecord {
            pair_id,
            zygosity: m1.zygosity,
            time: [m1.time, m2.time],
            status: [m1.status, m2.status],
            x: [m1.x, m2.x],
            z: [m1.z, m2.z],
        });
    }

    Ok(Dataset { pairs, rejected_incomplete: rejected })
}

/// Write pairs in the standard one-row-per-individual CSV layout.
pub fn write_dataset_csv<W: std::io::Write>(
    pairs: &[PairRecord],
    x_names: &[String],
    z_names: &[String],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "pair_id".to_string(),
        "member".to_string(),
        "zygosity".to_string(),
        "time".to_string(),
        "status".to_string(),
    ];
    header.extend(x_names.iter().cloned());
    header.extend(z_names.iter().cloned());
    w.write_record(&header)?;
    for pair in pairs {
        for k in 0..2 {
            let mut rec = vec![
                pair.pair_id.clone(),
                (k + 1).to_string(),
                pair.zygosity.label().to_string(),
                format!("{:.6}", pair.time[k]),
                pair.status[k].code().to_string(),
            ];
            rec.extend(pair.x[k].iter().map(|v| crate::fmt::sig6(*v)));
            rec.extend(pair.z[k].iter().map(|v| crate::fmt::sig6(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// How a member's τ-status is declared known.
///
/// `CapAtTau` marks a member known when an event was observed or the
/// observation time reaches τ (a subject censored after τ has fully known
/// τ-status), and evaluates the censoring survival at τ-capped times.
/// `StrictPaper` requires an observed event and evaluates at raw times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyMode {
    #[default]
    CapAtTau,
    StrictPaper,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub mode: ClassifyMode,
    /// Optional hard cap on IPCW weights (off by default).
    pub weight_cap: Option<f64>,
}

/// A pair classified at τ: liability outcomes, usability, and IPCW weight.
#[derive(Debug, Clone)]
pub struct ClassifiedPair {
    pub pair_index: usize,
    /// Outcome indicator per member: cause of interest by τ.
    pub y: [bool; 2],
    /// τ-status known per member.
    pub known: [bool; 2],
    pub usable: bool,
    /// IPCW weight; 0 exactly when unusable, ≥ 1 otherwise.
    pub weight: f64,
    /// Censoring survival used in the weight (1 when unusable or unweighted).
    pub gc: f64,
    /// Time the censoring survival was evaluated at: max of the (possibly
    /// τ-capped) member times.
    pub t_star: f64,
}

/// Diagnostics accumulated over a classified cohort.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ClassifySummary {
    pub n_total: usize,
    pub n_usable: usize,
    pub sum_weights: f64,
    pub max_weight: f64,
    /// Pairs whose weight exceeds 100 (censoring survival below 0.01),
    /// indicating a near-violation of weight positivity.
    pub n_weight_above_100: usize,
    /// Pairs whose members carry different censoring covariates; member 1's
    /// are used for the pair weight.
    pub n_z_mismatch: usize,
}

/// Classify one pair at the horizon `tau`. `censoring = None` means
/// Ĝ_c ≡ 1 (every usable pair gets weight 1).
pub fn classify_at_tau(
    pair: &PairRecord,
    pair_index: usize,
    tau: f64,
    censoring: Option<&CensoringModel>,
    opts: &ClassifyOptions,
) -> Result<ClassifiedPair> {
    let y = [
        pair.time[0] <= tau && pair.status[0] == EventStatus::CauseOfInterest,
        pair.time[1] <= tau && pair.status[1] == EventStatus::CauseOfInterest,
    ];
    let known = match opts.mode {
        ClassifyMode::CapAtTau => [
            pair.status[0].is_event() || pair.time[0] >= tau,
            pair.status[1].is_event() || pair.time[1] >= tau,
        ],
        ClassifyMode::StrictPaper => [pair.status[0].is_event(), pair.status[1].is_event()],
    };
    let usable = known[0] && known[1];
    if !usable {
        return Ok(ClassifiedPair {
            pair_index,
            y,
            known,
            usable,
            weight: 0.0,
            gc: 1.0,
            t_star: 0.0,
        });
    }

    let (t1, t2) = match opts.mode {
        ClassifyMode::CapAtTau => (pair.time[0].min(tau), pair.time[1].min(tau)),
        ClassifyMode::StrictPaper => (pair.time[0], pair.time[1]),
    };
    let t_star = t1.max(t2);
    let gc = match censoring {
        None => 1.0,
        Some(model) => model.eval_gc_pair(t1, t2, pair.pair_z(), pair.zygosity)?,
    };
    if gc <= 0.0 {
        return Err(Error::Positivity { pair_id: pair.pair_id.clone(), gc });
    }
    let mut weight = 1.0 / gc;
    if let Some(cap) = opts.weight_cap {
        weight = weight.min(cap);
    }
    Ok(ClassifiedPair { pair_index, y, known, usable, weight, gc, t_star })
}

/// Classify a whole cohort, accumulating diagnostics.
pub fn classify_cohort(
    pairs: &[PairRecord],
    tau: f64,
    censoring: Option<&CensoringModel>,
    opts: &ClassifyOptions,
) -> Result<(Vec<ClassifiedPair>, ClassifySummary)> {
    if !(tau > 0.0) {
        return Err(Error::Validation(format!("tau must be positive, got {tau}")));
    }
    let mut out = Vec::with_capacity(pairs.len());
    let mut summary = ClassifySummary { n_total: pairs.len(), ..Default::default() };
    for (i, pair) in pairs.iter().enumerate() {
        let cp = classify_at_tau(pair, i, tau, censoring, opts)?;
        if cp.usable {
            summary.n_usable += 1;
            summary.sum_weights += cp.weight;
            summary.max_weight = summary.max_weight.max(cp.weight);
            if cp.weight > 100.0 {
                summary.n_weight_above_100 += 1;
            }
        }
        if pair.z[0] != pair.z[1] {
            summary.n_z_mismatch += 1;
        }
        out.push(cp);
    }
    Ok((out, summary))
}

/// Classification used by the "naive" estimator that ignores censoring:
/// every pair is usable with weight 1 and members without an observed
/// cause-of-interest event count as unaffected.
pub fn classify_ignoring_censoring(pairs: &[PairRecord], tau: f64) -> Vec<ClassifiedPair> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| ClassifiedPair {
            pair_index: i,
            y: [
                pair.time[0] <= tau && pair.status[0] == EventStatus::CauseOfInterest,
                pair.time[1] <= tau && pair.status[1] == EventStatus::CauseOfInterest,
            ],
            known: [true, true],
            usable: true,
            weight: 1.0,
            gc: 1.0,
            t_star: pair.time[0].max(pair.time[1]).min(tau),
        })
        .collect()
}
