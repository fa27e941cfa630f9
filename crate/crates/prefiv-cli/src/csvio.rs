//! Dataset CSV ingestion and result serialization.
//!
//! A column spec file (same flat key-value format as configs) names which
//! CSV columns hold the provider, the treatment order (an index column or an
//! ISO date column), the treatment, the outcome, and how the remaining
//! covariate columns split into never-missing and missable. Ingestion
//! re-ranks each provider's records 1..n in treatment order, so files with
//! gaps in their order column (filtered registries) are accepted; missing
//! values are empty fields, never sentinels.

use std::io::Write;
use std::path::Path;

use prefiv::data::{CovariateSchema, PanelDataset, PatientRecord, ProviderBlock};
use prefiv::Error;

use crate::config::{parse_pairs, Pair};

/// How within-provider treatment order is determined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrderRule {
    /// An integer column (values ≥ 1, unique within provider).
    Index(String),
    /// An ISO-8601 date column; ties break by file order.
    Date(String),
}

/// Maps CSV columns onto dataset roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub provider: String,
    pub order: OrderRule,
    pub treatment: String,
    pub outcome: String,
    pub observed: Vec<String>,
    pub missable: Vec<String>,
}

impl ColumnSpec {
    pub fn parse(text: &str) -> Result<ColumnSpec, Error> {
        let pairs = parse_pairs(text)?;
        let mut provider = None;
        let mut order = None;
        let mut date = None;
        let mut treatment = None;
        let mut outcome = None;
        let mut observed = Vec::new();
        let mut missable = Vec::new();
        for Pair { line, key, value } in &pairs {
            let line = *line;
            match key.as_str() {
                "provider" => provider = Some(value.clone()),
                "order" => order = Some(value.clone()),
                "date" => date = Some(value.clone()),
                "treatment" => treatment = Some(value.clone()),
                "outcome" => outcome = Some(value.clone()),
                "covariates.observed" => observed = split_names(value),
                "covariates.missable" => missable = split_names(value),
                _ => {
                    return Err(Error::Config {
                        line: Some(line),
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        let require = |name: &str, v: Option<String>| {
            v.ok_or_else(|| Error::Config {
                line: None,
                message: format!("missing required key `{name}`"),
            })
        };
        let order = match (order, date) {
            (Some(_), Some(_)) => {
                return Err(Error::Config {
                    line: None,
                    message: "set either `order` or `date`, not both".into(),
                })
            }
            (Some(col), None) => OrderRule::Index(col),
            (None, Some(col)) => OrderRule::Date(col),
            (None, None) => {
                return Err(Error::Config {
                    line: None,
                    message: "missing required key `order` (or `date`)".into(),
                })
            }
        };
        let spec = ColumnSpec {
            provider: require("provider", provider)?,
            order,
            treatment: require("treatment", treatment)?,
            outcome: require("outcome", outcome)?,
            observed,
            missable,
        };
        let mut all: Vec<&String> = spec.observed.iter().chain(&spec.missable).collect();
        all.sort();
        if let Some(pair) = all.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config {
                line: None,
                message: format!("covariate {:?} listed twice", pair[0]),
            });
        }
        Ok(spec)
    }
}

fn split_names(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(str::to_string)
        .collect()
}

/// Ingestion bookkeeping for the describe command and the analysis manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub n_rows: usize,
    pub n_providers: usize,
    /// Missing-value count per column, in schema order: outcome first, then
    /// observed covariates (always 0), then missable covariates.
    pub missing_counts: Vec<(String, usize)>,
}

/// Reads a dataset CSV against a column spec. Leading `#` comment lines
/// (digest headers on exported files) are skipped before the CSV header.
pub fn read_dataset(text: &str, spec: &ColumnSpec) -> Result<(PanelDataset, IngestReport), Error> {
    let body = skip_comment_lines(text);
    let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let headers = reader.headers().map_err(Error::Csv)?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            row: None,
            message: format!("column {name:?} not found in header"),
        })
    };
    let provider_col = col(&spec.provider)?;
    let order_col = match &spec.order {
        OrderRule::Index(name) | OrderRule::Date(name) => col(name)?,
    };
    let treatment_col = col(&spec.treatment)?;
    let outcome_col = col(&spec.outcome)?;
    let observed_cols: Vec<usize> =
        spec.observed.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
    let missable_cols: Vec<usize> =
        spec.missable.iter().map(|n| col(n)).collect::<Result<_, _>>()?;

    struct RawRow {
        order_key: OrderKey,
        file_order: usize,
        record: PatientRecord,
    }
    // Providers in first-appearance order; rows per provider in file order.
    let mut provider_ids: Vec<String> = Vec::new();
    let mut rows_by_provider: Vec<Vec<RawRow>> = Vec::new();
    let mut missing_outcome = 0usize;
    let mut missing_by_missable = vec![0usize; missable_cols.len()];

    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(Error::Csv)?;
        let field = |c: usize| record.get(c).unwrap_or("").trim();

        let provider_id = field(provider_col);
        if provider_id.is_empty() {
            return Err(Error::Schema {
                row: Some(row),
                message: format!("empty {} field", spec.provider),
            });
        }
        let order_key = match &spec.order {
            OrderRule::Index(name) => {
                let v: u64 = field(order_col).parse().map_err(|_| Error::Schema {
                    row: Some(row),
                    message: format!("{name} must be an integer, got {:?}", field(order_col)),
                })?;
                if v < 1 {
                    return Err(Error::Schema {
                        row: Some(row),
                        message: format!("{name} must be at least 1, got {v}"),
                    });
                }
                OrderKey::Index(v)
            }
            OrderRule::Date(name) => {
                let raw = field(order_col);
                validate_iso_date(raw).map_err(|message| Error::Schema {
                    row: Some(row),
                    message: format!("{name}: {message}"),
                })?;
                OrderKey::Date(raw.to_string())
            }
        };
        let x = match field(treatment_col) {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(Error::Schema {
                    row: Some(row),
                    message: format!("{} must be 0 or 1, got {other:?}", spec.treatment),
                })
            }
        };
        let y = parse_optional(field(outcome_col), &spec.outcome, row)?;
        if y.is_none() {
            missing_outcome += 1;
        }
        let mut w_obs = Vec::with_capacity(observed_cols.len());
        for (name, &c) in spec.observed.iter().zip(&observed_cols) {
            let raw = field(c);
            if raw.is_empty() {
                return Err(Error::Schema {
                    row: Some(row),
                    message: format!("covariate {name} is declared never-missing but is empty"),
                });
            }
            w_obs.push(parse_number(raw, name, row)?);
        }
        let mut w_miss = Vec::with_capacity(missable_cols.len());
        for (k, (name, &c)) in spec.missable.iter().zip(&missable_cols).enumerate() {
            let v = parse_optional(field(c), name, row)?;
            if v.is_none() {
                missing_by_missable[k] += 1;
            }
            w_miss.push(v);
        }

        let pidx = match provider_ids.iter().position(|p| p == provider_id) {
            Some(idx) => idx,
            None => {
                provider_ids.push(provider_id.to_string());
                rows_by_provider.push(Vec::new());
                provider_ids.len() - 1
            }
        };
        rows_by_provider[pidx].push(RawRow {
            order_key,
            file_order: row,
            record: PatientRecord {
                order_index: 0,
                time_index: 0,
                x,
                y,
                w_obs,
                w_miss,
                true_pp: None,
                true_theta: None,
                u: None,
            },
        });
    }
    if provider_ids.is_empty() {
        return Err(Error::Schema { row: None, message: "no data rows".into() });
    }

    let mut providers = Vec::with_capacity(provider_ids.len());
    for (id, mut rows) in provider_ids.into_iter().zip(rows_by_provider) {
        if let OrderRule::Index(name) = &spec.order {
            let mut keys: Vec<&OrderKey> = rows.iter().map(|r| &r.order_key).collect();
            keys.sort();
            if let Some(pair) = keys.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::Schema {
                    row: None,
                    message: format!("provider {id:?} repeats {name} {}", pair[0]),
                });
            }
        }
        rows.sort_by(|a, b| {
            a.order_key
                .cmp(&b.order_key)
                .then(a.file_order.cmp(&b.file_order))
        });
        let n = rows.len();
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(i, raw)| PatientRecord {
                order_index: (i + 1) as u32,
                time_index: ((12 * (i + 1)).div_ceil(n)) as u32,
                ..raw.record
            })
            .collect();
        providers.push(ProviderBlock { id, records });
    }

    let dataset = PanelDataset {
        providers,
        schema: CovariateSchema {
            observed: spec.observed.clone(),
            missable: spec.missable.clone(),
        },
    };
    let violations = dataset.validate();
    if let Some(v) = violations.first() {
        return Err(Error::Schema {
            row: None,
            message: format!("provider {:?}: {}", v.provider_id, v.message),
        });
    }

    let mut missing_counts = vec![(spec.outcome.clone(), missing_outcome)];
    missing_counts.extend(spec.observed.iter().map(|n| (n.clone(), 0)));
    missing_counts.extend(spec.missable.iter().cloned().zip(missing_by_missable));
    let report = IngestReport {
        n_rows: dataset.n_records(),
        n_providers: dataset.n_providers(),
        missing_counts,
    };
    Ok((dataset, report))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum OrderKey {
    Index(u64),
    Date(String),
}

impl std::fmt::Display for OrderKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OrderKey::Index(v) => write!(f, "{v}"),
            OrderKey::Date(s) => f.write_str(s),
        }
    }
}

fn parse_optional(raw: &str, name: &str, row: usize) -> Result<Option<f64>, Error> {
    if raw.is_empty() {
        return Ok(None);
    }
    parse_number(raw, name, row).map(Some)
}

fn parse_number(raw: &str, name: &str, row: usize) -> Result<f64, Error> {
    let v: f64 = raw.parse().map_err(|_| Error::Schema {
        row: Some(row),
        message: format!("{name} must be a number, got {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Schema {
            row: Some(row),
            message: format!("{name} must be finite, got {raw:?}"),
        });
    }
    Ok(v)
}

/// Strict calendar-date check. Zero-padded ISO-8601 dates also sort
/// correctly as strings, which is what the order rule relies on.
fn validate_iso_date(raw: &str) -> Result<(), String> {
    let bytes = raw.as_bytes();
    let ok_shape = bytes.len() == 10
        && bytes[4] == b'-'
        && bytes[7] == b'-'
        && bytes
            .iter()
            .enumerate()
            .all(|(i, b)| matches!(i, 4 | 7) || b.is_ascii_digit());
    if !ok_shape {
        return Err(format!("expected an ISO-8601 date (YYYY-MM-DD), got {raw:?}"));
    }
    let year: i32 = raw[..4].parse().unwrap();
    let month: u32 = raw[5..7].parse().unwrap();
    let day: u32 = raw[8..10].parse().unwrap();
    let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    let days_in_month = match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if leap => 29,
        2 => 28,
        _ => return Err(format!("month out of range in {raw:?}")),
    };
    if day < 1 || day > days_in_month {
        return Err(format!("day out of range in {raw:?}"));
    }
    Ok(())
}

fn skip_comment_lines(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        match rest.find('\n') {
            Some(pos) => rest = &rest[pos + 1..],
            None => return "",
        }
    }
    rest
}

/// Rounds to 6 significant digits; the shortest round-trip rendering of the
/// rounded value is then stable across platforms.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor();
    let scale = 10f64.powf(5.0 - mag);
    format!("{}", (v * scale).round() / scale)
}

/// Renders a value at full precision (shortest string that parses back to
/// the same bits), for replication-level and dataset files.
pub fn full(v: f64) -> String {
    format!("{v}")
}

/// Creates an output file whose first line pins the run digest, and hands
/// back a CSV writer for the rest.
pub fn create_with_digest(
    path: &Path,
    digest: &str,
) -> Result<csv::Writer<std::fs::File>, Error> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# digest: {digest}")?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes the post-masking dataset as a CSV an analysis run can ingest:
/// truth columns are omitted, missing values become empty fields.
pub fn write_dataset_csv(
    path: &Path,
    digest: &str,
    dataset: &PanelDataset,
) -> Result<(), Error> {
    let mut w = create_with_digest(path, digest)?;
    let mut header = vec!["provider_id".to_string(), "order_index".into(), "x".into(), "y".into()];
    header.extend(dataset.schema.observed.iter().cloned());
    header.extend(dataset.schema.missable.iter().cloned());
    w.write_record(&header).map_err(Error::Csv)?;
    for (block, rec) in dataset.iter_records() {
        let mut row = vec![
            block.id.clone(),
            rec.order_index.to_string(),
            rec.x.to_string(),
            rec.y.map(full).unwrap_or_default(),
        ];
        row.extend(rec.w_obs.iter().map(|&v| full(v)));
        row.extend(rec.w_miss.iter().map(|v| v.map(full).unwrap_or_default()));
        w.write_record(&row).map_err(Error::Csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the column spec matching [`write_dataset_csv`]'s layout.
pub fn write_dataset_spec(path: &Path, digest: &str, schema: &CovariateSchema) -> Result<(), Error> {
    let mut text = format!(
        "# digest: {digest}\nprovider = provider_id\norder = order_index\ntreatment = x\noutcome = y\n"
    );
    if !schema.observed.is_empty() {
        text.push_str(&format!("covariates.observed = {}\n", schema.observed.join(",")));
    }
    if !schema.missable.is_empty() {
        text.push_str(&format!("covariates.missable = {}\n", schema.missable.join(",")));
    }
    std::fs::write(path, text)?;
    Ok(())
}
