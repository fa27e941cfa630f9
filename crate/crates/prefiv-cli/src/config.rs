//! Scenario configuration files.
//!
//! The format is flat `key = value` text with dotted keys, one setting per
//! line; blank lines and lines starting with `#` are ignored. Unknown and
//! repeated keys are hard errors so a typo cannot silently fall back to a
//! default. `n_j` and `missingness` take comma lists and expand to the cross
//! product of study cells.

use std::collections::BTreeSet;
use std::str::FromStr;

use prefiv::methods::MethodId;
use prefiv::sim::coefficients::GenCoefficients;
use prefiv::sim::scenario::{Generator, LinkMode, Missingness, ScenarioConfig};
use prefiv::Error;

/// One parsed `key = value` line, with its 1-based line number for
/// diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits flat key-value text into pairs. Structural problems (no `=`, empty
/// key, repeated key) are reported with their line number; key validity is
/// the caller's concern.
pub fn parse_pairs(text: &str) -> Result<Vec<Pair>, Error> {
    let mut pairs: Vec<Pair> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::Config {
                line: Some(line),
                message: format!("expected `key = value`, got {trimmed:?}"),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config { line: Some(line), message: "empty key".into() });
        }
        if !seen.insert(key.clone()) {
            return Err(Error::Config {
                line: Some(line),
                message: format!("key {key:?} was already set"),
            });
        }
        pairs.push(Pair { line, key, value });
    }
    Ok(pairs)
}

/// A parsed simulation config: the scalar settings plus the cell lists.
/// [`SimConfig::cells`] expands it into runnable scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub generator: Generator,
    pub j: usize,
    pub n_j_list: Vec<usize>,
    pub missingness_list: Vec<Missingness>,
    pub reps: usize,
    pub seed: Option<u64>,
    pub link: LinkMode,
    pub target_missing_rate: f64,
    /// None means the full standard method set.
    pub methods: Option<Vec<MethodId>>,
    /// Generator defaults with any `coefficients.*` overrides applied.
    pub coefficients: GenCoefficients,
    /// Dotted names of overridden coefficients, for the run manifest.
    pub overridden: Vec<String>,
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<SimConfig, Error> {
        let pairs = parse_pairs(text)?;
        let generator = {
            let pair = pairs
                .iter()
                .find(|p| p.key == "generator")
                .ok_or_else(|| Error::Config {
                    line: None,
                    message: "missing required key `generator`".into(),
                })?;
            at_line(pair.line, pair.value.parse::<Generator>())?
        };

        let mut config = SimConfig {
            generator,
            j: 100,
            n_j_list: Vec::new(),
            missingness_list: vec![Missingness::None],
            reps: 200,
            seed: None,
            link: LinkMode::Logit,
            target_missing_rate: 0.40,
            methods: None,
            coefficients: GenCoefficients::defaults(generator),
            overridden: Vec::new(),
        };

        for pair in &pairs {
            let Pair { line, key, value } = pair;
            let line = *line;
            match key.as_str() {
                "generator" => {}
                "j" => config.j = parse_at::<usize>(line, key, value)?,
                "n_j" => {
                    config.n_j_list = split_list(value)
                        .map(|v| parse_at::<usize>(line, key, v))
                        .collect::<Result<_, _>>()?;
                }
                "missingness" => {
                    config.missingness_list = split_list(value)
                        .map(|v| at_line(line, v.parse::<Missingness>()))
                        .collect::<Result<_, _>>()?;
                }
                "reps" => config.reps = parse_at::<usize>(line, key, value)?,
                "seed" => config.seed = Some(parse_at::<u64>(line, key, value)?),
                "link" => config.link = at_line(line, value.parse::<LinkMode>())?,
                "target_missing_rate" => {
                    config.target_missing_rate = parse_at::<f64>(line, key, value)?;
                }
                "methods" => config.methods = Some(parse_methods(line, value)?),
                _ => match key.strip_prefix("coefficients.") {
                    Some(path) => {
                        let parsed = parse_at::<f64>(line, key, value)?;
                        let slot = coefficient_slot(&mut config.coefficients, path)
                            .ok_or_else(|| Error::Config {
                                line: Some(line),
                                message: format!("unknown coefficient {path:?}"),
                            })?;
                        *slot = parsed;
                        config.overridden.push(path.to_string());
                    }
                    None => {
                        return Err(Error::Config {
                            line: Some(line),
                            message: format!("unknown key {key:?}"),
                        })
                    }
                },
            }
        }

        if config.n_j_list.is_empty() {
            return Err(Error::Config {
                line: None,
                message: "missing required key `n_j`".into(),
            });
        }
        Ok(config)
    }

    /// Expands the cell lists into one [`ScenarioConfig`] per (n_j,
    /// missingness) combination, in config order. Cells share the master
    /// seed, so arms that differ only in masking draw the same populations.
    pub fn cells(&self, seed: u64) -> Result<Vec<ScenarioConfig>, Error> {
        let mut cells = Vec::new();
        for &n_j in &self.n_j_list {
            for &missingness in &self.missingness_list {
                let cell = ScenarioConfig {
                    generator: self.generator,
                    j: self.j,
                    n_j,
                    missingness,
                    target_missing_rate: self.target_missing_rate,
                    n_reps: self.reps,
                    seed,
                    link: self.link,
                    coefficients: self.coefficients,
                };
                cell.validate()?;
                cells.push(cell);
            }
        }
        Ok(cells)
    }
}

/// Parses a comma list of method names; `all` stands for the standard set.
pub fn parse_methods(line: usize, value: &str) -> Result<Vec<MethodId>, Error> {
    if value == "all" {
        return Ok(MethodId::standard_eleven().to_vec());
    }
    let methods: Vec<MethodId> = split_list(value)
        .map(|v| at_line(line, v.parse::<MethodId>()))
        .collect::<Result<_, _>>()?;
    if methods.is_empty() {
        return Err(Error::Config { line: Some(line), message: "empty method list".into() });
    }
    Ok(methods)
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|v| !v.is_empty())
}

fn parse_at<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, Error>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config {
        line: Some(line),
        message: format!("invalid value for {key}: {e} (got {value:?})"),
    })
}

fn at_line<T>(line: usize, result: Result<T, Error>) -> Result<T, Error> {
    result.map_err(|e| Error::Config { line: Some(line), message: e.to_string() })
}

/// Maps a dotted coefficient path onto its field. Returns None for unknown
/// paths so the caller can report the line.
fn coefficient_slot<'a>(c: &'a mut GenCoefficients, path: &str) -> Option<&'a mut f64> {
    Some(match path {
        "outcome.intercept" => &mut c.outcome.intercept,
        "outcome.treatment_effect" => &mut c.outcome.treatment_effect,
        "outcome.w1" => &mut c.outcome.w1,
        "outcome.w2" => &mut c.outcome.w2,
        "outcome.u" => &mut c.outcome.u,
        "outcome.sd_eps" => &mut c.outcome.sd_eps,
        "treatment_a.intercept" => &mut c.treatment_a.intercept,
        "treatment_a.preference" => &mut c.treatment_a.preference,
        "treatment_a.u" => &mut c.treatment_a.u,
        "treatment_a.w1" => &mut c.treatment_a.w1,
        "treatment_a.w2" => &mut c.treatment_a.w2,
        "treatment_b.intercept" => &mut c.treatment_b.intercept,
        "treatment_b.time" => &mut c.treatment_b.time,
        "treatment_b.u" => &mut c.treatment_b.u,
        "treatment_b.w1" => &mut c.treatment_b.w1,
        "treatment_b.w2" => &mut c.treatment_b.w2,
        "treatment_b.omega.var_intercept" => &mut c.treatment_b.omega.var_intercept,
        "treatment_b.omega.cov" => &mut c.treatment_b.omega.cov,
        "treatment_b.omega.var_slope" => &mut c.treatment_b.omega.var_slope,
        "preference.p_initial_1" => &mut c.preference.p_initial_1,
        "preference.p_switch_0_to_1" => &mut c.preference.p_switch_0_to_1,
        "preference.p_switch_1_to_0" => &mut c.preference.p_switch_1_to_0,
        "preference.switch_window.lo" => &mut c.preference.switch_window.0,
        "preference.switch_window.hi" => &mut c.preference.switch_window.1,
        "selection.intercept" => &mut c.selection.intercept,
        "selection.w1" => &mut c.selection.w1,
        "selection.w2" => &mut c.selection.w2,
        "selection.u" => &mut c.selection.u,
        "selection.y_std" => &mut c.selection.y_std,
        "selection.v" => &mut c.selection.v,
        "selection.v_w1" => &mut c.selection.v_w1,
        "selection.v_w2" => &mut c.selection.v_w2,
        "covariates.sd_provider_mean" => &mut c.covariates.sd_provider_mean,
        "covariates.sd_within" => &mut c.covariates.sd_within,
        _ => return None,
    })
}
