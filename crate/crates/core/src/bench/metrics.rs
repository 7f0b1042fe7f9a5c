//! Metrics CSV ingestion, scoring and plot-data output.
//!
//! One CSV row holds one metric of one method (`group`) together with the
//! base model's value. Every group needs the reserved resource rows
//! `time_s` and `energy_kwh` plus at least one quality row.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::score::{rank_methods, Direction, MetricRecord, OptResult, Quality, ResourceRatios, Scorer, WeightProfile};

pub const HEADER: [&str; 6] = ["group", "metric", "direction", "random_floor", "base_value", "model_value"];
pub const TIME_METRIC: &str = "time_s";
pub const ENERGY_METRIC: &str = "energy_kwh";

/// Base and optimized measurements of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub group: String,
    pub records: Vec<MetricRecord>,
    pub base_time: f64,
    pub model_time: f64,
    pub base_energy: f64,
    pub model_energy: f64,
}

impl MethodMetrics {
    pub fn ratios(&self) -> Result<ResourceRatios> {
        ResourceRatios::from_raw(self.base_time, self.model_time, self.base_energy, self.model_energy)
            .map_err(|e| LabError::domain(format!("{}: {e}", self.group)))
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> LabError {
    LabError::Parse {
        line,
        message: message.into(),
    }
}

struct Partial {
    group: String,
    records: Vec<MetricRecord>,
    time: Option<(f64, f64)>,
    energy: Option<(f64, f64)>,
    first_line: usize,
}

/// Parses and validates a metrics CSV.
pub fn parse_metrics(text: &str) -> Result<Vec<MethodMetrics>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut groups: Vec<Partial> = Vec::new();
    let mut saw_header = false;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if !saw_header {
            if row.iter().ne(HEADER) {
                return Err(parse_err(line, format!("expected header {}", HEADER.join(","))));
            }
            saw_header = true;
            continue;
        }
        if row.len() != HEADER.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", HEADER.len(), row.len())));
        }
        let (group, metric) = (&row[0], &row[1]);
        if group.is_empty() || metric.is_empty() {
            return Err(parse_err(line, "group and metric must be non-empty"));
        }
        let direction = match &row[2] {
            "lower" => Direction::LowerBetter,
            "higher" => Direction::HigherBetter,
            other => return Err(parse_err(line, format!("direction '{other}' is not lower or higher"))),
        };
        let number = |i: usize| {
            row[i]
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("{} '{}' is not a number", HEADER[i], &row[i])))
        };
        let random_floor = match (&row[3], direction) {
            ("", Direction::LowerBetter) => None,
            (_, Direction::LowerBetter) => {
                return Err(parse_err(line, "random_floor must be empty for lower-is-better rows"))
            }
            ("", Direction::HigherBetter) => {
                return Err(parse_err(line, "random_floor is required for higher-is-better rows"))
            }
            _ => Some(number(3)?),
        };
        let (base, model) = (number(4)?, number(5)?);

        let idx = match groups.iter().position(|g| g.group == group) {
            Some(i) => i,
            None => {
                groups.push(Partial {
                    group: group.to_string(),
                    records: Vec::new(),
                    time: None,
                    energy: None,
                    first_line: line,
                });
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        let slot = match metric {
            TIME_METRIC => Some(&mut g.time),
            ENERGY_METRIC => Some(&mut g.energy),
            _ => None,
        };
        match slot {
            Some(slot) => {
                if direction != Direction::LowerBetter {
                    return Err(parse_err(line, format!("{metric} must have direction lower")));
                }
                if slot.replace((base, model)).is_some() {
                    return Err(parse_err(line, format!("duplicate {metric} row for {group}")));
                }
            }
            None => {
                if g.records.iter().any(|r| r.name == metric) {
                    return Err(parse_err(line, format!("duplicate metric {metric} for {group}")));
                }
                g.records.push(MetricRecord {
                    name: metric.to_string(),
                    direction,
                    random_floor,
                    base_value: base,
                    model_value: model,
                });
            }
        }
    }
    if !saw_header {
        return Err(parse_err(1, "empty file"));
    }
    if groups.is_empty() {
        return Err(parse_err(2, "no metric rows"));
    }

    groups
        .into_iter()
        .map(|g| {
            let missing = |what: &str| parse_err(g.first_line, format!("group {} has no {what} row", g.group));
            let (base_time, model_time) = g.time.ok_or_else(|| missing(TIME_METRIC))?;
            let (base_energy, model_energy) = g.energy.ok_or_else(|| missing(ENERGY_METRIC))?;
            if g.records.is_empty() {
                return Err(missing("quality"));
            }
            let m = MethodMetrics {
                group: g.group,
                records: g.records,
                base_time,
                model_time,
                base_energy,
                model_energy,
            };
            for r in &m.records {
                r.ratio().map_err(|e| match e {
                    LabError::Domain(msg) => LabError::domain(format!("{}/{msg}", m.group)),
                    other => other,
                })?;
            }
            m.ratios()?;
            Ok(m)
        })
        .collect()
}

pub fn ingest_metrics(path: impl AsRef<Path>) -> Result<Vec<MethodMetrics>> {
    parse_metrics(&fs::read_to_string(path)?)
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::Io(std::io::Error::other(e))
}

/// Writes methods in the format [`parse_metrics`] reads; values round-trip exactly.
pub fn write_metrics<W: Write>(methods: &[MethodMetrics], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER).map_err(csv_err)?;
    for m in methods {
        for r in &m.records {
            let floor = r.random_floor.map_or(String::new(), |f| f.to_string());
            out.write_record([
                m.group.clone(),
                r.name.clone(),
                r.direction.to_string(),
                floor,
                r.base_value.to_string(),
                r.model_value.to_string(),
            ])
            .map_err(csv_err)?;
        }
        for (metric, base, model) in [
            (TIME_METRIC, m.base_time, m.model_time),
            (ENERGY_METRIC, m.base_energy, m.model_energy),
        ] {
            out.write_record([m.group.as_str(), metric, "lower", "", &base.to_string(), &model.to_string()])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Scores of every method under one profile, best (lowest) first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    pub profile: WeightProfile,
    pub entries: Vec<(String, OptResult)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptTable {
    pub rankings: Vec<Ranking>,
}

impl OptTable {
    pub fn get(&self, method: &str, profile: &str) -> Option<&OptResult> {
        self.rankings
            .iter()
            .find(|r| r.profile.name == profile)?
            .entries
            .iter()
            .find(|(m, _)| m == method)
            .map(|(_, r)| r)
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.iter().all(|r| r.entries.is_empty())
    }
}

/// Scores every method under every profile.
pub fn score_report(methods: &[MethodMetrics], profiles: &[WeightProfile]) -> Result<OptTable> {
    score_with(&Scorer::default(), methods, profiles)
}

pub fn score_with(scorer: &Scorer, methods: &[MethodMetrics], profiles: &[WeightProfile]) -> Result<OptTable> {
    let mut rankings = Vec::with_capacity(profiles.len());
    for profile in profiles {
        let mut entries = Vec::with_capacity(methods.len());
        for m in methods {
            let r = scorer.opt_score(Quality::Records(&m.records), m.ratios()?, profile)?;
            entries.push((m.group.clone(), r));
        }
        rankings.push(Ranking {
            profile: profile.clone(),
            entries: rank_methods(entries)?,
        });
    }
    Ok(OptTable { rankings })
}

/// Renders `method,profile,opt` rows in ranking order within each profile.
pub fn plot_data_csv(table: &OptTable) -> Result<String> {
    if table.is_empty() {
        return Err(LabError::domain("opt table is empty"));
    }
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["method", "profile", "opt"]).map_err(csv_err)?;
    for r in &table.rankings {
        for (method, res) in &r.entries {
            out.write_record([method.as_str(), &r.profile.name, &res.opt.to_string()])
                .map_err(csv_err)?;
        }
    }
    let bytes = out.into_inner().map_err(|e| LabError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes [`plot_data_csv`] to `path`; nothing is written on error.
pub fn emit_plot_data(table: &OptTable, path: impl AsRef<Path>) -> Result<()> {
    let text = plot_data_csv(table)?;
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "group,metric,direction,random_floor,base_value,model_value
a,perplexity,lower,,10,12
a,time_s,lower,,100,50
a,energy_kwh,lower,,2,1
b,arc,higher,0.25,0.5,0.45
b,time_s,lower,,100,80
b,energy_kwh,lower,,2,2
";

    #[test]
    fn parses_groups_in_order() {
        let m = parse_metrics(SMALL).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].group, "a");
        assert_eq!(m[1].records[0].random_floor, Some(0.25));
        assert_eq!(m[1].model_time, 80.0);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = |text: &str| match parse_metrics(text) {
            Err(LabError::Parse { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(err(""), 1);
        assert_eq!(err("nope\n"), 1);
        let bad_number = SMALL.replace("a,perplexity,lower,,10,12", "a,perplexity,lower,,ten,12");
        assert_eq!(err(&bad_number), 2);
        let bad_dir = SMALL.replace("b,arc,higher", "b,arc,sideways");
        assert_eq!(err(&bad_dir), 5);
        let short = SMALL.replace("a,time_s,lower,,100,50", "a,time_s,lower,,100");
        assert_eq!(err(&short), 3);
        let floor_on_lower = SMALL.replace("a,perplexity,lower,,10,12", "a,perplexity,lower,0.1,10,12");
        assert_eq!(err(&floor_on_lower), 2);
        let no_energy: String = SMALL.lines().filter(|l| !l.starts_with("a,energy")).collect::<Vec<_>>().join("\n");
        assert_eq!(err(&no_energy), 2);
        assert_eq!(err(&(SMALL.to_string() + "a,time_s,lower,,1,1\n")), 8);
    }

    #[test]
    fn floor_guard_names_record() {
        let text = SMALL.replace("b,arc,higher,0.25,0.5,0.45", "b,arc,higher,0.25,0.5,0.15");
        match parse_metrics(&text) {
            Err(LabError::BelowRandomFloor { metric, .. }) => assert_eq!(metric, "arc"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn write_then_parse_is_identity() {
        let m = parse_metrics(SMALL).unwrap();
        let mut buf = Vec::new();
        write_metrics(&m, &mut buf).unwrap();
        assert_eq!(parse_metrics(std::str::from_utf8(&buf).unwrap()).unwrap(), m);
    }

    #[test]
    fn plot_rows_follow_ranking() {
        let m = parse_metrics(SMALL).unwrap();
        let table = score_report(&m, &WeightProfile::builtin()).unwrap();
        let csv = plot_data_csv(&table).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,profile,opt");
        assert_eq!(lines.len(), 7);
        let empty = OptTable { rankings: vec![] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.csv");
        assert!(emit_plot_data(&empty, &path).is_err());
        assert!(!path.exists());
    }
}
