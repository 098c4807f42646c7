//! Cohort file I/O.
//!
//! Main file: CSV with header `case_id,patient_id,...` where the remaining
//! columns are schema features (non-timeseries), outcome columns, and the
//! reserved optional columns `admission_id`, `surgery_start`, `ext_prob_aki`,
//! `ext_prob_sepsis`. Time-series channels live in a sidecar CSV
//! `<stem>.channels.csv` with columns `case_id,channel,time_s,value`.
//!
//! Missing markers: empty string for continuous/binary cells, the literal
//! token `__missing__` for nominal and procedure-code cells.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use super::{
    CaseRecord, CohortTable, FeatureKind, FeatureSchema, Outcome, Sample, TimeSeriesChannel, Value,
};
use crate::error::{Error, Result};

/// Missing marker for nominal / procedure-code cells.
pub const MISSING_TOKEN: &str = "__missing__";

/// Sidecar path for the channels CSV: `cohort.csv` -> `cohort.channels.csv`.
pub fn channels_path(main: &Path) -> PathBuf {
    let stem = main
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cohort".into());
    main.with_file_name(format!("{stem}.channels.csv"))
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

enum ColumnRole {
    CaseId,
    PatientId,
    AdmissionId,
    SurgeryStart,
    ExtProb(String),
    Feature(usize),
    Outcome(Outcome),
}

/// Load a cohort from `path` (plus its channels sidecar when present),
/// validating every row against the schema. Repeat surgeries within one
/// (patient, admission) collapse to the earliest `surgery_start`.
pub fn load_cohort(path: &Path, schema: &FeatureSchema) -> Result<CohortTable> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;

    let headers = reader.headers()?.clone();
    let mut roles = Vec::with_capacity(headers.len());
    let mut saw_case = false;
    let mut saw_patient = false;
    for name in headers.iter() {
        let role = match name {
            "case_id" => {
                saw_case = true;
                ColumnRole::CaseId
            }
            "patient_id" => {
                saw_patient = true;
                ColumnRole::PatientId
            }
            "admission_id" => ColumnRole::AdmissionId,
            "surgery_start" => ColumnRole::SurgeryStart,
            "ext_prob_aki" => ColumnRole::ExtProb("aki".into()),
            "ext_prob_sepsis" => ColumnRole::ExtProb("sepsis".into()),
            other => {
                if let Some(outcome) = Outcome::parse(other) {
                    ColumnRole::Outcome(outcome)
                } else if let Some(idx) = schema.features.iter().position(|d| d.name == other) {
                    if schema.features[idx].kind == FeatureKind::Timeseries {
                        return Err(Error::Schema(format!(
                            "timeseries feature {other} belongs in the channels sidecar, not the main CSV"
                        )));
                    }
                    ColumnRole::Feature(idx)
                } else {
                    return Err(Error::Schema(format!("unknown column {other}")));
                }
            }
        };
        roles.push(role);
    }
    if !saw_case || !saw_patient {
        return Err(Error::Schema("missing case_id/patient_id columns".into()));
    }

    let mut cases: Vec<CaseRecord> = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = rec_idx as u64 + 2; // header is line 1
        let mut case = CaseRecord {
            case_id: String::new(),
            patient_id: String::new(),
            admission_id: String::new(),
            surgery_start: 0.0,
            tabular: HashMap::new(),
            channels: Vec::new(),
            outcomes: BTreeMap::new(),
            external_probs: BTreeMap::new(),
        };
        for (role, cell) in roles.iter().zip(record.iter()) {
            match role {
                ColumnRole::CaseId => case.case_id = cell.to_string(),
                ColumnRole::PatientId => case.patient_id = cell.to_string(),
                ColumnRole::AdmissionId => case.admission_id = cell.to_string(),
                ColumnRole::SurgeryStart => {
                    if !cell.is_empty() {
                        case.surgery_start = cell.parse().map_err(|_| {
                            parse_err(path, line, format!("bad surgery_start {cell:?}"))
                        })?;
                    }
                }
                ColumnRole::ExtProb(key) => {
                    if !cell.is_empty() {
                        let p: f64 = cell.parse().map_err(|_| {
                            parse_err(path, line, format!("bad external probability {cell:?}"))
                        })?;
                        if !(0.0..=1.0).contains(&p) {
                            return Err(parse_err(
                                path,
                                line,
                                format!("external probability {p} outside [0,1]"),
                            ));
                        }
                        case.external_probs.insert(key.clone(), p);
                    }
                }
                ColumnRole::Outcome(outcome) => {
                    if !cell.is_empty() {
                        let label = match cell {
                            "0" => 0,
                            "1" => 1,
                            other => {
                                return Err(parse_err(
                                    path,
                                    line,
                                    format!("outcome {outcome} must be 0/1, got {other:?}"),
                                ))
                            }
                        };
                        case.outcomes.insert(*outcome, label);
                    }
                }
                ColumnRole::Feature(idx) => {
                    let def = &schema.features[*idx];
                    let value = match def.kind {
                        FeatureKind::Continuous | FeatureKind::Binary => {
                            if cell.is_empty() {
                                Value::Missing
                            } else {
                                let x: f64 = cell.parse().map_err(|_| {
                                    parse_err(
                                        path,
                                        line,
                                        format!("feature {}: bad number {cell:?}", def.name),
                                    )
                                })?;
                                Value::Number(x)
                            }
                        }
                        FeatureKind::Nominal | FeatureKind::ProcedureCode => {
                            if cell.is_empty() || cell == MISSING_TOKEN {
                                Value::Missing
                            } else {
                                Value::Token(cell.to_string())
                            }
                        }
                        FeatureKind::Timeseries => unreachable!(),
                    };
                    case.tabular.insert(def.name.clone(), value);
                }
            }
        }
        if case.case_id.is_empty() {
            return Err(parse_err(path, line, "empty case_id"));
        }
        if !seen_ids.insert(case.case_id.clone()) {
            return Err(Error::Integrity(format!("duplicate case_id {}", case.case_id)));
        }
        if case.admission_id.is_empty() {
            // No admission information: each case is its own admission.
            case.admission_id = case.case_id.clone();
        }
        cases.push(case);
    }

    // Only the first surgery of each (patient, admission) is retained.
    let mut first_by_admission: HashMap<(String, String), usize> = HashMap::new();
    let mut keep = vec![true; cases.len()];
    for (i, case) in cases.iter().enumerate() {
        let key = (case.patient_id.clone(), case.admission_id.clone());
        match first_by_admission.get(&key) {
            None => {
                first_by_admission.insert(key, i);
            }
            Some(&j) => {
                if case.surgery_start < cases[j].surgery_start {
                    keep[j] = false;
                    log::warn!(
                        "dropping case {} (repeat surgery in admission {})",
                        cases[j].case_id,
                        case.admission_id
                    );
                    first_by_admission.insert(key, i);
                } else {
                    keep[i] = false;
                    log::warn!(
                        "dropping case {} (repeat surgery in admission {})",
                        case.case_id,
                        case.admission_id
                    );
                }
            }
        }
    }
    let mut retained = Vec::with_capacity(cases.len());
    let mut retained_ids: HashSet<String> = HashSet::new();
    for (case, keep) in cases.into_iter().zip(keep) {
        if keep {
            retained_ids.insert(case.case_id.clone());
            retained.push(case);
        }
    }

    // Channels sidecar.
    let sidecar = channels_path(path);
    if sidecar.exists() {
        let mut reader = csv::ReaderBuilder::new().from_path(&sidecar)?;
        let headers = reader.headers()?.clone();
        let expect = ["case_id", "channel", "time_s", "value"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(Error::Schema(format!(
                "channels sidecar header must be {expect:?}"
            )));
        }
        let mut index: HashMap<String, usize> = retained
            .iter()
            .enumerate()
            .map(|(i, c)| (c.case_id.clone(), i))
            .collect();
        let dropped: HashSet<String> = seen_ids.difference(&retained_ids).cloned().collect();
        for (rec_idx, record) in reader.records().enumerate() {
            let record = record?;
            let line = rec_idx as u64 + 2;
            let case_id = &record[0];
            let channel_name = &record[1];
            if dropped.contains(case_id) {
                continue;
            }
            let Some(&case_idx) = index.get(case_id) else {
                return Err(Error::Integrity(format!(
                    "channels sidecar references unknown case {case_id}"
                )));
            };
            let known = schema
                .channel_features()
                .any(|d| d.name == channel_name);
            if !known {
                return Err(Error::Schema(format!(
                    "unknown channel {channel_name} in sidecar"
                )));
            }
            let time_s: f64 = record[2]
                .parse()
                .map_err(|_| parse_err(&sidecar, line, format!("bad time_s {:?}", &record[2])))?;
            if time_s < 0.0 {
                return Err(parse_err(&sidecar, line, format!("negative time_s {time_s}")));
            }
            let value: f64 = record[3]
                .parse()
                .map_err(|_| parse_err(&sidecar, line, format!("bad value {:?}", &record[3])))?;
            let case = &mut retained[case_idx];
            let channel = match case.channels.iter_mut().find(|c| c.name == channel_name) {
                Some(c) => c,
                None => {
                    case.channels.push(TimeSeriesChannel::new(channel_name));
                    case.channels.last_mut().unwrap()
                }
            };
            channel.samples.push(Sample { time_s, value });
        }
        // drop, then rebuild borrows
        index.clear();
    }

    Ok(CohortTable {
        schema: schema.clone(),
        cases: retained,
    })
}

fn format_number(x: f64) -> String {
    // Shortest round-trip representation keeps files byte-stable.
    format!("{x}")
}

/// Write a cohort back to `path` (and `<stem>.channels.csv` when channels
/// exist) in canonical column order.
pub fn save_cohort(table: &CohortTable, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let feature_cols: Vec<&str> = table
        .schema
        .tabular_features()
        .map(|d| d.name.as_str())
        .collect();
    let outcome_cols: Vec<Outcome> = Outcome::ALL
        .iter()
        .copied()
        .filter(|o| table.cases.iter().any(|c| c.outcomes.contains_key(o)))
        .collect();
    let ext_cols: Vec<&str> = ["aki", "sepsis"]
        .iter()
        .copied()
        .filter(|k| table.cases.iter().any(|c| c.external_probs.contains_key(*k)))
        .collect();

    let mut header = vec![
        "case_id".to_string(),
        "patient_id".to_string(),
        "admission_id".to_string(),
        "surgery_start".to_string(),
    ];
    header.extend(feature_cols.iter().map(|s| s.to_string()));
    header.extend(outcome_cols.iter().map(|o| o.as_str().to_string()));
    header.extend(ext_cols.iter().map(|k| format!("ext_prob_{k}")));
    writer.write_record(&header)?;

    for case in &table.cases {
        let mut row = vec![
            case.case_id.clone(),
            case.patient_id.clone(),
            case.admission_id.clone(),
            format_number(case.surgery_start),
        ];
        for (name, def) in feature_cols.iter().zip(table.schema.tabular_features()) {
            let cell = match case.tabular.get(*name) {
                None | Some(Value::Missing) => match def.kind {
                    FeatureKind::Nominal | FeatureKind::ProcedureCode => MISSING_TOKEN.to_string(),
                    _ => String::new(),
                },
                Some(Value::Number(x)) => format_number(*x),
                Some(Value::Token(t)) => t.clone(),
            };
            row.push(cell);
        }
        for outcome in &outcome_cols {
            row.push(match case.outcomes.get(outcome) {
                Some(y) => y.to_string(),
                None => String::new(),
            });
        }
        for key in &ext_cols {
            row.push(match case.external_probs.get(*key) {
                Some(p) => format_number(*p),
                None => String::new(),
            });
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;

    let has_channels = table.cases.iter().any(|c| !c.channels.is_empty());
    if has_channels {
        let mut writer = csv::Writer::from_path(channels_path(path))?;
        writer.write_record(["case_id", "channel", "time_s", "value"])?;
        for case in &table.cases {
            for channel in &case.channels {
                for sample in &channel.samples {
                    writer.write_record([
                        case.case_id.as_str(),
                        channel.name.as_str(),
                        &format_number(sample.time_s),
                        &format_number(sample.value),
                    ])?;
                }
            }
        }
        writer.flush()?;
    }
    Ok(())
}

pub fn load_schema(path: &Path) -> Result<FeatureSchema> {
    let text = std::fs::read_to_string(path)?;
    let schema: FeatureSchema = serde_json::from_str(&text)?;
    schema.validate()?;
    Ok(schema)
}

pub fn save_schema(schema: &FeatureSchema, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(schema)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{FeatureDef, Phase};
    use std::io::Write;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureDef {
                    name: "age".into(),
                    kind: FeatureKind::Continuous,
                    phase: Phase::Preoperative,
                    allowed_range: None,
                },
                FeatureDef {
                    name: "race".into(),
                    kind: FeatureKind::Nominal,
                    phase: Phase::Preoperative,
                    allowed_range: None,
                },
                FeatureDef {
                    name: "heart_rate".into(),
                    kind: FeatureKind::Timeseries,
                    phase: Phase::Intraoperative,
                    allowed_range: Some((0.0, 300.0)),
                },
            ],
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_well_formed_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "cohort.csv",
            "case_id,patient_id,age,race,mortality\nS001,P1,63,white,0\nS002,P2,47,black,1\nS003,P3,,__missing__,0\n",
        );
        let table = load_cohort(&path, &schema()).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.cases[0].tabular["age"], Value::Number(63.0));
        assert!(table.cases[2].tabular["age"].is_missing());
        assert!(table.cases[2].tabular["race"].is_missing());
        assert_eq!(table.cases[1].outcomes[&Outcome::Mortality], 1);
    }

    #[test]
    fn duplicate_case_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "cohort.csv",
            "case_id,patient_id,age,race\nS001,P1,63,white\nS001,P2,47,black\n",
        );
        let err = load_cohort(&path, &schema()).unwrap_err();
        match err {
            Error::Integrity(msg) => assert!(msg.contains("S001")),
            other => panic!("expected integrity error, got {other}"),
        }
    }

    #[test]
    fn first_surgery_per_admission_retained() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "cohort.csv",
            "case_id,patient_id,admission_id,surgery_start,age,race\n\
             S002,P1,A1,12.5,70,white\n\
             S001,P1,A1,3.0,70,white\n\
             S003,P2,A2,1.0,50,black\n",
        );
        let table = load_cohort(&path, &schema()).unwrap();
        assert_eq!(table.len(), 2);
        // S001 is earlier within admission A1 even though it appears second.
        assert!(table.case("S001").is_some());
        assert!(table.case("S002").is_none());
    }

    #[test]
    fn unknown_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "cohort.csv",
            "case_id,patient_id,age,bogus\nS001,P1,63,x\n",
        );
        assert!(matches!(
            load_cohort(&path, &schema()).unwrap_err(),
            Error::Schema(_)
        ));
    }

    #[test]
    fn malformed_number_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "cohort.csv",
            "case_id,patient_id,age,race\nS001,P1,63,white\nS002,P2,notanumber,black\n",
        );
        match load_cohort(&path, &schema()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn channels_sidecar_loaded() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "cohort.csv",
            "case_id,patient_id,age,race\nS001,P1,63,white\n",
        );
        write_file(
            dir.path(),
            "cohort.channels.csv",
            "case_id,channel,time_s,value\nS001,heart_rate,0,72\nS001,heart_rate,60,75\n",
        );
        let table = load_cohort(&path, &schema()).unwrap();
        let hr = table.cases[0].channel("heart_rate").unwrap();
        assert_eq!(hr.samples.len(), 2);
        assert_eq!(hr.samples[1].value, 75.0);
    }

    #[test]
    fn negative_time_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "cohort.csv", "case_id,patient_id,age,race\nS001,P1,63,white\n");
        write_file(
            dir.path(),
            "cohort.channels.csv",
            "case_id,channel,time_s,value\nS001,heart_rate,-5,72\n",
        );
        assert!(load_cohort(&path, &schema()).is_err());
    }

    #[test]
    fn save_load_save_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "cohort.csv",
            "case_id,patient_id,surgery_start,age,race,mortality,icu_gt_48h\n\
             S001,P1,1.25,63,white,0,1\nS002,P2,2,47.5,black,1,0\nS003,P3,3,,__missing__,0,0\n",
        );
        write_file(
            dir.path(),
            "cohort.channels.csv",
            "case_id,channel,time_s,value\nS001,heart_rate,0,72\nS001,heart_rate,60,75.5\n",
        );
        let table = load_cohort(&path, &schema()).unwrap();
        let out1 = dir.path().join("out1.csv");
        save_cohort(&table, &out1).unwrap();
        let reloaded = load_cohort(&out1, &schema()).unwrap();
        let out2 = dir.path().join("out2.csv");
        save_cohort(&reloaded, &out2).unwrap();
        assert_eq!(
            std::fs::read(&out1).unwrap(),
            std::fs::read(&out2).unwrap()
        );
        assert_eq!(
            std::fs::read(channels_path(&out1)).unwrap(),
            std::fs::read(channels_path(&out2)).unwrap()
        );
    }

    #[test]
    fn external_prob_columns_parsed() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "cohort.csv",
            "case_id,patient_id,age,race,ext_prob_aki,ext_prob_sepsis\nS001,P1,63,white,0.25,\n",
        );
        let table = load_cohort(&path, &schema()).unwrap();
        assert_eq!(table.cases[0].external_probs.get("aki"), Some(&0.25));
        assert!(table.cases[0].external_probs.get("sepsis").is_none());
    }

    #[test]
    fn schema_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        let mut s = schema();
        s.bands
            .insert("heart_rate".into(), vec![(0.0, 60.0), (60.0, 100.0)]);
        save_schema(&s, &path).unwrap();
        let loaded = load_schema(&path).unwrap();
        assert_eq!(loaded.features.len(), 3);
        assert_eq!(loaded.bands_for("heart_rate").len(), 2);
    }
}
