//! Long-format CSV ingestion and rate-preserving resampling.
//!
//! The canonical interchange format is `timestamp,sensor_id,flow` with
//! ISO-8601 UTC timestamps, one row per (time step, sensor), and an empty
//! `flow` field for missing measurements. Rows absent from an otherwise
//! regular grid also become missing. Flows are rates (veh/h), so coarser
//! resolutions are produced by averaging, not summing.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};

use crate::error::{Error, Result};
use crate::timeseries::{SensorDataset, SensorId, SensorSeries};

/// Parse the canonical CSV into a dataset at the file's native resolution.
///
/// The grid (start, step, length) is inferred from the union of timestamps;
/// every timestamp must sit on the inferred step. Duplicate
/// (timestamp, sensor) rows keep the last value with a warning.
pub fn parse_csv(path: impl AsRef<Path>) -> Result<SensorDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_csv_reader(file)
}

pub fn parse_csv_reader(reader: impl std::io::Read) -> Result<SensorDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?;
        let expected = ["timestamp", "sensor_id", "flow"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Format(format!(
                "expected header timestamp,sensor_id,flow, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }

    // sensor -> (epoch -> Option<flow>), insertion-ordered sensors
    let mut sensors: Vec<SensorId> = Vec::new();
    let mut rows: BTreeMap<SensorId, BTreeMap<i64, Option<f64>>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let ts: DateTime<Utc> = record[0]
            .parse()
            .map_err(|e| Error::Parse { line, msg: format!("bad timestamp '{}': {e}", &record[0]) })?;
        let id = SensorId::new(&record[1])
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let flow = if record[2].is_empty() {
            None
        } else {
            let v: f64 = record[2]
                .parse()
                .map_err(|e| Error::Parse { line, msg: format!("bad flow '{}': {e}", &record[2]) })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    line,
                    msg: format!("flow must be finite and non-negative, got {v}"),
                });
            }
            Some(v)
        };
        let per_sensor = rows.entry(id.clone()).or_insert_with(|| {
            sensors.push(id.clone());
            BTreeMap::new()
        });
        if per_sensor.insert(ts.timestamp(), flow).is_some() {
            log::warn!("duplicate row for ({}, {id}); keeping the last value", &record[0]);
        }
    }
    if sensors.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }

    let step = infer_step(&rows)?;
    let start = rows.values().flat_map(|m| m.keys()).min().copied().unwrap();
    let end = rows.values().flat_map(|m| m.keys()).max().copied().unwrap();
    for per_sensor in rows.values() {
        for &ts in per_sensor.keys() {
            if (ts - start) % step != 0 {
                return Err(Error::Format(format!(
                    "timestamp {} off the {}-second grid starting at {}",
                    fmt_epoch(ts),
                    step,
                    fmt_epoch(start)
                )));
            }
        }
    }
    let len = ((end - start) / step) as usize + 1;

    let series = sensors
        .into_iter()
        .map(|id| {
            let per_sensor = &rows[&id];
            let mut values = vec![0.0; len];
            let mut observed = vec![false; len];
            for (&ts, &flow) in per_sensor {
                let idx = ((ts - start) / step) as usize;
                if let Some(v) = flow {
                    values[idx] = v;
                    observed[idx] = true;
                }
            }
            SensorSeries::new(id, start, step, values, observed)
        })
        .collect::<Result<Vec<_>>>()?;
    SensorDataset::new(series)
}

fn infer_step(rows: &BTreeMap<SensorId, BTreeMap<i64, Option<f64>>>) -> Result<i64> {
    let mut step = i64::MAX;
    for per_sensor in rows.values() {
        let mut prev: Option<i64> = None;
        for &ts in per_sensor.keys() {
            if let Some(p) = prev {
                step = step.min(ts - p);
            }
            prev = Some(ts);
        }
    }
    if step == i64::MAX || step <= 0 {
        Err(Error::Format("cannot infer a sampling step from a single timestamp".into()))
    } else {
        Ok(step)
    }
}

fn fmt_epoch(epoch: i64) -> String {
    Utc.timestamp_opt(epoch, 0)
        .single()
        .map(|dt| dt.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| epoch.to_string())
}

/// Write the canonical CSV. Every grid position of every sensor gets a row;
/// missing measurements carry an empty flow field, so the grid survives a
/// round trip.
pub fn write_csv(dataset: &SensorDataset, mut w: impl Write) -> Result<()> {
    writeln!(w, "timestamp,sensor_id,flow")?;
    for s in dataset.series() {
        for i in 0..s.len() {
            let ts = fmt_epoch(s.timestamp_at(i));
            if s.observed[i] {
                writeln!(w, "{ts},{},{}", s.id, s.values[i])?;
            } else {
                writeln!(w, "{ts},{},", s.id)?;
            }
        }
    }
    Ok(())
}

pub fn write_csv_file(dataset: &SensorDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(dataset, &mut file)?;
    file.flush()?;
    Ok(())
}

/// Aggregate each run of `factor` steps into one step by averaging the
/// observed inputs; a bucket with no observed input stays missing.
pub fn resample(dataset: &SensorDataset, factor: usize) -> Result<SensorDataset> {
    if factor == 0 {
        return Err(Error::Validation("resample factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(dataset.clone());
    }
    let out_len = dataset.len().div_ceil(factor);
    let series = dataset
        .series()
        .iter()
        .map(|s| {
            let mut values = vec![0.0; out_len];
            let mut observed = vec![false; out_len];
            for b in 0..out_len {
                let from = b * factor;
                let to = (from + factor).min(s.len());
                let mut sum = 0.0;
                let mut n = 0usize;
                for i in from..to {
                    if s.observed[i] {
                        sum += s.values[i];
                        n += 1;
                    }
                }
                if n > 0 {
                    values[b] = sum / n as f64;
                    observed[b] = true;
                }
            }
            SensorSeries::new(s.id.clone(), s.start, s.step * factor as i64, values, observed)
        })
        .collect::<Result<Vec<_>>>()?;
    SensorDataset::new(series)
}
