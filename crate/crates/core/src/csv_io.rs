//! Reader and writer for the three-file data-sharing bundle:
//! `buildings.csv`, `devices.csv` and `sensing.csv`.
//!
//! Files are UTF-8 with LF line endings and a header row. Fields are only
//! quoted when a name contains a delimiter or quote. Every numeric field is
//! an integer; humidity and temperature stay in their ×100 raw encoding.
//! Sensing rows are exported sorted by (DeviceId, UtcTimestampMs,
//! CollectorId). Empty fields are rejected on import.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::store::{partition_key, Building, Device, SensingRecord, StoreError, TelemetryStore};

pub const BUILDINGS_HEADER: [&str; 2] = ["Id", "BuildingName"];
pub const DEVICES_HEADER: [&str; 3] = ["Id", "DeviceName", "BuildingId"];
pub const SENSING_HEADER: [&str; 11] = [
    "Id",
    "UtcTimestampMs",
    "PartitionKey",
    "DeviceId",
    "CollectorId",
    "Humidity",
    "Temperature",
    "CO2",
    "Dust",
    "AirQuality",
    "Vibration",
];

pub const LOSS_FIXTURE_HEADER: [&str; 3] = ["SensorBox", "Expected", "Actual"];

pub const BUILDINGS_FILE: &str = "buildings.csv";
pub const DEVICES_FILE: &str = "devices.csv";
pub const SENSING_FILE: &str = "sensing.csv";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{file}: header {found:?} does not match expected {expected:?}")]
    SchemaMismatch {
        file: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("{file} line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        file: String,
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("{file} line {line}: column {column} is empty")]
    MissingField {
        file: String,
        line: u64,
        column: &'static str,
    },
    #[error("{file} line {line}: column {column} value {value:?} is not an integer")]
    TypeError {
        file: String,
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("{file} line {line}: PartitionKey {found} does not match UtcTimestampMs (expected {expected})")]
    PartitionInconsistent {
        file: String,
        line: u64,
        found: i64,
        expected: i64,
    },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
}

/// In-memory form of the three files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExportBundle {
    pub buildings: Vec<Building>,
    pub devices: Vec<Device>,
    pub sensing: Vec<SensingRecord>,
}

impl ExportBundle {
    pub fn from_store(store: &TelemetryStore) -> Result<Self, StoreError> {
        let buildings: Vec<Building> = store.buildings().cloned().collect();
        let devices: Vec<Device> = store.devices().cloned().collect();
        for d in &devices {
            if !buildings.iter().any(|b| b.id == d.building_id) {
                return Err(StoreError::ForeignKeyViolation {
                    table: "devices",
                    target: "building",
                    id: d.building_id,
                });
            }
        }
        let sensing: Vec<SensingRecord> = store.records_by_device().into_iter().copied().collect();
        if let Some(r) = sensing
            .iter()
            .find(|r| !devices.iter().any(|d| d.id == r.device_id))
        {
            return Err(StoreError::ForeignKeyViolation {
                table: "sensing",
                target: "device",
                id: r.device_id,
            });
        }
        Ok(Self {
            buildings,
            devices,
            sensing,
        })
    }

    pub fn into_store(self) -> Result<TelemetryStore, StoreError> {
        let mut store = TelemetryStore::new();
        for b in self.buildings {
            store.add_building(b)?;
        }
        for d in self.devices {
            store.add_device(d)?;
        }
        for r in self.sensing {
            store.insert_record(r)?;
        }
        Ok(store)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CsvError> {
        std::fs::create_dir_all(dir).map_err(|source| CsvError::Io {
            file: dir.display().to_string(),
            source,
        })?;
        write_buildings(&dir.join(BUILDINGS_FILE), &self.buildings)?;
        write_devices(&dir.join(DEVICES_FILE), &self.devices)?;
        write_sensing(&dir.join(SENSING_FILE), &self.sensing)
    }

    pub fn read(dir: &Path) -> Result<Self, CsvError> {
        Ok(Self {
            buildings: read_buildings(&dir.join(BUILDINGS_FILE))?,
            devices: read_devices(&dir.join(DEVICES_FILE))?,
            sensing: read_sensing(&dir.join(SENSING_FILE))?,
        })
    }
}

/// Writes the store as a bundle into `dir`.
pub fn export(store: &TelemetryStore, dir: &Path) -> Result<ExportBundle, StoreError> {
    let bundle = ExportBundle::from_store(store)?;
    bundle.write(dir)?;
    Ok(bundle)
}

/// Reads a bundle from `dir` into a fresh store.
pub fn import(dir: &Path) -> Result<TelemetryStore, StoreError> {
    ExportBundle::read(dir)?.into_store()
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CsvError> {
    let file = File::create(path).map_err(|source| CsvError::Io {
        file: path.display().to_string(),
        source,
    })?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(BufWriter::new(file)))
}

fn finish<W: Write>(path: &Path, mut w: csv::Writer<W>) -> Result<(), CsvError> {
    w.flush().map_err(|source| CsvError::Io {
        file: path.display().to_string(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CsvError + '_ {
    move |source| CsvError::Csv {
        file: path.display().to_string(),
        source,
    }
}

pub fn write_buildings<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a Building>,
) -> Result<(), CsvError> {
    let mut w = writer(path)?;
    w.write_record(BUILDINGS_HEADER).map_err(csv_err(path))?;
    for b in rows {
        w.write_record([b.id.to_string().as_str(), &b.name])
            .map_err(csv_err(path))?;
    }
    finish(path, w)
}

pub fn write_devices<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a Device>,
) -> Result<(), CsvError> {
    let mut w = writer(path)?;
    w.write_record(DEVICES_HEADER).map_err(csv_err(path))?;
    for d in rows {
        w.write_record([
            d.id.to_string().as_str(),
            &d.name,
            &d.building_id.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    finish(path, w)
}

pub fn write_sensing<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a SensingRecord>,
) -> Result<(), CsvError> {
    let mut w = writer(path)?;
    w.write_record(SENSING_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.id.to_string(),
            r.utc_timestamp_ms.to_string(),
            r.partition_key.to_string(),
            r.device_id.to_string(),
            r.collector_id.to_string(),
            r.humidity_raw.to_string(),
            r.temperature_raw.to_string(),
            r.co2_ppm.to_string(),
            r.dust_pcs_per_l.to_string(),
            r.air_quality_code.to_string(),
            r.vibration_count.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// Row cursor that checks the header and field counts and parses columns.
struct Rows<R: Read> {
    file: String,
    reader: csv::Reader<R>,
    header: &'static [&'static str],
}

struct Row<'a> {
    file: &'a str,
    line: u64,
    record: csv::StringRecord,
    header: &'static [&'static str],
}

impl Row<'_> {
    fn text(&self, col: usize) -> Result<&str, CsvError> {
        let value = &self.record[col];
        if value.is_empty() {
            return Err(CsvError::MissingField {
                file: self.file.to_string(),
                line: self.line,
                column: self.header[col],
            });
        }
        Ok(value)
    }

    fn int<T: FromStr>(&self, col: usize) -> Result<T, CsvError> {
        let value = self.text(col)?;
        value.parse().map_err(|_| CsvError::TypeError {
            file: self.file.to_string(),
            line: self.line,
            column: self.header[col],
            value: value.to_string(),
        })
    }
}

impl<R: Read> Rows<R> {
    fn new(file: String, input: R, header: &'static [&'static str]) -> Result<Self, CsvError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        let mut first = csv::StringRecord::new();
        let found: Vec<String> = match reader.read_record(&mut first) {
            Ok(true) => first.iter().map(str::to_string).collect(),
            Ok(false) => Vec::new(),
            Err(source) => return Err(CsvError::Csv { file, source }),
        };
        if found.iter().map(String::as_str).ne(header.iter().copied()) {
            return Err(CsvError::SchemaMismatch {
                file,
                expected: header.iter().map(|s| s.to_string()).collect(),
                found,
            });
        }
        Ok(Self {
            file,
            reader,
            header,
        })
    }

    fn next_row(&mut self) -> Result<Option<Row<'_>>, CsvError> {
        let mut record = csv::StringRecord::new();
        match self.reader.read_record(&mut record) {
            Ok(false) => Ok(None),
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line());
                if record.len() != self.header.len() {
                    return Err(CsvError::FieldCount {
                        file: self.file.clone(),
                        line,
                        expected: self.header.len(),
                        found: record.len(),
                    });
                }
                Ok(Some(Row {
                    file: &self.file,
                    line,
                    record,
                    header: self.header,
                }))
            }
            Err(source) => Err(CsvError::Csv {
                file: self.file.clone(),
                source,
            }),
        }
    }
}

fn open(path: &Path, header: &'static [&'static str]) -> Result<Rows<BufReader<File>>, CsvError> {
    let file = File::open(path).map_err(|source| CsvError::Io {
        file: path.display().to_string(),
        source,
    })?;
    Rows::new(path.display().to_string(), BufReader::new(file), header)
}

pub fn read_buildings(path: &Path) -> Result<Vec<Building>, CsvError> {
    let mut rows = open(path, &BUILDINGS_HEADER)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next_row()? {
        out.push(Building {
            id: row.int(0)?,
            name: row.text(1)?.to_string(),
        });
    }
    Ok(out)
}

pub fn read_devices(path: &Path) -> Result<Vec<Device>, CsvError> {
    let mut rows = open(path, &DEVICES_HEADER)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next_row()? {
        out.push(Device {
            id: row.int(0)?,
            name: row.text(1)?.to_string(),
            building_id: row.int(2)?,
        });
    }
    Ok(out)
}

/// Reads a per-box loss fixture: `SensorBox,Expected,Actual`.
pub fn read_loss_fixture(path: &Path) -> Result<Vec<(String, u64, u64)>, CsvError> {
    let mut rows = open(path, &LOSS_FIXTURE_HEADER)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next_row()? {
        out.push((row.text(0)?.to_string(), row.int(1)?, row.int(2)?));
    }
    Ok(out)
}

pub fn read_sensing(path: &Path) -> Result<Vec<SensingRecord>, CsvError> {
    let file = File::open(path).map_err(|source| CsvError::Io {
        file: path.display().to_string(),
        source,
    })?;
    parse_sensing(path.display().to_string(), BufReader::new(file))
}

/// Parses `sensing.csv` content from any reader.
pub fn parse_sensing<R: Read>(name: String, input: R) -> Result<Vec<SensingRecord>, CsvError> {
    let mut rows = Rows::new(name, input, &SENSING_HEADER)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next_row()? {
        let record = SensingRecord {
            id: row.int(0)?,
            utc_timestamp_ms: row.int(1)?,
            partition_key: row.int(2)?,
            device_id: row.int(3)?,
            collector_id: row.int(4)?,
            humidity_raw: row.int(5)?,
            temperature_raw: row.int(6)?,
            co2_ppm: row.int(7)?,
            dust_pcs_per_l: row.int(8)?,
            air_quality_code: row.int(9)?,
            vibration_count: row.int(10)?,
        };
        let expected = partition_key(record.utc_timestamp_ms);
        if record.partition_key != expected {
            return Err(CsvError::PartitionInconsistent {
                file: row.file.to_string(),
                line: row.line,
                found: record.partition_key,
                expected,
            });
        }
        out.push(record);
    }
    Ok(out)
}
