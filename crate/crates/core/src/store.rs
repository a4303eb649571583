//! Day-partitioned store for sensing records.
//!
//! Records are bucketed by partition key (whole UTC days since the epoch)
//! and, within a partition, indexed per device in `(timestamp, collector)`
//! order. Range queries walk only the partitions that intersect the
//! requested half-open interval; [`TelemetryStore::partitions_scanned`]
//! exposes how many were touched.
//!
//! On disk a store is a directory:
//!
//! ```text
//! buildings.csv
//! devices.csv
//! sensing/<partition_key>.csv   one file per UTC day, sensing.csv layout
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::TimeSeries;
use crate::csv_io::{self, CsvError};
use crate::sensor::Reading;

pub const DAY_MS: i64 = 86_400_000;

/// Days since 1970-01-01 UTC.
pub fn partition_key(utc_ms: i64) -> i64 {
    utc_ms.div_euclid(DAY_MS)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Building {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Device {
    pub id: u32,
    pub name: String,
    pub building_id: u32,
}

/// A persisted sample, one row of `sensing.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensingRecord {
    pub id: u64,
    pub utc_timestamp_ms: i64,
    pub partition_key: i64,
    pub device_id: u32,
    pub collector_id: u32,
    pub humidity_raw: i64,
    pub temperature_raw: i64,
    pub co2_ppm: i64,
    pub dust_pcs_per_l: i64,
    pub air_quality_code: i64,
    pub vibration_count: i64,
}

impl SensingRecord {
    pub fn from_reading(id: u64, r: &Reading) -> Self {
        Self {
            id,
            utc_timestamp_ms: r.utc_timestamp_ms,
            partition_key: partition_key(r.utc_timestamp_ms),
            device_id: r.device_id,
            collector_id: r.collector_id,
            humidity_raw: r.humidity_raw,
            temperature_raw: r.temperature_raw,
            co2_ppm: r.co2_ppm,
            dust_pcs_per_l: r.dust_pcs_per_l,
            air_quality_code: r.air_quality_code,
            vibration_count: r.vibration_count,
        }
    }

    pub fn reading(&self) -> Reading {
        Reading {
            device_id: self.device_id,
            collector_id: self.collector_id,
            utc_timestamp_ms: self.utc_timestamp_ms,
            humidity_raw: self.humidity_raw,
            temperature_raw: self.temperature_raw,
            co2_ppm: self.co2_ppm,
            dust_pcs_per_l: self.dust_pcs_per_l,
            air_quality_code: self.air_quality_code,
            vibration_count: self.vibration_count,
        }
    }

    fn order_key(&self) -> (i64, u32) {
        (self.utc_timestamp_ms, self.collector_id)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("sample already stored for device {device_id}, collector {collector_id} at {utc_timestamp_ms} ms")]
    DuplicateSample {
        device_id: u32,
        collector_id: u32,
        utc_timestamp_ms: i64,
    },
    #[error("record id {0} already used")]
    DuplicateId(u64),
    #[error("{table} id {id} already used")]
    DuplicateKey { table: &'static str, id: u32 },
    #[error("{table} references missing {target} {id}")]
    ForeignKeyViolation {
        table: &'static str,
        target: &'static str,
        id: u32,
    },
    #[error("unknown device {0}")]
    UnknownDevice(u32),
    #[error("record {id}: partition key {found} does not match timestamp (expected {expected})")]
    PartitionInconsistent { id: u64, found: i64, expected: i64 },
    #[error("invalid range: t0 = {t0} ms is after t1 = {t1} ms")]
    InvalidRange { t0: i64, t1: i64 },
    #[error("negative timestamp {0} ms")]
    NegativeTimestamp(i64),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Default)]
struct Partition {
    /// Slot indices into `records`, sorted by (timestamp, collector).
    by_device: BTreeMap<u32, Vec<usize>>,
}

#[derive(Debug, Default)]
pub struct TelemetryStore {
    buildings: BTreeMap<u32, Building>,
    devices: BTreeMap<u32, Device>,
    records: Vec<SensingRecord>,
    by_id: HashMap<u64, usize>,
    partitions: BTreeMap<i64, Partition>,
    per_device: BTreeMap<u32, u64>,
    next_id: u64,
    partitions_scanned: AtomicU64,
}

impl TelemetryStore {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            ..Self::default()
        }
    }

    pub fn add_building(&mut self, building: Building) -> Result<(), StoreError> {
        if self.buildings.contains_key(&building.id) {
            return Err(StoreError::DuplicateKey {
                table: "buildings",
                id: building.id,
            });
        }
        self.buildings.insert(building.id, building);
        Ok(())
    }

    pub fn add_device(&mut self, device: Device) -> Result<(), StoreError> {
        if self.devices.contains_key(&device.id) {
            return Err(StoreError::DuplicateKey {
                table: "devices",
                id: device.id,
            });
        }
        if !self.buildings.contains_key(&device.building_id) {
            return Err(StoreError::ForeignKeyViolation {
                table: "devices",
                target: "building",
                id: device.building_id,
            });
        }
        self.devices.insert(device.id, device);
        Ok(())
    }

    pub fn buildings(&self) -> impl Iterator<Item = &Building> {
        self.buildings.values()
    }

    pub fn devices(&self) -> impl Iterator<Item = &Device> {
        self.devices.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records stored for one device.
    pub fn count_for(&self, device_id: u32) -> u64 {
        self.per_device.get(&device_id).copied().unwrap_or(0)
    }

    pub fn partition_keys(&self) -> impl Iterator<Item = i64> + '_ {
        self.partitions.keys().copied()
    }

    /// Partitions visited by range queries since creation.
    pub fn partitions_scanned(&self) -> u64 {
        self.partitions_scanned.load(Ordering::Relaxed)
    }

    /// Stores a reading under the next dense id.
    pub fn insert(&mut self, reading: &Reading) -> Result<u64, StoreError> {
        let record = SensingRecord::from_reading(self.next_id, reading);
        self.insert_record(record)
    }

    /// Stores a record with a caller-chosen id (used by import).
    pub fn insert_record(&mut self, record: SensingRecord) -> Result<u64, StoreError> {
        if record.utc_timestamp_ms < 0 {
            return Err(StoreError::NegativeTimestamp(record.utc_timestamp_ms));
        }
        let expected = partition_key(record.utc_timestamp_ms);
        if record.partition_key != expected {
            return Err(StoreError::PartitionInconsistent {
                id: record.id,
                found: record.partition_key,
                expected,
            });
        }
        if !self.devices.contains_key(&record.device_id) {
            return Err(StoreError::ForeignKeyViolation {
                table: "sensing",
                target: "device",
                id: record.device_id,
            });
        }
        if self.by_id.contains_key(&record.id) {
            return Err(StoreError::DuplicateId(record.id));
        }
        let slot = self.records.len();
        let partition = self.partitions.entry(expected).or_default();
        let index = partition.by_device.entry(record.device_id).or_default();
        let key = record.order_key();
        // appends are the common case
        let pos = match index.last() {
            Some(&last) if self.records[last].order_key() < key => index.len(),
            None => 0,
            _ => match index.binary_search_by_key(&key, |&s| self.records[s].order_key()) {
                Ok(_) => {
                    return Err(StoreError::DuplicateSample {
                        device_id: record.device_id,
                        collector_id: record.collector_id,
                        utc_timestamp_ms: record.utc_timestamp_ms,
                    })
                }
                Err(pos) => pos,
            },
        };
        index.insert(pos, slot);
        self.records.push(record);
        self.by_id.insert(record.id, slot);
        *self.per_device.entry(record.device_id).or_default() += 1;
        self.next_id = self.next_id.max(record.id + 1);
        Ok(record.id)
    }

    pub fn get(&self, id: u64) -> Option<&SensingRecord> {
        self.by_id.get(&id).map(|&slot| &self.records[slot])
    }

    /// Records of `device_id` with `t0 <= timestamp < t1`, ascending.
    pub fn query_range(
        &self,
        device_id: u32,
        t0: i64,
        t1: i64,
    ) -> Result<Vec<&SensingRecord>, StoreError> {
        if !self.devices.contains_key(&device_id) {
            return Err(StoreError::UnknownDevice(device_id));
        }
        if t0 > t1 {
            return Err(StoreError::InvalidRange { t0, t1 });
        }
        let mut out = Vec::new();
        if t0 == t1 {
            return Ok(out);
        }
        let first_day = partition_key(t0);
        let last_day = partition_key(t1 - 1);
        for (_, partition) in self.partitions.range(first_day..=last_day) {
            self.partitions_scanned.fetch_add(1, Ordering::Relaxed);
            let Some(index) = partition.by_device.get(&device_id) else {
                continue;
            };
            let lo = index.partition_point(|&s| self.records[s].utc_timestamp_ms < t0);
            let hi = index.partition_point(|&s| self.records[s].utc_timestamp_ms < t1);
            out.extend(index[lo..hi].iter().map(|&s| &self.records[s]));
        }
        Ok(out)
    }

    /// Relative humidity (%) of one collector over `[t0, t1)`.
    pub fn humidity_series(
        &self,
        device_id: u32,
        collector_id: u32,
        t0: i64,
        t1: i64,
    ) -> Result<TimeSeries, StoreError> {
        let points = self
            .query_range(device_id, t0, t1)?
            .into_iter()
            .filter(|r| r.collector_id == collector_id)
            .map(|r| (r.utc_timestamp_ms, r.reading().humidity_pct()))
            .collect();
        // (device, collector, timestamp) is unique and results are time-ordered
        Ok(TimeSeries::from_sorted(points, "%RH"))
    }

    /// All records ordered by (device, timestamp, collector).
    pub fn records_by_device(&self) -> Vec<&SensingRecord> {
        let mut all: Vec<&SensingRecord> = self.records.iter().collect();
        all.sort_unstable_by_key(|r| (r.device_id, r.utc_timestamp_ms, r.collector_id));
        all
    }

    /// Record sets equal regardless of insertion order.
    pub fn same_contents(&self, other: &TelemetryStore) -> bool {
        self.buildings == other.buildings
            && self.devices == other.devices
            && self.len() == other.len()
            && self.records.iter().all(|r| other.get(r.id) == Some(r))
    }

    /// Writes the partitioned on-disk layout into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        let sensing_dir = dir.join("sensing");
        fs::create_dir_all(&sensing_dir).map_err(|source| io_err(&sensing_dir, source))?;
        csv_io::write_buildings(&dir.join("buildings.csv"), self.buildings())?;
        csv_io::write_devices(&dir.join("devices.csv"), self.devices())?;
        for (key, partition) in &self.partitions {
            let mut rows: Vec<&SensingRecord> = partition
                .by_device
                .values()
                .flat_map(|slots| slots.iter().map(|&s| &self.records[s]))
                .collect();
            rows.sort_unstable_by_key(|r| (r.device_id, r.utc_timestamp_ms, r.collector_id));
            csv_io::write_sensing(&sensing_dir.join(format!("{key}.csv")), rows)?;
        }
        Ok(())
    }

    /// Loads a directory written by [`TelemetryStore::save`].
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for b in csv_io::read_buildings(&dir.join("buildings.csv"))? {
            store.add_building(b)?;
        }
        for d in csv_io::read_devices(&dir.join("devices.csv"))? {
            store.add_device(d)?;
        }
        let sensing_dir = dir.join("sensing");
        let mut files: Vec<(i64, std::path::PathBuf)> = Vec::new();
        for entry in fs::read_dir(&sensing_dir).map_err(|source| io_err(&sensing_dir, source))? {
            let path = entry.map_err(|source| io_err(&sensing_dir, source))?.path();
            let key = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<i64>().ok());
            match key {
                Some(key) if path.extension().is_some_and(|e| e == "csv") => {
                    files.push((key, path))
                }
                _ => continue,
            }
        }
        files.sort();
        for (key, path) in files {
            for record in csv_io::read_sensing(&path)? {
                if record.partition_key != key {
                    return Err(StoreError::PartitionInconsistent {
                        id: record.id,
                        found: record.partition_key,
                        expected: key,
                    });
                }
                store.insert_record(record)?;
            }
        }
        Ok(store)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with_device() -> TelemetryStore {
        let mut s = TelemetryStore::new();
        s.add_building(Building {
            id: 1,
            name: "The City Museum".into(),
        })
        .unwrap();
        s.add_device(Device {
            id: 1,
            name: "box-1".into(),
            building_id: 1,
        })
        .unwrap();
        s
    }

    fn reading(device_id: u32, t: i64) -> Reading {
        Reading {
            device_id,
            collector_id: 1,
            utc_timestamp_ms: t,
            humidity_raw: 2570,
            temperature_raw: 2100,
            co2_ppm: 400,
            dust_pcs_per_l: 100,
            air_quality_code: 200,
            vibration_count: 0,
        }
    }

    #[test]
    fn partition_keys() {
        assert_eq!(partition_key(0), 0);
        assert_eq!(partition_key(86_399_999), 0);
        assert_eq!(partition_key(86_400_000), 1);
        assert_eq!(partition_key(1_617_580_800_000), 18_722);
    }

    #[test]
    fn partition_key_matches_calendar_day_count() {
        // 1970-01-01 .. 2021-04-05 by civil-calendar arithmetic
        let years: i64 = (1970..2021)
            .map(|y| {
                if (y % 4 == 0 && y % 100 != 0) || y % 400 == 0 {
                    366
                } else {
                    365
                }
            })
            .sum();
        let days = years + 31 + 28 + 31 + 4;
        assert_eq!(days, 18_722);
        assert_eq!(partition_key(days * DAY_MS), days);
    }

    #[test]
    fn insert_then_query() {
        let mut s = store_with_device();
        let id = s.insert(&reading(1, 1_000)).unwrap();
        assert_eq!(id, 1);
        let got = s.query_range(1, 0, 2_000).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, id);
        assert_eq!(s.get(id).unwrap().humidity_raw, 2570);
    }

    #[test]
    fn duplicate_and_dangling_inserts_fail() {
        let mut s = store_with_device();
        s.insert(&reading(1, 1_000)).unwrap();
        assert!(matches!(
            s.insert(&reading(1, 1_000)),
            Err(StoreError::DuplicateSample { .. })
        ));
        assert!(matches!(
            s.insert(&reading(9, 1_000)),
            Err(StoreError::ForeignKeyViolation { id: 9, .. })
        ));
        assert!(matches!(
            s.add_device(Device {
                id: 2,
                name: "x".into(),
                building_id: 5
            }),
            Err(StoreError::ForeignKeyViolation { id: 5, .. })
        ));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn out_of_order_duplicate_is_caught() {
        let mut s = store_with_device();
        s.insert(&reading(1, 30_000)).unwrap();
        s.insert(&reading(1, 15_000)).unwrap();
        s.insert(&reading(1, 45_000)).unwrap();
        assert!(matches!(
            s.insert(&reading(1, 15_000)),
            Err(StoreError::DuplicateSample { .. })
        ));
        let ts: Vec<i64> = s
            .query_range(1, 0, DAY_MS)
            .unwrap()
            .iter()
            .map(|r| r.utc_timestamp_ms)
            .collect();
        assert_eq!(ts, vec![15_000, 30_000, 45_000]);
    }

    #[test]
    fn empty_store_and_bad_queries() {
        let s = store_with_device();
        assert!(s.query_range(1, 0, DAY_MS).unwrap().is_empty());
        assert!(matches!(
            s.query_range(2, 0, 1),
            Err(StoreError::UnknownDevice(2))
        ));
        assert!(matches!(
            s.query_range(1, 5, 1),
            Err(StoreError::InvalidRange { .. })
        ));
    }

    #[test]
    fn range_is_half_open() {
        let mut s = store_with_device();
        for k in 0..4 {
            s.insert(&reading(1, k * 15_000)).unwrap();
        }
        let got = s.query_range(1, 15_000, 45_000).unwrap();
        let ts: Vec<i64> = got.iter().map(|r| r.utc_timestamp_ms).collect();
        assert_eq!(ts, vec![15_000, 30_000]);
    }

    #[test]
    fn one_day_shares_one_partition() {
        let mut s = store_with_device();
        let day0 = 18_722 * DAY_MS;
        for k in 0..5760 {
            s.insert(&reading(1, day0 + k * 15_000)).unwrap();
        }
        assert_eq!(s.partition_keys().collect::<Vec<_>>(), vec![18_722]);
        assert_eq!(s.get(5760).unwrap().partition_key, 18_722);
    }

    #[test]
    fn queries_only_touch_intersecting_partitions() {
        let mut s = store_with_device();
        for day in 0..10 {
            for k in 0..4 {
                s.insert(&reading(1, day * DAY_MS + k * 3_600_000)).unwrap();
            }
        }
        let before = s.partitions_scanned();
        let got = s.query_range(1, 3 * DAY_MS + 1, 5 * DAY_MS).unwrap();
        assert_eq!(s.partitions_scanned() - before, 2);
        assert_eq!(got.len(), 3 + 4);
        let before = s.partitions_scanned();
        s.query_range(1, 7 * DAY_MS, 7 * DAY_MS).unwrap();
        assert_eq!(s.partitions_scanned(), before);
    }

    #[test]
    fn partition_key_mismatch_rejected() {
        let mut s = store_with_device();
        let mut rec = SensingRecord::from_reading(1, &reading(1, DAY_MS));
        rec.partition_key = 0;
        assert!(matches!(
            s.insert_record(rec),
            Err(StoreError::PartitionInconsistent {
                found: 0,
                expected: 1,
                ..
            })
        ));
    }

    #[test]
    fn save_and_open_roundtrip() {
        let mut s = store_with_device();
        for k in 0..100 {
            s.insert(&reading(1, k * 3_600_000)).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        assert!(dir.path().join("sensing/4.csv").exists());
        let back = TelemetryStore::open(dir.path()).unwrap();
        assert!(s.same_contents(&back));
        assert_eq!(back.insert_probe_id(), 101);
    }

    impl TelemetryStore {
        fn insert_probe_id(&self) -> u64 {
            self.next_id
        }
    }
}
