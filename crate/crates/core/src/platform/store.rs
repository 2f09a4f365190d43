//! File-backed function store: one TOML document plus one JSON metadata file
//! per function, under `<data-dir>/functions/`. Rejected entries keep their
//! violation list.

use super::PlatformError;
use crate::ids::{FunctionId, UserId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FunctionStatus {
    Active,
    Rejected { reasons: Vec<String> },
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: FunctionId,
    pub owner: UserId,
    pub spec_text: String,
    pub status: FunctionStatus,
    /// Submission order; replays deterministically.
    pub seq: u64,
}

#[derive(Debug)]
pub struct FunctionStore {
    dir: PathBuf,
    records: BTreeMap<FunctionId, FunctionRecord>,
}

impl FunctionStore {
    pub fn open(dir: &std::path::Path) -> Result<Self, PlatformError> {
        std::fs::create_dir_all(dir)?;
        let mut records = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = std::fs::read_to_string(&path)?;
            let record: FunctionRecord = serde_json::from_str(&text).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("corrupt function record {}: {e}", path.display()),
                )
            })?;
            records.insert(record.id.clone(), record);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            records,
        })
    }

    pub fn contains(&self, id: &FunctionId) -> bool {
        self.records.contains_key(id)
    }

    pub fn get(&self, id: &FunctionId) -> Option<&FunctionRecord> {
        self.records.get(id)
    }

    /// Active records in submission order.
    pub fn active_records(&self) -> Vec<&FunctionRecord> {
        let mut active: Vec<&FunctionRecord> = self
            .records
            .values()
            .filter(|r| r.status == FunctionStatus::Active)
            .collect();
        active.sort_by_key(|r| r.seq);
        active
    }

    pub fn active_count_for(&self, user: &UserId) -> usize {
        self.records
            .values()
            .filter(|r| r.status == FunctionStatus::Active && &r.owner == user)
            .count()
    }

    /// Whether the user has ever submitted anything (any status).
    pub fn knows_user(&self, user: &UserId) -> bool {
        self.records.values().any(|r| &r.owner == user)
    }

    pub fn insert(&mut self, record: FunctionRecord) -> Result<(), PlatformError> {
        self.persist(&record)?;
        self.records.insert(record.id.clone(), record);
        Ok(())
    }

    pub fn set_status(
        &mut self,
        id: &FunctionId,
        status: FunctionStatus,
    ) -> Result<(), PlatformError> {
        let record = self
            .records
            .get_mut(id)
            .ok_or_else(|| PlatformError::UnknownFunction(id.clone()))?;
        record.status = status;
        let record = record.clone();
        self.persist(&record)
    }

    fn persist(&self, record: &FunctionRecord) -> Result<(), PlatformError> {
        let sanitized: String = record
            .id
            .as_str()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let json = serde_json::to_string_pretty(record).expect("record serializes");
        std::fs::write(self.dir.join(format!("{sanitized}.json")), json)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FunctionStore::open(dir.path()).unwrap();
        store
            .insert(FunctionRecord {
                id: FunctionId::new("f1"),
                owner: UserId::new("ann"),
                spec_text: "id = \"f1\"".into(),
                status: FunctionStatus::Active,
                seq: 1,
            })
            .unwrap();
        store
            .insert(FunctionRecord {
                id: FunctionId::new("f2"),
                owner: UserId::new("bob"),
                spec_text: "junk".into(),
                status: FunctionStatus::Rejected {
                    reasons: vec!["syntax error at byte 0: bad".into()],
                },
                seq: 2,
            })
            .unwrap();
        let reopened = FunctionStore::open(dir.path()).unwrap();
        assert_eq!(reopened.active_records().len(), 1);
        assert!(reopened.knows_user(&UserId::new("bob")));
        match &reopened.get(&FunctionId::new("f2")).unwrap().status {
            FunctionStatus::Rejected { reasons } => assert_eq!(reasons.len(), 1),
            other => panic!("expected rejected, got {other:?}"),
        }
    }

    #[test]
    fn cancelled_functions_drop_out_of_active_set() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = FunctionStore::open(dir.path()).unwrap();
        store
            .insert(FunctionRecord {
                id: FunctionId::new("f1"),
                owner: UserId::new("ann"),
                spec_text: String::new(),
                status: FunctionStatus::Active,
                seq: 1,
            })
            .unwrap();
        store
            .set_status(&FunctionId::new("f1"), FunctionStatus::Cancelled)
            .unwrap();
        assert!(store.active_records().is_empty());
        assert_eq!(store.active_count_for(&UserId::new("ann")), 0);
    }
}
