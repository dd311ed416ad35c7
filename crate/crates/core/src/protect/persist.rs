//! On-disk layout of a protected set:
//!
//! ```text
//! <dir>/main.sealtable
//! <dir>/secure/meta.sealmeta
//! <dir>/secure/<table_id>.sealtable
//! ```
//!
//! Files under `secure/` are created owner-only where the platform allows.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{MetaError, ProtectError, ProtectedPair, SearchTable, SecureMetadata};
use crate::storage::{read_table_data, write_table_data, StorageError, Table};

pub const MAIN_FILE: &str = "main.sealtable";
pub const SECURE_DIR: &str = "secure";
pub const META_FILE: &str = "meta.sealmeta";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Storage { path: PathBuf, source: StorageError },
    #[error("{}: {source}", path.display())]
    Meta { path: PathBuf, source: MetaError },
    #[error("{}: {source}", path.display())]
    Protect { path: PathBuf, source: ProtectError },
}

impl PersistError {
    pub fn path(&self) -> &Path {
        match self {
            Self::Io { path, .. } | Self::Storage { path, .. } | Self::Meta { path, .. } | Self::Protect { path, .. } => {
                path
            }
        }
    }
}

pub fn main_path(dir: &Path) -> PathBuf {
    dir.join(MAIN_FILE)
}

pub fn meta_path(dir: &Path) -> PathBuf {
    dir.join(SECURE_DIR).join(META_FILE)
}

pub fn search_path(dir: &Path, table_id: &str) -> PathBuf {
    dir.join(SECURE_DIR).join(format!("{table_id}.sealtable"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path, private: bool) -> Result<BufWriter<File>, PersistError> {
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    if private {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    #[cfg(not(unix))]
    let _ = private;
    options.open(path).map(BufWriter::new).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>, PersistError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn write_with<F>(path: &Path, private: bool, body: F) -> Result<(), PersistError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), PersistError>,
{
    let mut out = create(path, private)?;
    body(&mut out)?;
    out.flush().map_err(io_err(path))
}

/// Writes the pair under `dir`, creating directories as needed. Returns the
/// paths written.
pub fn save_pair(pair: &ProtectedPair, dir: &Path) -> Result<Vec<PathBuf>, PersistError> {
    let secure = dir.join(SECURE_DIR);
    fs::create_dir_all(&secure).map_err(io_err(&secure))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(&secure, fs::Permissions::from_mode(0o700)).map_err(io_err(&secure))?;
    }

    let mut written = Vec::new();
    let path = main_path(dir);
    write_with(&path, false, |out| {
        pair.main().save(out).map_err(|source| PersistError::Storage {
            path: path.clone(),
            source,
        })
    })?;
    written.push(path);

    for entry in pair.meta().aliases() {
        let table = pair.search_table(&entry.column).expect("assembled pair has every search table");
        let path = search_path(dir, &entry.table_id);
        write_with(&path, true, |out| write_table_data(&table.to_data(), out).map_err(io_err(&path)))?;
        written.push(path);
    }

    let path = meta_path(dir);
    write_with(&path, true, |out| pair.meta().save(out).map_err(io_err(&path)))?;
    written.push(path);
    Ok(written)
}

/// Reads only the metadata, so callers can authorize before touching
/// search tables.
pub fn load_meta(dir: &Path) -> Result<SecureMetadata, PersistError> {
    let path = meta_path(dir);
    SecureMetadata::load(&mut open(&path)?).map_err(|source| PersistError::Meta { path, source })
}

pub fn load_main(dir: &Path) -> Result<Table, PersistError> {
    let path = main_path(dir);
    Table::load(&mut open(&path)?).map_err(|source| PersistError::Storage { path, source })
}

pub fn load_search_tables(dir: &Path, meta: &SecureMetadata) -> Result<BTreeMap<String, SearchTable>, PersistError> {
    let mut tables = BTreeMap::new();
    for entry in meta.aliases() {
        let path = search_path(dir, &entry.table_id);
        let data = read_table_data(&mut open(&path)?).map_err(|source| PersistError::Storage {
            path: path.clone(),
            source,
        })?;
        let table = SearchTable::from_data(data).map_err(|source| PersistError::Protect {
            path: path.clone(),
            source,
        })?;
        tables.insert(entry.column.clone(), table);
    }
    Ok(tables)
}

/// Loads the main table and, if `with_search` is set, the search tables,
/// around an already-loaded `meta`.
pub fn load_pair_with(dir: &Path, meta: SecureMetadata, with_search: bool) -> Result<ProtectedPair, PersistError> {
    let main = load_main(dir)?;
    let search = if with_search {
        load_search_tables(dir, &meta)?
    } else {
        BTreeMap::new()
    };
    let assembled = if with_search {
        ProtectedPair::assemble(main, search, meta)
    } else {
        Ok(ProtectedPair::without_search_tables(main, meta))
    };
    assembled.map_err(|source| PersistError::Protect {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn load_pair(dir: &Path) -> Result<ProtectedPair, PersistError> {
    let meta = load_meta(dir)?;
    load_pair_with(dir, meta, true)
}
