//! On-disk formats shared by every command: map directories, episode files, JSON
//! and JSONL helpers, and all-or-nothing writes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use helpnav_core::env::{EpisodeSpec, GridMap, NavEnv};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const MAP_EXTENSION: &str = "map";

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so readers
/// see either the old file or the complete new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| anyhow!("{} is not a file path", path.display()))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, to_jsonl(items)?.as_bytes())
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn read_map(path: &Path) -> Result<GridMap> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| anyhow!("map file name {} is not valid UTF-8", path.display()))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    GridMap::parse(id, &text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes `map` as `<dir>/<id>.map`.
pub fn write_map(dir: &Path, map: &GridMap) -> Result<PathBuf> {
    let path = dir.join(format!("{}.{MAP_EXTENSION}", map.id()));
    write_atomic(&path, map.to_text().as_bytes())?;
    Ok(path)
}

/// Every `*.map` file in `dir`, keyed by file stem.
pub fn read_map_dir(dir: &Path) -> Result<BTreeMap<String, GridMap>> {
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut maps = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(MAP_EXTENSION) {
            let map = read_map(&path)?;
            maps.insert(map.id().to_string(), map);
        }
    }
    if maps.is_empty() {
        bail!("no .{MAP_EXTENSION} files in {}", dir.display());
    }
    Ok(maps)
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeSpec>> {
    let episodes: Vec<EpisodeSpec> = read_jsonl(path)?;
    if episodes.is_empty() {
        bail!("{} contains no episodes", path.display());
    }
    Ok(episodes)
}

/// Binds each episode to its map.
pub fn bind_episodes(maps: &BTreeMap<String, GridMap>, episodes: &[EpisodeSpec]) -> Result<Vec<NavEnv>> {
    episodes
        .iter()
        .map(|spec| {
            let map = maps
                .get(&spec.map_id)
                .ok_or_else(|| anyhow!("episode refers to unknown map {:?}", spec.map_id))?;
            NavEnv::new(map.clone(), spec.clone()).with_context(|| format!("episode on map {:?}", spec.map_id))
        })
        .collect()
}

/// Loads the maps in `map_dir` and binds the episodes listed in `episodes`.
pub fn load_envs(map_dir: &Path, episodes: &Path) -> Result<Vec<NavEnv>> {
    let maps = read_map_dir(map_dir)?;
    bind_episodes(&maps, &read_episodes(episodes)?)
}

/// Milliseconds since the Unix epoch, used for trace timestamps.
pub fn now_timestamp() -> String {
    let ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    ms.to_string()
}
