//! JSON dataset manifests: song ids, stem file paths keyed by raw label, an
//! optional stored mixture, taxonomy overrides and provenance.
//!
//! ```json
//! {
//!   "version": 1,
//!   "songs": [
//!     {"id": "song-a", "stems": {"vocals": "a/vocals.wav", "guitar": ["a/gtr1.wav", "a/gtr2.wav"]},
//!      "mixture": "a/mixture.wav"}
//!   ],
//!   "taxonomy": {"synth": "other"},
//!   "provenance": {"generator": "manual", "seed": null}
//! }
//! ```
//!
//! Paths are relative to the manifest file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use mdxkit_core::dataset::{DatasetError, RawSong, RawStem, Song, Taxonomy};
use mdxkit_core::SourceClass;
use serde::{Deserialize, Serialize};

use crate::wav::{load_wav, save_wav, LoadOptions, WavError, WavFormat};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest schema error: {0}")]
    SchemaError(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("duplicate song id {0:?}")]
    DuplicateSongId(String),
    #[error("unknown song id {0:?}")]
    UnknownSong(String),
    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: WavError },
    #[error("song {song:?}: {source}")]
    Dataset { song: String, source: DatasetError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One path or several paths sharing a label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StemPaths {
    One(String),
    Many(Vec<String>),
}

impl StemPaths {
    pub fn paths(&self) -> &[String] {
        match self {
            Self::One(p) => std::slice::from_ref(p),
            Self::Many(ps) => ps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongEntry {
    pub id: String,
    pub stems: BTreeMap<String, StemPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<String>,
}

impl SongEntry {
    /// `(label, path)` pairs in a fixed order: labels sorted, paths in listed
    /// order. Stem indices in corruption logs refer to this order.
    pub fn stem_paths(&self) -> Vec<(&str, &str)> {
        self.stems
            .iter()
            .flat_map(|(label, paths)| paths.paths().iter().map(move |p| (label.as_str(), p.as_str())))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestProvenance {
    pub generator: String,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_manifest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub version: u32,
    pub songs: Vec<SongEntry>,
    #[serde(default)]
    pub taxonomy: BTreeMap<String, SourceClass>,
    #[serde(default)]
    pub provenance: ManifestProvenance,
}

/// A validated manifest. Audio is loaded per song on demand.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub file: ManifestFile,
    pub taxonomy: Taxonomy,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ManifestError::MissingFile(path.to_path_buf()),
            _ => ManifestError::Io(e),
        })?;
        let file: ManifestFile = serde_json::from_str(&text).map_err(|e| ManifestError::SchemaError(e.to_string()))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_file(file, root)
    }

    pub fn from_file(file: ManifestFile, root: PathBuf) -> Result<Self, ManifestError> {
        if file.version != MANIFEST_VERSION {
            return Err(ManifestError::SchemaError(format!("unsupported version {}", file.version)));
        }
        // manifest entries extend the default taxonomy
        let mut taxonomy = Taxonomy::default();
        for (label, class) in &file.taxonomy {
            taxonomy.insert(label, *class);
        }
        let mut ids = BTreeSet::new();
        for song in &file.songs {
            if song.id.is_empty() {
                return Err(ManifestError::SchemaError("empty song id".into()));
            }
            if !ids.insert(song.id.as_str()) {
                return Err(ManifestError::DuplicateSongId(song.id.clone()));
            }
            if song.stem_paths().is_empty() {
                return Err(ManifestError::SchemaError(format!("song {:?} has no stems", song.id)));
            }
            for (label, path) in song.stem_paths() {
                taxonomy.resolve(label).map_err(|e| ManifestError::SchemaError(format!("song {:?}: {e}", song.id)))?;
                check_exists(&root.join(path))?;
            }
            if let Some(m) = &song.mixture {
                check_exists(&root.join(m))?;
            }
        }
        Ok(Self { root, file, taxonomy })
    }

    pub fn songs(&self) -> &[SongEntry] {
        &self.file.songs
    }

    pub fn entry(&self, id: &str) -> Result<&SongEntry, ManifestError> {
        self.file.songs.iter().find(|s| s.id == id).ok_or_else(|| ManifestError::UnknownSong(id.into()))
    }

    fn read(&self, rel: &str) -> Result<mdxkit_core::AudioBuffer, ManifestError> {
        let path = self.root.join(rel);
        load_wav(&path, LoadOptions::default()).map_err(|source| ManifestError::Wav { path, source })
    }

    pub fn load_raw_song(&self, entry: &SongEntry) -> Result<RawSong, ManifestError> {
        let stems = entry
            .stem_paths()
            .into_iter()
            .map(|(label, path)| Ok(RawStem::new(label, self.read(path)?)))
            .collect::<Result<_, ManifestError>>()?;
        Ok(RawSong { id: entry.id.clone(), stems })
    }

    /// Groups the song's stems into the four classes and attaches the stored
    /// mixture, if any.
    pub fn load_song(&self, entry: &SongEntry) -> Result<Song, ManifestError> {
        let raw = self.load_raw_song(entry)?;
        let dataset_err = |source| ManifestError::Dataset { song: entry.id.clone(), source };
        let mut song = raw.group(&self.taxonomy).map_err(dataset_err)?;
        if let Some(m) = &entry.mixture {
            let mixture = self.read(m)?;
            mixture.expect_len(song.stems.len()).map_err(|e| dataset_err(DatasetError::Audio(e)))?;
            song.mixture = Some(mixture);
        }
        Ok(song)
    }
}

fn check_exists(path: &Path) -> Result<(), ManifestError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ManifestError::MissingFile(path.to_path_buf()))
    }
}

/// Directory-safe form of a song id, prefixed by its position so distinct
/// ids never collide.
pub fn song_dir_name(index: usize, id: &str) -> String {
    let safe: String =
        id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect();
    format!("{index:04}_{safe}")
}

fn write_manifest(dir: &Path, file: &ManifestFile) -> Result<PathBuf, ManifestError> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(file).map_err(|e| ManifestError::SchemaError(e.to_string()))?;
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}

fn save(dir: &Path, rel: &str, audio: &mdxkit_core::AudioBuffer) -> Result<(), ManifestError> {
    let path = dir.join(rel);
    save_wav(audio, &path, WavFormat::Float32).map_err(|source| ManifestError::Wav { path, source })
}

/// Writes raw (instrument-level) songs as float32 WAV files plus a manifest.
pub fn write_raw_dataset(
    dir: &Path,
    songs: &[RawSong],
    taxonomy: BTreeMap<String, SourceClass>,
    provenance: ManifestProvenance,
) -> Result<PathBuf, ManifestError> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(songs.len());
    for (i, song) in songs.iter().enumerate() {
        let sub = song_dir_name(i, &song.id);
        let mut stems: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (k, stem) in song.stems.iter().enumerate() {
            let rel = format!("{sub}/stem{k:02}.wav");
            save(dir, &rel, &stem.audio)?;
            stems.entry(stem.label.clone()).or_default().push(rel);
        }
        let stems = stems
            .into_iter()
            .map(|(label, mut paths)| {
                let paths = if paths.len() == 1 { StemPaths::One(paths.remove(0)) } else { StemPaths::Many(paths) };
                (label, paths)
            })
            .collect();
        entries.push(SongEntry { id: song.id.clone(), stems, mixture: None });
    }
    let file = ManifestFile { version: MANIFEST_VERSION, songs: entries, taxonomy, provenance };
    write_manifest(dir, &file)
}

/// Writes four-class songs (one file per class, plus the stored mixture when
/// present) and a manifest.
pub fn write_dataset(dir: &Path, songs: &[Song], provenance: ManifestProvenance) -> Result<PathBuf, ManifestError> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(songs.len());
    for (i, song) in songs.iter().enumerate() {
        let sub = song_dir_name(i, &song.id);
        let mut stems = BTreeMap::new();
        for (class, audio) in song.stems.iter() {
            let rel = format!("{sub}/{class}.wav");
            save(dir, &rel, audio)?;
            stems.insert(class.name().to_string(), StemPaths::One(rel));
        }
        let mixture = match &song.mixture {
            Some(m) => {
                let rel = format!("{sub}/mixture.wav");
                save(dir, &rel, m)?;
                Some(rel)
            }
            None => None,
        };
        entries.push(SongEntry { id: song.id.clone(), stems, mixture });
    }
    let file = ManifestFile { version: MANIFEST_VERSION, songs: entries, taxonomy: BTreeMap::new(), provenance };
    write_manifest(dir, &file)
}

/// Reads `<dir>/<song_id>/<class>.wav` for all four classes, the layout used
/// for separator outputs.
pub fn load_estimates(dir: &Path, song_id: &str) -> Result<mdxkit_core::Stems, ManifestError> {
    let song_dir = dir.join(song_id);
    let buffers = SourceClass::ALL.map(|c| {
        let path = song_dir.join(format!("{c}.wav"));
        check_exists(&path)?;
        load_wav(&path, LoadOptions::default()).map_err(|source| ManifestError::Wav { path, source })
    });
    let [b, d, o, v] = buffers;
    mdxkit_core::Stems::new([b?, d?, o?, v?])
        .map_err(|e| ManifestError::Dataset { song: song_id.into(), source: DatasetError::Audio(e) })
}

/// Writes estimates in the layout read by [`load_estimates`].
pub fn save_estimates(dir: &Path, song_id: &str, stems: &mdxkit_core::Stems) -> Result<(), ManifestError> {
    for (class, audio) in stems.iter() {
        save(dir, &format!("{song_id}/{class}.wav"), audio)?;
    }
    Ok(())
}
