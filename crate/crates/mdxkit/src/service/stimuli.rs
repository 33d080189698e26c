//! Rendered listening-test clips and the server-side index that maps opaque
//! stimulus ids to models.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mdxkit_core::dataset::Song;
use mdxkit_core::rating::{select_segments, SegmentConfig, Stimulus};
use mdxkit_core::separation::residual;
use mdxkit_core::{SourceClass, Stems};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ServiceError;
use crate::wav::{load_wav, save_wav, LoadOptions, WavFormat};

pub const INDEX_FILE: &str = "stimuli.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipKind {
    Extraction,
    Residual,
    /// The mixture excerpt, shared by all models.
    Reference,
}

impl From<Stimulus> for ClipKind {
    fn from(s: Stimulus) -> Self {
        match s {
            Stimulus::Extraction => Self::Extraction,
            Stimulus::Residual => Self::Residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusEntry {
    pub id: String,
    pub song_id: String,
    /// Segment number within the song.
    pub segment: usize,
    pub start: usize,
    pub end: usize,
    pub class: Option<SourceClass>,
    pub kind: ClipKind,
    pub model: Option<String>,
    /// Relative to the index file.
    pub path: String,
}

impl StimulusEntry {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// One excerpt used in the test; plans refer to these by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSegment {
    pub song_id: String,
    pub segment: usize,
    pub start: usize,
    pub end: usize,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusIndex {
    pub models: Vec<String>,
    pub segments: Vec<TestSegment>,
    pub stimuli: BTreeMap<String, StimulusEntry>,
    #[serde(skip)]
    root: PathBuf,
    #[serde(skip)]
    lookup: BTreeMap<(String, usize, SourceClass, ClipKind), String>,
}

impl StimulusIndex {
    fn new(
        models: Vec<String>,
        segments: Vec<TestSegment>,
        stimuli: BTreeMap<String, StimulusEntry>,
        root: PathBuf,
    ) -> Self {
        let mut index = Self { models, segments, stimuli, root, lookup: BTreeMap::new() };
        index.rebuild_lookup();
        index
    }

    fn rebuild_lookup(&mut self) {
        let positions: BTreeMap<(&str, usize), usize> =
            self.segments.iter().enumerate().map(|(i, s)| ((s.song_id.as_str(), s.segment), i)).collect();
        self.lookup = self
            .stimuli
            .values()
            .filter_map(|e| {
                let (model, class) = (e.model.clone()?, e.class?);
                let pos = *positions.get(&(e.song_id.as_str(), e.segment))?;
                Some(((model, pos, class, e.kind), e.id.clone()))
            })
            .collect();
    }

    pub fn load(dir: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(dir.join(INDEX_FILE))?;
        let mut index: Self = serde_json::from_str(&text).map_err(|e| ServiceError::InvalidStimulus(e.to_string()))?;
        index.root = dir.to_path_buf();
        index.rebuild_lookup();
        Ok(index)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// The clip for a model on a test segment.
    pub fn clip(
        &self,
        model: &str,
        segment: usize,
        class: SourceClass,
        kind: Stimulus,
    ) -> Result<&StimulusEntry, ServiceError> {
        self.lookup
            .get(&(model.to_string(), segment, class, kind.into()))
            .and_then(|id| self.stimuli.get(id))
            .ok_or_else(|| ServiceError::InvalidStimulus(format!("no {kind:?} clip for a model on segment {segment}")))
    }

    /// Reads a clip and checks it is a finite buffer of the expected length.
    pub fn read_clip(&self, id: &str) -> Result<Vec<u8>, ServiceError> {
        let entry = self.stimuli.get(id).ok_or_else(|| ServiceError::UnknownStimulus(id.into()))?;
        let path = self.root.join(&entry.path);
        let bytes = std::fs::read(&path)?;
        let audio = crate::wav::decode_wav(&bytes, LoadOptions::default())
            .map_err(|e| ServiceError::InvalidStimulus(format!("{id}: {e}")))?;
        audio.expect_len(entry.len()).map_err(|e| ServiceError::InvalidStimulus(format!("{id}: {e}")))?;
        Ok(bytes)
    }
}

fn opaque_id(secret: u64, parts: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(secret.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Renders every clip of a listening test.
///
/// For each song, `segments.count` excerpts are chosen from the mixture.
/// For each model, excerpt and class an extraction clip (the estimate) and a
/// residual clip (mixture minus estimate) are written, plus one reference
/// clip per excerpt. `estimates[m][s]` holds model `m`'s separation of song
/// `s`. Clip ids are derived from `secret` and carry no model information.
pub fn prepare_stimuli(
    models: &[(String, Vec<Stems>)],
    songs: &[Song],
    segments: &SegmentConfig,
    out_dir: &Path,
    secret: u64,
) -> Result<StimulusIndex, ServiceError> {
    if models.is_empty() || songs.is_empty() {
        return Err(ServiceError::InvalidStimulus("need at least one model and one song".into()));
    }
    for (name, est) in models {
        if est.len() != songs.len() {
            return Err(ServiceError::InvalidStimulus(format!(
                "model {name:?} has estimates for {} of {} songs",
                est.len(),
                songs.len()
            )));
        }
    }
    std::fs::create_dir_all(out_dir.join("clips"))?;
    let mut test_segments = Vec::new();
    let mut stimuli = BTreeMap::new();
    let mut write = |entry: StimulusEntry, audio: &mdxkit_core::AudioBuffer| -> Result<(), ServiceError> {
        save_wav(audio, &out_dir.join(&entry.path), WavFormat::Float32)?;
        stimuli.insert(entry.id.clone(), entry);
        Ok(())
    };
    for (s, song) in songs.iter().enumerate() {
        let mixture = song.mixture();
        let windows = select_segments(&mixture, segments)?;
        for (k, &(start, end)) in windows.iter().enumerate() {
            let seg_text = k.to_string();
            let ref_id = opaque_id(secret, &["reference", &song.id, &seg_text]);
            let mix_clip = mixture.slice(start, end);
            let base = StimulusEntry {
                id: ref_id.clone(),
                song_id: song.id.clone(),
                segment: k,
                start,
                end,
                class: None,
                kind: ClipKind::Reference,
                model: None,
                path: format!("clips/{ref_id}.wav"),
            };
            write(base.clone(), &mix_clip)?;
            test_segments.push(TestSegment { song_id: song.id.clone(), segment: k, start, end, reference: ref_id });
            for (model, estimates) in models {
                let est = &estimates[s];
                est[SourceClass::Bass].expect_len(mixture.len())?;
                for class in SourceClass::ALL {
                    let extraction = est[class].slice(start, end);
                    let rest = residual(&mix_clip, &extraction)?;
                    for (kind, audio) in [(ClipKind::Extraction, &extraction), (ClipKind::Residual, &rest)] {
                        let kind_text = format!("{kind:?}");
                        let id = opaque_id(secret, &[model, &song.id, &seg_text, class.name(), &kind_text]);
                        let entry = StimulusEntry {
                            id: id.clone(),
                            class: Some(class),
                            kind,
                            model: Some(model.clone()),
                            path: format!("clips/{id}.wav"),
                            ..base.clone()
                        };
                        write(entry, audio)?;
                    }
                }
            }
        }
    }
    let names = models.iter().map(|(m, _)| m.clone()).collect();
    let index = StimulusIndex::new(names, test_segments, stimuli, out_dir.to_path_buf());
    let text = serde_json::to_string_pretty(&index).map_err(|e| ServiceError::InvalidStimulus(e.to_string()))?;
    std::fs::write(out_dir.join(INDEX_FILE), text + "\n")?;
    Ok(index)
}

/// Loads every clip of a stimulus directory back, for checks.
pub fn load_clip(index: &StimulusIndex, id: &str) -> Result<mdxkit_core::AudioBuffer, ServiceError> {
    let entry = index.stimuli.get(id).ok_or_else(|| ServiceError::UnknownStimulus(id.into()))?;
    Ok(load_wav(&index.root.join(&entry.path), LoadOptions::default())?)
}
