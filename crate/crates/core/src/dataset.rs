//! Stem taxonomy, four-class grouping and mixture consistency.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError};

/// The four challenge classes, ordered as the leaderboard columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceClass {
    Bass,
    Drums,
    Other,
    Vocals,
}

impl SourceClass {
    pub const ALL: [SourceClass; 4] = [Self::Bass, Self::Drums, Self::Other, Self::Vocals];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bass => "bass",
            Self::Drums => "drums",
            Self::Other => "other",
            Self::Vocals => "vocals",
        }
    }
}

impl fmt::Display for SourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceClass {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_label(s).as_str() {
            "bass" => Ok(Self::Bass),
            "drums" => Ok(Self::Drums),
            "other" => Ok(Self::Other),
            "vocals" => Ok(Self::Vocals),
            _ => Err(DatasetError::UnknownLabel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("label {0:?} is not in the taxonomy")]
    UnknownLabel(String),
    #[error("song has no stems")]
    NoStems,
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// One buffer per [`SourceClass`], all of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Stems([AudioBuffer; 4]);

impl Stems {
    pub fn new(buffers: [AudioBuffer; 4]) -> Result<Self, AudioError> {
        let len = buffers[0].len();
        for b in &buffers[1..] {
            b.expect_len(len)?;
        }
        Ok(Self(buffers))
    }

    pub fn silence(len: usize) -> Self {
        Self(core::array::from_fn(|_| AudioBuffer::silence(len)))
    }

    /// Builds the set from a closure, checking lengths.
    pub fn try_from_fn(mut f: impl FnMut(SourceClass) -> Result<AudioBuffer, AudioError>) -> Result<Self, AudioError> {
        let [b, d, o, v] = SourceClass::ALL;
        Self::new([f(b)?, f(d)?, f(o)?, f(v)?])
    }

    pub fn len(&self) -> usize {
        self.0[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (SourceClass, &AudioBuffer)> {
        SourceClass::ALL.into_iter().zip(self.0.iter())
    }

    pub fn buffers(&self) -> &[AudioBuffer; 4] {
        &self.0
    }

    pub fn into_buffers(self) -> [AudioBuffer; 4] {
        self.0
    }

    /// Sample-wise sum of the four stems.
    pub fn mixture(&self) -> AudioBuffer {
        let mut mix = self.0[0].clone();
        for b in &self.0[1..] {
            mix.add_assign(b).expect("stems share a length");
        }
        mix
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(core::array::from_fn(|i| self.0[i].scaled(factor)))
    }

    pub fn map(&self, mut f: impl FnMut(SourceClass, &AudioBuffer) -> AudioBuffer) -> Result<Self, AudioError> {
        Self::try_from_fn(|c| Ok(f(c, &self[c])))
    }
}

impl Index<SourceClass> for Stems {
    type Output = AudioBuffer;

    fn index(&self, class: SourceClass) -> &AudioBuffer {
        &self.0[class.index()]
    }
}

impl IndexMut<SourceClass> for Stems {
    fn index_mut(&mut self, class: SourceClass) -> &mut AudioBuffer {
        &mut self.0[class.index()]
    }
}

/// Lower-cased, trimmed, with spaces and hyphens folded to underscores.
pub fn normalize_label(label: &str) -> String {
    label
        .trim()
        .chars()
        .map(|c| match c {
            ' ' | '-' => '_',
            c => c.to_ascii_lowercase(),
        })
        .collect()
}

/// Map from instrument labels to challenge classes.
///
/// Lookups normalize the label first. The four class names always resolve to
/// themselves; anything else must be listed explicitly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Taxonomy {
    entries: BTreeMap<String, SourceClass>,
}

/// Instrument labels of the shipped ten-instrument taxonomy.
pub const DEFAULT_INSTRUMENTS: [&str; 10] =
    ["vocals", "bass", "drums", "guitar", "piano", "keys", "strings", "winds", "percussion", "fx"];

impl Default for Taxonomy {
    /// The ten-instrument taxonomy. Percussion goes with drums; every pitched
    /// instrument other than bass and voice goes to `other`.
    fn default() -> Self {
        let mut t = Self::empty();
        for label in DEFAULT_INSTRUMENTS {
            let class = match label {
                "vocals" => SourceClass::Vocals,
                "bass" => SourceClass::Bass,
                "drums" | "percussion" => SourceClass::Drums,
                _ => SourceClass::Other,
            };
            t.insert(label, class);
        }
        t
    }
}

impl Taxonomy {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, label: &str, class: SourceClass) {
        self.entries.insert(normalize_label(label), class);
    }

    pub fn resolve(&self, label: &str) -> Result<SourceClass, DatasetError> {
        let key = normalize_label(label);
        if let Some(&class) = self.entries.get(&key) {
            return Ok(class);
        }
        key.parse().map_err(|_| DatasetError::UnknownLabel(label.to_string()))
    }

    pub fn entries(&self) -> &BTreeMap<String, SourceClass> {
        &self.entries
    }
}

/// An instrument recording with its (possibly wrong) label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStem {
    pub label: String,
    pub audio: AudioBuffer,
}

impl RawStem {
    pub fn new(label: impl Into<String>, audio: AudioBuffer) -> Self {
        Self { label: label.into(), audio }
    }
}

/// A song at the instrument level, before grouping into four classes.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSong {
    pub id: String,
    pub stems: Vec<RawStem>,
}

/// A song at the four-class level.
#[derive(Debug, Clone, PartialEq)]
pub struct Song {
    pub id: String,
    pub stems: Stems,
    /// Stored mixture, when the dataset ships one separately from the stems.
    pub mixture: Option<AudioBuffer>,
}

impl Song {
    pub fn new(id: impl Into<String>, stems: Stems) -> Self {
        Self { id: id.into(), stems, mixture: None }
    }

    /// The stored mixture, or the stem sum when none is stored.
    pub fn mixture(&self) -> AudioBuffer {
        self.mixture.clone().unwrap_or_else(|| self.stems.mixture())
    }
}

/// Sums raw stems into the four classes; classes without members are silent.
pub fn group_stems(raw: &[RawStem], taxonomy: &Taxonomy) -> Result<Stems, DatasetError> {
    let first = raw.first().ok_or(DatasetError::NoStems)?;
    let mut stems = Stems::silence(first.audio.len());
    for stem in raw {
        let class = taxonomy.resolve(&stem.label)?;
        stems[class].add_assign(&stem.audio)?;
    }
    Ok(stems)
}

impl RawSong {
    pub fn group(&self, taxonomy: &Taxonomy) -> Result<Song, DatasetError> {
        Ok(Song::new(self.id.clone(), group_stems(&self.stems, taxonomy)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub consistent: bool,
    pub max_error: f64,
}

/// Compares the stored mixture against the stem sum.
///
/// Songs without a stored mixture are consistent by definition. Length
/// mismatches are reported as inconsistent with an infinite error.
pub fn check_mixture_consistency(song: &Song, tolerance: f64) -> Consistency {
    let Some(stored) = &song.mixture else {
        return Consistency { consistent: true, max_error: 0.0 };
    };
    match stored.max_abs_diff(&song.stems.mixture()) {
        Ok(max_error) => Consistency { consistent: max_error <= tolerance, max_error },
        Err(_) => Consistency { consistent: false, max_error: f64::INFINITY },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tone(len: usize, k: f64) -> AudioBuffer {
        AudioBuffer::from_fn(len, |ch, n| libm::sin(k * n as f64 + ch as f64))
    }

    #[test]
    fn one_stem_per_class_is_identity() {
        let raw: Vec<RawStem> = SourceClass::ALL
            .iter()
            .enumerate()
            .map(|(i, c)| RawStem::new(c.name(), tone(100, 0.1 * (i + 1) as f64)))
            .collect();
        let stems = group_stems(&raw, &Taxonomy::default()).unwrap();
        for (i, c) in SourceClass::ALL.iter().enumerate() {
            assert_eq!(stems[*c], raw[i].audio);
        }
    }

    #[test]
    fn guitars_and_piano_sum_into_other() {
        let g1 = tone(64, 0.2);
        let g2 = tone(64, 0.3);
        let p = tone(64, 0.7);
        let raw = vec![
            RawStem::new("guitar", g1.clone()),
            RawStem::new("Guitar", g2.clone()),
            RawStem::new("piano", p.clone()),
        ];
        let stems = group_stems(&raw, &Taxonomy::default()).unwrap();
        let mut expected = vec![0.0; 64];
        for n in 0..64 {
            expected[n] = g1.left()[n] + g2.left()[n] + p.left()[n];
        }
        assert_eq!(stems[SourceClass::Other].left(), expected.as_slice());
        assert!(stems[SourceClass::Vocals].is_silent());
    }

    #[test]
    fn unknown_label_is_an_error() {
        let raw = vec![RawStem::new("el_gtr", tone(8, 0.1))];
        assert_eq!(group_stems(&raw, &Taxonomy::default()), Err(DatasetError::UnknownLabel("el_gtr".into())));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let raw = vec![RawStem::new("bass", tone(8, 0.1)), RawStem::new("drums", tone(9, 0.1))];
        assert!(matches!(
            group_stems(&raw, &Taxonomy::default()),
            Err(DatasetError::Audio(AudioError::LengthMismatch { .. }))
        ));
    }

    #[test]
    fn taxonomy_is_total_over_defaults() {
        let t = Taxonomy::default();
        for label in DEFAULT_INSTRUMENTS {
            assert!(t.resolve(label).is_ok());
        }
        assert_eq!(t.resolve("Percussion").unwrap(), SourceClass::Drums);
        assert_eq!(t.resolve("other").unwrap(), SourceClass::Other);
    }

    #[test]
    fn consistency_exact_and_perturbed() {
        let stems = Stems::try_from_fn(|c| Ok(tone(50, 0.1 + c.index() as f64))).unwrap();
        let mut song = Song::new("s", stems.clone());
        song.mixture = Some(stems.mixture());
        let c = check_mixture_consistency(&song, 1e-6);
        assert!(c.consistent);
        assert_eq!(c.max_error, 0.0);

        let mut left = stems.mixture().left().to_vec();
        left[10] += 1e-3;
        song.mixture = Some(AudioBuffer::new(left, stems.mixture().right().to_vec()).unwrap());
        let c = check_mixture_consistency(&song, 1e-6);
        assert!(!c.consistent);
        assert!((c.max_error - 1e-3).abs() < 1e-9);
    }
}
