#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use mdxkit::service::{prepare_stimuli, ListeningTest, StimulusIndex, TestConfig};
use mdxkit_core::dataset::Song;
use mdxkit_core::rating::SegmentConfig;
use mdxkit_core::rng::Rng;
use mdxkit_core::{AudioBuffer, Stems};

pub const MODELS: [&str; 3] = ["kimberley_jensen", "ZFTurbo", "SAMI-ByteDance"];

/// Short songs with a loud burst so segment selection has something to find.
pub fn songs(count: usize, seconds: f64) -> Vec<Song> {
    let len = (seconds * 44_100.0) as usize;
    (0..count)
        .map(|s| {
            let stems = Stems::try_from_fn(|c| {
                let mut rng = Rng::new(100 * s as u64 + c.index() as u64);
                let f = 110.0 * (c.index() + 1) as f64;
                Ok(AudioBuffer::from_fn(len, |ch, n| {
                    let t = n as f64 / 44_100.0;
                    let env = 0.3 + (PI * t / seconds).sin();
                    env * (0.1 * (2.0 * PI * f * t + ch as f64).sin() + 0.01 * rng.uniform(-1.0, 1.0))
                }))
            })
            .unwrap();
            Song::new(format!("song-{s}"), stems)
        })
        .collect()
}

pub fn segment_config(count: usize) -> SegmentConfig {
    SegmentConfig { count, segment_seconds: 0.25, min_gap_seconds: 0.05, hop_seconds: 0.05 }
}

/// Model `m` scales the true stems by `1 - 0.1 m`.
pub fn estimates(models: &[&str], songs: &[Song]) -> Vec<(String, Vec<Stems>)> {
    models
        .iter()
        .enumerate()
        .map(|(m, name)| (name.to_string(), songs.iter().map(|s| s.stems.scaled(1.0 - 0.1 * m as f64)).collect()))
        .collect()
}

pub fn stimuli(dir: &Path, models: &[&str], song_count: usize, segments: usize) -> StimulusIndex {
    let songs = songs(song_count, 2.0);
    prepare_stimuli(&estimates(models, &songs), &songs, &segment_config(segments), dir, 7).unwrap()
}

pub fn open(stimuli: &Path, logs: &Path, seed: u64) -> ListeningTest {
    let mut test = ListeningTest::open(TestConfig::new(seed), StimulusIndex::load(stimuli).unwrap(), logs).unwrap();
    test.set_clock(|| 1_700_000_000_000);
    test
}
