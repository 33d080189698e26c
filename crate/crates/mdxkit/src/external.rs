//! Separators that run an external command.
//!
//! The command receives a stereo `mixture.wav` and must write `bass.wav`,
//! `drums.wav`, `other.wav` and `vocals.wav` into an output directory. The
//! placeholders `{input}` and `{output}` in the argument template are
//! replaced by the two paths.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use mdxkit_core::separation::{check_outputs, SeparationError, Separator};
use mdxkit_core::{AudioBuffer, SourceClass, Stems};

use crate::wav::{load_wav, save_wav, LoadOptions, WavError, WavFormat};

/// One lock per working directory, shared by every separator using it.
fn workdir_lock(dir: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let key = dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf());
    let mut map = LOCKS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    map.entry(key).or_default().clone()
}

#[derive(Debug)]
pub struct ExternalSeparator {
    program: String,
    args: Vec<String>,
    workdir: PathBuf,
    lock: Arc<Mutex<()>>,
    calls: AtomicU64,
}

impl ExternalSeparator {
    /// `template[0]` is the program; the rest are its arguments.
    pub fn new(template: &[String], workdir: impl Into<PathBuf>) -> Result<Self, SeparationError> {
        let (program, args) =
            template.split_first().ok_or_else(|| SeparationError::Failed("empty command template".into()))?;
        let workdir = workdir.into();
        std::fs::create_dir_all(&workdir).map_err(|e| SeparationError::Failed(e.to_string()))?;
        Ok(Self {
            program: program.clone(),
            args: args.to_vec(),
            lock: workdir_lock(&workdir),
            workdir,
            calls: AtomicU64::new(0),
        })
    }

    fn run(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let call = self.calls.fetch_add(1, Ordering::Relaxed);
        let dir = self.workdir.join(format!("call-{}-{call}", std::process::id()));
        let input = dir.join("mixture.wav");
        let output = dir.join("out");
        let io = |e: std::io::Error| SeparationError::Failed(e.to_string());
        let wav = |e: WavError| SeparationError::Failed(e.to_string());
        std::fs::create_dir_all(&output).map_err(io)?;
        save_wav(mixture, &input, WavFormat::Float32).map_err(wav)?;
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| a.replace("{input}", &input.to_string_lossy()).replace("{output}", &output.to_string_lossy()))
            .collect();
        let result = Command::new(&self.program).args(&args).current_dir(&dir).output().map_err(io)?;
        if !result.status.success() {
            let _ = std::fs::remove_dir_all(&dir);
            return Err(SeparationError::ProcessFailed {
                status: result.status.to_string(),
                stderr: String::from_utf8_lossy(&result.stderr).into_owned(),
            });
        }
        let mut buffers = Vec::with_capacity(4);
        for class in SourceClass::ALL {
            let path = output.join(format!("{class}.wav"));
            if !path.is_file() {
                let _ = std::fs::remove_dir_all(&dir);
                return Err(SeparationError::MissingOutput(class));
            }
            let audio = load_wav(&path, LoadOptions::default()).map_err(wav)?;
            audio.expect_len(mixture.len())?;
            buffers.push(audio);
        }
        let _ = std::fs::remove_dir_all(&dir);
        let buffers: [AudioBuffer; 4] = buffers.try_into().expect("four classes");
        let stems = Stems::new(buffers)?;
        check_outputs(&stems, mixture.len())?;
        Ok(stems)
    }
}

impl Separator for ExternalSeparator {
    fn separate(&self, mixture: &AudioBuffer) -> Result<Stems, SeparationError> {
        self.run(mixture)
    }

    fn is_serial(&self) -> bool {
        true
    }
}
