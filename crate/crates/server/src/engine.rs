//! Session logic behind the HTTP handlers. Every operation reads the session
//! from disk and writes it back before returning, under that session's lock.

use crate::files::{read_probability, write_segmentation};
use crate::wire::*;
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use geoseg_core::field::ProbabilityField;
use geoseg_core::geodesic::ImageGrid;
use geoseg_core::imageio::{read_image, write_volume, Pgm};
use geoseg_core::pipeline::{ModelCheckpoint, Segmenter};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

pub const DEFAULT_PNET: &str = "pnet";
pub const DEFAULT_RNET: &str = "rnet";
const STATE_FILE: &str = "state.json";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{} scribble pixel(s) out of bounds", .0.len())]
    OutOfBounds(Vec<Vec<usize>>),
    #[error("model unavailable: {0}")]
    Unavailable(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<geoseg_core::Error> for ServiceError {
    fn from(e: geoseg_core::Error) -> Self {
        use geoseg_core::Error as E;
        match e {
            E::OutOfBounds(px) => ServiceError::OutOfBounds(px),
            E::Shape(_) | E::Invalid(_) | E::Format(_) | E::EmptySeeds => {
                ServiceError::BadRequest(e.to_string())
            }
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<WireError> for ServiceError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::Core(c) => c.into(),
            other => ServiceError::BadRequest(other.to_string()),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

pub type ServiceResult<T> = Result<T, ServiceError>;

/// Persisted session state; image and segmentation live in sibling files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SessionState {
    id: String,
    pnet: String,
    rnet: String,
    height: usize,
    width: usize,
    image_file: String,
    round: u64,
    scribbles: Vec<ScribbleWire>,
    pending: usize,
    created: u64,
    updated: u64,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Checkpoints loaded on first use from the model directory.
pub struct ModelRegistry {
    dir: PathBuf,
    cache: Mutex<HashMap<String, Arc<ModelCheckpoint>>>,
}

impl ModelRegistry {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ModelRegistry {
            dir: dir.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, id: &str) -> ServiceResult<Arc<ModelCheckpoint>> {
        if !valid_id(id) {
            return Err(ServiceError::BadRequest(format!("invalid model id {id:?}")));
        }
        if let Some(m) = self.cache.lock().unwrap().get(id) {
            return Ok(m.clone());
        }
        let path = self.dir.join(format!("{id}.json"));
        let ckpt = ModelCheckpoint::load(&path)
            .map_err(|e| ServiceError::Unavailable(format!("{}: {e}", path.display())))?;
        let ckpt = Arc::new(ckpt);
        self.cache
            .lock()
            .unwrap()
            .insert(id.to_string(), ckpt.clone());
        Ok(ckpt)
    }

    fn segmenter(&self, pnet: &str, rnet: Option<&str>) -> ServiceResult<Segmenter> {
        let p = self.get(pnet)?;
        let r = rnet.map(|r| self.get(r)).transpose()?;
        Segmenter::new((*p).clone(), r.map(|r| (*r).clone()))
            .map_err(|e| ServiceError::Unavailable(e.to_string()))
    }
}

pub struct Engine {
    store: PathBuf,
    models: ModelRegistry,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

struct Loaded {
    state: SessionState,
    image: ImageGrid,
    seg: ProbabilityField,
}

impl Engine {
    pub fn new(
        store_dir: impl Into<PathBuf>,
        model_dir: impl Into<PathBuf>,
    ) -> std::io::Result<Self> {
        let store = store_dir.into();
        std::fs::create_dir_all(&store)?;
        Ok(Engine {
            store,
            models: ModelRegistry::new(model_dir),
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn models(&self) -> &ModelRegistry {
        &self.models
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .unwrap()
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    fn session_dir(&self, id: &str) -> ServiceResult<PathBuf> {
        // ids are generated UUIDs; anything else cannot name a session
        if !valid_id(id) {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        Ok(self.store.join(id))
    }

    fn load(&self, id: &str) -> ServiceResult<Loaded> {
        let dir = self.session_dir(id)?;
        let bytes = match std::fs::read(dir.join(STATE_FILE)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ServiceError::NotFound(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let state: SessionState =
            serde_json::from_slice(&bytes).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let image = read_image(&dir.join(&state.image_file))
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let seg = read_probability(&dir.join(crate::files::PROBABILITY_FILE))
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(Loaded { state, image, seg })
    }

    /// Writes segmentation files first and the state file last, each via rename.
    fn persist(&self, state: &SessionState, seg: Option<&ProbabilityField>) -> ServiceResult<()> {
        let dir = self.session_dir(&state.id)?;
        std::fs::create_dir_all(&dir)?;
        if let Some(seg) = seg {
            let tmp = dir.join(".tmp-seg");
            let _ = std::fs::remove_dir_all(&tmp);
            write_segmentation(&tmp, seg)?;
            for name in [
                crate::files::MASK_FILE,
                crate::files::PROBABILITY_FILE,
                "probability.f32.json",
            ] {
                std::fs::rename(tmp.join(name), dir.join(name))?;
            }
            std::fs::remove_dir_all(&tmp)?;
        }
        let tmp = dir.join(".state.json.tmp");
        std::fs::write(
            &tmp,
            serde_json::to_vec_pretty(state).map_err(|e| ServiceError::Internal(e.to_string()))?,
        )?;
        std::fs::rename(&tmp, dir.join(STATE_FILE))?;
        Ok(())
    }

    fn view(l: &Loaded) -> SessionView {
        let s = &l.state;
        SessionView {
            id: s.id.clone(),
            height: s.height,
            width: s.width,
            pnet: s.pnet.clone(),
            rnet: s.rnet.clone(),
            round: s.round,
            scribbles: s.scribbles.clone(),
            pending: s.pending,
            created: s.created,
            updated: s.updated,
            segmentation: Segmentation::encode(&l.seg),
        }
    }

    pub fn create(&self, req: &CreateSession) -> ServiceResult<SessionView> {
        let pnet = req.pnet.clone().unwrap_or_else(|| DEFAULT_PNET.into());
        let rnet = req.rnet.clone().unwrap_or_else(|| DEFAULT_RNET.into());
        if !valid_id(&rnet) {
            return Err(ServiceError::BadRequest(format!(
                "invalid model id {rnet:?}"
            )));
        }
        let pgm = match &req.image {
            ImageWire::Pgm { data } => Some(Pgm::decode(
                &STANDARD.decode(data).map_err(WireError::from)?,
            )?),
            ImageWire::F32 { .. } => None,
        };
        let image = match &pgm {
            Some(p) => p.to_image(),
            None => req.image.decode()?,
        };
        let seg = self.models.segmenter(&pnet, None)?.propose(&image)?;
        let id = uuid::Uuid::new_v4().to_string();
        let dir = self.session_dir(&id)?;
        std::fs::create_dir_all(&dir)?;
        // both forms store losslessly, so a reload sees the same image
        let image_file = match &pgm {
            Some(p) => {
                p.write(&dir.join("image.pgm"))?;
                "image.pgm"
            }
            None => {
                write_volume(&dir.join("image.f32"), &image)?;
                "image.f32"
            }
        };
        let t = now();
        let state = SessionState {
            id: id.clone(),
            pnet,
            rnet,
            height: seg.height,
            width: seg.width,
            image_file: image_file.into(),
            round: 0,
            scribbles: Vec::new(),
            pending: 0,
            created: t,
            updated: t,
        };
        let lock = self.lock(&id);
        let _g = lock.lock().unwrap();
        self.persist(&state, Some(&seg))?;
        Ok(Self::view(&Loaded { state, image, seg }))
    }

    pub fn get(&self, id: &str) -> ServiceResult<SessionView> {
        let lock = self.lock(id);
        let _g = lock.lock().unwrap();
        Ok(Self::view(&self.load(id)?))
    }

    /// Adds scribbles; a pixel given twice keeps its last label.
    pub fn add_scribbles(&self, id: &str, req: &SubmitScribbles) -> ServiceResult<ScribbleReceipt> {
        let lock = self.lock(id);
        let _g = lock.lock().unwrap();
        let mut l = self.load(id)?;
        let (h, w) = (l.state.height, l.state.width);
        let bad: Vec<Vec<usize>> = req
            .scribbles
            .iter()
            .filter(|s| s.pixel[0] >= h || s.pixel[1] >= w)
            .map(|s| s.pixel.to_vec())
            .collect();
        if !bad.is_empty() {
            return Err(ServiceError::OutOfBounds(bad));
        }
        if let Some(s) = req.scribbles.iter().find(|s| s.label > 1) {
            return Err(ServiceError::BadRequest(format!(
                "label {} is neither 0 nor 1",
                s.label
            )));
        }
        let mut set = scribbles_from_wire(&l.state.scribbles);
        let mut accepted = 0;
        for s in &req.scribbles {
            if set.insert((s.pixel[0], s.pixel[1]), s.label) {
                accepted += 1;
            }
        }
        if accepted > 0 {
            l.state.scribbles = scribbles_to_wire(&set);
            l.state.pending += accepted;
            l.state.updated = now();
            self.persist(&l.state, None)?;
        }
        Ok(ScribbleReceipt {
            accepted,
            total: l.state.scribbles.len(),
            pending: l.state.pending,
        })
    }

    pub fn refine(&self, id: &str) -> ServiceResult<RefineResult> {
        let lock = self.lock(id);
        let _g = lock.lock().unwrap();
        let mut l = self.load(id)?;
        if l.state.pending == 0 {
            return Ok(RefineResult {
                noop: true,
                round: l.state.round,
                segmentation: Segmentation::encode(&l.seg),
            });
        }
        let seg = self.models.segmenter(&l.state.pnet, Some(&l.state.rnet))?;
        let round = l.state.round + 1;
        let scribbles = scribbles_from_wire(&l.state.scribbles);
        let refined = seg
            .refine(&l.image, &l.seg, &scribbles, round)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        l.state.round = round;
        l.state.pending = 0;
        l.state.updated = now();
        self.persist(&l.state, Some(&refined))?;
        Ok(RefineResult {
            noop: false,
            round,
            segmentation: Segmentation::encode(&refined),
        })
    }

    pub fn mask(&self, id: &str) -> ServiceResult<MaskExport> {
        let lock = self.lock(id);
        let _g = lock.lock().unwrap();
        let l = self.load(id)?;
        Ok(MaskExport {
            extents: [l.state.height, l.state.width],
            mask: encode_mask(&l.seg.mask()),
        })
    }

    /// Raw bytes of the stored mask file.
    pub fn mask_file(&self, id: &str) -> ServiceResult<Vec<u8>> {
        let lock = self.lock(id);
        let _g = lock.lock().unwrap();
        self.load(id)?;
        Ok(std::fs::read(
            self.session_dir(id)?.join(crate::files::MASK_FILE),
        )?)
    }

    pub fn delete(&self, id: &str) -> ServiceResult<()> {
        let lock = self.lock(id);
        let _g = lock.lock().unwrap();
        let dir = self.session_dir(id)?;
        if !dir.join(STATE_FILE).exists() {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        std::fs::remove_dir_all(&dir)?;
        self.locks.lock().unwrap().remove(id);
        Ok(())
    }

    pub fn session_path(&self, id: &str) -> Option<PathBuf> {
        self.session_dir(id).ok()
    }

    pub fn store_dir(&self) -> &Path {
        &self.store
    }
}
