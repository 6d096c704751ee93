use std::collections::{HashMap, HashSet};
use std::io::Cursor;
use std::sync::atomic::{AtomicBool, Ordering};

use image::{ImageFormat, Rgb, RgbImage};
use parking_lot::Mutex;
use sha2::{Digest, Sha256};

use super::{PredictionHandle, PredictionRequest, PredictionStatus, Provider, ProviderError};

pub const MOCK_PROVIDER: &str = "mock";

const SIDE: u32 = 64;

/// How predictions for one slug should end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureMode {
    Always,
    /// The first `n` predictions created for the slug fail, later ones succeed.
    FirstN(u32),
}

#[derive(Debug)]
struct MockPrediction {
    slug: String,
    prompt: String,
    num_images: u32,
    polls: u32,
    fails: bool,
    status: PredictionStatus,
}

#[derive(Debug, Default)]
struct MockState {
    predictions: HashMap<String, MockPrediction>,
    by_key: HashMap<String, String>,
    created: HashMap<String, u32>,
    next_id: u64,
}

/// Offline provider producing procedurally rendered placeholder images.
///
/// Image bytes depend only on `(slug, prompt, image_index, seed)`.
#[derive(Debug)]
pub struct MockProvider {
    seed: u64,
    slugs: Option<HashSet<String>>,
    latency_polls: u32,
    failures: HashMap<String, FailureMode>,
    unreachable: AtomicBool,
    state: Mutex<MockState>,
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            slugs: None,
            latency_polls: 0,
            failures: HashMap::new(),
            unreachable: AtomicBool::new(false),
            state: Mutex::new(MockState::default()),
        }
    }

    /// Restricts the provider to a fixed set of slugs; anything else is
    /// rejected with `UnknownSlug`.
    pub fn with_slugs<I, S>(mut self, slugs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.slugs = Some(slugs.into_iter().map(Into::into).collect());
        self
    }

    /// Number of non-terminal polls a prediction reports before finishing.
    pub fn with_latency(mut self, polls: u32) -> Self {
        self.latency_polls = polls;
        self
    }

    pub fn with_failure(mut self, slug: &str, mode: FailureMode) -> Self {
        self.failures.insert(slug.to_string(), mode);
        self
    }

    pub fn set_unreachable(&self, down: bool) {
        self.unreachable.store(down, Ordering::SeqCst);
    }

    /// Forgets a prediction as a provider would after its retention window.
    pub fn expire(&self, prediction_id: &str) {
        self.state.lock().predictions.remove(prediction_id);
    }

    /// Number of provider-side predictions ever created for `slug`.
    pub fn created_count(&self, slug: &str) -> u32 {
        self.state.lock().created.get(slug).copied().unwrap_or(0)
    }

    pub fn total_created(&self) -> u32 {
        self.state.lock().created.values().sum()
    }

    fn check_reachable(&self) -> Result<(), ProviderError> {
        if self.unreachable.load(Ordering::SeqCst) {
            Err(ProviderError::ProviderUnreachable("mock offline".into()))
        } else {
            Ok(())
        }
    }

    fn handle_for(id: &str, p: &MockPrediction) -> PredictionHandle {
        let output_urls = if p.status == PredictionStatus::Succeeded {
            (0..p.num_images)
                .map(|i| format!("mock://{}/{}/{}", p.slug, id, i))
                .collect()
        } else {
            Vec::new()
        };
        PredictionHandle {
            provider_prediction_id: id.to_string(),
            status: p.status,
            output_urls,
            error_message: (p.status == PredictionStatus::Failed)
                .then(|| "mock provider configured to fail".to_string()),
        }
    }
}

impl Provider for MockProvider {
    fn submit(&self, request: &PredictionRequest) -> Result<PredictionHandle, ProviderError> {
        self.check_reachable()?;
        if let Some(slugs) = &self.slugs {
            if !slugs.contains(&request.provider_slug) {
                return Err(ProviderError::UnknownSlug(request.provider_slug.clone()));
            }
        }
        let mut state = self.state.lock();
        if let Some(id) = state.by_key.get(&request.idempotency_key).cloned() {
            if let Some(p) = state.predictions.get(&id) {
                return Ok(Self::handle_for(&id, p));
            }
        }
        let created = state
            .created
            .entry(request.provider_slug.clone())
            .or_insert(0);
        *created += 1;
        let ordinal = *created;
        let fails = match self.failures.get(&request.provider_slug) {
            Some(FailureMode::Always) => true,
            Some(FailureMode::FirstN(n)) => ordinal <= *n,
            None => false,
        };
        state.next_id += 1;
        let id = format!("mock-{:08}", state.next_id);
        let prediction = MockPrediction {
            slug: request.provider_slug.clone(),
            prompt: request.prompt.clone(),
            num_images: request.num_images,
            polls: 0,
            fails,
            status: PredictionStatus::Queued,
        };
        let handle = Self::handle_for(&id, &prediction);
        state.predictions.insert(id.clone(), prediction);
        state.by_key.insert(request.idempotency_key.clone(), id);
        Ok(handle)
    }

    fn poll(&self, handle: &PredictionHandle) -> Result<PredictionHandle, ProviderError> {
        self.check_reachable()?;
        let mut state = self.state.lock();
        let id = &handle.provider_prediction_id;
        let p = state
            .predictions
            .get_mut(id)
            .ok_or_else(|| ProviderError::UnknownPrediction(id.clone()))?;
        if !p.status.is_terminal() {
            p.polls += 1;
            p.status = if p.polls > self.latency_polls {
                if p.fails {
                    PredictionStatus::Failed
                } else {
                    PredictionStatus::Succeeded
                }
            } else if p.polls < self.latency_polls {
                PredictionStatus::Queued
            } else {
                PredictionStatus::Running
            };
        }
        Ok(Self::handle_for(id, p))
    }

    fn fetch_outputs(&self, handle: &PredictionHandle) -> Result<Vec<Vec<u8>>, ProviderError> {
        if handle.status != PredictionStatus::Succeeded {
            return Err(ProviderError::NotSucceeded);
        }
        self.check_reachable()?;
        let state = self.state.lock();
        handle
            .output_urls
            .iter()
            .map(|url| {
                let fail = || ProviderError::DownloadFailed(url.clone());
                let rest = url.strip_prefix("mock://").ok_or_else(fail)?;
                let (head, index) = rest.rsplit_once('/').ok_or_else(fail)?;
                let (_, id) = head.rsplit_once('/').ok_or_else(fail)?;
                let index: u32 = index.parse().map_err(|_| fail())?;
                let p = state.predictions.get(id).ok_or_else(fail)?;
                if index >= p.num_images {
                    return Err(fail());
                }
                Ok(render_placeholder(&p.slug, &p.prompt, index, self.seed))
            })
            .collect()
    }
}

/// Renders a deterministic 64x64 PNG for a (slug, prompt, index, seed) tuple:
/// a two-color diagonal gradient picked from a hash of the inputs, with the
/// slug's bytes written into the red channel of the top row.
pub fn render_placeholder(slug: &str, prompt: &str, image_index: u32, seed: u64) -> Vec<u8> {
    let mut hasher = Sha256::new();
    hasher.update(slug.as_bytes());
    hasher.update([0]);
    hasher.update(prompt.as_bytes());
    hasher.update([0]);
    hasher.update(image_index.to_le_bytes());
    hasher.update(seed.to_le_bytes());
    let digest: [u8; 32] = hasher.finalize().into();

    let from = [digest[0], digest[1], digest[2]];
    let to = [digest[3], digest[4], digest[5]];
    let span = (2 * (SIDE - 1)) as f32;
    let mut img = RgbImage::from_fn(SIDE, SIDE, |x, y| {
        let t = (x + y) as f32 / span;
        let noise = digest[((x * 7 + y * 13) % 32) as usize] & 0x0f;
        let mix = |a: u8, b: u8| ((a as f32 * (1.0 - t) + b as f32 * t) as u8) ^ noise;
        Rgb([
            mix(from[0], to[0]),
            mix(from[1], to[1]),
            mix(from[2], to[2]),
        ])
    });
    for (x, byte) in slug.bytes().take(SIDE as usize).enumerate() {
        img.get_pixel_mut(x as u32, 0).0[0] = byte;
    }

    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}
