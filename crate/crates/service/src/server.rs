use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use candle_core::DType;
use serde::de::DeserializeOwned;
use texfx_core::losses::GuidanceMasks;
use texfx_core::net::{ContentEncoder, StyleFeature, TransferNet};
use texfx_core::train::{destylize, glyph_input, interpolate_styles, stylize, FinetuneJob, FinetuneOptions};
use texfx_core::Image3;

use crate::api::*;
use crate::jobs::{JobQueue, JobRecord};
use crate::store::CheckpointStore;

pub const MAX_BODY_BYTES: usize = 32 << 20;
const MAX_FINETUNE_ITERATIONS: usize = 100_000;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<CheckpointStore>,
    pub jobs: JobQueue,
    /// Defaults for finetune requests.
    pub finetune: FinetuneOptions,
}

impl AppState {
    pub fn new(store: CheckpointStore, allow_queue: bool, finetune: FinetuneOptions) -> Self {
        let store = Arc::new(store);
        Self {
            jobs: JobQueue::start(store.clone(), allow_queue),
            store,
            finetune,
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/stylize", post(stylize_handler))
        .route("/v1/destylize", post(destylize_handler))
        .route("/v1/interpolate", post(interpolate_handler))
        .route("/v1/finetune", post(finetune_handler))
        .route("/v1/jobs", get(list_jobs))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/checkpoints", get(list_checkpoints))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(ErrorCode::BadRequest, "method not allowed for this endpoint")
        })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("malformed request body").with_detail(e.to_string()))
}

/// Runs model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal("worker panicked").with_detail(e.to_string()))?
}

fn tensor(net: &TransferNet, img: &Image3) -> Result<candle_core::Tensor, ApiError> {
    Ok(img.to_tensor(net.dtype(), net.device())?)
}

async fn stylize_handler(State(st): State<AppState>, body: Bytes) -> Result<Json<ImageResponse>, ApiError> {
    let req: StylizeRequest = parse(&body)?;
    let style = decode_image("style_image", &req.style_image)?;
    let glyph = glyph_input(&decode_image("glyph_image", &req.glyph_image)?)?;
    blocking(move || {
        let (name, net) = st.store.get(req.checkpoint.as_deref())?;
        let out = stylize(&net, &glyph, &style)?;
        Ok(Json(ImageResponse {
            image: encode_image(&out)?,
            checkpoint: name,
        }))
    })
    .await
}

async fn destylize_handler(State(st): State<AppState>, body: Bytes) -> Result<Json<ImageResponse>, ApiError> {
    let req: DestylizeRequest = parse(&body)?;
    let style = decode_image("style_image", &req.style_image)?;
    blocking(move || {
        let (name, net) = st.store.get(req.checkpoint.as_deref())?;
        let out = destylize(&net, &style)?;
        Ok(Json(ImageResponse {
            image: encode_image(&out)?,
            checkpoint: name,
        }))
    })
    .await
}

async fn interpolate_handler(State(st): State<AppState>, body: Bytes) -> Result<Json<ImageResponse>, ApiError> {
    let req: InterpolateRequest = parse(&body)?;
    let glyph = glyph_input(&decode_image("glyph_image", &req.glyph_image)?)?;
    if req.styles.is_empty() {
        return Err(ApiError::bad_request("at least one style is required"));
    }
    let styles = req
        .styles
        .iter()
        .enumerate()
        .map(|(i, s)| Ok((decode_image(&format!("styles[{i}].image"), &s.image)?, s.weight)))
        .collect::<Result<Vec<_>, ApiError>>()?;
    for (img, _) in &styles {
        if !img.same_size(&glyph.0) {
            return Err(ApiError::bad_request("style images must match the glyph size"));
        }
    }
    blocking(move || {
        let (name, net) = st.store.get(req.checkpoint.as_deref())?;
        let c = net.encode_content(&tensor(&net, &glyph.0)?, ContentEncoder::Glyph)?;
        let features = styles
            .iter()
            .map(|(img, w)| Ok((net.encode_style(&tensor(&net, img)?)?, *w)))
            .collect::<Result<Vec<(StyleFeature, f64)>, ApiError>>()?;
        let out = interpolate_styles(&net, &c, &features)?;
        Ok(Json(ImageResponse {
            image: encode_image(&out)?,
            checkpoint: name,
        }))
    })
    .await
}

async fn finetune_handler(State(st): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: FinetuneRequest = parse(&body)?;
    let style = decode_image("style_image", &req.style_image)?;
    let glyph = req
        .glyph_image
        .as_deref()
        .map(|g| Ok::<_, ApiError>(glyph_input(&decode_image("glyph_image", g)?)?))
        .transpose()?;
    let masks = req
        .mask
        .as_deref()
        .map(|m| {
            let img = decode_image("mask", m)?;
            if !img.same_size(&style) {
                return Err(ApiError::bad_request("mask must match the style image size"));
            }
            Ok(GuidanceMasks::from_image(&img, DType::F32, &candle_core::Device::Cpu)?)
        })
        .transpose()?;
    let base = match req.checkpoint {
        Some(name) => name,
        None => st
            .store
            .default_name()
            .ok_or_else(|| ApiError::not_found("no checkpoint available"))?,
    };
    // Fails fast on unknown or unreadable base checkpoints.
    st.store.get(Some(&base))?;
    let mut opts = st.finetune.clone();
    if let Some(n) = req.iterations {
        if n == 0 || n > MAX_FINETUNE_ITERATIONS {
            return Err(ApiError::bad_request(format!("iterations must be in 1..={MAX_FINETUNE_ITERATIONS}")));
        }
        opts.iterations = n;
    }
    if let Some(seed) = req.seed {
        opts.seed = seed;
    }
    opts.crop_for(style.height().min(style.width()))?;
    if style.height() != style.width() {
        return Err(ApiError::bad_request("finetuning needs a square style image"));
    }
    let job = FinetuneJob::new(st.jobs.next_id(), style, glyph, masks, base)?;
    let record = st.jobs.submit(job, opts)?;
    Ok((
        StatusCode::ACCEPTED,
        Json(FinetuneResponse {
            job_id: record.job_id,
            status: record.status,
        }),
    ))
}

async fn get_job(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<JobRecord>, ApiError> {
    st.jobs
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("job {id} not found")))
}

async fn list_jobs(State(st): State<AppState>) -> Json<Vec<JobRecord>> {
    Json(st.jobs.list())
}

async fn list_checkpoints(State(st): State<AppState>) -> Result<Json<CheckpointList>, ApiError> {
    Ok(Json(st.store.list()?))
}
