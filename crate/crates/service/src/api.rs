//! Wire types of the HTTP API. Images travel as base64-encoded PNG strings.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use texfx_core::Image3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Body of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub detail: Option<String>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            detail: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

impl From<texfx_core::Error> for ApiError {
    fn from(e: texfx_core::Error) -> Self {
        use texfx_core::Error as E;
        match &e {
            E::InvalidInput(_) | E::Shape(_) | E::Config(_) | E::Image(_) => ApiError::bad_request(e.to_string()),
            _ => ApiError::internal("model error").with_detail(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

/// Decodes a base64 PNG, with or without a `data:image/png;base64,` prefix.
pub fn decode_image(field: &str, value: &str) -> Result<Image3, ApiError> {
    let raw = value.split_once(";base64,").map_or(value, |(_, b)| b);
    let bytes = STANDARD
        .decode(raw.trim())
        .map_err(|e| ApiError::bad_request(format!("{field} is not valid base64")).with_detail(e.to_string()))?;
    Image3::decode_png(&bytes).map_err(|e| ApiError::bad_request(format!("{field} is not a PNG image")).with_detail(e.to_string()))
}

pub fn encode_image(img: &Image3) -> Result<String, ApiError> {
    Ok(STANDARD.encode(img.encode_png()?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StylizeRequest {
    pub style_image: String,
    pub glyph_image: String,
    /// Checkpoint name; the current default when absent.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DestylizeRequest {
    pub style_image: String,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightedStyle {
    pub image: String,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterpolateRequest {
    pub glyph_image: String,
    pub styles: Vec<WeightedStyle>,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image: String,
    /// Checkpoint that produced the image.
    pub checkpoint: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinetuneRequest {
    pub style_image: String,
    /// Matching glyph for supervised finetuning.
    #[serde(default)]
    pub glyph_image: Option<String>,
    /// Guidance strokes: red marks glyph foreground, blue marks background.
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Base checkpoint; the current default when absent.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinetuneResponse {
    pub job_id: String,
    pub status: texfx_core::train::JobStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub name: String,
    pub bytes: u64,
    pub default: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointList {
    pub default: Option<String>,
    pub checkpoints: Vec<CheckpointInfo>,
}
