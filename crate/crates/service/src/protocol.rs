//! Wire schema: JSON control messages and replies, binary frame payloads.
//!
//! A frame payload is `width: u32 LE`, `height: u32 LE`, `width·height·3`
//! bytes of RGB8 in row-major order (top row first), `len: u32 LE`, then
//! `len` bytes of UTF-8 JSON metadata ([`FrameMeta`]).

use std::collections::BTreeMap;

use glam::DVec3;
use serde::{Deserialize, Serialize};

/// Client → server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum ControlMessage {
    SetParam { name: String, value: f64 },
    SetCamera {
        position: DVec3,
        target: DVec3,
        #[serde(default = "default_up")]
        up: DVec3,
    },
    SetMode { mode: String },
    RequestPassDump { name: String },
    Pause,
    Resume,
}

fn default_up() -> DVec3 {
    DVec3::Y
}

/// A control message with an optional client-chosen correlation id, echoed
/// in the reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(flatten)]
    pub message: ControlMessage,
}

/// Server → client, sent as a text message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum Reply {
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        /// First frame rendered with the change applied.
        effective_frame: u64,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        param: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<String>,
    },
}

impl Reply {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reply serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CameraMeta {
    pub position: DVec3,
    pub forward: DVec3,
    pub up: DVec3,
    pub aperture: f64,
    pub focal_length: f64,
    pub focus_distance: f64,
}

/// Metadata trailing every frame payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrameMeta {
    pub frame_index: u64,
    pub mode: String,
    /// Parameter snapshot the frame was rendered under; lens values are
    /// the effective camera's.
    pub params: BTreeMap<String, f64>,
    pub pass_ms: BTreeMap<String, f64>,
    pub total_rays: u64,
    pub mean_motion_px: f32,
    pub camera: CameraMeta,
    /// Set on pass-dump payloads, which follow their frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass: Option<String>,
}

pub fn encode_frame(width: u32, height: u32, rgb: &[u8], meta: &FrameMeta) -> Vec<u8> {
    assert_eq!(rgb.len(), width as usize * height as usize * 3, "RGB8 buffer size");
    let json = serde_json::to_vec(meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(12 + rgb.len() + json.len());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(rgb);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedFrame {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
    pub meta: FrameMeta,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DecodeError {
    #[error("payload truncated")]
    Truncated,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("metadata: {0}")]
    Meta(String),
}

pub fn decode_frame(bytes: &[u8]) -> Result<DecodedFrame, DecodeError> {
    let u32_at = |at: usize| -> Result<u32, DecodeError> {
        let b = bytes.get(at..at + 4).ok_or(DecodeError::Truncated)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    let (width, height) = (u32_at(0)?, u32_at(4)?);
    let n = width as usize * height as usize * 3;
    let rgb = bytes.get(8..8 + n).ok_or(DecodeError::Truncated)?.to_vec();
    let len = u32_at(8 + n)? as usize;
    let start = 12 + n;
    let json = bytes.get(start..start + len).ok_or(DecodeError::Truncated)?;
    if bytes.len() > start + len {
        return Err(DecodeError::Trailing(bytes.len() - start - len));
    }
    let meta = serde_json::from_slice(json).map_err(|e| DecodeError::Meta(e.to_string()))?;
    Ok(DecodedFrame {
        width,
        height,
        rgb,
        meta,
    })
}
