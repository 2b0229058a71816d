//! Socket-free session state: applies control messages between frames and
//! turns rendered frames into payloads.

use std::collections::BTreeMap;

use hybrid_dof::composite::Mode;
use hybrid_dof::image::to_rgb8;
use hybrid_dof::lens::Pose;
use hybrid_dof::pipeline::{Frame, PassName, PipelineError, Renderer};

use crate::protocol::{encode_frame, CameraMeta, ControlMessage, Envelope, FrameMeta, Reply};

#[derive(Debug, Clone, PartialEq)]
pub struct ControlError {
    pub message: String,
    pub param: Option<String>,
    pub range: Option<String>,
}

impl ControlError {
    fn plain(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            param: None,
            range: None,
        }
    }

    fn from_pipeline(e: PipelineError) -> Self {
        match &e {
            PipelineError::Config(c) => Self {
                message: e.to_string(),
                param: c.param().map(str::to_string),
                range: c.range().map(str::to_string),
            },
            _ => Self::plain(e.to_string()),
        }
    }
}

pub struct Session {
    renderer: Renderer,
    paused: bool,
    pose: Option<Pose>,
    dump_pending: bool,
}

impl Session {
    pub fn new(renderer: Renderer) -> Self {
        Self {
            renderer,
            paused: false,
            pose: None,
            dump_pending: false,
        }
    }

    pub fn renderer(&self) -> &Renderer {
        &self.renderer
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    /// Index of the next frame to render, i.e. where an update applied now
    /// takes effect.
    pub fn next_frame(&self) -> u64 {
        self.renderer.frame_index()
    }

    /// Apply one control message. Failed updates leave the state untouched.
    pub fn handle(&mut self, msg: ControlMessage) -> Result<u64, ControlError> {
        match msg {
            ControlMessage::SetParam { name, value } => {
                let mut cfg = self.renderer.config().clone();
                cfg.set_param(&name, value).map_err(|e| ControlError::from_pipeline(e.into()))?;
                self.renderer.set_config(cfg).map_err(ControlError::from_pipeline)?;
            }
            ControlMessage::SetMode { mode } => {
                let mode: Mode = mode.parse().map_err(ControlError::plain)?;
                let mut cfg = self.renderer.config().clone();
                cfg.mode = mode;
                self.renderer.set_config(cfg).map_err(ControlError::from_pipeline)?;
            }
            ControlMessage::SetCamera { position, target, up } => {
                let forward = target - position;
                let finite = position.is_finite() && target.is_finite() && up.is_finite();
                if !finite || forward.length() < 1e-9 || forward.cross(up).length() < 1e-9 * forward.length() {
                    return Err(ControlError::plain(
                        "camera needs finite position, target distinct from position, and up not parallel to the view",
                    ));
                }
                self.pose = Some(Pose::look_at(position, target, up));
            }
            ControlMessage::RequestPassDump { name } => {
                let pass: PassName = name.parse().map_err(ControlError::plain)?;
                self.renderer.set_dump(Some(pass));
                self.dump_pending = true;
            }
            ControlMessage::Pause => self.paused = true,
            ControlMessage::Resume => self.paused = false,
        }
        Ok(self.next_frame())
    }

    /// Parse and apply a text control message, producing its reply.
    pub fn handle_text(&mut self, text: &str) -> Reply {
        let envelope: Envelope = match serde_json::from_str(text) {
            Ok(e) => e,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(text)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_u64()));
                return Reply::Error {
                    id,
                    message: format!("malformed control message: {e}"),
                    param: None,
                    range: None,
                };
            }
        };
        let id = envelope.id;
        match self.handle(envelope.message) {
            Ok(effective_frame) => Reply::Ack { id, effective_frame },
            Err(e) => Reply::Error {
                id,
                message: e.message,
                param: e.param,
                range: e.range,
            },
        }
    }

    /// Render one frame under the current parameter snapshot.
    pub fn render(&mut self) -> Result<Frame, PipelineError> {
        let mut cam = self.renderer.camera_for_frame(self.renderer.frame_index());
        if let Some(pose) = self.pose {
            cam.pose = pose;
        }
        let frame = self.renderer.render_with_camera(cam);
        if self.dump_pending {
            self.renderer.set_dump(None);
            self.dump_pending = false;
        }
        frame
    }

    pub fn frame_meta(&self, frame: &Frame) -> FrameMeta {
        let mut params: BTreeMap<String, f64> = self
            .renderer
            .config()
            .params()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let c = &frame.camera;
        for (k, v) in [
            ("aperture", c.aperture),
            ("focal_length", c.focal_length),
            ("focus_distance", c.focus_distance),
            ("sensor_width", c.sensor_width),
        ] {
            params.insert(k.to_string(), v);
        }
        let record = frame.record(self.renderer.config().max_rays, None);
        FrameMeta {
            frame_index: frame.index,
            mode: frame.mode.name().to_string(),
            params,
            pass_ms: record.pass_ms,
            total_rays: frame.stats.total_rays,
            mean_motion_px: frame.stats.mean_motion_px,
            camera: CameraMeta {
                position: c.pose.position,
                forward: c.pose.forward,
                up: c.pose.up,
                aperture: c.aperture,
                focal_length: c.focal_length,
                focus_distance: c.focus_distance,
            },
            pass: None,
        }
    }

    /// The frame payload, followed by the pass dump payload if one was
    /// requested for this frame.
    pub fn payloads(&self, frame: &Frame) -> Vec<Vec<u8>> {
        let meta = self.frame_meta(frame);
        let (w, h) = frame.image.dims();
        let mut out = vec![encode_frame(w as u32, h as u32, &to_rgb8(&frame.image), &meta)];
        if let Some((pass, img)) = &frame.dump {
            let (w, h) = img.dims();
            let meta = FrameMeta {
                pass: Some(pass.name().to_string()),
                ..meta
            };
            out.push(encode_frame(w as u32, h as u32, &to_rgb8(img), &meta));
        }
        out
    }
}
