use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use dof_service::{decode_frame, DecodedFrame, Reply, Server, ServiceError, Session};
use hybrid_dof::fixtures::Fixture;
use hybrid_dof::pipeline::{PipelineConfig, Renderer, TaaConfig};

enum Incoming {
    Reply(Reply),
    Frame(DecodedFrame),
}

struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl Client {
    async fn send(&mut self, json: &str) {
        self.ws.send(Message::text(json)).await.unwrap();
    }

    async fn next(&mut self) -> Incoming {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(60), self.ws.next())
                .await
                .expect("server went quiet")
                .expect("stream open")
                .unwrap();
            match msg {
                Message::Text(t) => return Incoming::Reply(serde_json::from_str(&t).unwrap()),
                Message::Binary(b) => return Incoming::Frame(decode_frame(&b).unwrap()),
                _ => {}
            }
        }
    }

    async fn next_frame(&mut self) -> DecodedFrame {
        loop {
            if let Incoming::Frame(f) = self.next().await {
                return f;
            }
        }
    }

    async fn next_reply(&mut self) -> Reply {
        loop {
            if let Incoming::Reply(r) = self.next().await {
                return r;
            }
        }
    }
}

fn session() -> Session {
    let cfg = PipelineConfig {
        width: 48,
        height: 27,
        taa: TaaConfig::disabled(),
        ..PipelineConfig::default()
    };
    Session::new(Renderer::new(Fixture::Occluder.load().unwrap(), cfg).unwrap())
}

async fn start() -> (SocketAddr, Client) {
    let mut server = Server::bind(session(), "127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = server.local_addr().unwrap();
    tokio::spawn(async move { server.serve_one().await });
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}")).await.unwrap();
    (addr, Client { ws })
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn frames_stream_with_consecutive_indices() {
    let (_, mut c) = start().await;
    let mut last = None;
    for _ in 0..5 {
        let f = c.next_frame().await;
        assert_eq!((f.width, f.height), (48, 27));
        assert_eq!(f.rgb.len(), 48 * 27 * 3);
        assert_eq!(f.meta.mode, "hybrid");
        assert!(f.meta.pass_ms.contains_key("total"));
        if let Some(prev) = last {
            assert_eq!(f.meta.frame_index, prev + 1);
        }
        last = Some(f.meta.frame_index);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn set_param_takes_effect_at_acked_frame() {
    let (_, mut c) = start().await;
    c.next_frame().await;
    c.send(r#"{"type":"setParam","name":"m","value":5,"id":1}"#).await;
    let effective = match c.next_reply().await {
        Reply::Ack {
            id: Some(1),
            effective_frame,
        } => effective_frame,
        other => panic!("{other:?}"),
    };
    loop {
        let f = c.next_frame().await;
        if f.meta.frame_index < effective {
            assert_eq!(f.meta.params["m"], 10.0);
        } else {
            assert_eq!(f.meta.frame_index, effective);
            assert_eq!(f.meta.params["m"], 5.0);
            break;
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_are_replied_and_session_continues() {
    let (_, mut c) = start().await;
    c.send(r#"{"type":"setParam","name":"m","value":-1}"#).await;
    match c.next_reply().await {
        Reply::Error { param, range, .. } => {
            assert_eq!(param.as_deref(), Some("m"));
            assert_eq!(range.as_deref(), Some("[0, 64] integer"));
        }
        other => panic!("{other:?}"),
    }
    c.send(r#"{"type":"setParam","name":"bogus","value":1}"#).await;
    assert!(matches!(c.next_reply().await, Reply::Error { param: Some(p), .. } if p == "bogus"));
    c.send("{ not json").await;
    assert!(matches!(c.next_reply().await, Reply::Error { param: None, .. }));
    c.ws.send(Message::binary(vec![1u8, 2, 3])).await.unwrap();
    assert!(matches!(c.next_reply().await, Reply::Error { .. }));
    let a = c.next_frame().await.meta.frame_index;
    let b = c.next_frame().await.meta.frame_index;
    assert_eq!(b, a + 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn aperture_zero_is_echoed_in_metadata() {
    let (_, mut c) = start().await;
    c.send(r#"{"type":"setParam","name":"aperture","value":0}"#).await;
    let Reply::Ack { effective_frame, .. } = c.next_reply().await else {
        panic!("expected ack")
    };
    loop {
        let f = c.next_frame().await;
        if f.meta.frame_index >= effective_frame {
            assert_eq!(f.meta.params["aperture"], 0.0);
            assert_eq!(f.meta.camera.aperture, 0.0);
            break;
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mode_and_camera_updates_show_in_frames() {
    let (_, mut c) = start().await;
    c.send(r#"{"type":"setParam","name":"gt_spp","value":2}"#).await;
    c.send(r#"{"type":"setMode","mode":"ground-truth"}"#).await;
    c.next_reply().await;
    let Reply::Ack { effective_frame, .. } = c.next_reply().await else {
        panic!("expected ack")
    };
    loop {
        let f = c.next_frame().await;
        if f.meta.frame_index >= effective_frame {
            assert_eq!(f.meta.mode, "ground-truth");
            break;
        }
    }
    c.send(r#"{"type":"setMode","mode":"hybrid"}"#).await;
    // Orbit a little each frame, as a client dragging the view would. Frames
    // already queued predate the updates, so allow a few.
    let mut moved = false;
    for i in 1..=30 {
        let x = 0.05 * i as f64;
        c.send(&format!(r#"{{"type":"setCamera","position":[{x},0,0],"target":[0,0,3]}}"#)).await;
        let f = c.next_frame().await;
        if f.meta.mode == "hybrid" && f.meta.mean_motion_px > 0.0 {
            moved = true;
            break;
        }
    }
    assert!(moved, "no frame reported camera motion");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_stops_frames_until_resume() {
    let (_, mut c) = start().await;
    c.send(r#"{"type":"pause"}"#).await;
    // Drain whatever was in flight before the pause was applied.
    loop {
        if let Incoming::Reply(r) = c.next().await {
            assert!(matches!(r, Reply::Ack { .. }));
            break;
        }
    }
    let quiet = tokio::time::timeout(Duration::from_millis(400), c.ws.next()).await;
    assert!(quiet.is_err(), "frame arrived while paused");
    c.send(r#"{"type":"resume"}"#).await;
    assert!(matches!(c.next().await, Incoming::Reply(Reply::Ack { .. })));
    c.next_frame().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pass_dump_follows_its_frame() {
    let (_, mut c) = start().await;
    c.send(r#"{"type":"requestPassDump","name":"mask"}"#).await;
    c.next_reply().await;
    loop {
        let f = c.next_frame().await;
        if f.meta.pass.is_some() {
            assert_eq!(f.meta.pass.as_deref(), Some("mask"));
            assert_eq!((f.width, f.height), (24, 14));
            break;
        }
    }
    let f = c.next_frame().await;
    assert!(f.meta.pass.is_none());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn busy_port_fails_at_startup() {
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = holder.local_addr().unwrap();
    let err = Server::bind(session(), addr).await.err().expect("bind should fail");
    assert!(matches!(err, ServiceError::Bind { .. }), "{err}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn session_survives_reconnect() {
    let mut server = Server::bind(session(), "127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = server.local_addr().unwrap();
    let task = tokio::spawn(async move {
        server.serve_one().await.unwrap();
        server.serve_one().await.unwrap();
    });
    let url = format!("ws://{addr}");
    let (ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let mut c = Client { ws };
    c.send(r#"{"type":"setParam","name":"m","value":3}"#).await;
    c.next_reply().await;
    let first = c.next_frame().await.meta.frame_index;
    c.ws.close(None).await.unwrap();
    drop(c);
    let (ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let mut c = Client { ws };
    let f = c.next_frame().await;
    assert!(f.meta.frame_index > first);
    assert_eq!(f.meta.params["m"], 3.0);
    c.ws.close(None).await.unwrap();
    drop(c);
    tokio::time::timeout(Duration::from_secs(30), task).await.unwrap().unwrap();
}
