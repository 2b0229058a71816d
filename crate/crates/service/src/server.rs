//! Socket side: accepts one client, runs the render loop on a blocking
//! thread and shuttles messages through two queues.

use std::net::SocketAddr;

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::mpsc::{self, error::TryRecvError};
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{ControlMessage, Reply};
use crate::session::Session;

/// Environment variable holding the bind host (default `127.0.0.1`).
pub const BIND_ENV: &str = "DOF_BIND";
pub const DEFAULT_PORT: u16 = 8765;

/// Frames in flight before the render loop waits for the client.
const OUTBOUND_DEPTH: usize = 4;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("invalid bind address {0:?}")]
    Address(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("render thread failed: {0}")]
    Render(String),
}

/// `host:port` from [`BIND_ENV`] (or loopback) and `port`.
pub fn bind_address(port: u16) -> Result<SocketAddr, ServiceError> {
    let host = std::env::var(BIND_ENV).unwrap_or_else(|_| "127.0.0.1".into());
    let text = if host.contains(':') && !host.starts_with('[') {
        format!("[{host}]:{port}")
    } else {
        format!("{host}:{port}")
    };
    text.parse().map_err(|_| ServiceError::Address(text))
}

pub struct Server {
    listener: TcpListener,
    session: Option<Session>,
}

impl Server {
    /// Binds immediately so a busy port fails at startup.
    pub async fn bind(session: Session, addr: SocketAddr) -> Result<Self, ServiceError> {
        let listener = TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        Ok(Self {
            listener,
            session: Some(session),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ServiceError> {
        Ok(self.listener.local_addr()?)
    }

    /// Serve clients one after another; session state carries over.
    pub async fn run(mut self) -> Result<(), ServiceError> {
        loop {
            self.serve_one().await?;
        }
    }

    /// Accept one connection and serve it until it closes.
    pub async fn serve_one(&mut self) -> Result<(), ServiceError> {
        let (stream, _) = self.listener.accept().await?;
        let ws = match tokio_tungstenite::accept_async(stream).await {
            Ok(ws) => ws,
            // A failed handshake only costs that client.
            Err(_) => return Ok(()),
        };
        let (mut sink, mut source) = ws.split();
        let (ctrl_tx, ctrl_rx) = mpsc::unbounded_channel::<String>();
        let (out_tx, mut out_rx) = mpsc::channel::<Message>(OUTBOUND_DEPTH);

        let session = self.session.take().expect("session present between connections");
        let render = tokio::task::spawn_blocking(move || render_loop(session, ctrl_rx, out_tx));

        let (err_tx, mut err_rx) = mpsc::unbounded_channel::<Message>();
        let reader = async move {
            while let Some(Ok(msg)) = source.next().await {
                match msg {
                    Message::Text(t) => {
                        if ctrl_tx.send(t.to_string()).is_err() {
                            break;
                        }
                    }
                    Message::Binary(_) => {
                        let reply = Reply::Error {
                            id: None,
                            message: "control messages must be text".into(),
                            param: None,
                            range: None,
                        };
                        let _ = err_tx.send(Message::text(reply.to_json()));
                    }
                    Message::Close(_) => break,
                    _ => {}
                }
            }
        };
        let writer = async move {
            loop {
                let msg = tokio::select! {
                    m = out_rx.recv() => m,
                    Some(m) = err_rx.recv() => Some(m),
                };
                let Some(msg) = msg else { break };
                if sink.send(msg).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        };
        // The reader ends on close; dropping its queue stops the render
        // loop, which drops the outbound queue and ends the writer.
        tokio::join!(reader, writer);
        let session = render.await.map_err(|e| ServiceError::Render(e.to_string()))?;
        self.session = Some(session);
        Ok(())
    }
}

/// Drain the queue at each frame start, reply to every message, then render
/// and push the frame. While paused, block on the queue instead.
fn render_loop(
    mut session: Session,
    mut ctrl: mpsc::UnboundedReceiver<String>,
    out: mpsc::Sender<Message>,
) -> Session {
    loop {
        let mut pending = Vec::new();
        if session.paused() {
            match ctrl.blocking_recv() {
                Some(t) => pending.push(t),
                None => return session,
            }
        }
        loop {
            match ctrl.try_recv() {
                Ok(t) => pending.push(t),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return session,
            }
        }
        for text in pending {
            let reply = session.handle_text(&text);
            if out.blocking_send(Message::text(reply.to_json())).is_err() {
                return session;
            }
        }
        if session.paused() {
            continue;
        }
        match session.render() {
            Ok(frame) => {
                for payload in session.payloads(&frame) {
                    if out.blocking_send(Message::binary(payload)).is_err() {
                        return session;
                    }
                }
            }
            Err(e) => {
                // Stop rendering until the client fixes the state.
                let _ = session.handle(ControlMessage::Pause);
                let reply = Reply::Error {
                    id: None,
                    message: format!("render failed, session paused: {e}"),
                    param: None,
                    range: None,
                };
                if out.blocking_send(Message::text(reply.to_json())).is_err() {
                    return session;
                }
            }
        }
    }
}

/// Blocking entry point: bind, then serve clients until an error.
pub fn serve(session: Session, port: u16) -> Result<(), ServiceError> {
    let addr = bind_address(port)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let server = Server::bind(session, addr).await?;
        eprintln!("serving on ws://{}", server.local_addr()?);
        server.run().await
    })
}
