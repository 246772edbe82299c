#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use futures::{SinkExt, StreamExt};
use icepilot::protocol::{MessageType, WireMessage};
use icepilot::service::{serve, ServiceState};
use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

pub struct Server {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<std::io::Result<()>>>,
}

impl Server {
    pub async fn start(state: Arc<ServiceState>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve(listener, state, async {
            let _ = rx.await;
        }));
        Self {
            addr,
            stop: Some(tx),
            task: Some(task),
        }
    }

    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.take().unwrap().await.unwrap().unwrap();
    }
}

/// Minimal HTTP/1.1 exchange; returns the status and the JSON body.
pub async fn http(addr: SocketAddr, method: &str, path: &str, body: &str) -> (u16, Value) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).await.unwrap();
    let text = String::from_utf8(raw).unwrap();
    let (head, body) = text.split_once("\r\n\r\n").unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let json = serde_json::from_str(body).unwrap_or_else(|_| Value::String(body.to_string()));
    (status, json)
}

pub struct Client {
    pub token: String,
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    next_corr: u64,
}

impl Client {
    pub async fn connect(addr: SocketAddr, token: &str) -> Self {
        let (ws, _) = connect_async(format!("ws://{addr}/ws/{token}"))
            .await
            .unwrap();
        Self {
            token: token.to_string(),
            ws,
            next_corr: 0,
        }
    }

    /// Creates a session over HTTP and connects to it.
    pub async fn open(addr: SocketAddr, request: &str) -> (Self, Value) {
        let (status, created) = http(addr, "POST", "/session", request).await;
        assert_eq!(status, 201, "{created}");
        let token = created["token"].as_str().unwrap().to_string();
        (Self::connect(addr, &token).await, created)
    }

    pub async fn send_raw(&mut self, text: String) {
        self.ws.send(Message::Text(text.into())).await.unwrap();
    }

    pub async fn recv(&mut self) -> WireMessage {
        loop {
            match self.ws.next().await.expect("socket open").unwrap() {
                Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
                Message::Close(_) => panic!("socket closed"),
                _ => continue,
            }
        }
    }

    pub async fn send(&mut self, kind: MessageType, body: Value) -> String {
        self.next_corr += 1;
        let corr = format!("c{}", self.next_corr);
        let msg = WireMessage {
            corr: Some(corr.clone()),
            ..WireMessage::new(kind, &self.token, body)
        };
        self.send_raw(serde_json::to_string(&msg).unwrap()).await;
        corr
    }

    /// Sends a command and collects its replies: `apply_delta` on a session
    /// with a goal answers with a state update followed by guidance.
    pub async fn command(&mut self, kind: MessageType, body: Value) -> Vec<WireMessage> {
        let corr = self.send(kind, body).await;
        let first = self.recv().await;
        assert_eq!(first.corr.as_deref(), Some(corr.as_str()));
        let more = kind == MessageType::ApplyDelta
            && first.kind == MessageType::StateUpdate
            && !first.body["goal"].is_null();
        let mut out = vec![first];
        if more {
            let second = self.recv().await;
            assert_eq!(second.corr.as_deref(), Some(corr.as_str()));
            assert_eq!(second.seq, out[0].seq);
            out.push(second);
        }
        out
    }
}
