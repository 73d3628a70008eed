//! Tokio transport. One listening port speaks three things, decided by the
//! first bytes of each connection: newline-delimited messages over a raw
//! socket, the same messages as websocket text frames (HTTP upgrade), and
//! plain HTTP GET for static UI files.

use std::collections::VecDeque;
use std::io;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::task::{Context, Poll};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader, ReadBuf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;

use crate::session::{AssistOutcome, Output, PendingAssist, Services, Session};
use crate::transcript::TranscriptWriter;

const MAX_HEADER_BYTES: usize = 16 * 1024;

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Directory receiving one transcript file per session.
    pub record_dir: Option<PathBuf>,
    /// Static files served to plain HTTP GET requests.
    pub ui_dir: Option<PathBuf>,
}

pub struct Server {
    services: Arc<Services>,
    options: ServerOptions,
    session_counter: AtomicU64,
    started_ms: u128,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl Server {
    pub fn new(services: Arc<Services>, options: ServerOptions) -> Arc<Self> {
        Arc::new(Server {
            services,
            options,
            session_counter: AtomicU64::new(0),
            started_ms: unix_ms(),
        })
    }

    pub async fn bind(addr: &str) -> io::Result<TcpListener> {
        TcpListener::bind(addr).await
    }

    /// Accepts connections until the listener fails.
    pub async fn run(self: Arc<Self>, listener: TcpListener) -> io::Result<()> {
        loop {
            let (stream, peer) = listener.accept().await?;
            let server = self.clone();
            tokio::spawn(async move {
                if let Err(e) = server.connection(stream, peer).await {
                    tracing::debug!(%peer, error = %e, "connection ended with error");
                }
            });
        }
    }

    fn next_session_id(&self) -> String {
        let n = self.session_counter.fetch_add(1, Ordering::Relaxed) + 1;
        format!("{:x}-{n:04}", self.started_ms)
    }

    async fn connection(self: Arc<Self>, stream: TcpStream, peer: SocketAddr) -> io::Result<()> {
        stream.set_nodelay(true)?;
        let mut first = [0u8; 1];
        if stream.peek(&mut first).await? == 0 {
            return Ok(());
        }
        if first[0] != b'G' && first[0] != b'H' {
            tracing::info!(%peer, "raw session");
            let (read, write) = stream.into_split();
            let conn = RawConn {
                lines: BufReader::new(read).lines(),
                write,
            };
            return self.run_session(Conn::Raw(conn)).await;
        }
        let (head, stream) = read_http_head(stream).await?;
        let request = HttpHead::parse(&head);
        if request.is_websocket_upgrade() {
            tracing::info!(%peer, "websocket session");
            let prefixed = Prefixed { prefix: head, pos: 0, inner: stream };
            let ws = tokio_tungstenite::accept_async(prefixed)
                .await
                .map_err(io::Error::other)?;
            return self.run_session(Conn::Ws(Box::new(ws))).await;
        }
        self.serve_static(stream, &request).await
    }

    async fn run_session(&self, mut conn: Conn) -> io::Result<()> {
        let mut session = Session::new(self.services.clone(), self.next_session_id());
        let mut writer = match &self.options.record_dir {
            Some(dir) => Some(TranscriptWriter::create(&dir.join(format!("{}.transcript", session.id())))?),
            None => None,
        };
        let (tx, mut rx) = mpsc::unbounded_channel::<AssistOutcome>();
        // assistant work runs one at a time per session, in utterance order
        let mut queue: VecDeque<PendingAssist> = VecDeque::new();
        let mut busy = false;
        let mut opened_at: Option<Instant> = None;

        let start_next = |queue: &mut VecDeque<PendingAssist>, busy: &mut bool| {
            if *busy {
                return;
            }
            if let Some(p) = queue.pop_front() {
                *busy = true;
                let services = self.services.clone();
                let tx = tx.clone();
                tokio::task::spawn_blocking(move || {
                    let _ = tx.send(p.run(&services));
                });
            }
        };

        loop {
            let out: Output = tokio::select! {
                line = conn.recv() => {
                    let Some(line) = line? else { break };
                    if line.trim().is_empty() {
                        continue;
                    }
                    if let Some((dt, _)) = session.wall_clock() {
                        let origin = *opened_at.get_or_insert_with(Instant::now);
                        session.advance_clock((origin.elapsed().as_secs_f64() / dt) as u64);
                    }
                    let out = session.handle_line(&line);
                    if opened_at.is_none() && session.wall_clock().is_some() {
                        opened_at = Some(Instant::now());
                    }
                    out
                }
                Some(outcome) = rx.recv() => {
                    busy = false;
                    session.complete_assist(outcome)
                }
            };
            if let Some(w) = writer.as_mut() {
                w.write(session.drain_new_entries(), unix_ms())?;
            }
            for line in &out.lines {
                conn.send(line).await?;
            }
            if out.close {
                break;
            }
            queue.extend(out.pending);
            start_next(&mut queue, &mut busy);
        }
        if let Some(w) = writer.as_mut() {
            w.write(session.drain_new_entries(), unix_ms())?;
        }
        conn.close().await;
        Ok(())
    }

    async fn serve_static(&self, mut stream: TcpStream, request: &HttpHead) -> io::Result<()> {
        let (status, content_type, body) = match (&self.options.ui_dir, request.method.as_str()) {
            (_, m) if m != "GET" && m != "HEAD" => (405, "text/plain", b"method not allowed\n".to_vec()),
            (None, _) => (404, "text/plain", b"no UI directory configured\n".to_vec()),
            (Some(dir), _) => match resolve_static(dir, &request.path) {
                Some(path) => match tokio::fs::read(&path).await {
                    Ok(bytes) => (200, content_type_for(&path), bytes),
                    Err(_) => (404, "text/plain", b"not found\n".to_vec()),
                },
                None => (404, "text/plain", b"not found\n".to_vec()),
            },
        };
        let reason = match status {
            200 => "OK",
            404 => "Not Found",
            _ => "Method Not Allowed",
        };
        let head = format!(
            "HTTP/1.1 {status} {reason}\r\ncontent-type: {content_type}\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
            body.len()
        );
        stream.write_all(head.as_bytes()).await?;
        if request.method != "HEAD" {
            stream.write_all(&body).await?;
        }
        stream.shutdown().await
    }
}

struct RawConn {
    lines: tokio::io::Lines<BufReader<tokio::net::tcp::OwnedReadHalf>>,
    write: tokio::net::tcp::OwnedWriteHalf,
}

enum Conn {
    Raw(RawConn),
    Ws(Box<tokio_tungstenite::WebSocketStream<Prefixed<TcpStream>>>),
}

impl Conn {
    /// Next client line; `None` at end of stream.
    async fn recv(&mut self) -> io::Result<Option<String>> {
        match self {
            Conn::Raw(c) => c.lines.next_line().await,
            Conn::Ws(ws) => loop {
                match ws.next().await {
                    None => return Ok(None),
                    Some(Err(e)) => return Err(io::Error::other(e)),
                    Some(Ok(Message::Text(t))) => return Ok(Some(t.as_str().trim_end().to_string())),
                    Some(Ok(Message::Binary(b))) => {
                        return Ok(Some(String::from_utf8_lossy(&b).trim_end().to_string()))
                    }
                    Some(Ok(Message::Close(_))) => return Ok(None),
                    Some(Ok(_)) => continue,
                }
            },
        }
    }

    async fn send(&mut self, line: &str) -> io::Result<()> {
        match self {
            Conn::Raw(c) => {
                c.write.write_all(line.as_bytes()).await?;
                c.write.write_all(b"\n").await
            }
            Conn::Ws(ws) => ws.send(Message::text(line)).await.map_err(io::Error::other),
        }
    }

    async fn close(self) {
        match self {
            Conn::Raw(mut c) => {
                let _ = c.write.shutdown().await;
            }
            Conn::Ws(mut ws) => {
                let _ = SinkExt::close(&mut ws).await;
            }
        }
    }
}

/// Reads the request line and headers byte by byte so nothing past the
/// blank line is consumed.
async fn read_http_head(mut stream: TcpStream) -> io::Result<(Vec<u8>, TcpStream)> {
    let mut head = Vec::new();
    let mut byte = [0u8; 1];
    while !head.ends_with(b"\r\n\r\n") {
        if head.len() > MAX_HEADER_BYTES {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "request head too large"));
        }
        if stream.read(&mut byte).await? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated request head"));
        }
        head.push(byte[0]);
    }
    Ok((head, stream))
}

struct HttpHead {
    method: String,
    path: String,
    headers: Vec<(String, String)>,
}

impl HttpHead {
    fn parse(head: &[u8]) -> Self {
        let text = String::from_utf8_lossy(head);
        let mut lines = text.split("\r\n");
        let mut first = lines.next().unwrap_or("").split_whitespace();
        let method = first.next().unwrap_or("").to_string();
        let path = first.next().unwrap_or("/").to_string();
        let headers = lines
            .filter_map(|l| l.split_once(':'))
            .map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim().to_string()))
            .collect();
        HttpHead { method, path, headers }
    }

    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn is_websocket_upgrade(&self) -> bool {
        self.header("upgrade")
            .is_some_and(|v| v.eq_ignore_ascii_case("websocket"))
    }
}

fn resolve_static(root: &Path, url_path: &str) -> Option<PathBuf> {
    let path = url_path.split(['?', '#']).next().unwrap_or("/");
    let relative = Path::new(path.trim_start_matches('/'));
    if relative
        .components()
        .any(|c| !matches!(c, Component::Normal(_)))
    {
        return None;
    }
    let mut full = root.join(relative);
    if path.ends_with('/') || full.is_dir() {
        full.push("index.html");
    }
    full.is_file().then_some(full)
}

fn content_type_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "wav" => "audio/wav",
        "ico" => "image/x-icon",
        "wasm" => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// A stream that first yields already-consumed bytes, then the inner stream.
struct Prefixed<S> {
    prefix: Vec<u8>,
    pos: usize,
    inner: S,
}

impl<S: AsyncRead + Unpin> AsyncRead for Prefixed<S> {
    fn poll_read(mut self: Pin<&mut Self>, cx: &mut Context<'_>, buf: &mut ReadBuf<'_>) -> Poll<io::Result<()>> {
        if self.pos < self.prefix.len() {
            let n = buf.remaining().min(self.prefix.len() - self.pos);
            let start = self.pos;
            buf.put_slice(&self.prefix[start..start + n]);
            self.pos += n;
            return Poll::Ready(Ok(()));
        }
        Pin::new(&mut self.inner).poll_read(cx, buf)
    }
}

impl<S: AsyncWrite + Unpin> AsyncWrite for Prefixed<S> {
    fn poll_write(mut self: Pin<&mut Self>, cx: &mut Context<'_>, buf: &[u8]) -> Poll<io::Result<usize>> {
        Pin::new(&mut self.inner).poll_write(cx, buf)
    }

    fn poll_flush(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<io::Result<()>> {
        Pin::new(&mut self.inner).poll_flush(cx)
    }

    fn poll_shutdown(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<io::Result<()>> {
        Pin::new(&mut self.inner).poll_shutdown(cx)
    }
}
