//! Two carriers for the same frame protocol: newline-delimited lines over a
//! plain socket, and one frame per text message over a WebSocket.

use std::io::{self, ErrorKind, Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use metaturing::protocol::MAX_FRAME_BYTES;
use tungstenite::{Message, WebSocket};

/// How long a poll blocks before reporting [`Polled::Idle`].
pub const POLL_INTERVAL: Duration = Duration::from_millis(20);

#[derive(Debug)]
pub enum Polled {
    /// One frame's bytes, without the line terminator.
    Frame(Vec<u8>),
    Idle,
    /// The peer sent more than [`MAX_FRAME_BYTES`] without a terminator.
    TooLong,
    Closed,
}

pub trait Transport: Send {
    fn poll(&mut self) -> Polled;
    /// Send one encoded frame line (newline included).
    fn send(&mut self, line: &str) -> io::Result<()>;
    fn close(&mut self);
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

/// Newline-delimited frames over TCP.
pub struct LineTransport {
    stream: TcpStream,
    pending: Vec<u8>,
}

impl LineTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nonblocking(false)?;
        stream.set_read_timeout(Some(POLL_INTERVAL))?;
        stream.set_nodelay(true)?;
        Ok(LineTransport { stream, pending: Vec::new() })
    }

    fn take_line(&mut self) -> Option<Vec<u8>> {
        let end = self.pending.iter().position(|&b| b == b'\n')?;
        let mut line: Vec<u8> = self.pending.drain(..=end).collect();
        line.pop();
        Some(line)
    }
}

impl Transport for LineTransport {
    fn poll(&mut self) -> Polled {
        if let Some(line) = self.take_line() {
            return Polled::Frame(line);
        }
        if self.pending.len() > MAX_FRAME_BYTES {
            return Polled::TooLong;
        }
        let mut chunk = [0u8; 4096];
        match self.stream.read(&mut chunk) {
            Ok(0) => Polled::Closed,
            Ok(n) => {
                self.pending.extend_from_slice(&chunk[..n]);
                match self.take_line() {
                    Some(line) => Polled::Frame(line),
                    None if self.pending.len() > MAX_FRAME_BYTES => Polled::TooLong,
                    None => Polled::Idle,
                }
            }
            Err(e) if is_timeout(&e) || e.kind() == ErrorKind::Interrupted => Polled::Idle,
            Err(_) => Polled::Closed,
        }
    }

    fn send(&mut self, line: &str) -> io::Result<()> {
        self.stream.write_all(line.as_bytes())
    }

    fn close(&mut self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

/// One frame per WebSocket text message; a trailing newline is optional
/// inbound and omitted outbound.
pub struct WsTransport {
    ws: WebSocket<TcpStream>,
}

impl WsTransport {
    /// Complete the server side of the handshake.
    pub fn accept(stream: TcpStream) -> io::Result<Self> {
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        let ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
        Self::wrap(ws)
    }

    /// Client side: connect to `ws://addr/`.
    pub fn connect(stream: TcpStream) -> io::Result<Self> {
        let url = format!("ws://{}/", stream.peer_addr()?);
        stream.set_nodelay(true)?;
        let (ws, _) = tungstenite::client(url, stream).map_err(|e| io::Error::other(e.to_string()))?;
        Self::wrap(ws)
    }

    fn wrap(ws: WebSocket<TcpStream>) -> io::Result<Self> {
        ws.get_ref().set_read_timeout(Some(POLL_INTERVAL))?;
        Ok(WsTransport { ws })
    }
}

impl Transport for WsTransport {
    fn poll(&mut self) -> Polled {
        match self.ws.read() {
            Ok(Message::Text(t)) => frame_or_too_long(t.as_bytes()),
            Ok(Message::Binary(b)) => frame_or_too_long(&b),
            Ok(Message::Close(_)) => Polled::Closed,
            Ok(_) => Polled::Idle,
            Err(tungstenite::Error::Io(e)) if is_timeout(&e) => Polled::Idle,
            Err(_) => Polled::Closed,
        }
    }

    fn send(&mut self, line: &str) -> io::Result<()> {
        let text = line.strip_suffix('\n').unwrap_or(line);
        self.ws.send(Message::text(text)).map_err(|e| match e {
            tungstenite::Error::Io(e) => e,
            other => io::Error::other(other.to_string()),
        })
    }

    fn close(&mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}

fn frame_or_too_long(bytes: &[u8]) -> Polled {
    if bytes.len() > MAX_FRAME_BYTES {
        return Polled::TooLong;
    }
    let bytes = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    Polled::Frame(bytes.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    fn pair() -> (LineTransport, TcpStream) {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let client = TcpStream::connect(l.local_addr().unwrap()).unwrap();
        let (server, _) = l.accept().unwrap();
        (LineTransport::new(server).unwrap(), client)
    }

    fn next(t: &mut LineTransport) -> Polled {
        for _ in 0..100 {
            match t.poll() {
                Polled::Idle => continue,
                other => return other,
            }
        }
        Polled::Idle
    }

    #[test]
    fn lines_are_split_and_partial_lines_wait() {
        let (mut t, mut peer) = pair();
        peer.write_all(b"one\ntwo\nthr").unwrap();
        assert!(matches!(next(&mut t), Polled::Frame(b) if b == b"one"));
        assert!(matches!(next(&mut t), Polled::Frame(b) if b == b"two"));
        assert!(matches!(t.poll(), Polled::Idle));
        peer.write_all(b"ee\n").unwrap();
        assert!(matches!(next(&mut t), Polled::Frame(b) if b == b"three"));
        drop(peer);
        assert!(matches!(next(&mut t), Polled::Closed));
    }

    #[test]
    fn unterminated_flood_is_too_long() {
        let (mut t, mut peer) = pair();
        peer.write_all(&vec![b'x'; MAX_FRAME_BYTES + 1]).unwrap();
        let mut got = Polled::Idle;
        for _ in 0..200 {
            got = t.poll();
            if !matches!(got, Polled::Idle) {
                break;
            }
        }
        assert!(matches!(got, Polled::TooLong));
    }

    #[test]
    fn websocket_frames_drop_the_terminator() {
        assert!(matches!(frame_or_too_long(b"{}\n"), Polled::Frame(b) if b == b"{}"));
        assert!(matches!(frame_or_too_long(&vec![b' '; MAX_FRAME_BYTES + 1]), Polled::TooLong));
    }
}
