//! Frame transports: in-process channels and TCP.
//!
//! Both carry the exact bytes produced by [`encode_frame`], so a conversation
//! recorded on one transport replays on the other.

use std::collections::HashMap;
use std::fmt;
use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::protocol::{decode_body, encode_frame, frame_len, Message};

/// Where a role listens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Endpoint {
    /// Name in the process-wide in-memory registry.
    Mem(String),
    /// `host:port`.
    Tcp(String),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Mem(n) => write!(f, "mem:{n}"),
            Endpoint::Tcp(a) => write!(f, "{a}"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = Error;

    /// `mem:<name>` or `host:port`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(name) = s.strip_prefix("mem:") {
            return Ok(Endpoint::Mem(name.to_string()));
        }
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Endpoint::Tcp(s.to_string())),
            _ => Err(Error::input(format!("endpoint {s:?} is neither mem:<name> nor host:port"))),
        }
    }
}

/// A bidirectional frame stream.
pub trait Conn: Send {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()>;
    /// Next complete frame body, waiting at most `timeout`.
    fn recv_body(&mut self, timeout: Duration) -> Result<Vec<u8>>;

    fn send(&mut self, msg: &Message) -> Result<()> {
        self.send_frame(&encode_frame(msg)?)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Message> {
        decode_body(&self.recv_body(timeout)?)
    }
}

pub trait Listener: Send {
    fn accept(&mut self) -> Result<Box<dyn Conn>>;
    /// Where peers should connect; resolves port 0 for TCP.
    fn endpoint(&self) -> Endpoint;
}

pub struct MemConn {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl MemConn {
    pub fn pair() -> (MemConn, MemConn) {
        let (a_tx, a_rx) = mpsc::channel();
        let (b_tx, b_rx) = mpsc::channel();
        (MemConn { tx: a_tx, rx: b_rx }, MemConn { tx: b_tx, rx: a_rx })
    }
}

impl Conn for MemConn {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.tx.send(frame.to_vec()).map_err(|_| Error::protocol("peer closed the channel"))
    }

    fn recv_body(&mut self, timeout: Duration) -> Result<Vec<u8>> {
        let frame = match self.rx.recv_timeout(timeout) {
            Ok(f) => f,
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout("frame".into())),
            Err(RecvTimeoutError::Disconnected) => return Err(Error::protocol("peer closed the channel")),
        };
        if frame.len() < 4 {
            return Err(Error::protocol("frame shorter than its length prefix"));
        }
        let len = frame_len(frame[..4].try_into().unwrap())?;
        if frame.len() - 4 != len {
            return Err(Error::protocol(format!("frame announces {len} bytes but carries {}", frame.len() - 4)));
        }
        Ok(frame[4..].to_vec())
    }
}

type Registry = Mutex<HashMap<String, Sender<MemConn>>>;

fn registry() -> &'static Registry {
    static R: OnceLock<Registry> = OnceLock::new();
    R.get_or_init(Default::default)
}

pub struct MemListener {
    name: String,
    incoming: Receiver<MemConn>,
}

impl Listener for MemListener {
    fn accept(&mut self) -> Result<Box<dyn Conn>> {
        let c = self.incoming.recv().map_err(|_| Error::protocol("listener unregistered"))?;
        Ok(Box::new(c))
    }

    fn endpoint(&self) -> Endpoint {
        Endpoint::Mem(self.name.clone())
    }
}

impl Drop for MemListener {
    fn drop(&mut self) {
        registry().lock().unwrap().remove(&self.name);
    }
}

pub struct TcpConn {
    stream: TcpStream,
}

impl TcpConn {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true).map_err(|e| Error::io("tcp socket", e))?;
        Ok(Self { stream })
    }

    fn read_exact_by(&mut self, buf: &mut [u8], deadline: Instant) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(Error::Timeout("frame".into()));
            }
            self.stream.set_read_timeout(Some(left)).map_err(|e| Error::io("tcp socket", e))?;
            match self.stream.read(&mut buf[filled..]) {
                Ok(0) => return Err(Error::protocol("peer closed the connection mid-frame")),
                Ok(n) => filled += n,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io("tcp socket", e)),
            }
        }
        Ok(())
    }
}

impl Conn for TcpConn {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.stream.write_all(frame).map_err(|e| Error::io("tcp socket", e))
    }

    fn recv_body(&mut self, timeout: Duration) -> Result<Vec<u8>> {
        let deadline = Instant::now() + timeout;
        let mut prefix = [0u8; 4];
        self.read_exact_by(&mut prefix, deadline)?;
        let mut body = vec![0u8; frame_len(prefix)?];
        self.read_exact_by(&mut body, deadline)?;
        Ok(body)
    }
}

pub struct TcpFrameListener {
    inner: TcpListener,
}

impl Listener for TcpFrameListener {
    fn accept(&mut self) -> Result<Box<dyn Conn>> {
        let (s, _) = self.inner.accept().map_err(|e| Error::io("tcp listener", e))?;
        Ok(Box::new(TcpConn::new(s)?))
    }

    fn endpoint(&self) -> Endpoint {
        match self.inner.local_addr() {
            Ok(a) => Endpoint::Tcp(a.to_string()),
            Err(_) => Endpoint::Tcp("unknown:0".into()),
        }
    }
}

pub fn listen(ep: &Endpoint) -> Result<Box<dyn Listener>> {
    match ep {
        Endpoint::Mem(name) => {
            let mut reg = registry().lock().unwrap();
            if reg.contains_key(name) {
                return Err(Error::input(format!("in-memory endpoint {name:?} is already bound")));
            }
            let (tx, rx) = mpsc::channel();
            reg.insert(name.clone(), tx);
            Ok(Box::new(MemListener { name: name.clone(), incoming: rx }))
        }
        Endpoint::Tcp(addr) => {
            let inner = TcpListener::bind(addr).map_err(|e| Error::io(addr, e))?;
            Ok(Box::new(TcpFrameListener { inner }))
        }
    }
}

pub fn connect(ep: &Endpoint) -> Result<Box<dyn Conn>> {
    match ep {
        Endpoint::Mem(name) => {
            let reg = registry().lock().unwrap();
            let tx = reg.get(name).ok_or_else(|| Error::protocol(format!("nothing listens on mem:{name}")))?;
            let (ours, theirs) = MemConn::pair();
            tx.send(theirs).map_err(|_| Error::protocol(format!("mem:{name} stopped accepting")))?;
            Ok(Box::new(ours))
        }
        Endpoint::Tcp(addr) => {
            let s = TcpStream::connect(addr).map_err(|e| Error::io(addr, e))?;
            Ok(Box::new(TcpConn::new(s)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::SessionId;

    fn msg() -> Message {
        Message::Abort { session: SessionId(7), reason: "test".into() }
    }

    #[test]
    fn endpoint_parsing() {
        assert_eq!("mem:cloud".parse::<Endpoint>().unwrap(), Endpoint::Mem("cloud".into()));
        assert_eq!("127.0.0.1:9000".parse::<Endpoint>().unwrap(), Endpoint::Tcp("127.0.0.1:9000".into()));
        assert!("nohost".parse::<Endpoint>().is_err());
        assert!("host:notaport".parse::<Endpoint>().is_err());
    }

    #[test]
    fn mem_and_tcp_carry_identical_frames() {
        for ep in [Endpoint::Mem("net-test".into()), Endpoint::Tcp("127.0.0.1:0".into())] {
            let mut l = listen(&ep).unwrap();
            let ep = l.endpoint();
            let server = std::thread::spawn(move || {
                let mut c = l.accept().unwrap();
                let m = c.recv(Duration::from_secs(5)).unwrap();
                c.send(&m).unwrap();
            });
            let mut c = connect(&ep).unwrap();
            c.send(&msg()).unwrap();
            assert_eq!(c.recv(Duration::from_secs(5)).unwrap(), msg());
            server.join().unwrap();
        }
    }

    #[test]
    fn recv_times_out() {
        let (mut a, _b) = MemConn::pair();
        assert!(matches!(a.recv(Duration::from_millis(10)), Err(Error::Timeout(_))));
    }

    #[test]
    fn double_bind_rejected() {
        let _l = listen(&Endpoint::Mem("dup".into())).unwrap();
        assert!(listen(&Endpoint::Mem("dup".into())).is_err());
    }
}
