//! Byte-stream transports: TCP for distributed runs and an in-process duplex
//! channel that deterministic tests (and IN_PROCESS experiment mode) use with
//! the exact same frames.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::time::Duration;

/// A connected byte stream the protocol can run over.
pub trait Conn: Read + Write + Send {
    fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()>;
}

impl Conn for TcpStream {
    fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()> {
        TcpStream::set_read_timeout(self, timeout)
    }
}

/// One endpoint of an in-process duplex channel.
pub struct InProcConn {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    pos: usize,
    timeout: Option<Duration>,
}

/// Crossed channel pair behaving like a loopback socket.
pub fn duplex() -> (InProcConn, InProcConn) {
    let (atx, brx) = channel();
    let (btx, arx) = channel();
    (
        InProcConn { tx: atx, rx: arx, pending: Vec::new(), pos: 0, timeout: None },
        InProcConn { tx: btx, rx: brx, pending: Vec::new(), pos: 0, timeout: None },
    )
}

impl Read for InProcConn {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos >= self.pending.len() {
            let chunk = match self.timeout {
                Some(t) => match self.rx.recv_timeout(t) {
                    Ok(c) => c,
                    Err(RecvTimeoutError::Timeout) => {
                        return Err(io::Error::new(io::ErrorKind::TimedOut, "read timed out"))
                    }
                    Err(RecvTimeoutError::Disconnected) => return Ok(0),
                },
                None => match self.rx.recv() {
                    Ok(c) => c,
                    Err(_) => return Ok(0), // peer hung up: EOF
                },
            };
            self.pending = chunk;
            self.pos = 0;
        }
        let n = buf.len().min(self.pending.len() - self.pos);
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for InProcConn {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer hung up"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Conn for InProcConn {
    fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()> {
        self.timeout = timeout;
        Ok(())
    }
}

/// Accept side of the in-process transport.
pub struct InProcListener {
    inbox: Mutex<Receiver<InProcConn>>,
}

/// Connect side of the in-process transport; cheap to clone into client
/// threads.
#[derive(Clone)]
pub struct InProcDialer {
    tx: Sender<InProcConn>,
}

pub fn in_proc_net() -> (InProcListener, InProcDialer) {
    let (tx, rx) = channel();
    (InProcListener { inbox: Mutex::new(rx) }, InProcDialer { tx })
}

impl InProcDialer {
    pub fn connect(&self) -> io::Result<InProcConn> {
        let (mine, theirs) = duplex();
        self.tx
            .send(theirs)
            .map_err(|_| io::Error::new(io::ErrorKind::ConnectionRefused, "listener gone"))?;
        Ok(mine)
    }
}

/// Accept loop abstraction shared by the TCP listener and the in-process
/// listener.
pub trait Listen: Send {
    /// Waits up to `timeout` for a connection; `None` means none arrived.
    fn accept_timeout(&self, timeout: Duration) -> io::Result<Option<Box<dyn Conn>>>;
}

impl Listen for InProcListener {
    fn accept_timeout(&self, timeout: Duration) -> io::Result<Option<Box<dyn Conn>>> {
        let inbox = self.inbox.lock().expect("listener poisoned");
        match inbox.recv_timeout(timeout) {
            Ok(conn) => Ok(Some(Box::new(conn))),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => {
                Err(io::Error::new(io::ErrorKind::BrokenPipe, "all dialers gone"))
            }
        }
    }
}

/// Nonblocking-poll wrapper over a TCP listener.
pub struct TcpListen {
    listener: TcpListener,
}

impl TcpListen {
    pub fn bind(addr: &str) -> io::Result<TcpListen> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(TcpListen { listener })
    }

    pub fn local_addr(&self) -> io::Result<std::net::SocketAddr> {
        self.listener.local_addr()
    }
}

impl Listen for TcpListen {
    fn accept_timeout(&self, timeout: Duration) -> io::Result<Option<Box<dyn Conn>>> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    return Ok(Some(Box::new(stream)));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if std::time::Instant::now() >= deadline {
                        return Ok(None);
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Connection factory used by the client retry loop.
pub trait Dial {
    fn dial(&mut self) -> io::Result<Box<dyn Conn>>;
}

impl<F> Dial for F
where
    F: FnMut() -> io::Result<Box<dyn Conn>>,
{
    fn dial(&mut self) -> io::Result<Box<dyn Conn>> {
        self()
    }
}

/// Fault-injection wrapper: the connection dies after a fixed number of
/// writes, like a link dropping mid-stream.
pub struct FaultConn<C> {
    inner: C,
    writes_left: usize,
}

impl<C: Conn> FaultConn<C> {
    pub fn new(inner: C, writes_before_cut: usize) -> Self {
        FaultConn { inner, writes_left: writes_before_cut }
    }
}

impl<C: Conn> Read for FaultConn<C> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.writes_left == 0 {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "injected fault"));
        }
        self.inner.read(buf)
    }
}

impl<C: Conn> Write for FaultConn<C> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if self.writes_left == 0 {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "injected fault"));
        }
        self.writes_left -= 1;
        self.inner.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl<C: Conn> Conn for FaultConn<C> {
    fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()> {
        self.inner.set_read_timeout(timeout)
    }
}
