use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use super::{Accounting, LinkConfig, LinkError, Meter, ProverLink, Reply, Responder, Transcript};
use crate::protocol::wire::{read_frame, write_frame};
use crate::protocol::Message;

/// Verifier side of a TCP connection to a prover.
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    acct: Accounting,
    closed: bool,
}

impl TcpLink {
    pub fn connect(addr: impl ToSocketAddrs, config: LinkConfig) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_micros(config.timeout_us.max(1))))?;
        Ok(TcpLink {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            acct: Accounting { config, meter: Meter::default(), transcript: None },
            closed: false,
        })
    }

    pub fn with_transcript(mut self, transcript: Transcript, link_id: u32) -> Self {
        self.acct.transcript = Some((transcript, link_id));
        self
    }

    fn write(&mut self, message: &Message) -> Result<(), LinkError> {
        let frame = message.to_frame();
        self.acct.outgoing(&frame);
        if self.closed {
            return Err(LinkError::Closed);
        }
        write_frame(&mut self.writer, &frame).map_err(|_| self.fail(LinkError::Closed))
    }

    /// After any failure the stream may hold a late reply, so it is not reused.
    fn fail(&mut self, err: LinkError) -> LinkError {
        self.closed = true;
        let _ = self.writer.get_ref().shutdown(Shutdown::Both);
        err
    }
}

impl ProverLink for TcpLink {
    fn exchange(&mut self, request: &Message) -> Result<Message, LinkError> {
        self.acct.meter.exchanges += 1;
        if let Err(e) = self.write(request) {
            self.acct.waited_out();
            return Err(e);
        }
        match read_frame(&mut self.reader) {
            Ok(Some(frame)) => {
                self.acct.incoming(&frame);
                Message::from_frame(&frame).map_err(|e| self.fail(LinkError::Decode(e.to_string())))
            }
            Ok(None) => {
                self.acct.waited_out();
                Err(self.fail(LinkError::Closed))
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                self.acct.waited_out();
                Err(self.fail(LinkError::Timeout))
            }
            Err(_) => {
                self.acct.waited_out();
                Err(self.fail(LinkError::Closed))
            }
        }
    }

    fn send(&mut self, message: &Message) -> Result<(), LinkError> {
        self.write(message)
    }

    fn meter(&self) -> Meter {
        self.acct.meter
    }
}

type Factory = dyn Fn() -> Box<dyn Responder> + Send + Sync;

/// TCP prover endpoint: one thread and one fresh responder per connection.
pub struct Server {
    listener: TcpListener,
    factory: Arc<Factory>,
    stop: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(
        addr: impl ToSocketAddrs,
        factory: impl Fn() -> Box<dyn Responder> + Send + Sync + 'static,
    ) -> io::Result<Self> {
        Ok(Server { listener: TcpListener::bind(addr)?, factory: Arc::new(factory), stop: Arc::default() })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until stopped through a [`ServerHandle`].
    pub fn run(self) {
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let responder = (self.factory)();
                    thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, responder) {
                            debug!("connection ended: {e}");
                        }
                    });
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    }

    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = self.stop.clone();
        let join = thread::spawn(move || self.run());
        Ok(ServerHandle { addr, stop, join: Some(join) })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so it can observe the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

fn serve_connection(stream: TcpStream, mut responder: Box<dyn Responder>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(frame) = read_frame(&mut reader)? {
        let Ok(request) = Message::from_frame(&frame) else {
            break;
        };
        match responder.respond(&request) {
            Reply::Send(msg) => write_frame(&mut writer, &msg.to_frame())?,
            Reply::Nothing => {}
            Reply::Hangup => break,
        }
    }
    writer.get_ref().shutdown(Shutdown::Both)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl Responder for Echo {
        fn respond(&mut self, request: &Message) -> Reply {
            match request {
                Message::BalanceRequest { account: 0 } => Reply::Hangup,
                Message::BalanceRequest { account: 1 } => Reply::Nothing,
                m => Reply::Send(m.clone()),
            }
        }
    }

    fn cfg() -> LinkConfig {
        LinkConfig { timeout_us: 300_000, ..LinkConfig::default() }
    }

    #[test]
    fn loopback_echo_and_faults() {
        let server = Server::bind("127.0.0.1:0", || Box::new(Echo) as Box<dyn Responder>).unwrap().spawn().unwrap();
        let mut link = TcpLink::connect(server.addr(), cfg()).unwrap();
        let m = Message::Open { tree: 1, path: vec![3, 4] };
        assert_eq!(link.exchange(&m).unwrap(), m);
        assert_eq!(link.meter().bytes_up, m.frame_len() as u64);

        assert_eq!(link.exchange(&Message::BalanceRequest { account: 1 }), Err(LinkError::Timeout));
        assert_eq!(link.exchange(&m), Err(LinkError::Closed));

        let mut other = TcpLink::connect(server.addr(), cfg()).unwrap();
        assert_eq!(other.exchange(&Message::BalanceRequest { account: 0 }), Err(LinkError::Closed));
    }
}
