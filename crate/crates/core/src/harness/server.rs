//! TCP server for playground sessions. Each connection gets a thread; a
//! session is controlled by at most one connection at a time.

use std::collections::HashMap;
use std::io::{self, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{decode_client, read_frame, send, ClientMessage, FrameError, ServerMessage};
use super::session::{load_policy, session_env, SessionError, SessionState};

type Shared = Arc<Mutex<SessionState>>;

struct Slot {
    session: Shared,
    owner: Option<u64>,
}

pub struct Server {
    dir: PathBuf,
    sessions: Mutex<HashMap<String, Slot>>,
    next_session: AtomicU64,
    next_connection: AtomicU64,
}

impl Server {
    /// Serves checkpoints from `dir`.
    pub fn new(dir: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            dir: dir.into(),
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            next_connection: AtomicU64::new(1),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Accepts connections until the listener fails.
    pub fn serve(self: &Arc<Self>, listener: TcpListener) -> io::Result<()> {
        for stream in listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let server = Arc::clone(self);
            thread::spawn(move || server.connection(stream));
        }
        Ok(())
    }

    /// Binds `addr` and serves on a background thread.
    pub fn spawn(self: &Arc<Self>, addr: impl ToSocketAddrs) -> io::Result<SocketAddr> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let server = Arc::clone(self);
        thread::spawn(move || server.serve(listener));
        Ok(local)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("registry lock").len()
    }

    fn connection(self: Arc<Self>, stream: TcpStream) {
        let conn = self.next_connection.fetch_add(1, Ordering::Relaxed);
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        log::info!("connection {conn} from {peer}");
        let mut reader = match stream.try_clone() {
            Ok(r) => r,
            Err(e) => {
                log::warn!("connection {conn}: {e}");
                return;
            }
        };
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            let frame = read_frame(&mut reader);
            let stop = frame.is_err();
            if tx.send(frame).is_err() || stop {
                break;
            }
        });
        let mut c = Connection {
            server: &self,
            id: conn,
            out: BufWriter::new(stream),
            current: None,
            run: None,
        };
        if let Err(e) = c.run_loop(&rx) {
            log::info!("connection {conn} closed: {e}");
        }
        self.release(conn);
    }

    fn release(&self, conn: u64) {
        let mut sessions = self.sessions.lock().expect("registry lock");
        for slot in sessions.values_mut() {
            if slot.owner == Some(conn) {
                slot.owner = None;
            }
        }
    }

    /// Claims `id` for `conn` unless another connection holds it.
    fn claim(&self, id: &str, conn: u64) -> Result<Shared, SessionError> {
        let mut sessions = self.sessions.lock().expect("registry lock");
        let slot = sessions
            .get_mut(id)
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))?;
        match slot.owner {
            Some(o) if o != conn => Err(SessionError::Busy(id.to_string())),
            _ => {
                slot.owner = Some(conn);
                Ok(Arc::clone(&slot.session))
            }
        }
    }

    fn create(&self, conn: u64, message: ClientMessage) -> Result<Shared, SessionError> {
        let ClientMessage::CreateSession {
            env,
            flags,
            seed,
            main,
            subs,
        } = message
        else {
            unreachable!("only called for create-session");
        };
        let spec = session_env(env, flags)?;
        let main_policy = Arc::new(load_policy(&self.dir, &main, &spec)?);
        let sub_policies = subs
            .iter()
            .map(|s| load_policy(&self.dir, s, &spec).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()?;
        let id = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed));
        let mut names = vec![main];
        names.extend(subs);
        let session = Arc::new(Mutex::new(SessionState::new(
            id.clone(),
            spec,
            seed,
            main_policy,
            sub_policies,
            names,
        )?));
        self.sessions.lock().expect("registry lock").insert(
            id,
            Slot {
                session: Arc::clone(&session),
                owner: Some(conn),
            },
        );
        Ok(session)
    }
}

struct AutoRun {
    session: String,
    remaining: usize,
    interval: Duration,
    due: Instant,
}

struct Connection<'a> {
    server: &'a Server,
    id: u64,
    out: BufWriter<TcpStream>,
    current: Option<String>,
    run: Option<AutoRun>,
}

impl Connection<'_> {
    fn run_loop(&mut self, rx: &mpsc::Receiver<Result<Vec<u8>, FrameError>>) -> Result<(), FrameError> {
        loop {
            let frame = match &self.run {
                Some(run) => match rx.recv_timeout(run.due.saturating_duration_since(Instant::now())) {
                    Ok(f) => Some(f),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => return Err(FrameError::Closed),
                },
                None => Some(rx.recv().map_err(|_| FrameError::Closed)?),
            };
            match frame {
                None => self.auto_step()?,
                Some(Ok(body)) => match decode_client(&body) {
                    Ok(m) => self.handle(m)?,
                    Err(detail) => self.error(&SessionError::Malformed(detail), None)?,
                },
                Some(Err(FrameError::TooLarge(n))) => {
                    // The stream cannot be resynchronized after a bad header.
                    self.error(&SessionError::Malformed(FrameError::TooLarge(n).to_string()), None)?;
                    return Err(FrameError::TooLarge(n));
                }
                Some(Err(e)) => return Err(e),
            }
        }
    }

    fn error(&mut self, e: &SessionError, session: Option<String>) -> Result<(), FrameError> {
        send(
            &mut self.out,
            &ServerMessage::Error {
                code: e.code(),
                detail: e.to_string(),
                session,
            },
        )
    }

    fn snapshot(&mut self, session: &SessionState) -> Result<(), FrameError> {
        let running = self.run.as_ref().is_some_and(|r| r.session == session.id());
        send(&mut self.out, &ServerMessage::Snapshot(Box::new(session.snapshot(running))))
    }

    fn handle(&mut self, message: ClientMessage) -> Result<(), FrameError> {
        let named = message.session().map(str::to_string);
        match self.apply(message) {
            Ok(()) => Ok(()),
            Err(Failure::Wire(e)) => Err(e),
            Err(Failure::Session(e)) => self.error(&e, named.or_else(|| self.current.clone())),
        }
    }

    fn target(&mut self, named: Option<&str>) -> Result<Shared, SessionError> {
        let id = named
            .map(str::to_string)
            .or_else(|| self.current.clone())
            .ok_or_else(|| SessionError::UnknownSession("no session on this connection".into()))?;
        let s = self.server.claim(&id, self.id)?;
        self.current = Some(id);
        Ok(s)
    }

    fn apply(&mut self, message: ClientMessage) -> Result<(), Failure> {
        if let ClientMessage::CreateSession { .. } = message {
            let s = self.server.create(self.id, message)?;
            let s = s.lock().expect("session lock");
            self.current = Some(s.id().to_string());
            return Ok(self.snapshot(&s)?);
        }
        let shared = self.target(message.session())?;
        let mut s = shared.lock().expect("session lock");
        match message {
            ClientMessage::CreateSession { .. } => unreachable!("handled above"),
            ClientMessage::SetFusion {
                method, epsilon, active, ..
            } => s.set_fusion(method, epsilon, active)?,
            ClientMessage::Step { .. } => {
                s.step()?;
            }
            ClientMessage::AutoRun { n, interval_ms, .. } => {
                if s.state().done {
                    return Err(SessionError::Finished.into());
                }
                if n == 0 {
                    return Ok(self.snapshot(&s)?);
                }
                self.run = Some(AutoRun {
                    session: s.id().to_string(),
                    remaining: n,
                    interval: Duration::from_millis(interval_ms),
                    due: Instant::now(),
                });
                // The first step follows immediately and sends the reply.
                return Ok(());
            }
            ClientMessage::Pause { .. } => self.stop(s.id()),
            ClientMessage::Reset { seed, .. } => {
                self.stop(s.id());
                s.reset(seed)?;
            }
        }
        Ok(self.snapshot(&s)?)
    }

    fn stop(&mut self, id: &str) {
        if self.run.as_ref().is_some_and(|r| r.session == id) {
            self.run = None;
        }
    }

    fn auto_step(&mut self) -> Result<(), FrameError> {
        let Some(run) = self.run.as_mut() else {
            return Ok(());
        };
        let id = run.session.clone();
        run.remaining -= 1;
        run.due += run.interval;
        let shared = match self.server.claim(&id, self.id) {
            Ok(s) => s,
            Err(e) => {
                self.run = None;
                return self.error(&e, Some(id));
            }
        };
        let mut s = shared.lock().expect("session lock");
        let result = s.step().map(|_| ());
        if result.is_err() || s.state().done || self.run.as_ref().is_some_and(|r| r.remaining == 0) {
            self.run = None;
        }
        match result {
            Ok(()) => self.snapshot(&s),
            Err(e) => self.error(&e, Some(id)),
        }
    }
}

enum Failure {
    Session(SessionError),
    Wire(FrameError),
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        Failure::Session(e)
    }
}

impl From<FrameError> for Failure {
    fn from(e: FrameError) -> Self {
        Failure::Wire(e)
    }
}

/// Binds `addr` and serves checkpoints from `dir` until the process exits.
pub fn serve(addr: &str, dir: &Path) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    log::info!("serving {} on {}", dir.display(), listener.local_addr()?);
    Server::new(dir).serve(listener)
}
