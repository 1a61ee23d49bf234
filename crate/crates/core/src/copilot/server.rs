//! Websocket transport around [`Session`].
//!
//! The tick loop owns the session and is the only writer of environment
//! state. A transport thread owns the socket; the two talk through bounded
//! queues that drop their oldest item when full.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, select, unbounded, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};
use tungstenite::{Message as WsMessage, WebSocket};

use crate::harness::{HarnessError, RunConfig};

use super::protocol::{ByeMsg, FrameMsg, HelloMsg, InputMsg, Message};
use super::session::{write_line, InputVerdict, Session, SessionLog};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Pacing {
    /// Fixed tick rate; whatever input is freshest at the tick applies.
    Realtime { tick_hz: f64 },
    /// Each tick waits for an input acknowledging its frame.
    Lockstep,
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub pacing: Pacing,
    /// Wall-clock time per tick allowed for learner iterations.
    pub update_budget: Duration,
    pub max_ticks: Option<u64>,
    pub queue_capacity: usize,
    pub log_path: PathBuf,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            pacing: Pacing::Realtime { tick_hz: 10.0 },
            update_budget: Duration::from_millis(20),
            max_ticks: None,
            queue_capacity: 64,
            log_path: PathBuf::from("session.jsonl"),
            checkpoint_path: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServeReport {
    pub ticks: u64,
    pub iterations: usize,
    pub pending_iterations: usize,
    pub stale_inputs: u64,
    pub superseded_inputs: u64,
    pub dropped_inputs: u64,
    pub dropped_frames: u64,
    pub invalid_messages: u64,
    pub connections: u64,
    /// Largest deviation of a realtime tick period from nominal.
    pub max_jitter_ms: f64,
}

enum Control {
    Connected,
    Disconnected,
    Bye,
    Invalid,
}

/// Pushes onto a bounded queue, evicting the oldest item when full.
fn push_drop_oldest<T>(tx: &Sender<T>, rx: &Receiver<T>, mut item: T, dropped: &AtomicU64) {
    loop {
        match tx.try_send(item) {
            Ok(()) => return,
            Err(TrySendError::Full(back)) => {
                if rx.try_recv().is_ok() {
                    dropped.fetch_add(1, Ordering::Relaxed);
                }
                item = back;
            }
            Err(TrySendError::Disconnected(_)) => return,
        }
    }
}

struct Transport {
    control: Sender<Control>,
    inputs: (Sender<InputMsg>, Receiver<InputMsg>),
    frames: Receiver<Message>,
    shutdown: Arc<AtomicBool>,
    dropped_inputs: Arc<AtomicU64>,
    hello: HelloMsg,
}

impl Transport {
    fn run(self, listener: TcpListener) {
        listener.set_nonblocking(true).ok();
        while !self.shutdown.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    if let Err(e) = self.connection(stream) {
                        log::warn!("console connection ended: {e}");
                    }
                    self.control.send(Control::Disconnected).ok();
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                Err(e) => {
                    log::error!("accept failed: {e}");
                    thread::sleep(Duration::from_millis(50));
                }
            }
        }
    }

    fn connection(&self, stream: TcpStream) -> Result<(), tungstenite::Error> {
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true).ok();
        let mut ws = tungstenite::accept(stream).map_err(|e| match e {
            tungstenite::HandshakeError::Failure(e) => e,
            tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
        })?;
        ws.get_mut().set_read_timeout(Some(Duration::from_millis(2)))?;
        ws.send(WsMessage::text(Message::Hello(self.hello.clone()).encode()))?;
        // Frames queued for an earlier connection are stale.
        while self.frames.try_recv().is_ok() {}
        self.control.send(Control::Connected).ok();
        loop {
            while let Ok(m) = self.frames.try_recv() {
                let bye = matches!(m, Message::Bye(_));
                ws.send(WsMessage::text(m.encode()))?;
                if bye {
                    ws.close(None).ok();
                    drain_close(&mut ws);
                    return Ok(());
                }
            }
            if self.shutdown.load(Ordering::Relaxed) {
                ws.close(None).ok();
                return Ok(());
            }
            match ws.read() {
                Ok(WsMessage::Text(t)) => self.incoming(&t),
                Ok(WsMessage::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                Err(e) => return Err(e),
            }
        }
    }

    fn incoming(&self, text: &str) {
        match Message::decode(text) {
            Ok(Message::Input(i)) => push_drop_oldest(&self.inputs.0, &self.inputs.1, i, &self.dropped_inputs),
            Ok(Message::Bye(_)) => {
                self.control.send(Control::Bye).ok();
            }
            Ok(_) => {}
            Err(e) => {
                log::warn!("rejected console message: {e}");
                self.control.send(Control::Invalid).ok();
            }
        }
    }
}

fn drain_close(ws: &mut WebSocket<TcpStream>) {
    let until = Instant::now() + Duration::from_millis(200);
    while Instant::now() < until {
        match ws.read() {
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => return,
            Ok(_) => {}
        }
    }
}

/// Binds `addr` and serves one console at a time until `max_ticks` or a
/// bye from the console.
pub fn serve(cfg: &RunConfig, addr: &str, opts: &ServeOptions) -> Result<ServeReport, HarnessError> {
    serve_on(TcpListener::bind(addr)?, cfg, opts)
}

pub fn serve_on(listener: TcpListener, cfg: &RunConfig, opts: &ServeOptions) -> Result<ServeReport, HarnessError> {
    if let Pacing::Realtime { tick_hz } = opts.pacing {
        if !(tick_hz > 0.0 && tick_hz.is_finite()) {
            return Err(HarnessError::Config(format!("tick rate {tick_hz}")));
        }
    }
    let mut session = Session::new(cfg)?;
    let cap = opts.queue_capacity.max(1);
    let (control_tx, control_rx) = unbounded();
    let inputs = bounded::<InputMsg>(cap);
    let input_rx = inputs.1.clone();
    let (frame_tx, frame_rx) = bounded::<Message>(cap);
    let frame_evict = frame_rx.clone();
    let shutdown = Arc::new(AtomicBool::new(false));
    let dropped_inputs = Arc::new(AtomicU64::new(0));
    let dropped_frames = AtomicU64::new(0);
    let transport = Transport {
        control: control_tx,
        inputs,
        frames: frame_rx,
        shutdown: shutdown.clone(),
        dropped_inputs: dropped_inputs.clone(),
        hello: HelloMsg {
            role: "server".into(),
            config_hash: Some(session.config_hash().to_string()),
            tick_hz: match opts.pacing {
                Pacing::Realtime { tick_hz } => tick_hz,
                Pacing::Lockstep => 0.0,
            },
        },
    };
    let handle = thread::spawn(move || transport.run(listener));

    let mut log_file = BufWriter::new(File::create(&opts.log_path)?);
    write_line(&mut log_file, &SessionLog::new(session.config_hash()).header)?;
    let mut report = ServeReport::default();
    let mut connected = false;
    let mut last_frame_at: Option<Instant> = None;
    let send = |m: Message| push_drop_oldest(&frame_tx, &frame_evict, m, &dropped_frames);

    let result = (|| -> Result<(), HarnessError> {
        'ticks: while opts.max_ticks.map_or(true, |m| session.tick() < m) {
            while let Ok(c) = control_rx.try_recv() {
                match c {
                    Control::Connected => {
                        connected = true;
                        report.connections += 1;
                        last_frame_at = None;
                    }
                    Control::Disconnected => connected = false,
                    Control::Bye => break 'ticks,
                    Control::Invalid => report.invalid_messages += 1,
                }
            }
            if !connected {
                // Paused until a console is attached.
                match control_rx.recv_timeout(Duration::from_millis(50)) {
                    Ok(Control::Connected) => {
                        connected = true;
                        report.connections += 1;
                        last_frame_at = None;
                    }
                    Ok(Control::Bye) => break 'ticks,
                    _ => {}
                }
                continue;
            }
            let frame: FrameMsg = session.frame()?;
            let sent_at = Instant::now();
            if let (Pacing::Realtime { tick_hz }, Some(prev)) = (opts.pacing, last_frame_at) {
                let jitter = (sent_at - prev).as_secs_f64() - 1.0 / tick_hz;
                report.max_jitter_ms = report.max_jitter_ms.max(jitter.abs() * 1e3);
            }
            last_frame_at = Some(sent_at);
            let tick = frame.tick;
            send(Message::Frame(frame));

            match opts.pacing {
                Pacing::Realtime { tick_hz } => {
                    let deadline = sent_at + Duration::from_secs_f64(1.0 / tick_hz);
                    let now = Instant::now();
                    if deadline > now {
                        thread::sleep(deadline - now);
                    }
                    while let Ok(i) = input_rx.try_recv() {
                        tally(&mut report, session.offer_input(i));
                    }
                }
                Pacing::Lockstep => loop {
                    select! {
                        recv(input_rx) -> i => {
                            let Ok(i) = i else { break 'ticks };
                            let acked = i.tick >= tick;
                            tally(&mut report, session.offer_input(i));
                            if acked {
                                break;
                            }
                        }
                        recv(control_rx) -> c => match c {
                            Ok(Control::Disconnected) => { connected = false; continue 'ticks; }
                            Ok(Control::Bye) | Err(_) => break 'ticks,
                            Ok(Control::Invalid) => report.invalid_messages += 1,
                            Ok(Control::Connected) => report.connections += 1,
                        },
                    }
                },
            }
            session.advance()?;
            let budget = match opts.pacing {
                Pacing::Realtime { .. } => Some(opts.update_budget),
                Pacing::Lockstep => None,
            };
            report.iterations += session.run_updates(budget)?;
            for e in session.drain_entries() {
                write_line(&mut log_file, &e)?;
            }
        }
        Ok(())
    })();

    send(Message::Bye(ByeMsg {
        reason: "session over".into(),
    }));
    thread::sleep(Duration::from_millis(20));
    shutdown.store(true, Ordering::Relaxed);
    handle.join().ok();
    report.ticks = session.tick();
    report.pending_iterations = session.pending_iterations();
    let hash = session.config_hash().to_string();
    let (rest, trainer) = session.finish();
    for e in rest {
        write_line(&mut log_file, &e)?;
    }
    log_file.flush()?;
    result?;
    if let Some(p) = &opts.checkpoint_path {
        trainer.learner.to_checkpoint(&hash).save(p)?;
    }
    report.dropped_inputs = dropped_inputs.load(Ordering::Relaxed);
    report.dropped_frames = dropped_frames.load(Ordering::Relaxed);
    log::info!(
        "session over: {} ticks, {} learner iterations, max jitter {:.1} ms",
        report.ticks,
        report.iterations,
        report.max_jitter_ms
    );
    Ok(report)
}

fn tally(report: &mut ServeReport, v: InputVerdict) {
    match v {
        InputVerdict::Accepted => {}
        InputVerdict::Stale => report.stale_inputs += 1,
        InputVerdict::Superseded => report.superseded_inputs += 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_oldest_keeps_newest() {
        let (tx, rx) = bounded(2);
        let dropped = AtomicU64::new(0);
        for i in 0..5 {
            push_drop_oldest(&tx, &rx, i, &dropped);
        }
        assert_eq!(dropped.load(Ordering::Relaxed), 3);
        assert_eq!(rx.try_iter().collect::<Vec<_>>(), vec![3, 4]);
    }
}
