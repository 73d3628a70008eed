#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use serde_json::Value;
use taskpilot_core::gateway::OracleBackend;
use taskpilot_core::scene::DEFAULT_TICK_DT;
use taskpilot_core::{Catalog, SceneState, Vec3};
use taskpilot_server::protocol::{decode, encode, ServerMessage};
use taskpilot_server::{ClientMessage, Server, ServerOptions, Services};

pub fn services() -> Arc<Services> {
    Arc::new(Services::with_stub_speech(Catalog::builtin(), Arc::new(OracleBackend)))
}

/// TURN toward `goal`, then MOVE along that line (backwards if already too
/// close) so the hold point, 0.6 m ahead, ends over `goal`.
pub fn walk(from: Vec3, speed: f64, goal: Vec3) -> Vec<ClientMessage> {
    let d = Vec3::new(goal.x - from.x, 0.0, goal.z - from.z);
    let mut out = vec![ClientMessage::Turn { heading: d.x.atan2(d.z) }];
    let (dir, ticks) = leg(d, speed);
    if ticks >= 1 {
        out.push(ClientMessage::Move { direction: dir, ticks });
    }
    out
}

fn leg(d: Vec3, speed: f64) -> (Vec3, u64) {
    let u = d.normalized().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
    let gap = d.length() - 0.6;
    let ticks = (gap.abs() / (speed * DEFAULT_TICK_DT)).round() as u64;
    (if gap < 0.0 { u * -1.0 } else { u }, ticks)
}

/// Where the avatar ends up after `walk`.
pub fn walked_to(from: Vec3, speed: f64, goal: Vec3) -> Vec3 {
    let d = Vec3::new(goal.x - from.x, 0.0, goal.z - from.z);
    let (dir, ticks) = leg(d, speed);
    from + dir * (ticks as f64 * speed * DEFAULT_TICK_DT)
}

/// Full client script for a pick-and-place of each (object, target) pair.
pub fn pick_place_script(scene: &SceneState, pairs: &[(&str, &str)]) -> Vec<ClientMessage> {
    let mut pos = scene.avatar.position;
    let speed = scene.avatar.speed;
    let mut out = Vec::new();
    for (obj, target) in pairs {
        let o = scene.object(obj).unwrap().position;
        let t = scene.object(target).unwrap().position;
        out.extend(walk(pos, speed, o));
        pos = walked_to(pos, speed, o);
        out.push(ClientMessage::Grab { object_id: obj.to_string() });
        out.extend(walk(pos, speed, t));
        pos = walked_to(pos, speed, t);
        out.push(ClientMessage::Release);
    }
    out
}

pub fn task_pairs(catalog: &Catalog, task: &str) -> Vec<(String, String)> {
    catalog
        .task(task)
        .unwrap()
        .actions
        .iter()
        .map(|a| (a.object_id.clone(), a.target_id.clone()))
        .collect()
}

pub fn full_script(catalog: &Catalog, task: &str) -> Vec<ClientMessage> {
    let (t, s) = catalog.task_with_scenario(task).unwrap();
    let pairs = task_pairs(catalog, task);
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let _ = t;
    pick_place_script(&s.scene, &refs)
}

pub fn hello(task: &str, scenario: &str, mode: &str) -> ClientMessage {
    ClientMessage::Hello {
        client: Default::default(),
        scenario: scenario.into(),
        task: task.into(),
        mode: mode.into(),
    }
}

pub fn type_of(line: &str) -> String {
    let v: Value = serde_json::from_str(line).unwrap();
    v["type"].as_str().unwrap().to_string()
}

pub fn parse(line: &str) -> ServerMessage {
    decode::<ServerMessage>(line).unwrap().body
}

/// Line client; a background thread drains the socket so large server
/// output never blocks the writer.
pub struct Client {
    lines: mpsc::Receiver<String>,
    writer: TcpStream,
    seq: u64,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_nodelay(true).unwrap();
        let reader = BufReader::new(stream.try_clone().unwrap());
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in reader.lines() {
                let Ok(line) = line else { return };
                if tx.send(line).is_err() {
                    return;
                }
            }
        });
        Client { lines: rx, writer: stream, seq: 0 }
    }

    pub fn send(&mut self, msg: &ClientMessage) -> u64 {
        self.seq += 1;
        let line = encode(self.seq, msg);
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
        self.seq
    }

    /// Next line, or `None` once the server closed (or went silent for 20 s).
    pub fn recv(&mut self) -> Option<String> {
        self.lines.recv_timeout(Duration::from_secs(20)).ok()
    }

    /// Reads until a line of the given type arrives; returns all lines read.
    pub fn recv_until(&mut self, ty: &str) -> Vec<String> {
        let mut lines = Vec::new();
        while let Some(l) = self.recv() {
            let done = type_of(&l) == ty;
            lines.push(l);
            if done {
                break;
            }
        }
        lines
    }
}

pub struct Running {
    pub addr: SocketAddr,
    pub runtime: tokio::runtime::Runtime,
}

pub fn start_server(options: ServerOptions) -> Running {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap();
    let listener = runtime.block_on(Server::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let server = Server::new(services(), options);
    runtime.spawn(server.run(listener));
    Running { addr, runtime }
}
