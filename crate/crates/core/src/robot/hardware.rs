//! TCP client backend speaking the hardware wire protocol.

use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use crate::config::{Backend, EnvConfig};
use crate::sim::SimState;

use super::wire::{self, Frame};
use super::{Gripper, RobotBackend, RobotCommand, RobotError, WorldView};

pub struct HardwareBackend {
    cfg: Arc<EnvConfig>,
    stream: TcpStream,
    next_id: u32,
    /// Simulated clock: `dt` added `frame_skip` times per command, matching
    /// the simulator's accumulation order.
    time: f64,
    grasped: Option<usize>,
    last: Option<WorldView>,
}

fn wire_err(e: io::Error, what: &'static str) -> RobotError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => RobotError::Timeout(what),
        _ => RobotError::Io(e),
    }
}

impl HardwareBackend {
    pub fn connect(cfg: Arc<EnvConfig>, timeout: Duration) -> Result<Self, RobotError> {
        let endpoint = cfg.hardware_endpoint.clone().ok_or_else(|| RobotError::Connection {
            endpoint: String::new(),
            reason: "no hardware_endpoint configured".into(),
        })?;
        let conn_err = |reason: String| RobotError::Connection { endpoint: endpoint.clone(), reason };
        let addr = endpoint
            .to_socket_addrs()
            .map_err(|e| conn_err(e.to_string()))?
            .next()
            .ok_or_else(|| conn_err("address did not resolve".into()))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| conn_err(e.to_string()))?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        let mut hw = Self { cfg, stream, next_id: 1, time: 0.0, grasped: None, last: None };
        hw.request(wire::OP_PING, Vec::new(), wire::OP_PONG, "PONG")
            .map_err(|e| conn_err(e.to_string()))?;
        Ok(hw)
    }

    fn request(
        &mut self,
        opcode: u8,
        payload: Vec<u8>,
        expect: u8,
        what: &'static str,
    ) -> Result<Vec<u8>, RobotError> {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        Frame::new(opcode, id, payload)
            .write_to(&mut self.stream)
            .map_err(|e| wire_err(e, what))?;
        let reply = Frame::read_from(&mut self.stream).map_err(|e| wire_err(e, what))?;
        if let Some((code, message)) = reply.error_parts() {
            return Err(RobotError::Remote { code, message });
        }
        if reply.request_id != id {
            return Err(RobotError::Protocol(format!(
                "response id {} does not match request {id}",
                reply.request_id
            )));
        }
        if reply.opcode != expect {
            return Err(RobotError::Protocol(format!(
                "expected opcode {expect:#04x}, got {:#04x}",
                reply.opcode
            )));
        }
        Ok(reply.payload)
    }

    fn decode(&mut self, payload: &[u8]) -> Result<WorldView, RobotError> {
        let mut view = wire::decode_state(payload).map_err(RobotError::Protocol)?;
        if view.joint_pos.len() != self.cfg.joint_count() {
            return Err(RobotError::Protocol(format!(
                "hardware reports {} joints, model has {}",
                view.joint_pos.len(),
                self.cfg.joint_count()
            )));
        }
        view.time = self.time;
        view.grasped_object = self.grasped.filter(|&i| i < view.objects.len());
        self.last = Some(view.clone());
        Ok(view)
    }

    pub fn ping(&mut self) -> Result<(), RobotError> {
        self.request(wire::OP_PING, Vec::new(), wire::OP_PONG, "PONG").map(|_| ())
    }

    /// Mirrors the grasp rule the hardware applies before stepping.
    fn track_gripper(&mut self, gripper: Gripper) {
        match gripper {
            Gripper::NoChange => {}
            Gripper::Release => self.grasped = None,
            Gripper::Grasp => {
                if self.grasped.is_some() {
                    return;
                }
                let Some(view) = &self.last else { return };
                let ee = view.end_effector(&self.cfg.robot);
                let mut best: Option<(usize, f64)> = None;
                for (i, o) in view.objects.iter().enumerate() {
                    let d = o.position.dist(ee);
                    if d <= self.cfg.robot.gripper_radius && best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((i, d));
                    }
                }
                self.grasped = best.map(|(i, _)| i);
            }
        }
    }
}

impl RobotBackend for HardwareBackend {
    fn kind(&self) -> Backend {
        Backend::Hardware
    }

    fn reset(&mut self, episode_seed: u64) -> Result<(), RobotError> {
        let payload = self.request(
            wire::OP_RESET,
            episode_seed.to_be_bytes().to_vec(),
            wire::OP_STATE_ECHO,
            "RESET echo",
        )?;
        self.time = 0.0;
        self.grasped = None;
        self.decode(&payload)?;
        Ok(())
    }

    fn apply(&mut self, cmd: &RobotCommand) -> Result<(), RobotError> {
        if self.last.is_none() {
            let payload = self.request(wire::OP_GET_STATE, Vec::new(), wire::OP_STATE, "STATE")?;
            self.decode(&payload)?;
        }
        self.track_gripper(cmd.gripper);
        self.request(wire::OP_SET_CMD, wire::encode_command(cmd), wire::OP_ACK, "ACK")?;
        for _ in 0..self.cfg.frame_skip {
            self.time += self.cfg.dt;
        }
        Ok(())
    }

    fn observe(&mut self) -> Result<WorldView, RobotError> {
        let payload = self.request(wire::OP_GET_STATE, Vec::new(), wire::OP_STATE, "STATE")?;
        self.decode(&payload)
    }

    fn snapshot(&self) -> Option<SimState> {
        None
    }

    fn restore(&mut self, _state: &SimState) -> Result<(), RobotError> {
        Err(RobotError::Unsupported("restore"))
    }
}
