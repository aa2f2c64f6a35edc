//! Hardware wire protocol.
//!
//! Every frame is `u32 length | u8 opcode | u32 request_id | payload`, where
//! `length` counts the bytes after the length field. Integers and `f64`s are
//! big-endian.
//!
//! | opcode | request                      | response                        |
//! |--------|------------------------------|---------------------------------|
//! | 0x01   | PING, empty                  | 0x81 PONG, empty                |
//! | 0x02   | RESET, `u64 episode_seed`    | 0x82 state echo (as 0x83)       |
//! | 0x03   | GET_STATE, empty             | 0x83 state                      |
//! | 0x04   | SET_CMD, `u8 mode, u8 gripper, u16 n, n×f64` | 0x84 ACK, empty  |
//! | 0x7F   | -                            | ERROR, `u16 code, utf8 message` |
//!
//! State payload: `u16 n_joints, n×f64 pos, n×f64 vel, u16 n_objects`, then
//! per object `x, y, radius, color_index` as four `f64`.

use std::io::{self, Read, Write};

use crate::config::ControlMode;
use crate::geom::Vec2;

use super::sensors::{ObjectView, WorldView};
use super::{Gripper, RobotCommand};

pub const OP_PING: u8 = 0x01;
pub const OP_RESET: u8 = 0x02;
pub const OP_GET_STATE: u8 = 0x03;
pub const OP_SET_CMD: u8 = 0x04;
pub const OP_PONG: u8 = 0x81;
pub const OP_STATE_ECHO: u8 = 0x82;
pub const OP_STATE: u8 = 0x83;
pub const OP_ACK: u8 = 0x84;
pub const OP_ERROR: u8 = 0x7F;

pub const ERR_BUSY: u16 = 1;
pub const ERR_BAD_REQUEST: u16 = 2;
pub const ERR_UNKNOWN_OPCODE: u16 = 3;
pub const ERR_COMMAND: u16 = 4;

/// Frames above this size are rejected before allocation.
pub const MAX_FRAME: u32 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub opcode: u8,
    pub request_id: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(opcode: u8, request_id: u32, payload: Vec<u8>) -> Self {
        Self { opcode, request_id, payload }
    }

    pub fn error(request_id: u32, code: u16, msg: &str) -> Self {
        let mut p = Vec::with_capacity(2 + msg.len());
        p.extend_from_slice(&code.to_be_bytes());
        p.extend_from_slice(msg.as_bytes());
        Self::new(OP_ERROR, request_id, p)
    }

    pub fn encode(&self) -> Vec<u8> {
        let len = 5 + self.payload.len() as u32;
        let mut out = Vec::with_capacity(4 + len as usize);
        out.extend_from_slice(&len.to_be_bytes());
        out.push(self.opcode);
        out.extend_from_slice(&self.request_id.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Self> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_be_bytes(len);
        if !(5..=MAX_FRAME).contains(&len) {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad frame length {len}")));
        }
        let mut body = vec![0u8; len as usize];
        r.read_exact(&mut body)?;
        Ok(Self {
            opcode: body[0],
            request_id: u32::from_be_bytes([body[1], body[2], body[3], body[4]]),
            payload: body.split_off(5),
        })
    }

    /// Decodes an ERROR payload into `(code, message)`.
    pub fn error_parts(&self) -> Option<(u16, String)> {
        if self.opcode != OP_ERROR || self.payload.len() < 2 {
            return None;
        }
        let code = u16::from_be_bytes([self.payload[0], self.payload[1]]);
        Some((code, String::from_utf8_lossy(&self.payload[2..]).into_owned()))
    }
}

/// Sequential reader over a payload.
pub struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], String> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| format!("payload truncated at byte {}", self.pos))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length is N"))
    }

    pub fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_be_bytes(self.take()?))
    }

    pub fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_be_bytes(self.take()?))
    }

    pub fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_be_bytes(self.take()?))
    }

    pub fn finish(&self) -> Result<(), String> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(format!("{} trailing payload bytes", self.buf.len() - self.pos))
        }
    }
}

pub fn encode_state(view: &WorldView) -> Vec<u8> {
    let n = view.joint_pos.len();
    let mut p = Vec::with_capacity(4 + 16 * n + 32 * view.objects.len());
    p.extend_from_slice(&(n as u16).to_be_bytes());
    for v in view.joint_pos.iter().chain(&view.joint_vel) {
        p.extend_from_slice(&v.to_be_bytes());
    }
    p.extend_from_slice(&(view.objects.len() as u16).to_be_bytes());
    for o in &view.objects {
        for v in [o.position.x, o.position.y, o.radius, f64::from(o.color_index)] {
            p.extend_from_slice(&v.to_be_bytes());
        }
    }
    p
}

/// Decodes a state payload. `time` and grasp status are not on the wire and
/// are filled in by the caller.
pub fn decode_state(payload: &[u8]) -> Result<WorldView, String> {
    let mut c = Cursor::new(payload);
    let n = c.u16()? as usize;
    let joint_pos = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
    let joint_vel = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
    let m = c.u16()? as usize;
    let mut objects = Vec::with_capacity(m);
    for _ in 0..m {
        let (x, y, radius, color) = (c.f64()?, c.f64()?, c.f64()?, c.f64()?);
        objects.push(ObjectView { position: Vec2::new(x, y), radius, color_index: color as u8 });
    }
    c.finish()?;
    Ok(WorldView { time: 0.0, joint_pos, joint_vel, objects, grasped_object: None })
}

pub fn encode_command(cmd: &RobotCommand) -> Vec<u8> {
    let mut p = Vec::with_capacity(4 + 8 * cmd.values.len());
    p.push(cmd.mode.code());
    p.push(cmd.gripper.code());
    p.extend_from_slice(&(cmd.values.len() as u16).to_be_bytes());
    for v in &cmd.values {
        p.extend_from_slice(&v.to_be_bytes());
    }
    p
}

pub fn decode_command(payload: &[u8]) -> Result<RobotCommand, String> {
    let mut c = Cursor::new(payload);
    let mode = ControlMode::from_code(c.u8()?).ok_or("unknown control mode")?;
    let gripper = Gripper::from_code(c.u8()?).ok_or("unknown gripper code")?;
    let n = c.u16()? as usize;
    let values = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
    c.finish()?;
    Ok(RobotCommand { mode, values, gripper })
}
