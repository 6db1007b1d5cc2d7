//! Binary codec for the messages nodes exchange.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! message   := kind:u8 version:u8 body
//! kind      := 0 token | 1 peer-state | 2 broadcast
//! token     := sender:u64 epoch:u64 t:f64 K:matrix
//! peer      := sender:u64 epoch:u64 t:f64 R:matrix p:vector sigma_col:matrix K:matrix
//! broadcast := update:u8 a:u64 b:u64 epoch:u64 t:f64 T:matrix S:vector V:matrix corrections:vector
//! update    := 0 landmark (a = robot, b = 0) | 1 robot (a = observer, b = observed)
//! matrix    := rows:u32 cols:u32 rows*cols f64, row-major
//! vector    := len:u32 len f64
//! ```
//!
//! Scalars travel as `f64`; for `f64` filters encode/decode is bit-exact.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3};

use crate::decoupled::{PeerState, PropagationToken, UpdateBroadcast, UpdateKind};
use crate::error::WireError;
use crate::lie::{Pose, Rotation};
use crate::scalar::{lit, to_f64, Real};

pub const WIRE_VERSION: u8 = 1;

pub const KIND_TOKEN: u8 = 0;
pub const KIND_PEER_STATE: u8 = 1;
pub const KIND_BROADCAST: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Message<T: Real> {
    Token(PropagationToken<T>),
    PeerState(PeerState<T>),
    Broadcast(UpdateBroadcast<T>),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: usize) {
        self.0.extend_from_slice(&(x as u32).to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64<T: Real>(&mut self, x: T) {
        self.0.extend_from_slice(&to_f64(x).to_le_bytes());
    }
    fn matrix<T: Real, R, C, S>(&mut self, m: &nalgebra::Matrix<T, R, C, S>)
    where
        R: nalgebra::Dim,
        C: nalgebra::Dim,
        S: nalgebra::RawStorage<T, R, C>,
    {
        self.u32(m.nrows());
        self.u32(m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.f64(m[(r, c)]);
            }
        }
    }
    fn vector<T: Real, R, S>(&mut self, v: &nalgebra::Matrix<T, R, nalgebra::U1, S>)
    where
        R: nalgebra::Dim,
        S: nalgebra::RawStorage<T, R, nalgebra::U1>,
    {
        self.u32(v.len());
        for x in v.iter() {
            self.f64(*x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], WireError> {
        let end = self
            .pos
            .checked_add(len)
            .ok_or(WireError::Truncated(self.pos))?;
        let out = self
            .buf
            .get(self.pos..end)
            .ok_or(WireError::Truncated(self.pos))?;
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn index(&mut self) -> Result<usize, WireError> {
        usize::try_from(self.u64()?).map_err(|_| WireError::Malformed("index"))
    }
    fn f64<T: Real>(&mut self) -> Result<T, WireError> {
        Ok(lit(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        )))
    }
    fn matrix<T: Real>(&mut self) -> Result<DMatrix<T>, WireError> {
        let rows = self.u32()?;
        let cols = self.u32()?;
        let len = rows
            .checked_mul(cols)
            .ok_or(WireError::Malformed("matrix shape"))?;
        if len.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(WireError::Truncated(self.pos));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.f64()?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
    fn fixed<T: Real, const R: usize, const C: usize>(
        &mut self,
        field: &'static str,
    ) -> Result<nalgebra::SMatrix<T, R, C>, WireError> {
        let m = self.matrix::<T>()?;
        if m.shape() != (R, C) {
            return Err(WireError::Malformed(field));
        }
        Ok(nalgebra::SMatrix::from_fn(|r, c| m[(r, c)]))
    }
    fn vector<T: Real>(&mut self) -> Result<DVector<T>, WireError> {
        let len = self.u32()?;
        if len.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(WireError::Truncated(self.pos));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.f64()?);
        }
        Ok(DVector::from_vec(data))
    }
}

/// Serialises a message. Broadcasts whose factor payload exceeds the
/// rank bound for their kind are refused.
pub fn encode<T: Real>(msg: &Message<T>) -> Result<Vec<u8>, WireError> {
    let mut w = Writer(Vec::new());
    match msg {
        Message::Token(tk) => {
            w.u8(KIND_TOKEN);
            w.u8(WIRE_VERSION);
            w.u64(tk.sender as u64);
            w.u64(tk.epoch);
            w.f64(tk.t);
            w.matrix(&tk.k);
        }
        Message::PeerState(p) => {
            w.u8(KIND_PEER_STATE);
            w.u8(WIRE_VERSION);
            w.u64(p.sender as u64);
            w.u64(p.epoch);
            w.f64(p.t);
            w.matrix(p.pose.rotation.matrix());
            w.vector(&p.pose.translation);
            w.matrix(&p.sigma_col);
            w.matrix(&p.k);
        }
        Message::Broadcast(b) => {
            let bound = b.kind.payload_bound(b.n());
            if b.payload_scalars() > bound {
                return Err(WireError::PayloadTooLarge {
                    scalars: b.payload_scalars(),
                    bound,
                });
            }
            w.u8(KIND_BROADCAST);
            w.u8(WIRE_VERSION);
            let (tag, a, c) = match b.kind {
                UpdateKind::Landmark { robot } => (0, robot, 0),
                UpdateKind::Robot { observer, observed } => (1, observer, observed),
            };
            w.u8(tag);
            w.u64(a as u64);
            w.u64(c as u64);
            w.u64(b.epoch);
            w.f64(b.t);
            w.matrix(&b.t_factor);
            w.vector(&b.s);
            w.matrix(&b.v);
            w.vector(&b.corrections);
        }
    }
    Ok(w.0)
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Message<T>, WireError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let kind = r.u8()?;
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let msg = match kind {
        KIND_TOKEN => Message::Token(PropagationToken {
            sender: r.index()?,
            epoch: r.u64()?,
            t: r.f64()?,
            k: r.fixed::<T, 6, 6>("K")?,
        }),
        KIND_PEER_STATE => {
            let sender = r.index()?;
            let epoch = r.u64()?;
            let t = r.f64()?;
            let rot: Matrix3<T> = r.fixed::<T, 3, 3>("R")?;
            let p = r.vector::<T>()?;
            if p.len() != 3 {
                return Err(WireError::Malformed("p"));
            }
            let sigma_col = r.matrix()?;
            if sigma_col.ncols() != 6 || sigma_col.nrows() % 6 != 0 {
                return Err(WireError::Malformed("sigma_col"));
            }
            let k: Matrix6<T> = r.fixed::<T, 6, 6>("K")?;
            Message::PeerState(PeerState {
                sender,
                pose: Pose::new(Rotation::try_new(rot)?, Vector3::new(p[0], p[1], p[2])),
                sigma_col,
                k,
                t,
                epoch,
            })
        }
        KIND_BROADCAST => {
            let tag = r.u8()?;
            let a = r.index()?;
            let c = r.index()?;
            let kind = match tag {
                0 => UpdateKind::Landmark { robot: a },
                1 => UpdateKind::Robot {
                    observer: a,
                    observed: c,
                },
                other => return Err(WireError::UnknownUpdateKind(other)),
            };
            let epoch = r.u64()?;
            let t = r.f64()?;
            let t_factor = r.matrix()?;
            let s = r.vector()?;
            let v = r.matrix()?;
            let corrections = r.vector()?;
            let dim = corrections.len();
            if t_factor.shape() != (dim, s.len()) || v.shape() != (dim, s.len()) || dim % 6 != 0 {
                return Err(WireError::Malformed("factor shapes"));
            }
            Message::Broadcast(UpdateBroadcast {
                kind,
                t_factor,
                s,
                v,
                corrections,
                t,
                epoch,
            })
        }
        other => return Err(WireError::UnknownKind(other)),
    };
    if r.pos != bytes.len() {
        return Err(WireError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(msg)
}
