//! Per-robot filter nodes.
//!
//! Node `i` owns its pose estimate, the current diagonal block `Sigma_ii`,
//! the column `Sigma_{.i}` as it stood at the last update (the base) and the
//! accumulator `K_i`, the ordered product of the `expm(-dt/2 U_i)` transport
//! factors since that base. Between updates a cross block is recovered as
//! `Sigma_ji(t) = K_j Sigma_ji(base) K_iᵀ`, so nodes only exchange their `K`
//! when an exteroceptive measurement is processed.
//!
//! Updates are low rank: the node that takes the measurement forms the
//! `6n x r` factors `T S Vᵀ = Sigma H` (with `H` the measurement Hessian
//! `Q` or `W`) and the correction stack, and broadcasts them. Every node then
//! applies the Woodbury form `(I - T (S⁻¹ + VᵀT)⁻¹ Vᵀ) Sigma` to its own
//! column, re-bases it and resets `K` to the identity.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::central::{block, propagate_sigma_diag, set_block, GlobalEstimate, InverseHessian};
use crate::error::FilterError;
use crate::lie::{exp_se3, exp_u, proj_sym, Pose, Twist};
use crate::measurement::{
    landmark_terms, robot_terms, LandmarkMeasurement, RobotMeasurement, VelocityMeasurement,
};
use crate::scalar::{lit, to_f64, Real};
use crate::wire::{self, Message};

/// State machine of one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotNode<T: Real> {
    pub id: usize,
    pub pose: Pose<T>,
    sigma_ii: Matrix6<T>,
    sigma_col_base: DMatrix<T>,
    k: Matrix6<T>,
    pub t: T,
    pub epoch: u64,
}

/// `K_j` of robot `sender` at time `t`, valid within one update epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationToken<T: Real> {
    pub sender: usize,
    pub k: Matrix6<T>,
    pub t: T,
    pub epoch: u64,
}

/// What the observed robot sends the observer before a robot update.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerState<T: Real> {
    pub sender: usize,
    pub pose: Pose<T>,
    /// Current column `Sigma_{.j}`, reconstructed by the sender.
    pub sigma_col: DMatrix<T>,
    pub k: Matrix6<T>,
    pub t: T,
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Landmark { robot: usize },
    Robot { observer: usize, observed: usize },
}

impl UpdateKind {
    /// Upper bound on `T`, `S` and `V` scalars for a network of `n` robots.
    pub fn payload_bound(&self, n: usize) -> usize {
        match self {
            UpdateKind::Landmark { .. } => 6 * n * 12 + 6,
            UpdateKind::Robot { .. } => 6 * n * 24 + 12,
        }
    }
}

/// Low-rank update factors plus the stacked correction twists.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBroadcast<T: Real> {
    pub kind: UpdateKind,
    /// Left singular vectors, `6n x r`.
    pub t_factor: DMatrix<T>,
    /// Retained singular values, all above the truncation threshold.
    pub s: DVector<T>,
    /// Right singular vectors, `6n x r`.
    pub v: DMatrix<T>,
    /// `-Sigma⁺ g`, the 6n-vector of correction exponents.
    pub corrections: DVector<T>,
    pub t: T,
    pub epoch: u64,
}

impl<T: Real> UpdateBroadcast<T> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Scalars in the factor payload `T`, `S`, `V` (corrections excluded).
    pub fn payload_scalars(&self) -> usize {
        self.t_factor.len() + self.s.len() + self.v.len()
    }

    pub fn n(&self) -> usize {
        self.corrections.len() / 6
    }

    pub fn correction(&self, k: usize) -> Twist<T> {
        Twist::from_slice(&self.corrections.as_slice()[6 * k..6 * k + 6])
    }
}

impl<T: Real> RobotNode<T> {
    /// Creates node `id` from its column `Sigma_{.id}` (`6n x 6`).
    pub fn new(id: usize, pose: Pose<T>, sigma_col: DMatrix<T>, t: T) -> Result<Self, FilterError> {
        let n = sigma_col.nrows() / 6;
        if sigma_col.ncols() != 6 || sigma_col.nrows() % 6 != 0 || id >= n {
            return Err(FilterError::IndexError { index: id, n });
        }
        let sigma_ii = block(&sigma_col, id, 0);
        if sigma_ii.cholesky().is_none() {
            return Err(FilterError::NonPositiveDefinite {
                matrix: "Sigma_ii",
                robot: Some(id),
            });
        }
        Ok(Self {
            id,
            pose,
            sigma_ii,
            sigma_col_base: sigma_col,
            k: Matrix6::identity(),
            t,
            epoch: 0,
        })
    }

    /// Splits a joint estimate into `n` nodes.
    pub fn split(
        est: &GlobalEstimate<T>,
        sigma: &InverseHessian<T>,
    ) -> Result<Vec<Self>, FilterError> {
        let n = est.n();
        (0..n)
            .map(|i| {
                let col = sigma.matrix().columns(6 * i, 6).into_owned();
                Self::new(i, est.poses[i], col, est.t)
            })
            .collect()
    }

    pub fn n(&self) -> usize {
        self.sigma_col_base.nrows() / 6
    }

    pub fn sigma_ii(&self) -> &Matrix6<T> {
        &self.sigma_ii
    }

    pub fn sigma_col_base(&self) -> &DMatrix<T> {
        &self.sigma_col_base
    }

    pub fn k(&self) -> &Matrix6<T> {
        &self.k
    }

    pub fn token(&self) -> PropagationToken<T> {
        PropagationToken {
            sender: self.id,
            k: self.k,
            t: self.t,
            epoch: self.epoch,
        }
    }

    fn check_aligned(&self, t: T, epoch: u64) -> Result<(), FilterError> {
        if t != self.t || epoch != self.epoch {
            return Err(FilterError::EpochMismatch {
                node_epoch: self.epoch,
                node_t: to_f64(self.t),
                msg_epoch: epoch,
                msg_t: to_f64(t),
            });
        }
        Ok(())
    }

    /// Current column `Sigma_{.i}` from the base and everyone's tokens.
    pub fn column(&self, tokens: &[PropagationToken<T>]) -> Result<DMatrix<T>, FilterError> {
        let mut col = DMatrix::zeros(6 * self.n(), 6);
        for j in 0..self.n() {
            let b = if j == self.id {
                self.sigma_ii
            } else {
                let token = tokens
                    .iter()
                    .find(|tk| tk.sender == j)
                    .ok_or(FilterError::MissingToken(j))?;
                reconstruct_cross(self, token)?
            };
            set_block(&mut col, j, 0, &b);
        }
        Ok(col)
    }

    pub fn peer_state(&self, tokens: &[PropagationToken<T>]) -> Result<PeerState<T>, FilterError> {
        Ok(PeerState {
            sender: self.id,
            pose: self.pose,
            sigma_col: self.column(tokens)?,
            k: self.k,
            t: self.t,
            epoch: self.epoch,
        })
    }
}

/// Advances a node by one velocity sample: pose by the exact exponential,
/// `Sigma_ii` by RK4 and `K <- expm(-dt/2 U) K`.
pub fn local_propagate<T: Real>(
    node: &RobotNode<T>,
    u: &VelocityMeasurement<T>,
    dt: T,
) -> Result<RobotNode<T>, FilterError> {
    if u.robot != node.id {
        return Err(FilterError::WrongRobot {
            node: node.id,
            got: u.robot,
        });
    }
    if dt <= T::zero() {
        return Err(FilterError::NonPositiveStep(to_f64(dt)));
    }
    let sigma_ii = propagate_sigma_diag(&node.sigma_ii, u, dt);
    if sigma_ii.cholesky().is_none() {
        return Err(FilterError::NonPositiveDefinite {
            matrix: "Sigma_ii",
            robot: Some(node.id),
        });
    }
    Ok(RobotNode {
        pose: node.pose * exp_se3(&u.u.scale(dt)),
        sigma_ii,
        k: exp_u(&u.u, -dt * lit(0.5)) * node.k,
        t: node.t + dt,
        sigma_col_base: node.sigma_col_base.clone(),
        ..*node
    })
}

/// `Sigma_ji(t) = K_j Sigma_ji(base) K_iᵀ` for the token's sender `j`.
pub fn reconstruct_cross<T: Real>(
    node: &RobotNode<T>,
    token: &PropagationToken<T>,
) -> Result<Matrix6<T>, FilterError> {
    node.check_aligned(token.t, token.epoch)?;
    if token.sender >= node.n() {
        return Err(FilterError::IndexError {
            index: token.sender,
            n: node.n(),
        });
    }
    if token.sender == node.id {
        return Ok(node.sigma_ii);
    }
    Ok(token.k * block(&node.sigma_col_base, token.sender, 0) * node.k.transpose())
}

/// Thin SVD `A = U diag(s) Vᵀ`, computed by faer in `f64`.
///
/// nalgebra's bidiagonal SVD can stop while a small off-diagonal survives,
/// returning factors that miss a rank-deficient input by up to ~1e-5
/// relative, which is enough to break the central/decoupled equivalence.
/// The reconstruction is still checked before the factors are used.
pub fn thin_svd<T: Real>(
    a: &DMatrix<T>,
) -> Result<(DMatrix<T>, DVector<T>, DMatrix<T>), FilterError> {
    let (rows, cols) = a.shape();
    let scale = a.amax();
    if scale == T::zero() {
        return Ok((
            DMatrix::zeros(rows, 0),
            DVector::zeros(0),
            DMatrix::zeros(0, cols),
        ));
    }
    let m = faer::Mat::<f64>::from_fn(rows, cols, |i, j| to_f64(a[(i, j)]));
    let svd = m.thin_svd().map_err(|_| FilterError::SvdFailed {
        defect: f64::INFINITY,
    })?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    let u = DMatrix::<T>::from_fn(rows, k, |i, j| lit(u[(i, j)]));
    let s = DVector::<T>::from_fn(k, |i, _| lit(s[i]));
    let v_t = DMatrix::<T>::from_fn(k, cols, |i, j| lit(v[(j, i)]));
    let defect = (&u * DMatrix::from_diagonal(&s) * &v_t - a).amax() / scale;
    if defect > T::default_epsilon() * lit(1e4 * cols.min(rows) as f64) {
        return Err(FilterError::SvdFailed {
            defect: to_f64(defect),
        });
    }
    Ok((u, s, v_t))
}

/// Thin SVD of `A Eᵀ`, where `E` scatters the `6 * blocks.len()` columns of
/// `A` to the listed robot blocks; singular values below the relative cutoff
/// are dropped.
fn low_rank_factors<T: Real>(
    a: DMatrix<T>,
    blocks: &[usize],
) -> Result<(DMatrix<T>, DVector<T>, DMatrix<T>), FilterError> {
    let dim = a.nrows();
    let (u, singular_values, v_t) = thin_svd(&a)?;
    let sigma_max = singular_values.max();
    let keep: Vec<usize> = (0..singular_values.len())
        .filter(|&k| {
            let s = singular_values[k];
            s > T::zero() && s > sigma_max * T::svd_rel_cutoff()
        })
        .collect();
    let r = keep.len();
    let mut t_factor = DMatrix::zeros(dim, r);
    let mut s = DVector::zeros(r);
    let mut v = DMatrix::zeros(dim, r);
    for (c, &k) in keep.iter().enumerate() {
        t_factor.set_column(c, &u.column(k));
        s[c] = singular_values[k];
        for (b, &robot) in blocks.iter().enumerate() {
            for row in 0..6 {
                v[(6 * robot + row, c)] = v_t[(k, 6 * b + row)];
            }
        }
    }
    Ok((t_factor, s, v))
}

/// `M = (S⁻¹ + VᵀT)⁻¹`, evaluated as `(I + S VᵀT)⁻¹ S`.
///
/// Conditioning is judged on the row-balanced core `I + S VᵀT = S (S⁻¹ + VᵀT)`,
/// which is invariant to the spread of the retained singular values.
pub fn woodbury_core<T: Real>(
    t_factor: &DMatrix<T>,
    s: &DVector<T>,
    v: &DMatrix<T>,
) -> Result<DMatrix<T>, FilterError> {
    let r = s.len();
    if r == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let s_diag = DMatrix::from_diagonal(s);
    let balanced = DMatrix::identity(r, r) + &s_diag * (v.transpose() * t_factor);
    let sv = balanced.clone().singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if !(lo > T::zero()) || hi / lo > T::max_condition() {
        return Err(FilterError::SingularCore {
            condition: if lo > T::zero() {
                to_f64(hi / lo)
            } else {
                f64::INFINITY
            },
        });
    }
    balanced
        .lu()
        .solve(&s_diag)
        .ok_or(FilterError::SingularCore {
            condition: f64::INFINITY,
        })
}

/// `(I - T M Vᵀ) X` for a block of columns `X`.
fn apply_woodbury<T: Real>(
    cols: &DMatrix<T>,
    t_factor: &DMatrix<T>,
    core: &DMatrix<T>,
    v: &DMatrix<T>,
) -> DMatrix<T> {
    if core.nrows() == 0 {
        return cols.clone();
    }
    cols - t_factor * (core * (v.transpose() * cols))
}

/// Low-rank form of `(I + Sigma H)⁻¹ Sigma`, for checking against the dense
/// route. `blocks` lists the robots whose columns of `H` are nonzero.
pub fn woodbury_update<T: Real>(
    sigma: &DMatrix<T>,
    h: &DMatrix<T>,
    blocks: &[usize],
) -> Result<(DMatrix<T>, usize), FilterError> {
    let mut selected = DMatrix::zeros(sigma.nrows(), 6 * blocks.len());
    for (b, &robot) in blocks.iter().enumerate() {
        let mut cols = selected.columns_mut(6 * b, 6);
        cols.copy_from(&(sigma * h.columns(6 * robot, 6)));
    }
    let (t_factor, s, v) = low_rank_factors(selected, blocks)?;
    let core = woodbury_core(&t_factor, &s, &v)?;
    Ok((apply_woodbury(sigma, &t_factor, &core, &v), s.len()))
}

fn gradient_step<T: Real>(
    updated_cols: &[(usize, DMatrix<T>, Vector6<T>)],
    dim: usize,
) -> DVector<T> {
    let mut out = DVector::zeros(dim);
    for (_, col, g) in updated_cols {
        out -= col * g;
    }
    out
}

/// Observer-side robot update: combines the observer's column with the
/// observed peer's snapshot and emits the broadcast for epoch `epoch + 1`.
pub fn initiate_robot_update<T: Real>(
    node: &RobotNode<T>,
    peer: &PeerState<T>,
    m: &RobotMeasurement<T>,
    tokens: &[PropagationToken<T>],
) -> Result<UpdateBroadcast<T>, FilterError> {
    if m.observer != node.id {
        return Err(FilterError::WrongRobot {
            node: node.id,
            got: m.observer,
        });
    }
    if m.observed == node.id {
        return Err(FilterError::SelfObservation(node.id));
    }
    if m.observed != peer.sender {
        return Err(FilterError::WrongRobot {
            node: peer.sender,
            got: m.observed,
        });
    }
    node.check_aligned(peer.t, peer.epoch)?;
    let (i, j) = (node.id, peer.sender);
    let dim = 6 * node.n();
    let col_i = node.column(tokens)?;
    let col_j = &peer.sigma_col;
    let terms = robot_terms(&node.pose, &peer.pose, m)?;

    let mut pair = DMatrix::zeros(dim, 12);
    pair.columns_mut(0, 6).copy_from(&col_i);
    pair.columns_mut(6, 6).copy_from(col_j);
    let w = terms.block_matrix();
    let a = &pair * DMatrix::from_column_slice(12, 12, w.as_slice());
    let (t_factor, s, v) = low_rank_factors(a, &[i, j])?;
    let core = woodbury_core(&t_factor, &s, &v)?;

    let upd_i = apply_woodbury(&col_i, &t_factor, &core, &v);
    let upd_j = apply_woodbury(col_j, &t_factor, &core, &v);
    let corrections = gradient_step(
        &[
            (i, upd_i, terms.grad_observer),
            (j, upd_j, terms.grad_observed),
        ],
        dim,
    );
    Ok(UpdateBroadcast {
        kind: UpdateKind::Robot {
            observer: i,
            observed: j,
        },
        t_factor,
        s,
        v,
        corrections,
        t: node.t,
        epoch: node.epoch + 1,
    })
}

/// Landmark update, computed entirely from the observer's own column.
pub fn initiate_landmark_update<T: Real>(
    node: &RobotNode<T>,
    m: &LandmarkMeasurement<T>,
    tokens: &[PropagationToken<T>],
) -> Result<UpdateBroadcast<T>, FilterError> {
    if m.robot != node.id {
        return Err(FilterError::WrongRobot {
            node: node.id,
            got: m.robot,
        });
    }
    let i = node.id;
    let dim = 6 * node.n();
    let col_i = node.column(tokens)?;
    let terms = landmark_terms(&node.pose, m)?;
    let a = &col_i * DMatrix::from_column_slice(6, 6, terms.hess.as_slice());
    let (t_factor, s, v) = low_rank_factors(a, &[i])?;
    let core = woodbury_core(&t_factor, &s, &v)?;
    let upd_i = apply_woodbury(&col_i, &t_factor, &core, &v);
    let corrections = gradient_step(&[(i, upd_i, terms.grad)], dim);
    Ok(UpdateBroadcast {
        kind: UpdateKind::Landmark { robot: i },
        t_factor,
        s,
        v,
        corrections,
        t: node.t,
        epoch: node.epoch + 1,
    })
}

/// Applies a broadcast to node `k`: updates its column, corrects its pose,
/// re-bases and resets `K`.
pub fn apply_update_broadcast<T: Real>(
    node: &RobotNode<T>,
    b: &UpdateBroadcast<T>,
    tokens: &[PropagationToken<T>],
) -> Result<RobotNode<T>, FilterError> {
    if b.epoch != node.epoch + 1 || b.t != node.t {
        return Err(FilterError::EpochMismatch {
            node_epoch: node.epoch,
            node_t: to_f64(node.t),
            msg_epoch: b.epoch,
            msg_t: to_f64(b.t),
        });
    }
    if b.corrections.len() != 6 * node.n() {
        return Err(crate::error::LieError::Dimension {
            expected: 6 * node.n(),
            got: b.corrections.len(),
        }
        .into());
    }
    let col = node.column(tokens)?;
    let core = woodbury_core(&b.t_factor, &b.s, &b.v)?;
    let mut next = apply_woodbury(&col, &b.t_factor, &core, &b.v);
    let sigma_ii = proj_sym(&block(&next, node.id, 0));
    if sigma_ii.cholesky().is_none() {
        return Err(FilterError::NonPositiveDefinite {
            matrix: "Sigma_ii",
            robot: Some(node.id),
        });
    }
    set_block(&mut next, node.id, 0, &sigma_ii);
    Ok(RobotNode {
        id: node.id,
        pose: node.pose.retract(&b.correction(node.id)),
        sigma_ii,
        sigma_col_base: next,
        k: Matrix6::identity(),
        t: node.t,
        epoch: node.epoch + 1,
    })
}

/// Message counters of a [`DecoupledNetwork`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficStats {
    pub messages: usize,
    pub bytes: usize,
    pub max_factor_payload: usize,
    /// Largest encoded broadcast of each kind, in bytes.
    pub max_landmark_broadcast_bytes: usize,
    pub max_robot_broadcast_bytes: usize,
}

/// In-process network of nodes with synchronous delivery.
///
/// Every message is sent through the binary wire format, so what a node
/// consumes is exactly what would arrive over a link.
#[derive(Debug, Clone)]
pub struct DecoupledNetwork<T: Real> {
    pub nodes: Vec<RobotNode<T>>,
    pub traffic: TrafficStats,
}

impl<T: Real> DecoupledNetwork<T> {
    pub fn new(est: &GlobalEstimate<T>, sigma: &InverseHessian<T>) -> Result<Self, FilterError> {
        Ok(Self {
            nodes: RobotNode::split(est, sigma)?,
            traffic: TrafficStats::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn poses(&self) -> Vec<Pose<T>> {
        self.nodes.iter().map(|nd| nd.pose).collect()
    }

    fn deliver(&mut self, msg: Message<T>) -> Result<Message<T>, FilterError> {
        let bytes = wire::encode(&msg)?;
        self.traffic.messages += 1;
        self.traffic.bytes += bytes.len();
        if let Message::Broadcast(b) = &msg {
            let t = &mut self.traffic;
            t.max_factor_payload = t.max_factor_payload.max(b.payload_scalars());
            let largest = match b.kind {
                UpdateKind::Landmark { .. } => &mut t.max_landmark_broadcast_bytes,
                UpdateKind::Robot { .. } => &mut t.max_robot_broadcast_bytes,
            };
            *largest = (*largest).max(bytes.len());
        }
        Ok(wire::decode(&bytes)?)
    }

    fn exchange_tokens(&mut self) -> Result<Vec<PropagationToken<T>>, FilterError> {
        let mut tokens = Vec::with_capacity(self.n());
        for k in 0..self.n() {
            match self.deliver(Message::Token(self.nodes[k].token()))? {
                Message::Token(t) => tokens.push(t),
                _ => unreachable!("token decoded as another kind"),
            }
        }
        Ok(tokens)
    }

    /// One velocity sample per robot, in robot order.
    pub fn propagate(&mut self, u: &[VelocityMeasurement<T>], dt: T) -> Result<(), FilterError> {
        if u.len() != self.n() {
            return Err(FilterError::VelocityCount {
                expected: self.n(),
                got: u.len(),
            });
        }
        for (node, m) in self.nodes.iter_mut().zip(u) {
            *node = local_propagate(node, m, dt)?;
        }
        Ok(())
    }

    fn broadcast(
        &mut self,
        b: UpdateBroadcast<T>,
        tokens: &[PropagationToken<T>],
    ) -> Result<(), FilterError> {
        let b = match self.deliver(Message::Broadcast(b))? {
            Message::Broadcast(b) => b,
            _ => unreachable!("broadcast decoded as another kind"),
        };
        let next = self
            .nodes
            .iter()
            .map(|node| apply_update_broadcast(node, &b, tokens))
            .collect::<Result<Vec<_>, _>>()?;
        self.nodes = next;
        Ok(())
    }

    pub fn landmark_update(&mut self, m: &LandmarkMeasurement<T>) -> Result<(), FilterError> {
        if m.robot >= self.n() {
            return Err(FilterError::IndexError {
                index: m.robot,
                n: self.n(),
            });
        }
        let tokens = self.exchange_tokens()?;
        let b = initiate_landmark_update(&self.nodes[m.robot], m, &tokens)?;
        self.broadcast(b, &tokens)
    }

    pub fn robot_update(&mut self, m: &RobotMeasurement<T>) -> Result<(), FilterError> {
        for index in [m.observer, m.observed] {
            if index >= self.n() {
                return Err(FilterError::IndexError { index, n: self.n() });
            }
        }
        let tokens = self.exchange_tokens()?;
        let peer = self.nodes[m.observed].peer_state(&tokens)?;
        let peer = match self.deliver(Message::PeerState(peer))? {
            Message::PeerState(p) => p,
            _ => unreachable!("peer state decoded as another kind"),
        };
        let b = initiate_robot_update(&self.nodes[m.observer], &peer, m, &tokens)?;
        self.broadcast(b, &tokens)
    }

    /// Assembles the full `Sigma` from every node's current column.
    pub fn sigma(&self) -> Result<DMatrix<T>, FilterError> {
        let tokens: Vec<_> = self.nodes.iter().map(RobotNode::token).collect();
        let dim = 6 * self.n();
        let mut out = DMatrix::zeros(dim, dim);
        for node in &self.nodes {
            out.columns_mut(6 * node.id, 6)
                .copy_from(&node.column(&tokens)?);
        }
        Ok(out)
    }
}
