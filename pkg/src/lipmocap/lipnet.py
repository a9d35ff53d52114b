"""The LIP networks, their losses, staged training and end-to-end inference.

Stage 1 distils coarse root-relative joints and the root orientation from the
point cloud (PointNet + bi-GRU + MLP decoder). Stage 2 refines the joints with
the IMUs (Joint-map Estimator) and regresses all 24 joint rotations
(Body-pose Estimator). The translation model predicts the offset between the
true root and the raw cloud mean.

Losses are plain sums over frames and windows (no 1/T factor).
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import tensorgrad as T
from .kinematics import N_JOINTS, RotationError, fk_batch, root_relative, rot6d_to_matrix
from .preprocess import (IMU_DIM, N_FPS, X3_DIM, X4_DIM, EmptyFrameError, normalize_cloud,
                         window_sequence)
from .sensorsim import compute_d_gt  # noqa: F401  (re-exported)
from .tensorgrad.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .tensorgrad.geometry import fk_t, rot6d_to_matrix_t

J_DIM = 3 * N_JOINTS
POSE_DIM = 6 * N_JOINTS


@dataclass
class ModelConfig:
    pointnet_widths: tuple = (3, 64, 128, 1024)
    s1_hidden: int = 256
    s1_decoder: tuple = (256,)
    est_hidden: int = 256
    trans_hidden: int = 256
    trans_fusion: tuple = (256,)
    lambdas: tuple = (1.0, 1.0, 0.2, 0.7, 0.7)
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    window: int = 32
    stride: int = 16
    epochs: int = 500
    batch_size: int = 32
    n_points: int = N_FPS

    def __post_init__(self):
        self.pointnet_widths = tuple(self.pointnet_widths)
        self.s1_decoder = tuple(self.s1_decoder)
        self.trans_fusion = tuple(self.trans_fusion)
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if len(self.lambdas) != 5 or min(self.lambdas) < 0:
            raise ValueError("lambdas must be five nonnegative weights")
        if self.pointnet_widths[0] != 3:
            raise ValueError("PointNet input width must be 3")

    @classmethod
    def tiny(cls, **kw):
        """Very small widths for gradient checks and fast tests."""
        base = dict(pointnet_widths=(3, 5, 6, 7), s1_hidden=4, s1_decoder=(5,), est_hidden=4,
                    trans_hidden=4, trans_fusion=(5,))
        base.update(kw)
        return cls(**base)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# ---------------------------------------------------------------------------
# models


class Stage1Model(T.Module):
    """PointNet per frame -> bi-GRU over the window -> MLP decoder (72 + 6)."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        k = cfg.pointnet_widths[-1]
        self.pointnet = T.PointNetEncoder(cfg.pointnet_widths, rng)
        self.bigru = T.BiGRU(k, cfg.s1_hidden, rng)
        self.decoder = T.MLP((2 * cfg.s1_hidden,) + cfg.s1_decoder + (J_DIM + 6,), rng)

    def forward_frames(self, clouds, index):
        """``clouds`` (F, P, 3) unique frames; ``index`` (T, B) picks frames per window."""
        index = np.asarray(index)
        feats = self.pointnet(T.as_tensor(clouds))
        seq = T.reshape(T.take(feats, index.reshape(-1)), index.shape + (feats.shape[-1],))
        out = self.decoder(self.bigru(seq))
        return out[..., :J_DIM], out[..., J_DIM:]


class EstimatorModel(T.Module):
    """Input projection, three stacked GRUs, and an input-to-head skip connection."""

    def __init__(self, n_in, n_out, cfg: ModelConfig, rng):
        H = cfg.est_hidden
        self.n_in, self.n_out = n_in, n_out
        self.proj = T.Linear(n_in, H, rng)
        self.gru1 = T.GRU(H, H, rng)
        self.gru2 = T.GRU(H, H, rng)
        self.gru3 = T.GRU(H, H, rng)
        self.skip = T.Linear(n_in, H, rng)
        self.head = T.Linear(H, n_out, rng)

    def forward(self, x):
        x = T.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise T.ShapeError(f"estimator: expected input dim {self.n_in}, got {x.shape}")
        h = T.relu(self.proj(x))
        h = self.gru3(self.gru2(self.gru1(h)))
        return self.head(T.add(h, self.skip(x)))


class Stage2Model(T.Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.jointmap = EstimatorModel(X3_DIM, J_DIM, cfg, rng)
        self.bodypose = EstimatorModel(X4_DIM, POSE_DIM, cfg, rng)

    def forward(self, x3):
        """``x3`` (T, B, 126) -> (J_fine (T, B, 72), Theta (T, B, 144))."""
        x3 = T.as_tensor(x3)
        j_fine = self.jointmap(x3)
        theta = self.bodypose(T.concat([x3, j_fine], axis=-1))
        return j_fine, theta


class TransModel(T.Module):
    """Separate PointNet + bi-GRU encoder fused with the predicted pose -> D (3)."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        k = cfg.pointnet_widths[-1]
        self.pointnet = T.PointNetEncoder(cfg.pointnet_widths, rng)
        self.bigru = T.BiGRU(k, cfg.trans_hidden, rng)
        self.fusion = T.MLP((2 * cfg.trans_hidden + POSE_DIM + J_DIM,) + cfg.trans_fusion + (3,), rng)

    def forward_frames(self, clouds, index, theta, j_fine):
        index = np.asarray(index)
        feats = self.pointnet(T.as_tensor(clouds))
        seq = T.reshape(T.take(feats, index.reshape(-1)), index.shape + (feats.shape[-1],))
        h = self.bigru(seq)
        return self.fusion(T.concat([h, T.as_tensor(theta), T.as_tensor(j_fine)], axis=-1))


def _seeded(cfg, offset):
    return np.random.default_rng([cfg.seed, offset])


def build_stage1(cfg):
    return Stage1Model(cfg, _seeded(cfg, 1))


def build_stage2(cfg):
    return Stage2Model(cfg, _seeded(cfg, 2))


def build_trans(cfg):
    return TransModel(cfg, _seeded(cfg, 3))


# ---------------------------------------------------------------------------
# losses


def _masked_sse(pred, gt, mask=None):
    gt = T.as_tensor(gt, like=pred)
    if mask is None:
        return T.sum_squared_error(pred, gt)
    m = T.Tensor(np.asarray(mask, dtype=pred.dtype)[..., None])
    return T.sum_squared_error(T.mul(pred, m), T.mul(gt, m))


def loss_prior(j_prior, theta_root, j_gt, root_gt, lam1=1.0, lam2=1.0, mask=None):
    """``lam1 * sum ||J_prior - J_gt||^2 + lam2 * sum ||Theta_root - Theta_root_gt||^2``."""
    return T.add(T.mul(_masked_sse(j_prior, j_gt, mask), lam1),
                 T.mul(_masked_sse(theta_root, root_gt, mask), lam2))


def loss_fine_j(j_fine, j_gt, mask=None):
    return _masked_sse(j_fine, j_gt, mask)


def loss_ik(theta, theta_gt, mask=None):
    return _masked_sse(theta, theta_gt, mask)


def fk_joints_t(theta, skel):
    """Root-relative FK joints (..., 72) from a 6D pose tensor (..., 144)."""
    lead = theta.shape[:-1]
    R = rot6d_to_matrix_t(T.reshape(theta, (-1, N_JOINTS, 6)))
    joints = fk_t(skel, R)
    return T.reshape(joints, lead + (J_DIM,))


def loss_fk(theta, j_gt, skel, mask=None):
    return _masked_sse(fk_joints_t(theta, skel), j_gt, mask)


def loss_pose(l_fine, l_ik, l_fk, lam3=0.2, lam4=0.7, lam5=0.7):
    return T.add(T.add(T.mul(l_fine, lam3), T.mul(l_ik, lam4)), T.mul(l_fk, lam5))


def loss_trans(d_hat, d_gt, mask=None):
    return _masked_sse(d_hat, d_gt, mask)


# ---------------------------------------------------------------------------
# data


@dataclass
class FrameData:
    """All frames of one or more sequences, preprocessed and concatenated."""

    clouds: np.ndarray  # (F, 256, 3)
    centroids: np.ndarray  # (F, 3)
    flagged: np.ndarray  # (F,) empty cloud substituted by a neighbour
    imu: np.ndarray  # (F, 48)
    j_gt: np.ndarray | None = None  # (F, 72) root-relative
    theta_gt: np.ndarray | None = None  # (F, 144)
    d_gt: np.ndarray | None = None  # (F, 3)
    seq_bounds: list = field(default_factory=list)  # [(start, stop)] per sequence

    def __len__(self):
        return self.clouds.shape[0]

    def windows(self, window, stride, inference=False):
        """Global frame index (W, window) and mask (W, window) over all sequences."""
        idx, mask = [], []
        for lo, hi in self.seq_bounds:
            for w in window_sequence(hi - lo, window, stride, inference):
                idx.append(w.indices + lo)
                mask.append(w.mask)
        if not idx:
            return np.zeros((0, window), dtype=np.int64), np.zeros((0, window), dtype=bool)
        return np.stack(idx), np.stack(mask)


def normalize_sequence_clouds(points, n=N_FPS):
    """Normalize every frame; empty frames borrow the nearest earlier (else later) frame."""
    T_ = len(points)
    clouds = np.zeros((T_, n, 3))
    cents = np.zeros((T_, 3))
    flagged = np.zeros(T_, dtype=bool)
    ok = []
    for t, p in enumerate(points):
        try:
            nc = normalize_cloud(p, t, n)
        except EmptyFrameError:
            flagged[t] = True
            continue
        clouds[t], cents[t] = nc.points, nc.centroid
        ok.append(t)
    if not ok:
        raise EmptyFrameError(0)
    for t in np.flatnonzero(flagged):
        prev = [k for k in ok if k < t]
        src = prev[-1] if prev else ok[0]
        clouds[t], cents[t] = clouds[src], cents[src]
    return clouds, cents, flagged


def prepare_frames(sequences, with_gt=True, n=N_FPS) -> FrameData:
    clouds, cents, flags, imus, jg, tg, dg, bounds = [], [], [], [], [], [], [], []
    start = 0
    for s in sequences:
        c, ce, fl = normalize_sequence_clouds(s.points, n)
        clouds.append(c)
        cents.append(ce)
        flags.append(fl)
        imus.append(np.asarray(s.imu, dtype=np.float64))
        if with_gt:
            jg.append(root_relative(np.asarray(s.joints_world)))
            tg.append(np.asarray(s.pose6d, dtype=np.float64))
            d = np.asarray(s.d_gt, dtype=np.float64).copy()
            d[fl] = np.nan
            dg.append(d)
        bounds.append((start, start + len(s)))
        start += len(s)
    return FrameData(
        clouds=np.concatenate(clouds), centroids=np.concatenate(cents),
        flagged=np.concatenate(flags), imu=np.concatenate(imus),
        j_gt=np.concatenate(jg) if with_gt else None,
        theta_gt=np.concatenate(tg) if with_gt else None,
        d_gt=np.concatenate(dg) if with_gt else None,
        seq_bounds=bounds)


# ---------------------------------------------------------------------------
# training


LogFn = Callable[[dict], None]


def _fit(params, step_fn, n_windows, cfg: ModelConfig, stage, log: LogFn | None, rng_offset,
         epochs=None):
    """Generic AdamW loop over shuffled window batches; returns per-epoch loss records."""
    opt = T.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, rng_offset])
    history = []
    for epoch in range(1, (epochs or cfg.epochs) + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n_windows)
        totals = {}
        for b in range(0, n_windows, cfg.batch_size):
            batch = np.sort(order[b:b + cfg.batch_size])
            opt.zero_grad()
            loss, parts = step_fn(batch)
            T.backward(loss)
            opt.step()
            for k, v in parts.items():
                totals[k] = totals.get(k, 0.0) + float(v)
        rec = {"stage": stage, "epoch": epoch, **{k: totals[k] for k in sorted(totals)}}
        history.append(rec)
        if log is not None:
            log(rec, wall_ms=(time.perf_counter() - t0) * 1e3)
    return history


def _unique_frames(win_idx):
    frames, local = np.unique(win_idx, return_inverse=True)
    return frames, local.reshape(win_idx.shape)


def train_stage1(data: FrameData, cfg: ModelConfig, log=None, model=None, epochs=None):
    model = build_stage1(cfg) if model is None else model
    idx, _ = data.windows(cfg.window, cfg.stride)
    if len(idx) == 0:
        raise ValueError(f"no training windows: sequences shorter than window={cfg.window}")
    lam1, lam2 = cfg.lambdas[0], cfg.lambdas[1]
    dt = model.pointnet.last.weight.dtype
    clouds = data.clouds.astype(dt)
    j_gt, root_gt = data.j_gt.astype(dt), data.theta_gt[:, :6].astype(dt)

    def step(batch):
        win = idx[batch].T  # (T, B)
        frames, local = _unique_frames(win)
        jp, rr = model.forward_frames(clouds[frames], local)
        lj = _masked_sse(jp, j_gt[win])
        lo = _masked_sse(rr, root_gt[win])
        loss = T.add(T.mul(lj, lam1), T.mul(lo, lam2))
        return loss, {"L_prior": loss.item(), "L_joint_prior": lj.item(), "L_ori_prior": lo.item()}

    hist = _fit(model.parameters(), step, len(idx), cfg, "stage1", log, 11, epochs)
    return model, hist


def stage1_predict(model: Stage1Model, data: FrameData, idx):
    """Stage-1 outputs per window: (J_prior (W, T, 72), Theta_root (W, T, 6))."""
    dt = model.pointnet.last.weight.dtype
    if len(idx) == 0:
        return np.zeros((0, idx.shape[1], J_DIM)), np.zeros((0, idx.shape[1], 6))
    frames, local = _unique_frames(idx.T)
    jp, rr = model.forward_frames(data.clouds[frames].astype(dt), local)
    return np.swapaxes(jp.data, 0, 1), np.swapaxes(rr.data, 0, 1)


def _x3(data, idx, jp, rr, dt):
    return np.concatenate([data.imu[idx], jp, rr], axis=-1).astype(dt)


def train_stage2(data: FrameData, stage1: Stage1Model, cfg: ModelConfig, skel, log=None,
                 model=None, epochs=None):
    model = build_stage2(cfg) if model is None else model
    idx, _ = data.windows(cfg.window, cfg.stride)
    if len(idx) == 0:
        raise ValueError(f"no training windows: sequences shorter than window={cfg.window}")
    dt = model.jointmap.proj.weight.dtype
    jp, rr = stage1_predict(stage1, data, idx)
    x3_all = _x3(data, idx, jp, rr, dt)  # (W, T, 126)
    j_gt, th_gt = data.j_gt.astype(dt), data.theta_gt.astype(dt)
    lam3, lam4, lam5 = cfg.lambdas[2:]

    def step(batch):
        win = idx[batch].T
        x3 = np.swapaxes(x3_all[batch], 0, 1)
        j_fine, theta = model(x3)
        lf = loss_fine_j(j_fine, j_gt[win])
        li = loss_ik(theta, th_gt[win])
        lk = loss_fk(theta, j_gt[win], skel)
        loss = loss_pose(lf, li, lk, lam3, lam4, lam5)
        return loss, {"L_pose": loss.item(), "L_fineJ": lf.item(), "L_ik": li.item(),
                      "L_fk": lk.item(), "L_ik_weighted": lam4 * li.item()}

    hist = _fit(model.parameters(), step, len(idx), cfg, "stage2", log, 12, epochs)
    return model, hist


def stage2_predict(model: Stage2Model, x3_windows):
    """(W, T, 126) -> (J_fine (W, T, 72), Theta (W, T, 144))."""
    j_fine, theta = model(np.swapaxes(x3_windows, 0, 1))
    return np.swapaxes(j_fine.data, 0, 1), np.swapaxes(theta.data, 0, 1)


def train_trans(data: FrameData, stage1: Stage1Model, stage2: Stage2Model, cfg: ModelConfig,
                log=None, model=None, epochs=None):
    model = build_trans(cfg) if model is None else model
    idx, _ = data.windows(cfg.window, cfg.stride)
    if len(idx) == 0:
        raise ValueError(f"no training windows: sequences shorter than window={cfg.window}")
    dt = model.pointnet.last.weight.dtype
    jp, rr = stage1_predict(stage1, data, idx)
    j_fine, theta = stage2_predict(stage2, _x3(data, idx, jp, rr, stage2.jointmap.proj.weight.dtype))
    clouds = data.clouds.astype(dt)
    valid = ~np.isnan(data.d_gt).any(axis=1)
    d_gt = np.nan_to_num(data.d_gt).astype(dt)

    def step(batch):
        win = idx[batch].T
        frames, local = _unique_frames(win)
        d_hat = model.forward_frames(clouds[frames], local, np.swapaxes(theta[batch], 0, 1).astype(dt),
                                     np.swapaxes(j_fine[batch], 0, 1).astype(dt))
        loss = loss_trans(d_hat, d_gt[win], valid[win])
        return loss, {"L_trans": loss.item()}

    hist = _fit(model.parameters(), step, len(idx), cfg, "trans", log, 13, epochs)
    return model, hist


# ---------------------------------------------------------------------------
# inference


@dataclass
class PoseEstimate:
    t: int
    j_prior: np.ndarray  # (72,)
    theta_root: np.ndarray  # (6,)
    j_fine: np.ndarray  # (72,)
    theta: np.ndarray  # (144,)
    d_hat: np.ndarray  # (3,)
    centroid: np.ndarray  # (3,)
    translation: np.ndarray  # (3,) centroid + d_hat
    joints_world: np.ndarray  # (72,)
    flagged: bool = False

    def to_record(self):
        rec = {"t": int(self.t)}
        for k in ("j_prior", "theta_root", "j_fine", "theta", "d_hat", "centroid", "translation",
                  "joints_world"):
            rec[k] = [float(v) for v in np.asarray(getattr(self, k)).reshape(-1)]
        rec["flagged"] = bool(self.flagged)
        return rec

    @classmethod
    def from_record(cls, rec):
        kw = {k: np.asarray(rec[k], dtype=np.float64) for k in
              ("j_prior", "theta_root", "j_fine", "theta", "d_hat", "centroid", "translation",
               "joints_world")}
        return cls(t=int(rec["t"]), flagged=bool(rec.get("flagged", False)), **kw)


def theta_to_matrices(theta):
    """Guarded Gram-Schmidt of predicted 6D poses (..., 144) -> (..., 24, 3, 3)."""
    theta = np.asarray(theta, dtype=np.float64)
    lead = theta.shape[:-1]
    six = theta.reshape(-1, 6)
    try:
        R = rot6d_to_matrix(six)
    except RotationError:
        with T.precision(np.float64):
            R = rot6d_to_matrix_t(T.Tensor(six)).data
    return R.reshape(lead + (N_JOINTS, 3, 3))


def pipeline_infer(sequence, stage1: Stage1Model, stage2: Stage2Model, trans: TransModel | None,
                   skel, window=None):
    """Run every stage over one sequence; returns one :class:`PoseEstimate` per frame.

    The sequence is cut into non-overlapping windows of the training length; the
    last one is padded by repeating the final frame and the padded slots are
    discarded. Without a translation model the offset is taken as zero.
    """
    data = prepare_frames([sequence], with_gt=False, n=stage1.cfg.n_points)
    window = window or stage1.cfg.window
    idx, mask = data.windows(window, window, inference=True)
    jp, rr = stage1_predict(stage1, data, idx)
    x3 = _x3(data, idx, jp, rr, stage2.jointmap.proj.weight.dtype)
    j_fine, theta = stage2_predict(stage2, x3)
    if trans is not None:
        dt = trans.pointnet.last.weight.dtype
        frames, local = _unique_frames(idx.T)
        d = trans.forward_frames(data.clouds[frames].astype(dt), local,
                                 np.swapaxes(theta, 0, 1).astype(dt),
                                 np.swapaxes(j_fine, 0, 1).astype(dt)).data
        d_hat = np.swapaxes(d, 0, 1)
    else:
        d_hat = np.zeros(idx.shape + (3,))

    n = len(data)
    out = {}
    sel = mask.reshape(-1)
    flat_idx = idx.reshape(-1)[sel]
    take = lambda a: np.asarray(a, dtype=np.float64).reshape(-1, a.shape[-1])[sel]  # noqa: E731
    jp_f, rr_f, jf_f, th_f, d_f = (take(a) for a in (jp, rr, j_fine, theta, d_hat))
    R = theta_to_matrices(th_f)
    transl = data.centroids[flat_idx] + d_f
    joints, _ = fk_batch(skel, R, transl)
    for k, t in enumerate(flat_idx):
        out[int(t)] = PoseEstimate(
            t=int(t), j_prior=jp_f[k], theta_root=rr_f[k], j_fine=jf_f[k], theta=th_f[k],
            d_hat=d_f[k], centroid=data.centroids[t], translation=transl[k],
            joints_world=joints[k].reshape(-1), flagged=bool(data.flagged[t]))
    return [out[t] for t in range(n)]


# ---------------------------------------------------------------------------
# checkpoints


MODEL_KINDS = {"stage1": build_stage1, "stage2": build_stage2, "trans": build_trans}


def save_model(path, model, kind):
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    save_checkpoint(path, model.state_dict(), kind, model.cfg.to_dict())


def load_model(path, kind=None):
    """Rebuild a model from its checkpoint; ``kind`` asserts the stored model_kind."""
    manifest, tensors = load_checkpoint(path)
    stored = manifest.get("model_kind")
    if stored not in MODEL_KINDS:
        raise CheckpointError(f"{path}: unknown model_kind {stored!r}")
    if kind is not None and stored != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {stored}")
    cfg = ModelConfig.from_dict(manifest.get("config", {}))
    dtypes = {np.asarray(v).dtype for v in tensors.values()}
    if len(dtypes) != 1 or not dtypes <= {np.dtype(np.float32), np.dtype(np.float64)}:
        raise CheckpointError(f"{path}: mixed or unsupported tensor dtypes {sorted(map(str, dtypes))}")
    with T.precision(dtypes.pop()):
        model = MODEL_KINDS[stored](cfg)
    try:
        model.load_state_dict(tensors)
    except ValueError as e:
        raise CheckpointError(f"{path}: {e}") from None
    return model
