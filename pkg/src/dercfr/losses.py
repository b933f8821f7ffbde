"""Decomposition, balancing, regression and regularization objectives.

Every term is built from :mod:`dercfr.autodiff` primitives, so the value
returned is a ``(1, 1)`` tensor that back-propagates into whatever parameters
were watched on the tape that produced its inputs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation, DegenerateInputError

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """``kind`` is ``"linear"`` or ``"rbf"``; rbf bandwidth may be ``"median"``."""

    kind: str = "linear"
    bandwidth: float | str = "median"

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ContractViolation(f"unknown kernel kind {self.kind!r}")
        if self.bandwidth != "median" and not float(self.bandwidth) > 0:
            raise ContractViolation("rbf bandwidth must be positive")


LINEAR = KernelSpec("linear")


def median_bandwidth(a: np.ndarray, b: np.ndarray, max_rows: int = 2000) -> float:
    """Median pairwise Euclidean distance of the pooled samples."""
    pooled = np.vstack([a, b])
    if len(pooled) > max_rows:
        pooled = pooled[np.linspace(0, len(pooled) - 1, max_rows).astype(int)]
    sq = np.sum(pooled * pooled, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * pooled @ pooled.T
    iu = np.triu_indices(len(pooled), k=1)
    if len(iu[0]) == 0:
        return 1.0
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))
    return med if med > 0 else 1.0


def _group_weights(w, n: int, label: str) -> Tensor:
    if n == 0:
        raise DegenerateInputError(f"mmd: group {label} is empty")
    if w is None:
        return ad.as_tensor(np.full((n, 1), 1.0 / n))
    w = ad.as_tensor(w)
    if w.shape != (n, 1):
        raise ContractViolation(f"mmd: weights for group {label} have shape {w.shape}, expected ({n}, 1)")
    if np.any(w.value < 0):
        raise ContractViolation(f"mmd: negative weights in group {label}")
    total = ad.sum_(w)
    if total.item() <= 0:
        raise DegenerateInputError(f"mmd: all weights in group {label} are zero")
    return w / total


def mmd(a, b, w_a=None, w_b=None, kernel: KernelSpec = LINEAR) -> Tensor:
    """Weighted maximum mean discrepancy between sample sets ``a`` and ``b``.

    Weights default to uniform and are renormalized to sum to one per group.
    The linear kernel gives the squared distance between weighted means; the
    rbf kernel uses ``k(x, y) = exp(-|x - y|^2 / (2 s^2))``.
    """
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.cols != b.cols:
        raise ContractViolation(f"mmd: dimension mismatch {a.cols} vs {b.cols}")
    wa = _group_weights(w_a, a.rows, "a")
    wb = _group_weights(w_b, b.rows, "b")
    if kernel.kind == "linear":
        diff = wa.T @ a - wb.T @ b
        return ad.sum_(ad.square(diff))
    bw = kernel.bandwidth
    if bw == "median":
        bw = median_bandwidth(a.value, b.value)
    return ad.relu0(ad.rbf_mmd(a, b, wa, wb, float(bw)))


def binarize_by_median(y, t) -> np.ndarray:
    """Within each arm, 1 where ``y`` is at or above that arm's median, else 0."""
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t)
    out = np.zeros_like(y)
    for k in (0, 1):
        rows = t == k
        if not rows.any():
            raise DegenerateInputError(f"binarize_by_median: arm t={k} is empty")
        out[rows] = (y[rows] >= np.median(y[rows])).astype(np.float64)
    return out


@dataclass
class LossInputs:
    """Per-batch labels and the index sets the objectives are built from."""

    t: np.ndarray
    y: np.ndarray
    binary: bool

    def __post_init__(self):
        self.t = np.asarray(self.t).astype(np.int64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.t.shape != self.y.shape:
            raise ContractViolation("t and y lengths differ")
        self.idx = (np.flatnonzero(self.t == 0), np.flatnonzero(self.t == 1))
        self._y_bin = None

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def y_binary(self) -> np.ndarray:
        if self._y_bin is None:
            self._y_bin = self.y.copy() if self.binary else binarize_by_median(self.y, self.t)
        return self._y_bin

    def require_both_arms(self, what: str):
        if len(self.idx[0]) == 0 or len(self.idx[1]) == 0:
            raise DegenerateInputError(f"{what}: both treatment arms must be present in the batch")


def pointwise_loss(target: np.ndarray, pred: Tensor, binary: bool) -> Tensor:
    """Per-sample log-loss (binary) or squared error (continuous), shape (n, 1)."""
    target = np.asarray(target, dtype=np.float64).reshape(-1, 1)
    if pred.shape != target.shape:
        raise ContractViolation(f"prediction shape {pred.shape} != target shape {target.shape}")
    if binary:
        return -(target * ad.log(pred, LOG_FLOOR) + (1.0 - target) * ad.log(1.0 - pred, LOG_FLOOR))
    return ad.square(pred - target)


def loss_adjustment(out: dict, inputs: LossInputs, kernel: KernelSpec = LINEAR) -> Tensor:
    """Arm discrepancy of A(X) plus how well A(X) alone predicts the outcome."""
    inputs.require_both_arms("loss_adjustment")
    A = out["A"]
    i0, i1 = inputs.idx
    disc = mmd(ad.take_rows(A, i0), ad.take_rows(A, i1), kernel=kernel)
    pred = ad.mean(pointwise_loss(inputs.y, out["y_A"], inputs.binary))
    return disc + pred


def loss_balance(out: dict, inputs: LossInputs, omega: Tensor, kernel: KernelSpec = LINEAR) -> Tensor:
    """omega-weighted arm discrepancy of C(X)."""
    inputs.require_both_arms("loss_balance")
    C = out["C"]
    i0, i1 = inputs.idx
    return mmd(ad.take_rows(C, i0), ad.take_rows(C, i1),
               ad.take_rows(omega, i0), ad.take_rows(omega, i1), kernel)


def loss_instrument(out: dict, inputs: LossInputs, omega: Tensor, kernel: KernelSpec = LINEAR) -> Tensor:
    """Outcome-class discrepancy of I(X) within each arm, plus treatment log-loss."""
    I = out["I"]
    yb = inputs.y_binary
    total = None
    for k in (0, 1):
        arm = inputs.idx[k]
        g0, g1 = arm[yb[arm] == 0], arm[yb[arm] == 1]
        if len(g0) == 0 or len(g1) == 0:
            log.warning("loss_instrument: arm t=%d lacks an outcome class; its discrepancy is skipped", k)
            continue
        d = mmd(ad.take_rows(I, g0), ad.take_rows(I, g1),
                ad.take_rows(omega, g0), ad.take_rows(omega, g1), kernel)
        total = d if total is None else total + d
    pred = ad.mean(pointwise_loss(inputs.t, out["t_hat"], True))
    return pred if total is None else total + pred


def _as_profile_tensors(profile) -> list[Tensor]:
    if isinstance(profile, dict):
        vecs = [profile["I"], profile["C"], profile["A"]]
    elif hasattr(profile, "w_I"):
        vecs = [profile.w_I, profile.w_C, profile.w_A]
    else:
        vecs = list(profile)
    vecs = [v if isinstance(v, Tensor) else ad.as_tensor(np.asarray(v, dtype=np.float64).reshape(-1, 1))
            for v in vecs]
    if len({v.shape for v in vecs}) != 1:
        raise ContractViolation("contribution vectors must have equal length")
    return vecs


def loss_orthogonal(profile) -> Tensor:
    """Pairwise inner products of the three contribution vectors."""
    wi, wc, wa = _as_profile_tensors(profile)
    return ad.sum_(wi * wc) + ad.sum_(wc * wa) + ad.sum_(wa * wi)


def loss_regression(out: dict, inputs: LossInputs, omega: Tensor) -> Tensor:
    """omega-weighted factual loss, each sample scored by its own arm's head."""
    total = None
    for k in (0, 1):
        idx = inputs.idx[k]
        if len(idx) == 0:
            continue
        pred = out[f"y{k}"]
        if pred.rows == inputs.n:
            pred = ad.take_rows(pred, idx)
        elif pred.rows != len(idx):
            raise ContractViolation(f"head h{k} produced {pred.rows} rows for {len(idx)} samples")
        term = ad.sum_(ad.take_rows(omega, idx) * pointwise_loss(inputs.y[idx], pred, inputs.binary))
        total = term if total is None else total + term
    if total is None:
        raise DegenerateInputError("loss_regression: empty batch")
    return total


def regularizers(weights, omega: Tensor, t, profile) -> dict[str, Tensor]:
    """Weight decay, per-arm omega sum penalty and contribution sum penalty.

    ``weights`` are the weight-matrix tensors of every network.
    """
    r_w = None
    for w in weights:
        s = ad.sum_(ad.square(w))
        r_w = s if r_w is None else r_w + s
    if r_w is None:
        r_w = ad.as_tensor(0.0)
    t = np.asarray(t)
    r_cb = None
    for k in (0, 1):
        idx = np.flatnonzero(t == k)
        s = ad.sum_(ad.take_rows(omega, idx)) if len(idx) else ad.as_tensor(0.0)
        s = ad.square(s - 1.0)
        r_cb = s if r_cb is None else r_cb + s
    r_o = None
    for v in _as_profile_tensors(profile):
        s = ad.square(ad.sum_(v) - 1.0)
        r_o = s if r_o is None else r_o + s
    return {"R_W": r_w, "R_C_B": r_cb, "R_O": r_o}


@dataclass
class LossReport:
    L_R: float = 0.0
    L_A: float = 0.0
    L_I: float = 0.0
    L_C_B: float = 0.0
    L_O: float = 0.0
    R_W: float = 0.0
    R_C_B: float = 0.0
    R_O: float = 0.0
    L: float = 0.0
    L_minus_omega: float = 0.0
    L_omega: float = 0.0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.field_names()}


TERM_NAMES = ("L_R", "L_A", "L_I", "L_C_B", "L_O", "R_W", "R_C_B", "R_O")


def assemble_losses(terms: dict, alpha: float, beta: float, gamma: float, mu: float,
                    lam: float) -> tuple[LossReport, dict[str, Tensor]]:
    """Combine the component terms into the full and the two phase objectives.

    Returns the float report and the tensors ``L``, ``L_minus_omega`` and
    ``L_omega`` for back-propagation.
    """
    T = {k: ad.as_tensor(terms.get(k, 0.0)) for k in TERM_NAMES}
    reg = T["R_W"] + T["R_C_B"] + T["R_O"]
    shared = T["L_R"] + lam * reg
    l_minus = shared + alpha * T["L_A"] + beta * T["L_I"] + mu * T["L_O"]
    l_omega = shared + gamma * T["L_C_B"]
    l_full = l_minus + gamma * T["L_C_B"]
    report = LossReport(**{k: T[k].item() for k in TERM_NAMES},
                        L=l_full.item(), L_minus_omega=l_minus.item(), L_omega=l_omega.item())
    return report, {"L": l_full, "L_minus_omega": l_minus, "L_omega": l_omega}
