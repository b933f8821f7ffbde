"""Treatment-effect error metrics and factor identification summaries."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractViolation, DegenerateInputError

INF_SENTINEL = float("inf")


def _arrays(*arrs):
    out = [np.asarray(a, dtype=np.float64).ravel() for a in arrs]
    if len({len(a) for a in out}) != 1:
        raise ContractViolation("metric inputs must have equal length")
    if len(out[0]) == 0:
        raise DegenerateInputError("metric inputs are empty")
    return out


def pehe(y1_hat, y0_hat, y1, y0) -> float:
    """Root-mean-square error of the predicted individual effects."""
    y1_hat, y0_hat, y1, y0 = _arrays(y1_hat, y0_hat, y1, y0)
    err = (y1_hat - y0_hat) - (y1 - y0)
    return float(np.sqrt(np.mean(err * err)))


def ate_error(y1_hat, y0_hat, y1, y0) -> float:
    y1_hat, y0_hat, y1, y0 = _arrays(y1_hat, y0_hat, y1, y0)
    return float(abs(np.mean(y1 - y0) - np.mean(y1_hat - y0_hat)))


def policy_risk(y1_hat, y0_hat, yf, t, rct=None) -> float:
    """Loss of treating exactly the units with positive predicted effect.

    Evaluated on the randomized subset (``rct == 1``; all units if ``rct`` is
    None) from factual outcomes. A conditional mean over an empty cell counts
    as zero.
    """
    y1_hat, y0_hat, yf, t = _arrays(y1_hat, y0_hat, yf, t)
    keep = np.ones(len(t), dtype=bool) if rct is None else _arrays(rct, t)[0] > 0
    if not keep.any():
        raise DegenerateInputError("policy_risk: the randomized subset is empty")
    y1_hat, y0_hat, yf, t = y1_hat[keep], y0_hat[keep], yf[keep], t[keep]
    policy = (y1_hat - y0_hat) > 0
    p_treat = policy.mean()
    treat_cell = policy & (t == 1)
    ctrl_cell = ~policy & (t == 0)
    v_treat = yf[treat_cell].mean() if treat_cell.any() else 0.0
    v_ctrl = yf[ctrl_cell].mean() if ctrl_cell.any() else 0.0
    return float(1.0 - (v_treat * p_treat + v_ctrl * (1.0 - p_treat)))


def att_error(y1_hat, y0_hat, yf, t, rct=None) -> float:
    """|true ATT - estimated ATT|.

    True ATT contrasts treated outcomes with randomized controls; the
    estimate averages predicted effects over treated units.
    """
    y1_hat, y0_hat, yf, t = _arrays(y1_hat, y0_hat, yf, t)
    rct = np.ones(len(t)) if rct is None else _arrays(rct, t)[0]
    treated = t == 1
    controls = (t == 0) & (rct > 0)
    if not treated.any():
        raise DegenerateInputError("att_error: no treated units")
    if not controls.any():
        raise DegenerateInputError("att_error: no randomized control units")
    att = yf[treated].mean() - yf[controls].mean()
    att_hat = np.mean((y1_hat - y0_hat)[treated])
    return float(abs(att - att_hat))


@dataclass
class EvalReport:
    scope: str
    pehe: float | None = None
    ate_error: float | None = None
    policy_risk: float | None = None
    att_error: float | None = None
    n: int = 0

    def as_dict(self):
        return asdict(self)


def evaluate(y0_hat, y1_hat, ds, scope: str) -> EvalReport:
    """All metrics ``ds`` has ground truth for."""
    rep = EvalReport(scope=scope, n=int(ds.n))
    if ds.has_counterfactuals:
        rep.pehe = pehe(y1_hat, y0_hat, ds.y1, ds.y0)
        rep.ate_error = ate_error(y1_hat, y0_hat, ds.y1, ds.y0)
    if ds.rct is not None and np.any(ds.rct > 0):
        rep.policy_risk = policy_risk(y1_hat, y0_hat, ds.yf, ds.t, ds.rct)
        if np.any(ds.t == 1) and np.any((ds.t == 0) & (ds.rct > 0)):
            rep.att_error = att_error(y1_hat, y0_hat, ds.yf, ds.t, ds.rct)
    return rep


# ----------------------------------------------------------------- identification

@dataclass
class FactorSummary:
    factor: str
    true_mean: float
    other_mean: float
    ratio: float
    n_true: int
    n_other: int


def identification_report(profile, roles=None):
    """Per-variable contribution table and, given roles, a per-factor summary.

    ``profile`` is a :class:`~dercfr.model.ContributionProfile` (or anything
    with ``w_I``/``w_C``/``w_A``). Returns ``(rows, summary)`` where ``rows``
    is a list of dicts and ``summary`` maps factor name to
    :class:`FactorSummary` (empty without roles). A zero mean over the other
    variables yields an infinite ratio when the true mean is positive.
    """
    vecs = {"I": np.asarray(profile.w_I), "C": np.asarray(profile.w_C), "A": np.asarray(profile.w_A)}
    m = len(vecs["I"])
    if roles is not None and len(roles) != m:
        raise ContractViolation(f"{len(roles)} roles for {m} variables")
    rows = []
    for j in range(m):
        rows.append({"variable": f"x{j + 1}", "role": roles[j] if roles is not None else "",
                     "wI": float(vecs["I"][j]), "wC": float(vecs["C"][j]), "wA": float(vecs["A"][j])})
    summary = {}
    if roles is None:
        return rows, summary
    roles = np.asarray(roles)
    for f, w in vecs.items():
        mine = roles == f
        true_mean = float(w[mine].mean()) if mine.any() else float("nan")
        other_mean = float(w[~mine].mean()) if (~mine).any() else float("nan")
        if other_mean == 0:
            ratio = INF_SENTINEL if true_mean > 0 else float("nan")
        else:
            ratio = true_mean / other_mean
        summary[f] = FactorSummary(f, true_mean, other_mean, ratio, int(mine.sum()), int((~mine).sum()))
    return rows, summary
