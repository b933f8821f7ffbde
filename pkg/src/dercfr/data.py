"""Synthetic benchmark generation, splitting and CSV interchange."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractViolation, ParseError, SplitError

log = logging.getLogger(__name__)

ROLES = ("I", "C", "A", "noise")


@dataclass(frozen=True)
class SyntheticConfig:
    m_I: int = 8
    m_C: int = 8
    m_A: int = 8
    m_D: int = 2
    n: int = 3000
    seed: int = 0

    def __post_init__(self):
        if min(self.m_I, self.m_C, self.m_A) < 1 or self.m_D < 0:
            raise ConfigurationError("factor dimensions must be >= 1 (noise >= 0)")
        if self.n < 10:
            raise ConfigurationError("synthetic datasets need n >= 10")

    @property
    def m(self) -> int:
        return self.m_I + self.m_C + self.m_A + self.m_D

    @property
    def name(self) -> str:
        return f"Syn_{self.m_I}_{self.m_C}_{self.m_A}_{self.n}"


@dataclass
class Dataset:
    X: np.ndarray
    t: np.ndarray
    yf: np.ndarray
    y0: np.ndarray | None = None
    y1: np.ndarray | None = None
    rct: np.ndarray | None = None
    roles: list[str] | None = None
    outcome_type: str = "binary"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.t = np.asarray(self.t).astype(np.int64)
        self.yf = np.asarray(self.yf, dtype=np.float64)
        n = len(self.t)
        if self.X.ndim != 2 or self.X.shape[0] != n or self.yf.shape != (n,):
            raise ContractViolation("X, t and yf must describe the same number of units")
        if not np.all((self.t == 0) | (self.t == 1)):
            raise ContractViolation("treatments must be 0/1")
        if (self.y0 is None) != (self.y1 is None):
            raise ContractViolation("y0 and y1 must be given together")
        if self.y0 is not None:
            self.y0 = np.asarray(self.y0, dtype=np.float64)
            self.y1 = np.asarray(self.y1, dtype=np.float64)
        if self.rct is not None:
            self.rct = np.asarray(self.rct).astype(np.int64)
        if self.outcome_type not in ("binary", "continuous"):
            raise ContractViolation(f"unknown outcome type {self.outcome_type!r}")

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def binary(self) -> bool:
        return self.outcome_type == "binary"

    @property
    def has_counterfactuals(self) -> bool:
        return self.y0 is not None

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]
        return Dataset(self.X[idx], self.t[idx], self.yf[idx], pick(self.y0), pick(self.y1),
                       pick(self.rct), self.roles, self.outcome_type, dict(self.meta))


# ----------------------------------------------------------------- synthetic

def _draw_synthetic(cfg: SyntheticConfig, rng: np.random.Generator, X=None):
    m_ic, m_ca = cfg.m_I + cfg.m_C, cfg.m_C + cfg.m_A
    if X is None:
        X = rng.standard_normal((cfg.n, cfg.m))
    theta_t = rng.uniform(8.0, 16.0, size=m_ic)
    theta_y0 = rng.uniform(8.0, 16.0, size=m_ca)
    theta_y1 = rng.uniform(8.0, 16.0, size=m_ca)
    return X, theta_t, theta_y0, theta_y1


def synthetic_scores(X, cfg: SyntheticConfig, theta_t, theta_y0, theta_y1, eps):
    """Treatment logit and the two raw outcome scores before centering."""
    x_ic = X[:, :cfg.m_I + cfg.m_C]
    x_ca = X[:, cfg.m_I:cfg.m_I + cfg.m_C + cfg.m_A]
    z = 0.1 * x_ic @ theta_t + eps
    m_ca = cfg.m_C + cfg.m_A
    z0 = 0.1 * (x_ca @ theta_y0) / m_ca
    z1 = 0.1 * ((x_ca ** 2) @ theta_y1) / m_ca
    return z, z0, z1


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Selection-biased binary-outcome data with known I/C/A/noise roles.

    Draw order from ``default_rng(cfg.seed)``: X, theta_t, theta_y0, theta_y1,
    eps, then the Bernoulli uniforms for treatment.
    """
    rng = np.random.default_rng(cfg.seed)
    X, theta_t, theta_y0, theta_y1 = _draw_synthetic(cfg, rng)
    eps = rng.standard_normal(cfg.n)
    z, z0, z1 = synthetic_scores(X, cfg, theta_t, theta_y0, theta_y1, eps)
    p = 1.0 / (1.0 + np.exp(-z))
    t = (rng.uniform(size=cfg.n) < p).astype(np.int64)
    # sign(max(0, s)) is 1 for s > 0 and 0 otherwise
    y0 = (z0 - z0.mean() > 0).astype(np.float64)
    y1 = (z1 - z1.mean() > 0).astype(np.float64)
    yf = np.where(t == 1, y1, y0)
    roles = ["I"] * cfg.m_I + ["C"] * cfg.m_C + ["A"] * cfg.m_A + ["noise"] * cfg.m_D
    meta = {"m_I": cfg.m_I, "m_C": cfg.m_C, "m_A": cfg.m_A, "m_D": cfg.m_D, "n": cfg.n,
            "seed": cfg.seed, "theta_t": theta_t.tolist(), "theta_y0": theta_y0.tolist(),
            "theta_y1": theta_y1.tolist()}
    return Dataset(X, t, yf, y0, y1, None, roles, "binary", meta)


# ----------------------------------------------------------------- splitting

@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.63
    valid: float = 0.27
    test: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.valid, self.test) <= 0:
            raise ConfigurationError("split fractions must be positive")
        if abs(self.train + self.valid + self.test - 1.0) > 1e-9:
            raise ConfigurationError("split fractions must sum to 1")


def split_indices(n: int, spec: SplitSpec) -> dict[str, np.ndarray]:
    n_valid = math.floor(spec.valid * n + 1e-9)
    n_test = math.floor(spec.test * n + 1e-9)
    n_train = n - n_valid - n_test
    perm = np.random.default_rng(spec.seed).permutation(n)
    return {"train": np.sort(perm[:n_train]),
            "valid": np.sort(perm[n_train:n_train + n_valid]),
            "test": np.sort(perm[n_train + n_valid:])}


def split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> dict[str, Dataset]:
    """Random disjoint train/valid/test partition; rounding remainder goes to train."""
    idx = split_indices(ds.n, spec)
    for name, rows in idx.items():
        if len(rows) < 2:
            raise SplitError(f"split part {name!r} has {len(rows)} samples (need >= 2)")
    if len(np.unique(ds.t[idx["train"]])) < 2:
        raise SplitError("training part contains a single treatment arm")
    parts = {name: ds.subset(rows) for name, rows in idx.items()}
    for name, rows in idx.items():
        parts[name].meta["indices"] = rows
    return parts


# ----------------------------------------------------------------- CSV I/O

def save_csv(ds: Dataset, path, write_meta: bool = True) -> None:
    """Write ``x1..xm,t,yf[,y0,y1][,e]`` plus a ``.meta`` sidecar."""
    path = Path(path)
    cols = [f"x{j + 1}" for j in range(ds.m)] + ["t", "yf"]
    body = [ds.X, ds.t[:, None].astype(np.float64), ds.yf[:, None]]
    if ds.has_counterfactuals:
        cols += ["y0", "y1"]
        body += [ds.y0[:, None], ds.y1[:, None]]
    if ds.rct is not None:
        cols.append("e")
        body.append(ds.rct[:, None].astype(np.float64))
    table = np.hstack(body)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
    if write_meta:
        write_meta_file(path.with_suffix(".meta"), ds)


def write_meta_file(path, ds: Dataset) -> None:
    lines = []
    for key in ("m_I", "m_C", "m_A", "m_D", "n", "seed"):
        if key in ds.meta:
            lines.append(f"{key}={ds.meta[key]}")
    lines.append(f"outcome_type={ds.outcome_type}")
    if ds.roles is not None:
        lines.append("roles=" + ",".join(ds.roles))
    for key in ("theta_t", "theta_y0", "theta_y1"):
        if key in ds.meta:
            lines.append(f"{key}=" + ",".join(repr(float(v)) for v in ds.meta[key]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta_file(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{path}: malformed metadata line {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_csv(path, outcome_type: str | None = None) -> Dataset:
    """Read a dataset CSV; a ``.meta`` sidecar next to it is picked up if present."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ParseError(f"{path}: non-numeric value in row {lineno}") from None

    col = {name: k for k, name in enumerate(header)}
    for required in ("t", "yf"):
        if required not in col:
            raise ParseError(f"{path}: missing required column {required!r}")
    xcols = sorted((name for name in header if name.startswith("x") and name[1:].isdigit()),
                   key=lambda s: int(s[1:]))
    if not xcols:
        raise ParseError(f"{path}: no covariate columns x1..xm")
    expected = [f"x{j + 1}" for j in range(len(xcols))]
    if xcols != expected:
        raise ParseError(f"{path}: covariate columns must be x1..x{len(xcols)} without gaps")
    if ("y0" in col) != ("y1" in col):
        raise ParseError(f"{path}: y0 and y1 must appear together")

    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    X = table[:, [col[c] for c in xcols]]
    t = table[:, col["t"]]
    if not np.all((t == 0) | (t == 1)):
        raise ParseError(f"{path}: column t must contain only 0/1")
    yf = table[:, col["yf"]]
    y0 = table[:, col["y0"]] if "y0" in col else None
    y1 = table[:, col["y1"]] if "y1" in col else None
    rct = table[:, col["e"]] if "e" in col else None

    meta, roles = {}, None
    meta_path = path.with_suffix(".meta")
    if meta_path.exists():
        raw = read_meta_file(meta_path)
        for key in ("m_I", "m_C", "m_A", "m_D", "n", "seed"):
            if key in raw:
                meta[key] = int(raw[key])
        for key in ("theta_t", "theta_y0", "theta_y1"):
            if key in raw:
                meta[key] = [float(v) for v in raw[key].split(",")]
        if "roles" in raw:
            roles = raw["roles"].split(",")
            if len(roles) != X.shape[1]:
                raise ParseError(f"{meta_path}: {len(roles)} roles for {X.shape[1]} covariates")
        if outcome_type is None and "outcome_type" in raw:
            outcome_type = raw["outcome_type"]
    if outcome_type is None:
        outcome_type = "binary" if np.all((yf == 0) | (yf == 1)) else "continuous"
    meta["source"] = str(path)
    return Dataset(X, t, yf, y0, y1, rct, roles, outcome_type, meta)


def load_npz_benchmark(path, realization: int = 0) -> Dataset:
    """One realization of a CFR-style ``.npz`` benchmark (x, t, yf, mu0/mu1 or ycf, e).

    Noiseless ``mu0``/``mu1`` are preferred as ground-truth potential outcomes.
    """
    with np.load(path) as f:
        X = f["x"][:, :, realization] if f["x"].ndim == 3 else f["x"]
        pick = lambda k: (f[k][:, realization] if f[k].ndim == 2 else f[k]) if k in f.files else None
        t, yf = pick("t"), pick("yf")
        y0, y1 = pick("mu0"), pick("mu1")
        if y0 is None and "ycf" in f.files:
            ycf = pick("ycf")
            y0 = np.where(t == 1, ycf, yf)
            y1 = np.where(t == 1, yf, ycf)
        rct = pick("e")
    binary = np.all((yf == 0) | (yf == 1))
    return Dataset(X, t, yf, y0, y1, rct, None, "binary" if binary else "continuous",
                   {"source": str(path), "realization": realization})


# ----------------------------------------------------------------- twins

def augment_twins(ds: Dataset, seed: int, n_extra: int = 10) -> Dataset:
    """Prepend Binomial(5, 0.5) covariates, max-normalize, reassign treatment.

    ``ds`` must carry both potential outcomes of every twin pair. The
    treatment logit uses a weight per covariate drawn from U(-0.1, 0.1) plus
    one N(0, 0.1) noise draw per unit.
    """
    if not ds.has_counterfactuals:
        raise ContractViolation("augment_twins needs both potential outcomes")
    rng = np.random.default_rng(seed)
    extra = rng.binomial(5, 0.5, size=(ds.n, n_extra)).astype(np.float64)
    X = np.hstack([extra, ds.X])
    col_max = X.max(axis=0)
    for j in np.flatnonzero(col_max == 0):
        log.warning("augment_twins: column %d has maximum 0; left unnormalized", j + 1)
    X = X / np.where(col_max == 0, 1.0, col_max)
    w = rng.uniform(-0.1, 0.1, size=X.shape[1])
    noise = rng.normal(0.0, 0.1, size=ds.n)
    p = 1.0 / (1.0 + np.exp(-(X @ w + noise)))
    t = (rng.uniform(size=ds.n) < p).astype(np.int64)
    yf = np.where(t == 1, ds.y1, ds.y0)
    meta = dict(ds.meta, twins_seed=seed, treatment_prob=p)
    return Dataset(X, t, yf, ds.y0, ds.y1, None, None, ds.outcome_type, meta)
