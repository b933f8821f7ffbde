"""Network assembly: three representation networks, four heads, sample weights.

Layout of a representation network with ``depth`` hidden layers::

    x -> [Linear -> (BatchNorm) -> ELU] * depth -> Linear -> ELU -> (L2 rows)

Heads use the same hidden stack without batch normalization and end in a
single linear unit; binary-outcome models pass it through a sigmoid.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .errors import ConfigurationError, ContractViolation, NumericError, ParseError

MAGIC = b"DERCFR\x00\x01"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    depth: int
    width: int
    output_dim: int
    batch_norm: bool = False
    rep_normalize: bool = False

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigurationError(f"network depth must be >= 1, got {self.depth}")
        if min(self.input_dim, self.width, self.output_dim) < 1:
            raise ConfigurationError("network dimensions must be >= 1")

    @property
    def n_linear(self) -> int:
        return self.depth + 1


class MLP:
    def __init__(self, spec: NetworkSpec, name: str, rng: np.random.Generator | None,
                 representation: bool):
        self.spec = spec
        self.name = name
        self.representation = representation
        dims = [spec.input_dim] + [spec.width] * spec.depth + [spec.output_dim]
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = (rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out))
                 if rng is not None else np.zeros((fan_in, fan_out)))
            self.weights.append(Parameter(w, f"{name}.W{k}"))
            self.biases.append(Parameter(np.zeros((1, fan_out)), f"{name}.b{k}"))
        self.use_bn = spec.batch_norm and representation
        self.bn_scale: list[Parameter] = []
        self.bn_shift: list[Parameter] = []
        self.running_mean: list[np.ndarray] = []
        self.running_var: list[np.ndarray] = []
        if self.use_bn:
            for k in range(spec.depth):
                self.bn_scale.append(Parameter(np.ones((1, spec.width)), f"{name}.bn{k}.scale"))
                self.bn_shift.append(Parameter(np.zeros((1, spec.width)), f"{name}.bn{k}.shift"))
                self.running_mean.append(np.zeros(spec.width))
                self.running_var.append(np.ones(spec.width))

    def parameters(self) -> list[Parameter]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        for s, h in zip(self.bn_scale, self.bn_shift):
            out += [s, h]
        return out

    def _p(self, tape, param):
        return tape.watch(param) if tape is not None else Tensor(param.value)

    def forward(self, x: Tensor, tape: Tape | None = None, training: bool = False) -> Tensor:
        if x.cols != self.spec.input_dim:
            raise ContractViolation(f"{self.name}: expected {self.spec.input_dim} input columns, got {x.cols}")
        h = x
        try:
            for k in range(self.spec.depth):
                h = h @ self._p(tape, self.weights[k]) + self._p(tape, self.biases[k])
                if self.use_bn:
                    h = ad.batch_norm(h, self._p(tape, self.bn_scale[k]), self._p(tape, self.bn_shift[k]),
                                      self.running_mean[k], self.running_var[k], training)
                h = ad.elu(h)
            h = h @ self._p(tape, self.weights[-1]) + self._p(tape, self.biases[-1])
            if self.representation:
                h = ad.elu(h)
                if self.spec.rep_normalize:
                    h = ad.l2_normalize_rows(h)
        except NumericError as exc:
            raise NumericError(f"network {self.name}: {exc}") from exc
        return h


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    rep_depth: int
    rep_width: int
    rep_dim: int
    y_depth: int
    y_width: int
    t_depth: int
    t_width: int
    batch_norm: bool
    rep_normalize: bool
    binary_outcome: bool

    def rep_spec(self) -> NetworkSpec:
        return NetworkSpec(self.input_dim, self.rep_depth, self.rep_width, self.rep_dim,
                           self.batch_norm, self.rep_normalize)

    def t_spec(self) -> NetworkSpec:
        return NetworkSpec(self.rep_dim, self.t_depth, self.t_width, 1)

    def y_spec(self, input_dim) -> NetworkSpec:
        return NetworkSpec(input_dim, self.y_depth, self.y_width, 1)


class DeRCFRModel:
    """Representation networks I, C, A; heads g_I, g_A, h0, h1; weights omega."""

    REP_NAMES = ("I", "C", "A")
    HEAD_NAMES = ("g_I", "g_A", "h0", "h1")

    def __init__(self, spec: ModelSpec, t_train: np.ndarray, rng: np.random.Generator | None):
        self.spec = spec
        self.t_train = np.asarray(t_train, dtype=np.int64)
        rs = spec.rep_spec()
        self.reps = {k: MLP(rs, k, rng, representation=True) for k in self.REP_NAMES}
        self.heads = {
            "g_I": MLP(spec.t_spec(), "g_I", rng, representation=False),
            "g_A": MLP(spec.y_spec(spec.rep_dim), "g_A", rng, representation=False),
            "h0": MLP(spec.y_spec(2 * spec.rep_dim), "h0", rng, representation=False),
            "h1": MLP(spec.y_spec(2 * spec.rep_dim), "h1", rng, representation=False),
        }
        counts = np.bincount(self.t_train, minlength=2)
        init = np.log(np.expm1(1.0 / counts[self.t_train].astype(float)))
        self.rho = Parameter(init[:, None], "rho")

    @property
    def networks(self) -> dict[str, MLP]:
        return {**self.reps, **self.heads}

    def network_parameters(self) -> list[Parameter]:
        out = []
        for net in self.networks.values():
            out += net.parameters()
        return out

    def weight_matrices(self) -> list[Parameter]:
        out = []
        for net in self.networks.values():
            out += net.weights
        return out

    def parameters(self) -> list[Parameter]:
        return self.network_parameters() + [self.rho]

    def omega(self, tape: Tape | None = None) -> Tensor:
        rho = tape.watch(self.rho) if tape is not None else Tensor(self.rho.value)
        return ad.softplus(rho)

    def arm_indices(self):
        return np.flatnonzero(self.t_train == 0), np.flatnonzero(self.t_train == 1)


def build_model(hp, input_dim: int, t_train, binary_outcome: bool, seed: int) -> DeRCFRModel:
    """Initialize a model for ``input_dim`` covariates and the given training arms."""
    t_train = np.asarray(t_train)
    if input_dim < 1:
        raise ConfigurationError("input dimension must be >= 1")
    if t_train.ndim != 1 or len(t_train) < 2:
        raise ConfigurationError("need at least two training samples")
    if not np.all((t_train == 0) | (t_train == 1)):
        raise ConfigurationError("treatments must be 0/1")
    counts = np.bincount(t_train.astype(np.int64), minlength=2)
    if counts.min() == 0:
        raise ConfigurationError(f"treatment arm {int(np.argmin(counts))} has no training samples")
    spec = ModelSpec(
        input_dim=int(input_dim),
        rep_depth=hp.d_R, rep_width=hp.h_R, rep_dim=hp.rep_dim or hp.h_R,
        y_depth=hp.d_y, y_width=hp.h_y, t_depth=hp.d_t, t_width=hp.h_t,
        batch_norm=hp.batch_norm, rep_normalize=hp.rep_normalize,
        binary_outcome=bool(binary_outcome),
    )
    return DeRCFRModel(spec, t_train, np.random.default_rng(seed))


def forward_all(model: DeRCFRModel, X, tape: Tape | None = None, training: bool = False,
                factual_arms=None) -> dict[str, Tensor]:
    """Run every network on ``X``.

    Returns the representations ``I``, ``C``, ``A``, treatment probabilities
    ``t_hat``, the adjustment-head prediction ``y_A`` and the potential-outcome
    predictions ``y0``/``y1`` (all ``(n, 1)``). When ``factual_arms=(idx0, idx1)``
    is given, ``h0`` only scores rows ``idx0`` and ``h1`` only rows ``idx1``.
    """
    x = ad.as_tensor(X) if not isinstance(X, Tensor) else X
    if x.cols != model.spec.input_dim:
        raise ContractViolation(f"X has {x.cols} columns, model expects {model.spec.input_dim}")
    reps = {k: net.forward(x, tape, training) for k, net in model.reps.items()}
    heads = model.heads
    out = dict(reps)
    out["t_hat"] = ad.sigmoid(heads["g_I"].forward(reps["I"], tape, training))
    y_link = ad.sigmoid if model.spec.binary_outcome else (lambda v: v)
    out["y_A"] = y_link(heads["g_A"].forward(reps["A"], tape, training))
    ca = ad.concat_cols([reps["C"], reps["A"]])
    if factual_arms is None:
        out["y0"] = y_link(heads["h0"].forward(ca, tape, training))
        out["y1"] = y_link(heads["h1"].forward(ca, tape, training))
    else:
        idx0, idx1 = factual_arms
        out["y0"] = y_link(heads["h0"].forward(ad.take_rows(ca, idx0), tape, training))
        out["y1"] = y_link(heads["h1"].forward(ad.take_rows(ca, idx1), tape, training))
    return out


def predict_outcomes(model: DeRCFRModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation-mode potential-outcome predictions as 1-D arrays."""
    out = forward_all(model, np.asarray(X, dtype=np.float64), tape=None, training=False)
    return out["y0"].value[:, 0].copy(), out["y1"].value[:, 0].copy()


# ----------------------------------------------------------------- contributions

@dataclass
class ContributionProfile:
    """Average absolute path weight from each input variable into I, C and A."""

    w_I: np.ndarray
    w_C: np.ndarray
    w_A: np.ndarray
    layers: int

    def as_dict(self):
        return {"I": self.w_I, "C": self.w_C, "A": self.w_A}


def _resolve_layers(model: DeRCFRModel, layers) -> int:
    total = model.spec.rep_depth + 1
    if layers in ("all", None):
        return total
    layers = int(layers)
    if layers < 1:
        raise ConfigurationError("the number of constrained layers must be >= 1")
    if layers > total:
        raise ConfigurationError(f"l={layers} exceeds the {total} linear layers of a representation network")
    return layers


def contribution_tensors(model: DeRCFRModel, layers="all", tape: Tape | None = None) -> dict[str, Tensor]:
    """Differentiable ``(m, 1)`` contribution vectors keyed by factor name."""
    n = _resolve_layers(model, layers)
    out = {}
    for key, net in model.reps.items():
        prod = None
        for w in net.weights[:n]:
            wt = ad.abs_(tape.watch(w) if tape is not None else Tensor(w.value))
            prod = wt if prod is None else prod @ wt
        out[key] = ad.mean(prod, axis=1)
    return out


def contribution_profile(model: DeRCFRModel, layers="all") -> ContributionProfile:
    t = contribution_tensors(model, layers)
    return ContributionProfile(t["I"].value[:, 0].copy(), t["C"].value[:, 0].copy(),
                               t["A"].value[:, 0].copy(), _resolve_layers(model, layers))


# ----------------------------------------------------------------- serialization

def save_model(model: DeRCFRModel, path, extra: dict | None = None) -> None:
    """Write the model as magic + header length + JSON header + raw float64 blobs."""
    arrays: list[tuple[str, np.ndarray]] = []
    for net in model.networks.values():
        for p in net.parameters():
            arrays.append((p.name, p.value))
        for k, (rm, rv) in enumerate(zip(net.running_mean, net.running_var)):
            arrays.append((f"{net.name}.bn{k}.running_mean", rm[None, :]))
            arrays.append((f"{net.name}.bn{k}.running_var", rv[None, :]))
    arrays.append(("rho", model.rho.value))
    arrays.append(("t_train", model.t_train.astype(np.float64)[:, None]))

    index, offset = [], 0
    for name, arr in arrays:
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {"version": FORMAT_VERSION, "spec": asdict(model.spec), "arrays": index,
              "extra": extra or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> tuple[DeRCFRModel, dict]:
    """Inverse of :func:`save_model`; returns ``(model, extra)``."""
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a model file (bad magic header)")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(data[start:start + hlen])
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported model format version {header.get('version')}")
    body = start + hlen
    arrays = {}
    for item in header["arrays"]:
        shape = tuple(item["shape"])
        count = int(np.prod(shape))
        lo = body + item["offset"]
        arrays[item["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=lo).reshape(shape).copy()

    spec = ModelSpec(**header["spec"])
    model = DeRCFRModel(spec, arrays["t_train"][:, 0].astype(np.int64), rng=None)
    for net in model.networks.values():
        for p in net.parameters():
            p.value[...] = arrays[p.name]
        for k in range(len(net.running_mean)):
            net.running_mean[k][...] = arrays[f"{net.name}.bn{k}.running_mean"][0]
            net.running_var[k][...] = arrays[f"{net.name}.bn{k}.running_var"][0]
    model.rho.value[...] = arrays["rho"]
    return model, header["extra"]
