# pwass_model.py
# Piecewise affine state-space models: x_{t+1} = F(x_t) + B u_t + w_t, y_t = C x_t + v_t,
# where F switches between affine pieces on the scalar eta = x[0].
# State ordering is x = [eta, zeta, chi...]; the filters truncate the FIRST component.

import json
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from errors import ConfigError, DimensionMismatch, IndexOutOfRange, PakfError
from gauss_kernel import Interval, psd_factor

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PwaFunction:
    """Scalar piecewise affine map f(eta) = slopes[i] * eta + intercepts[i]
    on breakpoints[i] < eta <= breakpoints[i + 1]."""
    breakpoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).ravel()
        a = np.asarray(self.slopes, dtype=float).ravel()
        b = np.asarray(self.intercepts, dtype=float).ravel()
        if len(a) < 1 or len(a) != len(b) or len(bp) != len(a) + 1:
            raise DimensionMismatch(
                f"need N_r >= 1 slope/intercept pairs and N_r + 1 breakpoints, "
                f"got {len(a)} slopes, {len(b)} intercepts, {len(bp)} breakpoints")
        if bp[0] != -math.inf or bp[-1] != math.inf:
            raise ValueError("first breakpoint must be -inf and last must be +inf")
        if not np.all(np.diff(bp) > 0):
            raise ValueError(f"breakpoints must be strictly increasing: {bp.tolist()}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("slopes and intercepts must be finite")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", a)
        object.__setattr__(self, "intercepts", b)

    @property
    def n_regions(self) -> int:
        return len(self.slopes)

    def interval(self, i: int) -> Interval:
        return Interval(self.breakpoints[i], self.breakpoints[i + 1])


class RegionMatrices(NamedTuple):
    A: np.ndarray
    b: np.ndarray


@dataclass(frozen=True, eq=False)
class PwassModel:
    Phi: np.ndarray   # first row of the transition, length n_x
    phi: np.ndarray   # coefficients of [zeta, chi] in the switched row, length n_x - 1
    F: np.ndarray     # remaining rows, (n_x - 2, n_x)
    B: np.ndarray     # (n_x, n_u)
    C: np.ndarray     # (n_y, n_x)
    Q: np.ndarray
    R: np.ndarray
    f: PwaFunction
    A_stack: np.ndarray = field(init=False, repr=False)
    b_stack: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Phi = np.asarray(self.Phi, dtype=float).ravel()
        n_x = len(Phi)
        if n_x < 2:
            raise DimensionMismatch(f"n_x must be at least 2, got {n_x}")
        try:
            phi = np.asarray(self.phi, dtype=float).reshape(n_x - 1)
            F = np.asarray(self.F, dtype=float).reshape(n_x - 2, n_x)
            B = np.asarray(self.B, dtype=float)
            B = B.reshape(n_x, B.size // n_x)
            C = np.atleast_2d(np.asarray(self.C, dtype=float))
            Q = np.asarray(self.Q, dtype=float).reshape(n_x, n_x)
            R = np.atleast_2d(np.asarray(self.R, dtype=float))
        except ValueError as e:
            raise DimensionMismatch(f"model matrices do not fit n_x = {n_x}: {e}") from e
        if C.shape[1] != n_x:
            raise DimensionMismatch(f"C must have {n_x} columns, got shape {C.shape}")
        if R.shape != (C.shape[0], C.shape[0]):
            raise DimensionMismatch(f"R must be {C.shape[0]}x{C.shape[0]}, got {R.shape}")
        for name, S in (("Q", Q), ("R", R)):
            if not np.allclose(S, S.T, rtol=1e-12, atol=0.0):
                raise ValueError(f"{name} must be symmetric")
            psd_factor(S)

        for name, value in (("Phi", Phi), ("phi", phi), ("F", F), ("B", B), ("C", C), ("Q", Q), ("R", R)):
            object.__setattr__(self, name, value)

        # A_i = [Phi^T; a_i, phi^T; F], b_i = [0, b_i, 0...]
        n_r = self.f.n_regions
        A = np.empty((n_r, n_x, n_x))
        A[:, 0, :] = Phi
        A[:, 1, 0] = self.f.slopes
        A[:, 1, 1:] = phi
        A[:, 2:, :] = F
        b = np.zeros((n_r, n_x))
        b[:, 1] = self.f.intercepts
        object.__setattr__(self, "A_stack", A)
        object.__setattr__(self, "b_stack", b)

    @property
    def n_x(self) -> int:
        return self.Phi.shape[0]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_regions(self) -> int:
        return self.f.n_regions


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray        # (T, n_x)
    inputs: np.ndarray        # (T - 1, n_u)
    measurements: np.ndarray  # (T, n_y)

    def __post_init__(self):
        for name in ("states", "inputs", "measurements"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.ndim == 1:
                value = value.reshape(-1, 1)
            object.__setattr__(self, name, value)
        if len(self.states) != len(self.measurements) or len(self.inputs) != len(self.states) - 1:
            raise DimensionMismatch(
                f"trajectory lengths disagree: {len(self.states)} states, "
                f"{len(self.inputs)} inputs, {len(self.measurements)} measurements")

    @property
    def T(self) -> int:
        return len(self.measurements)


# ─────────────────────────────────────────────────────────────
# Region lookup and affinization
# ─────────────────────────────────────────────────────────────

def region_index(f: PwaFunction, eta):
    """0-based region of eta: the i with l_i < eta <= l_{i+1}. Accepts arrays."""
    idx = np.clip(np.searchsorted(f.breakpoints, eta, side="left") - 1, 0, f.n_regions - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


def evaluate(f: PwaFunction, eta):
    i = region_index(f, eta)
    return f.slopes[i] * eta + f.intercepts[i]


def region_matrices(model: PwassModel, i: int) -> RegionMatrices:
    if not 0 <= i < model.n_regions:
        raise IndexOutOfRange(f"region {i} outside 0..{model.n_regions - 1}")
    return RegionMatrices(model.A_stack[i].copy(), model.b_stack[i].copy())


# ─────────────────────────────────────────────────────────────
# Transition
# ─────────────────────────────────────────────────────────────

def _vec(v, n, name):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (n,):
        raise DimensionMismatch(f"{name} must have length {n}, got shape {v.shape}")
    return v


def step_state(model: PwassModel, x, u, w) -> np.ndarray:
    """x_{t+1} = A_i x + B u + b_i + w with i the region of x[0]."""
    x = _vec(x, model.n_x, "x")
    u = _vec(u, model.n_u, "u")
    w = _vec(w, model.n_x, "w")
    i = region_index(model.f, x[0])
    return model.A_stack[i] @ x + model.B @ u + model.b_stack[i] + w


def transition_direct(model: PwassModel, x, u, w) -> np.ndarray:
    """The stacked form [Phi^T x; f(eta) + phi^T z; F x] + B u + w, without affinization."""
    x = _vec(x, model.n_x, "x")
    u = _vec(u, model.n_u, "u")
    w = _vec(w, model.n_x, "w")
    switched = evaluate(model.f, x[0]) + model.phi @ x[1:]
    fx = np.concatenate(([model.Phi @ x, switched], model.F @ x))
    return fx + model.B @ u + w


def propagate(model: PwassModel, X: np.ndarray, u, W: np.ndarray) -> np.ndarray:
    """step_state applied row-wise to a batch of states X (N, n_x)."""
    regions = region_index(model.f, X[:, 0])
    drift = np.einsum("nij,nj->ni", model.A_stack[regions], X)
    return drift + model.B @ u + model.b_stack[regions] + W


def simulate(model: PwassModel, x1, inputs, rng_seed) -> Trajectory:
    """Simulate T = len(inputs) + 1 steps with w ~ N(0, Q), v ~ N(0, R).

    rng_seed may be an int or a numpy SeedSequence; the output is fully
    determined by it.
    """
    x1 = _vec(x1, model.n_x, "x1")
    inputs = np.asarray(inputs, dtype=float).reshape(-1, model.n_u)
    T = len(inputs) + 1

    rng = np.random.default_rng(rng_seed)
    W = rng.standard_normal((T - 1, model.n_x)) @ psd_factor(model.Q).T
    V = rng.standard_normal((T, model.n_y)) @ psd_factor(model.R).T

    states = np.empty((T, model.n_x))
    states[0] = x1
    for t in range(T - 1):
        states[t + 1] = step_state(model, states[t], inputs[t], W[t])
    measurements = states @ model.C.T + V
    return Trajectory(states, inputs, measurements)


# ─────────────────────────────────────────────────────────────
# Built-in benchmark
# ─────────────────────────────────────────────────────────────

def sdofs_model(dt=0.01, damping=1.0, mass=1.0, stiffness=(50.0, 5.0, 50.0),
                clearance=1.0, q=0.01, r=1.0) -> PwassModel:
    """Mass-spring-damper with a clearance spring: position eta, velocity zeta.

    The spring has stiffness a_2 inside |eta| <= clearance and a_1 = a_3 outside,
    with intercepts chosen so the force is continuous. Slopes and intercepts are
    stored already scaled by -dt/M, i.e. as they enter the velocity row.
    """
    a = np.asarray(stiffness, dtype=float)
    l1, l2 = -clearance, clearance
    b = np.array([l1 * (a[1] - a[0]), 0.0, l2 * (a[1] - a[2])])
    scale = -dt / mass
    f = PwaFunction([-math.inf, l1, l2, math.inf], scale * a, scale * b)
    return PwassModel(
        Phi=[1.0, dt],
        phi=[1.0 - dt * damping / mass],
        F=np.zeros((0, 2)),
        B=[[0.0], [dt / mass]],
        C=[[1.0, 0.0]],
        Q=q * np.eye(2),
        R=[[r]],
        f=f,
    )


BUILTIN_MODELS = {
    "sdofs": sdofs_model,
}


# ─────────────────────────────────────────────────────────────
# Model files
# ─────────────────────────────────────────────────────────────

def _encode_float(x: float):
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return float(x)


def _decode_float(x) -> float:
    if isinstance(x, str):
        if x not in ("inf", "-inf"):
            raise ConfigError(f"unexpected string {x!r} where a number was expected")
        return float(x)
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"expected a number, got {x!r}")
    return float(x)


def model_to_dict(model: PwassModel) -> dict:
    # float repr is the shortest string that round-trips, so the file is bit-exact
    return {
        "n_x": model.n_x,
        "n_y": model.n_y,
        "n_u": model.n_u,
        "Phi": model.Phi.tolist(),
        "phi": model.phi.tolist(),
        "F": model.F.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "Q": model.Q.tolist(),
        "R": model.R.tolist(),
        "breakpoints": [_encode_float(v) for v in model.f.breakpoints],
        "slopes": model.f.slopes.tolist(),
        "intercepts": model.f.intercepts.tolist(),
    }


def model_from_dict(data: dict) -> PwassModel:
    try:
        n_x, n_y, n_u = int(data["n_x"]), int(data["n_y"]), int(data["n_u"])

        def matrix(key, rows, cols):
            values = [[_decode_float(v) for v in row] for row in data[key]]
            return np.array(values, dtype=float).reshape(rows, cols)

        f = PwaFunction(
            [_decode_float(v) for v in data["breakpoints"]],
            [_decode_float(v) for v in data["slopes"]],
            [_decode_float(v) for v in data["intercepts"]],
        )
        return PwassModel(
            Phi=[_decode_float(v) for v in data["Phi"]],
            phi=[_decode_float(v) for v in data["phi"]],
            F=matrix("F", n_x - 2, n_x) if n_x > 2 else np.zeros((0, n_x)),
            B=matrix("B", n_x, n_u),
            C=matrix("C", n_y, n_x),
            Q=matrix("Q", n_x, n_x),
            R=matrix("R", n_y, n_y),
            f=f,
        )
    except KeyError as e:
        raise ConfigError(f"model file is missing key {e}") from e
    except ConfigError:
        raise
    except (PakfError, ValueError, TypeError) as e:
        raise ConfigError(f"invalid model: {e}") from e


def save_model(model: PwassModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")
    logger.info("wrote model to %s", path)


def load_model(source: str) -> PwassModel:
    """A builtin model by name, or a model JSON file by path."""
    if source in BUILTIN_MODELS:
        return BUILTIN_MODELS[source]()
    try:
        with open(source, "r") as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot open model {source!r}: {e}") from e
    except ValueError as e:
        raise ConfigError(f"model file {source} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"model file {source} must hold a JSON object")
    return model_from_dict(data)
