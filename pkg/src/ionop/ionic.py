"""Excitable-cell ODE right-hand sides and an adaptive stiff integrator.

Two models are built in: the two-variable FitzHugh-Nagumo system and the
four-variable Hodgkin-Huxley system in its classic shifted-potential form
(resting potential near 0 mV). The integrator is a linearly-implicit
Rosenbrock(2,3) pair with a finite-difference Jacobian, cubic Hermite dense
output, and the stimulus switch-off time as an explicit breakpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np


class StiffnessError(RuntimeError):
    """Step size collapsed below the minimum; carries the failure time."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class StimulusProtocol:
    """Piecewise-constant applied current: amplitude for t <= duration, then 0."""

    amplitude: float
    duration: float


def stimulus(protocol: StimulusProtocol, t: float) -> float:
    return protocol.amplitude if t <= protocol.duration else 0.0


# ---------------------------------------------------------------------------
# FitzHugh-Nagumo


@dataclass(frozen=True)
class FhnParams:
    b: float = 5.0
    beta: float = 0.1
    c: float = 1.0
    delta: float = 1.0
    gamma: float = 0.25
    e: float = 1.0
    t_final: float = 100.0
    v0: float = 0.0
    w0: float = 0.0


def fhn_rhs(state, t: float, protocol: StimulusProtocol, params: FhnParams = FhnParams()):
    v, w = state
    i_app = stimulus(protocol, t)
    dv = params.b * v * (v - params.beta) * (params.delta - v) - params.c * w + i_app
    dw = params.e * (v - params.gamma * w)
    return np.array([dv, dw])


def _fhn_current_rhs(params: FhnParams):
    b, beta, c, delta, gamma, e = params.b, params.beta, params.c, params.delta, params.gamma, params.e

    def rhs(t, y, i_app):
        v, w = y
        return np.array([b * v * (v - beta) * (delta - v) - c * w + i_app, e * (v - gamma * w)])

    return rhs


# ---------------------------------------------------------------------------
# Hodgkin-Huxley


@dataclass(frozen=True)
class HhParams:
    c_m: float = 1.0
    g_na: float = 120.0
    g_k: float = 36.0
    g_l: float = 0.3
    v_na: float = 115.0
    v_k: float = -12.0
    v_l: float = 10.6
    t_final: float = 100.0
    v0: float = 2.757e-02
    m0: float = 5.2934e-02
    h0: float = 5.9611e-01
    n0: float = 3.1768e-01


def _phi(x: float) -> float:
    # x / (exp(x) - 1), continuous through x = 0.
    if abs(x) < 1e-9:
        return 1.0 - 0.5 * x
    return x / math.expm1(x)


def hh_rates(v: float) -> Tuple[float, float, float, float, float, float]:
    """Classic 1952 rate functions (ms^-1) for the shifted-potential convention."""
    alpha_m = _phi((25.0 - v) / 10.0)
    beta_m = 4.0 * math.exp(-v / 18.0)
    alpha_h = 0.07 * math.exp(-v / 20.0)
    beta_h = 1.0 / (math.exp((30.0 - v) / 10.0) + 1.0)
    alpha_n = 0.1 * _phi((10.0 - v) / 10.0)
    beta_n = 0.125 * math.exp(-v / 80.0)
    return alpha_m, beta_m, alpha_h, beta_h, alpha_n, beta_n


def hh_rhs(state, t: float, protocol: StimulusProtocol, params: HhParams = HhParams()):
    return _hh_current_rhs(params)(t, state, stimulus(protocol, t))


def _hh_current_rhs(params: HhParams):
    p = params

    def rhs(t, y, i_app):
        v, m, h, n = y
        am, bm, ah, bh, an, bn = hh_rates(v)
        i_na = p.g_na * m**3 * h * (v - p.v_na)
        i_k = p.g_k * n**4 * (v - p.v_k)
        i_l = p.g_l * (v - p.v_l)
        return np.array(
            [
                (i_app - i_na - i_k - i_l) / p.c_m,
                am * (1.0 - m) - bm * m,
                ah * (1.0 - h) - bh * h,
                an * (1.0 - n) - bn * n,
            ]
        )

    return rhs


# ---------------------------------------------------------------------------
# model registry


@dataclass(frozen=True)
class ModelDef:
    name: str
    channel_names: Tuple[str, ...]
    params: object
    rhs_factory: Callable  # params -> rhs(t, y, i_app)

    @property
    def n_dim(self) -> int:
        return len(self.channel_names)

    @property
    def t_final(self) -> float:
        return self.params.t_final

    def initial_state(self) -> np.ndarray:
        p = self.params
        if self.name == "fhn":
            return np.array([p.v0, p.w0])
        return np.array([p.v0, p.m0, p.h0, p.n0])

    def rhs(self):
        return self.rhs_factory(self.params)


MODELS = {
    "fhn": ModelDef("fhn", ("V", "w"), FhnParams(), _fhn_current_rhs),
    "hh": ModelDef("hh", ("V", "m", "h", "n"), HhParams(), _hh_current_rhs),
}


# ---------------------------------------------------------------------------
# Rosenbrock(2,3) integrator (the ode23s pair of Shampine & Reichelt)

_D = 1.0 / (2.0 + math.sqrt(2.0))
_E32 = 6.0 + math.sqrt(2.0)
_SQRT_EPS = math.sqrt(np.finfo(float).eps)
_MIN_STEP = 1e-12


def _num_jac(f, t, y, f0):
    n = y.size
    jac = np.empty((n, n))
    for j in range(n):
        delta = _SQRT_EPS * max(abs(y[j]), 1.0)
        yp = y.copy()
        yp[j] += delta
        jac[:, j] = (f(t, yp) - f0) / delta
    return jac


def _step(f, t, y, h, f0, jac, dfdt):
    """One trial step; returns (y_new, f_new, error_vector)."""
    n = y.size
    w = np.eye(n) - (h * _D) * jac
    winv = np.linalg.inv(w)
    hdt = (h * _D) * dfdt
    k1 = winv @ (f0 + hdt)
    f1 = f(t + 0.5 * h, y + (0.5 * h) * k1)
    k2 = winv @ (f1 - k1) + k1
    y_new = y + h * k2
    f2 = f(t + h, y_new)
    k3 = winv @ (f2 - _E32 * (k2 - f1) - 2.0 * (k1 - f0) + hdt)
    err = (h / 6.0) * (k1 - 2.0 * k2 + k3)
    return y_new, f2, err


def integrate_adaptive(
    f,
    y0: np.ndarray,
    t0: float,
    t1: float,
    rtol: float,
    atol: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adaptive integration of y' = f(t, y) on [t0, t1].

    Returns the accepted nodes (times, states, slopes) for dense evaluation.
    Raises StiffnessError when the controller drives the step below 1e-12.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    span = t1 - t0
    if span <= 0:
        raise ValueError("t1 must exceed t0")
    t = t0
    y = np.asarray(y0, dtype=np.float64).copy()
    f0 = f(t, y)
    ts: List[float] = [t]
    ys: List[np.ndarray] = [y.copy()]
    fs: List[np.ndarray] = [f0.copy()]
    h = span / 100.0

    while t < t1:
        at_end = t + h >= t1
        if at_end:
            h = t1 - t
        jac = _num_jac(f, t, y, f0)
        tdel = min(_SQRT_EPS * max(abs(t), 1.0), t1 - t)
        dfdt = (f(t + tdel, y) - f0) / tdel if tdel > 0 else np.zeros_like(y)
        while True:
            y_new, f_new, err = _step(f, t, y, h, f0, jac, dfdt)
            sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            with np.errstate(invalid="ignore"):
                err_norm = math.sqrt(float(np.mean((err / sc) ** 2)))
            if math.isfinite(err_norm) and err_norm <= 1.0:
                break
            factor = 0.2 if not math.isfinite(err_norm) else max(0.2, 0.9 * err_norm ** (-1.0 / 3.0))
            h *= min(factor, 0.9)
            at_end = False
            if h < _MIN_STEP:
                raise StiffnessError(f"step size underflow at t={t:.6g} ms", time=t)
        t = t1 if at_end else t + h
        y, f0 = y_new, f_new
        ts.append(t)
        ys.append(y.copy())
        fs.append(f0.copy())
        if err_norm == 0.0:
            h *= 5.0
        else:
            h *= min(5.0, max(0.2, 0.9 * err_norm ** (-1.0 / 3.0)))
    return np.array(ts), np.array(ys), np.array(fs)


def integrate_fixed(f, y0: np.ndarray, t0: float, t1: float, n_steps: int) -> np.ndarray:
    """Fixed-step variant of the same pair (no error control); used to observe order."""
    y = np.asarray(y0, dtype=np.float64).copy()
    h = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        f0 = f(t, y)
        jac = _num_jac(f, t, y, f0)
        tdel = _SQRT_EPS * max(abs(t), 1.0)
        dfdt = (f(t + tdel, y) - f0) / tdel
        y, _, _ = _step(f, t, y, h, f0, jac, dfdt)
        t += h
    return y


def hermite_eval(ts: np.ndarray, ys: np.ndarray, fs: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cubic Hermite interpolation of accepted nodes at the query times."""
    idx = np.clip(np.searchsorted(ts, query, side="right") - 1, 0, len(ts) - 2)
    t0 = ts[idx]
    dt = ts[idx + 1] - t0
    s = (query - t0) / dt
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return (
        h00[:, None] * ys[idx]
        + (h10 * dt)[:, None] * fs[idx]
        + h01[:, None] * ys[idx + 1]
        + (h11 * dt)[:, None] * fs[idx + 1]
    )


# ---------------------------------------------------------------------------
# protocol-driven solve


@dataclass
class Trajectory:
    """Uniform-grid solution samples plus the sampled stimulus channel."""

    grid: np.ndarray
    values: np.ndarray  # [n_dim, n_points]
    channel_names: Tuple[str, ...]
    stimulus: np.ndarray
    protocol: StimulusProtocol

    def channel(self, name: str) -> np.ndarray:
        return self.values[self.channel_names.index(name)]


def solve(
    rhs,
    y0: np.ndarray,
    protocol: StimulusProtocol,
    t_final: float,
    n_points: int = 256,
    rtol: float = 1e-6,
    atol: float = 1e-8,
    channel_names: Sequence[str] = (),
) -> Trajectory:
    """Integrate rhs(t, y, i_app) under a stimulus protocol onto a uniform grid.

    The discontinuity at the stimulus switch-off is handled by integrating
    [0, duration] and [duration, t_final] as separate smooth segments.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    t_stim = float(protocol.duration)
    segments: List[Tuple[float, float, float]] = []
    if t_stim <= 0.0:
        segments.append((0.0, t_final, 0.0))
    elif t_stim >= t_final:
        segments.append((0.0, t_final, protocol.amplitude))
    else:
        segments.append((0.0, t_stim, protocol.amplitude))
        segments.append((t_stim, t_final, 0.0))

    grid = np.linspace(0.0, t_final, n_points)
    out = np.empty((n_points, np.asarray(y0).size))
    y_start = np.asarray(y0, dtype=np.float64)
    for seg_start, seg_end, current in segments:
        frozen = (lambda i: (lambda t, y: rhs(t, y, i)))(current)
        ts, ys, fs = integrate_adaptive(frozen, y_start, seg_start, seg_end, rtol, atol)
        if len(segments) == 1:
            mask = np.ones_like(grid, dtype=bool)
        elif seg_end < t_final:
            mask = grid <= seg_end
        else:
            mask = grid > seg_start
        out[mask] = hermite_eval(ts, ys, fs, grid[mask])
        y_start = ys[-1]

    names = tuple(channel_names) if channel_names else tuple(f"y{i}" for i in range(out.shape[1]))
    stim = np.where(grid <= t_stim, protocol.amplitude, 0.0)
    return Trajectory(grid, out.T.copy(), names, stim, protocol)


def simulate(model: ModelDef, protocol: StimulusProtocol, n_points: int = 256,
             rtol: float = 1e-6, atol: float = 1e-8) -> Trajectory:
    """Solve one of the registered ionic models under a protocol."""
    return solve(
        model.rhs(),
        model.initial_state(),
        protocol,
        model.t_final,
        n_points=n_points,
        rtol=rtol,
        atol=atol,
        channel_names=model.channel_names,
    )
