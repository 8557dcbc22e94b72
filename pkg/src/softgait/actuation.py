"""Sinusoidal actuation signals and their optimizer parameterization."""

from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("A", "T", "theta")


@dataclass(frozen=True)
class ParamBounds:
    A_max: float = 1.5
    T_min: float = 0.2
    T_max: float = 2.0

    def __post_init__(self):
        if not 0 < self.T_min <= self.T_max:
            raise ValueError("need 0 < T_min <= T_max")
        if not self.A_max > 0:
            raise ValueError("A_max must be positive")


@dataclass
class ActuationParams:
    """Amplitudes, periods (s) and phases (cycles), each (m, k)."""

    A: np.ndarray
    T: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, float))
        self.T = np.atleast_2d(np.asarray(self.T, float))
        self.theta = np.atleast_2d(np.asarray(self.theta, float))
        if not (self.A.shape == self.T.shape == self.theta.shape):
            raise ValueError("A, T and theta must share one (m, k) shape")
        if np.any(self.T <= 0):
            raise ValueError("periods must be positive")

    @property
    def shape(self):
        return self.A.shape

    @classmethod
    def zeros(cls, m, k, bounds=ParamBounds()):
        mid = 0.5 * (bounds.T_min + bounds.T_max)
        return cls(np.zeros((m, k)), np.full((m, k), mid), np.zeros((m, k)))

    def to_dict(self):
        out = {"A": self.A.tolist(), "T": self.T.tolist(), "theta": self.theta.tolist()}
        if self.sigma is not None:
            out["sigma"] = np.asarray(self.sigma).tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        sigma = data.get("sigma")
        return cls(data["A"], data["T"], data["theta"],
                   None if sigma is None else np.asarray(sigma, float))


def evaluate(params, t):
    """a_i(t) = sum_j A_ij sin(2 pi (t / T_ij + theta_ij))."""
    phase = 2.0 * np.pi * (t / params.T + params.theta)
    return np.sum(params.A * np.sin(phase), axis=1)


def _frac(x):
    """Fractional part in [0, 1); rounding can push tiny negatives to 1.0."""
    out = np.mod(x, 1.0)
    return np.where(out >= 1.0, 0.0, out)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def pack(params, bounds=ParamBounds(), frozen=()):
    """Inverse of :func:`unpack` for parameters already inside the bounds."""
    eps = 1e-15
    parts = []
    if "A" not in frozen:
        ratio = np.clip(params.A / bounds.A_max, -1 + eps, 1 - eps)
        parts.append(np.arctanh(ratio).ravel())
    if "T" not in frozen:
        span = bounds.T_max - bounds.T_min
        if span > 0:
            u = np.clip((params.T - bounds.T_min) / span, eps, 1 - eps)
            parts.append(np.log(u / (1 - u)).ravel())
        else:
            parts.append(np.zeros(params.T.size))
    if "theta" not in frozen:
        parts.append(_frac(params.theta).ravel())
    if params.sigma is not None:
        parts.append(np.asarray(params.sigma, float).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def unpack(p, shape, bounds=ParamBounds(), frozen=None, n_sigma=0):
    """Map an unconstrained vector to bounded parameters.

    A = A_max tanh(p_A), T = T_min + (T_max - T_min) sigmoid(p_T),
    theta = frac(p_theta). ``frozen`` maps a parameter name to fixed values
    that are not part of ``p``. Trailing ``n_sigma`` entries are the mode
    participation scores, passed through unchanged.
    """
    frozen = frozen or {}
    p = np.asarray(p, float)
    m, k = shape
    size = m * k
    expected = size * sum(name not in frozen for name in PARAM_NAMES) + n_sigma
    if p.size != expected:
        raise ValueError(f"parameter vector has {p.size} entries, expected {expected}")
    values = {}
    pos = 0
    for name in PARAM_NAMES:
        if name in frozen:
            values[name] = np.broadcast_to(np.asarray(frozen[name], float), shape).copy()
            continue
        raw = p[pos:pos + size].reshape(shape)
        pos += size
        if name == "A":
            values[name] = bounds.A_max * np.tanh(raw)
        elif name == "T":
            values[name] = bounds.T_min + (bounds.T_max - bounds.T_min) * _sigmoid(raw)
        else:
            values[name] = _frac(raw)
    sigma = p[pos:pos + n_sigma].copy() if n_sigma else None
    return ActuationParams(values["A"], values["T"], values["theta"], sigma)


def select_modes(sigma, m_select):
    """Indices of the ``m_select`` largest scores, ties to the lower index,
    returned in ascending order."""
    sigma = np.asarray(sigma, float)
    if not 0 <= m_select <= sigma.size:
        raise ValueError(f"cannot select {m_select} of {sigma.size} modes")
    order = np.lexsort((np.arange(sigma.size), -sigma))
    return np.sort(order[:m_select])


def full_actuation(params, t, m_total, selected=None):
    """Actuation vector over all ``m_total`` modes; unselected modes are 0."""
    a = evaluate(params, t)
    if selected is None:
        if a.size != m_total:
            raise ValueError(f"{a.size} actuated modes for a {m_total}-mode model")
        return a
    out = np.zeros(m_total)
    out[np.asarray(selected)] = a
    return out


def normalize_display_scale(D, bbox_diagonal, fraction=0.1):
    """Rescale each mode so its largest vertex displacement is
    ``fraction * bbox_diagonal`` at unit amplitude."""
    D = np.asarray(D, float)
    n = D.shape[0] // 3
    disp = np.sqrt((D.reshape(3, n, -1) ** 2).sum(axis=0)).max(axis=0)
    return D * (fraction * bbox_diagonal / np.maximum(disp, 1e-300))
