"""Hyperparameter calibration and the :class:`PriorConfig` container."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import DataSet

__all__ = [
    "PriorConfig",
    "calibrate_tau",
    "calibrate_variance_prior",
    "default_config",
    "load_config_file",
]


def calibrate_tau(y_min: float, y_max: float, m: int, kappa: float) -> float:
    """Leaf prior sd so that ``f(x)`` has ``+-kappa`` prior sds across the data range.

    ``tau = (y_max - y_min) / (2 sqrt(m) kappa)``.
    """
    if not y_max > y_min:
        raise ValueError("y_max must exceed y_min")
    if m < 1 or kappa <= 0:
        raise ValueError("need m >= 1 and kappa > 0")
    return (y_max - y_min) / (2.0 * math.sqrt(m) * kappa)


def calibrate_variance_prior(nu: float, lam: float, m_prime: int) -> tuple[float, float]:
    """Per-tree ``(nu', lambda')`` matching the prior mean of a ``chi^-2(nu, lam)`` variance.

    The product of ``m_prime`` independent ``chi^-2(nu', lambda')`` factors has
    mean ``(lambda' nu' / (nu' - 2)) ** m_prime``; matching the scale and the
    degrees-of-freedom pieces separately gives ``lambda' = lam ** (1/m')`` and
    ``nu' = 2 / (1 - (1 - 2/nu) ** (1/m'))``.
    """
    if nu <= 2:
        raise ValueError("nu must exceed 2 for the prior mean to exist")
    if lam <= 0 or m_prime < 1:
        raise ValueError("need lam > 0 and m_prime >= 1")
    if m_prime == 1:
        return float(nu), float(lam)
    # -expm1(log1p(-2/nu)/m') = 1 - (1 - 2/nu)^(1/m') without cancellation
    nu_p = 2.0 / -math.expm1(math.log1p(-2.0 / nu) / m_prime)
    lam_p = math.exp(math.log(lam) / m_prime)
    return nu_p, lam_p


@dataclass(frozen=True)
class PriorConfig:
    """All model hyperparameters.

    ``lam`` and ``lambda_prime`` are variance scales (prior mean
    ``nu lam / (nu - 2)``).  ``m_prime == 0`` selects constant-variance BART,
    in which case ``nu``/``lam`` describe ``sigma^2`` directly.
    """

    m: int = 200
    m_prime: int = 40
    kappa: float = 5.0
    tau: float = 1.0
    nu: float = 10.0
    lam: float = 1.0
    nu_prime: float = 10.0
    lambda_prime: float = 1.0
    alpha: float = 0.95
    beta: float = 2.0
    alpha_prime: float = 0.95
    beta_prime: float = 2.0

    def __post_init__(self):
        if self.m < 1 or self.m_prime < 0:
            raise ValueError("need m >= 1 and m_prime >= 0")
        for name in ("kappa", "tau", "lam", "lambda_prime"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.nu <= 2 or self.nu_prime <= 2:
            raise ValueError("nu and nu_prime must exceed 2")
        for a in (self.alpha, self.alpha_prime):
            if not 0 < a < 1:
                raise ValueError("alpha must lie in (0, 1)")
        if self.beta < 0 or self.beta_prime < 0:
            raise ValueError("beta must be >= 0")

    @property
    def heteroscedastic(self) -> bool:
        return self.m_prime > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise KeyError(f"unknown prior field {k!r}")
            out[k] = int(v) if k in ("m", "m_prime") else float(v)
        return cls(**out)


def default_config(ds: DataSet, *, m: int = 200, m_prime: int = 40, kappa: float = 5.0,
                   nu: float = 10.0, lam: float | None = None, alpha: float = 0.95,
                   beta: float = 2.0, alpha_prime: float | None = None,
                   beta_prime: float | None = None, pinned: dict | None = None) -> PriorConfig:
    """Default hyperparameters for ``ds`` with derived ``tau``, ``nu'``, ``lambda'``.

    ``lam`` defaults to the sample variance of ``y``.  Entries in ``pinned``
    override the corresponding field after derivation; any derived field that
    is not pinned is recomputed from the (possibly pinned) inputs.
    """
    if ds.n < 2:
        raise ValueError("need at least 2 observations")
    pinned = dict(pinned or {})
    base = dict(m=m, m_prime=m_prime, kappa=kappa, nu=nu,
                lam=float(np.var(ds.y, ddof=1)) if lam is None else lam,
                alpha=alpha, beta=beta,
                alpha_prime=alpha if alpha_prime is None else alpha_prime,
                beta_prime=beta if beta_prime is None else beta_prime)
    for k in list(base):
        if k in pinned:
            base[k] = pinned[k]
    base["m"], base["m_prime"] = int(base["m"]), int(base["m_prime"])
    if not base["lam"] > 0:
        raise ValueError("sample variance of y is zero; set lam explicitly")
    tau = pinned.get("tau", calibrate_tau(float(ds.y.min()), float(ds.y.max()),
                                          base["m"], base["kappa"]))
    if base["m_prime"] > 0:
        nu_p, lam_p = calibrate_variance_prior(base["nu"], base["lam"], base["m_prime"])
    else:
        nu_p, lam_p = base["nu"], base["lam"]
    nu_p = pinned.get("nu_prime", nu_p)
    lam_p = pinned.get("lambda_prime", lam_p)
    return PriorConfig(tau=float(tau), nu_prime=float(nu_p), lambda_prime=float(lam_p), **base)


def load_config_file(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments allowed) into a dict of floats."""
    out = {}
    valid = {f.name for f in fields(PriorConfig)}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in valid:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = float(val)
    return out
