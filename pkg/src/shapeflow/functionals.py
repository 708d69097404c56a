"""Closed catalog of functionals driving measure and shape flows.

Each entry carries the metadata flow routines rely on: the direction of
monotonicity (in ``w`` for measure flows, under set inclusion for shape flows)
and a declared convexity modulus along the linear geodesics of ``X``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError
from .measures import TorsionField, discrete_laplacian

__all__ = ["FunctionalSpec", "CATALOG", "energy", "spectral"]


@dataclass(frozen=True)
class _Entry:
    family: str  # "energy", "integral", "spectral" or "set"
    measures: bool  # defined on torsion fields
    shapes: bool  # defined on masks
    decreasing_in_w: bool  # w1 <= w2 => J(w1) >= J(w2)
    decreasing_in_inclusion: bool
    increasing_in_inclusion: bool
    modulus: float | None  # declared lambda-convexity on X, None when unknown


CATALOG = {
    "energy": _Entry("energy", True, True, True, True, False, 0.0),
    "zero": _Entry("integral", True, True, True, True, True, 0.0),
    "quadratic": _Entry("integral", True, False, False, False, False, 1.0),
    "exp_decay": _Entry("integral", True, False, True, False, False, 0.0),
    "rigidity": _Entry("integral", True, False, False, False, False, 0.0),
    "lambda_k": _Entry("spectral", True, True, False, True, False, None),
    "lambda_sum": _Entry("spectral", True, True, False, True, False, None),
    "volume": _Entry("set", False, True, False, False, True, None),
    "neg_lambda1": _Entry("set", False, True, False, False, True, None),
}


@dataclass(frozen=True)
class FunctionalSpec:
    """One catalog functional plus set-flow penalties.

    Parameters
    ----------
    kind : str
        ``energy`` (``-int w``), ``zero``, ``quadratic`` (``1/2 int w^2``),
        ``exp_decay`` (``int exp(-w)``), ``rigidity`` (``int w``), ``lambda_k``
        (the k-th eigenvalue), ``lambda_sum`` (sum of the first k),
        ``volume`` (``|M|``) or ``neg_lambda1`` (``-lambda_1``).
    k : int
        Eigenvalue index for the spectral kinds.
    volume_penalty, perimeter_penalty : float
        Coefficients of ``|M|`` and of the face-count perimeter, added by set flows.
    """

    kind: str
    k: int = 1
    volume_penalty: float = 0.0
    perimeter_penalty: float = 0.0

    def __post_init__(self):
        if self.kind not in CATALOG:
            raise ValueError(f"unknown functional kind {self.kind!r}; choose from {sorted(CATALOG)}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.volume_penalty < 0 or self.perimeter_penalty < 0:
            raise ValueError("penalty coefficients must be nonnegative")

    @property
    def entry(self) -> _Entry:
        return CATALOG[self.kind]

    @property
    def family(self) -> str:
        return self.entry.family

    @property
    def decreasing_in_w(self) -> bool:
        return self.entry.decreasing_in_w

    @property
    def decreasing_in_inclusion(self) -> bool:
        return self.entry.decreasing_in_inclusion

    @property
    def increasing_in_inclusion(self) -> bool:
        return self.entry.increasing_in_inclusion

    @property
    def convexity_modulus(self) -> float | None:
        return self.entry.modulus

    @property
    def supports_measures(self) -> bool:
        return self.entry.measures

    @property
    def supports_shapes(self) -> bool:
        return self.entry.shapes

    @property
    def has_penalty(self) -> bool:
        return self.volume_penalty > 0 or self.perimeter_penalty > 0

    @property
    def n_eigen(self) -> int:
        return self.k if self.family == "spectral" else 1

    def phi(self, lams) -> float:
        """Combine ascending eigenvalues ``lams`` (length >= k)."""
        lams = np.asarray(lams, dtype=float)
        if self.kind == "lambda_k":
            return float(lams[self.k - 1])
        if self.kind == "lambda_sum":
            return float(lams[: self.k].sum())
        if self.kind == "neg_lambda1":
            return -float(lams[0])
        raise ValueError(f"{self.kind} is not spectral")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "k": self.k,
            "volume_penalty": self.volume_penalty,
            "perimeter_penalty": self.perimeter_penalty,
        }

    # -- values on torsion fields ------------------------------------------------

    def _check_measure_kind(self):
        if not self.supports_measures:
            raise ValueError(f"{self.kind} is a set functional and has no torsion form")

    def value(self, w: TorsionField) -> float:
        """``J(w)``; spectral kinds go through the measure ``(1 + lap w)/w``."""
        self._check_measure_kind()
        v = w.values
        dv = w.domain.cell_volume
        if self.kind == "energy":
            return -float(v.sum() * dv)
        if self.kind == "zero":
            return 0.0
        if self.kind == "quadratic":
            return 0.5 * float((v * v).sum() * dv)
        if self.kind == "exp_decay":
            return float(np.exp(-v).sum() * dv)
        if self.kind == "rigidity":
            return float(v.sum() * dv)
        lams, _ = _spectral_data(w, self.k)
        return self.phi(lams) if lams is not None else float("inf")

    def gradient(self, w: TorsionField) -> np.ndarray:
        """L2(D) gradient of ``J`` at ``w`` (zero on the boundary ring).

        For spectral kinds this differentiates ``lambda_j(mu_w)`` through
        ``mu_w = (1 + lap w)/w``, giving ``lap(u^2/w) - mu u^2/w`` summed over the
        eigenfunctions involved; cells where ``mu_w`` is infinite contribute 0.
        """
        self._check_measure_kind()
        v = w.values
        ring = ~w.domain.interior
        if self.kind == "energy":
            g = -np.ones_like(v)
        elif self.kind == "zero":
            g = np.zeros_like(v)
        elif self.kind == "quadratic":
            g = v.copy()
        elif self.kind == "exp_decay":
            g = -np.exp(-v)
        elif self.kind == "rigidity":
            g = np.ones_like(v)
        else:
            lams, data = _spectral_data(w, self.k)
            if lams is None:
                return np.zeros_like(v)
            mu, funcs = data
            idx = [self.k - 1] if self.kind == "lambda_k" else range(self.k)
            g = np.zeros_like(v)
            fin = mu.finite
            for j in idx:
                q = np.zeros_like(v)
                q[fin] = funcs[j].values[fin] ** 2 / v[fin]
                g += discrete_laplacian(q, w.domain.h) - np.where(fin, mu.values, 0.0) * q
        g[ring] = 0.0
        return g


def _spectral_data(w: TorsionField, k: int):
    from .capmeasure import measure_of_torsion
    from .pde import eigenvalues

    mu = measure_of_torsion(w)
    if int(mu.finite.sum()) <= k:
        return None, None
    try:
        res = eigenvalues(mu, k=k)
    except EmptyMaskError:
        return None, None
    return res.eigenvalues, (mu, res.eigenfunctions)


def energy(**penalties) -> FunctionalSpec:
    return FunctionalSpec("energy", **penalties)


def spectral(k: int = 1, total: bool = False, **penalties) -> FunctionalSpec:
    return FunctionalSpec("lambda_sum" if total else "lambda_k", k=k, **penalties)
