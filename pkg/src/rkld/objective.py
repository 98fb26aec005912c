"""Empirical risks over the truncated RKHS model.

The model is linear in the spectral coefficients through the cached feature
rows psi_gamma(z_i); the per-sample losses supply the nonlinearity.  The
module also derives the constants that the theory needs from an objective:
smoothness M, gradient bound B, the dissipativity pair (m, c), and the
reference minimizers of the raw and regularized problems.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import KernelSpec, SpectralVector, resolvent_scales

__all__ = [
    "Dataset",
    "LossFamily",
    "ObjectiveSpec",
    "MinimizerPair",
    "SQUARED",
    "LOGISTIC",
    "SAVAGE",
    "loss_family",
]


@dataclass(frozen=True)
class Dataset:
    """Observed pairs (z_i, y_i) with inputs on [0, 1]."""

    z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True)
        if z.ndim != 1 or y.ndim != 1 or z.size != y.size:
            raise ValueError("z and y must be 1-d arrays of equal length")
        if z.size < 1:
            raise ValueError("dataset must contain at least one point")
        if np.any(z < 0.0) or np.any(z > 1.0):
            raise ValueError("inputs must lie in [0, 1]")
        z.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @property
    def size(self) -> int:
        return self.z.size

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        """Load from a CSV file with header row ``z,y``."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["z", "y"]:
                raise ValueError(f"{path}: expected CSV header 'z,y'")
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
        if not rows:
            raise ValueError(f"{path}: no data rows")
        z, y = zip(*rows)
        return cls(np.array(z), np.array(y))

    @classmethod
    def synthesize(
        cls, n: int, seed: int, kind: str = "regression", noise: float = 0.1
    ) -> "Dataset":
        """Teacher data: z uniform on [0, 1], g(z) = sin(2 pi z).

        Regression adds Gaussian noise to g; classification takes sign(g).
        """
        rng = np.random.default_rng(seed)
        z = rng.uniform(0.0, 1.0, size=n)
        g = np.sin(2.0 * math.pi * z)
        if kind == "regression":
            y = g + noise * rng.standard_normal(n)
        elif kind == "classification":
            y = np.where(g >= 0.0, 1.0, -1.0)
        else:
            raise ValueError(f"unknown synthetic dataset kind: {kind!r}")
        return cls(z, y)


# Savage loss l(u, y) = 1 / (1 + exp(y u))^2 = (1 - s)^2 with s = sigmoid(y u).
# |l'| peaks at s = 1/3, |l''| at s = (9 + sqrt(33)) / 24; both maxima are exact.
_SAVAGE_S1 = 1.0 / 3.0
_SAVAGE_B = 2.0 * _SAVAGE_S1 * (1.0 - _SAVAGE_S1) ** 2
_SAVAGE_S2 = (9.0 + math.sqrt(33.0)) / 24.0
_SAVAGE_G = 2.0 * _SAVAGE_S2 * (1.0 - _SAVAGE_S2) ** 2 * (3.0 * _SAVAGE_S2 - 1.0)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class LossFamily:
    """Per-sample loss l(u, y) with its first two u-derivatives and bounds.

    ``second_derivative_bound`` is G = sup |l''|; ``first_derivative_bound``
    is sup |l'| and is None for the squared loss (unbounded gradient).
    """

    tag: str
    second_derivative_bound: float
    first_derivative_bound: float | None

    def value(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.tag == "squared":
            return 0.5 * (u - y) ** 2
        if self.tag == "logistic":
            # log(1 + exp(-y u)) via the stable softplus form
            t = -y * u
            return np.logaddexp(0.0, t)
        if self.tag == "savage":
            s = _sigmoid(y * u)
            return (1.0 - s) ** 2
        raise ValueError(f"unknown loss: {self.tag!r}")

    def d1(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.tag == "squared":
            return u - y
        if self.tag == "logistic":
            return -y * _sigmoid(-y * u)
        if self.tag == "savage":
            s = _sigmoid(y * u)
            return -2.0 * y * s * (1.0 - s) ** 2
        raise ValueError(f"unknown loss: {self.tag!r}")

    def d2(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.tag == "squared":
            return np.ones_like(u)
        if self.tag == "logistic":
            s = _sigmoid(y * u)
            return s * (1.0 - s)
        if self.tag == "savage":
            s = _sigmoid(y * u)
            return -2.0 * s * (1.0 - s) ** 2 * (1.0 - 3.0 * s)
        raise ValueError(f"unknown loss: {self.tag!r}")


SQUARED = LossFamily("squared", second_derivative_bound=1.0, first_derivative_bound=None)
LOGISTIC = LossFamily("logistic", second_derivative_bound=0.25, first_derivative_bound=1.0)
SAVAGE = LossFamily("savage", second_derivative_bound=_SAVAGE_G, first_derivative_bound=_SAVAGE_B)

_LOSSES = {"squared": SQUARED, "logistic": LOGISTIC, "savage": SAVAGE}


def loss_family(tag: str) -> LossFamily:
    try:
        return _LOSSES[tag]
    except KeyError:
        raise ValueError(f"unknown loss family: {tag!r}") from None


@dataclass(frozen=True)
class MinimizerPair:
    """Reference minimizers of the raw and regularized truncated problems."""

    x_star: SpectralVector
    x_tilde: SpectralVector
    l_star: float
    l_tilde: float
    local: bool  # True when the loss is non-convex and only a local point is certified
    iterations: int


class ObjectiveSpec:
    """Empirical risk L(x) = (1/n) sum_i l(<x, psi_gamma(z_i)>, y_i) + (lambda0/2)||x||^2.

    Feature rows are precomputed once; all evaluations are pure afterwards.
    """

    def __init__(
        self,
        dataset: Dataset,
        loss: LossFamily,
        kernel: KernelSpec,
        n_modes: int,
        lambda0: float = 0.0,
    ):
        if n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if lambda0 < 0:
            raise ValueError("lambda0 must be nonnegative")
        self.dataset = dataset
        self.loss = loss
        self.kernel = kernel
        self.n_modes = int(n_modes)
        self.lambda0 = float(lambda0)
        self.features = kernel.feature_matrix(dataset.z, n_modes)
        self.features.setflags(write=False)
        self._kernel_diag = np.sum(self.features**2, axis=1)
        self._kernel_diag.setflags(write=False)

    # -- raw-array core used by the dynamics (x may be a matrix of chains) --

    def risk_array(self, x: np.ndarray) -> np.ndarray:
        u = x @ self.features.T
        base = np.mean(self.loss.value(u, self.dataset.y), axis=-1)
        if self.lambda0:
            base = base + 0.5 * self.lambda0 * np.sum(x * x, axis=-1)
        return base

    def grad_array(self, x: np.ndarray) -> np.ndarray:
        u = x @ self.features.T
        g = self.loss.d1(u, self.dataset.y) @ self.features / self.dataset.size
        if self.lambda0:
            g = g + self.lambda0 * x
        return g

    def grad_components_array(self, x: np.ndarray) -> np.ndarray:
        """Per-sample gradients of the data term (ridge part excluded)."""
        u = x @ self.features.T
        return self.loss.d1(u, self.dataset.y)[..., None] * self.features

    def stochastic_grad_array(self, x: np.ndarray, batch: np.ndarray) -> np.ndarray:
        rows = self.features[batch]
        u = x @ rows.T
        g = self.loss.d1(u, self.dataset.y[batch]) @ rows / len(batch)
        if self.lambda0:
            g = g + self.lambda0 * x
        return g

    # -- SpectralVector surface --

    def _check(self, x: SpectralVector) -> np.ndarray:
        if x.n_modes != self.n_modes:
            raise ValueError(f"mode count mismatch: {x.n_modes} != {self.n_modes}")
        return x.coeffs

    def risk(self, x: SpectralVector) -> float:
        return float(self.risk_array(self._check(x)))

    def regularized_risk(self, x: SpectralVector, lam: float) -> float:
        from .spectral import rkhs_norm

        return self.risk(x) + 0.5 * lam * rkhs_norm(x, self.kernel) ** 2

    def grad(self, x: SpectralVector) -> SpectralVector:
        return SpectralVector(self.grad_array(self._check(x)))

    def stochastic_grad(self, x: SpectralVector, batch) -> SpectralVector:
        batch = np.asarray(batch, dtype=int)
        if batch.size == 0:
            raise ValueError("minibatch must be nonempty")
        if np.any(batch < 0) or np.any(batch >= self.dataset.size):
            raise ValueError("minibatch index out of range")
        if len(set(batch.tolist())) != batch.size:
            raise ValueError("minibatch indices must be distinct (without replacement)")
        return SpectralVector(self.stochastic_grad_array(self._check(x), batch))

    # -- theory constants --

    def kernel_diag_sup(self) -> float:
        """R_gamma: max of the truncated K_gamma(z_i, z_i) over the data."""
        return float(np.max(self._kernel_diag))

    def smoothness_constant(self) -> float:
        """M = G * R_gamma (+ lambda0)."""
        return self.loss.second_derivative_bound * self.kernel_diag_sup() + self.lambda0

    def gradient_bound(self) -> float | None:
        """B = sup|l'| * max_i ||psi_gamma(z_i)||; None when unbounded."""
        bl = self.loss.first_derivative_bound
        if bl is None or self.lambda0 > 0:
            return None
        return bl * math.sqrt(self.kernel_diag_sup())

    def dissipativity_constants(self, lam: float) -> tuple[str, float, float]:
        """(regime, m, c) such that <Ax - grad L(x), x> <= -m ||x||^2 + c.

        Strict regime (lam > M mu0): m = (lam/mu0 - M)/2, with c from the
        Young split of the M ||x|| ||x*|| cross term.  Bounded regime:
        m = lam/(2 mu0), c = B^2 mu0 / (2 lam).
        """
        if lam <= 0:
            raise ValueError("lambda must be positive")
        mu0 = self.kernel.mu0
        M = self.smoothness_constant()
        B = self.gradient_bound()
        strict_gap = lam / mu0 - M
        if strict_gap > 0:
            m = strict_gap / 2.0
            x_star_norm = self.find_minimizers(lam).x_star.norm()
            c = (M * x_star_norm) ** 2 / (2.0 * strict_gap)
            return "strict", m, max(c, np.finfo(float).tiny)
        if B is not None:
            return "bounded", lam / (2.0 * mu0), B**2 * mu0 / (2.0 * lam)
        raise ValueError(
            "no dissipativity regime applies: "
            f"lambda/mu0 - M = {strict_gap:.6g} <= 0 and the gradient is unbounded"
        )

    # -- reference minimizers --

    def find_minimizers(
        self, lam: float, tol: float = 1e-9, max_iter: int = 500_000
    ) -> MinimizerPair:
        """Oracle minimizers x* (lam off) and x~ (lam on) of the truncated problem.

        Squared loss is solved directly; other losses by a damped semi-implicit
        iteration x <- S_t (x - t grad L(x)) until the first-order residual
        drops below tol.  Results are global only for convex losses.
        """
        if lam <= 0:
            raise ValueError("lambda must be positive")
        mu = self.kernel.eigenvalues(self.n_modes)
        iters = 0
        if self.loss.tag == "squared":
            phi = self.features
            n = self.dataset.size
            h = phi.T @ phi / n + self.lambda0 * np.eye(self.n_modes)
            rhs = phi.T @ self.dataset.y / n
            x_star = np.linalg.lstsq(h, rhs, rcond=None)[0]
            x_tilde = np.linalg.solve(h + lam * np.diag(1.0 / mu), rhs)
            local = False
        else:
            x_star, it1, exact = self._descend(lam, with_reg=False, tol=tol, max_iter=max_iter)
            x_tilde, it2, _ = self._descend(lam, with_reg=True, tol=tol, max_iter=max_iter)
            iters = it1 + it2
            local = self.loss.tag == "savage" or not exact
        return MinimizerPair(
            x_star=SpectralVector(x_star),
            x_tilde=SpectralVector(x_tilde),
            l_star=float(self.risk_array(x_star)),
            l_tilde=float(self.risk_array(x_tilde)),
            local=local,
            iterations=iters,
        )

    def regularized_minimizer(self, lam: float, tol: float = 1e-9) -> tuple[SpectralVector, float]:
        """x~ and L(x~) only; the regularized problem is strongly convex and
        always has a finite minimizer, unlike the plain risk on separable data."""
        if lam <= 0:
            raise ValueError("lambda must be positive")
        mu = self.kernel.eigenvalues(self.n_modes)
        if self.loss.tag == "squared":
            phi = self.features
            n = self.dataset.size
            h = phi.T @ phi / n + self.lambda0 * np.eye(self.n_modes)
            rhs = phi.T @ self.dataset.y / n
            x_tilde = np.linalg.solve(h + lam * np.diag(1.0 / mu), rhs)
        else:
            x_tilde, _, _ = self._descend(lam, with_reg=True, tol=tol, max_iter=500_000)
        return SpectralVector(x_tilde), float(self.risk_array(x_tilde))

    def _descend(self, lam, with_reg, tol, max_iter):
        mu = self.kernel.eigenvalues(self.n_modes)
        step = 1.0 / max(self.smoothness_constant(), 1e-12)
        s = resolvent_scales(self.kernel, lam, step, self.n_modes) if with_reg else None
        x = np.zeros(self.n_modes)
        g = self.grad_array(x)
        prev_value = float(self.risk_array(x))
        for it in range(1, max_iter + 1):
            if with_reg:
                x = s * (x - step * g)
                g = self.grad_array(x)
                resid = np.linalg.norm(g + lam * x / mu)
            else:
                x = x - step * g
                g = self.grad_array(x)
                resid = np.linalg.norm(g)
            if resid < tol:
                return x, it, True
            if not with_reg and it % 256 == 0:
                # separable losses attain their infimum only in the limit;
                # accept the iterate once the risk value itself has plateaued
                value = float(self.risk_array(x))
                if abs(prev_value - value) < 1e-8 * max(1.0, abs(value)):
                    return x, it, False
                prev_value = value
        raise RuntimeError(
            f"minimizer search did not reach residual {tol:g} in {max_iter} iterations "
            f"(last residual {resid:.3g})"
        )
