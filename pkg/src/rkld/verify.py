"""Property battery behind the `verify` subcommand.

Each check is deterministic given the config seed and fast enough to run on
every invocation.  Checks return measured values so the report line carries
evidence, not just a verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig
from .dynamics import ChainConfig, make_rng, run_chain
from .objective import Dataset, ObjectiveSpec, SQUARED
from .spectral import (
    KernelSpec,
    SpectralVector,
    operator_a,
    resolvent_s_eta,
    resolvent_scales,
)

__all__ = ["PropertyResult", "run_property_suite"]


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str


def _result(name, passed, detail):
    return PropertyResult(name, bool(passed), detail)


def check_assumption1_shape(kernel: KernelSpec, k_max: int = 64) -> PropertyResult:
    k = np.arange(k_max + 1, dtype=float)
    ratio = kernel.eigenvalues(k_max + 1) * (k + 1.0) ** 2 / kernel.mu0
    ok = np.all(ratio <= 1.0 + 1e-9) and np.all(ratio >= 1.0 - 1e-9)
    return _result(
        "assumption1_eigenvalue_shape",
        ok,
        f"mu_k (k+1)^2 / mu0 in [{ratio.min():.4g}, {ratio.max():.4g}] for k <= {k_max}",
    )


def check_eigenvalues_monotone(kernel: KernelSpec, k_max: int = 64) -> PropertyResult:
    mu = kernel.eigenvalues(k_max + 1)
    ok = np.all(mu > 0) and np.all(np.diff(mu) <= 0)
    return _result("eigenvalues_positive_nonincreasing", ok, f"mu_0={mu[0]:.4g}, mu_{k_max}={mu[-1]:.4g}")


def check_orthonormality(kernel: KernelSpec, k_max: int = 16, n_quad: int = 2048) -> PropertyResult:
    z = np.linspace(0.0, 1.0, n_quad + 1)
    rows = np.stack([kernel.basis_eval(k, z) for k in range(k_max + 1)])
    w = np.full(n_quad + 1, 1.0 / n_quad)
    w[0] *= 0.5
    w[-1] *= 0.5
    gram = (rows * w) @ rows.T
    err = np.max(np.abs(gram - np.eye(k_max + 1)))
    return _result("basis_orthonormality_quadrature", err < 1e-6, f"max |gram - I| = {err:.3g}")


def check_parseval(kernel: KernelSpec, seed: int) -> PropertyResult:
    rng = make_rng(seed, 0, 99)
    worst = 0.0
    for _ in range(20):
        c = rng.standard_normal(40)
        x = SpectralVector(c)
        worst = max(worst, abs(x.norm() ** 2 - float(np.sum(c**2))))
    return _result("parseval_identity", worst < 1e-12, f"max deviation {worst:.3g}")


def check_reproducing_identity(kernel: KernelSpec, seed: int) -> PropertyResult:
    rng = make_rng(seed, 0, 98)
    n = 33
    worst = 0.0
    for _ in range(20):
        c = rng.standard_normal(n)
        z = rng.uniform(0.0, 1.0)
        x = SpectralVector(c)
        psi = kernel.feature_map(z, n)
        direct = float(
            np.sum(kernel.eigenvalues(n) ** (kernel.gamma / 2.0) * c * kernel.basis_row(z, n))
        )
        worst = max(worst, abs(x.dot(psi) - direct))
    return _result("reproducing_identity", worst < 1e-12, f"max deviation {worst:.3g}")


def check_a_negativity(kernel: KernelSpec, lam: float, seed: int) -> PropertyResult:
    rng = make_rng(seed, 0, 97)
    n = 33
    a_op = operator_a(kernel, lam, n)
    worst = -math.inf
    for _ in range(50):
        x = SpectralVector(rng.standard_normal(n))
        lhs = a_op.apply(x).dot(x)
        worst = max(worst, lhs + (lam / kernel.mu0) * x.norm() ** 2)
    return _result("a_negativity", worst <= 1e-10, f"max <Ax,x> + (lam/mu0)||x||^2 = {worst:.3g}")


def check_resolvent_scales(kernel: KernelSpec, lam: float, eta: float) -> PropertyResult:
    n = 17
    op = resolvent_s_eta(kernel, lam, eta, n)
    mu = kernel.eigenvalues(n)
    expect = 1.0 / (1.0 + lam * eta / mu)
    err = np.max(np.abs(op.scale_per_mode - expect))
    norm_err = abs(op.operator_norm - 1.0 / (1.0 + lam * eta / kernel.mu0))
    ok = err < 1e-15 and norm_err < 1e-15 and np.all(op.scale_per_mode > 0) and np.all(op.scale_per_mode < 1)
    return _result("resolvent_scales_and_norm", ok, f"scale err {err:.3g}, norm err {norm_err:.3g}")


def check_strict_gap_identity() -> PropertyResult:
    worst = 0.0
    for lam in (1.0, 2.0, 5.0):
        for mu0 in (0.5, 1.0):
            for m_const in (0.1, 0.3):
                for eta in (0.01, 0.1, 1.0):
                    gap = (lam / mu0 - m_const) / (1.0 + eta * lam / mu0)
                    lhs = 1.0 - eta * gap
                    rhs = (1.0 + eta * m_const) / (1.0 + eta * lam / mu0)
                    worst = max(worst, abs(lhs - rhs))
    return _result("strict_gap_contraction_identity", worst < 1e-12, f"max deviation {worst:.3g}")


def check_gradient_fd(obj: ObjectiveSpec, seed: int) -> PropertyResult:
    rng = make_rng(seed, 0, 96)
    step = 1e-4
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal(obj.n_modes)
        h = rng.standard_normal(obj.n_modes)
        h /= np.linalg.norm(h)
        fd = (obj.risk_array(x + step * h) - obj.risk_array(x - step * h)) / (2.0 * step)
        an = float(obj.grad_array(x) @ h)
        worst = max(worst, abs(fd - an) / max(abs(fd), 1e-8))
    return _result("gradient_finite_difference", worst < 1e-5, f"max relative error {worst:.3g}")


def check_minibatch_exhaustive(kernel: KernelSpec) -> PropertyResult:
    from itertools import combinations

    data = Dataset.synthesize(6, 11)
    obj = ObjectiveSpec(data, SQUARED, kernel, 9)
    x = make_rng(3, 0, 95).standard_normal(9)
    full = obj.grad_array(x)
    subs = [obj.stochastic_grad_array(x, np.array(s)) for s in combinations(range(6), 2)]
    mean_err = np.max(np.abs(np.mean(subs, axis=0) - full))
    emp_var = float(np.mean([np.sum((g - full) ** 2) for g in subs]))
    comps = obj.grad_components_array(x)
    sbar2 = float(np.mean(np.sum((comps - comps.mean(axis=0)) ** 2, axis=1)))
    expect = sbar2 / 2.0 * (6 - 2) / (6 - 1)
    ok = mean_err < 1e-12 and abs(emp_var - expect) < 1e-12
    return _result(
        "minibatch_unbiasedness_and_variance",
        ok,
        f"mean err {mean_err:.3g}, variance deviation {abs(emp_var - expect):.3g}",
    )


def check_dissipativity_probe(obj: ObjectiveSpec, lam: float, seed: int) -> PropertyResult:
    try:
        regime, m_const, c_const = obj.dissipativity_constants(lam)
    except ValueError as exc:
        return _result("dissipativity_probe", False, f"no regime applies: {exc}")
    rng = make_rng(seed, 0, 94)
    a_op = operator_a(obj.kernel, lam, obj.n_modes)
    worst = -math.inf
    for _ in range(1000):
        x = rng.standard_normal(obj.n_modes) * rng.uniform(0.1, 20.0)
        lhs = float((a_op.apply_array(x) - obj.grad_array(x)) @ x)
        worst = max(worst, lhs - (-m_const * float(x @ x) + c_const))
    return _result(
        "dissipativity_probe",
        worst <= 1e-9,
        f"regime {regime}, max violation {worst:.3g} (m={m_const:.4g}, c={c_const:.4g})",
    )


def check_determinism(cfg: ChainConfig, obj: ObjectiveSpec) -> PropertyResult:
    short = replace(cfg, horizon=200, burn_in=None)
    a = run_chain(short, obj, mode="gld")
    b = run_chain(short, obj, mode="gld")
    ok = np.array_equal(a.norm, b.norm) and np.array_equal(a.risk, b.risk)
    return _result("determinism_bitwise", ok, "two same-seed runs produced identical trajectories")


def check_fullbatch_reduction(cfg: ChainConfig, obj: ObjectiveSpec) -> PropertyResult:
    short = replace(cfg, horizon=200, burn_in=None, minibatch=obj.dataset.size)
    a = run_chain(short, obj, mode="gld")
    b = run_chain(short, obj, mode="sgld")
    ok = np.array_equal(a.norm, b.norm)
    return _result("sgld_fullbatch_reduction", ok, "m = n_tr trajectory equals GLD pathwise")


def check_semi_implicit_identity(cfg: ChainConfig, obj: ObjectiveSpec, seed: int) -> PropertyResult:
    rng = make_rng(seed, 0, 93)
    s = resolvent_scales(obj.kernel, cfg.lam, cfg.eta, cfg.n_modes)
    amp = math.sqrt(2.0 * cfg.eta / cfg.beta)
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal(cfg.n_modes)
        eps = rng.standard_normal(cfg.n_modes)
        x_next = s * (x - cfg.eta * obj.grad_array(x) + amp * eps)
        # applying the inverse resolvent must recover the explicit display
        recovered = x_next / s
        expect = x - cfg.eta * obj.grad_array(x) + amp * eps
        worst = max(worst, float(np.max(np.abs(recovered - expect))))
        # equivalently: x_next + eta lam x_next / mu == expect
        mu = obj.kernel.eigenvalues(cfg.n_modes)
        worst = max(
            worst, float(np.max(np.abs(x_next + cfg.eta * cfg.lam * x_next / mu - expect)))
        )
    return _result("semi_implicit_identity", worst < 1e-12, f"max mode deviation {worst:.3g}")


def run_property_suite(exp: ExperimentConfig) -> list[PropertyResult]:
    kernel = exp.kernel
    obj = exp.build_objective()
    cfg = exp.chain
    seed = cfg.seed
    return [
        check_assumption1_shape(kernel),
        check_eigenvalues_monotone(kernel),
        check_orthonormality(kernel),
        check_parseval(kernel, seed),
        check_reproducing_identity(kernel, seed),
        check_a_negativity(kernel, cfg.lam, seed),
        check_resolvent_scales(kernel, cfg.lam, cfg.eta),
        check_strict_gap_identity(),
        check_gradient_fd(obj, seed),
        check_minibatch_exhaustive(kernel),
        check_dissipativity_probe(obj, cfg.lam, seed),
        check_determinism(cfg, obj),
        check_fullbatch_reduction(cfg, obj),
        check_semi_implicit_identity(cfg, obj, seed),
    ]
