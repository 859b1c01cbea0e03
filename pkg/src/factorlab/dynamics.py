"""Optimization core: loss, exact gradients, GD and RK4 flow steppers.

The optimized object is a stack of N square matrices ``(W_1, ..., W_N)`` over
one field; the fitted quantity is the ordered product ``W = W_N ... W_1``.
The loss is the squared Frobenius misfit of the product plus a balance
regularizer on adjacent layers:

    l_ori = 1/2 ||Sigma - W||_F^2
    l_reg = a/4 * sum_j ||W_j W_j^H - W_{j+1}^H W_{j+1}||_F^2

Complex gradients follow the convention grad = d/dRe + i * d/dIm (twice the
conjugate Wirtinger derivative), so one update rule covers both fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DimMismatchError
from .linalg import FieldTag, adjoint, svd

__all__ = [
    "LayerStack",
    "TargetSpec",
    "DynConfig",
    "product",
    "balance_deltas",
    "loss",
    "gradient",
    "gd_step",
    "flow_step_rk4",
    "reduce_target",
]


@dataclass(frozen=True)
class LayerStack:
    """Ordered weights ``(W_1, ..., W_N)``, all d x d over the same field."""

    layers: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.layers) < 2:
            raise ValueError("a stack needs at least two layers")
        d = self.layers[0].shape[0]
        for w in self.layers:
            if w.shape != (d, d):
                raise DimMismatchError("all layers must be square with equal dimension")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.layers[0].shape[0]

    @property
    def field(self) -> FieldTag:
        return FieldTag.of(self.layers[0])


@dataclass(frozen=True)
class TargetSpec:
    """Target matrix; ``reduced`` marks non-negative real diagonal form."""

    matrix: np.ndarray
    reduced: bool = False

    def __post_init__(self) -> None:
        if self.reduced:
            m = self.matrix
            off = m - np.diag(np.diagonal(m))
            diag = np.diagonal(m)
            if np.linalg.norm(off) >= 1e-14 * (1 + np.linalg.norm(m)) or np.any(
                diag.real < 0
            ) or (np.iscomplexobj(m) and np.any(np.abs(diag.imag) > 1e-14)):
                raise ValueError("reduced target must be diagonal with non-negative reals")

    @staticmethod
    def identity(d: int, sigma1: float = 1.0) -> "TargetSpec":
        return TargetSpec(sigma1 * np.eye(d), reduced=True)

    @staticmethod
    def diagonal(values) -> "TargetSpec":
        return TargetSpec(np.diag(np.asarray(values, dtype=float)), reduced=True)


@dataclass(frozen=True)
class DynConfig:
    """Dynamics parameters: regularizer weight, step sizes, integrator choice.

    ``integrator`` is ``"gd"`` (discrete gradient descent with learning rate
    ``eta``) or ``"flow_rk4"`` (classical RK4 on the gradient flow with fixed
    step ``step_h``).  ``omit_l_ori`` drops the misfit term so the dynamics
    are driven by the regularizer alone.
    """

    reg_a: float = 0.0
    eta: float = 0.1
    step_h: float = dc_field(default=1e-3)
    integrator: str = "gd"
    omit_l_ori: bool = False

    def __post_init__(self) -> None:
        if self.reg_a < 0:
            raise ValueError("reg_a must be non-negative")
        if self.eta <= 0 or self.step_h <= 0:
            raise ValueError("step sizes must be positive")
        if self.integrator not in ("gd", "flow_rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")


def product(stack: LayerStack) -> np.ndarray:
    """Product matrix ``W_N @ ... @ W_1`` (descending layer index)."""
    w = stack.layers[-1]
    for layer in reversed(stack.layers[:-1]):
        w = w @ layer
    return w


def balance_deltas(stack: LayerStack) -> list[np.ndarray]:
    """Adjacent balance defects ``W_j W_j^H - W_{j+1}^H W_{j+1}``, j = 1..N-1."""
    out = []
    for wj, wj1 in zip(stack.layers[:-1], stack.layers[1:]):
        out.append(wj @ adjoint(wj) - adjoint(wj1) @ wj1)
    return out


def _check_dims(stack: LayerStack, target: TargetSpec) -> None:
    if target.matrix.shape != (stack.dim, stack.dim):
        raise DimMismatchError("target dimension does not match the stack")


def loss(stack: LayerStack, target: TargetSpec, cfg: DynConfig) -> tuple[float, float, float]:
    """Returns ``(l_ori, l_reg, total)``; ``l_ori`` reported even when omitted."""
    _check_dims(stack, target)
    l_ori = 0.5 * float(np.linalg.norm(target.matrix - product(stack)) ** 2)
    l_reg = 0.0
    if cfg.reg_a > 0:
        l_reg = 0.25 * cfg.reg_a * float(
            sum(np.linalg.norm(delta) ** 2 for delta in balance_deltas(stack))
        )
    total = (0.0 if cfg.omit_l_ori else l_ori) + l_reg
    return l_ori, l_reg, total


def gradient(stack: LayerStack, target: TargetSpec, cfg: DynConfig) -> list[np.ndarray]:
    """Exact gradient of the total loss with respect to every layer.

    Misfit part: ``-(W_N..W_{j+1})^H (Sigma - W) (W_{j-1}..W_1)^H``.
    Regularizer part: ``-a W_j Delta_{j-1,j} + a Delta_{j,j+1} W_j`` with the
    boundary defects defined as zero.
    """
    _check_dims(stack, target)
    n = stack.depth
    layers = stack.layers
    grads: list[np.ndarray] = [np.zeros_like(w) for w in layers]

    if not cfg.omit_l_ori:
        # suffix[j] = W_j ... W_1 (suffix[0] = I), prefix[j] = W_N ... W_j (prefix[n+1] = I)
        eye = np.eye(stack.dim, dtype=layers[0].dtype)
        suffix = [eye]
        for w in layers:
            suffix.append(w @ suffix[-1])
        prefix = [eye]
        for w in reversed(layers):
            prefix.append(prefix[-1] @ w)
        prefix = prefix[::-1]  # prefix[j] = W_N ... W_{j+1}; prefix[n] = I
        misfit = target.matrix - suffix[-1]
        for j in range(1, n + 1):
            grads[j - 1] = grads[j - 1] - adjoint(prefix[j]) @ misfit @ adjoint(suffix[j - 1])

    if cfg.reg_a > 0:
        deltas = balance_deltas(stack)
        a = cfg.reg_a
        for j in range(1, n + 1):
            if j >= 2:
                grads[j - 1] = grads[j - 1] - a * (layers[j - 1] @ deltas[j - 2])
            if j <= n - 1:
                grads[j - 1] = grads[j - 1] + a * (deltas[j - 1] @ layers[j - 1])
    return grads


def gd_step(stack: LayerStack, target: TargetSpec, cfg: DynConfig) -> LayerStack:
    """One simultaneous gradient-descent update of every layer."""
    grads = gradient(stack, target, cfg)
    return LayerStack(tuple(w - cfg.eta * g for w, g in zip(stack.layers, grads)))


def flow_step_rk4(stack: LayerStack, target: TargetSpec, cfg: DynConfig) -> LayerStack:
    """One classical 4th-order Runge-Kutta step of the coupled layer ODE."""
    h = cfg.step_h

    def rhs(layers: tuple[np.ndarray, ...]) -> list[np.ndarray]:
        return [-g for g in gradient(LayerStack(layers), target, cfg)]

    y0 = stack.layers
    k1 = rhs(y0)
    k2 = rhs(tuple(w + 0.5 * h * k for w, k in zip(y0, k1)))
    k3 = rhs(tuple(w + 0.5 * h * k for w, k in zip(y0, k2)))
    k4 = rhs(tuple(w + h * k for w, k in zip(y0, k3)))
    new = tuple(
        w + (h / 6.0) * (a + 2.0 * b + 2.0 * c + dd)
        for w, a, b, c, dd in zip(y0, k1, k2, k3, k4)
    )
    return LayerStack(new)


def reduce_target(
    sigma_general: np.ndarray, stack: LayerStack
) -> tuple[TargetSpec, LayerStack]:
    """Rotate the problem so the target becomes non-negative diagonal.

    With ``Sigma = U_S Sigma' V_S^H``, replaces ``W_1 <- W_1 V_S`` and
    ``W_N <- U_S^H W_N``; interior layers, the total loss and all balance
    defects are unchanged.
    """
    if sigma_general.shape != (stack.dim, stack.dim):
        raise DimMismatchError("target dimension does not match the stack")
    r = svd(sigma_general)
    layers = list(stack.layers)
    layers[0] = layers[0] @ r.v
    layers[-1] = adjoint(r.u) @ layers[-1]
    return TargetSpec(np.diag(r.s), reduced=True), LayerStack(tuple(layers))
