"""Generalization-bound factors for FGM/PGD adversarial training.

Everything here is plain float arithmetic on layer norms, plus the power
iteration used to get those norms. The hidden constant in the O(.) bounds
is taken as 1, so right-hand sides are relative training diagnostics and
not certified risk bounds.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .errors import InvalidInputError

POLE_RTOL = 1e-9


class ConvOperator(LinearOperator):
    """Stride-1 zero-padded 2-D convolution as a linear map on flattened maps."""

    def __init__(self, weight, input_hw, padding):
        w = torch.as_tensor(np.asarray(weight), dtype=torch.float64)
        c_out, c_in, kh, kw = w.shape
        h, wd = int(input_hw[0]), int(input_hw[1])
        oh, ow = h + 2 * padding - kh + 1, wd + 2 * padding - kw + 1
        self.weight = w
        self.padding = int(padding)
        self.in_shape = (1, c_in, h, wd)
        self.out_shape = (1, c_out, oh, ow)
        super().__init__(np.float64, (c_out * oh * ow, c_in * h * wd))

    def _matvec(self, v):
        x = torch.from_numpy(np.ascontiguousarray(v, dtype=np.float64)).reshape(self.in_shape)
        return F.conv2d(x, self.weight, padding=self.padding).reshape(-1).numpy()

    def _rmatvec(self, u):
        y = torch.from_numpy(np.ascontiguousarray(u, dtype=np.float64)).reshape(self.out_shape)
        x = F.conv_transpose2d(y, self.weight, padding=self.padding)
        return x.reshape(-1).numpy()

    def todense(self) -> np.ndarray:
        """Materialise the operator column by column (small maps only)."""
        n = self.shape[1]
        return np.stack([self._matvec(e) for e in np.eye(n)], axis=1)


def DenseOperator(matrix) -> LinearOperator:
    return aslinearoperator(np.asarray(matrix, dtype=np.float64))


def power_iteration(op, iters: int = 1000, tol: float = 1e-7, v0=None, seed: int = 0):
    """Largest singular value of ``op`` by power iteration on ``op^T op``.

    ``op`` is anything :func:`scipy.sparse.linalg.aslinearoperator` accepts.
    Iteration stops once ``(sigma, v)`` is a singular pair up to a relative
    residual ``||A^T A v / sigma - sigma v|| <= tol * sigma``, or after
    ``iters`` rounds. A residual test rather than the change of the estimate,
    since the latter stalls long before convergence when the top two singular
    values are close.

    Returns:
        ``(sigma, v)`` where ``v`` is the final right singular vector
        estimate, suitable as ``v0`` for a warm restart.
    """
    if iters < 1:
        raise InvalidInputError("iters must be >= 1")
    A = op if isinstance(op, LinearOperator) else aslinearoperator(np.asarray(op, dtype=np.float64))
    n = A.shape[1]
    if v0 is None or np.linalg.norm(v0) == 0:
        v = np.random.default_rng(seed).standard_normal(n)
    else:
        v = np.array(v0, dtype=np.float64).reshape(n)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        u = A.matvec(v)
        s = float(np.linalg.norm(u))
        if s == 0.0:
            return 0.0, v
        w = A.rmatvec(u / s)
        wn = float(np.linalg.norm(w))
        if wn == 0.0:
            return 0.0, v
        done = np.linalg.norm(w - s * v) <= tol * s
        v = w / wn
        if done:
            break
    return float(np.linalg.norm(A.matvec(v))), v


def spectral_norm(W, iters: int = 1000, tol: float = 1e-7) -> float:
    return power_iteration(W, iters=iters, tol=tol)[0]


@dataclass(frozen=True)
class BoundTerms:
    W_dot: float
    W_check: float
    lip_bar: float
    d: int
    h: int
    B: float
    kappa: float
    gamma: float
    beta: float
    m: int
    spectral: tuple[float, ...] = field(default=())

    @classmethod
    def from_norms(cls, spectral, frobenius, *, h, B, kappa, gamma=1.0, beta=0.05, m=1):
        spectral = tuple(float(s) for s in spectral)
        frobenius = tuple(float(f) for f in frobenius)
        if len(spectral) != len(frobenius) or not spectral:
            raise InvalidInputError("need one spectral and one Frobenius norm per layer")
        w_dot = math.prod(spectral)
        w_check = sum(f * f / (s * s) for s, f in zip(spectral, frobenius))
        terms = cls(w_dot, w_check, 0.0, len(spectral), int(h), float(B), float(kappa),
                    float(gamma), float(beta), int(m), spectral)
        return cls(**{**asdict(terms), "spectral": spectral, "lip_bar": lip_bar(terms)})


def lip_bar(terms: BoundTerms) -> float:
    """Lipschitz bound of the loss gradient: ``W_dot * sum_i prod_{j<=i} ||W_j||``."""
    total, running = 0.0, 1.0
    for s in terms.spectral:
        running *= s
        total += running
    return terms.W_dot * total


def _check_kappa_B(terms: BoundTerms):
    if not terms.kappa > 0:
        raise InvalidInputError(f"kappa must be positive, got {terms.kappa}")
    if not terms.B > 0:
        raise InvalidInputError(f"B must be positive, got {terms.B}")


def f_fgm(terms: BoundTerms, r_adv: float) -> float:
    """FGM complexity factor ``{W + (r/kappa) W (1/B + W)}^2 * W_check``."""
    _check_kappa_B(terms)
    w = terms.W_dot
    return (w + (r_adv / terms.kappa) * w * (1.0 / terms.B + w)) ** 2 * terms.W_check


def pgd_ratio(kappa: float, alpha: float, lip: float, t: int) -> tuple[float, bool]:
    """``(1 - q^t) / (kappa - 2 alpha lip)`` with ``q = 2 alpha lip / kappa``.

    This is ``(1/kappa) * sum_{i<t} q^i``; the sum is used directly when the
    denominator is within ``POLE_RTOL * kappa`` of zero. Returns the value
    and whether that fallback was taken.
    """
    if t <= 0:
        return 0.0, False
    q = 2.0 * alpha * lip / kappa
    denom = kappa - 2.0 * alpha * lip
    if abs(denom) < POLE_RTOL * kappa:
        return math.fsum(q**i for i in range(t)) / kappa, True
    if q > 0:
        lq = math.log(q)
        try:
            num = -math.expm1(t * lq)
        except OverflowError:
            return math.inf, False
        return num / denom, False
    return (1.0 - q**t) / denom, False


def f_pgd(terms: BoundTerms, r_adv: float, t: int, alpha: float) -> float:
    """PGD complexity factor.

    ``{(1 - (2 alpha/kappa)^t lip^t) / (kappa - 2 alpha lip)}^2 W (1 + W) W_check``.
    The closed form is stated for unit noise power, so ``r_adv`` does not
    enter it (it still enters :func:`rhs`).
    """
    _check_kappa_B(terms)
    ratio, _ = pgd_ratio(terms.kappa, alpha, terms.lip_bar, t)
    return ratio**2 * terms.W_dot * (1.0 + terms.W_dot) * terms.W_check


def rhs(terms: BoundTerms, F_value: float, r_adv: float) -> float:
    """Complexity term of the margin bound with the O(.) constant set to 1."""
    d, h = terms.d, terms.h
    num = (terms.B + r_adv) ** 2 * d * d * h * math.log(d * h) * F_value
    num += math.log(terms.m / terms.beta)
    return math.sqrt(num / (terms.gamma**2 * terms.m))


def margin_loss(scores, labels, gamma: float) -> float:
    """Fraction of patches whose label-signed critic score is at most ``gamma``.

    The critic is read as a two-class classifier: ``labels`` is +1 for
    patches of the real image and -1 for generated ones, so a patch counts
    as a margin violation when ``label * score <= gamma``.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise InvalidInputError("margin_loss needs at least one score")
    y = np.broadcast_to(np.asarray(labels, dtype=np.float64), s.shape)
    return float(np.mean(y * s <= gamma))


def rademacher_factor(Q: float, d_dim: int, n: int, eps: float) -> tuple[float, float]:
    """Clean and adversarial Rademacher-complexity bounds ``2(1+eps)Q sqrt(2 ln(2d)/n)``."""
    clean = 2.0 * Q * math.sqrt(2.0 * math.log(2 * d_dim) / n)
    return clean, (1.0 + eps) * clean


@dataclass
class BoundReport:
    scale_index: int
    step: int
    terms: BoundTerms
    F_fgm: float
    F_pgd: float
    rhs_fgm: float
    rhs_pgd: float
    margin_loss_clean: float
    margin_loss_adv: float
    pgd_near_pole: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["terms"]["spectral"] = list(self.terms.spectral)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundReport":
        t = dict(d["terms"])
        t["spectral"] = tuple(t.get("spectral", ()))
        return cls(**{**d, "terms": BoundTerms(**t)})


def assemble_report(scale_index, step, terms: BoundTerms, r_adv, steps, alpha,
                    margin_clean, margin_adv) -> BoundReport:
    ffgm = f_fgm(terms, r_adv)
    _, pole = pgd_ratio(terms.kappa, alpha, terms.lip_bar, steps)
    fpgd = f_pgd(terms, r_adv, steps, alpha)
    return BoundReport(
        scale_index=scale_index,
        step=step,
        terms=terms,
        F_fgm=ffgm,
        F_pgd=fpgd,
        rhs_fgm=rhs(terms, ffgm, r_adv),
        rhs_pgd=rhs(terms, fpgd, r_adv),
        margin_loss_clean=margin_clean,
        margin_loss_adv=margin_adv,
        pgd_near_pole=pole,
    )
