"""Domain types and link functions for the joint accuracy / response-time model.

Missing cells are represented by ``np.nan`` in the float matrices ``y`` and
``rt``. Ad-hoc input sentinels (``NA``, 9, 10000, ...) are translated at
ingestion time only (see :mod:`rtjoint.cli`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import ndtr

LOGISTIC_SCALE = 1.7


class ValidationError(ValueError):
    """Raised when input data or a run configuration violates its invariants.

    ``problems`` holds every violation found, not only the first one.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _frozen(arr, dtype=float):
    if arr is None:
        return None
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ObservedData:
    """Wide-format RA and log-RT matrices with design masks and covariates.

    Parameters
    ----------
    y : (N, K) array
        Response accuracy, 0/1, ``nan`` for missing.
    rt : (N, K) array
        Log response times, ``nan`` for missing.
    mbd_y, mbd_t : (N, K) array, optional
        Missing-by-design masks; 0 = not administered, 1 = administered.
        Default all ones.
    xpa, xpt : (N, P) array, optional
        Person covariates for ability and speed.
    xia, xit : (K, Q) array, optional
        Item covariates for difficulty and time intensity.
    """

    y: np.ndarray
    rt: np.ndarray
    mbd_y: Optional[np.ndarray] = None
    mbd_t: Optional[np.ndarray] = None
    xpa: Optional[np.ndarray] = None
    xpt: Optional[np.ndarray] = None
    xia: Optional[np.ndarray] = None
    xit: Optional[np.ndarray] = None

    def __post_init__(self):
        y = _frozen(self.y)
        rt = _frozen(self.rt)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "rt", rt)
        for name in ("mbd_y", "mbd_t"):
            mask = getattr(self, name)
            if mask is None:
                mask = np.ones(y.shape) if y.ndim == 2 else None
            object.__setattr__(self, name, _frozen(mask))
        for name in ("xpa", "xpt", "xia", "xit"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=float)
                if value.ndim == 1:
                    value = value[:, None]
            object.__setattr__(self, name, _frozen(value))

    @property
    def n_persons(self) -> int:
        return self.y.shape[0]

    @property
    def n_items(self) -> int:
        return self.y.shape[1]

    @property
    def administered_y(self) -> np.ndarray:
        return self.mbd_y == 1

    @property
    def administered_t(self) -> np.ndarray:
        return self.mbd_t == 1

    @property
    def mar_y(self) -> np.ndarray:
        """Administered but unobserved RA cells (imputed during sampling)."""
        return self.administered_y & np.isnan(self.y)

    @property
    def mar_t(self) -> np.ndarray:
        return self.administered_t & np.isnan(self.rt)


@dataclass(frozen=True)
class ItemBank:
    """Item parameters; ``b`` and ``lam`` hold the bracket-form values when
    the bracket parameterization is active."""

    a: np.ndarray
    b: np.ndarray
    phi: np.ndarray
    lam: np.ndarray
    sigma2: np.ndarray
    c: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("a", "b", "phi", "lam", "sigma2", "c"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if np.any(self.a <= 0) or np.any(self.phi <= 0):
            raise ValidationError(["discriminations must be positive"])
        if np.any(self.sigma2 <= 0):
            raise ValidationError(["measurement-error variances must be positive"])
        if self.c is not None and np.any((self.c < 0) | (self.c >= 1)):
            raise ValidationError(["guessing parameters must lie in [0, 1)"])

    @property
    def n_items(self) -> int:
        return self.a.shape[0]

    def guessing(self) -> np.ndarray:
        return np.zeros_like(self.a) if self.c is None else self.c


@dataclass(frozen=True)
class PersonState:
    """Person parameters. ``zeta`` is (N,) for constant speed and (N, 3) for
    the quadratic speed model (intercept, trend, quadratic)."""

    theta: np.ndarray
    zeta: np.ndarray
    s_indicators: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("theta", "zeta", "s_indicators"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def quadratic(self) -> bool:
        return self.zeta.ndim == 2


@dataclass(frozen=True)
class PopulationPrior:
    """Hyperprior for the person population model.

    ``nu_p`` and ``v_p`` default to ``dim + 2`` and the identity. The
    ``speed_*`` and ``resid_*`` inverse-gamma parameters are used by the
    quadratic speed model, where the speed components are independent and
    ability is regressed on them.
    """

    nu_p: Optional[float] = None
    v_p: Optional[np.ndarray] = None
    beta_var: float = 100.0
    speed_shape: float = 1.0
    speed_scale: float = 0.01
    resid_shape: float = 1.0
    resid_scale: float = 1.0

    def scale_matrix(self, dim: int) -> np.ndarray:
        if self.v_p is None:
            return np.eye(dim)
        v = np.asarray(self.v_p, dtype=float)
        if v.shape != (dim, dim):
            raise ValidationError([f"v_p must be {dim}x{dim}"])
        return v

    def dof(self, dim: int) -> float:
        nu = dim + 2.0 if self.nu_p is None else float(self.nu_p)
        if nu <= dim - 1:
            raise ValidationError([f"nu_p must exceed {dim - 1}"])
        return nu


@dataclass(frozen=True)
class ItemPrior:
    """Normal-inverse-Wishart hyperprior for (a, b, phi, lambda), the Beta
    prior for guessing and the inverse-gamma prior for error variances."""

    nu_i: float = 6.0
    v_i: np.ndarray = field(default_factory=lambda: np.eye(4))
    mu_0: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 1.0, 0.0]))
    kappa: float = 1.0
    guess_alpha: float = 20.0
    guess_beta: float = 80.0
    sigma2_shape: float = 1.0
    sigma2_scale: float = 1.0
    beta_var: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "v_i", _frozen(self.v_i))
        object.__setattr__(self, "mu_0", _frozen(self.mu_0))
        problems = []
        if self.nu_i <= 3:
            problems.append("nu_i must exceed 3")
        if self.guess_alpha <= 0 or self.guess_beta <= 0:
            problems.append("Beta guessing parameters must be positive")
        if self.v_i.shape != (4, 4) or np.any(np.linalg.eigvalsh(self.v_i) <= 0):
            problems.append("v_i must be a 4x4 positive-definite matrix")
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class RunConfig:
    """Estimation switches.

    ``burnin`` is a percentage of ``xg``. ``rescale=False`` switches off the
    product-of-discriminations normalization, which is only useful for
    sampler-validation runs where the prior already fixes every scale.
    """

    xg: int = 1000
    burnin: float = 10.0
    ident: int = 2
    guess: bool = False
    par1: bool = False
    td: bool = True
    wl: bool = False
    residual: bool = False
    xgresid: int = 1000
    seed: Optional[int] = None
    fixed_a: Optional[np.ndarray] = None
    fixed_b: Optional[np.ndarray] = None
    fixed_phi: Optional[np.ndarray] = None
    fixed_lambda: Optional[np.ndarray] = None
    speed_model: str = "constant"
    rescale: bool = True

    def __post_init__(self):
        for name in ("fixed_a", "fixed_b", "fixed_phi", "fixed_lambda"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    @property
    def n_burnin(self) -> int:
        return int(np.ceil(self.burnin * self.xg / 100.0))


# --------------------------------------------------------------------------
# link functions


def linear_predictor(theta, a, b, par1=False):
    """``a*theta - b`` or, in bracket form, ``a*(theta - b)``; broadcasts."""
    theta = np.asarray(theta, dtype=float)
    if par1:
        return a * (theta - b)
    return a * theta - b


def response_probability(theta, a, b, c=None, par1=False):
    """Probability of a correct response under the (3-parameter) normal ogive.

    Returns ``c + (1 - c) * Phi(eta)`` where ``eta`` follows
    :func:`linear_predictor`; ``c`` defaults to zero.
    """
    p = ndtr(linear_predictor(theta, a, b, par1))
    if c is None:
        return p
    return c + (1.0 - c) * p


def rt_mean(zeta, phi, lam, par1=False, wl=False):
    """Expected log response time ``lam - phi*zeta`` or ``phi*(lam - zeta)``.

    Under ``wl`` the speed slope in the mean is fixed to one; ``phi`` then
    only carries ``1/sigma`` and is ignored here.
    """
    zeta = np.asarray(zeta, dtype=float)
    slope = np.ones_like(np.asarray(phi, dtype=float)) if wl else phi
    if par1:
        return slope * (lam - zeta)
    return lam - slope * zeta


def probit_to_logistic(a, b, sigma_probit=1.0, sigma_logistic=1.0):
    """Map normal-ogive item estimates to the logistic metric (factor 1.7)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a_log = a / sigma_probit * sigma_logistic / LOGISTIC_SCALE
    return a_log, LOGISTIC_SCALE * b


def logistic_to_probit(a, b, sigma_probit=1.0, sigma_logistic=1.0):
    """Inverse of :func:`probit_to_logistic`."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a_prob = LOGISTIC_SCALE * a / sigma_logistic * sigma_probit
    return a_prob, b / LOGISTIC_SCALE


def probit_logistic_transform(a, b, direction="probit->logistic", **scales):
    if direction == "probit->logistic":
        return probit_to_logistic(a, b, **scales)
    if direction == "logistic->probit":
        return logistic_to_probit(a, b, **scales)
    raise ValueError(f"unknown direction {direction!r}")


# --------------------------------------------------------------------------
# validation


def _check_covariates(x, rows, name, problems):
    if x is None:
        return
    if x.ndim != 2 or x.shape[0] != rows:
        problems.append(f"{name} must have {rows} rows, got shape {x.shape}")
        return
    if not np.all(np.isfinite(x)):
        problems.append(f"{name} contains missing or non-finite values")
    if rows > 1:
        const = np.flatnonzero(np.ptp(x, axis=0) == 0)
        if const.size:
            problems.append(f"{name} has constant columns {const.tolist()}")


def validate_inputs(data: ObservedData, config: RunConfig = RunConfig()) -> ObservedData:
    """Check data and configuration; raise :class:`ValidationError` listing
    every problem found. Returns ``data`` unchanged on success."""
    problems = []
    y, rt = data.y, data.rt
    if y.ndim != 2 or rt.ndim != 2:
        raise ValidationError(["Y and RT must be 2-D matrices"])
    if y.shape != rt.shape:
        problems.append(f"dimension mismatch: Y {y.shape} vs RT {rt.shape}")
    n, k = y.shape
    if n < 2 or k < 2:
        problems.append("need at least 2 persons and 2 items")

    bad = ~np.isnan(y) & (y != 0) & (y != 1)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        problems.append(f"invalid RA value {y[i, j]!r} at row {i}, column {j} "
                        f"({int(bad.sum())} cells)")
    if np.isinf(rt).any():
        problems.append("RT contains infinite values (log of zero RT?)")

    for name, mask, target in (("mbd_y", data.mbd_y, y), ("mbd_t", data.mbd_t, rt)):
        if mask.shape != target.shape:
            problems.append(f"{name} shape {mask.shape} does not match {target.shape}")
            continue
        if not np.all((mask == 0) | (mask == 1)):
            problems.append(f"{name} must contain only 0/1")
        observed = (mask == 0) & ~np.isnan(target)
        if observed.any():
            i, j = np.argwhere(observed)[0]
            problems.append(f"{name}: cell ({i}, {j}) is missing by design but observed")

    _check_covariates(data.xpa, n, "xpa", problems)
    _check_covariates(data.xpt, n, "xpt", problems)
    _check_covariates(data.xia, k, "xia", problems)
    _check_covariates(data.xit, k, "xit", problems)

    if config.xg < 1:
        problems.append("xg must be positive")
    if not 0 <= config.burnin < 100:
        problems.append("burnin must be a percentage in [0, 100)")
    if config.ident not in (1, 2):
        problems.append("ident must be 1 or 2")
    if config.residual and config.xg <= config.xgresid:
        problems.append(f"residual analysis requires xg > xgresid "
                        f"(xg={config.xg}, xgresid={config.xgresid})")
    if config.speed_model not in ("constant", "quadratic"):
        problems.append(f"unknown speed model {config.speed_model!r}")
    if config.speed_model == "quadratic" and (data.xpt is not None or config.wl):
        problems.append("quadratic speed model supports neither xpt nor wl")
    for name in ("fixed_a", "fixed_b", "fixed_phi", "fixed_lambda"):
        value = getattr(config, name)
        if value is not None and value.shape != (k,):
            problems.append(f"{name} must have length {k}")
    for name in ("fixed_a", "fixed_phi"):
        value = getattr(config, name)
        if value is not None and np.any(value <= 0):
            problems.append(f"{name} must be positive")

    if problems:
        raise ValidationError(problems)
    return data
