"""Gene-level fold changes from probe-level intensities.

For one gene with probes ``j`` and arrays ``i`` the log expression is
``theta_i = beta0 + beta1 * X_i``. With background plug-ins held fixed,
``beta`` solves the estimating equation

    (1/J) sum_j A_j (y_j - E[Y_j]) = 0,    A_j = (dE_j/dbeta)' V0_j^{-1}

where ``y = PM - O_hat``, ``E = gamma1 + gamma2`` and ``V0`` is the diagonal
of model variances at the current ``beta``. Standard errors come from the
sandwich ``D^{-1} Omega D^{-T} / J`` with ``Omega`` built from the full
model covariance across arrays.

Genes whose expected specific signal collapses towards zero (absent in
both groups) have no finite solution; they are reported with status
``absent_fallback`` and a detection p-value instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .background import FLOOR, estimate_nu
from .core import normal_quantile, normal_sf
from .detect import model_detect
from .errors import DataError, InsufficientDataError, NotApplicableError, NumericalError

MAX_ITER = 100
STEP_TOL = 1e-8
MAX_HALVINGS = 20
MAX_STEP = 5.0
ABSENT_RATIO = 1e-6
ABSENT_PATIENCE = 5
STATUSES = ("converged", "absent_fallback", "failed")


@dataclass(frozen=True)
class GeneData:
    """Everything the solver needs for one gene.

    ``y`` is ``PM - O_hat`` with shape ``(J, I)``; ``mu`` the predicted log
    background per probe and array; ``phi`` per probe; ``nu`` and the
    design indicator ``x`` per array.
    """

    gene_id: str
    y: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    nu: np.ndarray
    x: np.ndarray

    @property
    def n_probes(self):
        return self.y.shape[0]

    @property
    def two_groups(self):
        return np.unique(self.x).size > 1

    def design(self):
        if self.two_groups:
            return np.column_stack([np.ones(self.x.size), self.x])
        return np.ones((self.x.size, 1))

    def swapped(self):
        """Same data with the group labels exchanged."""
        return replace(self, x=1.0 - self.x)


def gene_data(dataset, fit, g, arrays=None, x=None):
    """Assemble :class:`GeneData` for gene ``g`` from a dataset and its plug-ins."""
    arrays = np.arange(dataset.n_arrays) if arrays is None else np.asarray(arrays)
    x = np.zeros(arrays.size) if x is None else np.asarray(x, dtype=float)
    rows = dataset.gene_rows(g)
    pm = dataset.channel("PM")[rows][:, arrays]
    y = pm - fit.optical[arrays]
    mu = fit.mu_pm[rows][:, arrays]
    phi = fit.phi[rows] if fit.phi is not None else np.zeros(y.shape[0])
    nu = fit.nu[arrays] if fit.nu is not None else np.zeros(arrays.size)
    return GeneData(dataset.gene_ids[g], y, mu, phi, nu, x)


@dataclass(frozen=True)
class GeeInternals:
    """Quantities of the estimating equation at a given ``beta``.

    Arrays are ``(J, I)`` except ``D`` and ``Omega`` (parameters squared)
    and ``A`` (``J`` x parameters x ``I``).
    """

    expected: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    A: np.ndarray
    V0: np.ndarray
    D: np.ndarray
    Omega: np.ndarray
    n_probes: int


@dataclass(frozen=True)
class GeneFitResult:
    gene_id: str
    beta0: float
    beta1: float
    covariance: np.ndarray
    p_value: float
    status: str
    iterations: int

    @property
    def se_beta1(self):
        v = self.covariance[1, 1] if self.covariance.shape == (2, 2) else np.nan
        return float(math.sqrt(v)) if v >= 0 else float("nan")

    @property
    def se_beta0(self):
        v = self.covariance[0, 0]
        return float(math.sqrt(v)) if v >= 0 else float("nan")


class _Model:
    """Moments of one gene as functions of ``beta``."""

    def __init__(self, data, sigma_N, rho_N, sigma_S, rho_S, background=True):
        self.data = data
        self.X = data.design()
        sN2, sS2 = sigma_N ** 2, sigma_S ** 2
        self.cN = math.expm1(sN2)
        self.cS = math.expm1(sS2)
        self.eN = math.expm1(rho_N * sN2)
        self.eS = math.expm1(rho_S * sS2)
        # working-variance constants; with no noise at all the weights are
        # taken in the sigma -> 0 limit (only their ratios matter for the root)
        if self.cS == 0.0 and (self.cN == 0.0 or not background):
            self.wN, self.wS = 1.0, 1.0
        else:
            self.wN, self.wS = self.cN, self.cS
        if background:
            self.gamma1 = np.exp(data.mu + 0.5 * sN2)
        else:
            self.gamma1 = np.zeros_like(data.y)
        self.base = data.phi[:, None] + data.nu[None, :] + 0.5 * sS2
        self.J = data.y.shape[0]

    def at(self, beta):
        g2 = np.exp(self.base + (self.X @ beta)[None, :])
        V = self.gamma1 ** 2 * self.wN + g2 ** 2 * self.wS
        return g2, V

    def score(self, beta):
        g2, V = self.at(beta)
        r = self.data.y - self.gamma1 - g2
        U = self.X.T @ (g2 * r / V).sum(axis=0) / self.J
        D = (self.X.T * (g2 ** 2 / V).sum(axis=0)) @ self.X / self.J
        return U, D, g2, V, r

    def jacobian(self, g2, V, r):
        w = (g2 / V) * ((1.0 - 2.0 * g2 ** 2 * self.wS / V) * r - g2)
        return (self.X.T * w.sum(axis=0)) @ self.X / self.J

    def internals(self, beta):
        g2, V = self.at(beta)
        X = self.X
        a = g2 / V  # (J, I)
        A = a[:, None, :] * X.T[None, :, :]
        D = (X.T * (g2 ** 2 / V).sum(axis=0)) @ X / self.J
        u = (a * self.gamma1) @ X  # (J, k)
        v = (a * g2) @ X
        var = self.gamma1 ** 2 * self.cN + g2 ** 2 * self.cS
        rest = var - self.gamma1 ** 2 * self.eN - g2 ** 2 * self.eS
        Omega = (self.eN * u.T @ u + self.eS * v.T @ v
                 + (X.T * (a ** 2 * rest).sum(axis=0)) @ X) / self.J
        return GeeInternals(self.gamma1 + g2, self.gamma1, g2, A, V, D, Omega, self.J)

    def initial(self):
        d = self.data
        resid = d.y - self.gamma1
        # log upper-quartile signal minus mean phi, mean nu and sigma_S^2 / 2
        b0 = math.log(max(float(np.quantile(resid, 0.75)), FLOOR)) - float(self.base.mean())
        beta = np.zeros(self.X.shape[1])
        beta[0] = b0
        return beta


def sandwich_covariance(internals):
    """``D^{-1} Omega D^{-T} / J`` from :class:`GeeInternals`."""
    D = internals.D
    try:
        if not np.all(np.isfinite(D)) or np.linalg.cond(D) > 1e14:
            raise np.linalg.LinAlgError
        Dinv = np.linalg.inv(D)
    except np.linalg.LinAlgError:
        raise NumericalError("singular bread matrix") from None
    cov = Dinv @ internals.Omega @ Dinv.T / internals.n_probes
    return 0.5 * (cov + cov.T)


def gee_internals(data, beta, plugins, background=True):
    """Evaluate :class:`GeeInternals` for ``data`` at ``beta``."""
    m = _Model(data, plugins.sigma_N, plugins.rho_N, plugins.sigma_S, plugins.rho_S, background)
    return m.internals(np.asarray(beta, dtype=float))


def _fallback(data, plugins, status, iterations, beta=None):
    J = data.n_probes
    if J >= 3 and plugins.sigma_N > 0 and np.all(np.isfinite(data.mu)):
        det = model_detect(data.y, data.mu, plugins.sigma_N, plugins.rho_N, 0.0, data.gene_id)
        p = det.p_value
    else:
        p = float("nan")
    b = np.full(2, np.nan) if beta is None else beta
    b0 = float(b[0])
    b1 = float(b[1]) if b.size > 1 else float("nan")
    return GeneFitResult(data.gene_id, b0, b1, np.full((2, 2), np.nan), p, status, iterations)


def solve_gee(data, plugins, background=True):
    """Damped Newton solve of the estimating equation for one gene.

    Parameters
    ----------
    data : GeneData
    plugins
        Anything with ``sigma_N, rho_N, sigma_S, rho_S`` (a ``BackgroundFit``).
    background : bool
        ``False`` drops the nonspecific term from the mean and variance
        (used by :func:`no_background_baseline`).

    Returns
    -------
    GeneFitResult
        With one group, only ``beta0`` is estimated and ``beta1`` and the
        p-value are ``nan``.
    """
    J, I = data.y.shape
    if J < 3:
        raise InsufficientDataError(f"insufficient probes: need at least 3, got {J}")
    if data.x.shape != (I,) or data.nu.shape != (I,) or data.phi.shape != (J,):
        raise ValueError("inconsistent gene data shapes")
    model = _Model(data, plugins.sigma_N, plugins.rho_N, plugins.sigma_S, plugins.rho_S,
                   background)
    groups = [data.x == v for v in np.unique(data.x)]
    beta = model.initial()
    tiny = 0
    status = "failed"
    it = 0
    for it in range(1, MAX_ITER + 1):
        U, D, g2, V, r = model.score(beta)
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(D))):
            break
        try:
            W = np.linalg.inv(D)
        except np.linalg.LinAlgError:
            break
        Jac = model.jacobian(g2, V, r)
        step = None
        if np.all(np.isfinite(Jac)) and np.all(np.linalg.eigvalsh(0.5 * (Jac + Jac.T)) < 0):
            try:
                step = -np.linalg.solve(Jac, U)
            except np.linalg.LinAlgError:
                step = None
        if step is None:
            step = W @ U
        if not np.all(np.isfinite(step)):
            break
        big = np.max(np.abs(step))
        if big > MAX_STEP:
            step = step * (MAX_STEP / big)
        merit = float(U @ W @ U)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            U_new = model.score(beta + t * step)[0]
            if np.all(np.isfinite(U_new)) and float(U_new @ W @ U_new) < merit:
                break
            t *= 0.5
        else:
            # no decrease: either already at the root or stuck
            if merit < 1e-20 or np.linalg.norm(step) < STEP_TOL:
                status = "converged"
            break
        beta = beta + t * step
        g1 = model.gamma1
        g2 = model.at(beta)[0]
        collapsed = any(g2[:, m].mean() < ABSENT_RATIO * max(g1[:, m].mean(), 1e-300)
                        for m in groups) if background else False
        tiny = tiny + 1 if collapsed else 0
        if tiny >= ABSENT_PATIENCE:
            return _fallback(data, plugins, "absent_fallback", it, beta)
        if np.linalg.norm(t * step) < STEP_TOL:
            status = "converged"
            break
    if status != "converged":
        return _fallback(data, plugins, "failed", it, beta)
    try:
        cov = sandwich_covariance(model.internals(beta))
    except NumericalError:
        return _fallback(data, plugins, "failed", it, beta)
    if beta.size == 1:
        cov2 = np.full((2, 2), np.nan)
        cov2[0, 0] = cov[0, 0]
        return GeneFitResult(data.gene_id, float(beta[0]), float("nan"), cov2,
                             float("nan"), "converged", it)
    res = GeneFitResult(data.gene_id, float(beta[0]), float(beta[1]), cov,
                        float("nan"), "converged", it)
    return replace(res, p_value=de_test(res).p_value)


def no_background_baseline(data, plugins):
    """The same solve with the nonspecific term set to zero.

    Only the optical floor is removed, so at low signal the background is
    read as expression and fold changes shrink towards zero.
    """
    return solve_gee(data, plugins, background=False)


def estimating_equation(data, beta, plugins, background=True):
    """``(1/J) sum_j A_j (y_j - E_j)`` at ``beta`` (for checking solutions)."""
    m = _Model(data, plugins.sigma_N, plugins.rho_N, plugins.sigma_S, plugins.rho_S, background)
    return m.score(np.asarray(beta, dtype=float))[0]


@dataclass(frozen=True)
class DETest:
    reject: bool
    p_value: float
    lower: float
    upper: float


def de_test(fit, level=0.01):
    """Two-sided normal test of ``beta1 = 0`` with critical bounds ``+-z * SE``."""
    if fit.status != "converged" or not np.isfinite(fit.beta1):
        raise NotApplicableError(f"not applicable: gene {fit.gene_id!r} has status {fit.status}")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    se = fit.se_beta1
    z = normal_quantile(1.0 - level / 2.0)
    if se == 0.0:
        p = 0.0 if fit.beta1 != 0.0 else 1.0
    else:
        p = min(1.0, 2.0 * normal_sf(abs(fit.beta1) / se))
    return DETest(p < level, p, -z * se, z * se)


# --------------------------------------------------------------------------
# Whole dataset
# --------------------------------------------------------------------------

def comparison_arrays(dataset, condition0=None, condition1=None):
    """Arrays and 0/1 design of a two-condition comparison.

    Defaults to the two smallest condition labels.
    """
    if (condition0 is None) != (condition1 is None):
        raise ValueError("give both conditions or neither")
    if condition0 is None:
        conds = np.unique(dataset.conditions)
        if conds.size < 2:
            raise DataError("need two conditions for a comparison")
        condition0, condition1 = conds[0], conds[1]
    a0 = dataset.arrays_with_condition(condition0)
    a1 = dataset.arrays_with_condition(condition1)
    if a0.size == 0 or a1.size == 0:
        raise DataError(f"conditions {condition0} and {condition1} must both have arrays")
    arrays = np.concatenate([a0, a1])
    x = np.r_[np.zeros(a0.size), np.ones(a1.size)]
    return arrays, x


def fit_genes(dataset, plugins, arrays, x, genes=None, background=True):
    genes = range(dataset.n_genes) if genes is None else genes
    return [solve_gee(gene_data(dataset, plugins, g, arrays, x), plugins, background)
            for g in genes]


def fit_dataset(dataset, plugins, condition0=None, condition1=None, estimate_offsets=True,
                genes=None):
    """Fold changes for every gene, with array offsets estimated in between.

    The genes are fitted once with ``nu = 0``; the converged fits give the
    group offset (:func:`probelevel.background.estimate_nu`) and every gene
    is refitted with it.

    Returns
    -------
    (list of GeneFitResult, BackgroundFit)
        The second element carries the ``nu`` used in the final pass.
    """
    arrays, x = comparison_arrays(dataset, condition0, condition1)
    plugins = replace(plugins, nu=np.zeros(dataset.n_arrays))
    fits = fit_genes(dataset, plugins, arrays, x, genes)
    if not estimate_offsets:
        return fits, plugins
    ok = [f.status == "converged" for f in fits]
    b1 = np.array([f.beta1 for f, k in zip(fits, ok) if k])
    se = np.array([f.se_beta1 for f, k in zip(fits, ok) if k])
    nu_sel = estimate_nu(b1, se, x)
    nu = np.zeros(dataset.n_arrays)
    nu[arrays] = nu_sel
    plugins = replace(plugins, nu=nu)
    return fit_genes(dataset, plugins, arrays, x, genes), plugins
