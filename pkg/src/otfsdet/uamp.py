"""Message-passing symbol detection on a unitarily transformed linear model.

The observation y = A x + w (A the delay-Doppler coupling matrix, w white
with variance gamma) is rotated through the SVD A = U Lambda V into

    y_bar = U^H y = H x + U^H w,    H = Lambda V,

which keeps the noise white and gives H orthonormal-ish rows that the
Gaussian message approximations like. Detectors provided here:

* detect_uamp_mfic - serial schedule: symbols are updated one at a time and
  every update is pushed into running per-factor interference sums
  (mean M_d, variance N_d) before the next symbol is visited, so each symbol
  sees the freshest interference estimate. This is the flagship detector.
* detect_uamp     - same message equations, fully parallel (Jacobi) schedule.
* detect_amp      - parallel schedule applied directly to (A, y), no SVD.
* detect_lmmse    - one-shot regularized linear equalizer plus hard slicing.
* map_oracle_marginals - exact posterior marginals by enumeration, for tiny
  problems only; the reference the iterative detectors are judged against.

Message algebra, per factor row d and symbol c, with residual scores
s_d = (y_bar_d - M_d) / (N_d + gamma):

    precision   q_c   = sum_d |H_dc|^2 / (N_d + gamma)
    innovation  b_c   = sum_d conj(H_dc) s_d
    pseudo-obs  chi_c = mu_c + b_c / q_c
    posterior   P(alpha) propto  P_prior(alpha) * exp(-q_c |alpha - chi_c|^2)

The posterior is projected back to a Gaussian (mu_c, eta_c); extrinsic means
mu_dc = mu_c - eta_c conj(H_dc) s_d feed the interference sums. A confidence
counter theta = fraction of symbols with max posterior >= 1 - rho_th drives
an early stop, and the best posterior table seen so far (theta strictly
improved) is the one decisions are read from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import coupling_matrix
from .errors import DimensionMismatchError, InvalidArgumentError, NumericalError
from .frames import ConstellationSpec, hard_decision
from . import kernels
from ._numeric import DENOM_FLOOR, EDGE_THRESHOLD, Q_CAP, VAR_FLOOR

DEFAULT_RHO_TH = 0.01
DEFAULT_N_ITER = 20

_LOG_TINY = 1e-300


# --------------------------------------------------------------------------
# model and state containers
# --------------------------------------------------------------------------

@dataclass
class UnitaryModel:
    """Linear observation model with white noise: y_bar = h x + noise."""

    y_bar: np.ndarray
    h: np.ndarray
    gamma: float
    abs2: np.ndarray = None
    _ht: np.ndarray = field(default=None, repr=False, compare=False)
    _abs2t: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.y_bar = np.ascontiguousarray(self.y_bar, dtype=np.complex128)
        self.h = np.ascontiguousarray(self.h, dtype=np.complex128)
        if self.h.ndim != 2 or self.h.shape[0] != self.h.shape[1]:
            raise DimensionMismatchError(f"h must be square, got {self.h.shape}")
        if self.y_bar.shape != (self.h.shape[0],):
            raise DimensionMismatchError(
                f"y_bar shape {self.y_bar.shape} does not match h {self.h.shape}"
            )
        if self.gamma < 0:
            raise InvalidArgumentError(f"gamma must be non-negative, got {self.gamma}")
        if not (np.isfinite(self.h).all() and np.isfinite(self.y_bar).all()):
            raise NumericalError("model contains non-finite entries")
        if self.abs2 is None:
            self.abs2 = self.h.real ** 2 + self.h.imag ** 2

    @property
    def size(self) -> int:
        return self.h.shape[0]

    def edge_arrays(self):
        """Symbol-major copies (column c of h as row c), tiny edges zeroed.

        The detectors run on these masked copies everywhere (initialization,
        sweeps, oracles), so skipping a dead edge is exact arithmetic rather
        than an approximation.
        """
        if self._ht is None:
            ht = np.ascontiguousarray(self.h.T)
            abs2t = np.ascontiguousarray(self.abs2.T)
            dead = abs2t < EDGE_THRESHOLD
            ht[dead] = 0
            abs2t[dead] = 0
            self._ht, self._abs2t = ht, abs2t
        return self._ht, self._abs2t


def unitary_transform(h_dd, y, gamma: float) -> UnitaryModel:
    """Rotate (A, y) through the SVD of A into an equivalent white-noise model."""
    a = coupling_matrix(h_dd)
    y = np.asarray(y, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"coupling matrix must be square, got {a.shape}")
    if y.shape != (a.shape[0],):
        raise DimensionMismatchError(f"y shape {y.shape} does not match {a.shape}")
    if not (np.isfinite(a).all() and np.isfinite(y).all()):
        raise NumericalError("non-finite entries in the observation model")
    try:
        u, sv, vh = np.linalg.svd(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return UnitaryModel(y_bar=u.conj().T @ y, h=sv[:, None] * vh, gamma=float(gamma))


def direct_model(h_dd, y, gamma: float) -> UnitaryModel:
    """Wrap (A, y) without any rotation (the plain-AMP view of the problem)."""
    a = coupling_matrix(h_dd)
    return UnitaryModel(y_bar=np.asarray(y, dtype=np.complex128), h=a, gamma=float(gamma))


@dataclass
class PriorTable:
    """Per-symbol prior pmf over a shared alphabet; rows sum to one."""

    points: np.ndarray
    table: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.complex128)
        self.table = np.ascontiguousarray(self.table, dtype=np.float64)
        if self.points.ndim != 1 or self.table.ndim != 2 \
                or self.table.shape[1] != self.points.shape[0]:
            raise DimensionMismatchError(
                f"prior table {self.table.shape} vs alphabet {self.points.shape}"
            )
        if (self.table < 0).any():
            raise InvalidArgumentError("prior probabilities must be non-negative")
        sums = self.table.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise InvalidArgumentError("prior rows must sum to 1")

    @classmethod
    def uniform(cls, mn: int, alphabet) -> "PriorTable":
        points = alphabet.points if isinstance(alphabet, ConstellationSpec) else alphabet
        points = np.asarray(points, dtype=np.complex128)
        size = points.shape[0]
        return cls(points=points, table=np.full((mn, size), 1.0 / size))

    def project(self):
        """Gaussian moments (mean, variance) of each row; variances floored."""
        m0 = self.table @ self.points
        second = self.table @ (self.points.real ** 2 + self.points.imag ** 2)
        v0 = np.maximum(second - (m0.real ** 2 + m0.imag ** 2), VAR_FLOOR)
        return m0, v0

    @property
    def size(self) -> int:
        return self.table.shape[0]


@dataclass
class BeliefState:
    """Per-symbol quantities the variable nodes own."""

    posterior: np.ndarray  # (MN, A) rows sum to 1
    mu_hat: np.ndarray     # (MN,) posterior means
    eta_hat: np.ndarray    # (MN,) posterior variances (>= VAR_FLOOR)
    mu_edge: np.ndarray    # (MN, MN) extrinsic means, mu_edge[c, d] feeds factor d


@dataclass
class FactorState:
    """Running interference sums owned by the factor nodes."""

    mean: np.ndarray  # (MN,) complex M_d
    var: np.ndarray   # (MN,) float   N_d  (>= 0)


def init_states(model: UnitaryModel, prior: PriorTable):
    """Prior-seeded belief and factor states (iteration-zero messages)."""
    if prior.size != model.size:
        raise DimensionMismatchError(
            f"prior rows {prior.size} vs model size {model.size}"
        )
    ht, abs2t = model.edge_arrays()
    m0, v0 = prior.project()
    bstate = BeliefState(
        posterior=prior.table.copy(),
        mu_hat=m0.copy(),
        eta_hat=v0.copy(),
        mu_edge=np.repeat(m0[:, None], model.size, axis=1),
    )
    fstate = FactorState(mean=ht.T @ m0, var=abs2t.T @ v0)
    return bstate, fstate


# --------------------------------------------------------------------------
# reference message operations (the pure-numpy fallback kernel composes these)
# --------------------------------------------------------------------------

def factor_to_variable(model: UnitaryModel, fstate: FactorState, bstate: BeliefState, c: int):
    """Per-factor Gaussian messages to symbol c: pseudo-observations chi and
    variances tau. Dead edges carry tau = inf (no information)."""
    ht, abs2t = model.edge_arrays()
    h_col, a2 = ht[c], abs2t[c]
    denom = np.maximum(fstate.var + model.gamma, DENOM_FLOOR)
    s = (model.y_bar - fstate.mean) / denom
    tau = np.full(model.size, np.inf)
    chi = np.zeros(model.size, dtype=np.complex128)
    live = a2 > 0.0
    tau[live] = denom[live] / a2[live]
    chi[live] = bstate.mu_hat[c] + tau[live] * np.conj(h_col[live]) * s[live]
    return chi, tau


def variable_update(model: UnitaryModel, c: int, chi, tau, log_prior_row,
                    bstate: BeliefState, fstate: FactorState, points) -> None:
    """Fuse factor messages with the prior, project, and push the update
    into the running interference sums (serial-schedule bookkeeping)."""
    live = np.isfinite(tau)
    inv_tau = np.zeros_like(tau)
    inv_tau[live] = 1.0 / tau[live]
    q = float(inv_tau.sum())
    mu_prev = bstate.mu_hat[c]
    eta_prev = bstate.eta_hat[c]
    if q <= 0.0:
        # unobserved symbol: posterior falls back to the prior
        row = np.exp(log_prior_row - log_prior_row.max())
        row /= row.sum()
        bstate.posterior[c] = row
        mu_new = row @ points
        second = row @ (points.real ** 2 + points.imag ** 2)
        bstate.mu_hat[c] = mu_new
        bstate.eta_hat[c] = max(second - abs(mu_new) ** 2, VAR_FLOOR)
        return
    chi_bar = complex((chi * inv_tau).sum() / q)
    q_eff = min(q, Q_CAP)
    logp = log_prior_row - q_eff * np.abs(points - chi_bar) ** 2
    logp -= logp.max()
    post = np.exp(logp)
    post /= post.sum()
    mu_new = complex(post @ points)
    eta_new = max(float(post @ np.abs(points - mu_new) ** 2), VAR_FLOOR)
    # extrinsic means: subtract this symbol's own influence per factor
    conj_h_s = (chi - mu_prev) * inv_tau  # equals conj(H_dc) s_d on live edges
    mu_edges = mu_new - eta_new * conj_h_s
    ht, abs2t = model.edge_arrays()
    fstate.mean += ht[c] * (mu_edges - bstate.mu_edge[c])
    fstate.var += abs2t[c] * (eta_new - eta_prev)
    np.maximum(fstate.var, 0.0, out=fstate.var)
    np.copyto(bstate.mu_edge[c], mu_edges, where=live)
    bstate.posterior[c] = post
    bstate.mu_hat[c] = mu_new
    bstate.eta_hat[c] = eta_new


def reference_sweep(model: UnitaryModel, bstate: BeliefState, fstate: FactorState,
                    log_prior: np.ndarray, points: np.ndarray, order: np.ndarray,
                    position_hook=None) -> None:
    """One serial sweep built from the two reference operations.

    Slower than the kernels but handy for oracle checks; position_hook, when
    given, runs after every symbol update.
    """
    for c in order:
        chi, tau = factor_to_variable(model, fstate, bstate, int(c))
        variable_update(model, int(c), chi, tau, log_prior[int(c)], bstate, fstate, points)
        if position_hook is not None:
            position_hook(int(c))


# --------------------------------------------------------------------------
# convergence bookkeeping
# --------------------------------------------------------------------------

def convergence_indicator(posterior: np.ndarray, rho_th: float = DEFAULT_RHO_TH) -> float:
    """Fraction of symbols whose posterior mass concentrates above 1 - rho_th."""
    return float(np.mean(posterior.max(axis=1) >= 1.0 - rho_th))


def decide(posterior: np.ndarray, points: np.ndarray):
    """Argmax decisions (ties resolve to the lowest alphabet label)."""
    idx = posterior.argmax(axis=1)
    return points[idx], idx


class _FreezeTracker:
    """Tracks theta per iteration plus the table decisions are read from.

    With freeze_best (the default) the table refreshes only when theta
    strictly improves on the previous iteration (and unconditionally on the
    first one, so decisions are always defined); that keeps the most settled
    posterior seen so far. With freeze_best=False the table simply mirrors
    the latest posterior while the theta trace is still recorded, for
    schedules whose final state is the decision state by construction.
    """

    def __init__(self, rho_th: float, freeze_best: bool = True):
        self.rho_th = rho_th
        self.freeze_best = freeze_best
        self.theta_prev = 0.0
        self.table = None
        self.trace = []

    def update(self, posterior: np.ndarray) -> float:
        theta = convergence_indicator(posterior, self.rho_th)
        if self.table is None or not self.freeze_best or theta > self.theta_prev:
            self.table = posterior.copy()
        self.trace.append(theta)
        self.theta_prev = theta
        return theta


@dataclass
class DetectorReport:
    """Everything a caller might want to know about one detection run."""

    symbols: np.ndarray         # decided constellation points
    indices: np.ndarray         # decided alphabet labels
    posterior: np.ndarray       # last computed posterior table
    frozen: np.ndarray          # table decisions were read from
    theta_trace: np.ndarray     # confidence fraction per iteration
    iterations: int             # iterations actually executed
    mu_hat: np.ndarray          # final posterior means
    eta_hat: np.ndarray         # final posterior variances
    decision_trace: np.ndarray  # (n_iter, MN) frozen-argmax after each iteration
    extras: dict = field(default_factory=dict)


def _finish_report(freeze: _FreezeTracker, bstate_post, mu_hat, eta_hat,
                   points, n_iter, decision_rows, extras=None) -> DetectorReport:
    frozen = freeze.table
    symbols, idx = decide(frozen, points)
    rows = np.asarray(decision_rows, dtype=np.int16)
    if rows.shape[0] < n_iter:  # early stop: repeat the final decisions
        pad = np.repeat(rows[-1:], n_iter - rows.shape[0], axis=0)
        rows = np.concatenate([rows, pad], axis=0)
    return DetectorReport(
        symbols=symbols,
        indices=idx,
        posterior=bstate_post,
        frozen=frozen,
        theta_trace=np.asarray(freeze.trace),
        iterations=len(freeze.trace),
        mu_hat=mu_hat,
        eta_hat=eta_hat,
        decision_trace=rows,
        extras=extras or {},
    )


def resolve_order(order, mn: int) -> np.ndarray:
    """Accept 'forward', 'backward', or an explicit visiting permutation."""
    if isinstance(order, str):
        if order == "forward":
            return np.arange(mn, dtype=np.int64)
        if order == "backward":
            return np.arange(mn - 1, -1, -1, dtype=np.int64)
        raise InvalidArgumentError(f"unknown order {order!r}")
    idx = np.asarray(order, dtype=np.int64)
    if idx.shape != (mn,) or not np.array_equal(np.sort(idx), np.arange(mn)):
        raise InvalidArgumentError("order must be a permutation of range(MN)")
    return idx


def _log_table(table: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(table, _LOG_TINY))


def _check_n_iter(n_iter: int) -> int:
    if int(n_iter) != n_iter or n_iter < 1:
        raise InvalidArgumentError(f"n_iter must be a positive integer, got {n_iter}")
    return int(n_iter)


# --------------------------------------------------------------------------
# serial-schedule detector
# --------------------------------------------------------------------------

class SerialEngine:
    """Serial message-feedback engine with state that persists across calls.

    detect_uamp_mfic drives this for a fixed iteration budget; the
    bidirectional variants step it one sweep at a time.
    """

    def __init__(self, model: UnitaryModel, prior: PriorTable,
                 order="forward", rho_th: float = DEFAULT_RHO_TH, backend=None):
        self.model = model
        self.points = prior.points
        self.order = resolve_order(order, model.size)
        self.log_prior = _log_table(prior.table)
        self.bstate, self.fstate = init_states(model, prior)
        self.freeze = _FreezeTracker(rho_th)
        self.decision_rows = []
        self._sweep = kernels.get_sweep(backend)
        self._ht, self._abs2t = model.edge_arrays()

    def step(self) -> float:
        """Run one full sweep; returns the updated confidence fraction."""
        b, f = self.bstate, self.fstate
        self._sweep(self._ht, self._abs2t, self.model.y_bar, self.model.gamma,
                    self.points, self.log_prior, self.order,
                    b.mu_edge, b.eta_hat, b.mu_hat, f.mean, f.var, b.posterior)
        theta = self.freeze.update(b.posterior)
        self.decision_rows.append(self.freeze.table.argmax(axis=1))
        return theta

    def report(self, n_iter: int, extras=None) -> DetectorReport:
        b = self.bstate
        return _finish_report(self.freeze, b.posterior, b.mu_hat, b.eta_hat,
                              self.points, n_iter, self.decision_rows, extras)


def detect_uamp_mfic(model: UnitaryModel, prior: PriorTable,
                     n_iter: int = DEFAULT_N_ITER, order="forward",
                     rho_th: float = DEFAULT_RHO_TH, backend=None) -> DetectorReport:
    """Serial message-feedback detector (the flagship schedule)."""
    n_iter = _check_n_iter(n_iter)
    engine = SerialEngine(model, prior, order=order, rho_th=rho_th, backend=backend)
    for _ in range(n_iter):
        if engine.step() >= 1.0:
            break
    return engine.report(n_iter)


# --------------------------------------------------------------------------
# parallel-schedule detectors
# --------------------------------------------------------------------------

def _parallel_detect(model: UnitaryModel, prior: PriorTable, n_iter: int,
                     rho_th: float) -> DetectorReport:
    """Jacobi version: every symbol consumes the previous iteration's sums."""
    n_iter = _check_n_iter(n_iter)
    if prior.size != model.size:
        raise DimensionMismatchError(f"prior rows {prior.size} vs model {model.size}")
    ht, abs2t = model.edge_arrays()
    h_m, a2_m = ht.T, abs2t.T
    points = prior.points
    log_prior = _log_table(prior.table)
    m0, v0 = prior.project()

    mu, eta = m0.copy(), v0.copy()
    post = prior.table.copy()
    f_mean = h_m @ mu
    f_var = a2_m @ eta
    freeze = _FreezeTracker(rho_th)
    decision_rows = []

    for _ in range(n_iter):
        denom = np.maximum(f_var + model.gamma, DENOM_FLOOR)
        s = (model.y_bar - f_mean) / denom
        q = abs2t @ (1.0 / denom)
        b = ht.conj() @ s
        live = q > 0.0
        chi = np.where(live, mu + b / np.where(live, q, 1.0), 0.0)
        q_eff = np.minimum(q, Q_CAP)
        logp = log_prior - q_eff[:, None] * np.abs(points[None, :] - chi[:, None]) ** 2
        logp -= logp.max(axis=1, keepdims=True)
        post = np.exp(logp)
        post /= post.sum(axis=1, keepdims=True)
        post[~live] = prior.table[~live]
        mu = post @ points
        eta = np.maximum(
            np.einsum("ca,ca->c", post, np.abs(points[None, :] - mu[:, None]) ** 2),
            VAR_FLOOR,
        )
        theta = freeze.update(post)
        decision_rows.append(freeze.table.argmax(axis=1))
        if theta >= 1.0:
            break
        # every factor re-sums the fresh extrinsic messages for the next round
        f_var = a2_m @ eta
        f_mean = h_m @ mu - s * f_var

    return _finish_report(freeze, post, mu, eta, points, n_iter, decision_rows)


def detect_uamp(model: UnitaryModel, prior: PriorTable,
                n_iter: int = DEFAULT_N_ITER, rho_th: float = DEFAULT_RHO_TH) -> DetectorReport:
    """Parallel-schedule detector on the SVD-rotated model."""
    return _parallel_detect(model, prior, n_iter, rho_th)


def detect_amp(h_dd, y, prior: PriorTable, gamma: float,
               n_iter: int = DEFAULT_N_ITER, rho_th: float = DEFAULT_RHO_TH) -> DetectorReport:
    """Parallel-schedule detector straight on the coupling matrix (no SVD)."""
    return _parallel_detect(direct_model(h_dd, y, gamma), prior, n_iter, rho_th)


# --------------------------------------------------------------------------
# one-shot baselines and the exact oracle
# --------------------------------------------------------------------------

def detect_lmmse(h_dd, y, gamma: float, spec: ConstellationSpec) -> np.ndarray:
    """Regularized linear equalizer with hard decisions."""
    a = coupling_matrix(h_dd)
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != (a.shape[0],):
        raise DimensionMismatchError(f"y shape {y.shape} vs matrix {a.shape}")
    gram = a.conj().T @ a + max(gamma, VAR_FLOOR) * np.eye(a.shape[1])
    try:
        xhat = np.linalg.solve(gram, a.conj().T @ y)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"equalizer solve failed: {exc}") from exc
    return hard_decision(xhat, spec)


MAP_ENUM_LIMIT = 2 ** 20


def map_oracle_marginals(h, y, gamma: float, prior: PriorTable,
                         chunk_size: int = 1 << 13) -> np.ndarray:
    """Exact per-symbol posterior marginals by full enumeration.

    Works on any (h, y) pair with white noise; the hypothesis count
    A**MN must stay below MAP_ENUM_LIMIT.
    """
    a = coupling_matrix(h)
    y = np.asarray(y, dtype=np.complex128)
    mn = a.shape[0]
    points = prior.points
    size = points.shape[0]
    if prior.size != mn or y.shape != (mn,):
        raise DimensionMismatchError("prior / observation sizes disagree")
    total = size ** mn
    if total > MAP_ENUM_LIMIT:
        raise InvalidArgumentError(
            f"{size}**{mn} hypotheses exceed the enumeration limit {MAP_ENUM_LIMIT}"
        )
    gamma_eff = max(float(gamma), VAR_FLOOR)
    log_table = _log_table(prior.table)
    powers = size ** np.arange(mn, dtype=np.int64)
    cols = np.arange(mn)

    logw = np.empty(total)
    for start in range(0, total, chunk_size):
        idx = np.arange(start, min(start + chunk_size, total), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % size
        x = points[digits]
        resid = y[None, :] - x @ a.T
        logw[start:start + idx.shape[0]] = (
            -(np.abs(resid) ** 2).sum(axis=1) / gamma_eff
            + log_table[cols[None, :], digits].sum(axis=1)
        )

    w = np.exp(logw - logw.max())
    marg = np.zeros((mn, size))
    for start in range(0, total, chunk_size):
        idx = np.arange(start, min(start + chunk_size, total), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % size
        chunk_w = w[start:start + idx.shape[0]]
        for c in range(mn):
            marg[c] += np.bincount(digits[:, c], weights=chunk_w, minlength=size)
    marg /= marg.sum(axis=1, keepdims=True)
    return marg
