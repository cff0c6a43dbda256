"""Singular spectrum analysis: trend / seasonal / noise decomposition.

Each channel is embedded into its Hankel trajectory matrix, factorised with a
Jacobi SVD, the eigentriples are grouped into three sets, and each group is
mapped back to a length-N series by anti-diagonal averaging.

Component indices are 0-based throughout: index 0 is the leading eigentriple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, WindowError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class TrajectoryMatrix:
    entries: np.ndarray
    window: int

    @property
    def columns(self) -> int:
        return self.entries.shape[1]

    @property
    def series_length(self) -> int:
        return self.window + self.columns - 1


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.sigma)


@dataclass(frozen=True)
class Grouping:
    trend_idx: tuple
    seasonal_idx: tuple
    noise_idx: tuple

    def as_dict(self):
        return {"trend": self.trend_idx, "seasonal": self.seasonal_idx, "noise": self.noise_idx}


@dataclass(frozen=True)
class SsaConfig:
    """Decomposition settings.

    window: embedding length L; ``None`` selects floor(N/4) clamped to [2, N-1].
    tau: cumulative singular-value energy closing the seasonal group.
    strategy: ``energy-rank`` or ``periodogram``.
    reconstruction: ``standard`` (U sigma V^T) or ``sqrt`` (U sqrt(sigma) V^T).
    """

    window: int | None = None
    tau: float = 0.90
    strategy: str = "energy-rank"
    reconstruction: str = "standard"
    crossing_threshold: float = 1.0
    pair_gap: float = 0.05


@dataclass
class DecompositionResult:
    """Per-channel components, each an array of shape (C, N)."""

    trend: np.ndarray
    seasonal: np.ndarray
    noise: np.ndarray
    groupings: list = field(default_factory=list)
    window: int = 0

    def stacked(self) -> np.ndarray:
        """(3, C, N) array in trend, seasonal, noise order."""
        return np.stack([self.trend, self.seasonal, self.noise])


def default_window(n: int) -> int:
    return int(min(max(n // 4, 2), n - 1))


def embed(channel, window: int) -> TrajectoryMatrix:
    x = np.asarray(channel, dtype=np.float64)
    n = x.shape[0]
    # L = N is allowed and gives a single column; the default window stays below N
    if not 2 <= window <= n:
        raise WindowError(f"window {window} outside [2, {n}] for series of length {n}")
    k = n - window + 1
    rows = np.lib.stride_tricks.sliding_window_view(x, k)
    return TrajectoryMatrix(np.array(rows[:window], copy=True), window)


def _round_robin(n):
    """Pairings for a parallel Jacobi sweep: n-1 rounds of disjoint pairs."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p), max(p)) for p in pairs if -1 not in p]
        rounds.append((np.array([p for p, _ in pairs], dtype=int),
                       np.array([q for _, q in pairs], dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _householder_r(a):
    """Upper-triangular factor R of a = QR (m >= n) and the reflectors giving Q."""
    r = a.copy()
    m, n = r.shape
    reflectors = []
    for j in range(n):
        x = r[j:, j]
        norm = np.linalg.norm(x)
        v = x.copy()
        v[0] += norm if x[0] >= 0 else -norm
        vnorm = np.linalg.norm(v)
        if vnorm == 0:
            reflectors.append(None)
            continue
        v /= vnorm
        r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
        reflectors.append(v)
    return np.triu(r[:n]), reflectors


def _apply_q(reflectors, b, m):
    """Compute Q @ b for the reflectors from :func:`_householder_r`."""
    out = np.zeros((m, b.shape[1]))
    out[:b.shape[0]] = b
    for j in range(len(reflectors) - 1, -1, -1):
        v = reflectors[j]
        if v is not None:
            out[j:] -= 2.0 * np.outer(v, v @ out[j:])
    return out


def _one_sided_jacobi(a, tol, max_sweeps):
    """Orthogonalise the columns of ``a`` (m x n) by plane rotations.

    Returns the rotated matrix and the accumulated rotation V, so that the
    rotated matrix equals a @ V. Columns are processed as rows of the
    transpose for contiguous access; each round rotates disjoint pairs at once.
    """
    at = np.array(a.T, copy=True)
    n = at.shape[0]
    vt = np.eye(n)
    if n < 2:
        return at.T, vt.T
    rounds = _round_robin(n)
    # columns at rounding-noise level are left alone
    floor = (np.finfo(float).eps * np.linalg.norm(at)) ** 2
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            ap, aq = at[p], at[q]
            alpha = np.einsum("ij,ij->i", ap, ap)
            beta = np.einsum("ij,ij->i", aq, aq)
            gamma = np.einsum("ij,ij->i", ap, aq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (alpha > floor) & (beta > floor)
            if not active.any():
                continue
            rotated = True
            if not active.all():
                p, q = p[active], q[active]
                alpha, beta, gamma = alpha[active], beta[active], gamma[active]
                ap, aq = at[p], at[q]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            at[p] = c * ap - s * aq
            at[q] = s * ap + c * aq
            vp, vq = vt[p], vt[q]
            vt[p] = c * vp - s * vq
            vt[q] = s * vp + c * vq
        if not rotated:
            return at.T, vt.T
    raise NumericalError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")


def _complete_basis(u, valid):
    """Replace columns of ``u`` not flagged ``valid`` by an orthonormal completion."""
    m, r = u.shape
    basis = [u[:, j] for j in range(r) if valid[j]]
    candidates = iter(np.eye(m))
    for j in range(r):
        if valid[j]:
            continue
        while True:
            e = next(candidates)
            w = e.copy()
            for _ in range(2):
                for b in basis:
                    w -= (b @ w) * b
            norm = np.linalg.norm(w)
            if norm > 1e-6:
                w /= norm
                break
        u[:, j] = w
        basis.append(w)
    return u


def svd(matrix, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS) -> SvdResult:
    """Thin SVD with descending singular values and a fixed sign convention.

    For each left singular vector the entry of largest magnitude is made
    nonnegative (lowest row index on ties); the right vector flips with it.
    """
    y = matrix.entries if isinstance(matrix, TrajectoryMatrix) else np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise NumericalError("SVD input contains non-finite entries")
    transposed = y.shape[0] < y.shape[1]
    a = y.T if transposed else y
    r_factor, reflectors = _householder_r(a)
    rotated, right = _one_sided_jacobi(r_factor, tol, max_sweeps)
    rotated = _apply_q(reflectors, rotated, a.shape[0])
    sigma = np.linalg.norm(rotated, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, rotated, right = sigma[order], rotated[:, order], right[:, order]
    cutoff = max(a.shape) * np.finfo(float).eps * (sigma[0] if sigma.size else 0.0)
    valid = sigma > cutoff
    left = np.zeros_like(rotated)
    left[:, valid] = rotated[:, valid] / sigma[valid]
    sigma = np.where(valid, sigma, 0.0)
    if not valid.all():
        left = _complete_basis(left, valid)
    u, v = (right, left) if transposed else (left, right)
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivot, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return SvdResult(u * signs, sigma, v * signs)


def hankelize(u, v, weight=1.0):
    """Anti-diagonal average of ``weight * outer(u, v)`` as a length L+K-1 series."""
    total = np.convolve(u, v) * weight
    length = len(u) + len(v) - 1
    counts = np.minimum.reduce([np.arange(1, length + 1), np.arange(length, 0, -1),
                                np.full(length, min(len(u), len(v)))])
    return total / counts


def elementary_series(svd_result: SvdResult, reconstruction="standard") -> np.ndarray:
    """Hankelized series of every eigentriple, shape (r, N)."""
    weights = svd_result.sigma if reconstruction == "standard" else np.sqrt(svd_result.sigma)
    if reconstruction not in ("standard", "sqrt"):
        raise ValueError(f"unknown reconstruction {reconstruction!r}")
    return np.array([hankelize(svd_result.U[:, i], svd_result.V[:, i], weights[i])
                     for i in range(svd_result.rank)])


def reconstruct_component(svd_result: SvdResult, indices, reconstruction="standard") -> np.ndarray:
    n = svd_result.U.shape[0] + svd_result.V.shape[0] - 1
    out = np.zeros(n)
    if reconstruction not in ("standard", "sqrt"):
        raise ValueError(f"unknown reconstruction {reconstruction!r}")
    for i in indices:
        w = svd_result.sigma[i] if reconstruction == "standard" else np.sqrt(svd_result.sigma[i])
        out += hankelize(svd_result.U[:, i], svd_result.V[:, i], w)
    return out


def _zero_crossings(series):
    signs = np.sign(series)
    signs = signs[signs != 0]
    return int(np.count_nonzero(np.diff(signs)))


def group_components(svd_result: SvdResult, reconstructed_series=None, config: SsaConfig = SsaConfig()) -> Grouping:
    r = svd_result.rank
    if r <= 1:
        return Grouping((0,), (), ())
    if config.strategy == "energy-rank":
        energy = svd_result.sigma ** 2
        total = energy.sum()
        if total == 0:
            return Grouping((0,), (), tuple(range(1, r)))
        share = np.cumsum(energy) / total
        m = int(np.argmax(share >= config.tau - 1e-15))
        return Grouping((0,), tuple(range(1, m + 1)), tuple(range(m + 1, r)))
    if config.strategy == "periodogram":
        if reconstructed_series is None:
            reconstructed_series = elementary_series(svd_result, config.reconstruction)
        n = reconstructed_series.shape[1]
        limit = 2.0 / n * config.crossing_threshold
        trend = [i for i in range(r)
                 if svd_result.sigma[i] > 0 and _zero_crossings(reconstructed_series[i]) / n < limit]
        if not trend:
            trend = [0]
        seasonal = []
        i = 0
        while i < r - 1:
            a, b = svd_result.sigma[i], svd_result.sigma[i + 1]
            if i in trend or i + 1 in trend or a == 0:
                i += 1
                continue
            if (a - b) / a < config.pair_gap:
                seasonal += [i, i + 1]
                i += 2
            else:
                i += 1
        used = set(trend) | set(seasonal)
        return Grouping(tuple(trend), tuple(seasonal), tuple(i for i in range(r) if i not in used))
    raise ValueError(f"unknown grouping strategy {config.strategy!r}")


def decompose_channel(x, config: SsaConfig = SsaConfig()):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        raise WindowError(f"series of length {n} too short to decompose")
    window = config.window if config.window is not None else default_window(n)
    result = svd(embed(x, window))
    pieces = elementary_series(result, config.reconstruction)
    grouping = group_components(result, pieces, config)

    def collect(idx):
        return pieces[list(idx)].sum(axis=0) if idx else np.zeros(n)

    return collect(grouping.trend_idx), collect(grouping.seasonal_idx), collect(grouping.noise_idx), grouping


def decompose(series, config: SsaConfig = SsaConfig()) -> DecompositionResult:
    """Decompose every channel of ``series`` (an (C, N) array or a MultichannelSeries)."""
    values = np.atleast_2d(np.asarray(getattr(series, "values", series), dtype=np.float64))
    parts = [decompose_channel(row, config) for row in values]
    n = values.shape[1]
    window = config.window if config.window is not None else default_window(n)
    return DecompositionResult(
        trend=np.array([p[0] for p in parts]),
        seasonal=np.array([p[1] for p in parts]),
        noise=np.array([p[2] for p in parts]),
        groupings=[p[3] for p in parts],
        window=window,
    )
