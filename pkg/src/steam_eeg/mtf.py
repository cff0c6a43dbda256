"""Markov field imaging: region graph, potentials, belief propagation, rendering.

Regions form a ``rows x cols`` grid (EEG channel x time segment). Every region
carries a discrete state on S uniform levels in [-1, 1]. The joint
distribution is

    P(x) = exp(-sum_i phi_i(x_i) - sum_(i,j) beta_ij (u(x_i) - u(x_j))^2) / Z

with unary potentials phi_i(s) = -w(s) . f_i built from region features.
Marginals are inferred by log-domain sum-product and rendered to an image by
normalised Gaussian interpolation over the grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError, ConfigError, DataError, ShapeError
from .tensor import glorot_bound, logsumexp_np, param_rng

BRUTE_FORCE_LIMIT = 10 ** 6


def state_levels(state_count: int) -> np.ndarray:
    if state_count < 2:
        raise ConfigError(f"need at least 2 states, got {state_count}")
    return -1.0 + 2.0 * np.arange(state_count) / (state_count - 1)


@dataclass
class MtfGraph:
    rows: int
    cols: int
    edges: np.ndarray
    state_count: int = 8
    unary: np.ndarray | None = None
    pairwise_beta: np.ndarray | None = None
    unary_weights: np.ndarray | None = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ConfigError("graph has a self-loop")
        canon = {tuple(sorted(e)) for e in self.edges.tolist()}
        if len(canon) != len(self.edges):
            raise ConfigError("graph has duplicate edges")
        state_levels(self.state_count)
        if self.pairwise_beta is None:
            self.pairwise_beta = np.zeros(len(self.edges))
        self.pairwise_beta = np.broadcast_to(np.asarray(self.pairwise_beta, dtype=float),
                                             (len(self.edges),)).copy()
        if np.any(self.pairwise_beta < 0):
            raise ConfigError("pairwise strengths must be nonnegative")
        if self.unary is None:
            self.unary = np.zeros((self.node_count, self.state_count))
        self.unary = np.asarray(self.unary, dtype=float)
        if self.unary.shape != (self.node_count, self.state_count):
            raise ShapeError(f"unary table must be {(self.node_count, self.state_count)}, got {self.unary.shape}")
        if not np.all(np.isfinite(self.unary)):
            raise DataError("unary potentials must be finite")

    @property
    def node_count(self) -> int:
        return self.rows * self.cols

    @property
    def levels(self) -> np.ndarray:
        return state_levels(self.state_count)

    @property
    def coords(self) -> np.ndarray:
        """(row, col) grid position of every node."""
        r, c = np.divmod(np.arange(self.node_count), self.cols)
        return np.stack([r, c], axis=1)

    def is_tree(self) -> bool:
        return len(self.edges) == self.node_count - 1 and self.is_connected()

    def is_connected(self) -> bool:
        if self.node_count <= 1:
            return True
        adjacency = [[] for _ in range(self.node_count)]
        for i, j in self.edges:
            adjacency[i].append(j)
            adjacency[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adjacency[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.node_count

    def with_potentials(self, unary=None, beta=None) -> "MtfGraph":
        return MtfGraph(self.rows, self.cols, self.edges, self.state_count,
                        self.unary if unary is None else unary,
                        self.pairwise_beta if beta is None else beta,
                        self.unary_weights)


@dataclass
class MarginalField:
    marginals: np.ndarray
    converged: bool = True
    iterations: int = 0

    def expected_levels(self, levels) -> np.ndarray:
        return self.marginals @ levels


@dataclass
class MtfImage:
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 8:
            raise ShapeError(f"image must be at least 8x8, got {self.pixels.shape}")
        if np.any(self.pixels < 0) or np.any(self.pixels > 1):
            raise DataError("image pixels must lie in [0, 1]")


def build_region_graph(channels: int, segments: int, topology="grid", state_count=8, beta=0.0) -> MtfGraph:
    """Grid of ``channels x segments`` regions with 4-neighbour edges.

    ``chain`` links all regions in row-major order instead. One channel gives
    a chain either way.
    """
    if channels < 1 or segments < 1:
        raise ConfigError("channels and segments must be positive")
    m = channels * segments
    if topology == "chain":
        edges = [(i, i + 1) for i in range(m - 1)]
    elif topology == "grid":
        edges = []
        for c in range(channels):
            for t in range(segments):
                i = c * segments + t
                if t + 1 < segments:
                    edges.append((i, i + 1))
                if c + 1 < channels:
                    edges.append((i, i + segments))
    else:
        raise ConfigError(f"unknown topology {topology!r}")
    return MtfGraph(channels, segments, np.array(edges, dtype=int).reshape(-1, 2),
                    state_count, pairwise_beta=beta)


def unary_table(features, weights) -> np.ndarray:
    """phi[..., i, s] = -w_i(s) . f_i for features (..., M, d) and weights (S, d) or (M, S, d)."""
    features = np.asarray(features, dtype=float)
    weights = np.asarray(weights, dtype=float)
    d = features.shape[-1]
    if weights.shape[-1] != d:
        raise ShapeError(f"feature dim {d} does not match weight dim {weights.shape[-1]}")
    if weights.ndim == 2:
        return -features @ weights.T
    if weights.ndim == 3 and weights.shape[0] == features.shape[-2]:
        return -np.einsum("...md,msd->...ms", features, weights)
    raise ShapeError(f"weights must be (S, d) or (M, S, d), got {weights.shape}")


def unary_potentials(features, weights, graph: MtfGraph) -> MtfGraph:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] != graph.node_count:
        raise ShapeError(f"need one feature vector per region ({graph.node_count}), got {features.shape}")
    weights = np.asarray(weights, dtype=float)
    if weights.shape[-2] != graph.state_count:
        raise ShapeError(f"weights need {graph.state_count} state rows, got {weights.shape}")
    out = graph.with_potentials(unary=unary_table(features, weights))
    out.unary_weights = weights
    return out


def pairwise_energy(beta, s_a, s_b, levels) -> float:
    if beta < 0:
        raise ConfigError("pairwise strength must be nonnegative")
    diff = levels[s_a] - levels[s_b]
    return beta * diff * diff


def joint_log_prob_unnormalized(graph: MtfGraph, assignment) -> float:
    x = np.asarray(assignment, dtype=int)
    levels = graph.levels
    total = graph.unary[np.arange(graph.node_count), x].sum()
    if len(graph.edges):
        i, j = graph.edges[:, 0], graph.edges[:, 1]
        total += np.sum(graph.pairwise_beta * (levels[x[i]] - levels[x[j]]) ** 2)
    return -float(total)


def _log_joint_all(graph, assignments):
    levels = graph.levels
    lp = -graph.unary[np.arange(graph.node_count), assignments].sum(axis=1)
    for (i, j), beta in zip(graph.edges, graph.pairwise_beta):
        lp -= beta * (levels[assignments[:, i]] - levels[assignments[:, j]]) ** 2
    return lp


def brute_force_marginals(graph: MtfGraph) -> MarginalField:
    """Exact marginals by enumerating every joint state."""
    m, s = graph.node_count, graph.state_count
    if s ** m > BRUTE_FORCE_LIMIT:
        raise CapacityError(f"{s}^{m} joint states exceed the enumeration limit")
    assignments = np.array(list(itertools.product(range(s), repeat=m)), dtype=int).reshape(-1, m)
    lp = _log_joint_all(graph, assignments)
    log_z = logsumexp_np(lp, axis=0)
    p = np.exp(lp - log_z)
    marginals = np.zeros((m, s))
    for i in range(m):
        marginals[i] = np.bincount(assignments[:, i], weights=p, minlength=s)
    marginals /= marginals.sum(axis=1, keepdims=True)
    return MarginalField(marginals, True, 0)


@dataclass(frozen=True)
class _MessageLayout:
    src: np.ndarray
    dst: np.ndarray
    rev: np.ndarray
    incidence: np.ndarray
    log_pair: np.ndarray


def _layout(graph: MtfGraph) -> _MessageLayout:
    e = len(graph.edges)
    src = np.empty(2 * e, dtype=int)
    dst = np.empty(2 * e, dtype=int)
    src[0::2], dst[0::2] = graph.edges[:, 0], graph.edges[:, 1]
    src[1::2], dst[1::2] = graph.edges[:, 1], graph.edges[:, 0]
    rev = np.arange(2 * e) ^ 1
    incidence = np.zeros((graph.node_count, 2 * e))
    incidence[dst, np.arange(2 * e)] = 1.0
    levels = graph.levels
    sq = (levels[:, None] - levels[None, :]) ** 2
    beta = np.repeat(graph.pairwise_beta, 2)
    return _MessageLayout(src, dst, rev, incidence, -beta[:, None, None] * sq[None])


def belief_propagation_batch(graph: MtfGraph, unary, max_iters=100, tol=1e-6, damping=0.5):
    """Sum-product on a batch of unary tables (B, M, S) sharing one graph.

    Messages live in the log domain and are updated synchronously. Damping
    mixes old and new messages in probability space and is applied on loopy
    graphs only; on trees undamped updates reach the exact fixed point after
    diameter + 1 sweeps. Returns (marginals (B, M, S), converged, iterations).
    """
    unary = np.asarray(unary, dtype=float)
    if unary.ndim != 3 or unary.shape[1:] != (graph.node_count, graph.state_count):
        raise ShapeError(f"unary batch must be (B, {graph.node_count}, {graph.state_count}), got {unary.shape}")
    if not 0 <= damping < 1:
        raise ConfigError("damping must lie in [0, 1)")
    lay = _layout(graph)
    bsz, s = unary.shape[0], graph.state_count
    msgs = np.full((bsz, len(lay.src), s), -np.log(s))
    use_damping = damping > 0 and not graph.is_tree() and len(lay.src) > 0
    log_keep, log_new = np.log(damping) if use_damping else 0.0, np.log1p(-damping) if use_damping else 0.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        if len(lay.src) == 0:
            converged = True
            break
        incoming = np.matmul(lay.incidence, msgs)
        pre = -unary[:, lay.src] + incoming[:, lay.src] - msgs[:, lay.rev]
        new = logsumexp_np(pre[:, :, :, None] + lay.log_pair[None], axis=2)
        new -= logsumexp_np(new, axis=2, keepdims=True)
        if use_damping:
            new = np.logaddexp(log_new + new, log_keep + msgs)
            new -= logsumexp_np(new, axis=2, keepdims=True)
        change = np.max(np.abs(new - msgs))
        msgs = new
        if change < tol:
            converged = True
            break
    belief = -unary + np.matmul(lay.incidence, msgs)
    belief -= logsumexp_np(belief, axis=2, keepdims=True)
    marginals = np.exp(belief)
    marginals /= marginals.sum(axis=2, keepdims=True)
    return marginals, converged, iterations


def belief_propagation(graph: MtfGraph, max_iters=100, tol=1e-6, damping=0.5) -> MarginalField:
    marginals, converged, iterations = belief_propagation_batch(
        graph, graph.unary[None], max_iters, tol, damping)
    return MarginalField(marginals[0], converged, iterations)


def interpolation_weights(graph: MtfGraph, height=64, width=64) -> np.ndarray:
    """(H*W, M) normalised Gaussian weights from every node to every pixel.

    Nodes sit at the centres of a rows x cols tiling of the image; each axis
    uses a bandwidth of half the node spacing along that axis.
    """
    rows, cols = graph.rows, graph.cols
    dy, dx = height / rows, width / cols
    coords = graph.coords
    ny = (coords[:, 0] + 0.5) * dy
    nx = (coords[:, 1] + 0.5) * dx
    py, px = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5, indexing="ij")
    sy, sx = 0.5 * dy, 0.5 * dx
    logw = -((py.reshape(-1, 1) - ny) ** 2 / (2 * sy * sy) + (px.reshape(-1, 1) - nx) ** 2 / (2 * sx * sx))
    logw -= logsumexp_np(logw, axis=1, keepdims=True)
    return np.exp(logw)


def render_batch(expected_levels, weights, height, width) -> np.ndarray:
    """Images (B, H, W) in [0, 1] from expected levels (B, M) in [-1, 1]."""
    values = (np.asarray(expected_levels) + 1.0) / 2.0
    images = (values @ weights.T).reshape(-1, height, width)
    return np.clip(images, 0.0, 1.0)


def render_topographic_image(marginals, graph: MtfGraph, height=64, width=64) -> MtfImage:
    m = getattr(marginals, "marginals", marginals)
    levels = np.asarray(m) @ graph.levels
    weights = interpolation_weights(graph, height, width)
    return MtfImage(render_batch(levels[None], weights, height, width)[0])


def structured_unary_weights(state_count, feature_dim, seed=0, name="mtf.unary") -> np.ndarray:
    """Per-state weight matrix w(s) = u_s * g with one glorot-drawn direction g.

    States then order along a single projection of the region features, so
    the expected level is a monotone function of that projection.
    """
    bound = glorot_bound((state_count, feature_dim))
    g = param_rng(seed, name).uniform(-bound, bound, size=feature_dim)
    return np.outer(state_levels(state_count), g)


@dataclass
class MtfConfig:
    segments: int = 8
    states: int = 8
    beta: float = 1.0
    beta_grid: tuple = (0.1, 1.0, 10.0)
    topology: str = "grid"
    max_iters: int = 100
    tol: float = 1e-6
    damping: float = 0.5
    image_size: int = 64


@dataclass
class MtfStage:
    """Turns batched region features into images; holds the graph and fixed weights."""

    channels: int
    feature_dim: int
    config: MtfConfig = field(default_factory=MtfConfig)
    seed: int = 0

    def __post_init__(self):
        self.config = replace(self.config)
        cfg = self.config
        self.graph = build_region_graph(self.channels, cfg.segments, cfg.topology, cfg.states, cfg.beta)
        self.weights = structured_unary_weights(cfg.states, self.feature_dim, self.seed)
        self.pixel_weights = interpolation_weights(self.graph, cfg.image_size, cfg.image_size)

    def set_beta(self, beta: float):
        self.config.beta = float(beta)
        self.graph = self.graph.with_potentials(beta=float(beta))

    def infer(self, region_features):
        """region_features (B, C, T, d) -> marginals (B, M, S), converged flag."""
        feats = np.asarray(region_features, dtype=float)
        bsz = feats.shape[0]
        unary = unary_table(feats.reshape(bsz, self.graph.node_count, -1), self.weights)
        cfg = self.config
        marginals, converged, _ = belief_propagation_batch(self.graph, unary, cfg.max_iters, cfg.tol, cfg.damping)
        return marginals, converged

    def images(self, region_features):
        marginals, converged = self.infer(region_features)
        levels = marginals @ self.graph.levels
        size = self.config.image_size
        return render_batch(levels, self.pixel_weights, size, size), marginals, converged
