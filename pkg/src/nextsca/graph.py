"""Time-varying digraphs and doubly stochastic mixing schedules.

Agents are indexed ``0..I-1``. An edge ``(j, i)`` means agent ``j`` can send
to agent ``i`` during the slot; self-inclusion in the in-neighborhood is
implicit and never stored.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ._validation import check_positive_int, check_rng, check_square

DEFAULT_FLOOR = 1e-3
DEFAULT_TOL = 1e-12


class GraphError(ValueError):
    """Raised for malformed or insufficiently connected graphs."""


@dataclass(frozen=True)
class DigraphSnapshot:
    n_agents: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        check_positive_int(self.n_agents, "n_agents")
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if not (0 <= j < self.n_agents and 0 <= i < self.n_agents):
                raise GraphError(f"edge ({j}, {i}) has an endpoint outside 0..{self.n_agents - 1}")
            if i == j:
                raise GraphError(f"self-loop ({j}, {i}) must not be stored")
        object.__setattr__(self, "edges", edges)

    def in_neighbors(self, i):
        """N_i^in without ``i`` itself."""
        return sorted(j for j, k in self.edges if k == i)

    def adjacency(self):
        """Boolean matrix ``A`` with ``A[i, j]`` true when ``j`` sends to ``i``."""
        a = np.zeros((self.n_agents, self.n_agents), dtype=bool)
        for j, i in self.edges:
            a[i, j] = True
        return a

    def symmetrized(self):
        return DigraphSnapshot(self.n_agents, self.edges | {(i, j) for j, i in self.edges})

    @property
    def is_symmetric(self):
        return all((i, j) in self.edges for j, i in self.edges)

    def unreachable_pair(self):
        """Return some ``(src, dst)`` with no directed path, or None."""
        return _unreachable_pair(self.n_agents, self.edges)

    @property
    def is_strongly_connected(self):
        return self.unreachable_pair() is None


def _unreachable_pair(n, edges):
    if n == 1:
        return None
    if edges:
        src, dst = zip(*edges)
        graph = csr_matrix((np.ones(len(edges)), (src, dst)), shape=(n, n))
    else:
        graph = csr_matrix((n, n))
    n_comp, labels = connected_components(graph, directed=True, connection="strong")
    if n_comp == 1:
        return None
    # BFS from node 0 forward; anything not reached is a witness
    adj = [[] for _ in range(n)]
    for j, i in edges:
        adj[j].append(i)
    for start in range(n):
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) < n:
            missing = min(set(range(n)) - seen)
            return start, missing
    return None  # pragma: no cover


@dataclass(frozen=True)
class WeightMatrix:
    """Mixing matrix ``W[n]`` together with the snapshot defining its support."""

    entries: np.ndarray
    floor: float = DEFAULT_FLOOR
    snapshot: DigraphSnapshot = None

    def __post_init__(self):
        w = check_square(self.entries, name="weight matrix").copy()
        w.setflags(write=False)
        object.__setattr__(self, "entries", w)
        if self.snapshot is not None and self.snapshot.n_agents != w.shape[0]:
            raise GraphError("snapshot size does not match weight matrix")

    @property
    def n_agents(self):
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def metropolis_weights(snapshot, symmetric=True, floor=DEFAULT_FLOOR):
    """Metropolis-Hastings weights on the (symmetrized) snapshot.

    ``w_ij = 1 / (1 + max(d_i, d_j))`` for undirected neighbors and the
    diagonal absorbs the remainder. With ``symmetric=False`` the snapshot must
    already be undirected.
    """
    if symmetric:
        snapshot = snapshot.symmetrized()
    elif not snapshot.is_symmetric:
        raise GraphError("Metropolis weights need an undirected graph; pass symmetric=True")
    n = snapshot.n_agents
    adj = snapshot.adjacency()
    deg = adj.sum(axis=1)
    w = np.zeros((n, n))
    rows, cols = np.nonzero(adj)
    w[rows, cols] = 1.0 / (1.0 + np.maximum(deg[rows], deg[cols]))
    w[np.diag_indices(n)] = 1.0 - w.sum(axis=1)
    if np.any((w > 0) & (w < floor)):
        raise GraphError(f"Metropolis weight below floor {floor}; lower the floor")
    return WeightMatrix(w, floor=floor, snapshot=snapshot)


def verify_doubly_stochastic(w, tol=DEFAULT_TOL):
    """True iff ``w`` is nonnegative, row and column stochastic within ``tol``,
    and (for a :class:`WeightMatrix`) its positive entries sit on the snapshot's
    edges and self-loops and are at least the floor."""
    mat = np.asarray(w, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        return False
    if np.any(mat < -tol):
        return False
    ones = np.ones(mat.shape[0])
    if np.max(np.abs(mat @ ones - 1.0)) > tol or np.max(np.abs(ones @ mat - 1.0)) > tol:
        return False
    if isinstance(w, WeightMatrix):
        positive = mat > tol
        if np.any(mat[positive] < w.floor):
            return False
        if not np.all(np.diag(positive)):
            return False
        if w.snapshot is not None:
            expected = w.snapshot.adjacency() | np.eye(mat.shape[0], dtype=bool)
            if not np.array_equal(positive, expected):
                return False
    return True


@dataclass(frozen=True)
class TransitionProduct:
    matrix: np.ndarray
    span: tuple


class GraphSchedule:
    """Periodic sequence of snapshots with matching weight matrices.

    Slot ``n`` maps to stored entry ``n % period``; the period is a multiple
    of the window ``B`` so windows stay aligned when the schedule wraps.
    """

    def __init__(self, snapshots, weights, window=1):
        snapshots = list(snapshots)
        weights = list(weights)
        if not snapshots or len(snapshots) != len(weights):
            raise GraphError("need one weight matrix per snapshot")
        self.window = check_positive_int(window, "window")
        if len(snapshots) % self.window:
            raise GraphError("schedule length must be a multiple of the window")
        n = snapshots[0].n_agents
        for s, w in zip(snapshots, weights):
            if s.n_agents != n or w.n_agents != n:
                raise GraphError("all snapshots must have the same agent count")
        self.snapshots = snapshots
        self.weights = weights
        self._mats = [np.asarray(w) for w in weights]

    @property
    def n_agents(self):
        return self.snapshots[0].n_agents

    @property
    def period(self):
        return len(self.snapshots)

    def snapshot(self, n):
        return self.snapshots[n % self.period]

    def weight(self, n):
        """Mixing matrix ``W[n]`` as a read-only array."""
        return self._mats[n % self.period]

    def window_union(self, k):
        edges = set()
        for n in range(k * self.window, (k + 1) * self.window):
            edges |= self.snapshot(n).edges
        return DigraphSnapshot(self.n_agents, frozenset(edges))

    def unreachable_window(self):
        """First ``(k, (src, dst))`` whose window union is not strongly
        connected, or None when every window over one period is fine."""
        for k in range(self.period // self.window):
            pair = self.window_union(k).unreachable_pair()
            if pair is not None:
                return k, pair
        return None

    @property
    def is_b_connected(self):
        return self.unreachable_window() is None

    def is_doubly_stochastic(self, tol=DEFAULT_TOL):
        return all(verify_doubly_stochastic(w, tol) for w in self.weights)

    def transition_product(self, n, l):
        """``P[n, l] = W[n] W[n-1] ... W[l]``."""
        if n < l:
            raise ValueError("need n >= l")
        p = np.eye(self.n_agents)
        for k in range(l, n + 1):
            p = self.weight(k) @ p
        return TransitionProduct(p, (n, l))


def constant_schedule(snapshot, floor=DEFAULT_FLOOR):
    return GraphSchedule([snapshot], [metropolis_weights(snapshot, floor=floor)], window=1)


def schedule_from_matrices(matrices, window=1, floor=DEFAULT_FLOOR, tol=1e-10):
    """Wrap user-supplied (possibly asymmetric) doubly stochastic matrices."""
    snapshots, weights = [], []
    for mat in matrices:
        mat = check_square(mat, name="weight matrix")
        support = mat > 0
        edges = frozenset((j, i) for i, j in zip(*np.nonzero(support)) if i != j)
        snap = DigraphSnapshot(mat.shape[0], edges)
        w = WeightMatrix(mat, floor=floor, snapshot=snap)
        if not verify_doubly_stochastic(w, tol):
            raise GraphError("supplied matrix is not doubly stochastic")
        snapshots.append(snap)
        weights.append(w)
    return GraphSchedule(snapshots, weights, window=window)


def generate_b_connected_schedule(base, B, horizon, seed=0, floor=DEFAULT_FLOOR):
    """Spread the edges of ``base`` over windows of ``B`` slots.

    Each window shuffles the base edges and deals them round-robin to its
    slots, so every window union equals ``base``. ``horizon`` is rounded up
    to a multiple of ``B``; the schedule repeats afterwards.
    """
    B = check_positive_int(B, "B")
    horizon = check_positive_int(horizon, "horizon")
    pair = base.unreachable_pair()
    if pair is not None:
        raise GraphError(
            f"base graph is not strongly connected: no path from {pair[0]} to {pair[1]}"
        )
    if B == 1:
        return constant_schedule(base, floor=floor)
    rng = check_rng(seed)
    n_windows = -(-horizon // B)
    edges = sorted(base.edges)
    snapshots, weights = [], []
    for _ in range(n_windows):
        order = rng.permutation(len(edges))
        slots = [set() for _ in range(B)]
        for k, idx in enumerate(order):
            slots[k % B].add(edges[idx])
        for slot in slots:
            snap = DigraphSnapshot(base.n_agents, frozenset(slot))
            snapshots.append(snap)
            weights.append(metropolis_weights(snap, floor=floor))
    return GraphSchedule(snapshots, weights, window=B)


def transition_decay_profile(schedule, l, n_max):
    """Spectral-norm distance of ``P[n, l]`` from ``(1/I) 11^T`` for n = l..n_max."""
    if n_max < l:
        raise ValueError("need n_max >= l")
    size = schedule.n_agents
    avg = np.full((size, size), 1.0 / size)
    p = np.eye(size)
    out = np.empty(n_max - l + 1)
    for k, n in enumerate(range(l, n_max + 1)):
        p = schedule.weight(n) @ p
        out[k] = np.linalg.norm(p - avg, 2)
    return out


def fit_decay_rate(profile, start=0, noise_floor=1e-13):
    """Fit ``e[k] <= c * rho**(k + 1)`` on ``profile[start:]``.

    The slope comes from a log-linear least-squares fit over the entries above
    ``noise_floor``; ``c`` is then raised until the envelope covers every
    fitted point. A profile that is already at the noise floor gives rho = 0.
    """
    e = np.asarray(profile, dtype=float)
    k = np.arange(e.size, dtype=float) + 1.0
    sel = np.arange(e.size) >= start
    sel &= e > noise_floor
    if sel.sum() < 2:
        return float(np.max(e, initial=0.0)), 0.0
    slope, _ = np.polyfit(k[sel], np.log(e[sel]), 1)
    rho = float(np.exp(slope))
    c = float(np.max(e[sel] / rho ** k[sel]))
    return c, rho


# -- base graph generators ---------------------------------------------------

def ring_graph(n, directed=True):
    edges = {(i, (i + 1) % n) for i in range(n)} if n > 1 else set()
    snap = DigraphSnapshot(n, frozenset(edges))
    return snap if directed else snap.symmetrized()


def path_graph(n):
    return DigraphSnapshot(n, frozenset((i, i + 1) for i in range(n - 1))).symmetrized()


def complete_graph(n):
    return DigraphSnapshot(n, frozenset((j, i) for i in range(n) for j in range(n) if i != j))


def erdos_renyi_graph(n, p, seed=0, max_tries=100):
    """Undirected G(n, p) conditioned on connectivity (a ring is added if
    ``max_tries`` samples all fail)."""
    rng = check_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    for _ in range(max_tries):
        keep = rng.random(iu.size) < p
        snap = DigraphSnapshot(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist()))).symmetrized()
        if snap.is_strongly_connected:
            return snap
    return DigraphSnapshot(n, snap.edges | ring_graph(n, directed=False).edges)


def geometric_graph(n, radius, seed=0, positions=None):
    """Random geometric graph on the unit square; the radius grows by 10%
    until the graph is connected."""
    rng = check_rng(seed)
    pos = rng.random((n, 2)) if positions is None else np.asarray(positions, dtype=float)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    r = float(radius)
    while True:
        i, j = np.nonzero((dist <= r) & ~np.eye(n, dtype=bool))
        snap = DigraphSnapshot(n, frozenset(zip(j.tolist(), i.tolist())))
        if snap.is_strongly_connected:
            return snap
        r *= 1.1


# -- text format -------------------------------------------------------------

def dump_schedule(schedule, stream):
    """Write ``schedule`` as an adjacency list with a weight block per slot."""
    stream.write("# nextsca graph schedule\n")
    stream.write(f"agents {schedule.n_agents}\n")
    stream.write(f"window {schedule.window}\n")
    stream.write(f"floor {schedule.weights[0].floor!r}\n")
    for n, (snap, w) in enumerate(zip(schedule.snapshots, schedule.weights)):
        stream.write(f"slot {n}\n")
        edges = " ".join(f"{j}>{i}" for j, i in sorted(snap.edges))
        stream.write(f"edges {edges}\n".rstrip() + "\n")
        stream.write("weights\n")
        for row in np.asarray(w):
            stream.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_schedule(stream):
    """Inverse of :func:`dump_schedule`."""
    lines = [ln.strip() for ln in stream if ln.strip() and not ln.lstrip().startswith("#")]
    header = {}
    pos = 0
    while pos < len(lines) and not lines[pos].startswith("slot"):
        key, _, value = lines[pos].partition(" ")
        header[key] = value
        pos += 1
    try:
        n = int(header["agents"])
        window = int(header.get("window", 1))
        floor = float(header.get("floor", DEFAULT_FLOOR))
    except (KeyError, ValueError) as exc:
        raise GraphError(f"bad schedule header: {exc}") from None
    snapshots, weights = [], []
    while pos < len(lines):
        if not lines[pos].startswith("slot"):
            raise GraphError(f"expected 'slot', got {lines[pos]!r}")
        edge_line = lines[pos + 1]
        if not edge_line.startswith("edges"):
            raise GraphError(f"expected 'edges', got {edge_line!r}")
        edges = set()
        for tok in edge_line.split()[1:]:
            j, _, i = tok.partition(">")
            edges.add((int(j), int(i)))
        if lines[pos + 2] != "weights":
            raise GraphError(f"expected 'weights', got {lines[pos + 2]!r}")
        rows = [[float(v) for v in lines[pos + 3 + r].split()] for r in range(n)]
        mat = np.array(rows)
        support = frozenset((j, i) for i, j in zip(*np.nonzero(mat > 0)) if i != j)
        snapshots.append(DigraphSnapshot(n, frozenset(edges)))
        weights.append(WeightMatrix(mat, floor=floor, snapshot=DigraphSnapshot(n, support)))
        pos += 3 + n
    return GraphSchedule(snapshots, weights, window=window)
