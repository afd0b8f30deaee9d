"""Undirected communication graphs, time-varying sequences, and delay schedules.

Nodes are indexed ``0..n-1``.  Every node is implicitly its own neighbor; self
loops are never stored.  A snapshot may carry a port labeling: for each node a
map from neighbor index to a local port number.  Protocols that must behave
anonymously only ever see port numbers, never neighbor indices.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs, sequences, or delay schedules."""


Edge = tuple[int, int]


def _norm_edge(i: int, j: int) -> Edge:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class GraphSnapshot:
    """An undirected graph on ``n`` nodes with optional port labels.

    ``ports[i]`` maps each neighbor ``j`` of ``i`` to the port number under which
    ``i`` sees ``j``.  Port numbers at a node are distinct and lie in
    ``0..d(i)``; automatically assigned ports use ``0..d(i)-1`` in ascending
    neighbor order.  The extra label value is what makes edge labelings of
    rings possible (see :func:`labeled_ring`).
    """

    n: int
    edges: frozenset[Edge]
    ports: tuple[Mapping[int, int], ...]
    neighbors: tuple[tuple[int, ...], ...] = field(compare=False, repr=False)

    @property
    def degrees(self) -> tuple[int, ...]:
        """Neighbor counts, excluding the implicit self loop."""
        return tuple(len(nb) for nb in self.neighbors)

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def port(self, i: int, j: int) -> int:
        """Port number under which node ``i`` sees neighbor ``j``."""
        return self.ports[i][j]

    @cached_property
    def port_to_neighbor(self) -> tuple[dict[int, int], ...]:
        """Inverse of ``ports``: ``port_to_neighbor[i][p]`` is the neighbor behind port ``p``."""
        return tuple({p: j for j, p in m.items()} for m in self.ports)

    def neighbor_at(self, i: int, port: int) -> int:
        try:
            return self.port_to_neighbor[i][port]
        except KeyError:
            raise GraphError(f"node {i} has no port {port}") from None

    def sorted_ports(self, i: int) -> list[tuple[int, int]]:
        """``(port, neighbor)`` pairs of node ``i`` in ascending port order."""
        return sorted((p, j) for j, p in self.ports[i].items())

    @property
    def is_edge_labeled(self) -> bool:
        """True when both endpoints of every edge use the same port number."""
        return all(self.ports[i][j] == self.ports[j][i] for i, j in self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=int)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1
        return a

    def is_connected(self) -> bool:
        return is_connected(self.n, self.edges)

    def diameter(self) -> int:
        """Largest hop distance; raises for disconnected graphs."""
        best = 0
        for s in range(self.n):
            dist = bfs_distances(self, s)
            if any(d is None for d in dist):
                raise GraphError("diameter of a disconnected graph")
            best = max(best, max(d for d in dist if d is not None))
        return best

    def to_dict(self) -> dict:
        out: dict = {"edges": [list(e) for e in sorted(self.edges)]}
        out["ports"] = [{str(j): p for j, p in sorted(m.items())} for m in self.ports]
        return out


def build_snapshot(
    n: int,
    edges: Iterable[Sequence[int]],
    ports: Sequence[Mapping[int, int]] | None = None,
) -> GraphSnapshot:
    """Validate an edge list and return a :class:`GraphSnapshot`.

    Raises :class:`GraphError` for a nonpositive ``n``, out-of-range indices,
    self pairs, duplicate edges, or ports that are not injective into
    ``0..d(i)`` over exactly the neighbor set.
    """
    if n < 1:
        raise GraphError(f"node count must be positive, got {n}")
    edge_set: set[Edge] = set()
    for e in edges:
        if len(e) != 2:
            raise GraphError(f"edge {e!r} is not a pair")
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge {{{i},{j}}} has an index outside 0..{n - 1}")
        if i == j:
            raise GraphError(f"explicit self pair {{{i},{i}}}; self loops are implicit")
        key = _norm_edge(i, j)
        if key in edge_set:
            raise GraphError(f"duplicate edge {{{key[0]},{key[1]}}}")
        edge_set.add(key)

    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in edge_set:
        nbrs[i].append(j)
        nbrs[j].append(i)
    for lst in nbrs:
        lst.sort()

    if ports is None:
        port_maps = tuple({j: p for p, j in enumerate(lst)} for lst in nbrs)
    else:
        if len(ports) != n:
            raise GraphError("ports must list one mapping per node")
        built = []
        for i, raw in enumerate(ports):
            m = {int(j): int(p) for j, p in raw.items()}
            if set(m) != set(nbrs[i]):
                raise GraphError(f"ports of node {i} do not cover exactly its neighbors")
            vals = list(m.values())
            if len(set(vals)) != len(vals):
                raise GraphError(f"ports of node {i} are not injective")
            if any(p < 0 or p > len(nbrs[i]) for p in vals):
                raise GraphError(f"ports of node {i} fall outside 0..{len(nbrs[i])}")
            built.append(m)
        port_maps = tuple(built)

    return GraphSnapshot(
        n=n,
        edges=frozenset(edge_set),
        ports=port_maps,
        neighbors=tuple(tuple(lst) for lst in nbrs),
    )


def is_connected(n: int, edges: Iterable[Edge]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return all(seen)


def bfs_distances(g: GraphSnapshot, source: int) -> list[int | None]:
    dist: list[int | None] = [None] * g.n
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in g.neighbors[u]:
            if dist[v] is None:
                dist[v] = dist[u] + 1  # type: ignore[operator]
                queue.append(v)
    return dist


# ---------------------------------------------------------------------------
# Graph families
# ---------------------------------------------------------------------------


def line_graph(n: int) -> GraphSnapshot:
    return build_snapshot(n, [(i, i + 1) for i in range(n - 1)])


def ring_graph(n: int) -> GraphSnapshot:
    if n < 3:
        raise GraphError("a ring needs at least 3 nodes")
    return build_snapshot(n, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n: int) -> GraphSnapshot:
    return build_snapshot(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def star_graph(n: int) -> GraphSnapshot:
    return build_snapshot(n, [(0, j) for j in range(1, n)])


def _ring_edge_label(e: int) -> int:
    if e == 0:
        return 0
    return 1 if e % 2 == 1 else 2


def labeled_ring(n: int, repeat: int = 1) -> GraphSnapshot:
    """Edge-labeled ring on ``n * repeat`` nodes.

    Edge ``(e, e+1)`` of the base ring of size ``n`` carries label 0 for
    ``e = 0`` and then alternates 1, 2, 1, 2, ...; the large ring repeats the
    base pattern ``repeat`` times, so node ``j`` sees the same labels as node
    ``j mod n`` of the base ring.
    """
    if n < 3:
        raise GraphError("a labeled ring needs at least 3 nodes")
    if repeat < 1:
        raise GraphError("repeat factor must be positive")
    size = n * repeat
    ports: list[dict[int, int]] = [dict() for _ in range(size)]
    edges = []
    for e in range(size):
        a, b = e, (e + 1) % size
        lab = _ring_edge_label(e % n)
        edges.append((a, b))
        ports[a][b] = lab
        ports[b][a] = lab
    return build_snapshot(size, edges, ports)


def dumbbell_graph(n: int) -> GraphSnapshot:
    """Two cliques of ``n/3`` nodes joined through a path of ``n/3`` nodes.

    Nodes ``0..n/3-1`` form the first clique, ``n/3..2n/3-1`` the path, and
    ``2n/3..n-1`` the second clique.
    """
    if n < 3 or n % 3 != 0:
        raise GraphError("dumbbell needs n divisible by 3")
    b = n // 3
    edges = [(i, j) for i in range(b) for j in range(i + 1, b)]
    edges += [(i, j) for i in range(2 * b, n) for j in range(i + 1, n)]
    edges += [(i, i + 1) for i in range(b - 1, 2 * b)]
    return build_snapshot(n, edges)


def complete_edge_labeled(n: int) -> GraphSnapshot:
    """Complete graph whose edge ``{i, j}`` carries label ``(i + j) mod n``."""
    ports = [dict() for _ in range(n)]
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            edges.append((i, j))
            ports[i][j] = ports[j][i] = (i + j) % n
    return build_snapshot(n, edges, ports)


def random_tree_edges(n: int, rng: np.random.Generator) -> list[Edge]:
    """Uniformly random labeled spanning tree of ``K_n`` via a Pruefer sequence."""
    if n == 1:
        return []
    if n == 2:
        return [(0, 1)]
    seq = [int(v) for v in rng.integers(0, n, size=n - 2)]
    degree = [1] * n
    for v in seq:
        degree[v] += 1
    edges = []
    for v in seq:
        leaf = min(u for u in range(n) if degree[u] == 1)
        edges.append(_norm_edge(leaf, v))
        degree[leaf] -= 1
        degree[v] -= 1
    last = [u for u in range(n) if degree[u] == 1]
    edges.append(_norm_edge(last[0], last[1]))
    return edges


def random_connected_graph(n: int, p: float, rng: np.random.Generator) -> GraphSnapshot:
    """Random spanning tree plus independent Bernoulli(p) extra edges."""
    edges = set(random_tree_edges(n, rng))
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < p:
                edges.add((i, j))
    return build_snapshot(n, sorted(edges))


# ---------------------------------------------------------------------------
# Sequences
# ---------------------------------------------------------------------------


class GraphSequence:
    """A time-indexed sequence of snapshots on a fixed node count.

    Three variants are supported: a static snapshot, a scripted list of
    frames with a repeat policy (``cycle`` or ``hold-last``), and a generator
    function ``t -> snapshot`` that must be pure in ``t``.
    """

    def __init__(
        self,
        n: int,
        *,
        static: GraphSnapshot | None = None,
        frames: Sequence[GraphSnapshot] | None = None,
        repeat: str = "cycle",
        generator: Callable[[int], GraphSnapshot] | None = None,
        window: int | None = None,
        description: str = "",
    ) -> None:
        given = sum(x is not None for x in (static, frames, generator))
        if given != 1:
            raise GraphError("exactly one of static, frames, generator is required")
        if repeat not in ("cycle", "hold-last"):
            raise GraphError(f"unknown repeat policy {repeat!r}")
        if frames is not None and len(frames) == 0:
            raise GraphError("scripted sequence needs at least one frame")
        for g in [static] if static is not None else (frames or []):
            if g.n != n:
                raise GraphError("every frame must have the same node count")
        if window is not None and window < 1:
            raise GraphError("connectivity window must be positive")
        self.n = n
        self._static = static
        self._frames = list(frames) if frames is not None else None
        self._repeat = repeat
        self._generator = generator
        self.window = window
        self.description = description
        self._cache: dict[int, GraphSnapshot] = {}

    @classmethod
    def static(cls, g: GraphSnapshot, description: str = "") -> "GraphSequence":
        return cls(g.n, static=g, window=1 if g.is_connected() else None, description=description)

    @classmethod
    def scripted(
        cls, frames: Sequence[GraphSnapshot], repeat: str = "cycle", window: int | None = None
    ) -> "GraphSequence":
        if not frames:
            raise GraphError("scripted sequence needs at least one frame")
        return cls(frames[0].n, frames=frames, repeat=repeat, window=window)

    @property
    def is_static(self) -> bool:
        return self._static is not None

    def __call__(self, t: int) -> GraphSnapshot:
        return self.snapshot(t)

    def snapshot(self, t: int) -> GraphSnapshot:
        if t < 0:
            raise GraphError("time must be nonnegative")
        if self._static is not None:
            return self._static
        if self._frames is not None:
            k = len(self._frames)
            if self._repeat == "cycle":
                return self._frames[t % k]
            return self._frames[min(t, k - 1)]
        g = self._cache.get(t)
        if g is None:
            g = self._generator(t)  # type: ignore[misc]
            if g.n != self.n:
                raise GraphError("generator produced a snapshot of the wrong size")
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[t] = g
        return g


def random_b_connected(n: int, window: int, seed: int, p: float = 0.0) -> GraphSequence:
    """Random sequence whose union over every window ``[kB, (k+1)B-1]`` is connected.

    In each window one uniformly chosen frame receives a uniformly random
    spanning tree; every frame independently receives each remaining pair
    with probability ``p``.  The frames of window ``k`` depend only on
    ``(seed, k)``.
    """
    if window < 1:
        raise GraphError("window must be positive")
    if not 0.0 <= p <= 1.0:
        raise GraphError("edge probability must lie in [0, 1]")

    window_cache: dict[int, list[GraphSnapshot]] = {}

    def frames_of(k: int) -> list[GraphSnapshot]:
        got = window_cache.get(k)
        if got is None:
            rng = np.random.default_rng([seed, k])
            tree_frame = int(rng.integers(0, window))
            tree = set(random_tree_edges(n, rng))
            got = []
            for f in range(window):
                es = set(tree) if f == tree_frame else set()
                if p > 0:
                    for i in range(n):
                        for j in range(i + 1, n):
                            if rng.random() < p:
                                es.add((i, j))
                got.append(build_snapshot(n, sorted(es)))
            if len(window_cache) > 1024:
                window_cache.clear()
            window_cache[k] = got
        return got

    return GraphSequence(
        n,
        generator=lambda t: frames_of(t // window)[t % window],
        window=window,
        description=f"random_b_connected(n={n}, B={window}, seed={seed}, p={p})",
    )


def quantizer_adversary_frames(n: int) -> list[GraphSnapshot]:
    """Frames of the quantization-error construction for even ``n``.

    Nodes ``0..n/2-1`` start at 0 and nodes ``n/2..n-1`` start at 1.  Round
    ``r`` connects the current zero block (the original zeros plus the ones
    already absorbed) completely with exactly one further value-one node.
    """
    if n < 2 or n % 2 != 0:
        raise GraphError("quantizer adversary needs an even n >= 2")
    half = n // 2
    frames = []
    for r in range(half):
        block = list(range(half + r)) + [half + r]
        frames.append(build_snapshot(n, [(a, b) for a in block for b in block if a < b]))
    return frames


@dataclass
class BConnectivityReport:
    ok: bool
    first_bad_window: int | None = None


def check_b_connectivity(seq: GraphSequence, window: int, horizon: int) -> BConnectivityReport:
    """Check that every full window ``[kB, (k+1)B-1]`` inside ``horizon`` has a connected union."""
    if window < 1:
        raise GraphError("window must be positive")
    if horizon < window:
        raise GraphError("horizon must be at least one window")
    for k in range(horizon // window):
        union: set[Edge] = set()
        for t in range(k * window, (k + 1) * window):
            union |= seq.snapshot(t).edges
        if not is_connected(seq.n, union):
            return BConnectivityReport(False, k)
    return BConnectivityReport(True, None)


def generate_sequence(family: str, params: Mapping | None = None, seed: int = 0) -> GraphSequence:
    """Build a named graph family as a :class:`GraphSequence`.

    Families: ``line``, ``ring``, ``complete``, ``star``, ``dumbbell``,
    ``labeled_ring`` (params ``n``, ``repeat``), ``quantizer_adversary``,
    ``random_b_connected`` (params ``n``, ``B``, optional ``p``), ``example1``
    and ``example2``.  The last two carry companion weight and delay scripts;
    see :mod:`consensus_lab.linear` for those.
    """
    params = dict(params or {})
    try:
        if family in ("line", "ring", "complete", "star", "dumbbell"):
            n = int(params.pop("n"))
            builder = {
                "line": line_graph,
                "ring": ring_graph,
                "complete": complete_graph,
                "star": star_graph,
                "dumbbell": dumbbell_graph,
            }[family]
            seq = GraphSequence.static(builder(n), description=f"{family}(n={n})")
        elif family == "labeled_ring":
            n = int(params.pop("n"))
            m = int(params.pop("repeat", 1))
            seq = GraphSequence.static(labeled_ring(n, m), description=f"labeled_ring(n={n}, m={m})")
        elif family == "quantizer_adversary":
            n = int(params.pop("n"))
            seq = GraphSequence.scripted(quantizer_adversary_frames(n), repeat="hold-last")
        elif family == "random_b_connected":
            n = int(params.pop("n"))
            b = int(params.pop("B"))
            p = float(params.pop("p", 0.0))
            seq = random_b_connected(n, b, seed, p)
        elif family in ("example1", "example2"):
            from . import linear

            repetitions = int(params.pop("repetitions", 12 if family == "example1" else 20))
            maker = linear.example1_script if family == "example1" else linear.example2_script
            seq = maker(repetitions).sequence
        else:
            raise GraphError(f"unknown graph family {family!r}")
    except KeyError as exc:
        raise GraphError(f"family {family!r} is missing parameter {exc.args[0]!r}") from None
    if params:
        raise GraphError(f"unexpected parameters for {family!r}: {sorted(params)}")
    return seq


def load_sequence(data: Mapping) -> GraphSequence:
    """Parse the JSON graph-sequence format (explicit frames or a named family)."""
    if "family" in data:
        return generate_sequence(str(data["family"]), data.get("params", {}), int(data.get("seed", 0)))
    try:
        n = int(data["n"])
        raw_frames = data["frames"]
    except KeyError as exc:
        raise GraphError(f"graph file is missing {exc.args[0]!r}") from None
    frames = []
    for fr in raw_frames:
        ports = fr.get("ports")
        if ports is not None:
            ports = [{int(k): int(v) for k, v in m.items()} for m in ports]
        frames.append(build_snapshot(n, fr.get("edges", []), ports))
    repeat = data.get("repeat", "cycle")
    if len(frames) == 1 and repeat in ("cycle", "hold-last"):
        return GraphSequence.static(frames[0])
    return GraphSequence.scripted(frames, repeat=repeat, window=data.get("B"))


def dump_sequence(frames: Sequence[GraphSnapshot], repeat: str = "cycle") -> str:
    return json.dumps({"n": frames[0].n, "frames": [g.to_dict() for g in frames], "repeat": repeat})


# ---------------------------------------------------------------------------
# Delays
# ---------------------------------------------------------------------------


class DelaySchedule:
    """Delayed-time map ``tau(i, j, t)`` used by delayed linear averaging.

    Policies: ``none`` (always ``t``), ``fixed-lag`` (``max(0, t - lag)`` for
    ``j != i``), and ``scripted`` (a user function).  The bound ``B`` is the
    window of admissible delays ``t - B + 1 <= tau <= t``; ``None`` marks an
    unbounded schedule.
    """

    def __init__(
        self,
        policy: str = "none",
        *,
        lag: int = 0,
        script: Callable[[int, int, int], int] | None = None,
        bound: int | None = None,
    ) -> None:
        if policy not in ("none", "fixed-lag", "scripted"):
            raise GraphError(f"unknown delay policy {policy!r}")
        if policy == "fixed-lag" and lag < 0:
            raise GraphError("lag must be nonnegative")
        if policy == "scripted" and script is None:
            raise GraphError("scripted delays need a script")
        self.policy = policy
        self.lag = lag
        self._script = script
        if policy == "none":
            bound = 1
        elif policy == "fixed-lag" and bound is None:
            bound = lag + 1
        self.bound = bound

    def __call__(self, i: int, j: int, t: int) -> int:
        if i == j or self.policy == "none":
            return t
        if self.policy == "fixed-lag":
            return max(0, t - self.lag)
        return int(self._script(i, j, t))  # type: ignore[misc]

    def checked(self, i: int, j: int, t: int) -> int:
        """Delayed time with bounds enforced; raises on violations."""
        tau = self(i, j, t)
        if tau > t:
            raise GraphError(f"delay schedule refers to the future: tau({i},{j},{t}) = {tau}")
        if tau < 0:
            raise GraphError(f"delay schedule refers to negative time {tau}")
        if self.bound is not None and tau < t - self.bound + 1:
            raise GraphError(
                f"delay tau({i},{j},{t}) = {tau} exceeds the bound B = {self.bound}"
            )
        return tau

