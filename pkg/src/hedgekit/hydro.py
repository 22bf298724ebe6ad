"""
Hydro-thermal scheduling instances and the extensive-form reference solve.

Per stage the decision is ``(q, y, e)``: stored water per dam, water turned
into electricity per dam, and electricity bought externally.  Inflows follow
a binary tree: each stage transition is dry (``r_dry``) with probability
``p_dry`` and wet (``r_wet``) otherwise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .prox_qp import DEFAULT_TOL, ProxError, ProxWorkspace, QpScenarioProblem, prox
from .scenario_tree import ScenarioTree, binary_tree


@dataclass
class HydroParams:
    """
    Instance constants.

    Arrays are per dam (length ``B``) except ``c_H`` which is stage-major,
    ``c_H[t * B + b]`` being the cost of dam ``b`` at stage ``t``.
    ``reg`` adds ``reg * ||x||^2`` to every scenario cost (0 keeps the
    problem linear).
    """

    B: int
    T: int
    c_H: list
    c_E: float
    D: float
    W_cap: list
    W_1: list
    r_dry: list
    r_wet: list
    p_dry: float = 0.4
    seed: int | None = None
    reg: float = 0.0

    def __post_init__(self):
        B, T = int(self.B), int(self.T)
        if B < 1 or T < 1:
            raise ValueError("need at least one dam and one stage")
        self.B, self.T = B, T
        self.c_H = [float(v) for v in np.asarray(self.c_H, dtype=float).ravel()]
        for name in ("W_cap", "W_1", "r_dry", "r_wet"):
            setattr(self, name, [float(v) for v in np.asarray(getattr(self, name), dtype=float).ravel()])
        self.c_E, self.D = float(self.c_E), float(self.D)
        self.p_dry, self.reg = float(self.p_dry), float(self.reg)
        if len(self.c_H) != B * T:
            raise ValueError(f"c_H needs {B * T} entries")
        for name in ("W_cap", "W_1", "r_dry", "r_wet"):
            if len(getattr(self, name)) != B:
                raise ValueError(f"{name} needs {B} entries")
        values = self.c_H + self.W_cap + self.W_1 + self.r_dry + self.r_wet
        if min(values + [self.c_E, self.D, self.reg]) < 0:
            raise ValueError("hydro constants must be nonnegative")
        if not 0.0 < self.p_dry < 1.0:
            raise ValueError("p_dry must lie in (0, 1)")
        if any(w1 > w for w1, w in zip(self.W_1, self.W_cap)):
            raise ValueError("initial water exceeds dam capacity")

    @classmethod
    def generate(cls, B=3, T=4, seed=0, p_dry=0.4, c_E=10.0, reg=0.0):
        """
        Seeded random instance.

        c_H ~ U(1, 5), W_cap ~ U(5, 10), W_1 = W_cap / 2, r_dry ~ U(0.5, 1.5),
        r_wet ~ U(2, 4), demand D = 3 B per stage.
        """
        rng = np.random.default_rng(seed)
        W_cap = rng.uniform(5.0, 10.0, B)
        return cls(
            B=B,
            T=T,
            c_H=rng.uniform(1.0, 5.0, B * T),
            c_E=c_E,
            D=3.0 * B,
            W_cap=W_cap,
            W_1=W_cap / 2.0,
            r_dry=rng.uniform(0.5, 1.5, B),
            r_wet=rng.uniform(2.0, 4.0, B),
            p_dry=p_dry,
            seed=seed,
            reg=reg,
        )

    @property
    def stage_dim(self) -> int:
        return 2 * self.B + 1

    def to_dict(self) -> dict:
        return asdict(self)


def scenario_branches(s: int, T: int) -> list[int]:
    """Branch bits (0 dry, 1 wet) of scenario ``s`` for stages 2..T."""
    return [(s >> (T - 1 - t)) & 1 for t in range(1, T)]


def build_hydro(params: HydroParams):
    """
    Scenario tree and per-scenario problems of a hydro instance.

    Returns
    -------
    tree : ScenarioTree
    problems : list of QpScenarioProblem
    """
    B, T = params.B, params.T
    d = params.stage_dim
    n = d * T
    S = 1 << (T - 1)
    probs = np.empty(S)
    for s in range(S):
        bits = scenario_branches(s, T)
        wet = sum(bits)
        probs[s] = params.p_dry ** (len(bits) - wet) * (1.0 - params.p_dry) ** wet
    tree = binary_tree(T, [d] * T, probabilities=probs / probs.sum())

    c_H = np.asarray(params.c_H).reshape(T, B)
    r_dry, r_wet = np.asarray(params.r_dry), np.asarray(params.r_wet)
    W_cap, W_1 = np.asarray(params.W_cap), np.asarray(params.W_1)

    def q(t, b):
        return t * d + b

    def y(t, b):
        return t * d + B + b

    def e(t):
        return t * d + 2 * B

    c = np.zeros(n)
    A_in = np.zeros((T + B * T, n))
    b_in = np.zeros(T + B * T)
    for t in range(T):
        c[t * d + B : t * d + 2 * B] = c_H[t]
        c[e(t)] = params.c_E
        # demand: -sum_b y - e <= -D
        A_in[t, [y(t, b) for b in range(B)]] = -1.0
        A_in[t, e(t)] = -1.0
        b_in[t] = -params.D
        for b in range(B):
            row = T + t * B + b
            A_in[row, q(t, b)] = 1.0
            b_in[row] = W_cap[b]
    Q = 2.0 * params.reg * np.eye(n)

    problems = []
    for s in range(S):
        bits = scenario_branches(s, T)
        A_eq = np.zeros((B * T, n))
        b_eq = np.zeros(B * T)
        for b in range(B):
            A_eq[b, q(0, b)] = 1.0
            A_eq[b, y(0, b)] = 1.0
            b_eq[b] = W_1[b]
        for t in range(1, T):
            inflow = r_wet if bits[t - 1] else r_dry
            for b in range(B):
                row = t * B + b
                A_eq[row, q(t, b)] = 1.0
                A_eq[row, q(t - 1, b)] = -1.0
                A_eq[row, y(t, b)] = 1.0
                b_eq[row] = inflow[b]
        problems.append(
            QpScenarioProblem.create(
                n, Q=Q, c=c, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
                lower=np.zeros(n),
            )
        )
    return tree, problems


@dataclass
class ReferenceSolution:
    """Optimal point of the full problem, expanded to one row per scenario."""

    x: np.ndarray
    f_star: float
    iterations: int = 0
    meta: dict = field(default_factory=dict)


def expected_objective(x, tree: ScenarioTree, problems) -> float:
    """Probability-weighted smooth cost sum_s p_s f_s(x^s)."""
    x = tree.check_matrix(x)
    return float(
        sum(p * pb.objective(row) for p, pb, row in zip(tree.probabilities, problems, x))
    )


def _node_index(tree: ScenarioTree) -> tuple[np.ndarray, int]:
    """Column map scenario coordinate -> node variable, shape (S, n)."""
    idx = np.empty((tree.S, tree.n), dtype=np.int64)
    start = 0
    for t in range(tree.T):
        sl = tree.layout.stage_slice(t)
        width = sl.stop - sl.start
        for b, members in enumerate(tree.bundles(t)):
            idx[np.ix_(members, np.arange(sl.start, sl.stop))] = start + np.arange(width)
            start += width
    return idx, start


def _dedupe(A, b):
    if A.shape[0] == 0:
        return A, b
    _, keep = np.unique(np.column_stack([A, b]), axis=0, return_index=True)
    keep.sort()
    return A[keep], b[keep]


def extensive_form(tree: ScenarioTree, problems, tol=DEFAULT_TOL, max_outer=200):
    """
    Solve the deterministic equivalent over node variables.

    Non-anticipativity is built in: scenarios sharing a tree node share its
    variables.  The node problem may be linear, so it is solved by proximal
    point iterations on top of :func:`prox`, which terminate finitely on
    polyhedral problems.

    Returns
    -------
    ReferenceSolution
    """
    if len(problems) != tree.S:
        raise ValueError("one problem per scenario expected")
    idx, N = _node_index(tree)
    H = np.zeros((N, N))
    cbar = np.zeros(N)
    lower = np.full(N, -np.inf)
    upper = np.full(N, np.inf)
    eq_rows, eq_rhs, in_rows, in_rhs = [], [], [], []
    for s, pb in enumerate(problems):
        if pb.n != tree.n:
            raise ValueError(f"scenario {s} has dimension {pb.n}, tree has {tree.n}")
        cols = idx[s]
        p = tree.probabilities[s]
        H[np.ix_(cols, cols)] += p * pb.Q
        cbar[cols] += p * pb.c
        lower[cols] = np.maximum(lower[cols], pb.lower)
        upper[cols] = np.minimum(upper[cols], pb.upper)
        for A, b, rows, rhs in ((pb.A_eq, pb.b_eq, eq_rows, eq_rhs), (pb.A_in, pb.b_in, in_rows, in_rhs)):
            if A.shape[0]:
                big = np.zeros((A.shape[0], N))
                big[:, cols] = A
                rows.append(big)
                rhs.append(b)
    if np.any(lower > upper):
        raise ProxError("bounds of scenarios sharing a node are incompatible", status="infeasible")
    A_eq, b_eq = _dedupe(
        np.vstack(eq_rows) if eq_rows else np.zeros((0, N)),
        np.concatenate(eq_rhs) if eq_rhs else np.zeros(0),
    )
    A_in, b_in = _dedupe(
        np.vstack(in_rows) if in_rows else np.zeros((0, N)),
        np.concatenate(in_rhs) if in_rhs else np.zeros(0),
    )
    H = 0.5 * (H + H.T)
    node_pb = QpScenarioProblem.create(
        N, Q=H, c=cbar, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
        lower=lower, upper=upper,
    )

    X = np.zeros(N)
    ws = ProxWorkspace()
    mu = 1.0
    k = 0
    for k in range(1, max_outer + 1):
        res = prox(node_pb, X, mu, tol, ws)
        if res.status == "infeasible":
            raise ProxError("extensive form is infeasible", status="infeasible")
        if not res.ok:
            raise ProxError(f"extensive-form prox failed: {res.status}", status=res.status)
        step = np.abs(res.y - X).max()
        X = res.y
        if step <= 1e-12 * (1.0 + np.abs(X).max()):
            break
        mu = min(mu * 10.0, 1e8)
    else:
        raise ProxError("extensive form did not converge", status="max-iterations")

    x = X[idx]
    return ReferenceSolution(
        x=x,
        f_star=expected_objective(x, tree, problems),
        iterations=k,
        meta={"node_variables": N, "violation": node_pb.violation(X)},
    )
