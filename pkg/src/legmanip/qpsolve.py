"""In-house convex QP and small MIQP solver.

Operator-splitting (ADMM) iteration on the two-sided form

    min 1/2 z' P z + q' z   s.t.  l <= A z <= u

with a quasi-definite KKT system factored once per problem (scipy sparse LU)
and reused across iterations and across branch-and-bound nodes (only l/u
change per node). Converged iterates are polished by solving the active-set
KKT system, which is what gets solutions to the 1e-6-comparable accuracy the
planner tests demand. Primal infeasibility is certified from the divergence
direction of the dual iterates.

The MIQP layer is plain best-first branch-and-bound on binary variables:
most-fractional branching (lowest index on ties), pruning against the
incumbent at 1e-9, warm starts from the parent node. Everything is
deterministic: no randomness, fixed iteration schedules.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as opt
import scipy.sparse as sp
import scipy.sparse.linalg as spla

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITER_LIMIT = "iter_limit"

_ADMM_SIGMA = 1e-6
_ADMM_ALPHA = 1.6
_RHO_INEQ = 0.01
_RHO_EQ_SCALE = 1e3
_CHECK_EVERY = 25
# rho updates need a slower clock than termination checks: right after a
# refactor the primal residual spikes while the iterates resettle, and
# reading that transient as "primal-dominated" sends rho into oscillation
_ADAPT_EVERY = 100
# nodes that have not converged by this many iterations go to the exact LP
# feasibility test; letting them run to the full budget buys nothing the
# tree search cannot recover
_NODE_ITER_CAP = 300


@dataclass
class QuadraticProgram:
    """min 1/2 z'Pz + q'z  s.t.  A_eq z = b_eq, A_in z <= b_in."""

    P: np.ndarray
    q: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        n = len(self.q)
        if self.P.shape != (n, n):
            raise ValueError("P/q dimension mismatch")
        self.P = 0.5 * (self.P + self.P.T)
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
            self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        if self.A_in is None:
            self.A_in = np.zeros((0, n))
            self.b_in = np.zeros(0)
        else:
            self.A_in = np.asarray(self.A_in, dtype=float).reshape(-1, n)
            self.b_in = np.asarray(self.b_in, dtype=float).reshape(-1)
        if len(self.b_eq) != self.A_eq.shape[0] or len(self.b_in) != self.A_in.shape[0]:
            raise ValueError("constraint dimension mismatch")

    @property
    def n(self) -> int:
        return len(self.q)

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z)


@dataclass
class MixedIntegerQP:
    """A QP plus indices of variables constrained to {0, 1}.

    [0, 1] box rows for the binaries are imposed by the solver; callers do
    not need to add them.
    """

    qp: QuadraticProgram
    binary_idx: np.ndarray

    def __post_init__(self):
        self.binary_idx = np.asarray(self.binary_idx, dtype=int).reshape(-1)
        if len(np.unique(self.binary_idx)) != len(self.binary_idx):
            raise ValueError("duplicate binary indices")
        if np.any(self.binary_idx < 0) or np.any(self.binary_idx >= self.qp.n):
            raise ValueError("binary index out of range")


@dataclass
class SolveResult:
    status: str
    z: np.ndarray | None
    objective: float
    kkt_residual: float
    iterations: int = 0
    nodes_explored: int = 0
    y: np.ndarray | None = None  # stacked multipliers (internal row order)


_SCALE_MIN = 1e-4
_SCALE_MAX = 1e4


@dataclass
class _Workspace:
    """Equilibrated data and shared factorization with mutable bounds.

    Ruiz scaling on [P A'; A 0] plus a cost scalar: Pb = c D P D,
    Ab = E A D, qb = c D q. The splitting loop runs on the scaled data;
    x = D xb and y = E yb / c map back. Without the variable scaling the
    mixed magnitudes of the planner QPs (positions, angles, forces,
    binaries) push the iteration count into the thousands.
    """

    P: np.ndarray
    A: np.ndarray
    q: np.ndarray
    d: np.ndarray = field(init=False)
    e: np.ndarray = field(init=False)
    c: float = field(init=False)
    Pb: np.ndarray = field(init=False)
    Ab: np.ndarray = field(init=False)
    qb: np.ndarray = field(init=False)
    rho: np.ndarray = field(init=False)
    solver: object = field(init=False)

    def __post_init__(self):
        m, n = self.A.shape
        d = np.ones(n)
        e = np.ones(m)
        c = 1.0
        Pb = self.P.copy()
        Ab = self.A.copy()
        qb = self.q.copy()
        for _ in range(10):
            col = np.maximum(
                np.max(np.abs(Pb), axis=0, initial=0.0),
                np.max(np.abs(Ab), axis=0, initial=0.0) if m else 0.0,
            )
            dd = 1.0 / np.sqrt(np.clip(col, _SCALE_MIN, _SCALE_MAX))
            ee = np.ones(m)
            if m:
                row = np.max(np.abs(Ab), axis=1, initial=0.0)
                ee = 1.0 / np.sqrt(np.clip(row, _SCALE_MIN, _SCALE_MAX))
            Pb = Pb * dd[:, None] * dd[None, :]
            qb = qb * dd
            if m:
                Ab = Ab * ee[:, None] * dd[None, :]
            d *= dd
            e *= ee
            pcol = np.max(np.abs(Pb), axis=0, initial=0.0)
            gamma = 1.0 / np.clip(
                max(float(np.mean(pcol)), float(np.max(np.abs(qb), initial=0.0))),
                _SCALE_MIN,
                _SCALE_MAX,
            )
            Pb *= gamma
            qb *= gamma
            c *= gamma
        self.d, self.e, self.c = d, e, c
        self.Pb, self.Ab, self.qb = Pb, Ab, qb
        self.rho = np.full(m, _RHO_INEQ)
        self.rho_base = _RHO_INEQ
        self.eq_mask = np.zeros(m, dtype=bool)
        self.adapt_budget = 0
        self.solver = None  # set by factor()

    def unscale_y(self, yb: np.ndarray) -> np.ndarray:
        return yb * self.e / self.c

    def factor(self, eq_mask: np.ndarray, rho_base: float | None = None):
        self.eq_mask = eq_mask
        if rho_base is not None:
            self.rho_base = rho_base
        m, _ = self.A.shape
        self.rho = np.where(eq_mask, self.rho_base * _RHO_EQ_SCALE, self.rho_base)
        if m:
            K = sp.bmat(
                [
                    [
                        sp.csc_matrix(self.Pb) + _ADMM_SIGMA * sp.eye(len(self.q)),
                        sp.csc_matrix(self.Ab).T,
                    ],
                    [sp.csc_matrix(self.Ab), -sp.diags(1.0 / self.rho)],
                ],
                format="csc",
            )
        else:
            K = sp.csc_matrix(self.Pb + _ADMM_SIGMA * np.eye(len(self.q)))
        self.solver = spla.splu(K)

    def refactor(self, rho_base: float):
        self.factor(self.eq_mask, rho_base)


def _admm(ws: _Workspace, l, u, tol, max_iter, z0=None, y0=None):
    """Core splitting loop on the equilibrated data.

    z0 is an unscaled warm point; y0 is a scaled multiplier vector from an
    earlier call. Returns (status, z_unscaled, y_scaled, iterations);
    termination residuals are evaluated unscaled. The caller polishes.
    """
    m, n = ws.A.shape
    ls = l * ws.e
    us = u * ws.e
    x = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float) / ws.d
    zc = ws.Ab @ x if m else np.zeros(0)
    zc = np.clip(zc, ls, us)
    y = np.zeros(m) if y0 is None else np.array(y0, dtype=float)
    rho = ws.rho
    q = ws.qb
    cd = ws.c * ws.d
    inf_streak = 0
    status = ITER_LIMIT
    it = 0
    y_prev_check = y.copy()
    for it in range(1, max_iter + 1):
        rhs = np.concatenate([_ADMM_SIGMA * x - q, zc - y / rho]) if m else (_ADMM_SIGMA * x - q)
        sol = ws.solver.solve(rhs)
        x_t = sol[:n]
        if m:
            nu = sol[n:]
            z_t = zc + (nu - y) / rho
        x = _ADMM_ALPHA * x_t + (1 - _ADMM_ALPHA) * x
        if m:
            z_prev = zc
            zc = np.clip(_ADMM_ALPHA * z_t + (1 - _ADMM_ALPHA) * z_prev + y / rho, ls, us)
            y = y + rho * (_ADMM_ALPHA * z_t + (1 - _ADMM_ALPHA) * z_prev - zc)
        if it % _CHECK_EVERY == 0 or it == max_iter:
            # unscaled residuals: x_u = D x, Ax_u = E^-1 Ab x, etc.
            Px_u = (ws.Pb @ x) / cd
            q_u = q / cd
            if m:
                Ax_u = (ws.Ab @ x) / ws.e
                zc_u = zc / ws.e
                Aty_u = (ws.Ab.T @ y) / cd
                r_prim = np.max(np.abs(Ax_u - zc_u))
                prim_ref = max(np.max(np.abs(Ax_u)), np.max(np.abs(zc_u)))
            else:
                Ax_u = np.zeros(0)
                Aty_u = np.zeros(n)
                r_prim = 0.0
                prim_ref = 0.0
            dual_vec = Px_u + q_u + Aty_u
            r_dual = np.max(np.abs(dual_vec)) if n else 0.0
            dual_ref = max(
                np.max(np.abs(Px_u)), np.max(np.abs(Aty_u)), np.max(np.abs(q_u)), 1e-12
            )
            if r_prim <= tol * (1.0 + prim_ref) and r_dual <= tol * (1.0 + dual_ref):
                status = OPTIMAL
                break
            if m:
                dy = y - y_prev_check
                big_enough = np.max(np.abs(dy)) >= 1e-10 * max(1.0, np.max(np.abs(y)))
                if big_enough and _primal_infeasibility_certificate(ws, dy, l, u):
                    inf_streak += 1
                    if inf_streak >= 2:
                        status = INFEASIBLE
                        break
                else:
                    inf_streak = 0
                y_prev_check = y.copy()
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e12:
                status = ITER_LIMIT
                break
            # residual-balancing rho update, OSQP style
            if m and ws.adapt_budget > 0 and it % _ADAPT_EVERY == 0 \
                    and it < max_iter - _CHECK_EVERY:
                rn_p = r_prim / max(prim_ref, 1e-10)
                rn_d = r_dual / max(dual_ref, 1e-10)
                ratio = np.sqrt(rn_p / max(rn_d, 1e-16))
                if ratio > 2.0 or ratio < 0.5:
                    new_base = float(np.clip(ws.rho_base * ratio, 1e-6, 1e6))
                    if new_base != ws.rho_base:
                        ws.adapt_budget -= 1
                        ws.refactor(new_base)
                        rho = ws.rho
    return status, x * ws.d, y, it


def _primal_infeasibility_certificate(ws, dy_scaled, l, u, eps=1e-4):
    """OSQP-style certificate on the dual increment (unscaled test).

    Components with the wrong sign for an infinite bound are zeroed when
    small (they are iteration noise, and any valid ray has them at zero);
    the projected ray is then re-tested in full, so this cannot turn a
    feasible problem into a false certificate."""
    dy = dy_scaled * ws.e
    norm = np.max(np.abs(dy)) if len(dy) else 0.0
    if norm < 1e-12:
        return False
    dyn = dy / norm
    bad_u = (dyn > 0) & np.isinf(u)
    bad_l = (dyn < 0) & np.isinf(l)
    if np.any(np.abs(dyn[bad_u | bad_l]) > 10 * eps):
        return False
    dyn[bad_u | bad_l] = 0.0
    norm = np.max(np.abs(dyn))
    if norm < 1e-12:
        return False
    dyn /= norm
    if np.max(np.abs(ws.A.T @ dyn)) > eps:
        return False
    pos = dyn > 0
    neg = dyn < 0
    support = float(np.sum(u[pos] * dyn[pos]) + np.sum(l[neg] * dyn[neg]))
    return support < -eps


def _kkt_residual(qp_P, q, A, l, u, z, y):
    """max of stationarity, primal violation and complementarity."""
    stat = np.max(np.abs(qp_P @ z + q + (A.T @ y if len(y) else 0.0)))
    if len(y):
        Az = A @ z
        viol = max(
            float(np.max(np.maximum(Az - u, 0.0), initial=0.0)),
            float(np.max(np.maximum(l - Az, 0.0), initial=0.0)),
        )
        y_pos = np.maximum(y, 0.0)
        y_neg = np.minimum(y, 0.0)
        slack_u = np.where(np.isinf(u), np.inf, u - Az)
        slack_l = np.where(np.isinf(l), np.inf, Az - l)
        comp_u = float(np.max(np.abs(y_pos * np.where(np.isinf(slack_u), 0.0, slack_u)), initial=0.0))
        comp_l = float(np.max(np.abs(y_neg * np.where(np.isinf(slack_l), 0.0, slack_l)), initial=0.0))
        comp = max(comp_u, comp_l)
    else:
        viol = comp = 0.0
    return max(float(stat), viol, comp)


def _polish(P, q, A, l, u, z, y, tol):
    """Active-set KKT refinement of a converged iterate.

    Alternates an equality-constrained KKT solve on the current active-row
    guess with updating that guess: rows violated at the polished point
    enter, active rows with wrong-sign multipliers leave. A single pass from
    a sloppy iterate routinely guesses the set wrong; iterating to a fixed
    point is what lets the solver honour the kkt <= tol contract instead of
    returning whatever the splitting iteration drifted to. Falls back to
    least squares when the active-set system is singular (degenerate rows)
    and returns the best (z, y, kkt) seen.
    """
    best = (z, y, _kkt_residual(P, q, A, l, u, z, y))
    m, n = A.shape
    if m == 0:
        try:
            z_p = np.linalg.solve(P + 1e-12 * np.eye(n), -q)
        except np.linalg.LinAlgError:
            z_p = np.linalg.lstsq(P, -q, rcond=None)[0]
        kkt_p = _kkt_residual(P, q, A, l, u, z_p, y)
        return (z_p, y, kkt_p) if kkt_p < best[2] else best
    Az = A @ z
    eq = np.isfinite(l) & np.isfinite(u) & (np.abs(u - l) < 1e-12)
    thr = max(10 * tol, 1e-7)
    upper = (~eq) & (((u - Az) < thr) | (y > thr)) & np.isfinite(u)
    lower = (~eq) & (((Az - l) < thr) | (y < -thr)) & np.isfinite(l)
    seen = set()
    for _ in range(40):
        key = (upper.tobytes(), lower.tobytes())
        if key in seen:
            break
        seen.add(key)
        act = np.flatnonzero(eq | upper | lower)
        A_act = A[act]
        b_act = np.where(upper[act], u[act], np.where(lower[act], l[act], u[act]))
        na = len(act)
        K = np.zeros((n + na, n + na))
        K[:n, :n] = P
        K[:n, n:] = A_act.T
        K[n:, :n] = A_act
        K[n:, n:] = -1e-9 * np.eye(na)
        rhs = np.concatenate([-q, b_act])
        Ks = sp.csc_matrix(K)
        try:
            lu = spla.splu(Ks)
            sol = lu.solve(rhs)
            # two refinement passes against the unregularized system
            for _ in range(2):
                resid = rhs - np.concatenate(
                    [P @ sol[:n] + A_act.T @ sol[n:], A_act @ sol[:n]]
                )
                sol = sol + lu.solve(resid)
        except (RuntimeError, ValueError):
            K[n:, n:] = np.zeros((na, na))
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        z_p, nu = sol[:n], sol[n:]
        y_p = np.zeros(m)
        y_p[act] = nu
        kkt_p = _kkt_residual(P, q, A, l, u, z_p, y_p)
        if kkt_p < best[2]:
            best = (z_p, y_p, kkt_p)
        if kkt_p <= 0.1 * tol:
            break
        bad = np.zeros(m, dtype=bool)
        bad[act] = (upper[act] & (nu < -1e-9)) | (lower[act] & (nu > 1e-9))
        Azp = A @ z_p
        enter_u = (~eq) & np.isfinite(u) & (Azp - u > 1e-9)
        enter_l = (~eq) & np.isfinite(l) & (l - Azp > 1e-9)
        new_upper = (upper & ~bad & ~enter_l) | enter_u
        new_lower = (lower & ~bad & ~enter_u) | enter_l
        if np.array_equal(new_upper, upper) and np.array_equal(new_lower, lower):
            break
        upper, lower = new_upper, new_lower
    return best


def _stack(qp: QuadraticProgram, extra_rows=None, extra_l=None, extra_u=None):
    """Stack equalities, inequalities and optional extra box rows into
    (A, l, u, eq_mask)."""
    m_eq, m_in = len(qp.b_eq), len(qp.b_in)
    blocks = [qp.A_eq, qp.A_in]
    l = [qp.b_eq, np.full(m_in, -np.inf)]
    u = [qp.b_eq, qp.b_in]
    eq = [np.ones(m_eq, bool), np.zeros(m_in, bool)]
    if extra_rows is not None and len(extra_rows):
        blocks.append(extra_rows)
        l.append(extra_l)
        u.append(extra_u)
        eq.append(np.zeros(len(extra_rows), bool))
    A = np.vstack([b for b in blocks if len(b)]) if (m_eq + m_in or extra_rows is not None) else np.zeros((0, qp.n))
    return A, np.concatenate(l), np.concatenate(u), np.concatenate(eq)


def solve_qp(
    qp: QuadraticProgram,
    tol: float = 1e-6,
    max_iter: int = 20000,
    warm: tuple[np.ndarray, np.ndarray] | None = None,
    fail_dump: str | None = None,
) -> SolveResult:
    """Solve a convex QP; statuses: optimal / infeasible / iter_limit.

    warm is an optional (z, y) pair (y in stacked row order) from a related
    solve. On iter_limit with fail_dump set, the problem is written there in
    the plain-text dump format for offline debugging.
    """
    A, l, u, eq_mask = _stack(qp)
    ws = _Workspace(qp.P, A, qp.q)
    ws.factor(eq_mask)
    ws.adapt_budget = 10
    z0, y0 = (warm if warm is not None else (None, None))
    if y0 is not None and len(y0) == len(l):
        y0 = y0 * ws.c / np.maximum(ws.e, 1e-300)  # back to scaled space
    else:
        y0 = None
    status, x, y_s, it = _admm(ws, l, u, tol, max_iter, z0, y0)
    y_uns = ws.unscale_y(y_s) if len(y_s) else y_s
    if status == INFEASIBLE:
        return SolveResult(INFEASIBLE, None, np.inf, np.inf, iterations=it)
    z_p, y_p, kkt = _polish(qp.P, qp.q, A, l, u, x, y_uns, tol)
    obj = qp.objective(z_p)
    if kkt > tol:
        if fail_dump:
            dump_problem(fail_dump, qp)
        return SolveResult(ITER_LIMIT, z_p, obj, kkt, iterations=it, y=y_p)
    return SolveResult(OPTIMAL, z_p, obj, kkt, iterations=it, y=y_p)


@dataclass
class _Node:
    lo: np.ndarray
    hi: np.ndarray
    z: np.ndarray | None
    bound: float
    presolved: tuple | None = None


def solve_miqp(
    miqp: MixedIntegerQP,
    tol: float = 1e-6,
    max_iter: int = 20000,
    node_limit: int = 100000,
    warm: np.ndarray | None = None,
) -> SolveResult:
    """Best-first branch-and-bound over the binary variables.

    Every node relaxation is an independent solve_qp call on a reduced
    problem: binaries fixed by the node are eliminated into the right-hand
    side, free ones keep [0,1] boxes. Keeping fixed binaries as variables
    pinned by stiff rows looks cheaper (shared factorization) but their
    zero-curvature columns wreck the splitting iteration exactly on the
    deep nodes branch-and-bound cares about.

    warm (a full-length z vector, e.g. the previous plan) seeds the node
    relaxations and, through its rounded binaries, the incumbent. Status
    iter_limit means the node limit was hit: the best incumbent (if any) is
    returned without an optimality proof.
    """
    qp = miqp.qp
    bidx = np.asarray(miqp.binary_idx, dtype=int)
    nb = len(bidx)
    if nb == 0:
        res = solve_qp(qp, tol, max_iter, warm=(warm, None) if warm is not None else None)
        return res
    box_rows = np.zeros((nb, qp.n))
    box_rows[np.arange(nb), bidx] = 1.0
    A, l, u, eq_mask = _stack(qp, box_rows, np.zeros(nb), np.ones(nb))
    base_rows = len(l) - nb

    # rows supported entirely on the binaries admit exact interval tests
    # against the node bounds (this catches e.g. exhausted covering rows
    # without a QP solve)
    bin_only = ~np.any(np.delete(A[:base_rows], bidx, axis=1), axis=1)
    bin_only &= np.any(A[:base_rows][:, bidx], axis=1)
    Ab = A[:base_rows][bin_only][:, bidx]
    lb_rows, ub_rows = l[:base_rows][bin_only], u[:base_rows][bin_only]

    def bound_prune(lo, hi):
        if not len(Ab):
            return False
        lhs_min = np.sum(np.minimum(Ab * lo, Ab * hi), axis=1)
        lhs_max = np.sum(np.maximum(Ab * lo, Ab * hi), axis=1)
        return bool(np.any(lhs_min > ub_rows + 1e-9) or np.any(lhs_max < lb_rows - 1e-9))

    def lp_feasible(l2, u2):
        """Exact feasibility oracle for ambiguous node exits."""
        stacked = np.vstack([A, -A])
        rhs = np.concatenate([u2, -l2])
        fin = np.isfinite(rhs)
        res = opt.linprog(
            np.zeros(qp.n), A_ub=stacked[fin], b_ub=rhs[fin],
            bounds=[(None, None)] * qp.n, method="highs",
        )
        return res.status != 2

    def relax(lo, hi, z0, iter_cap=None):
        """Reduced relaxation: fixed binaries substituted, free ones boxed.

        Free binaries carry no quadratic cost, so the relaxed optimum is a
        flat face the splitting iteration wanders without converging. A tiny
        ridge on those columns makes the face a point. Pruning against the
        true objective at the ridged optimum can lose improvements smaller
        than ridge * nfree / 2, which the ridge size keeps below 1e-7 of the
        objective scale; lowering the bound by that slack instead un-prunes
        every tie on the flat face and blows the tree up."""
        if bound_prune(lo, hi):
            return INFEASIBLE, None, np.inf
        free = (hi - lo) > 0.5
        keep = np.ones(qp.n, dtype=bool)
        keep[bidx[~free]] = False
        kidx = np.flatnonzero(keep)
        fidx = bidx[~free]
        vals = lo[~free]
        Pr = qp.P[np.ix_(kidx, kidx)]
        qr = qp.q[kidx] + qp.P[np.ix_(kidx, fidx)] @ vals
        parts = {}
        for name, M, rhs in (("eq", qp.A_eq, qp.b_eq), ("in", qp.A_in, qp.b_in)):
            if M is None or not len(M):
                parts[name] = (np.zeros((0, len(kidx))), np.zeros(0))
                continue
            Mr = M[:, kidx]
            rr = rhs - M[:, fidx] @ vals
            const = ~np.any(Mr != 0.0, axis=1)
            bad = (np.abs(rr[const]) > 1e-9) if name == "eq" else (rr[const] < -1e-9)
            if np.any(bad):
                return INFEASIBLE, None, np.inf
            parts[name] = (Mr[~const], rr[~const])
        nfree = int(free.sum())
        fpos = np.searchsorted(kidx, bidx[free])
        scale = max(np.abs(Pr).max(initial=0.0), np.abs(qr).max(initial=0.0), 1.0)
        ridge = 1e-7 * scale
        Pr[fpos, fpos] += ridge
        boxes = np.zeros((2 * nfree, len(kidx)))
        boxes[np.arange(nfree), fpos] = 1.0
        boxes[nfree + np.arange(nfree), fpos] = -1.0
        box_rhs = np.concatenate([np.ones(nfree), np.zeros(nfree)])
        rqp = QuadraticProgram(
            P=Pr, q=qr, A_eq=parts["eq"][0], b_eq=parts["eq"][1],
            A_in=np.vstack([parts["in"][0], boxes]),
            b_in=np.concatenate([parts["in"][1], box_rhs]),
        )
        w = (z0[kidx], None) if z0 is not None else None
        res = solve_qp(rqp, tol, min(max_iter, iter_cap or max_iter), warm=w)
        if res.status == INFEASIBLE or res.z is None:
            return INFEASIBLE, None, np.inf
        z_full = np.empty(qp.n)
        z_full[kidx] = res.z
        z_full[fidx] = vals
        bound = qp.objective(z_full)
        if res.status == ITER_LIMIT:
            # neither converged nor certified; settle feasibility exactly so
            # the search is not misled either way
            l2, u2 = l.copy(), u.copy()
            l2[base_rows:] = lo
            u2[base_rows:] = hi
            if not lp_feasible(l2, u2):
                return INFEASIBLE, None, np.inf
            return ITER_LIMIT, z_full, bound
        return OPTIMAL, z_full, bound

    incumbent = None  # (obj, z, kkt)
    nodes = 0
    heap: list = []
    counter = 0

    def consider_incumbent(z_fix):
        """Fix the binaries to a rounded assignment and solve the restriction."""
        nonlocal incumbent, nodes
        # floor(x + 0.5): ties at 0.5 go up, keeping cover rows satisfiable
        vals = np.clip(np.floor(z_fix[bidx] + 0.5), 0.0, 1.0)
        nodes += 1
        status, z_full, obj_r = relax(vals, vals, z_fix)
        if status == OPTIMAL and (incumbent is None or obj_r < incumbent[0] - 1e-12):
            kkt = _kkt_with_bounds(qp, A, l, u, vals, z_full)
            incumbent = (obj_r, z_full, kkt)

    root_status, root_z, root_obj = relax(
        np.zeros(nb), np.ones(nb), np.asarray(warm, float) if warm is not None else None
    )
    nodes += 1
    if root_status == INFEASIBLE:
        return SolveResult(INFEASIBLE, None, np.inf, np.inf, nodes_explored=nodes)
    if warm is not None:
        consider_incumbent(np.asarray(warm, dtype=float))
    root = _Node(
        np.zeros(nb), np.ones(nb), root_z, -np.inf,
        presolved=(root_status, root_z, root_obj),
    )
    # Best-first on bound; among equal bounds pop the newest node. Big-M
    # instances carry many binaries whose value does not affect the optimum,
    # so whole subtrees tie: newest-first plunges one branch to an integral
    # point matching the bound instead of sweeping the tie breadth-first.
    heapq.heappush(heap, (-np.inf, -counter, root))
    counter += 1
    exhausted = True
    while heap:
        if nodes >= node_limit:
            exhausted = False
            break
        _, _, node = heapq.heappop(heap)
        if incumbent is not None and node.bound >= incumbent[0] - 1e-9:
            continue
        if node.presolved is not None:
            status, z_r, obj_r = node.presolved
        else:
            status, z_r, obj_r = relax(node.lo, node.hi, node.z, _NODE_ITER_CAP)
            nodes += 1
        if status == INFEASIBLE:
            continue
        if status == ITER_LIMIT:
            # unreliable bound: keep the subtree alive under the parent bound
            exhausted = False
            if z_r is None:
                continue
            frac_t = np.abs(z_r[bidx] - np.round(z_r[bidx]))
            free = (node.hi - node.lo) > 0.5
            if not np.any(free):
                continue
            b = int(np.argmax(np.where(free, np.round(frac_t, 12), -1.0)))
            for val in (0.0, 1.0):  # push order makes the 1-child pop first
                lo2, hi2 = node.lo.copy(), node.hi.copy()
                lo2[b] = hi2[b] = val
                heapq.heappush(heap, (node.bound, -counter, _Node(lo2, hi2, z_r, node.bound)))
                counter += 1
            continue
        if incumbent is not None and obj_r >= incumbent[0] - 1e-9:
            continue
        frac = np.abs(z_r[bidx] - np.round(z_r[bidx]))
        if np.all(frac <= 1e-6):
            vals = np.clip(np.round(z_r[bidx]), node.lo, node.hi)
            kkt = _kkt_with_bounds(qp, A, l, u, vals, z_r)
            if incumbent is None or obj_r < incumbent[0] - 1e-12:
                incumbent = (obj_r, z_r, kkt)
            continue
        # most fractional, lowest index on (near-)ties
        b = int(np.argmax(np.round(frac, 12)))
        if incumbent is None and nodes % 8 == 1:
            consider_incumbent(z_r)  # rounding dive until a bound exists
        for val in (0.0, 1.0):  # push order makes the 1-child pop first
            lo2, hi2 = node.lo.copy(), node.hi.copy()
            lo2[b] = hi2[b] = val
            heapq.heappush(heap, (obj_r, -counter, _Node(lo2, hi2, z_r, obj_r)))
            counter += 1
    if incumbent is None:
        if exhausted:
            return SolveResult(INFEASIBLE, None, np.inf, np.inf, nodes_explored=nodes)
        return SolveResult(ITER_LIMIT, None, np.inf, np.inf, nodes_explored=nodes)
    obj, z, kkt = incumbent
    status = OPTIMAL if exhausted else ITER_LIMIT
    return SolveResult(status, z, obj, kkt, nodes_explored=nodes)


def _kkt_with_bounds(qp, A, l, u, bin_vals, z):
    """KKT residual of the binary-fixed restriction (for reporting)."""
    nb = len(bin_vals)
    base = len(l) - nb
    l2, u2 = l.copy(), u.copy()
    l2[base:] = bin_vals
    u2[base:] = bin_vals
    res = solve_qp_fixed_check(qp, A, l2, u2, z)
    return res


def solve_qp_fixed_check(qp, A, l, u, z):
    # residual only; multipliers unknown here, so check primal side + recompute
    # stationarity via least squares on the active rows.
    Az = A @ z
    act = (np.abs(Az - np.where(np.isfinite(u), u, np.inf)) < 1e-7) | (
        np.abs(Az - np.where(np.isfinite(l), l, -np.inf)) < 1e-7
    )
    A_act = A[act]
    if len(A_act):
        y_act, *_ = np.linalg.lstsq(A_act.T, -(qp.P @ z + qp.q), rcond=None)
        y = np.zeros(len(l))
        y[act] = y_act
    else:
        y = np.zeros(len(l))
    return _kkt_residual(qp.P, qp.q, A, l, u, z, y)


# --- plain-text problem dump -------------------------------------------------

def dump_problem(path: str, qp: QuadraticProgram, binary_idx=None) -> None:
    """Write a QP/MIQP as plain text: one section per matrix, rows as lines."""
    def mat_lines(name, M):
        out = [f"[{name}] {M.shape[0]} {M.shape[1] if M.ndim == 2 else 1}"]
        rows = M if M.ndim == 2 else M[:, None]
        for r in rows:
            out.append(" ".join(format(v, ".17g") for v in r))
        return out

    lines = ["# qpsolve problem dump v1"]
    lines += mat_lines("P", qp.P)
    lines += mat_lines("q", qp.q)
    lines += mat_lines("A_eq", qp.A_eq)
    lines += mat_lines("b_eq", qp.b_eq)
    lines += mat_lines("A_in", qp.A_in)
    lines += mat_lines("b_in", qp.b_in)
    if binary_idx is not None:
        lines.append("[binary] " + " ".join(str(int(i)) for i in binary_idx))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_problem(path: str):
    """Read a dump written by dump_problem; returns (QuadraticProgram, binary_idx|None)."""
    sections: dict[str, list[list[float]]] = {}
    binary = None
    name = None
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                tag = line[1 : line.index("]")]
                if tag == "binary":
                    binary = [int(t) for t in line.split("]")[1].split()]
                    name = None
                else:
                    name = tag
                    sections[name] = []
                continue
            if name is not None:
                sections[name].append([float(t) for t in line.split()])
    def arr(key, cols=None):
        rows = sections.get(key, [])
        a = np.array(rows, dtype=float)
        if a.size == 0:
            return None
        if cols == 1:
            return a.reshape(-1)
        return a

    P = arr("P")
    q = arr("q", cols=1)
    qp = QuadraticProgram(
        P=P,
        q=q,
        A_eq=arr("A_eq"),
        b_eq=arr("b_eq", cols=1),
        A_in=arr("A_in"),
        b_in=arr("b_in", cols=1),
    )
    return qp, (np.array(binary) if binary is not None else None)
