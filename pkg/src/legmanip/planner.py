"""Receding-horizon planning for object manipulation and robot motion.

Both planners are mixed-integer QPs over the in-repo solver. Object plans
use dynamics linearized by central differences around a reference (the
shifted previous plan when available); obstacle avoidance is the usual
disjunctive Big-M encoding with one binary per obstacle face per step and
a cover row forcing at least one separating face. Robot motion plans use a
heading-chart model of a differential-drive base whose arcs are only
commandable up to a maximum turning radius; straight driving is a special
zero-curvature command, so each step carries a turning flag and a turn
direction flag.

Angles live on a continuous chart inside a plan: references unwrap the
heading and goals are shifted to the nearest 2*pi representative, so plans
never jump across the branch cut even though states wrap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qpsolve
from .dynamics import AppliedWrench, DynamicsParams, ObjectState, step
from .geometry import halfspaces_from_vertices, wrap_angle

__all__ = [
    "Obstacle",
    "PlannerConfig",
    "LinearizedDynamics",
    "Plan",
    "MotionPlan",
    "NominalPlan",
    "linearize",
    "nominal_traj",
    "opt_manipulate",
    "opt_motion",
    "grasp_goal_for_leg",
]


@dataclass
class Obstacle:
    """Convex obstacle; interior is {p : A p < b} with unit-norm rows."""

    vertices: np.ndarray
    A: np.ndarray = field(init=False)
    b: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.A, self.b = halfspaces_from_vertices(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.b)

    def margin_lb(self, p) -> float:
        """Lower bound on the distance from p to the obstacle (<=0 inside)."""
        return float(np.max(self.A @ np.asarray(p, float) - self.b))

    def contains(self, p, inflate: float = 0.0) -> bool:
        return bool(np.all(self.A @ np.asarray(p, float) < self.b + inflate))


@dataclass
class PlannerConfig:
    H: int = 12
    dT: float = 0.1
    # object plan cost shaping
    w_smooth: tuple = (1.0, 1.0, 0.5, 0.05, 0.05, 0.02)
    w_goal_pos: float = 60.0
    w_goal_theta_far: float = 4.0
    w_goal_theta_near: float = 60.0
    theta_ramp_dist: float = 0.4
    w_goal_vel: float = 0.5
    u_reg: float = 1e-3
    w_du: float = 0.05
    u_max: float = 10.0
    xi_dot_max: tuple = (0.8, 0.8, 1.5)
    # clearances
    margin: float = 0.05
    standoff: float = 0.25
    robot_radius: float = 0.17
    # None sizes obstacle big-M constants per step from the reachable ball
    # (tight, keeps relaxations strong); a float forces that uniform constant,
    # e.g. 10x the workspace diagonal as the simple safe choice
    big_M: float | None = None
    # robot drive limits (arcs commandable only up to R_max turning radius)
    v_max: float = 0.5
    omega_max: float = 1.0
    R_max: float = 2.0
    motion_H: int = 10
    motion_dT: float = 0.5
    w_motion_goal: float = 50.0
    w_motion_theta: float = 8.0
    w_motion_dv: float = 1.0
    w_motion_dtheta: float = 0.5
    w_turn_penalty: float = 1e-3
    # nominal guide path
    nominal_H: int = 16
    nominal_step: float = 0.2
    nominal_theta_step: float = 0.35
    nominal_dt: float = 0.4
    # solver knobs
    solver_tol: float = 1e-4
    max_iter: int = 4000
    node_limit: int = 400

    def __post_init__(self):
        if self.H < 2:
            raise ValueError("horizon must be at least 2")
        if self.dT <= 0 or self.motion_dT <= 0:
            raise ValueError("time steps must be positive")


@dataclass
class LinearizedDynamics:
    """One-step affine model next ~= A xi + B u + c on the unwrapped chart."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray


def _step_unwrapped(x: np.ndarray, u: np.ndarray, grasp_point, params, dt) -> np.ndarray:
    out = step(
        ObjectState.from_array(x),
        params,
        AppliedWrench(float(u[0]), float(u[1]), grasp_point),
        dt,
    ).as_array()
    out[2] = x[2] + wrap_angle(out[2] - x[2])
    return out


def linearize(
    state: np.ndarray | ObjectState,
    params: DynamicsParams,
    u: np.ndarray,
    grasp_point,
    dt: float,
    eps: float = 1e-5,
) -> LinearizedDynamics:
    """Central-difference linearization of the one-step map."""
    x0 = state.as_array() if isinstance(state, ObjectState) else np.asarray(state, float).copy()
    u0 = np.asarray(u, float)
    A = np.zeros((6, 6))
    B = np.zeros((6, 2))
    for j in range(6):
        d = np.zeros(6)
        d[j] = eps
        A[:, j] = (
            _step_unwrapped(x0 + d, u0, grasp_point, params, dt)
            - _step_unwrapped(x0 - d, u0, grasp_point, params, dt)
        ) / (2 * eps)
    for j in range(2):
        d = np.zeros(2)
        d[j] = eps
        B[:, j] = (
            _step_unwrapped(x0, u0 + d, grasp_point, params, dt)
            - _step_unwrapped(x0, u0 - d, grasp_point, params, dt)
        ) / (2 * eps)
    c = _step_unwrapped(x0, u0, grasp_point, params, dt) - A @ x0 - B @ u0
    return LinearizedDynamics(A, B, c)


def _condense(lins: list[LinearizedDynamics], x0: np.ndarray, H: int):
    """Stacked prediction X = F + G U for xi_{h+1} = A_h xi_h + B_h u_h + c_h.

    X stacks xi_1..xi_H (6H), U stacks u_0..u_{H-1} (2H). Eliminating the
    states this way trades the sparse-but-stiff equality chain for a dense
    lower-triangular map, which the splitting solver handles far better."""
    F = np.empty((H, 6))
    F[0] = lins[0].A @ x0 + lins[0].c
    for h in range(1, H):
        F[h] = lins[h].A @ F[h - 1] + lins[h].c
    G = np.zeros((6 * H, 2 * H))
    for h in range(H):
        r = slice(6 * h, 6 * h + 6)
        if h > 0:
            G[r, : 2 * h] = lins[h].A @ G[6 * (h - 1) : 6 * h, : 2 * h]
        G[r, 2 * h : 2 * h + 2] = lins[h].B
    return F.reshape(-1), G


@dataclass
class Plan:
    states: np.ndarray  # (H+1, 6), row 0 is the start state, unwrapped theta
    inputs: np.ndarray  # (H, 2) planned forces at the grasp point
    grasp_point: tuple
    objective: float
    status: str
    nodes: int
    iterations: int
    H: int
    dT: float
    binaries: np.ndarray | None = None

    @property
    def feasible(self) -> bool:
        return self.status != qpsolve.INFEASIBLE

    def shifted(self) -> "Plan":
        """Warm-start payload for the next tick: drop step 0, repeat the tail."""
        st = np.vstack([self.states[1:], self.states[-1]])
        u = np.vstack([self.inputs[1:], self.inputs[-1]]) if len(self.inputs) else self.inputs
        return Plan(
            st, u, self.grasp_point, self.objective, self.status,
            self.nodes, self.iterations, self.H, self.dT, None,
        )


@dataclass
class NominalPlan:
    poses: np.ndarray  # (N+1, 3)
    vels: np.ndarray  # (N+1, 3) finite differences over dt
    dt: float
    status: str

    @property
    def feasible(self) -> bool:
        return self.status != qpsolve.INFEASIBLE


def _room_rows(room) -> tuple[np.ndarray, np.ndarray] | None:
    if room is None:
        return None
    if isinstance(room, Obstacle):
        return room.A, room.b
    A, b = halfspaces_from_vertices(np.asarray(room, float))
    return A, b


def _segment_hits(ob: Obstacle, p, q, inflate: float) -> bool:
    """True if the open segment p->q crosses the inflated obstacle interior."""
    p = np.asarray(p, float)
    d = np.asarray(q, float) - p
    lo, hi = 0.0, 1.0
    for a, bb in zip(ob.A, ob.b + inflate):
        den = float(a @ d)
        num = float(bb - a @ p)
        if abs(den) < 1e-12:
            if num <= 0:
                return False
        elif den > 0:
            hi = min(hi, num / den)
        else:
            lo = max(lo, num / den)
    return lo < hi - 1e-9


def _corner_waypoints(ob: Obstacle, inflate: float, slack: float = 0.05) -> np.ndarray:
    """Polygon corners pushed until they clear ob.b + inflate by slack.

    The push is computed from the two faces meeting at each corner, so it
    stays correct when ob.b was itself grown (the vertices then lie strictly
    inside the halfspace hull and need a larger push)."""
    out = []
    for v in ob.vertices:
        depth = ob.b - ob.A @ v  # >= 0, smallest on the faces through v
        i, j = np.argsort(depth)[:2]
        d = ob.A[i] + ob.A[j]
        nrm = np.linalg.norm(d)
        if nrm < 1e-9:
            continue
        d /= nrm
        t = max(
            (depth[i] + inflate + slack) / max(ob.A[i] @ d, 0.1),
            (depth[j] + inflate + slack) / max(ob.A[j] @ d, 0.1),
        )
        out.append(v + t * d)
    return np.array(out)


def _detour_polyline(p0, goal, obstacles, inflate: float) -> np.ndarray:
    """Straight line bent around obstacle corners; guide only, not a plan."""
    pts = [np.asarray(p0, float), np.asarray(goal, float)]
    for ob in obstacles:
        corners = _corner_waypoints(ob, inflate)
        out = [pts[0]]
        for a, b in zip(pts[:-1], pts[1:]):
            if _segment_hits(ob, a, b, inflate):
                best = None
                for w in corners:
                    if _segment_hits(ob, a, w, inflate) or _segment_hits(ob, w, b, inflate):
                        continue
                    cost = np.linalg.norm(w - a) + np.linalg.norm(b - w)
                    if best is None or cost < best[0]:
                        best = (cost, [w])
                if best is None:
                    # no single corner clears both legs; try corner pairs
                    for i1, w1 in enumerate(corners):
                        if _segment_hits(ob, a, w1, inflate):
                            continue
                        for i2, w2 in enumerate(corners):
                            if i1 == i2 or _segment_hits(ob, w1, w2, inflate):
                                continue
                            if _segment_hits(ob, w2, b, inflate):
                                continue
                            cost = (
                                np.linalg.norm(w1 - a)
                                + np.linalg.norm(w2 - w1)
                                + np.linalg.norm(b - w2)
                            )
                            if best is None or cost < best[0]:
                                best = (cost, [w1, w2])
                if best is not None:
                    out.extend(best[1])
            out.append(b)
        pts = out
    return np.array(pts)


def _polyline_len(pts: np.ndarray) -> float:
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _project_arclength(pts: np.ndarray, p) -> float:
    """Arclength of the closest point on the polyline to p."""
    p = np.asarray(p, float)
    best, acc = 0.0, 0.0
    best_d = np.inf
    for a, b in zip(pts[:-1], pts[1:]):
        seg = b - a
        L2 = float(seg @ seg)
        t = float(np.clip((p - a) @ seg / L2, 0.0, 1.0)) if L2 > 1e-18 else 0.0
        d = float(np.linalg.norm(a + t * seg - p))
        if d < best_d:
            best_d = d
            best = acc + t * np.sqrt(L2)
        acc += np.sqrt(L2)
    return best


def _capped_guide(pts: np.ndarray, step_len: float, start=None):
    """Arclength sampler that never outruns the per-step travel budget.

    Guide points beyond the reachable arclength would seed face choices the
    displacement caps cannot honour, making the seeded restriction
    infeasible. With start given, sampling begins at its projection onto the
    polyline (mid-path replans)."""
    L = max(_polyline_len(pts), 1e-12)
    s0 = _project_arclength(pts, start) if start is not None else 0.0

    def guide(h: int) -> np.ndarray:
        return _sample_polyline(pts, min(s0 + h * step_len, L) / L)

    return guide


def _sample_polyline(pts: np.ndarray, s: float) -> np.ndarray:
    """Point at fraction s of total arc length."""
    if len(pts) == 1:
        return pts[0]
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = float(seg.sum())
    if total < 1e-12:
        return pts[0]
    target = np.clip(s, 0.0, 1.0) * total
    acc = 0.0
    for i, L in enumerate(seg):
        if acc + L >= target or i == len(seg) - 1:
            t = (target - acc) / max(L, 1e-12)
            return pts[i] + np.clip(t, 0.0, 1.0) * (pts[i + 1] - pts[i])
        acc += L
    return pts[-1]


def _soft_margin(clearance: float, margin: float) -> float:
    """Shrink the inflation when the start already sits inside the band.

    Keeps the first steps feasible after noise pushes the state closer to an
    obstacle (or wall) than the planning margin; later steps use the full
    margin again."""
    if clearance >= margin:
        return margin
    return max(clearance - 1e-3, 0.0)


class _ObstacleRows:
    """Big-M avoidance rows for a point trajectory p_1..p_H.

    Big-M constants are sized per (obstacle, step, face) from the reachable
    ball |p_h - p_0| <= h * step_reach, which the velocity bounds of the host
    problem guarantee. When some face stays separated over the whole ball the
    step cannot collide and is dropped outright; the tight constants keep the
    relaxation strong so branch-and-bound rarely needs to dive."""

    def __init__(self, obstacles, p0, H, reach_dt, vmax_xy, margin, big_M=None):
        self.entries = []  # (o, h, n_faces)
        self.n_binaries = 0
        self._built = []
        step_reach = reach_dt * float(np.hypot(vmax_xy[0], vmax_xy[1]))
        for o, ob in enumerate(obstacles):
            clearance = ob.margin_lb(p0)
            face_gap = ob.A @ np.asarray(p0, float) - ob.b  # per-face clearance
            for h in range(1, H + 1):
                reach = h * step_reach
                m_h = margin if h > 2 else _soft_margin(clearance, margin)
                b_infl = ob.b + m_h
                M = b_infl - (face_gap + ob.b) + reach  # = m_h - face_gap + reach
                if np.any(M <= 0):
                    continue  # some face separates every reachable point
                if big_M is not None:
                    if big_M < float(M.max()):
                        raise ValueError(
                            f"big_M={big_M} below the required bound {M.max():.6g}"
                        )
                    M = np.full(ob.n_faces, float(big_M))
                # faces the step can actually be pushed behind, for seeding
                enforceable = face_gap + reach >= m_h - 1e-12
                self.entries.append((o, h, ob.n_faces, enforceable))
                self._built.append((ob, h, b_infl, np.maximum(M, 1e-3)))
                self.n_binaries += ob.n_faces

    def emplace(self, A_in, b_in, n_cols, p_cols_of_h, bin_offset):
        """Append rows into A_in/b_in lists; returns next free binary column."""
        k = bin_offset
        for (ob, h, b_infl, M) in self._built:
            px, py = p_cols_of_h(h)
            for f in range(ob.n_faces):
                row = np.zeros(n_cols)
                row[px] = -ob.A[f, 0]
                row[py] = -ob.A[f, 1]
                row[k + f] = M[f]
                A_in.append(row)
                b_in.append(-b_infl[f] + M[f])
            cover = np.zeros(n_cols)
            cover[k : k + ob.n_faces] = -1.0
            A_in.append(cover)
            b_in.append(-1.0)
            k += ob.n_faces
        return k

    def seed(self, z, guide_of_h, obstacles, bin_offset):
        """Pick the enforceable face with the largest margin at the guide point."""
        k = bin_offset
        for (o, h, nf, enforceable) in self.entries:
            ob = obstacles[o]
            gaps = ob.A @ np.asarray(guide_of_h(h), float) - ob.b
            ranked = np.where(enforceable, gaps, -np.inf)
            f = int(np.argmax(ranked))
            z[k : k + nf] = 0.0
            z[k + f] = 1.0
            k += nf
        return z


def nominal_traj(
    start_pose,
    goal_pose,
    obstacles=(),
    cfg: PlannerConfig | None = None,
    room=None,
) -> NominalPlan:
    """Pose-only guide path: smooth steps around obstacles, no dynamics.

    Used to seed binary assignments and warm starts; velocities are finite
    differences over cfg.nominal_dt.
    """
    cfg = cfg or PlannerConfig()
    p0 = np.asarray(start_pose, float)
    H = cfg.nominal_H
    goal = np.asarray(goal_pose, float).copy()
    goal[2] = p0[2] + wrap_angle(goal[2] - p0[2])

    n_pose = 3 * H  # poses 1..H
    step_cap = np.array([cfg.nominal_step, cfg.nominal_step, cfg.nominal_theta_step])
    obrows = _ObstacleRows(
        obstacles, p0[:2], H, 1.0, (cfg.nominal_step, cfg.nominal_step),
        cfg.margin, cfg.big_M,
    )
    n = n_pose + obrows.n_binaries

    def pcols(h):
        return 3 * (h - 1), 3 * (h - 1) + 1

    P = np.zeros((n, n))
    q = np.zeros(n)
    w = np.array([1.0, 1.0, 0.3])
    for h in range(H):  # step h -> h+1, pose_0 fixed
        i = 3 * h - 3
        j = 3 * h
        for d in range(3):
            P[j + d, j + d] += 2 * w[d]
            if h > 0:
                P[i + d, i + d] += 2 * w[d]
                P[i + d, j + d] -= 2 * w[d]
                P[j + d, i + d] -= 2 * w[d]
            else:
                q[j + d] += -2 * w[d] * p0[d]
    wG = np.array([30.0, 30.0, 10.0])
    jH = 3 * (H - 1)
    for d in range(3):
        P[jH + d, jH + d] += 2 * wG[d]
        q[jH + d] += -2 * wG[d] * goal[d]

    A_in, b_in = [], []
    # per-step displacement caps
    for h in range(1, H + 1):
        for d in range(3):
            row = np.zeros(n)
            row[3 * (h - 1) + d] = 1.0
            prev = p0[d] if h == 1 else 0.0
            if h > 1:
                row[3 * (h - 2) + d] = -1.0
            A_in.append(row.copy())
            b_in.append(step_cap[d] + prev)
            A_in.append(-row)
            b_in.append(step_cap[d] - prev)
    rr = _room_rows(room)
    if rr is not None:
        Ar, br = rr
        slack = min(cfg.margin, max(float(np.min(br - Ar @ p0[:2])) - 1e-3, 0.0))
        for h in range(1, H + 1):
            px, py = pcols(h)
            m_h = cfg.margin if h > 2 else slack
            for i in range(len(br)):
                row = np.zeros(n)
                row[px] = Ar[i, 0]
                row[py] = Ar[i, 1]
                A_in.append(row)
                b_in.append(br[i] - m_h)
    obrows.emplace(A_in, b_in, n, pcols, n_pose)

    qp = qpsolve.QuadraticProgram(
        P=P, q=q, A_in=np.array(A_in), b_in=np.array(b_in)
    )
    bidx = list(range(n_pose, n))
    # seed: detour polyline toward the goal, heading tied to path progress
    guide_pts = _detour_polyline(p0[:2], goal[:2], obstacles, cfg.margin)
    L = max(_polyline_len(guide_pts), 1e-12)
    guide = _capped_guide(guide_pts, 0.9 * cfg.nominal_step)
    z0 = np.zeros(n)
    for h in range(1, H + 1):
        z0[3 * (h - 1) : 3 * (h - 1) + 2] = guide(h)
        prog = min(h * 0.9 * cfg.nominal_step, L) / L
        z0[3 * (h - 1) + 2] = p0[2] + (goal[2] - p0[2]) * prog
    z0 = obrows.seed(z0, lambda h: z0[3 * (h - 1) : 3 * (h - 1) + 2], list(obstacles), n_pose)
    if bidx:
        res = qpsolve.solve_miqp(
            qpsolve.MixedIntegerQP(qp, bidx),
            tol=cfg.solver_tol,
            max_iter=cfg.max_iter,
            node_limit=cfg.node_limit,
            warm=z0,
        )
    else:
        res = qpsolve.solve_qp(qp, tol=cfg.solver_tol, max_iter=cfg.max_iter, warm=(z0, None))
    poses = np.vstack([p0, res.z[:n_pose].reshape(H, 3)]) if res.z is not None else np.array([p0])
    if res.status == qpsolve.INFEASIBLE:
        poses = np.array([p0])
    vels = np.zeros_like(poses)
    if len(poses) > 1:
        vels[1:] = np.diff(poses, axis=0) / cfg.nominal_dt
    return NominalPlan(poses=poses, vels=vels, dt=cfg.nominal_dt, status=res.status)


def _goal_weight_theta(cfg: PlannerConfig, dist: float) -> float:
    # orientation matters more once position error is almost closed
    x = (cfg.theta_ramp_dist - dist) / max(cfg.theta_ramp_dist / 4, 1e-9)
    s = 1.0 / (1.0 + np.exp(-x))
    return float(cfg.w_goal_theta_far + (cfg.w_goal_theta_near - cfg.w_goal_theta_far) * s)


def opt_manipulate(
    state: ObjectState,
    goal_pose,
    params: DynamicsParams,
    grasp_point,
    obstacles=(),
    cfg: PlannerConfig | None = None,
    room=None,
    warm: Plan | None = None,
    nominal: NominalPlan | None = None,
) -> Plan:
    """Plan forces at the grasp point driving the object toward the goal pose.

    Linearizes around the shifted previous plan when given (time-varying
    model), otherwise around the current state with zero force. Obstacle
    binaries are seeded from the warm plan or the nominal guide so the
    branch-and-bound usually starts with a feasible incumbent.
    """
    cfg = cfg or PlannerConfig()
    H, dT = cfg.H, cfg.dT
    x0 = state.as_array()
    goal = np.asarray(goal_pose, float)

    # reference trajectory on the unwrapped chart
    if warm is not None and warm.H == H and len(warm.states) == H + 1:
        ref_x = warm.states.copy()
        ref_x[0] = x0
        ref_x[0, 2] = warm.states[0, 2] + wrap_angle(x0[2] - warm.states[0, 2])
        ref_u = warm.inputs.copy()
        lins = [
            linearize(ref_x[h], params, ref_u[h], grasp_point, dT) for h in range(H)
        ]
        x0u = ref_x[0]
    else:
        x0u = x0.copy()
        lin0 = linearize(x0u, params, np.zeros(2), grasp_point, dT)
        lins = [lin0] * H
        ref_x = np.empty((H + 1, 6))
        ref_x[0] = x0u
        for h in range(H):
            ref_x[h + 1] = lin0.A @ ref_x[h] + lin0.c
        ref_u = np.zeros((H, 2))

    goal_state = np.zeros(6)
    goal_state[:2] = goal[:2]
    goal_state[2] = ref_x[H, 2] + wrap_angle(goal[2] - ref_x[H, 2])

    nx, nu = 6 * H, 2 * H
    obrows = _ObstacleRows(
        obstacles, x0[:2], H, dT, cfg.xi_dot_max[:2], cfg.margin, cfg.big_M
    )
    nb = obrows.n_binaries
    # decision vector is inputs then binaries; the states are eliminated
    # through the linearized dynamics (xi stack X = F + G U), which keeps the
    # stiff model-coupling out of the constraint set entirely
    n = nu + nb
    F, G = _condense(lins, x0u, H)

    # cost over the state stack, condensed afterwards
    Px = np.zeros((nx, nx))
    qx = np.zeros(nx)
    w1 = np.asarray(cfg.w_smooth, float)
    for h in range(H):
        j = 6 * h  # xi_{h+1}
        i = 6 * h - 6
        for d in range(6):
            Px[j + d, j + d] += 2 * w1[d]
            if h > 0:
                Px[i + d, i + d] += 2 * w1[d]
                Px[i + d, j + d] -= 2 * w1[d]
                Px[j + d, i + d] -= 2 * w1[d]
            else:
                qx[j + d] += -2 * w1[d] * x0u[d]
    dist = float(np.linalg.norm(goal[:2] - x0[:2]))
    w2 = np.array(
        [cfg.w_goal_pos, cfg.w_goal_pos, _goal_weight_theta(cfg, dist)]
        + [cfg.w_goal_vel] * 3
    )
    jH = 6 * (H - 1)
    for d in range(6):
        Px[jH + d, jH + d] += 2 * w2[d]
        qx[jH + d] += -2 * w2[d] * goal_state[d]

    P = np.zeros((n, n))
    q = np.zeros(n)
    P[:nu, :nu] = G.T @ Px @ G
    q[:nu] = G.T @ (Px @ F + qx)
    for h in range(H):
        u = slice(2 * h, 2 * h + 2)
        P[u, u] += 2 * cfg.u_reg * np.eye(2)
        if h > 0:
            up = slice(2 * h - 2, 2 * h)
            P[u, u] += 2 * cfg.w_du * np.eye(2)
            P[up, up] += 2 * cfg.w_du * np.eye(2)
            P[np.arange(u.start, u.stop), np.arange(up.start, up.stop)] -= 2 * cfg.w_du
            P[np.arange(up.start, up.stop), np.arange(u.start, u.stop)] -= 2 * cfg.w_du

    # state-space inequality rows, mapped through the same substitution
    Ax_rows, bx = [], []
    vmax = np.asarray(cfg.xi_dot_max, float)
    for h in range(1, H + 1):
        for d in range(3):
            row = np.zeros(nx + nb)
            row[6 * (h - 1) + 3 + d] = 1.0
            Ax_rows.append(row.copy())
            bx.append(vmax[d])
            Ax_rows.append(-row)
            bx.append(vmax[d])
    rr = _room_rows(room)
    if rr is not None:
        Ar, br = rr
        slack = min(cfg.margin, max(float(np.min(br - Ar @ x0[:2])) - 1e-3, 0.0))
        for h in range(1, H + 1):
            m_h = cfg.margin if h > 2 else slack
            for i in range(len(br)):
                row = np.zeros(nx + nb)
                row[6 * (h - 1)] = Ar[i, 0]
                row[6 * (h - 1) + 1] = Ar[i, 1]
                Ax_rows.append(row)
                bx.append(br[i] - m_h)

    def pcols(h):
        return 6 * (h - 1), 6 * (h - 1) + 1

    obrows.emplace(Ax_rows, bx, nx + nb, pcols, nx)

    Ax = np.array(Ax_rows)
    A_in = np.zeros((len(Ax) + 2 * nu, n))
    A_in[: len(Ax), :nu] = Ax[:, :nx] @ G
    A_in[: len(Ax), nu:] = Ax[:, nx:]
    b_in = np.concatenate([np.asarray(bx) - Ax[:, :nx] @ F, np.full(2 * nu, cfg.u_max)])
    for h in range(nu):  # input bounds live in input space already
        A_in[len(Ax) + 2 * h, h] = 1.0
        A_in[len(Ax) + 2 * h + 1, h] = -1.0

    qp = qpsolve.QuadraticProgram(P=P, q=q, A_in=A_in, b_in=b_in)
    bidx = list(range(nu, n))
    obj_const = float(0.5 * F @ Px @ F + qx @ F)

    z0 = np.zeros(n)
    z0[:nu] = ref_u.reshape(-1)
    step_len = 0.9 * dT * min(cfg.xi_dot_max[0], cfg.xi_dot_max[1])
    if warm is not None and warm.binaries is not None and len(warm.binaries):
        guide = lambda h: ref_x[h][:2]  # shifted plan already avoids obstacles
    elif nominal is not None and nominal.feasible and len(nominal.poses) > 1:
        guide = _capped_guide(nominal.poses[:, :2], step_len, start=x0[:2])
    else:
        guide_pts = _detour_polyline(x0[:2], goal[:2], obstacles, cfg.margin)
        guide = _capped_guide(guide_pts, step_len)
    z0 = obrows.seed(z0, guide, list(obstacles), nu)

    if bidx:
        res = qpsolve.solve_miqp(
            qpsolve.MixedIntegerQP(qp, bidx),
            tol=cfg.solver_tol,
            max_iter=cfg.max_iter,
            node_limit=cfg.node_limit,
            warm=z0,
        )
        nodes = res.nodes_explored
    else:
        res = qpsolve.solve_qp(qp, tol=cfg.solver_tol, max_iter=cfg.max_iter, warm=(z0, None))
        nodes = 1
    if res.status == qpsolve.INFEASIBLE or res.z is None:
        return Plan(
            states=ref_x, inputs=np.zeros((H, 2)), grasp_point=tuple(grasp_point),
            objective=np.inf, status=qpsolve.INFEASIBLE, nodes=nodes,
            iterations=res.iterations, H=H, dT=dT, binaries=None,
        )
    inputs = res.z[:nu].reshape(H, 2)
    states = np.vstack([x0u, (F + G @ res.z[:nu]).reshape(H, 6)])
    return Plan(
        states=states, inputs=inputs, grasp_point=tuple(grasp_point),
        objective=res.objective + obj_const, status=res.status, nodes=nodes,
        iterations=res.iterations, H=H, dT=dT,
        binaries=res.z[nu:].copy() if nb else None,
    )


@dataclass
class MotionPlan:
    poses: np.ndarray  # (H+1, 3) unwrapped heading
    speeds: np.ndarray  # (H,)
    dthetas: np.ndarray  # (H,)
    turning: np.ndarray  # (H,) 0/1
    objective: float
    status: str
    nodes: int
    dT: float

    @property
    def feasible(self) -> bool:
        return self.status != qpsolve.INFEASIBLE

    def commands(self) -> list[tuple[float, float]]:
        """(v, omega) per step; omega is exactly zero on straight steps."""
        out = []
        for h in range(len(self.speeds)):
            if self.turning[h] < 0.5:
                out.append((float(self.speeds[h]), 0.0))
            else:
                out.append((float(self.speeds[h]), float(self.dthetas[h] / self.dT)))
        return out


def opt_motion(
    robot_pose,
    goal_pose,
    obstacles=(),
    cfg: PlannerConfig | None = None,
    room=None,
    headings: np.ndarray | None = None,
) -> MotionPlan:
    """Drive-to-pose plan for the differential-drive base.

    Position updates use reference headings (straight line to the goal, or
    the previous plan via `headings`), keeping the problem a MIQP. Each step
    has a turning binary t_h: when it is set the arc respects the commandable
    turning radius bound, otherwise the step is straight and forces omega = 0.
    """
    cfg = cfg or PlannerConfig()
    H, dT = cfg.motion_H, cfg.motion_dT
    p0 = np.asarray(robot_pose, float)
    goal = np.asarray(goal_pose, float).copy()

    inflated = [_inflated(ob, cfg.robot_radius) for ob in obstacles]
    guide_pts = _detour_polyline(p0[:2], goal[:2], inflated, cfg.margin)
    L = _polyline_len(guide_pts)
    seg0 = guide_pts[1] - guide_pts[0] if len(guide_pts) > 1 else np.zeros(2)
    turn_in = (
        abs(wrap_angle(np.arctan2(seg0[1], seg0[0]) - p0[2]))
        if np.linalg.norm(seg0) > 1e-9
        else 0.0
    )
    # stretch the step so the horizon covers the detour plus the initial
    # pivot; a goal beyond reach would otherwise leave every face seed
    # pointing at positions the speed limit cannot attain
    dT = max(dT, (L / 0.85 + cfg.v_max * turn_in / cfg.omega_max) / (cfg.v_max * H))
    reach_guide = _capped_guide(guide_pts, 0.85 * cfg.v_max * dT)
    if headings is None:
        # reference headings follow the detour guide; a blocked straight line
        # would leave the position chart unable to bend around the obstacle
        samples = np.array([reach_guide(h) for h in range(H + 1)])
        headings = np.empty(H)
        prev = p0[2]
        for h in range(H):
            d = samples[h + 1] - samples[h]
            raw = np.arctan2(d[1], d[0]) if np.linalg.norm(d) > 1e-9 else prev
            headings[h] = prev + wrap_angle(raw - prev)
            prev = headings[h]
        headings[0] = p0[2] + 0.5 * wrap_angle(headings[0] - p0[2])
    headings = np.asarray(headings, float)
    goal[2] = headings[-1] + wrap_angle(goal[2] - headings[-1])

    # layout: p_1..p_H | theta_1..theta_H | v_0..v_{H-1} | dth_0..dth_{H-1} | t | obst binaries
    o_p, o_th = 0, 2 * H
    o_v, o_dth = o_th + H, o_th + 2 * H
    o_t = o_dth + H
    obrows = _ObstacleRows(
        inflated,
        p0[:2], H, dT, (cfg.v_max / np.sqrt(2.0), cfg.v_max / np.sqrt(2.0)), cfg.margin,
    )
    n = o_t + H + obrows.n_binaries
    # turn direction per step comes from chasing the chart headings at the
    # rate limit, so the arc regime needs no sign binary of its own
    wdt = cfg.omega_max * dT
    sgn = np.empty(H)
    th_c = p0[2]
    goal_turn = wrap_angle(goal[2] - headings[-1])
    for h in range(H):
        want = wrap_angle(headings[h] - th_c)
        if abs(want) > 1e-9:
            sgn[h] = np.sign(want)
        else:
            sgn[h] = np.sign(goal_turn) if abs(goal_turn) > 1e-9 else 1.0
        th_c += float(np.clip(want, -wdt, wdt))

    P = np.zeros((n, n))
    q = np.zeros(n)
    for d in range(2):
        j = o_p + 2 * (H - 1) + d
        P[j, j] += 2 * cfg.w_motion_goal
        q[j] += -2 * cfg.w_motion_goal * goal[d]
    j = o_th + H - 1
    P[j, j] += 2 * cfg.w_motion_theta
    q[j] += -2 * cfg.w_motion_theta * goal[2]
    for h in range(H):
        P[o_v + h, o_v + h] += 2 * 0.01
        P[o_dth + h, o_dth + h] += 2 * cfg.w_motion_dtheta
        q[o_t + h] += cfg.w_turn_penalty
        if h > 0:
            a, b = o_v + h, o_v + h - 1
            P[a, a] += 2 * cfg.w_motion_dv
            P[b, b] += 2 * cfg.w_motion_dv
            P[a, b] -= 2 * cfg.w_motion_dv
            P[b, a] -= 2 * cfg.w_motion_dv

    A_eq = np.zeros((3 * H, n))
    b_eq = np.zeros(3 * H)
    for h in range(H):
        r = 3 * h
        # theta_{h+1} = theta_h + dth_h
        A_eq[r, o_th + h] = 1.0
        A_eq[r, o_dth + h] = -1.0
        if h == 0:
            b_eq[r] = p0[2]
        else:
            A_eq[r, o_th + h - 1] = -1.0
        # p_{h+1} = p_h + dT v_h e(heading_h)
        e = np.array([np.cos(headings[h]), np.sin(headings[h])])
        for d in range(2):
            A_eq[r + 1 + d, o_p + 2 * h + d] = 1.0
            A_eq[r + 1 + d, o_v + h] = -dT * e[d]
            if h == 0:
                b_eq[r + 1 + d] = p0[d]
            else:
                A_eq[r + 1 + d, o_p + 2 * (h - 1) + d] = -1.0

    A_in, b_in = [], []
    Mv = cfg.v_max + cfg.R_max * cfg.omega_max
    slope = cfg.R_max / dT
    for h in range(H):
        row = np.zeros(n); row[o_v + h] = 1.0
        A_in.append(row.copy()); b_in.append(cfg.v_max)
        A_in.append(-row); b_in.append(0.0)  # forward drive only
        # straight steps have exactly zero heading change
        row = np.zeros(n); row[o_dth + h] = 1.0; row[o_t + h] = -wdt
        A_in.append(row); b_in.append(0.0)
        row = np.zeros(n); row[o_dth + h] = -1.0; row[o_t + h] = -wdt
        A_in.append(row); b_in.append(0.0)
        # turns follow the chart direction
        row = np.zeros(n); row[o_dth + h] = -sgn[h]
        A_in.append(row); b_in.append(0.0)
        # commandable arcs: v <= (R_max/dT) |dth| when turning
        row = np.zeros(n)
        row[o_v + h] = 1.0; row[o_dth + h] = -slope * sgn[h]
        row[o_t + h] = Mv
        A_in.append(row); b_in.append(Mv)
    rr = _room_rows(room)
    if rr is not None:
        Ar, br = rr
        infl = cfg.margin + cfg.robot_radius
        slack = min(infl, max(float(np.min(br - Ar @ p0[:2])) - 1e-3, 0.0))
        for h in range(1, H + 1):
            m_h = infl if h > 2 else slack
            for i in range(len(br)):
                row = np.zeros(n)
                row[o_p + 2 * (h - 1)] = Ar[i, 0]
                row[o_p + 2 * (h - 1) + 1] = Ar[i, 1]
                A_in.append(row)
                b_in.append(br[i] - m_h)

    def pcols(h):
        return o_p + 2 * (h - 1), o_p + 2 * (h - 1) + 1

    obrows.emplace(A_in, b_in, n, pcols, o_t + H)

    qp = qpsolve.QuadraticProgram(
        P=P, q=q, A_eq=A_eq, b_eq=b_eq, A_in=np.array(A_in), b_in=np.array(b_in)
    )
    bidx = list(range(o_t, n))

    z0 = np.zeros(n)
    samples = np.array([reach_guide(h) for h in range(H + 1)])
    th = p0[2]
    for h in range(1, H + 1):
        z0[o_p + 2 * (h - 1) : o_p + 2 * h] = samples[h]
        z0[o_v + h - 1] = np.linalg.norm(samples[h] - samples[h - 1]) / dT
        # rate-limited chase of the chart heading fixes the turn binaries
        want = wrap_angle(headings[h - 1] - th)
        dth = float(np.clip(want, -wdt, wdt))
        z0[o_dth + h - 1] = dth
        z0[o_t + h - 1] = 1.0 if abs(dth) > 1e-9 else 0.0
        th += dth
        z0[o_th + h - 1] = th
    z0 = obrows.seed(
        z0, lambda h: z0[o_p + 2 * (h - 1) : o_p + 2 * h], inflated, o_t + H
    )
    res = qpsolve.solve_miqp(
        qpsolve.MixedIntegerQP(qp, bidx),
        tol=cfg.solver_tol,
        max_iter=cfg.max_iter,
        node_limit=cfg.node_limit,
        warm=z0,
    )
    if res.status == qpsolve.INFEASIBLE or res.z is None:
        return MotionPlan(
            poses=np.array([p0]), speeds=np.zeros(0), dthetas=np.zeros(0),
            turning=np.zeros(0), objective=np.inf, status=qpsolve.INFEASIBLE,
            nodes=res.nodes_explored, dT=dT,
        )
    poses = np.empty((H + 1, 3))
    poses[0] = p0
    poses[1:, :2] = res.z[o_p : o_p + 2 * H].reshape(H, 2)
    poses[1:, 2] = res.z[o_th : o_th + H]
    return MotionPlan(
        poses=poses,
        speeds=res.z[o_v : o_v + H].copy(),
        dthetas=res.z[o_dth : o_dth + H].copy(),
        turning=np.round(res.z[o_t : o_t + H]).copy(),
        objective=res.objective,
        status=res.status,
        nodes=res.nodes_explored,
        dT=dT,
    )


def _inflated(ob: Obstacle, radius: float) -> Obstacle:
    """Obstacle grown for a disc robot: push every face out by the radius."""
    grown = Obstacle.__new__(Obstacle)
    grown.vertices = ob.vertices
    grown.A = ob.A
    grown.b = ob.b + radius
    return grown


def grasp_goal_for_leg(leg_world, force_dir, cfg: PlannerConfig | None = None) -> np.ndarray:
    """Robot pose from which pulling the leg produces roughly force_dir.

    The base sits standoff metres from the leg along the force direction and
    faces the leg, so the gripper reaches it and the force line is aligned
    with the drive axis."""
    cfg = cfg or PlannerConfig()
    f = np.asarray(force_dir, float)
    nrm = np.linalg.norm(f)
    if nrm < 1e-12:
        raise ValueError("force direction must be nonzero")
    f = f / nrm
    p = np.asarray(leg_world, float) + cfg.standoff * f
    return np.array([p[0], p[1], np.arctan2(-f[1], -f[0])])
