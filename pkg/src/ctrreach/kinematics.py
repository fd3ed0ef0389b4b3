"""Backbone shape and tip kinematics for nested pre-curved tubes.

Model: piecewise-constant stiffness-weighted curvature over the segments
induced by the tubes' straight/curved spans. Two tiers:

* Rigid -- tubes are torsionally rigid, so each tube's twist angle equals its
  actuator rotation everywhere and every segment is an exact constant
  curvature arc (closed form).
* TorsionallyCompliant -- tube twist angles vary along the backbone. The
  unloaded torsion two-point boundary value problem (actuator-side angles
  prescribed, torsion-free distal tube ends) is solved by shooting on the
  base torsional rates with a damped Newton iteration; integration is RK4 at
  0.1 mm steps. The straight transmission behind the front plate twists at
  the constant base rate.

Conventions: arc length s runs from the front plate (s = 0) to the innermost
tube's tip. Extensions beta_i <= 0 place tube i's tip at s = L_i + beta_i and
its distal length_curved span is the pre-curved part. Curvature vectors are
planar components (u_x, u_y) in mm^-1 of the local frame's angular rate; a
tube rotated by theta contributes Rz(theta) @ (kappa_hat, 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .systems import CtrSystem, bending_stiffness, torsional_stiffness

# Feasibility slack for joint constraints (mm); absorbs projection round-off.
FEAS_TOL = 1e-9
# Segment boundaries closer than this coincide (mm).
BOUNDARY_TOL = 1e-9
# Below this curvature (mm^-1) the arc transform uses its series expansion.
STRAIGHT_EPS = 1e-9
# RK4 step for the torsionally compliant tier (mm).
RK4_STEP = 0.1


class InvalidJoints(ValueError):
    """Joint values violate the extension ordering constraints."""


class ShootingNoConvergence(RuntimeError):
    """The torsion boundary value problem did not converge."""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"shooting failed after {iterations} iterations "
            f"(max residual {residual:.3e} rad/mm)"
        )


class KinematicsTier(Enum):
    Rigid = "rigid"
    TorsionallyCompliant = "compliant"


@dataclass(frozen=True)
class JointConfig:
    """Actuator rotations alpha (rad) and retractions beta (mm, <= 0)."""

    alpha: tuple[float, float, float]
    beta: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    def as_array(self) -> np.ndarray:
        """Flat (beta_1..3, alpha_1..3) vector, matching the action layout."""
        return np.array(self.beta + self.alpha, dtype=float)

    @staticmethod
    def from_array(v: Sequence[float]) -> "JointConfig":
        return JointConfig(alpha=(v[3], v[4], v[5]), beta=(v[0], v[1], v[2]))


@dataclass(frozen=True)
class Segment:
    """One backbone span over which the present/curved tube sets are fixed."""

    s_start: float
    s_end: float
    present_tubes: tuple[int, ...]
    curved_flags: tuple[bool, ...]

    @property
    def length(self) -> float:
        return self.s_end - self.s_start


@dataclass
class BackboneShape:
    """Sampled backbone curve; points[0] is the base, points[-1] the tip."""

    s: np.ndarray
    points: np.ndarray

    @property
    def tip(self) -> np.ndarray:
        return self.points[-1]

    def to_csv(self, path, manifest_hash: str | None = None) -> None:
        rows = np.column_stack([self.s, self.points])
        header = "s,x,y,z"
        if manifest_hash:
            header = f"# manifest: {manifest_hash}\n{header}"
        np.savetxt(path, rows, delimiter=",", header=header, comments="")


def check_joints(sys: CtrSystem, q: JointConfig) -> list[str]:
    """Return violations of the retraction ordering / exposure constraints."""
    b1, b2, b3 = q.beta
    l1, l2, l3 = (t.length_total for t in sys.tubes)
    problems = []
    if not (0.0 >= b3 - FEAS_TOL and b3 >= b2 - FEAS_TOL and b2 >= b1 - FEAS_TOL):
        problems.append(f"retraction ordering 0 >= beta3 >= beta2 >= beta1 violated: {q.beta}")
    e1, e2, e3 = l1 + b1, l2 + b2, l3 + b3
    if not (e3 >= -FEAS_TOL and e2 >= e3 - FEAS_TOL and e1 >= e2 - FEAS_TOL):
        problems.append(
            "exposed-length ordering 0 <= L3+beta3 <= L2+beta2 <= L1+beta1 "
            f"violated: ({e1}, {e2}, {e3})"
        )
    return problems


def _require_valid(sys: CtrSystem, q: JointConfig) -> None:
    problems = check_joints(sys, q)
    if problems:
        raise InvalidJoints("; ".join(problems))


def segment_tubes(sys: CtrSystem, q: JointConfig) -> list[Segment]:
    """Split [0, L1+beta1] at every straight/curved transition and tube end.

    Tubes whose exposed length is zero (or negative within tolerance) do not
    contribute segments.
    """
    _require_valid(sys, q)
    exposed = [t.length_total + b for t, b in zip(sys.tubes, q.beta)]
    curve_start = [
        max(0.0, e - t.length_curved) for e, t in zip(exposed, sys.tubes)
    ]
    bounds = [0.0]
    for i in range(3):
        if exposed[i] > BOUNDARY_TOL:
            bounds.extend([curve_start[i], exposed[i]])
    uniq: list[float] = []
    for b in sorted(bounds):
        if not uniq or b - uniq[-1] > BOUNDARY_TOL:
            uniq.append(b)
    segments = []
    for s0, s1 in zip(uniq[:-1], uniq[1:]):
        present = tuple(
            i for i in range(3)
            if exposed[i] > BOUNDARY_TOL and exposed[i] >= s1 - BOUNDARY_TOL
        )
        if not present:
            continue
        curved = tuple(s0 >= curve_start[i] - BOUNDARY_TOL for i in present)
        segments.append(Segment(s0, s1, present, curved))
    return segments


def resultant_curvature(
    sys: CtrSystem,
    segment: Segment,
    theta: Sequence[float],
) -> np.ndarray:
    """Stiffness-weighted planar curvature (mm^-1) of one segment.

    theta holds the absolute twist angle of each tube over this segment;
    straight-flagged tubes add bending stiffness but no curvature.
    """
    num = np.zeros(2)
    denom = 0.0
    for i, is_curved in zip(segment.present_tubes, segment.curved_flags):
        k = bending_stiffness(sys.tubes[i])
        denom += k
        if is_curved:
            kap = sys.tubes[i].precurvature_per_mm
            num += k * kap * np.array([math.cos(theta[i]), math.sin(theta[i])])
    return num / denom


def _arc_coefficients(phi: float) -> tuple[float, float, float]:
    """Rodrigues coefficients (sin phi/phi, (1-cos phi)/phi^2, (phi-sin phi)/phi^3)."""
    if phi < 1e-6:
        p2 = phi * phi
        return 1.0 - p2 / 6.0, 0.5 - p2 / 24.0, 1.0 / 6.0 - p2 / 120.0
    return (math.sin(phi) / phi,
            (1.0 - math.cos(phi)) / (phi * phi),
            (phi - math.sin(phi)) / (phi * phi * phi))


def arc_transform(u: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact rigid transform (R, p) of a constant-curvature arc of length h.

    u is the planar curvature (u_x, u_y) in mm^-1. Below STRAIGHT_EPS the
    series branch yields the pure-translation limit.
    """
    kappa = math.hypot(u[0], u[1])
    wx, wy = u[0] * h, u[1] * h
    phi = kappa * h
    a, b, c = _arc_coefficients(phi) if kappa >= STRAIGHT_EPS else (1.0, 0.5, 1.0 / 6.0)
    W = np.array([[0.0, 0.0, wy],
                  [0.0, 0.0, -wx],
                  [-wy, wx, 0.0]])
    W2 = W @ W
    R = np.eye(3) + a * W + b * W2
    p = (np.eye(3) * h + b * h * W + c * h * W2) @ np.array([0.0, 0.0, 1.0])
    return R, p


def forward_kinematics(
    sys: CtrSystem,
    q: JointConfig,
    tier: KinematicsTier = KinematicsTier.Rigid,
    samples_per_segment: int = 10,
) -> BackboneShape:
    """Backbone shape in the robot base frame. Raises InvalidJoints."""
    segments = segment_tubes(sys, q)
    if not segments:
        zero = np.zeros((1, 3))
        return BackboneShape(s=np.zeros(1), points=zero)
    if tier is KinematicsTier.Rigid:
        return _rigid_shape(sys, q, segments, samples_per_segment)
    return _compliant_solve(sys, q, segments, samples_per_segment)[0]


def tip_position(
    sys: CtrSystem,
    q: JointConfig,
    tier: KinematicsTier = KinematicsTier.Rigid,
) -> np.ndarray:
    """Tip only; skips backbone sampling (the hot path for the environment)."""
    segments = segment_tubes(sys, q)
    if not segments:
        return np.zeros(3)
    if tier is KinematicsTier.Rigid:
        return _rigid_tip(sys, q, segments)
    return _compliant_solve(sys, q, segments, samples_per_segment=0)[0].tip


def _rigid_tip(sys: CtrSystem, q: JointConfig, segments: list[Segment]) -> np.ndarray:
    R = np.eye(3)
    p = np.zeros(3)
    for seg in segments:
        u = resultant_curvature(sys, seg, q.alpha)
        A, t = arc_transform(u, seg.length)
        p = p + R @ t
        R = R @ A
    return p


def _rigid_shape(
    sys: CtrSystem,
    q: JointConfig,
    segments: list[Segment],
    samples_per_segment: int,
) -> BackboneShape:
    n = max(1, int(samples_per_segment))
    s_vals = [0.0]
    pts = [np.zeros(3)]
    R = np.eye(3)
    p = np.zeros(3)
    for seg in segments:
        u = resultant_curvature(sys, seg, q.alpha)
        for k in range(1, n + 1):
            h = seg.length * k / n
            _, t = arc_transform(u, h)
            pts.append(p + R @ t)
            s_vals.append(seg.s_start + h)
        A, t = arc_transform(u, seg.length)
        p = p + R @ t
        R = R @ A
    return BackboneShape(s=np.array(s_vals), points=np.array(pts))


# --------------------------------------------------------------------------
# Torsionally compliant tier.
# --------------------------------------------------------------------------

@dataclass
class _TorsionPlan:
    """Per-segment constants for the torsion ODE, precomputed once."""

    lengths: np.ndarray          # (S,)
    boundaries: np.ndarray       # (S + 1,)
    present: np.ndarray          # (S, 3) float mask
    curve_coef: np.ndarray       # (S, 3) K_i * kappa_hat_i where curved else 0
    tors_coef: np.ndarray        # (S, 3) (K_i / C_i) * kappa_hat_i where curved else 0
    denom: np.ndarray            # (S,) sum of present bending stiffness
    end_boundary: np.ndarray     # (3,) index of the boundary where each tube ends (-1: none)
    transmission: np.ndarray     # (3,) straight length behind the front plate


def _torsion_plan(sys: CtrSystem, q: JointConfig, segments: list[Segment]) -> _TorsionPlan:
    S = len(segments)
    K = np.array([bending_stiffness(t) for t in sys.tubes])
    C = np.array([torsional_stiffness(t) for t in sys.tubes])
    kap = np.array([t.precurvature_per_mm for t in sys.tubes])
    present = np.zeros((S, 3))
    curve_coef = np.zeros((S, 3))
    tors_coef = np.zeros((S, 3))
    denom = np.zeros(S)
    for si, seg in enumerate(segments):
        for i, is_curved in zip(seg.present_tubes, seg.curved_flags):
            present[si, i] = 1.0
            denom[si] += K[i]
            if is_curved:
                curve_coef[si, i] = K[i] * kap[i]
                tors_coef[si, i] = (K[i] / C[i]) * kap[i]
    boundaries = np.array([segments[0].s_start] + [s.s_end for s in segments])
    exposed = np.array([t.length_total + b for t, b in zip(sys.tubes, q.beta)])
    end_boundary = np.full(3, -1, dtype=int)
    for i in range(3):
        hits = np.nonzero(np.abs(boundaries - exposed[i]) <= BOUNDARY_TOL)[0]
        if hits.size:
            end_boundary[i] = hits[-1]
    lengths = np.array([s.length for s in segments])
    transmission = np.array([-b for b in q.beta])
    return _TorsionPlan(lengths, boundaries, present, curve_coef, tors_coef,
                        denom, end_boundary, transmission)


def _torsion_rhs(plan: _TorsionPlan, si: int, theta: np.ndarray, m: np.ndarray):
    """Derivatives (dtheta, dm) for batched states within segment si."""
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    ubx = (cos_t * plan.curve_coef[si]).sum(axis=-1) / plan.denom[si]
    uby = (sin_t * plan.curve_coef[si]).sum(axis=-1) / plan.denom[si]
    # Bending curvature seen in each tube's own frame (y component).
    u_y = -sin_t * ubx[..., None] + cos_t * uby[..., None]
    dm = -plan.tors_coef[si] * u_y
    dtheta = m * plan.present[si]
    return dtheta, dm


def _integrate_torsion(plan: _TorsionPlan, theta0: np.ndarray, m0: np.ndarray):
    """RK4 over all segments; returns the base-rate residuals (B, 3)."""
    theta, m = theta0.copy(), m0.copy()
    residual = np.zeros_like(m0)
    for si in range(plan.lengths.size):
        n = max(1, math.ceil(plan.lengths[si] / RK4_STEP))
        h = plan.lengths[si] / n
        for _ in range(n):
            dt1, dm1 = _torsion_rhs(plan, si, theta, m)
            dt2, dm2 = _torsion_rhs(plan, si, theta + 0.5 * h * dt1, m + 0.5 * h * dm1)
            dt3, dm3 = _torsion_rhs(plan, si, theta + 0.5 * h * dt2, m + 0.5 * h * dm2)
            dt4, dm4 = _torsion_rhs(plan, si, theta + h * dt3, m + h * dm3)
            theta = theta + (h / 6.0) * (dt1 + 2 * dt2 + 2 * dt3 + dt4)
            m = m + (h / 6.0) * (dm1 + 2 * dm2 + 2 * dm3 + dm4)
        ends = plan.end_boundary == si + 1
        if ends.any():
            residual[..., ends] = m[..., ends]
    return residual


def _solve_torsion_rates(
    plan: _TorsionPlan,
    alpha: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> np.ndarray:
    """Shoot on the base torsional rates m(0) so distal ends are torsion-free.

    Tubes with no exposed length get residual = rate, pinning them at zero.
    """
    fd = 1e-6

    def residuals(x: np.ndarray) -> np.ndarray:
        theta0 = alpha + plan.transmission * x
        res = _integrate_torsion(plan, theta0, x.copy())
        unseen = plan.end_boundary < 0
        res[..., unseen] = x[..., unseen]
        return res

    x = np.zeros(3)
    err = math.inf
    for it in range(max_iter):
        # One batched pass integrates the residual and its three forward
        # difference probes together.
        batch = np.vstack([x[None], x[None] + fd * np.eye(3)])
        rr = residuals(batch)
        r = rr[0]
        err = float(np.abs(r).max())
        if err < tol:
            return x
        J = (rr[1:] - r).T / fd
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            raise ShootingNoConvergence(err, it) from None
        scale = 1.0
        for _ in range(10):
            x_new = x + scale * step
            r_new = residuals(x_new[None])[0]
            if np.abs(r_new).max() < err:
                x = x_new
                break
            scale *= 0.5
        else:
            raise ShootingNoConvergence(err, it)
    r = residuals(x[None])[0]
    err = float(np.abs(r).max())
    if err < tol:
        return x
    raise ShootingNoConvergence(err, max_iter)


def _compliant_solve(
    sys: CtrSystem,
    q: JointConfig,
    segments: list[Segment],
    samples_per_segment: int,
) -> tuple[BackboneShape, np.ndarray]:
    """Solve the torsion BVP, then integrate the frame along the backbone.

    Returns the shape and the converged base torsional rates.
    """
    plan = _torsion_plan(sys, q, segments)
    rates = _solve_torsion_rates(plan, np.array(q.alpha))
    theta = np.array(q.alpha) + plan.transmission * rates
    m = rates.copy()
    R = np.eye(3)
    p = np.zeros(3)
    s_vals = [0.0]
    pts = [p.copy()]
    e3 = np.array([0.0, 0.0, 1.0])
    for si, seg in enumerate(segments):
        n = max(1, math.ceil(seg.length / RK4_STEP))
        record_every = 0
        if samples_per_segment > 0:
            n = math.ceil(n / samples_per_segment) * samples_per_segment
            record_every = n // samples_per_segment
        h = seg.length / n
        for k in range(n):
            def rhs(theta_k, m_k, R_k):
                dth, dm = _torsion_rhs(plan, si, theta_k, m_k)
                cos_t, sin_t = np.cos(theta_k), np.sin(theta_k)
                ubx = (cos_t * plan.curve_coef[si]).sum() / plan.denom[si]
                uby = (sin_t * plan.curve_coef[si]).sum() / plan.denom[si]
                U = np.array([[0.0, 0.0, uby],
                              [0.0, 0.0, -ubx],
                              [-uby, ubx, 0.0]])
                return dth, dm, R_k @ U, R_k[:, 2]

            dt1, dm1, dR1, dp1 = rhs(theta, m, R)
            dt2, dm2, dR2, dp2 = rhs(theta + 0.5 * h * dt1, m + 0.5 * h * dm1, R + 0.5 * h * dR1)
            dt3, dm3, dR3, dp3 = rhs(theta + 0.5 * h * dt2, m + 0.5 * h * dm2, R + 0.5 * h * dR2)
            dt4, dm4, dR4, dp4 = rhs(theta + h * dt3, m + h * dm3, R + h * dR3)
            theta = theta + (h / 6.0) * (dt1 + 2 * dt2 + 2 * dt3 + dt4)
            m = m + (h / 6.0) * (dm1 + 2 * dm2 + 2 * dm3 + dm4)
            R = R + (h / 6.0) * (dR1 + 2 * dR2 + 2 * dR3 + dR4)
            p = p + (h / 6.0) * (dp1 + 2 * dp2 + 2 * dp3 + dp4)
            if record_every and (k + 1) % record_every == 0:
                s_vals.append(seg.s_start + (k + 1) * h)
                pts.append(p.copy())
    if abs(s_vals[-1] - segments[-1].s_end) > BOUNDARY_TOL:
        s_vals.append(segments[-1].s_end)
        pts.append(p.copy())
    return BackboneShape(s=np.array(s_vals), points=np.array(pts)), rates


# --------------------------------------------------------------------------
# Finite-difference Jacobian.
# --------------------------------------------------------------------------

FD_STEP_MM = 1e-3
FD_STEP_RAD = 1e-3


def _beta_interval(sys: CtrSystem, beta: Sequence[float], k: int) -> tuple[float, float]:
    """Feasible interval for beta_k with the other retractions held fixed."""
    l1, l2, l3 = (t.length_total for t in sys.tubes)
    b1, b2, b3 = beta
    if k == 0:
        return max(-l1, l2 + b2 - l1), b2
    if k == 1:
        return max(b1, l3 + b3 - l2), min(b3, l1 + b1 - l2)
    return max(b2, -l3), min(0.0, l2 + b2 - l3)


def jacobian(
    sys: CtrSystem,
    q: JointConfig,
    tier: KinematicsTier = KinematicsTier.Rigid,
) -> np.ndarray:
    """3x6 tip Jacobian w.r.t. (beta_1..3, alpha_1..3) by central differences.

    Retraction perturbations are clamped into the feasible set; a column
    degenerates to zeros only if the joint is pinned on both sides.
    """
    _require_valid(sys, q)
    base = q.as_array()
    J = np.zeros((3, 6))
    for col in range(6):
        h = FD_STEP_MM if col < 3 else FD_STEP_RAD
        v_plus, v_minus = base.copy(), base.copy()
        if col < 3:
            lo, hi = _beta_interval(sys, q.beta, col)
            v_plus[col] = min(base[col] + h, hi)
            v_minus[col] = max(base[col] - h, lo)
        else:
            v_plus[col] = base[col] + h
            v_minus[col] = base[col] - h
        span = v_plus[col] - v_minus[col]
        if span <= 0.0:
            continue
        t_plus = tip_position(sys, JointConfig.from_array(v_plus), tier)
        t_minus = tip_position(sys, JointConfig.from_array(v_minus), tier)
        J[:, col] = (t_plus - t_minus) / span
    return J
