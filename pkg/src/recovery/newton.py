"""
Newton refinement of delay/Doppler estimates off the dictionary grid.

Per-target objective, gain β held fixed:
    S(τ, α) = 2·Re{h_r^H a(τ, α) β} - |β|²·‖a‖²
where h_r is the residual without this target. The joint refinement works on
-J with J = ‖h_s - Σ_k a_k β_k‖².

Internally all steps are taken in resolution-cell coordinates
u = τ·NΔf, w = α·MT_o, and the gain is held at a phase reference placed on
the centroid of Ω_s. The reference shift leaves S and J unchanged but keeps
the gain phase from dragging (τ, α) between Newton steps.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.core.types import (
    ChannelVector,
    Detection,
    DetectionFlag,
    DetectionSet,
    GridConfig,
    Provenance,
    ResourceSet,
)
from src.core.utils import wrap_cells, wrap_centered

logger = logging.getLogger(__name__)

GLOBAL_MODES = ("block_diagonal", "full_block")

# step halvings tried before falling back to a gradient step
_MAX_HALVINGS = 6


@dataclass(frozen=True, eq=False)
class ObjectiveEval:
    """Objective value with its gradient and Hessian in (τ, α) units."""
    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        hess = np.asarray(self.hessian, dtype=float)
        scale = max(np.max(np.abs(hess)), np.finfo(float).tiny)
        if np.max(np.abs(hess - hess.T)) > 1e-10 * scale:
            raise ValueError("hessian must be symmetric")


class _CellFrame:
    """Phase slopes of Ω_s in cell coordinates around a chosen phase reference."""

    def __init__(self, config: GridConfig, rs: ResourceSet, centered: bool):
        N, M = config.shape
        n = rs.subcarriers.astype(float)
        m = rs.symbols.astype(float)
        self.n_ref = float(n.mean()) if centered else 0.0
        self.m_ref = float(m.mean()) if centered else 0.0
        self.kn = -2.0 * np.pi * (n - self.n_ref) / N
        self.km = 2.0 * np.pi * (m - self.m_ref) / M
        self.size = n.size
        self.N, self.M = N, M
        self.scale = np.array([N * config.subcarrier_spacing, M * config.symbol_duration])
        self.kn2 = float(np.dot(self.kn, self.kn))
        self.knm = float(np.dot(self.kn, self.km))
        self.km2 = float(np.dot(self.km, self.km))

    # --- coordinates -------------------------------------------------------

    def to_cells(self, delay: float, doppler: float) -> Tuple[float, float]:
        return delay * self.scale[0], doppler * self.scale[1]

    def from_cells(self, u: float, w: float) -> Tuple[float, float]:
        u = float(wrap_cells(u, self.N))
        w = float(wrap_centered(w, self.M))
        return u / self.scale[0], w / self.scale[1]

    def reference_phase(self, u, w):
        """Phase of the uncentered atom at the reference point."""
        return -2.0 * np.pi * self.n_ref * u / self.N + 2.0 * np.pi * self.m_ref * w / self.M

    def to_frame_gain(self, gain, u, w):
        return gain * np.exp(1j * self.reference_phase(u, w))

    def from_frame_gain(self, gain, u, w):
        return gain * np.exp(-1j * self.reference_phase(u, w))

    # --- per-target objective ---------------------------------------------

    def atom(self, u: float, w: float) -> np.ndarray:
        return np.exp(1j * (self.kn * u + self.km * w))

    def local_value(self, h: np.ndarray, u: float, w: float, beta: complex) -> float:
        a = self.atom(u, w)
        return float(2.0 * np.real(beta * np.vdot(h, a)) - abs(beta) ** 2 * self.size)

    def local_terms(self, h: np.ndarray, u: float, w: float, beta: complex):
        """S, its gradient and its Hessian in cell coordinates."""
        a = self.atom(u, w)
        r = h - a * beta
        value = 2.0 * np.real(beta * np.vdot(h, a)) - abs(beta) ** 2 * self.size
        rb = np.conj(r) * a * beta  # r^H (· a β) elementwise
        grad = np.array([
            2.0 * np.real(np.sum(rb * 1j * self.kn)),
            2.0 * np.real(np.sum(rb * 1j * self.km)),
        ])
        g2 = 2.0 * abs(beta) ** 2
        h_uu = 2.0 * np.real(np.sum(rb * -(self.kn ** 2))) - g2 * self.kn2
        h_uw = 2.0 * np.real(np.sum(rb * -(self.kn * self.km))) - g2 * self.knm
        h_ww = 2.0 * np.real(np.sum(rb * -(self.km ** 2))) - g2 * self.km2
        hess = np.array([[h_uu, h_uw], [h_uw, h_ww]])
        return float(value), grad, hess

    def gradient_step(self, grad: np.ndarray, beta: complex) -> Optional[np.ndarray]:
        """Ascent step scaled by the Gauss-Newton curvature 2|β|²‖∂a‖² per axis."""
        curvature = 2.0 * abs(beta) ** 2 * np.array([self.kn2, self.km2])
        if np.any(curvature <= 0):
            return None
        return grad / curvature

    # --- joint objective -----------------------------------------------------

    def atoms(self, U: np.ndarray, W: np.ndarray) -> np.ndarray:
        return np.exp(1j * (self.kn[:, None] * U[None, :] + self.km[:, None] * W[None, :]))

    def joint_value(self, h: np.ndarray, U: np.ndarray, W: np.ndarray, B: np.ndarray) -> float:
        r = h - self.atoms(U, W) @ B
        return -float(np.vdot(r, r).real)

    def joint_terms(self, h: np.ndarray, U: np.ndarray, W: np.ndarray, B: np.ndarray):
        """-J, its gradient and the 2K×2K block Hessian in cell coordinates."""
        A = self.atoms(U, W)
        r = h - A @ B
        K = B.size
        D_u = 1j * self.kn[:, None] * A * B[None, :]
        D_w = 1j * self.km[:, None] * A * B[None, :]
        grad = np.empty(2 * K)
        grad[0::2] = 2.0 * np.real(np.conj(r) @ D_u)
        grad[1::2] = 2.0 * np.real(np.conj(r) @ D_w)

        hess = np.empty((2 * K, 2 * K))
        for k in range(K):
            hess[2 * k:2 * k + 2, 2 * k:2 * k + 2] = _case_one_block(self, r, A[:, k], B[k])
            for l in range(k + 1, K):
                block = _case_two_block(D_u[:, k], D_w[:, k], D_u[:, l], D_w[:, l])
                hess[2 * k:2 * k + 2, 2 * l:2 * l + 2] = block
                hess[2 * l:2 * l + 2, 2 * k:2 * k + 2] = block.T
        return -float(np.vdot(r, r).real), grad, hess


def _case_one_block(frame: _CellFrame, r: np.ndarray, a: np.ndarray, beta: complex) -> np.ndarray:
    """Diagonal block: the per-target second derivatives on the joint residual."""
    rb = np.conj(r) * a * beta
    g2 = 2.0 * abs(beta) ** 2
    h_uu = 2.0 * np.real(np.sum(rb * -(frame.kn ** 2))) - g2 * frame.kn2
    h_uw = 2.0 * np.real(np.sum(rb * -(frame.kn * frame.km))) - g2 * frame.knm
    h_ww = 2.0 * np.real(np.sum(rb * -(frame.km ** 2))) - g2 * frame.km2
    return np.array([[h_uu, h_uw], [h_uw, h_ww]])


def _case_two_block(du_k, dw_k, du_l, dw_l) -> np.ndarray:
    """Off-diagonal block -2·Re{(∂a_k β_k)^H (∂a_l β_l)}."""
    return -2.0 * np.real(np.array([
        [np.vdot(du_k, du_l), np.vdot(du_k, dw_l)],
        [np.vdot(dw_k, du_l), np.vdot(dw_k, dw_l)],
    ]))


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> Optional[np.ndarray]:
    """Ascent step -H⁻¹g, or None when H is not negative definite."""
    if not np.all(np.isfinite(hess)):
        return None
    try:
        factor = cho_factor(-hess, lower=True)
    except LinAlgError:
        return None
    step = cho_solve(factor, grad)
    if not np.all(np.isfinite(step)):
        return None
    return step


def objective_derivatives(est: Detection, residual: ChannelVector, config: GridConfig) -> ObjectiveEval:
    """
    S and its first and second partial derivatives at an estimate.

    Uses ∂a/∂τ = (-j2πnΔf)⊙a and ∂a/∂α = (j2πmT_o)⊙a with
        Ṡ_x  = 2·Re{(h_r - aβ)^H ∂_x a β}
        S̈_xy = 2·Re{(h_r - aβ)^H ∂_xy a β} - 2|β|²·Re{∂_x a^H ∂_y a}

    Args:
        est: Current (τ̂, α̂, β̂)
        residual: h_r without this target's contribution
        config: Grid constants

    Returns:
        ObjectiveEval with gradient (∂S/∂τ, ∂S/∂α) and the 2×2 Hessian
    """
    frame = _CellFrame(config, residual.resource_set, centered=False)
    u, w = frame.to_cells(est.delay, est.doppler)
    value, grad, hess = frame.local_terms(residual.values, u, w, est.gain)
    return ObjectiveEval(value, grad * frame.scale, hess * np.outer(frame.scale, frame.scale))


def _local_step(frame: _CellFrame, h, u, w, beta, step_guard: bool) -> Tuple[float, float, bool]:
    value, grad, hess = frame.local_terms(h, u, w, beta)
    directions: List[np.ndarray] = []
    newton = _newton_direction(hess, grad)
    if newton is not None:
        directions.append(newton)
    gradient = frame.gradient_step(grad, beta)
    if gradient is not None:
        directions.append(gradient)
    if not directions:
        return u, w, False
    if not step_guard:
        d = directions[0]
        return u + d[0], w + d[1], True

    for d in directions:
        t = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            cand_u, cand_w = u + t * d[0], w + t * d[1]
            if frame.local_value(h, cand_u, cand_w, beta) > value:
                return cand_u, cand_w, True
            t *= 0.5
    return u, w, False


def refine_local(
    est: Detection,
    residual: ChannelVector,
    config: GridConfig,
    steps: int = 5,
    step_guard: bool = True,
) -> Detection:
    """
    R_s Newton steps on one estimate, re-fitting β̂ = a^H h_r / ‖a‖² after each.

    With step_guard a step is accepted only when S increases; otherwise it is
    halved up to six times, then a gradient step is tried, else the estimate
    stays put. A Hessian that is not negative definite switches to the
    gradient step. The residual is not modified.

    Args:
        est: Starting estimate (coarse or previously refined)
        residual: h_r without this target's contribution
        config: Grid constants
        steps: R_s >= 0
        step_guard: Enable the monotone step guard

    Returns:
        Detection wrapped into the unambiguous spans, provenance locally_refined
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if steps == 0:
        return Detection(est.delay, est.doppler, est.gain, Provenance.LOCALLY_REFINED)

    frame = _CellFrame(config, residual.resource_set, centered=True)
    h = residual.values
    u, w = frame.to_cells(est.delay, est.doppler)
    beta = frame.to_frame_gain(est.gain, u, w)

    for step in range(steps):
        u, w, moved = _local_step(frame, h, u, w, beta, step_guard)
        beta = np.vdot(frame.atom(u, w), h) / frame.size
        if not moved:
            logger.debug(f"Local refinement settled after {step} steps")
            break

    # unwrapped coordinates: the centred atom is not periodic, the plain one is
    gain = frame.from_frame_gain(beta, u, w)
    delay, doppler = frame.from_cells(u, w)
    return Detection(delay, doppler, gain, Provenance.LOCALLY_REFINED)


def joint_derivatives(
    detections: Sequence[Detection], measurement: ChannelVector, config: GridConfig
) -> ObjectiveEval:
    """
    -J = -‖h_s - Σ a_k β_k‖² with its gradient and full 2K×2K Hessian.

    Parameters are ordered (τ_1, α_1, τ_2, α_2, ...). Diagonal blocks are the
    per-target second derivatives against the joint residual; off-diagonal
    blocks are -2·Re{(∂a_k β_k)^H ∂a_l β_l}.
    """
    detections = list(detections)
    frame = _CellFrame(config, measurement.resource_set, centered=False)
    U = np.array([d.delay for d in detections]) * frame.scale[0]
    W = np.array([d.doppler for d in detections]) * frame.scale[1]
    B = np.array([d.gain for d in detections], dtype=np.complex128)
    value, grad, hess = frame.joint_terms(measurement.values, U, W, B)
    scale = np.tile(frame.scale, len(detections))
    return ObjectiveEval(value, grad * scale, hess * np.outer(scale, scale))


def refine_global(
    detections: DetectionSet,
    measurement: ChannelVector,
    config: GridConfig,
    mode: str = "block_diagonal",
    step_guard: bool = True,
) -> DetectionSet:
    """
    One joint Newton update of every (τ̂, α̂) against the full measurement.

    full_block solves the complete 2K×2K system and falls back to the
    block-diagonal relaxation (flagged) when it is not negative definite.
    block_diagonal solves each 2×2 block on its own; a block that is not
    negative definite is skipped and flagged. Gains stay fixed; the guard
    accepts the update only when J decreases.

    Args:
        detections: Current estimates (at least one)
        measurement: h_s
        config: Grid constants
        mode: 'block_diagonal' or 'full_block'
        step_guard: Enable the monotone step guard

    Returns:
        DetectionSet with provenance globally_refined and the raised flags
    """
    if mode not in GLOBAL_MODES:
        raise ValueError(f"Unknown global mode '{mode}'. Valid: {', '.join(GLOBAL_MODES)}")
    items = list(detections)
    if not items:
        raise ValueError("global refinement needs at least one detection")

    frame = _CellFrame(config, measurement.resource_set, centered=True)
    h = measurement.values
    K = len(items)
    U = np.array([d.delay for d in items]) * frame.scale[0]
    W = np.array([d.doppler for d in items]) * frame.scale[1]
    B = frame.to_frame_gain(np.array([d.gain for d in items], dtype=np.complex128), U, W)

    value, grad, hess = frame.joint_terms(h, U, W, B)
    flags = set()
    direction = None
    if mode == "full_block":
        direction = _newton_direction(hess, grad)
        if direction is None:
            flags.add(DetectionFlag.BLOCK_FALLBACK)
            logger.warning("Full block Hessian not negative definite, using block-diagonal update")

    active = np.ones(K, dtype=bool)
    if direction is None:
        direction = np.zeros(2 * K)
        for k in range(K):
            sl = slice(2 * k, 2 * k + 2)
            step = _newton_direction(hess[sl, sl], grad[sl])
            if step is None:
                active[k] = False
                flags.add(DetectionFlag.SINGULAR_BLOCK)
                logger.warning(f"Singular Hessian block for target {k}, skipping its update")
            else:
                direction[sl] = step

    def _apply(d: np.ndarray, t: float):
        return U + t * d[0::2], W + t * d[1::2]

    new_U, new_W = U, W
    if not step_guard:
        new_U, new_W = _apply(direction, 1.0)
    else:
        fallback = np.zeros(2 * K)
        for k in np.flatnonzero(active):
            g_step = frame.gradient_step(grad[2 * k:2 * k + 2], B[k])
            if g_step is not None:
                fallback[2 * k:2 * k + 2] = g_step
        accepted = False
        for d in (direction, fallback):
            if not np.any(d):
                continue
            t = 1.0
            for _ in range(_MAX_HALVINGS + 1):
                cand_U, cand_W = _apply(d, t)
                if -frame.joint_value(h, cand_U, cand_W, B) < -value:
                    new_U, new_W = cand_U, cand_W
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            logger.debug("Global refinement step rejected by guard, estimates unchanged")

    refined = []
    for k in range(K):
        gain = frame.from_frame_gain(B[k], new_U[k], new_W[k])
        delay, doppler = frame.from_cells(new_U[k], new_W[k])
        refined.append(Detection(delay, doppler, gain, Provenance.GLOBALLY_REFINED))
    return DetectionSet(
        tuple(refined),
        flags=frozenset(flags),
        iterations=detections.iterations if isinstance(detections, DetectionSet) else 0,
        residual_trace=detections.residual_trace if isinstance(detections, DetectionSet) else (),
    )
