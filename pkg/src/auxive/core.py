"""Adaptive auxiliary-function independent vector extraction (AuxIVE).

All per-bin quantities are stacked on the leading axis:

* ``w``, ``a``: (n_bins, d) extracting and mixing vectors
* ``V``, ``C``: (n_bins, d, d) weighted and plain covariance statistics

The extracted SOI in bin ``k`` is ``w[k].conj() @ x``. Outer products follow
``x x^H``, i.e. ``M[i, j] = x[i] * conj(x[j])``.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from .stft import SpectrogramTensor

logger = logging.getLogger(__name__)

MODES = ("batch", "block_online", "online")


class SingularMatrixError(np.linalg.LinAlgError):
    """A per-bin matrix could not be factorized or normalized."""

    def __init__(self, message: str, bin_index: int):
        super().__init__(f"{message} (frequency bin {bin_index})")
        self.bin_index = bin_index


@dataclass(frozen=True)
class Nonlinearity:
    """Frame weight ``phi(r) = 1 / max(r, eps)`` of the spherical Laplacian model."""

    kind: str = "inverse_norm"
    eps: float = 1e-6

    def __post_init__(self):
        if self.kind != "inverse_norm":
            raise ValueError(f"unsupported nonlinearity {self.kind!r}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    def __call__(self, r):
        return phi(r, self)


@dataclass(frozen=True)
class AuxiveParams:
    block_len: int = 100
    block_shift: int = 75
    alpha: float = 0.0
    iterations_per_block: int = 1
    delta: float = 1e-6
    reference_channel: int = 0
    nonlinearity: Nonlinearity = field(default_factory=Nonlinearity)

    def __post_init__(self):
        if not 1 <= self.block_shift <= self.block_len:
            raise ValueError(
                f"need 1 <= block_shift <= block_len, got {self.block_shift}, {self.block_len}"
            )
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.iterations_per_block < 1:
            raise ValueError("iterations_per_block must be >= 1")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.reference_channel < 0:
            raise ValueError("reference_channel must be >= 0")

    @classmethod
    def block_online(cls, **kw) -> "AuxiveParams":
        return cls(**{"block_len": 100, "block_shift": 75, "alpha": 0.0, **kw})

    @classmethod
    def online(cls, **kw) -> "AuxiveParams":
        return cls(**{"block_len": 1, "block_shift": 1, "alpha": 0.97, **kw})


@dataclass
class DemixState:
    """Mutable statistics of the extractor after ``block_counter`` blocks.

    ``w_prev`` is the extracting vector that entered the most recent mixing
    vector update, kept for checking ``w_prev^H a = 1``. ``V_inv`` (when
    present) is the inverse of the unregularized ``V`` maintained by the
    online rank-one path.
    """

    w: np.ndarray
    a: np.ndarray
    V: np.ndarray
    C: np.ndarray
    V_inv: Optional[np.ndarray] = None
    block_counter: int = 0
    w_prev: Optional[np.ndarray] = None

    @property
    def n_bins(self) -> int:
        return self.w.shape[0]

    @property
    def n_channels(self) -> int:
        return self.w.shape[1]

    def copy(self) -> "DemixState":
        return DemixState(
            self.w.copy(),
            self.a.copy(),
            self.V.copy(),
            self.C.copy(),
            None if self.V_inv is None else self.V_inv.copy(),
            self.block_counter,
            None if self.w_prev is None else self.w_prev.copy(),
        )

    def og_residual(self) -> float:
        """max_k |w_prev^H a - 1|; zero before the first update."""
        if self.w_prev is None:
            return 0.0
        return float(np.max(np.abs(np.einsum("kd,kd->k", self.w_prev.conj(), self.a) - 1.0)))


@dataclass(frozen=True)
class PilotSignal:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("pilot must be one value per frame")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("pilot values must be finite and nonnegative")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    @property
    def active(self) -> np.ndarray:
        return self.values > 0


PilotLike = Union[PilotSignal, np.ndarray, None]


def _pilot_values(pilot: PilotLike, n_frames: int) -> np.ndarray:
    if pilot is None:
        return np.zeros(n_frames)
    values = pilot.values if isinstance(pilot, PilotSignal) else PilotSignal(pilot).values
    if values.size < n_frames:
        raise ValueError(f"pilot covers {values.size} frames, spectrogram has {n_frames}")
    return values


def init_state(d: int, n_bins: int, params: AuxiveParams, online: bool = False) -> DemixState:
    """Extractor that listens to the reference microphone."""
    if d < 2:
        raise ValueError(f"need at least 2 channels, got {d}")
    if params.reference_channel >= d:
        raise ValueError(f"reference channel {params.reference_channel} out of range for {d} channels")
    e = np.zeros((n_bins, d), dtype=complex)
    e[:, params.reference_channel] = 1.0
    eye = np.broadcast_to(np.eye(d, dtype=complex), (n_bins, d, d))
    return DemixState(
        w=e.copy(),
        a=e.copy(),
        V=eye.copy(),
        C=eye.copy(),
        V_inv=eye.copy() if online else None,
    )


def phi(r, nl: Nonlinearity = Nonlinearity()):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("auxiliary variable must be nonnegative")
    out = 1.0 / np.maximum(r, nl.eps)
    return out if out.ndim else float(out)


def _aux_variables(Xb: np.ndarray, w: np.ndarray, pilot: np.ndarray) -> np.ndarray:
    # Xb: (K, L, d), w: (K, d), pilot: (L,) -> r: (L,)
    y = np.einsum("kd,kld->kl", w.conj(), Xb)
    return np.sqrt(np.sum(np.abs(y) ** 2, axis=0) + pilot)


def compute_aux_variable(
    spec: SpectrogramTensor, state: DemixState, frame: int, pilot: PilotLike = None
) -> float:
    """r = sqrt(sum_k |w_k^H x_k|^2 + P) for one frame."""
    if not 0 <= frame < spec.n_frames:
        raise IndexError(f"frame {frame} outside [0, {spec.n_frames})")
    p = _pilot_values(pilot, spec.n_frames)[frame : frame + 1]
    return float(_aux_variables(spec.coeffs[:, frame : frame + 1, :], state.w, p)[0])


def apply_og(C: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Orthogonal-constraint mixing vector ``a = C w / (w^H C w)``.

    Accepts a single bin ((d, d), (d,)) or stacked bins ((K, d, d), (K, d)).
    """
    C = np.asarray(C)
    w = np.asarray(w)
    single = w.ndim == 1
    if single:
        C, w = C[None], w[None]
    Cw = np.einsum("kij,kj->ki", C, w)
    denom = np.einsum("ki,ki->k", w.conj(), Cw)
    scale = np.maximum(np.einsum("kii->k", C).real, np.finfo(float).tiny) * np.sum(np.abs(w) ** 2, axis=1)
    bad = np.flatnonzero(~(np.abs(denom) > 1e-14 * scale))
    if bad.size:
        raise SingularMatrixError("vanishing w^H C w in orthogonal constraint", int(bad[0]))
    a = Cw / denom[:, None]
    return a[0] if single else a


def _regularized(V: np.ndarray, delta: float) -> np.ndarray:
    d = V.shape[-1]
    load = delta * np.einsum("...ii->...", V).real / d
    return V + load[..., None, None] * np.eye(d)


def solve_w(V: np.ndarray, a: np.ndarray, delta: float = 1e-6) -> np.ndarray:
    """``w = (V + delta * tr(V)/d * I)^{-1} a`` by Cholesky factorization."""
    V = np.asarray(V)
    a = np.asarray(a)
    single = a.ndim == 1
    if single:
        V, a = V[None], a[None]
    M = _regularized(V, delta)
    M = 0.5 * (M + M.conj().transpose(0, 2, 1))
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        for k in range(M.shape[0]):
            try:
                np.linalg.cholesky(M[k])
            except np.linalg.LinAlgError:
                raise SingularMatrixError("regularized V is not positive definite", k) from None
        raise
    z = np.linalg.solve(L, a[..., None])
    w = np.linalg.solve(L.conj().transpose(0, 2, 1), z)[..., 0]
    return w[0] if single else w


def _block_bounds(state: DemixState, params: AuxiveParams, n_frames: int) -> Tuple[int, int]:
    start = state.block_counter * params.block_shift
    stop = start + params.block_len
    if stop > n_frames:
        raise IndexError(
            f"block {state.block_counter + 1} spans frames [{start}, {stop}) "
            f"beyond the {n_frames} available"
        )
    return start, stop


def _hermitize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().swapaxes(-1, -2))


def update_block(
    spec: SpectrogramTensor,
    state: DemixState,
    params: AuxiveParams,
    pilot: PilotLike = None,
) -> DemixState:
    """Process the next block of ``block_len`` frames and return the new state."""
    X = spec.coeffs
    start, stop = _block_bounds(state, params, spec.n_frames)
    Xb = X[:, start:stop, :]
    P = _pilot_values(pilot, spec.n_frames)[start:stop]
    alpha = params.alpha
    Lb = params.block_len

    Xt = Xb.transpose(0, 2, 1)  # (K, d, L)
    C_new = _hermitize(alpha * state.C + (1 - alpha) * (Xt @ Xb.conj()) / Lb)

    w = state.w
    for _ in range(params.iterations_per_block):
        r = _aux_variables(Xb, w, P)
        weights = phi(r, params.nonlinearity)
        V_new = _hermitize(alpha * state.V + (1 - alpha) * ((Xt * weights) @ Xb.conj()) / Lb)
        w_used = w
        a_new = apply_og(C_new, w_used)
        w = solve_w(V_new, a_new, params.delta)

    return DemixState(
        w=w,
        a=a_new,
        V=V_new,
        C=C_new,
        V_inv=None,
        block_counter=state.block_counter + 1,
        w_prev=w_used,
    )


_NEUMANN_GUARD = 1e-3


def update_frame_online(
    spec: SpectrogramTensor,
    state: DemixState,
    params: AuxiveParams,
    pilot: PilotLike = None,
) -> DemixState:
    """Single-frame update with the inverse of V tracked by Sherman-Morrison.

    The diagonal loading of :func:`solve_w` is applied through the series
    ``(V + eI)^{-1} a = V^{-1}a - e V^{-2}a + e^2 V^{-3}a``; bins where the
    series would not be accurate to ~1e-9 fall back to a direct solve.
    """
    if params.block_len != 1 or params.block_shift != 1 or not 0.0 < params.alpha < 1.0:
        raise ValueError("online update needs block_len = block_shift = 1 and 0 < alpha < 1")
    start, _ = _block_bounds(state, params, spec.n_frames)
    x = spec.coeffs[:, start, :]  # (K, d)
    P = _pilot_values(pilot, spec.n_frames)[start]
    alpha = params.alpha
    beta = 1.0 - alpha
    d = x.shape[1]

    V_inv = state.V_inv
    if V_inv is None:
        V_inv = np.linalg.inv(state.V)

    y = np.einsum("kd,kd->k", state.w.conj(), x)
    r = float(np.sqrt(np.sum(np.abs(y) ** 2) + P))
    weight = phi(r, params.nonlinearity)

    xxH = x[:, :, None] * x[:, None, :].conj()
    V_new = _hermitize(alpha * state.V + beta * weight * xxH)
    C_new = _hermitize(alpha * state.C + beta * xxH)

    # (aV + b xx^H)^{-1} = (1/a) [V^{-1} - b V^{-1}x x^H V^{-1} / (a + b x^H V^{-1} x)]
    u = np.einsum("kij,kj->ki", V_inv, x)
    denom = alpha + beta * weight * np.einsum("ki,ki->k", x.conj(), u).real
    V_inv_new = (V_inv - (beta * weight / denom)[:, None, None] * u[:, :, None] * u[:, None, :].conj()) / alpha
    broken = np.flatnonzero(np.abs(denom) < 1e-12)
    if broken.size:
        logger.info("rank-one update breakdown in %d bins, inverting directly", broken.size)
        V_inv_new[broken] = np.linalg.inv(V_new[broken])
    V_inv_new = _hermitize(V_inv_new)

    a_new = apply_og(C_new, state.w)

    load = params.delta * np.einsum("kii->k", V_new).real / d
    u0 = np.einsum("kij,kj->ki", V_inv_new, a_new)
    u1 = np.einsum("kij,kj->ki", V_inv_new, u0)
    u2 = np.einsum("kij,kj->ki", V_inv_new, u1)
    w_new = u0 - load[:, None] * u1 + (load**2)[:, None] * u2
    rho = load * np.linalg.norm(V_inv_new, axis=(1, 2))
    direct = np.flatnonzero(rho > _NEUMANN_GUARD)
    if direct.size:
        w_new[direct] = solve_w(V_new[direct], a_new[direct], params.delta)

    return DemixState(
        w=w_new,
        a=a_new,
        V=V_new,
        C=C_new,
        V_inv=V_inv_new,
        block_counter=state.block_counter + 1,
        w_prev=state.w,
    )


@dataclass
class DemixHistory:
    """Extraction operators over time.

    ``filters[j]`` is the projection-back-scaled extracting vector in force
    from frame ``ends[j]`` onwards (``ends[0] = -1`` is the initial state),
    so that the output is ``filters[j, k].conj() @ x``. ``gains[j, k]`` is
    the projection-back coefficient ``a_k[ref]``.
    """

    ends: np.ndarray
    filters: np.ndarray
    gains: np.ndarray
    reference_channel: int = 0

    @classmethod
    def from_states(cls, entries, reference_channel: int) -> "DemixHistory":
        """Build from ``(end_frame, DemixState)`` pairs sorted by end frame."""
        ends, filters, gains = [], [], []
        for end_frame, state in entries:
            gain = _projection_vector(state)[:, reference_channel]
            ends.append(end_frame)
            filters.append(gain.conj()[:, None] * state.w)
            gains.append(gain)
        return cls(np.array(ends, dtype=int), np.stack(filters), np.stack(gains), reference_channel)

    @property
    def n_states(self) -> int:
        return self.ends.size

    def frame_states(self, n_frames: int) -> np.ndarray:
        """Index of the operator applied at each frame (latest block ended at or before it)."""
        return np.searchsorted(self.ends, np.arange(n_frames), side="right") - 1


def _projection_vector(state: DemixState) -> np.ndarray:
    """Mixing vector paired with the current ``w`` through the orthogonal constraint.

    Before any data has been seen (identity statistics) this is ``w`` itself.
    """
    if state.block_counter == 0:
        return state.a
    return apply_og(state.C, state.w)


def apply_history(coeffs: np.ndarray, history: DemixHistory) -> np.ndarray:
    """Apply the time-varying operator of ``history`` to (K, F, d) coefficients -> (K, F)."""
    n_frames = coeffs.shape[1]
    idx = history.frame_states(n_frames)
    out = np.zeros(coeffs.shape[:2], dtype=complex)
    # frames sharing an operator are contiguous
    change = np.flatnonzero(np.diff(idx)) + 1
    bounds = np.concatenate([[0], change, [n_frames]])
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        f = history.filters[idx[lo]]
        out[:, lo:hi] = np.einsum("kd,kld->kl", f.conj(), coeffs[:, lo:hi, :])
    return out


def extract(spec: SpectrogramTensor, history: DemixHistory) -> Tuple[SpectrogramTensor, np.ndarray]:
    """Extracted SOI projected back to the reference microphone.

    Returns the mono spectrogram and the per-frame projection-back gains
    ``a_k[ref]`` (shape (n_bins, n_frames)).
    """
    out = apply_history(spec.coeffs, history)
    idx = history.frame_states(spec.n_frames)
    gains = history.gains[idx].T
    return spec.with_coeffs(out[:, :, None]), gains


@dataclass
class AuxiveResult:
    state: DemixState
    history: DemixHistory
    og_residuals: List[float]


def run(
    spec: SpectrogramTensor,
    params: AuxiveParams,
    mode: str = "block_online",
    pilot: PilotLike = None,
    fast_online: bool = True,
    on_block: Optional[Callable[[DemixState], None]] = None,
) -> AuxiveResult:
    """Run the extractor over the whole spectrogram.

    ``batch`` treats all frames as one block with ``alpha = 0`` and applies the
    final vectors to every frame. ``block_online`` and ``online`` process
    blocks sequentially and record a causal operator history.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    n_frames = spec.n_frames
    d = spec.n_channels
    if mode == "batch":
        params = replace(params, block_len=n_frames, block_shift=n_frames, alpha=0.0)
    elif mode == "online" and (params.block_len != 1 or params.block_shift != 1):
        raise ValueError("online mode needs block_len = block_shift = 1")
    if params.block_len > n_frames:
        raise ValueError(f"block_len {params.block_len} exceeds the {n_frames} available frames")

    use_fast = mode == "online" and fast_online
    state = init_state(d, spec.n_bins, params, online=use_fast)
    pilot_values = _pilot_values(pilot, n_frames)
    entries = [(-1, state)]
    residuals = []
    n_blocks = (n_frames - params.block_len) // params.block_shift + 1
    for _ in range(n_blocks):
        end = state.block_counter * params.block_shift + params.block_len - 1
        if use_fast:
            state = update_frame_online(spec, state, params, pilot_values)
        else:
            state = update_block(spec, state, params, pilot_values)
        residuals.append(state.og_residual())
        if on_block is not None:
            on_block(state)
        if mode != "batch":
            entries.append((end, state))

    if mode == "batch":
        entries = [(-1, state)]
    return AuxiveResult(state, DemixHistory.from_states(entries, params.reference_channel), residuals)
