"""Grid model spaces and the carré du champ calculus.

Two compact model spaces are provided, both sampled on a uniform grid over the
unit cube ``[0, 1)^3`` with cell ``(i, j, k)`` at ``(i/n_x, j/n_y, k/n_z)``:

``heisenberg``
    The Heisenberg nilmanifold, i.e. the quotient of the Heisenberg group by
    its integer lattice.  The horizontal frame is ``X1 = d/dx`` and
    ``X2 = d/dy + x d/dz`` and the vertical field is ``Z = d/dz = [X1, X2]``.
    Points are identified by ``(x, y, z) ~ (x + 1, y, z + y)`` and plainly
    periodically in ``y`` and ``z``.

``torus``
    The flat 3-torus with ``X1 = d/dx``, ``X2 = d/dy`` and ``Z = d/dz``.

All derivatives are second-order centered differences.  ``L`` is assembled as
``D_xx + D_yy + 2 x D_yz + x^2 D_zz`` (the shear terms vanish on the torus)
with compact second differences, which keeps it exactly symmetric, negative
semidefinite and free of checkerboard null modes.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "Kind",
    "ModelSpace",
    "GridField",
    "SpaceMismatch",
    "apply_L",
    "gamma",
    "gamma_Z",
    "gamma2",
    "gamma2_Z",
    "gamma_identity",
    "frame_derivatives",
    "integrate",
    "band_limited_field",
    "resolution_indicator",
]


class SpaceMismatch(ValueError):
    """A field was used on a model space it does not live on."""


class Kind(str, enum.Enum):
    HEISENBERG = "heisenberg"
    TORUS = "torus"

    @classmethod
    def parse(cls, value: "str | Kind") -> "Kind":
        if isinstance(value, Kind):
            return value
        aliases = {
            "heisenberg": cls.HEISENBERG,
            "heisenbergnilmanifold": cls.HEISENBERG,
            "nilmanifold": cls.HEISENBERG,
            "torus": cls.TORUS,
            "flattorus3": cls.TORUS,
        }
        key = str(value).replace("_", "").replace("-", "").lower()
        if key not in aliases:
            raise ValueError(f"unknown model space kind {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class ModelSpace:
    """A compact grid model space.

    Parameters
    ----------
    kind : Kind or str
        ``"heisenberg"`` or ``"torus"``.
    dims : tuple of int
        Grid resolution ``(n_x, n_y, n_z)``.  On the nilmanifold the wrap in
        ``x`` shears ``z`` by ``y``; the shear is an exact index shift when
        ``n_y`` divides ``n_z`` and is linearly interpolated in ``z`` otherwise.
    """

    kind: Kind
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or any(n < 3 for n in dims):
            raise ValueError(f"dims must be three integers >= 3, got {self.dims!r}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def heisenberg(cls, n_x: int = 48, n_y: int = 48, n_z: int = 96) -> "ModelSpace":
        return cls(Kind.HEISENBERG, (n_x, n_y, n_z))

    @classmethod
    def torus(cls, n_x: int = 48, n_y: int | None = None, n_z: int | None = None) -> "ModelSpace":
        return cls(Kind.TORUS, (n_x, n_y or n_x, n_z or n_x))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(1.0 / n for n in self.dims)

    @property
    def sheared(self) -> bool:
        return self.kind is Kind.HEISENBERG

    @property
    def cell_weight(self) -> float:
        """Uniform weight of one cell; the weights sum to one."""
        return 1.0 / self.size

    @property
    def measure_weight(self) -> np.ndarray:
        return np.full(self.dims, self.cell_weight)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays ``(x, y, z)``."""
        n_x, n_y, n_z = self.dims
        x = (np.arange(n_x) / n_x)[:, None, None]
        y = (np.arange(n_y) / n_y)[None, :, None]
        z = (np.arange(n_z) / n_z)[None, None, :]
        return x, y, z

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x, y, z = self.coords
        return tuple(np.broadcast_to(c, self.dims) for c in (x, y, z))

    @cached_property
    def wrap_shift(self) -> np.ndarray:
        """Shear of the ``x`` wrap in units of ``z`` cells, one entry per ``y`` row."""
        n_x, n_y, n_z = self.dims
        if not self.sheared:
            return np.zeros(n_y)
        return np.arange(n_y) * n_z / n_y

    def check(self, f) -> np.ndarray:
        """Return the value array of ``f`` after checking it lives on this space."""
        if isinstance(f, GridField):
            if f.space != self:
                raise SpaceMismatch(f"field lives on {f.space}, not on {self}")
            f = f.values
        f = np.asarray(f, dtype=float)
        if f.shape != self.dims:
            raise SpaceMismatch(f"field of shape {f.shape} does not match grid {self.dims}")
        return f

    def field(self, values) -> "GridField":
        return GridField(self, values)

    def as_dict(self) -> dict:
        return {"kind": self.kind.value, "dims": list(self.dims)}

    # -- shifts ---------------------------------------------------------

    def _shear_z(self, plane: np.ndarray, direction: int) -> np.ndarray:
        # plane has shape (n_y, n_z); returns plane[j, k - direction * s_j]
        shifts = direction * self.wrap_shift
        out = np.empty_like(plane)
        for j, s in enumerate(shifts):
            m = int(np.floor(s))
            theta = s - m
            row = np.roll(plane[j], m)
            if theta > 1e-12:
                row = (1.0 - theta) * row + theta * np.roll(plane[j], m + 1)
            out[j] = row
        return out

    def shift_x(self, f: np.ndarray, step: int) -> np.ndarray:
        """Return ``g`` with ``g[i] = f[i + step]`` across the (possibly sheared) wrap."""
        g = np.roll(f, -step, axis=0)
        if self.sheared:
            if step == 1:
                g[-1] = self._shear_z(f[0], +1)
            elif step == -1:
                g[0] = self._shear_z(f[-1], -1)
            else:
                raise ValueError("only unit shifts are supported")
        return g

    def shift(self, f: np.ndarray, axis: int, step: int) -> np.ndarray:
        if axis == 0:
            return self.shift_x(f, step)
        return np.roll(f, -step, axis=axis)

    def __hash__(self):
        return hash((self.kind, self.dims))

    def __eq__(self, other):
        return isinstance(other, ModelSpace) and (self.kind, self.dims) == (other.kind, other.dims)


@dataclass(frozen=True)
class GridField:
    """A scalar field sampled on the cells of a model space."""

    space: ModelSpace
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.space.dims:
            raise SpaceMismatch(f"values of shape {values.shape} do not match grid {self.space.dims}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid field values must be finite")
        object.__setattr__(self, "values", values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


# -- first and second differences --------------------------------------------


def d_axis(space: ModelSpace, f: np.ndarray, axis: int) -> np.ndarray:
    """Centered first difference along a grid axis."""
    h = space.spacing[axis]
    return (space.shift(f, axis, 1) - space.shift(f, axis, -1)) / (2 * h)


def dd_axis(space: ModelSpace, f: np.ndarray, axis: int) -> np.ndarray:
    """Compact second difference along a grid axis."""
    h = space.spacing[axis]
    return (space.shift(f, axis, 1) - 2 * f + space.shift(f, axis, -1)) / h**2


def frame_derivatives(space: ModelSpace, f) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X1 f, X2 f)``."""
    f = space.check(f)
    x1 = d_axis(space, f, 0)
    x2 = d_axis(space, f, 1)
    if space.sheared:
        x2 = x2 + space.coords[0] * d_axis(space, f, 2)
    return x1, x2


def z_derivative(space: ModelSpace, f) -> np.ndarray:
    return d_axis(space, space.check(f), 2)


def apply_L(space: ModelSpace, f) -> np.ndarray:
    """Apply the sub-Laplacian ``L = X1^2 + X2^2``."""
    f = space.check(f)
    out = dd_axis(space, f, 0) + dd_axis(space, f, 1)
    if space.sheared:
        x = space.coords[0]
        dyz = d_axis(space, d_axis(space, f, 2), 1)
        out = out + 2 * x * dyz + x**2 * dd_axis(space, f, 2)
    return out


def gamma(space: ModelSpace, f, g=None) -> np.ndarray:
    """Carré du champ ``sum_i X_i f X_i g`` from the frame derivatives."""
    a1, a2 = frame_derivatives(space, f)
    if g is None:
        return a1 * a1 + a2 * a2
    b1, b2 = frame_derivatives(space, g)
    return a1 * b1 + a2 * b2


def gamma_identity(space: ModelSpace, f, g=None) -> np.ndarray:
    """``(L(fg) - f Lg - g Lf) / 2``, the operator form of the carré du champ.

    Kept only as a cross-check of :func:`gamma`; it is not pointwise
    nonnegative on the grid.
    """
    f = space.check(f)
    g = f if g is None else space.check(g)
    return 0.5 * (apply_L(space, f * g) - f * apply_L(space, g) - g * apply_L(space, f))


def gamma_Z(space: ModelSpace, f, g=None) -> np.ndarray:
    zf = z_derivative(space, f)
    if g is None:
        return zf * zf
    return zf * z_derivative(space, g)


def gamma2(space: ModelSpace, f, check_resolution: bool = True) -> np.ndarray:
    """``Gamma_2(f) = L Gamma(f) / 2 - Gamma(f, Lf)``.

    Logs a warning when ``f`` is too rough for the iterated stencil; callers
    that budget for the discretisation error themselves pass
    ``check_resolution=False``.
    """
    f = space.check(f)
    if check_resolution:
        _warn_if_rough(space, f)
    lf = apply_L(space, f)
    return 0.5 * apply_L(space, gamma(space, f)) - gamma(space, f, lf)


def gamma2_Z(space: ModelSpace, f, check_resolution: bool = True) -> np.ndarray:
    """``Gamma_2^Z(f) = L Gamma^Z(f) / 2 - Gamma^Z(f, Lf)``."""
    f = space.check(f)
    if check_resolution:
        _warn_if_rough(space, f)
    lf = apply_L(space, f)
    return 0.5 * apply_L(space, gamma_Z(space, f)) - gamma_Z(space, f, lf)


def integrate(space: ModelSpace, f) -> float:
    """Integral against the normalized grid measure."""
    return float(np.sum(space.check(f)) * space.cell_weight)


# -- smoothness ---------------------------------------------------------------


ROUGHNESS_LIMIT = 0.05


def resolution_indicator(space: ModelSpace, f) -> float:
    """Relative size of the grid second differences of ``f``.

    For a single Fourier mode of wavenumber ``k`` this is ``sin^2(pi k h)``
    along the worst axis; iterated forms such as ``Gamma_2`` are trustworthy
    at the O(h^2) level only while it stays well below ``ROUGHNESS_LIMIT``.
    """
    f = space.check(f)
    amp = np.max(np.abs(f - f.mean()))
    if amp == 0:
        return 0.0
    worst = 0.0
    for axis in range(3):
        second = space.shift(f, axis, 1) - 2 * f + space.shift(f, axis, -1)
        worst = max(worst, float(np.max(np.abs(second))) / (4 * amp))
    return worst


def _warn_if_rough(space: ModelSpace, f: np.ndarray) -> None:
    r = resolution_indicator(space, f)
    if r > ROUGHNESS_LIMIT:
        logger.warning("field is under-resolved for iterated forms (indicator %.3g > %.3g)", r, ROUGHNESS_LIMIT)


# -- band-limited test fields ---------------------------------------------------


def _torus_modes(rng, max_freq, dims3, amplitude_decay=1.0, z_independent=False):
    terms = []
    rng_k = range(-max_freq, max_freq + 1)
    for kx in rng_k:
        for ky in rng_k:
            for kz in ([0] if z_independent else rng_k):
                if (kx, ky, kz) == (0, 0, 0):
                    continue
                if (kx, ky, kz) < (0, 0, 0):
                    continue  # cos/sin pair covers the mirrored mode
                norm = np.sqrt(kx * kx + ky * ky + kz * kz)
                amp = rng.normal() / (1.0 + norm) ** amplitude_decay
                phase = rng.uniform(0, 2 * np.pi)
                terms.append((kx, ky, 0 if not dims3 else kz, amp, phase))
    return terms


def band_limited_field(
    space: ModelSpace,
    rng: np.random.Generator,
    max_freq: int = 2,
    z_independent: bool = False,
    scale: float = 1.0,
) -> np.ndarray:
    """Random smooth field built from a few low-frequency modes.

    On the torus these are Fourier modes with ``|k_i| <= max_freq``.  On the
    nilmanifold ``z``-independent fields are Fourier modes in ``(x, y)`` and
    ``z``-dependent ones are theta-type functions

        Re exp(2 pi i m z) sum_n G(x + n - c) exp(2 pi i (m n + l) y)

    which are exactly compatible with the sheared identification.
    """
    x, y, z = space.mesh
    f = np.zeros(space.dims)
    for kx, ky, kz, amp, phase in _torus_modes(rng, max_freq, True, z_independent=True):
        f += amp * np.cos(2 * np.pi * (kx * x + ky * y) + phase)
    if not z_independent:
        if space.kind is Kind.TORUS:
            for kx, ky, kz, amp, phase in _torus_modes(rng, max_freq, True):
                if kz == 0:
                    continue
                f += amp * np.cos(2 * np.pi * (kx * x + ky * y + kz * z) + phase)
        else:
            for m in range(1, max(1, max_freq // 2) + 1):
                for _ in range(2):
                    c = rng.uniform(0, 1)
                    sigma = rng.uniform(0.18, 0.25)
                    l = int(rng.integers(-1, 2))
                    amp = rng.normal() * 0.5
                    phase = rng.uniform(0, 2 * np.pi)
                    f += amp * theta_mode(space, m, l, c, sigma, phase)
    f -= f.mean()
    peak = np.max(np.abs(f))
    return scale * f / peak if peak > 0 else f


def theta_mode(space: ModelSpace, m: int, l: int, center: float, sigma: float, phase: float = 0.0) -> np.ndarray:
    """Smooth ``z``-frequency-``m`` function on the nilmanifold."""
    x, y, z = space.mesh
    out = np.zeros(space.dims)
    for n in range(-4, 5):
        env = np.exp(-((x + n - center) ** 2) / (2 * sigma**2))
        out += env * np.cos(2 * np.pi * (m * z + (m * n + l) * y) + phase)
    return out
