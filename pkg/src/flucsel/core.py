"""Shared domain types: spatial torus, seeded RNG streams, and the
environment-field machinery (±1-valued random fields with prescribed
spatial correlation) used by every simulator in the package.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, KernelError, StateError

# Dense covariance factorisations beyond this cell count are refused;
# block kernels never hit this limit (they factor over blocks).
_DENSE_CELL_CAP = 8192

_STREAM_IDS = {
    "events": 0,       # event times / schedule
    "outcomes": 1,     # parent picks, type coins, impacts
    "environment": 2,  # environment resampling values
    "init": 3,         # initial-state randomisation
}


@dataclass(frozen=True)
class SpatialDomain:
    """Periodic torus of side ``length`` split into cells of size ``h``."""

    dimension: int
    length: float
    h: float

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {self.dimension}")
        if not (self.length > 0 and np.isfinite(self.length)):
            raise ConfigError(f"side length must be positive, got {self.length}")
        if not (self.h > 0 and np.isfinite(self.h)):
            raise ConfigError(f"grid resolution must be positive, got {self.h}")
        ratio = self.length / self.h
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ConfigError(
                f"length/h must be a positive integer, got {self.length}/{self.h}"
            )

    @property
    def cells_per_side(self) -> int:
        return int(round(self.length / self.h))

    @property
    def n_cells(self) -> int:
        return self.cells_per_side ** self.dimension

    @property
    def grid_shape(self) -> tuple:
        return (self.cells_per_side,) * self.dimension

    def cell_centres(self) -> np.ndarray:
        """Centres of all cells, shape (n_cells, dimension), row-major."""
        k = self.cells_per_side
        axis = (np.arange(k) + 0.5) * self.h
        if self.dimension == 1:
            return axis[:, None]
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dimension,):
            return False
        return bool(np.all(x >= 0.0) and np.all(x < self.length))

    def torus_distance(self, x, y) -> float:
        """Minimum-image distance between two positions on the torus."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        delta = np.abs(x - y)
        delta = np.minimum(delta, self.length - delta)
        return float(np.sqrt(np.sum(delta ** 2)))


@dataclass(frozen=True)
class RngContract:
    """Master seed plus named independent substreams.

    Identical seeds give bitwise-identical trajectories.  Substreams are
    spawned from non-overlapping SeedSequence keys, so the event-times
    stream can be shared across scenario variants while outcome and
    environment draws stay independent of it.
    """

    master_seed: int

    def _sid(self, name: str) -> int:
        if name in _STREAM_IDS:
            return _STREAM_IDS[name]
        return 16 + (zlib.crc32(name.encode()) & 0x7FFFFFFF)

    def stream(self, name: str) -> np.random.Generator:
        """Independent PCG64 generator for the named substream."""
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self._sid(name),))
        return np.random.default_rng(seq)

    def replicate(self, index: int) -> "RngContract":
        """Derived contract for replicate ``index`` (independent streams)."""
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(10_000, index))
        return RngContract(int(seq.generate_state(1, np.uint64)[0]))

    def xoshiro_state(self, name: str) -> np.ndarray:
        """256-bit state vector for the compiled xoshiro256++ streams."""
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self._sid(name), 99))
        state = seq.generate_state(4, np.uint64)
        if not state.any():  # all-zero state is invalid for xoshiro
            state[0] = np.uint64(0x9E3779B97F4A7C15)
        return state


def as_contract(rng) -> RngContract:
    """Accept either a seed or an RngContract."""
    if isinstance(rng, RngContract):
        return rng
    return RngContract(int(rng))


# ---------------------------------------------------------------------------
# Environment kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvironmentKernel:
    """Correlation kernel g(x, y) of the ±1 environment field.

    ``lipschitz_c`` is an estimate valid for every pair of grid cells of
    the bound |g(x,x) - g(x,y)| <= C |x-y| (infinite for the white
    lattice kind, which is exempt from the regularity requirement).
    """

    kind: str
    domain: SpatialDomain
    n_blocks: int = 1
    rho: float = 1.0
    length_scale: float = 1.0
    underlying: str = "squared-exponential"
    lipschitz_c: float = 0.0


def block_kernel(domain: SpatialDomain, n_blocks: int, rho: float) -> EnvironmentKernel:
    """Piecewise-constant kernel: g = 1 within a block, ``rho`` across blocks.

    Blocks are equal slabs along the first axis.  Two blocks admit any
    rho in [-1, 1]; three or more only rho in [0, 1] (the ±1 field is
    built from a shared coin, which cannot realise negative
    equicorrelation for more than two blocks).
    """
    if n_blocks < 1:
        raise KernelError(f"n_blocks must be >= 1, got {n_blocks}")
    if not -1.0 <= rho <= 1.0:
        raise KernelError(f"cross-block correlation must be in [-1,1], got {rho}")
    if n_blocks > 2 and rho < 0.0:
        raise KernelError(
            f"negative cross-block correlation needs exactly 2 blocks, got {n_blocks}"
        )
    if n_blocks > domain.cells_per_side:
        raise KernelError("more blocks than grid cells along the first axis")
    c = 0.0 if (n_blocks == 1 or rho == 1.0) else (1.0 - rho) / domain.h
    return EnvironmentKernel(
        kind="block", domain=domain, n_blocks=n_blocks, rho=rho, lipschitz_c=c
    )


def _axis_wrapped_sq_exp(delta, length, ell, images: int = 4):
    """Periodised squared-exponential along one axis (unnormalised)."""
    delta = np.asarray(delta, dtype=float)
    out = np.zeros_like(delta)
    for m in range(-images, images + 1):
        out += np.exp(-((delta + m * length) ** 2) / (2.0 * ell ** 2))
    return out


def _underlying_gauss_corr(kernel: "EnvironmentKernel", deltas) -> np.ndarray:
    """Underlying Gaussian correlation for per-axis coordinate differences
    (shape (..., d)).  The periodised product kernel has positive Fourier
    coefficients, so it is positive semidefinite on the torus (the
    minimum-image squared-exponential is not)."""
    deltas = np.asarray(deltas, dtype=float)
    norm = _axis_wrapped_sq_exp(0.0, kernel.domain.length, kernel.length_scale)
    rho = np.ones(deltas.shape[:-1])
    for axis in range(kernel.domain.dimension):
        rho = rho * _axis_wrapped_sq_exp(
            deltas[..., axis], kernel.domain.length, kernel.length_scale
        ) / norm
    return rho


def gaussian_sign_kernel(
    domain: SpatialDomain,
    length_scale: float,
    underlying: str = "squared-exponential",
) -> EnvironmentKernel:
    """Sign-of-Gaussian kernel: g(x,y) = (2/pi) arcsin(rho_G(x-y)), with
    rho_G the periodised squared-exponential on the torus.

    Only underlying Gaussian correlations with 1 - rho_G(r) = O(r^2)
    near zero keep the induced g Lipschitz; the squared-exponential
    qualifies, the exponential kernel is only Holder-1/2 and is refused.
    """
    if length_scale <= 0:
        raise KernelError(f"length scale must be positive, got {length_scale}")
    if underlying != "squared-exponential":
        raise KernelError(
            f"underlying kernel {underlying!r} rejected: the induced sign-field "
            "correlation is not Lipschitz (only 'squared-exponential' is admissible)"
        )
    kernel = EnvironmentKernel(
        kind="gaussian-sign",
        domain=domain,
        length_scale=length_scale,
        underlying=underlying,
        lipschitz_c=0.0,
    )
    # Estimate sup (1 - g)/|dx| over a dense set of per-axis offsets
    # covering all grid-pair separations; near zero the ratio approaches
    # 2*sqrt(2)/(pi*ell).
    axis = np.linspace(1e-7 * length_scale, domain.length / 2.0, 400)
    if domain.dimension == 1:
        deltas = axis[:, None]
    else:
        gx, gy = np.meshgrid(np.concatenate([[0.0], axis]),
                             np.concatenate([[0.0], axis]), indexing="ij")
        deltas = np.column_stack([gx.ravel()[1:], gy.ravel()[1:]])
    rho = _underlying_gauss_corr(kernel, deltas)
    g = (2.0 / np.pi) * np.arcsin(np.clip(rho, -1.0, 1.0))
    dist = np.sqrt(np.sum(deltas ** 2, axis=-1))
    c = float(np.max((1.0 - g) / dist)) * (1.0 + 1e-9)
    object.__setattr__(kernel, "lipschitz_c", c)
    return kernel


def white_lattice_kernel(domain: SpatialDomain) -> EnvironmentKernel:
    """Independent signs per cell: g(x,y) = 1 if same cell else 0."""
    return EnvironmentKernel(kind="white-lattice", domain=domain, lipschitz_c=np.inf)


def _check_position(kernel: EnvironmentKernel, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not kernel.domain.contains(x):
        raise DomainError(f"position {x!r} outside domain [0,{kernel.domain.length})^"
                          f"{kernel.domain.dimension}")
    return x


def _block_of(kernel: EnvironmentKernel, x: np.ndarray) -> int:
    width = kernel.domain.length / kernel.n_blocks
    return min(int(x[0] / width), kernel.n_blocks - 1)


def _cell_of(domain: SpatialDomain, x: np.ndarray) -> tuple:
    idx = np.floor(x / domain.h).astype(int)
    idx = np.minimum(idx, domain.cells_per_side - 1)
    return tuple(idx)


def kernel_eval(kernel: EnvironmentKernel, x, y) -> float:
    """Correlation g(x, y) between environment values at two positions."""
    x = _check_position(kernel, x)
    y = _check_position(kernel, y)
    if kernel.kind == "block":
        same = _block_of(kernel, x) == _block_of(kernel, y)
        return 1.0 if same else float(kernel.rho)
    if kernel.kind == "gaussian-sign":
        rho_g = float(_underlying_gauss_corr(kernel, (x - y)[None, :])[0])
        return float((2.0 / np.pi) * np.arcsin(min(max(rho_g, -1.0), 1.0)))
    if kernel.kind == "white-lattice":
        return 1.0 if _cell_of(kernel.domain, x) == _cell_of(kernel.domain, y) else 0.0
    raise KernelError(f"unknown kernel kind {kernel.kind!r}")


def block_index_per_cell(kernel: EnvironmentKernel) -> np.ndarray:
    """Block membership of every grid cell (flat row-major order)."""
    domain = kernel.domain
    k = domain.cells_per_side
    first_axis = np.minimum(
        ((np.arange(k) + 0.5) * kernel.n_blocks / k).astype(int), kernel.n_blocks - 1
    )
    if domain.dimension == 1:
        return first_axis
    return np.repeat(first_axis, k)  # blocks are slabs along the first axis


def kernel_covariance_matrix(kernel: EnvironmentKernel) -> np.ndarray:
    """Dense g(x_i, x_j) over all grid cells (small grids only)."""
    domain = kernel.domain
    n = domain.n_cells
    if n > _DENSE_CELL_CAP:
        raise KernelError(
            f"dense covariance needs <= {_DENSE_CELL_CAP} cells, grid has {n}; "
            "use a block kernel (factored exactly per block) for large grids"
        )
    if kernel.kind == "block":
        blocks = block_index_per_cell(kernel)
        same = blocks[:, None] == blocks[None, :]
        return np.where(same, 1.0, kernel.rho)
    if kernel.kind == "white-lattice":
        return np.eye(n)
    centres = domain.cell_centres()
    delta = centres[:, None, :] - centres[None, :, :]
    rho_g = _underlying_gauss_corr(kernel, delta)
    return (2.0 / np.pi) * np.arcsin(np.clip(rho_g, -1.0, 1.0))


# ---------------------------------------------------------------------------
# Environment fields
# ---------------------------------------------------------------------------

@dataclass
class EnvironmentField:
    """±1 values per grid cell plus the resampling epoch that produced them."""

    values: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)
        if not np.all(np.abs(self.values) == 1):
            raise StateError(
                f"environment values must be exactly ±1, got {np.unique(self.values)}"
            )


_GAUSS_FACTOR_CACHE: dict = {}


def _gaussian_factor(kernel: EnvironmentKernel) -> np.ndarray:
    """Factor L with L L^T = rho_G over grid cells, cached per kernel."""
    key = (kernel.domain, kernel.length_scale)
    if key not in _GAUSS_FACTOR_CACHE:
        domain = kernel.domain
        if domain.n_cells > _DENSE_CELL_CAP:
            raise KernelError(
                f"gaussian-sign sampling factorises a dense {domain.n_cells}^2 "
                f"covariance; grids above {_DENSE_CELL_CAP} cells are refused"
            )
        centres = domain.cell_centres()
        delta = centres[:, None, :] - centres[None, :, :]
        cov = _underlying_gauss_corr(kernel, delta)
        vals, vecs = np.linalg.eigh(cov)
        min_val = float(vals.min())
        if min_val < -1e-8 * float(vals.max()):
            raise KernelError(
                f"underlying Gaussian covariance not PSD on the grid: "
                f"eigenvalue {min_val}"
            )
        _GAUSS_FACTOR_CACHE[key] = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return _GAUSS_FACTOR_CACHE[key]


def sample_environment(
    kernel: EnvironmentKernel,
    stream: np.random.Generator,
    epoch: int = 0,
) -> EnvironmentField:
    """Draw one ±1 environment field with pairwise correlations g.

    Marginals are uniform on {-1, +1}.  For the block kind the draw is
    exact; for gaussian-sign the field is the sign of a Gaussian field
    whose correlation rho_G = sin(pi g / 2) inverts the arcsine law, so
    the sign field has correlation exactly g.
    """
    domain = kernel.domain
    if kernel.kind == "block":
        b = kernel.n_blocks
        vals = np.empty(b, dtype=np.int8)
        if b == 1:
            vals[0] = 1 if stream.random() < 0.5 else -1
        elif b == 2:
            v0 = 1 if stream.random() < 0.5 else -1
            vals[0] = v0
            vals[1] = v0 if stream.random() < (1.0 + kernel.rho) / 2.0 else -v0
        else:
            common = 1 if stream.random() < 0.5 else -1
            copy_p = np.sqrt(kernel.rho)
            copies = stream.random(b) < copy_p
            fresh = np.where(stream.random(b) < 0.5, 1, -1).astype(np.int8)
            vals = np.where(copies, common, fresh).astype(np.int8)
        cells = vals[block_index_per_cell(kernel)]
        return EnvironmentField(cells.reshape(domain.grid_shape), epoch)
    if kernel.kind == "white-lattice":
        cells = np.where(stream.random(domain.n_cells) < 0.5, 1, -1)
        return EnvironmentField(
            cells.astype(np.int8).reshape(domain.grid_shape), epoch
        )
    if kernel.kind == "gaussian-sign":
        factor = _gaussian_factor(kernel)
        z = stream.standard_normal(domain.n_cells)
        gauss = factor @ z
        cells = np.where(gauss >= 0.0, 1, -1)
        return EnvironmentField(
            cells.astype(np.int8).reshape(domain.grid_shape), epoch
        )
    raise KernelError(f"unknown kernel kind {kernel.kind!r}")
