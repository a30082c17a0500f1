"""Heterogeneous material fields: stiff channels and inclusions in a soft
background, Lame coefficient conversion, and the spectral weight driving
the local eigenproblems.

Young's modulus is piecewise constant per fine cell with exactly two
values, a background and a high-contrast value. Cell arrays use the grid's
C-ordered flattening of the (x, y[, z]) cell lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grid import GridHierarchy


@dataclass(frozen=True)
class Channel:
    """Axis-aligned stiff strip.

    The strip starts at fine cell ``start`` (multi-index), extends
    ``length`` cells along ``axis`` and ``thickness`` cells along every
    other axis.
    """
    start: tuple
    axis: int
    length: int
    thickness: int

    def legs(self):
        return [(self.start, self.axis, self.length)]


@dataclass(frozen=True)
class LChannel:
    """Two axis-aligned strips of common thickness joined at a corner.

    The first leg runs from ``start`` along ``axis1``; the second starts at
    the far corner of the first and runs along ``axis2``. A negative
    ``length2`` points the second leg toward smaller coordinates.
    """
    start: tuple
    axis1: int
    length1: int
    axis2: int
    length2: int
    thickness: int

    def legs(self):
        corner = list(self.start)
        corner[self.axis1] = self.start[self.axis1] + self.length1 - self.thickness
        if self.length2 >= 0:
            return [(self.start, self.axis1, self.length1),
                    (tuple(corner), self.axis2, self.length2)]
        corner[self.axis2] = self.start[self.axis2] + self.thickness + self.length2
        return [(self.start, self.axis1, self.length1),
                (tuple(corner), self.axis2, -self.length2)]


@dataclass(frozen=True)
class Inclusion:
    """Stiff rectangular blob given by its low corner and extents in cells."""
    corner: tuple
    extents: tuple


@dataclass(frozen=True)
class MediumSpec:
    """Recipe for a two-valued Young's modulus raster."""
    d: int
    n_f: int
    e_background: float = 1.0
    e_contrast: float = 1.0e4
    channels: tuple = ()
    inclusions: tuple = ()
    n_random_inclusions: int = 0
    random_extent: tuple = (2, 4)   # inclusive cell-size range for random blobs
    seed: int = 0
    raster: str | None = None       # path overriding the procedural recipe

    def with_contrast(self, e_contrast):
        return replace(self, e_contrast=float(e_contrast))


def _leg_slices(start, axis, length, thickness, d):
    sl = []
    for k in range(d):
        if k == axis:
            sl.append(slice(start[k], start[k] + length))
        else:
            sl.append(slice(start[k], start[k] + thickness))
    return tuple(sl)


def _check_box(sl, n_f, what):
    for s in sl:
        if s.start < 0 or s.stop > n_f or s.stop <= s.start:
            raise ValueError(f"{what} extends outside the grid: cells [{s.start}, {s.stop}) "
                             f"not within [0, {n_f})")


def generate_medium(spec: MediumSpec) -> np.ndarray:
    """Realize the Young's modulus field, one value per fine cell.

    Deterministic for a fixed spec (the RNG for random inclusions is
    seeded from ``spec.seed``). Raises on any descriptor that leaves the
    grid, reporting its location.
    """
    shape = (spec.n_f,) * spec.d
    if spec.raster is not None:
        return load_raster(spec.raster, shape).ravel()
    e = np.full(shape, float(spec.e_background))
    for c in spec.channels:
        for start, axis, length in c.legs():
            sl = _leg_slices(start, axis, length, c.thickness, spec.d)
            _check_box(sl, spec.n_f, f"channel leg at {start}")
            e[sl] = spec.e_contrast
    for inc in spec.inclusions:
        sl = tuple(slice(c0, c0 + ext) for c0, ext in zip(inc.corner, inc.extents))
        _check_box(sl, spec.n_f, f"inclusion at {inc.corner}")
        e[sl] = spec.e_contrast
    if spec.n_random_inclusions:
        rng = np.random.default_rng(spec.seed)
        lo, hi = spec.random_extent
        for _ in range(spec.n_random_inclusions):
            ext = rng.integers(lo, hi + 1, size=spec.d)
            corner = np.array([rng.integers(0, spec.n_f - x + 1) for x in ext])
            sl = tuple(slice(c0, c0 + x) for c0, x in zip(corner, ext))
            e[sl] = spec.e_contrast
    return e.ravel()


def lame_from_young(e_cell: np.ndarray, nu: float, convention: str = "paper"):
    """Pointwise Lame fields from Young's modulus and the Poisson ratio.

    ``convention="paper"`` uses lambda = nu E / ((1+2 nu)(1-nu)); the
    ``"standard"`` plane-strain form nu E / ((1+nu)(1-2 nu)) is available
    for sanity studies. Shear is mu = E / (2(1+nu)) in both.
    """
    if not (0.0 < nu < 0.5):
        raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {nu}")
    e_cell = np.asarray(e_cell, dtype=float)
    if np.any(e_cell <= 0.0):
        raise ValueError("Young's modulus must be positive in every cell")
    if convention == "paper":
        lam = nu / ((1.0 + 2.0 * nu) * (1.0 - nu)) * e_cell
    elif convention == "standard":
        lam = nu / ((1.0 + nu) * (1.0 - 2.0 * nu)) * e_cell
    else:
        raise ValueError(f"unknown Lame convention {convention!r}")
    mu = e_cell / (2.0 * (1.0 + nu))
    return lam, mu


def _hat_gradient_sq_sum(g: GridHierarchy):
    """Sum over coarse hats of |grad chi|^2 at every fine cell center.

    For multilinear hats the sum only depends on the position inside the
    owning coarse block: with q(t) = t^2 + (1-t)^2 per axis it equals
    (2/H^2) * sum_k prod_{l != k} q(xi_l).
    """
    multi = np.asarray(np.unravel_index(np.arange(g.n_cells), g.cell_shape, order="C"))
    xi = ((multi % g.ratio) + 0.5) / g.ratio   # cell-center coordinates in the block
    q = (xi ** 2 + (1.0 - xi) ** 2).T          # (n_cells, d)
    total = np.zeros(g.n_cells)
    for k in range(g.d):
        total += np.prod(np.delete(q, k, axis=1), axis=1)
    return 2.0 * total / g.H ** 2


def kappa_tilde_cell(g: GridHierarchy, lam_cell: np.ndarray, mu_cell: np.ndarray) -> np.ndarray:
    """Spectral weight (lam + 2 mu) * sum_i |grad chi_i|^2 per fine cell.

    Evaluated at the cell centers; this is the field the weighted-mass
    quadrature consumes. Keeping the weight cell-local matters in high
    contrast: averaging it to nodes would leak stiff values one node row
    into soft neighbor blocks and pollute their spectra with spurious
    heavy-edge modes.
    """
    return (np.asarray(lam_cell) + 2.0 * np.asarray(mu_cell)) * _hat_gradient_sq_sum(g)


def kappa_tilde(g: GridHierarchy, lam_cell: np.ndarray, mu_cell: np.ndarray) -> np.ndarray:
    """Spectral weight sampled at fine nodes.

    Arithmetic average of the adjacent cell-center evaluations; a nodal
    view of :func:`kappa_tilde_cell` for inspection and export.
    """
    per_cell = kappa_tilde_cell(g, lam_cell, mu_cell)
    acc = np.zeros(g.n_nodes)
    cnt = np.zeros(g.n_nodes)
    corners = g.cell_corner_nodes(np.arange(g.n_cells))
    for c in range(corners.shape[1]):
        np.add.at(acc, corners[:, c], per_cell)
        np.add.at(cnt, corners[:, c], 1.0)
    return acc / cnt


@dataclass(frozen=True)
class CoefficientField:
    """Per-cell elastic coefficients plus the spectral weight (cell and node views)."""
    e_cell: np.ndarray
    lam_cell: np.ndarray
    mu_cell: np.ndarray
    kappa_cell: np.ndarray
    kappa_node: np.ndarray
    nu: float
    convention: str


def build_coefficients(g: GridHierarchy, e_cell, nu=0.2, convention="paper") -> CoefficientField:
    lam, mu = lame_from_young(e_cell, nu, convention)
    kap_cell = kappa_tilde_cell(g, lam, mu)
    kap_node = kappa_tilde(g, lam, mu)
    return CoefficientField(e_cell=np.asarray(e_cell, dtype=float),
                            lam_cell=lam, mu_cell=mu,
                            kappa_cell=kap_cell, kappa_node=kap_node,
                            nu=nu, convention=convention)


# -- raster files -----------------------------------------------------------

def load_raster(path: str, shape) -> np.ndarray:
    """Read a per-cell field, C-ordered over the (x, y[, z]) cell lattice.

    ``.csv``/``.txt`` files hold one value per line (or comma separated);
    anything else is taken as raw little-endian float64.
    """
    n = int(np.prod(shape))
    if str(path).endswith((".csv", ".txt")):
        vals = np.loadtxt(path, delimiter=",").ravel()
    else:
        vals = np.fromfile(path, dtype="<f8")
    if vals.size != n:
        raise ValueError(f"raster {path} holds {vals.size} values, expected {n} for shape {shape}")
    return vals.reshape(shape)


def save_raster(path: str, cell_values: np.ndarray):
    vals = np.asarray(cell_values, dtype="<f8").ravel()
    if str(path).endswith((".csv", ".txt")):
        np.savetxt(path, vals, delimiter=",")
    else:
        vals.tofile(path)


# -- shipped presets ---------------------------------------------------------

def medium_2d_channels(n_f: int = 128, contrast: float = 1.0e4, seed: int = 7) -> MediumSpec:
    """2D preset: full-width stiff channels, an L bend and scattered blobs.

    Geometry scales with the resolution so the same layout is available at
    128^2 (default) or 256^2. Channels are thick relative to the coarse
    blocks of the usual decompositions, which keeps the per-block spectra
    clustered: a handful of small eigenvalues, then a visible gap.
    """
    if n_f < 32:
        raise ValueError(f"2D preset needs at least 32 cells per side, got {n_f}")

    def sc(v):
        return round(v * n_f / 128)

    t = max(2, sc(4))
    # strips sit centered inside the block rows of the 8- and 16-block
    # decompositions; a stiff slab flush against a coarse face carries
    # gapless low modes that a fixed per-block basis count cannot absorb
    channels = (
        Channel(start=(0, sc(18)), axis=0, length=n_f, thickness=t),
        Channel(start=(0, sc(58)), axis=0, length=n_f, thickness=t),
        LChannel(start=(sc(8), sc(90)), axis1=0, length1=sc(78),
                 axis2=1, length2=-sc(48), thickness=t),
        Channel(start=(sc(26), sc(6)), axis=1, length=sc(56), thickness=t),
    )
    return MediumSpec(d=2, n_f=n_f, e_contrast=contrast, channels=channels,
                      n_random_inclusions=10,
                      random_extent=(max(2, sc(2)), max(3, sc(5))), seed=seed)


def medium_3d_channels(n_f: int = 32, contrast: float = 1.0e4, seed: int = 11) -> MediumSpec:
    """3D preset: three perpendicular stiff rods plus random blobs."""
    if n_f < 16:
        raise ValueError(f"3D preset needs at least 16 cells per side, got {n_f}")

    def sc(v):
        return round(v * n_f / 32)

    t = max(2, sc(2))
    # rod cross-sections centered inside the 4- and 8-block rows, as in 2D
    channels = (
        Channel(start=(0, sc(9), sc(13)), axis=0, length=n_f, thickness=t),
        Channel(start=(sc(17), 0, sc(21)), axis=1, length=n_f, thickness=t),
        Channel(start=(sc(5), sc(21), sc(5)), axis=2, length=sc(18), thickness=t),
    )
    return MediumSpec(d=3, n_f=n_f, e_contrast=contrast, channels=channels,
                      n_random_inclusions=8,
                      random_extent=(2, max(3, sc(3))), seed=seed)


PRESETS = {
    "model1-like": medium_2d_channels,
    "model2-like": medium_3d_channels,
}


def preset(name: str, n_f: int | None = None, contrast: float = 1.0e4, seed: int | None = None) -> MediumSpec:
    """Look up a shipped medium recipe by name."""
    if name not in PRESETS:
        raise ValueError(f"unknown medium preset {name!r}; have {sorted(PRESETS)}")
    factory = PRESETS[name]
    kwargs = {"contrast": contrast}
    if n_f is not None:
        kwargs["n_f"] = n_f
    if seed is not None:
        kwargs["seed"] = seed
    return factory(**kwargs)
