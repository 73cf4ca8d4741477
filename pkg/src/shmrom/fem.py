"""Plane-stress finite-element model of a single-storey portal frame.

Linear three-node triangles (constant strain), consistent mass, clamped
column bases. The stiffness is kept split by damage subdomain so that a
damaged configuration is an affine combination of fixed matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class MeshError(ValueError):
    """Raised for invalid geometry or degenerate elements."""


@dataclass(frozen=True)
class Material:
    young_modulus: float  # Pa
    poisson_ratio: float
    density: float  # kg/m^3

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise ValueError("young_modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in [0, 0.5)")
        if not self.density > 0:
            raise ValueError("density must be positive")

    def plane_stress(self) -> np.ndarray:
        """Constitutive matrix mapping (exx, eyy, gxy) to (sxx, syy, sxy)."""
        E, nu = self.young_modulus, self.poisson_ratio
        c = E / (1.0 - nu * nu)
        return c * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])


CONCRETE = Material(young_modulus=30e9, poisson_ratio=0.2, density=2500.0)


@dataclass(frozen=True)
class ParamPoint:
    """One operating/damage condition: damage class plus load and damage level."""

    g: int
    amplitude: float  # Pa
    frequency: float  # Hz
    delta: float = 0.0

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("damage class must be non-negative")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("damage level must lie in [0, 1)")
        if self.g == 0 and self.delta != 0.0:
            object.__setattr__(self, "delta", 0.0)

    def as_dict(self) -> dict:
        return {"g": int(self.g), "amplitude": float(self.amplitude),
                "frequency": float(self.frequency), "delta": float(self.delta)}


@dataclass
class Mesh2D:
    nodes: np.ndarray  # (n_nodes, 2), m
    elements: np.ndarray  # (n_elem, 3), counter-clockwise
    subdomain: np.ndarray  # (n_elem,), 0 = background
    fixed_dofs: np.ndarray  # sorted global dof indices
    thickness: float
    n_subdomains: int = 0  # G, number of candidate damage regions
    loaded_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    load_direction: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.subdomain = np.asarray(self.subdomain, dtype=np.int64)
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        self.loaded_edges = np.asarray(self.loaded_edges, dtype=np.int64).reshape(-1, 2)
        self.validate()

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def free_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_dofs), self.fixed_dofs)

    def areas(self) -> np.ndarray:
        xy = self.nodes[self.elements]
        return 0.5 * ((xy[:, 1, 0] - xy[:, 0, 0]) * (xy[:, 2, 1] - xy[:, 0, 1])
                      - (xy[:, 2, 0] - xy[:, 0, 0]) * (xy[:, 1, 1] - xy[:, 0, 1]))

    def validate(self):
        if self.thickness <= 0:
            raise MeshError("thickness must be positive")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise MeshError("elements must be an (n, 3) connectivity array")
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= self.n_nodes):
            raise MeshError("element references a node index out of range")
        if self.subdomain.shape != (self.n_elements,):
            raise MeshError("one subdomain id per element is required")
        if self.subdomain.size and (self.subdomain.min() < 0 or self.subdomain.max() > self.n_subdomains):
            raise MeshError("subdomain ids must lie in 0..n_subdomains")
        if self.fixed_dofs.size and (self.fixed_dofs[0] < 0 or self.fixed_dofs[-1] >= self.n_dofs):
            raise MeshError("fixed dof out of range")
        if self.loaded_edges.size and (self.loaded_edges.min() < 0 or self.loaded_edges.max() >= self.n_nodes):
            raise MeshError("loaded edge references a node index out of range")

    def check_areas(self) -> np.ndarray:
        area = self.areas()
        bad = np.flatnonzero(~(area > 0))
        if bad.size:
            raise MeshError(f"element {int(bad[0])} has non-positive area {area[bad[0]]:.3e}")
        return area

    def node_at(self, x: float, y: float) -> int:
        """Index of the node closest to (x, y)."""
        d = np.hypot(self.nodes[:, 0] - x, self.nodes[:, 1] - y)
        return int(np.argmin(d))

    def dof(self, node: int, direction: int) -> int:
        """Global dof for a node; direction 0 = horizontal, 1 = vertical."""
        return 2 * int(node) + int(direction)


# ---------------------------------------------------------------------------
# Mesh generation
# ---------------------------------------------------------------------------

def _subdivide(breaks, h):
    pts = [float(breaks[0])]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(math.ceil((b - a) / h - 1e-9)))
        pts.extend(np.linspace(a, b, n + 1)[1:].tolist())
    return np.array(pts)


def structured_mesh(xs, ys, thickness, keep=None, subdomain_of=None, n_subdomains=0):
    """Triangulate the cells of the tensor grid ``xs`` x ``ys``.

    ``keep(xc, yc)`` selects cells by their centre; ``subdomain_of(xc, yc)``
    returns the subdomain id of a cell. Each kept quad is split along an
    alternating diagonal. Only nodes touched by kept cells are retained.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    nx, ny = len(xs), len(ys)
    grid_id = lambda i, j: j * nx + i  # noqa: E731
    tris, subs = [], []
    for j in range(ny - 1):
        yc = 0.5 * (ys[j] + ys[j + 1])
        for i in range(nx - 1):
            xc = 0.5 * (xs[i] + xs[i + 1])
            if keep is not None and not keep(xc, yc):
                continue
            a, b = grid_id(i, j), grid_id(i + 1, j)
            c, d = grid_id(i + 1, j + 1), grid_id(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
            s = 0 if subdomain_of is None else int(subdomain_of(xc, yc))
            subs += [s, s]
    tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    used = np.unique(tris)
    renumber = -np.ones(nx * ny, dtype=np.int64)
    renumber[used] = np.arange(used.size)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])[used]
    return Mesh2D(nodes=nodes, elements=renumber[tris], subdomain=np.array(subs, dtype=np.int64),
                  fixed_dofs=np.zeros(0, dtype=np.int64), thickness=thickness,
                  n_subdomains=n_subdomains)


def rectangle_mesh(width=1.0, height=1.0, nx=1, ny=1, thickness=1.0):
    """Rectangle split into ``2 * nx * ny`` triangles, all in subdomain 0."""
    return structured_mesh(np.linspace(0, width, nx + 1), np.linspace(0, height, ny + 1), thickness)


@dataclass(frozen=True)
class PortalGeometry:
    """Single-storey frame: two columns of width ``column_width`` carrying a deck.

    Lengths in metres. Damage boxes span the full column width and have height
    ``damage_box_height * damage_box_scale``; they sit at the column bases
    (subdomains 1 and 3) and directly under the deck (subdomains 2 and 4),
    left column first.
    """

    span: float = 5.0  # outer width of the frame
    height: float = 3.5  # base to deck soffit
    column_width: float = 0.3
    deck_depth: float = 0.5
    thickness: float = 0.1
    damage_box_height: float = 0.6
    damage_box_scale: float = 1.0

    def __post_init__(self):
        for name in ("span", "height", "column_width", "deck_depth", "thickness"):
            if not getattr(self, name) > 0:
                raise MeshError(f"degenerate geometry: {name} must be positive")
        if 2 * self.column_width >= self.span:
            raise MeshError("columns overlap: 2 * column_width must be smaller than span")
        if not 0 < self.damage_box_scale <= 1:
            raise MeshError("damage_box_scale must lie in (0, 1]")
        if 2 * self.damage_box_height >= self.height:
            raise MeshError("damage boxes at base and top of a column overlap")

    @property
    def box_height(self) -> float:
        return self.damage_box_height * self.damage_box_scale

    def subdomain_of(self, x, y) -> int:
        bh = self.box_height
        right = x > self.span - self.column_width
        left = x < self.column_width
        if not (left or right) or y > self.height:
            return 0
        if y < bh:
            return 1 if left else 3
        if y > self.height - bh:
            return 2 if left else 4
        return 0


def generate_portal_mesh(geometry: PortalGeometry, element_size: float) -> Mesh2D:
    """Structured triangulation of the portal frame.

    The base nodes of both columns are clamped and the load acts on the outer
    face of the left column over the deck depth, pushing in +x.
    """
    if not element_size > 0:
        raise MeshError("element_size must be positive")
    g = geometry
    bh_full, bh = g.damage_box_height, g.box_height
    xb = [0.0, g.column_width, g.span - g.column_width, g.span]
    yb = sorted({0.0, bh, bh_full, g.height - bh_full, g.height - bh, g.height, g.height + g.deck_depth})
    xs, ys = _subdivide(xb, element_size), _subdivide(yb, element_size)

    def keep(x, y):
        return x < g.column_width or x > g.span - g.column_width or y > g.height

    mesh = structured_mesh(xs, ys, g.thickness, keep=keep, subdomain_of=g.subdomain_of, n_subdomains=4)
    tol = 1e-9 * max(g.span, g.height)
    base = np.flatnonzero(np.abs(mesh.nodes[:, 1]) < tol)
    mesh.fixed_dofs = np.sort(np.concatenate([2 * base, 2 * base + 1]))
    on_face = np.flatnonzero((np.abs(mesh.nodes[:, 0]) < tol) & (mesh.nodes[:, 1] > g.height - tol))
    on_face = on_face[np.argsort(mesh.nodes[on_face, 1])]
    mesh.loaded_edges = np.column_stack([on_face[:-1], on_face[1:]])
    mesh.load_direction = (1.0, 0.0)
    mesh.validate()
    return mesh


# ---------------------------------------------------------------------------
# Element matrices and assembly
# ---------------------------------------------------------------------------

def cst_strain_displacement(xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Strain-displacement matrices of CST elements.

    ``xy`` has shape (n, 3, 2). Returns ``B`` of shape (n, 3, 6) and the
    signed areas.
    """
    x, y = xy[..., 0], xy[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    B = np.zeros((xy.shape[0], 3, 6))
    B[:, 0, 0::2] = b
    B[:, 1, 1::2] = c
    B[:, 2, 0::2] = c
    B[:, 2, 1::2] = b
    B /= (2.0 * area)[:, None, None]
    return B, area


def cst_stiffness(xy: np.ndarray, D: np.ndarray, thickness: float) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64)
    single = xy.ndim == 2
    B, area = cst_strain_displacement(xy[None] if single else xy)
    if np.any(area <= 0):
        raise MeshError("element with non-positive area")
    Ke = thickness * area[:, None, None] * np.einsum("eki,kl,elj->eij", B, D, B)
    return Ke[0] if single else Ke


_MASS_PATTERN = np.kron(np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]), np.eye(2)) / 12.0


def cst_mass(area, density: float, thickness: float) -> np.ndarray:
    """Consistent mass of CST elements, dofs ordered (u1, v1, u2, v2, u3, v3)."""
    area = np.asarray(area, dtype=np.float64)
    return density * thickness * area[..., None, None] * _MASS_PATTERN


def _element_dofs(elements):
    return np.stack([2 * elements[:, 0], 2 * elements[:, 0] + 1,
                     2 * elements[:, 1], 2 * elements[:, 1] + 1,
                     2 * elements[:, 2], 2 * elements[:, 2] + 1], axis=1)


def _assemble(mesh, Ke, mask=None):
    dofs = _element_dofs(mesh.elements)
    if mask is not None:
        dofs, Ke = dofs[mask], Ke[mask]
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = mesh.n_dofs
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def assemble_mass(mesh: Mesh2D, material: Material) -> sp.csr_matrix:
    """Global consistent mass matrix over all (unconstrained) dofs."""
    area = mesh.check_areas()
    return _assemble(mesh, cst_mass(area, material.density, mesh.thickness))


def assemble_stiffness(mesh: Mesh2D, material: Material) -> sp.csr_matrix:
    """Monolithic undamaged stiffness over all (unconstrained) dofs."""
    mesh.check_areas()
    Ke = cst_stiffness(mesh.nodes[mesh.elements], material.plane_stress(), mesh.thickness)
    return _assemble(mesh, Ke)


def assemble_stiffness_components(mesh: Mesh2D, material: Material) -> list[sp.csr_matrix]:
    """Stiffness split by subdomain: entry ``p`` assembles elements of subdomain ``p``."""
    mesh.check_areas()
    Ke = cst_stiffness(mesh.nodes[mesh.elements], material.plane_stress(), mesh.thickness)
    return [_assemble(mesh, Ke, mesh.subdomain == p) for p in range(mesh.n_subdomains + 1)]


def edge_load_vector(mesh: Mesh2D, pressure: float = 1.0) -> np.ndarray:
    """Consistent nodal forces of a uniform traction on the loaded edges.

    The traction acts along ``mesh.load_direction``; for linear edges each end
    node receives half of ``pressure * length * thickness``.
    """
    if mesh.loaded_edges.shape[0] == 0:
        raise MeshError("mesh has no loaded edges")
    f = np.zeros(mesh.n_dofs)
    p0, p1 = mesh.nodes[mesh.loaded_edges[:, 0]], mesh.nodes[mesh.loaded_edges[:, 1]]
    half = 0.5 * pressure * mesh.thickness * np.hypot(*(p1 - p0).T)
    d = np.asarray(mesh.load_direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    for k in (0, 1):
        for comp in (0, 1):
            np.add.at(f, 2 * mesh.loaded_edges[:, k] + comp, half * d[comp])
    return f


# ---------------------------------------------------------------------------
# Affine full-order arrays
# ---------------------------------------------------------------------------

def damage_coefficients(n_components: int, g: int, delta: float) -> np.ndarray:
    """Scalar weights of the stiffness components for damage class ``g`` at level ``delta``."""
    if not 0 <= g < n_components:
        raise ValueError(f"damage class {g} outside 0..{n_components - 1}")
    if not 0.0 <= delta < 1.0:
        raise ValueError("damage level must lie in [0, 1); delta >= 1 removes all stiffness")
    psi = np.ones(n_components)
    if g != 0:
        psi[g] = 1.0 - delta
    return psi


def stiffness_at(components, g: int, delta: float):
    """Affine stiffness ``sum_p psi_p(g, delta) K_p``; works for sparse or dense components."""
    psi = damage_coefficients(len(components), g, delta)
    K = components[0] * psi[0]
    for w, Kp in zip(psi[1:], components[1:]):
        K = K + w * Kp
    return K


@dataclass
class FomArrays:
    """Constrained full-order arrays of the affine decomposition.

    All matrices act on the free dofs only; ``free_dofs[i]`` is the global dof
    of reduced index ``i``.
    """

    mass: sp.csr_matrix
    stiffness: list  # K_p, p = 0..G
    load_basis: np.ndarray  # (P_f, M)
    free_dofs: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.mass.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.stiffness)

    def stiffness_at(self, g: int, delta: float):
        return stiffness_at(self.stiffness, g, delta)

    def undamaged_stiffness(self):
        return stiffness_at(self.stiffness, 0, 0.0)

    def index_of(self, global_dof: int) -> int:
        i = np.searchsorted(self.free_dofs, global_dof)
        if i >= self.free_dofs.size or self.free_dofs[i] != global_dof:
            raise KeyError(f"dof {global_dof} is constrained")
        return int(i)


def build_fom(mesh: Mesh2D, material: Material) -> FomArrays:
    """Assemble and constrain mass, stiffness components and the load basis."""
    free = mesh.free_dofs
    restrict = lambda A: A[free][:, free].tocsr()  # noqa: E731
    M = restrict(assemble_mass(mesh, material))
    Ks = [restrict(K) for K in assemble_stiffness_components(mesh, material)]
    f = edge_load_vector(mesh)[free]
    return FomArrays(mass=M, stiffness=Ks, load_basis=f[None, :], free_dofs=free)


def natural_frequencies(M, K, count: int) -> np.ndarray:
    """Smallest ``count`` natural frequencies (Hz) of ``K v = lam M v``."""
    n = M.shape[0]
    if count < 1 or count > n:
        raise ValueError("count must lie in 1..n")
    if sp.issparse(M) and n > 400 and count < n - 1:
        try:
            lam = spla.eigsh(sp.csc_matrix(K), k=count, M=sp.csc_matrix(M), sigma=0.0,
                             which="LM", return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:
            raise RuntimeError("eigen-solver did not converge") from exc
    else:
        Md = M.toarray() if sp.issparse(M) else np.atleast_2d(np.asarray(M, dtype=float))
        Kd = K.toarray() if sp.issparse(K) else np.atleast_2d(np.asarray(K, dtype=float))
        lam = la.eigh(Kd, Md, eigvals_only=True, subset_by_index=[0, count - 1])
    lam = np.sort(np.real(lam))
    return np.sqrt(np.clip(lam, 0.0, None)) / (2.0 * np.pi)
