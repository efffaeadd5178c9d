"""Conforming triangular meshes: construction, refinement, boundary classification.

Conventions
-----------
* Element vertices are stored counterclockwise. Every element is rotated at
  construction so that its local edge (0, 1) is the refinement edge used by
  newest-vertex bisection; local edge k joins local vertices k and (k+1) % 3.
* For an interior face the stored vertex pair follows the traversal of the
  minus element T-, so the unit normal n_F points from T- to T+. For a
  boundary face the normal is the outward normal of the owning element.
* Meshes are immutable after construction; refinement returns a new mesh
  carrying `parent_mesh` / `parent_elements` provenance.

The plain-text exchange format (see `write_mesh` / `read_mesh`):

    # optional comment lines
    <n_vertices> <n_elements>
    x y            (one line per vertex)
    a b c          (one line per element, 0-based vertex indices)
"""

import numpy as np

from .fields import vector_field

INFLOW = -1
CHARACTERISTIC = 0
OUTFLOW = 1

_CHAR_TOL_FACTOR = 1e-12


class Mesh:
    """Triangulation with face connectivity and per-element refinement edges."""

    def __init__(self, vertices, elements, *, refinement_edges="longest",
                 parent_mesh=None, parent_elements=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        elements = np.ascontiguousarray(elements, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (n, 2)")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise ValueError("elements must have shape (n, 3)")
        if len(elements) == 0:
            raise ValueError("mesh needs at least one element")
        if elements.min() < 0 or elements.max() >= len(vertices):
            raise ValueError("element vertex index out of range")

        elements = _orient_ccw(vertices, elements)
        if refinement_edges == "longest":
            elements = _rotate_longest_edge_first(vertices, elements)
        elif refinement_edges != "keep":
            raise ValueError("refinement_edges must be 'longest' or 'keep'")

        self.vertices = vertices
        self.elements = elements
        self.parent_mesh = parent_mesh
        self.parent_elements = parent_elements

        p0 = vertices[elements[:, 0]]
        p1 = vertices[elements[:, 1]]
        p2 = vertices[elements[:, 2]]
        cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) \
            - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
        self.element_area = 0.5 * cross
        if np.any(self.element_area <= 0.0):
            raise ValueError("degenerate element (nonpositive area)")

        lengths = np.stack([
            np.linalg.norm(p1 - p0, axis=1),
            np.linalg.norm(p2 - p1, axis=1),
            np.linalg.norm(p0 - p2, axis=1),
        ], axis=1)
        self.h_elem = lengths.max(axis=1)

        self._build_faces()
        self._affine_cache = None
        self._locator = None
        for arr in (self.vertices, self.elements, self.element_area, self.h_elem):
            arr.setflags(write=False)

    # ------------------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def h(self):
        return float(self.h_elem.max())

    def _build_faces(self):
        """Collect unique edges, split into interior and boundary faces."""
        elems = self.elements
        ne = len(elems)
        owners = {}
        for e in range(ne):
            a, b, c = elems[e]
            for le, (u, v) in enumerate(((a, b), (b, c), (c, a))):
                key = (u, v) if u < v else (v, u)
                owners.setdefault(key, []).append((e, le))

        i_verts, i_elems, b_verts, b_elems = [], [], [], []
        for key in sorted(owners):
            own = owners[key]
            if len(own) == 2:
                own.sort()
                (em, lem), (ep, _) = own
                a = elems[em, lem]
                b = elems[em, (lem + 1) % 3]
                i_verts.append((a, b))
                i_elems.append((em, ep))
            elif len(own) == 1:
                e, le = own[0]
                a = elems[e, le]
                b = elems[e, (le + 1) % 3]
                b_verts.append((a, b))
                b_elems.append(e)
            else:
                raise ValueError(f"edge {key} shared by more than two elements")

        self.iface_vertices = np.array(i_verts, dtype=np.int64).reshape(-1, 2)
        self.iface_elements = np.array(i_elems, dtype=np.int64).reshape(-1, 2)
        self.bface_vertices = np.array(b_verts, dtype=np.int64).reshape(-1, 2)
        self.bface_elements = np.array(b_elems, dtype=np.int64)

        self.iface_normals, self.iface_h = _edge_normals(self.vertices, self.iface_vertices)
        self.bface_normals, self.bface_h = _edge_normals(self.vertices, self.bface_vertices)
        for arr in (self.iface_vertices, self.iface_elements, self.iface_normals,
                    self.iface_h, self.bface_vertices, self.bface_elements,
                    self.bface_normals, self.bface_h):
            arr.setflags(write=False)

    # ------------------------------------------------------------------
    def affine(self):
        """Per-element affine maps x = b0 + B r from the reference triangle.

        Returns (B, b0, detB, Binv) with shapes (ne,2,2), (ne,2), (ne,), (ne,2,2).
        """
        if self._affine_cache is None:
            p0 = self.vertices[self.elements[:, 0]]
            p1 = self.vertices[self.elements[:, 1]]
            p2 = self.vertices[self.elements[:, 2]]
            B = np.empty((self.n_elements, 2, 2))
            B[:, :, 0] = p1 - p0
            B[:, :, 1] = p2 - p0
            detB = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
            Binv = np.empty_like(B)
            Binv[:, 0, 0] = B[:, 1, 1]
            Binv[:, 0, 1] = -B[:, 0, 1]
            Binv[:, 1, 0] = -B[:, 1, 0]
            Binv[:, 1, 1] = B[:, 0, 0]
            Binv /= detB[:, None, None]
            self._affine_cache = (B, p0.copy(), detB, Binv)
        return self._affine_cache

    def to_reference(self, elems, points):
        """Map physical points (..., 2) inside the given elements to reference coords."""
        B, b0, _, Binv = self.affine()
        d = points - b0[elems]
        return np.einsum("...ij,...j->...i", Binv[elems], d)

    def element_centroids(self):
        v = self.vertices
        e = self.elements
        return (v[e[:, 0]] + v[e[:, 1]] + v[e[:, 2]]) / 3.0

    # ------------------------------------------------------------------
    def locate(self, points, tol=1e-12):
        """Find containing elements for physical points.

        Returns (elem_ids, ref_coords); elem_id -1 marks points outside the mesh.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        if self._locator is None:
            self._locator = _GridLocator(self)
        return self._locator.locate(points, tol)


class _GridLocator:
    """Uniform-grid bucket index over element bounding boxes."""

    def __init__(self, mesh):
        self.mesh = mesh
        v = mesh.vertices
        self.lo = v.min(axis=0)
        self.hi = v.max(axis=0)
        n = max(1, int(np.sqrt(mesh.n_elements)))
        self.shape = (n, n)
        self.cell = (self.hi - self.lo) / n
        self.cell[self.cell == 0.0] = 1.0
        buckets = [[] for _ in range(n * n)]
        corners = v[mesh.elements]
        bmin = corners.min(axis=1)
        bmax = corners.max(axis=1)
        i0 = np.clip(((bmin - self.lo) / self.cell).astype(int), 0, n - 1)
        i1 = np.clip(((bmax - self.lo) / self.cell).astype(int), 0, n - 1)
        for e in range(mesh.n_elements):
            for ix in range(i0[e, 0], i1[e, 0] + 1):
                for iy in range(i0[e, 1], i1[e, 1] + 1):
                    buckets[ix * n + iy].append(e)
        self.buckets = [np.array(b, dtype=np.int64) for b in buckets]

    def locate(self, points, tol):
        n = self.shape[0]
        idx = np.clip(((points - self.lo) / self.cell).astype(int), 0, n - 1)
        elems = np.full(len(points), -1, dtype=np.int64)
        refs = np.zeros((len(points), 2))
        mesh = self.mesh
        for k, p in enumerate(points):
            cand = self.buckets[idx[k, 0] * n + idx[k, 1]]
            if len(cand) == 0:
                continue
            r = mesh.to_reference(cand, np.broadcast_to(p, (len(cand), 2)))
            ok = (r[:, 0] >= -tol) & (r[:, 1] >= -tol) & (r.sum(axis=1) <= 1.0 + tol)
            hits = np.nonzero(ok)[0]
            if len(hits):
                elems[k] = cand[hits[0]]
                refs[k] = r[hits[0]]
        return elems, refs


def _orient_ccw(vertices, elements):
    p0 = vertices[elements[:, 0]]
    p1 = vertices[elements[:, 1]]
    p2 = vertices[elements[:, 2]]
    cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) \
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    flip = cross < 0.0
    if flip.any():
        elements = elements.copy()
        elements[flip, 1], elements[flip, 2] = elements[flip, 2], elements[flip, 1].copy()
    return elements


def _rotate_longest_edge_first(vertices, elements):
    """Cyclically rotate each element so edge (0,1) is its longest edge.

    Length ties are broken by the lexicographically smallest sorted vertex
    pair, which makes the choice independent of input ordering.
    """
    out = elements.copy()
    for e in range(len(elements)):
        tri = elements[e]
        best = None
        for k in range(3):
            u, v = tri[k], tri[(k + 1) % 3]
            length = np.linalg.norm(vertices[u] - vertices[v])
            pair = (min(u, v), max(u, v))
            key = (-length, pair)
            if best is None or key < best[0]:
                best = (key, k)
        k = best[1]
        if k:
            out[e] = np.roll(tri, -k)
    return out


def _edge_normals(vertices, pairs):
    """Unit normals obtained by rotating the edge tangent clockwise.

    For an edge traversed in the owner's counterclockwise order this is the
    outward normal of that owner.
    """
    t = vertices[pairs[:, 1]] - vertices[pairs[:, 0]]
    h = np.linalg.norm(t, axis=1)
    normals = np.column_stack([t[:, 1], -t[:, 0]])
    if len(h):
        normals /= h[:, None]
    return normals, h


# ----------------------------------------------------------------------
# Constructors and refinement
# ----------------------------------------------------------------------

def build_structured_mesh(nx, ny, rect=(0.0, 1.0, 0.0, 1.0)):
    """Structured triangulation of an axis-aligned rectangle.

    Each of the nx-by-ny grid cells is split along its lower-left to
    upper-right diagonal, giving 2*nx*ny congruent triangles.
    """
    nx, ny = int(nx), int(ny)
    x0, x1, y0, y1 = map(float, rect)
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    if x1 <= x0 or y1 <= y0:
        raise ValueError("rectangle must have positive area")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    k = 0
    for j in range(ny):
        for i in range(nx):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            elements[k] = (a, b, c)
            elements[k + 1] = (a, c, d)
            k += 2
    return Mesh(vertices, elements)


def refine_uniform_red(mesh):
    """Split every triangle into four congruent children (red refinement)."""
    verts = mesh.vertices
    elems = mesh.elements
    edge_mid = {}
    mids = []
    for pair in _all_edges(elems):
        edge_mid[pair] = len(verts) + len(mids)
        mids.append(0.5 * (verts[pair[0]] + verts[pair[1]]))
    new_verts = np.vstack([verts, np.array(mids).reshape(-1, 2)])

    def mid(u, v):
        return edge_mid[(u, v) if u < v else (v, u)]

    children = np.empty((4 * len(elems), 3), dtype=np.int64)
    for e, (a, b, c) in enumerate(elems):
        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        children[4 * e:4 * e + 4] = [
            (a, mab, mca),
            (mab, b, mbc),
            (mca, mbc, c),
            (mab, mbc, mca),
        ]
    parents = np.repeat(np.arange(len(elems), dtype=np.int64), 4)
    return Mesh(new_verts, children, parent_mesh=mesh, parent_elements=parents)


def bisect_marked(mesh, marks):
    """Newest-vertex bisection of the marked elements with conformity closure.

    Every marked element is bisected at least once; neighbors are bisected
    only as required to keep the mesh conforming. An empty mark set returns
    the mesh unchanged.
    """
    marks = np.unique(np.asarray(list(marks), dtype=np.int64).reshape(-1))
    if len(marks) == 0:
        return mesh
    if marks.min() < 0 or marks.max() >= mesh.n_elements:
        raise ValueError("marked element id out of range")

    elems = mesh.elements
    edge_ids = {}
    for pair in _all_edges(elems):
        edge_ids[pair] = len(edge_ids)
    elem2edge = np.empty((len(elems), 3), dtype=np.int64)
    for e, (a, b, c) in enumerate(elems):
        for le, (u, v) in enumerate(((a, b), (b, c), (c, a))):
            elem2edge[e, le] = edge_ids[(u, v) if u < v else (v, u)]

    marked_edge = np.zeros(len(edge_ids), dtype=bool)
    marked_edge[elem2edge[marks, 0]] = True
    # closure: any element with a marked edge must have its refinement edge marked
    while True:
        touched = marked_edge[elem2edge].any(axis=1)
        need = touched & ~marked_edge[elem2edge[:, 0]]
        if not need.any():
            break
        marked_edge[elem2edge[need, 0]] = True

    split_ids = np.nonzero(marked_edge)[0]
    new_vid = {}
    mids = []
    inv_edges = {v: k for k, v in edge_ids.items()}
    for eid in split_ids:
        u, v = inv_edges[eid]
        new_vid[eid] = mesh.n_vertices + len(mids)
        mids.append(0.5 * (mesh.vertices[u] + mesh.vertices[v]))
    new_verts = np.vstack([mesh.vertices, np.array(mids).reshape(-1, 2)])

    children = []
    parents = []
    for e, (a, b, c) in enumerate(elems):
        e0, e1, e2 = elem2edge[e]
        if not marked_edge[e0]:
            children.append((a, b, c))
            parents.append(e)
            continue
        m = new_vid[e0]
        # left child (c, a, m): refinement edge (c, a) = parent edge 2
        if marked_edge[e2]:
            m2 = new_vid[e2]
            children.append((m, c, m2))
            children.append((a, m, m2))
            parents.extend((e, e))
        else:
            children.append((c, a, m))
            parents.append(e)
        # right child (b, c, m): refinement edge (b, c) = parent edge 1
        if marked_edge[e1]:
            m1 = new_vid[e1]
            children.append((m, b, m1))
            children.append((c, m, m1))
            parents.extend((e, e))
        else:
            children.append((b, c, m))
            parents.append(e)

    return Mesh(new_verts, np.array(children, dtype=np.int64),
                refinement_edges="keep", parent_mesh=mesh,
                parent_elements=np.array(parents, dtype=np.int64))


def _all_edges(elements):
    """Sorted unique (lo, hi) vertex pairs over all element edges."""
    pairs = set()
    for a, b, c in elements:
        for u, v in ((a, b), (b, c), (c, a)):
            pairs.add((u, v) if u < v else (v, u))
    return sorted(pairs)


# ----------------------------------------------------------------------
# Boundary classification
# ----------------------------------------------------------------------

class BoundaryClassification:
    """Pointwise inflow/characteristic/outflow labels on the boundary skeleton.

    `labels` has one row per boundary face and one column per quadrature
    point; entries are INFLOW (-1), CHARACTERISTIC (0), or OUTFLOW (+1).
    `face_labels` classifies whole faces at their midpoints.
    """

    def __init__(self, labels, b_dot_n, points, tol, face_labels):
        self.labels = labels
        self.b_dot_n = b_dot_n
        self.points = points
        self.tol = tol
        self.face_labels = face_labels


def char_tolerance(beta_values):
    """Sign tolerance for beta.n, scaled by the largest velocity component."""
    if beta_values.size == 0:
        return 0.0
    return _CHAR_TOL_FACTOR * float(np.abs(beta_values).max())


def signed_labels(b_dot_n, tol):
    labels = np.zeros(b_dot_n.shape, dtype=np.int8)
    labels[b_dot_n < -tol] = INFLOW
    labels[b_dot_n > tol] = OUTFLOW
    return labels


def classify_boundary_faces(mesh, beta, quad_degree=3):
    """Classify boundary faces by the sign of beta.n at face quadrature points."""
    from .quadrature import edge_rule

    beta = vector_field(beta)
    rule = edge_rule(quad_degree)
    p0 = mesh.vertices[mesh.bface_vertices[:, 0]]
    p1 = mesh.vertices[mesh.bface_vertices[:, 1]]
    pts = p0[:, None, :] + rule.points[None, :, None] * (p1 - p0)[:, None, :]
    bvals = beta(pts)
    b_dot_n = np.einsum("fqd,fd->fq", bvals, mesh.bface_normals)
    tol = char_tolerance(bvals)
    labels = signed_labels(b_dot_n, tol)

    mid = 0.5 * (p0 + p1)
    bmid = np.einsum("fd,fd->f", beta(mid), mesh.bface_normals)
    face_labels = signed_labels(bmid, tol)
    return BoundaryClassification(labels, b_dot_n, pts, tol, face_labels)


# ----------------------------------------------------------------------
# Plain-text mesh exchange
# ----------------------------------------------------------------------

def write_mesh(mesh, path):
    """Write the documented plain-text format (vertex list + element list)."""
    with open(path, "w") as fh:
        fh.write("# boundfem mesh: vertices then elements, 0-based indices\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_elements}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.elements:
            fh.write(f"{a} {b} {c}\n")


def read_mesh(path):
    """Read the plain-text format written by `write_mesh`."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh
                 if ln.strip() and not ln.lstrip().startswith("#")]
    nv, ne = map(int, lines[0].split())
    if len(lines) != 1 + nv + ne:
        raise ValueError(f"mesh file {path}: expected {1 + nv + ne} data lines, got {len(lines)}")
    vertices = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + nv]])
    elements = np.array([[int(t) for t in ln.split()] for ln in lines[1 + nv:]], dtype=np.int64)
    return Mesh(vertices, elements)
