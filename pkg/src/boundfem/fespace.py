"""Broken and continuous Lagrange spaces on triangular meshes.

Degrees of freedom are Lagrange nodal values. Local node ordering on the
reference triangle: the three vertices, then the interior nodes of each edge
(edge k runs from local vertex k to vertex (k+1) % 3), then element-interior
nodes. Global ordering:

* broken spaces are element-major: global dof = element * n_local + local;
* continuous spaces number mesh vertices first, then (p-1) dofs per unique
  mesh edge, then element-interior dofs.

Edge dofs of a continuous space are oriented from the endpoint with the
smaller global vertex index, so neighboring elements agree on shared dofs.
"""

import numpy as np
import scipy.sparse as sp

BROKEN = "broken"
CONTINUOUS = "continuous"


class ReferenceBasis:
    """Lagrange basis of degree p on the reference triangle (monomial form)."""

    def __init__(self, p):
        if p < 1:
            raise ValueError("polynomial degree must be at least 1")
        self.p = int(p)
        self.exponents = [(a, b) for total in range(p + 1)
                          for a, b in ((total - j, j) for j in range(total + 1))]
        self.nodes = _lagrange_nodes(p)
        self.n_local = len(self.nodes)
        V = _monomials(self.nodes, self.exponents)
        self.coeffs = np.linalg.inv(V)

    def eval(self, points):
        """Values and reference gradients of all shape functions at `points`.

        points: array (..., 2). Returns (values (..., n), grads (..., n, 2)).
        """
        points = np.asarray(points, dtype=float)
        M = _monomials(points, self.exponents)
        Mx, My = _monomial_gradients(points, self.exponents)
        values = M @ self.coeffs
        grads = np.stack([Mx @ self.coeffs, My @ self.coeffs], axis=-1)
        return values, grads

    def eval_hessians(self, points):
        """Reference second derivatives, stacked as (..., n, 3) = (dxx, dxy, dyy)."""
        points = np.asarray(points, dtype=float)
        out = []
        for da, db in ((2, 0), (1, 1), (0, 2)):
            D = _monomial_derivative(points, self.exponents, da, db)
            out.append(D @ self.coeffs)
        return np.stack(out, axis=-1)


def _lagrange_nodes(p):
    verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    nodes = list(verts)
    for k in range(3):
        a = np.array(verts[k])
        b = np.array(verts[(k + 1) % 3])
        for i in range(1, p):
            nodes.append(tuple(a + (i / p) * (b - a)))
    for i in range(1, p):
        for j in range(1, p - i):
            nodes.append((i / p, j / p))
    return np.array(nodes)


def _monomials(points, exponents):
    x = points[..., 0]
    y = points[..., 1]
    return np.stack([x ** a * y ** b for a, b in exponents], axis=-1)


def _monomial_gradients(points, exponents):
    x = points[..., 0]
    y = points[..., 1]
    gx, gy = [], []
    for a, b in exponents:
        gx.append(a * x ** (a - 1) * y ** b if a > 0 else np.zeros_like(x))
        gy.append(b * x ** a * y ** (b - 1) if b > 0 else np.zeros_like(x))
    return np.stack(gx, axis=-1), np.stack(gy, axis=-1)


def _monomial_derivative(points, exponents, da, db):
    x = points[..., 0]
    y = points[..., 1]
    cols = []
    for a, b in exponents:
        if a < da or b < db:
            cols.append(np.zeros_like(x))
            continue
        coef = 1.0
        for k in range(da):
            coef *= a - k
        for k in range(db):
            coef *= b - k
        cols.append(coef * x ** (a - da) * y ** (b - db))
    return np.stack(cols, axis=-1)


class FunctionSpace:
    """Polynomial space on a mesh, broken (dG) or continuous."""

    def __init__(self, mesh, p, continuity):
        if continuity not in (BROKEN, CONTINUOUS):
            raise ValueError(f"continuity must be '{BROKEN}' or '{CONTINUOUS}'")
        self.mesh = mesh
        self.p = int(p)
        self.continuity = continuity
        self.basis = ReferenceBasis(p)
        self.n_local = self.basis.n_local
        if continuity == BROKEN:
            self.dofmap = np.arange(mesh.n_elements * self.n_local,
                                    dtype=np.int64).reshape(mesh.n_elements, self.n_local)
            self.n_dofs = mesh.n_elements * self.n_local
        else:
            self.dofmap, self.n_dofs = _continuous_dofmap(mesh, self.p)
        self.dofmap.setflags(write=False)
        self._node_coords = None

    def node_coords(self):
        """Physical coordinates of every global dof (nodal bases only)."""
        if self._node_coords is None:
            B, b0, _, _ = self.mesh.affine()
            phys = b0[:, None, :] + np.einsum("eij,qj->eqi", B, self.basis.nodes)
            coords = np.empty((self.n_dofs, 2))
            coords[self.dofmap.ravel()] = phys.reshape(-1, 2)
            self._node_coords = coords
        return self._node_coords

    def eval_cells(self, coeffs, elems, ref_points):
        """Evaluate the function on elements `elems` at reference points.

        ref_points may be shared, shape (nq, 2), or per-element (ne, nq, 2).
        Returns (values (ne, nq), gradients (ne, nq, 2)) in physical coords.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        elems = np.asarray(elems, dtype=np.int64)
        _, _, _, Binv = self.mesh.affine()
        vals, grads = self.basis.eval(ref_points)
        c = coeffs[self.dofmap[elems]]
        if vals.ndim == 2:  # shared reference points
            u = np.einsum("el,ql->eq", c, vals)
            gref = np.einsum("el,qlr->eqr", c, grads)
        else:
            u = np.einsum("el,eql->eq", c, vals)
            gref = np.einsum("el,eqlr->eqr", c, grads)
        g = np.einsum("eqr,erk->eqk", gref, Binv[elems])
        return u, g

    def interpolate(self, fn):
        """Nodal interpolation of a scalar field, returning a coefficient array."""
        from .fields import scalar_field
        return scalar_field(fn)(self.node_coords())


def build_space(mesh, p, continuity):
    """Build a FunctionSpace; `continuity` is "broken" or "continuous"."""
    return FunctionSpace(mesh, p, continuity)


def eval_basis(space, element, point):
    """All local shape functions of one element at a reference point.

    Returns (values (n_local,), gradients (n_local, 2)) with gradients in
    physical coordinates.
    """
    if not 0 <= element < space.mesh.n_elements:
        raise IndexError(f"element id {element} out of range")
    vals, gref = space.basis.eval(np.asarray(point, dtype=float).reshape(1, 2))
    _, _, _, Binv = space.mesh.affine()
    return vals[0], gref[0] @ Binv[element]


def _continuous_dofmap(mesh, p):
    nv = mesh.n_vertices
    elems = mesh.elements
    ne = len(elems)
    edge_ids = {}
    for e in range(ne):
        a, b, c = elems[e]
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            if key not in edge_ids:
                edge_ids[key] = len(edge_ids)
    n_edges = len(edge_ids)
    n_edge_dofs = p - 1
    n_int = (p - 1) * (p - 2) // 2
    n_local = (p + 1) * (p + 2) // 2

    dofmap = np.empty((ne, n_local), dtype=np.int64)
    dofmap[:, 0:3] = elems
    for e in range(ne):
        a, b, c = elems[e]
        loc = 3
        for (u, v) in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            base = nv + edge_ids[key] * n_edge_dofs
            for i in range(n_edge_dofs):
                slot = i if u < v else n_edge_dofs - 1 - i
                dofmap[e, loc] = base + slot
                loc += 1
        for i in range(n_int):
            dofmap[e, loc] = nv + n_edges * n_edge_dofs + e * n_int + i
            loc += 1
    return dofmap, nv + n_edges * n_edge_dofs + ne * n_int


def trial_to_test_embedding(U_h, V_h):
    """Sparse embedding E with (E c)|broken == c|continuous pointwise.

    E has exactly one unit entry per broken dof row (shared Lagrange nodes).
    """
    if U_h.mesh is not V_h.mesh:
        raise ValueError("spaces must share the same mesh")
    if U_h.p != V_h.p:
        raise ValueError("spaces must share the same polynomial degree")
    if U_h.continuity != CONTINUOUS or V_h.continuity != BROKEN:
        raise ValueError("embedding maps a continuous space into a broken one")
    rows = V_h.dofmap.ravel()
    cols = U_h.dofmap.ravel()
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(V_h.n_dofs, U_h.n_dofs))


class DiscreteFunction:
    """Coefficient vector bound to its function space."""

    def __init__(self, space, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.n_dofs,):
            raise ValueError(f"expected {space.n_dofs} coefficients, got {coeffs.shape}")
        self.space = space
        self.coeffs = coeffs

    def __call__(self, points):
        """Evaluate at physical points (outside-mesh points return NaN)."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        elems, refs = self.space.mesh.locate(points)
        out = np.full(len(points), np.nan)
        inside = elems >= 0
        if inside.any():
            vals, _ = self.space.basis.eval(refs[inside])
            c = self.coeffs[self.space.dofmap[elems[inside]]]
            out[inside] = np.einsum("pl,pl->p", c, vals)
        return out
