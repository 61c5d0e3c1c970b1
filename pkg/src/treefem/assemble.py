"""Batched assembly of compiled kernels over a tree mesh, and the solver.

Elements are processed in per-level batches: every element at one level
shares the same cell size, hence the same quadrature weights and basis
tables, so element integrals reduce to one einsum per contribution.
Bilinear contributions whose scalar program evaluates to a constant are
integrated once per batch and broadcast.

Boundary faces are batched by (level, axis, orientation, slice, kind,
geometry). For geometry faces the closest point on the true surface, the
displacement to it, and the true normal are computed once per mesh and
reused; wall faces use a zero displacement and the face normal itself.
Each quadrature point is routed through the ordered boundary-region
predicates (evaluated at the true boundary point), and the matching
condition decides which surface blocks apply there and supplies the
prescribed boundary value.

The constrained system is reduced with the mesh's hanging-node expansion
``C`` (solve ``CᵀAC y = Cᵀb``, then expand ``u = Cy``) and solved with a
Jacobi-preconditioned BiCGStab.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np
import scipy.sparse as sp

from . import expr as ex
from .errors import AssemblyError, SolverError
from .forms import compile_kernel, required_names
from .kernel import basis_table, face_reference_points, tensor_rule
from .mesh import KIND_GEOMETRY, build_mesh
from .problem import BCKind, TimeScheme

__all__ = ["Assembler", "SolveInfo", "StepRecord", "RunResult",
           "bicgstab", "reduce_system", "run_problem", "nodal_values",
           "l2_error"]


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    history: list


@dataclass
class StepRecord:
    step: int
    time: float
    iterations: int
    residual: float


@dataclass
class RunResult:
    spec: object
    mesh: object
    ir: object
    values: np.ndarray          # nodal field, constraint-consistent
    steps: list
    timings: dict

    @property
    def ndof(self):
        return self.mesh.n_free


def _axis_env_names(dim):
    return ("x", "y", "z")[:dim]


def nodal_values(mesh, value, t=0.0, coefficients=None):
    """Evaluate a number or expression at every mesh node."""
    coords = mesh.node_coords()
    if not hasattr(value, "__class__") or isinstance(value, (int, float)):
        return np.full(mesh.n_nodes, float(value))
    env = {name: coords[:, d]
           for d, name in enumerate(_axis_env_names(mesh.dimension))}
    env["t"] = t
    _bind_coefficients(env, coefficients or {})
    out = ex.eval_scalar(value, env)
    return np.broadcast_to(np.asarray(out, float), (mesh.n_nodes,)).copy()


def _bind_coefficients(env, coefficients):
    # declaration order, so later entries may reference earlier ones
    for name, value in coefficients.items():
        if isinstance(value, tuple):
            for i, comp in enumerate(value):
                env[f"{name}:{i}"] = (float(comp) if isinstance(comp, (int, float))
                                      else ex.eval_scalar(comp, env))
        elif isinstance(value, (int, float)):
            env[name] = float(value)
        else:
            env[name] = ex.eval_scalar(value, env)


@dataclass
class _FaceBatch:
    rows: np.ndarray            # face indices
    level: int
    axis: int
    orient: int
    codes: tuple
    kind: int
    geom: int
    conn: np.ndarray            # (n_f, nc) owner connectivity
    basis_values: np.ndarray    # (nqp, nc)
    basis_grads: np.ndarray     # (nqp, nc, dim)
    warea: np.ndarray           # (nqp,) physical area weights
    h_cell: np.ndarray          # (dim,) owner edge lengths
    x_surr: np.ndarray          # (n_f, nqp, dim)
    x_true: np.ndarray
    dvec: np.ndarray
    n_true: np.ndarray
    n_tilde: np.ndarray         # (dim,)


class Assembler:
    """Caches mesh batches; assembles any kernel IR for this problem."""

    def __init__(self, mesh, spec, quad_volume=2, quad_surface=2, threads=1):
        self.mesh = mesh
        self.spec = spec
        self.threads = max(1, int(threads))
        dim = mesh.dimension
        self.dim = dim
        rule = tensor_rule(quad_volume, dim)
        self.vol_points = rule.points
        self.vol_weights = rule.weights
        self.vol_values, self.vol_grads = basis_table(rule.points, dim)
        self.vol_batches = []
        for level in np.unique(mesh.levels):
            rows = np.nonzero(mesh.levels == level)[0]
            self.vol_batches.append((int(level), rows))
        self.face_rule = tensor_rule(quad_surface, dim - 1)
        self.face_batches = self._build_face_batches()
        self.bc_by_region = {}

    # -- face precomputation ------------------------------------------------

    def _build_face_batches(self):
        mesh = self.mesh
        f = mesh.faces
        if len(f) == 0:
            return []
        dim = self.dim
        levels = mesh.levels[f.element]
        keys = np.column_stack([levels, f.axis, f.orient, f.kind, f.geom,
                                f.slices.astype(np.int64)])
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        batches = []
        for b, key in enumerate(uniq):
            rows = np.nonzero(inverse == b)[0]
            level, axis, orient, kind, geom = (int(v) for v in key[:5])
            codes = tuple(int(v) for v in key[5:])
            points, fraction = face_reference_points(
                self.face_rule.points, axis, orient, codes, dim)
            values, grads = basis_table(points, dim)
            h = mesh.extent / float(1 << level)
            tangential = [d for d in range(dim) if d != axis]
            warea = self.face_rule.weights * fraction * np.prod(h[tangential])
            owners = f.element[rows]
            origin = mesh.element_origin(owners)
            x_surr = origin[:, None, :] + points[None, :, :] * h[None, None, :]
            n_tilde = np.zeros(dim)
            n_tilde[axis] = 1.0 if orient == 1 else -1.0
            if kind == KIND_GEOMETRY:
                geometry = mesh.geometries[geom]
                flat = x_surr.reshape(-1, dim)
                closest = geometry.closest(flat)
                x_true = closest.points.reshape(x_surr.shape)
                n_true = closest.normals.reshape(x_surr.shape)
                dvec = x_true - x_surr
            else:
                x_true = x_surr
                n_true = np.broadcast_to(n_tilde, x_surr.shape).copy()
                dvec = np.zeros_like(x_surr)
            batches.append(_FaceBatch(
                rows=rows, level=level, axis=axis, orient=orient, codes=codes,
                kind=kind, geom=geom, conn=mesh.elem_nodes[owners],
                basis_values=values, basis_grads=grads, warea=warea,
                h_cell=h, x_surr=x_surr, x_true=x_true, dvec=dvec,
                n_true=n_true, n_tilde=n_tilde))
        return batches

    # -- environments ---------------------------------------------------------

    def _base_env(self, coords, t, dt):
        env = {name: coords[..., d]
               for d, name in enumerate(_axis_env_names(self.dim))}
        env["t"] = t
        if dt is not None:
            env["dt"] = dt
        _bind_coefficients(env, self.spec.coefficients)
        return env

    def _table(self, sel, values, grads, h):
        if sel.kind == "N":
            return values
        return grads[:, :, sel.axis] / h[sel.axis]

    # -- boundary routing -----------------------------------------------------

    def _route_regions(self, batch, t, unknown):
        """Region id per quadrature point, from the ordered predicates."""
        shape = batch.x_true.shape[:2]
        env = {name: batch.x_true[..., d]
               for d, name in enumerate(_axis_env_names(self.dim))}
        env["t"] = t
        _bind_coefficients(env, self.spec.coefficients)
        region = np.full(shape, -10 ** 9, np.int64)
        open_rows = np.ones(shape, bool)
        for rid, predicate in self.spec.boundary_regions:
            hold = ex.eval_scalar(predicate, env)
            hold = np.broadcast_to(np.asarray(hold, bool), shape)
            take = open_rows & hold
            region[take] = rid
            open_rows &= ~take
        if open_rows.any():
            where = batch.x_true[open_rows][0]
            raise AssemblyError(
                "a boundary point matched no boundary region predicate "
                f"(near {tuple(round(float(c), 6) for c in where)})")
        masks = {}
        data = {}
        for rid, _ in self.spec.boundary_regions:
            bc = self.spec.boundary_conditions.get((unknown, rid))
            if bc is None:
                continue
            sel = region == rid
            if not sel.any():
                continue
            value = ex.eval_scalar(bc.value, env)
            value = np.broadcast_to(np.asarray(value, float), shape)
            prior_mask, prior_val = masks.get(bc.kind, (None, None))
            if prior_mask is None:
                masks[bc.kind] = (sel, np.where(sel, value, 0.0))
            else:
                masks[bc.kind] = (prior_mask | sel,
                                  np.where(sel, value, prior_val))
        return masks

    # -- assembly -------------------------------------------------------------

    def _volume_batch(self, ir, names, level, rows, t, dt, history, matrix):
        """Contributions of one same-level element batch.

        Pure with respect to the assembler: returns triplet blocks and
        (conn, be) pairs instead of touching shared accumulators, so
        batches may run on worker threads.
        """
        mesh = self.mesh
        conn = mesh.elem_nodes[rows]
        h = mesh.extent / float(1 << level)
        wdetj = self.vol_weights * np.prod(h)
        origin = mesh.element_origin(rows)
        coords = (origin[:, None, :]
                  + self.vol_points[None, :, :] * h[None, None, :])
        env = self._base_env(coords, t, dt)
        for var, back in ir.prelude:
            name = f"prev:{var}:{back}"
            if name not in names:
                continue
            if history is None or back not in history:
                raise AssemblyError(
                    f"kernel needs history field '{name}' but none was given")
            env[name] = np.einsum("qc,ec->eq", self.vol_values,
                                  history[back][conn])
        triplets, rhs = [], []
        if matrix:
            for c in ir.volume_bilinear:
                T = self._table(c.test, self.vol_values, self.vol_grads, h)
                U = self._table(c.trial, self.vol_values, self.vol_grads, h)
                value = ex.eval_scalar(c.scalar, env)
                if np.ndim(value) == 0:
                    cell = float(value) * np.einsum(
                        "q,qi,qj->ij", wdetj, T, U)
                    vals = np.broadcast_to(
                        cell, (len(rows),) + cell.shape)
                else:
                    vals = np.einsum("eq,qi,qj->eij", value * wdetj, T, U)
                triplets.append((
                    np.broadcast_to(conn[:, :, None], vals.shape).ravel(),
                    np.broadcast_to(conn[:, None, :], vals.shape).ravel(),
                    np.asarray(vals).ravel()))
        for c in ir.volume_linear:
            T = self._table(c.test, self.vol_values, self.vol_grads, h)
            value = ex.eval_scalar(c.scalar, env)
            if np.ndim(value) == 0:
                be = np.broadcast_to(
                    float(value) * np.einsum("q,qi->i", wdetj, T),
                    (len(rows), conn.shape[1]))
            else:
                be = np.einsum("eq,qi->ei", value * wdetj, T)
            rhs.append((conn, be))
        return triplets, rhs

    def _face_batch(self, ir, batch, t, dt, matrix):
        """Contributions of one surrogate-face batch; pure like above."""
        surface_groups = (
            (BCKind.DIRICHLET, "special:gd",
             ir.dirichlet_bilinear, ir.dirichlet_linear),
            (BCKind.NEUMANN, "special:gn",
             ir.neumann_bilinear, ir.neumann_linear),
        )
        masks = self._route_regions(batch, t, ir.unknown)
        env = self._base_env(batch.x_surr, t, dt)
        env["special:h"] = float(batch.h_cell.max())
        for d in range(self.dim):
            env[f"special:nt:{d}"] = float(batch.n_tilde[d])
            env[f"special:ntrue:{d}"] = batch.n_true[..., d]
            env[f"special:d:{d}"] = batch.dvec[..., d]
        h = batch.h_cell
        triplets, rhs = [], []
        for kind, data_name, bilinear, linear in surface_groups:
            if kind not in masks or not (bilinear or linear):
                continue
            sel, value = masks[kind]
            weight = sel * batch.warea[None, :]
            env[data_name] = value
            if matrix:
                for c in bilinear:
                    T = self._table(c.test, batch.basis_values,
                                    batch.basis_grads, h)
                    U = self._table(c.trial, batch.basis_values,
                                    batch.basis_grads, h)
                    sval = ex.eval_scalar(c.scalar, env)
                    sval = np.broadcast_to(sval, sel.shape) * weight
                    vals = np.einsum("eq,qi,qj->eij", sval, T, U)
                    triplets.append((
                        np.broadcast_to(batch.conn[:, :, None],
                                        vals.shape).ravel(),
                        np.broadcast_to(batch.conn[:, None, :],
                                        vals.shape).ravel(),
                        vals.ravel()))
            for c in linear:
                T = self._table(c.test, batch.basis_values,
                                batch.basis_grads, h)
                sval = ex.eval_scalar(c.scalar, env)
                sval = np.broadcast_to(sval, sel.shape) * weight
                rhs.append((batch.conn, np.einsum("eq,qi->ei", sval, T)))
            env.pop(data_name, None)
        return triplets, rhs

    def assemble(self, ir, t=0.0, history=None, matrix=True):
        """Assemble the full-space system for one kernel.

        Returns (A, b): A is a CSR matrix over all nodes or None when
        ``matrix`` is false, b the full-space right-hand side. With
        ``threads > 1`` batches evaluate concurrently; the reduction
        below runs on this thread in batch order, so results are
        identical to a serial run.
        """
        n = self.mesh.n_nodes
        names = required_names(ir)
        dt = None if ir.steady else self.spec.time.dt

        tasks = [partial(self._volume_batch, ir, names, level, rows,
                         t, dt, history, matrix)
                 for level, rows in self.vol_batches]
        if any((ir.dirichlet_bilinear, ir.dirichlet_linear,
                ir.neumann_bilinear, ir.neumann_linear)):
            tasks.extend(partial(self._face_batch, ir, batch, t, dt, matrix)
                         for batch in self.face_batches)

        if self.threads > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(lambda task: task(), tasks))
        else:
            results = [task() for task in tasks]

        rows_acc, cols_acc, vals_acc = [], [], []
        b = np.zeros(n)
        for triplets, rhs in results:
            for block in triplets:
                rows_acc.append(block[0])
                cols_acc.append(block[1])
                vals_acc.append(block[2])
            for conn, be in rhs:
                np.add.at(b, conn, be)

        if not matrix:
            return None, b
        if rows_acc:
            A = sp.coo_matrix(
                (np.concatenate(vals_acc),
                 (np.concatenate(rows_acc), np.concatenate(cols_acc))),
                shape=(n, n)).tocsr()
        else:
            A = sp.csr_matrix((n, n))
        return A, b


# ---------------------------------------------------------------------------
# constrained reduction and linear solver

def reduce_system(A, b, constraint):
    reduced = (constraint.T @ (A @ constraint)).tocsr()
    return reduced, constraint.T @ b


def bicgstab(A, b, x0=None, abs_tol=1e-8, rel_tol=1e-8, max_iterations=1000,
             pc_type="jacobi"):
    """Preconditioned BiCGStab on the reduced system."""
    n = len(b)
    x = np.zeros(n) if x0 is None else np.asarray(x0, float).copy()
    r = b - A @ x
    norm0 = float(np.linalg.norm(r))
    history = [norm0]
    target = max(abs_tol, rel_tol * norm0)
    if norm0 <= target:
        return x, SolveInfo(0, norm0, history)
    if pc_type == "jacobi":
        diag = A.diagonal()
        diag = np.where(np.abs(diag) > 0.0, diag, 1.0)
        inv_diag = 1.0 / diag

        def precondition(v):
            return inv_diag * v
    elif pc_type == "none":
        def precondition(v):
            return v
    else:
        raise SolverError(f"unsupported preconditioner '{pc_type}'")

    r0 = r.copy()
    rho_prev = 1.0
    alpha = 1.0
    omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    tiny = 1e-300
    for iteration in range(1, max_iterations + 1):
        rho = float(r0 @ r)
        if abs(rho) < tiny:
            raise SolverError("solver breakdown: rho vanished", history)
        beta = (rho / rho_prev) * (alpha / omega)
        p = r + beta * (p - omega * v)
        p_hat = precondition(p)
        v = A @ p_hat
        denom = float(r0 @ v)
        if abs(denom) < tiny:
            raise SolverError("solver breakdown: search direction collapsed",
                              history)
        alpha = rho / denom
        s = r - alpha * v
        x = x + alpha * p_hat
        norm_s = float(np.linalg.norm(s))
        if norm_s <= target:
            history.append(norm_s)
            return x, SolveInfo(iteration, norm_s, history)
        s_hat = precondition(s)
        t_vec = A @ s_hat
        tt = float(t_vec @ t_vec)
        if tt < tiny:
            raise SolverError("solver breakdown: stabilizer vanished", history)
        omega = float(t_vec @ s) / tt
        if abs(omega) < tiny:
            raise SolverError("solver breakdown: omega vanished", history)
        x = x + omega * s_hat
        r = s - omega * t_vec
        norm_r = float(np.linalg.norm(r))
        history.append(norm_r)
        if norm_r <= target:
            return x, SolveInfo(iteration, norm_r, history)
        rho_prev = rho
    raise SolverError(
        f"no convergence within {max_iterations} iterations "
        f"(residual {history[-1]:.3e}, target {target:.3e})", history)


def _solve_reduced(A, b, spec, x0=None):
    options = spec.solver
    return bicgstab(A, b, x0=x0, abs_tol=options.abs_tol,
                    rel_tol=options.rel_tol,
                    max_iterations=options.max_iterations,
                    pc_type=options.pc_type)


def _bilinear_references_time(ir):
    for region, is_bilinear, contributions in ir.groups():
        if not is_bilinear:
            continue
        for c in contributions:
            if "t" in ex.names_in(c.scalar):
                return True
    return False


# ---------------------------------------------------------------------------
# driver

def run_problem(spec, base_dir=".", mesh=None, initial=None,
                quad_volume=2, quad_surface=2, threads=1, on_step=None):
    """Build, assemble, and solve a problem; steady or time stepping.

    ``initial`` optionally overrides the scripted initial condition with a
    nodal array. ``threads`` spreads batch evaluation during assembly over
    a thread pool without changing the result. ``on_step(step, time,
    values)`` is called after every accepted transient step. Returns a
    RunResult whose ``values`` are nodal and consistent with the
    hanging-node constraints.
    """
    timings = {"mesh": 0.0, "assemble": 0.0, "solve": 0.0}
    tick = time.perf_counter()
    if mesh is None:
        mesh = build_mesh(spec, base_dir)
    timings["mesh"] = time.perf_counter() - tick
    constraint = mesh.constraint
    assembler = Assembler(mesh, spec, quad_volume=quad_volume,
                          quad_surface=quad_surface, threads=threads)
    ir = compile_kernel(spec)
    steps = []

    if ir.steady:
        tick = time.perf_counter()
        A, b = assembler.assemble(ir, t=0.0)
        reduced, rhs = reduce_system(A, b, constraint)
        timings["assemble"] = time.perf_counter() - tick
        tick = time.perf_counter()
        solution, info = _solve_reduced(reduced, rhs, spec)
        timings["solve"] = time.perf_counter() - tick
        values = constraint @ solution
        steps.append(StepRecord(0, 0.0, info.iterations, info.residual))
        return RunResult(spec=spec, mesh=mesh, ir=ir, values=values,
                         steps=steps, timings=timings)

    dt = spec.time.dt
    num_steps = spec.time.num_steps
    unknown = ir.unknown
    if initial is not None:
        state = np.asarray(initial, float).copy()
    else:
        state = nodal_values(mesh, spec.initial_conditions.get(unknown, 0.0),
                             t=0.0, coefficients=spec.coefficients)
    # make the start state consistent with the constraints
    state = constraint @ state[mesh.free_nodes]
    previous = state.copy()
    kernels = {"main": ir}
    if ir.scheme is TimeScheme.BDF2:
        kernels["bootstrap"] = compile_kernel(spec, scheme=TimeScheme.EULER_IMPLICIT)
    matrix_cache = {}
    reuse_matrix = not _bilinear_references_time(ir)
    warm = None
    for k in range(1, num_steps + 1):
        t_k = k * dt
        key = "bootstrap" if (k == 1 and "bootstrap" in kernels) else "main"
        kernel_ir = kernels[key]
        history = {1: state, 2: previous}
        tick = time.perf_counter()
        cached = matrix_cache.get(key) if reuse_matrix else None
        if cached is None:
            A, b = assembler.assemble(kernel_ir, t=t_k, history=history)
            reduced, rhs = reduce_system(A, b, constraint)
            if reuse_matrix:
                matrix_cache[key] = reduced
        else:
            _, b = assembler.assemble(kernel_ir, t=t_k, history=history,
                                      matrix=False)
            reduced = cached
            rhs = constraint.T @ b
        timings["assemble"] += time.perf_counter() - tick
        tick = time.perf_counter()
        solution, info = _solve_reduced(reduced, rhs, spec, x0=warm)
        timings["solve"] += time.perf_counter() - tick
        warm = solution
        previous = state
        state = constraint @ solution
        steps.append(StepRecord(k, t_k, info.iterations, info.residual))
        if on_step is not None:
            on_step(k, t_k, state)
    return RunResult(spec=spec, mesh=mesh, ir=ir, values=state,
                     steps=steps, timings=timings)


# ---------------------------------------------------------------------------
# error measurement

def l2_error(mesh, values, exact, t=0.0, coefficients=None, quad=3):
    """L2 norm of (field - exact) over the kept elements.

    ``exact`` may be an expression over x, y, z, t or a callable taking a
    (m, dim) point array.
    """
    dim = mesh.dimension
    rule = tensor_rule(quad, dim)
    basis_values, _ = basis_table(rule.points, dim)
    total = 0.0
    for level in np.unique(mesh.levels):
        rows = np.nonzero(mesh.levels == level)[0]
        conn = mesh.elem_nodes[rows]
        h = mesh.extent / float(1 << level)
        wdetj = rule.weights * np.prod(h)
        origin = mesh.element_origin(rows)
        coords = origin[:, None, :] + rule.points[None, :, :] * h[None, None, :]
        numeric = np.einsum("qc,ec->eq", basis_values, values[conn])
        if callable(exact):
            reference = exact(coords.reshape(-1, dim)).reshape(numeric.shape)
        else:
            env = {name: coords[..., d]
                   for d, name in enumerate(_axis_env_names(dim))}
            env["t"] = t
            _bind_coefficients(env, coefficients or {})
            reference = np.broadcast_to(
                np.asarray(ex.eval_scalar(exact, env), float), numeric.shape)
        total += float(((numeric - reference) ** 2 * wdetj[None, :]).sum())
    return np.sqrt(total)
