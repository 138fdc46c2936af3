"""Solvers for the discrete nonlocal minimization problem.

p = 2 is a single linear solve. For p != 2 a damped Newton iteration
minimizes the energy F(u) = E(u) - <b, u>, globalized by backtracking on
the energy and warm-started from the rescaled p = 2 solution. If a Newton
step fails to produce decrease, the iteration falls back to gradient steps
preconditioned by the p = 2 stiffness matrix.
"""

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg

from .assembly import AssemblyContext, DiscreteFunction
from . import norms

_DENSE_LIMIT = 4000


@dataclass
class SolverControls:
    """Knobs for the nonlinear iteration.

    method: auto, direct_linear, damped_newton, or preconditioned_gradient.
    tol is the scaled residual target ||R(u) - b||_2 / ndof; None picks
    1e-10 for p = 2 and 1e-8 otherwise. Backtracking halves the step until
    the energy decrease beats sufficient_decrease times the predicted one.
    continuation solves a short p-sequence for hard exponents (p >= 3 or
    p <= 1.5) reusing each solution as the next initial guess.
    report_norms=False skips the post-solve seminorm and stability
    diagnostics, which cost one extra global assembly on large meshes.
    """

    method: str = "auto"
    tol: float = None
    max_iter: int = 80
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 40
    eps_reg: float = None
    continuation: bool = False
    verbose: bool = False
    report_norms: bool = True

    def __post_init__(self):
        if self.method not in ("auto", "direct_linear", "damped_newton",
                               "preconditioned_gradient"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.tol is not None and not self.tol > 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SolveReport:
    """Outcome of one solve."""

    converged: bool
    iterations: int
    residual_norm: float
    energy: float
    energy_trace: list
    wsp_norm: float
    f_surrogate: float
    stability_ratio: float
    min_coefficient: float
    method: str
    backend: str
    seconds: float
    continuation_path: list = field(default_factory=list)

    def summary(self):
        state = "converged" if self.converged else "NOT converged"
        return (f"{state} in {self.iterations} iterations, "
                f"scaled residual {self.residual_norm:.3e}, "
                f"energy {self.energy:.12g}, |u|_Wsp {self.wsp_norm:.6g}, "
                f"stability ratio {self.stability_ratio:.4g}, "
                f"{self.seconds:.2f} s [{self.method}/{self.backend}]")


def energy_decrease_check(report, slack=1e-12):
    """True iff the energy trace is non-increasing within slack."""
    tr = np.asarray(report.energy_trace, dtype=float)
    if tr.size <= 1:
        return True
    return bool(np.all(np.diff(tr) <= slack))


def _f_surrogate(ctx, f):
    """L^q norm of the forcing with q = p/(p-1), the duality surrogate."""
    from .quadrature import element_rule

    spec = ctx.spec
    q = spec.p / (spec.p - 1.0)
    nodes, wq, _ = element_rule(ctx.mesh, 4)
    if callable(f):
        vals = np.asarray(f(nodes.reshape(-1, ctx.mesh.d)), dtype=float)
        vals = vals.reshape(nodes.shape[:2])
    else:
        vals = np.full(nodes.shape[:2], float(f))
    return float(np.sum(wq * np.abs(vals) ** q)) ** (1.0 / q)


class _LinearSolver:
    """Dense Cholesky below _DENSE_LIMIT dofs, preconditioned CG above."""

    def __init__(self, ndof):
        self.ndof = ndof
        self.fac = None
        self.diag = None

    def factor(self, J):
        if self.ndof <= _DENSE_LIMIT:
            lam = 0.0
            for _ in range(8):
                try:
                    A = J if lam == 0.0 else J + lam * np.eye(self.ndof)
                    self.fac = cho_factor(A, lower=True)
                    return
                except np.linalg.LinAlgError:
                    base = float(np.trace(J)) / self.ndof
                    lam = max(10.0 * lam, 1e-14 * max(base, 1.0))
            raise np.linalg.LinAlgError("Jacobian factorization failed")
        self.J = J
        self.diag = np.clip(np.diag(J), 1e-300, None)

    def solve(self, rhs, pre=None):
        if self.fac is not None:
            return cho_solve(self.fac, rhs)
        M = None
        if pre is not None:
            M = LinearOperator((self.ndof, self.ndof), matvec=pre)
        elif self.diag is not None:
            dinv = 1.0 / self.diag
            M = LinearOperator((self.ndof, self.ndof),
                               matvec=lambda v: dinv * v)
        x, info = cg(self.J, rhs, rtol=1e-12, atol=0.0, maxiter=10 * self.ndof,
                     M=M)
        if info != 0:
            raise np.linalg.LinAlgError(f"CG did not converge (info={info})")
        return x


def _p2_context(ctx):
    spec2 = dataclasses.replace(ctx.spec, p=2.0)
    return AssemblyContext(ctx.mesh, spec2, quad=ctx.quad,
                           eps_reg=ctx.eps_reg, backend=ctx.backend_name)


def _p2_solution(ctx2, b):
    lin = _LinearSolver(ctx2.mesh.ndof)
    J2 = ctx2.jacobian(DiscreteFunction.zeros(ctx2.mesh))
    lin.factor(J2)
    return lin.solve(b), lin


def solve(ctx, f, controls=None, u0=None):
    """Solve the discrete problem on ctx with forcing f.

    f is a constant or a callable of the coordinates. u0 optionally warm
    starts the nonlinear iteration (a DiscreteFunction on the same mesh).
    Returns (DiscreteFunction, SolveReport).
    """
    if controls is None:
        controls = SolverControls()
    if controls.eps_reg is not None:
        ctx.eps_reg = controls.eps_reg
    t0 = time.perf_counter()
    spec = ctx.spec
    p = spec.p
    mesh = ctx.mesh
    ndof = mesh.ndof
    b = ctx.load(f)
    tol = controls.tol
    if tol is None:
        tol = 1e-10 if p == 2.0 else 1e-8

    method = controls.method
    if method == "auto":
        method = "direct_linear" if p == 2.0 else "damped_newton"
    if method == "direct_linear" and p != 2.0:
        raise ValueError("direct_linear requires p = 2")

    if controls.continuation and method != "direct_linear" \
            and (p >= 3.0 or p <= 1.5):
        return _solve_continuation(ctx, f, controls, u0, t0)

    if method == "direct_linear":
        u, rep = _solve_linear(ctx, b, tol, t0)
    else:
        u, rep = _solve_newton(ctx, b, tol, controls, u0, t0,
                               gradient_only=(method == "preconditioned_gradient"))
    rep.method = method
    if controls.report_norms:
        rep.f_surrogate = _f_surrogate(ctx, f)
        rep.wsp_norm = norms.wsp_norm(ctx, u)
        if rep.f_surrogate > 0.0:
            rep.stability_ratio = rep.wsp_norm / rep.f_surrogate ** (1.0 / (p - 1.0))
        else:
            rep.stability_ratio = 0.0 if rep.wsp_norm == 0.0 else np.inf
    rep.min_coefficient = float(u.dof_values.min()) if ndof else 0.0
    rep.seconds = time.perf_counter() - t0
    return u, rep


def _report_shell(ctx):
    return SolveReport(converged=False, iterations=0, residual_norm=np.inf,
                       energy=np.nan, energy_trace=[], wsp_norm=np.nan,
                       f_surrogate=np.nan, stability_ratio=np.nan,
                       min_coefficient=np.nan, method="",
                       backend=ctx.backend_name, seconds=0.0)


def _solve_linear(ctx, b, tol, t0):
    mesh = ctx.mesh
    lin = _LinearSolver(mesh.ndof)
    J = ctx.jacobian(DiscreteFunction.zeros(mesh))
    lin.factor(J)
    x = lin.solve(b)
    g = J @ x - b
    res = np.linalg.norm(g) / mesh.ndof
    if res > tol:
        x = x - lin.solve(g)
        g = J @ x - b
        res = np.linalg.norm(g) / mesh.ndof
    u = DiscreteFunction(mesh, x)
    rep = _report_shell(ctx)
    rep.converged = bool(res <= tol)
    rep.iterations = 1
    rep.residual_norm = float(res)
    rep.energy = float(ctx.energy(u) - b @ x)
    rep.energy_trace = [0.0, rep.energy] if rep.energy <= 0.0 else [rep.energy]
    return u, rep


def _initial_guess(ctx, b):
    """Rescaled p = 2 solution: minimizes the energy along its ray."""
    p = ctx.spec.p
    ctx2 = _p2_context(ctx)
    x0, _ = _p2_solution(ctx2, b)
    if not np.any(x0):
        return x0
    u0 = DiscreteFunction(ctx.mesh, x0)
    eg = ctx.energy(u0)
    bu = float(b @ x0)
    if eg <= 0.0 or bu <= 0.0:
        return x0
    t = (bu / (p * eg)) ** (1.0 / (p - 1.0))
    return t * x0


def _solve_newton(ctx, b, tol, controls, u0, t0, gradient_only=False):
    mesh = ctx.mesh
    ndof = mesh.ndof
    p = ctx.spec.p
    lin = _LinearSolver(ndof)
    pre_fac = None

    if u0 is not None:
        x = np.array(u0.dof_values, dtype=float)
    else:
        x = _initial_guess(ctx, b)

    def phi_and_grad(xv, want_r=True):
        uf = DiscreteFunction(mesh, xv)
        if want_r:
            E, R, _ = ctx.assemble(uf, want_r=True, want_j=False)
            return E - b @ xv, R - b
        E, _, _ = ctx.assemble(uf, want_r=False, want_j=False)
        return E - b @ xv, None

    rep = _report_shell(ctx)
    phi, g = phi_and_grad(x)
    trace = [float(phi)]
    res = np.linalg.norm(g) / ndof
    it = 0
    fallback = gradient_only
    while it < controls.max_iter and res > tol:
        it += 1
        if fallback:
            if pre_fac is None:
                ctx2 = _p2_context(ctx)
                _, pre_fac = _p2_solution(ctx2, b)
            d = -pre_fac.solve(g)
        else:
            uf = DiscreteFunction(mesh, x)
            J = ctx.jacobian(uf)
            try:
                lin.factor(J)
                d = -lin.solve(g)
            except np.linalg.LinAlgError:
                fallback = True
                continue
        slope = float(g @ d)
        if slope >= 0.0:
            d = -g
            slope = float(g @ d)
        t = 1.0
        ok = False
        for _ in range(controls.max_backtracks):
            phi_t, _ = phi_and_grad(x + t * d, want_r=False)
            if phi_t <= phi + controls.sufficient_decrease * t * slope:
                ok = True
                break
            t *= controls.backtrack
        if not ok:
            if fallback:
                break
            fallback = True
            it -= 1
            continue
        x = x + t * d
        phi, g = phi_and_grad(x)
        trace.append(float(phi))
        res = np.linalg.norm(g) / ndof
        if controls.verbose:
            print(f"  it {it}: step {t:.3g}, phi {phi:.12g}, "
                  f"scaled residual {res:.3e}")

    u = DiscreteFunction(mesh, x)
    rep.converged = bool(res <= tol)
    rep.iterations = it
    rep.residual_norm = float(res)
    rep.energy = float(phi)
    rep.energy_trace = trace
    return u, rep


def _solve_continuation(ctx, f, controls, u0, t0):
    """Short p-sequence for hard exponents, reusing each solution."""
    p = ctx.spec.p
    path = [2.0]
    if abs(p - 2.0) > 0.75:
        path.append(0.5 * (2.0 + p))
    path.append(p)
    sub = dataclasses.replace(controls, continuation=False)
    u, rep = None, None
    for pk in path:
        ck = ctx if pk == p else AssemblyContext(
            ctx.mesh, dataclasses.replace(ctx.spec, p=pk), quad=ctx.quad,
            eps_reg=ctx.eps_reg, backend=ctx.backend_name)
        stage = sub if pk == p else dataclasses.replace(
            sub, tol=max((sub.tol or 1e-8) * 100.0, 1e-6))
        guess = u0 if (u is None and u0 is not None) else (
            DiscreteFunction(ctx.mesh, u.dof_values) if u is not None else None)
        u, rep = solve(ck, f, stage, u0=guess)
    rep.continuation_path = path
    rep.seconds = time.perf_counter() - t0
    return u, rep
