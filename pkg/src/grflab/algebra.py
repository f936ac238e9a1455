"""Nilpotent Lie algebra data and the trace identities used by the reduced flow.

Conventions: structure constants c[m, i, j] give [x_i, x_j] = c[m, i, j] x_m in
the chosen basis.  The fiberwise bracket on the adjoint bundle, expressed in the
trivialized frame, carries the opposite sign: beta = -c.  Every formula written
with the fiber bracket is evaluated with beta; the covariant derivative of fiber
tensors uses +c together with the connection form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RANK_TOL = 1e-10


class AlgebraValidationError(ValueError):
    """A supplied structure-constant array fails a required identity."""


@dataclass(frozen=True)
class LieAlgebra:
    """Fiber dimension k and structure constants c[m, i, j]."""

    k: int
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if self.k < 0:
            raise AlgebraValidationError(f"fiber dimension must be >= 0, got {self.k}")
        if c.shape != (self.k, self.k, self.k):
            raise AlgebraValidationError(
                f"structure constants must have shape {(self.k,) * 3}, got {c.shape}"
            )
        object.__setattr__(self, "c", c)

    @property
    def beta(self) -> np.ndarray:
        """Fiberwise bracket components in the trivialized frame (= -c)."""
        return -self.c

    @property
    def is_abelian(self) -> bool:
        return not np.any(self.c)


@dataclass
class ValidationReport:
    antisymmetric: bool
    jacobi: bool
    nilpotent: bool
    nilpotency_steps: int
    max_antisymmetry_defect: float
    max_jacobi_defect: float

    @property
    def ok(self) -> bool:
        return self.antisymmetric and self.jacobi and self.nilpotent

    failures: list = field(default_factory=list)


def _lower_central_series_steps(alg: LieAlgebra) -> tuple[bool, int]:
    """Iterate spans of [g, g_i] until the dimension stops dropping.

    Returns (reached zero, number of steps taken to reach zero).  Span
    dimensions are measured by matrix rank with tolerance RANK_TOL so that
    float noise in user-supplied constants does not create phantom directions.
    """
    k, c = alg.k, alg.c
    if k == 0:
        return True, 0
    # g_1 = [g, g]; columns span the current term of the series.
    basis = np.eye(k)
    steps = 0
    for _ in range(k + 1):
        # images [x_i, v] for all basis x_i and current spanning vectors v
        imgs = np.einsum("mij,jv->miv", c, basis).reshape(k, -1)
        rank = np.linalg.matrix_rank(imgs, tol=RANK_TOL) if imgs.size else 0
        steps += 1
        if rank == 0:
            return True, steps
        prev = basis.shape[1]
        basis = _column_span(imgs)
        if basis.shape[1] >= prev:
            return False, steps
    return False, steps


def _column_span(mat: np.ndarray) -> np.ndarray:
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    r = int(np.sum(s > RANK_TOL * max(1.0, s[0] if s.size else 0.0)))
    return u[:, :r]


def validate_algebra(alg: LieAlgebra) -> ValidationReport:
    """Check antisymmetry, Jacobi, and nilpotency of the structure constants."""
    c = alg.c
    anti_defect = float(np.max(np.abs(c + np.swapaxes(c, 1, 2)))) if c.size else 0.0
    jac = (
        np.einsum("mij,nmk->nijk", c, c)
        + np.einsum("mjk,nmi->nijk", c, c)
        + np.einsum("mki,nmj->nijk", c, c)
    )
    jac_defect = float(np.max(np.abs(jac))) if c.size else 0.0
    scale = max(1.0, float(np.max(np.abs(c))) if c.size else 0.0)
    antisymmetric = anti_defect <= 1e-12 * scale
    jacobi = jac_defect <= 1e-10 * scale * scale
    nilpotent, steps = _lower_central_series_steps(alg)

    report = ValidationReport(
        antisymmetric=antisymmetric,
        jacobi=jacobi,
        nilpotent=nilpotent,
        nilpotency_steps=steps,
        max_antisymmetry_defect=anti_defect,
        max_jacobi_defect=jac_defect,
    )
    if not antisymmetric:
        report.failures.append("antisymmetry")
    if not jacobi:
        report.failures.append("jacobi")
    if not nilpotent:
        report.failures.append("nilpotency")
    return report


def require_valid(alg: LieAlgebra) -> LieAlgebra:
    report = validate_algebra(alg)
    if not report.ok:
        raise AlgebraValidationError(
            f"structure constants fail: {', '.join(report.failures)}"
        )
    return alg


def _check_spd(G: np.ndarray, k: int) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.shape != (k, k):
        raise ValueError(f"fiber metric must be {k}x{k}, got {G.shape}")
    if np.max(np.abs(G - G.T)) > 1e-12 * max(1.0, np.max(np.abs(G))):
        raise ValueError("fiber metric must be symmetric")
    if k and np.min(np.linalg.eigvalsh(G)) <= 0:
        raise ValueError("fiber metric must be positive definite")
    return G


def ad_traces(alg: LieAlgebra, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The two trace tensors that vanish for nilpotent algebras.

    Returns (t1, t2) with t1[l] = tr_G G([x_l, .], .) and
    t2[a, b] = tr_G G([x_a, [x_b, .]], .).  Both are identically zero (up to
    round-off) whenever the algebra is nilpotent, for any SPD G.
    """
    G = _check_spd(G, alg.k)
    Gi = np.linalg.inv(G) if alg.k else G
    b = alg.beta
    t1 = np.einsum("ij,mj,mli->l", Gi, G, b)
    t2 = np.einsum("ij,mj,man,nbi->ab", Gi, G, b, b)
    return t1, t2


def bracket_norm_sq(alg: LieAlgebra, G: np.ndarray) -> float:
    """Full-contraction squared norm of the fiber bracket,
    G^{ij} G^{kl} G_{mn} beta^m_{ik} beta^n_{jl}."""
    G = _check_spd(G, alg.k)
    if alg.k == 0:
        return 0.0
    Gi = np.linalg.inv(G)
    b = alg.beta
    return float(np.einsum("ij,kl,mn,mik,njl->", Gi, Gi, G, b, b))


# --- presets -----------------------------------------------------------------

def abelian(k: int) -> LieAlgebra:
    return LieAlgebra(k=k, c=np.zeros((k, k, k)))


def heisenberg3() -> LieAlgebra:
    c = np.zeros((3, 3, 3))
    c[2, 0, 1] = 1.0
    c[2, 1, 0] = -1.0
    return LieAlgebra(k=3, c=c)


def algebra_from_spec(spec) -> LieAlgebra:
    """Build an algebra from a preset name or a dense constants array.

    Accepted: "abelian:<k>", "heisenberg3", or {"k": k, "c": nested list,
    row-major c[m][i][j]}.
    """
    if isinstance(spec, str):
        if spec.startswith("abelian:"):
            return abelian(int(spec.split(":", 1)[1]))
        if spec == "heisenberg3":
            return heisenberg3()
        raise AlgebraValidationError(f"unknown algebra preset {spec!r}")
    if isinstance(spec, dict):
        k = int(spec["k"])
        c = np.asarray(spec["c"], dtype=float).reshape(k, k, k)
        return LieAlgebra(k=k, c=c)
    raise AlgebraValidationError(f"cannot interpret algebra spec {spec!r}")
