"""Reconstruction from black-box return maps.

Everything here touches the dynamics only through a BlackBoxMap: a
callable on surface points (plus an optional batched form used purely for
speed).  No thickness data is read.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    FixedPointScan,
    classify_fixed_point,
    finite_difference_jacobian,
    fixed_point_search,
    fit_loglog,
    _greedy_clusters,
    _require_fixed,
    DEFAULT_FD_STEP,
    FIXED_POINT_RESIDUAL_TOL,
)
from .dynamics import iterate_batch, return_map, return_map_batch
from .errors import NotAFixedPoint
from .surfaces import ConvexCore, SurfacePoint, TangentFrame, frame_at

SKIP_DISPLACEMENT_TOL = 1e-9


@dataclass
class BlackBoxMap:
    """A deterministic surface-to-surface map observed only through calls."""

    core: ConvexCore
    fn: object                      # SurfacePoint -> SurfacePoint
    batch_fn: object | None = None  # (n, N) ambient -> (n, N) ambient
    name: str = ""

    @staticmethod
    def wrap_domain(dom, name: str = "") -> "BlackBoxMap":
        """Hide a radial domain behind the call interface."""
        return BlackBoxMap(
            core=dom.core,
            fn=lambda p: return_map(dom, p),
            batch_fn=lambda X: return_map_batch(dom, X),
            name=name,
        )

    def __call__(self, p: SurfacePoint) -> SurfacePoint:
        return self.fn(p)

    def batch(self, X: np.ndarray) -> np.ndarray:
        if self.batch_fn is not None:
            return self.batch_fn(X)
        out = np.empty_like(X)
        for i in range(X.shape[0]):
            out[i] = self.fn(SurfacePoint.from_ambient(self.core, X[i])).ambient
        return out

    def compose(self, k: int) -> "BlackBoxMap":
        """The k-th iterate as a new black box."""
        def fn(p, _k=k):
            for _ in range(_k):
                p = self.fn(p)
            return p

        def batch_fn(X, _k=k):
            for _ in range(_k):
                X = self.batch(X)
            return X

        return BlackBoxMap(self.core, fn, batch_fn, name=f"{self.name}^{k}")


def recover_descent_field(F: BlackBoxMap, samples):
    """Unit tangent direction of the displacement at each sample point.

    Points with |F(c) - c| <= 1e-9 are skipped and reported.  The
    directions span the gradient line field of the thickness function (for
    the ray mechanism they point along + (I - dS)^-1 grad d).
    """
    results, skipped = [], []
    for p in samples:
        q = F(p)
        disp = q.ambient - p.ambient
        if float(np.linalg.norm(disp)) <= SKIP_DISPLACEMENT_TOL:
            skipped.append(p)
            continue
        nu = F.core.normal(p.ambient)
        tang = disp - nu * float(np.dot(disp, nu))
        norm = float(np.linalg.norm(tang))
        if norm == 0.0:
            skipped.append(p)
            continue
        results.append((p, tang / norm))
    return results, skipped


def detect_fixed_points_blackbox(F: BlackBoxMap, n_seeds: int, tol: float = 1e-10,
                                 max_iters: int = 100_000) -> FixedPointScan:
    """Fixed-point search driven purely through black-box calls."""
    return fixed_point_search(F.core, F.fn, F.batch, n_seeds, tol=tol, max_iters=max_iters)


def estimate_composite_operator(F: BlackBoxMap, c_star: SurfacePoint,
                                frame: TangentFrame | None = None,
                                h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """I - DF at a fixed point, DF by the central-difference stencil."""
    if frame is None:
        frame = frame_at(F.core, c_star)
    _require_fixed(F, c_star, F.fn)
    DF = finite_difference_jacobian(F.core, F.fn, c_star, frame, h)
    return np.eye(DF.shape[0]) - DF


@dataclass
class IsotropicReconstruction:
    """Hessian estimate composite/alpha with its eigenstructure."""

    hessian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns
    alpha: float
    alpha_mode: str = "assumed"


def reconstruct_hessian_isotropic(composite: np.ndarray, alpha: float,
                                  alpha_mode: str = "assumed") -> IsotropicReconstruction:
    """Divide the composite operator by a scalar gain and symmetrize.

    alpha is the isotropic gain assumed in composite = alpha * Hess; any
    nonzero value is accepted (the ray mechanism's measured gain is
    negative, the classical model's is positive), and the reported
    eigenvectors and signature are invariant under rescaling alpha.
    """
    if alpha == 0.0:
        raise ValueError("alpha must be nonzero")
    H = composite / float(alpha)
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    order = np.argsort(w)[::-1]
    return IsotropicReconstruction(H, w[order], V[:, order], float(alpha), alpha_mode)


@dataclass
class ScalingDiagnostic:
    """Pointwise comparison of two maps' displacement fields."""

    cosines: np.ndarray
    abs_cosines: np.ndarray
    norm_ratios: np.ndarray
    mean_cosine: float
    mean_abs_cosine: float
    ratio_mean: float
    ratio_median: float
    max_norm_difference: float
    verdict: str              # "SameLineField" | "DifferentLineField"
    skipped: int


def scaling_ambiguity_diagnostic(F1: BlackBoxMap, F2: BlackBoxMap, samples,
                                 tol_dir: float = 1e-3) -> ScalingDiagnostic:
    """Cosines and norm ratios between tangent displacements of two maps."""
    if F1.core != F2.core:
        raise ValueError("maps live on different cores")
    cos, ratios, diffs = [], [], []
    skipped = 0
    for p in samples:
        nu = F1.core.normal(p.ambient)
        d1 = F1(p).ambient - p.ambient
        d2 = F2(p).ambient - p.ambient
        t1 = d1 - nu * float(np.dot(d1, nu))
        t2 = d2 - nu * float(np.dot(d2, nu))
        n1, n2 = float(np.linalg.norm(t1)), float(np.linalg.norm(t2))
        if n1 <= SKIP_DISPLACEMENT_TOL or n2 <= SKIP_DISPLACEMENT_TOL:
            skipped += 1
            continue
        cos.append(float(np.dot(t1, t2)) / (n1 * n2))
        ratios.append(n2 / n1)
        diffs.append(abs(n2 - n1))
    cos = np.asarray(cos)
    ratios = np.asarray(ratios)
    mean_cos = float(np.mean(cos)) if cos.size else float("nan")
    verdict = "SameLineField" if cos.size and mean_cos >= 1.0 - tol_dir else "DifferentLineField"
    return ScalingDiagnostic(
        cosines=cos,
        abs_cosines=np.abs(cos),
        norm_ratios=ratios,
        mean_cosine=mean_cos,
        mean_abs_cosine=float(np.mean(np.abs(cos))) if cos.size else float("nan"),
        ratio_mean=float(np.mean(ratios)) if ratios.size else float("nan"),
        ratio_median=float(np.median(ratios)) if ratios.size else float("nan"),
        max_norm_difference=float(np.max(diffs)) if diffs else 0.0,
        verdict=verdict,
        skipped=skipped,
    )


@dataclass
class BasinLabeling:
    """Limit-cluster label per seed; label -1 marks unresolved seeds."""

    seeds: list
    labels: np.ndarray
    cluster_reps: list
    continuum: bool = False

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed_theta", "seed_phi", "label"])
            for p, lab in zip(self.seeds, self.labels):
                phi = p.chart[1] if p.chart.shape[0] > 1 else 0.0
                w.writerow([f"{p.theta:.17g}", f"{phi:.17g}", int(lab)])


def basin_decomposition(F: BlackBoxMap, seeds, tol: float = 1e-8,
                        max_iters: int = 200_000,
                        cluster_radius: float | None = None) -> BasinLabeling:
    """Iterate each seed to convergence and cluster the limits.

    Non-convergent seeds get label -1.  The continuum flag is raised when
    more than half of the seeds are already fixed at the first step.
    """
    seeds = list(seeds)
    X0 = np.array([p.ambient for p in seeds])
    result = iterate_batch(None, X0, max_iters=max_iters, tol=tol, map_batch=F.batch,
                           require_contraction=True)
    if cluster_radius is None:
        # wide enough to swallow the convergence ball around each attractor
        cluster_radius = max(10.0 * tol, 1e-3 * F.core.surface_scale())
    labels = -np.ones(len(seeds), dtype=int)
    conv = result.converged
    continuum = bool(np.mean(result.steps <= 2) > 0.5 and np.all(conv))
    if np.any(conv):
        sub = _greedy_clusters(result.limits[conv], cluster_radius)
        labels[conv] = sub
        reps = []
        for lab in range(sub.max() + 1):
            idx = np.nonzero(sub == lab)[0][0]
            reps.append(SurfacePoint.from_ambient(F.core, result.limits[conv][idx], tol=1e-6))
    else:
        reps = []
    return BasinLabeling(seeds, labels, reps, continuum)


@dataclass
class EquivalenceVerdict:
    """Outcome of the necessary-condition battery for orbit equivalence."""

    consistent: bool
    failed_test: str | None
    evidence: dict

    @property
    def verdict(self) -> str:
        return "ConsistentWithEquivalence" if self.consistent else f"Distinguished({self.failed_test})"


def _set_hausdorff(A: np.ndarray, B: np.ndarray) -> float:
    if A.shape[0] == 0 or B.shape[0] == 0:
        return float("inf")
    d = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=-1)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def dynamical_equivalence_check(F1: BlackBoxMap, F2: BlackBoxMap, seeds,
                                fp_residual_tol: float = 1e-7,
                                basin_agreement: float = 0.98,
                                dir_tol: float = 1e-3,
                                n_probe: int = 400,
                                iter_tol: float = 1e-8,
                                max_iters: int = 200_000) -> EquivalenceVerdict:
    """Necessary conditions for orbit equivalence, not a conjugacy search.

    (a) fixed-point sets match: every fixed point detected for one map must
    be fixed under the other (a sampling-robust test even when the fixed
    set is a continuum), (b) basin partitions over the given seeds agree
    after label matching, (c) the unsigned displacement line fields agree
    on off-critical seeds.
    """
    if F1.core != F2.core:
        raise ValueError("maps live on different cores")
    evidence = {}

    s1 = detect_fixed_points_blackbox(F1, n_probe, tol=1e-10, max_iters=max_iters)
    s2 = detect_fixed_points_blackbox(F2, n_probe, tol=1e-10, max_iters=max_iters)
    cross = 0.0
    for scan, other in ((s1, F2), (s2, F1)):
        for p in scan.points:
            cross = max(cross, float(np.linalg.norm(other(p).ambient - p.ambient)))
    evidence["max_cross_residual"] = cross
    A = np.array([p.ambient for p in s1.points]) if s1.points else np.empty((0, F1.core.dim))
    B = np.array([p.ambient for p in s2.points]) if s2.points else np.empty((0, F2.core.dim))
    evidence["fixed_point_hausdorff"] = _set_hausdorff(A, B)
    if not (cross <= fp_residual_tol):
        return EquivalenceVerdict(False, "fixed_points", evidence)

    radius = 0.1 * F1.core.surface_scale()
    b1 = basin_decomposition(F1, seeds, tol=iter_tol, max_iters=max_iters, cluster_radius=radius)
    b2 = basin_decomposition(F2, seeds, tol=iter_tol, max_iters=max_iters, cluster_radius=radius)
    ok = (b1.labels >= 0) & (b2.labels >= 0)
    agreement = 0.0
    if np.any(ok):
        # greedy label matching on the confusion matrix
        l1, l2 = b1.labels[ok], b2.labels[ok]
        n1, n2 = l1.max() + 1, l2.max() + 1
        conf = np.zeros((n1, n2), dtype=int)
        for a, b in zip(l1, l2):
            conf[a, b] += 1
        matched = 0
        used_rows, used_cols = set(), set()
        for _ in range(min(n1, n2)):
            best = -1
            bi = bj = -1
            for i in range(n1):
                if i in used_rows:
                    continue
                for j in range(n2):
                    if j in used_cols:
                        continue
                    if conf[i, j] > best:
                        best, bi, bj = conf[i, j], i, j
            if best <= 0:
                break
            matched += best
            used_rows.add(bi)
            used_cols.add(bj)
        agreement = matched / int(np.sum(conf))
    evidence["basin_agreement"] = agreement
    evidence["basin_resolved"] = int(np.sum(ok))
    if agreement < basin_agreement:
        return EquivalenceVerdict(False, "basins", evidence)

    diag = scaling_ambiguity_diagnostic(F1, F2, seeds, tol_dir=dir_tol)
    evidence["mean_abs_cosine"] = diag.mean_abs_cosine
    if not (diag.abs_cosines.size and diag.mean_abs_cosine >= 1.0 - dir_tol):
        return EquivalenceVerdict(False, "line_field", evidence)
    return EquivalenceVerdict(True, None, evidence)


@dataclass
class ReconstructionReport:
    """Everything the black-box pipeline recovered in one pass."""

    fixed_points: list                      # (SurfacePoint, residual)
    descent_samples: list                   # (SurfacePoint, unit ambient direction)
    composite_ops: list                     # (SurfacePoint, matrix)
    hessians_isotropic: list                # (SurfacePoint, IsotropicReconstruction)
    basin_labels: BasinLabeling | None
    skipped_samples: int = 0

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record", "theta", "phi", "data"])
            for p, r in self.fixed_points:
                w.writerow(["fixed_point", f"{p.theta:.17g}", _phi_str(p), f"{r:.17g}"])
            for p, v in self.descent_samples:
                w.writerow(["descent_dir", f"{p.theta:.17g}", _phi_str(p),
                            ";".join(f"{x:.17g}" for x in v)])
            for p, C in self.composite_ops:
                w.writerow(["composite", f"{p.theta:.17g}", _phi_str(p),
                            ";".join(f"{x:.17g}" for x in C.ravel())])
            for p, rec in self.hessians_isotropic:
                w.writerow([
                    f"hessian(alpha={rec.alpha:.6g},{rec.alpha_mode})",
                    f"{p.theta:.17g}", _phi_str(p),
                    ";".join(f"{x:.17g}" for x in rec.hessian.ravel()),
                ])


def _phi_str(p: SurfacePoint) -> str:
    return f"{p.chart[1]:.17g}" if p.chart.shape[0] > 1 else "0"


def run_reconstruction(F: BlackBoxMap, n_seeds: int, samples, alphas,
                       alpha_mode: str = "assumed", h: float = DEFAULT_FD_STEP,
                       tol: float = 1e-10, basin_seeds=None) -> ReconstructionReport:
    """Full black-box pass: fixed points, line field, composite operators,
    isotropic Hessian estimates (one per supplied alpha), basins."""
    scan = detect_fixed_points_blackbox(F, n_seeds, tol=tol)
    fixed = list(zip(scan.points, scan.residuals))
    descent, skipped = recover_descent_field(F, samples)
    composites, hessians = [], []
    alphas = list(np.atleast_1d(alphas))
    for p, r in fixed:
        if r > FIXED_POINT_RESIDUAL_TOL:
            continue
        C = estimate_composite_operator(F, p, h=h)
        composites.append((p, C))
        for a in alphas:
            hessians.append((p, reconstruct_hessian_isotropic(C, float(a), alpha_mode)))
    basins = None
    if basin_seeds is not None:
        basins = basin_decomposition(F, basin_seeds, tol=max(tol, 1e-8))
    return ReconstructionReport(fixed, descent, composites, hessians, basins, len(skipped))
