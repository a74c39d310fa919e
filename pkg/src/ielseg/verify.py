"""Property suites behind ``ielseg verify``.

Each suite returns a :class:`SuiteResult`; ``checks`` holds one
``(name, passed, detail)`` triple per property.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from ielseg import autodiff as ad
from ielseg import curvemotion as cm
from ielseg import theory
from ielseg.diffusion import DiffusionConfig, apply_iels, apply_merged, iel_array, merged_coeffs
from ielseg.field import Field, inner, laplacian, laplacian_matrix_form
from ielseg.model import apply_variant, init_params, network
from ielseg.oracles import central_difference, concave_brute_force, laplacian_kron

SUITES = ("energy", "merge", "adjoint", "gradcheck", "theorem2", "convex-oracle")


@dataclass
class SuiteResult:
    name: str
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(ok for _, ok, _ in self.checks)

    def add(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    def lines(self):
        for name, ok, detail in self.checks:
            yield f"[{'PASS' if ok else 'FAIL'}] {self.name}/{name}: {detail}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def energy_suite(n_fields=1000, seed=0, sizes=((8, 8), (16, 16), (33, 47)), dts=(0.01, 0.1, 1.0, 10.0)):
    """Inverse heat steps never lower the forward-difference energy."""
    res = SuiteResult("energy")
    rng = np.random.default_rng(seed)
    failures, worst = 0, np.inf
    for i in range(n_fields):
        shape = sizes[i % len(sizes)]
        U = Field(rng.standard_normal((1,) + tuple(shape)))
        for dt in dts:
            rep = theory.check_energy_amplification(U, dt)
            failures += not rep.holds
            worst = min(worst, rep.energy_out - rep.energy_in)
    res.add("amplification", failures == 0,
            f"{n_fields} fields x {len(dts)} dt, failures={failures}, min(E_out-E_in)={worst:.4g}")
    return res


def time_merge(U: Field, n: int, dt: float, repeats: int = 5):
    """Best-of-``repeats`` wall time of the sequential and merged paths."""
    cfg = DiffusionConfig(dt, n)
    coeffs = merged_coeffs(n, dt)
    seq, mer = np.inf, np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        apply_iels(U, cfg)
        t1 = time.perf_counter()
        apply_merged(U, coeffs)
        t2 = time.perf_counter()
        seq, mer = min(seq, t1 - t0), min(mer, t2 - t1)
    return seq, mer


@_timed
def merge_suite(seed=0, size=64, dt=0.1, max_layers=10, fields_per_n=3):
    """Merged single layer equals the stacked layers; merged path is not slower."""
    res = SuiteResult("merge")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in range(1, max_layers + 1):
        for _ in range(fields_per_n):
            U = Field(rng.standard_normal((1, size, size)))
            ref = apply_iels(U, DiffusionConfig(dt, n)).values.astype(np.float64)
            got = apply_merged(U, merged_coeffs(n, dt)).values.astype(np.float64)
            worst = max(worst, np.abs(got - ref).max() / np.abs(ref).max())
    res.add("equivalence", worst <= 1e-4, f"n=1..{max_layers}, dt={dt}, {size}x{size}: max rel diff {worst:.3g} (tol 1e-4)")
    U = Field(rng.standard_normal((1, size, size)))
    seq, mer = time_merge(U, max_layers, dt, repeats=20)
    res.add("timing", mer <= 1.2 * seq, f"n={max_layers}: sequential {seq * 1e6:.1f}us, merged {mer * 1e6:.1f}us (limit +20%)")
    return res


@_timed
def adjoint_suite(n_shapes=50, seed=0):
    """Stencil matches the matrix form; Laplacian, IEL step and the IEL op's VJP are self-adjoint."""
    res = SuiteResult("adjoint")
    rng = np.random.default_rng(seed)
    worst_form, worst_kron, worst_adj, worst_iel = 0.0, 0.0, 0.0, 0.0
    for _ in range(n_shapes):
        shape = (int(rng.integers(1, 4)), int(rng.integers(1, 41)), int(rng.integers(1, 41)))
        U = Field(rng.standard_normal(shape))
        W = Field(rng.standard_normal(shape))
        lap = laplacian(U).values.astype(np.float64)
        ref = laplacian_matrix_form(U)
        worst_form = max(worst_form, np.linalg.norm(lap - ref) / max(np.linalg.norm(ref), 1e-30))
        kron = np.stack([laplacian_kron(c) for c in U.values])
        worst_kron = max(worst_kron, np.linalg.norm(lap - kron) / max(np.linalg.norm(kron), 1e-30))
        a, b = inner(laplacian(U), W), inner(U, laplacian(W))
        worst_adj = max(worst_adj, abs(a - b) / max(abs(a), abs(b), 1e-30))
        a = float(np.vdot(iel_array(U.values.astype(np.float64), 0.1, 5), W.values))
        b = float(np.vdot(U.values, iel_array(W.values.astype(np.float64), 0.1, 5)))
        worst_iel = max(worst_iel, abs(a - b) / max(abs(a), abs(b), 1e-30))
    res.add("matrix-form", worst_form <= 1e-6, f"{n_shapes} shapes: max rel diff {worst_form:.3g} (tol 1e-6)")
    res.add("kronecker-form", worst_kron <= 1e-6, f"{n_shapes} shapes: max rel diff {worst_kron:.3g} (tol 1e-6)")
    res.add("laplacian-self-adjoint", worst_adj <= 1e-5, f"max rel diff {worst_adj:.3g} (tol 1e-5)")
    res.add("iel-self-adjoint", worst_iel <= 1e-5, f"5 layers dt=0.1: max rel diff {worst_iel:.3g} (tol 1e-5)")
    # the op's VJP must be the operator itself
    x = ad.tensor(rng.standard_normal((1, 2, 9, 11)), requires_grad=True)
    g = rng.standard_normal((1, 2, 9, 11))
    cfg = DiffusionConfig(0.1, 5)
    out = ad.op_iel_heat(x, cfg)
    vjp = out.backward_fn(g)[0]
    err = np.abs(vjp - iel_array(g, 0.1, 5)).max()
    res.add("op-vjp", err <= 1e-12, f"max |vjp - L(g)| = {err:.3g}")
    return res


def model_gradcheck(variant=None, size=8, seed=0, per_tensor=6, eps=1e-3):
    """Finite-difference check of the full model + loss in float64.

    Returns ``(max_rel_err, checked, skipped)``. An entry is skipped when the
    +/- eps perturbation changes any non-differentiable branch (relu mask,
    pooling argmax, curve speed map).
    """
    variant = variant or ad.LossVariant.iel_heat(0.1, 5)
    rng = np.random.default_rng(seed)
    params = init_params(seed, 2).astype(np.float64)
    # nonzero biases so no layer sits exactly on a relu kink
    for k in params:
        if k.endswith(".b"):
            params.arrays[k] = rng.uniform(-0.1, 0.1, params[k].shape)
    image = rng.random((1, 3, size, size))
    target = rng.integers(0, 2, size=(1, size, size))

    def build():
        nodes = params.nodes(requires_grad=True)
        x = ad.tensor(image, requires_grad=True)
        logits = apply_variant(network(nodes, x), "train", variant, params.classes)
        return ad.softmax_cross_entropy(logits, target), nodes, x

    loss, nodes, x = build()
    ad.backward(loss)
    base_sig = ad.kink_signature(loss)
    analytic = {k: n.grad for k, n in nodes.items()}
    analytic["image"] = x.grad

    def value():
        loss, _, _ = build()
        return float(loss.value), ad.kink_signature(loss)

    arrays = dict(params.arrays)
    arrays["image"] = image
    worst, checked, skipped = 0.0, 0, 0
    for name, arr in arrays.items():
        flat_idx = rng.choice(arr.size, size=min(per_tensor, arr.size), replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            sigs = []

            def fn():
                v, s = value()
                sigs.append(s)
                return v

            num = central_difference(fn, arr, idx, eps)
            if any(s != base_sig for s in sigs):
                skipped += 1
                continue
            a = analytic[name][idx]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
            checked += 1
    return worst, checked, skipped


@_timed
def gradcheck_suite(seed=0):
    """Whole-model gradients (8x8 input, 5 heat IELs, dt=0.1) against central differences."""
    res = SuiteResult("gradcheck")
    worst, checked, skipped = model_gradcheck(seed=seed)
    res.add("model+iel", worst <= 1e-3 and checked > 0,
            f"{checked} entries, {skipped} skipped at kinks, max rel err {worst:.3g} (tol 1e-3)")
    return res


@_timed
def theorem2_suite(seed=0, instances=100, n=5, dt=0.05):
    """Residual of forward-after-inverse is O(dt^2); the inequality chain holds."""
    res = SuiteResult("theorem2")
    rng = np.random.default_rng(seed)
    U = Field(rng.standard_normal((1, 32, 32)))
    dts = np.array([0.2, 0.1, 0.05, 0.025])
    r = np.array([theory.reconstruction_residual(U, d) for d in dts])
    slope = float(np.polyfit(np.log(dts), np.log(r), 1)[0])
    res.add("residual-slope", abs(slope - 2.0) <= 0.1, f"log-log slope {slope:.4f} (want 2.0 +/- 0.1)")
    violations, min_margin = 0, np.inf
    for _ in range(instances):
        size = int(rng.integers(8, 33))
        m_hat = Field((rng.random((1, size, size)) < rng.uniform(0.1, 0.6)).astype(float))
        m = theory.forward_diffusion(m_hat, n, dt)
        u = Field(m.values + rng.uniform(0.0, 0.5) * rng.standard_normal(m.shape))
        lhs, rhs = theory.theorem2_gap(u, m, m_hat, n, dt)
        violations += lhs > rhs + 1e-9 * max(1.0, rhs)
        min_margin = min(min_margin, rhs - lhs)
    res.add("inequality", violations == 0, f"{instances} instances, violations={violations}, min(rhs-lhs)={min_margin:.4g}")
    return res


def _l_shape(size=40, thick=12, margin=6):
    f = np.zeros((size, size), dtype=np.int64)
    f[margin:size - margin, margin:margin + thick] = 1
    f[size - margin - thick:size - margin, margin:size - margin] = 1
    return f


def _disc(size=48, radius=12.0):
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2
    return ((yy - c) ** 2 + (xx - c) ** 2 <= radius**2).astype(np.int64)


@_timed
def convex_oracle_suite(seed=0, masks=100, radii=(2, 3, 5)):
    """Fast concave-set detection equals the per-pixel oracle; one curve step behaves on fixtures."""
    res = SuiteResult("convex-oracle")
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(masks):
        h, w = (int(v) for v in rng.integers(4, 65, size=2))
        kind = rng.integers(3)
        if kind == 0:
            f = (rng.random((h, w)) < rng.uniform(0.1, 0.9)).astype(np.int64)
        else:
            # blocky masks: union of random rectangles
            f = np.zeros((h, w), dtype=np.int64)
            for _ in range(int(rng.integers(1, 5))):
                r0, c0 = rng.integers(0, h), rng.integers(0, w)
                f[r0:r0 + rng.integers(1, h + 1), c0:c0 + rng.integers(1, w + 1)] = 1
        fast = cm.concave_array(f, radii)
        mismatches += not np.array_equal(fast, concave_brute_force(f, radii))
    res.add("exact-match", mismatches == 0, f"{masks} masks up to 64x64, K={list(radii)}: mismatches={mismatches}")

    cfg = cm.CurveMotionConfig(0.1, 1, 3, (5, 10, 15))
    lshape = _l_shape()
    score = np.where(lshape > 0, 1.0, -1.0)
    for _ in range(3):
        p = np.pad(score, 1, mode="edge")
        score = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] + 4 * score) / 8
    U = Field(score)
    before = int(concave_brute_force((U.values[0] > 0).astype(int), cfg.radii).sum())
    after_field = cm.curve_motion_iel_step(U, 0, cfg)
    after = int(concave_brute_force((after_field.values[0] > 0).astype(int), cfg.radii).sum())
    res.add("l-shape-step", after >= before and before > 0, f"violations {before} -> {after}")
    D = Field(np.where(_disc() > 0, 1.0, -1.0))
    out = cm.curve_motion_iel_step(D, 0, cfg)
    res.add("disc-identity", out == D, "convex disc unchanged" if out == D else "convex disc changed")
    return res


SUITE_FUNCS = {
    "energy": energy_suite,
    "merge": merge_suite,
    "adjoint": adjoint_suite,
    "gradcheck": gradcheck_suite,
    "theorem2": theorem2_suite,
    "convex-oracle": convex_oracle_suite,
}


def run_suite(name, **kwargs) -> SuiteResult:
    if name not in SUITE_FUNCS:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    return SUITE_FUNCS[name](**kwargs)
