"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary.
"""

import math

import numpy as np
import pytest

from convrot import tensorio
from convrot.analysis import SweepConfig, outlier_amplitude, quantized_layer_report, rotation_sweep, synth_outliers
from convrot.errors import CapacityError
from convrot.hadamard import discrepancy_summary, fwht, gram, is_hadamard, regular, signed_variant, sylvester
from convrot.pipeline import OpCounter, RotationSpec, group_rotate, int_gemm
from convrot.policy import coverage_stats, flux_layer_names, flux_policy
from convrot.quant import QuantSpec, compute_scales, dequantize, pack_int4, quantize, unpack_int4
from convrot.tensorio import DType

from _golden import FILES, GOLDEN, golden_run

RESULTS: list[str] = []


def rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}"
    RESULTS.append(line)
    print("\n" + line)
    assert ok, line


def constructed():
    mats = [sylvester(2**k) for k in range(1, 13)]
    mats += [regular(4**k) for k in range(1, 7)]
    bases = [sylvester(2), sylvester(8), sylvester(32), regular(4), regular(16), regular(64), regular(256)]
    mats += [signed_variant(bases[i % len(bases)], 100 + i) for i in range(20)]
    return mats


@pytest.fixture(scope="module")
def matrices():
    return constructed()


def test_c01_column_square_sum(matrices):
    bad = []
    for h in matrices:
        cs = h.entries.astype(np.int64).sum(axis=0)
        if int(cs @ cs) != h.order**2:
            bad.append((h.kind, h.order))
    variants_ok = all(is_hadamard(h.entries) for h in matrices if h.kind == "custom")
    report(1, not bad and variants_ok, f"sum(colsum^2) == n^2 on {len(matrices)} matrices, bad={bad}")


def test_c02_regular_structure():
    bad = []
    for k in range(1, 7):
        n = 4**k
        h = regular(n)
        sums_ok = set(h.row_sums().tolist()) == {2**k} and set(h.column_sums().tolist()) == {2**k}
        disc_ok = discrepancy_summary(h).discrepancy == math.isqrt(n)
        gram_ok = np.array_equal(gram(h.entries), n * np.eye(n, dtype=np.int64))
        if not (sums_ok and disc_ok and gram_ok):
            bad.append(n)
    report(2, not bad, f"regular 4..4096 sums +2^k, discrepancy sqrt(n), H H^T = nI; bad={bad}")


def test_c03_discrepancy_bounds(matrices):
    bad = []
    for h in matrices:
        d = discrepancy_summary(h).discrepancy
        # sqrt(n) <= d  <=>  n <= d^2, kept in integers
        if not (h.order <= d * d and d <= h.order):
            bad.append((h.kind, h.order, d))
        if h.kind == "sylvester" and d != h.order:
            bad.append((h.kind, h.order, d))
    report(3, not bad, f"sqrt(n) <= discrepancy <= n on {len(matrices)} matrices, sylvester = n; bad={bad}")


def test_c04_fwht_equivalence():
    bad = []
    for k in range(1, 13):
        n = 2**k
        x = rng(n).integers(-1000, 1001, size=(100, n))
        # float64 products are exact: |sum| <= 1000 * 4096 < 2**53
        oracle = (x.astype(np.float64) @ sylvester(n).entries.astype(np.float64)).astype(np.int64)
        if not np.array_equal(fwht(x), oracle):
            bad.append(n)
    report(4, not bad, f"fwht == x @ sylvester(n) for 100 vectors, n = 2..4096; bad={bad}")


def valid_specs(k, seed):
    specs = []
    n0 = 2
    while n0 <= k:
        specs.append(RotationSpec("sylvester", n0))
        if n0 >= 4 and (n0.bit_length() - 1) % 2 == 0:
            specs.append(RotationSpec("regular", n0))
        specs.append(RotationSpec("random_orthogonal", n0, seed=seed))
        n0 *= 2
    specs += [RotationSpec("sylvester", "global"), RotationSpec("random_orthogonal", "global", seed=seed)]
    if (k.bit_length() - 1) % 2 == 0:
        specs.append(RotationSpec("regular", "global"))
    return specs


def test_c05_rotation_invariance():
    worst, checked = 0.0, 0
    for s in range(50):
        r = rng(500 + s)
        k = (16, 64, 256, 1024)[s % 4]
        m, n = int(r.integers(1, 33)), int(r.integers(1, 33))
        x, w = r.standard_normal((m, k)), r.standard_normal((n, k))
        y = x @ w.T
        for spec in valid_specs(k, s):
            yr = group_rotate(x, spec) @ group_rotate(w, spec).T
            worst = max(worst, np.linalg.norm(yr - y) / np.linalg.norm(y))
            checked += 1
    report(5, worst <= 1e-10, f"{checked} rotated products, worst relative Frobenius error {worst:.3e} <= 1e-10")


def test_c06_row_outlier_dichotomy():
    c, bad = 3.5, []
    for n0 in (4, 16, 64, 256, 1024):
        x = np.full((4, n0), c)
        reg = outlier_amplitude(group_rotate(x, RotationSpec("regular", n0)))
        syl = outlier_amplitude(group_rotate(x, RotationSpec("sylvester", n0)))
        if not (math.isclose(reg, c, rel_tol=1e-9) and math.isclose(syl, c * math.sqrt(n0), rel_tol=1e-9)):
            bad.append((n0, reg, syl))
    x = synth_outliers(64, 1024, "rowwise", 100, 0.05, 0)
    syl_row, reg_row = rotation_sweep(x, SweepConfig(("sylvester", "regular"), (1024,))).rows
    direction = reg_row.reduction_pct < 0 < syl_row.reduction_pct
    report(
        6,
        not bad and direction,
        f"constant rows: regular c, sylvester c*sqrt(N0), bad={bad}; rowwise N0=1024 "
        f"regular {reg_row.reduction_pct:+.1f}% vs sylvester {syl_row.reduction_pct:+.1f}%",
    )


def test_c07_quantizer_contracts():
    grid_ok = True
    for bits in (4, 8):
        spec = QuantSpec(bits)
        for s in range(20):
            r = rng(700 + s)
            scales = 2.0 ** r.integers(-8, 8, size=16)
            codes = r.integers(-spec.qmax, spec.qmax + 1, size=(16, 32))
            codes[:, 0] = spec.qmax
            x = codes * scales[:, None]
            q = quantize(x, compute_scales(x, spec), spec)
            grid_ok &= np.array_equal(q.codes, codes) and np.array_equal(dequantize(q), x)

    bound_ok, worst = True, 0.0
    for bits in (4, 8):
        spec = QuantSpec(bits)
        x = rng(77 + bits).standard_normal((1000, 1000)) * rng(88).uniform(0.01, 100, size=(1000, 1))
        q = quantize(x, compute_scales(x, spec), spec)
        ratio = np.abs(x - dequantize(q)) / q.scales[:, None]
        worst = max(worst, float(ratio.max()))
        bound_ok &= bool(np.all(ratio <= 0.5))

    r = rng(99)
    pack_ok = True
    for _ in range(10_000):
        v = r.integers(-8, 8, size=int(r.integers(0, 65)))
        pack_ok &= np.array_equal(unpack_int4(pack_int4(v), v.size), v)
    report(
        7,
        grid_ok and bound_ok and pack_ok,
        f"grid exact {grid_ok}; 2x10^6 samples max |err|/scale {worst:.6f} <= 0.5; 10^4 int4 pack round trips {pack_ok}",
    )


def test_c08_int_gemm_exact():
    bad = []
    for s in range(100):
        r = rng(800 + s)
        bits = (4, 8)[s % 2]
        q = QuantSpec(bits).qmax
        m, k, n = (int(r.integers(1, hi + 1)) for hi in (64, 512, 64))
        if s == 0:
            m, k, n = 64, 512, 64
        a = r.integers(-q, q + 1, size=(m, k), dtype=np.int8)
        b = r.integers(-q, q + 1, size=(n, k), dtype=np.int8)
        # |acc| <= 127 * 127 * 512 < 2**53, so the float64 product is exact
        oracle = a.astype(np.float64) @ b.astype(np.float64).T
        got = int_gemm(a, b, bits, bits)
        if got.dtype != np.int32 or not np.array_equal(got.astype(np.float64), oracle):
            bad.append(s)
    try:
        int_gemm(np.ones((1, 200_000), np.int8), np.ones((1, 200_000), np.int8), 8, 8)
        rejected = False
    except CapacityError:
        rejected = True
    report(8, not bad and rejected, f"100 int4/int8 GEMMs exact, bad={bad}; int8 K=200000 rejected {rejected}")


def test_c09_end_to_end_sqnr():
    wins, monotone, lines = 0, 0, []
    for s in range(10):
        x = synth_outliers(64, 1024, "colwise", 50, 0.01, s)
        w = synth_outliers(64, 1024, "gaussian", 1, 0.01, 1000 + s)

        def sqnr(kind, bits):
            rot = RotationSpec(kind, 256)
            rep, _ = quantized_layer_report(x, w, None, rot, QuantSpec(bits), QuantSpec(bits))
            return rep.sqnr_db

        plain, rotated, w8 = sqnr("none", 4), sqnr("regular", 4), sqnr("regular", 8)
        wins += rotated > plain
        monotone += w8 >= rotated
        lines.append(f"{plain:.2f}/{rotated:.2f}/{w8:.2f}")
    report(
        9,
        wins >= 9 and monotone == 10,
        f"W4A4 regular beats none in {wins}/10, W8A8 >= W4A4 in {monotone}/10 (dB none/regular/W8A8: {' '.join(lines)})",
    )


FAMILIES = {
    "transformer_blocks_7_attn_to_out_0": "W8A8",
    "single_transformer_blocks_21_attn_to_v": "W8A8",
    "single_transformer_blocks_37_proj_out": "W8A8",
    "transformer_blocks_18_ff_context_net_2": "W8A8",
    "transformer_blocks_18_ff_net_2": "W8A8",
    "transformer_blocks_17_ff_net_2": "W4A4",
    "single_transformer_blocks_36_proj_out": "W4A4",
    "single_transformer_blocks_21_attn_to_q": "W4A4",
    "transformer_blocks_0_attn_to_q": "W4A4",
}


def test_c10_policy_conformance():
    policy = flux_policy()
    wrong = [n for n, label in FAMILIES.items() if policy.resolve(n).label != label]
    cov = coverage_stats(flux_layer_names(), policy)
    frac = cov.non_default_fraction
    in_band = 0.15 <= frac <= 0.25
    report(
        10,
        not wrong and in_band,
        f"family resolution wrong={wrong}; non-default fraction "
        f"{cov.total - cov.default_count}/{cov.total} = {frac:.4f} (required [0.15, 0.25])",
    )


def test_c11_linear_complexity():
    m, counts, global_counts = 8, {}, {}
    for k in (256, 512, 1024, 2048):
        x = rng(k).standard_normal((m, k))
        c, g = OpCounter(), OpCounter()
        group_rotate(x, RotationSpec("regular", 256), c)
        group_rotate(x, RotationSpec("sylvester", "global"), g)
        counts[k], global_counts[k] = c.multiply_adds, g.multiply_adds
    linear = all(counts[k] == m * k * 256 for k in counts)
    quadratic = all(global_counts[k] == m * k * k for k in global_counts)
    report(
        11,
        linear and quadratic,
        f"grouped counts {list(counts.values())} == M*K*256; global counts {list(global_counts.values())} == M*K^2",
    )


def test_c12_serialization(tmp_path, monkeypatch):
    r = rng(12)
    arrays = {
        DType.F32: r.standard_normal((5, 7)).astype(np.float32),
        DType.F64: r.standard_normal((3, 4, 2)),
        DType.I8: r.integers(-128, 128, size=(6, 9), dtype=np.int8),
        DType.I4: r.integers(-8, 8, size=(4, 5), dtype=np.int8),
    }
    io_ok = True
    for dtype, a in arrays.items():
        buf = tensorio.encode(a, dtype)
        t = tensorio.decode(buf)
        io_ok &= t.dtype == dtype and np.array_equal(t.data, a) and tensorio.encode(t.data, dtype) == buf

    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1767225600")
    runs = [golden_run(t, monkeypatch) for t in ("1", "1", "4")]
    stable = runs[0] == runs[1] == runs[2]
    golden = all(runs[0][f] == (GOLDEN / f).read_bytes() for f in FILES)
    report(12, io_ok and stable and golden, f"tensorio byte-exact {io_ok}; CLI runs identical {stable}; match golden {golden}")
