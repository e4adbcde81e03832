import numpy as np
import pytest

from sketchmotion.field import (
    DisplacementField,
    FieldConfig,
    load_checkpoint,
    positional_features,
    save_checkpoint,
)
from sketchmotion.geometry import MotionLambdas
from sketchmotion.raster import render_video
from sketchmotion.sketch import MotionSequence

from conftest import random_sketch

TINY = FieldConfig(
    frames=4, points=8, embed_dim=16, local_hidden=(24, 24), global_hidden=(20,)
)


def tiny_field(seed=3, lambdas=None):
    return DisplacementField(TINY, lambdas or MotionLambdas(), seed=seed)


def perturb(field, rng, scale=0.15):
    for name in field.params:
        field.params[name] = field.params[name] + rng.normal(
            0, scale, field.params[name].shape
        )


def tiny_sketch(rng):
    return random_sketch(rng, n_strokes=2, canvas=(64, 64), margin=10)


# ---------------------------------------------------------------------------
# Initialization


def test_fresh_field_outputs_exact_zero(rng):
    field = tiny_field()
    out = field.forward(tiny_sketch(rng))
    assert np.abs(out.dz).max() == 0.0
    assert np.abs(out.dz_local).max() == 0.0
    assert np.abs(out.dz_global).max() == 0.0
    for T in out.matrices:
        assert np.array_equal(T, np.eye(3))


def test_fresh_field_renders_static_video(rng):
    sketch = tiny_sketch(rng)
    out = tiny_field().forward(sketch)
    video = render_video(MotionSequence(sketch, out.dz))
    for j in range(1, TINY.frames):
        assert np.array_equal(video[j], video[0])


def test_determinism_same_seed(rng):
    sketch = tiny_sketch(rng)
    a, b = tiny_field(seed=11), tiny_field(seed=11)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    assert np.array_equal(a.forward(sketch).dz, b.forward(sketch).dz)


# ---------------------------------------------------------------------------
# Positional encoding and embedding


def test_pe_first_two_channels_at_origin():
    raw = positional_features(4, 8, 4)
    assert raw[0, 0, 0] == 0.0  # sin(0)
    assert raw[0, 0, 1] == 1.0  # cos(0)


def test_pe_distinct_for_all_index_pairs_default_config():
    # exhaustive pairwise distinctness at the paper-scale grid
    cfg = FieldConfig(frames=24, points=64)
    field = DisplacementField(cfg, seed=0)
    table = field.pe_table.reshape(24 * 64, -1)
    # sort rows lexicographically; identical rows would become adjacent
    order = np.lexsort(table.T)
    adjacent = table[order]
    diffs = np.abs(np.diff(adjacent, axis=0)).max(axis=1)
    assert diffs.min() > 1e-9


def test_embed_with_zero_shared_weights_equals_pe(rng):
    sketch = tiny_sketch(rng)
    field = tiny_field()
    field.params["shared.w"] = np.zeros_like(field.params["shared.w"])
    feats = field.embed(sketch)
    assert np.array_equal(feats, np.broadcast_to(field.pe_table, feats.shape))


def test_embed_rejects_wrong_point_count(rng):
    field = tiny_field()
    with pytest.raises(ValueError):
        field.embed(random_sketch(rng, n_strokes=3, canvas=(64, 64), margin=10))


# ---------------------------------------------------------------------------
# Branch behavior


def test_local_zero_at_init_and_output_shape(rng):
    field = tiny_field()
    feats = field.embed(tiny_sketch(rng))
    dz_l = field.predict_local(feats)
    assert dz_l.shape == (4, 8, 2)
    assert np.abs(dz_l).max() == 0.0


def test_global_identity_at_init(rng):
    field = tiny_field()
    sketch = tiny_sketch(rng)
    mats, dz_g = field.predict_global(field.embed(sketch), sketch)
    assert np.array_equal(dz_g, np.zeros_like(dz_g))
    for T in mats:
        assert np.array_equal(T, np.eye(3))


def test_global_lambda_t_zero_fixes_pivot(rng):
    lam = MotionLambdas(0.0, 1e-2, 5e-2, 1e-1)
    field = tiny_field(lambdas=lam)
    sketch = tiny_sketch(rng)
    perturb(field, rng)
    mats, _ = field.predict_global(field.embed(sketch), sketch, lam)
    for T in mats:
        assert np.array_equal(T[:2, 2], [0.0, 0.0])


def test_global_branch_preserves_collinearity(rng):
    # three collinear sketch points stay collinear under the global branch
    field = tiny_field()
    perturb(field, rng, scale=0.5)
    sketch = tiny_sketch(rng)
    pts = sketch.points()
    pts[2] = 0.25 * pts[0] + 0.75 * pts[1]  # force points 0,1,2 collinear
    sketch = sketch.with_points(pts)
    _, dz_g = field.predict_global(field.embed(sketch), sketch)
    for j in range(TINY.frames):
        moved = pts + dz_g[j]
        v1, v2 = moved[1] - moved[0], moved[2] - moved[0]
        cross = v1[0] * v2[1] - v1[1] * v2[0]
        assert abs(cross) < 1e-9 * max(1.0, np.abs(moved).max() ** 2)


def test_global_branch_is_affine_rigid(rng):
    # area ratios of point triples are preserved by the global branch alone
    field = tiny_field()
    perturb(field, rng, scale=0.4)
    sketch = tiny_sketch(rng)
    pts = sketch.points()
    _, dz_g = field.predict_global(field.embed(sketch), sketch)

    def area(p, i, j, k):
        v1, v2 = p[j] - p[i], p[k] - p[i]
        return v1[0] * v2[1] - v1[1] * v2[0]

    a0 = area(pts, 0, 1, 2) / area(pts, 3, 4, 5)
    for j in range(TINY.frames):
        moved = pts + dz_g[j]
        aj = area(moved, 0, 1, 2) / area(moved, 3, 4, 5)
        assert np.isclose(aj, a0, rtol=1e-9)


def test_forward_additivity_exact(rng):
    field = tiny_field()
    perturb(field, rng)
    out = field.forward(tiny_sketch(rng))
    assert np.array_equal(out.dz, out.dz_local + out.dz_global)


def test_local_frozen_means_dz_equals_global(rng):
    field = tiny_field()
    rng2 = np.random.default_rng(0)
    for name in field.params:
        if name.startswith(("global.", "shared.")):
            field.params[name] = field.params[name] + rng2.normal(
                0, 0.2, field.params[name].shape
            )
    out = field.forward(tiny_sketch(rng))
    assert np.array_equal(out.dz_local, np.zeros_like(out.dz_local))
    assert np.array_equal(out.dz, out.dz_global)


# ---------------------------------------------------------------------------
# Gradients


def test_backward_zero_upstream_gives_zero_grads(rng):
    field = tiny_field()
    perturb(field, rng)
    field.forward(tiny_sketch(rng))
    grads = field.backward(np.zeros((4, 8, 2)))
    for bucket in grads.values():
        for g in bucket.values():
            assert np.array_equal(g, np.zeros_like(g))


def test_backward_before_forward_raises():
    with pytest.raises(RuntimeError):
        tiny_field().backward(np.zeros((4, 8, 2)))


def test_backward_upstream_shape_checked(rng):
    field = tiny_field()
    field.forward(tiny_sketch(rng))
    with pytest.raises(ValueError):
        field.backward(np.zeros((4, 8, 3)))


def test_global_branch_blind_to_zero_moment_upstream(rng):
    # upstream with zero per-frame sum and zero cross moments reaches the
    # global head as exactly nothing; the local branch still sees it
    field = tiny_field()
    perturb(field, rng)
    sketch = tiny_sketch(rng)
    field.forward(sketch)
    centered = sketch.points() - np.asarray(sketch.center())
    # rows of the constraint system: sum_i w_i = 0, sum_i w_i * (p_i - c) = 0
    A = np.vstack([np.ones(8), centered[:, 0], centered[:, 1]])
    _, _, vh = np.linalg.svd(A)
    w_null = vh[-1]  # in the null space of A
    assert np.allclose(A @ w_null, 0, atol=1e-12)
    upstream = np.zeros((4, 8, 2))
    upstream[:, :, 0] = w_null
    grads = field.backward(upstream)
    for g in grads["global"].values():
        assert np.abs(g).max() < 1e-12
    local_norm = sum(np.abs(g).sum() for g in grads["local"].values())
    assert local_norm > 0


def test_full_parameter_gradcheck(rng):
    field = tiny_field()
    perturb(field, rng)
    sketch = tiny_sketch(rng)
    upstream = rng.standard_normal((4, 8, 2))

    def loss():
        return float(np.sum(field.forward(sketch).dz * upstream))

    field.forward(sketch)
    grads = field.backward(upstream)
    flat = {}
    for bucket in grads.values():
        flat.update(bucket)
    h = 1e-6
    for name, p in field.params.items():
        g = flat[name]
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            lp = loss()
            p[i] = old - h
            lm = loss()
            p[i] = old
            fd = (lp - lm) / (2 * h)
            if max(abs(fd), abs(g[i])) > 1e-7:
                rel = abs(fd - g[i]) / max(abs(fd), abs(g[i]))
                assert rel < 1e-4, f"{name}[{i}]: fd={fd} analytic={g[i]}"


def test_shared_gradients_accumulate_both_branches(rng):
    field = tiny_field()
    perturb(field, rng)
    sketch = tiny_sketch(rng)
    upstream = rng.standard_normal((4, 8, 2))
    field.forward(sketch)
    g_both = field.backward(upstream)["shared"]["shared.w"].copy()

    # freeze local output layer at zero: local contribution to shared dies
    frozen = tiny_field()
    for name in field.params:
        frozen.params[name] = field.params[name].copy()
    last = frozen.n_local - 1
    frozen.params[f"local.w{last}"] = np.zeros_like(frozen.params[f"local.w{last}"])
    frozen.params[f"local.b{last}"] = np.zeros_like(frozen.params[f"local.b{last}"])
    frozen.forward(sketch)
    g_global_only = frozen.backward(upstream)["shared"]["shared.w"]
    assert not np.allclose(g_both, g_global_only)


def test_learned_pe_table_receives_gradient(rng):
    cfg = FieldConfig(
        frames=3, points=8, embed_dim=8, local_hidden=(12,), global_hidden=(10,),
        pe_learned=True,
    )
    field = DisplacementField(cfg, seed=2)
    perturb(field, rng, scale=0.1)
    sketch = tiny_sketch(rng)
    upstream = rng.standard_normal((3, 8, 2))
    field.forward(sketch)
    grads = field.backward(upstream)
    assert "pe.table" in grads["shared"]
    g = grads["shared"]["pe.table"]
    assert np.abs(g).max() > 0

    # spot-check against finite differences
    h = 1e-6
    p = field.params["pe.table"]

    def loss():
        return float(np.sum(field.forward(sketch).dz * upstream))

    for idx in [(0, 0, 0), (2, 7, 5), (1, 3, 2)]:
        old = p[idx]
        p[idx] = old + h
        lp = loss()
        p[idx] = old - h
        lm = loss()
        p[idx] = old
        fd = (lp - lm) / (2 * h)
        assert np.isclose(fd, g[idx], rtol=1e-4, atol=1e-9)


# ---------------------------------------------------------------------------
# Checkpointing


def test_checkpoint_roundtrip(tmp_path, rng):
    field = tiny_field(seed=9)
    perturb(field, rng)
    sketch = tiny_sketch(rng)
    before = field.forward(sketch).dz
    path = str(tmp_path / "field.skmf")
    save_checkpoint(field, path)
    loaded = load_checkpoint(path)
    after = loaded.forward(sketch).dz
    assert loaded.config == field.config
    assert loaded.lambdas == field.lambdas
    assert np.abs(after - before).max() < 1e-5  # float32 storage


def test_checkpoint_magic_and_reject(tmp_path):
    path = tmp_path / "bogus.skmf"
    path.write_bytes(b"NOTSKMF" + b"\x00" * 64)
    with pytest.raises(ValueError, match="SKMF1"):
        load_checkpoint(str(path))


def test_checkpoint_magic_prefix(tmp_path):
    field = tiny_field()
    path = str(tmp_path / "field.skmf")
    save_checkpoint(field, path)
    with open(path, "rb") as f:
        assert f.read(5) == b"SKMF1"
