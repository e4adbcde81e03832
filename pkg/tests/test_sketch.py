import numpy as np
import pytest

from sketchmotion.sketch import MotionSequence, Sketch, Stroke, materialize_frame

from conftest import random_sketch


def test_stroke_requires_four_points():
    with pytest.raises(ValueError):
        Stroke(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        Stroke(np.zeros((5, 2)))


def test_stroke_rejects_nonfinite_and_bad_width():
    pts = np.zeros((4, 2))
    pts[1, 0] = np.nan
    with pytest.raises(ValueError):
        Stroke(pts)
    with pytest.raises(ValueError):
        Stroke(np.zeros((4, 2)), width=0.0)
    with pytest.raises(ValueError):
        Stroke(np.zeros((4, 2)), width=-1.0)


def test_sketch_point_count_and_order(rng):
    sketch = random_sketch(rng, n_strokes=3)
    assert sketch.point_count == 12
    pts = sketch.points()
    for i, stroke in enumerate(sketch.strokes):
        assert np.array_equal(pts[4 * i : 4 * i + 4], stroke.points)


def test_materialize_zero_displacement_equals_base(rng):
    sketch = random_sketch(rng)
    seq = MotionSequence.static(sketch, frames=5)
    for j in range(5):
        frame = materialize_frame(seq, j)
        assert np.array_equal(frame.points(), sketch.points())
        assert frame.canvas == sketch.canvas
        assert len(frame.strokes) == len(sketch.strokes)


def test_materialize_uniform_shift(rng):
    sketch = random_sketch(rng)
    dz = np.zeros((3, sketch.point_count, 2))
    dz[:, :, 0] = 5.0
    seq = MotionSequence(sketch, dz)
    frame = seq.materialize_frame(1)
    assert np.allclose(frame.points(), sketch.points() + [5.0, 0.0])


def test_materialize_random_against_elementwise_sum(rng):
    # oracle: plain per-element addition, done with Python loops
    sketch = random_sketch(rng, n_strokes=2)
    dz = rng.normal(0, 3, size=(4, sketch.point_count, 2))
    seq = MotionSequence(sketch, dz)
    base = sketch.points()
    for j in range(4):
        got = seq.frame_points(j)
        for i in range(sketch.point_count):
            for c in range(2):
                assert got[i, c] == base[i, c] + dz[j, i, c]


def test_materialize_preserves_stroke_structure(rng):
    sketch = random_sketch(rng, n_strokes=5)
    dz = rng.normal(0, 1, size=(2, sketch.point_count, 2))
    seq = MotionSequence(sketch, dz)
    frame = seq.materialize_frame(0)
    assert frame.stroke_count == sketch.stroke_count
    assert [s.width for s in frame.strokes] == [s.width for s in sketch.strokes]


def test_frame_index_out_of_range(rng):
    seq = MotionSequence.static(random_sketch(rng), frames=3)
    with pytest.raises(IndexError):
        seq.materialize_frame(3)
    with pytest.raises(IndexError):
        seq.frame_points(-1)


def test_displacement_shape_validation(rng):
    sketch = random_sketch(rng)
    with pytest.raises(ValueError):
        MotionSequence(sketch, np.zeros((2, sketch.point_count + 1, 2)))
    bad = np.zeros((2, sketch.point_count, 2))
    bad[0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        MotionSequence(sketch, bad)


def test_with_points_roundtrip(rng):
    sketch = random_sketch(rng)
    moved = sketch.with_points(sketch.points() + 1.0)
    assert np.allclose(moved.points(), sketch.points() + 1.0)
    assert moved.canvas == sketch.canvas
