import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchmotion.sketch import Sketch, Stroke
from sketchmotion.svg import EmptySketchError, SvgParseError, parse_svg, write_svg

from conftest import random_sketch


def wrap(paths: str, size: int = 256) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">'
        f"{paths}</svg>"
    )


def test_cubic_direct_transcription():
    sketch = parse_svg(wrap('<path d="M 0 0 C 10 0 20 10 30 10"/>'))
    assert sketch.stroke_count == 1
    expected = [(0, 0), (10, 0), (20, 10), (30, 10)]
    assert np.allclose(sketch.strokes[0].points, expected)


def test_line_degree_elevation():
    sketch = parse_svg(wrap('<path d="M 0 0 L 30 0"/>'))
    assert sketch.stroke_count == 1
    expected = [(0, 0), (10, 0), (20, 0), (30, 0)]
    assert np.allclose(sketch.strokes[0].points, expected)


def test_sixteen_stroke_sketch_has_64_points(rng):
    sketch = random_sketch(rng, n_strokes=16)
    parsed = parse_svg(write_svg(sketch))
    assert parsed.point_count == 64


def test_relative_commands():
    sketch = parse_svg(wrap('<path d="m 10 10 c 1 0 2 1 3 1 l 7 0"/>'))
    assert sketch.stroke_count == 2
    assert np.allclose(sketch.strokes[0].points, [(10, 10), (11, 10), (12, 11), (13, 11)])
    assert np.allclose(sketch.strokes[1].points[3], (20, 11))


def test_implicit_lineto_after_moveto():
    sketch = parse_svg(wrap('<path d="M 0 0 9 0 9 9"/>'))
    assert sketch.stroke_count == 2
    assert np.allclose(sketch.strokes[1].points[3], (9, 9))


def test_close_command_emits_closing_stroke():
    sketch = parse_svg(wrap('<path d="M 0 0 L 10 0 L 10 10 Z"/>'))
    assert sketch.stroke_count == 3
    assert np.allclose(sketch.strokes[2].points[0], (10, 10))
    assert np.allclose(sketch.strokes[2].points[3], (0, 0))


def test_stroke_width_attribute_and_default():
    sketch = parse_svg(
        wrap('<path d="M 0 0 L 1 1" stroke-width="2.5"/><path d="M 2 2 L 3 3"/>')
    )
    assert sketch.strokes[0].width == 2.5
    assert sketch.strokes[1].width == 1.5


def test_viewbox_maps_into_canvas():
    text = (
        '<svg xmlns="http://www.w3.org/2000/svg" width="256" height="256" '
        'viewBox="0 0 128 128"><path d="M 0 0 L 64 64"/></svg>'
    )
    sketch = parse_svg(text)
    assert sketch.canvas == (256, 256)
    assert np.allclose(sketch.strokes[0].points[3], (128, 128))


def test_unsupported_command_names_command_and_offset():
    doc = wrap('<path d="M 0 0 A 5 5 0 0 1 10 10"/>')
    with pytest.raises(SvgParseError) as exc:
        parse_svg(doc)
    message = str(exc.value)
    assert "'A'" in message
    assert "byte" in message
    offset = int(message.rsplit("byte", 1)[1].strip())
    assert doc[offset] == "A"


def test_quadratic_rejected():
    with pytest.raises(SvgParseError, match="'Q'"):
        parse_svg(wrap('<path d="M 0 0 Q 5 5 10 0"/>'))


def test_empty_document_raises_empty_sketch_error():
    with pytest.raises(EmptySketchError):
        parse_svg('<svg xmlns="http://www.w3.org/2000/svg" width="8" height="8"/>')


def test_truncated_coordinates_rejected():
    with pytest.raises(SvgParseError, match="expected"):
        parse_svg(wrap('<path d="M 0 0 C 1 2 3"/>'))


def test_write_empty_sketch_has_no_paths():
    doc = write_svg(Sketch((), (256, 256)))
    assert "<path" not in doc
    assert 'viewBox="0 0 256 256"' in doc


def test_write_single_stroke_single_c_path(rng):
    sketch = random_sketch(rng, n_strokes=1)
    doc = write_svg(sketch)
    assert doc.count("<path") == 1
    assert " C " in doc or "C " in doc


def test_roundtrip_16_strokes_under_1e6(rng):
    sketch = random_sketch(rng, n_strokes=16)
    parsed = parse_svg(write_svg(sketch))
    err = np.abs(parsed.points() - sketch.points()).max()
    assert err < 1e-6
    assert parsed.canvas == sketch.canvas
    assert np.allclose(parsed.widths, sketch.widths)


def test_roundtrip_idempotent_after_one_cycle(rng):
    sketch = random_sketch(rng, n_strokes=4)
    once = write_svg(parse_svg(write_svg(sketch)))
    twice = write_svg(parse_svg(once))
    assert once == twice


@settings(max_examples=40, deadline=None)
@given(
    data=st.lists(
        st.lists(
            st.floats(min_value=-500, max_value=500, allow_nan=False),
            min_size=8,
            max_size=8,
        ),
        min_size=1,
        max_size=6,
    ),
    width=st.floats(min_value=0.1, max_value=9.0, allow_nan=False),
)
def test_roundtrip_property(data, width):
    strokes = tuple(
        Stroke(np.array(row, dtype=float).reshape(4, 2), width) for row in data
    )
    sketch = Sketch(strokes, (256, 256))
    parsed = parse_svg(write_svg(sketch))
    assert parsed.stroke_count == sketch.stroke_count
    assert np.abs(parsed.points() - sketch.points()).max() < 1e-6
