import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dune_detect.dataset import (
    Annotation,
    DatasetError,
    LabeledImage,
    LabelParseError,
    NormBox,
    format_label_file,
    load_descriptor,
    parse_label_file,
    read_dataset,
    split_dataset,
    write_dataset,
)


def test_parse_empty_is_negative():
    assert parse_label_file("", 3) == []
    assert parse_label_file("\n\n", 3) == []


def test_parse_single_line():
    assert parse_label_file("0 0.5 0.5 0.2 0.1", 3) == [Annotation(0, NormBox(0.5, 0.5, 0.2, 0.1))]


def test_parse_right_edge_overflow():
    with pytest.raises(LabelParseError, match=r"line 1: box right edge 1\.1 > 1"):
        parse_label_file("2 0.9 0.9 0.4 0.1", 3)


@pytest.mark.parametrize("text, fragment", [
    ("0 0.5 0.5 0.2", "expected 5 tokens"),
    ("0 0.5 x 0.2 0.1", "non-numeric"),
    ("a 0.5 0.5 0.2 0.1", "not an integer"),
    ("3 0.5 0.5 0.2 0.1", "class id 3"),
    ("0 1.5 0.5 0.2 0.1", "outside [0, 1]"),
    ("0 0.5 0.5 0 0.1", "zero width"),
])
def test_parse_errors_carry_line_numbers(text, fragment):
    with pytest.raises(LabelParseError) as exc:
        parse_label_file("0 0.5 0.5 0.1 0.1\n" + text, 3)
    assert exc.value.lineno == 2
    assert fragment in str(exc.value)


# boxes on the 1e-6 grid, inside the image
coord = st.integers(1, 10**6 - 1).map(lambda k: k / 1e6)


@st.composite
def annotations(draw):
    cx, cy = draw(coord), draw(coord)
    w = draw(st.integers(1, int(2e6 * min(cx, 1 - cx)))) / 1e6
    h = draw(st.integers(1, int(2e6 * min(cy, 1 - cy)))) / 1e6
    return Annotation(draw(st.integers(0, 2)), NormBox(cx, cy, w, h))


@given(st.lists(annotations(), max_size=8))
def test_label_round_trip(anns):
    assert parse_label_file(format_label_file(anns), 3) == anns


def test_split_sizes():
    assert split_dataset([f"i{k}" for k in range(200)]).sizes() == (120, 40, 40)
    assert split_dataset([f"i{k}" for k in range(300)]).sizes() == (180, 60, 60)
    assert split_dataset([f"i{k}" for k in range(5)]).sizes() == (3, 1, 1)


def test_split_remainder_goes_train_then_val():
    assert split_dataset([str(k) for k in range(7)]).sizes() == (5, 1, 1)
    assert split_dataset([str(k) for k in range(9)]).sizes() == (6, 2, 1)


def test_split_rejects_duplicates_and_bad_ratio():
    with pytest.raises(DatasetError, match="duplicate"):
        split_dataset(["a", "b", "a"])
    with pytest.raises(DatasetError):
        split_dataset(["a", "b", "c"], (0.5, 0.2, 0.2))


@settings(max_examples=60)
@given(st.integers(3, 400), st.integers(0, 2**32 - 1))
def test_split_properties(n, seed):
    ids = [f"img{k}" for k in range(n)]
    s = split_dataset(ids, (0.6, 0.2, 0.2), seed)
    sets = [set(s.train), set(s.val), set(s.test)]
    assert sum(map(len, sets)) == n
    assert set().union(*sets) == set(ids)
    for got, r in zip(s.sizes(), (0.6, 0.2, 0.2)):
        assert abs(got - n * r) <= 1 + 1e-9
    assert s == split_dataset(ids, (0.6, 0.2, 0.2), seed)


def test_split_is_stable_across_runs():
    # frozen: PCG64 permutation is platform independent
    s = split_dataset([f"{k}" for k in range(10)], seed=42)
    assert s == split_dataset([f"{k}" for k in range(10)], seed=42)
    assert len(s.train) == 6


def _random_images(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        anns = []
        for _ in range(int(rng.integers(0, 4))):
            cx, cy = rng.uniform(0.2, 0.8, 2)
            w, h = rng.uniform(0.05, 0.3, 2)
            anns.append(Annotation(int(rng.integers(3)), NormBox(cx, cy, w, h).quantized()))
        px = rng.integers(0, 256, (int(rng.integers(8, 20)), int(rng.integers(8, 20)), 3), dtype=np.uint8)
        out.append(LabeledImage(f"im{k:02d}", px, tuple(anns)))
    return out


def test_write_single_image(tmp_path):
    img = _random_images(1, 0)[0]
    from dune_detect.dataset import DatasetSplit
    write_dataset(tmp_path, [img], DatasetSplit((img.id,), (), ()))
    files = sorted(p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*") if p.is_file())
    assert files == ["images/train/im00.png", "labels/train/im00.txt", "manifest.json"]


def test_write_read_round_trip(tmp_path):
    images = _random_images(10, 1)
    split = split_dataset([i.id for i in images], seed=3)
    manifest = write_dataset(tmp_path, images, split)
    back, back_split = read_dataset(tmp_path)
    assert back_split is not None and {k: set(v) for k, v in back_split.items()} == \
        {k: set(v) for k, v in split.items()}
    by_id = {i.id: i for i in back}
    for img in images:
        assert by_id[img.id].annotations == img.annotations
        assert np.array_equal(by_id[img.id].pixels, img.pixels)
    assert manifest["splits"] == {"train": 6, "val": 2, "test": 2}
    assert json.loads((tmp_path / "manifest.json").read_text()) == manifest


def test_negative_image_gets_empty_label(tmp_path):
    neg = LabeledImage("bg", np.zeros((4, 4, 3), np.uint8), (), "negative")
    write_dataset(tmp_path, [neg], None)
    assert (tmp_path / "labels" / "bg.txt").read_text() == ""


def test_write_rejects_collisions(tmp_path):
    img = _random_images(1, 2)[0]
    with pytest.raises(DatasetError, match="collision"):
        write_dataset(tmp_path, [img, img], None)


def test_negative_with_boxes_is_rejected():
    with pytest.raises(DatasetError):
        LabeledImage("n", np.zeros((2, 2, 3), np.uint8), (Annotation(0, NormBox(.5, .5, .1, .1)),), "negative")


def test_descriptor(tmp_path):
    assert load_descriptor(None).classes == ("plastic_bottle", "glass_bottle", "waste")
    p = tmp_path / "d.json"
    p.write_text(json.dumps({"classes": ["a", "b"], "splits": [0.8, 0.1, 0.1], "seed": 5}))
    d = load_descriptor(p)
    assert d.classes == ("a", "b") and d.splits == (0.8, 0.1, 0.1) and d.seed == 5
