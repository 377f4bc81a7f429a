import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from hep2cls import data as D
from hep2cls import features as F
from hep2cls.errors import LoadError, ModelFormatError
from hep2cls.frameworks import FrameworkSpec, apply_framework, fit_framework
from hep2cls.labels import ClassLabel
from hep2cls.svm import TrainGrid


def write_pair(root, rid, img, mask):
    Image.fromarray(img).save(root / ("%s.png" % rid))
    Image.fromarray(mask).save(root / ("%s_mask.png" % rid))


def write_gt(root, rows):
    with open(root / "gt.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "intensity"])
        w.writerows(rows)


# -- loader -----------------------------------------------------------------


def test_empty_directory(tmp_path):
    man = D.load_dataset(tmp_path)
    assert len(man) == 0 and all(v == 0 for v in man.counts.values())


def test_single_record_and_bit_depths(tmp_path):
    img16 = np.zeros((8, 9), np.uint16)
    img16[2, 3] = 65535
    img16[4, 4] = 32768
    mask = np.zeros((8, 9), np.uint8)
    mask[1:6, 1:6] = 255
    write_pair(tmp_path, "a1", img16, mask)
    img8 = np.full((5, 5), 51, np.uint8)
    write_pair(tmp_path, "b2", img8, np.full((5, 5), 255, np.uint8))
    write_gt(tmp_path, [["a1", "Homogeneous", "positive"], ["b2", "NuMem", "intermediate"]])
    man = D.load_dataset(tmp_path)
    assert len(man) == 2 and man.skipped == ()
    a, b = man.records
    assert a.id == "a1" and a.label == ClassLabel.H and a.image[2, 3] == 1.0
    assert a.image[4, 4] == pytest.approx(32768 / 65535)
    assert a.mask.sum() == 25 and a.mask.dtype == bool
    assert b.label == ClassLabel.NM and b.tag == "intermediate" and b.image[0, 0] == pytest.approx(0.2)
    assert man.counts[(ClassLabel.H, "positive")] == 1 and man.class_counts()[ClassLabel.NM] == 1


def test_bad_records_are_skipped_with_reason(tmp_path):
    ok = np.full((6, 6), 100, np.uint8)
    m = np.full((6, 6), 255, np.uint8)
    write_pair(tmp_path, "good", ok, m)
    Image.fromarray(ok).save(tmp_path / "nomask.png")
    write_pair(tmp_path, "shape", ok, np.full((5, 6), 255, np.uint8))
    write_pair(tmp_path, "blank", ok, np.zeros((6, 6), np.uint8))
    write_pair(tmp_path, "weird", ok, m)
    write_pair(tmp_path, "tag", ok, m)
    write_gt(tmp_path, [["good", "G", "positive"], ["nomask", "H", "positive"], ["shape", "S", "positive"],
                        ["blank", "N", "positive"], ["weird", "Mitotic", "positive"], ["tag", "C", "dim"]])
    man = D.load_dataset(tmp_path)
    assert [r.id for r in man.records] == ["good"]
    reasons = dict(man.skipped)
    assert set(reasons) == {"nomask", "shape", "blank", "weird", "tag"}
    assert "missing mask" in reasons["nomask"] and "shape" in reasons["shape"]
    assert "foreground" in reasons["blank"] and "Mitotic" in reasons["weird"]


def test_cell_record_invariants():
    with pytest.raises(LoadError):
        D.CellRecord("x", np.zeros((3, 3)), np.ones((3, 4), bool), ClassLabel.H)
    with pytest.raises(LoadError):
        D.CellRecord("x", np.zeros((3, 3)), np.zeros((3, 3), bool), ClassLabel.H)


def test_write_then_load_round_trip(tmp_path):
    man = D.generate_phantoms(D.phantom_specs(2, seed=3))
    D.write_dataset(man, tmp_path)
    back = D.load_dataset(tmp_path)
    assert [r.id for r in back] == sorted(r.id for r in man)
    for r, s in zip(back, sorted(man.records, key=lambda r: r.id)):
        assert r.label == s.label and r.tag == s.tag
        assert np.array_equal(r.mask, s.mask)
        assert np.max(np.abs(r.image - s.image)) <= 0.5 / 65535 + 1e-12


# -- phantoms ---------------------------------------------------------------


def test_phantom_specs_layout():
    specs = D.phantom_specs(4, seed=1)
    assert len(specs) == 24
    for lab in ClassLabel:
        mine = [s for s in specs if s.label == lab]
        assert [s.contrast for s in mine] == ["intermediate"] * 2 + ["positive"] * 2
    assert len({s.seed for s in specs}) == 24
    assert D.phantom_specs(4, seed=1) == specs


def test_phantoms_are_seed_deterministic():
    spec = D.PhantomSpec(ClassLabel.C, seed=11)
    a, b = D.generate_phantom(spec), D.generate_phantom(spec)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    c = D.generate_phantom(D.PhantomSpec(ClassLabel.C, seed=12))
    assert not np.array_equal(a.image, c.image)


def structural_ok(cell):
    img = F.preprocess(cell.image, 1.0)

    def cs(kind):
        return F.compute_scalar(kind, img, cell.mask, 0.45)

    lab = cell.label
    if lab == ClassLabel.H:
        return cs("CC") == 1
    if lab == ClassLabel.S:
        return cs("HN") >= 3
    if lab == ClassLabel.N:
        return 2 <= cs("CC") <= 6
    if lab == ClassLabel.C:
        return 35 <= cs("CC") <= 65
    if lab == ClassLabel.NM:
        return cs("BAR") > 2 * cs("IAR")
    return cs("OAR") > cs("IAR")


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(list(ClassLabel)), st.sampled_from(["positive", "intermediate"]), st.integers(0, 2 ** 31))
def test_phantom_structural_checks(lab, contrast, seed):
    cell = D.generate_phantom(D.PhantomSpec(lab, contrast=contrast, seed=seed))
    assert cell.image.shape == (70, 70) and cell.image.min() >= 0 and cell.image.max() <= 1
    assert structural_ok(cell)


def test_intermediate_phantoms_are_dimmer():
    pos = D.generate_phantom(D.PhantomSpec(ClassLabel.H, contrast="positive", seed=2))
    dim = D.generate_phantom(D.PhantomSpec(ClassLabel.H, contrast="intermediate", seed=2))
    assert dim.image[dim.mask].mean() < 0.5 * pos.image[pos.mask].mean()


# -- features on disk -------------------------------------------------------


@pytest.fixture(scope="module")
def table():
    return D.extract_features(D.generate_phantoms(D.phantom_specs(2, seed=0)[:10]))


def test_export_features(tmp_path, table):
    assert len(table) == 10
    p = D.export_features(table, "cs", tmp_path / "cs.csv")
    rows = list(csv.reader(open(p)))
    assert len(rows) == 11 and all(len(r) == 130 for r in rows)
    assert rows[0][:2] == ["id", "label"] and rows[0][2].startswith(F.LAYOUT_IDS["cs"] + ":")
    assert [r[0] for r in rows[1:]] == sorted(r[0] for r in rows[1:])
    p2 = D.export_features(table, "combined", tmp_path / "comb.csv")
    assert all(len(r) == 179 for r in csv.reader(open(p2)))
    again = D.export_features(table, "cs", tmp_path / "cs2.csv")
    assert open(p, "rb").read() == open(again, "rb").read()
    ids, labels, X, header = D.read_features(p)
    assert X.shape == (10, 128) and list(labels) == list(table.labels)
    np.testing.assert_allclose(X, table.matrices["cs"], rtol=1e-8, atol=1e-300)


def test_export_reports_path_on_io_error(tmp_path, table):
    with pytest.raises(OSError, match="missing"):
        D.export_features(table, "cs", tmp_path / "missing" / "x.csv")


# -- model persistence ------------------------------------------------------


def gaussian_feats(seed, n_per=20):
    c0 = np.random.default_rng(7)
    centers = {c: c0.normal(0, 3, 20) for c in range(1, 7)}
    r = np.random.default_rng(seed)
    y = np.repeat(np.arange(1, 7), n_per)
    X = np.stack([centers[c] + r.normal(size=20) for c in y])
    return {"cs": X[:, :8], "texture": X[:, 4:16], "combined": X[:, :16], "scalar": X}, y


@pytest.mark.parametrize("framework,resolver", [
    ("ovo", None), ("ovr", "pairwise"), ("common-hier", "score"), ("adaboost", None), ("ruf", None),
])
def test_model_round_trip(tmp_path, framework, resolver):
    tr, y = gaussian_feats(0)
    va, yv = gaussian_feats(1, 8)
    spec = FrameworkSpec(framework, "cs", resolver, grid=TrainGrid(C=(1e3,), gamma=(0.05,)), n_trees_max=20,
                         n_rounds=8)
    m = fit_framework(spec, tr, y, va, yv)
    D.save_model(m, tmp_path / "m")
    back = D.load_model(tmp_path / "m")
    q = {k: np.random.default_rng(5).normal(0, 3, (100, v.shape[1])) for k, v in tr.items()}
    o1, f1 = apply_framework(m, q)
    o2, f2 = apply_framework(back, q)
    assert np.array_equal(f1, f2) and np.array_equal(o1.accept, o2.accept)
    np.testing.assert_allclose(o1.scores, o2.scores, rtol=0, atol=1e-12)
    assert back.kind == m.kind and back.resolver == m.resolver and back.classes == m.classes


def test_model_load_errors(tmp_path):
    tr, y = gaussian_feats(0)
    m = fit_framework(FrameworkSpec("ovo", grid=TrainGrid(C=(1e3,), gamma=(0.05,))), tr, y, tr, y)
    root = D.save_model(m, tmp_path / "m")
    man = json.loads((root / D.MANIFEST_NAME).read_text())
    (root / D.MANIFEST_NAME).write_text(json.dumps({**man, "version": 7}))
    with pytest.raises(ModelFormatError, match="version"):
        D.load_model(root)
    (root / D.MANIFEST_NAME).write_text(json.dumps(man))
    assert D.load_model(root).kind == "OneVsOne"
    blk = root / man["blocks"][0]["file"]
    blk.write_text(blk.read_text()[:40])
    with pytest.raises(ModelFormatError):
        D.load_model(root)
    with pytest.raises(ModelFormatError):
        D.load_model(tmp_path / "nowhere")
