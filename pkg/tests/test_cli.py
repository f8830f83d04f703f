import json

import numpy as np
import pytest

from binfisher import io
from binfisher.bitdesc import FeatureSet
from binfisher.cli import (EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION,
                           gradient_check, main)
from binfisher.bmm import BmmModel

from conftest import planted_two_clusters, random_features


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main(["synth", "--out", str(out), "--classes", "3", "--refs", "4", "--queries", "2",
                 "--T", "60", "--D", "32", "--distractors", "4", "--seed", "1"]) == EXIT_OK
    return out


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_config_printed(capsys, dataset, tmp_path):
    code, out, _ = run(capsys, "train", "--manifest", dataset / "manifest.json", "-N", 3,
                       "--max-iters", 5, "-o", tmp_path / "m.json")
    assert code == EXIT_OK
    first = out.splitlines()[0]
    assert first.startswith("# config ")
    cfg = json.loads(first[len("# config "):])
    assert cfg["subcommand"] == "train" and cfg["components"] == 3 and cfg["max_iters"] == 5


def test_train_deterministic(capsys, dataset, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run(capsys, "train", "--manifest", dataset / "manifest.json", "-N", 4,
                   "--seed", 7, "-o", p)[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_train_planted_recovery(capsys, tmp_path):
    f = tmp_path / "planted.bfv"
    io.write_features(f, planted_two_clusters(seed=0))
    assert run(capsys, "train", "--features", f, "-N", 2, "-o", tmp_path / "m.json")[0] == EXIT_OK
    m = io.load_model(tmp_path / "m.json")
    centers = np.sort(m.mu.mean(axis=1))
    assert centers[0] < 0.1 and centers[1] > 0.9


def test_train_n_greater_than_t(capsys, tmp_path, rng):
    f = tmp_path / "few.bfv"
    io.write_features(f, random_features(rng, 3, 8))
    code, _, err = run(capsys, "train", "--features", f, "-N", 5, "-o", tmp_path / "m.json")
    assert code == EXIT_VALIDATION and "error:" in err
    assert not (tmp_path / "m.json").exists()


def test_exit_codes(capsys, tmp_path):
    assert run(capsys, "train", "--features", tmp_path / "missing.bfv", "-o", tmp_path / "m")[0] == EXIT_IO
    (tmp_path / "junk.bfv").write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
    assert run(capsys, "train", "--features", tmp_path / "junk.bfv", "-o", tmp_path / "m")[0] == EXIT_IO
    assert run(capsys, "train", "--features", tmp_path / "junk.bfv", "-N", 0,
               "-o", tmp_path / "m")[0] == EXIT_VALIDATION
    with pytest.raises(SystemExit) as e:
        main(["encode", "--norm", "l1", "-o", "x"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["nosuchcommand"])
    assert e.value.code == EXIT_USAGE
    assert len({EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC}) == 5


def test_full_pipeline(capsys, dataset, tmp_path):
    man = dataset / "manifest.json"
    model = tmp_path / "m.json"
    assert run(capsys, "train", "--manifest", man, "-N", 4, "-o", model)[0] == EXIT_OK
    vecs = tmp_path / "v.bvv"
    assert run(capsys, "encode", "--manifest", man, "--model", model, "--norm", "l2",
               "-o", vecs)[0] == EXIT_OK
    idx = io.load_vectors(vecs)
    assert idx.norm_state == "l2" and idx.dim == 4 * 32
    np.testing.assert_allclose(np.linalg.norm(idx.vectors, axis=1), 1, atol=1e-12)
    # same flags -> identical bytes
    again = tmp_path / "v2.bvv"
    run(capsys, "encode", "--manifest", man, "--model", model, "--norm", "l2", "-o", again)
    assert again.read_bytes() == vecs.read_bytes()

    db = tmp_path / "db.bvv"
    assert run(capsys, "index", "--vectors", vecs, "--manifest", man, "-o", db)[0] == EXIT_OK
    assert len(io.load_vectors(db)) == 3 * 4 + 4
    code, out, _ = run(capsys, "query", "--index", db, "--vectors", vecs, "--id", "c00_qry000", "--top", 3)
    assert code == EXIT_OK and out.count("\n") >= 4

    recs = tmp_path / "r.jsonl"
    code, out, _ = run(capsys, "eval", "--manifest", man, "--vectors", vecs, "--records", recs)
    assert code == EXIT_OK and "MAP" in out
    lines = [json.loads(s) for s in recs.read_text().splitlines()]
    assert sum("query" in r for r in lines) == 6 and "map" in lines[-1]


def test_encode_bits_and_approx(capsys, dataset, tmp_path):
    man = dataset / "manifest.json"
    model = tmp_path / "m.json"
    run(capsys, "train", "--manifest", man, "-N", 3, "-o", model)
    out = tmp_path / "v.bvv"
    assert run(capsys, "encode", "--manifest", man, "--model", model, "--bits", 16,
               "--approx", "--norm", "power-l2", "-o", out)[0] == EXIT_OK
    idx = io.load_vectors(out)
    assert idx.dim == 3 * 16 and idx.norm_state == "power_l2"
    assert run(capsys, "encode", "--manifest", man, "--model", model, "--bits", 64,
               "-o", out)[0] == EXIT_VALIDATION


def test_encode_approx_on_peaked_model(capsys, tmp_path):
    rng = np.random.default_rng(4)
    pattern = rng.integers(0, 2, size=(4, 48))
    m = BmmModel(np.full(4, 0.25), np.where(pattern == 1, 0.99, 0.01))
    io.save_model(tmp_path / "m.json", m)
    bits, _ = m.sample(300, rng)
    io.write_features(tmp_path / "x.bfv", FeatureSet.from_bits(bits))
    outs = {}
    for flag in ([], ["--approx"]):
        p = tmp_path / f"v{len(flag)}.bvv"
        assert run(capsys, "encode", "--features", tmp_path / "x.bfv", "--model", tmp_path / "m.json",
                   "--norm", "none", *flag, "-o", p)[0] == EXIT_OK
        outs[len(flag)] = io.load_vectors(p).vectors[0]
    assert np.linalg.norm(outs[1] - outs[0]) / np.linalg.norm(outs[0]) <= 1e-3


def test_codebook_and_bow(capsys, dataset, tmp_path):
    man = dataset / "manifest.json"
    cb = tmp_path / "cb.bfc"
    assert run(capsys, "codebook", "--manifest", man, "-K", 16, "-o", cb)[0] == EXIT_OK
    assert io.load_codebook(cb).K == 16
    out = tmp_path / "b.bvv"
    assert run(capsys, "encode", "--manifest", man, "--codebook", cb, "-o", out)[0] == EXIT_OK
    assert io.load_vectors(out).dim == 16
    assert run(capsys, "encode", "--manifest", man, "-o", out)[0] == EXIT_VALIDATION


def test_eval_identity_map_one(capsys, dataset, tmp_path):
    src = io.load_manifest(dataset / "manifest.json")
    refs = src.by_role("reference")
    entries = [io.ManifestEntry(e.id, e.label, str(src.resolve(e)), "reference") for e in refs]
    entries += [io.ManifestEntry("q_" + e.id, e.label, str(src.resolve(e)), "query") for e in refs]
    man = io.Manifest(entries, {"q_" + e.id: [e.id] for e in refs})
    io.save_manifest(tmp_path / "id.json", man)
    model = tmp_path / "m.json"
    run(capsys, "train", "--manifest", tmp_path / "id.json", "-N", 3, "-o", model)
    vecs = tmp_path / "v.bvv"
    run(capsys, "encode", "--manifest", tmp_path / "id.json", "--model", model, "-o", vecs)
    code, out, _ = run(capsys, "eval", "--manifest", tmp_path / "id.json", "--vectors", vecs)
    assert code == EXIT_OK and "MAP 1.0000" in out


def test_convert(capsys, tmp_path):
    (tmp_path / "x.hex").write_text("0f\nf0\n")
    assert run(capsys, "convert", "--hex", tmp_path / "x.hex", "--dims", 8,
               "-o", tmp_path / "x.bfv")[0] == EXIT_OK
    assert [str(d) for d in io.read_features(tmp_path / "x.bfv")] == ["11110000", "00001111"]


def test_verify_and_bench(capsys, tmp_path):
    code, out, _ = run(capsys, "verify")
    assert code == EXIT_OK and "verify: PASS" in out
    io.save_model(tmp_path / "one.json", BmmModel([1.0], [[0.3, 0.6, 0.8]]))
    code, out, _ = run(capsys, "verify", "--model", tmp_path / "one.json", "--T", 50)
    assert code == EXIT_OK and "gradient check" in out
    code, out, _ = run(capsys, "--threads", 1, "bench", "-N", 8, "--D", 32, "--T", 50, "--reps", 2)
    assert code == EXIT_OK and "ratio exact/approx" in out


def test_gradient_check_helper():
    m = BmmModel([0.4, 0.6], [[0.2, 0.7], [0.5, 0.9]])
    X = random_features(np.random.default_rng(0), 10, 2)
    assert gradient_check(m, X, [(0, 0), (1, 1)]) <= 1e-5
