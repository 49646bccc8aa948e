import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tripletdiff.data import ToyWorldConfig, Triplet, triplet_caption
from tripletdiff.errors import DataError, FormatError, LookupFailure, NumericError
from tripletdiff.textlang import (PAD_ID, UNK_ID, AlignmentProbe, EmbeddingTable, HashEncoder, LearnedEncoder,
                                  TableEncoder, TextEmbedding, Tokenizer, cluster_attribution, compute_alignment,
                                  cosine, embedding_table, load_probes, pool, project_points, separation)

CAPTIONS = ["hook dissect liver", "clipper clip cystic duct", "grasper retract gallbladder"]


@pytest.fixture
def tok():
    return Tokenizer.build(CAPTIONS, l_max=8)


def test_tokenize_examples(tok):
    ids, mask = tok.tokenize("hook dissect liver")
    assert mask.tolist() == [1, 1, 1, 0, 0, 0, 0, 0]
    assert np.all(ids[3:] == PAD_ID) and np.all(ids[:3] > UNK_ID)
    _, mask = tok.tokenize("clipper clip cystic duct")
    assert mask.sum() == 4
    ids, mask, oov = tok.tokenize_verbose("hook zzz liver")
    assert ids[1] == UNK_ID and oov == ["zzz"] and mask.sum() == 3


def test_tokenize_empty_and_truncation(tok):
    with pytest.raises(DataError):
        tok.tokenize("  . ")
    _, mask = tok.tokenize(" ".join(["hook"] * 20))
    assert mask.all()


def test_tokenizer_json_round_trip(tok):
    assert Tokenizer.from_json(tok.to_json()) == tok
    with pytest.raises(FormatError):
        Tokenizer(("a", "b"))


def test_hash_encoder_deterministic_and_local(tok):
    enc = HashEncoder(tok, d=16, seed=3)
    a, b = enc.embed("hook dissect liver"), HashEncoder(tok, d=16, seed=3).embed("hook dissect liver")
    np.testing.assert_array_equal(a.tokens, b.tokens)
    c = enc.embed("hook retract liver")
    differs = np.any(a.tokens != c.tokens, axis=1)
    assert differs.tolist() == [False, True] + [False] * 6


def test_learned_encoder_row_locality(tok):
    table = np.random.default_rng(0).standard_normal((len(tok), 5))
    enc = LearnedEncoder(tok, table)
    a, c = enc.embed("hook dissect liver"), enc.embed("hook clip liver")
    assert np.flatnonzero(np.any(a.tokens != c.tokens, axis=1)).tolist() == [1]
    assert np.all(a.tokens[~a.mask] == 0)


def test_table_encoder_broadcasts_row0():
    table = EmbeddingTable({"hook dissect liver": np.array([1.0, 2.0])}, "ext")
    emb = TableEncoder(table, l_max=4).embed("hook dissect liver")
    assert emb.mask.tolist() == [True, False, False, False]
    np.testing.assert_array_equal(emb.tokens[0], [1.0, 2.0])
    with pytest.raises(LookupFailure, match="grasper"):
        TableEncoder(table).embed("grasper")


def test_pool_examples():
    v = np.array([0.3, -1.0])
    np.testing.assert_array_equal(pool(TextEmbedding(np.array([v, [0, 0]]), [True, False])), v)
    np.testing.assert_allclose(pool(TextEmbedding(np.array([v, -v]), [True, True])), 0.0)
    np.testing.assert_allclose(pool(TextEmbedding(np.eye(2), [True, True])), [0.5, 0.5])
    with pytest.raises(DataError):
        TextEmbedding(np.zeros((2, 2)), [False, False])


def test_table_io_round_trip(tmp_path):
    rows = {"a b": np.array([1.0, 0.5]), "c": np.array([-2.0, 1e-9])}
    EmbeddingTable(rows, "x").write(tmp_path / "t.tsv")
    back = EmbeddingTable.read(tmp_path / "t.tsv")
    assert back.encoder == "x" and back.captions == ["a b", "c"]
    np.testing.assert_array_equal(back.matrix(), np.stack(list(rows.values())))


@pytest.mark.parametrize("body,line", [("2\tx\na\t1 2\nb\t1\n", 3), ("2\tx\na 1 2\n", 2), ("zz\n", 1),
                                       ("2\tx\na\t1 q\n", 2), ("2\tx\na\t1 2\na\t3 4\n", 3)])
def test_table_parse_errors_are_line_numbered(tmp_path, body, line):
    (tmp_path / "t.tsv").write_text(body)
    with pytest.raises(FormatError, match=f"t.tsv:{line}:"):
        EmbeddingTable.read(tmp_path / "t.tsv")


def test_alignment_examples(tok):
    enc = HashEncoder(tok, d=32)
    probe = AlignmentProbe("hook dissect liver", ["hook dissect liver"] * 3)
    mean, std = compute_alignment(probe, enc)
    assert mean == pytest.approx(1.0) and std == pytest.approx(0.0, abs=1e-12)
    onehot = TableEncoder(EmbeddingTable({"a": np.array([1.0, 0, 0]), "b": np.array([0, 1.0, 0]),
                                          "c": np.array([0, 0, 1.0])}))
    mean, _ = compute_alignment(AlignmentProbe("a", ["b", "c"]), onehot)
    assert mean == 0.0
    with pytest.raises(NumericError):
        cosine(np.zeros(3), np.ones(3))


def test_shipped_probe_fixture_loads():
    from importlib.resources import files
    probes = load_probes(files("tripletdiff") / "fixtures" / "toy_probes.json")
    assert len(probes) >= 3 and all(p.long_captions for p in probes)


def test_projection_collinear_is_flagged():
    p = project_points(np.array([[0.0, 0, 0], [1, 1, 1], [2, 2, 2]]))
    assert p.degenerate and np.allclose(p.coords[:, 1], 0)


def test_projection_symmetric_centroid():
    pts = np.random.default_rng(0).standard_normal((5, 4))
    p = project_points(np.vstack([pts, -pts]))
    np.testing.assert_allclose(p.coords.mean(axis=0), 0, atol=1e-12)


def test_projection_rectangle_distances():
    rect = np.zeros((4, 5))
    rect[:, :2] = [[0, 0], [3, 0], [3, 1], [0, 1]]
    p = project_points(rect)
    d = lambda x: np.linalg.norm(x[:, None] - x[None], axis=-1)
    np.testing.assert_allclose(d(p.coords), d(rect), atol=1e-9)
    assert not p.degenerate


@given(st.integers(3, 12), st.integers(2, 6), st.integers(0, 2**31))
def test_projection_never_expands_distances(n, dim, seed):
    x = np.random.default_rng(seed).standard_normal((n, dim))
    p = project_points(x)
    d = lambda y: np.linalg.norm(y[:, None] - y[None], axis=-1)
    assert np.all(d(p.coords) <= d(x) + 1e-9)


def _toy_table(vectors):
    vocab = ToyWorldConfig().vocab()
    trips = {triplet_caption(t, vocab): t for t in vocab.all_triplets()}
    return EmbeddingTable({c: vectors(t) for c, t in trips.items()}), trips


def test_attribution_onehot_instrument():
    table, trips = _toy_table(lambda t: np.eye(4)[t.instrument_id] + 0.0)
    assert cluster_attribution(table, trips, 5)["instrument"] == 1.0


def test_attribution_weighted_ordering():
    table, trips = _toy_table(lambda t: np.concatenate([10 * np.eye(4)[t.instrument_id], np.eye(3)[t.verb_id]]))
    pur = cluster_attribution(table, trips, 5)
    assert pur["instrument"] > pur["verb"] > pur["target"]


def _prior_by_enumeration(sizes=(4, 3, 4)):
    trips = list(itertools.product(*map(range, sizes)))
    shared = np.zeros(3)
    for a in trips:
        for b in trips:
            if a != b:
                shared += [a[k] == b[k] for k in range(3)]
    return shared / (len(trips) * (len(trips) - 1))


def test_attribution_random_matches_prior():
    prior = _prior_by_enumeration()
    np.testing.assert_allclose(prior, [11 / 47, 15 / 47, 11 / 47])
    runs = []
    for seed in range(40):
        rng = np.random.default_rng(seed)
        table, trips = _toy_table(lambda t: rng.standard_normal(16))
        pur = cluster_attribution(table, trips, 5)
        runs.append([pur["instrument"], pur["verb"], pur["target"]])
    np.testing.assert_allclose(np.mean(runs, axis=0), prior, atol=0.03)


def test_attribution_ties_are_deterministic():
    table, trips = _toy_table(lambda t: np.ones(3))
    assert cluster_attribution(table, trips, 3) == cluster_attribution(table, trips, 3)
    with pytest.raises(DataError):
        cluster_attribution(table, trips, 48)


def test_separation_orthogonal_rows():
    table = EmbeddingTable({str(i): np.eye(3)[i] for i in range(3)})
    assert separation(table) == pytest.approx(np.sqrt(2))


def test_embedding_table_dedups(tok):
    t = embedding_table(CAPTIONS + CAPTIONS[:1], HashEncoder(tok, d=8))
    assert t.captions == CAPTIONS and t.d == 8
