"""Assembled spotters: inference contract, routing, budget matching and config round trips."""

from dataclasses import replace

import numpy as np
import pytest

from mxspot.charset import ScriptId, build_union_charset
from mxspot.model import ModelConfig, SingleHeadSpotter, build_model, multiplexed_budget
from mxspot.multiplexer import route
from mxspot.scenegen import corpus
from mxspot.trunk import roi_mask_pool


def test_config_kv_round_trip(tiny_cfg):
    cfg = replace(tiny_cfg, script_to_head=(0, 1, 2, 3, 4, 5, 6, 6), seed=5)
    assert ModelConfig.from_kv(cfg.to_kv()) == cfg
    with pytest.raises(ValueError):
        ModelConfig.from_kv({"nope": "1"})
    with pytest.raises(ValueError):
        ModelConfig(kind="triple")


def test_same_seed_same_parameters(tiny_cfg, tiny_charsets):
    a, b = build_model(tiny_cfg, tiny_charsets), build_model(tiny_cfg, tiny_charsets)
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    assert a.config_digest() == b.config_digest()
    c = build_model(replace(tiny_cfg, seed=1), tiny_charsets)
    assert a.config_digest() != c.config_digest()


def test_infer_contract(tiny_model, tiny_data):
    for s in tiny_data[1]:
        recs = tiny_model.infer(s.image)
        assert recs == [] or all(0.0 <= r.confidence <= 1.0 and r.polygon.shape == (4, 2) for r in recs)
        assert all(isinstance(r.script, ScriptId) for r in recs)
        for r in recs:
            table = tiny_model.heads[tiny_model.mux.script_to_head[int(r.script)]].table
            assert set(r.transcription) <= set(table.characters)


def test_infer_script_is_lpn_argmax_and_routes(tiny_model, tiny_data):
    s = next(x for x in tiny_data[1] if any(w.legible for w in x.words))
    words = [w for w in s.words if w.legible]
    scripts = tiny_model.classify_words(s.image, words)
    assert scripts.shape == (len(words),) and np.all((0 <= scripts) & (scripts < 8))
    assert len(tiny_model.read_words(s.image, words)) == len(words)


def test_many_to_one_model(tiny_cfg, tiny_charsets, tiny_data):
    cfg = replace(tiny_cfg, script_to_head=(0, 1, 2, 3, 4, 5, 6, 6))
    m = build_model(cfg, tiny_charsets)
    assert len(m.heads) == 7 and m.head_name(6) == "Latin+Symbol"
    merged = m.heads[6].table
    for sid in (ScriptId.Latin, ScriptId.Symbol):
        assert set(tiny_charsets[sid].characters) <= set(merged.characters)
    assert merged.size < tiny_charsets[ScriptId.Latin].size + tiny_charsets[ScriptId.Symbol].size
    for s in tiny_data[1]:
        for r in m.infer(s.image):
            assert set(r.transcription) <= set(m.heads[cfg.script_to_head[int(r.script)]].table.characters)


def test_single_head_budget_matched(tiny_cfg, tiny_charsets, tiny_data):
    union = build_union_charset(corpus(tiny_data[0]))
    mux = build_model(tiny_cfg, tiny_charsets)
    single = build_model(replace(tiny_cfg, kind="single"), tiny_charsets, union)
    assert isinstance(single, SingleHeadSpotter)
    assert mux.recognition_parameters() == multiplexed_budget(tiny_cfg, tiny_charsets)
    assert abs(single.recognition_parameters() / mux.recognition_parameters() - 1) <= 0.02
    with pytest.raises(ValueError):
        build_model(replace(tiny_cfg, kind="single"), tiny_charsets)


def test_single_head_scripts_by_majority(tiny_cfg, tiny_charsets, tiny_data):
    union = build_union_charset(corpus(tiny_data[0]))
    single = build_model(replace(tiny_cfg, kind="single"), tiny_charsets, union)
    for s in tiny_data[1]:
        for r in single.infer(s.image):
            assert r.script is None or isinstance(r.script, ScriptId)
            assert set(r.transcription) <= set(union.characters)


def test_route_matches_classify(tiny_model, tiny_data):
    s = next(x for x in tiny_data[1] if any(w.legible for w in x.words))
    words = [w for w in s.words if w.legible]
    _, feats = tiny_model.trunk(s.image[None].astype(np.float32))
    f = tiny_model.cfg.image_size // tiny_model.trunk.cfg.stride
    mf = roi_mask_pool(feats, np.zeros(len(words), int), tiny_model.word_masks(words, f, tiny_model.trunk.cfg.stride),
                       tiny_model.cfg.pooled)
    post = tiny_model.lpn(mf.features)
    assert route(post, tiny_model.mux).tolist() == tiny_model.classify_words(s.image, words).tolist()
