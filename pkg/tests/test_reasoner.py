import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusecore import tensor as T
from fusecore.model import build_vocabulary
from fusecore.reasoner.decoding import GenerationConfig, generate, nucleus_pick
from fusecore.reasoner.lm import DecoderLM, LMConfig, SequenceLengthError, build_input
from fusecore.reasoner.lora import LoRALinear, adapter_paths, apply_lora, linear_paths, merge_lora
from fusecore.reasoner.prompts import TASKS, all_templates, load_template
from fusecore.reasoner.tokenizer import BOS, EOS, TokenSequence, Vocabulary, word_segment
from fusecore.synth.vocab import WORDS
from fusecore.tensor import Tensor

from conftest import check_grads

VOCAB = build_vocabulary()


def _lm(seed=0, **kw):
    cfg = LMConfig(vocab_size=len(VOCAB), d_model=16, n_layers=2, n_heads=2, max_len=64, **kw)
    return DecoderLM(cfg, np.random.default_rng(seed))


def _randomize(model, rng, scale=0.3):
    for p in model.parameters():
        p.data = rng.normal(size=p.shape) * scale


# -- tokenizer --------------------------------------------------------------------

def test_corpus_words_are_single_tokens():
    for w in WORDS:
        assert len(VOCAB.encode(" " + w)) == 1


def test_templates_need_no_character_fallback():
    for t in all_templates():
        assert VOCAB.covers(t.text)


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), max_size=40))
def test_ascii_round_trip(text):
    assert VOCAB.decode(VOCAB.encode(text)) == text


def test_vocabulary_validation():
    with pytest.raises(ValueError):
        Vocabulary(["a", "b"])
    assert Vocabulary(VOCAB.tokens) == VOCAB


def test_word_segment_lowercases():
    assert word_segment("The Red, square.") == ["the", "red", ",", "square", "."]


def test_token_sequence_lengths():
    with pytest.raises(ValueError):
        TokenSequence([1, 2], [True])
    assert TokenSequence([1, 2]).loss_mask == [False, False]


# -- prompts ------------------------------------------------------------------------

def test_templates_load():
    assert set(TASKS) == {"reasoning", "prediction", "caption"}
    assert load_template("caption").text == ""
    assert load_template("reasoning").text.startswith("The provided visual information")
    assert load_template("prediction").text.startswith("Based on the events observed")
    with pytest.raises(KeyError):
        load_template("summary")


# -- language model -------------------------------------------------------------

def test_build_input_layout(rng):
    lm = _lm()
    fused = Tensor(rng.normal(size=(8, 16)))
    prompt = TokenSequence([BOS, 5, 6], [False, True, True])
    e, mask = build_input(fused, prompt, lm)
    assert e.shape == (11, 16)
    np.testing.assert_array_equal(e.data[:8], fused.data)
    assert mask == [False] * 8 + [False, True, True]
    with pytest.raises(ValueError):
        build_input(fused, TokenSequence([5]), lm)


def test_causality(rng):
    lm = _lm()
    _randomize(lm, rng)
    x = rng.normal(size=(10, 16))
    base = lm.forward_logits(Tensor(x)).data
    for t in range(9):
        y = x.copy()
        y[t + 1:] += rng.normal(size=y[t + 1:].shape)
        out = lm.forward_logits(Tensor(y)).data
        np.testing.assert_array_equal(out[:t + 1], base[:t + 1])


def test_packed_segments_are_independent(rng):
    lm = _lm()
    _randomize(lm, rng)
    a, b = rng.normal(size=(5, 16)), rng.normal(size=(7, 16))
    packed = lm.forward_packed(Tensor(np.concatenate([a, b])), [5, 7]).data
    np.testing.assert_allclose(packed[:5], lm.forward_logits(Tensor(a)).data, atol=1e-12)
    np.testing.assert_allclose(packed[5:], lm.forward_logits(Tensor(b)).data, atol=1e-12)


def test_sequence_too_long(rng):
    with pytest.raises(SequenceLengthError):
        _lm().forward_logits(Tensor(rng.normal(size=(65, 16))))


@pytest.mark.parametrize("seed", range(20))
def test_lora_path_gradients(seed):
    rng = np.random.default_rng(500 + seed)
    from fusecore.nn import Linear
    layer = LoRALinear(Linear(4, 3, rng), r=2, alpha=3.0, rng=rng)
    layer.lora_b.data = rng.normal(size=layer.lora_b.shape)
    x = Tensor(rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 3))
    assert check_grads(lambda: T.sum(T.mul(layer(x), Tensor(w))), [layer.lora_a, layer.lora_b, x]) < 1e-4


# -- LoRA ---------------------------------------------------------------------------

def test_zero_init_adapters_are_bit_identical(rng):
    lm = _lm()
    _randomize(lm, rng)
    x = Tensor(rng.normal(size=(6, 16)))
    before = lm.forward_logits(x).data
    apply_lora(lm, linear_paths(lm), 4, 8, rng)
    np.testing.assert_array_equal(lm.forward_logits(x).data, before)


def test_merge_reproduces_adapted_logits(rng):
    lm = _lm()
    _randomize(lm, rng)
    apply_lora(lm, linear_paths(lm), 4, 8, rng)
    for path in adapter_paths(lm):
        a = lm.get_submodule(path)
        a.lora_b.data = rng.normal(size=a.lora_b.shape) * 0.1
    x = Tensor(rng.normal(size=(6, 16)))
    adapted = lm.forward_logits(x).data
    merge_lora(lm)
    assert not adapter_paths(lm)
    assert np.max(np.abs(lm.forward_logits(x).data - adapted)) <= 1e-10


def test_lora_freezes_base_and_validates():
    lm = _lm()
    rng = np.random.default_rng(0)
    apply_lora(lm, ["blocks.0.attn.w_q"], 2, 4, rng)
    a = lm.get_submodule("blocks.0.attn.w_q")
    assert a.base.weight.frozen and not a.lora_a.frozen
    assert a.scaling == 2.0
    with pytest.raises(KeyError):
        apply_lora(lm, ["blocks.9.attn.w_q"], 2, 4, rng)
    with pytest.raises(ValueError):
        merge_lora(_lm())


# -- decoding -----------------------------------------------------------------------

def _decode_setup(rng):
    lm = _lm()
    _randomize(lm, rng, 0.5)
    return lm, rng.normal(size=(4, 16)), [BOS] + VOCAB.encode(" the red")


def test_greedy_is_argmax_chain(rng):
    lm, fused, prompt = _decode_setup(rng)
    out = generate(lm, fused, prompt, GenerationConfig(max_new_tokens=6))
    ids = list(prompt)
    for tok in out:
        e = np.concatenate([fused, lm.tok_emb.data[ids]])
        logits = lm.forward_logits(Tensor(e)).data[-1]
        assert tok == int(np.argmax(logits))
        ids.append(tok)
    assert len(out) == 6 or out[-1] == EOS


def test_fixed_seed_nucleus_is_reproducible(rng):
    lm, fused, prompt = _decode_setup(rng)
    cfg = GenerationConfig(strategy="nucleus", top_p=0.9, temperature=1.5, max_new_tokens=10, seed=7)
    assert generate(lm, fused, prompt, cfg) == generate(lm, fused, prompt, cfg)


def test_nucleus_keeps_smallest_covering_set():
    logits = np.log(np.array([0.5, 0.3, 0.15, 0.05]))
    picks = {nucleus_pick(logits, 0.8, 1.0, np.random.default_rng(s)) for s in range(200)}
    assert picks == {0, 1}
    assert {nucleus_pick(logits, 1e-6, 1.0, np.random.default_rng(s)) for s in range(20)} == {0}


def test_beam_width_one_equals_greedy(rng):
    lm, fused, prompt = _decode_setup(rng)
    greedy = generate(lm, fused, prompt, GenerationConfig(max_new_tokens=5))
    beam = generate(lm, fused, prompt, GenerationConfig(strategy="beam", beam_width=1, max_new_tokens=5))
    assert beam == greedy


def test_beam_search_is_deterministic(rng):
    lm, fused, prompt = _decode_setup(rng)
    cfg = GenerationConfig(strategy="beam", beam_width=3, max_new_tokens=6)
    out = generate(lm, fused, prompt, cfg)
    assert out == generate(lm, fused, prompt, cfg) and 1 <= len(out) <= 6


def test_generation_config_validation():
    for bad in ({"strategy": "top-k"}, {"top_p": 0.0}, {"temperature": 0.0}, {"beam_width": 0}):
        with pytest.raises(ValueError):
            GenerationConfig(**bad)
