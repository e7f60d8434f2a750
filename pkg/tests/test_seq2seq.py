import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from unmt_curriculum.corpus import BLANK_ID, EOS_ID
from unmt_curriculum.seq2seq import (
    ModelConfig,
    NoiseConfig,
    Seq2Seq,
    beam_search,
    beam_translate,
    corrupt,
    decode_loss,
    forward_distributions,
    greedy_translate,
    init_from_embeddings,
    load_checkpoint,
    save_checkpoint,
    source_batch,
)
from unmt_curriculum.seq2seq.model import token_nll

from helpers import fit_translator, random_sentences, tiny_vocab

VOCAB = tiny_vocab()
SRC_IDS = [VOCAB.ids[f"s{i}"] for i in range(8)]
TGT_IDS = [VOCAB.ids[f"t{i}"] for i in range(8)]


def small_model(**kw):
    cfg = dict(vocab_size=len(VOCAB), layers=2, heads=4, model_dim=16, feedforward_dim=32,
               dropout_rate=0.1, max_len=20, seed=0)
    cfg.update(kw)
    return Seq2Seq(ModelConfig(**cfg))


# -- noise -----------------------------------------------------------------------

def test_noise_identity():
    noise = NoiseConfig(0.0, 0.0, 1)
    s = [5, 6, 7, 8, 9]
    assert corrupt(s, noise) == s


def test_noise_full_drop_keeps_one():
    noise = NoiseConfig(drop_prob=0.999999, blank_prob=0.0, shuffle_window=1)
    out = corrupt([5, 6, 7, 8], noise, np.random.default_rng(0))
    assert len(out) == 1 and out[0] in (5, 6, 7, 8)


@pytest.mark.parametrize("seed", range(30))
def test_noise_shuffle_displacement_bounded(seed):
    noise = NoiseConfig(0.0, 0.0, 3)
    s = list(range(100, 110))
    out = corrupt(s, noise, np.random.default_rng(seed))
    assert sorted(out) == s
    for pos, tok in enumerate(out):
        assert abs(pos - (tok - 100)) <= 2


def test_noise_blanking():
    out = corrupt([5] * 50, NoiseConfig(0.0, 0.5, 1), np.random.default_rng(1))
    assert 0 < out.count(BLANK_ID) < 50


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(drop_prob=1.0)
    with pytest.raises(ValueError):
        NoiseConfig(shuffle_window=0)


# -- loss ------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, model_dim=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, dropout_rate=1.0)


def test_uniform_logits_give_log_vocab():
    model = small_model(dtype="float64")
    with torch.no_grad():
        model.tok_emb.zero_()
    src = [(SRC_IDS[0], SRC_IDS[1])]
    memory, pad = model.encode(source_batch(src), 0)
    nll, mask = token_nll(model, memory, pad, [(TGT_IDS[2], TGT_IDS[3])], 1)
    np.testing.assert_allclose(nll[mask].detach().numpy(), math.log(len(VOCAB)), rtol=1e-12)


def test_untrained_nll_near_log_vocab():
    model = small_model(dtype="float64")
    with torch.no_grad():
        model.tok_emb.mul_(1e-4)
    memory, pad = model.encode(source_batch([(SRC_IDS[0],)]), 0)
    loss = decode_loss(model, memory, pad, [(TGT_IDS[0], TGT_IDS[1])], 1)
    assert loss.item() == pytest.approx(math.log(len(VOCAB)), abs=1e-3)


def test_uniform_alpha_is_bitwise_unweighted():
    model = small_model()
    rng = np.random.default_rng(0)
    src = random_sentences(rng, SRC_IDS, 5)
    tgt = random_sentences(rng, TGT_IDS, 5)
    memory, pad = model.encode(source_batch(src), 0)
    base = decode_loss(model, memory, pad, tgt, 1)
    mask = torch.zeros(5, max(len(t) for t in tgt) + 1, dtype=torch.bool)
    for i, t in enumerate(tgt):
        mask[i, :len(t) + 1] = True
    alpha = mask / mask.sum(1, keepdim=True).to(torch.float64)
    beta = torch.full((5,), 1 / 5, dtype=torch.float64)
    weighted = decode_loss(model, memory, pad, tgt, 1, alpha, beta)
    assert base.item() == weighted.item()


def test_loss_permutation_equivariant():
    model = small_model(dtype="float64")
    rng = np.random.default_rng(1)
    src = random_sentences(rng, SRC_IDS, 6)
    tgt = random_sentences(rng, TGT_IDS, 6)
    perm = rng.permutation(6)
    m1, p1 = model.encode(source_batch(src), 0)
    m2, p2 = model.encode(source_batch([src[i] for i in perm]), 0)
    a = decode_loss(model, m1, p1, tgt, 1)
    b = decode_loss(model, m2, p2, [tgt[i] for i in perm], 1)
    assert a.item() == pytest.approx(b.item(), rel=1e-12)


def finite_difference_check(model, loss_fn, per_group=6, h=1e-6, seed=0):
    rng = np.random.default_rng(seed)
    model.zero_grad()
    loss_fn().backward()
    errors = {}
    for name, param in model.named_parameters():
        flat = param.data.view(-1)
        grad = param.grad.view(-1)
        idx = rng.choice(flat.numel(), size=min(per_group, flat.numel()), replace=False)
        analytic, numeric = [], []
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
            analytic.append(grad[i].item())
            numeric.append((up - down) / (2 * h))
        a, n = np.array(analytic), np.array(numeric)
        # key biases have an identically zero gradient (softmax shift invariance)
        scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-6)
        errors[name] = np.linalg.norm(a - n) / scale
    return errors


def test_gradient_check_weighted_loss():
    model = small_model(dtype="float64", dropout_rate=0.0)
    rng = np.random.default_rng(2)
    src = random_sentences(rng, SRC_IDS, 3)
    tgt = random_sentences(rng, TGT_IDS, 3)
    T = max(len(t) for t in tgt) + 1
    raw = torch.tensor(rng.uniform(0.1, 1.0, (3, T)))
    mask = torch.zeros(3, T, dtype=torch.bool)
    for i, t in enumerate(tgt):
        mask[i, :len(t) + 1] = True
    alpha = raw * mask / (raw * mask).sum(1, keepdim=True)
    beta = torch.softmax(torch.tensor(rng.uniform(0, 1, 3)), 0)

    def loss_fn():
        memory, pad = model.encode(source_batch(src), 0)
        return decode_loss(model, memory, pad, tgt, 1, alpha, beta)

    errors = finite_difference_check(model, loss_fn)
    assert max(errors.values()) <= 1e-3, errors


# -- distributions ---------------------------------------------------------------

def test_forward_distributions_properties():
    model = small_model()
    rng = np.random.default_rng(3)
    src = random_sentences(rng, SRC_IDS, 4)
    tgt = random_sentences(rng, TGT_IDS, 4)
    a, mask = forward_distributions(model, src, 0, tgt, 1)
    b, _ = forward_distributions(model, src, 0, tgt, 1)
    assert torch.equal(a, b)
    torch.testing.assert_close(a.sum(-1), torch.ones_like(a.sum(-1)), atol=1e-6, rtol=0)
    d1, _ = forward_distributions(model, src, 0, tgt, 1, True, 1)
    d2, _ = forward_distributions(model, src, 0, tgt, 1, True, 2)
    assert not torch.equal(d1, d2)
    with pytest.raises(ValueError):
        forward_distributions(model, src, 0, tgt, 1, True, None)


def test_zero_dropout_rate_equals_inference():
    model = small_model(dropout_rate=0.0)
    rng = np.random.default_rng(4)
    src = random_sentences(rng, SRC_IDS, 3)
    tgt = random_sentences(rng, TGT_IDS, 3)
    a, _ = forward_distributions(model, src, 0, tgt, 1)
    b, _ = forward_distributions(model, src, 0, tgt, 1, True, 5)
    assert torch.equal(a, b)


# -- init, checkpoint ------------------------------------------------------------

def test_init_from_embeddings_preserves_cosines():
    model = small_model(dtype="float64")
    rng = np.random.default_rng(5)
    rows = rng.standard_normal((len(VOCAB), 16))
    init_from_embeddings(model, rows, first_id=VOCAB.num_specials)
    E = model.tok_emb.detach().numpy()
    s, t = SRC_IDS[1], TGT_IDS[4]
    cos = lambda a, b: a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    assert cos(E[s], E[t]) == pytest.approx(cos(rows[s], rows[t]), abs=1e-12)


def test_init_dimension_mismatch_and_projection():
    model = small_model(dtype="float64")
    rows = np.random.default_rng(6).standard_normal((len(VOCAB), 8))
    with pytest.raises(ValueError):
        init_from_embeddings(model, rows)
    init_from_embeddings(model, rows, first_id=VOCAB.num_specials, project=True)
    E = model.tok_emb.detach().numpy()
    s, t = SRC_IDS[0], SRC_IDS[3]
    cos = lambda a, b: a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    assert cos(E[s], E[t]) == pytest.approx(cos(rows[s], rows[t]), abs=1e-10)


def test_same_seed_same_params():
    a, b = small_model(seed=3), small_model(seed=3)
    for (n1, p1), (n2, p2) in zip(a.named_parameters(), b.named_parameters()):
        assert n1 == n2 and torch.equal(p1, p2)
    c = small_model(seed=4)
    assert not torch.equal(a.tok_emb, c.tok_emb)


def test_checkpoint_roundtrip(tmp_path):
    model = small_model()
    save_checkpoint(tmp_path / "m.pt", model, {"note": 1})
    back, extra = load_checkpoint(tmp_path / "m.pt")
    assert extra == {"note": 1}
    assert back.cfg == model.cfg
    for (n1, p1), (_, p2) in zip(model.state_dict().items(), back.state_dict().items()):
        assert torch.equal(p1, p2), n1


# -- decoding --------------------------------------------------------------------

@pytest.fixture(scope="module")
def translator():
    rng = np.random.default_rng(0)
    lex = dict(zip(SRC_IDS, rng.permutation(TGT_IDS).tolist()))
    train = random_sentences(rng, SRC_IDS, 2000)
    pairs = [(s, tuple(lex[w] for w in s)) for s in train]
    model = fit_translator(pairs, len(VOCAB), steps=500)
    return model, lex


def test_greedy_translation_of_copy_model(translator):
    model, lex = translator
    rng = np.random.default_rng(99)
    test = random_sentences(rng, SRC_IDS, 30)
    allowed = torch.zeros(len(VOCAB), dtype=torch.bool)
    allowed[TGT_IDS] = True
    out = greedy_translate(model, test, 0, 1, allowed=allowed)
    assert out == [[lex[w] for w in s] for s in test]


def test_greedy_max_len_one_and_determinism(translator):
    model, _ = translator
    test = [(SRC_IDS[0], SRC_IDS[1], SRC_IDS[2])]
    out = greedy_translate(model, test, 0, 1, max_len=1)
    assert len(out[0]) == 1
    assert greedy_translate(model, test, 0, 1) == greedy_translate(model, test, 0, 1)


def test_beam_one_equals_greedy():
    model = small_model()
    rng = np.random.default_rng(7)
    test = random_sentences(rng, SRC_IDS, 20)
    assert beam_translate(model, test, 0, 1, beam_size=1) == greedy_translate(model, test, 0, 1)


def test_beam_finds_copy_translation(translator):
    model, lex = translator
    rng = np.random.default_rng(100)
    test = random_sentences(rng, SRC_IDS, 10)
    allowed = torch.zeros(len(VOCAB), dtype=torch.bool)
    allowed[TGT_IDS] = True
    out = beam_translate(model, test, 0, 1, beam_size=4, allowed=allowed)
    assert out == [[lex[w] for w in s] for s in test]


# hand-set search problem: vocabulary {BOS=2, EOS=3, a=5, b=6, c=7}
A, B, C = 5, 6, 7


def table_step_fn(table, vocab_size=8):
    """Log-probabilities from a dict prefix -> {token: prob}; unspecified tokens get -inf."""
    def step_fn(rows, prefixes, step):
        out = torch.full((len(rows), vocab_size), float("-inf"), dtype=torch.float64)
        for i, prefix in enumerate(prefixes.tolist()):
            for tok, p in table[tuple(prefix[1:])].items():
                out[i, tok] = math.log(p)
        return out
    return step_fn


def random_table(rng, max_len):
    table = {}
    frontier = [()]
    for depth in range(max_len):
        nxt = []
        for prefix in frontier:
            toks = [A, B, C] + ([EOS_ID] if depth > 0 else [])
            probs = rng.dirichlet(np.ones(len(toks)))
            table[prefix] = dict(zip(toks, probs))
            nxt += [prefix + (t,) for t in (A, B, C)]
        frontier = nxt
    return table


def exhaustive_best(table, max_len, lp):
    best, best_score = None, -math.inf
    def walk(prefix, logp):
        nonlocal best, best_score
        for tok, p in table[prefix].items():
            seq, s = prefix + (tok,), logp + math.log(p)
            if tok == EOS_ID or len(seq) == max_len:
                score = s / len(seq) ** lp
                if score > best_score:
                    best, best_score = seq, score
            else:
                walk(seq, s)
    walk((), 0.0)
    return [t for t in best if t != EOS_ID]


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("lp", [0.0, 1.0, 2.0])
def test_beam_matches_exhaustive_search(seed, lp):
    rng = np.random.default_rng(seed)
    table = random_table(rng, 3)
    got = beam_search(table_step_fn(table), 1, beam_size=64, length_penalty=lp, caps=[3])
    assert got[0] == exhaustive_best(table, 3, lp)


def test_length_penalty_tie_and_preference():
    # log-probabilities given directly: "a" scores -1 over length 2, "b c" scores -1.5 over length 3
    table = {(): {A: -0.5, B: -0.5}, (A,): {EOS_ID: -0.5}, (B,): {C: -0.5}, (B, C): {EOS_ID: -0.5}}

    def step_fn(rows, prefixes, step):
        out = torch.full((len(rows), 8), float("-inf"), dtype=torch.float64)
        for i, prefix in enumerate(prefixes.tolist()):
            for tok, lp in table[tuple(prefix[1:])].items():
                out[i, tok] = lp
        return out

    assert beam_search(step_fn, 1, 2, 1.0, caps=[3])[0] == [A]  # exact tie, earlier finisher
    assert beam_search(step_fn, 1, 2, 0.5, caps=[3])[0] == [A]
    assert beam_search(step_fn, 1, 2, 1.5, caps=[3])[0] == [B, C]
