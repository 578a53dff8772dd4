"""Acceptance criteria, one test each. Every test records a PASS/FAIL line that
pytest prints in an "acceptance criteria" section at the end of the run."""

import itertools
from functools import lru_cache

import numpy as np

from convctc import autodiff as ad
from convctc.autodiff import BatchNormParams, Conv1dParams, grad_check
from convctc.corpus import SplitSpec, make_batches, split
from convctc.ctc import ctc_loss, edit_distance, label_error_rate, log_softmax, min_frames
from convctc.dsp import FeatureConfig
from convctc.model import (
    NetworkConfig,
    init_params,
    network_backward,
    network_forward,
    param_count,
    receptive_field,
    residual_block_backward,
    residual_block_forward,
)
from convctc.training import (
    AdamState,
    TrainConfig,
    Trainer,
    evaluate,
    featurize,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from convctc.translit import SPACE, arabic_to_roman, default_table, roman_to_arabic

# ---------------------------------------------------------------- CTC vs enumeration


def _collapse(path):
    out, prev = [], None
    for p in path:
        if p != prev and p != 0:
            out.append(p)
        prev = p
    return tuple(out)


def _enumerated_likelihoods(log_probs):
    """Sum path probabilities over every one of the A**T alignments, keyed by collapsed label."""
    A, T = log_probs.shape
    paths = list(itertools.product(range(A), repeat=T))
    idx = np.array(paths)
    path_lp = log_probs[idx, np.arange(T)].sum(axis=1)
    totals = {}
    for path, lp in zip(paths, path_lp):
        key = _collapse(path)
        totals[key] = totals.get(key, 0.0) + np.exp(lp)
    return totals


def test_ctc_matches_exhaustive_enumeration(criterion):
    with criterion("CTC oracle equivalence (T<=6, A<=4, L<=3)", 10.0) as c:
        rng = np.random.default_rng(0)
        worst_nll = worst_grad = 0.0
        cases = 0
        for A in range(2, 5):
            for T in range(1, 7):
                logits = rng.standard_normal((A, T)) * 1.5
                lp = log_softmax(logits)
                totals = _enumerated_likelihoods(lp)
                for L in range(4):
                    for labels in itertools.product(range(1, A), repeat=L):
                        if T < min_frames(labels):
                            continue
                        res = ctc_loss(lp, list(labels))
                        worst_nll = max(worst_nll, abs(res.nll - (-np.log(totals[labels]))))

                        def f(z, labels=list(labels)):
                            r = ctc_loss(log_softmax(z), labels)
                            return r.nll, [r.grad_logits]

                        worst_grad = max(worst_grad, grad_check(f, [logits.copy()]))
                        cases += 1
        c.detail = f"{cases} instances, max |dnll| {worst_nll:.1e}, max grad rel err {worst_grad:.1e}"
        assert worst_nll < 1e-9
        assert worst_grad < 1e-5


# ---------------------------------------------------------------- gradient integrity


MICRO = NetworkConfig(num_stacks=1, residual_channels=2, skip_channels=2, kernel_size=2, mel_bins=3, alphabet_size=3)


def _layer_errors(rng):
    errs = {}
    x = rng.standard_normal((3, 8))

    for name, k, d in (("dilated_conv1d", 2, 3), ("dilated_conv1d_k3", 3, 2), ("conv1x1", 1, 1)):
        r = rng.standard_normal((2, 8))

        def f(x, w, b, d=d, r=r):
            y, cache = ad.dilated_conv1d(x, Conv1dParams(w, b, d))
            dx, g = ad.dilated_conv1d_backward(r, cache)
            return float((y * r).sum()), [dx, g["weight"], g["bias"]]

        errs[name] = grad_check(f, [x, rng.standard_normal((2, 3, k)), rng.standard_normal(2)])

    r = rng.standard_normal((3, 8))

    def f_gated(a, b):
        z, cache = ad.gated_activation(a, b)
        return float((z * r).sum()), list(ad.gated_activation_backward(r, cache))

    errs["gated_activation"] = grad_check(f_gated, [x, rng.standard_normal((3, 8))])

    for mode in ("train", "infer"):
        stats = (rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))

        def f_bn(x, gamma, beta, mode=mode, stats=stats):
            p = BatchNormParams(gamma, beta, stats[0].copy(), stats[1].copy())
            y, cache = ad.batch_norm(x, p, mode)
            dx, g = ad.batch_norm_backward(r, cache)
            return float((y * r).sum()), [dx, g["gamma"], g["beta"]]

        errs[f"batch_norm_{mode}"] = grad_check(f_bn, [x, rng.uniform(0.5, 2, 3), rng.standard_normal(3)])

    xr = np.where(np.abs(x) < 1e-2, 0.5, x)

    def f_relu(v):
        y, m = ad.relu(v)
        return float((y * r).sum()), [ad.relu_backward(r, m)]

    def f_add(a, b):
        y, cache = ad.add(a, b)
        return float((y * r).sum()), list(ad.add_backward(r, cache))

    def f_scale(v):
        y, cache = ad.scale(v, 0.7)
        return float((y * r).sum()), [ad.scale_backward(r, cache)]

    errs["relu"] = grad_check(f_relu, [xr])
    errs["add"] = grad_check(f_add, [x, rng.standard_normal((3, 8))])
    errs["scale"] = grad_check(f_scale, [x])

    block = init_params(NetworkConfig(num_stacks=1, residual_channels=3, skip_channels=2), seed=2).stacks[0][1]
    convs = block.convs()
    r_out, r_skip = rng.standard_normal((3, 8)), rng.standard_normal((2, 8))

    def f_block(x, *tensors):
        for conv, w, b in zip(convs.values(), tensors[::2], tensors[1::2]):
            conv.weight, conv.bias = w, b
        out, skip, cache = residual_block_forward(x, block)
        dx, g = residual_block_backward(r_out, r_skip, cache)
        grads = [t for name in convs for t in (g[name]["weight"], g[name]["bias"])]
        return float((out * r_out).sum() + (skip * r_skip).sum()), [dx] + grads

    tensors = [t.copy() for conv in convs.values() for t in (conv.weight, conv.bias)]
    errs["residual_block"] = grad_check(f_block, [x] + tensors)

    params = init_params(MICRO, seed=5)
    named = params.named_tensors()
    names = list(named)

    def f_net(x, *tensors):
        for n, t in zip(names, tensors):
            named[n][...] = t
        logits, cache = network_forward(x, params, "train")
        res = ctc_loss(log_softmax(logits), [1, 2, 1])
        grads, dx = network_backward(res.grad_logits, cache, with_input_grad=True)
        return res.nll, [dx] + [grads[n] for n in names]

    errs["micro_network"] = grad_check(f_net, [rng.standard_normal((3, 8))] + [named[n].copy() for n in names])
    return errs


def test_gradient_integrity(criterion):
    with criterion("Gradient integrity (every layer op + micro network)", 60.0) as c:
        errs = _layer_errors(np.random.default_rng(7))
        worst = max(errs, key=errs.get)
        c.detail = f"{len(errs)} checks, worst {worst} {errs[worst]:.1e}"
        assert all(e < 1e-4 for e in errs.values()), errs


# ---------------------------------------------------------------- overfit


def test_overfit_micro_corpus(criterion, micro_utterances, alphabet):
    with criterion("Overfit micro-corpus to 0% training LER (<=2000 steps)", 600.0) as c:
        refs = [u.text for u in micro_utterances]
        assert len(set(refs)) == 5 and all(3 <= len(t) <= 5 for t in refs)
        cfg = NetworkConfig(num_stacks=2, residual_channels=16, skip_channels=32, alphabet_size=alphabet.size)
        trainer = Trainer(micro_utterances, cfg, TrainConfig(max_steps=2000, batch_size=18, seed=0),
                          alphabet=alphabet)
        ler = None
        while trainer.step < 2000:
            trainer.run(trainer.step + 25)
            ler = evaluate(micro_utterances, trainer.params, alphabet, FeatureConfig()).ler_percent
            if ler == 0.0:
                break
        c.detail = f"LER {ler:.2f}% at step {trainer.step}"
        assert ler == 0.0


# ---------------------------------------------------------------- setup grid


def test_setup_grid(criterion, micro_utterances, alphabet):
    with criterion("Setup grid: 6/7/8 stacks construct, train one step, param_count increasing", 60.0) as c:
        x = featurize(micro_utterances[0].clip, FeatureConfig())
        counts = []
        for stacks in (6, 7, 8):
            cfg = NetworkConfig(num_stacks=stacks, alphabet_size=alphabet.size)
            params = init_params(cfg)
            assert cfg.blocks_per_stack == 4 and len(params.stacks) == stacks
            for stack in params.stacks:
                assert len(stack) == 4
                assert [b.filter_conv.dilation for b in stack] == [1, 3, 9, 27]
                assert [b.gate_conv.dilation for b in stack] == [1, 3, 9, 27]
            res = train_step([x], [micro_utterances[0].labels], params,
                             AdamState.zeros_like(params.named_tensors()), 1e-3)
            assert np.isfinite(res.loss)
            counts.append(param_count(cfg))
        c.detail = f"param counts {counts}"
        assert counts[0] < counts[1] < counts[2]


# ---------------------------------------------------------------- receptive field


def _perturbation_extent(cfg, T=300, probe=150, seeds=range(6)):
    hit = set()
    for seed in seeds:
        params = init_params(cfg, seed=seed)
        x = np.random.default_rng(seed).standard_normal((cfg.mel_bins, T))
        base, _ = network_forward(x, params, "infer")
        x[:, probe] += 1.0
        moved, _ = network_forward(x, params, "infer")
        hit |= set(np.nonzero(np.any(moved != base, axis=0))[0].tolist())
    return max(hit) - min(hit) + 1


def test_receptive_field(criterion):
    with criterion("Receptive field: empirical extent equals formula (41, 81)", 30.0) as c:
        found = []
        for stacks, expected in ((1, 41), (2, 81)):
            cfg = NetworkConfig(num_stacks=stacks, kernel_size=2, residual_channels=3, skip_channels=3,
                                mel_bins=2, alphabet_size=3)
            assert receptive_field(cfg) == expected
            found.append(_perturbation_extent(cfg))
        c.detail = f"empirical {found}"
        assert found == [41, 81]


# ---------------------------------------------------------------- transliteration


def test_translit_round_trip(criterion):
    with criterion("Transliteration exhaustive round trip, both directions", 1.0) as c:
        table = default_table()
        arabic = sorted(table.domain) + [SPACE]
        roman = sorted(table.range) + [SPACE]
        n = 0
        for a, b in itertools.product(arabic, repeat=2):
            s = a + b
            assert roman_to_arabic(arabic_to_roman(s, table), table) == s
            n += 1
        for a, b in itertools.product(roman, repeat=2):
            s = a + b
            assert arabic_to_roman(roman_to_arabic(s, table), table) == s
            n += 1
        c.detail = f"{len(arabic) - 1} letters, {n} strings"


# ---------------------------------------------------------------- metrics


def _recursive_distance(a, b):
    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return len(a) - i + len(b) - j
        if a[i] == b[j]:
            return go(i + 1, j + 1)
        return 1 + min(go(i + 1, j), go(i, j + 1), go(i + 1, j + 1))

    return go(0, 0)


def test_metric_fidelity(criterion):
    with criterion("Metric fidelity: edit distance oracle x1000, LER fixture 27.50%", None) as c:
        rng = np.random.default_rng(11)
        for _ in range(1000):
            a = tuple(rng.integers(0, 5, size=rng.integers(0, 13)).tolist())
            b = tuple(rng.integers(0, 5, size=rng.integers(0, 13)).tolist())
            assert edit_distance(a, b) == _recursive_distance(a, b)
        pairs = [("a" * 10, "a" * 8 + "bb"), ("c" * 30, "c" * 21 + "d" * 9)]
        ler = label_error_rate(pairs)
        c.detail = f"LER {ler:.2f}%"
        assert f"{ler:.2f}" == "27.50" and ler == 27.5


# ---------------------------------------------------------------- protocol


def test_protocol_fidelity(criterion):
    with criterion("Protocol fidelity: 3549 -> 3195/354, 5083 -> 283 batches (last 7)", None) as c:
        tr, ev = split(list(range(3549)), SplitSpec(0.9, seed=0))
        batches = make_batches(list(range(5083)), 18, seed=0)
        c.detail = f"{len(tr)}/{len(ev)}, {len(batches)} batches, last {len(batches[-1])}"
        assert (len(tr), len(ev)) == (3195, 354)
        assert len(batches) == 283 and len(batches[-1]) == 7


# ---------------------------------------------------------------- determinism


def test_determinism_and_resume(criterion, tmp_path, micro_utterances, alphabet):
    with criterion("Determinism and resume: 10 steps == 5 + checkpoint + 5, identical loss logs", None) as c:
        cfg = NetworkConfig(num_stacks=1, residual_channels=8, skip_channels=8, alphabet_size=alphabet.size)
        tcfg = TrainConfig(max_steps=10, batch_size=2, seed=4, augment_stretch=True)

        def fresh():
            return Trainer(micro_utterances, cfg, tcfg, alphabet=alphabet)

        straight = fresh()
        log_a = straight.run(10)
        log_b = fresh().run(10)
        assert log_a == log_b

        first = fresh()
        log_c = first.run(5)
        save_checkpoint(tmp_path / "half.bin", first.checkpoint())
        resumed = fresh()
        resumed.restore(load_checkpoint(tmp_path / "half.bin"))
        log_c = log_c + resumed.run(10)
        assert log_c == log_a

        a = {**straight.params.named_tensors(), **straight.params.named_buffers()}
        b = {**resumed.params.named_tensors(), **resumed.params.named_buffers()}
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
        for k in straight.opt.m:
            assert straight.opt.m[k].tobytes() == resumed.opt.m[k].tobytes()
            assert straight.opt.v[k].tobytes() == resumed.opt.v[k].tobytes()
        c.detail = f"{len(a)} tensors bit-identical, {len(log_a)} logged losses equal"
