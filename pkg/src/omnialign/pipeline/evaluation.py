"""Desk-scale metrics: caption exact match, multiple-choice accuracy, answer perplexity, routing stats."""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from ..data.datasets import ModalityDataset
from ..data.text import OPTION_LETTERS, caption_for_scene, caption_prompt, open_qa_prompt, option_qa_prompt, \
    option_questions, qa_for_scene
from ..decoder import BOS, EOS, decode_text, encode_text, generate_greedy, instruction_layout, instruction_prompt
from ..modality import Modality
from ..model import OmniModel, pad_batch
from ..numerics import no_grad, ops

TASKS = ("caption-exact-match", "qa-token-accuracy", "perplexity")


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield list(range(start, min(start + size, n)))


def caption_prompt_ids(modality: Modality, phase: str) -> list[int]:
    """Text that precedes a generated caption: BOS after alignment, a caption instruction after tuning."""
    if phase == "instruction":
        return encode_text(instruction_prompt("", [(caption_prompt(modality), "")], upto=0))
    return [BOS]


def caption_exact_match(model: OmniModel, ds: ModalityDataset, phase: str = "alignment", batch_size: int = 64,
                        max_new: int = 40, router_type: str | None = None) -> tuple[float, list[str]]:
    prompt = caption_prompt_ids(ds.modality, phase)
    hits = 0
    outputs = []
    with no_grad():
        for idx in _chunks(len(ds), batch_size):
            pre = model.prefix(ds.modality, [ds.inputs[i] for i in idx], router_type)
            ids = np.tile(np.asarray(prompt, dtype=np.int64), (len(idx), 1))
            gens = generate_greedy(model.decoder, pre.embeddings, ids, max_new)
            for i, gen in zip(idx, gens):
                text = decode_text(gen)
                outputs.append(text)
                hits += int(bool(gen) and gen[-1] == EOS and text == caption_for_scene(ds.specs[i]))
    return hits / len(ds), outputs


def option_accuracy(model: OmniModel, ds: ModalityDataset, batch_size: int = 64) -> float:
    """Multiple-choice accuracy: the gold letter must score highest among the four letters."""
    letters = [encode_text(x)[0] for x in OPTION_LETTERS]
    correct = total = 0
    with no_grad():
        for idx in _chunks(len(ds), batch_size):
            pre = model.prefix(ds.modality, [ds.inputs[i] for i in idx])
            for q_i in range(4):
                rows, gold = [], []
                for i in idx:
                    oq = option_questions(ds.specs[i])[q_i]
                    rows.append((encode_text(instruction_prompt("", [(option_qa_prompt(oq), "")], upto=0)), []))
                    gold.append(OPTION_LETTERS.index(oq.answer_letter))
                lengths = [len(r[0]) for r in rows]
                ids, _ = pad_batch(rows)
                logits = model.decoder.logits(pre.embeddings, ids).data
                m = pre.embeddings.shape[-2]
                for b, (length, g) in enumerate(zip(lengths, gold)):
                    scores = logits[b, m + length - 1, letters]
                    correct += int(int(np.argmax(scores)) == g)
                    total += 1
    return correct / total


def answer_nll(model: OmniModel, ds: ModalityDataset, phase: str = "alignment",
               batch_size: int = 64) -> tuple[float, int]:
    """Summed negative log-likelihood of gold answers (captions after alignment) and the token count."""
    nll = 0.0
    count = 0
    with no_grad():
        for idx in _chunks(len(ds), batch_size):
            pre = model.prefix(ds.modality, [ds.inputs[i] for i in idx])
            if phase == "instruction":
                rows = []
                for i in idx:
                    spec = ds.specs[i]
                    q, a = qa_for_scene(spec)[i % 4]
                    rows.append(instruction_layout("", [(caption_prompt(ds.modality), caption_for_scene(spec))]))
                    rows.append(instruction_layout("", [(open_qa_prompt(q), a)]))
                prefix = ops.getitem(pre.embeddings, np.repeat(np.arange(len(idx)), 2))
            else:
                rows = []
                for i in idx:
                    cap = encode_text(caption_for_scene(ds.specs[i]))
                    rows.append(([BOS] + cap + [EOS], [False] + [True] * (len(cap) + 1)))
                prefix = pre.embeddings
            ids, mask = pad_batch(rows)
            n_tok = int(mask.sum())
            loss = model.decoder.loss(prefix, ids, mask)
            nll += float(loss.data) * n_tok
            count += n_tok
    return nll, count


def routing_statistics(model: OmniModel, ds: ModalityDataset, batch_size: int = 64,
                       router_type: str | None = None) -> list[float]:
    """Mean routing weight per expert over every modality token of the dataset."""
    total = None
    rows = 0
    with no_grad():
        for idx in _chunks(len(ds), batch_size):
            w = model.prefix(ds.modality, [ds.inputs[i] for i in idx], router_type).routing_weights.data
            w = w.reshape(-1, w.shape[-1]).astype(np.float64)
            total = w.sum(axis=0) if total is None else total + w.sum(axis=0)
            rows += w.shape[0]
    return [float(x) for x in total / rows]


def evaluate(model: OmniModel, datasets: Mapping[Modality, ModalityDataset], tasks: Sequence[str] = TASKS,
             phase: str = "alignment", max_new: int = 40, router_type: str | None = None) -> dict:
    """Per-modality and overall metrics plus routing statistics."""
    unknown = [t for t in tasks if t not in TASKS]
    if unknown:
        raise ValueError(f"unknown evaluation tasks {unknown}; expected a subset of {TASKS}")
    record: dict = {"phase": phase, "tasks": list(tasks), "per_modality": {}, "routing": {}}
    totals = {t: [] for t in tasks}
    nll_sum = 0.0
    tok_sum = 0
    for m, ds in datasets.items():
        row: dict = {"n": len(ds)}
        if "caption-exact-match" in tasks:
            row["caption-exact-match"], samples = caption_exact_match(model, ds, phase, max_new=max_new,
                                                                      router_type=router_type)
            row["samples"] = samples[:3]
            totals["caption-exact-match"].append((row["caption-exact-match"], len(ds)))
        if "qa-token-accuracy" in tasks:
            row["qa-token-accuracy"] = option_accuracy(model, ds)
            totals["qa-token-accuracy"].append((row["qa-token-accuracy"], len(ds)))
        if "perplexity" in tasks:
            nll, n = answer_nll(model, ds, phase)
            row["perplexity"] = math.exp(nll / n)
            nll_sum += nll
            tok_sum += n
        record["per_modality"][m.value] = row
        record["routing"][m.value] = routing_statistics(model, ds, router_type=router_type)
    overall = {}
    for t, vals in totals.items():
        if vals:
            overall[t] = sum(v * n for v, n in vals) / sum(n for _, n in vals)
    if "perplexity" in tasks:
        overall["perplexity"] = math.exp(nll_sum / tok_sum)
    record["overall"] = overall
    return record
