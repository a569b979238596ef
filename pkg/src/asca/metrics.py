"""Text similarity: character-alignment accuracy, BLEU, METEOR (exact + stem), ROUGE."""

import difflib
import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from nltk.stem.porter import PorterStemmer

METRICS = ("bleu", "meteor", "rouge1", "rouge2", "rougeL", "char_accuracy")
_STEMMER = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)
# cap on candidate alignments enumerated per METEOR stage before falling back to in-order pairing
_ALIGNMENT_LIMIT = 4096


def lcs_length(a, b):
    """Length of the longest common subsequence of two sequences.

    Bit-parallel formulation: one big-int update per element of ``b``.
    """
    if not a or not b:
        return 0
    masks = {}
    for i, x in enumerate(a):
        masks[x] = masks.get(x, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for y in b:
        u = v & masks.get(y, 0)
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def char_accuracy(s1, s2, method="lcs"):
    """``2 |M| / (|s1| + |s2|)`` where |M| counts aligned matching characters.

    ``method="lcs"`` uses the longest common subsequence (exact optimum);
    ``method="blocks"`` uses difflib's recursive longest-matching-block heuristic.
    """
    total = len(s1) + len(s2)
    if total == 0:
        return 1.0
    if method == "lcs":
        matches = lcs_length(s1, s2)
    elif method == "blocks":
        matches = sum(b.size for b in difflib.SequenceMatcher(None, s1, s2, autojunk=False).get_matching_blocks())
    else:
        raise ValueError(f"unknown matching method {method!r}")
    return 2.0 * matches / total


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(ref, hyp, max_n=4):
    """Sentence BLEU with uniform weights and brevity penalty.

    Zero-match orders contribute ``1 / (2 * len(hyp))`` instead of zero.  When
    the hypothesis has fewer than ``max_n`` tokens the order is truncated to its
    length so identical short sentences still score 1.
    """
    r, h = ref.split(), hyp.split()
    if not h:
        return 0.0
    order = min(max_n, len(h))
    log_sum = 0.0
    for n in range(1, order + 1):
        hyp_counts, ref_counts = _ngrams(h, n), _ngrams(r, n)
        matched = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        precision = matched / (len(h) - n + 1) if matched else 1.0 / (2 * len(h))
        log_sum += math.log(precision) / order
    brevity = 1.0 if len(h) >= len(r) else math.exp(1.0 - len(r) / len(h))
    return brevity * math.exp(log_sum)


def stem(token):
    return _STEMMER.stem(token)


def _chunks(pairs):
    ordered = sorted(pairs)
    chunks = 0
    prev = None
    for h, r in ordered:
        if prev is None or h != prev[0] + 1 or r != prev[1] + 1:
            chunks += 1
        prev = (h, r)
    return chunks


def _stage(hyp_keys, ref_keys, fixed):
    """Add matches between equal keys of unaligned tokens, minimising chunks."""
    used_h = {h for h, _ in fixed}
    used_r = {r for _, r in fixed}
    hyp_pos, ref_pos = {}, {}
    for i, k in enumerate(hyp_keys):
        if i not in used_h:
            hyp_pos.setdefault(k, []).append(i)
    for j, k in enumerate(ref_keys):
        if j not in used_r:
            ref_pos.setdefault(k, []).append(j)
    options = []
    for key, hs in hyp_pos.items():
        rs = ref_pos.get(key)
        if not rs:
            continue
        if len(hs) <= len(rs):
            choices = [list(zip(hs, perm)) for perm in itertools.permutations(rs, len(hs))]
        else:
            choices = [list(zip(perm, rs)) for perm in itertools.permutations(hs, len(rs))]
        options.append(choices)
    if not options:
        return list(fixed)
    if math.prod(len(o) for o in options) > _ALIGNMENT_LIMIT:
        # first permutation of each group is the in-order pairing
        return list(fixed) + [p for o in options for p in o[0]]
    best, best_chunks = None, None
    for combo in itertools.product(*options):
        pairs = list(fixed) + [p for group in combo for p in group]
        c = _chunks(pairs)
        if best_chunks is None or c < best_chunks:
            best, best_chunks = pairs, c
    return best


def meteor_alignment(ref, hyp):
    """(hyp_index, ref_index) pairs: exact matches first, then Porter-stem matches."""
    r, h = ref.split(), hyp.split()
    pairs = _stage(h, r, [])
    return _stage([stem(t) for t in h], [stem(t) for t in r], pairs)


def meteor_lite(ref, hyp):
    """METEOR without the synonym stage: exact and stemmed unigram matches."""
    r, h = ref.split(), hyp.split()
    if not r or not h:
        return 0.0
    pairs = meteor_alignment(ref, hyp)
    m = len(pairs)
    if m == 0:
        return 0.0
    precision, recall = m / len(h), m / len(r)
    fmean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (_chunks(pairs) / m) ** 3
    return fmean * (1.0 - penalty)


def _f1(overlap, n_hyp, n_ref):
    if overlap == 0 or n_hyp == 0 or n_ref == 0:
        return 0.0
    p, r = overlap / n_hyp, overlap / n_ref
    return 2.0 * p * r / (p + r)


def rouge_n(ref, hyp, n):
    if n not in (1, 2):
        raise ValueError("ROUGE-N is defined here for n in {1, 2}")
    r, h = ref.split(), hyp.split()
    if r == h:
        return 1.0
    rc, hc = _ngrams(r, n), _ngrams(h, n)
    overlap = sum(min(c, rc[g]) for g, c in hc.items())
    return _f1(overlap, sum(hc.values()), sum(rc.values()))


def rouge_l(ref, hyp):
    r, h = ref.split(), hyp.split()
    if r == h:
        return 1.0
    return _f1(lcs_length(r, h), len(h), len(r))


def sentence_scores(ref, hyp):
    return {
        "bleu": bleu(ref, hyp),
        "meteor": meteor_lite(ref, hyp),
        "rouge1": rouge_n(ref, hyp, 1),
        "rouge2": rouge_n(ref, hyp, 2),
        "rougeL": rouge_l(ref, hyp),
        "char_accuracy": char_accuracy(ref, hyp),
    }


@dataclass
class MetricReport:
    scores: dict
    summary: dict
    count: int
    metadata: dict = field(default_factory=dict)

    def to_json(self):
        return {"metadata": self.metadata, "count": self.count, "summary": self.summary, "scores": self.scores}

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj):
        return cls(obj["scores"], obj["summary"], obj["count"], obj.get("metadata", {}))


def score_transcripts(transcripts, target="corrected", metadata=None):
    """Per-sentence metrics of ``target`` against ``truth`` plus mean and std."""
    if target not in ("corrected", "predicted"):
        raise ValueError(f"unknown scoring target {target!r}")
    scores = {name: [] for name in METRICS}
    for i, t in enumerate(transcripts):
        hyp = getattr(t, target)
        if hyp is None:
            raise ValueError(f"transcript {i} has no {target!r} text")
        for name, value in sentence_scores(t.truth, hyp).items():
            scores[name].append(value)
    summary = {}
    for name, values in scores.items():
        arr = np.asarray(values, dtype=np.float64)
        summary[name] = {"mean": float(arr.mean()) if arr.size else float("nan"),
                         "std": float(arr.std()) if arr.size else float("nan")}
    meta = {"target": target}
    meta.update(metadata or {})
    return MetricReport(scores, summary, len(transcripts), meta)


_TABLE_NAMES = {"bleu": "BLEU", "meteor": "METEOR", "rouge1": "ROUGE-1", "rouge2": "ROUGE-2",
                "rougeL": "ROUGE-L", "char_accuracy": "Char-Acc"}


def format_table(reports, metrics=METRICS, levels=("low", "medium", "high")):
    """Rows metric x noise level, one column per backend: ``mean ± std``.

    ``reports`` maps (backend, noise_level) to a MetricReport.
    """
    backends = sorted({b for b, _ in reports})
    header = ["Metric (Noise)"] + backends
    rows = []
    for metric in metrics:
        for level in levels:
            row = [f"{_TABLE_NAMES.get(metric, metric)} ({level.capitalize()})"]
            for b in backends:
                rep = reports.get((b, level))
                if rep is None:
                    row.append("-")
                else:
                    s = rep.summary[metric]
                    row.append(f"{s['mean']:.3f} ± {s['std']:.3f}")
            rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(header, widths)).rstrip(),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"
