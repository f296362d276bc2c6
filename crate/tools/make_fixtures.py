#!/usr/bin/env python3
"""Regenerate the integration-test fixtures under crates/emodist/tests/fixtures/.

Everything here is deterministic: corpora and mock scripts come from fixed
seeds, and the expected-aggregates sheet (e2e_oracle.json) is computed by an
independent re-implementation of the scoring pipeline in this script, from
the corpus and script files alone. The Rust crate is never invoked, so the
sheet can catch scoring bugs instead of inheriting them.

Run from the repository root:  python3 tools/make_fixtures.py
"""

import json
import math
import random
from fractions import Fraction
from pathlib import Path

FIXTURES = Path(__file__).resolve().parent.parent / "crates" / "emodist" / "tests" / "fixtures"

# ---------------------------------------------------------------------------
# Label space (mirrors the built-in four-class conversational space)
# ---------------------------------------------------------------------------

LABELS = ["neutral", "happy", "angry", "sad"]
DISPLAY = {
    "neutral": "Neutral state",
    "happy": "Happiness",
    "angry": "Anger",
    "sad": "Sadness",
}
SYNONYMS = {
    "neutral": ["neutrality", "no emotion", "calm"],
    "happy": ["joy", "joyful", "excited"],
    "angry": ["mad", "frustrated", "frustration"],
    "sad": ["sorrow", "sorrowful", "unhappy"],
}

RESOLVE = {}
for canon in LABELS:
    for surface in [canon, DISPLAY[canon]] + SYNONYMS[canon]:
        RESOLVE[surface.strip().lower()] = canon


def resolve(surface):
    return RESOLVE.get(surface.strip().lower())


# ---------------------------------------------------------------------------
# Gold distributions: each annotator spreads 1/N mass equally over the
# distinct labels they chose; exact rationals, converted to floats once.
# ---------------------------------------------------------------------------

def gold_distribution(annotations):
    n = len(annotations)
    mass = {}
    for a in annotations:
        chosen = []
        for surface in a["labels"]:
            canon = resolve(surface)
            assert canon is not None, surface
            if canon not in chosen:
                chosen.append(canon)
        share = Fraction(1, n * len(chosen))
        for label in chosen:
            mass[label] = mass.get(label, Fraction(0)) + share
    assert sum(mass.values()) == 1
    vector = [0.0] * len(LABELS)
    for label, frac in mass.items():
        vector[LABELS.index(label)] = frac.numerator / frac.denominator
    return vector


# ---------------------------------------------------------------------------
# Response parsing: an independent mirror of the constrained-dictionary
# parser contract (extraction, canonicalization, validation, renormalization)
# used to compute expected outcomes for fixtures. ASCII inputs only, so byte
# offsets and character offsets coincide.
# ---------------------------------------------------------------------------

PARSE_EPSILON = 0.05


def _strip_code_fences(raw):
    if "```" not in raw:
        return None
    out = ""
    rest = raw
    while "```" in rest:
        pos = rest.find("```")
        out += rest[:pos]
        rest = rest[pos + 3:]
        tag_end = len(rest)
        for i, ch in enumerate(rest):
            if not (ch.isascii() and ch.isalnum()):
                tag_end = i
                break
        rest = rest[tag_end:]
    return out + rest


def _find_balanced_region(text):
    for start, ch in enumerate(text):
        if ch != "{":
            continue
        depth = 0
        in_quote = None
        escaped = False
        for i in range(start, len(text)):
            c = text[i]
            if escaped:
                escaped = False
                continue
            if in_quote is not None:
                if c == "\\":
                    escaped = True
                elif c == in_quote:
                    in_quote = None
            else:
                if c in "'\"":
                    in_quote = c
                elif c == "{":
                    depth += 1
                elif c == "}":
                    depth -= 1
                    if depth == 0:
                        return (start, i + 1)
    return None


def _split_top_level(body):
    pieces = []
    depth = 0
    in_quote = None
    escaped = False
    piece_start = 0
    for i, c in enumerate(body):
        if escaped:
            escaped = False
            continue
        if in_quote is not None:
            if c == "\\":
                escaped = True
            elif c == in_quote:
                in_quote = None
        else:
            if c in "'\"":
                in_quote = c
            elif c in "{[":
                depth += 1
            elif c in "}]":
                depth = max(depth - 1, 0)
            elif c == "," and depth == 0:
                pieces.append(body[piece_start:i])
                piece_start = i + 1
    pieces.append(body[piece_start:])
    return pieces


def _split_key_value(piece):
    in_quote = None
    escaped = False
    for i, c in enumerate(piece):
        if escaped:
            escaped = False
            continue
        if in_quote is not None:
            if c == "\\":
                escaped = True
            elif c == in_quote:
                in_quote = None
        else:
            if c in "'\"":
                in_quote = c
            elif c == ":":
                return piece[:i], piece[i + 1:]
    return None


def _unquote(s, flags):
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "'\"":
        if s[0] == '"':
            flags["quote_normalized"] = True
        return s[1:-1]
    if s and not s[0].isdigit() and not s.startswith(".") and not s.startswith("-"):
        flags["quote_normalized"] = True
    return s


def _parse_float(text):
    # Mirrors the Rust f64 grammar for the literals used in fixtures.
    try:
        v = float(text)
    except ValueError:
        return None
    if "_" in text or text.strip() != text:
        return None
    return v


def parse_response(raw, epsilon=PARSE_EPSILON):
    """Full mirror of the parse pipeline. Returns a dict with keys
    ok, failure, raw_sum, repairs, distribution (vector or None)."""

    def failed(kind, raw_sum, repairs):
        return {
            "ok": False,
            "failure": kind,
            "raw_sum": raw_sum,
            "repairs": repairs,
            "distribution": None,
        }

    repairs = []
    defenced = _strip_code_fences(raw)
    if defenced is not None:
        repairs.append("code_fence_stripped")
        text = defenced
    else:
        text = raw

    region = _find_balanced_region(text)
    if region is None:
        kind = "unbalanced_braces" if "{" in text else "no_map_found"
        return failed(kind, 0.0, [])

    before, after = text[: region[0]], text[region[1]:]
    if before.strip() or after.strip():
        repairs.append("prose_stripped")

    body = text[region[0] + 1 : region[1] - 1]
    entries = []
    flags = {"quote_normalized": False}
    for piece in _split_top_level(body):
        if not piece.strip():
            continue
        kv = _split_key_value(piece)
        if kv is None:
            return failed("non_numeric_value", 0.0, [])
        key = _unquote(kv[0].strip(), flags)
        value_text = _unquote(kv[1].strip(), flags)
        value = _parse_float(value_text)
        if value is None or not math.isfinite(value):
            return failed("non_numeric_value", 0.0, [])
        entries.append((key, value))
    if flags["quote_normalized"]:
        repairs.append("quote_normalized")

    raw_sum = 0.0
    for _, v in entries:
        raw_sum += v

    canonical = []  # list of [label, value] in first-seen order
    for surface, value in entries:
        canon = resolve(surface)
        if canon is None:
            repairs.append("out_of_space_dropped")
            continue
        if surface.strip() != canon:
            repairs.append("synonym_mapped")
        for pair in canonical:
            if pair[0] == canon:
                pair[1] += value
                break
        else:
            canonical.append([canon, value])

    if not canonical:
        return failed("empty_map", raw_sum, repairs)
    for label, value in canonical:
        if value < 0.0:
            return failed("negative_probability", raw_sum, repairs)
    if abs(raw_sum - 1.0) > epsilon:
        return failed("sum_out_of_range", raw_sum, repairs)
    kept_sum = 0.0
    for _, v in canonical:
        kept_sum += v
    if kept_sum <= 0.0:
        return failed("empty_map", raw_sum, repairs)
    for label in LABELS:
        if not any(l == label for l, _ in canonical):
            canonical.append([label, 0.0])
            repairs.append("missing_label_zero_filled")
    if kept_sum != 1.0:
        factor = 1.0 / kept_sum
        for pair in canonical:
            pair[1] = pair[1] * factor
        repairs.append("renormalized")
    vector = [0.0] * len(LABELS)
    for label, value in canonical:
        vector[LABELS.index(label)] += value
    return {
        "ok": True,
        "failure": None,
        "raw_sum": raw_sum,
        "repairs": repairs,
        "distribution": vector,
    }


# ---------------------------------------------------------------------------
# Metrics: an independent mirror of the aggregate definitions.
# ---------------------------------------------------------------------------

MAJORITY_TIE_EPSILON = 1e-9


def shannon_entropy(p):
    acc = 0.0
    for v in p:
        if v > 0.0:
            acc -= v * math.log2(v)
    return acc


def js_divergence(p, q):
    acc = 0.0
    for pi, qi in zip(p, q):
        mid = 0.5 * (pi + qi)
        if pi > 0.0:
            acc += 0.5 * pi * math.log2(pi / mid)
        if qi > 0.0:
            acc += 0.5 * qi * math.log2(qi / mid)
    return min(max(acc, 0.0), 1.0)


def bhattacharyya(p, q):
    acc = 0.0
    for pi, qi in zip(p, q):
        acc += math.sqrt(pi * qi)
    return min(max(acc, 0.0), 1.0)


def majority_gold(p):
    top = max(p)
    at_max = [i for i, v in enumerate(p) if v >= top - MAJORITY_TIE_EPSILON]
    return at_max[0] if len(at_max) == 1 else None


def majority_pred(p):
    top = max(p)
    at_max = [i for i, v in enumerate(p) if v >= top - MAJORITY_TIE_EPSILON]
    return at_max[0]


def bin_index(confidence, bins):
    if confidence <= 0.0:
        return 0
    return min(max(math.ceil(confidence * bins), 1), bins) - 1


def summarize(window_m, rows, ece_bins=10):
    """rows: list of dicts {gold: vector, pred: vector|None, failed: bool}.
    Mirrors the per-point aggregate definitions."""
    utterances = len(rows)
    parse_failures = sum(1 for r in rows if r["failed"])
    with_pred = [r for r in rows if r["pred"] is not None]
    scored = len(with_pred)
    failure_rate = parse_failures / utterances if utterances else 0.0

    js_vals = [js_divergence(r["gold"], r["pred"]) for r in with_pred]
    bc_vals = [bhattacharyya(r["gold"], r["pred"]) for r in with_pred]
    js_mean = sum(js_vals) / len(js_vals) if js_vals else None
    bc_mean = sum(bc_vals) / len(bc_vals) if bc_vals else None

    # pooled R^2 over every (utterance, label) probability cell
    r_squared = None
    if len(with_pred) >= 2:
        cells = [(g, p) for r in with_pred for g, p in zip(r["gold"], r["pred"])]
        if not all(g == cells[0][0] for g, _ in cells):
            mean = sum(g for g, _ in cells) / len(cells)
            ss_res = 0.0
            ss_tot = 0.0
            for g, p in cells:
                ss_res += (g - p) * (g - p)
                ss_tot += (g - mean) * (g - mean)
            if ss_tot != 0.0:
                r_squared = 1.0 - ss_res / ss_tot

    # top-label ECE over utterances with a prediction and a gold majority
    pool = [r for r in with_pred if majority_gold(r["gold"]) is not None]
    ece = None
    classwise_ece = None
    accuracy = weighted_f1 = uar = None
    classified = len(pool)
    if pool:
        n = len(pool)
        conf = [0.0] * ece_bins
        hits = [0.0] * ece_bins
        count = [0.0] * ece_bins
        for r in pool:
            c = max(r["pred"])
            ok = majority_pred(r["pred"]) == majority_gold(r["gold"])
            b = bin_index(c, ece_bins)
            conf[b] += c
            hits[b] += 1.0 if ok else 0.0
            count[b] += 1.0
        ece = sum(
            count[b] / n * abs(hits[b] / count[b] - conf[b] / count[b])
            for b in range(ece_bins)
            if count[b] > 0.0
        )

        total_cw = 0.0
        for li in range(len(LABELS)):
            conf = [0.0] * ece_bins
            hits = [0.0] * ece_bins
            count = [0.0] * ece_bins
            for r in pool:
                p = r["pred"][li]
                b = bin_index(p, ece_bins)
                conf[b] += p
                hits[b] += 1.0 if majority_gold(r["gold"]) == li else 0.0
                count[b] += 1.0
            total_cw += sum(
                count[b] / n * abs(hits[b] / count[b] - conf[b] / count[b])
                for b in range(ece_bins)
                if count[b] > 0.0
            )
        classwise_ece = total_cw / len(LABELS)

        k = len(LABELS)
        cm = [[0] * k for _ in range(k)]
        for r in pool:
            cm[majority_gold(r["gold"])][majority_pred(r["pred"])] += 1
        total = sum(sum(row) for row in cm)
        accuracy = sum(cm[i][i] for i in range(k)) / total
        weighted_f1 = 0.0
        recalls = []
        for c in range(k):
            support = sum(cm[c])
            predicted = sum(cm[r][c] for r in range(k))
            tp = float(cm[c][c])
            precision = tp / predicted if predicted > 0 else 0.0
            recall = tp / support if support > 0 else 0.0
            f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0.0 else 0.0
            weighted_f1 += f1 * support / total
            if support > 0:
                recalls.append(recall)
        uar = sum(recalls) / len(recalls)

    return {
        "window_m": window_m,
        "utterances": utterances,
        "scored": scored,
        "parse_failures": parse_failures,
        "skipped": 0,
        "failure_rate": failure_rate,
        "classified": classified,
        "js_mean": js_mean,
        "bc_mean": bc_mean,
        "r_squared": r_squared,
        "ece": ece,
        "classwise_ece": classwise_ece,
        "accuracy": accuracy,
        "weighted_f1": weighted_f1,
        "uar": uar,
    }


def improvements(points):
    def rel_decrease(base, value):
        if base is None or value is None or base == 0.0:
            return None
        return (base - value) / abs(base)

    def rel_increase(base, value):
        if base is None or value is None or base == 0.0:
            return None
        return (value - base) / abs(base)

    if not points:
        return []
    base = points[0]
    return [
        {
            "window_m": p["window_m"],
            "js_improvement": rel_decrease(base["js_mean"], p["js_mean"]),
            "bc_improvement": rel_increase(base["bc_mean"], p["bc_mean"]),
            "r_squared_improvement": rel_increase(base["r_squared"], p["r_squared"]),
            "ece_improvement": rel_decrease(base["ece"], p["ece"]),
        }
        for p in points[1:]
    ]


# ---------------------------------------------------------------------------
# Corpus construction
# ---------------------------------------------------------------------------

SENTENCES = [
    "We could hide away.",
    "Run away?",
    "Mm hmm. We'll build a bunker and never come out.",
    "I really don't want to go, I don't want to go...",
    "That's the best news I've heard all week!",
    "You never listen to a word I say.",
    "The meeting got moved to Thursday.",
    "I can't believe you did that without asking me.",
    "Everything is going to be fine, I promise.",
    "It's been raining since Tuesday.",
    "Honestly, I'm just tired of all of it.",
    "Did you see the look on his face?",
    "We won the contract, we actually won it!",
    "Please just leave me alone for a while.",
    "The train was late again this morning.",
    "Stop interrupting me when I'm talking.",
    "I miss how things used to be.",
    "Sure, that works for me.",
    "This is the third time you've cancelled.",
    "I got the job! They called an hour ago.",
    "Whatever you think is best.",
    "Nobody asked for your opinion.",
    "I keep thinking about what she said.",
    "Let's grab lunch after the review.",
    "He didn't even say goodbye.",
]

# Annotation patterns over (L, O1, O2) = rotating label triples. Each entry is
# a list of per-annotator label lists. The mix covers unanimous, majority,
# tied, and multi-label cases so every entropy stratum is populated.
PATTERNS = [
    [["L"], ["L"], ["L"]],                    # point mass
    [["L"], ["L"], ["O1"]],                   # 2/3 vs 1/3
    [["L"], ["O1"], ["O2"]],                  # three-way tie, no majority
    [["L", "O1"], ["L"], ["O1"]],             # multi-label, 1/2 vs 1/2 tie
    [["L"], ["L"], ["L"], ["O1"]],            # 3/4 vs 1/4
    [["L", "O1"], ["L"]],                     # multi-label, 3/4 vs 1/4
    [["L"], ["O1"]],                          # two-way tie, no majority
    [["L"], ["L"], ["O1"], ["O2"]],           # 1/2, 1/4, 1/4
    [["L"]],                                  # single annotator
    [["L", "O1", "O2"], ["L"], ["L"]],        # multi-label, 7/9, 1/9, 1/9
    [["L"], ["L"], ["L"], ["L"], ["O1"]],     # 4/5 vs 1/5
    [["L"], ["L"], ["L"], ["O1"], ["O2"]],    # 3/5, 1/5, 1/5
]


def materialize_pattern(pattern, index):
    l = LABELS[index % 4]
    o1 = LABELS[(index + 1) % 4]
    o2 = LABELS[(index + 2) % 4]
    mapping = {"L": l, "O1": o1, "O2": o2}
    return [
        {"annotator_id": f"a{k + 1}", "labels": [mapping[s] for s in slot]}
        for k, slot in enumerate(pattern)
    ]


def build_corpus_50():
    rng = random.Random(0x50C0)
    records = []
    index = 0
    for d in range(1, 6):
        for pos in range(10):
            speaker = f"Ses0{d}_{'F' if pos % 2 == 0 else 'M'}"
            records.append(
                {
                    "utterance_id": f"d{d}_u{pos}",
                    "dialogue_id": f"d{d}",
                    "speaker_id": speaker,
                    "position": pos,
                    "text": SENTENCES[rng.randrange(len(SENTENCES))],
                    "annotations": materialize_pattern(
                        PATTERNS[index % len(PATTERNS)], index
                    ),
                }
            )
            index += 1
    return records


def build_corpus_isolated():
    records = []
    for i in range(30):
        annotations = materialize_pattern(PATTERNS[i % len(PATTERNS)], i)
        # exactly ten records carry a multi-label annotator
        has_multi = any(len(a["labels"]) > 1 for a in annotations)
        if i % 3 == 0 and not has_multi:
            annotations[0]["labels"] = [LABELS[i % 4], LABELS[(i + 1) % 4]]
        elif i % 3 != 0 and has_multi:
            annotations = [
                {"annotator_id": a["annotator_id"], "labels": a["labels"][:1]}
                for a in annotations
            ]
        records.append(
            {
                "utterance_id": f"iso_u{i:02}",
                "dialogue_id": f"iso_d{i:02}",
                "speaker_id": f"Spk{i % 6:02}",
                "position": 0,
                "text": SENTENCES[i % len(SENTENCES)],
                "annotations": annotations,
            }
        )
    multi = sum(
        1
        for r in records
        if any(len(a["labels"]) > 1 for a in r["annotations"])
    )
    assert multi == 10, multi
    return records


# ---------------------------------------------------------------------------
# Speech features (first name/value pair pinned by the reference text)
# ---------------------------------------------------------------------------

SPEECH_LLDS = [
    "Fundamental Frequency in Semitones from 27.5 Hz",
    "Loudness",
    "Spectral Flux",
    "MFCC 1",
    "MFCC 2",
    "MFCC 3",
    "MFCC 4",
    "Jitter",
    "Shimmer",
    "Harmonics to Noise Ratio",
    "Alpha Ratio",
    "Hammarberg Index",
    "Spectral Slope 0-500 Hz",
    "Spectral Slope 500-1500 Hz",
    "Formant 1 Frequency",
    "Formant 1 Bandwidth",
    "Formant 1 Amplitude",
    "Formant 2 Frequency",
    "Formant 2 Amplitude",
    "Formant 3 Frequency",
    "Formant 3 Amplitude",
    "Voiced Segment Length",
]
SPEECH_STATS = ["Average", "Standard Deviation of", "20th Percentile of", "80th Percentile of"]


def speech_names():
    names = []
    for lld in SPEECH_LLDS:
        for stat in SPEECH_STATS:
            names.append(f"{stat} {lld}")
    assert len(names) == 88
    assert names[0] == "Average Fundamental Frequency in Semitones from 27.5 Hz"
    return names


def speech_values():
    rng = random.Random(0x5EE7)
    values = [37.039505]
    while len(values) < 88:
        values.append(rng.randrange(-2_000_000, 8_000_000) / 1000.0)
    return values


# ---------------------------------------------------------------------------
# Golden prompt texts (hand-transcribed reference wording; the typos of the
# published examples table are normalized to the canonical utterance texts)
# ---------------------------------------------------------------------------

GOLDEN_ZERO_SHOT = (
    "Two speakers are talking.\n"
    "The conversation is:\n"
    'Ses01_F: "We could hide away."\n'
    'Ses01_M: "Run away?"\n'
    "Ses01_F: \"Mm hmm. We'll build a bunker and never come out.\"\n"
    "Now Ses01_M says: \"I really don't want to go, I don't want to go...\"\n"
    "Predict the probability of the emotion of the sentence from the options "
    "[neutral, happy, angry, sad], consider the conversation context.\n"
    "Output satisfies the following rules.\n"
    "Rule 1: Generate a dictionary of emotion probabilities in format of "
    "{'neutral':0.1, 'happy':0.0, 'angry':0.1, 'sad':0.8}. If you think there "
    "is only one emotion in the sentence, then give the probability to 1.\n"
    "Rule 2: Ensure the sum of probability equal to 1.\n"
    "Rule 3: Do not explain, only need the dictionary.\n"
    "Please check again whether your output follows the three rules.\n"
)

GOLDEN_EXAMPLES = (
    "Examples:\n"
    "Sentence 1: Ses01_F: \"We could hide away.\" Emotion probabilities: "
    "{'Sadness': 0.33, 'Happiness': 0.33, 'Neutral state': 0.33}\n"
    "Sentence 2: Ses01_M: \"Run away?\" Emotion probabilities: "
    "{'Sadness': 0.67, 'Neutral state': 0.33}\n"
    "Sentence 3: Ses01_F: \"Mm hmm. We'll build a bunker and never come out.\" "
    "Emotion probabilities: {'Sadness': 0.67, 'Happiness': 0.33}\n"
)


def golden_speech_segment(names, values):
    pairs = ", ".join(f"{n}: {v:.6f}" for n, v in zip(names, values))
    return (
        "Here are 88 speech features of the current speaker's sentence. "
        "The features are: " + pairs + "\n"
    )


def build_golden_corpus(names, values):
    votes = [
        [["sad"], ["happy"], ["neutral"]],
        [["sad"], ["sad"], ["neutral"]],
        [["sad"], ["sad"], ["happy"]],
        [["sad"], ["sad"], ["sad"]],
    ]
    texts = [
        "We could hide away.",
        "Run away?",
        "Mm hmm. We'll build a bunker and never come out.",
        "I really don't want to go, I don't want to go...",
    ]
    records = []
    for pos in range(4):
        record = {
            "utterance_id": f"d1_u{pos}",
            "dialogue_id": "d1",
            "speaker_id": "Ses01_F" if pos % 2 == 0 else "Ses01_M",
            "position": pos,
            "text": texts[pos],
            "annotations": [
                {"annotator_id": f"a{k + 1}", "labels": labels}
                for k, labels in enumerate(votes[pos])
            ],
        }
        if pos == 3:
            record["speech_features"] = {"names": names, "values": values}
        records.append(record)
    return records


# ---------------------------------------------------------------------------
# Mock scripts
# ---------------------------------------------------------------------------

E2E_WINDOWS = [0, 3, 5]
E2E_MALFORMED = {
    0: {
        "d1_u2": "I cannot determine the emotion of this sentence.",
        "d3_u7": "{'neutral': 0.5, 'happy': abc}",
    },
    3: {
        "d2_u4": "{'neutral': 0.2, 'happy': 0.2}",
        "d4_u1": "{'neutral': -0.2, 'happy': 1.2}",
    },
    5: {
        "d5_u0": "Result: {'neutral': 0.5, 'happy': 0.5",
        "d1_u8": "{}",
    },
}


def composition_from_gold(gold, shift):
    """An integer composition of 100 close to the gold distribution, with a
    deterministic window-dependent perturbation (so sweep points differ)."""
    raw = [v * 100 for v in gold]
    floors = [math.floor(v) for v in raw]
    remainder = 100 - sum(floors)
    order = sorted(range(len(gold)), key=lambda i: (raw[i] - floors[i], i), reverse=True)
    for i in order[:remainder]:
        floors[i] += 1
    # move `shift` points from the largest cell to the smallest nonzero cell
    hi = max(range(len(floors)), key=lambda i: (floors[i], -i))
    lo = min(
        (i for i in range(len(floors)) if floors[i] > 0 and i != hi),
        key=lambda i: (floors[i], i),
        default=None,
    )
    if lo is not None and floors[hi] - shift >= floors[lo] + shift:
        floors[hi] -= shift
        floors[lo] += shift
    assert sum(floors) == 100 and all(f >= 0 for f in floors)
    return floors


def top_two(gold):
    order = sorted(range(len(gold)), key=lambda i: (gold[i], i), reverse=True)
    return order[0], order[1]


def styled_response(style, gold, shift):
    comp = composition_from_gold(gold, shift)
    a, b = top_two(gold)
    if style == 0:
        inner = ", ".join(
            f"'{label}': {comp[i] / 100}" for i, label in enumerate(LABELS)
        )
        return "{" + inner + "}"
    if style == 1:
        # deliberately ranks the runner-up first: a misclassification case
        return f"{{'{LABELS[b]}': 0.75, '{LABELS[a]}': 0.25}}"
    if style == 2:
        share = comp[a] + comp[b]
        pa = comp[a] / share if share else 0.5
        return f'```json\n{{"{LABELS[a]}": {round(pa, 2)}, "{LABELS[b]}": {round(1 - round(pa, 2), 2)}}}\n```'
    if style == 3:
        return (
            "The distribution is: "
            f"{{'{DISPLAY[LABELS[a]]}': 0.6, '{DISPLAY[LABELS[b]]}': 0.4}}"
        )
    if style == 4:
        target = b if shift % 2 == 1 else a
        return f"{{'{LABELS[target]}': 1}}"
    if style == 5:
        return f"{{'{LABELS[a]}': 0.5, '{LABELS[b]}': 0.47, 'surprised': 0.03}}"
    raise AssertionError(style)


def build_e2e_script(corpus):
    script = {}
    for m in E2E_WINDOWS:
        for i, record in enumerate(corpus):
            uid = record["utterance_id"]
            if uid in E2E_MALFORMED[m]:
                script[f"{uid}@{m}"] = E2E_MALFORMED[m][uid]
                continue
            gold = gold_distribution(record["annotations"])
            style = (i + m * 7) % 6
            script[f"{uid}@{m}"] = styled_response(style, gold, shift=min(m, 3))
    return script


def build_directional_script(corpus):
    script = {}
    for record in corpus:
        uid = record["utterance_id"]
        gold = gold_distribution(record["annotations"])
        wrong = LABELS[(majority_pred(gold) + 1) % 4]
        script[f"{uid}@0"] = f"{{'{wrong}': 1}}"
        support = [(LABELS[i], v) for i, v in enumerate(gold) if v > 0.0]
        inner = ", ".join(f"'{label}': {repr(v)}" for label, v in support)
        script[f"{uid}@5"] = "{" + inner + "}"
    return script


# ---------------------------------------------------------------------------
# Oracle sheet for the end-to-end sweep
# ---------------------------------------------------------------------------

def build_e2e_oracle(corpus, script):
    points = []
    for m in E2E_WINDOWS:
        rows = []
        for record in corpus:
            uid = record["utterance_id"]
            outcome = parse_response(script[f"{uid}@{m}"])
            rows.append(
                {
                    "gold": gold_distribution(record["annotations"]),
                    "pred": outcome["distribution"],
                    "failed": outcome["failure"] is not None,
                }
            )
        points.append(summarize(m, rows))
    return {"windows": E2E_WINDOWS, "points": points, "improvements": improvements(points)}


# ---------------------------------------------------------------------------
# Malformed-response corpus with expected outcomes
# ---------------------------------------------------------------------------

def build_malformed_cases():
    cases = [
        ("reference_format", "{'neutral':0.1, 'happy':0.0, 'angry':0.1, 'sad':0.8}"),
        ("json_double_quotes", '{"neutral": 0.25, "happy": 0.75}'),
        ("code_fence_json", '```json\n{"sad": 1.0}\n```'),
        ("prose_wrapped", "Sure, here's my estimate: {'happy': 1}."),
        ("bare_keys", "{neutral: 0.5, sad: 0.5}"),
        ("display_name_keys", "{'Neutral state': 0.5, 'Sadness': 0.5}"),
        ("uppercase_synonym", "{'NEUTRAL': 0.4, 'sad': 0.58}"),
        ("out_of_space_extra", "{'neutral': 0.5, 'happy': 0.47, 'surprised': 0.03}"),
        ("duplicate_canonical", "{'sad': 0.25, 'Sadness': 0.25, 'neutral': 0.5}"),
        ("leading_dot_values", "{'sad': .8, 'neutral': .2}"),
        ("integer_values", "{'happy': 1, 'neutral': 0}"),
        ("sum_high_within_tolerance", "{'neutral': 0.52, 'sad': 0.52}"),
        ("sum_too_low", "{'neutral': 0.3, 'happy': 0.3}"),
        ("sum_too_high", "{'neutral': 1.2, 'happy': 0.2}"),
        ("negative_probability", "{'neutral': -0.2, 'happy': 1.2}"),
        ("non_numeric_value", "{'neutral': high, 'happy': low}"),
        ("no_map_at_all", "I am unable to comply with this request."),
        ("unbalanced_braces", "Result: {'neutral': 0.6, 'happy': 0.4"),
        ("empty_map", "{}"),
        ("all_mass_out_of_space", "{'bored': 0.5, 'tense': 0.5}"),
        ("quoted_comma_in_key", "{'neutral': 0.5, 'happy, sort of': 0.5}"),
        ("fenced_and_prose", "Here:\n```json\n{'angry': 1.0}\n```\nDone."),
    ]
    out = []
    for name, response in cases:
        out.append({"name": name, "response": response, "expected": parse_response(response)})

    expected_by_name = {c["name"]: c["expected"] for c in out}
    # spot checks: the computed expectations must match the documented contract
    assert expected_by_name["reference_format"]["repairs"] == []
    assert expected_by_name["reference_format"]["ok"]
    assert expected_by_name["json_double_quotes"]["repairs"] == [
        "quote_normalized",
        "missing_label_zero_filled",
        "missing_label_zero_filled",
    ]
    assert expected_by_name["code_fence_json"]["repairs"][0] == "code_fence_stripped"
    assert expected_by_name["prose_wrapped"]["repairs"][0] == "prose_stripped"
    assert expected_by_name["uppercase_synonym"]["repairs"].count("synonym_mapped") == 1
    assert expected_by_name["uppercase_synonym"]["repairs"][-1] == "renormalized"
    assert expected_by_name["out_of_space_extra"]["repairs"].count("out_of_space_dropped") == 1
    assert expected_by_name["sum_too_low"]["failure"] == "sum_out_of_range"
    assert expected_by_name["sum_too_high"]["failure"] == "sum_out_of_range"
    assert expected_by_name["negative_probability"]["failure"] == "negative_probability"
    assert expected_by_name["non_numeric_value"]["failure"] == "non_numeric_value"
    assert expected_by_name["no_map_at_all"]["failure"] == "no_map_found"
    assert expected_by_name["unbalanced_braces"]["failure"] == "unbalanced_braces"
    assert expected_by_name["empty_map"]["failure"] == "empty_map"
    assert expected_by_name["all_mass_out_of_space"]["failure"] == "empty_map"
    assert expected_by_name["all_mass_out_of_space"]["raw_sum"] == 1.0
    assert expected_by_name["duplicate_canonical"]["distribution"][3] == 0.5
    assert expected_by_name["quoted_comma_in_key"]["repairs"] == [
        "out_of_space_dropped",
        "missing_label_zero_filled",
        "missing_label_zero_filled",
        "missing_label_zero_filled",
        "renormalized",
    ]
    assert len(out) >= 20
    return out


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def write_jsonl(path, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def write_json(path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_text(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def main():
    corpus_50 = build_corpus_50()
    write_jsonl(FIXTURES / "corpus_50.jsonl", corpus_50)

    write_jsonl(FIXTURES / "corpus_isolated.jsonl", build_corpus_isolated())

    names, values = speech_names(), speech_values()
    golden_corpus = build_golden_corpus(names, values)
    write_jsonl(FIXTURES / "golden_corpus.jsonl", golden_corpus)

    bad = [dict(golden_corpus[0])]
    bad[0].pop("speech_features", None)
    bad.append(
        {
            "utterance_id": "bad_u0",
            "dialogue_id": "bad_d0",
            "speaker_id": "Spk00",
            "position": 0,
            "text": "The feature vector is one element short.",
            "annotations": [{"annotator_id": "a1", "labels": ["neutral"]}],
            "speech_features": {"names": names[:87], "values": values[:87]},
        }
    )
    write_jsonl(FIXTURES / "corpus_bad_feature_len.jsonl", bad)

    write_text(FIXTURES / "golden_prompts" / "full_zero_shot.txt", GOLDEN_ZERO_SHOT)
    write_text(FIXTURES / "golden_prompts" / "examples_segment.txt", GOLDEN_EXAMPLES)
    write_text(
        FIXTURES / "golden_prompts" / "speech_segment.txt",
        golden_speech_segment(names, values),
    )

    script = build_e2e_script(corpus_50)
    write_json(FIXTURES / "e2e_script.json", script)
    write_json(FIXTURES / "e2e_oracle.json", build_e2e_oracle(corpus_50, script))
    write_json(FIXTURES / "directional_script.json", build_directional_script(corpus_50))
    write_json(FIXTURES / "malformed_responses.json", build_malformed_cases())

    print(f"fixtures written under {FIXTURES}")


if __name__ == "__main__":
    main()
