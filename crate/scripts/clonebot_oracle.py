"""Independent Python re-implementation of the retrieval pipeline.

Used to derive the expected values frozen into the Rust tests. It shares no
code with the Rust crates: parsing, collapsing, splitting, pairing, hashing,
distances and BLEU are all written out again here from their definitions.
"""
import json
import math
import unicodedata
from collections import Counter

import numpy as np

MASK = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
BUCKET_SEED = 0x9E3779B97F4A7C15
SIGN_SEED = 0xD1B54A32D192ED03


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & MASK
    return h


def fmix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def seeded(seed: int, token: str) -> int:
    return fmix64(fnv1a64(token.encode("utf-8")) ^ seed)


def split_words(text):
    out, run = [], ""
    for ch in text:
        if ch.isalnum():
            run += ch
            continue
        if run:
            out.append(run)
            run = ""
        if not ch.isspace():
            out.append(ch)
    if run:
        out.append(run)
    return out


def bucket(token, dim):
    return seeded(BUCKET_SEED, token) % dim


def sign(token):
    return 1.0 if seeded(SIGN_SEED, token) >> 63 == 0 else -1.0


def embed(text, dim):
    lowered = text.strip().lower()
    assert lowered, "empty text"
    acc = [0.0] * dim
    for piece in split_words(lowered):
        acc[bucket(piece, dim)] += sign(piece)
    n = math.sqrt(sum(v * v for v in acc))
    if n == 0.0:
        out = np.zeros(dim, dtype=np.float32)
        out[bucket(lowered, dim)] = 1.0
        return out
    return np.array([v / n for v in acc], dtype=np.float32)


def cosine_distance(a, b):
    dot = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        dot += x * y
    return float(np.float32(1.0 - dot))


def l2_distance(a, b):
    s = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        d = x - y
        s += d * d
    return float(np.float32(math.sqrt(s)))


# ---- corpus -------------------------------------------------------------

def normalize(text):
    return unicodedata.normalize("NFC", text).strip()


def parse_jsonl(lines):
    """Returns conversations as lists of dicts in iteration order."""
    groups, order = {}, []
    last_ts = {}
    for line in lines:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            continue
        conv = obj.get("conversation_id")
        spk = obj.get("speaker_id")
        text = obj.get("text")
        if not isinstance(conv, str) or not isinstance(spk, str) or not isinstance(text, str):
            continue
        text = normalize(text)
        if not text or not conv or not spk:
            continue
        ts = obj.get("timestamp")
        if ts is None:
            ts = last_ts.get(conv, 0)
        last_ts[conv] = ts
        if conv not in groups:
            groups[conv] = []
            order.append(conv)
        groups[conv].append({"conv": conv, "speaker": spk, "ts": ts, "text": text})
    convs = []
    next_id = 0
    for conv in order:
        rows = sorted(groups[conv], key=lambda r: r["ts"])  # stable
        for r in rows:
            r["id"] = next_id
            next_id += 1
        convs.append(rows)
    return convs


def collapse(convs, joiner=" "):
    out = []
    for rows in convs:
        merged = []
        for r in rows:
            if merged and merged[-1]["speaker"] == r["speaker"]:
                merged[-1]["text"] += joiner + r["text"]
            else:
                merged.append(dict(r))
        out.append(merged)
    return out


def renumber(convs):
    next_id = 0
    out = []
    for rows in convs:
        fresh = []
        for r in rows:
            r = dict(r)
            r["id"] = next_id
            next_id += 1
            fresh.append(r)
        out.append(fresh)
    return out


def split(convs, fraction):
    cuts = [len(c) - int(math.floor(len(c) * fraction + 1e-9)) for c in convs]
    covered = set()
    for c, cut in zip(convs, cuts):
        covered.update(r["speaker"] for r in c[:cut])
    for i, c in enumerate(convs):
        tail = c[cuts[i]:]
        last_bad = None
        for j, r in enumerate(tail):
            if r["speaker"] not in covered:
                last_bad = j
        if last_bad is not None:
            new_cut = cuts[i] + last_bad + 1
            covered.update(r["speaker"] for r in c[cuts[i]:new_cut])
            cuts[i] = new_cut
    train = [c[:cut] for c, cut in zip(convs, cuts)]
    test = [c[cut:] for c, cut in zip(convs, cuts)]
    return train, test


# ---- retrieval ----------------------------------------------------------

def build_pairs(convs, target, turns):
    pairs = []
    for c in convs:
        for i in range(1, len(c)):
            if c[i]["speaker"] != target:
                continue
            window = c[max(0, i - turns):i]
            pairs.append({
                "context": "\n".join(r["text"] for r in window),
                "response": c[i]["text"],
                "record_id": c[i]["id"],
            })
    return pairs


def retrieve(pairs_with_vecs, query, dim, metric="cosine"):
    if not pairs_with_vecs:
        return None
    q = embed(query, dim)
    dist = cosine_distance if metric == "cosine" else l2_distance
    scored = [(dist(q, v), p["record_id"], p) for p, v in pairs_with_vecs]
    scored.sort(key=lambda t: (t[0], t[1]))
    return scored[0]


# ---- BLEU ---------------------------------------------------------------

def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(cands, refs):
    matches = [0] * 4
    totals = [0] * 4
    c = r = 0
    for cand, ref in zip(cands, refs):
        c += len(cand)
        r += len(ref)
        for n in range(1, 5):
            cc, rc = ngrams(cand, n), ngrams(ref, n)
            matches[n - 1] += sum(min(k, rc[g]) for g, k in cc.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if c == 0:
        bp = 1.0 if r == 0 else 0.0
    elif c < r:
        bp = math.exp(1.0 - r / c)
    else:
        bp = 1.0
    if any(p == 0.0 for p in precisions):
        score = 0.0
    else:
        s = 0.0
        for p in precisions:
            s += math.log(p)
        score = bp * math.exp(s / 4)
    return {
        "score": score,
        "precisions": precisions,
        "matches": matches,
        "totals": totals,
        "brevity_penalty": bp,
        "candidate_length": c,
        "reference_length": r,
    }
