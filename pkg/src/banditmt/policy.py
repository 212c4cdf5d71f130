"""Attentional encoder-decoder translation policy.

A single-layer bidirectional GRU encoder, a GRU decoder with additive
(default) or multiplicative attention, and a full-softmax output layer,
all built on the diffcore tape so every score is differentiable with
respect to the parameters. Scoring, ancestral sampling and beam decoding
share one forward implementation; sampling and decoding run under
`no_grad`.

Conventions: a scored target sequence carries its terminal end-of-sequence
token (or stops at the length cap); surface token lists in logs never
include reserved tokens, and `target_ids` appends the terminator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ["<pad>", "<s>", "</s>", "<unk>"]


class Vocabulary:
    """Ordered token list with fixed reserved indices for pad/bos/eos/unk."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens")
        if any(t in RESERVED for t in tokens):
            raise ValueError("reserved marker used as a token")
        self._tokens = RESERVED + tokens
        self._index = {t: i for i, t in enumerate(self._tokens)}

    def __len__(self):
        return len(self._tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def id(self, token):
        return self._index.get(token, UNK)

    def token(self, idx):
        return self._tokens[idx]

    def encode(self, tokens):
        return [self.id(t) for t in tokens]

    def decode(self, ids):
        return [self._tokens[i] for i in ids]

    def surface(self, ids):
        """Decode, dropping reserved tokens (for log/report output)."""
        return [self._tokens[i] for i in ids if i >= len(RESERVED)]

    def to_list(self):
        return self._tokens[len(RESERVED):]


@dataclass(frozen=True)
class PolicyConfig:
    embed_size: int = 32
    hidden_size: int = 32
    attn_size: int = 32
    attention: str = "additive"  # or "multiplicative"
    length_cap: int = 20
    dropout: float = 0.0


@dataclass
class ScoredSequence:
    tokens: list
    total: float
    per_token: list
    finished: bool = True


@dataclass
class Policy:
    """Parameter set plus the vocabularies and sizes it was built for."""

    cfg: PolicyConfig
    src_vocab: Vocabulary
    trg_vocab: Vocabulary
    params: dict = field(default_factory=dict)

    def param_arrays(self):
        return {k: t.data for k, t in self.params.items()}

    def clone(self):
        c = Policy(self.cfg, self.src_vocab, self.trg_vocab, {})
        for k, t in self.params.items():
            c.params[k] = dc.tensor(t.data.copy(), param=True, name=k)
        return c

    def load_arrays(self, arrays):
        for k, t in self.params.items():
            t.data = np.asarray(arrays[k], dtype=np.float64).reshape(t.data.shape)


def _glorot(rng, shape):
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def new_policy(src_vocab, trg_vocab, cfg=None, seed=0):
    cfg = cfg or PolicyConfig()
    rng = np.random.default_rng(seed)
    E, H, A = cfg.embed_size, cfg.hidden_size, cfg.attn_size
    Vs, Vt = len(src_vocab), len(trg_vocab)
    shapes = {
        "src_emb": (Vs, E),
        "trg_emb": (Vt, E),
        "enc_fwd_W": (E, 3 * H), "enc_fwd_U": (H, 3 * H), "enc_fwd_b": (3 * H,),
        "enc_bwd_W": (E, 3 * H), "enc_bwd_U": (H, 3 * H), "enc_bwd_b": (3 * H,),
        "dec_W": (E + 2 * H, 3 * H), "dec_U": (H, 3 * H), "dec_b": (3 * H,),
        "dec_init_W": (2 * H, H), "dec_init_b": (H,),
        "out_W": (H + 2 * H + E, Vt), "out_b": (Vt,),
    }
    if cfg.attention == "additive":
        shapes.update({"att_enc_W": (2 * H, A), "att_dec_W": (H, A),
                       "att_b": (A,), "att_v": (A,)})
    elif cfg.attention == "multiplicative":
        shapes.update({"att_bilinear": (H, 2 * H)})
    else:
        raise ValueError(f"unknown attention variant {cfg.attention!r}")
    params = {}
    for name, shape in shapes.items():
        if name.endswith("_b") or name == "att_v":
            data = np.zeros(shape) if name != "att_v" else _glorot(rng, shape)
        else:
            data = _glorot(rng, shape)
        params[name] = dc.tensor(data, param=True, name=name)
    return Policy(cfg, src_vocab, trg_vocab, params)


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------

def _gru(W, U, b, x, h):
    """One GRU step: x (B, In), h (B, H) -> (B, H)."""
    H = h.data.shape[1]
    ax = dc.add(dc.matmul(x, W), b)
    ah = dc.matmul(h, U)
    z = dc.sigmoid(dc.add(dc.slice_axis(ax, 1, 0, H), dc.slice_axis(ah, 1, 0, H)))
    r = dc.sigmoid(dc.add(dc.slice_axis(ax, 1, H, 2 * H),
                          dc.slice_axis(ah, 1, H, 2 * H)))
    cand = dc.tanh(dc.add(dc.slice_axis(ax, 1, 2 * H, 3 * H),
                          dc.mul(r, dc.slice_axis(ah, 1, 2 * H, 3 * H))))
    return dc.add(h, dc.mul(z, dc.wsum([cand, h], [1.0, -1.0])))


def _dropout_mask(shape, p, rng):
    keep = (rng.random(shape) >= p).astype(np.float64) / (1.0 - p)
    return dc.tensor(keep)


@dataclass
class Encoded:
    states: object    # Tensor (B, Ts, 2H)
    proj: object      # Tensor (B, Ts, A) for additive attention, else None
    init_state: object  # Tensor (B, H)
    src_len: int


def _validate_ids(ids, vocab, what):
    if len(ids) == 0:
        raise ValueError(f"empty {what} sequence")
    for i in ids:
        if not 0 <= int(i) < len(vocab):
            raise ValueError(f"{what} id {i} out of vocabulary")


def encode(policy, x_batch, dropout_rng=None):
    """Run the bidirectional encoder. x_batch: int array (B, Ts)."""
    p = policy.params
    cfg = policy.cfg
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=np.intp))
    B, Ts = x_batch.shape
    emb = dc.embedding(p["src_emb"], x_batch)  # (B, Ts, E)
    if dropout_rng is not None and cfg.dropout > 0:
        emb = dc.mul(emb, _dropout_mask(emb.data.shape, cfg.dropout, dropout_rng))
    zeros = dc.tensor(np.zeros((B, cfg.hidden_size)))
    fwd, h = [], zeros
    for t in range(Ts):
        h = _gru(p["enc_fwd_W"], p["enc_fwd_U"], p["enc_fwd_b"],
                 dc.select(emb, 1, t), h)
        fwd.append(h)
    bwd, h = [None] * Ts, zeros
    for t in range(Ts - 1, -1, -1):
        h = _gru(p["enc_bwd_W"], p["enc_bwd_U"], p["enc_bwd_b"],
                 dc.select(emb, 1, t), h)
        bwd[t] = h
    states = dc.stack([dc.concat([f, b], axis=-1) for f, b in zip(fwd, bwd)], axis=1)
    init = dc.tanh(dc.add(dc.matmul(dc.concat([fwd[-1], bwd[0]], axis=-1),
                                    p["dec_init_W"]), p["dec_init_b"]))
    proj = None
    if cfg.attention == "additive":
        A = cfg.attn_size
        flat = dc.reshape(states, (B * Ts, 2 * cfg.hidden_size))
        proj = dc.reshape(dc.matmul(flat, p["att_enc_W"]), (B, Ts, A))
    return Encoded(states, proj, init, Ts)


def tile_rows(t, n):
    """Broadcast a (1, H) tensor to (n, H) on the tape."""
    if t.data.shape[0] == n:
        return t
    return dc.add(t, dc.tensor(np.zeros((n, t.data.shape[1]))))


def decode_step(policy, enc, state, prev_ids, dropout_rng=None):
    """One decoder step. state (B, H), prev_ids (B,) -> (new_state, logits (B, V))."""
    p = policy.params
    cfg = policy.cfg
    B = state.data.shape[0]
    pe = dc.embedding(p["trg_emb"], np.asarray(prev_ids, dtype=np.intp))
    if dropout_rng is not None and cfg.dropout > 0:
        pe = dc.mul(pe, _dropout_mask(pe.data.shape, cfg.dropout, dropout_rng))
    if cfg.attention == "additive":
        qp = dc.matmul(state, p["att_dec_W"])  # (B, A)
        pre = dc.tanh(dc.add(dc.add(enc.proj, dc.reshape(qp, (B, 1, cfg.attn_size))),
                             p["att_b"]))
        flat = dc.reshape(pre, (-1, cfg.attn_size))
        scores = dc.reshape(dc.matmul(flat, p["att_v"]), (-1, enc.src_len))
        if scores.data.shape[0] == 1 and B > 1:
            scores = tile_rows(scores, B)
    else:
        q = dc.matmul(state, p["att_bilinear"])  # (B, 2H)
        scores = dc.dot_scores(q, enc.states)
    alpha = dc.softmax(scores)
    ctx = dc.attn_context(alpha, enc.states)  # (B, 2H)
    gru_in = dc.concat([pe, ctx], axis=-1)
    if dropout_rng is not None and cfg.dropout > 0:
        gru_in = dc.mul(gru_in, _dropout_mask(gru_in.data.shape, cfg.dropout, dropout_rng))
    new_state = _gru(p["dec_W"], p["dec_U"], p["dec_b"], gru_in, state)
    readout = dc.concat([new_state, ctx, pe], axis=-1)
    logits = dc.add(dc.matmul(readout, p["out_W"]), p["out_b"])
    return new_state, logits


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def score_sequences(policy, x_ids, y_list, dropout_rng=None):
    """Taped log-probabilities of several target sequences for one source.

    Returns (totals Tensor (B,), per_token list of float lists).
    """
    _validate_ids(x_ids, policy.src_vocab, "source")
    if not y_list:
        raise ValueError("no target sequences")
    for y in y_list:
        _validate_ids(y, policy.trg_vocab, "target")
    B = len(y_list)
    T = max(len(y) for y in y_list)
    prev = np.full((B, T), PAD, dtype=np.intp)
    tgt = np.full((B, T), PAD, dtype=np.intp)
    mask = np.zeros((B, T))
    prev[:, 0] = BOS
    for i, y in enumerate(y_list):
        tgt[i, :len(y)] = y
        prev[i, 1:len(y)] = y[:-1]
        mask[i, :len(y)] = 1.0
    enc = encode(policy, np.asarray([x_ids]), dropout_rng)
    state = tile_rows(enc.init_state, B)
    step_logps = []
    for t in range(T):
        state, logits = decode_step(policy, enc, state, prev[:, t], dropout_rng)
        logp = dc.pick(dc.log_softmax(logits), tgt[:, t])  # (B,)
        step_logps.append(dc.mul(logp, dc.tensor(mask[:, t])))
    totals = dc.ssum(dc.stack(step_logps, axis=1), axis=1)  # (B,)
    per_token = []
    for i, y in enumerate(y_list):
        per_token.append([float(step_logps[t].data[i]) for t in range(len(y))])
    return totals, per_token


def score_pairs(policy, x_batch, y_list, dropout_rng=None):
    """Taped log-probabilities for a batch of (source, target) pairs.

    x_batch: int array (B, Ts) with one shared source length; y_list may
    have heterogeneous lengths (padded + masked). Returns totals (B,).
    """
    x_batch = np.asarray(x_batch, dtype=np.intp)
    B = x_batch.shape[0]
    T = max(len(y) for y in y_list)
    prev = np.full((B, T), PAD, dtype=np.intp)
    tgt = np.full((B, T), PAD, dtype=np.intp)
    mask = np.zeros((B, T))
    prev[:, 0] = BOS
    for i, y in enumerate(y_list):
        tgt[i, :len(y)] = y
        prev[i, 1:len(y)] = y[:-1]
        mask[i, :len(y)] = 1.0
    enc = encode(policy, x_batch, dropout_rng)
    state = enc.init_state
    step_logps = []
    for t in range(T):
        state, logits = decode_step(policy, enc, state, prev[:, t], dropout_rng)
        logp = dc.pick(dc.log_softmax(logits), tgt[:, t])
        step_logps.append(dc.mul(logp, dc.tensor(mask[:, t])))
    return dc.ssum(dc.stack(step_logps, axis=1), axis=1)


def log_prob(policy, x_ids, y_ids):
    """Per-token and total log-probability of one target sequence."""
    totals, per_token = score_sequences(policy, x_ids, [list(y_ids)])
    return dc.select(totals, 0, 0), per_token[0]


def length_normalized_prob(policy, x_ids, y_ids):
    """Geometric mean of the per-token probabilities, in (0, 1]."""
    if len(y_ids) < 1:
        raise ValueError("empty target sequence")
    with dc.no_grad():
        total, _ = log_prob(policy, x_ids, y_ids)
    return float(np.exp(total.data / len(y_ids)))


# ---------------------------------------------------------------------------
# Sampling and decoding
# ---------------------------------------------------------------------------

def sample(policy, x_ids, k, rng):
    """Draw k sequences ancestrally from the per-step softmax.

    rng: seed int or numpy Generator. Duplicates are permitted; sequences
    end with EOS or stop at the length cap.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    _validate_ids(x_ids, policy.src_vocab, "source")
    cap = policy.cfg.length_cap
    with dc.no_grad():
        enc = encode(policy, np.asarray([x_ids]))
        state = tile_rows(enc.init_state, k)
        prev = np.full(k, BOS, dtype=np.intp)
        alive = np.ones(k, dtype=bool)
        tokens = [[] for _ in range(k)]
        logps = [[] for _ in range(k)]
        for _ in range(cap):
            state, logits = decode_step(policy, enc, state, prev)
            probs = dc.softmax(logits).data
            draws = rng.random(k)
            cum = probs.cumsum(axis=1)
            nxt = np.minimum((cum < draws[:, None]).sum(axis=1), probs.shape[1] - 1)
            logp = np.log(probs[np.arange(k), nxt])
            for i in range(k):
                if not alive[i]:
                    continue
                tokens[i].append(int(nxt[i]))
                logps[i].append(float(logp[i]))
                if nxt[i] == EOS:
                    alive[i] = False
            prev = np.where(alive, nxt, PAD)
            if not alive.any():
                break
    out = []
    for i in range(k):
        finished = bool(tokens[i]) and tokens[i][-1] == EOS
        out.append(ScoredSequence(tokens[i], float(sum(logps[i])), logps[i], finished))
    return out


def beam_decode(policy, x_ids, beam_size, length_normalize=True):
    """Best finished hypothesis under beam search.

    Score is total log-probability, divided by length when
    `length_normalize` is set. Equal scores break toward the
    lexicographically smaller token sequence. If nothing finishes within
    the length cap, the best unfinished hypothesis is returned flagged.

    All beam widths up to `beam_size` are explored jointly (one decoder
    batch per step over the union of their frontiers), and the result is
    the best hypothesis any of them finished. Widening the beam therefore
    only ever adds candidates, so the returned score is monotone in
    `beam_size`.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    _validate_ids(x_ids, policy.src_vocab, "source")
    cap = policy.cfg.length_cap

    def norm(total, length):
        return total / length if length_normalize else total

    with dc.no_grad():
        enc = encode(policy, np.asarray([x_ids]))
        root = ()
        info = {root: (0.0, [])}       # tokens -> (total, per-token logps)
        frontiers = {v: [root] for v in range(1, beam_size + 1)}
        states = {root: enc.init_state.data[0]}
        finished = {}
        for _ in range(cap):
            union = sorted({h for f in frontiers.values() for h in f})
            if not union:
                break
            prev = np.array([h[-1] if h else BOS for h in union], dtype=np.intp)
            st = dc.tensor(np.array([states[h] for h in union]))
            new_state, logits = decode_step(policy, enc, st, prev)
            logp = dc.log_softmax(logits).data  # (n, V)
            V = logp.shape[1]
            row = {h: i for i, h in enumerate(union)}
            next_frontiers, next_states = {}, {}
            for v, frontier in frontiers.items():
                if not frontier:
                    next_frontiers[v] = []
                    continue
                # frontier hypotheses share a length, so (frontier position,
                # token id) with a lexicographically sorted frontier orders
                # ties by the full token sequence
                frontier = sorted(frontier)
                rows = np.array([row[h] for h in frontier])
                totals = np.array([info[h][0] for h in frontier])
                cand = totals[:, None] + logp[rows]
                flat = cand.reshape(-1)
                tok_ids = np.tile(np.arange(V), len(frontier))
                pos_ids = np.repeat(np.arange(len(frontier)), V)
                order = np.lexsort((tok_ids, pos_ids, -flat))
                keep = []
                for idx in order[:v]:
                    h = frontier[pos_ids[idx]]
                    tok = int(tok_ids[idx])
                    tokens = h + (tok,)
                    if tokens not in info:
                        info[tokens] = (float(flat[idx]),
                                        info[h][1] + [float(logp[row[h], tok])])
                    if tok == EOS:
                        finished[tokens] = info[tokens]
                    else:
                        keep.append(tokens)
                        next_states[tokens] = new_state.data[row[h]]
                next_frontiers[v] = keep
            frontiers = next_frontiers
            states = next_states

    def best(cands):
        return min(cands, key=lambda item: (-norm(item[1][0], len(item[0])), item[0]))

    if finished:
        tokens, (total, toks_lp) = best(list(finished.items()))
        return ScoredSequence(list(tokens), total, toks_lp, True)
    # nothing finished within the cap: best unfinished, flagged
    explored = {h: info[h] for f in frontiers.values() for h in f}
    tokens, (total, toks_lp) = best(list(explored.items()))
    return ScoredSequence(list(tokens), total, toks_lp, False)


def greedy_decode(policy, x_ids, length_normalize=True):
    return beam_decode(policy, x_ids, 1, length_normalize)


def target_ids(policy, tokens):
    """Surface tokens -> target ids with the terminator appended (cap-aware)."""
    ids = policy.trg_vocab.encode(tokens)
    cap = policy.cfg.length_cap
    if len(ids) >= cap:
        return ids[:cap]
    return ids + [EOS]
