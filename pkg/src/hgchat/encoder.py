"""Graph-side model: node feature initialization, typed graph convolution,
and the response-emotion predictor.

Utterances are encoded by an LSTM whose last hidden state, concatenated
with a learned position embedding (indexed from the latest turn backwards),
feeds a multi-head self-attention over the dialogue history. Face and
audio vectors are projected into the shared width by per-modality
feed-forward nets; emotion and speaker features come from learned tables.
"""
from __future__ import annotations

import logging

import numpy as np

from .config import ConfigError, TrainConfig
from .corpus import EMOTION_INDEX, PAD, DialogueRecord, SpeakerRoster, Vocab, distinct_speakers, tokenize
from .diffcore import (Tensor, add, affine, concat_cols, concat_rows, elem_mul,
                       matmul, mean_rows, relu, row_lookup, sigmoid,
                       softmax_rows, tanh, transpose)
from .graph import HeteroGraph, NODE_TYPES, NodeType
from .layers import Dropouter, ffn, multihead
from .params import ModelParams

log = logging.getLogger(__name__)

_TYPE_CODES = {NodeType.UTTERANCE: "u", NodeType.FACE: "f", NodeType.AUDIO: "a",
               NodeType.EMOTION: "e", NodeType.SPEAKER: "s"}


def utterance_token_ids(record: DialogueRecord, vocab: Vocab, max_len: int) -> list[list[int]]:
    rows = []
    for utt in record.utterances:
        toks = tokenize(utt)
        if len(toks) > max_len:
            log.warning("utterance truncated from %d to %d tokens", len(toks), max_len)
            toks = toks[:max_len]
        ids = vocab.encode(toks)
        rows.append(ids if ids else [PAD])
    return rows


def lstm_last_hidden(params: ModelParams, token_rows: list[list[int]],
                     d_hidden: int) -> Tensor:
    """Run the recurrence over all utterances at once and gather each
    utterance's state at its own final token.

    Short utterances are padded at the tail; the padded steps never feed
    the gathered states because state at step t only depends on tokens
    up to t.
    """
    n = len(token_rows)
    lengths = [len(row) for row in token_rows]
    width = max(lengths)
    h = Tensor(np.zeros((n, d_hidden)))
    c = Tensor(np.zeros((n, d_hidden)))
    per_step = []
    for step in range(width):
        ids = [row[step] if step < len(row) else PAD for row in token_rows]
        x = row_lookup(params["enc.word_emb"], ids)
        gate_in = sigmoid(add(affine(x, params["enc.lstm.wi"], params["enc.lstm.bi"]),
                              matmul(h, params["enc.lstm.ui"])))
        gate_forget = sigmoid(add(affine(x, params["enc.lstm.wf"], params["enc.lstm.bf"]),
                                  matmul(h, params["enc.lstm.uf"])))
        gate_out = sigmoid(add(affine(x, params["enc.lstm.wo"], params["enc.lstm.bo"]),
                               matmul(h, params["enc.lstm.uo"])))
        candidate = tanh(add(affine(x, params["enc.lstm.wc"], params["enc.lstm.bc"]),
                             matmul(h, params["enc.lstm.uc"])))
        c = add(elem_mul(gate_forget, c), elem_mul(gate_in, candidate))
        h = elem_mul(gate_out, tanh(c))
        per_step.append(h)
    stacked = concat_rows(*per_step)  # [width*n, d_hidden]
    gather = [(length - 1) * n + i for i, length in enumerate(lengths)]
    return row_lookup(stacked, gather)


def encode_utterances(record: DialogueRecord, params: ModelParams, vocab: Vocab,
                      cfg: TrainConfig, drop: Dropouter | None = None) -> Tensor:
    """Contextual utterance features: attention over [state; position] rows.

    Position indices run from N for the first history turn down to 1 for
    the latest, so the most recent turn always gets the same embedding row.
    """
    token_rows = utterance_token_ids(record, vocab, cfg.max_len)
    n = len(token_rows)
    last_hidden = lstm_last_hidden(params, token_rows, cfg.d_hidden)
    pe = row_lookup(params["enc.pe"], [n - 1 - i for i in range(n)])
    h_u = concat_cols(last_hidden, pe)
    residual = cfg.attention_residual
    if residual and cfg.d_hidden + cfg.d_pe != cfg.d_model:
        raise ConfigError("attention_residual in the encoder requires "
                          "d_hidden + d_pe == d_model")
    return multihead(params, "enc.ctx_attn", h_u, h_u, h_u, cfg.heads,
                     drop=drop, residual=residual)


def project_modality(vectors: np.ndarray, which: str, params: ModelParams,
                     cfg: TrainConfig, drop: Dropouter | None = None) -> Tensor:
    if which not in ("face", "audio"):
        raise ValueError(f"which must be face or audio, got {which!r}")
    expected = cfg.face_dim if which == "face" else cfg.audio_dim
    if vectors.shape[1] != expected:
        raise ConfigError(f"{which} vectors: expected dim {expected}, "
                          f"got {vectors.shape[1]}")
    return ffn(params, f"enc.{which}_ffn", Tensor(vectors), drop)


def lookup_node_embeddings(record: DialogueRecord, params: ModelParams,
                           roster: SpeakerRoster) -> tuple[Tensor, Tensor]:
    """Per-utterance emotion rows and per-distinct-speaker personality rows."""
    x_e = row_lookup(params["enc.emotion_emb"],
                     [EMOTION_INDEX[e] for e in record.emotions])
    x_s = row_lookup(params["enc.speaker_emb"],
                     [roster.id_of(s) for s in distinct_speakers(record)])
    return x_e, x_s


def _conv_matrix(raw: np.ndarray, normalize: bool) -> Tensor:
    mat = raw.astype(np.float64)
    if normalize:
        sums = mat.sum(axis=1, keepdims=True)
        mat = np.divide(mat, sums, out=np.zeros_like(mat), where=sums > 0)
    return Tensor(mat)


def hgnn_forward(graph: HeteroGraph, h0: Tensor, params: ModelParams,
                 cfg: TrainConfig, drop: Dropouter | None = None) -> Tensor:
    """Stacked graph convolution over the typed adjacencies.

    hetero mode applies one weight matrix per sender type and sums the
    five contributions; homo mode collapses them to a single matrix over
    the plain adjacency.
    """
    if h0.shape[0] != graph.n_nodes:
        raise ValueError(f"feature matrix has {h0.shape[0]} rows for "
                         f"{graph.n_nodes} graph nodes")
    act = relu if cfg.gnn_activation == "relu" else tanh
    h = h0
    if cfg.gnn_mode == "homo":
        a = _conv_matrix(graph.adjacency, cfg.normalize_adjacency)
        for layer in range(cfg.gnn_layers):
            h = act(affine(matmul(a, h), params[f"enc.gnn.l{layer}.w"],
                           params[f"enc.gnn.l{layer}.b"]))
    else:
        mats = {kind: _conv_matrix(graph.type_adjacency[kind], cfg.normalize_adjacency)
                for kind in NODE_TYPES}
        for layer in range(cfg.gnn_layers):
            total = None
            for kind in NODE_TYPES:
                code = _TYPE_CODES[kind]
                term = affine(matmul(mats[kind], h),
                              params[f"enc.gnn.l{layer}.{code}.w"],
                              params[f"enc.gnn.l{layer}.{code}.b"])
                total = term if total is None else add(total, term)
            h = act(total)
    return ffn(params, "enc.out_ffn", h, drop)


def predict_emotion(h_enc: Tensor, params: ModelParams) -> Tensor:
    """Mean-pool the node features and map to the 7-way distribution."""
    pooled = mean_rows(h_enc)
    logits = matmul(pooled, transpose(params["enc.emotion_head.w"]))
    return softmax_rows(logits)


def assemble_node_features(record: DialogueRecord, graph: HeteroGraph,
                           params: ModelParams, vocab: Vocab, roster: SpeakerRoster,
                           cfg: TrainConfig, drop: Dropouter | None = None) -> Tensor:
    """Stack the per-type feature blocks in graph node order."""
    present = {node.kind for node in graph.nodes}
    blocks = [encode_utterances(record, params, vocab, cfg, drop)]
    if NodeType.FACE in present:
        blocks.append(project_modality(record.faces, "face", params, cfg, drop))
    if NodeType.AUDIO in present:
        blocks.append(project_modality(record.audios, "audio", params, cfg, drop))
    if NodeType.EMOTION in present or NodeType.SPEAKER in present:
        x_e, x_s = lookup_node_embeddings(record, params, roster)
        if NodeType.EMOTION in present:
            blocks.append(x_e)
        if NodeType.SPEAKER in present:
            blocks.append(x_s)
    return concat_rows(*blocks)
