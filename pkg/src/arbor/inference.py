"""Greedy and beam-search decoding over semantic relations.

Every decoded sequence reconstructs to a valid arborescence by
construction: the source pointer can only address previously emitted
nodes (or ROOT), so no spanning-tree repair is ever needed and decoding
runs in one pass over the output relations.

Beam search expands every hypothesis in the beam each step: the top-K
target-node candidates are scored, EOS moves a hypothesis to the finished
pool (with no score contribution, matching greedy termination), and all
(source, relation type) pairs are enumerated for the rest.  With k = 1 the
result is identical to greedy search, including tie handling.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .convert import amr_restore_senses, from_arbor
from .decoder import (
    BOS_INPUT,
    NodeRecord,
    ORIGIN_DEC,
    ORIGIN_ENC,
    ORIGIN_VOCAB,
    RelationInput,
)
from .encoder import EncoderInput
from .graph import (
    EOS_LABEL,
    Framework,
    GraphNode,
    Relation,
    RelationSequence,
    ROOT_INDEX,
    ROOT_LABEL,
    SemanticGraph,
    UNK_LABEL,
)
from .linearize import relations_to_arbor
from .model import TransducerModel


@dataclass
class DecodeResult:
    sequence: RelationSequence
    score: float
    steps: int  # relation-producing iterations == emitted relation count
    total_steps: int  # including the terminating EOS probe
    truncated: bool
    # beam search exposes its finished pool for instrumentation
    pool: list[tuple[tuple[Relation, ...], float]] | None = None


def _slot_info(model: TransducerModel, out, state, tokens: list[str], pos_tags: list[str],
               slot: int) -> NodeRecord:
    """Interpret a position of the mixed target distribution."""
    v, n_enc = out.vocab_size, out.n_enc
    if slot < v:
        label = model.vocabs.dec_word.token(slot)
        return NodeRecord(label, out.fresh_index, UNK_LABEL, ORIGIN_VOCAB)
    if slot < v + n_enc:
        t = slot - v
        return NodeRecord(tokens[t], out.fresh_index, pos_tags[t], ORIGIN_ENC, t, (t,))
    rec = out.dec_records[slot - v - n_enc]
    return NodeRecord(rec.label, rec.index, rec.pos, ORIGIN_DEC,
                      slot - v - n_enc + 1, rec.anchors)


def _source_of(state, position: int) -> tuple[str, int]:
    if position == 0:
        return ROOT_LABEL, ROOT_INDEX
    rec = state.nodes[position - 1]
    return rec.label, rec.index


def greedy_decode(model: TransducerModel, enc_input: EncoderInput,
                  max_len: int = 100) -> DecodeResult:
    """Argmax target, then argmax source, then argmax relation type."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    dec = model.decoder
    eos_id = model.vocabs.dec_word.id(EOS_LABEL)
    enc = model.encoder.encode(enc_input)
    state = dec.initial_state(enc)
    rel_in = BOS_INPUT
    relations: list[Relation] = []
    score = 0.0
    total_steps = 0
    saw_eos = False

    for _ in range(max_len):
        out, state = dec.predict_target(enc, state, rel_in)
        total_steps += 1
        p = out.p_target.data
        slot = int(np.argmax(p))
        if slot == eos_id:
            saw_eos = True
            break
        record = _slot_info(model, out, state, enc_input.tokens, enc_input.pos, slot)
        state = dec.feed_target(state, record)
        pu = dec.point_source(state).data
        pr_all = dec.relation_dist_all(state)
        # relation typing is conditioned on the pointed source, so the
        # source choice maximizes the joint source+type probability; this
        # is exactly what a width-1 relation beam keeps
        with np.errstate(divide="ignore"):
            joint = np.log(pu)[:, None] + np.log(pr_all)  # masked ROOT -> -inf
        j, r_id = np.unravel_index(int(np.argmax(joint)), joint.shape)
        j, r_id = int(j), int(r_id)
        rel = model.vocabs.rel.token(r_id)
        u_label, u_index = _source_of(state, j)
        score += float(np.log(p[slot]) + joint[j, r_id])
        relations.append(Relation(u_label, u_index, rel, record.label, record.index,
                                  record.anchors))
        rel_in = RelationInput(u_label, u_index, state.node_pos(j), rel)

    seq = RelationSequence(tuple(relations), eos=saw_eos, truncated=not saw_eos)
    return DecodeResult(seq, score, len(relations), total_steps, truncated=not saw_eos)


@dataclass
class Hypothesis:
    relations: tuple[Relation, ...]
    score: float
    state: object
    rel_in: RelationInput
    truncated: bool = False


def beam_decode(model: TransducerModel, enc_input: EncoderInput, beam_size: int = 5,
                max_len: int = 100) -> DecodeResult:
    """Beam search over full relations (target, source, type jointly)."""
    if beam_size < 1:
        raise ValueError("beam size must be at least 1")
    dec = model.decoder
    eos_id = model.vocabs.dec_word.id(EOS_LABEL)
    enc = model.encoder.encode(enc_input)
    init = Hypothesis((), 0.0, dec.initial_state(enc), BOS_INPUT)
    beam: list[Hypothesis] = [init]
    finished: list[Hypothesis] = []
    total_steps = 0

    for _ in range(max_len):
        if not beam:
            break
        candidates: list[tuple[float, int, Hypothesis]] = []
        arrival = 0
        for hyp in beam:
            out, state1 = dec.predict_target(enc, hyp.state, hyp.rel_in)
            total_steps += 1
            p = out.p_target.data
            top = np.argsort(-p, kind="stable")[: min(beam_size, p.shape[0])]
            for slot in top:
                slot = int(slot)
                if slot == eos_id:
                    # per the search over relations, EOS closes the
                    # hypothesis without a score update
                    finished.append(Hypothesis(hyp.relations, hyp.score, None, hyp.rel_in))
                    continue
                record = _slot_info(model, out, state1, enc_input.tokens, enc_input.pos, slot)
                state2 = dec.feed_target(state1, record)
                pu = dec.point_source(state2).data
                pr_all = dec.relation_dist_all(state2)
                logp_v = float(np.log(p[slot]))
                for j in range(pu.shape[0]):
                    if pu[j] == 0.0:  # masked ROOT position
                        continue
                    u_label, u_index = _source_of(state2, j)
                    base = hyp.score + logp_v + float(np.log(pu[j]))
                    for r_id in range(pr_all.shape[1]):
                        rel = model.vocabs.rel.token(r_id)
                        new_score = base + float(np.log(pr_all[j, r_id]))
                        relation = Relation(u_label, u_index, rel, record.label,
                                            record.index, record.anchors)
                        new_hyp = Hypothesis(
                            hyp.relations + (relation,), new_score, state2,
                            RelationInput(u_label, u_index, state2.node_pos(j), rel),
                        )
                        candidates.append((new_score, arrival, new_hyp))
                        arrival += 1
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beam = [c[2] for c in candidates[:beam_size]]

    for hyp in beam:  # flush hypotheses still open at max length
        finished.append(Hypothesis(hyp.relations, hyp.score, None, hyp.rel_in, truncated=True))

    if not finished:
        return DecodeResult(RelationSequence((), eos=True), 0.0, 0, total_steps, False)
    best = max(enumerate(finished), key=lambda kv: (kv[1].score, -kv[0]))[1]
    seq = RelationSequence(best.relations, eos=not best.truncated, truncated=best.truncated)
    pool = [(h.relations, h.score) for h in finished]
    return DecodeResult(seq, best.score, len(best.relations), total_steps, best.truncated,
                        pool=pool)


def _empty_graph(framework: Framework) -> SemanticGraph:
    if framework == Framework.DM:
        return SemanticGraph(Framework.DM, (), (), ())
    if framework == Framework.AMR:
        node = GraphNode("n1", "amr-empty")
        return SemanticGraph(Framework.AMR, (node,), (), ("n1",))
    node = GraphNode("n1", "")
    return SemanticGraph(Framework.UCCA, (node,), (), ("n1",))


def parse(model: TransducerModel, enc_input: EncoderInput, *, beam_size: int = 1,
          max_len: int = 100, restore_senses: bool = True,
          framework: Framework | None = None) -> SemanticGraph:
    """Decode and convert back to a framework graph.

    ``framework`` overrides the model's own tag, which matters for models
    trained on mixed-framework corpora.
    """
    target = framework if framework is not None else model.framework
    if beam_size <= 1:
        result = greedy_decode(model, enc_input, max_len=max_len)
    else:
        result = beam_decode(model, enc_input, beam_size=beam_size, max_len=max_len)
    if not result.sequence.relations:
        return _empty_graph(target)
    arbor = relations_to_arbor(result.sequence)
    graph = from_arbor(arbor, target)
    if target == Framework.AMR and restore_senses and model.sense_counts:
        counts = {k: Counter(v) for k, v in model.sense_counts.items()}
        graph = amr_restore_senses(graph, counts)
    return graph
