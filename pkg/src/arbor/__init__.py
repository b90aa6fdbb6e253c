"""arbor: semantic-graph transduction toolkit.

Converts AMR, DM and UCCA graphs losslessly to a unified indexed
arborescence format, and trains/runs an attention-based neural transducer
that emits meaning representations as sequences of semantic relations.
"""

from .graph import (
    Arborescence,
    ArborNode,
    Framework,
    GraphEdge,
    GraphNode,
    Relation,
    RelationSequence,
    SemanticGraph,
    graph_isomorphic,
    validate_arborescence,
)
from .convert import (
    amr_restore_senses,
    amr_strip_senses,
    amr_to_arbor,
    arbor_to_amr,
    arbor_to_dm,
    arbor_to_ucca,
    dm_to_arbor,
    from_arbor,
    to_arbor,
    ucca_to_arbor,
)
from .linearize import (
    OrderingPolicy,
    arbor_to_relations,
    policy_for,
    relations_to_arbor,
    resolve_source,
)
from .encoder import EncoderInput
from .model import ModelConfig, TransducerModel, Vocabularies, build_vocabularies
from .training import TrainConfig, make_reference, relation_f1, sequence_loss, train
from .inference import beam_decode, greedy_decode, parse
from .evaluate import labeled_triple_f1, smatch_score, speed_bench, validity_audit

__version__ = "0.1.0"
