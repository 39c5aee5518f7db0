"""Script learning with left-to-right HMMs that can emit nothing."""

from .em import EmConfig, em_fit, m_step
from .errors import (CorpusError, ModelFormatError, SamplingError, ScriptHmmError, StructureError,
                     UnknownSymbolError, UnreachableError)
from .files import load_model, read_corpus, save_model, write_corpus
from .hmm import END, NULL, START, CountTable, Corpus, Hmm, build_pta, sample, sample_corpus, validate
from .inference import (backward, e_step, expected_counts, forward, posteriors, predict_missing,
                        sequence_likelihood, trellis)
from .scoring import ConstraintSet, ScoreConfig, log_prior, mine_constraints, score
from .structure import SearchConfig, StructureChange, delete_edge, enumerate_candidates, learn, merge_states

__all__ = [
    "START", "END", "NULL", "Hmm", "CountTable", "Corpus", "build_pta", "validate", "sample", "sample_corpus",
    "forward", "backward", "trellis", "posteriors", "e_step", "expected_counts", "sequence_likelihood",
    "predict_missing", "EmConfig", "m_step", "em_fit", "ScoreConfig", "ConstraintSet", "mine_constraints",
    "log_prior", "score", "SearchConfig", "StructureChange", "merge_states", "delete_edge",
    "enumerate_candidates", "learn", "load_model", "save_model", "read_corpus", "write_corpus",
    "ScriptHmmError", "CorpusError", "ModelFormatError", "UnknownSymbolError", "UnreachableError",
    "SamplingError", "StructureError",
]
