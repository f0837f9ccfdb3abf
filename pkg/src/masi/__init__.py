"""Multi-agent spatial interaction prediction with qualitative trajectory calculus."""
from .errors import (CompatibilityError, CorruptionError, DataError, DegeneratePairError, DictionaryLookupError,
                     GenerationError, MasiError, NumericError, ParseError, UsageError)
from .qtc import (Dictionary, QtcSymbol, QtcVector, ToleranceSet, Variant, build_dictionary, compute_qtc_c1,
                  compute_qtc_c2, conceptual_distance, default_dictionary, dict_lookup)

__version__ = "0.1.0"

__all__ = [
    "CompatibilityError", "CorruptionError", "DataError", "DegeneratePairError", "DictionaryLookupError",
    "GenerationError", "MasiError", "NumericError", "ParseError", "UsageError",
    "Dictionary", "QtcSymbol", "QtcVector", "ToleranceSet", "Variant", "build_dictionary", "compute_qtc_c1",
    "compute_qtc_c2", "conceptual_distance", "default_dictionary", "dict_lookup",
]
