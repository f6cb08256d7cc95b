from .models import (MODEL_KINDS, ScoreModelSpec, ScoreNetworkA_Base_CC, ScoreNetworkA_CC, ScoreNetworkF,
                     ScoreNetworkX, build, count_parameters)
from .ops import CompactIncidence, DenseIncidence, make_backend

__all__ = ["MODEL_KINDS", "ScoreModelSpec", "ScoreNetworkX", "ScoreNetworkA_CC", "ScoreNetworkA_Base_CC",
           "ScoreNetworkF", "build", "count_parameters", "CompactIncidence", "DenseIncidence", "make_backend"]
