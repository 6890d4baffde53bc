from .attack import (
    AttackConfig,
    LeafOracle,
    NodeInfo,
    StealResult,
    TreeInfo,
    predict_query_count,
    steal_thresholds,
    total_queries,
    tree_info,
)
from .ensemble import BoostedEnsemble, GradientPair, Tree, enumerate_paths, secureboost_train
from .kernels import BACKEND
