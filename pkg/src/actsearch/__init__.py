"""Search for scalar activation functions, and benchmark the ones found.

The main entry points:

* :mod:`actsearch.dsl`: core-unit expressions, parsing and analytic derivatives
* :mod:`actsearch.autodiff`: tape-based reverse-mode differentiation and optimizers
* :mod:`actsearch.child`: synthetic tasks and the sklearn-style MLP that scores a candidate
* :mod:`actsearch.exhaustive` / :mod:`actsearch.controller`: the two search strategies
* :mod:`actsearch.scheduler`: cached, multi-worker reward evaluation
* :mod:`actsearch.bench`: baseline comparisons, sign test and curve export
"""

from .baselines import Baseline, BaselineActivation, eval_baseline
from .bench import (
    ComparisonTable,
    export_curves,
    run_benchmark,
    sign_test,
)
from .child import (
    ActivationMLPClassifier,
    ActivationTransformer,
    ChildConfig,
    Dataset,
    DatasetKind,
    RewardRecord,
    export_beta_hist,
    export_preactivation_hist,
    make_dataset,
    train_child,
)
from .controller import (
    Controller,
    ControllerConfig,
    EmaBaseline,
    PpoConfig,
    ema_update,
    ppo_update,
    run_rl_search,
    sample_candidates,
)
from .dsl import (
    RELU,
    SWISH,
    ActivationExpr,
    BinaryOp,
    CoreUnit,
    UnaryOp,
    canonical_string,
    eval_expr,
    grad_expr,
    parse_expr,
    swish,
    swish_prime,
)
from .exceptions import (
    EmptyComparison,
    LayerOutOfRange,
    NoTrainableBeta,
    ParamArityMismatch,
    ParseError,
    ShapeMismatch,
    SpaceTooLarge,
    WorkerPanic,
)
from .exhaustive import Leaderboard, SpaceConfig, count_space, enumerate_space, run_exhaustive
from .scheduler import EvalResultEnvelope, EvalScheduler, EvalTask, RewardCache

__version__ = "0.1.0"
