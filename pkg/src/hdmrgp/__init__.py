"""GPR hyperparameter selection with first-order HDMR reference functions."""

from hdmrgp.kernels import (
    KernelSpec,
    GramMatrix,
    eval_kernel,
    build_gram,
    build_cross,
    full_spec,
    additive_spec,
)
from hdmrgp.gpr import (
    TrainedModel,
    UnstableModelError,
    train,
    predict_mean,
    predict_variance,
    log_marginal_likelihood,
    save_model,
    load_model,
)
from hdmrgp.hdmr import (
    AdditiveModel,
    ReferenceFunction,
    fit_additive,
    component,
    evaluate_reference,
    synthesize_dataset,
    reference_dataset,
)
from hdmrgp.sampling import (
    Dataset,
    SobolStream,
    SyntheticPES,
    sobol_next,
    make_synthetic_pes,
    load_dataset,
    save_dataset,
    split,
)
from hdmrgp.hypertune import (
    ScanGrid,
    ScanCell,
    ScanReport,
    SelectionResult,
    NoSelectionError,
    rmse,
    pearson_r,
    scan,
    select_guarded,
    optimize_mle,
    completeness_error,
)

__version__ = "0.1.0"
