from ._tmlecvx import (  # noqa: F401
    MissingDataset,
    ShiftDataset,
    XYDataset,
    __version__,
    efficiency_bound_oracle,
    estimate_median,
    estimate_missing,
    estimate_shift,
    gen_median,
    gen_missing,
    gen_shift,
    missing_mean_truth,
    shift_true_value,
)
