"""Chinese spelling correction with a phonetics-aware transformer encoder."""
import os

# Pin BLAS threading before numpy loads so deterministic runs keep a fixed
# reduction order across processes.
if os.environ.get("DORM_DETERMINISTIC") == "1":
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, "1")

# The cli module is intentionally not imported here: `python -m pinspell.cli`
# would re-execute it under runpy and warn about the duplicate module.
from . import (  # noqa: E402
    data,
    evaluator,
    model,
    numeric,
    objective,
    pinyin,
    textcodec,
    trainer,
)

__all__ = [
    "data",
    "evaluator",
    "model",
    "numeric",
    "objective",
    "pinyin",
    "textcodec",
    "trainer",
]
__version__ = "0.1.0"
