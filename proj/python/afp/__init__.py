"""Python bindings for the afp toolkit."""

from ._afp import (
    AfpError,
    ConfigError,
    CorruptArtifact,
    DataError,
    DimensionError,
    Family,
    IoError,
    LengthError,
    NumericError,
    UsageError,
    alignment,
    bleu,
    mcl_loss,
    pca2,
    retrieval_acc_at_1,
    run_cli,
    uniformity,
)

__all__ = [
    "AfpError",
    "ConfigError",
    "CorruptArtifact",
    "DataError",
    "DimensionError",
    "Family",
    "IoError",
    "LengthError",
    "NumericError",
    "UsageError",
    "alignment",
    "bleu",
    "main",
    "mcl_loss",
    "pca2",
    "retrieval_acc_at_1",
    "run_cli",
    "uniformity",
]


def main(argv=None):
    import sys

    code, out, err = run_cli(list(sys.argv[1:] if argv is None else argv))
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code
