"""Python bindings for the dataset curation workbench."""

from ._core import (
    BudgetError,
    ConflictError,
    InvariantError,
    IoError,
    Manifest,
    NotFoundError,
    ParseError,
    ValidationError,
    WorkbenchError,
    balance_classes,
    discriminator_loss,
    find_duplicates,
    gamma_schedule,
    generate_glyph_corpus,
    generator_loss,
    hamming,
    hash_manifest,
    load_manifest,
    make_folds,
    parse_manifest,
    rank_by_loss,
    roman_numeral_classes,
    run_pipeline,
    sample_noise,
    select_head_tail,
)

__all__ = [name for name in dir() if not name.startswith("_")]
