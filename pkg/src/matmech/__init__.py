"""Matrix-mechanism strategy design for batches of linear counting queries."""

__version__ = "0.1.0"

from .error import (ErrorReport, PrivacyParams, compare_variants, error_ratio, error_report,
                    query_error, svd_bound, svdb_achievable, total_error)
from .lsa import LsaConfig, LsaResult, Level, best_split, design, run_lsa, smw_update
from .mechanism import (NoiseSource, consistency_check, gaussian_mechanism, laplace_mechanism,
                        matrix_mechanism)
from .scaling import design_generalized, design_separated, generalize, separate
from .strategy import (RankError, Strategy, hierarchical_strategy, identity_strategy,
                       is_column_uniform, l1_sensitivity, l2_sensitivity, reduce_redundancy,
                       variable_agnostic_optimal, wavelet_strategy)
from .workload import (CellVector, DomainShape, RangeQuery, Workload, build_all_predicate,
                       build_all_range, build_marginal_workload, equivalent, gram_all_predicate,
                       gram_all_range, ingest_cells, sample_range_workload)
