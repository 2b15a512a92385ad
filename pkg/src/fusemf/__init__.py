"""Data fusion by collective matrix tri-factorization.

A collection of inter-type relation matrices is factorized simultaneously
into shared non-negative type factors and per-relation cores, under optional
same-type must-link / cannot-link penalties.  The package covers rank
estimation, prediction of unobserved relations (including fold-in of unseen
objects), ensemble voting, and a cross-validated evaluation harness.
"""

from .blockops import (BlockLayout, SignSplit, assemble_constraint_block,
                       assemble_relation_block, gram_pinv, relation_blocks,
                       split_pos_neg)
from .evaluation import (AblationCell, CvConfig, EnsembleConfig,
                         EvaluationReport, ablation_run, balance_target, f1,
                         fit_flattened, flatten_early_integration, run_cv)
from .factorize import (FactorSystem, FitConfig, FitTrace, converged,
                        factorize, objective, update_g, update_s)
from .initialization import (InitStrategy, TypeProfile, build_profile,
                             init_factor, relative_error, svd_distance)
from .nnls import kkt_residuals, nnls
from .predict import (FoldInProfile, PredictionSet, candidates_column_centric,
                      candidates_row_centric, ensemble_predict, extend_model,
                      fold_in, percentile_strength, reconstruct)
from .ranksel import (RankQualityReport, RankRange, RankSearchConfig,
                      connectivity_matrix, cophenetic, evaluate_rank_vector,
                      explained_variance, rss, select_ranks)
from .schema import (ConstraintMatrix, FusionSchema, ObjectType,
                     RelationMatrix, SchemaError, ValidationReport)
from .synthetic import SyntheticSpec, SyntheticTruth, synth_generate

__version__ = "0.1.0"
