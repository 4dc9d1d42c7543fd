"""Simulator and epistemic model checker for simultaneous agreement protocols.

The package generates the state space induced by a decision protocol, an
information exchange, and a benign failure model; evaluates knowledge and
common-belief formulas over it; constructs implementations of the epistemic
decision program; checks the agreement specification; and compares
protocols under a decides-no-later order.
"""

from .epistemic import (
    A,
    AGT,
    CB,
    CK,
    EB,
    EK,
    B,
    Decided,
    Decides,
    DecidesAll,
    EmptySel,
    Exists,
    Implies,
    InSel,
    K,
    N,
    Not,
    SubsetSel,
    cb_reachable,
    evaluator,
    explicit,
    holds,
    parse_formula,
    witness_chain,
)
from .errors import ConstructionError, FormulaError, IntegrityError, SbamcError, SchemaError
from .exchanges import (
    FaultReportExchange,
    FullInfoExchange,
    MemoryFactorization,
    check_no_action_info,
    check_no_decision_info,
    check_records_decision_info,
    fault_report_factorization,
    fip_factorization,
    make_exchange,
)
from .failures import (
    Commitment,
    CrashPlan,
    FailureModel,
    IDENTITY_BEHAVIOR,
    RoundBehavior,
    enumerate_commitments,
    enumerate_round_behaviors,
    reconcile_semantic_faults,
)
from .kbp import (
    BA_CBA,
    BN_CBN,
    K_CKA,
    TableProtocol,
    builtin_protocol,
    construct_implementation,
    serialize_protocol,
    verify_implementation,
)
from .kernel import (
    NOOP,
    Context,
    FaultRecord,
    GlobalState,
    RunPrefix,
    classify_sets,
    corresponding_run,
    decide_code,
    initial_global_state,
    is_decide,
    simulate_run,
    step,
)
from .optimality import (
    decision_table,
    dominance,
    optimality_probe,
    optimum_probe,
    reproduce_counterexample,
    run_dtimes,
    seed_runs,
)
from .speccheck import check_sba, check_sba_transfer, check_valid, check_valid_on_system
from .system import System, build_system, collect_reachability

__all__ = [name for name in dir() if not name.startswith("_")]
