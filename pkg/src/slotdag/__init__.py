"""DAG BFT simulator with dual block orderings and a UTXO payment system.

A deterministic multi-node simulation of a slot-based DAG protocol: an
optimistic block ordering that stays live when nodes sleep, a final ordering
that is safe under temporary asynchrony, and fast plus consensus-path UTXO
confirmation, together with scenario-driven adversaries and trace checkers
for the headline safety and liveness properties.
"""

from .blocks import (Block, BlockId, SlotDigest, Timestamp, ZERO_DIGEST,
                     before_time, canonical_serialize, make_genesis)
from .checks import ALL_CHECKS, PropertyReport, run_checks
from .dag import Buffer, BlockUniverse, DagStore, detect_equivocations, is_quorum
from .digests import DigestRegistry, concat_order
from .simnet import Engine, Scenario, run_scenario
from .scenarios import BUNDLED, bundled
from .trace import Trace
from .utxo import UtxoLedger, UtxoTx, genesis_transaction, is_double_spend

__version__ = "0.1.0"
